use pmd_core::{CkSequence, Schedule};
use pmdlab::config::RunConfig;
use pmdlab::experiments::{check_lower_bound, reproduce_appendix_e, sweep, Variant, SWEEP_COLUMNS};
use pmdlab::svg::{emit_svg, Reference};

#[test]
fn combined_schedule_tracks_the_better_of_its_parts() {
    let run = |v| reproduce_appendix_e(1e-10, v, 300, None).unwrap().trace;
    let (a, i, c) = (
        run(Variant::Adaptive),
        run(Variant::Increasing),
        run(Variant::Combined),
    );
    for ((ra, ri), rc) in a.records.iter().zip(&i.records).zip(&c.records) {
        assert!(
            rc.sup_gap <= ra.sup_gap.min(ri.sup_gap) + 1e-9,
            "k = {}: combined {} adaptive {} increasing {}",
            rc.iter,
            rc.sup_gap,
            ra.sup_gap,
            ri.sup_gap
        );
    }
}

#[test]
fn appendix_e_writes_trace_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let run = reproduce_appendix_e(1e-10, Variant::Adaptive, 50, Some(dir.path())).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("adaptive.csv")).unwrap();
    assert_eq!(csv.lines().count(), 52);
    assert_eq!(csv, run.trace.to_csv_string());
    let svg = std::fs::read_to_string(dir.path().join("adaptive.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn lower_bound_with_a_single_interior_state() {
    let report = check_lower_bound(1, 0.9, &[Schedule::geometric(1.0)]).unwrap();
    assert!(report.passed());
    assert_eq!(report.entries[0].margin, 1.0);
}

#[test]
fn lower_bound_holds_for_adaptive_steps_on_a_longer_chain() {
    let report = check_lower_bound(
        15,
        0.8,
        &[Schedule::adaptive(CkSequence::GeometricSquared(1.0))],
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn config(id: &str, map: &str, schedule: &str) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{"id":"{id}","mdp":{{"kind":"random","states":4,"actions":3,"gamma":0.9}},
            "map":"{map}","schedule":"{schedule}","iterations":10,"seed":11}}"#
    ))
    .unwrap()
}

#[test]
fn empty_sweep_is_header_only() {
    let out = sweep(&[], 2).unwrap();
    assert_eq!(out.csv.trim_end(), SWEEP_COLUMNS.join(","));
}

#[test]
fn identical_configs_produce_identical_blocks() {
    let out = sweep(
        &[config("a", "kl", "adaptive"), config("b", "kl", "adaptive")],
        2,
    )
    .unwrap();
    let strip = |prefix: &str| -> Vec<String> {
        out.csv
            .lines()
            .filter(|l| l.starts_with(prefix))
            .map(|l| l.split_once(',').unwrap().1.to_string())
            .collect()
    };
    assert_eq!(strip("a,").len(), 11);
    assert_eq!(strip("a,"), strip("b,"));
}

#[test]
fn grid_sweep_has_one_block_per_config_in_order() {
    let mut configs = Vec::new();
    for map in ["kl", "euclid", "pi"] {
        for schedule in ["adaptive", "geometric:2"] {
            configs.push(config(&format!("{map}-{schedule}"), map, schedule));
        }
    }
    configs.reverse();
    let serial = sweep(&configs, 1).unwrap();
    let parallel = sweep(&configs, 4).unwrap();
    assert_eq!(serial.csv, parallel.csv);
    assert_eq!(serial.verify_failures().count(), 0);
    let mut ids: Vec<&str> = serial
        .csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ids.len(), 66);
    ids.dedup();
    assert_eq!(ids.len(), 6);
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn plot_draws_the_reference_rate() {
    let run = reproduce_appendix_e(1e-10, Variant::Adaptive, 30, None).unwrap();
    let reference = Reference {
        gamma: 0.99,
        bound_scale: Some(run.trace.gap0() + 100.0),
        title: "adaptive".into(),
    };
    let svg = emit_svg(&run.trace.to_csv_string(), &reference).unwrap();
    assert!(svg.contains("adaptive"));
    assert!(svg.matches("<polyline").count() >= 3);
}
