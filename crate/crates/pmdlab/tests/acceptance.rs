//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use pmd_core::mdp::{evaluate_policy, q_from_v, visitation_distribution};
use pmd_core::mirror::three_point_margin;
use pmd_core::{
    accuracy_bound, duplicate_action_mdp, mismatch_coefficient, pmd_update_state, run_exact_pmd,
    run_inexact_pmd, sub_optimality_gap, CkSequence, EstimatorConfig, ExactRunConfig,
    GenerativeModel, InexactRunConfig, Map, Mdp, MirrorMap, PolicyF64, Schedule, GREEDY_TOL,
};
use pmdlab::experiments::{
    check_lower_bound, reproduce_appendix_e, Variant, APPENDIX_E_GAMMA, APPENDIX_E_ITERATIONS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------

/// `V^π` by Gaussian elimination on `(I − γP_π) v = r_π`, written out here so it
/// shares no code with the library's factorisation.
fn oracle_values(mdp: &Mdp, pi: &[Vec<f64>]) -> Vec<f64> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut m = vec![vec![0.0; ns + 1]; ns];
    for s in 0..ns {
        m[s][s] = 1.0;
        for a in 0..na {
            let w = pi[s][a];
            m[s][ns] += w * mdp.r(s, a);
            for (t, p) in mdp.p(s, a).iter().enumerate() {
                m[s][t] -= g * w * p;
            }
        }
    }
    for col in 0..ns {
        let piv = (col..ns)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        for row in 0..ns {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..=ns {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    let v: Vec<f64> = (0..ns).map(|s| m[s][ns] / m[s][s]).collect();
    // two sweeps of iterative refinement against the original system
    let mut v = v;
    for _ in 0..2 {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| pi[s][a] * oracle_q_entry(mdp, &v, s, a))
                    .sum()
            })
            .collect();
        v = next;
    }
    v
}

fn oracle_q_entry(mdp: &Mdp, v: &[f64], s: usize, a: usize) -> f64 {
    mdp.r(s, a) + mdp.gamma() * mdp.p(s, a).iter().zip(v).map(|(p, x)| p * x).sum::<f64>()
}

fn oracle_q(mdp: &Mdp, v: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| oracle_q_entry(mdp, v, s, a))
                .collect()
        })
        .collect()
}

fn rows(p: &PolicyF64) -> Vec<Vec<f64>> {
    p.rows().map(|r| r.to_vec()).collect()
}

/// Greedy set with the library's tie tolerance, recomputed here.
fn oracle_greedy(q: &[f64]) -> Vec<usize> {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..q.len())
        .filter(|&a| q[a] >= best - GREEDY_TOL)
        .collect()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_case(seed: u64) -> (Mdp, PolicyF64) {
    let mut r = rng(seed);
    let states = r.random_range(1..=10);
    let actions = r.random_range(2..=10);
    let gamma = [0.8, 0.9, 0.99][r.random_range(0..3)];
    let mdp = Mdp::random(states, actions, gamma, &mut r).unwrap();
    let pi0 = PolicyF64::random(states, actions, &mut r);
    (mdp, pi0)
}

const THEOREM1_MAPS: [&str; 5] = ["kl", "euclid", "generic:entropy", "generic:tsallis", "pi"];

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let schedule = Schedule::adaptive(CkSequence::GeometricSquared(1.0));
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for seed in 0..50 {
        let (mdp, pi0) = random_case(seed);
        let g = mdp.gamma();
        for id in THEOREM1_MAPS {
            let map = Map::from_id(id).unwrap();
            match run_exact_pmd(&mdp, &map, &schedule, &pi0, &ExactRunConfig::new(200)) {
                Err(e) => failures.push(format!("seed {seed} {id}: {e}")),
                Ok(trace) => {
                    let v_star = oracle_star(&mdp);
                    let gap0 = sup(&v_star, &oracle_values(&mdp, &rows(&pi0)));
                    for r in &trace.records {
                        let bound = g.powi(r.iter as i32) * (gap0 + 1.0 / (1.0 - g)) + 1e-8;
                        worst = worst.max(r.sup_gap - bound);
                        if r.sup_gap > bound {
                            failures.push(format!("seed {seed} {id} k={}", r.iter));
                            break;
                        }
                    }
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "250 runs, max(gap - bound) = {worst:.3e}{}",
            failures
                .first()
                .map(|f| format!("; first failure {f}"))
                .unwrap_or_default()
        ),
    )
}

/// `V⋆` from the best deterministic policy found by the oracle's own policy iteration.
fn oracle_star(mdp: &Mdp) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut act = vec![0usize; ns];
    loop {
        let pi: Vec<Vec<f64>> = act
            .iter()
            .map(|&a| (0..na).map(|b| (a == b) as u8 as f64).collect())
            .collect();
        let v = oracle_values(mdp, &pi);
        let q = oracle_q(mdp, &v);
        let mut changed = false;
        for s in 0..ns {
            let best = (0..na).fold(0, |b, a| if q[s][a] > q[s][b] { a } else { b });
            if q[s][best] > q[s][act[s]] + 1e-13 * (1.0 + q[s][best].abs()) {
                act[s] = best;
                changed = true;
            }
        }
        if !changed {
            return v;
        }
    }
}

fn criterion_2() -> Outcome {
    let schedules = [
        Schedule::adaptive(CkSequence::GeometricSquared(1.0)),
        Schedule::geometric(1.0),
        Schedule::geometric(100.0),
    ];
    match check_lower_bound(10, 0.9, &schedules) {
        Err(e) => outcome(false, format!("run failed: {e:#}")),
        Ok(report) => {
            let margins: Vec<String> = report
                .entries
                .iter()
                .map(|e| format!("{}={:.4}", e.schedule, e.margin))
                .collect();
            let claim = report.entries.iter().all(|e| e.claim_holds);
            outcome(
                report.passed() && claim,
                format!(
                    "margins {} (need >= 0.5), chain claim {}",
                    margins.join(", "),
                    if claim { "holds" } else { "fails" }
                ),
            )
        }
    }
}

fn criterion_3() -> Outcome {
    let adaptive = reproduce_appendix_e(1e-10, Variant::Adaptive, APPENDIX_E_ITERATIONS, None);
    let increasing = reproduce_appendix_e(1e-10, Variant::Increasing, APPENDIX_E_ITERATIONS, None);
    match (adaptive, increasing) {
        (Ok(a), Ok(i)) => {
            let g = APPENDIX_E_GAMMA;
            let gap0 = a.trace.gap0();
            let within = a
                .trace
                .records
                .iter()
                .all(|r| r.sup_gap <= g.powi(r.iter as i32) * (gap0 + 1.0 / (1.0 - g)));
            let slow =
                i.trace.records.iter().take(25).find(|r| {
                    r.sup_gap > g.powi(r.iter as i32) * (i.trace.gap0() + (1.0 - g) / 8.0)
                });
            outcome(
                within && a.trace.records.len() == 301 && slow.is_some(),
                format!(
                    "adaptive max gap/bound = {:.4} over k <= 300; increasing exceeds gamma^k(gap0 + (1-gamma)/8) first at k = {}",
                    a.reference_ratio,
                    slow.map_or("none".into(), |r| r.iter.to_string())
                ),
            )
        }
        (a, i) => outcome(false, format!("run failed: {:?} {:?}", a.err(), i.err())),
    }
}

fn criterion_4() -> Outcome {
    let schedule = Schedule::adaptive(CkSequence::GeometricSquared(1.0));
    let mut worst_q = f64::INFINITY;
    let mut worst_tp = f64::INFINITY;
    let mut errors = Vec::new();
    for seed in 0..50 {
        let (mdp, pi0) = random_case(seed);
        for id in THEOREM1_MAPS {
            let map = Map::from_id(id).unwrap();
            let cfg = ExactRunConfig::new(60).keep_policies(true);
            let trace = match run_exact_pmd(&mdp, &map, &schedule, &pi0, &cfg) {
                Ok(t) => t,
                Err(e) => {
                    errors.push(format!("seed {seed} {id}: {e}"));
                    continue;
                }
            };
            let policies = trace.policies.as_ref().unwrap();
            let qs: Vec<Vec<Vec<f64>>> = policies
                .iter()
                .map(|p| oracle_q(&mdp, &oracle_values(&mdp, &rows(p))))
                .collect();
            for (k, w) in qs.windows(2).enumerate() {
                for s in 0..mdp.n_states() {
                    for a in 0..mdp.n_actions() {
                        worst_q = worst_q.min(w[1][s][a] - w[0][s][a]);
                    }
                }
                let eta = trace.records[k].eta.as_ref().unwrap();
                let na = mdp.n_actions();
                for s in 0..mdp.n_states() {
                    let (pi, next) = (policies[k].row(s), policies[k + 1].row(s));
                    let scale = eta.at(s) * qs[k][s].iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    let mut points: Vec<Vec<f64>> = (0..na)
                        .map(|a| (0..na).map(|b| (a == b) as u8 as f64).collect())
                        .collect();
                    points.push(vec![1.0 / na as f64; na]);
                    points.push(pi.to_vec());
                    for p in &points {
                        let m =
                            three_point_margin(&map, pi, &qs[k][s], eta.at(s), next, p).unwrap();
                        worst_tp = worst_tp.min(m / (1.0 + scale));
                    }
                }
            }
        }
    }
    let mut worst_pdl = 0.0f64;
    let mut r = rng(4004);
    for _ in 0..100 {
        let ns = r.random_range(1..=8);
        let na = r.random_range(1..=6);
        let gamma = [0.5, 0.9, 0.99][r.random_range(0..3)];
        let mdp = Mdp::random(ns, na, gamma, &mut r).unwrap();
        let (p1, p2) = (
            PolicyF64::random(ns, na, &mut r),
            PolicyF64::random(ns, na, &mut r),
        );
        let rho = vec![1.0 / ns as f64; ns];
        let v1 = oracle_values(&mdp, &rows(&p1));
        let v2 = oracle_values(&mdp, &rows(&p2));
        let q1 = oracle_q(&mdp, &v1);
        let d2 = visitation_distribution(&mdp, &p2, &rho).unwrap();
        let adv: f64 = (0..ns)
            .map(|s| {
                d2[s]
                    * (0..na)
                        .map(|a| q1[s][a] * (p2.prob(s, a) - p1.prob(s, a)))
                        .sum::<f64>()
            })
            .sum::<f64>()
            / (1.0 - gamma);
        let lhs: f64 = v2.iter().zip(&v1).map(|(a, b)| (a - b) / ns as f64).sum();
        worst_pdl = worst_pdl.max((lhs - adv).abs());
    }
    outcome(
        errors.is_empty() && worst_q >= -1e-9 && worst_tp >= -1e-9 && worst_pdl <= 1e-9,
        format!(
            "min Q increase {worst_q:.3e}, min relative three-point margin {worst_tp:.3e}, max PDL error {worst_pdl:.3e}{}",
            errors.first().map(|e| format!("; {e}")).unwrap_or_default()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (mdp, _) = random_case(500 + seed);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let pi0 = PolicyF64::uniform(ns, na);
        let k = 25;
        let trace = match run_exact_pmd(
            &mdp,
            &Map::Null,
            &Schedule::constant(1.0),
            &pi0,
            &ExactRunConfig::new(k),
        ) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        // standalone policy iteration from the same start
        let mut pi = rows(&pi0);
        let mut v = oracle_values(&mdp, &pi);
        for step in 0..=k {
            let q = oracle_q(&mdp, &v);
            let sets: Vec<Vec<usize>> = q.iter().map(|row| oracle_greedy(row)).collect();
            if sets != trace.records[step].greedy_sets {
                failures.push(format!("seed {seed}: greedy sets differ at k = {step}"));
                break;
            }
            pi = q
                .iter()
                .map(|row| {
                    let best = (0..na).fold(0, |b, a| if row[a] > row[b] { a } else { b });
                    (0..na).map(|a| (a == best) as u8 as f64).collect()
                })
                .collect();
            if step < k {
                v = oracle_values(&mdp, &pi);
            }
        }
        let gap = sup(&v, trace.final_value.as_slice());
        worst = worst.max(gap);
        if gap > 1e-10 {
            failures.push(format!("seed {seed}: terminal values differ by {gap:e}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "20 MDPs, max terminal value gap {worst:.3e}{}",
            failures
                .first()
                .map(|f| format!("; {f}"))
                .unwrap_or_default()
        ),
    )
}

fn criterion_6() -> Outcome {
    let generic = MirrorMap::from_id("generic:entropy").unwrap();
    let mut r = rng(6006);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let na = r.random_range(2..=8);
        let w: Vec<f64> = (0..na).map(|_| r.random::<f64>() + 1e-3).collect();
        let z: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|x| x / z).collect();
        let q: Vec<f64> = (0..na).map(|_| r.random::<f64>() * 10.0).collect();
        let eta = 10f64.powf(r.random_range(-3.0..3.0));
        let a = pmd_update_state(&generic, &pi, &q, eta).unwrap();
        // closed form written out independently of the library
        let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = pi
            .iter()
            .zip(&q)
            .map(|(p, x)| p * (eta * (x - m)).exp())
            .collect();
        let ze: f64 = e.iter().sum();
        let b: Vec<f64> = e.iter().map(|x| x / ze).collect();
        worst = worst.max(sup(&a, &b));
    }
    outcome(
        worst <= 1e-10,
        format!("1000 triples, max deviation {worst:.3e}"),
    )
}

fn criterion_7() -> Outcome {
    let (h, m, k) = (60usize, 500usize, 60usize);
    let gamma = 0.9;
    let mdp = Mdp::random(4, 2, gamma, &mut rng(7007)).unwrap();
    let pi0 = PolicyF64::uniform(4, 2);
    let schedule = Schedule::inexact_default(gamma).unwrap();
    let tau_cap = accuracy_bound(h, gamma);
    let bias = 8.0 * gamma.powi(h as i32) / (1.0 - gamma).powi(3);
    let expected_samples = (4 * 2 * k * h * m) as u64;
    let mut accurate = 0;
    let mut conditional_ok = true;
    let mut counter_ok = true;
    let mut taus = Vec::new();
    let mut errors = Vec::new();
    for seed in 0..20u64 {
        let model = GenerativeModel::new(mdp.clone(), seed);
        let cfg = InexactRunConfig::new(k, EstimatorConfig::new(h, m).unwrap());
        let trace = match run_inexact_pmd(&model, &Map::NegativeEntropy, &schedule, &pi0, &cfg) {
            Ok(t) => t,
            Err(e) => {
                errors.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        counter_ok &= model.samples() == expected_samples
            && trace.records.last().unwrap().samples_cumulative == Some(expected_samples);
        let max_tau = trace
            .records
            .iter()
            .filter_map(|r| r.tau_realized)
            .fold(0.0, f64::max);
        taus.push(max_tau);
        if max_tau <= tau_cap {
            accurate += 1;
            let last = trace.records.last().unwrap();
            conditional_ok &= last.sup_gap
                <= gamma.powi(k as i32) * (trace.gap0() + 1.0 / (1.0 - gamma)) + bias + 1e-6;
        }
    }
    let median = {
        let mut t = taus.clone();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.get(t.len() / 2).copied().unwrap_or(f64::NAN)
    };
    outcome(
        errors.is_empty() && accurate >= 19 && conditional_ok && counter_ok,
        format!(
            "{accurate}/20 seeds with max_k tau_k <= {tau_cap:.4} (median max tau {median:.4}); conditional final-gap bound {}; sample counter {}{}",
            if conditional_ok { "holds" } else { "fails" },
            if counter_ok { format!("= {expected_samples}") } else { "mismatch".into() },
            errors.first().map(|e| format!("; {e}")).unwrap_or_default()
        ),
    )
}

fn criterion_8() -> Outcome {
    let (n, gamma, r_max) = (50, 0.9, 0.5);
    let delta = (1.0 - gamma) * (1.0 - r_max) / gamma;
    let result = pmd_core::mismatch_mdp(n, gamma, delta, r_max).and_then(|mdp| {
        let rho = vec![1.0 / n as f64; n];
        mismatch_coefficient(&mdp, &rho)
    });
    match result {
        Ok(theta) => {
            let floor = n as f64 * gamma * (1.0 - delta) / (1.0 - gamma);
            outcome(
                theta >= floor,
                format!("theta_rho = {theta:.3} >= {floor:.3}"),
            )
        }
        Err(e) => outcome(false, format!("{e}")),
    }
}

fn criterion_9() -> Outcome {
    let delta = 1e-6;
    let mut worst_diff = 0.0f64;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut evaluated = 0;
    for seed in 0..10 {
        let mut r = rng(9000 + seed);
        let ns = r.random_range(2..=8);
        let na = r.random_range(2..=5);
        let base = Mdp::random(ns, na, 0.9, &mut r).unwrap();
        let dup = duplicate_action_mdp(&base, delta).unwrap();
        let mut policies: Vec<PolicyF64> = (0..5)
            .map(|_| PolicyF64::random(ns, 2 * na, &mut r))
            .collect();
        let cfg = ExactRunConfig::new(20).keep_policies(true);
        let schedule = Schedule::adaptive(CkSequence::GeometricSquared(1.0));
        match run_exact_pmd(
            &dup,
            &Map::NegativeEntropy,
            &schedule,
            &PolicyF64::uniform(ns, 2 * na),
            &cfg,
        ) {
            Ok(t) => policies.extend(t.policies.unwrap()),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
        for pi in &policies {
            let q = q_from_v(&dup, &evaluate_policy(&dup, pi).unwrap());
            for s in 0..ns {
                for a in 0..na {
                    worst_diff = worst_diff.max((q.get(s, a) - q.get(s, a + na) - delta).abs());
                }
                worst_gap = worst_gap.max(sub_optimality_gap(&q, s, GREEDY_TOL) - delta);
            }
            evaluated += 1;
        }
    }
    outcome(
        worst_diff <= 1e-10 && worst_gap <= 1e-10,
        format!("{evaluated} policies, max |Q(s,a) - Q(s,a') - delta| = {worst_diff:.3e}, max gap - delta = {worst_gap:.3e}"),
    )
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (
            1,
            "gamma-rate bound on random MDPs",
            Duration::from_secs(120),
            criterion_1,
        ),
        (
            2,
            "lower bound on proof-parameter chain",
            Duration::from_secs(10),
            criterion_2,
        ),
        (
            3,
            "adaptive vs increasing NPG on simulation chain",
            Duration::from_secs(30),
            criterion_3,
        ),
        (4, "lemma suite", Duration::from_secs(120), criterion_4),
        (
            5,
            "null map equals policy iteration",
            Duration::from_secs(120),
            criterion_5,
        ),
        (
            6,
            "generic Bregman solver vs closed form",
            Duration::from_secs(120),
            criterion_6,
        ),
        (
            7,
            "inexact PMD at desk scale",
            Duration::from_secs(120),
            criterion_7,
        ),
        (
            8,
            "mismatch coefficient scales with |S|",
            Duration::from_secs(5),
            criterion_8,
        ),
        (
            9,
            "duplicate-action family",
            Duration::from_secs(120),
            criterion_9,
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| name.contains(f.as_str()) || f == &id.to_string())
        {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let passed = result.passed && in_time;
        failed += (!passed) as usize;
        println!(
            "[{}] criterion {id}: {name}: {} ({:.2}s, limit {}s{})",
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
