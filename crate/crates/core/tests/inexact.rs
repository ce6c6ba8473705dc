//! Generative model, Monte-Carlo estimator and the inexact PMD loop.

mod common;

use common::*;
use pmd_core::mdp::{evaluate_policy, q_from_v};
use pmd_core::{
    accuracy_bound, estimate_q, run_exact_pmd, run_inexact_pmd, run_inexact_pmd_with,
    EstimatorConfig, ExactEstimator, ExactRunConfig, GenerativeModel, InexactRunConfig, Map, Mdp,
    PolicyF64, Schedule,
};

#[test]
fn sampler_passes_chi_squared() {
    let mdp = random_mdp(1, 6, 2, 0.9);
    let model = GenerativeModel::new(mdp.clone(), 42);
    let n = 100_000;
    let mut rng = model.stream(0, 0, 0);
    let mut counts = [0usize; 6];
    for _ in 0..n {
        let (_, next) = model.sample(2, 1, &mut rng);
        counts[next] += 1;
    }
    assert_eq!(model.samples(), n as u64);
    let stat: f64 = counts
        .iter()
        .zip(mdp.p(2, 1))
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 5 degrees of freedom, upper 0.001 quantile
    assert!(stat < 20.515, "chi-squared statistic {stat}");
}

fn chain3() -> Mdp {
    let mut p = vec![0.0; 18];
    for a in 0..2 {
        p[a * 3 + 1] = 1.0;
        p[(2 + a) * 3 + 2] = 1.0;
        p[(4 + a) * 3 + 2] = 1.0;
    }
    Mdp::new(3, 2, p, vec![0.3, 0.1, 0.5, 0.9, 0.2, 0.7], 0.9).unwrap()
}

#[test]
fn deterministic_path_estimate_is_truncated_q() {
    let mdp = chain3();
    let pi = PolicyF64::deterministic(2, &[1, 0, 1]).unwrap();
    let model = GenerativeModel::new(mdp.clone(), 5);
    let h = 4;
    let q_hat = estimate_q(&model, &pi, &EstimatorConfig::new(h, 3).unwrap(), 0).unwrap();
    let v = evaluate_policy(&mdp, &pi).unwrap();
    let q = q_from_v(&mdp, &v);
    // γ^H V(s_H): every path is in state 2 from t = 2 on
    for s in 0..3 {
        for a in 0..2 {
            let expect = q.get(s, a) - 0.9f64.powi(h as i32) * v.at(2);
            assert!((q_hat.get(s, a) - expect).abs() < 1e-12, "({s},{a})");
        }
    }
}

#[test]
fn estimator_is_unbiased_for_truncated_return() {
    let mdp = random_mdp(8, 3, 2, 0.8);
    let pi = PolicyF64::random(3, 2, &mut rng(9));
    let h = 6;
    let oracle = truncated_q(&mdp, &rows(&pi), h);
    let model = GenerativeModel::new(mdp.clone(), 77);
    // one trajectory per estimate, 10^5 independent estimates
    let n = 100_000;
    let cfg = EstimatorConfig::new(h, 1).unwrap();
    let mut sum = [0.0; 6];
    let mut sq = [0.0; 6];
    for it in 0..n {
        let q = estimate_q(&model, &pi, &cfg, it).unwrap();
        for (i, x) in q.values().iter().enumerate() {
            sum[i] += x;
            sq[i] += x * x;
        }
    }
    assert_eq!(model.samples(), (n * 6 * h) as u64);
    for i in 0..6 {
        let mean = sum[i] / n as f64;
        let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
        let target = oracle[i / 2][i % 2];
        assert!(
            (mean - target).abs() <= 4.0 * se.max(1e-12),
            "pair {i}: {mean} vs {target}"
        );
    }
}

#[test]
fn estimator_accuracy_within_bound_in_most_repeats() {
    let mdp = random_mdp(31, 4, 2, 0.9);
    let pi = PolicyF64::random(4, 2, &mut rng(32));
    let q = q_from_v(&mdp, &evaluate_policy(&mdp, &pi).unwrap());
    let (h, m) = (50, 1000);
    let bound = accuracy_bound(h, 0.9);
    let mut within = 0;
    for rep in 0..100u64 {
        let model = GenerativeModel::new(mdp.clone(), 1000 + rep);
        // per-pair standard error from one extra single-trajectory batch
        let q_hat = estimate_q(&model, &pi, &EstimatorConfig::new(h, m).unwrap(), 0).unwrap();
        let single: Vec<_> = (0..200)
            .map(|j| estimate_q(&model, &pi, &EstimatorConfig::new(h, 1).unwrap(), 1 + j).unwrap())
            .collect();
        let mut worst = 0.0f64;
        let mut ok = true;
        for i in 0..8 {
            let xs: Vec<f64> = single.iter().map(|e| e.values()[i]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd =
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            let se = sd / (m as f64).sqrt();
            let err = (q_hat.values()[i] - q.values()[i]).abs();
            worst = worst.max(err);
            ok &= err <= bound + 4.0 * se;
        }
        within += ok as usize;
    }
    assert!(within >= 95, "{within}/100 repeats within the bound");
}

#[test]
fn exact_estimator_reproduces_exact_pmd() {
    let mdp = random_mdp(12, 5, 3, 0.9);
    let pi0 = PolicyF64::uniform(5, 3);
    let schedule = Schedule::inexact_default(0.9).unwrap();
    for id in ["kl", "euclid", "pi", "generic:tsallis"] {
        let map = Map::from_id(id).unwrap();
        let exact = run_exact_pmd(&mdp, &map, &schedule, &pi0, &ExactRunConfig::new(30)).unwrap();
        let cfg = InexactRunConfig::new(30, EstimatorConfig::new(1, 1).unwrap());
        let inexact = run_inexact_pmd_with(
            &mdp,
            &ExactEstimator { mdp: &mdp },
            &map,
            &schedule,
            &pi0,
            &cfg,
        )
        .unwrap();
        assert_eq!(exact.gaps(), inexact.gaps(), "{id}");
        assert_eq!(exact.final_policy, inexact.final_policy);
        for (a, b) in exact.records.iter().zip(&inexact.records) {
            assert_eq!(a.eta, b.eta);
            if b.iter < 30 {
                assert_eq!(a.greedy_sets, b.greedy_sets);
            }
        }
        assert!(inexact
            .records
            .iter()
            .take(30)
            .all(|r| r.tau_realized == Some(0.0)));
    }
}

#[test]
fn replay_and_sample_accounting() {
    let mdp = random_mdp(40, 4, 2, 0.9);
    let pi0 = PolicyF64::uniform(4, 2);
    let map = Map::NegativeEntropy;
    let schedule = Schedule::inexact_default(0.9).unwrap();
    let (h, m, k) = (20, 50, 8);
    let cfg = InexactRunConfig::new(k, EstimatorConfig::new(h, m).unwrap());
    let run = |seed| {
        let model = GenerativeModel::new(mdp.clone(), seed);
        let trace = run_inexact_pmd(&model, &map, &schedule, &pi0, &cfg).unwrap();
        (trace, model.samples())
    };
    let (a, na) = run(3);
    let (b, nb) = run(3);
    let (c, _) = run(4);
    assert_eq!(a, b);
    assert_ne!(a.gaps(), c.gaps());
    assert_eq!(na, (4 * 2 * k * h * m) as u64);
    assert_eq!(nb, na);
    for (i, r) in a.records.iter().enumerate() {
        let expected = (4 * 2 * h * m * (i + 1).min(k)) as u64;
        assert_eq!(r.samples_cumulative, Some(expected));
    }
    assert_eq!(
        a.to_csv_string().lines().next().unwrap(),
        "iter,sup_gap,eta,bound_theorem1,min_q_increase,elapsed_ns,tau_realized,samples_cumulative"
    );
}
