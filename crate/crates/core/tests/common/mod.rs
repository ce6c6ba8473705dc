//! Independent reference computations for the integration tests. None of these
//! call into the solver code paths they are used to check.
#![allow(dead_code)]

use pmd_core::{Mdp, PolicyF64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mdp(seed: u64, states: usize, actions: usize, gamma: f64) -> Mdp {
    Mdp::random(states, actions, gamma, &mut rng(seed)).unwrap()
}

/// `V^π` for an arbitrary row-stochastic or perturbed weight matrix `w[s][a]`,
/// by plain Bellman sweeps until the update stalls (at most `10^6` sweeps).
pub fn sweep_values(mdp: &Mdp, w: &[Vec<f64>]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let g = mdp.gamma();
    let mut v = vec![0.0; ns];
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp.p(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                next[s] += w[s][a] * (mdp.r(s, a) + g * ev);
            }
        }
        let diff = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff == 0.0 {
            break;
        }
    }
    v
}

pub fn rows(p: &PolicyF64) -> Vec<Vec<f64>> {
    p.rows().map(|r| r.to_vec()).collect()
}

pub fn q_of(mdp: &Mdp, v: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| {
                    mdp.r(s, a)
                        + mdp.gamma() * mdp.p(s, a).iter().zip(v).map(|(p, x)| p * x).sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Optimal values by value iteration run to a stall.
pub fn vi_optimal(mdp: &Mdp) -> Vec<f64> {
    let mut v = vec![0.0; mdp.n_states()];
    for _ in 0..1_000_000 {
        let next: Vec<f64> = q_of(mdp, &v)
            .iter()
            .map(|r| r.iter().copied().fold(f64::MIN, f64::max))
            .collect();
        let diff = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff == 0.0 {
            break;
        }
    }
    v
}

/// `H`-step truncated action values `Σ_{t<H} γ^t E[r_t]`, by backward recursion.
pub fn truncated_q(mdp: &Mdp, w: &[Vec<f64>], h: usize) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; ns];
    let mut q = vec![vec![0.0; na]; ns];
    for _ in 0..h {
        q = q_of(mdp, &v);
        v = (0..ns)
            .map(|s| (0..na).map(|a| w[s][a] * q[s][a]).sum())
            .collect();
    }
    q
}

pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
