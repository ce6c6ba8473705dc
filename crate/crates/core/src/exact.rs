//! The exact PMD loop: evaluate, choose a step size, update every state,
//! and optionally check each proven inequality as the run proceeds.

use std::time::Instant;

use crate::error::{PmdError, Result};
use crate::mdp::{
    evaluate_policy, optimal_values, q_from_v, Policy, QFunction, TabularMdp, ValueFunction,
    GREEDY_TOL,
};
use crate::mirror::{
    apply_domain_guard, greedy_set, min_greedy_divergence, one_hot, pmd_update_state,
    three_point_terms, MirrorMap,
};
use crate::scalar::Scalar;
use crate::schedule::{greedy_divergences, StepSize, StepSizeSchedule};
use crate::trace::{IterationRecord, IterationTrace};

/// Slack on per-state inequalities (monotonicity, three-point descent).
pub const STATE_SLACK: f64 = 1e-9;
/// Slack on the sup-norm convergence bound.
pub const BOUND_SLACK: f64 = 1e-8;
/// Tolerance used when computing `V⋆` for gap reporting.
pub const OPTIMAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ExactRunConfig<T> {
    pub iterations: usize,
    pub greedy_tol: T,
    pub verify: bool,
    pub keep_policies: bool,
    pub record_time: bool,
    /// Precomputed `V⋆`; computed with [`optimal_values`] when absent.
    pub optimal: Option<ValueFunction<T>>,
}

impl<T: Scalar> ExactRunConfig<T> {
    pub fn new(iterations: usize) -> Self {
        ExactRunConfig {
            iterations,
            greedy_tol: T::lit(GREEDY_TOL),
            verify: true,
            keep_policies: false,
            record_time: false,
            optimal: None,
        }
    }

    pub fn verify(mut self, verify: bool) -> Self {
        self.verify = verify;
        self
    }

    pub fn keep_policies(mut self, keep: bool) -> Self {
        self.keep_policies = keep;
        self
    }

    pub fn record_time(mut self, on: bool) -> Self {
        self.record_time = on;
        self
    }

    pub fn with_optimal(mut self, v_star: ValueFunction<T>) -> Self {
        self.optimal = Some(v_star);
        self
    }
}

pub(crate) fn check_initial_policy<T: Scalar>(
    mdp: &TabularMdp<T>,
    map: &MirrorMap<T>,
    pi0: &Policy<T>,
) -> Result<()> {
    if pi0.n_states() != mdp.n_states() || pi0.n_actions() != mdp.n_actions() {
        return Err(PmdError::InvalidPolicy(
            "initial policy shape does not match MDP".into(),
        ));
    }
    if map.requires_interior() && !pi0.is_interior() {
        return Err(PmdError::Domain(format!(
            "{} needs an initial policy in the relative interior",
            map.id()
        )));
    }
    Ok(())
}

/// Applies the proximal update in every state. Returns the new policy and whether
/// the interior floor was hit.
pub(crate) fn pmd_step<T: Scalar>(
    map: &MirrorMap<T>,
    policy: &Policy<T>,
    q: &QFunction<T>,
    eta: &StepSize<T>,
) -> Result<(Policy<T>, bool)> {
    let (ns, na) = (policy.n_states(), policy.n_actions());
    let mut probs = Vec::with_capacity(ns * na);
    let mut guarded = false;
    for s in 0..ns {
        let mut row = pmd_update_state(map, policy.row(s), q.row(s), eta.at(s))?;
        if map.requires_interior() {
            guarded |= apply_domain_guard(&mut row);
        }
        probs.extend(row);
    }
    Ok((Policy::from_rows_unchecked(ns, na, probs), guarded))
}

/// Three-point descent against every vertex, the uniform policy and `π_s` itself.
/// The slack scales with the magnitude of the left-hand side for large steps.
pub(crate) fn verify_three_point<T: Scalar>(
    map: &MirrorMap<T>,
    policy: &Policy<T>,
    q: &QFunction<T>,
    eta: &StepSize<T>,
    next: &Policy<T>,
    iteration: usize,
) -> Result<()> {
    let na = policy.n_actions();
    let uniform = vec![T::one() / T::lit(na as f64); na];
    for s in 0..policy.n_states() {
        let mut points: Vec<Vec<T>> = (0..na).map(|a| one_hot(na, a)).collect();
        points.push(uniform.clone());
        points.push(policy.row(s).to_vec());
        for p in &points {
            let (margin, scale) =
                three_point_terms(map, policy.row(s), q.row(s), eta.at(s), next.row(s), p)?;
            let slack = T::tol(STATE_SLACK) * (T::one() + scale);
            if margin < -slack {
                return Err(PmdError::Verification {
                    inequality: "three-point descent",
                    iteration,
                    state: Some(s),
                    lhs: -margin.as_f64(),
                    rhs: slack.as_f64(),
                });
            }
        }
    }
    Ok(())
}

/// `min_{s,a} (after − before)` and its argmin state.
pub(crate) fn min_increase<T: Scalar>(after: &[T], before: &[T], width: usize) -> (T, usize) {
    after
        .iter()
        .zip(before)
        .enumerate()
        .fold((T::infinity(), 0), |(m, at), (i, (&x, &y))| {
            let d = x - y;
            if d < m {
                (d, i / width)
            } else {
                (m, at)
            }
        })
}

/// Runs `iterations` exact PMD updates from `pi0`.
///
/// The trace holds `iterations + 1` records (`k = 0..=K`). With `verify` set, the
/// run fails on the first violated inequality: monotone Q- and V-improvement,
/// per-state three-point descent, and, for schedules with a `{c_k}` sequence,
/// `‖V⋆ − V^k‖_∞ ≤ γ^k(‖V⋆ − V^0‖_∞ + Σ_{i=1..k} γ^{-i} c_{i−1})`.
pub fn run_exact_pmd<T: Scalar>(
    mdp: &TabularMdp<T>,
    map: &MirrorMap<T>,
    schedule: &StepSizeSchedule<T>,
    pi0: &Policy<T>,
    config: &ExactRunConfig<T>,
) -> Result<IterationTrace<T>> {
    check_initial_policy(mdp, map, pi0)?;
    schedule.validate()?;
    let gamma = mdp.gamma();
    let v_star = match &config.optimal {
        Some(v) => v.clone(),
        None => optimal_values(mdp, T::tol(OPTIMAL_TOL))?.0,
    };
    let slack = T::tol(STATE_SLACK);
    let bound_slack = T::tol(BOUND_SLACK);
    let na = mdp.n_actions();

    let mut policy = pi0.clone();
    let mut value = evaluate_policy(mdp, &policy)?;
    let mut q = q_from_v(mdp, &value);
    let mut prev: Option<(ValueFunction<T>, QFunction<T>)> = None;
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut policies = config.keep_policies.then(Vec::new);
    let gap0 = v_star.sup_dist(&value);
    let mut bound = gap0;

    for k in 0..=config.iterations {
        let started = Instant::now();
        let mut rec = IterationRecord::new(k, v_star.sup_dist(&value));

        if let Some((v_prev, q_prev)) = &prev {
            let (dq, sq) = min_increase(q.values(), q_prev.values(), na);
            let (dv, sv) = min_increase(value.as_slice(), v_prev.as_slice(), 1);
            rec.min_q_increase = Some(dq);
            rec.min_v_increase = Some(dv);
            if config.verify {
                if dq < -slack {
                    return Err(violation("monotone Q-improvement", k, Some(sq), dq, -slack));
                }
                if dv < -slack {
                    return Err(violation(
                        "monotone value improvement",
                        k,
                        Some(sv),
                        dv,
                        -slack,
                    ));
                }
            }
        }
        if let Some(c) = schedule.c_sequence() {
            if k > 0 {
                bound = gamma * bound + c.value(k - 1, gamma);
            }
            rec.bound = Some(bound);
            if config.verify && rec.sup_gap > bound + bound_slack {
                return Err(violation(
                    "theorem-1 convergence bound",
                    k,
                    None,
                    rec.sup_gap,
                    bound + bound_slack,
                ));
            }
        }

        let (sets, divs) = greedy_divergences(map, &policy, &q, config.greedy_tol)?;
        rec.greedy_sets = sets;
        rec.min_greedy_div = divs;
        if let Some(ps) = policies.as_mut() {
            ps.push(policy.clone());
        }

        if k == config.iterations {
            rec.elapsed_ns = elapsed(started, config.record_time);
            records.push(rec);
            break;
        }

        let (eta, saturated) = schedule.step_size(k, gamma, &rec.min_greedy_div);
        let (next, guarded) = pmd_step(map, &policy, &q, &eta)?;
        if config.verify {
            verify_three_point(map, &policy, &q, &eta, &next, k)?;
        }
        rec.eta = Some(eta);
        rec.eta_saturated = saturated;
        rec.domain_guard = guarded;

        let next_value = evaluate_policy(mdp, &next)?;
        let next_q = q_from_v(mdp, &next_value);
        prev = Some((value, q));
        policy = next;
        value = next_value;
        q = next_q;
        rec.elapsed_ns = elapsed(started, config.record_time);
        records.push(rec);
    }

    Ok(IterationTrace {
        records,
        final_policy: policy,
        final_value: value,
        optimal_value: v_star,
        policies,
        inexact: false,
    })
}

pub(crate) fn violation<T: Scalar>(
    inequality: &'static str,
    iteration: usize,
    state: Option<usize>,
    lhs: T,
    rhs: T,
) -> PmdError {
    PmdError::Verification {
        inequality,
        iteration,
        state,
        lhs: lhs.as_f64(),
        rhs: rhs.as_f64(),
    }
}

pub(crate) fn elapsed(started: Instant, on: bool) -> u64 {
    if on {
        started.elapsed().as_nanos() as u64
    } else {
        0
    }
}

/// Lower threshold on `η_k` at state `s` for NPG to keep the γ-rate:
/// `KL(π̃^{k+1}_s, π^k_s) / (2γ^k)`, `π̃` the KL projection onto the greedy face.
pub fn necessity_threshold<T: Scalar>(
    policy_k: &Policy<T>,
    s: usize,
    q_k: &QFunction<T>,
    k: usize,
    gamma: T,
    tol: T,
) -> Result<T> {
    let greedy = greedy_set(q_k.row(s), tol);
    let kl = min_greedy_divergence(&MirrorMap::NegativeEntropy, policy_k.row(s), &greedy)?;
    Ok(kl / (T::lit(2.0) * gamma.powi(k as i32)))
}
