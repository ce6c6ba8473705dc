//! Inexact PMD under a generative model: a seeded transition sampler, the
//! truncated Monte-Carlo Q-estimator, the inexact PMD loop and the parameter
//! choices of the sample-complexity guarantee.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{PmdError, Result};
use crate::exact::{
    check_initial_policy, elapsed, pmd_step, verify_three_point, violation, BOUND_SLACK,
    OPTIMAL_TOL, STATE_SLACK,
};
use crate::mdp::{
    evaluate_policy, optimal_values, q_from_v, Policy, QFunction, TabularMdp, ValueFunction,
    GREEDY_TOL,
};
use crate::mirror::MirrorMap;
use crate::scalar::{dot, Scalar};
use crate::schedule::{greedy_divergences, StepSizeSchedule};
use crate::trace::{IterationRecord, IterationTrace};

/// Sampling access to `p(·|s, a)` with deterministic per-stream randomness.
///
/// Every rollout gets its own ChaCha8 stream keyed by
/// `(seed, iteration, s·A + a, trajectory)`, so results do not depend on the
/// order in which rollouts are executed.
#[derive(Debug)]
pub struct GenerativeModel<T> {
    mdp: TabularMdp<T>,
    seed: u64,
    counter: AtomicU64,
    cumulative: Vec<f64>,
}

impl<T: Scalar> GenerativeModel<T> {
    pub fn new(mdp: TabularMdp<T>, seed: u64) -> Self {
        let ns = mdp.n_states();
        let cumulative = mdp
            .transition()
            .chunks(ns)
            .flat_map(cumulative_row)
            .collect();
        GenerativeModel {
            mdp,
            seed,
            counter: AtomicU64::new(0),
            cumulative,
        }
    }

    pub fn mdp(&self) -> &TabularMdp<T> {
        &self.mdp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Transition draws made so far.
    pub fn samples(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    /// The random stream for one rollout.
    pub fn stream(&self, iteration: u64, pair: u64, trajectory: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (chunk, word) in key
            .chunks_exact_mut(8)
            .zip([self.seed, iteration, pair, trajectory])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// One generative-model call: returns `r(s, a)` and a draw `s' ~ p(·|s, a)`.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (T, usize) {
        self.counter.fetch_add(1, Ordering::Relaxed);
        self.draw(s, a, rng)
    }

    fn draw<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (T, usize) {
        let ns = self.mdp.n_states();
        let start = (s * self.mdp.n_actions() + a) * ns;
        let next = categorical(&self.cumulative[start..start + ns], rng);
        (self.mdp.r(s, a), next)
    }

    /// Discounted return of one horizon-`h` rollout from `(s, a)` under `policy_cum`
    /// (row-wise cumulative action probabilities). Makes exactly `h` model calls; the
    /// successor drawn by the last call is not used.
    fn rollout<R: Rng + ?Sized>(
        &self,
        s: usize,
        a: usize,
        policy_cum: &[f64],
        h: usize,
        rng: &mut R,
    ) -> T {
        let na = self.mdp.n_actions();
        let gamma = self.mdp.gamma();
        let (mut state, mut action) = (s, a);
        let mut discount = T::one();
        let mut ret = T::zero();
        for t in 0..h {
            let (r, next) = self.draw(state, action, rng);
            ret = ret + discount * r;
            if t + 1 < h {
                discount = discount * gamma;
                state = next;
                action = categorical(&policy_cum[state * na..(state + 1) * na], rng);
            }
        }
        self.counter.fetch_add(h as u64, Ordering::Relaxed);
        ret
    }
}

fn cumulative_row<T: Scalar>(row: &[T]) -> Vec<f64> {
    let mut acc = 0.0;
    row.iter()
        .map(|p| {
            acc += p.as_f64();
            acc
        })
        .collect()
}

/// Inverse-CDF draw; mass lost to rounding goes to the last positive entry.
fn categorical<R: Rng + ?Sized>(cum: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>() * cum[cum.len() - 1];
    match cum.iter().position(|&c| u < c) {
        Some(i) => i,
        None => {
            let last = cum[cum.len() - 1];
            cum.iter().position(|&c| c >= last).unwrap_or(cum.len() - 1)
        }
    }
}

/// Horizon `H` and rollouts per pair `M` of the truncated Monte-Carlo estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorConfig {
    pub horizon: usize,
    pub trajectories: usize,
}

impl EstimatorConfig {
    pub fn new(horizon: usize, trajectories: usize) -> Result<Self> {
        let cfg = EstimatorConfig {
            horizon,
            trajectories,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.trajectories == 0 {
            return Err(PmdError::InvalidParameter(format!(
                "horizon {} and trajectories {} must both be at least 1",
                self.horizon, self.trajectories
            )));
        }
        Ok(())
    }

    /// Model calls consumed by one estimate of every `Q(s, a)`.
    pub fn calls_per_estimate(&self, n_states: usize, n_actions: usize) -> u64 {
        (n_states * n_actions) as u64 * self.horizon as u64 * self.trajectories as u64
    }
}

/// Source of action-value estimates for the inexact loop.
pub trait QEstimator<T: Scalar>: Sync {
    /// Estimate of `Q^π` at iteration `iteration`.
    fn estimate(&self, policy: &Policy<T>, iteration: usize) -> Result<QFunction<T>>;
    /// Model calls made so far.
    fn samples(&self) -> u64;
}

/// Averages `M` discounted returns of horizon `H` per state-action pair.
#[derive(Debug)]
pub struct MonteCarloEstimator<'a, T> {
    pub model: &'a GenerativeModel<T>,
    pub config: EstimatorConfig,
}

impl<T: Scalar> QEstimator<T> for MonteCarloEstimator<'_, T> {
    fn estimate(&self, policy: &Policy<T>, iteration: usize) -> Result<QFunction<T>> {
        estimate_q(self.model, policy, &self.config, iteration)
    }

    fn samples(&self) -> u64 {
        self.model.samples()
    }
}

/// Returns the true `Q^π`; turns the inexact loop into exact PMD.
#[derive(Debug, Clone, Copy)]
pub struct ExactEstimator<'a, T> {
    pub mdp: &'a TabularMdp<T>,
}

impl<T: Scalar> QEstimator<T> for ExactEstimator<'_, T> {
    fn estimate(&self, policy: &Policy<T>, _iteration: usize) -> Result<QFunction<T>> {
        Ok(q_from_v(self.mdp, &evaluate_policy(self.mdp, policy)?))
    }

    fn samples(&self) -> u64 {
        0
    }
}

/// Truncated Monte-Carlo estimate of `Q^π`: for every `(s, a)`, the mean over
/// `M` rollouts of `Σ_{t<H} γ^t r(s_t, a_t)` with `(s_0, a_0) = (s, a)` and
/// `a_t ~ π(·|s_t)` afterwards. Consumes `|S|·|A|·H·M` model calls.
pub fn estimate_q<T: Scalar>(
    model: &GenerativeModel<T>,
    policy: &Policy<T>,
    config: &EstimatorConfig,
    iteration: usize,
) -> Result<QFunction<T>> {
    config.validate()?;
    let (ns, na) = (model.mdp.n_states(), model.mdp.n_actions());
    if policy.n_states() != ns || policy.n_actions() != na {
        return Err(PmdError::InvalidPolicy(
            "policy shape does not match MDP".into(),
        ));
    }
    let policy_cum: Vec<f64> = policy.rows().flat_map(cumulative_row).collect();
    let q: Vec<T> = (0..ns * na)
        .into_par_iter()
        .map(|pair| {
            let (s, a) = (pair / na, pair % na);
            // running mean: exact when every return is identical
            (0..config.trajectories).fold(T::zero(), |mean, j| {
                let mut rng = model.stream(iteration as u64, pair as u64, j as u64);
                let ret = model.rollout(s, a, &policy_cum, config.horizon, &mut rng);
                mean + (ret - mean) / T::lit((j + 1) as f64)
            })
        })
        .collect();
    Ok(QFunction::new(ns, na, q))
}

/// High-probability accuracy of the estimator: `2γ^H / (1 − γ)`.
pub fn accuracy_bound<T: Scalar>(horizon: usize, gamma: T) -> T {
    T::lit(2.0) * gamma.powi(horizon as i32) / (T::one() - gamma)
}

/// Iteration count, horizon and rollouts sufficient for an `ε`-optimal policy
/// with probability `1 − δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem4Params<T> {
    pub k: u64,
    pub horizon: u64,
    pub trajectories: u64,
    /// `|S|·|A|·K·H·M`, saturating.
    pub total_samples: u128,
    pub tau_bound: T,
    /// `M` (and hence the total) exceeded the integer range and was saturated.
    pub capped: bool,
}

pub fn theorem4_parameters<T: Scalar>(
    gamma: T,
    epsilon: T,
    confidence_delta: T,
    n_states: usize,
    n_actions: usize,
) -> Result<Theorem4Params<T>> {
    let (g, eps, conf) = (gamma.as_f64(), epsilon.as_f64(), confidence_delta.as_f64());
    if !(g > 0.0 && g < 1.0) {
        return Err(PmdError::InvalidParameter(format!(
            "gamma {g} outside (0, 1)"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(PmdError::InvalidParameter(format!(
            "epsilon {eps} must be positive"
        )));
    }
    if !(conf > 0.0 && conf < 1.0) {
        return Err(PmdError::InvalidParameter(format!(
            "confidence delta {conf} outside (0, 1)"
        )));
    }
    if n_states == 0 || n_actions == 0 {
        return Err(PmdError::InvalidParameter(
            "state and action counts must be positive".into(),
        ));
    }
    let scale = 1.0 / (1.0 - g);
    let k_real = scale * (4.0 / ((1.0 - g) * eps)).ln();
    let k = to_count(k_real.max(0.0).ceil() + 1.0).0;
    let h = to_count(
        (scale * (16.0 / ((1.0 - g).powi(3) * eps)).ln())
            .max(1.0)
            .ceil(),
    )
    .0;
    let sa = (n_states * n_actions) as f64;
    let log_term = (2.0 * k as f64 * sa / conf).ln();
    let m_real = (-2.0 * h as f64 * g.ln()).exp() / 2.0 * log_term;
    let (m, mut capped) = to_count(m_real.max(1.0).ceil());
    let total = [
        n_states as u128,
        n_actions as u128,
        k as u128,
        h as u128,
        m as u128,
    ]
    .into_iter()
    .try_fold(1u128, |acc, x| acc.checked_mul(x));
    let total = total.filter(|_| !capped);
    capped |= total.is_none();
    Ok(Theorem4Params {
        k,
        horizon: h,
        trajectories: m,
        total_samples: total.unwrap_or(u128::MAX),
        tau_bound: accuracy_bound(h.min(i32::MAX as u64) as usize, gamma),
        capped,
    })
}

fn to_count(x: f64) -> (u64, bool) {
    if x.is_finite() && x < u64::MAX as f64 {
        (x as u64, false)
    } else {
        (u64::MAX, true)
    }
}

#[derive(Debug, Clone)]
pub struct InexactRunConfig<T> {
    pub iterations: usize,
    pub estimator: EstimatorConfig,
    pub greedy_tol: T,
    pub verify: bool,
    pub keep_policies: bool,
    pub record_time: bool,
    pub optimal: Option<ValueFunction<T>>,
}

impl<T: Scalar> InexactRunConfig<T> {
    pub fn new(iterations: usize, estimator: EstimatorConfig) -> Self {
        InexactRunConfig {
            iterations,
            estimator,
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
}

/// Inexact PMD with the Monte-Carlo estimator of `model`.
pub fn run_inexact_pmd<T: Scalar>(
    model: &GenerativeModel<T>,
    map: &MirrorMap<T>,
    schedule: &StepSizeSchedule<T>,
    pi0: &Policy<T>,
    config: &InexactRunConfig<T>,
) -> Result<IterationTrace<T>> {
    let estimator = MonteCarloEstimator {
        model,
        config: config.estimator,
    };
    run_inexact_pmd_with(model.mdp(), &estimator, map, schedule, pi0, config)
}

/// Inexact PMD with any estimator.
///
/// Greedy sets and step sizes come from `Q̂^k`. The simulator side evaluates every
/// iterate exactly to report `‖V⋆ − V^k‖_∞` and `τ_k = ‖Q̂^k − Q^k‖_∞`. With
/// `verify` set the run checks, for every `k`:
/// `⟨Q̂^k_s, π^{k+1}_s − π^k_s⟩ ≥ 0` and three-point descent w.r.t. `Q̂^k`;
/// `V^{k+1}(ρ) ≥ V^k(ρ) − 2τ_k/(1 − γ)` for uniform `ρ`;
/// `Q^{k+1} ≥ Q^k − 2τ_kγ/(1 − γ)`; and, while every realised `τ_i` so far is
/// within [`accuracy_bound`], `‖V⋆ − V^k‖_∞ ≤ γ^k(‖V⋆ − V^0‖_∞ + 1/(1 − γ)) + 8γ^H/(1 − γ)^3`.
pub fn run_inexact_pmd_with<T: Scalar, E: QEstimator<T> + ?Sized>(
    mdp: &TabularMdp<T>,
    estimator: &E,
    map: &MirrorMap<T>,
    schedule: &StepSizeSchedule<T>,
    pi0: &Policy<T>,
    config: &InexactRunConfig<T>,
) -> Result<IterationTrace<T>> {
    check_initial_policy(mdp, map, pi0)?;
    schedule.validate()?;
    config.estimator.validate()?;
    let gamma = mdp.gamma();
    let one = T::one();
    let v_star = match &config.optimal {
        Some(v) => v.clone(),
        None => optimal_values(mdp, T::tol(OPTIMAL_TOL))?.0,
    };
    let slack = T::tol(STATE_SLACK);
    let ns = mdp.n_states();
    let rho = vec![one / T::lit(ns as f64); ns];
    let horizon = config.estimator.horizon;
    let tau_cap = accuracy_bound(horizon, gamma);
    let bias = T::lit(8.0) * gamma.powi(horizon as i32) / (one - gamma).powi(3);

    let mut policy = pi0.clone();
    let mut value = evaluate_policy(mdp, &policy)?;
    let mut q = q_from_v(mdp, &value);
    let gap0 = v_star.sup_dist(&value);
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut policies = config.keep_policies.then(Vec::new);
    let mut tau_prev: Option<T> = None;
    let mut prev: Option<(ValueFunction<T>, QFunction<T>)> = None;
    let mut accurate_so_far = true;

    for k in 0..=config.iterations {
        let started = Instant::now();
        let mut rec = IterationRecord::new(k, v_star.sup_dist(&value));
        let bound = gamma.powi(k as i32) * (gap0 + one / (one - gamma)) + bias;
        rec.bound = Some(bound);

        if let (Some((v_prev, q_prev)), Some(tau)) = (&prev, tau_prev) {
            let (dq, sq) = crate::exact::min_increase(q.values(), q_prev.values(), mdp.n_actions());
            let (dv, _) = crate::exact::min_increase(value.as_slice(), v_prev.as_slice(), 1);
            rec.min_q_increase = Some(dq);
            rec.min_v_increase = Some(dv);
            if config.verify {
                let dv_rho = dot(value.as_slice(), &rho) - dot(v_prev.as_slice(), &rho);
                let v_floor = -T::lit(2.0) * tau / (one - gamma) - slack;
                if dv_rho < v_floor {
                    return Err(violation("inexact value descent", k, None, dv_rho, v_floor));
                }
                let q_floor = -T::lit(2.0) * tau * gamma / (one - gamma) - slack;
                if dq < q_floor {
                    return Err(violation("inexact Q-improvement", k, Some(sq), dq, q_floor));
                }
            }
        }
        if config.verify && accurate_so_far && rec.sup_gap > bound + T::tol(BOUND_SLACK * 100.0) {
            return Err(violation(
                "inexact convergence bound",
                k,
                None,
                rec.sup_gap,
                bound,
            ));
        }
        if let Some(ps) = policies.as_mut() {
            ps.push(policy.clone());
        }
        if k == config.iterations {
            rec.samples_cumulative = Some(estimator.samples());
            rec.elapsed_ns = elapsed(started, config.record_time);
            records.push(rec);
            break;
        }

        let q_hat = estimator.estimate(&policy, k)?;
        let tau = q_hat.sup_dist(&q);
        accurate_so_far &= tau <= tau_cap;
        rec.tau_realized = Some(tau);
        rec.samples_cumulative = Some(estimator.samples());

        let (sets, divs) = greedy_divergences(map, &policy, &q_hat, config.greedy_tol)?;
        let (eta, saturated) = schedule.step_size(k, gamma, &divs);
        rec.greedy_sets = sets;
        rec.min_greedy_div = divs;
        let (next, guarded) = pmd_step(map, &policy, &q_hat, &eta)?;
        if config.verify {
            verify_three_point(map, &policy, &q_hat, &eta, &next, k)?;
            for s in 0..ns {
                let gain: T = q_hat
                    .row(s)
                    .iter()
                    .zip(next.row(s).iter().zip(policy.row(s)))
                    .map(|(&qv, (&a, &b))| qv * (a - b))
                    .sum();
                let scale = q_hat.row(s).iter().fold(one, |m, x| m.max(x.abs()));
                if gain < -slack * scale {
                    return Err(violation(
                        "inexact ascent on estimated Q",
                        k,
                        Some(s),
                        gain,
                        -slack * scale,
                    ));
                }
            }
        }
        rec.eta = Some(eta);
        rec.eta_saturated = saturated;
        rec.domain_guard = guarded;

        let next_value = evaluate_policy(mdp, &next)?;
        let next_q = q_from_v(mdp, &next_value);
        prev = Some((value, q));
        tau_prev = Some(tau);
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
        inexact: true,
    })
}
