//! Tabular MDPs, exact policy evaluation and the Bellman quantities built on it.
//!
//! Storage is dense and row-major: `transition[(s * A + a) * S + s']`,
//! `reward[s * A + a]`, `policy[s * A + a]`. Every reduction walks states then
//! actions in ascending order so results are bit-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PmdError, Result};
use crate::linalg::{mat_vec, Lu};
use crate::mirror::greedy_set;
use crate::scalar::{dot, max_of, sup_dist, Scalar};

/// Default absolute tolerance for deciding that two action values tie.
pub const GREEDY_TOL: f64 = 1e-9;

/// Largest state count solved by a dense factorisation; above it policy
/// evaluation falls back to Bellman sweeps.
pub const DENSE_LIMIT: usize = 2000;

const ROW_SUM_TOL: f64 = 1e-12;

/// Which reward values are accepted on construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardRange {
    /// Rewards in `[0, 1]`; all convergence bounds are certified.
    #[default]
    Unit,
    /// Any finite reward. Bounds that assume `[0, 1]` rewards are not certified.
    Finite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp<T> {
    n_states: usize,
    n_actions: usize,
    transition: Vec<T>,
    reward: Vec<T>,
    gamma: T,
    rewards: RewardRange,
}

impl<T: Scalar> TabularMdp<T> {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<T>,
        reward: Vec<T>,
        gamma: T,
    ) -> Result<Self> {
        Self::with_reward_range(
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            RewardRange::Unit,
        )
    }

    pub fn with_reward_range(
        n_states: usize,
        n_actions: usize,
        transition: Vec<T>,
        reward: Vec<T>,
        gamma: T,
        rewards: RewardRange,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(PmdError::InvalidMdp(
                "state and action counts must be positive".into(),
            ));
        }
        if !(gamma >= T::zero() && gamma < T::one()) {
            return Err(PmdError::InvalidMdp(format!(
                "gamma {gamma} outside [0, 1)"
            )));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(PmdError::InvalidMdp(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(PmdError::InvalidMdp(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        let tol = T::tol(ROW_SUM_TOL);
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                if let Some(&bad) = row.iter().find(|&&p| !(p >= T::zero() && p.is_finite())) {
                    return Err(PmdError::InvalidMdp(format!(
                        "p(.|{s},{a}) has invalid entry {bad}"
                    )));
                }
                let total: T = row.iter().copied().sum();
                if (total - T::one()).abs() > tol {
                    return Err(PmdError::InvalidMdp(format!(
                        "p(.|{s},{a}) sums to {total}, expected 1"
                    )));
                }
                let r = reward[s * n_actions + a];
                let ok = match rewards {
                    RewardRange::Unit => r >= T::zero() && r <= T::one(),
                    RewardRange::Finite => r.is_finite(),
                };
                if !ok {
                    return Err(PmdError::InvalidMdp(format!(
                        "reward r({s},{a}) = {r} outside the accepted range"
                    )));
                }
            }
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            rewards,
        })
    }

    /// Random MDP with dense transition rows and uniform `[0, 1]` rewards.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        gamma: T,
        rng: &mut R,
    ) -> Result<Self> {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let w: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
            let z: f64 = w.iter().sum();
            transition.extend(w.iter().map(|x| T::lit(x / z)));
        }
        let reward = (0..n_states * n_actions)
            .map(|_| T::lit(rng.random::<f64>()))
            .collect();
        Self::new(n_states, n_actions, transition, reward, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn reward_range(&self) -> RewardRange {
        self.rewards
    }

    /// Whether the `[0, 1]` reward assumption behind the proven bounds holds.
    pub fn bounds_certified(&self) -> bool {
        self.rewards == RewardRange::Unit
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize) -> &[T] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> T {
        self.reward[s * self.n_actions + a]
    }

    pub fn transition(&self) -> &[T] {
        &self.transition
    }

    pub fn reward(&self) -> &[T] {
        &self.reward
    }

    pub fn to_document(&self) -> MdpDocument {
        let (ns, na) = (self.n_states, self.n_actions);
        MdpDocument {
            n_states: ns,
            n_actions: na,
            gamma: self.gamma.as_f64(),
            reward: (0..ns)
                .map(|s| (0..na).map(|a| self.r(s, a).as_f64()).collect())
                .collect(),
            transition: (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| self.p(s, a).iter().map(|p| p.as_f64()).collect())
                        .collect()
                })
                .collect(),
            unbounded_rewards: self.rewards == RewardRange::Finite,
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        let (ns, na) = (doc.n_states, doc.n_actions);
        if doc.reward.len() != ns || doc.reward.iter().any(|row| row.len() != na) {
            return Err(PmdError::InvalidMdp(format!(
                "reward must be a {ns} x {na} table"
            )));
        }
        if doc.transition.len() != ns
            || doc
                .transition
                .iter()
                .any(|rows| rows.len() != na || rows.iter().any(|row| row.len() != ns))
        {
            return Err(PmdError::InvalidMdp(format!(
                "transition must be a {ns} x {na} x {ns} tensor"
            )));
        }
        let transition = doc
            .transition
            .iter()
            .flatten()
            .flatten()
            .map(|&p| T::lit(p))
            .collect();
        let reward = doc.reward.iter().flatten().map(|&r| T::lit(r)).collect();
        let range = if doc.unbounded_rewards {
            RewardRange::Finite
        } else {
            RewardRange::Unit
        };
        Self::with_reward_range(ns, na, transition, reward, T::lit(doc.gamma), range)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("MDP document serialises")
    }
}

/// JSON interchange form of a [`TabularMdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unbounded_rewards: bool,
}

/// A stationary stochastic policy, one distribution over actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    n_states: usize,
    n_actions: usize,
    probs: Vec<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<T>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(PmdError::InvalidPolicy(format!(
                "expected {} entries, got {}",
                n_states * n_actions,
                probs.len()
            )));
        }
        let tol = T::tol(ROW_SUM_TOL);
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|&p| !(p >= T::zero())) {
                return Err(PmdError::InvalidPolicy(format!(
                    "negative entry in state {s}"
                )));
            }
            let total: T = row.iter().copied().sum();
            if (total - T::one()).abs() > tol {
                return Err(PmdError::InvalidPolicy(format!(
                    "state {s} sums to {total}, expected 1"
                )));
            }
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub(crate) fn from_rows_unchecked(n_states: usize, n_actions: usize, probs: Vec<T>) -> Self {
        debug_assert_eq!(probs.len(), n_states * n_actions);
        Policy {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = T::one() / T::lit(n_actions as f64);
        Policy {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![T::zero(); actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(PmdError::InvalidPolicy(format!(
                    "action {a} in state {s} out of range"
                )));
            }
            probs[s * n_actions + a] = T::one();
        }
        Ok(Policy {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    /// Random policy in the relative interior (every entry at least `1e-3` before normalising).
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let w: Vec<f64> = (0..n_actions).map(|_| rng.random::<f64>() + 1e-3).collect();
            let z: f64 = w.iter().sum();
            probs.extend(w.iter().map(|x| T::lit(x / z)));
        }
        Policy {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[T] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> T {
        self.probs[s * self.n_actions + a]
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.probs.chunks(self.n_actions)
    }

    /// True when every entry is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.probs.iter().all(|&p| p > T::zero())
    }

    fn check_shape(&self, mdp: &TabularMdp<T>) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(PmdError::InvalidPolicy(format!(
                "policy shape {}x{} does not match MDP {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction<T>(pub Vec<T>);

impl<T: Scalar> ValueFunction<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn at(&self, s: usize) -> T {
        self.0[s]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sup_dist(&self, other: &Self) -> T {
        sup_dist(&self.0, &other.0)
    }

    /// `V(ρ) = Σ_s ρ(s) V(s)`.
    pub fn expect(&self, rho: &[T]) -> T {
        dot(&self.0, rho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFunction<T> {
    n_states: usize,
    n_actions: usize,
    q: Vec<T>,
}

impl<T: Scalar> QFunction<T> {
    pub fn new(n_states: usize, n_actions: usize, q: Vec<T>) -> Self {
        assert_eq!(q.len(), n_states * n_actions);
        QFunction {
            n_states,
            n_actions,
            q,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[T] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> T {
        self.q[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[T] {
        &self.q
    }

    pub fn sup_dist(&self, other: &Self) -> T {
        sup_dist(&self.q, &other.q)
    }

    /// `V(s) = ⟨Q_s, π_s⟩`.
    pub fn state_values(&self, policy: &Policy<T>) -> ValueFunction<T> {
        ValueFunction(
            (0..self.n_states)
                .map(|s| dot(self.row(s), policy.row(s)))
                .collect(),
        )
    }
}

/// Controls for [`evaluate_policy_with`].
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub dense_limit: usize,
    /// Sweep tolerance of the iterative fallback.
    pub sweep_tol: f64,
    /// Accepted residual `‖(I − γP_π)V − r_π‖_∞`.
    pub residual_tol: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            dense_limit: DENSE_LIMIT,
            sweep_tol: 1e-12,
            residual_tol: 1e-10,
        }
    }
}

/// `P_π` (row-major `S × S`) and `r_π`.
pub fn policy_kernel<T: Scalar>(mdp: &TabularMdp<T>, policy: &Policy<T>) -> (Vec<T>, Vec<T>) {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut p_pi = vec![T::zero(); ns * ns];
    let mut r_pi = vec![T::zero(); ns];
    for s in 0..ns {
        let row = &mut p_pi[s * ns..(s + 1) * ns];
        for a in 0..na {
            let w = policy.prob(s, a);
            if w == T::zero() {
                continue;
            }
            r_pi[s] = r_pi[s] + w * mdp.r(s, a);
            for (dst, &p) in row.iter_mut().zip(mdp.p(s, a)) {
                *dst = *dst + w * p;
            }
        }
    }
    (p_pi, r_pi)
}

fn bellman_residual<T: Scalar>(p_pi: &[T], r_pi: &[T], gamma: T, v: &[T]) -> T {
    let pv = mat_vec(p_pi, v.len(), v);
    v.iter()
        .zip(&pv)
        .zip(r_pi)
        .fold(T::zero(), |m, ((&vi, &pvi), &ri)| {
            m.max((vi - gamma * pvi - ri).abs())
        })
}

/// `‖(I − γP_π)V − r_π‖_∞` for a candidate value vector.
pub fn evaluation_residual<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &Policy<T>,
    v: &ValueFunction<T>,
) -> T {
    let (p_pi, r_pi) = policy_kernel(mdp, policy);
    bellman_residual(&p_pi, &r_pi, mdp.gamma, &v.0)
}

/// Exact value of `policy`: the fixed point of `V = r_π + γ P_π V`.
pub fn evaluate_policy<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &Policy<T>,
) -> Result<ValueFunction<T>> {
    evaluate_policy_with(mdp, policy, &EvalOptions::default())
}

pub fn evaluate_policy_with<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &Policy<T>,
    opts: &EvalOptions,
) -> Result<ValueFunction<T>> {
    policy.check_shape(mdp)?;
    let ns = mdp.n_states;
    let gamma = mdp.gamma;
    let (p_pi, r_pi) = policy_kernel(mdp, policy);
    let residual_tol = T::tol(opts.residual_tol);

    if ns <= opts.dense_limit {
        let mut a: Vec<T> = p_pi.iter().map(|&p| -gamma * p).collect();
        for i in 0..ns {
            a[i * ns + i] = a[i * ns + i] + T::one();
        }
        let lu = Lu::factor(a, ns)?;
        let mut v = lu.solve(&r_pi);
        // a couple of refinement passes absorb pivot growth at γ near 1
        for _ in 0..3 {
            let pv = mat_vec(&p_pi, ns, &v);
            let res: Vec<T> = (0..ns).map(|i| r_pi[i] - (v[i] - gamma * pv[i])).collect();
            let norm = max_of(&res.iter().map(|x| x.abs()).collect::<Vec<_>>());
            if norm <= residual_tol * T::lit(1e-2) {
                break;
            }
            let dv = lu.solve(&res);
            for (vi, d) in v.iter_mut().zip(dv) {
                *vi = *vi + d;
            }
        }
        let residual = bellman_residual(&p_pi, &r_pi, gamma, &v);
        if residual > residual_tol {
            return Err(PmdError::IterationCap {
                what: "dense policy evaluation refinement",
                cap: 3,
                residual: residual.as_f64(),
            });
        }
        return Ok(ValueFunction(v));
    }

    let tol = T::tol(opts.sweep_tol);
    let cap = sweep_cap(opts.sweep_tol, gamma.as_f64());
    let mut v = vec![T::zero(); ns];
    for _ in 0..cap {
        let pv = mat_vec(&p_pi, ns, &v);
        let next: Vec<T> = (0..ns).map(|i| r_pi[i] + gamma * pv[i]).collect();
        let delta = sup_dist(&next, &v);
        v = next;
        if delta <= tol {
            return Ok(ValueFunction(v));
        }
    }
    Err(PmdError::IterationCap {
        what: "iterative policy evaluation",
        cap,
        residual: bellman_residual(&p_pi, &r_pi, gamma, &v).as_f64(),
    })
}

/// Sweep budget `10·log(1/tol)/(1−γ)` of the iterative evaluator.
pub fn sweep_cap(tol: f64, gamma: f64) -> usize {
    (10.0 * (1.0 / tol).ln() / (1.0 - gamma)).ceil() as usize
}

/// `Q(s,a) = r(s,a) + γ Σ_{s'} p(s'|s,a) V(s')`.
pub fn q_from_v<T: Scalar>(mdp: &TabularMdp<T>, v: &ValueFunction<T>) -> QFunction<T> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            q.push(mdp.r(s, a) + mdp.gamma * dot(mdp.p(s, a), &v.0));
        }
    }
    QFunction::new(ns, na, q)
}

/// Bellman optimality operator `(TV)(s) = max_a Q_V(s,a)`.
pub fn bellman_optimality<T: Scalar>(
    mdp: &TabularMdp<T>,
    v: &ValueFunction<T>,
) -> ValueFunction<T> {
    let q = q_from_v(mdp, v);
    ValueFunction((0..mdp.n_states).map(|s| max_of(q.row(s))).collect())
}

pub(crate) fn check_distribution<T: Scalar>(rho: &[T], n: usize) -> Result<()> {
    if rho.len() != n {
        return Err(PmdError::InvalidDistribution(format!(
            "expected {n} entries, got {}",
            rho.len()
        )));
    }
    if rho.iter().any(|&x| !(x >= T::zero())) {
        return Err(PmdError::InvalidDistribution("negative entry".into()));
    }
    let total: T = rho.iter().copied().sum();
    if (total - T::one()).abs() > T::tol(ROW_SUM_TOL) {
        return Err(PmdError::InvalidDistribution(format!("sums to {total}")));
    }
    Ok(())
}

/// Discounted state-visitation distribution `d^π_ρ = (1−γ) ρᵀ (I − γP_π)^{-1}`.
pub fn visitation_distribution<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &Policy<T>,
    rho: &[T],
) -> Result<Vec<T>> {
    policy.check_shape(mdp)?;
    check_distribution(rho, mdp.n_states)?;
    let ns = mdp.n_states;
    let gamma = mdp.gamma;
    let (p_pi, _) = policy_kernel(mdp, policy);
    let mut a: Vec<T> = p_pi.iter().map(|&p| -gamma * p).collect();
    for i in 0..ns {
        a[i * ns + i] = a[i * ns + i] + T::one();
    }
    let lu = Lu::factor(a, ns)?;
    let x = lu.solve_transposed(rho);
    let d: Vec<T> = x
        .into_iter()
        .map(|v| ((T::one() - gamma) * v).max(T::zero()))
        .collect();
    // the solve is exact up to rounding; renormalise the last ulps away
    let z: T = d.iter().copied().sum();
    Ok(d.into_iter().map(|v| v / z).collect())
}

/// Deterministic greedy policy w.r.t. `q`, lowest index among ties within `tol`.
pub fn greedy_policy<T: Scalar>(q: &QFunction<T>, tol: T) -> Policy<T> {
    let actions: Vec<usize> = (0..q.n_states)
        .map(|s| greedy_set(q.row(s), tol)[0])
        .collect();
    Policy::deterministic(q.n_actions, &actions).expect("greedy actions are in range")
}

/// Optimal values and a deterministic optimal policy.
///
/// Value iteration runs until `‖V − TV‖_∞ ≤ tol·(1−γ)/(2γ)`; the greedy policy is
/// then polished by policy iteration with strict-improvement switching and the
/// final policy is evaluated exactly.
pub fn optimal_values<T: Scalar>(
    mdp: &TabularMdp<T>,
    tol: T,
) -> Result<(ValueFunction<T>, Policy<T>)> {
    if !(tol > T::zero()) {
        return Err(PmdError::InvalidParameter(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let gamma = mdp.gamma;
    let target = if gamma > T::zero() {
        tol * (T::one() - gamma) / (T::lit(2.0) * gamma)
    } else {
        T::infinity()
    };
    let g = gamma.as_f64();
    let cap = if g > 0.0 {
        let ratio = (target.as_f64() * (1.0 - g)).max(f64::MIN_POSITIVE);
        ((ratio.ln() / g.ln()).ceil().max(0.0) as usize).saturating_mul(2) + 16
    } else {
        1
    };
    let mut v = ValueFunction(vec![T::zero(); ns]);
    let mut converged = false;
    let mut residual = T::infinity();
    for _ in 0..=cap {
        let tv = bellman_optimality(mdp, &v);
        residual = tv.sup_dist(&v);
        v = tv;
        if residual <= target {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PmdError::IterationCap {
            what: "value iteration",
            cap,
            residual: residual.as_f64(),
        });
    }

    let switch_tol = T::tol(1e-12);
    let mut actions: Vec<usize> = {
        let q = q_from_v(mdp, &v);
        (0..ns)
            .map(|s| greedy_set(q.row(s), switch_tol)[0])
            .collect()
    };
    let pi_cap = 10 * ns * na + 100;
    for _ in 0..pi_cap {
        let policy = Policy::deterministic(na, &actions)?;
        let value = evaluate_policy(mdp, &policy)?;
        let q = q_from_v(mdp, &value);
        let mut changed = false;
        for (s, act) in actions.iter_mut().enumerate() {
            let row = q.row(s);
            let best = greedy_set(row, T::zero())[0];
            if row[best] > row[*act] + switch_tol {
                *act = best;
                changed = true;
            }
        }
        if !changed {
            return Ok((value, policy));
        }
    }
    Err(PmdError::IterationCap {
        what: "policy-iteration polish",
        cap: pi_cap,
        residual: f64::NAN,
    })
}

/// Distribution-mismatch coefficient `θ_ρ = ‖d⋆_ρ/ρ‖_∞ / (1−γ)`.
///
/// Returns `+∞` when `ρ` vanishes on a state the optimal policy visits.
pub fn mismatch_coefficient<T: Scalar>(mdp: &TabularMdp<T>, rho: &[T]) -> Result<T> {
    check_distribution(rho, mdp.n_states)?;
    let (_, pi_star) = optimal_values(mdp, T::tol(1e-12))?;
    let d = visitation_distribution(mdp, &pi_star, rho)?;
    let mut ratio = T::zero();
    for (&ds, &rs) in d.iter().zip(rho) {
        if rs > T::zero() {
            ratio = ratio.max(ds / rs);
        } else if ds > T::zero() {
            return Ok(T::infinity());
        }
    }
    Ok(ratio / (T::one() - mdp.gamma))
}

/// Gradient of `V^π(ρ)` under the direct parameterisation: `d^π_ρ(s) Q^π(s,a)/(1−γ)`.
pub fn policy_gradient<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &Policy<T>,
    rho: &[T],
) -> Result<Vec<T>> {
    let d = visitation_distribution(mdp, policy, rho)?;
    let q = q_from_v(mdp, &evaluate_policy(mdp, policy)?);
    let scale = T::one() / (T::one() - mdp.gamma);
    let mut grad = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        grad.extend(q.row(s).iter().map(|&qa| scale * d[s] * qa));
    }
    Ok(grad)
}

/// `Δ(s) = max_a Q(s,a) − max_{a ∉ greedy} Q(s,a)`, `+∞` when every action is greedy.
pub fn sub_optimality_gap<T: Scalar>(q: &QFunction<T>, s: usize, tol: T) -> T {
    let row = q.row(s);
    let greedy = greedy_set(row, tol);
    let best = max_of(row);
    let runner_up = row
        .iter()
        .enumerate()
        .filter(|(a, _)| !greedy.contains(a))
        .fold(T::neg_infinity(), |m, (_, &x)| m.max(x));
    if runner_up == T::neg_infinity() {
        T::infinity()
    } else {
        best - runner_up
    }
}
