//! Adversarial MDP constructions: the lower-bound chain, an instance whose
//! distribution-mismatch coefficient grows with `|S|`, and the duplicate-action
//! family with arbitrarily small sub-optimality gaps.
//!
//! Chain indexing: `s_0` is state `0`, chain state `s_i` is state `i` and its
//! absorbing companion `s_i'` is state `n + i`, for `1 ≤ i ≤ n`. Action `0` is
//! `a_1` (move left) and action `1` is `a_2` (jump to the companion).

use crate::error::{PmdError, Result};
use crate::mdp::{evaluate_policy, optimal_values, Policy, RewardRange, TabularMdp};
use crate::scalar::Scalar;

/// Parameters of the lower-bound chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSpec<T> {
    pub n: usize,
    pub gamma: T,
    pub delta: T,
    pub alpha: T,
}

impl<T: Scalar> ChainSpec<T> {
    pub fn new(n: usize, gamma: T, delta: T, alpha: T) -> Result<Self> {
        let spec = ChainSpec {
            n,
            gamma,
            delta,
            alpha,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Upper end of the open interval allowed for `δ`: `(1 − γ)γ^n`.
    pub fn delta_limit(n: usize, gamma: T) -> T {
        (T::one() - gamma) * gamma.powi(n as i32)
    }

    /// Upper end of the closed interval allowed for `α`: `δ(1 − γ)`.
    pub fn alpha_limit(delta: T, gamma: T) -> T {
        delta * (T::one() - gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(PmdError::InvalidParameter(
                "chain length n must be positive".into(),
            ));
        }
        if !(self.gamma > T::zero() && self.gamma < T::one()) {
            return Err(PmdError::InvalidParameter(format!(
                "gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        let dmax = Self::delta_limit(self.n, self.gamma);
        if !(self.delta > T::zero() && self.delta < dmax) {
            return Err(PmdError::InvalidParameter(format!(
                "delta {} outside (0, {dmax})",
                self.delta
            )));
        }
        let amax = Self::alpha_limit(self.delta, self.gamma);
        if !(self.alpha > T::zero() && self.alpha <= amax) {
            return Err(PmdError::InvalidParameter(format!(
                "alpha {} outside (0, {amax}]",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        2 * self.n + 1
    }
}

/// Builds the chain and the initial policy with `π^0(a_1|s) = α` in every state.
pub fn lower_bound_chain<T: Scalar>(spec: &ChainSpec<T>) -> Result<(TabularMdp<T>, Policy<T>)> {
    spec.validate()?;
    let n = spec.n;
    let ns = spec.n_states();
    let na = 2;
    let mut p = vec![T::zero(); ns * na * ns];
    let mut r = vec![T::zero(); ns * na];
    let mut set = |s: usize, a: usize, to: usize, reward: T, p: &mut [T]| {
        p[(s * na + a) * ns + to] = T::one();
        r[s * na + a] = reward;
    };
    for a in 0..na {
        set(0, a, 0, T::one(), &mut p);
    }
    for i in 1..=n {
        let r_i = spec.gamma.powi(i as i32 + 1) + spec.delta;
        set(i, 0, i - 1, T::zero(), &mut p);
        set(i, 1, n + i, r_i, &mut p);
        for a in 0..na {
            set(n + i, a, n + i, r_i, &mut p);
        }
    }
    let mdp = TabularMdp::new(ns, na, p, r, spec.gamma)?;
    let row = [spec.alpha, T::one() - spec.alpha];
    let probs = (0..ns).flat_map(|_| row).collect();
    Ok((mdp, Policy::new(ns, na, probs)?))
}

/// Chain with `δ = (1 − γ)γ^n / 100`, the setting used for the NPG step-size comparison.
pub fn simulation_chain<T: Scalar>(
    n: usize,
    gamma: T,
    alpha: T,
) -> Result<(TabularMdp<T>, Policy<T>)> {
    let delta = ChainSpec::delta_limit(n, gamma) / T::lit(100.0);
    lower_bound_chain(&ChainSpec::new(n, gamma, delta, alpha)?)
}

/// Chain parameters for which `‖V⋆ − V^k‖_∞ ≥ ½γ^k‖V⋆ − V^0‖_∞` holds for every `k < n`.
///
/// `δ` must equal `(1 − γ)γ^n‖V⋆ − V^0‖_∞ / 4`, and the gap itself depends on `δ`.
/// The first pass uses the upper estimate `‖V⋆ − V^0‖_∞ ≤ γ`; the measured gap is
/// then plugged back in. A smaller `δ` only widens the gap, so the second `δ` still
/// satisfies the requirement for the MDP it builds. `α = δ(1 − γ)`.
pub fn proof_parameter_chain<T: Scalar>(
    n: usize,
    gamma: T,
) -> Result<(ChainSpec<T>, TabularMdp<T>, Policy<T>)> {
    let four = T::lit(4.0);
    let provisional = ChainSpec::delta_limit(n, gamma) * gamma / four;
    let first = ChainSpec::new(
        n,
        gamma,
        provisional,
        ChainSpec::alpha_limit(provisional, gamma),
    )?;
    let gap0 = initial_gap(&first)?;
    let delta = ChainSpec::delta_limit(n, gamma) * gap0 / four;
    let spec = ChainSpec::new(n, gamma, delta, ChainSpec::alpha_limit(delta, gamma))?;
    let (mdp, pi0) = lower_bound_chain(&spec)?;
    Ok((spec, mdp, pi0))
}

fn initial_gap<T: Scalar>(spec: &ChainSpec<T>) -> Result<T> {
    let (mdp, pi0) = lower_bound_chain(spec)?;
    let v0 = evaluate_policy(&mdp, &pi0)?;
    let (v_star, _) = optimal_values(&mdp, T::tol(1e-12))?;
    Ok(v_star.sup_dist(&v0))
}

/// `n`-state MDP whose mismatch coefficient under uniform `ρ` is at least
/// `nγ(1 − δ)/(1 − γ)`.
///
/// State `0` (`s_1`) is absorbing with reward 1. Elsewhere action `0` pays 1, reaches
/// `s_1` with probability `1 − δ` and spreads `δ` uniformly over states `1..n`.
/// Action `1` pays `r_max` and moves uniformly over states `1..n`.
pub fn mismatch_mdp<T: Scalar>(n: usize, gamma: T, delta: T, r_max: T) -> Result<TabularMdp<T>> {
    if n < 2 {
        return Err(PmdError::InvalidParameter(
            "mismatch MDP needs at least two states".into(),
        ));
    }
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(PmdError::InvalidParameter(format!(
            "gamma {gamma} outside (0, 1)"
        )));
    }
    if !(r_max >= T::zero() && r_max < T::one()) {
        return Err(PmdError::InvalidParameter(format!(
            "r_max {r_max} outside [0, 1)"
        )));
    }
    let dmax = (T::one() - gamma) * (T::one() - r_max) / gamma;
    if !(delta > T::zero() && delta <= dmax) {
        return Err(PmdError::InvalidParameter(format!(
            "delta {delta} outside (0, {dmax}]"
        )));
    }
    let na = 2;
    let mut p = vec![T::zero(); n * na * n];
    let mut r = vec![T::zero(); n * na];
    let spread = T::one() / T::lit((n - 1) as f64);
    for a in 0..na {
        p[a * n] = T::one();
        r[a] = T::one();
    }
    for s in 1..n {
        let base = s * na;
        p[base * n] = T::one() - delta;
        r[base] = T::one();
        r[base + 1] = r_max;
        for to in 1..n {
            p[base * n + to] = delta * spread;
            p[(base + 1) * n + to] = spread;
        }
    }
    TabularMdp::new(n, na, p, r, gamma)
}

/// Doubles the action space: action `a + A` copies the transitions of `a` and pays
/// `r(s, a) − δ`. Rewards may drop below zero, so the result uses
/// [`RewardRange::Finite`].
pub fn duplicate_action_mdp<T: Scalar>(base: &TabularMdp<T>, delta: T) -> Result<TabularMdp<T>> {
    if !(delta > T::zero() && delta.is_finite()) {
        return Err(PmdError::InvalidParameter(format!(
            "delta {delta} must be positive"
        )));
    }
    let (ns, na) = (base.n_states(), base.n_actions());
    let wide = 2 * na;
    let mut p = Vec::with_capacity(ns * wide * ns);
    let mut r = Vec::with_capacity(ns * wide);
    for s in 0..ns {
        for a in 0..na {
            p.extend_from_slice(base.p(s, a));
            r.push(base.r(s, a));
        }
        for a in 0..na {
            p.extend_from_slice(base.p(s, a));
            r.push(base.r(s, a) - delta);
        }
    }
    TabularMdp::with_reward_range(ns, wide, p, r, base.gamma(), RewardRange::Finite)
}
