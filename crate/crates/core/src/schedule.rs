//! Step-size rules for PMD and the convergence bound they certify.

use crate::error::{PmdError, Result};
use crate::mdp::{Policy, QFunction};
use crate::mirror::{greedy_set, min_greedy_divergence, MirrorMap};
use crate::scalar::{max_of, Scalar};

/// The sequence `{c_k}` trading step-size growth against the additive term of the bound.
#[derive(Debug, Clone, PartialEq)]
pub enum CkSequence<T> {
    /// `c_k = γ^{2(k+1)} c0`
    GeometricSquared(T),
    /// `c_k = c0`
    Constant(T),
    /// `c_k = γ^{k+1} c0`
    GeometricPlain(T),
    /// Explicit values; indices past the end repeat the last entry.
    Custom(Vec<T>),
}

impl<T: Scalar> CkSequence<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            CkSequence::GeometricSquared(c0)
            | CkSequence::Constant(c0)
            | CkSequence::GeometricPlain(c0) => *c0 > T::zero() && c0.is_finite(),
            CkSequence::Custom(v) => {
                !v.is_empty() && v.iter().all(|&c| c > T::zero() && c.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(PmdError::InvalidParameter(format!(
                "c_k must be positive: {self:?}"
            )))
        }
    }

    pub fn value(&self, k: usize, gamma: T) -> T {
        match self {
            CkSequence::GeometricSquared(c0) => gamma.powi(2 * (k as i32 + 1)) * *c0,
            CkSequence::Constant(c0) => *c0,
            CkSequence::GeometricPlain(c0) => gamma.powi(k as i32 + 1) * *c0,
            CkSequence::Custom(v) => v[k.min(v.len() - 1)],
        }
    }
}

/// Closed-form bound `‖V⋆ − V^k‖_∞ ≤ γ^k(gap0 + Σ_{i=1..k} γ^{-i} c_{i-1})`.
///
/// `GeometricSquared` uses the simplified `γ^k(gap0 + c0/(1−γ))`, which dominates
/// the sum; `GeometricPlain` is exactly `γ^k(gap0 + k c0)`; the remaining
/// sequences evaluate the sum.
pub fn theorem1_bound<T: Scalar>(gap0: T, gamma: T, c_seq: &CkSequence<T>, k: usize) -> T {
    let gk = gamma.powi(k as i32);
    match c_seq {
        CkSequence::GeometricSquared(c0) => gk * (gap0 + *c0 / (T::one() - gamma)),
        CkSequence::GeometricPlain(c0) => gk * (gap0 + T::lit(k as f64) * *c0),
        _ => theorem1_bound_sum(gap0, gamma, c_seq, k),
    }
}

/// The bound's sum form, via the recursion `B_k = γ B_{k−1} + c_{k−1}`, `B_0 = gap0`.
pub fn theorem1_bound_sum<T: Scalar>(gap0: T, gamma: T, c_seq: &CkSequence<T>, k: usize) -> T {
    (0..k).fold(gap0, |b, i| gamma * b + c_seq.value(i, gamma))
}

/// `η_k` for a single state or for all of them.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSize<T> {
    Global(T),
    PerState(Vec<T>),
}

impl<T: Scalar> StepSize<T> {
    pub fn at(&self, s: usize) -> T {
        match self {
            StepSize::Global(e) => *e,
            StepSize::PerState(v) => v[s],
        }
    }

    pub fn max(&self) -> T {
        match self {
            StepSize::Global(e) => *e,
            StepSize::PerState(v) => max_of(v),
        }
    }

    fn map(self, f: impl Fn(T) -> T) -> Self {
        match self {
            StepSize::Global(e) => StepSize::Global(f(e)),
            StepSize::PerState(v) => StepSize::PerState(v.into_iter().map(f).collect()),
        }
    }

    fn zip_max(self, other: T) -> Self {
        self.map(|e| e.max(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind<T> {
    /// `η_k = max_s min_greedy D_h / c_k`
    Adaptive(CkSequence<T>),
    /// `η_k = η0 / γ^k`
    Geometric(T),
    Constant(T),
    /// Pointwise maximum of `Adaptive(c)` and `Geometric(eta0)`.
    MaxCombined {
        c: CkSequence<T>,
        eta0: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeSchedule<T> {
    pub kind: ScheduleKind<T>,
    pub per_state: bool,
}

impl<T: Scalar> StepSizeSchedule<T> {
    pub fn adaptive(c: CkSequence<T>) -> Self {
        StepSizeSchedule {
            kind: ScheduleKind::Adaptive(c),
            per_state: false,
        }
    }

    pub fn geometric(eta0: T) -> Self {
        StepSizeSchedule {
            kind: ScheduleKind::Geometric(eta0),
            per_state: false,
        }
    }

    pub fn constant(eta0: T) -> Self {
        StepSizeSchedule {
            kind: ScheduleKind::Constant(eta0),
            per_state: false,
        }
    }

    pub fn combined(c: CkSequence<T>, eta0: T) -> Self {
        StepSizeSchedule {
            kind: ScheduleKind::MaxCombined { c, eta0 },
            per_state: false,
        }
    }

    /// The schedule of the sample-complexity result: `c_k = γ^{2k+1}`.
    pub fn inexact_default(gamma: T) -> Result<Self> {
        if !(gamma > T::zero()) {
            return Err(PmdError::InvalidParameter(
                "c_k = γ^(2k+1) needs γ > 0".into(),
            ));
        }
        Ok(Self::adaptive(CkSequence::GeometricSquared(
            T::one() / gamma,
        )))
    }

    pub fn with_per_state(mut self, per_state: bool) -> Self {
        self.per_state = per_state;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |e: T| {
            if e > T::zero() && e.is_finite() {
                Ok(())
            } else {
                Err(PmdError::InvalidParameter(format!(
                    "η0 = {e} must be positive"
                )))
            }
        };
        match &self.kind {
            ScheduleKind::Adaptive(c) => c.validate(),
            ScheduleKind::Geometric(e) | ScheduleKind::Constant(e) => positive(*e),
            ScheduleKind::MaxCombined { c, eta0 } => {
                c.validate()?;
                positive(*eta0)
            }
        }
    }

    /// The `{c_k}` whose bound this schedule certifies, if any.
    pub fn c_sequence(&self) -> Option<&CkSequence<T>> {
        match &self.kind {
            ScheduleKind::Adaptive(c) | ScheduleKind::MaxCombined { c, .. } => Some(c),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        let c_label = |c: &CkSequence<T>| match c {
            CkSequence::GeometricSquared(c0) => format!("geosq({c0})"),
            CkSequence::Constant(c0) => format!("const({c0})"),
            CkSequence::GeometricPlain(c0) => format!("geo({c0})"),
            CkSequence::Custom(v) => format!("custom[{}]", v.len()),
        };
        let base = match &self.kind {
            ScheduleKind::Adaptive(c) => format!("adaptive:{}", c_label(c)),
            ScheduleKind::Geometric(e) => format!("geometric:{e}"),
            ScheduleKind::Constant(e) => format!("constant:{e}"),
            ScheduleKind::MaxCombined { c, eta0 } => format!("combined:{}:{eta0}", c_label(c)),
        };
        if self.per_state {
            format!("{base}:per-state")
        } else {
            base
        }
    }

    /// `η_k` given the per-state greedy divergences of the current iterate.
    ///
    /// A zero step (policy already supported on its greedy set) is replaced by
    /// 1, and values that overflow are saturated at `sqrt(T::MAX)`. The second
    /// return value reports saturation.
    pub fn step_size(&self, k: usize, gamma: T, divergences: &[T]) -> (StepSize<T>, bool) {
        let cap = T::max_value().sqrt();
        let geometric = |eta0: T| eta0 / gamma.powi(k as i32);
        let raw = match &self.kind {
            ScheduleKind::Adaptive(c) => {
                adaptive_from_divergences(divergences, c.value(k, gamma), self.per_state)
            }
            ScheduleKind::Geometric(e) => self.broadcast(geometric(*e), divergences.len()),
            ScheduleKind::Constant(e) => self.broadcast(*e, divergences.len()),
            ScheduleKind::MaxCombined { c, eta0 } => {
                adaptive_from_divergences(divergences, c.value(k, gamma), self.per_state)
                    .zip_max(geometric(*eta0))
            }
        };
        let saturated = match &raw {
            StepSize::Global(e) => !(*e <= cap),
            StepSize::PerState(v) => v.iter().any(|e| !(*e <= cap)),
        };
        let eta = raw.map(|e| {
            if e == T::zero() {
                T::one()
            } else if e <= cap {
                e
            } else {
                cap
            }
        });
        (eta, saturated)
    }

    fn broadcast(&self, e: T, n: usize) -> StepSize<T> {
        if self.per_state {
            StepSize::PerState(vec![e; n])
        } else {
            StepSize::Global(e)
        }
    }
}

fn adaptive_from_divergences<T: Scalar>(divergences: &[T], c_k: T, per_state: bool) -> StepSize<T> {
    if per_state {
        StepSize::PerState(divergences.iter().map(|&d| d / c_k).collect())
    } else {
        StepSize::Global(divergences.iter().fold(T::zero(), |m, &d| m.max(d)) / c_k)
    }
}

/// Greedy sets of `q` (tolerance `tol`) and the minimal Bregman divergence from
/// each `π_s` to its greedy face.
pub fn greedy_divergences<T: Scalar>(
    map: &MirrorMap<T>,
    policy: &Policy<T>,
    q: &QFunction<T>,
    tol: T,
) -> Result<(Vec<Vec<usize>>, Vec<T>)> {
    let mut sets = Vec::with_capacity(policy.n_states());
    let mut divs = Vec::with_capacity(policy.n_states());
    for s in 0..policy.n_states() {
        let g = greedy_set(q.row(s), tol);
        divs.push(min_greedy_divergence(map, policy.row(s), &g)?);
        sets.push(g);
    }
    Ok((sets, divs))
}

/// Smallest step size satisfying the adaptive condition with parameter `c_k`:
/// `(1/c_k) max_s min_{π̃ ∈ greedy face} D_h(π̃, π_s)`, or the per-state vector.
///
/// The raw value is returned; it is zero when the policy is already greedy.
pub fn adaptive_step_size<T: Scalar>(
    policy: &Policy<T>,
    q: &QFunction<T>,
    map: &MirrorMap<T>,
    c_k: T,
    per_state: bool,
    tol: T,
) -> Result<StepSize<T>> {
    if !(c_k > T::zero()) {
        return Err(PmdError::InvalidParameter(format!(
            "c_k = {c_k} must be positive"
        )));
    }
    let (_, divs) = greedy_divergences(map, policy, q, tol)?;
    Ok(adaptive_from_divergences(&divs, c_k, per_state))
}
