//! Mirror maps on the action simplex and the single-state proximal update
//! `argmin_p { −η⟨q, p⟩ + D_h(p, π) }`.

use std::fmt;

use crate::error::{PmdError, Result};
use crate::scalar::{dot, max_of, Scalar};

/// Bisection budget of the generic separable solver.
pub const BISECTION_CAP: usize = 200;
/// Accepted `|Σ_a p(a) − 1|` of the generic separable solver.
pub const BISECTION_TOL: f64 = 1e-12;

/// A separable generator `h(p) = Σ_a φ(p_a)`.
///
/// `grad_inv` inverts `φ'` on its range and must return the boundary value
/// `0` for arguments below `φ'(0)` when `φ'(0)` is finite, so that the KKT
/// solution `p_a = (φ')^{-1}(φ'(π_a) + η q_a − λ)` stays on the simplex.
#[derive(Clone, Copy)]
pub struct SeparableFn<T> {
    pub name: &'static str,
    pub value: fn(T) -> T,
    pub grad: fn(T) -> T,
    pub grad_inv: fn(T) -> T,
    /// `φ'` diverges at 0, so the map is only defined on the relative interior.
    pub interior: bool,
}

impl<T> fmt::Debug for SeparableFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeparableFn")
            .field("name", &self.name)
            .field("interior", &self.interior)
            .finish()
    }
}

impl<T> PartialEq for SeparableFn<T> {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl<T: Scalar> SeparableFn<T> {
    /// `φ(x) = x log x`; reproduces the negative-entropy map.
    pub fn entropy() -> Self {
        SeparableFn {
            name: "entropy",
            value: |x| if x > T::zero() { x * x.ln() } else { T::zero() },
            grad: |x| x.ln() + T::one(),
            grad_inv: |y| (y - T::one()).exp(),
            interior: true,
        }
    }

    /// Tsallis generator with index 3/2: `φ(x) = 2x^{3/2} − 2x`.
    pub fn tsallis() -> Self {
        SeparableFn {
            name: "tsallis",
            value: |x| T::lit(2.0) * x * x.sqrt() - T::lit(2.0) * x,
            grad: |x| T::lit(3.0) * x.sqrt() - T::lit(2.0),
            grad_inv: |y| {
                let t = ((y + T::lit(2.0)) / T::lit(3.0)).max(T::zero());
                t * t
            },
            interior: false,
        }
    }

    /// `φ(x) = x²/2`; reproduces the squared-Euclidean map.
    pub fn quadratic() -> Self {
        SeparableFn {
            name: "quadratic",
            value: |x| x * x / T::lit(2.0),
            grad: |x| x,
            grad_inv: |y| y.max(T::zero()),
            interior: false,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "entropy" => Some(Self::entropy()),
            "tsallis" => Some(Self::tsallis()),
            "quadratic" => Some(Self::quadratic()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MirrorMap<T> {
    /// KL geometry; PMD becomes natural policy gradient.
    NegativeEntropy,
    SquaredEuclidean,
    /// Constant generator; PMD becomes policy iteration.
    Null,
    Separable(SeparableFn<T>),
}

impl<T: Scalar> MirrorMap<T> {
    /// Parses `"kl" | "euclid" | "pi" | "generic:<name>"`.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "kl" => Ok(MirrorMap::NegativeEntropy),
            "euclid" => Ok(MirrorMap::SquaredEuclidean),
            "pi" => Ok(MirrorMap::Null),
            other => other
                .strip_prefix("generic:")
                .and_then(SeparableFn::by_name)
                .map(MirrorMap::Separable)
                .ok_or_else(|| PmdError::UnknownMap(other.to_string())),
        }
    }

    pub fn id(&self) -> String {
        match self {
            MirrorMap::NegativeEntropy => "kl".into(),
            MirrorMap::SquaredEuclidean => "euclid".into(),
            MirrorMap::Null => "pi".into(),
            MirrorMap::Separable(f) => format!("generic:{}", f.name),
        }
    }

    /// Whether the divergence needs a strictly positive second argument.
    pub fn requires_interior(&self) -> bool {
        match self {
            MirrorMap::NegativeEntropy => true,
            MirrorMap::Separable(f) => f.interior,
            _ => false,
        }
    }
}

fn check_pair<T: Scalar>(p: &[T], q: &[T]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        return Err(PmdError::InvalidDistribution(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

fn divergence<T: Scalar>(map: &MirrorMap<T>, p: &[T], q: &[T], allow_infinite: bool) -> Result<T> {
    check_pair(p, q)?;
    let d = match map {
        MirrorMap::Null => T::zero(),
        MirrorMap::SquaredEuclidean => {
            p.iter()
                .zip(q)
                .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
                / T::lit(2.0)
        }
        MirrorMap::NegativeEntropy => {
            let mut acc = T::zero();
            for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
                if pa == T::zero() {
                    continue;
                }
                if !(qa > T::zero()) {
                    if allow_infinite {
                        return Ok(T::infinity());
                    }
                    return Err(PmdError::Domain(format!(
                        "KL undefined: q({a}) = 0 while p({a}) = {pa}"
                    )));
                }
                acc = acc + pa * (pa / qa).ln();
            }
            acc
        }
        MirrorMap::Separable(f) => {
            let mut acc = T::zero();
            for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
                if f.interior && !(qa > T::zero()) {
                    if pa == T::zero() {
                        continue;
                    }
                    if allow_infinite {
                        return Ok(T::infinity());
                    }
                    return Err(PmdError::Domain(format!(
                        "{} divergence undefined: q({a}) = 0",
                        f.name
                    )));
                }
                acc = acc + (f.value)(pa) - (f.value)(qa) - (f.grad)(qa) * (pa - qa);
            }
            acc
        }
    };
    Ok(d.max(T::zero()))
}

/// `D_h(p, q) = h(p) − h(q) − ⟨∇h(q), p − q⟩`.
///
/// Domain violations (a zero of `q` where `p` has mass, under an interior-only
/// map) are errors; see [`bregman_divergence_or_inf`] for the `+∞` convention.
pub fn bregman_divergence<T: Scalar>(map: &MirrorMap<T>, p: &[T], q: &[T]) -> Result<T> {
    divergence(map, p, q, false)
}

pub fn bregman_divergence_or_inf<T: Scalar>(map: &MirrorMap<T>, p: &[T], q: &[T]) -> Result<T> {
    divergence(map, p, q, true)
}

/// `{a : q(a) ≥ max q − tol}`, ascending.
pub fn greedy_set<T: Scalar>(q_s: &[T], tol: T) -> Vec<usize> {
    let best = max_of(q_s);
    q_s.iter()
        .enumerate()
        .filter(|(_, &v)| v >= best - tol)
        .map(|(a, _)| a)
        .collect()
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_simplex<T: Scalar>(y: &[T]) -> Vec<T> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        cumsum = cumsum + uj;
        let t = (cumsum - T::one()) / T::lit((j + 1) as f64);
        if uj - t > T::zero() {
            theta = t;
        }
    }
    let mut p: Vec<T> = y.iter().map(|&v| (v - theta).max(T::zero())).collect();
    let z: T = p.iter().copied().sum();
    for v in &mut p {
        *v = *v / z;
    }
    p
}

fn check_update_inputs<T: Scalar>(map: &MirrorMap<T>, pi_s: &[T], q_s: &[T], eta: T) -> Result<()> {
    check_pair(pi_s, q_s)?;
    if !(eta > T::zero() && eta.is_finite()) {
        return Err(PmdError::InvalidParameter(format!(
            "step size {eta} must be positive and finite"
        )));
    }
    if let Some(v) = q_s.iter().find(|v| !v.is_finite()) {
        return Err(PmdError::InvalidParameter(format!(
            "non-finite action value {v}"
        )));
    }
    if map.requires_interior() {
        if let Some(a) = pi_s.iter().position(|&p| !(p > T::zero())) {
            return Err(PmdError::Domain(format!(
                "{} update needs an interior policy; π({a}) = {}",
                map.id(),
                pi_s[a]
            )));
        }
    } else if pi_s.iter().any(|&p| !(p >= T::zero())) {
        return Err(PmdError::InvalidDistribution(
            "negative policy entry".into(),
        ));
    }
    Ok(())
}

/// One PMD step in a single state: `argmin_{p ∈ Δ(A)} { −η⟨q_s, p⟩ + D_h(p, π_s) }`.
pub fn pmd_update_state<T: Scalar>(
    map: &MirrorMap<T>,
    pi_s: &[T],
    q_s: &[T],
    eta: T,
) -> Result<Vec<T>> {
    check_update_inputs(map, pi_s, q_s, eta)?;
    // the minimiser is invariant to shifting q by a constant; anchoring the
    // maximum at zero keeps η·q well conditioned when η is huge
    let top = max_of(q_s);
    let q_shift: Vec<T> = q_s.iter().map(|&q| q - top).collect();
    match map {
        MirrorMap::NegativeEntropy => Ok(kl_update(pi_s, &q_shift, eta)),
        MirrorMap::SquaredEuclidean => {
            let y: Vec<T> = pi_s
                .iter()
                .zip(&q_shift)
                .map(|(&p, &q)| p + eta * q)
                .collect();
            Ok(project_simplex(&y))
        }
        MirrorMap::Null => {
            let a = greedy_set(q_s, T::zero())[0];
            Ok(one_hot(q_s.len(), a))
        }
        MirrorMap::Separable(f) => separable_update(f, pi_s, &q_shift, eta),
    }
}

/// Multiplicative-weights closed form, evaluated with log-sum-exp.
fn kl_update<T: Scalar>(pi_s: &[T], q_s: &[T], eta: T) -> Vec<T> {
    let logits: Vec<T> = pi_s
        .iter()
        .zip(q_s)
        .map(|(&p, &q)| p.ln() + eta * q)
        .collect();
    let m = max_of(&logits);
    let mut out: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: T = out.iter().copied().sum();
    for v in &mut out {
        *v = *v / z;
    }
    out
}

/// Bisection on the simplex multiplier `λ` in `φ'(p_a) = φ'(π_a) + ηq_a − λ`.
fn separable_update<T: Scalar>(
    f: &SeparableFn<T>,
    pi_s: &[T],
    q_s: &[T],
    eta: T,
) -> Result<Vec<T>> {
    let n = pi_s.len();
    let shifted: Vec<T> = pi_s
        .iter()
        .zip(q_s)
        .map(|(&p, &q)| (f.grad)(p) + eta * q)
        .collect();
    let mass = |lambda: T| -> T { shifted.iter().map(|&g| (f.grad_inv)(g - lambda)).sum() };
    let top = max_of(&shifted);
    let one = T::one();
    let mut lo = top - (f.grad)(one);
    let mut hi = top - (f.grad)(one / T::lit(n as f64));
    // in exact arithmetic mass(lo) ≥ 1 ≥ mass(hi); widen if rounding disagrees
    let mut width = (hi - lo).abs().max(one);
    while mass(lo) < one {
        lo = lo - width;
        width = width + width;
    }
    let mut width = (hi - lo).abs().max(one);
    while mass(hi) > one {
        hi = hi + width;
        width = width + width;
    }
    let tol = T::tol(BISECTION_TOL);
    let mut residual = T::infinity();
    let mut lambda = lo;
    for _ in 0..BISECTION_CAP {
        lambda = (lo + hi) / T::lit(2.0);
        let m = mass(lambda);
        residual = (m - one).abs();
        if residual <= tol {
            break;
        }
        if lambda <= lo || lambda >= hi {
            break;
        }
        if m > one {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    if residual > tol {
        return Err(PmdError::NonConvergence {
            residual: residual.as_f64(),
            iterations: BISECTION_CAP,
        });
    }
    let mut p: Vec<T> = shifted.iter().map(|&g| (f.grad_inv)(g - lambda)).collect();
    let z: T = p.iter().copied().sum();
    for v in &mut p {
        *v = *v / z;
    }
    Ok(p)
}

/// `min_{p : supp p ⊆ greedy} D_h(p, π_s)`.
///
/// Exact for the negative entropy (`−log π_s(greedy)`); for the other maps the
/// minimum over greedy one-hot vectors, an upper bound on the true minimum.
pub fn min_greedy_divergence<T: Scalar>(
    map: &MirrorMap<T>,
    pi_s: &[T],
    greedy: &[usize],
) -> Result<T> {
    if greedy.is_empty() {
        return Err(PmdError::InvalidParameter("empty greedy set".into()));
    }
    match map {
        MirrorMap::Null => Ok(T::zero()),
        MirrorMap::NegativeEntropy => {
            let inside: T = greedy.iter().map(|&a| pi_s[a]).sum();
            if !(inside > T::zero()) {
                return Err(PmdError::Domain(
                    "policy puts no mass on the greedy set".into(),
                ));
            }
            if inside > T::lit(0.5) {
                let outside: T = (0..pi_s.len())
                    .filter(|a| !greedy.contains(a))
                    .map(|a| pi_s[a])
                    .sum();
                Ok((-(-outside).ln_1p()).max(T::zero()))
            } else {
                Ok(-inside.ln())
            }
        }
        _ => {
            let mut best = T::infinity();
            for &a in greedy {
                let d = bregman_divergence(map, &one_hot(pi_s.len(), a), pi_s)?;
                if d < best {
                    best = d;
                }
            }
            Ok(best)
        }
    }
}

/// The greedy policy attaining [`min_greedy_divergence`]: `π_s` restricted to the
/// greedy set for the negative entropy, otherwise the lowest-index minimising one-hot.
pub fn greedy_minimiser<T: Scalar>(
    map: &MirrorMap<T>,
    pi_s: &[T],
    greedy: &[usize],
) -> Result<Vec<T>> {
    if greedy.is_empty() {
        return Err(PmdError::InvalidParameter("empty greedy set".into()));
    }
    match map {
        MirrorMap::NegativeEntropy => {
            let inside: T = greedy.iter().map(|&a| pi_s[a]).sum();
            if !(inside > T::zero()) {
                return Err(PmdError::Domain(
                    "policy puts no mass on the greedy set".into(),
                ));
            }
            let mut p = vec![T::zero(); pi_s.len()];
            for &a in greedy {
                p[a] = pi_s[a] / inside;
            }
            Ok(p)
        }
        MirrorMap::Null => Ok(one_hot(pi_s.len(), greedy[0])),
        _ => {
            let mut best = (T::infinity(), greedy[0]);
            for &a in greedy {
                let d = bregman_divergence(map, &one_hot(pi_s.len(), a), pi_s)?;
                if d < best.0 {
                    best = (d, a);
                }
            }
            Ok(one_hot(pi_s.len(), best.1))
        }
    }
}

pub fn one_hot<T: Scalar>(n: usize, a: usize) -> Vec<T> {
    let mut v = vec![T::zero(); n];
    v[a] = T::one();
    v
}

/// Slack of the three-point descent inequality at comparison point `p`:
/// `[−η⟨q,p⟩ + D(p,π) − D(p,π⁺)] − [−η⟨q,π⁺⟩ + D(π⁺,π)]`, nonnegative at an exact minimiser.
pub fn three_point_margin<T: Scalar>(
    map: &MirrorMap<T>,
    pi_s: &[T],
    q_s: &[T],
    eta: T,
    next: &[T],
    p: &[T],
) -> Result<T> {
    let (margin, _) = three_point_terms(map, pi_s, q_s, eta, next, p)?;
    Ok(margin)
}

/// Margin of [`three_point_margin`] together with the magnitude of its left side,
/// evaluated with `q` shifted so that its maximum is zero.
pub(crate) fn three_point_terms<T: Scalar>(
    map: &MirrorMap<T>,
    pi_s: &[T],
    q_s: &[T],
    eta: T,
    next: &[T],
    p: &[T],
) -> Result<(T, T)> {
    let top = max_of(q_s);
    let q_shift: Vec<T> = q_s.iter().map(|&q| q - top).collect();
    let lhs = -eta * dot(&q_shift, next) + bregman_divergence(map, next, pi_s)?;
    let rhs = -eta * dot(&q_shift, p) + bregman_divergence(map, p, pi_s)?
        - bregman_divergence_or_inf(map, p, next)?;
    Ok((rhs - lhs, lhs.abs()))
}

/// Floors entries below the interior threshold and renormalises.
/// Returns whether anything was floored.
pub fn apply_domain_guard<T: Scalar>(row: &mut [T]) -> bool {
    let floor = T::interior_floor();
    let mut hit = false;
    for v in row.iter_mut() {
        if *v < floor {
            *v = floor;
            hit = true;
        }
    }
    if hit {
        let z: T = row.iter().copied().sum();
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    hit
}
