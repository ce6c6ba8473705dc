//! Experiment drivers: the NPG step-size comparison on the simulation chain, the
//! lower-bound check on the proof-parameter chain, and config sweeps.

use std::fmt;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use pmd_core::{
    proof_parameter_chain, run_exact_pmd, run_inexact_pmd, simulation_chain, CkSequence,
    EstimatorConfig, ExactRunConfig, GenerativeModel, InexactRunConfig, Map, PolicyF64, Schedule,
    Trace,
};

use crate::config::{parse_schedule, InitialPolicy, RunConfig};
use crate::output::write_atomic;
use crate::svg::{emit_svg, Reference};

/// Chain length and discount of the step-size comparison.
pub const APPENDIX_E_N: usize = 25;
pub const APPENDIX_E_GAMMA: f64 = 0.99;
/// Iteration budget; the gap is far below plotting resolution well before it.
pub const APPENDIX_E_ITERATIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `η_k` from the adaptive rule with `c_k = γ^{2k}`.
    Adaptive,
    /// `η_k = η_0 / γ^k` with `η_0 = 1`.
    Increasing,
    /// Pointwise maximum of the two.
    Combined,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Adaptive, Variant::Increasing, Variant::Combined];

    pub fn schedule(self, gamma: f64) -> Schedule {
        let c = CkSequence::GeometricSquared(gamma.powi(-2));
        match self {
            Variant::Adaptive => Schedule::adaptive(c),
            Variant::Increasing => Schedule::geometric(1.0),
            Variant::Combined => Schedule::combined(c, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Adaptive => "adaptive",
            Variant::Increasing => "increasing",
            Variant::Combined => "combined",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| anyhow!("unknown variant `{s}` (adaptive, increasing, combined)"))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of one NPG run on the simulation chain.
#[derive(Debug, Clone)]
pub struct AppendixERun {
    pub variant: Variant,
    pub alpha: f64,
    pub trace: Trace,
    /// `max_k sup_gap(k) / (γ^k (gap0 + 1/(1 − γ)))`; at most 1 when the gap stays
    /// under the reference curve.
    pub reference_ratio: f64,
    /// First `k < n` with `sup_gap(k) > γ^k (gap0 + (1 − γ)/8)`, if any.
    pub slow_iteration: Option<usize>,
}

/// Runs NPG on `simulation_chain(25, 0.99, α)` with the chosen step sizes, and
/// writes `<variant>.csv` and `<variant>.svg` to `out_dir` when given.
pub fn reproduce_appendix_e(
    alpha: f64,
    variant: Variant,
    iterations: usize,
    out_dir: Option<&Path>,
) -> Result<AppendixERun> {
    let gamma = APPENDIX_E_GAMMA;
    let (mdp, pi0) = simulation_chain(APPENDIX_E_N, gamma, alpha)?;
    let trace = run_exact_pmd(
        &mdp,
        &Map::NegativeEntropy,
        &variant.schedule(gamma),
        &pi0,
        &ExactRunConfig::new(iterations),
    )?;
    let gap0 = trace.gap0();
    let reference_ratio = trace
        .records
        .iter()
        .map(|r| r.sup_gap / (gamma.powi(r.iter as i32) * (gap0 + 1.0 / (1.0 - gamma))))
        .fold(0.0, f64::max);
    let slow_iteration = trace
        .records
        .iter()
        .take(APPENDIX_E_N)
        .find(|r| r.sup_gap > gamma.powi(r.iter as i32) * (gap0 + (1.0 - gamma) / 8.0))
        .map(|r| r.iter);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let csv = trace.to_csv_string();
        let svg = emit_svg(
            &csv,
            &Reference {
                gamma,
                bound_scale: Some(gap0 + 1.0 / (1.0 - gamma)),
                title: format!("NPG, {variant} step size, alpha = {alpha:e}"),
            },
        )?;
        write_atomic(&dir.join(format!("{variant}.csv")), csv.as_bytes())?;
        write_atomic(&dir.join(format!("{variant}.svg")), svg.as_bytes())?;
    }
    Ok(AppendixERun {
        variant,
        alpha,
        trace,
        reference_ratio,
        slow_iteration,
    })
}

/// Per-schedule result of the lower-bound check.
#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundEntry {
    pub schedule: String,
    /// `min_{k<n} sup_gap(k) / (γ^k gap0)`
    pub margin: f64,
    /// Iteration attaining the margin.
    pub worst_k: usize,
    /// `π^k(a_1|s_i) ≤ α` for every `k < n` and `i > k`.
    pub claim_holds: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundReport {
    pub n: usize,
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    pub gap0: f64,
    pub entries: Vec<LowerBoundEntry>,
}

impl LowerBoundReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

/// Runs NPG with every schedule on the proof-parameter chain and checks
/// `‖V⋆ − V^k‖_∞ ≥ ½ γ^k ‖V⋆ − V^0‖_∞` for `k = 0..n−1`.
pub fn check_lower_bound(n: usize, gamma: f64, schedules: &[Schedule]) -> Result<LowerBoundReport> {
    if n == 0 {
        bail!("n must be at least 1");
    }
    let (spec, mdp, pi0) = proof_parameter_chain(n, gamma)?;
    let mut entries = Vec::with_capacity(schedules.len());
    let mut gap0 = f64::NAN;
    for schedule in schedules {
        let cfg = ExactRunConfig::new(n - 1).keep_policies(true);
        let trace = run_exact_pmd(&mdp, &Map::NegativeEntropy, schedule, &pi0, &cfg)
            .with_context(|| format!("schedule {}", schedule.label()))?;
        gap0 = trace.gap0();
        let (margin, worst_k) = trace
            .records
            .iter()
            .map(|r| (r.sup_gap / (gamma.powi(r.iter as i32) * gap0), r.iter))
            .fold(
                (f64::INFINITY, 0),
                |best, x| if x.0 < best.0 { x } else { best },
            );
        let claim_holds =
            chain_claim_holds(trace.policies.as_deref().unwrap_or(&[]), n, spec.alpha);
        entries.push(LowerBoundEntry {
            schedule: schedule.label(),
            margin,
            worst_k,
            claim_holds,
            passed: margin >= 0.5,
        });
    }
    Ok(LowerBoundReport {
        n,
        gamma,
        delta: spec.delta,
        alpha: spec.alpha,
        gap0,
        entries,
    })
}

/// `π^k(a_1|s_i) ≤ α` for each recorded `k < n` and every chain state `i > k`.
pub fn chain_claim_holds(policies: &[PolicyF64], n: usize, alpha: f64) -> bool {
    policies
        .iter()
        .enumerate()
        .take(n)
        .all(|(k, pi)| ((k + 1)..=n).all(|i| pi.prob(i, 0) <= alpha))
}

/// Result of one config: its trace, or the error that stopped it.
#[derive(Debug)]
pub struct RunOutcome {
    pub id: String,
    pub verify: bool,
    pub result: Result<Trace>,
}

/// Builds and runs a single config.
pub fn run_config(cfg: &RunConfig) -> Result<Trace> {
    let seed = cfg.seed_checked()?;
    let (mdp, generated) = cfg.mdp.build(seed)?;
    let map = Map::from_id(&cfg.map)?;
    let schedule = parse_schedule(&cfg.schedule, mdp.gamma())?.with_per_state(cfg.per_state);
    let pi0 = match cfg.initial_policy {
        InitialPolicy::Default => {
            generated.unwrap_or_else(|| PolicyF64::uniform(mdp.n_states(), mdp.n_actions()))
        }
        InitialPolicy::Uniform => PolicyF64::uniform(mdp.n_states(), mdp.n_actions()),
        InitialPolicy::Random => {
            let seed = seed.ok_or_else(|| anyhow!("random initial policy needs a seed"))?;
            // offset keeps the policy stream apart from the MDP generator's stream
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            PolicyF64::random(mdp.n_states(), mdp.n_actions(), &mut rng)
        }
    };
    match cfg.estimator {
        None => Ok(run_exact_pmd(
            &mdp,
            &map,
            &schedule,
            &pi0,
            &ExactRunConfig::new(cfg.iterations).verify(cfg.verify),
        )?),
        Some(est) => {
            let seed = seed.ok_or_else(|| anyhow!("inexact runs need a seed"))?;
            let estimator = EstimatorConfig::new(est.horizon, est.trajectories)?;
            let model = GenerativeModel::new(mdp, seed);
            let run_cfg = InexactRunConfig::new(cfg.iterations, estimator).verify(cfg.verify);
            Ok(run_inexact_pmd(&model, &map, &schedule, &pi0, &run_cfg)?)
        }
    }
}

/// Aggregated sweep output.
#[derive(Debug)]
pub struct SweepOutcome {
    pub csv: String,
    pub outcomes: Vec<RunOutcome>,
}

impl SweepOutcome {
    /// Failures of runs that had verification enabled.
    pub fn verify_failures(&self) -> impl Iterator<Item = (&str, &anyhow::Error)> {
        self.outcomes
            .iter()
            .filter(|o| o.verify)
            .filter_map(|o| match &o.result {
                Err(e) => Some((o.id.as_str(), e)),
                Ok(_) => None,
            })
    }
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "config_id",
    "iter",
    "sup_gap",
    "eta",
    "bound_theorem1",
    "min_q_increase",
    "elapsed_ns",
    "tau_realized",
    "samples_cumulative",
];

/// Runs every config (in parallel across configs, `parallelism` threads; 0 means
/// the rayon default) and aggregates one CSV row per (config, iteration), sorted
/// by `(config_id, iter)`.
pub fn sweep(configs: &[RunConfig], parallelism: usize) -> Result<SweepOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| RunOutcome {
                id: cfg.id.clone().unwrap_or_else(|| format!("cfg{i:04}")),
                verify: cfg.verify,
                result: run_config(cfg),
            })
            .collect()
    });
    let mut rows: Vec<(String, usize, Vec<String>)> = Vec::new();
    for outcome in &outcomes {
        if let Ok(trace) = &outcome.result {
            for (k, mut row) in trace.csv_rows().into_iter().enumerate() {
                row.resize(SWEEP_COLUMNS.len() - 1, String::new());
                row.insert(0, outcome.id.clone());
                rows.push((outcome.id.clone(), k, row));
            }
        }
    }
    rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS)?;
    for (_, _, row) in &rows {
        w.write_record(row)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?;
    Ok(SweepOutcome { csv, outcomes })
}
