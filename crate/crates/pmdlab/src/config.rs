//! Run configuration: one JSON document per run, and the schedule mini-language
//! shared by the config files and the command line.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use pmd_core::mdp::MdpDocument;
use pmd_core::{
    duplicate_action_mdp, lower_bound_chain, mismatch_mdp, proof_parameter_chain, simulation_chain,
    ChainSpec, CkSequence, Mdp, PolicyF64, Schedule,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Where the MDP of a run comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    /// A JSON MDP document on disk; relative paths resolve against the config file.
    File {
        path: PathBuf,
    },
    Inline {
        mdp: MdpDocument,
    },
    /// Uniformly random transitions and rewards; needs the run seed.
    Random {
        states: usize,
        actions: usize,
        gamma: f64,
    },
    Chain {
        n: usize,
        gamma: f64,
        delta: f64,
        alpha: f64,
    },
    SimulationChain {
        n: usize,
        gamma: f64,
        alpha: f64,
    },
    ProofChain {
        n: usize,
        gamma: f64,
    },
    Mismatch {
        n: usize,
        gamma: f64,
        delta: f64,
        r_max: f64,
    },
    Duplicate {
        base: Box<MdpSource>,
        delta: f64,
    },
}

/// Initial policy choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialPolicy {
    /// The generator's policy for chain sources, uniform otherwise.
    #[default]
    Default,
    Uniform,
    /// Random interior policy drawn from the run seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub horizon: usize,
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub trace: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

fn default_verify() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Label used in sweep output; defaults to the position in the sweep.
    #[serde(default)]
    pub id: Option<String>,
    pub mdp: MdpSource,
    /// `kl`, `euclid`, `pi` or `generic:<entropy|tsallis|quadratic>`.
    pub map: String,
    /// See [`parse_schedule`].
    pub schedule: String,
    #[serde(default)]
    pub per_state: bool,
    pub iterations: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_verify")]
    pub verify: bool,
    #[serde(default)]
    pub initial_policy: InitialPolicy,
    /// Present for inexact runs.
    #[serde(default)]
    pub estimator: Option<EstimatorSpec>,
    #[serde(default)]
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| anyhow!("invalid run config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.mdp
            .resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Whether the run consumes randomness and therefore needs a seed.
    pub fn is_stochastic(&self) -> bool {
        self.estimator.is_some()
            || self.initial_policy == InitialPolicy::Random
            || self.mdp.is_random()
    }

    pub fn seed_checked(&self) -> Result<Option<u64>> {
        match (self.seed, self.is_stochastic()) {
            (None, true) => bail!("field `seed` is required for stochastic runs"),
            (seed, _) => Ok(seed),
        }
    }
}

/// Parses a list of run configs from a JSON array.
pub fn load_sweep(path: &Path) -> Result<Vec<RunConfig>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut configs: Vec<RunConfig> = serde_json::from_str(&text)
        .map_err(|e| anyhow!("invalid sweep file {}: {e}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for cfg in &mut configs {
        cfg.mdp.resolve_paths(base);
    }
    Ok(configs)
}

impl MdpSource {
    fn is_random(&self) -> bool {
        match self {
            MdpSource::Random { .. } => true,
            MdpSource::Duplicate { base, .. } => base.is_random(),
            _ => false,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        match self {
            MdpSource::File { path } if path.is_relative() => *path = base.join(&*path),
            MdpSource::Duplicate { base: inner, .. } => inner.resolve_paths(base),
            _ => {}
        }
    }

    /// Builds the MDP and, for chain sources, the matching initial policy.
    pub fn build(&self, seed: Option<u64>) -> Result<(Mdp, Option<PolicyF64>)> {
        Ok(match self {
            MdpSource::File { path } => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                (
                    Mdp::from_json(&text).with_context(|| format!("in {}", path.display()))?,
                    None,
                )
            }
            MdpSource::Inline { mdp } => (Mdp::from_document(mdp)?, None),
            MdpSource::Random {
                states,
                actions,
                gamma,
            } => {
                let seed = seed.ok_or_else(|| anyhow!("random MDP needs a seed"))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (Mdp::random(*states, *actions, *gamma, &mut rng)?, None)
            }
            MdpSource::Chain {
                n,
                gamma,
                delta,
                alpha,
            } => {
                let (m, p) = lower_bound_chain(&ChainSpec::new(*n, *gamma, *delta, *alpha)?)?;
                (m, Some(p))
            }
            MdpSource::SimulationChain { n, gamma, alpha } => {
                let (m, p) = simulation_chain(*n, *gamma, *alpha)?;
                (m, Some(p))
            }
            MdpSource::ProofChain { n, gamma } => {
                let (_, m, p) = proof_parameter_chain(*n, *gamma)?;
                (m, Some(p))
            }
            MdpSource::Mismatch {
                n,
                gamma,
                delta,
                r_max,
            } => (mismatch_mdp(*n, *gamma, *delta, *r_max)?, None),
            MdpSource::Duplicate { base, delta } => {
                let (m, _) = base.build(seed)?;
                (duplicate_action_mdp(&m, *delta)?, None)
            }
        })
    }
}

/// Parses a step-size schedule.
///
/// Grammar: `adaptive[:<ck>]`, `geometric:<eta0>`, `constant:<eta0>`,
/// `combined:<eta0>[:<ck>]` and `inexact` (`c_k = γ^(2k+1)`), with
/// `<ck>` one of `geosq:<c0>` (`c_k = γ^(2(k+1)) c0`, default `geosq:1`),
/// `gamma2k` (`c_k = γ^(2k)`), `geo:<c0>` (`c_k = γ^(k+1) c0`),
/// `const:<c0>` or `custom:<c_0>,<c_1>,...`.
pub fn parse_schedule(spec: &str, gamma: f64) -> Result<Schedule> {
    let (head, rest) = match spec.split_once(':') {
        Some((h, r)) => (h, Some(r)),
        None => (spec, None),
    };
    let schedule = match (head, rest) {
        ("adaptive", None) => Schedule::adaptive(CkSequence::GeometricSquared(1.0)),
        ("adaptive", Some(ck)) => Schedule::adaptive(parse_ck(ck, gamma)?),
        ("geometric", Some(e)) => Schedule::geometric(parse_number(e, "eta0")?),
        ("constant", Some(e)) => Schedule::constant(parse_number(e, "eta0")?),
        ("combined", Some(r)) => {
            let (e, ck) = match r.split_once(':') {
                Some((e, ck)) => (e, parse_ck(ck, gamma)?),
                None => (r, CkSequence::GeometricSquared(1.0)),
            };
            Schedule::combined(ck, parse_number(e, "eta0")?)
        }
        ("inexact", None) => Schedule::inexact_default(gamma)?,
        _ => bail!("unrecognised schedule `{spec}`"),
    };
    schedule.validate()?;
    Ok(schedule)
}

fn parse_ck(spec: &str, gamma: f64) -> Result<CkSequence<f64>> {
    let (head, rest) = match spec.split_once(':') {
        Some((h, r)) => (h, Some(r)),
        None => (spec, None),
    };
    let c = match (head, rest) {
        ("geosq", Some(c0)) => CkSequence::GeometricSquared(parse_number(c0, "c0")?),
        ("gamma2k", None) => {
            if !(gamma > 0.0) {
                bail!("c_k = γ^(2k) needs γ > 0");
            }
            CkSequence::GeometricSquared(gamma.powi(-2))
        }
        ("geo", Some(c0)) => CkSequence::GeometricPlain(parse_number(c0, "c0")?),
        ("const", Some(c0)) => CkSequence::Constant(parse_number(c0, "c0")?),
        ("custom", Some(list)) => CkSequence::Custom(
            list.split(',')
                .map(|x| parse_number(x, "c_k"))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => bail!("unrecognised c_k sequence `{spec}`"),
    };
    c.validate()?;
    Ok(c)
}

fn parse_number(text: &str, what: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| anyhow!("{what}: `{text}` is not a number"))
}
