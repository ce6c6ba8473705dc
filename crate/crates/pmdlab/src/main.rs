use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pmd_core::{
    duplicate_action_mdp, lower_bound_chain, mismatch_mdp, proof_parameter_chain, run_exact_pmd,
    run_inexact_pmd, simulation_chain, theorem4_parameters, ChainSpec, EstimatorConfig,
    ExactRunConfig, GenerativeModel, InexactRunConfig, Map, Mdp, PmdError, PolicyF64,
};
use pmdlab::config::{load_sweep, parse_schedule, RunConfig};
use pmdlab::experiments::{
    check_lower_bound, reproduce_appendix_e, run_config, sweep, Variant, APPENDIX_E_ITERATIONS,
};
use pmdlab::{emit_svg, write_atomic, Reference};

/// Policy mirror descent experiments on tabular MDPs.
#[derive(Debug, Parser)]
#[command(name = "pmdlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an MDP as JSON.
    #[command(subcommand)]
    Gen(Generator),
    /// Run exact PMD and write the per-iteration trace.
    Solve(SolveArgs),
    /// Check the lower bound on the proof-parameter chain for several schedules.
    Lowerbound(LowerBoundArgs),
    /// NPG on the simulation chain with the adaptive, increasing or combined step size.
    Necessity(NecessityArgs),
    /// Run inexact PMD with the Monte-Carlo estimator.
    Inexact(InexactArgs),
    /// Run a JSON array of run configs and aggregate their traces.
    Sweep(SweepArgs),
    /// Render a trace CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Subcommand)]
enum Generator {
    /// Uniformly random transitions and rewards.
    Random {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        out: GenOut,
    },
    /// Lower-bound chain with explicit parameters.
    Chain {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: f64,
        /// Defaults to (1 − γ)γ^n / 100.
        #[arg(long)]
        delta: Option<f64>,
        /// Defaults to δ(1 − γ).
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        out: GenOut,
    },
    /// Chain with the parameters of the lower-bound proof.
    ProofChain {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: f64,
        #[command(flatten)]
        out: GenOut,
    },
    /// MDP whose distribution-mismatch coefficient grows with the state count.
    Mismatch {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        r_max: f64,
        #[command(flatten)]
        out: GenOut,
    },
    /// Duplicate every action of an MDP with its reward lowered by δ.
    Duplicate {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        delta: f64,
        #[command(flatten)]
        out: GenOut,
    },
}

#[derive(Debug, Args)]
struct GenOut {
    /// MDP JSON output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the generator's initial policy (chains only).
    #[arg(long)]
    policy_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunFlags {
    /// Skip the inequality checks.
    #[arg(long)]
    no_verify: bool,
    /// Record wall-clock time per iteration (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Run config JSON; replaces the other input flags.
    #[arg(long, conflicts_with_all = ["mdp", "map", "schedule", "iterations", "policy"])]
    config: Option<PathBuf>,
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, default_value = "kl")]
    map: String,
    #[arg(long, default_value = "adaptive")]
    schedule: String,
    #[arg(long)]
    per_state: bool,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    /// Initial policy JSON (rows of action probabilities); uniform when absent.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[command(flatten)]
    flags: RunFlags,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LowerBoundArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Repeatable; defaults to adaptive, geometric:1 and geometric:100.
    #[arg(long = "schedule")]
    schedules: Vec<String>,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NecessityArgs {
    #[arg(long, default_value_t = 1e-10)]
    alpha: f64,
    /// adaptive, increasing or combined; all three when absent.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, default_value_t = APPENDIX_E_ITERATIONS)]
    iterations: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct InexactArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long, default_value = "kl")]
    map: String,
    #[arg(long, default_value = "inexact")]
    schedule: String,
    #[arg(long = "H")]
    horizon: usize,
    #[arg(long = "M")]
    trajectories: usize,
    #[arg(long = "K")]
    iterations: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Target accuracy for reporting the theoretical (K, H, M).
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Failure probability for reporting the theoretical (K, H, M).
    #[arg(long, default_value_t = 0.05)]
    confidence: f64,
    #[command(flatten)]
    flags: RunFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON array of run configs.
    #[arg(long)]
    configs: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    gamma: f64,
    /// Also draw `scale · γ^x`.
    #[arg(long)]
    bound_scale: Option<f64>,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long)]
    out: PathBuf,
}

/// A checked inequality failed; maps to exit code 2.
#[derive(Debug)]
struct VerificationFailed(String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let verification = err.chain().any(|e| {
                e.downcast_ref::<VerificationFailed>().is_some()
                    || e.downcast_ref::<PmdError>()
                        .is_some_and(PmdError::is_verification)
            });
            ExitCode::from(if verification { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(g) => generate(g),
        Command::Solve(a) => solve(a),
        Command::Lowerbound(a) => lowerbound(a),
        Command::Necessity(a) => necessity(a),
        Command::Inexact(a) => inexact(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Plot(a) => plot(a),
    }
}

fn generate(g: Generator) -> Result<()> {
    let (mdp, policy, out) = match g {
        Generator::Random {
            states,
            actions,
            gamma,
            seed,
            out,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (Mdp::random(states, actions, gamma, &mut rng)?, None, out)
        }
        Generator::Chain {
            n,
            gamma,
            delta,
            alpha,
            out,
        } => {
            let (m, p) = match (delta, alpha) {
                (None, Some(a)) => simulation_chain(n, gamma, a)?,
                _ => {
                    let delta = delta.unwrap_or(ChainSpec::delta_limit(n, gamma) / 100.0);
                    let alpha = alpha.unwrap_or(ChainSpec::alpha_limit(delta, gamma));
                    lower_bound_chain(&ChainSpec::new(n, gamma, delta, alpha)?)?
                }
            };
            (m, Some(p), out)
        }
        Generator::ProofChain { n, gamma, out } => {
            let (_, m, p) = proof_parameter_chain(n, gamma)?;
            (m, Some(p), out)
        }
        Generator::Mismatch {
            n,
            gamma,
            delta,
            r_max,
            out,
        } => (mismatch_mdp(n, gamma, delta, r_max)?, None, out),
        Generator::Duplicate { base, delta, out } => {
            (duplicate_action_mdp(&read_mdp(&base)?, delta)?, None, out)
        }
    };
    let policy_json = match (&out.policy_out, policy) {
        (Some(_), Some(p)) => Some(policy_to_json(&p)),
        (Some(_), None) => bail!("this generator has no initial policy; drop --policy-out"),
        _ => None,
    };
    write_atomic(&out.out, mdp.to_json().as_bytes())?;
    if let (Some(path), Some(json)) = (&out.policy_out, policy_json) {
        write_atomic(path, json.as_bytes())?;
    }
    Ok(())
}

fn read_mdp(path: &Path) -> Result<Mdp> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Mdp::from_json(&text).with_context(|| format!("in {}", path.display()))
}

fn policy_to_json(p: &PolicyF64) -> String {
    let rows: Vec<&[f64]> = p.rows().collect();
    serde_json::to_string_pretty(&rows).expect("policy rows serialise")
}

fn read_policy(path: &Path, mdp: &Mdp) -> Result<PolicyF64> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).with_context(|| format!("in {}", path.display()))?;
    if rows.len() != mdp.n_states() {
        bail!(
            "{}: {} rows for {} states",
            path.display(),
            rows.len(),
            mdp.n_states()
        );
    }
    Ok(PolicyF64::new(
        mdp.n_states(),
        mdp.n_actions(),
        rows.concat(),
    )?)
}

fn initial_policy(path: Option<&Path>, mdp: &Mdp) -> Result<PolicyF64> {
    match path {
        Some(p) => read_policy(p, mdp),
        None => Ok(PolicyF64::uniform(mdp.n_states(), mdp.n_actions())),
    }
}

fn solve(a: SolveArgs) -> Result<()> {
    let (trace, gamma, out, svg) = if let Some(path) = &a.config {
        let cfg = RunConfig::load(path)?;
        let (mdp, _) = cfg.mdp.build(cfg.seed)?;
        let trace = run_config(&cfg)?;
        let out = a.out.clone().or(cfg.output.trace.clone());
        let svg = a.svg.clone().or(cfg.output.svg.clone());
        (trace, mdp.gamma(), out, svg)
    } else {
        let mdp = read_mdp(
            a.mdp
                .as_deref()
                .ok_or_else(|| anyhow!("--mdp or --config is required"))?,
        )?;
        let map = Map::from_id(&a.map)?;
        let schedule = parse_schedule(&a.schedule, mdp.gamma())?.with_per_state(a.per_state);
        let pi0 = initial_policy(a.policy.as_deref(), &mdp)?;
        let cfg = ExactRunConfig::new(a.iterations)
            .verify(!a.flags.no_verify)
            .record_time(a.flags.timing);
        (
            run_exact_pmd(&mdp, &map, &schedule, &pi0, &cfg)?,
            mdp.gamma(),
            a.out,
            a.svg,
        )
    };
    let csv = trace.to_csv_string();
    let rendered = match &svg {
        Some(_) => Some(emit_svg(
            &csv,
            &Reference {
                gamma,
                bound_scale: None,
                title: String::new(),
            },
        )?),
        None => None,
    };
    match &out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    if let (Some(path), Some(text)) = (&svg, rendered) {
        write_atomic(path, text.as_bytes())?;
    }
    eprintln!(
        "iterations: {}, final gap: {:e}",
        trace.records.len() - 1,
        trace.records.last().map_or(f64::NAN, |r| r.sup_gap)
    );
    Ok(())
}

fn lowerbound(a: LowerBoundArgs) -> Result<()> {
    let specs = if a.schedules.is_empty() {
        vec![
            "adaptive".to_string(),
            "geometric:1".into(),
            "geometric:100".into(),
        ]
    } else {
        a.schedules
    };
    let schedules = specs
        .iter()
        .map(|s| parse_schedule(s, a.gamma))
        .collect::<Result<Vec<_>>>()?;
    let report = check_lower_bound(a.n, a.gamma, &schedules)?;
    for e in &report.entries {
        eprintln!(
            "{:<28} margin {:.6} at k = {:<3} claim {}  {}",
            e.schedule,
            e.margin,
            e.worst_k,
            if e.claim_holds { "holds" } else { "FAILS" },
            if e.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(bad) = report.entries.iter().find(|e| !e.passed) {
        return Err(VerificationFailed(format!(
            "lower bound violated for {} at k = {} (margin {})",
            bad.schedule, bad.worst_k, bad.margin
        ))
        .into());
    }
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(path) => write_atomic(path, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

fn necessity(a: NecessityArgs) -> Result<()> {
    let variants = match a.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    for v in variants {
        let run = reproduce_appendix_e(a.alpha, v, a.iterations, Some(&a.out_dir))?;
        eprintln!(
            "{v:<10} final gap {:e}, max gap/reference {:.4}, slow iteration before 25: {}",
            run.trace.records.last().map_or(f64::NAN, |r| r.sup_gap),
            run.reference_ratio,
            run.slow_iteration
                .map_or("none".to_string(), |k| k.to_string())
        );
    }
    Ok(())
}

fn inexact(a: InexactArgs) -> Result<()> {
    let mdp = read_mdp(&a.mdp)?;
    let map = Map::from_id(&a.map)?;
    let schedule = parse_schedule(&a.schedule, mdp.gamma())?;
    let pi0 = initial_policy(a.policy.as_deref(), &mdp)?;
    let theory = theorem4_parameters(
        mdp.gamma(),
        a.epsilon,
        a.confidence,
        mdp.n_states(),
        mdp.n_actions(),
    )?;
    let estimator = EstimatorConfig::new(a.horizon, a.trajectories)?;
    let cfg = InexactRunConfig::new(a.iterations, estimator)
        .verify(!a.flags.no_verify)
        .record_time(a.flags.timing);
    let model = GenerativeModel::new(mdp, a.seed);
    let trace = run_inexact_pmd(&model, &map, &schedule, &pi0, &cfg)?;
    write_atomic(&a.out, trace.to_csv_string().as_bytes())?;
    eprintln!(
        "theory for epsilon = {}: K = {}, H = {}, M = {}{}, total samples {}",
        a.epsilon,
        theory.k,
        theory.horizon,
        theory.trajectories,
        if theory.capped { " (saturated)" } else { "" },
        theory.total_samples
    );
    eprintln!(
        "run: K = {}, H = {}, M = {}, samples {}, final gap {:e}",
        a.iterations,
        a.horizon,
        a.trajectories,
        model.samples(),
        trace.records.last().map_or(f64::NAN, |r| r.sup_gap)
    );
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let configs = load_sweep(&a.configs)?;
    for (i, cfg) in configs.iter().enumerate() {
        cfg.seed_checked().with_context(|| format!("config {i}"))?;
    }
    let outcome = sweep(&configs, a.parallelism)?;
    let failures: Vec<String> = outcome
        .verify_failures()
        .map(|(id, e)| format!("{id}: {e:#}"))
        .collect();
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("{f}");
        }
        return Err(VerificationFailed(format!("{} run(s) failed", failures.len())).into());
    }
    for o in &outcome.outcomes {
        if let Err(e) = &o.result {
            eprintln!("{} (unverified run failed): {e:#}", o.id);
        }
    }
    write_atomic(&a.out, outcome.csv.as_bytes())
}

fn plot(a: PlotArgs) -> Result<()> {
    let csv = std::fs::read_to_string(&a.trace)
        .with_context(|| format!("reading {}", a.trace.display()))?;
    let svg = emit_svg(
        &csv,
        &Reference {
            gamma: a.gamma,
            bound_scale: a.bound_scale,
            title: a.title,
        },
    )?;
    write_atomic(&a.out, svg.as_bytes())
}
