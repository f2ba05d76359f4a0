//! `robustmdp` command line: solving, evaluation with confidence intervals,
//! sampling, the Monte-Carlo experiments and the closed-form bounds.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use robust_mdp::experiments::{
    cell_seed, convergence_experiment, coverage_experiment, random_mdp, write_csv,
    ExperimentConfig, MdpSource,
};
use robust_mdp::inference::{inference_report, InferenceReport};
use robust_mdp::mdp::max_sweeps;
use robust_mdp::sampling::{
    generative_estimate, offline_sample, truncate_uniform, uniform_behavior,
};
use robust_mdp::solvers::{robust_policy_evaluation, solve, SolveReport};
use robust_mdp::theory::{gap_bound, lower_bound_samples, upper_bound_eps, BoundQuery, DataMode};
use robust_mdp::{AmbiguitySpec, Divergence, Error, Policy, Rectangularity, TabularMdp};

/// Environment variable that replaces `--seed` when set.
pub const SEED_ENV: &str = "ROBUSTMDP_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "robustmdp",
    version,
    about = "Robust tabular MDPs under divergence ambiguity sets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Robust optimal value and policy, optionally on a sampled model.
    Solve(SolveArgs),
    /// Robust value of a fixed policy with an optional confidence interval.
    Evaluate(EvaluateArgs),
    /// Draw samples and print the estimated model or the offline dataset.
    Sample(SampleArgs),
    /// Coverage of the plug-in confidence intervals (CSV).
    Coverage(ExperimentArgs),
    /// Per-sweep error of robust value iteration on sampled models (CSV).
    Convergence(ExperimentArgs),
    /// Finite-sample and gap bounds (JSON).
    Bounds(BoundsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    L1,
    Chi2,
    Kl,
}

impl From<KindArg> for Divergence {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::L1 => Divergence::L1,
            KindArg::Chi2 => Divergence::Chi2,
            KindArg::Kl => Divergence::Kl,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RectArg {
    Sa,
    S,
}

impl From<RectArg> for Rectangularity {
    fn from(r: RectArg) -> Self {
        match r {
            RectArg::Sa => Rectangularity::SA,
            RectArg::S => Rectangularity::S,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SampleMode {
    Generative,
    Offline,
    Truncated,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Generative,
    Offline,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected S,A")?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// MDP in JSON format.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub mdp: Option<PathBuf>,
    /// Random MDP with S states and A actions, generated from `--seed`.
    #[arg(long, value_name = "S,A", value_parser = parse_dims)]
    pub random: Option<(usize, usize)>,
    /// Discount factor; overrides the one in `--mdp`. Default 0.9 for `--random`.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SetArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "sa")]
    pub rect: RectArg,
    #[arg(long)]
    pub rho: f64,
}

impl SetArgs {
    fn spec(&self) -> Result<AmbiguitySpec, Error> {
        AmbiguitySpec::new(self.kind.into(), self.rho, self.rect.into())
    }
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub set: SetArgs,
    /// Samples per state-action pair; solve the estimated model instead.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub iters: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub set: SetArgs,
    /// Policy in JSON format; uniform when omitted.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Samples per state-action pair; adds a confidence interval.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0.975)]
    pub level: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Samples per pair (generative) or dataset size (offline, truncated).
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "generative")]
    pub mode: SampleMode,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub set: SetArgs,
    /// Comma-separated ascending sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,500,1000")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.975)]
    pub level: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Sweeps recorded by `convergence`.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "sa")]
    pub rect: RectArg,
    #[arg(long = "S")]
    pub num_states: usize,
    #[arg(long = "A")]
    pub num_actions: usize,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub rho: f64,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, value_enum, default_value = "generative")]
    pub mode: ModeArg,
    #[arg(long)]
    pub p_underbar: Option<f64>,
    #[arg(long)]
    pub nu_min: Option<f64>,
    /// Accuracy for the order-only lower bound on the sample size.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct EvaluateOutput {
    pub evaluation: SolveReport,
    pub inference: Option<InferenceReport>,
}

#[derive(Debug, Serialize)]
pub struct BoundsOutput {
    pub query: BoundQuery,
    pub upper_bound_eps: f64,
    pub gap_bound: f64,
    pub lower_bound_samples: Option<f64>,
}

fn env_seed() -> Result<Option<u64>, Error> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            Error::InvalidArgument(format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))
        }),
        Err(_) => Ok(None),
    }
}

fn load_model(m: &ModelArgs, seed: u64) -> Result<TabularMdp, Error> {
    match (&m.mdp, m.random) {
        (Some(path), _) => {
            let mdp = TabularMdp::load(path)?;
            match m.gamma {
                Some(g) => TabularMdp::new(mdp.rewards, mdp.transitions, g, mdp.initial_dist),
                None => Ok(mdp),
            }
        }
        (None, Some((s, a))) => random_mdp(s, a, m.gamma.unwrap_or(0.9), seed),
        (None, None) => Err(Error::InvalidArgument(
            "one of --mdp or --random is required".into(),
        )),
    }
}

fn mdp_source(m: &ModelArgs, seed: u64) -> Result<MdpSource, Error> {
    match (&m.mdp, m.random) {
        (Some(path), _) if m.gamma.is_none() => Ok(MdpSource::File { path: path.clone() }),
        (Some(_), _) => Err(Error::InvalidArgument(
            "--gamma cannot override --mdp in experiments; edit the file".into(),
        )),
        (None, Some((s, a))) => Ok(MdpSource::Random {
            num_states: s,
            num_actions: a,
            gamma: m.gamma.unwrap_or(0.9),
            seed,
        }),
        (None, None) => Err(Error::InvalidArgument(
            "one of --mdp or --random is required".into(),
        )),
    }
}

fn sampled(mdp: &TabularMdp, n: Option<usize>, seed: u64) -> Result<TabularMdp, Error> {
    match n {
        Some(n) => generative_estimate(mdp, n, cell_seed(seed, n, 0))?.to_mdp(mdp),
        None => Ok(mdp.clone()),
    }
}

fn emit(out: &Option<PathBuf>, stdout: &mut dyn Write, body: &[u8]) -> Result<(), Error> {
    match out {
        Some(path) => File::create(path)?.write_all(body)?,
        None => stdout.write_all(body)?,
    }
    Ok(())
}

fn with_newline(mut s: String) -> Vec<u8> {
    s.push('\n');
    s.into_bytes()
}

fn json<T: Serialize>(x: &T) -> Result<Vec<u8>, Error> {
    Ok(with_newline(serde_json::to_string_pretty(x)?))
}

fn run_solve(a: &SolveArgs, seed: u64, stdout: &mut dyn Write) -> Result<(), Error> {
    let spec = a.set.spec()?;
    let truth = load_model(&a.model, seed)?;
    let mdp = sampled(&truth, a.n, seed)?;
    let iters = a.iters.unwrap_or_else(|| max_sweeps(a.tol, mdp.gamma));
    let report = solve(&mdp, &spec, iters, a.tol)?.ensure_converged()?;
    emit(&a.common.out, stdout, &json(&report)?)
}

fn run_evaluate(a: &EvaluateArgs, seed: u64, stdout: &mut dyn Write) -> Result<(), Error> {
    let spec = a.set.spec()?;
    let truth = load_model(&a.model, seed)?;
    let pi = match &a.policy {
        Some(path) => serde_json::from_str::<Policy>(&std::fs::read_to_string(path)?)?,
        None => Policy::uniform(truth.num_states, truth.num_actions),
    };
    pi.check_against(&truth)?;
    let mdp = sampled(&truth, a.n, seed)?;
    let evaluation = robust_policy_evaluation(&mdp, &spec, &pi, a.tol)?;
    let inference = match a.n {
        Some(n) => Some(inference_report(
            &mdp,
            &spec,
            &pi,
            &evaluation.value,
            n,
            a.level,
        )?),
        None => None,
    };
    emit(
        &a.common.out,
        stdout,
        &json(&EvaluateOutput {
            evaluation,
            inference,
        })?,
    )
}

fn run_sample(a: &SampleArgs, seed: u64, stdout: &mut dyn Write) -> Result<(), Error> {
    let mdp = load_model(&a.model, seed)?;
    let body = match a.mode {
        SampleMode::Generative => {
            with_newline(generative_estimate(&mdp, a.n, cell_seed(seed, a.n, 0))?.to_json_string()?)
        }
        SampleMode::Offline | SampleMode::Truncated => {
            let nu = uniform_behavior(mdp.num_states, mdp.num_actions);
            let ds = offline_sample(&mdp, &nu, a.n, cell_seed(seed, a.n, 0))?;
            if let SampleMode::Truncated = a.mode {
                with_newline(truncate_uniform(&ds)?.to_json_string()?)
            } else {
                let mut buf = Vec::new();
                ds.write_csv(&mut buf)?;
                buf
            }
        }
    };
    emit(&a.common.out, stdout, &body)
}

fn experiment_config(a: &ExperimentArgs, seed: u64) -> Result<ExperimentConfig, Error> {
    Ok(ExperimentConfig {
        mdp_source: mdp_source(&a.model, seed)?,
        spec: a.set.spec()?,
        n_list: a.n.clone(),
        reps: a.reps,
        level: a.level,
        tol: a.tol,
        iterations: a.iters,
        seed,
        out_path: a.common.out.clone(),
    })
}

fn run_coverage(a: &ExperimentArgs, seed: u64, stdout: &mut dyn Write) -> Result<(), Error> {
    let cfg = experiment_config(a, seed)?;
    if !(cfg.level > 0.5 && cfg.level < 1.0) {
        return Err(Error::BadLevel(cfg.level));
    }
    let rows = coverage_experiment(&cfg)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    emit(&cfg.out_path, stdout, &buf)
}

fn run_convergence(a: &ExperimentArgs, seed: u64, stdout: &mut dyn Write) -> Result<(), Error> {
    let cfg = experiment_config(a, seed)?;
    let rows = convergence_experiment(&cfg)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    emit(&cfg.out_path, stdout, &buf)
}

fn run_bounds(a: &BoundsArgs, stdout: &mut dyn Write) -> Result<(), Error> {
    let query = BoundQuery {
        kind: a.kind.into(),
        rectangularity: a.rect.into(),
        data_mode: match a.mode {
            ModeArg::Generative => DataMode::Generative,
            ModeArg::Offline => DataMode::Offline,
        },
        num_states: a.num_states,
        num_actions: a.num_actions,
        gamma: a.gamma,
        rho: a.rho,
        n: a.n,
        delta: a.delta,
        p_underbar: a.p_underbar,
        nu_min: a.nu_min,
    };
    let upper = upper_bound_eps(&query)?;
    let lower = match a.eps {
        Some(eps) => Some(lower_bound_samples(
            query.kind,
            query.num_states,
            query.num_actions,
            query.gamma,
            query.rho,
            eps,
        )?),
        None => None,
    };
    let out = BoundsOutput {
        gap_bound: gap_bound(
            query.kind,
            query.rectangularity,
            query.rho,
            query.gamma,
            query.num_actions,
        ),
        upper_bound_eps: upper,
        lower_bound_samples: lower,
        query,
    };
    emit(&a.out, stdout, &json(&out)?)
}

/// Runs a parsed command, writing results to `stdout` unless `--out` is given.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), Error> {
    let env = env_seed()?;
    let seed = |s: u64| env.unwrap_or(s);
    match &cli.command {
        Command::Solve(a) => run_solve(a, seed(a.common.seed), stdout),
        Command::Evaluate(a) => run_evaluate(a, seed(a.common.seed), stdout),
        Command::Sample(a) => run_sample(a, seed(a.common.seed), stdout),
        Command::Coverage(a) => run_coverage(a, seed(a.common.seed), stdout),
        Command::Convergence(a) => run_convergence(a, seed(a.common.seed), stdout),
        Command::Bounds(a) => run_bounds(a, stdout),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code: 0 on success, 2 on usage or validation errors, 3 on numerical failure.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}
