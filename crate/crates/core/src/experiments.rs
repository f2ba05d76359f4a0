//! Random MDPs and the Monte-Carlo convergence and coverage experiments.

use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySpec, Divergence, Rectangularity};
use crate::error::{Error, Result};
use crate::inference::inference_report;
use crate::mdp::{sup_dist, TabularMdp};
use crate::sampling::{generative_estimate, replication_seed};
use crate::solvers::{
    bisection_eps, bisection_solve_from, robust_bellman_optimal, robust_value_iteration_from,
    SolveReport,
};

/// Tolerance of the truth-kernel reference solve.
pub const TRUTH_TOL: f64 = 1e-10;

/// Rewards i.i.d. `U(0,1)`; each transition row is `u / sum(u)` with `u`
/// i.i.d. `U(0,1)`. The initial distribution is uniform.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    seed: u64,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidArgument("sizes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = || loop {
        let u: f64 = rng.random();
        if u >= 1e-300 {
            return u;
        }
    };
    let rewards = (0..num_states)
        .map(|_| (0..num_actions).map(|_| uniform()).collect())
        .collect();
    let transitions = (0..num_states)
        .map(|_| {
            (0..num_actions)
                .map(|_| {
                    let u: Vec<f64> = (0..num_states).map(|_| uniform()).collect();
                    let total: f64 = u.iter().sum();
                    u.iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect();
    TabularMdp::new(rewards, transitions, gamma, vec![])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MdpSource {
    Random {
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl MdpSource {
    pub fn load(&self) -> Result<TabularMdp> {
        match self {
            MdpSource::Random {
                num_states,
                num_actions,
                gamma,
                seed,
            } => random_mdp(*num_states, *num_actions, *gamma, *seed),
            MdpSource::File { path } => TabularMdp::load(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mdp_source: MdpSource,
    pub spec: AmbiguitySpec,
    pub n_list: Vec<usize>,
    pub reps: usize,
    /// One-sided normal quantile level of the intervals.
    pub level: f64,
    /// Solver tolerance on the estimated models.
    pub tol: f64,
    /// Number of sweeps recorded by the convergence experiment.
    pub iterations: usize,
    pub seed: u64,
    pub out_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if self.n_list.is_empty()
            || self.n_list.windows(2).any(|w| w[0] >= w[1])
            || self.n_list[0] == 0
        {
            return Err(Error::InvalidArgument(
                "n_list must be non-empty, positive and strictly ascending".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Seed of replication `rep` at sample size `n`.
pub fn cell_seed(seed: u64, n: usize, rep: usize) -> u64 {
    replication_seed(replication_seed(seed, n as u64), rep as u64)
}

fn solve_from(mdp: &TabularMdp, spec: &AmbiguitySpec, tol: f64, v0: &[f64]) -> Result<SolveReport> {
    let max_iters = crate::mdp::max_sweeps(tol, mdp.gamma);
    let report = match spec.rectangularity {
        Rectangularity::SA => robust_value_iteration_from(mdp, spec, max_iters, tol, v0)?,
        Rectangularity::S => bisection_solve_from(mdp, spec, max_iters, tol, v0)?,
    };
    report.ensure_converged()
}

/// Robust optimal value of `mdp` at the reference tolerance.
pub fn reference_solve(mdp: &TabularMdp, spec: &AmbiguitySpec) -> Result<SolveReport> {
    solve_from(mdp, spec, TRUTH_TOL, &vec![0.0; mdp.num_states])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub kind: Divergence,
    pub rect: Rectangularity,
    pub rho: f64,
    pub n: usize,
    pub iter: usize,
    pub mean_err: f64,
    pub se_err: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Sup-norm errors `||V_t - V_r*||` of `iterations` robust sweeps from
/// `V_0 = 0` on one estimated model.
pub fn error_trajectory(
    est: &TabularMdp,
    spec: &AmbiguitySpec,
    truth: &[f64],
    iterations: usize,
    tol: f64,
) -> Vec<f64> {
    let eps = bisection_eps(tol, est.gamma);
    let mut v = vec![0.0; est.num_states];
    (0..iterations)
        .map(|_| {
            v = robust_bellman_optimal(est, spec, &v, eps);
            sup_dist(&v, truth)
        })
        .collect()
}

/// Mean and standard error of the per-sweep error over replications, for
/// every `n` of the configuration. Replications whose estimate fails are
/// skipped.
pub fn convergence_experiment(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRow>> {
    cfg.validate()?;
    let mdp = cfg.mdp_source.load()?;
    let truth = reference_solve(&mdp, &cfg.spec)?.value;
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let trajectories: Vec<Vec<f64>> = (0..cfg.reps)
            .into_par_iter()
            .filter_map(|rep| {
                let est = generative_estimate(&mdp, n, cell_seed(cfg.seed, n, rep))
                    .and_then(|m| m.to_mdp(&mdp))
                    .ok()?;
                Some(error_trajectory(
                    &est,
                    &cfg.spec,
                    &truth,
                    cfg.iterations,
                    cfg.tol,
                ))
            })
            .collect();
        for t in 0..cfg.iterations {
            let errs: Vec<f64> = trajectories.iter().map(|tr| tr[t]).collect();
            let (mean_err, se_err) = mean_se(&errs);
            rows.push(ConvergenceRow {
                kind: cfg.spec.kind,
                rect: cfg.spec.rectangularity,
                rho: cfg.spec.rho,
                n,
                iter: t + 1,
                mean_err,
                se_err,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub kind: Divergence,
    pub rect: Rectangularity,
    pub rho: f64,
    pub n: usize,
    pub coverage_pct: f64,
    pub coverage_se_pct: f64,
    pub mean_ci_length: f64,
    pub ci_length_se: f64,
    /// Replications dropped because inference failed.
    pub excluded: usize,
}

/// Outcome of one coverage replication: `(covered, ci_length)`.
pub fn coverage_replication(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    truth: &[f64],
    n: usize,
    seed: u64,
    level: f64,
    tol: f64,
) -> Result<(bool, f64)> {
    let est = generative_estimate(mdp, n, seed)?.to_mdp(mdp)?;
    let sol = solve_from(&est, spec, tol, truth)?;
    let pi = sol.policy.as_ref().expect("solvers return a policy");
    let rep = inference_report(&est, spec, pi, &sol.value, n, level)?;
    let target = mdp.initial_value(truth);
    Ok((
        rep.ci_low <= target && target <= rep.ci_high,
        rep.ci_high - rep.ci_low,
    ))
}

/// Empirical coverage of the plug-in intervals around the estimated robust
/// optimal value, for every `n` of the configuration.
pub fn coverage_experiment(cfg: &ExperimentConfig) -> Result<Vec<CoverageRow>> {
    cfg.validate()?;
    let mdp = cfg.mdp_source.load()?;
    let truth = reference_solve(&mdp, &cfg.spec)?.value;
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let outcomes: Vec<Result<(bool, f64)>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                coverage_replication(
                    &mdp,
                    &cfg.spec,
                    &truth,
                    n,
                    cell_seed(cfg.seed, n, rep),
                    cfg.level,
                    cfg.tol,
                )
            })
            .collect();
        let ok: Vec<(bool, f64)> = outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok().copied())
            .collect();
        let excluded = outcomes.len() - ok.len();
        let valid = ok.len() as f64;
        let p = ok.iter().filter(|(c, _)| *c).count() as f64 / valid;
        let lengths: Vec<f64> = ok.iter().map(|(_, l)| *l).collect();
        let (mean_ci_length, ci_length_se) = if ok.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_se(&lengths)
        };
        rows.push(CoverageRow {
            kind: cfg.spec.kind,
            rect: cfg.spec.rectangularity,
            rho: cfg.spec.rho,
            n,
            coverage_pct: 100.0 * p,
            coverage_se_pct: 100.0 * (p * (1.0 - p) / valid).sqrt(),
            mean_ci_length,
            ci_length_se,
            excluded,
        });
    }
    Ok(rows)
}

/// Long-format CSV with a header row.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
