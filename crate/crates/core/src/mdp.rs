//! Tabular MDP model, validation and non-robust dynamic programming.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on row sums of probability vectors.
pub const STOCHASTIC_TOL: f64 = 1e-12;

pub type ValueFunction = Vec<f64>;
pub type QFunction = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub rewards: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial_dist: Vec<f64>,
}

impl TabularMdp {
    /// Builds an MDP, renormalizing rows that are stochastic within tolerance.
    /// An empty `initial_dist` means uniform.
    pub fn new(
        rewards: Vec<Vec<f64>>,
        transitions: Vec<Vec<Vec<f64>>>,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let num_states = rewards.len();
        let num_actions = rewards.first().map_or(0, Vec::len);
        let mut mdp = TabularMdp {
            num_states,
            num_actions,
            gamma,
            rewards,
            transitions,
            initial_dist,
        };
        mdp.normalize();
        validate_mdp(&mdp)?;
        Ok(mdp)
    }

    fn normalize(&mut self) {
        if self.initial_dist.is_empty() && self.num_states > 0 {
            self.initial_dist = vec![1.0 / self.num_states as f64; self.num_states];
        }
        for row in self.transitions.iter_mut().flatten() {
            renormalize(row);
        }
        renormalize(&mut self.initial_dist);
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut mdp: TabularMdp = serde_json::from_str(s)?;
        check_shapes(&mdp)?;
        mdp.normalize();
        validate_mdp(&mdp)?;
        Ok(mdp)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// Same rewards, discount and initial distribution with a new kernel.
    pub fn with_transitions(&self, transitions: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(
            self.rewards.clone(),
            transitions,
            self.gamma,
            self.initial_dist.clone(),
        )
    }

    pub fn vmax(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    /// `mu^T v` under the initial distribution.
    pub fn initial_value(&self, v: &[f64]) -> f64 {
        dot(&self.initial_dist, v)
    }
}

fn renormalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() <= STOCHASTIC_TOL && sum != 1.0 {
        row.iter_mut().for_each(|x| *x /= sum);
    }
}

fn is_distribution(row: &[f64], len: usize) -> bool {
    row.len() == len
        && row.iter().all(|x| x.is_finite() && *x >= 0.0)
        && (row.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL
}

fn check_shapes(mdp: &TabularMdp) -> Result<()> {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    if ns == 0 || na == 0 {
        return Err(Error::DimensionMismatch(
            "empty state or action space".into(),
        ));
    }
    if mdp.rewards.len() != ns || mdp.rewards.iter().any(|r| r.len() != na) {
        return Err(Error::DimensionMismatch(format!(
            "rewards must be {ns}x{na}"
        )));
    }
    if mdp.transitions.len() != ns || mdp.transitions.iter().any(|r| r.len() != na) {
        return Err(Error::DimensionMismatch(format!(
            "transitions must be {ns}x{na}x{ns}"
        )));
    }
    if !mdp.initial_dist.is_empty() && mdp.initial_dist.len() != ns {
        return Err(Error::BadInitialDist);
    }
    Ok(())
}

pub fn validate_mdp(mdp: &TabularMdp) -> Result<()> {
    check_shapes(mdp)?;
    if !(0.0..1.0).contains(&mdp.gamma) {
        return Err(Error::BadGamma(mdp.gamma));
    }
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let r = mdp.rewards[s][a];
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::RewardOutOfRange(s, a));
            }
            if !is_distribution(&mdp.transitions[s][a], mdp.num_states) {
                return Err(Error::RowNotStochastic(s, a));
            }
        }
    }
    if !is_distribution(&mdp.initial_dist, mdp.num_states) {
        return Err(Error::BadInitialDist);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Deterministic,
    Stochastic,
}

/// Stationary policy; deterministic policies are stored as one-hot rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub probs: Vec<Vec<f64>>,
}

impl Policy {
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Policy {
            kind: PolicyKind::Deterministic,
            probs,
        }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy {
            kind: PolicyKind::Stochastic,
            probs: vec![vec![1.0 / num_actions as f64; num_actions]; num_states],
        }
    }

    pub fn stochastic(mut probs: Vec<Vec<f64>>) -> Result<Self> {
        probs.iter_mut().for_each(|r| renormalize(r));
        let pi = Policy {
            kind: PolicyKind::Stochastic,
            probs,
        };
        pi.validate()?;
        Ok(pi)
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let na = self.probs.first().map_or(0, Vec::len);
        for (s, row) in self.probs.iter().enumerate() {
            if !is_distribution(row, na) {
                return Err(Error::BadPolicy(s));
            }
            if self.kind == PolicyKind::Deterministic
                && row.iter().filter(|&&x| x == 1.0).count() != 1
            {
                return Err(Error::BadPolicy(s));
            }
        }
        Ok(())
    }

    pub fn check_against(&self, mdp: &TabularMdp) -> Result<()> {
        if self.probs.len() != mdp.num_states
            || self.probs.iter().any(|r| r.len() != mdp.num_actions)
        {
            return Err(Error::DimensionMismatch(format!(
                "policy must be {}x{}",
                mdp.num_states, mdp.num_actions
            )));
        }
        self.validate()
    }

    /// Action with the largest probability in each state (first on ties).
    pub fn actions(&self) -> Vec<usize> {
        self.probs.iter().map(|row| argmax(row)).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `||a - b||_inf`.
pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Sweep-to-sweep change below which value iteration stops: this makes
/// `tol` a bound on the Bellman residual of the returned iterate.
pub fn stopping_threshold(tol: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / (2.0 * gamma)
    }
}

pub fn bellman_q(mdp: &TabularMdp, v: &[f64]) -> QFunction {
    (0..mdp.num_states)
        .map(|s| {
            (0..mdp.num_actions)
                .map(|a| mdp.rewards[s][a] + mdp.gamma * dot(&mdp.transitions[s][a], v))
                .collect()
        })
        .collect()
}

pub fn bellman_optimal(mdp: &TabularMdp, v: &[f64]) -> ValueFunction {
    bellman_q(mdp, v)
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn bellman_policy(mdp: &TabularMdp, pi: &Policy, v: &[f64]) -> ValueFunction {
    bellman_q(mdp, v)
        .iter()
        .zip(&pi.probs)
        .map(|(q, p)| dot(q, p))
        .collect()
}

pub fn value_iteration(
    mdp: &TabularMdp,
    tol: f64,
    max_iters: usize,
) -> Result<(ValueFunction, Policy)> {
    let threshold = stopping_threshold(tol, mdp.gamma);
    let mut v = vec![0.0; mdp.num_states];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = bellman_optimal(mdp, &v);
        residual = sup_dist(&next, &v);
        v = next;
        if residual <= threshold {
            let q = bellman_q(mdp, &v);
            let actions: Vec<usize> = q.iter().map(|r| argmax(r)).collect();
            return Ok((v, Policy::deterministic(&actions, mdp.num_actions)));
        }
    }
    Err(Error::MaxItersExceeded {
        iterations: max_iters,
        residual,
    })
}

pub fn policy_evaluation(mdp: &TabularMdp, pi: &Policy, tol: f64) -> Result<ValueFunction> {
    pi.check_against(mdp)?;
    let threshold = stopping_threshold(tol, mdp.gamma);
    let max_iters = max_sweeps(tol, mdp.gamma);
    let mut v = vec![0.0; mdp.num_states];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = bellman_policy(mdp, pi, &v);
        residual = sup_dist(&next, &v);
        v = next;
        if residual <= threshold {
            return Ok(v);
        }
    }
    Err(Error::MaxItersExceeded {
        iterations: max_iters,
        residual,
    })
}

/// Sweep budget that comfortably covers contraction from `V_0 = 0`.
pub fn max_sweeps(tol: f64, gamma: f64) -> usize {
    if gamma == 0.0 {
        return 2;
    }
    let need = ((tol * (1.0 - gamma) / 4.0).ln() + (1.0 - gamma).ln()) / gamma.ln();
    (2.0 * need.max(1.0)).ceil() as usize + 100
}

/// Exact `(I - gamma P^pi)^{-1} R^pi` by LU.
pub fn policy_evaluation_exact(mdp: &TabularMdp, pi: &Policy) -> Result<ValueFunction> {
    pi.check_against(mdp)?;
    let n = mdp.num_states;
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for (a, &w) in pi.probs[s].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.rewards[s][a];
            for (t, &p) in mdp.transitions[s][a].iter().enumerate() {
                m[(s, t)] -= mdp.gamma * w * p;
            }
        }
    }
    let x = m
        .lu()
        .solve(&r)
        .ok_or(Error::NumericalFailure(f64::INFINITY))?;
    Ok(x.iter().copied().collect())
}
