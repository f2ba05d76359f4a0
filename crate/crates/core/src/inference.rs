//! Plug-in asymptotic inference for robust values: Bellman-noise variances,
//! derivative matrices, asymptotic variances and confidence intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ambiguity::{
    chi2_scale, s_solve_sorted, sa_solve_sorted, sa_worst_case_sorted, sorted_order, AmbiguitySpec,
    Divergence, Rectangularity,
};
use crate::error::{Error, Result};
use crate::mdp::{Policy, QFunction, TabularMdp};
use crate::solvers::robust_bellman_q;

/// Smallest value gap below which the L1 formulas refuse to pick a branch.
pub const MIN_VALUE_GAP: f64 = 1e-9;
/// Largest accepted 1-norm condition number of the derivative matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Action gap below which reports carry an identifiability warning.
pub const ACTION_GAP_WARNING: f64 = 1e-6;

/// States sorted by ascending value, ties by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderedStateMap {
    pub permutation: Vec<usize>,
    /// Smallest difference between consecutive sorted values; infinite for a
    /// single state.
    pub min_gap: f64,
}

impl OrderedStateMap {
    pub fn new(v: &[f64]) -> Self {
        let permutation = sorted_order(v);
        let min_gap = permutation
            .windows(2)
            .map(|w| v[w[1]] - v[w[0]])
            .fold(f64::INFINITY, f64::min);
        OrderedStateMap {
            permutation,
            min_gap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub min_value_gap: f64,
    /// Minimal cross-action gap of the robust Q-function ((s,a)-rectangular
    /// sets only).
    pub min_action_gap: Option<f64>,
    pub condition_estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub lambda_diag: Vec<f64>,
    pub m_matrix: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub nominal_level: f64,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn check_scope(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    pi: &Policy,
    v: &[f64],
) -> Result<OrderedStateMap> {
    spec.validate()?;
    pi.check_against(mdp)?;
    if v.len() != mdp.num_states {
        return Err(Error::DimensionMismatch("value function length".into()));
    }
    if spec.kind == Divergence::L1 && spec.rectangularity == Rectangularity::S {
        return Err(Error::UnsupportedCombination {
            kind: spec.kind,
            rect: spec.rectangularity,
        });
    }
    let map = OrderedStateMap::new(v);
    if spec.kind == Divergence::L1 && map.min_gap < MIN_VALUE_GAP {
        return Err(Error::DegenerateOrdering(map.min_gap));
    }
    Ok(map)
}

/// `b^T Sigma b` with `Sigma = diag(p) - p p^T`.
fn multinomial_quad(p: &[f64], b: &[f64]) -> f64 {
    let mean: f64 = p.iter().zip(b).map(|(x, y)| x * y).sum();
    let second: f64 = p.iter().zip(b).map(|(x, y)| x * y * y).sum();
    (second - mean * mean).max(0.0)
}

fn support_min(p: &[f64], v: &[f64]) -> f64 {
    p.iter()
        .zip(v)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, y)| *y)
        .fold(f64::INFINITY, f64::min)
}

/// Gradient of the (s,a)-rectangular support value in the center `p`.
fn sa_gradient(kind: Divergence, p: &[f64], v: &[f64], rho: f64, dual: f64) -> Vec<f64> {
    match kind {
        Divergence::L1 => v.iter().map(|vi| -(dual - vi).max(0.0)).collect(),
        Divergence::Chi2 => {
            let s: f64 = p
                .iter()
                .zip(v)
                .map(|(x, vi)| x * (dual - vi).max(0.0).powi(2))
                .sum();
            if s <= 0.0 {
                return vec![0.0; v.len()];
            }
            let c = chi2_scale(rho) / (2.0 * s.sqrt());
            v.iter()
                .map(|vi| -c * (dual - vi).max(0.0).powi(2))
                .collect()
        }
        Divergence::Kl => kl_gradient(p, v, 1.0, dual),
    }
}

/// `-lambda exp(-w v / lambda) / Z` with weights shifted by the support minimum.
fn kl_gradient(p: &[f64], v: &[f64], w: f64, lambda: f64) -> Vec<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return vec![0.0; v.len()];
    }
    let m = w * support_min(p, v);
    let e: Vec<f64> = v.iter().map(|vi| (-(w * vi - m) / lambda).exp()).collect();
    let z: f64 = p.iter().zip(&e).map(|(x, y)| x * y).sum();
    e.iter().map(|y| -lambda * y / z).collect()
}

/// Per-state variance of the Bellman noise `sqrt(n) (T_hat V - T V)(s)`.
pub fn bellman_noise_variance(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    pi: &Policy,
    v: &[f64],
) -> Result<Vec<f64>> {
    let map = check_scope(mdp, spec, pi, v)?;
    let order = &map.permutation;
    let g2 = mdp.gamma * mdp.gamma;
    let out = (0..mdp.num_states)
        .map(|s| {
            let w = &pi.probs[s];
            let rows = &mdp.transitions[s];
            match spec.rectangularity {
                Rectangularity::SA => {
                    let total: f64 = (0..mdp.num_actions)
                        .filter(|&a| w[a] > 0.0)
                        .map(|a| {
                            let sol = sa_solve_sorted(spec.kind, &rows[a], v, order, spec.rho);
                            let b = sa_gradient(spec.kind, &rows[a], v, spec.rho, sol.dual);
                            w[a] * w[a] * multinomial_quad(&rows[a], &b)
                        })
                        .sum();
                    g2 * total
                }
                Rectangularity::S => {
                    let b = s_gradients(mdp, spec, w, s, v, order);
                    g2 * rows
                        .iter()
                        .zip(&b)
                        .map(|(p, b)| multinomial_quad(p, b))
                        .sum::<f64>()
                }
            }
        })
        .collect();
    Ok(out)
}

/// Gradients of the s-rectangular support value in each action's center row.
fn s_gradients(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    w: &[f64],
    s: usize,
    v: &[f64],
    order: &[usize],
) -> Vec<Vec<f64>> {
    let rows = &mdp.transitions[s];
    let sol = s_solve_sorted(spec.kind, rows, w, v, order, spec.rho);
    let na = rows.len() as f64;
    match spec.kind {
        Divergence::Chi2 => {
            let gap = |a: usize, vi: f64| (sol.eta[a] - w[a] * vi).max(0.0);
            let total: f64 = rows
                .iter()
                .enumerate()
                .map(|(a, p)| {
                    p.iter()
                        .zip(v)
                        .map(|(x, vi)| x * gap(a, *vi).powi(2))
                        .sum::<f64>()
                })
                .sum();
            if total <= 0.0 {
                return vec![vec![0.0; v.len()]; rows.len()];
            }
            let c = ((1.0 + spec.rho) * na).sqrt() / (2.0 * total.sqrt());
            (0..rows.len())
                .map(|a| v.iter().map(|vi| -c * gap(a, *vi).powi(2)).collect())
                .collect()
        }
        Divergence::Kl => rows
            .iter()
            .enumerate()
            .map(|(a, p)| kl_gradient(p, v, w[a], sol.lambda))
            .collect(),
        Divergence::L1 => unreachable!("rejected by check_scope"),
    }
}

/// `M = I - gamma sum_a pi(a|s) q*_{s,a}`, the derivative of `(I - T_r^pi)`
/// at `v`.
pub fn derivative_matrix(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    pi: &Policy,
    v: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let map = check_scope(mdp, spec, pi, v)?;
    let order = &map.permutation;
    let ns = mdp.num_states;
    let mut m = vec![vec![0.0; ns]; ns];
    for (s, row) in m.iter_mut().enumerate() {
        row[s] = 1.0;
        let w = &pi.probs[s];
        let rows = &mdp.transitions[s];
        let qs: Vec<(f64, Vec<f64>)> = match spec.rectangularity {
            Rectangularity::SA => (0..mdp.num_actions)
                .filter(|&a| w[a] > 0.0)
                .map(|a| {
                    let sol = sa_solve_sorted(spec.kind, &rows[a], v, order, spec.rho);
                    let q = sa_worst_case_sorted(spec.kind, &rows[a], v, order, spec.rho, &sol);
                    (w[a], q)
                })
                .collect(),
            Rectangularity::S => {
                let sol = s_solve_sorted(spec.kind, rows, w, v, order, spec.rho);
                w.iter()
                    .copied()
                    .zip(sol.q)
                    .filter(|(x, _)| *x > 0.0)
                    .collect()
            }
        };
        for (weight, q) in qs {
            for (entry, qj) in row.iter_mut().zip(&q) {
                *entry -= mdp.gamma * weight * qj;
            }
        }
    }
    Ok(m)
}

fn to_matrix(m: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(
            "derivative matrix must be square".into(),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| m[i][j]))
}

/// 1-norm condition number `||M||_1 ||M^-1||_1`; infinite when singular.
pub fn condition_estimate(m: &[Vec<f64>]) -> Result<f64> {
    let mat = to_matrix(m)?;
    let norm1 = |x: &DMatrix<f64>| {
        x.column_iter()
            .map(|c| c.iter().map(|y| y.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    Ok(match mat.clone().lu().try_inverse() {
        Some(inv) if inv.iter().all(|x| x.is_finite()) => norm1(&mat) * norm1(&inv),
        _ => f64::INFINITY,
    })
}

/// `mu^T M^-1 Lambda M^-T mu`.
pub fn asymptotic_variance(mu: &[f64], m: &[Vec<f64>], lambda_diag: &[f64]) -> Result<f64> {
    let n = m.len();
    if mu.len() != n || lambda_diag.len() != n {
        return Err(Error::DimensionMismatch(
            "mu, M and Lambda sizes differ".into(),
        ));
    }
    let cond = condition_estimate(m)?;
    if !(cond < MAX_CONDITION) {
        return Err(Error::SingularDerivative(cond));
    }
    let mt = to_matrix(m)?.transpose();
    let x = mt
        .lu()
        .solve(&DVector::from_column_slice(mu))
        .ok_or(Error::SingularDerivative(cond))?;
    Ok(x.iter()
        .zip(lambda_diag)
        .map(|(xi, l)| l * xi * xi)
        .sum::<f64>()
        .max(0.0))
}

/// Standard-normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `point -+ z_level sqrt(sigma2 / n)`.
pub fn confidence_interval(point: f64, sigma2: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.5 && level < 1.0) {
        return Err(Error::BadLevel(level));
    }
    if n == 0 || !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument("need n >= 1 and sigma2 >= 0".into()));
    }
    let half = normal_quantile(level) * (sigma2 / n as f64).sqrt();
    Ok((point - half, point + half))
}

/// Smallest `|Q(s, a1) - Q(s, a2)|` over states and distinct actions;
/// infinite with a single action.
pub fn optimal_gap_diagnostics(q: &QFunction) -> f64 {
    let mut gap = f64::INFINITY;
    for row in q {
        for (i, x) in row.iter().enumerate() {
            for y in &row[i + 1..] {
                gap = gap.min((x - y).abs());
            }
        }
    }
    gap
}

/// Full plug-in report: every ingredient is computed from the supplied
/// (estimated) model, policy and value function.
pub fn inference_report(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    pi: &Policy,
    v: &[f64],
    n: usize,
    level: f64,
) -> Result<InferenceReport> {
    let map = check_scope(mdp, spec, pi, v)?;
    let lambda_diag = bellman_noise_variance(mdp, spec, pi, v)?;
    let m_matrix = derivative_matrix(mdp, spec, pi, v)?;
    let condition = condition_estimate(&m_matrix)?;
    let sigma2 = asymptotic_variance(&mdp.initial_dist, &m_matrix, &lambda_diag)?;
    let point = mdp.initial_value(v);
    let (ci_low, ci_high) = confidence_interval(point, sigma2, n, level)?;
    let min_action_gap = (spec.rectangularity == Rectangularity::SA && mdp.num_actions > 1)
        .then(|| optimal_gap_diagnostics(&robust_bellman_q(mdp, spec, v)));
    let mut warnings = Vec::new();
    if let Some(g) = min_action_gap.filter(|g| *g < ACTION_GAP_WARNING) {
        warnings.push(format!(
            "robust Q action gap {g:e} is below {ACTION_GAP_WARNING:e}"
        ));
    }
    Ok(InferenceReport {
        lambda_diag,
        m_matrix,
        sigma2,
        point,
        ci_low,
        ci_high,
        n,
        nominal_level: level,
        diagnostics: Diagnostics {
            min_value_gap: map.min_gap,
            min_action_gap,
            condition_estimate: condition,
        },
        warnings,
    })
}
