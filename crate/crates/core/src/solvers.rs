//! Robust value iteration, the bisection method for s-rectangular sets and
//! robust policy evaluation.

use serde::{Deserialize, Serialize};

use crate::ambiguity::{
    q_inverse_sorted, s_solve_sorted, sa_solve_sorted, sorted_order, AmbiguitySpec, Rectangularity,
};
use crate::error::{Error, Result};
use crate::mdp::{
    argmax, dot, max_sweeps, stopping_threshold, sup_dist, Policy, QFunction, TabularMdp,
    ValueFunction,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub value: ValueFunction,
    pub policy: Option<Policy>,
    pub q: Option<QFunction>,
    pub iterations: usize,
    pub per_iteration_residuals: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    /// Turns a non-converged report into `MaxItersExceeded`.
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxItersExceeded {
                iterations: self.iterations,
                residual: self
                    .per_iteration_residuals
                    .last()
                    .copied()
                    .unwrap_or(f64::INFINITY),
            })
        }
    }
}

fn require(spec: &AmbiguitySpec, rect: Rectangularity) -> Result<()> {
    spec.validate()?;
    if spec.rectangularity != rect {
        return Err(Error::InvalidSpec(format!(
            "this solver needs {rect} rectangularity, got {}",
            spec.rectangularity
        )));
    }
    Ok(())
}

/// Robust Q-function `R(s,a) + gamma inf_q q^T v` over (s,a)-rectangular balls.
pub fn robust_bellman_q(mdp: &TabularMdp, spec: &AmbiguitySpec, v: &[f64]) -> QFunction {
    let order = sorted_order(v);
    robust_q_sorted(mdp, spec, v, &order)
}

fn robust_q_sorted(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    v: &[f64],
    order: &[usize],
) -> QFunction {
    (0..mdp.num_states)
        .map(|s| {
            (0..mdp.num_actions)
                .map(|a| {
                    let p = &mdp.transitions[s][a];
                    mdp.rewards[s][a]
                        + mdp.gamma * sa_solve_sorted(spec.kind, p, v, order, spec.rho).value
                })
                .collect()
        })
        .collect()
}

/// Bisection tolerance tied to the outer tolerance.
pub fn bisection_eps(tol: f64, gamma: f64) -> f64 {
    tol * (1.0 - gamma) / 4.0
}

/// Optimal robust Bellman image `T_r v` for either rectangularity; the
/// s-rectangular image is computed by bisection to accuracy `eps`.
pub fn robust_bellman_optimal(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    v: &[f64],
    eps: f64,
) -> ValueFunction {
    let order = sorted_order(v);
    match spec.rectangularity {
        Rectangularity::SA => robust_q_sorted(mdp, spec, v, &order)
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        Rectangularity::S => (0..mdp.num_states)
            .map(|s| bisect_state(mdp, spec, s, v, &order, eps).0)
            .collect(),
    }
}

/// Policy Bellman image `T_r^pi v`.
pub fn robust_bellman_policy(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    pi: &Policy,
    v: &[f64],
) -> ValueFunction {
    let order = sorted_order(v);
    (0..mdp.num_states)
        .map(|s| policy_backup(mdp, spec, pi, s, v, &order))
        .collect()
}

fn policy_backup(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    pi: &Policy,
    s: usize,
    v: &[f64],
    order: &[usize],
) -> f64 {
    let w = &pi.probs[s];
    let reward = dot(w, &mdp.rewards[s]);
    let inner = match spec.rectangularity {
        Rectangularity::SA => (0..mdp.num_actions)
            .filter(|&a| w[a] > 0.0)
            .map(|a| {
                w[a] * sa_solve_sorted(spec.kind, &mdp.transitions[s][a], v, order, spec.rho).value
            })
            .sum(),
        Rectangularity::S => {
            s_solve_sorted(spec.kind, &mdp.transitions[s], w, v, order, spec.rho).value
        }
    };
    reward + mdp.gamma * inner
}

/// Robust value iteration for (s,a)-rectangular sets from `V_0 = 0`.
pub fn robust_value_iteration(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    max_iters: usize,
    tol: f64,
) -> Result<SolveReport> {
    robust_value_iteration_from(mdp, spec, max_iters, tol, &vec![0.0; mdp.num_states])
}

/// Robust value iteration from a given starting value.
pub fn robust_value_iteration_from(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    max_iters: usize,
    tol: f64,
    v0: &[f64],
) -> Result<SolveReport> {
    require(spec, Rectangularity::SA)?;
    let threshold = stopping_threshold(tol, mdp.gamma);
    let mut v = v0.to_vec();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let order = sorted_order(&v);
        let next: Vec<f64> = robust_q_sorted(mdp, spec, &v, &order)
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let r = sup_dist(&next, &v);
        residuals.push(r);
        v = next;
        if r <= threshold {
            converged = true;
            break;
        }
    }
    let q = robust_bellman_q(mdp, spec, &v);
    let policy = greedy_policy(&q)?;
    Ok(SolveReport {
        value: v,
        policy: Some(policy),
        q: Some(q),
        iterations: residuals.len(),
        per_iteration_residuals: residuals,
        converged,
    })
}

/// Bisection on `u` for one state: the smallest `u` whose summed minimal
/// divergences `sum_a q_a^{-1}(u, v)` fit in the budget `|A| rho`.
/// Returns the midpoint and the final feasible endpoint.
fn bisect_state(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    s: usize,
    v: &[f64],
    order: &[usize],
    eps: f64,
) -> (f64, f64) {
    let budget = mdp.num_actions as f64 * spec.rho;
    let vmax = v.iter().copied().fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, 1.0 + mdp.gamma * vmax);
    while hi - lo > 2.0 * eps {
        let u = 0.5 * (lo + hi);
        if feasible(mdp, spec, s, v, order, u, budget) {
            hi = u;
        } else {
            lo = u;
        }
    }
    (0.5 * (lo + hi), hi)
}

fn feasible(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    s: usize,
    v: &[f64],
    order: &[usize],
    u: f64,
    budget: f64,
) -> bool {
    let mut m = 0.0;
    for a in 0..mdp.num_actions {
        let r = mdp.rewards[s][a];
        m += if mdp.gamma == 0.0 {
            if u >= r {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            let c = (u - r) / mdp.gamma;
            q_inverse_sorted(spec.kind, &mdp.transitions[s][a], v, order, c).divergence
        };
        if m > budget {
            return false;
        }
    }
    true
}

/// Bisection algorithm for s-rectangular sets from `V_0 = 0`. The returned
/// policy is the stochastic policy read off the bisection optimum (see
/// [`s_rect_policy`]).
pub fn bisection_solve(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    max_iters: usize,
    tol: f64,
) -> Result<SolveReport> {
    bisection_solve_from(mdp, spec, max_iters, tol, &vec![0.0; mdp.num_states])
}

pub fn bisection_solve_from(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    max_iters: usize,
    tol: f64,
    v0: &[f64],
) -> Result<SolveReport> {
    require(spec, Rectangularity::S)?;
    let eps = bisection_eps(tol, mdp.gamma);
    let threshold = stopping_threshold(tol, mdp.gamma);
    let mut v = v0.to_vec();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let next = robust_bellman_optimal(mdp, spec, &v, eps);
        let r = sup_dist(&next, &v);
        residuals.push(r);
        v = next;
        if r <= threshold {
            converged = true;
            break;
        }
    }
    let policy = s_rect_policy(mdp, spec, &v, eps);
    Ok(SolveReport {
        value: v,
        policy: Some(policy),
        q: None,
        iterations: residuals.len(),
        per_iteration_residuals: residuals,
        converged,
    })
}

/// Robust policy for s-rectangular sets read off the bisection optimum at `v`.
///
/// At the optimal level `u*` of a state, the weight of action `a` is the
/// Lagrange multiplier of its constraint `R(s,a) + gamma P_a^T v <= u*`
/// inside `q_a^{-1}`; normalized, these multipliers form the maximizing
/// player's equilibrium strategy. When the budget suffices to send every
/// action to its lowest reachable value, the multipliers vanish and the
/// actions with the largest such value share the weight instead. If no
/// constraint binds, the policy falls back to the nominal greedy action.
pub fn s_rect_policy(mdp: &TabularMdp, spec: &AmbiguitySpec, v: &[f64], eps: f64) -> Policy {
    let order = sorted_order(v);
    let probs = (0..mdp.num_states)
        .map(|s| {
            if let Some(row) = slack_edge_policy(mdp, spec, s, v, &order, eps) {
                return row;
            }
            let (_, u) = bisect_state(mdp, spec, s, v, &order, eps);
            let mut w: Vec<f64> = (0..mdp.num_actions)
                .map(|a| {
                    if mdp.gamma == 0.0 {
                        return 0.0;
                    }
                    let c = (u - mdp.rewards[s][a]) / mdp.gamma;
                    q_inverse_sorted(spec.kind, &mdp.transitions[s][a], v, &order, c).multiplier
                })
                .collect();
            if w.iter().any(|x| x.is_infinite()) {
                w = w
                    .iter()
                    .map(|x| if x.is_infinite() { 1.0 } else { 0.0 })
                    .collect();
            }
            let total: f64 = w.iter().sum();
            if total > 0.0 && total.is_finite() {
                w.iter().map(|x| x / total).collect()
            } else {
                let nominal: Vec<f64> = (0..mdp.num_actions)
                    .map(|a| mdp.rewards[s][a] + mdp.gamma * dot(&mdp.transitions[s][a], v))
                    .collect();
                let mut row = vec![0.0; mdp.num_actions];
                row[argmax(&nominal)] = 1.0;
                row
            }
        })
        .collect();
    Policy {
        kind: crate::mdp::PolicyKind::Stochastic,
        probs,
    }
}

/// Uniform policy over the actions maximizing `R(s,a) + gamma min_{P_a} v`
/// when that level is the state's optimum, i.e. when pushing every action
/// down to it stays within the budget.
fn slack_edge_policy(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    s: usize,
    v: &[f64],
    order: &[usize],
    eps: f64,
) -> Option<Vec<f64>> {
    if mdp.gamma == 0.0 {
        return None;
    }
    let lows: Vec<f64> = mdp.transitions[s]
        .iter()
        .map(|p| order.iter().find(|&&i| p[i] > 0.0).map_or(0.0, |&i| v[i]))
        .collect();
    let floors: Vec<f64> = (0..mdp.num_actions)
        .map(|a| mdp.rewards[s][a] + mdp.gamma * lows[a])
        .collect();
    let top = floors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spent: f64 = (0..mdp.num_actions)
        .map(|a| {
            let c = ((top - mdp.rewards[s][a]) / mdp.gamma).max(lows[a]);
            q_inverse_sorted(spec.kind, &mdp.transitions[s][a], v, order, c).divergence
        })
        .sum();
    if spent > mdp.num_actions as f64 * spec.rho {
        return None;
    }
    let ties: Vec<bool> = floors.iter().map(|&f| f >= top - eps).collect();
    let k = ties.iter().filter(|&&t| t).count() as f64;
    Some(
        ties.iter()
            .map(|&t| if t { 1.0 / k } else { 0.0 })
            .collect(),
    )
}

/// Fixed point of `T_r^pi` from `V_0 = 0`.
pub fn robust_policy_evaluation(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    pi: &Policy,
    tol: f64,
) -> Result<SolveReport> {
    spec.validate()?;
    pi.check_against(mdp)?;
    let threshold = stopping_threshold(tol, mdp.gamma);
    let max_iters = max_sweeps(tol, mdp.gamma);
    let mut v = vec![0.0; mdp.num_states];
    let mut residuals = Vec::new();
    for _ in 0..max_iters {
        let next = robust_bellman_policy(mdp, spec, pi, &v);
        let r = sup_dist(&next, &v);
        residuals.push(r);
        v = next;
        if r <= threshold {
            let q = (spec.rectangularity == Rectangularity::SA)
                .then(|| robust_bellman_q(mdp, spec, &v));
            return Ok(SolveReport {
                value: v,
                policy: Some(pi.clone()),
                q,
                iterations: residuals.len(),
                per_iteration_residuals: residuals,
                converged: true,
            });
        }
    }
    Err(Error::MaxItersExceeded {
        iterations: max_iters,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Dispatches to robust value iteration or bisection by rectangularity.
pub fn solve(
    mdp: &TabularMdp,
    spec: &AmbiguitySpec,
    max_iters: usize,
    tol: f64,
) -> Result<SolveReport> {
    match spec.rectangularity {
        Rectangularity::SA => robust_value_iteration(mdp, spec, max_iters, tol),
        Rectangularity::S => bisection_solve(mdp, spec, max_iters, tol),
    }
}

/// Deterministic greedy policy, ties to the smallest action index.
pub fn greedy_policy(q: &QFunction) -> Result<Policy> {
    let mut actions = Vec::with_capacity(q.len());
    for (s, row) in q.iter().enumerate() {
        if let Some(a) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteQ(s, a));
        }
        actions.push(argmax(row));
    }
    let na = q.first().map_or(0, Vec::len);
    Ok(Policy::deterministic(&actions, na))
}
