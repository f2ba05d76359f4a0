//! Closed-form finite-sample bounds, order-only lower bounds, the
//! robust/non-robust gap bound and the hard-instance family.

use serde::{Deserialize, Serialize};

use crate::ambiguity::{chi2_scale, Divergence, Rectangularity};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    Generative,
    Offline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub kind: Divergence,
    #[serde(rename = "rect")]
    pub rectangularity: Rectangularity,
    pub data_mode: DataMode,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub rho: f64,
    /// Samples per cell (generative) or dataset size (offline).
    pub n: usize,
    pub delta: f64,
    /// Smallest positive entry of the true kernel (KL only).
    #[serde(default)]
    pub p_underbar: Option<f64>,
    /// Smallest positive behavior probability (offline only).
    #[serde(default)]
    pub nu_min: Option<f64>,
}

impl BoundQuery {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.num_states == 0 || self.num_actions == 0 || self.n == 0 {
            return bad("sizes and n must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::BadGamma(self.gamma));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if self.p_underbar.is_some_and(|p| !(p > 0.0 && p <= 1.0)) {
            return bad("p_underbar must lie in (0, 1]");
        }
        if self.nu_min.is_some_and(|p| !(p > 0.0 && p <= 1.0)) {
            return bad("nu_min must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Upper bound on `max_pi V_r^pi(mu) - V_r^{pi_hat}(mu)` holding with
/// probability `1 - delta`.
pub fn upper_bound_eps(q: &BoundQuery) -> Result<f64> {
    q.validate()?;
    let s = q.num_states as f64;
    let a = q.num_actions as f64;
    let (g, rho, n, delta) = (q.gamma, q.rho, q.n as f64, q.delta);
    let horizon = (1.0 - g).powi(2);
    let offline = q.data_mode == DataMode::Offline;
    let root_n = if offline {
        (n * q.nu_min.ok_or(Error::MissingParameter("nu_min"))?).sqrt()
    } else {
        n.sqrt()
    };
    let p = match q.kind {
        Divergence::Kl => q.p_underbar.ok_or(Error::MissingParameter("p_underbar"))?,
        _ => f64::NAN,
    };
    let c = chi2_scale(rho);
    let ln = f64::ln;
    let value = match (q.rectangularity, q.kind) {
        (Rectangularity::SA, Divergence::L1) => {
            let inner = (1.0 + 2.0 * (2.0 + rho) * (2.0 * n).sqrt()).powi(2);
            let lead = if offline { 8.0 } else { 4.0 };
            let denom = if offline { root_n } else { (2.0 * n).sqrt() };
            2.0 * (2.0 + rho) * g * s.sqrt() / (rho * horizon * denom)
                * (2.0 + ln(lead * s * a * a * inner / (delta * (2.0 + rho))).sqrt())
        }
        (Rectangularity::SA, Divergence::Chi2) => {
            let inner = (1.0 + (c + 3.0) * n.sqrt()).powi(2);
            let lead = if offline { 4.0 } else { 2.0 };
            2.0 * c * c * g * s.sqrt() / ((c - 1.0) * horizon * root_n)
                * (4.0 + (2.0 * ln(lead * s * a * a * inner / (delta * c * c))).sqrt())
        }
        (Rectangularity::SA, Divergence::Kl) => {
            let log = ln(2.0 * s * s * a * a * (1.0 + rho * p * n.sqrt()) / delta);
            let tail = if offline {
                (2.0 * log).sqrt()
            } else {
                log.sqrt()
            };
            4.0 * g * s.sqrt() / (rho * horizon * p * root_n) * (1.0 + tail)
        }
        (Rectangularity::S, Divergence::L1) => {
            let denom = if offline { root_n } else { (2.0 * n).sqrt() };
            let inner = (1.0 + 2.0 * (2.0 * n).sqrt() * (rho + 4.0)).powi(3);
            2.0 * g * (2.0 + rho) * (s * a).sqrt() / (rho * horizon * denom)
                * (4.0 + ln(2.0 * s * inner / delta).sqrt())
        }
        (Rectangularity::S, Divergence::Chi2) => {
            let inner = (1.0 + 8.0 * n.sqrt() * c).powi(3);
            2.0 * g * c * c * (s * a * a).sqrt() / ((c - 1.0) * horizon * root_n)
                * (6.0 + (2.0 * ln(2.0 * s * inner / delta)).sqrt())
        }
        (Rectangularity::S, Divergence::Kl) => {
            let log = ln(2.0 * s * s * a * (1.0 + 4.0 * rho * p * n.sqrt()) / delta);
            4.0 * g * (s * a).sqrt() / (rho * p * horizon * root_n) * (2.0 + (2.0 * log).sqrt())
        }
    };
    Ok(value)
}

/// Order-only lower bound on the total sample size (constant 1).
pub fn lower_bound_samples(
    kind: Divergence,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    rho: f64,
    eps: f64,
) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadGamma(gamma));
    }
    if !(rho > 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument(
            "rho and eps must be positive".into(),
        ));
    }
    let sa = (num_states * num_actions) as f64;
    let h = 1.0 - gamma;
    match kind {
        Divergence::L1 => Ok(sa * h / (eps * eps) * (1.0 / h.powi(4)).min(1.0 / rho.powi(4))),
        Divergence::Chi2 => Ok(sa / (eps * eps * h * h) * (1.0 / h).min(1.0 / rho)),
        Divergence::Kl => Err(Error::UnsupportedKind(kind)),
    }
}

/// `h(rho)` with `||p - q||_1 <= h(D_f(p || q))`.
pub fn total_variation_envelope(kind: Divergence, rho: f64) -> f64 {
    match kind {
        Divergence::L1 => rho,
        Divergence::Chi2 => rho.sqrt(),
        Divergence::Kl => (2.0 * rho).sqrt(),
    }
}

/// Bound on `||V_r^pi - V^pi||_inf`.
pub fn gap_bound(
    kind: Divergence,
    rectangularity: Rectangularity,
    rho: f64,
    gamma: f64,
    num_actions: usize,
) -> f64 {
    let base = gamma * total_variation_envelope(kind, rho) / (1.0 - gamma).powi(2);
    match rectangularity {
        Rectangularity::SA => base,
        Rectangularity::S => num_actions as f64 * base,
    }
}

/// Worst-case self-loop probability `g(p) = inf q` over the two-point ball,
/// clamped at 0.
pub fn hard_instance_loop(kind: Divergence, p: f64, rho: f64) -> Result<f64> {
    match kind {
        Divergence::L1 => Ok((p - rho / 2.0).max(0.0)),
        Divergence::Chi2 => Ok((p - (rho * p * (1.0 - p)).sqrt()).max(0.0)),
        Divergence::Kl => Err(Error::UnsupportedKind(kind)),
    }
}

/// Robust value `1 / (1 - gamma g(p))` of the loop state.
pub fn hard_instance_value(kind: Divergence, p: f64, gamma: f64, rho: f64) -> Result<f64> {
    Ok(1.0 / (1.0 - gamma * hard_instance_loop(kind, p, rho)?))
}

/// Lower-bound construction. With one block and one action this is the
/// 2-state chain: `z0` (reward 1) loops with probability `p` and otherwise
/// moves to the absorbing `z1` (reward 0). Otherwise each block `i` has a
/// root `z(i)` (reward 0) whose action `j` leads to its own chain
/// `z0(i,j) -> z1(i,j)`; chain states ignore the action. States are laid out
/// block by block as `z(i), z0(i,0), z1(i,0), z0(i,1), ...`.
pub fn hard_instance(p: f64, gamma: f64, blocks: usize, actions: usize) -> Result<TabularMdp> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument("p must lie in (0, 1)".into()));
    }
    if blocks == 0 || actions == 0 {
        return Err(Error::InvalidArgument(
            "blocks and actions must be positive".into(),
        ));
    }
    if blocks == 1 && actions == 1 {
        return TabularMdp::new(
            vec![vec![1.0], vec![0.0]],
            vec![vec![vec![p, 1.0 - p]], vec![vec![0.0, 1.0]]],
            gamma,
            vec![],
        );
    }
    let per_block = 1 + 2 * actions;
    let ns = blocks * per_block;
    let mut rewards = vec![vec![0.0; actions]; ns];
    let mut transitions = vec![vec![vec![0.0; ns]; actions]; ns];
    for i in 0..blocks {
        let root = i * per_block;
        for j in 0..actions {
            let z0 = root + 1 + 2 * j;
            let z1 = z0 + 1;
            transitions[root][j][z0] = 1.0;
            rewards[z0] = vec![1.0; actions];
            for a in 0..actions {
                transitions[z0][a][z0] = p;
                transitions[z0][a][z1] = 1.0 - p;
                transitions[z1][a][z1] = 1.0;
            }
        }
    }
    TabularMdp::new(rewards, transitions, gamma, vec![])
}
