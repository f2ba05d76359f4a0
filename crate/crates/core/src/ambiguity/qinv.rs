use super::quad::support;
use super::{kl, quad, sorted_order, Divergence};

/// Minimal divergence to reach a target expectation, with the Lagrange
/// multiplier of the expectation constraint (the negative slope of the
/// divergence in the target).
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct QInverse {
    pub divergence: f64,
    pub multiplier: f64,
}

const INFEASIBLE: QInverse = QInverse {
    divergence: f64::INFINITY,
    multiplier: f64::INFINITY,
};

/// `min D_f(q || p)` subject to `q^T v <= c`, `q << p`.
pub(crate) fn q_inverse_sorted(
    kind: Divergence,
    p: &[f64],
    v: &[f64],
    order: &[usize],
    c: f64,
) -> QInverse {
    let vmin = v[support(p, order).next().expect("empty support")];
    let nominal: f64 = support(p, order).map(|i| p[i] * v[i]).sum();
    if c >= nominal {
        return QInverse {
            divergence: 0.0,
            multiplier: 0.0,
        };
    }
    if c < vmin {
        return INFEASIBLE;
    }
    if c == vmin {
        let p0 = kl::argmin_mass(p, v, order);
        let divergence = match kind {
            Divergence::L1 => 2.0 * (1.0 - p0),
            Divergence::Chi2 => 1.0 / p0 - 1.0,
            Divergence::Kl => -p0.ln(),
        };
        return QInverse {
            divergence,
            multiplier: f64::INFINITY,
        };
    }
    match kind {
        Divergence::L1 => {
            let mut needed = nominal - c;
            let mut moved = 0.0;
            let sup: Vec<usize> = support(p, order).collect();
            for &d in sup.iter().rev() {
                let gain = v[d] - vmin;
                if gain <= 0.0 {
                    break;
                }
                let full = p[d] * gain;
                if full >= needed {
                    moved += needed / gain;
                    return QInverse {
                        divergence: 2.0 * moved,
                        multiplier: 2.0 / gain,
                    };
                }
                moved += p[d];
                needed -= full;
            }
            QInverse {
                divergence: 2.0 * moved,
                multiplier: f64::INFINITY,
            }
        }
        Divergence::Chi2 => {
            let t = quad::inverse(p, v, order, c);
            QInverse {
                divergence: t.divergence(),
                multiplier: t.mu,
            }
        }
        Divergence::Kl => {
            let (t, _) = kl::inverse(p, v, order, c);
            QInverse {
                divergence: t.divergence(),
                multiplier: t.beta,
            }
        }
    }
}

/// Minimal divergence from `p_hat` needed so that `r + gamma P^T v <= u`;
/// `f64::INFINITY` when no `P << p_hat` achieves it.
pub fn q_inverse(kind: Divergence, p_hat: &[f64], r: f64, gamma: f64, v: &[f64], u: f64) -> f64 {
    if gamma == 0.0 {
        return if u >= r { 0.0 } else { f64::INFINITY };
    }
    let order = sorted_order(v);
    q_inverse_sorted(kind, p_hat, v, &order, (u - r) / gamma).divergence
}
