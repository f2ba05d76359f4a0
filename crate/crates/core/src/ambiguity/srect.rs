use super::kl::{self, increasing_root};
use super::quad::{self, support};
use super::Divergence;

/// Solution of one s-rectangular inner problem.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SRectSolution {
    pub value: f64,
    /// Per-action dual vector (L1, chi-square).
    pub eta: Vec<f64>,
    /// Scalar dual (KL).
    pub lambda: f64,
    /// Worst-case kernel, one row per action.
    pub q: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) fn s_solve_sorted(
    kind: Divergence,
    p_row: &[Vec<f64>],
    pi_s: &[f64],
    v: &[f64],
    order: &[usize],
    rho: f64,
) -> SRectSolution {
    match kind {
        Divergence::L1 => l1_greedy(p_row, pi_s, v, order, rho),
        Divergence::Chi2 => chi2(p_row, pi_s, v, order, rho),
        Divergence::Kl => kl_scalar(p_row, pi_s, v, order, rho),
    }
}

fn vmin(p: &[f64], v: &[f64], order: &[usize]) -> f64 {
    v[support(p, order).next().expect("empty support")]
}

fn argmin_rows(p_row: &[Vec<f64>], v: &[f64], order: &[usize]) -> Vec<Vec<f64>> {
    p_row
        .iter()
        .map(|p| {
            let m = vmin(p, v, order);
            let mut q: Vec<f64> = p
                .iter()
                .zip(v)
                .map(|(pi, vi)| if *pi > 0.0 && *vi == m { *pi } else { 0.0 })
                .collect();
            let total: f64 = q.iter().sum();
            q.iter_mut().for_each(|x| *x /= total);
            q
        })
        .collect()
}

fn primal(q: &[Vec<f64>], pi_s: &[f64], v: &[f64]) -> f64 {
    q.iter()
        .zip(pi_s)
        .map(|(row, w)| w * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Greedy mass transfer: moving a unit of mass of action `a` from state `d`
/// onto the action's lowest-valued state costs 2 units of L1 budget and lowers
/// the objective by `pi(a) (v(d) - min v)`.
fn l1_greedy(
    p_row: &[Vec<f64>],
    pi_s: &[f64],
    v: &[f64],
    order: &[usize],
    rho: f64,
) -> SRectSolution {
    let mut donors = Vec::new();
    let mut q: Vec<Vec<f64>> = p_row.to_vec();
    let mut mins = Vec::with_capacity(p_row.len());
    for (a, p) in p_row.iter().enumerate() {
        let m = support(p, order).next().expect("empty support");
        mins.push(m);
        if pi_s[a] > 0.0 {
            for d in support(p, order).filter(|&d| v[d] > v[m]) {
                donors.push((pi_s[a] * (v[d] - v[m]), a, d));
            }
        }
    }
    donors.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut budget = p_row.len() as f64 * rho / 2.0;
    let mut kappa = 0.0;
    for &(rate, a, d) in &donors {
        if budget <= 0.0 {
            break;
        }
        let moved = budget.min(p_row[a][d]);
        q[a][d] -= moved;
        q[a][mins[a]] += moved;
        budget -= moved;
        if budget <= 0.0 {
            kappa = rate;
        }
    }
    let eta: Vec<f64> = (0..p_row.len())
        .map(|a| pi_s[a] * v[mins[a]] + kappa)
        .collect();
    SRectSolution {
        value: primal(&q, pi_s, v),
        eta,
        lambda: 0.0,
        q,
        iterations: donors.len(),
        residual: 0.0,
    }
}

fn chi2(p_row: &[Vec<f64>], pi_s: &[f64], v: &[f64], order: &[usize], rho: f64) -> SRectSolution {
    let na = p_row.len();
    let budget = na as f64 * rho;
    let active: Vec<usize> = (0..na).filter(|&a| pi_s[a] > 0.0).collect();
    let dmax: f64 = active
        .iter()
        .map(|&a| 1.0 / kl::argmin_mass(&p_row[a], v, order) - 1.0)
        .sum();
    if budget >= dmax {
        let q = argmin_rows(p_row, v, order);
        let mut q_full: Vec<Vec<f64>> = p_row.to_vec();
        for &a in &active {
            q_full[a] = q[a].clone();
        }
        return SRectSolution {
            value: primal(&q_full, pi_s, v),
            eta: (0..na)
                .map(|a| pi_s[a] * vmin(&p_row[a], v, order))
                .collect(),
            lambda: 0.0,
            q: q_full,
            iterations: 0,
            residual: 0.0,
        };
    }
    let curvature: f64 = active
        .iter()
        .map(|&a| pi_s[a] * pi_s[a] * quad::tilt(&p_row[a], v, order, 0.0).active.var())
        .sum();
    let range = active
        .iter()
        .map(|&a| pi_s[a] * (v[order[order.len() - 1]] - vmin(&p_row[a], v, order)))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let (t, iterations, _) = increasing_root(
        |t| {
            let (mut h, mut dh) = (-budget, 0.0);
            for &a in &active {
                let tl = quad::tilt(&p_row[a], v, order, t * pi_s[a]);
                h += tl.divergence();
                dh += pi_s[a] * tl.slope();
            }
            (h, dh)
        },
        (4.0 * budget / curvature).sqrt(),
        1e13 / range,
        1e-15 * (1.0 + budget),
    );
    let t = t.unwrap_or(1e13 / range);
    let mut eta = Vec::with_capacity(na);
    let mut q = Vec::with_capacity(na);
    for a in 0..na {
        let tl = quad::tilt(&p_row[a], v, order, t * pi_s[a]);
        let m = vmin(&p_row[a], v, order);
        eta.push(2.0 / (tl.active.mass * t) + pi_s[a] * (tl.active.mean + m));
        q.push(tl.q(&p_row[a], v, order));
    }
    let value = primal(&q, pi_s, v);
    let residual =
        (super::s_dual_objective(Divergence::Chi2, p_row, pi_s, v, rho, &eta) - value).abs();
    SRectSolution {
        value,
        eta,
        lambda: 0.0,
        q,
        iterations,
        residual,
    }
}

fn kl_scalar(
    p_row: &[Vec<f64>],
    pi_s: &[f64],
    v: &[f64],
    order: &[usize],
    rho: f64,
) -> SRectSolution {
    let na = p_row.len();
    let budget = na as f64 * rho;
    let active: Vec<usize> = (0..na).filter(|&a| pi_s[a] > 0.0).collect();
    let base: f64 = active
        .iter()
        .map(|&a| pi_s[a] * vmin(&p_row[a], v, order))
        .sum();
    let dmax: f64 = active
        .iter()
        .map(|&a| -kl::argmin_mass(&p_row[a], v, order).ln())
        .sum();
    let limit = |iterations, residual| {
        let q = argmin_rows(p_row, v, order);
        let q_full = (0..na)
            .map(|a| {
                if pi_s[a] > 0.0 {
                    q[a].clone()
                } else {
                    p_row[a].clone()
                }
            })
            .collect();
        SRectSolution {
            value: base,
            eta: Vec::new(),
            lambda: 0.0,
            q: q_full,
            iterations,
            residual,
        }
    };
    if budget >= dmax {
        return limit(0, 0.0);
    }
    let curvature: f64 = active
        .iter()
        .map(|&a| pi_s[a] * pi_s[a] * kl::tilt(&p_row[a], v, order, 0.0).var)
        .sum();
    let range = active
        .iter()
        .map(|&a| pi_s[a] * (v[order[order.len() - 1]] - vmin(&p_row[a], v, order)))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let (beta, iterations, residual) = increasing_root(
        |b| {
            let (mut h, mut dh) = (-budget, 0.0);
            for &a in &active {
                let mu = b * pi_s[a];
                let tl = kl::tilt(&p_row[a], v, order, mu);
                h += tl.divergence();
                dh += pi_s[a] * mu * tl.var;
            }
            (h, dh)
        },
        (2.0 * budget / curvature).sqrt(),
        1e13 / range,
        1e-15 * (1.0 + budget),
    );
    let Some(beta) = beta else {
        return limit(iterations, residual);
    };
    let mut log_z = 0.0;
    let mut q = Vec::with_capacity(na);
    for a in 0..na {
        let mu = beta * pi_s[a];
        log_z += kl::tilt(&p_row[a], v, order, mu).log_z;
        q.push(kl::worst_case(
            &p_row[a],
            v,
            order,
            if mu > 0.0 { 1.0 / mu } else { f64::INFINITY },
        ));
    }
    SRectSolution {
        value: base - (budget + log_z) / beta,
        eta: Vec::new(),
        lambda: 1.0 / beta,
        q,
        iterations,
        residual,
    }
}
