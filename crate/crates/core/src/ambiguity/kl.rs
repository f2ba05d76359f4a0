use super::quad::support;
use super::SaSolution;

/// Exponential tilt `q ∝ p exp(-beta (v - min v))` summarized by its
/// log-partition function and the first two moments of `v - min v`.
#[derive(Clone, Copy, Debug)]
pub(super) struct Tilt {
    pub beta: f64,
    pub log_z: f64,
    pub mean: f64,
    pub var: f64,
}

impl Tilt {
    pub fn divergence(&self) -> f64 {
        (-self.beta * self.mean - self.log_z).max(0.0)
    }
}

pub(super) fn tilt(p: &[f64], v: &[f64], order: &[usize], beta: f64) -> Tilt {
    let mut sup = support(p, order);
    let first = sup.next().expect("empty support");
    let vmin = v[first];
    let (mut z, mut s1, mut s2) = (p[first], 0.0, 0.0);
    for i in sup {
        let x = v[i] - vmin;
        let w = p[i] * (-beta * x).exp();
        z += w;
        s1 += w * x;
        s2 += w * x * x;
    }
    let mean = s1 / z;
    Tilt {
        beta,
        log_z: z.ln(),
        mean,
        var: (s2 / z - mean * mean).max(0.0),
    }
}

/// Center mass on the minimizers of `v`.
pub(super) fn argmin_mass(p: &[f64], v: &[f64], order: &[usize]) -> f64 {
    let mut sup = support(p, order).peekable();
    let vmin = v[*sup.peek().expect("empty support")];
    sup.take_while(|&i| v[i] == vmin).map(|i| p[i]).sum()
}

/// Root of an increasing function `h` on `(0, inf)` with `h(0+) < 0`, by
/// Newton steps safeguarded with bracketing. `f` returns `(h, h')`.
/// Gives up above `cap`, returning `None`.
pub(super) fn increasing_root<F: FnMut(f64) -> (f64, f64)>(
    mut f: F,
    x0: f64,
    cap: f64,
    abs_tol: f64,
) -> (Option<f64>, usize, f64) {
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut x = if x0.is_finite() && x0 > 0.0 {
        x0.min(cap)
    } else {
        1.0
    };
    let mut residual = f64::INFINITY;
    for it in 1..=400 {
        let (h, dh) = f(x);
        residual = h.abs();
        if residual <= abs_tol {
            return (Some(x), it, residual);
        }
        if h < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi.is_finite() && hi - lo <= 1e-15 * hi {
            return (Some(x), it, residual);
        }
        if lo >= cap {
            return (None, it, residual);
        }
        let newton = x - h / dh;
        if dh > 0.0 && (newton - x).abs() <= 1e-15 * x {
            return (Some(newton), it, residual);
        }
        x = if dh > 0.0 && newton > lo && newton < hi {
            newton
        } else if hi.is_finite() {
            if lo > 0.0 {
                (lo * hi).sqrt().clamp(lo, hi)
            } else {
                hi / 4.0
            }
        } else {
            (x * 4.0).min(cap.max(lo * 1.0001))
        };
        if x == lo || x == hi {
            x = 0.5 * (lo + hi);
        }
    }
    (Some(x), 400, residual)
}

pub(super) fn solve(p: &[f64], v: &[f64], order: &[usize], rho: f64) -> SaSolution {
    let first = support(p, order).next().expect("empty support");
    let vmin = v[first];
    let limit = SaSolution {
        value: vmin,
        dual: 0.0,
        k_index: 0,
        iterations: 0,
        residual: 0.0,
    };
    let p0 = argmin_mass(p, v, order);
    if rho >= -p0.ln() {
        return limit;
    }
    let t0 = tilt(p, v, order, 0.0);
    let range = support(p, order).map(|i| v[i] - vmin).fold(0.0, f64::max);
    let (beta, iterations, residual) = increasing_root(
        |b| {
            let t = tilt(p, v, order, b);
            (t.divergence() - rho, b * t.var)
        },
        (2.0 * rho / t0.var).sqrt(),
        1e13 / range,
        1e-15 * (1.0 + rho),
    );
    let Some(beta) = beta else {
        return SaSolution {
            iterations,
            residual,
            ..limit
        };
    };
    let t = tilt(p, v, order, beta);
    SaSolution {
        value: vmin - (rho + t.log_z) / beta,
        dual: 1.0 / beta,
        k_index: 0,
        iterations,
        residual,
    }
}

pub(super) fn worst_case(p: &[f64], v: &[f64], order: &[usize], lambda: f64) -> Vec<f64> {
    let mut q = vec![0.0; p.len()];
    let vmin = v[support(p, order).next().expect("empty support")];
    for i in support(p, order) {
        q[i] = if lambda > 0.0 {
            p[i] * (-(v[i] - vmin) / lambda).exp()
        } else if v[i] == vmin {
            p[i]
        } else {
            0.0
        };
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= total);
    q
}

/// Tilt solving `min KL(q || p)` subject to `q^T v <= c` for
/// `min v < c < p^T v`.
pub(super) fn inverse(p: &[f64], v: &[f64], order: &[usize], c: f64) -> (Tilt, usize) {
    let vmin = v[support(p, order).next().expect("empty support")];
    let target = c - vmin;
    let t0 = tilt(p, v, order, 0.0);
    let range = support(p, order).map(|i| v[i] - vmin).fold(0.0, f64::max);
    let (beta, iterations, _) = increasing_root(
        |b| {
            let t = tilt(p, v, order, b);
            (target - t.mean, t.var)
        },
        (t0.mean - target) / t0.var,
        1e13 / range,
        1e-15 * t0.mean,
    );
    let beta = beta.unwrap_or(1e13 / range);
    (tilt(p, v, order, beta), iterations)
}
