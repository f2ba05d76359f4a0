use super::{chi2_scale, SaSolution};

/// Weighted running moments of the values of a prefix of the sorted support.
#[derive(Clone, Copy, Debug, Default)]
pub(super) struct Moments {
    pub mass: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, w: f64, x: f64) {
        let mass = self.mass + w;
        let delta = x - self.mean;
        self.mean += w * delta / mass;
        self.m2 += w * delta * (x - self.mean);
        self.mass = mass;
    }

    pub fn var(&self) -> f64 {
        (self.m2 / self.mass).max(0.0)
    }
}

/// Support of `p` in ascending value order.
pub(super) fn support<'a>(p: &'a [f64], order: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
    order.iter().copied().filter(move |&i| p[i] > 0.0)
}

pub(super) fn solve(p: &[f64], v: &[f64], order: &[usize], rho: f64) -> SaSolution {
    let sup: Vec<usize> = support(p, order).collect();
    let vmin = v[sup[0]];
    if sup.len() == 1 {
        return SaSolution {
            value: vmin,
            dual: vmin,
            k_index: 0,
            iterations: 0,
            residual: 0.0,
        };
    }
    let mut mom = Moments::default();
    let mut eta = 0.0;
    let mut closed = None;
    let mut active = sup.len();
    let mut tail: Vec<f64> = sup
        .iter()
        .rev()
        .scan(0.0, |t, &i| {
            let out = *t;
            *t += p[i];
            Some(out)
        })
        .collect();
    tail.reverse();
    for (k, &i) in sup.iter().enumerate() {
        let x = v[i] - vmin;
        mom.push(p[i], x);
        let next = sup.get(k + 1).map_or(f64::INFINITY, |&j| v[j] - vmin);
        if next == x {
            continue;
        }
        let kp = rho * mom.mass - tail[k];
        if kp <= 0.0 {
            continue;
        }
        let shift = mom.mean + (mom.var() / kp).sqrt();
        let cand = shift.max(x);
        if cand <= next {
            if shift >= x {
                closed = Some(vmin + mom.mean - (mom.var() * kp).sqrt());
            }
            eta = cand;
            active = k + 1;
            break;
        }
    }
    let (mut s, mut lin) = (0.0, 0.0);
    for &i in &sup[..active] {
        let t = (eta - (v[i] - vmin)).max(0.0);
        s += p[i] * t * t;
        lin += p[i] * t;
    }
    let c = chi2_scale(rho);
    let root = s.sqrt();
    let residual = if root > 0.0 {
        (c * lin / root - 1.0).abs()
    } else {
        0.0
    };
    SaSolution {
        value: closed.unwrap_or(vmin + eta - c * root),
        dual: vmin + eta,
        k_index: active,
        iterations: active,
        residual,
    }
}

pub(super) fn worst_case(p: &[f64], v: &[f64], order: &[usize], rho: f64, eta: f64) -> Vec<f64> {
    let mut q = vec![0.0; p.len()];
    let s: f64 = support(p, order)
        .map(|i| p[i] * (eta - v[i]).max(0.0).powi(2))
        .sum();
    if s > 0.0 {
        let c = chi2_scale(rho) / s.sqrt();
        for i in support(p, order) {
            q[i] = c * p[i] * (eta - v[i]).max(0.0);
        }
    } else {
        for i in support(p, order).filter(|&i| v[i] <= eta) {
            q[i] = p[i];
        }
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= total);
    q
}

/// Minimizer of `chi2(q || p) + mu q^T v` over the simplex, summarized by the
/// moments of its active prefix.
#[derive(Clone, Copy, Debug)]
pub(super) struct Tilt {
    pub mu: f64,
    pub active: Moments,
    /// Number of support states carrying mass.
    pub len: usize,
}

impl Tilt {
    pub fn divergence(&self) -> f64 {
        let a = &self.active;
        (1.0 / a.mass + self.mu * self.mu * a.mass * a.var() / 4.0 - 1.0).max(0.0)
    }

    /// Derivative of the divergence in `mu`.
    pub fn slope(&self) -> f64 {
        self.mu * self.active.mass * self.active.var() / 2.0
    }

    pub fn q(&self, p: &[f64], v: &[f64], order: &[usize]) -> Vec<f64> {
        let mut q = vec![0.0; p.len()];
        let sup: Vec<usize> = support(p, order).collect();
        let vmin = v[sup[0]];
        let a = &self.active;
        for &i in &sup[..self.len] {
            q[i] = p[i] * (1.0 / a.mass + self.mu * (a.mean - (v[i] - vmin)) / 2.0).max(0.0);
        }
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|x| *x /= total);
        q
    }
}

pub(super) fn tilt(p: &[f64], v: &[f64], order: &[usize], mu: f64) -> Tilt {
    let sup: Vec<usize> = support(p, order).collect();
    let vmin = v[sup[0]];
    let mut mom = Moments::default();
    for (k, &i) in sup.iter().enumerate() {
        mom.push(p[i], v[i] - vmin);
        let stop = match sup.get(k + 1) {
            None => true,
            Some(&j) => 1.0 / mom.mass + mu * (mom.mean - (v[j] - vmin)) / 2.0 <= 0.0,
        };
        if stop {
            return Tilt {
                mu,
                active: mom,
                len: k + 1,
            };
        }
    }
    unreachable!("support is non-empty")
}

/// Exact solution of `min chi2(q || p)` subject to `q^T v <= c` for
/// `min v < c < p^T v`, walking the active prefixes from the full support down.
/// Returns the tilt at the optimal multiplier.
pub(super) fn inverse(p: &[f64], v: &[f64], order: &[usize], c: f64) -> Tilt {
    let sup: Vec<usize> = support(p, order).collect();
    let vmin = v[sup[0]];
    let target = c - vmin;
    let mut prefix = Vec::with_capacity(sup.len());
    let mut mom = Moments::default();
    for &i in &sup {
        mom.push(p[i], v[i] - vmin);
        prefix.push(mom);
    }
    let mut len = sup.len();
    let mut mu_enter = 0.0;
    loop {
        let a = prefix[len - 1];
        let top = v[sup[len - 1]] - vmin;
        let spread = a.mass * a.var();
        let mu = if spread > 0.0 {
            2.0 * (a.mean - target) / spread
        } else {
            mu_enter
        };
        let exit = if top > a.mean {
            2.0 / (a.mass * (top - a.mean))
        } else {
            f64::INFINITY
        };
        if mu <= exit || len == 1 {
            return Tilt {
                mu: mu.max(mu_enter),
                active: a,
                len,
            };
        }
        mu_enter = exit;
        let top_value = v[sup[len - 1]];
        while len > 1 && v[sup[len - 1]] == top_value {
            len -= 1;
        }
    }
}
