//! Test-side oracles and instance generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_mdp::Divergence;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Contribution `p f(q/p)` of one coordinate.
pub fn phi(kind: Divergence, p: f64, q: f64) -> f64 {
    match kind {
        Divergence::L1 => (q - p).abs(),
        Divergence::Chi2 => (q - p) * (q - p) / p,
        Divergence::Kl => {
            if q > 0.0 {
                q * (q / p).ln()
            } else {
                0.0
            }
        }
    }
}

/// Smallest total divergence of coordinates with center mass `total` when
/// they must carry mass `m` (proportional allocation).
fn phi_rest(kind: Divergence, total: f64, m: f64) -> f64 {
    phi(kind, total, m)
}

fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut best = f(lo).min(f(hi)).min(f1).min(f2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
            best = best.min(f1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
            best = best.min(f2);
        }
    }
    best
}

/// Largest `x` in `[a, b]` (or smallest, when `toward_a`) with `ok(x)`, given
/// `ok` holds at `b` (resp. `a`) and the feasible set is an interval.
fn interval_end<F: Fn(f64) -> bool>(ok: F, inside: f64, outside: f64) -> f64 {
    if ok(outside) {
        return outside;
    }
    let (mut i, mut o) = (inside, outside);
    for _ in 0..60 {
        let mid = 0.5 * (i + o);
        if ok(mid) {
            i = mid;
        } else {
            o = mid;
        }
    }
    i
}

/// `min sum_i q_i v_i` over coordinates `k..` with `sum q = m` and
/// `sum p_i f(q_i / p_i) <= budget`, by nested exhaustive line searches.
fn nested(kind: Divergence, p: &[f64], v: &[f64], k: usize, m: f64, budget: f64) -> f64 {
    let n = p.len();
    if k == n - 1 {
        return if phi(kind, p[k], m) <= budget + 1e-12 {
            m * v[k]
        } else {
            f64::INFINITY
        };
    }
    let rest: f64 = p[k + 1..].iter().sum();
    let load = |x: f64| phi(kind, p[k], x) + phi_rest(kind, rest, m - x);
    let ok = |x: f64| load(x) <= budget;
    let center = m * p[k] / (p[k] + rest);
    if !ok(center) {
        return f64::INFINITY;
    }
    let lo = interval_end(ok, center, 0.0);
    let hi = interval_end(ok, center, m);
    let f = |x: f64| x * v[k] + nested(kind, p, v, k + 1, m - x, budget - phi(kind, p[k], x));
    if k == n - 2 {
        // the last two coordinates make the objective linear in x
        return f(lo).min(f(hi)).min(f(center));
    }
    golden_min(f, lo, hi, 70)
}

/// Brute-force worst-case expectation over the (s,a)-rectangular ball.
pub fn sa_oracle(kind: Divergence, p: &[f64], v: &[f64], rho: f64) -> f64 {
    let (ps, vs): (Vec<f64>, Vec<f64>) = p
        .iter()
        .zip(v)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(a, b)| (*a, *b))
        .unzip();
    if ps.len() == 1 {
        return vs[0];
    }
    nested(kind, &ps, &vs, 0, 1.0, rho)
}

/// Brute-force s-rectangular worst case: the best split of the summed budget
/// across actions, each action solved by [`sa_oracle`].
pub fn s_oracle(kind: Divergence, p_row: &[Vec<f64>], pi: &[f64], v: &[f64], rho: f64) -> f64 {
    let budget = p_row.len() as f64 * rho;
    split(kind, p_row, pi, v, budget)
}

fn split(kind: Divergence, p_row: &[Vec<f64>], pi: &[f64], v: &[f64], budget: f64) -> f64 {
    let value = |a: usize, b: f64| {
        if pi[a] == 0.0 {
            0.0
        } else if b <= 0.0 {
            pi[a] * p_row[a].iter().zip(v).map(|(x, y)| x * y).sum::<f64>()
        } else {
            pi[a] * sa_oracle(kind, &p_row[a], v, b)
        }
    };
    if p_row.len() == 1 {
        return value(0, budget);
    }
    let rest_p = &p_row[1..];
    let rest_pi = &pi[1..];
    golden_min(
        |b0| value(0, b0) + split(kind, rest_p, rest_pi, v, budget - b0),
        0.0,
        budget,
        60,
    )
}

/// Minimal divergence with `q^T v <= c`, by bisection on the radius of
/// [`sa_oracle`].
pub fn q_inverse_oracle(kind: Divergence, p: &[f64], v: &[f64], c: f64) -> f64 {
    let nominal: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
    if c >= nominal {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while sa_oracle(kind, p, v, hi) > c {
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if sa_oracle(kind, p, v, mid) <= c {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Minimum over a regular simplex grid of step `1/steps`.
pub fn grid_min(kind: Divergence, p: &[f64], v: &[f64], rho: f64, steps: usize) -> f64 {
    fn rec(
        kind: Divergence,
        p: &[f64],
        v: &[f64],
        rho: f64,
        steps: usize,
        left: usize,
        acc: (f64, f64),
        best: &mut f64,
    ) {
        let k = p.len();
        if k == 1 {
            let q = left as f64 / steps as f64;
            if p[0] == 0.0 && q > 0.0 {
                return;
            }
            let d = acc.0 + if p[0] > 0.0 { phi(kind, p[0], q) } else { 0.0 };
            if d <= rho {
                *best = best.min(acc.1 + q * v[0]);
            }
            return;
        }
        for i in 0..=left {
            let q = i as f64 / steps as f64;
            if p[0] == 0.0 && i > 0 {
                break;
            }
            let d = if p[0] > 0.0 { phi(kind, p[0], q) } else { 0.0 };
            rec(
                kind,
                &p[1..],
                &v[1..],
                rho,
                steps,
                left - i,
                (acc.0 + d, acc.1 + q * v[0]),
                best,
            );
        }
    }
    let mut best = f64::INFINITY;
    rec(kind, p, v, rho, steps, steps, (0.0, 0.0), &mut best);
    best
}

/// Random probability vector of length `n`, occasionally with zero entries.
pub fn random_dist(rng: &mut ChaCha8Rng, n: usize, sparse: bool) -> Vec<f64> {
    loop {
        let mut p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if sparse {
            for x in p.iter_mut() {
                if rng.random::<f64>() < 0.2 {
                    *x = 0.0;
                }
            }
        }
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|x| *x /= total);
            return p;
        }
    }
}

pub fn random_values(rng: &mut ChaCha8Rng, n: usize, vmax: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * vmax).collect()
}

pub fn random_radius(rng: &mut ChaCha8Rng, kind: Divergence) -> f64 {
    match kind {
        Divergence::L1 => 0.02 + 1.9 * rng.random::<f64>(),
        _ => (rng.random::<f64>() * 6.0 - 4.0).exp2() * 0.5,
    }
}
