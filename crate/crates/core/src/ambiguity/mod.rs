//! Worst-case expectations over f-divergence balls.
//!
//! For a center distribution `p` and a value vector `v` the support function
//! is `inf { q^T v : D_f(q || p) <= rho, q << p }`. Each (kind, rectangularity)
//! pair has its own solver:
//!
//! * L1, (s,a): exact sorted-threshold solution.
//! * chi-square, (s,a): exact scan over the active prefix of the sorted support.
//! * KL, (s,a): root of the monotone dual derivative in the inverse temperature.
//! * s-rectangular sets: per-action exponential or quadratic tilts coupled by
//!   one scalar multiplier on the shared budget, or exact greedy mass transfer
//!   for L1.

mod kl;
mod l1;
mod qinv;
mod quad;
mod srect;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use qinv::q_inverse;
pub(crate) use qinv::q_inverse_sorted;
pub(crate) use srect::s_solve_sorted;

/// Slack allowed on the divergence budget of recovered worst cases.
pub const BUDGET_SLACK: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    L1,
    Chi2,
    Kl,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Divergence::L1 => "l1",
            Divergence::Chi2 => "chi2",
            Divergence::Kl => "kl",
        })
    }
}

impl std::str::FromStr for Divergence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Divergence::L1),
            "chi2" => Ok(Divergence::Chi2),
            "kl" => Ok(Divergence::Kl),
            _ => Err(Error::InvalidArgument(format!("unknown divergence {s}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rectangularity {
    #[serde(rename = "sa")]
    SA,
    #[serde(rename = "s")]
    S,
}

impl fmt::Display for Rectangularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rectangularity::SA => "sa",
            Rectangularity::S => "s",
        })
    }
}

impl std::str::FromStr for Rectangularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sa" => Ok(Rectangularity::SA),
            "s" => Ok(Rectangularity::S),
            _ => Err(Error::InvalidArgument(format!(
                "unknown rectangularity {s}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySpec {
    pub kind: Divergence,
    pub rho: f64,
    #[serde(rename = "rect")]
    pub rectangularity: Rectangularity,
}

impl AmbiguitySpec {
    pub fn new(kind: Divergence, rho: f64, rectangularity: Rectangularity) -> Result<Self> {
        let spec = AmbiguitySpec {
            kind,
            rho,
            rectangularity,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if self.kind == Divergence::L1 && self.rho >= 2.0 {
            return Err(Error::InvalidSpec(format!(
                "L1 radius must be below 2, got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// `sqrt(1 + rho)`, the chi-square dual scale.
pub fn chi2_scale(rho: f64) -> f64 {
    (1.0 + rho).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub value: f64,
    pub eta: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseDistribution {
    /// One row for (s,a) sets, one row per action for s-rectangular sets.
    pub q: Vec<Vec<f64>>,
    pub divergence: f64,
}

/// `D_f(q || p)`; infinite when `q` puts mass outside the support of `p`.
pub fn divergence(kind: Divergence, q: &[f64], p: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if pi <= 0.0 {
            if qi > 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        d += match kind {
            Divergence::L1 => (qi - pi).abs(),
            Divergence::Chi2 => (qi - pi) * (qi - pi) / pi,
            Divergence::Kl => {
                if qi > 0.0 {
                    qi * (qi / pi).ln()
                } else {
                    0.0
                }
            }
        };
    }
    d.max(0.0)
}

/// Support states ordered by ascending value, ties by index.
pub fn sorted_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
    order
}

/// Solution of one (s,a)-rectangular inner problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct SaSolution {
    pub value: f64,
    /// `eta*` for L1 and chi-square, `lambda*` for KL.
    pub dual: f64,
    /// Position in the sorted support of the L1 threshold state.
    pub k_index: usize,
    pub iterations: usize,
    pub residual: f64,
}

fn check_dist(p: &[f64], v: &[f64]) -> Result<()> {
    if p.len() != v.len() || p.is_empty() {
        return Err(Error::DimensionMismatch("p and v lengths differ".into()));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "p is not a probability vector".into(),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("v has non-finite entries".into()));
    }
    Ok(())
}

fn check_rho(kind: Divergence, rho: f64) -> Result<()> {
    AmbiguitySpec::new(kind, rho, Rectangularity::SA).map(|_| ())
}

pub(crate) fn sa_solve_sorted(
    kind: Divergence,
    p: &[f64],
    v: &[f64],
    order: &[usize],
    rho: f64,
) -> SaSolution {
    match kind {
        Divergence::L1 => l1::solve(p, v, order, rho),
        Divergence::Chi2 => quad::solve(p, v, order, rho),
        Divergence::Kl => kl::solve(p, v, order, rho),
    }
}

pub(crate) fn sa_worst_case_sorted(
    kind: Divergence,
    p: &[f64],
    v: &[f64],
    order: &[usize],
    rho: f64,
    sol: &SaSolution,
) -> Vec<f64> {
    match kind {
        Divergence::L1 => l1::worst_case(p, order, rho, sol.k_index),
        Divergence::Chi2 => quad::worst_case(p, v, order, rho, sol.dual),
        Divergence::Kl => kl::worst_case(p, v, order, sol.dual),
    }
}

/// Worst-case expectation of `v` over the (s,a)-rectangular ball around `p`.
pub fn sa_support_inf(kind: Divergence, p: &[f64], v: &[f64], rho: f64) -> Result<DualSolution> {
    check_dist(p, v)?;
    check_rho(kind, rho)?;
    let order = sorted_order(v);
    let sol = sa_solve_sorted(kind, p, v, &order, rho);
    if !sol.value.is_finite() {
        return Err(Error::NumericalFailure(sol.residual));
    }
    let (eta, lambda) = match kind {
        Divergence::Kl => (None, Some(sol.dual)),
        _ => (Some(vec![sol.dual]), None),
    };
    Ok(DualSolution {
        value: sol.value,
        eta,
        lambda,
        iterations: sol.iterations,
        residual: sol.residual,
        warning: None,
    })
}

pub fn sa_worst_case(
    kind: Divergence,
    p: &[f64],
    v: &[f64],
    rho: f64,
) -> Result<WorstCaseDistribution> {
    check_dist(p, v)?;
    check_rho(kind, rho)?;
    let order = sorted_order(v);
    let sol = sa_solve_sorted(kind, p, v, &order, rho);
    let q = sa_worst_case_sorted(kind, p, v, &order, rho, &sol);
    let d = divergence(kind, &q, p);
    if !(d <= rho + BUDGET_SLACK) {
        return Err(Error::NumericalFailure(d - rho));
    }
    Ok(WorstCaseDistribution {
        q: vec![q],
        divergence: d,
    })
}

/// Exact L1 solution: `(value, eta*, K)` with `K` a 1-based position in the
/// ascending order of the support.
pub fn l1_sorted_threshold(p: &[f64], v: &[f64], rho: f64) -> Result<(f64, f64, usize)> {
    check_dist(p, v)?;
    check_rho(Divergence::L1, rho)?;
    let order = sorted_order(v);
    let sol = l1::solve(p, v, &order, rho);
    Ok((sol.value, sol.dual, sol.k_index + 1))
}

fn check_s_inputs(p_row: &[Vec<f64>], pi_s: &[f64], v: &[f64]) -> Result<()> {
    if p_row.len() != pi_s.len() || p_row.is_empty() {
        return Err(Error::DimensionMismatch("one center row per action".into()));
    }
    for p in p_row {
        check_dist(p, v)?;
    }
    let sum: f64 = pi_s.iter().sum();
    if pi_s.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "pi_s is not a probability vector".into(),
        ));
    }
    Ok(())
}

/// Worst-case value of `sum_a pi(a) P_a^T v` over the s-rectangular set with
/// summed budget `|A| rho`.
pub fn s_support_inf(
    kind: Divergence,
    p_row: &[Vec<f64>],
    pi_s: &[f64],
    v: &[f64],
    rho: f64,
) -> Result<DualSolution> {
    check_s_inputs(p_row, pi_s, v)?;
    check_rho(kind, rho)?;
    let order = sorted_order(v);
    let sol = s_solve_sorted(kind, p_row, pi_s, v, &order, rho);
    if !sol.value.is_finite() {
        return Err(Error::NumericalFailure(sol.residual));
    }
    let warning =
        (sol.residual > 1e-9).then(|| format!("dual residual {:e} above tolerance", sol.residual));
    let (eta, lambda) = match kind {
        Divergence::Kl => (None, Some(sol.lambda)),
        _ => (Some(sol.eta.clone()), None),
    };
    Ok(DualSolution {
        value: sol.value,
        eta,
        lambda,
        iterations: sol.iterations,
        residual: sol.residual,
        warning,
    })
}

pub fn s_worst_case(
    kind: Divergence,
    p_row: &[Vec<f64>],
    pi_s: &[f64],
    v: &[f64],
    rho: f64,
) -> Result<WorstCaseDistribution> {
    check_s_inputs(p_row, pi_s, v)?;
    check_rho(kind, rho)?;
    let order = sorted_order(v);
    let sol = s_solve_sorted(kind, p_row, pi_s, v, &order, rho);
    let d: f64 = sol
        .q
        .iter()
        .zip(p_row)
        .map(|(q, p)| divergence(kind, q, p))
        .sum();
    let budget = p_row.len() as f64 * rho;
    if !(d <= budget + BUDGET_SLACK) {
        return Err(Error::NumericalFailure(d - budget));
    }
    Ok(WorstCaseDistribution {
        q: sol.q,
        divergence: d,
    })
}

/// The (s,a)-rectangular dual objective: `g(eta)` for L1 and chi-square,
/// `g(lambda)` for KL.
pub fn sa_dual_objective(kind: Divergence, p: &[f64], v: &[f64], rho: f64, x: f64) -> f64 {
    let support = || p.iter().zip(v).filter(|(pi, _)| **pi > 0.0);
    let vmin = support().map(|(_, vi)| *vi).fold(f64::INFINITY, f64::min);
    match kind {
        Divergence::L1 => {
            let s: f64 = support().map(|(pi, vi)| pi * (x - vi).max(0.0)).sum();
            -s - 0.5 * rho * (x - vmin).max(0.0) + x
        }
        Divergence::Chi2 => {
            let s: f64 = support()
                .map(|(pi, vi)| pi * (x - vi).max(0.0).powi(2))
                .sum();
            -chi2_scale(rho) * s.sqrt() + x
        }
        Divergence::Kl => {
            if x <= 0.0 {
                return vmin;
            }
            let z: f64 = support()
                .map(|(pi, vi)| pi * (-(vi - vmin) / x).exp())
                .sum();
            vmin - x * rho - x * z.ln()
        }
    }
}

/// The s-rectangular dual objective at `eta` (L1, chi-square) or at the
/// scalar `lambda` stored in `eta[0]` (KL).
pub fn s_dual_objective(
    kind: Divergence,
    p_row: &[Vec<f64>],
    pi_s: &[f64],
    v: &[f64],
    rho: f64,
    eta: &[f64],
) -> f64 {
    let na = p_row.len() as f64;
    match kind {
        Divergence::L1 => {
            let mut pos = 0.0;
            let mut hmax = f64::NEG_INFINITY;
            for (a, p) in p_row.iter().enumerate() {
                for (pi, vi) in p.iter().zip(v).filter(|(pi, _)| **pi > 0.0) {
                    let t = eta[a] - pi_s[a] * vi;
                    pos += pi * t.max(0.0);
                    hmax = hmax.max(t / 2.0);
                }
            }
            -pos - na * hmax.max(0.0) * rho + eta.iter().sum::<f64>()
        }
        Divergence::Chi2 => {
            let mut s = 0.0;
            for (a, p) in p_row.iter().enumerate() {
                for (pi, vi) in p.iter().zip(v).filter(|(pi, _)| **pi > 0.0) {
                    s += pi * (eta[a] - pi_s[a] * vi).max(0.0).powi(2);
                }
            }
            -((rho + 1.0) * na).sqrt() * s.sqrt() + eta.iter().sum::<f64>()
        }
        Divergence::Kl => {
            let lambda = eta[0];
            let mut base = 0.0;
            let mut logs = 0.0;
            for (a, p) in p_row.iter().enumerate() {
                let w = |vi: f64| pi_s[a] * vi;
                let m = p
                    .iter()
                    .zip(v)
                    .filter(|(pi, _)| **pi > 0.0)
                    .map(|(_, vi)| w(*vi))
                    .fold(f64::INFINITY, f64::min);
                base += m;
                if lambda > 0.0 {
                    let z: f64 = p
                        .iter()
                        .zip(v)
                        .filter(|(pi, _)| **pi > 0.0)
                        .map(|(pi, vi)| pi * (-(w(*vi) - m) / lambda).exp())
                        .sum();
                    logs += z.ln();
                }
            }
            if lambda <= 0.0 {
                base
            } else {
                base - lambda * na * rho - lambda * logs
            }
        }
    }
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
/// Returns `(argmax, max, iterations)`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut iters = 0;
    while hi - lo > tol && iters < 500 {
        iters += 1;
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    let (mut bx, mut bf) = (x, fx);
    for (xi, fi) in [(x1, f1), (x2, f2)] {
        if fi > bf {
            bx = xi;
            bf = fi;
        }
    }
    (bx, bf, iters)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(AmbiguitySpec::new(Divergence::L1, 2.0, Rectangularity::SA).is_err());
        assert!(AmbiguitySpec::new(Divergence::Kl, 0.0, Rectangularity::S).is_err());
        assert!(AmbiguitySpec::new(Divergence::Kl, 3.0, Rectangularity::S).is_ok());
        assert_eq!("chi2".parse::<Divergence>().unwrap(), Divergence::Chi2);
        assert!("tv".parse::<Divergence>().is_err());
    }

    #[test]
    fn l1_threshold_examples() {
        let (value, eta, k) = l1_sorted_threshold(&[0.5, 0.3, 0.2], &[0.0, 1.0, 2.0], 0.5).unwrap();
        assert_eq!(k, 2);
        assert!((eta - 1.0).abs() < 1e-15);
        assert!((value - 0.25).abs() < 1e-12);
        let g = sa_dual_objective(Divergence::L1, &[0.5, 0.3, 0.2], &[0.0, 1.0, 2.0], 0.5, 1.0);
        assert!((g - 0.25).abs() < 1e-12);

        let (value, eta, k) = l1_sorted_threshold(&[0.01, 0.99], &[0.0, 1.0], 1.9).unwrap();
        assert_eq!(k, 2);
        assert!((eta - 1.0).abs() < 1e-15);
        assert!((value - 0.04).abs() < 1e-12);

        let (value, eta, _) = l1_sorted_threshold(&[0.2, 0.8], &[3.0, 3.0], 0.7).unwrap();
        assert_eq!((value, eta), (3.0, 3.0));
    }

    #[test]
    fn worst_case_examples() {
        let wc = sa_worst_case(Divergence::L1, &[0.5, 0.3, 0.2], &[0.0, 1.0, 2.0], 0.5).unwrap();
        for (a, b) in wc.q[0].iter().zip([0.75, 0.25, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let sol = sa_support_inf(Divergence::Chi2, &[0.5, 0.5], &[0.0, 1.0], 1.0).unwrap();
        assert!(sol.value.abs() < 1e-12);
        let wc = sa_worst_case(Divergence::Chi2, &[0.5, 0.5], &[0.0, 1.0], 1.0).unwrap();
        assert!((wc.q[0][0] - 1.0).abs() < 1e-9);
        assert!((wc.divergence - 1.0).abs() < 1e-8);

        let sol = sa_support_inf(Divergence::Kl, &[0.5, 0.5], &[0.0, 1.0], 0.1).unwrap();
        let lambda = sol.lambda.unwrap();
        let wc = sa_worst_case(Divergence::Kl, &[0.5, 0.5], &[0.0, 1.0], 0.1).unwrap();
        let z = 0.5 + 0.5 * (-1.0 / lambda).exp();
        assert!((wc.q[0][1] - 0.5 * (-1.0 / lambda).exp() / z).abs() < 1e-12);
        assert!((wc.divergence - 0.1).abs() < 1e-6);
        assert!((wc.q[0][1] - sol.value).abs() < 1e-9);
    }

    #[test]
    fn constant_and_single_atom() {
        for kind in [Divergence::L1, Divergence::Chi2, Divergence::Kl] {
            let sol = sa_support_inf(kind, &[0.3, 0.7], &[2.5, 2.5], 0.4).unwrap();
            assert!((sol.value - 2.5).abs() < 1e-12);
            let sol = sa_support_inf(kind, &[0.0, 1.0, 0.0], &[0.0, 4.0, 1.0], 0.4).unwrap();
            assert_eq!(sol.value, 4.0);
            assert_eq!(sol.iterations, 0);
        }
    }

    #[test]
    fn tiny_radius_is_nominal() {
        let p = [0.2, 0.5, 0.3];
        let v = [1.0, 3.0, 0.5];
        let nominal: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
        for (kind, rho) in [
            (Divergence::L1, 1e-9),
            (Divergence::Chi2, 1e-13),
            (Divergence::Kl, 1e-13),
        ] {
            let sol = sa_support_inf(kind, &p, &v, rho).unwrap();
            assert!((sol.value - nominal).abs() < 1e-6, "{kind}");
            let wc = sa_worst_case(kind, &p, &v, 1e-9).unwrap();
            assert!(divergence(Divergence::L1, &wc.q[0], &p) < 1e-4);
        }
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx, _) = golden_section_max(|x| -(x - 0.3) * (x - 0.3), -2.0, 5.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!(fx.abs() < 1e-15);
    }

    #[test]
    fn s_rect_l1_example() {
        let p = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let sol = s_support_inf(Divergence::L1, &p, &[0.5, 0.5], &[0.0, 1.0], 0.4).unwrap();
        assert!((sol.value - 0.3).abs() < 1e-12);
        let eta = sol.eta.unwrap();
        let g = s_dual_objective(Divergence::L1, &p, &[0.5, 0.5], &[0.0, 1.0], 0.4, &eta);
        assert!((g - 0.3).abs() < 1e-12);
    }
}
