//! Acceptance suite. Every test prints one `PASS`/`FAIL` line straight to
//! stdout, so the verdicts show up even when the harness captures output.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use robust_mdp::ambiguity::{s_support_inf, sa_support_inf};
use robust_mdp::experiments::{
    convergence_experiment, coverage_experiment, random_mdp, ConvergenceRow, CoverageRow,
    ExperimentConfig, MdpSource,
};
use robust_mdp::inference::{
    bellman_noise_variance, derivative_matrix, inference_report, OrderedStateMap,
};
use robust_mdp::mdp::{max_sweeps, policy_evaluation_exact, sup_dist, value_iteration};
use robust_mdp::solvers::{
    robust_bellman_optimal, robust_bellman_policy, robust_policy_evaluation,
    robust_value_iteration, solve,
};
use robust_mdp::theory::{gap_bound, hard_instance, hard_instance_value};
use robust_mdp::{AmbiguitySpec, Divergence, Error, Policy, Rectangularity, TabularMdp};

const KINDS: [Divergence; 3] = [Divergence::L1, Divergence::Chi2, Divergence::Kl];
const RECTS: [Rectangularity; 2] = [Rectangularity::SA, Rectangularity::S];
const IN_SCOPE: [(Divergence, Rectangularity); 5] = [
    (Divergence::L1, Rectangularity::SA),
    (Divergence::Chi2, Rectangularity::SA),
    (Divergence::Kl, Rectangularity::SA),
    (Divergence::Chi2, Rectangularity::S),
    (Divergence::Kl, Rectangularity::S),
];

/// Seeded instances used by the experiment criteria.
const SA_INSTANCE: (usize, usize, u64) = (20, 10, 1);
const S_INSTANCE: (usize, usize, u64) = (5, 5, 1);
const SA_RADII: [f64; 3] = [0.1, 0.5, 1.0];
const S_RADII: [f64; 3] = [0.05, 0.1, 0.5];
const GAMMA: f64 = 0.9;

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.write_all(b"\n");
    let _ = out.flush();
}

fn verdict(id: usize, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] acceptance {id:>2} {name}: {detail}");
    say(&line);
    assert!(pass, "{line}");
}

fn random_model(r: &mut ChaCha8Rng, ns: usize, na: usize, gamma: f64, sparse: bool) -> TabularMdp {
    let rewards = (0..ns).map(|_| random_values(r, na, 1.0)).collect();
    let transitions = (0..ns)
        .map(|_| (0..na).map(|_| random_dist(r, ns, sparse)).collect())
        .collect();
    TabularMdp::new(rewards, transitions, gamma, vec![]).unwrap()
}

fn random_policy(r: &mut ChaCha8Rng, ns: usize, na: usize) -> Policy {
    Policy::stochastic((0..ns).map(|_| random_dist(r, na, false)).collect()).unwrap()
}

#[test]
fn acceptance_01_hard_instance_closed_forms() {
    let mdp_for = |p| hard_instance(p, GAMMA, 1, 1).unwrap();
    let mut worst = 0.0f64;
    for p in [0.5, 0.7, 0.9] {
        let mdp = mdp_for(p);
        for rho in [0.05, 0.1, 0.2] {
            for kind in [Divergence::L1, Divergence::Chi2] {
                let spec = AmbiguitySpec::new(kind, rho, Rectangularity::SA).unwrap();
                let v = robust_value_iteration(&mdp, &spec, 100_000, 1e-12)
                    .unwrap()
                    .value;
                let expected = hard_instance_value(kind, p, GAMMA, rho).unwrap();
                worst = worst.max((v[0] - expected).abs());
            }
        }
    }
    verdict(
        1,
        "hard-instance closed forms",
        worst < 1e-6,
        &format!("max error {worst:.2e} (tol 1e-6)"),
    );
}

#[test]
fn acceptance_02_dual_values_match_brute_force() {
    let mut r = rng(2002);
    let mut worst_sa = 0.0f64;
    let mut worst_s = 0.0f64;
    for kind in KINDS {
        for _ in 0..200 {
            let n = r.random_range(2..=4usize);
            let p = random_dist(&mut r, n, true);
            let v = random_values(&mut r, n, 10.0);
            let rho = random_radius(&mut r, kind);
            let got = sa_support_inf(kind, &p, &v, rho).unwrap().value;
            worst_sa = worst_sa.max((got - sa_oracle(kind, &p, &v, rho)).abs());
        }
        for _ in 0..50 {
            let na = r.random_range(1..=3usize);
            let n = if na == 3 {
                2
            } else {
                r.random_range(2..=3usize)
            };
            let rows: Vec<Vec<f64>> = (0..na).map(|_| random_dist(&mut r, n, false)).collect();
            let pi = random_dist(&mut r, na, false);
            let v = random_values(&mut r, n, 10.0);
            let rho = random_radius(&mut r, kind);
            let got = s_support_inf(kind, &rows, &pi, &v, rho).unwrap().value;
            worst_s = worst_s.max((got - s_oracle(kind, &rows, &pi, &v, rho)).abs());
        }
    }
    verdict(
        2,
        "dual/primal oracle equivalence",
        worst_sa < 1e-4 && worst_s < 1e-4,
        &format!("max error sa {worst_sa:.2e}, s {worst_s:.2e} (tol 1e-4)"),
    );
}

#[test]
fn acceptance_03_contraction_and_monotonicity() {
    let mut r = rng(2003);
    let slack = 1e-8;
    let eps = 1e-11;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let ns = r.random_range(2..=5usize);
        let na = r.random_range(1..=3usize);
        let gamma = 0.5 + 0.49 * r.random::<f64>();
        let sparse = r.random::<f64>() < 0.3;
        let mdp = random_model(&mut r, ns, na, gamma, sparse);
        let kind = KINDS[r.random_range(0..3)];
        let rect = RECTS[r.random_range(0..2)];
        let spec = AmbiguitySpec::new(kind, random_radius(&mut r, kind), rect).unwrap();
        let pi = random_policy(&mut r, ns, na);
        let v1 = random_values(&mut r, ns, 10.0);
        let v2 = random_values(&mut r, ns, 10.0);
        let lo: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a.min(*b)).collect();
        let hi: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a.max(*b)).collect();
        let d = sup_dist(&v1, &v2);
        let opt = |v: &[f64]| robust_bellman_optimal(&mdp, &spec, v, eps);
        let pol = |v: &[f64]| robust_bellman_policy(&mdp, &spec, &pi, v);
        for op in [&opt as &dyn Fn(&[f64]) -> Vec<f64>, &pol] {
            let excess = sup_dist(&op(&v1), &op(&v2)) - gamma * d;
            worst = worst.max(excess);
            if excess > slack {
                violations += 1;
            }
            let (tl, th) = (op(&lo), op(&hi));
            let m = tl
                .iter()
                .zip(&th)
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(m);
            if m > slack {
                violations += 1;
            }
        }
    }
    verdict(
        3,
        "contraction and monotonicity",
        violations == 0,
        &format!("{violations} violations over 1000 triples, max excess {worst:.2e} (slack 1e-8)"),
    );
}

#[test]
fn acceptance_04_robust_gap_bound() {
    let mut r = rng(2004);
    let mut violations = 0;
    let mut tightest = 0.0f64;
    for i in 0..100 {
        let ns = r.random_range(2..=6usize);
        let na = r.random_range(2..=3usize);
        let gamma = 0.5 + 0.45 * r.random::<f64>();
        let mdp = random_mdp(ns, na, gamma, 4000 + i).unwrap();
        let kind = KINDS[r.random_range(0..3)];
        let rect = RECTS[r.random_range(0..2)];
        let rho = random_radius(&mut r, kind);
        let spec = AmbiguitySpec::new(kind, rho, rect).unwrap();
        let pi = random_policy(&mut r, ns, na);
        let robust = robust_policy_evaluation(&mdp, &spec, &pi, 1e-10)
            .unwrap()
            .value;
        let nominal = policy_evaluation_exact(&mdp, &pi).unwrap();
        let gap = sup_dist(&robust, &nominal);
        let bound = gap_bound(kind, rect, rho, gamma, na);
        tightest = tightest.max(gap / bound);
        if gap > bound {
            violations += 1;
        }
    }
    verdict(
        4,
        "robust/non-robust gap bound",
        violations == 0,
        &format!("{violations} violations over 100 triples, max gap/bound {tightest:.3}"),
    );
}

#[test]
fn acceptance_05_derivative_matrix_finite_differences() {
    let mut r = rng(2005);
    let (ns, na) = (4, 3);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (kind, rect) in IN_SCOPE {
        let mut done = 0;
        while done < 50 {
            let mdp = random_model(&mut r, ns, na, GAMMA, false);
            let pi = random_policy(&mut r, ns, na);
            let v = random_values(&mut r, ns, 10.0);
            if OrderedStateMap::new(&v).min_gap < 1e-2 {
                continue;
            }
            let rho = match kind {
                Divergence::L1 => 0.05 + 1.5 * r.random::<f64>(),
                _ => 0.05 + r.random::<f64>(),
            };
            let spec = AmbiguitySpec::new(kind, rho, rect).unwrap();
            let m = derivative_matrix(&mdp, &spec, &pi, &v).unwrap();
            for j in 0..ns {
                let (mut up, mut down) = (v.clone(), v.clone());
                up[j] += h;
                down[j] -= h;
                let tu = robust_bellman_policy(&mdp, &spec, &pi, &up);
                let td = robust_bellman_policy(&mdp, &spec, &pi, &down);
                for i in 0..ns {
                    let e = if i == j { 1.0 } else { 0.0 };
                    let fd = e - (tu[i] - td[i]) / (2.0 * h);
                    worst = worst.max((fd - m[i][j]).abs());
                }
            }
            done += 1;
        }
    }
    verdict(
        5,
        "derivative matrix vs finite differences",
        worst < 1e-4,
        &format!("max entrywise error {worst:.2e} over 50 instances x 5 specs (tol 1e-4)"),
    );
}

/// Multinomial counts by sequential conditional binomials.
fn multinomial(r: &mut ChaCha8Rng, n: u64, p: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = vec![0; p.len()];
    for (j, &pj) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j + 1 == p.len() || pj >= mass {
            out[j] = left;
            break;
        }
        let k = Binomial::new(left, (pj / mass).clamp(0.0, 1.0))
            .unwrap()
            .sample(r);
        out[j] = k;
        left -= k;
        mass -= pj;
    }
    out
}

#[test]
fn acceptance_06_noise_variance_monte_carlo() {
    let n = 2000u64;
    let reps = 20_000;
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for (idx, (kind, rect)) in IN_SCOPE.into_iter().enumerate() {
        let mdp = random_mdp(5, 3, GAMMA, 6006).unwrap();
        let mut r = rng(2006);
        let pi = random_policy(&mut r, 5, 3);
        let rho = if kind == Divergence::L1 { 0.3 } else { 0.2 };
        let spec = AmbiguitySpec::new(kind, rho, rect).unwrap();
        let v = robust_policy_evaluation(&mdp, &spec, &pi, 1e-12)
            .unwrap()
            .value;
        let sigma2 = bellman_noise_variance(&mdp, &spec, &pi, &v).unwrap();
        let center = robust_bellman_policy(&mdp, &spec, &pi, &v);
        let mut sum = [0.0f64; 5];
        let mut sum_sq = [0.0f64; 5];
        let mut r = ChaCha8Rng::seed_from_u64(60_000 + idx as u64);
        let mut est = mdp.clone();
        for _ in 0..reps {
            for s in 0..5 {
                for a in 0..3 {
                    let counts = multinomial(&mut r, n, &mdp.transitions[s][a]);
                    for (x, c) in est.transitions[s][a].iter_mut().zip(&counts) {
                        *x = *c as f64 / n as f64;
                    }
                }
            }
            let t = robust_bellman_policy(&est, &spec, &pi, &v);
            for s in 0..5 {
                let x = (n as f64).sqrt() * (t[s] - center[s]);
                sum[s] += x;
                sum_sq[s] += x * x;
            }
        }
        let k = reps as f64;
        let mut spec_worst = 0.0f64;
        for s in 0..5 {
            let mean = sum[s] / k;
            let var = (sum_sq[s] - k * mean * mean) / (k - 1.0);
            let rel = (var - sigma2[s]).abs() / sigma2[s];
            spec_worst = spec_worst.max(rel);
        }
        details.push(format!("{kind}/{rect} {spec_worst:.3}"));
        worst = worst.max(spec_worst);
    }
    verdict(
        6,
        "noise variance vs Monte-Carlo",
        worst <= 0.10,
        &format!(
            "max relative error per set [{}] (tol 0.10)",
            details.join(", ")
        ),
    );
}

fn coverage_config(
    instance: (usize, usize, u64),
    kind: Divergence,
    rect: Rectangularity,
    rho: f64,
    n_list: Vec<usize>,
) -> ExperimentConfig {
    ExperimentConfig {
        mdp_source: MdpSource::Random {
            num_states: instance.0,
            num_actions: instance.1,
            gamma: GAMMA,
            seed: instance.2,
        },
        spec: AmbiguitySpec::new(kind, rho, rect).unwrap(),
        n_list,
        reps: 1000,
        level: 0.975,
        tol: 1e-6,
        iterations: 0,
        seed: 7,
        out_path: None,
    }
}

fn show_coverage(row: &CoverageRow) {
    say(&format!(
        "    coverage {}/{} rho={} n={}: {:.1}% ({:.1}) length {:.4e} excluded {}",
        row.kind,
        row.rect,
        row.rho,
        row.n,
        row.coverage_pct,
        row.coverage_se_pct,
        row.mean_ci_length,
        row.excluded
    ));
}

#[test]
fn acceptance_07_coverage() {
    let mut failures = Vec::new();
    let mut big_n = Vec::new();
    let mut ratio = f64::NAN;
    let mut small_n = f64::NAN;
    for kind in KINDS {
        for rho in SA_RADII {
            let n_list = match (kind, rho) {
                (Divergence::L1, r) if r == 0.1 => vec![100, 1000],
                (Divergence::Kl, r) if r == 1.0 => vec![10, 1000],
                _ => vec![1000],
            };
            let rows = coverage_experiment(&coverage_config(
                SA_INSTANCE,
                kind,
                Rectangularity::SA,
                rho,
                n_list,
            ))
            .unwrap();
            rows.iter().for_each(show_coverage);
            let last = rows.last().unwrap();
            big_n.push(last.coverage_pct);
            if kind == Divergence::L1 && rho == 0.1 {
                ratio = rows[0].mean_ci_length / last.mean_ci_length;
            }
            if kind == Divergence::Kl && rho == 1.0 {
                small_n = rows[0].coverage_pct;
            }
        }
    }
    for kind in [Divergence::Chi2, Divergence::Kl] {
        for rho in S_RADII {
            let rows = coverage_experiment(&coverage_config(
                S_INSTANCE,
                kind,
                Rectangularity::S,
                rho,
                vec![1000],
            ))
            .unwrap();
            rows.iter().for_each(show_coverage);
            big_n.push(rows[0].coverage_pct);
        }
    }
    let lo = big_n.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = big_n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo >= 92.0 && hi <= 98.0) {
        failures.push("n=1000 coverage outside [92, 98]");
    }
    if !(small_n < 50.0) {
        failures.push("n=10 KL coverage not below 50");
    }
    if !(2.5..=4.0).contains(&ratio) {
        failures.push("length ratio outside [2.5, 4]");
    }
    verdict(
        7,
        "coverage",
        failures.is_empty(),
        &format!(
            "n=1000 coverage in [{lo:.1}, {hi:.1}]%, n=10 KL rho=1 coverage {small_n:.1}%, \
             L1 rho=0.1 length ratio n=100/n=1000 {ratio:.3}{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    );
}

fn plateau(rows: &[ConvergenceRow], n: usize) -> (f64, Vec<f64>) {
    let errs: Vec<f64> = rows
        .iter()
        .filter(|r| r.n == n)
        .map(|r| r.mean_err)
        .collect();
    (*errs.last().unwrap(), errs)
}

/// Largest consecutive error ratio while the error is still well above the plateau.
fn early_contraction(errs: &[f64], floor: f64) -> f64 {
    errs.windows(2)
        .filter(|w| w[1] > 40.0 * floor)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}

#[test]
fn acceptance_08_convergence() {
    let iterations = 150;
    let config = |instance: (usize, usize, u64), kind, rect, rho, n_list, reps| ExperimentConfig {
        iterations,
        reps,
        ..coverage_config(instance, kind, rect, rho, n_list)
    };
    let mut worst_ratio = 0.0f64;
    let mut plateau_ok = true;
    let mut grid = Vec::new();
    for kind in KINDS {
        for rho in SA_RADII {
            grid.push(config(
                SA_INSTANCE,
                kind,
                Rectangularity::SA,
                rho,
                vec![10, 1000],
                200,
            ));
        }
    }
    for kind in [Divergence::Chi2, Divergence::Kl] {
        for rho in S_RADII {
            grid.push(config(
                S_INSTANCE,
                kind,
                Rectangularity::S,
                rho,
                vec![10, 1000],
                100,
            ));
        }
    }
    for cfg in &grid {
        let rows = convergence_experiment(cfg).unwrap();
        let (p10, e10) = plateau(&rows, 10);
        let (p1000, e1000) = plateau(&rows, 1000);
        let c = early_contraction(&e10, p10).max(early_contraction(&e1000, p1000));
        say(&format!(
            "    convergence {}/{} rho={}: plateau n=10 {p10:.4e}, n=1000 {p1000:.4e}, max early ratio {c:.4}",
            cfg.spec.kind, cfg.spec.rectangularity, cfg.spec.rho
        ));
        worst_ratio = worst_ratio.max(c);
        plateau_ok &= p1000 < p10;
    }
    let small = config(
        (5, 5, 1),
        Divergence::Chi2,
        Rectangularity::SA,
        0.1,
        vec![100, 10_000],
        200,
    );
    let rows = convergence_experiment(&small).unwrap();
    let scaling = plateau(&rows, 100).0 / plateau(&rows, 10_000).0;
    let pass = worst_ratio <= GAMMA + 0.05 && plateau_ok && (5.0..=20.0).contains(&scaling);
    verdict(
        8,
        "convergence",
        pass,
        &format!(
            "max early ratio {worst_ratio:.4} (limit {:.2}), plateau(1000) < plateau(10) everywhere: {plateau_ok}, \
             plateau(100)/plateau(10000) {scaling:.2} (band [5, 20])",
            GAMMA + 0.05
        ),
    );
}

#[test]
fn acceptance_09_vanishing_radius() {
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for rect in RECTS {
        let (ns, na, seed) = if rect == Rectangularity::SA {
            SA_INSTANCE
        } else {
            S_INSTANCE
        };
        let mdp = random_mdp(ns, na, GAMMA, seed).unwrap();
        let (nominal, _) = value_iteration(&mdp, 1e-11, 100_000).unwrap();
        for kind in KINDS {
            let spec = AmbiguitySpec::new(kind, 1e-9, rect).unwrap();
            let robust = solve(&mdp, &spec, max_sweeps(1e-11, GAMMA), 1e-11)
                .unwrap()
                .value;
            let d = sup_dist(&robust, &nominal);
            details.push(format!("{kind}/{rect} {d:.2e}"));
            worst = worst.max(d);
        }
    }
    verdict(
        9,
        "vanishing radius recovers the nominal value",
        worst < 1e-4,
        &format!("[{}] (tol 1e-4)", details.join(", ")),
    );
}

#[test]
fn acceptance_10_scope_and_degeneracy_errors() {
    let mdp = random_mdp(4, 2, GAMMA, 10).unwrap();
    let pi = Policy::uniform(4, 2);
    let v = vec![1.0, 2.0, 3.0, 4.0];
    let l1_s = AmbiguitySpec::new(Divergence::L1, 0.3, Rectangularity::S).unwrap();
    let unsupported = matches!(
        inference_report(&mdp, &l1_s, &pi, &v, 100, 0.975),
        Err(Error::UnsupportedCombination { .. })
    ) && matches!(
        bellman_noise_variance(&mdp, &l1_s, &pi, &v),
        Err(Error::UnsupportedCombination { .. })
    ) && matches!(
        derivative_matrix(&mdp, &l1_s, &pi, &v),
        Err(Error::UnsupportedCombination { .. })
    );
    let l1 = AmbiguitySpec::new(Divergence::L1, 0.3, Rectangularity::SA).unwrap();
    let tied = vec![1.0, 2.0, 2.0, 4.0];
    let degenerate = matches!(
        inference_report(&mdp, &l1, &pi, &tied, 100, 0.975),
        Err(Error::DegenerateOrdering(_))
    ) && matches!(
        derivative_matrix(&mdp, &l1, &pi, &tied),
        Err(Error::DegenerateOrdering(_))
    );
    verdict(
        10,
        "scope and degeneracy errors",
        unsupported && degenerate,
        &format!("UnsupportedCombination for l1/s: {unsupported}, DegenerateOrdering on tied values: {degenerate}"),
    );
}
