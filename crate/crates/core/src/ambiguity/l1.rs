use super::SaSolution;

/// Sorted-threshold solution: the adversary moves `rho/2` of mass from the
/// highest-valued states onto the lowest-valued one.
pub(super) fn solve(p: &[f64], v: &[f64], order: &[usize], rho: f64) -> SaSolution {
    let threshold = 1.0 - rho / 2.0;
    let mut vmin = None;
    let mut cum = 0.0;
    let mut partial = 0.0;
    let mut k = 0;
    for &i in order {
        if p[i] <= 0.0 {
            continue;
        }
        let lo = *vmin.get_or_insert(v[i]);
        if cum + p[i] > threshold {
            let value = partial + (threshold - cum) * v[i] + rho / 2.0 * lo;
            return SaSolution {
                value,
                dual: v[i],
                k_index: k,
                iterations: 0,
                residual: 0.0,
            };
        }
        cum += p[i];
        partial += p[i] * v[i];
        k += 1;
    }
    // Rounding left the cumulative mass at the threshold: the last state is K.
    let last = *order
        .iter()
        .rev()
        .find(|&&i| p[i] > 0.0)
        .expect("empty support");
    SaSolution {
        value: partial - p[last] * v[last]
            + (threshold - cum + p[last]) * v[last]
            + rho / 2.0 * vmin.unwrap_or(v[last]),
        dual: v[last],
        k_index: k.saturating_sub(1),
        iterations: 0,
        residual: 0.0,
    }
}

pub(super) fn worst_case(p: &[f64], order: &[usize], rho: f64, k_index: usize) -> Vec<f64> {
    let mut q = vec![0.0; p.len()];
    let mut cum = 0.0;
    let mut first = None;
    for (k, &i) in order.iter().filter(|&&i| p[i] > 0.0).enumerate() {
        first.get_or_insert(i);
        if k < k_index {
            q[i] = p[i];
            cum += p[i];
        } else {
            q[i] = (1.0 - rho / 2.0 - cum).max(0.0);
            break;
        }
    }
    if let Some(m) = first {
        q[m] += rho / 2.0;
    }
    q
}
