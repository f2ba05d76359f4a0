//! Generative and offline sampling, frequency estimators and the truncated
//! uniform dataset.
//!
//! Every `(s, a)` cell draws from its own ChaCha stream keyed by the run seed
//! and the replication index, so the `k`-th draw of a cell does not depend on
//! the order in which cells or replications are processed.

use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, STOCHASTIC_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    Generative,
    Offline,
    OfflineTruncated,
}

/// Frequency estimate of a transition kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatedModel {
    /// `p_hat[s][a][s']`; an all-zero row marks an unvisited cell.
    #[serde(rename = "transitions")]
    pub p_hat: Vec<Vec<Vec<f64>>>,
    /// `counts[s][a][s']`.
    pub counts: Vec<Vec<Vec<u64>>>,
    pub total_per_cell: Vec<Vec<u64>>,
    pub mode: EstimationMode,
}

impl EstimatedModel {
    pub fn from_counts(counts: Vec<Vec<Vec<u64>>>, mode: EstimationMode) -> Self {
        let total_per_cell: Vec<Vec<u64>> = counts
            .iter()
            .map(|row| row.iter().map(|c| c.iter().sum()).collect())
            .collect();
        let p_hat = counts
            .iter()
            .zip(&total_per_cell)
            .map(|(row, totals)| {
                row.iter()
                    .zip(totals)
                    .map(|(c, &n)| {
                        c.iter()
                            .map(|&k| if n == 0 { 0.0 } else { k as f64 / n as f64 })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        EstimatedModel {
            p_hat,
            counts,
            total_per_cell,
            mode,
        }
    }

    /// First cell without samples, if any.
    pub fn unvisited(&self) -> Option<(usize, usize)> {
        self.total_per_cell
            .iter()
            .enumerate()
            .find_map(|(s, row)| row.iter().position(|&n| n == 0).map(|a| (s, a)))
    }

    /// The empirical MDP: `template`'s rewards, discount and initial
    /// distribution with the estimated kernel.
    pub fn to_mdp(&self, template: &TabularMdp) -> Result<TabularMdp> {
        if let Some((s, a)) = self.unvisited() {
            return Err(Error::UnvisitedCell(s, a));
        }
        template.with_transitions(self.p_hat.clone())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One offline sample `(s, a, s', r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub num_states: usize,
    pub num_actions: usize,
    pub tuples: Vec<Transition>,
    /// Behavior distribution `nu[s][a]`.
    pub behavior: Vec<Vec<f64>>,
}

impl OfflineDataset {
    /// Smallest positive behavior probability.
    pub fn nu_min(&self) -> f64 {
        self.behavior
            .iter()
            .flatten()
            .copied()
            .filter(|x| *x > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for t in &self.tuples {
            wr.serialize(t)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads `s,a,s_next,r` rows; the behavior table is not part of the CSV.
    pub fn read_csv<R: Read>(r: R, behavior: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = behavior.len();
        let num_actions = behavior.first().map_or(0, Vec::len);
        let mut tuples = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let t: Transition = row?;
            if t.s >= num_states || t.s_next >= num_states || t.a >= num_actions {
                return Err(Error::DimensionMismatch(format!(
                    "tuple ({}, {}, {}) outside {num_states}x{num_actions}",
                    t.s, t.a, t.s_next
                )));
            }
            tuples.push(t);
        }
        Ok(OfflineDataset {
            num_states,
            num_actions,
            tuples,
            behavior,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>, behavior: Vec<Vec<f64>>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, behavior)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of replication `rep` of a run seeded with `seed`.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ rep.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Generator dedicated to stream `stream` of `seed`.
pub fn keyed_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn categorical(p: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(p).map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))
}

/// `n` i.i.d. next states per cell from the true kernel.
pub fn generative_estimate(mdp: &TabularMdp, n: usize, seed: u64) -> Result<EstimatedModel> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let counts = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let row = categorical(&mdp.transitions[s][a])?;
                    let mut rng = keyed_rng(seed, (s * na + a) as u64);
                    let mut c = vec![0u64; ns];
                    for _ in 0..n {
                        c[row.sample(&mut rng)] += 1;
                    }
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimatedModel::from_counts(
        counts,
        EstimationMode::Generative,
    ))
}

fn check_behavior(mdp: &TabularMdp, nu: &[Vec<f64>]) -> Result<()> {
    if nu.len() != mdp.num_states || nu.iter().any(|r| r.len() != mdp.num_actions) {
        return Err(Error::DimensionMismatch(format!(
            "behavior must be {}x{}",
            mdp.num_states, mdp.num_actions
        )));
    }
    let total: f64 = nu.iter().flatten().sum();
    if nu.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "behavior table must be a probability distribution".into(),
        ));
    }
    Ok(())
}

/// `n` tuples with `(s, a) ~ nu` and `s' ~ P(.|s, a)`.
pub fn offline_sample(
    mdp: &TabularMdp,
    nu: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    check_behavior(mdp, nu)?;
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let pairs = categorical(&nu.iter().flatten().copied().collect::<Vec<_>>())?;
    let rows = mdp
        .transitions
        .iter()
        .flatten()
        .map(|p| categorical(p))
        .collect::<Result<Vec<_>>>()?;
    let mut pair_rng = keyed_rng(seed, (ns * na) as u64);
    let mut cell_rngs: Vec<Option<ChaCha8Rng>> = vec![None; ns * na];
    let mut tuples = Vec::with_capacity(n);
    for _ in 0..n {
        let cell = pairs.sample(&mut pair_rng);
        let (s, a) = (cell / na, cell % na);
        let rng = cell_rngs[cell].get_or_insert_with(|| keyed_rng(seed, cell as u64));
        tuples.push(Transition {
            s,
            a,
            s_next: rows[cell].sample(rng),
            r: mdp.rewards[s][a],
        });
    }
    Ok(OfflineDataset {
        num_states: ns,
        num_actions: na,
        tuples,
        behavior: nu.to_vec(),
    })
}

fn count_tuples<'a>(
    ns: usize,
    na: usize,
    tuples: impl Iterator<Item = &'a Transition>,
    cap: Option<u64>,
) -> Vec<Vec<Vec<u64>>> {
    let mut counts = vec![vec![vec![0u64; ns]; na]; ns];
    let mut seen = vec![vec![0u64; na]; ns];
    for t in tuples {
        if cap.is_some_and(|c| seen[t.s][t.a] >= c) {
            continue;
        }
        seen[t.s][t.a] += 1;
        counts[t.s][t.a][t.s_next] += 1;
    }
    counts
}

/// Frequency estimator over all tuples; unvisited cells keep zero rows.
pub fn offline_estimate(ds: &OfflineDataset) -> EstimatedModel {
    EstimatedModel::from_counts(
        count_tuples(ds.num_states, ds.num_actions, ds.tuples.iter(), None),
        EstimationMode::Offline,
    )
}

/// Keeps the first `n' = min n(s, a)` tuples of every cell, in dataset order.
pub fn truncate_uniform(ds: &OfflineDataset) -> Result<EstimatedModel> {
    let full = offline_estimate(ds);
    if let Some((s, a)) = full.unvisited() {
        return Err(Error::UnvisitedCell(s, a));
    }
    let n_prime = full
        .total_per_cell
        .iter()
        .flatten()
        .copied()
        .min()
        .unwrap_or(0);
    Ok(EstimatedModel::from_counts(
        count_tuples(
            ds.num_states,
            ds.num_actions,
            ds.tuples.iter(),
            Some(n_prime),
        ),
        EstimationMode::OfflineTruncated,
    ))
}

/// Uniform behavior table.
pub fn uniform_behavior(num_states: usize, num_actions: usize) -> Vec<Vec<f64>> {
    let w = 1.0 / (num_states * num_actions) as f64;
    vec![vec![w; num_actions]; num_states]
}

/// True when every estimated row is a probability vector within tolerance.
pub fn rows_stochastic(model: &EstimatedModel) -> bool {
    model
        .p_hat
        .iter()
        .zip(&model.total_per_cell)
        .all(|(row, totals)| {
            row.iter()
                .zip(totals)
                .all(|(p, &n)| n == 0 || (p.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL)
        })
}
