//! Iterative removal of unreliable workers.
//!
//! Scales are reconstructed from all votes, every worker is scored by the
//! fraction of judgments agreeing with those scales (TPR), and the lowest
//! scoring workers are dropped until at most a target fraction of votes
//! remains. Scales are then rebuilt from the retained votes and the
//! selection is repeated on the full pool until the removed set stops
//! changing.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::reconstruction::{components, reconstruct_set, QualityScale, ReconstructionError};
use crate::sampling::{ordered, Pair};
use crate::votes::VoteRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScreeningError {
    #[error("no votes")]
    NoVotes,
    #[error("worker has no votes")]
    NoWorkerVotes,
    #[error("target fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("no scale for set {0}")]
    MissingScale(String),
    #[error("set {set_id}: comparison graph is disconnected, components {components:?}")]
    Disconnected {
        set_id: String,
        components: Vec<Vec<usize>>,
    },
    #[error(transparent)]
    Reconstruction(#[from] ReconstructionError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningConfig {
    /// Fraction of votes to retain, in (0, 1).
    pub target_fraction: f64,
    pub max_iterations: usize,
    /// Pseudo-count of the virtual anchors used in each reconstruction.
    pub pseudo_count: u32,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            target_fraction: 0.4,
            max_iterations: 20,
            pseudo_count: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    #[serde(skip)]
    pub retained: Vec<VoteRecord>,
    pub retained_count: usize,
    pub input_count: usize,
    /// In removal order (ascending TPR).
    pub removed_workers: Vec<String>,
    /// TPR of every worker against the scales of the final iteration.
    pub worker_tpr: BTreeMap<String, f64>,
    /// Lowest TPR among retained workers.
    pub tpr_cut: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// True when a removal was skipped to keep a set connected.
    pub truncated: bool,
    #[serde(skip)]
    pub scales: BTreeMap<String, QualityScale>,
}

/// Number of items per set, taken as one past the largest referenced index.
pub fn infer_set_sizes(votes: &[VoteRecord]) -> BTreeMap<String, usize> {
    let mut sizes = BTreeMap::new();
    for v in votes {
        let n = sizes.entry(v.set_id.clone()).or_insert(0usize);
        *n = (*n).max(v.pair.0 + 1).max(v.pair.1 + 1);
    }
    sizes
}

/// Fraction of `votes` whose choice has the strictly higher scale value;
/// exact ties count one half.
pub fn worker_tpr<'a>(
    votes: impl IntoIterator<Item = &'a VoteRecord>,
    scales: &BTreeMap<String, QualityScale>,
) -> Result<f64, ScreeningError> {
    let (mut score, mut total) = (0.0, 0usize);
    for v in votes {
        let scale = scales.get(&v.set_id).ok_or_else(|| ScreeningError::MissingScale(v.set_id.clone()))?;
        let s = scale.scores();
        let (won, lost) = (s[v.choice], s[v.loser()]);
        if won > lost {
            score += 1.0;
        } else if won == lost {
            score += 0.5;
        }
        total += 1;
    }
    if total == 0 {
        return Err(ScreeningError::NoWorkerVotes);
    }
    Ok(score / total as f64)
}

/// Anchored, [0, 1]-rescaled scales for every set, from `votes` only.
pub fn reconstruct_all(
    votes: &[VoteRecord],
    sizes: &BTreeMap<String, usize>,
    pseudo_count: u32,
) -> Result<BTreeMap<String, QualityScale>, ScreeningError> {
    let mut by_set: BTreeMap<&str, Vec<VoteRecord>> = sizes.keys().map(|k| (k.as_str(), Vec::new())).collect();
    for v in votes {
        if let Some(list) = by_set.get_mut(v.set_id.as_str()) {
            list.push(v.clone());
        }
    }
    by_set
        .into_par_iter()
        .map(|(set, list)| Ok((set.to_string(), reconstruct_set(&list, set, sizes[set], pseudo_count)?)))
        .collect()
}

/// Per-set multiset of compared pairs, used to test connectivity as workers
/// are dropped.
struct PairTally {
    sizes: BTreeMap<String, usize>,
    counts: BTreeMap<String, HashMap<Pair, u32>>,
}

impl PairTally {
    fn new(votes: &[VoteRecord], sizes: &BTreeMap<String, usize>) -> Self {
        let mut counts: BTreeMap<String, HashMap<Pair, u32>> = BTreeMap::new();
        for v in votes {
            *counts.entry(v.set_id.clone()).or_default().entry(ordered(v.pair.0, v.pair.1)).or_default() += 1;
        }
        Self {
            sizes: sizes.clone(),
            counts,
        }
    }

    fn remove(&mut self, votes: &[&VoteRecord]) {
        for v in votes {
            let c = self.counts.get_mut(&v.set_id).and_then(|m| m.get_mut(&ordered(v.pair.0, v.pair.1)));
            if let Some(c) = c {
                *c -= 1;
            }
        }
    }

    fn restore(&mut self, votes: &[&VoteRecord]) {
        for v in votes {
            *self
                .counts
                .entry(v.set_id.clone())
                .or_default()
                .entry(ordered(v.pair.0, v.pair.1))
                .or_default() += 1;
        }
    }

    fn disconnected(&self, set_id: &str) -> Option<Vec<Vec<usize>>> {
        let n = self.sizes[set_id];
        let edges: Vec<Pair> = self
            .counts
            .get(set_id)
            .map(|m| m.iter().filter(|(_, &c)| c > 0).map(|(&p, _)| p).collect())
            .unwrap_or_default();
        let comps = components(n, &edges);
        (comps.len() > 1).then_some(comps)
    }
}

/// Runs the screening loop; see the module docs.
pub fn iterative_outlier_removal(
    votes: &[VoteRecord],
    config: &ScreeningConfig,
) -> Result<ScreeningResult, ScreeningError> {
    if votes.is_empty() {
        return Err(ScreeningError::NoVotes);
    }
    let p = config.target_fraction;
    if !(p > 0.0 && p < 1.0) {
        return Err(ScreeningError::BadFraction(p));
    }
    let sizes = infer_set_sizes(votes);
    let mut tally = PairTally::new(votes, &sizes);
    for set in sizes.keys() {
        if let Some(components) = tally.disconnected(set) {
            return Err(ScreeningError::Disconnected {
                set_id: set.clone(),
                components,
            });
        }
    }

    let mut by_worker: BTreeMap<&str, Vec<&VoteRecord>> = BTreeMap::new();
    for v in votes {
        by_worker.entry(v.worker_id.as_str()).or_default().push(v);
    }
    let limit = p * votes.len() as f64;

    let mut next_scales = reconstruct_all(votes, &sizes, config.pseudo_count)?;
    let mut prev_removed: BTreeSet<String> = BTreeSet::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut truncated = false;
    let mut removed: Vec<String> = Vec::new();
    let mut tprs: BTreeMap<String, f64> = BTreeMap::new();
    let mut retained: Vec<VoteRecord> = votes.to_vec();

    while iterations < config.max_iterations {
        iterations += 1;
        let scales = std::mem::take(&mut next_scales);
        tprs = by_worker
            .iter()
            .map(|(w, vs)| Ok((w.to_string(), worker_tpr(vs.iter().copied(), &scales)?)))
            .collect::<Result<_, ScreeningError>>()?;
        let mut order: Vec<(&str, f64)> = by_worker.keys().map(|w| (*w, tprs[*w])).collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));

        removed.clear();
        truncated = false;
        let mut kept = votes.len();
        for (w, _) in &order {
            if kept as f64 <= limit {
                break;
            }
            let wv = &by_worker[w];
            tally.remove(wv);
            let mut sets: Vec<&str> = wv.iter().map(|v| v.set_id.as_str()).collect();
            sets.sort_unstable();
            sets.dedup();
            if sets.iter().any(|s| tally.disconnected(s).is_some()) {
                tally.restore(wv);
                truncated = true;
                break;
            }
            removed.push(w.to_string());
            kept -= wv.len();
        }
        for w in &removed {
            tally.restore(&by_worker[w.as_str()]);
        }

        let removed_set: BTreeSet<String> = removed.iter().cloned().collect();
        retained = votes.iter().filter(|v| !removed_set.contains(&v.worker_id)).cloned().collect();
        next_scales = reconstruct_all(&retained, &sizes, config.pseudo_count)?;
        if removed_set == prev_removed {
            converged = true;
            break;
        }
        prev_removed = removed_set;
    }

    let tpr_cut = tprs
        .iter()
        .filter(|(w, _)| !removed.contains(w))
        .map(|(_, &t)| t)
        .min_by(f64::total_cmp);
    Ok(ScreeningResult {
        retained_count: retained.len(),
        input_count: votes.len(),
        retained,
        removed_workers: removed,
        worker_tpr: tprs,
        tpr_cut,
        iterations,
        converged,
        truncated,
        scales: next_scales,
    })
}
