//! Thurstone Case V scaling from paired-comparison counts.
//!
//! Counts are turned into clamped preference proportions, then into z-scores
//! `sqrt(2) * Phi^-1(p)` (unit variance per item). Scale values are the
//! zero-sum least-squares solution of `mu_i - mu_j = z_ij` over all compared
//! pairs. Two virtual anchors (a worst and a best item) fix a common [0, 1]
//! range across independently scaled sets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::normal;
use crate::stats::average_ranks;
use crate::votes::VoteRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReconstructionError {
    #[error("set {set_id}: vote {vote_id} references item {item} but the set has {n} items")]
    ItemOutOfRange {
        set_id: String,
        vote_id: u64,
        item: usize,
        n: usize,
    },
    #[error("set {set_id}: vote {vote_id} has an invalid choice")]
    InvalidVote { set_id: String, vote_id: u64 },
    #[error("set {set_id}: comparison graph is disconnected, components {components:?}")]
    Disconnected {
        set_id: String,
        components: Vec<Vec<usize>>,
    },
    #[error("set {0}: anchors are not attached")]
    NoAnchors(String),
    #[error("set {0}: anchor scale values coincide")]
    DegenerateAnchors(String),
    #[error("method {method} missing from set {set_id}")]
    MissingMethod { method: String, set_id: String },
    #[error("{scales} scales but {labels} method lists")]
    LabelMismatch { scales: usize, labels: usize },
    #[error("no sets to aggregate")]
    NoSets,
    #[error("linear solve failed for set {0}")]
    Solve(String),
}

/// Index slots of the two virtual anchors appended by [`attach_anchors`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSlots {
    pub low: usize,
    pub high: usize,
}

/// `counts[i][j]` is the number of times item `i` was preferred over `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub set_id: String,
    pub n: usize,
    pub counts: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<AnchorSlots>,
}

impl CountMatrix {
    pub fn zeros(set_id: &str, n: usize) -> Self {
        Self {
            set_id: set_id.to_string(),
            n,
            counts: vec![vec![0; n]; n],
            anchors: None,
        }
    }

    pub fn add(&mut self, winner: usize, loser: usize, times: u32) {
        self.counts[winner][loser] += times;
    }

    pub fn trials(&self, i: usize, j: usize) -> u32 {
        self.counts[i][j] + self.counts[j][i]
    }

    /// Pairs `(i, j)`, `i < j`, with at least one judgment.
    pub fn compared_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| (i + 1..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.trials(i, j) > 0)
            .collect()
    }

    /// Number of real (non-anchor) items.
    pub fn n_real(&self) -> usize {
        if self.anchors.is_some() {
            self.n - 2
        } else {
            self.n
        }
    }
}

/// Tallies the votes of one set into an `n_items` square matrix.
pub fn build_count_matrix(
    votes: &[VoteRecord],
    set_id: &str,
    n_items: usize,
) -> Result<CountMatrix, ReconstructionError> {
    let mut c = CountMatrix::zeros(set_id, n_items);
    for v in votes.iter().filter(|v| v.set_id == set_id) {
        if !v.choice_is_valid() {
            return Err(ReconstructionError::InvalidVote {
                set_id: set_id.to_string(),
                vote_id: v.vote_id,
            });
        }
        let (winner, loser) = (v.choice, v.loser());
        if let Some(&item) = [winner, loser].iter().find(|&&k| k >= n_items) {
            return Err(ReconstructionError::ItemOutOfRange {
                set_id: set_id.to_string(),
                vote_id: v.vote_id,
                item,
                n: n_items,
            });
        }
        c.add(winner, loser, 1);
    }
    Ok(c)
}

/// Proportion of judgments preferring `i` over `j`, clamped to
/// `[1/(2(m+1)), 1 - 1/(2(m+1))]` with `m` the number of judgments, so
/// unanimous pairs stay finite and a single judgment still has a direction.
/// `None` when the pair was never compared.
pub fn empirical_probability(c: &CountMatrix, i: usize, j: usize) -> Option<f64> {
    let m = c.trials(i, j);
    if m == 0 {
        return None;
    }
    let m = f64::from(m);
    let p = f64::from(c.counts[i][j]) / m;
    let eps = 1.0 / (2.0 * (m + 1.0));
    Some(p.clamp(eps, 1.0 - eps))
}

/// Appends a low and a high virtual anchor. Every real item beats the low
/// anchor `pseudo_count` times and loses to the high anchor `pseudo_count`
/// times; the anchors are never compared with each other.
pub fn attach_anchors(c: &CountMatrix, pseudo_count: u32) -> CountMatrix {
    let n_real = c.n_real();
    let base = if c.anchors.is_some() { strip_anchors(c) } else { c.clone() };
    let n = n_real + 2;
    let (low, high) = (n_real, n_real + 1);
    let mut out = CountMatrix::zeros(&c.set_id, n);
    for i in 0..n_real {
        out.counts[i][..n_real].copy_from_slice(&base.counts[i][..n_real]);
        out.counts[i][low] = pseudo_count;
        out.counts[high][i] = pseudo_count;
    }
    out.anchors = Some(AnchorSlots { low, high });
    out
}

fn strip_anchors(c: &CountMatrix) -> CountMatrix {
    let n = c.n_real();
    CountMatrix {
        set_id: c.set_id.clone(),
        n,
        counts: c.counts[..n].iter().map(|row| row[..n].to_vec()).collect(),
        anchors: None,
    }
}

/// Reconstructed quality values of one set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScale {
    pub set_id: String,
    /// Latent Case V scale values, summing to zero.
    pub mu: Vec<f64>,
    /// `mu` mapped affinely so the low anchor is 0 and the high anchor is 1.
    /// Empty until [`rescale_unit_interval`] runs.
    #[serde(default)]
    pub rescaled: Vec<f64>,
    pub anchor_low_index: Option<usize>,
    pub anchor_high_index: Option<usize>,
}

impl QualityScale {
    /// Scores used for ordering items: rescaled values when present.
    pub fn scores(&self) -> &[f64] {
        if self.rescaled.is_empty() {
            &self.mu
        } else {
            &self.rescaled
        }
    }

    pub fn n_real(&self) -> usize {
        self.mu.len() - usize::from(self.anchor_low_index.is_some()) - usize::from(self.anchor_high_index.is_some())
    }
}

/// Connected components of an undirected graph, each sorted, ordered by
/// smallest member.
pub fn components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        groups.entry(r).or_default().push(v);
    }
    groups.into_values().collect()
}

/// Least-squares Case V scale values for one count matrix.
pub fn reconstruct_scale(c: &CountMatrix) -> Result<QualityScale, ReconstructionError> {
    let n = c.n;
    let pairs = c.compared_pairs();
    let comps = components(n, &pairs);
    if comps.len() > 1 {
        return Err(ReconstructionError::Disconnected {
            set_id: c.set_id.clone(),
            components: comps,
        });
    }

    // Normal equations L mu = b of sum (z_ij - (mu_i - mu_j))^2; adding the
    // all-ones matrix pins the zero-sum gauge and makes the system definite.
    let mut lap = DMatrix::<f64>::from_element(n, n, 1.0);
    let mut rhs = DVector::<f64>::zeros(n);
    for &(i, j) in &pairs {
        let p = empirical_probability(c, i, j).expect("compared pair has data");
        let z = std::f64::consts::SQRT_2 * normal::quantile(p);
        lap[(i, i)] += 1.0;
        lap[(j, j)] += 1.0;
        lap[(i, j)] -= 1.0;
        lap[(j, i)] -= 1.0;
        rhs[i] += z;
        rhs[j] -= z;
    }
    let mu = if n == 1 {
        DVector::zeros(1)
    } else {
        lap.cholesky()
            .ok_or_else(|| ReconstructionError::Solve(c.set_id.clone()))?
            .solve(&rhs)
    };
    let mean = mu.mean();
    Ok(QualityScale {
        set_id: c.set_id.clone(),
        mu: mu.iter().map(|v| v - mean).collect(),
        rescaled: Vec::new(),
        anchor_low_index: c.anchors.map(|a| a.low),
        anchor_high_index: c.anchors.map(|a| a.high),
    })
}

pub fn rescale_unit_interval(q: &QualityScale) -> Result<QualityScale, ReconstructionError> {
    let (Some(low), Some(high)) = (q.anchor_low_index, q.anchor_high_index) else {
        return Err(ReconstructionError::NoAnchors(q.set_id.clone()));
    };
    let (lo, hi) = (q.mu[low], q.mu[high]);
    if !(hi > lo) {
        return Err(ReconstructionError::DegenerateAnchors(q.set_id.clone()));
    }
    let mut out = q.clone();
    out.rescaled = q.mu.iter().map(|m| (m - lo) / (hi - lo)).collect();
    out.rescaled[low] = 0.0;
    out.rescaled[high] = 1.0;
    Ok(out)
}

/// Count matrix, anchors, scale and [0, 1] rescaling for one set.
pub fn reconstruct_set(
    votes: &[VoteRecord],
    set_id: &str,
    n_items: usize,
    pseudo_count: u32,
) -> Result<QualityScale, ReconstructionError> {
    let c = attach_anchors(&build_count_matrix(votes, set_id, n_items)?, pseudo_count);
    rescale_unit_interval(&reconstruct_scale(&c)?)
}

/// Cross-set summary for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method_id: String,
    /// Rescaled score in each set, in input set order.
    pub per_set: Vec<f64>,
    pub mean: f64,
    /// 1 is best; tied means share the average rank.
    pub rank: f64,
}

/// Averages each method's rescaled score over sets and ranks methods by
/// descending mean. `method_ids[s][k]` names item `k` of `scales[s]`.
pub fn aggregate_across_sets(
    scales: &[QualityScale],
    method_ids: &[Vec<String>],
) -> Result<Vec<MethodScore>, ReconstructionError> {
    if scales.len() != method_ids.len() {
        return Err(ReconstructionError::LabelMismatch {
            scales: scales.len(),
            labels: method_ids.len(),
        });
    }
    let Some(first) = method_ids.first() else {
        return Err(ReconstructionError::NoSets);
    };
    let lookups: Vec<BTreeMap<&str, usize>> = method_ids
        .iter()
        .map(|ids| ids.iter().enumerate().map(|(k, m)| (m.as_str(), k)).collect())
        .collect();

    let mut scores = Vec::with_capacity(first.len());
    for method in first {
        let mut per_set = Vec::with_capacity(scales.len());
        for (scale, lookup) in scales.iter().zip(&lookups) {
            let k = *lookup.get(method.as_str()).ok_or_else(|| ReconstructionError::MissingMethod {
                method: method.clone(),
                set_id: scale.set_id.clone(),
            })?;
            per_set.push(scale.scores()[k]);
        }
        let mean = per_set.iter().sum::<f64>() / per_set.len() as f64;
        scores.push(MethodScore {
            method_id: method.clone(),
            per_set,
            mean,
            rank: 0.0,
        });
    }
    if let Some(extra) = lookups.iter().flat_map(|l| l.keys()).find(|m| !lookups[0].contains_key(*m)) {
        return Err(ReconstructionError::MissingMethod {
            method: extra.to_string(),
            set_id: scales[0].set_id.clone(),
        });
    }
    let neg: Vec<f64> = scores.iter().map(|s| -s.mean).collect();
    for (s, r) in scores.iter_mut().zip(average_ranks(&neg)) {
        s.rank = r;
    }
    scores.sort_by(|a, b| a.rank.total_cmp(&b.rank).then_with(|| a.method_id.cmp(&b.method_id)));
    Ok(scores)
}
