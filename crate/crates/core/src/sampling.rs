//! Sparse comparison designs: random regular pair graphs and the shuffled
//! trial list served to raters.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("no {degree}-regular graph on {n_items} vertices exists")]
    Infeasible { n_items: usize, degree: usize },
    #[error("edge-swap repair did not converge for n={n_items}, d={degree}")]
    RepairFailed { n_items: usize, degree: usize },
}

/// Unordered item pair, stored with `0 < 1`.
pub type Pair = (usize, usize);

pub fn ordered(i: usize, j: usize) -> Pair {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairGraph {
    pub set_id: String,
    pub n_items: usize,
    pub degree: usize,
    pub edges: Vec<Pair>,
}

impl PairGraph {
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_items];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }
}

const MAX_REJECTIONS: usize = 100;

/// Samples a `degree`-regular simple graph on `n_items` vertices.
///
/// Uses the pairing (configuration) model; after [`MAX_REJECTIONS`] draws
/// containing a loop or a multi-edge, the last draw is repaired by degree
/// preserving edge swaps.
pub fn sample_pair_graph(
    set_id: &str,
    n_items: usize,
    degree: usize,
    seed: u64,
) -> Result<PairGraph, SamplingError> {
    if degree >= n_items || (n_items * degree) % 2 != 0 {
        return Err(SamplingError::Infeasible { n_items, degree });
    }
    // Dense designs: sample the sparse complement instead.
    if 2 * degree > n_items - 1 {
        let complement = sample_pair_graph(set_id, n_items, n_items - 1 - degree, seed)?;
        let absent: HashSet<Pair> = complement.edges.into_iter().collect();
        let edges = complete_pairs(n_items).into_iter().filter(|e| !absent.contains(e)).collect();
        return Ok(finish(set_id, n_items, degree, edges));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<usize> = (0..n_items).flat_map(|v| std::iter::repeat_n(v, degree)).collect();

    let mut edges = Vec::new();
    for _ in 0..MAX_REJECTIONS {
        points.shuffle(&mut rng);
        edges = points.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        if is_simple(&edges) {
            return Ok(finish(set_id, n_items, degree, edges));
        }
    }
    repair(&mut edges, &mut rng).ok_or(SamplingError::RepairFailed { n_items, degree })?;
    Ok(finish(set_id, n_items, degree, edges))
}

fn finish(set_id: &str, n_items: usize, degree: usize, edges: Vec<(usize, usize)>) -> PairGraph {
    let mut edges: Vec<Pair> = edges.into_iter().map(|(a, b)| ordered(a, b)).collect();
    edges.sort_unstable();
    PairGraph {
        set_id: set_id.to_string(),
        n_items,
        degree,
        edges,
    }
}

fn is_simple(edges: &[(usize, usize)]) -> bool {
    let mut seen = HashSet::with_capacity(edges.len());
    edges.iter().all(|&(a, b)| a != b && seen.insert(ordered(a, b)))
}

/// Removes loops and multi-edges by swapping endpoints with random partner
/// edges. Returns `None` if no progress is possible within the budget.
fn repair(edges: &mut [(usize, usize)], rng: &mut ChaCha8Rng) -> Option<()> {
    use std::collections::HashMap;
    let m = edges.len();
    let mut mult: HashMap<Pair, usize> = HashMap::new();
    for &(a, b) in edges.iter() {
        *mult.entry(ordered(a, b)).or_default() += 1;
    }
    let is_bad = |mult: &HashMap<Pair, usize>, (a, b): (usize, usize)| a == b || mult[&ordered(a, b)] > 1;

    let budget = 1000 * m.max(1);
    for _ in 0..budget {
        let Some(bad) = (0..m).find(|&k| is_bad(&mult, edges[k])) else {
            return Some(());
        };
        let other = rng.random_range(0..m);
        if other == bad {
            continue;
        }
        let (a, b) = edges[bad];
        let (c, d) = edges[other];
        let (e1, e2) = if rng.random_bool(0.5) { ((a, c), (b, d)) } else { ((a, d), (b, c)) };
        if e1.0 == e1.1 || e2.0 == e2.1 || ordered(e1.0, e1.1) == ordered(e2.0, e2.1) {
            continue;
        }
        if mult.get(&ordered(e1.0, e1.1)).copied().unwrap_or(0) > 0
            || mult.get(&ordered(e2.0, e2.1)).copied().unwrap_or(0) > 0
        {
            continue;
        }
        for e in [edges[bad], edges[other]] {
            *mult.get_mut(&ordered(e.0, e.1)).unwrap() -= 1;
        }
        *mult.entry(ordered(e1.0, e1.1)).or_default() += 1;
        *mult.entry(ordered(e2.0, e2.1)).or_default() += 1;
        edges[bad] = e1;
        edges[other] = e2;
    }
    is_simple(edges).then_some(())
}

/// All pairs `(k, l)` with `k < l` and `l - k <= max_gap`.
pub fn banded_pairs(n_items: usize, max_gap: usize) -> Vec<Pair> {
    (0..n_items)
        .flat_map(|k| (k + 1..n_items.min(k + max_gap + 1)).map(move |l| (k, l)))
        .collect()
}

/// All `n (n - 1) / 2` pairs.
pub fn complete_pairs(n_items: usize) -> Vec<Pair> {
    banded_pairs(n_items, n_items)
}

/// One presentation of a pair to raters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub set_id: String,
    pub pair: Pair,
    pub left_item: usize,
    pub votes_target: u32,
}

impl Trial {
    pub fn right_item(&self) -> usize {
        if self.left_item == self.pair.0 {
            self.pair.1
        } else {
            self.pair.0
        }
    }
}

/// One trial per edge across all sets, shuffled globally, with a random
/// left/right assignment.
pub fn build_trials(graphs: &[PairGraph], votes_target: u32, seed: u64) -> Vec<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<(&str, Pair)> = graphs
        .iter()
        .flat_map(|g| g.edges.iter().map(move |&e| (g.set_id.as_str(), e)))
        .collect();
    items.shuffle(&mut rng);
    items
        .into_iter()
        .enumerate()
        .map(|(trial_id, (set_id, pair))| Trial {
            trial_id,
            set_id: set_id.to_string(),
            pair,
            left_item: if rng.random_bool(0.5) { pair.0 } else { pair.1 },
            votes_target,
        })
        .collect()
}
