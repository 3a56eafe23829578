//! Synthetic Thurstone Case V observers.
//!
//! A boosted study is modeled as a smaller observer noise: `sigma` is
//! multiplied by `boost_gain`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::reconstruction::{build_count_matrix, reconstruct_scale, ReconstructionError};
use crate::sampling::{banded_pairs, Pair};
use crate::stats;
use crate::votes::VoteRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulateError {
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("boost gain must lie in (0, 1], got {0}")]
    BadGain(f64),
    #[error("item {item} out of range for {n} items")]
    ItemOutOfRange { item: usize, n: usize },
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("no pairs to vote on")]
    NoPairs,
    #[error(transparent)]
    Reconstruction(#[from] ReconstructionError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverModel {
    pub true_mu: Vec<f64>,
    pub sigma: f64,
    #[serde(default = "one")]
    pub boost_gain: f64,
}

fn one() -> f64 {
    1.0
}

impl ObserverModel {
    pub fn new(true_mu: Vec<f64>, sigma: f64, boost_gain: f64) -> Result<Self, SimulateError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SimulateError::BadSigma(sigma));
        }
        if !(boost_gain > 0.0 && boost_gain <= 1.0) {
            return Err(SimulateError::BadGain(boost_gain));
        }
        Ok(Self {
            true_mu,
            sigma,
            boost_gain,
        })
    }

    pub fn effective_sigma(&self) -> f64 {
        self.sigma * self.boost_gain
    }

    fn check_item(&self, item: usize) -> Result<(), SimulateError> {
        if item >= self.true_mu.len() {
            return Err(SimulateError::ItemOutOfRange {
                item,
                n: self.true_mu.len(),
            });
        }
        Ok(())
    }
}

/// One forced choice between `i` and `j`: `d ~ N(mu_i - mu_j, 2 sigma^2)`,
/// `i` wins iff `d > 0`.
pub fn simulate_vote(i: usize, j: usize, model: &ObserverModel, rng: &mut impl Rng) -> Result<usize, SimulateError> {
    model.check_item(i)?;
    model.check_item(j)?;
    let sd = std::f64::consts::SQRT_2 * model.effective_sigma();
    let d = Normal::new(model.true_mu[i] - model.true_mu[j], sd)
        .expect("positive sd")
        .sample(rng);
    Ok(if d > 0.0 { i } else { j })
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn record(vote_id: u64, worker_id: &str, set_id: &str, pair: Pair, left_item: usize, choice: usize) -> VoteRecord {
    VoteRecord {
        vote_id,
        worker_id: worker_id.to_string(),
        set_id: set_id.to_string(),
        pair,
        left_item,
        choice,
        timestamp: 0,
        duration: 0,
    }
}

/// `votes_per_pair` judgments for every pair, dealt round-robin to
/// `n_workers` workers named `sim-0`, `sim-1`, ...
pub fn simulate_votes(
    set_id: &str,
    pairs: &[Pair],
    votes_per_pair: usize,
    n_workers: usize,
    model: &ObserverModel,
    seed: u64,
) -> Result<Vec<VoteRecord>, SimulateError> {
    if n_workers == 0 {
        return Err(SimulateError::TooFew {
            what: "workers",
            need: 1,
            got: 0,
        });
    }
    let mut rng = seeded(seed, 0);
    let mut out = Vec::with_capacity(pairs.len() * votes_per_pair);
    for &(i, j) in pairs {
        for r in 0..votes_per_pair {
            let choice = simulate_vote(i, j, model, &mut rng)?;
            let left = if rng.random::<bool>() { i } else { j };
            let worker = format!("sim-{}", r % n_workers);
            out.push(record(out.len() as u64, &worker, set_id, (i, j), left, choice));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkerBehavior {
    /// Judges with the observer model.
    Thurstone,
    /// Clicks either side with equal probability.
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimWorker {
    pub id: String,
    pub behavior: WorkerBehavior,
}

/// Each worker answers `votes_per_worker` pairs drawn uniformly from `pairs`.
/// Worker `k` draws from its own random stream.
pub fn simulate_crowd(
    set_id: &str,
    pairs: &[Pair],
    workers: &[SimWorker],
    votes_per_worker: usize,
    model: &ObserverModel,
    seed: u64,
) -> Result<Vec<VoteRecord>, SimulateError> {
    if pairs.is_empty() {
        return Err(SimulateError::NoPairs);
    }
    let mut out = Vec::with_capacity(workers.len() * votes_per_worker);
    for (k, w) in workers.iter().enumerate() {
        let mut rng = seeded(seed, k as u64);
        for _ in 0..votes_per_worker {
            let &(i, j) = pairs.choose(&mut rng).expect("nonempty");
            let left = if rng.random::<bool>() { i } else { j };
            let choice = match w.behavior {
                WorkerBehavior::Thurstone => simulate_vote(i, j, model, &mut rng)?,
                WorkerBehavior::UniformRandom => {
                    if rng.random::<bool>() {
                        i
                    } else {
                        j
                    }
                }
            };
            out.push(record(out.len() as u64, &w.id, set_id, (i, j), left, choice));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    /// Pristine image plus distortion levels.
    pub n_levels: usize,
    pub max_gap: usize,
    pub votes_per_pair: usize,
    /// True quality drop per distortion level.
    pub level_spacing: f64,
    pub plain_sigma: f64,
    pub boosted_sigma: f64,
    pub seed: u64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            n_levels: 13,
            max_gap: 6,
            votes_per_pair: 50,
            level_spacing: 0.1,
            plain_sigma: 1.0,
            boosted_sigma: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotOutcome {
    pub srocc_plain: f64,
    pub srocc_boosted: f64,
}

/// True level values: the pristine image first, each level `level_spacing`
/// worse than the previous one.
pub fn pilot_truth(cfg: &PilotConfig) -> Vec<f64> {
    (0..cfg.n_levels).map(|k| -(k as f64) * cfg.level_spacing).collect()
}

/// Votes of one pilot condition. The plain condition uses random stream 0
/// and the boosted one stream 1.
pub fn pilot_votes(cfg: &PilotConfig, sigma: f64, stream: u64) -> Result<Vec<VoteRecord>, SimulateError> {
    let model = ObserverModel::new(pilot_truth(cfg), sigma, 1.0)?;
    let pairs = banded_pairs(cfg.n_levels, cfg.max_gap);
    let mut rng = seeded(cfg.seed, stream);
    let mut votes = Vec::with_capacity(pairs.len() * cfg.votes_per_pair);
    for &(i, j) in &pairs {
        for _ in 0..cfg.votes_per_pair {
            let choice = simulate_vote(i, j, &model, &mut rng)?;
            votes.push(record(votes.len() as u64, "pilot", "pilot", (i, j), i, choice));
        }
    }
    Ok(votes)
}

fn pilot_condition(cfg: &PilotConfig, sigma: f64, stream: u64) -> Result<f64, SimulateError> {
    let votes = pilot_votes(cfg, sigma, stream)?;
    let scale = reconstruct_scale(&build_count_matrix(&votes, "pilot", cfg.n_levels)?)?;
    Ok(stats::srocc(&scale.mu, &pilot_truth(cfg))?)
}

/// Plain and boosted studies over the banded pair design, each scored by
/// SROCC of the reconstructed scale against the true level order.
pub fn run_pilot_experiment(cfg: &PilotConfig) -> Result<PilotOutcome, SimulateError> {
    if cfg.n_levels < 3 {
        return Err(SimulateError::TooFew {
            what: "levels",
            need: 3,
            got: cfg.n_levels,
        });
    }
    Ok(PilotOutcome {
        srocc_plain: pilot_condition(cfg, cfg.plain_sigma, 0)?,
        srocc_boosted: pilot_condition(cfg, cfg.boosted_sigma, 1)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotSummary {
    pub outcomes: Vec<PilotOutcome>,
    pub mean_plain: f64,
    pub mean_boosted: f64,
    /// Mean of `boosted - plain`.
    pub mean_difference: f64,
    /// Two-sided 95% t interval of the paired difference.
    pub difference_ci: (f64, f64),
}

/// Runs `replications` pilots with seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn run_pilot_replications(cfg: &PilotConfig, replications: usize) -> Result<PilotSummary, SimulateError> {
    if replications < 2 {
        return Err(SimulateError::TooFew {
            what: "replications",
            need: 2,
            got: replications,
        });
    }
    let outcomes = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            run_pilot_experiment(&PilotConfig {
                seed: cfg.seed.wrapping_add(r),
                ..cfg.clone()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = outcomes.len() as f64;
    let diffs: Vec<f64> = outcomes.iter().map(|o| o.srocc_boosted - o.srocc_plain).collect();
    let mean_difference = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean_difference).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("df > 0").inverse_cdf(0.975);
    let half = t * (var / n).sqrt();
    Ok(PilotSummary {
        mean_plain: outcomes.iter().map(|o| o.srocc_plain).sum::<f64>() / n,
        mean_boosted: outcomes.iter().map(|o| o.srocc_boosted).sum::<f64>() / n,
        mean_difference,
        difference_ci: (mean_difference - half, mean_difference + half),
        outcomes,
    })
}
