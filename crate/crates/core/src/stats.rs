//! Correlation coefficients and their confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::normal;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("correlation undefined for a constant vector")]
    ConstantInput,
    #[error("Fisher interval needs |r| < 1, got {0}")]
    PerfectCorrelation(f64),
    #[error("confidence level must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("bootstrap needs at least one iteration")]
    NoIterations,
    #[error("every resample was constant after {0} retries")]
    DegenerateResamples(usize),
    #[error("no outcomes given")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Srocc,
    Plcc,
    Krocc,
}

impl CorrelationKind {
    pub fn compute(self, x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
        match self {
            Self::Srocc => srocc(x, y),
            Self::Plcc => plcc(x, y),
            Self::Krocc => krocc(x, y),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Srocc => "SROCC",
            Self::Plcc => "PLCC",
            Self::Krocc => "KROCC",
        }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewSamples { need: 3, got: x.len() });
    }
    Ok(())
}

/// 1-based ascending ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson_unchecked(x, y)
}

/// Spearman rank correlation with average ranks for ties.
pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson_unchecked(&average_ranks(x), &average_ranks(y))
}

/// Kendall's tau-b, computed with Knight's merge-sort algorithm.
pub fn krocc(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |run: u64| run * run.saturating_sub(1) / 2;
    let n0 = pairs(n as u64);

    // Ties in x, and joint ties in (x, y), over the x-sorted order.
    let (mut tx, mut txy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                txy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tx += pairs(run_x);
            txy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tx += pairs(run_x);
    txy += pairs(run_xy);

    // Discordant pairs are the inversions of y in this order.
    let mut ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut ty = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            ty += pairs(run_y);
            run_y = 1;
        }
    }
    ty += pairs(run_y);

    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    if denom == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    let num = n0 as f64 - tx as f64 - ty as f64 + txy as f64 - 2.0 * swaps as f64;
    Ok((num / denom).clamp(-1.0, 1.0))
}

/// Sorts `v` ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Confidence interval for a correlation via the Fisher z-transform.
pub fn fisher_ci(r: f64, n: usize, level: f64) -> Result<(f64, f64), StatsError> {
    if !(r.abs() < 1.0) {
        return Err(StatsError::PerfectCorrelation(r));
    }
    if n < 4 {
        return Err(StatsError::TooFewSamples { need: 4, got: n });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    let z = r.atanh();
    let half = normal::quantile((1.0 + level) / 2.0) / ((n - 3) as f64).sqrt();
    Ok(((z - half).tanh(), (z + half).tanh()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    Fisher,
    BootstrapPercentile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub kind: CorrelationKind,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: CiMethod,
    pub n: usize,
    /// Bootstrap iterations; 0 for the Fisher interval.
    pub iterations: usize,
}

pub fn fisher_report(x: &[f64], y: &[f64], kind: CorrelationKind, level: f64) -> Result<CorrelationReport, StatsError> {
    let r = kind.compute(x, y)?;
    let (ci_low, ci_high) = if r.abs() < 1.0 { fisher_ci(r, x.len(), level)? } else { (r, r) };
    Ok(CorrelationReport {
        kind,
        estimate: r,
        ci_low,
        ci_high,
        method: CiMethod::Fisher,
        n: x.len(),
        iterations: 0,
    })
}

/// Linear-interpolated quantile of ascending-sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const MAX_REDRAWS: usize = 100;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Paired percentile bootstrap of a correlation coefficient. Iteration `b`
/// draws from its own ChaCha stream, so the result does not depend on
/// scheduling.
pub fn bootstrap_corr(
    x: &[f64],
    y: &[f64],
    kind: CorrelationKind,
    iterations: usize,
    seed: u64,
) -> Result<CorrelationReport, StatsError> {
    check_pair(x, y)?;
    if iterations == 0 {
        return Err(StatsError::NoIterations);
    }
    let n = x.len();
    let mut samples = (0..iterations as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b);
            let (mut xs, mut ys) = (vec![0.0; n], vec![0.0; n]);
            for _ in 0..MAX_REDRAWS {
                for k in 0..n {
                    let i = rng.random_range(0..n);
                    xs[k] = x[i];
                    ys[k] = y[i];
                }
                match kind.compute(&xs, &ys) {
                    Err(StatsError::ConstantInput) => continue,
                    other => return other,
                }
            }
            Err(StatsError::DegenerateResamples(MAX_REDRAWS))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    samples.sort_by(f64::total_cmp);
    let estimate = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(CorrelationReport {
        kind,
        estimate,
        ci_low: percentile(&samples, 0.025),
        ci_high: percentile(&samples, 0.975),
        method: CiMethod::BootstrapPercentile,
        n,
        iterations,
    })
}

/// Rate of `true` outcomes with a percentile bootstrap 95% interval.
pub fn tpr_with_ci(outcomes: &[bool], iterations: usize, seed: u64) -> Result<(f64, (f64, f64)), StatsError> {
    if outcomes.is_empty() {
        return Err(StatsError::Empty);
    }
    if iterations == 0 {
        return Err(StatsError::NoIterations);
    }
    let n = outcomes.len();
    let tpr = outcomes.iter().filter(|&&o| o).count() as f64 / n as f64;
    let mut rates: Vec<f64> = (0..iterations as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b);
            (0..n).filter(|_| outcomes[rng.random_range(0..n)]).count() as f64 / n as f64
        })
        .collect();
    rates.sort_by(f64::total_cmp);
    Ok((tpr, (percentile(&rates, 0.025), percentile(&rates, 0.975))))
}
