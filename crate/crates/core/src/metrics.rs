//! Full-reference metrics on 8-bit grayscale frames: RMSE, gradient
//! normalized RMSE and the weighted absolute error (WAE) with its fitting.
//!
//! WAE over normalized absolute errors `x = |Î - I| / 255`:
//!
//! ```text
//! w(x) = 1 / (1 + exp(-s (x - t)))
//! f(x) = a1 x + a2 x^2 + a3 x^3
//! WAE  = sum w(x) f(x) / sum w(x)
//! ```
//!
//! Since `x` only takes 256 values, WAE is evaluated exactly from a
//! histogram of absolute errors, which makes fitting cheap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{GrayImage, ImageError, RgbImage};
use crate::optim::{self, Bounds, NelderMeadOptions};
use crate::stats;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid WAE parameters: {0}")]
    BadParams(String),
    #[error("set {set_id}: {items} items but {mos} MOS values")]
    MosMismatch { set_id: String, items: usize, mos: usize },
    #[error("set {0} has fewer than 2 items")]
    TooFewItems(String),
    #[error("no training sets")]
    NoSets,
    #[error("every training set has constant MOS")]
    AllDegenerate,
    #[error("leave-one-out needs at least 2 sets, got {0}")]
    TooFewFolds(usize),
}

/// BT.601 luma, rounded to the nearest integer.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .pixels()
        .map(|[r, g, b]| {
            let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(img.width(), img.height(), data).expect("size preserved")
}

pub fn rmse(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricsError> {
    a.same_size(b)?;
    let sum: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&p, &q)| {
            let d = f64::from(p) - f64::from(q);
            d * d
        })
        .sum();
    Ok((sum / a.as_raw().len() as f64).sqrt())
}

/// Mean absolute gray-level error.
pub fn mae(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricsError> {
    a.same_size(b)?;
    let sum: u64 = a.as_raw().iter().zip(b.as_raw()).map(|(&p, &q)| u64::from(p.abs_diff(q))).sum();
    Ok(sum as f64 / a.as_raw().len() as f64)
}

/// RMSE with each squared error divided by `|grad gt|^2 + 1`. Gradients are
/// central differences over a border-replicated ground truth.
pub fn gn_rmse(interp: &GrayImage, gt: &GrayImage) -> Result<f64, MetricsError> {
    interp.same_size(gt)?;
    let (w, h) = (gt.width(), gt.height());
    let at = |x: usize, y: usize| f64::from(gt.get(x, y));
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) / 2.0;
            let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) / 2.0;
            let d = f64::from(interp.get(x, y)) - at(x, y);
            sum += d * d / (gx * gx + gy * gy + 1.0);
        }
    }
    Ok((sum / (w * h) as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaeParams {
    pub s: f64,
    pub t: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl WaeParams {
    pub fn new(s: f64, t: f64, a1: f64, a2: f64, a3: f64) -> Result<Self, MetricsError> {
        let p = Self { s, t, a1, a2, a3 };
        p.validate()?;
        Ok(p)
    }

    /// Plain mean absolute error (up to the 1/255 normalization).
    pub const MAE: Self = Self {
        s: 0.0,
        t: 0.0,
        a1: 1.0,
        a2: 0.0,
        a3: 0.0,
    };

    pub fn validate(&self) -> Result<(), MetricsError> {
        let finite = [self.s, self.t, self.a1, self.a2, self.a3].iter().all(|v| v.is_finite());
        if !finite {
            return Err(MetricsError::BadParams("non-finite value".into()));
        }
        if self.s < 0.0 {
            return Err(MetricsError::BadParams(format!("s = {} < 0", self.s)));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(MetricsError::BadParams(format!("t = {} outside [0, 1]", self.t)));
        }
        if self.a1 < 0.0 || self.a2 < 0.0 || self.a3 < 0.0 {
            return Err(MetricsError::BadParams("negative polynomial coefficient".into()));
        }
        Ok(())
    }

    pub fn weight(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-self.s * (x - self.t)).exp())
    }

    pub fn poly(&self, x: f64) -> f64 {
        x * (self.a1 + x * (self.a2 + x * self.a3))
    }

    fn to_vec(self) -> [f64; 5] {
        [self.s, self.t, self.a1, self.a2, self.a3]
    }

    fn from_slice(v: &[f64]) -> Self {
        Self {
            s: v[0],
            t: v[1],
            a1: v[2],
            a2: v[3],
            a3: v[4],
        }
    }

    /// Ordering used to break objective ties: lexicographic on
    /// `(s, t, a3, a2, a1)`, smallest first.
    fn tie_key(&self) -> [f64; 5] {
        [self.s, self.t, self.a3, self.a2, self.a1]
    }

    /// Per-level weight and weighted polynomial tables.
    fn tables(&self) -> ([f64; 256], [f64; 256]) {
        let mut w = [0.0; 256];
        let mut wf = [0.0; 256];
        for k in 0..256 {
            let x = k as f64 / 255.0;
            w[k] = self.weight(x);
            wf[k] = w[k] * self.poly(x);
        }
        (w, wf)
    }
}

/// Counts of absolute gray-level errors `|Î - I|`, indexed 0..=255.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub counts: Vec<u64>,
}

impl ErrorHistogram {
    pub fn from_images(interp: &GrayImage, gt: &GrayImage) -> Result<Self, MetricsError> {
        interp.same_size(gt)?;
        let mut counts = vec![0u64; 256];
        for (&p, &q) in interp.as_raw().iter().zip(gt.as_raw()) {
            counts[usize::from(p.abs_diff(q))] += 1;
        }
        Ok(Self { counts })
    }

    /// Builds a histogram from raw counts; missing levels are zero.
    pub fn from_counts(levels: &[(u8, u64)]) -> Self {
        let mut counts = vec![0u64; 256];
        for &(k, c) in levels {
            counts[usize::from(k)] += c;
        }
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mae(&self) -> f64 {
        let sum: f64 = self.counts.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum();
        sum / self.total() as f64
    }

    pub fn wae(&self, p: &WaeParams) -> f64 {
        let (w, wf) = p.tables();
        self.wae_with_tables(&w, &wf)
    }

    fn wae_with_tables(&self, w: &[f64; 256], wf: &[f64; 256]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                num += c * wf[k];
                den += c * w[k];
            }
        }
        num / den
    }
}

pub fn wae(interp: &GrayImage, gt: &GrayImage, p: &WaeParams) -> Result<f64, MetricsError> {
    p.validate()?;
    Ok(ErrorHistogram::from_images(interp, gt)?.wae(p))
}

/// SROCC between predicted quality and MOS. `None` when the MOS is constant
/// or has fewer than two entries; a constant prediction scores 0.
pub fn ranking_srocc(predicted_quality: &[f64], mos: &[f64]) -> Option<f64> {
    let n = mos.len();
    if n < 2 || predicted_quality.len() != n || mos.iter().all(|&m| m == mos[0]) {
        return None;
    }
    if predicted_quality.iter().all(|&q| q == predicted_quality[0]) {
        return Some(0.0);
    }
    if n == 2 {
        let sign = (predicted_quality[1] - predicted_quality[0]) * (mos[1] - mos[0]);
        return Some(sign.signum());
    }
    stats::srocc(predicted_quality, mos).ok()
}

/// Error histograms and MOS of one content set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitSet {
    pub set_id: String,
    pub histograms: Vec<ErrorHistogram>,
    pub mos: Vec<f64>,
}

impl FitSet {
    fn check(&self) -> Result<(), MetricsError> {
        if self.histograms.len() != self.mos.len() {
            return Err(MetricsError::MosMismatch {
                set_id: self.set_id.clone(),
                items: self.histograms.len(),
                mos: self.mos.len(),
            });
        }
        if self.histograms.len() < 2 {
            return Err(MetricsError::TooFewItems(self.set_id.clone()));
        }
        Ok(())
    }

    fn is_degenerate(&self) -> bool {
        self.mos.iter().all(|&m| m == self.mos[0])
    }

    /// SROCC of `-WAE` against MOS.
    pub fn srocc(&self, p: &WaeParams) -> Option<f64> {
        let (w, wf) = p.tables();
        let q: Vec<f64> = self.histograms.iter().map(|h| -h.wae_with_tables(&w, &wf)).collect();
        ranking_srocc(&q, &self.mos)
    }

    /// SROCC of `-MAE` against MOS.
    pub fn mae_srocc(&self) -> Option<f64> {
        let q: Vec<f64> = self.histograms.iter().map(|h| -h.mae()).collect();
        ranking_srocc(&q, &self.mos)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    pub random_samples: usize,
    pub refine_starts: usize,
    pub s_max: f64,
    pub a_max: f64,
    pub seed: u64,
    pub simplex: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            random_samples: 2000,
            refine_starts: 5,
            s_max: 100.0,
            a_max: 50.0,
            seed: 0,
            simplex: NelderMeadOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub params: WaeParams,
    /// Mean training SROCC of the returned parameters.
    pub objective: f64,
    /// Names of parameters sitting on a search bound.
    pub saturated: Vec<String>,
    pub evaluations: usize,
    /// Training sets skipped because their MOS is constant.
    pub excluded_sets: Vec<String>,
}

/// Maximizes the mean training SROCC of `-WAE` over the parameter box by
/// random search followed by simplex refinement of the best starts.
pub fn fit_wae(sets: &[FitSet], opts: &FitOptions) -> Result<FitResult, MetricsError> {
    if sets.is_empty() {
        return Err(MetricsError::NoSets);
    }
    for s in sets {
        s.check()?;
    }
    let (usable, excluded): (Vec<&FitSet>, Vec<&FitSet>) = sets.iter().partition(|s| !s.is_degenerate());
    for s in &excluded {
        log::warn!("set {} has constant MOS and is excluded from fitting", s.set_id);
    }
    if usable.is_empty() {
        return Err(MetricsError::AllDegenerate);
    }

    let objective = |p: &WaeParams| -> f64 {
        let (w, wf) = p.tables();
        let total: f64 = usable
            .iter()
            .map(|set| {
                let q: Vec<f64> = set.histograms.iter().map(|h| -h.wae_with_tables(&w, &wf)).collect();
                ranking_srocc(&q, &set.mos).unwrap_or(0.0)
            })
            .sum();
        total / usable.len() as f64
    };

    let bounds = Bounds {
        lower: vec![0.0; 5],
        upper: vec![opts.s_max, 1.0, opts.a_max, opts.a_max, opts.a_max],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut candidates = vec![
        WaeParams::MAE,
        WaeParams { a1: 0.0, a2: 1.0, ..WaeParams::MAE },
        WaeParams { a1: 0.0, a3: 1.0, ..WaeParams::MAE },
    ];
    candidates.extend((0..opts.random_samples).map(|_| {
        let v: Vec<f64> = (0..5).map(|k| rng.random_range(bounds.lower[k]..=bounds.upper[k])).collect();
        WaeParams::from_slice(&v)
    }));
    let mut scored: Vec<(WaeParams, f64)> = candidates.par_iter().map(|p| (*p, objective(p))).collect();
    let mut evaluations = scored.len();

    let mut ranked = scored.clone();
    ranked.sort_by(|a, b| better(b, a));
    ranked.dedup_by(|a, b| a.0 == b.0);
    let refined: Vec<(WaeParams, f64, usize)> = ranked
        .iter()
        .take(opts.refine_starts)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(start, _)| {
            let m = optim::minimize(
                |v| -objective(&WaeParams::from_slice(v)),
                &start.to_vec(),
                &bounds,
                &opts.simplex,
            );
            (WaeParams::from_slice(&m.x), -m.value, m.evals)
        })
        .collect();
    for (p, v, e) in refined {
        evaluations += e;
        scored.push((p, v));
    }

    let (params, best) = scored
        .into_iter()
        .max_by(better)
        .expect("at least one candidate");
    let mut saturated = Vec::new();
    for (name, value, hi) in [
        ("s", params.s, opts.s_max),
        ("a1", params.a1, opts.a_max),
        ("a2", params.a2, opts.a_max),
        ("a3", params.a3, opts.a_max),
    ] {
        if value >= hi {
            saturated.push(name.to_string());
        }
    }
    Ok(FitResult {
        params,
        objective: best,
        saturated,
        evaluations,
        excluded_sets: excluded.iter().map(|s| s.set_id.clone()).collect(),
    })
}

/// `Greater` when `a` should be preferred: higher objective, then smaller
/// tie key.
fn better(a: &(WaeParams, f64), b: &(WaeParams, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1).then_with(|| {
        let (ka, kb) = (a.0.tie_key(), b.0.tie_key());
        for (x, y) in ka.iter().zip(&kb) {
            match y.total_cmp(x) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        std::cmp::Ordering::Equal
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LooFold {
    pub held_out: String,
    pub params: WaeParams,
    pub train_objective: f64,
    /// `None` when the held-out MOS is constant.
    pub test_srocc: Option<f64>,
    pub mae_srocc: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LooReport {
    pub folds: Vec<LooFold>,
    pub mean_test_srocc: f64,
    pub mean_mae_srocc: f64,
}

/// Leave-one-set-out cross-validation: one fold per set.
pub fn loo_cross_validation(sets: &[FitSet], opts: &FitOptions) -> Result<LooReport, MetricsError> {
    if sets.len() < 2 {
        return Err(MetricsError::TooFewFolds(sets.len()));
    }
    let folds = (0..sets.len())
        .into_par_iter()
        .map(|k| {
            let train: Vec<FitSet> = sets
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, s)| s.clone())
                .collect();
            let fit = fit_wae(&train, opts)?;
            Ok(LooFold {
                held_out: sets[k].set_id.clone(),
                params: fit.params,
                train_objective: fit.objective,
                test_srocc: sets[k].srocc(&fit.params),
                mae_srocc: sets[k].mae_srocc(),
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let mean = |xs: Vec<f64>| if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    Ok(LooReport {
        mean_test_srocc: mean(folds.iter().filter_map(|f| f.test_srocc).collect()),
        mean_mae_srocc: mean(folds.iter().filter_map(|f| f.mae_srocc).collect()),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const REFERENCE: WaeParams = WaeParams {
        s: 28.0186,
        t: 0.0973,
        a1: 8.7285,
        a2: 4.6443,
        a3: 0.7516,
    };

    fn gray(w: usize, h: usize, data: Vec<u8>) -> GrayImage {
        GrayImage::new(w, h, data).unwrap()
    }

    fn random_gray(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
        gray(w, h, (0..w * h).map(|_| rng.random()).collect())
    }

    fn loop_wae(a: &GrayImage, b: &GrayImage, p: &WaeParams) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (&x, &y) in a.as_raw().iter().zip(b.as_raw()) {
            let e = (f64::from(x) - f64::from(y)).abs() / 255.0;
            let w = 1.0 / (1.0 + (-p.s * (e - p.t)).exp());
            num += w * (p.a1 * e + p.a2 * e * e + p.a3 * e * e * e);
            den += w;
        }
        num / den
    }

    fn loop_gn_rmse(a: &GrayImage, gt: &GrayImage) -> f64 {
        let (w, h) = (gt.width() as i64, gt.height() as i64);
        let px = |x: i64, y: i64| f64::from(gt.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize));
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                let gx = 0.5 * (px(x + 1, y) - px(x - 1, y));
                let gy = 0.5 * (px(x, y + 1) - px(x, y - 1));
                let d = f64::from(a.get(x as usize, y as usize)) - px(x, y);
                s += d * d / (1.0 + gx * gx + gy * gy);
            }
        }
        (s / (w * h) as f64).sqrt()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn grayscale_examples() {
        let img = RgbImage::from_fn(3, 1, |x, _| match x {
            0 => [255, 255, 255],
            1 => [255, 0, 0],
            _ => [0, 0, 0],
        });
        assert_eq!(to_grayscale(&img).as_raw(), &[255, 76, 0]);
        for g in 0..=255u8 {
            assert_eq!(to_grayscale(&RgbImage::filled(1, 1, [g, g, g])).as_raw(), &[g]);
        }
    }

    #[test]
    fn rmse_examples() {
        let a = gray(2, 1, vec![10, 20]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = gray(2, 1, vec![13, 24]);
        assert!((rmse(&a, &b).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        let c = gray(2, 1, vec![17, 27]);
        assert!((rmse(&a, &c).unwrap() - 7.0).abs() < 1e-12);
        assert!(rmse(&a, &gray(1, 2, vec![0, 0])).is_err());
    }

    #[test]
    fn gn_rmse_examples() {
        let flat = gray(3, 3, vec![100; 9]);
        assert_eq!(gn_rmse(&flat, &flat).unwrap(), 0.0);
        let off = gray(3, 3, vec![105; 9]);
        assert!((gn_rmse(&off, &flat).unwrap() - 5.0).abs() < 1e-12);
        let ramp = gray(3, 3, vec![0, 10, 20, 0, 10, 20, 0, 10, 20]);
        let plus = gray(3, 3, ramp.as_raw().iter().map(|v| v + 1).collect());
        // Left/right columns see gradient 5, the middle column 10.
        let oracle = ((3.0 / 26.0 + 3.0 / 101.0 + 3.0 / 26.0) / 9.0f64).sqrt();
        assert!((gn_rmse(&plus, &ramp).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_gray(&mut rng, 16, 16);
            let b = random_gray(&mut rng, 16, 16);
            let p = WaeParams {
                s: rng.random_range(0.0..100.0),
                t: rng.random(),
                a1: rng.random_range(0.0..50.0),
                a2: rng.random_range(0.0..50.0),
                a3: rng.random_range(0.0..50.0),
            };
            assert!(rel(wae(&a, &b, &p).unwrap(), loop_wae(&a, &b, &p)) < 1e-9);
            assert!(rel(gn_rmse(&a, &b).unwrap(), loop_gn_rmse(&a, &b)) < 1e-9);
            let sq: f64 = a
                .as_raw()
                .iter()
                .zip(b.as_raw())
                .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
                .sum();
            assert!(rel(rmse(&a, &b).unwrap(), (sq / 256.0).sqrt()) < 1e-9);
        }
    }

    #[test]
    fn reference_parameter_values() {
        assert!((REFERENCE.poly(0.2) - 1.9375).abs() < 1e-3);
        let gt = gray(2, 1, vec![0, 0]);
        let one = gray(1, 1, vec![51]);
        assert!((wae(&one, &gray(1, 1, vec![0]), &REFERENCE).unwrap() - 1.9375).abs() < 1e-3);
        let two = gray(2, 1, vec![0, 51]);
        assert!((wae(&two, &gt, &REFERENCE).unwrap() - 1.8196).abs() < 1e-3);
        assert_eq!(wae(&gt, &gt, &REFERENCE).unwrap(), 0.0);
    }

    #[test]
    fn zero_slope_is_mean_of_poly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_gray(&mut rng, 8, 8);
        let b = random_gray(&mut rng, 8, 8);
        let p = WaeParams { s: 0.0, ..REFERENCE };
        let mean: f64 = a
            .as_raw()
            .iter()
            .zip(b.as_raw())
            .map(|(&x, &y)| p.poly(f64::from(x.abs_diff(y)) / 255.0))
            .sum::<f64>()
            / 64.0;
        assert!(rel(wae(&a, &b, &p).unwrap(), mean) < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(WaeParams::new(-1.0, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(WaeParams::new(1.0, 1.5, 1.0, 0.0, 0.0).is_err());
        assert!(WaeParams::new(1.0, 0.5, -1.0, 0.0, 0.0).is_err());
        assert!(WaeParams::new(f64::NAN, 0.5, 1.0, 0.0, 0.0).is_err());
        assert!(WaeParams::new(28.0, 0.1, 8.0, 4.0, 0.7).is_ok());
    }

    #[test]
    fn weighted_mean_can_drop_when_small_errors_grow() {
        // Raising a tiny error lifts its weight more than its value, so the
        // weighted mean falls even though no error shrank.
        let gt = gray(2, 1, vec![0, 0]);
        let before = wae(&gray(2, 1, vec![0, 128]), &gt, &REFERENCE).unwrap();
        let after = wae(&gray(2, 1, vec![13, 128]), &gt, &REFERENCE).unwrap();
        assert!(after < before);
    }

    proptest! {
        #[test]
        fn poly_scaling_is_equivariant(
            errs in proptest::collection::vec(proptest::collection::vec(0u8..=255, 16), 4),
            c in 0.01f64..100.0,
        ) {
            let gt = gray(4, 4, vec![0; 16]);
            let imgs: Vec<GrayImage> = errs.into_iter().map(|e| gray(4, 4, e)).collect();
            let scaled = WaeParams { a1: REFERENCE.a1 * c, a2: REFERENCE.a2 * c, a3: REFERENCE.a3 * c, ..REFERENCE };
            let base: Vec<f64> = imgs.iter().map(|i| wae(i, &gt, &REFERENCE).unwrap()).collect();
            let up: Vec<f64> = imgs.iter().map(|i| wae(i, &gt, &scaled).unwrap()).collect();
            for (b, u) in base.iter().zip(&up) {
                prop_assert!((u - c * b).abs() <= 1e-9 * (c * b).abs().max(1e-12));
            }
            prop_assert_eq!(stats::average_ranks(&base), stats::average_ranks(&up));
        }

        #[test]
        fn unweighted_wae_is_monotone(
            errs in proptest::collection::vec(0u8..=200, 16),
            bumps in proptest::collection::vec(0u8..=55, 16),
        ) {
            let gt = gray(4, 4, vec![0; 16]);
            let p = WaeParams { s: 0.0, ..REFERENCE };
            let a = gray(4, 4, errs.clone());
            let b = gray(4, 4, errs.iter().zip(&bumps).map(|(e, d)| e + d).collect());
            prop_assert!(wae(&b, &gt, &p).unwrap() >= wae(&a, &gt, &p).unwrap() - 1e-12);
        }

        #[test]
        fn uniform_error_wae_is_monotone(e in 0u8..255, d in 1u8..=255) {
            let e2 = e.saturating_add(d);
            prop_assume!(e2 > e);
            let gt = gray(2, 2, vec![0; 4]);
            let lo = wae(&gray(2, 2, vec![e; 4]), &gt, &REFERENCE).unwrap();
            let hi = wae(&gray(2, 2, vec![e2; 4]), &gt, &REFERENCE).unwrap();
            prop_assert!(hi > lo);
        }
    }

    fn mae_sets(seed: u64, n_sets: usize, items: usize) -> Vec<FitSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_sets)
            .map(|s| {
                let histograms: Vec<ErrorHistogram> = (0..items)
                    .map(|_| {
                        let levels: Vec<(u8, u64)> =
                            (0..8).map(|_| (rng.random_range(0..=255u8), rng.random_range(1..500))).collect();
                        ErrorHistogram::from_counts(&levels)
                    })
                    .collect();
                let mos = histograms.iter().map(|h| -h.mae()).collect();
                FitSet {
                    set_id: format!("set{s}"),
                    histograms,
                    mos,
                }
            })
            .collect()
    }

    fn quick() -> FitOptions {
        FitOptions {
            random_samples: 200,
            ..Default::default()
        }
    }

    #[test]
    fn mos_equal_to_mae_is_fitted_exactly() {
        let sets = mae_sets(3, 4, 10);
        let fit = fit_wae(&sets, &quick()).unwrap();
        assert_eq!(fit.objective, 1.0);
        let loo = loo_cross_validation(&sets, &quick()).unwrap();
        assert_eq!(loo.folds.len(), 4);
        for f in &loo.folds {
            assert!((f.test_srocc.unwrap() - 1.0).abs() < 1e-9, "{f:?}");
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let sets = mae_sets(4, 3, 6);
        let a = fit_wae(&sets, &quick()).unwrap();
        let b = fit_wae(&sets, &quick()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn degenerate_sets_are_excluded() {
        let mut sets = mae_sets(6, 3, 5);
        sets[1].mos = vec![1.0; 5];
        let fit = fit_wae(&sets, &quick()).unwrap();
        assert_eq!(fit.excluded_sets, vec!["set1".to_string()]);
        for s in &mut sets {
            s.mos = vec![0.0; 5];
        }
        assert!(matches!(fit_wae(&sets, &quick()), Err(MetricsError::AllDegenerate)));
    }

    #[test]
    fn mos_length_mismatch_is_rejected() {
        let mut sets = mae_sets(7, 2, 4);
        sets[0].mos.pop();
        assert!(matches!(fit_wae(&sets, &quick()), Err(MetricsError::MosMismatch { .. })));
    }

    #[test]
    fn ranking_srocc_edge_cases() {
        assert_eq!(ranking_srocc(&[1.0, 2.0], &[3.0, 4.0]), Some(1.0));
        assert_eq!(ranking_srocc(&[1.0, 2.0], &[4.0, 3.0]), Some(-1.0));
        assert_eq!(ranking_srocc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Some(0.0));
        assert_eq!(ranking_srocc(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]), None);
    }
}
