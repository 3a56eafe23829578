//! Boosted stimulus preparation: pixel-wise artefact amplification and
//! extraction of the most degraded region for zooming.

use serde::{Deserialize, Serialize};

use crate::image::{ImageError, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum StimuliError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("no interpolated images given")]
    EmptyInput,
    #[error("gaussian sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("image is constant; no threshold separates it")]
    ConstantImage,
    #[error("box {0:?} does not fit inside a {1}x{2} image")]
    BoxOutOfBounds(RoiBox, usize, usize),
    #[error("amplification factor must be >= 1, got {0}")]
    BadAlpha(f64),
    #[error("zoom factor must be >= 1, got {0}")]
    BadZoom(f64),
}

/// Amplification and zoom factors applied to every stimulus of a study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub alpha: f64,
    pub zoom: f64,
}

impl BoostConfig {
    pub fn new(alpha: f64, zoom: f64) -> Result<Self, StimuliError> {
        if !(alpha >= 1.0) {
            return Err(StimuliError::BadAlpha(alpha));
        }
        if !(zoom >= 1.0) {
            return Err(StimuliError::BadZoom(zoom));
        }
        Ok(Self { alpha, zoom })
    }
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            zoom: 1.5,
        }
    }
}

/// Largest factor that keeps a single channel inside [0, 255].
fn channel_cap(v: u8, v_hat: u8, alpha: f64) -> f64 {
    let v = f64::from(v);
    let d = f64::from(v_hat) - v;
    if d > 0.0 {
        (255.0 - v) / d
    } else if d < 0.0 {
        -v / d
    } else {
        alpha
    }
}

/// The per-pixel amplification factor: the default, reduced to the largest
/// value for which no channel leaves [0, 255].
pub fn effective_alpha(v: [u8; 3], v_hat: [u8; 3], alpha_default: f64) -> f64 {
    (0..3).fold(alpha_default, |a, c| {
        a.min(channel_cap(v[c], v_hat[c], alpha_default))
    })
}

/// Unrounded result of the linear transform `v + alpha * (v_hat - v)`.
pub fn amplify_pixel_exact(v: [u8; 3], v_hat: [u8; 3], alpha_default: f64) -> [f64; 3] {
    let a = effective_alpha(v, v_hat, alpha_default);
    std::array::from_fn(|c| {
        let v = f64::from(v[c]);
        v + a * (f64::from(v_hat[c]) - v)
    })
}

/// Amplifies the difference of an interpolated pixel `v_hat` from its ground
/// truth `v`. The result is rounded half away from zero; it never needs
/// clamping because the factor is capped per pixel.
pub fn amplify_pixel(v: [u8; 3], v_hat: [u8; 3], alpha_default: f64) -> [u8; 3] {
    let exact = amplify_pixel_exact(v, v_hat, alpha_default);
    exact.map(|x| {
        let r = x.round();
        debug_assert!((0.0..=255.0).contains(&r), "amplified value {x} out of range");
        r as u8
    })
}

pub fn amplify_image(gt: &RgbImage, interp: &RgbImage, alpha: f64) -> Result<RgbImage, StimuliError> {
    gt.same_size(interp)?;
    if !(alpha >= 1.0) {
        return Err(StimuliError::BadAlpha(alpha));
    }
    let data = gt
        .pixels()
        .zip(interp.pixels())
        .flat_map(|(v, v_hat)| amplify_pixel(v, v_hat, alpha))
        .collect();
    Ok(RgbImage::new(gt.width(), gt.height(), data)?)
}

/// Real-valued, nonnegative per-pixel error map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ErrorImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "error image buffer length");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Mean over images of the channel-mean absolute difference to `gt`.
pub fn average_error_image(interps: &[RgbImage], gt: &RgbImage) -> Result<ErrorImage, StimuliError> {
    if interps.is_empty() {
        return Err(StimuliError::EmptyInput);
    }
    let mut acc = vec![0.0; gt.width() * gt.height()];
    for img in interps {
        gt.same_size(img)?;
        for (a, (p, q)) in acc.iter_mut().zip(img.pixels().zip(gt.pixels())) {
            let sum: i32 = (0..3).map(|c| (i32::from(p[c]) - i32::from(q[c])).abs()).sum();
            *a += f64::from(sum) / 3.0;
        }
    }
    let n = interps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(ErrorImage::new(gt.width(), gt.height(), acc))
}

/// Normalized 1-D Gaussian kernel truncated at radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn convolve_rows(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let last = width as isize - 1;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let sx = (x as isize + k as isize - r).clamp(0, last) as usize;
                    w * row[sx]
                })
                .sum();
        }
    }
    out
}

fn transpose(src: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = src[y * width + x];
        }
    }
    out
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_smooth(e: &ErrorImage, sigma: f64) -> Result<ErrorImage, StimuliError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(StimuliError::BadSigma(sigma));
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (e.width, e.height);
    let horiz = convolve_rows(&e.data, w, h, &kernel);
    let vert = convolve_rows(&transpose(&horiz, w, h), h, w, &kernel);
    Ok(ErrorImage::new(w, h, transpose(&vert, h, w)))
}

pub const OTSU_BINS: usize = 256;

/// Gaussian sigma, in pixels, applied to the average error image before thresholding.
pub const DEFAULT_SMOOTHING_SIGMA: f64 = 20.0;

/// Linear 256-bin quantization over `[min, max]`.
fn bin_of(v: f64, lo: f64, hi: f64) -> usize {
    let b = ((v - lo) / (hi - lo) * OTSU_BINS as f64).floor();
    (b.max(0.0) as usize).min(OTSU_BINS - 1)
}

/// Otsu split of an error image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtsuSplit {
    /// Last bin of the lower class.
    pub bin: usize,
    /// Upper edge of `bin` in image units.
    pub threshold: f64,
    lo: f64,
    hi: f64,
}

impl OtsuSplit {
    pub fn is_above(&self, v: f64) -> bool {
        bin_of(v, self.lo, self.hi) > self.bin
    }
}

pub fn otsu_split(e: &ErrorImage) -> Result<OtsuSplit, StimuliError> {
    let (lo, hi) = e.min_max();
    if !(hi > lo) {
        return Err(StimuliError::ConstantImage);
    }
    let mut hist = [0u64; OTSU_BINS];
    for &v in &e.data {
        hist[bin_of(v, lo, hi)] += 1;
    }
    let total = e.data.len() as f64;
    let weighted_total: f64 = hist.iter().enumerate().map(|(b, &c)| b as f64 * c as f64).sum();

    let mut var = [0.0f64; OTSU_BINS - 1];
    let (mut w0, mut s0) = (0.0, 0.0);
    for k in 0..OTSU_BINS - 1 {
        w0 += hist[k] as f64;
        s0 += k as f64 * hist[k] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = s0 / w0;
        let m1 = (weighted_total - s0) / w1;
        var[k] = w0 * w1 * (m0 - m1).powi(2) / (total * total);
    }
    let bin = plateau_midpoint_argmax(&var);
    Ok(OtsuSplit {
        bin,
        threshold: lo + (bin + 1) as f64 * (hi - lo) / OTSU_BINS as f64,
        lo,
        hi,
    })
}

/// Index of the maximum; when the maximum is attained on a contiguous run,
/// the middle of the first such run.
pub(crate) fn plateau_midpoint_argmax(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = max.abs() * 1e-12;
    let start = values.iter().position(|&v| v >= max - tol).unwrap_or(0);
    let len = values[start..]
        .iter()
        .take_while(|&&v| v >= max - tol)
        .count();
    start + (len - 1) / 2
}

/// Otsu threshold of a real-valued error image.
pub fn otsu_threshold(e: &ErrorImage) -> Result<f64, StimuliError> {
    otsu_split(e).map(|s| s.threshold)
}

/// Axis-aligned pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl RoiBox {
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }
}

/// Minimum component size kept by [`extract_rois`], as a fraction of the image area.
pub const MIN_ROI_AREA_FRACTION: f64 = 0.001;

/// Bounding boxes of the 8-connected above-threshold components, heaviest first.
pub fn extract_rois(e_smoothed: &ErrorImage) -> Result<Vec<RoiBox>, StimuliError> {
    let split = otsu_split(e_smoothed)?;
    let (w, h) = (e_smoothed.width, e_smoothed.height);
    let mask: Vec<bool> = e_smoothed.data.iter().map(|&v| split.is_above(v)).collect();
    let min_area = MIN_ROI_AREA_FRACTION * (w * h) as f64;

    let mut seen = vec![false; w * h];
    let mut found: Vec<(f64, RoiBox)> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut mass, mut area) = (0.0, 0usize);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            mass += e_smoothed.data[p];
            area += 1;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if area as f64 >= min_area {
            found.push((
                mass,
                RoiBox {
                    x: x0,
                    y: y0,
                    w: x1 - x0 + 1,
                    h: y1 - y0 + 1,
                },
            ));
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1.y, a.1.x).cmp(&(b.1.y, b.1.x))));
    Ok(found.into_iter().map(|(_, b)| b).collect())
}

pub fn crop(img: &RgbImage, b: RoiBox) -> Result<RgbImage, StimuliError> {
    if !b.fits(img.width(), img.height()) {
        return Err(StimuliError::BoxOutOfBounds(b, img.width(), img.height()));
    }
    Ok(RgbImage::from_fn(b.w, b.h, |x, y| img.pixel(b.x + x, b.y + y)))
}

/// Crops `b` and upsamples it bilinearly (pixel-center alignment, clamped
/// borders) to `round(w * factor) x round(h * factor)`.
pub fn zoom_crop(img: &RgbImage, b: RoiBox, factor: f64) -> Result<RgbImage, StimuliError> {
    if !(factor >= 1.0) {
        return Err(StimuliError::BadZoom(factor));
    }
    let src = crop(img, b)?;
    let out_w = (b.w as f64 * factor).round() as usize;
    let out_h = (b.h as f64 * factor).round() as usize;
    let sx = b.w as f64 / out_w as f64;
    let sy = b.h as f64 / out_h as f64;
    let sample = |pos: f64, len: usize| -> (usize, usize, f64) {
        let p = pos.clamp(0.0, (len - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f64)
    };
    Ok(RgbImage::from_fn(out_w, out_h, |x, y| {
        let (x0, x1, fx) = sample((x as f64 + 0.5) * sx - 0.5, b.w);
        let (y0, y1, fy) = sample((y as f64 + 0.5) * sy - 0.5, b.h);
        let (p00, p10, p01, p11) = (src.pixel(x0, y0), src.pixel(x1, y0), src.pixel(x0, y1), src.pixel(x1, y1));
        std::array::from_fn(|c| {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
            let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            (top * (1.0 - fy) + bottom * fy).round() as u8
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar transcription of the per-channel cap loop, kept separate from
    /// the fold used in the implementation.
    fn oracle_amplify(v: [u8; 3], vh: [u8; 3], alpha: f64) -> ([u8; 3], f64) {
        let mut caps = [0.0; 3];
        for c in 0..3 {
            let d = vh[c] as f64 - v[c] as f64;
            caps[c] = if d > 0.0 {
                (255.0 - v[c] as f64) / d
            } else if d < 0.0 {
                -(v[c] as f64) / d
            } else {
                alpha
            };
        }
        let mut a = alpha;
        for cap in caps {
            if cap < a {
                a = cap;
            }
        }
        let mut out = [0u8; 3];
        for c in 0..3 {
            let val = v[c] as f64 + a * (vh[c] as f64 - v[c] as f64);
            out[c] = val.round() as u8;
        }
        (out, a)
    }

    #[test]
    fn amplify_pixel_examples() {
        assert_eq!(amplify_pixel([100; 3], [100; 3], 2.0), [100; 3]);
        assert_eq!(amplify_pixel([100; 3], [150, 100, 100], 2.0), [200, 100, 100]);
        assert_eq!(amplify_pixel([200, 0, 0], [240, 0, 0], 2.0), [255, 0, 0]);
        assert!((effective_alpha([200, 0, 0], [240, 0, 0], 2.0) - 1.375).abs() < 1e-12);
        assert!((channel_cap(100, 150, 2.0) - 3.1).abs() < 1e-12);
    }

    #[test]
    fn amplify_downward_cap() {
        // v=40, v_hat=10 -> cap 40/30
        let out = amplify_pixel([40, 0, 0], [10, 0, 0], 3.0);
        assert_eq!(out, [0, 0, 0]);
    }

    #[test]
    fn amplify_image_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = RgbImage::from_fn(8, 8, |_, _| rng.random());
        let interp = RgbImage::from_fn(8, 8, |_, _| rng.random());
        assert_eq!(amplify_image(&gt, &gt, 3.7).unwrap(), gt);
        assert_eq!(amplify_image(&gt, &interp, 1.0).unwrap(), interp);
    }

    #[test]
    fn amplify_image_matches_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = RgbImage::from_fn(8, 8, |_, _| rng.random());
        let interp = RgbImage::from_fn(8, 8, |_, _| rng.random());
        let out = amplify_image(&gt, &interp, 2.0).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let (expect, _) = oracle_amplify(gt.pixel(x, y), interp.pixel(x, y), 2.0);
                assert_eq!(out.pixel(x, y), expect);
            }
        }
    }

    #[test]
    fn amplify_image_size_mismatch() {
        let a = RgbImage::filled(2, 2, [0; 3]);
        let b = RgbImage::filled(2, 3, [0; 3]);
        assert!(matches!(amplify_image(&a, &b, 2.0), Err(StimuliError::Image(ImageError::SizeMismatch(..)))));
    }

    proptest! {
        #[test]
        fn amplified_values_stay_in_range(v in any::<[u8; 3]>(), vh in any::<[u8; 3]>(), alpha in 1.0f64..8.0) {
            for x in amplify_pixel_exact(v, vh, alpha) {
                prop_assert!((-1e-9..=255.0 + 1e-9).contains(&x));
            }
            let (expect, a) = oracle_amplify(v, vh, alpha);
            prop_assert_eq!(amplify_pixel(v, vh, alpha), expect);
            prop_assert_eq!(effective_alpha(v, vh, alpha), a);
        }

        #[test]
        fn amplification_grows_with_alpha_below_cap(v in any::<[u8; 3]>(), vh in any::<[u8; 3]>(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let cap = effective_alpha(v, vh, f64::INFINITY).min(50.0);
            prop_assume!(cap >= 1.0);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a1 = 1.0 + lo * (cap - 1.0);
            let a2 = 1.0 + hi * (cap - 1.0);
            let o1 = amplify_pixel_exact(v, vh, a1);
            let o2 = amplify_pixel_exact(v, vh, a2);
            for c in 0..3 {
                prop_assert!((o2[c] - v[c] as f64).abs() + 1e-9 >= (o1[c] - v[c] as f64).abs());
            }
        }
    }

    #[test]
    fn average_error_examples() {
        let gt = RgbImage::filled(3, 2, [10, 20, 30]);
        let e = average_error_image(std::slice::from_ref(&gt), &gt).unwrap();
        assert!(e.data.iter().all(|&v| v == 0.0));

        let gt = RgbImage::filled(1, 1, [100, 100, 100]);
        let a = RgbImage::filled(1, 1, [110, 90, 110]); // mean abs 10
        let b = RgbImage::filled(1, 1, [130, 70, 130]); // mean abs 30
        let e = average_error_image(&[a, b], &gt).unwrap();
        assert!((e.data[0] - 20.0).abs() < 1e-12);

        assert!(matches!(average_error_image(&[], &gt), Err(StimuliError::EmptyInput)));
        let wrong = RgbImage::filled(2, 1, [0; 3]);
        assert!(average_error_image(&[wrong], &gt).is_err());
    }

    #[test]
    fn average_error_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = RgbImage::from_fn(4, 4, |_, _| rng.random());
        let imgs: Vec<_> = (0..5).map(|_| RgbImage::from_fn(4, 4, |_, _| rng.random())).collect();
        let e = average_error_image(&imgs, &gt).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let mut total = 0.0;
                for img in &imgs {
                    let (p, q) = (img.pixel(x, y), gt.pixel(x, y));
                    let mut s = 0.0;
                    for c in 0..3 {
                        s += (p[c] as f64 - q[c] as f64).abs();
                    }
                    total += s / 3.0;
                }
                assert!((e.get(x, y) - total / 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_preserves_constants_and_mass() {
        let c = ErrorImage::new(9, 7, vec![4.25; 63]);
        let s = gaussian_smooth(&c, 2.0).unwrap();
        assert!(s.data.iter().all(|v| (v - 4.25).abs() < 1e-9));

        let mut data = vec![0.0; 41 * 41];
        data[20 * 41 + 20] = 1.0;
        let imp = ErrorImage::new(41, 41, data);
        let s = gaussian_smooth(&imp, 1.0).unwrap();
        // Direct kernel evaluation: radius 3, peak weight 1/sum(exp(-i^2/2)).
        let norm: f64 = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).sum();
        let peak = 1.0 / (norm * norm);
        assert!((s.get(20, 20) - peak).abs() < 1e-12);
        let total: f64 = s.data.iter().sum();
        assert!((total - 1.0).abs() < 1e-3);
        assert_eq!((s.width, s.height), (41, 41));
    }

    #[test]
    fn smoothing_rejects_bad_sigma() {
        let c = ErrorImage::new(2, 2, vec![0.0; 4]);
        assert!(gaussian_smooth(&c, 0.0).is_err());
        assert!(gaussian_smooth(&c, -1.0).is_err());
    }

    #[test]
    fn smoothing_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = ErrorImage::new(12, 10, (0..120).map(|_| rng.random::<f64>() * 50.0).collect());
        let b = ErrorImage::new(12, 10, (0..120).map(|_| rng.random::<f64>() * 50.0).collect());
        let combo = ErrorImage::new(12, 10, a.data.iter().zip(&b.data).map(|(x, y)| 2.5 * x + 0.75 * y).collect());
        let (sa, sb, sc) = (gaussian_smooth(&a, 1.7).unwrap(), gaussian_smooth(&b, 1.7).unwrap(), gaussian_smooth(&combo, 1.7).unwrap());
        for i in 0..120 {
            let expect = 2.5 * sa.data[i] + 0.75 * sb.data[i];
            assert!((sc.data[i] - expect).abs() <= 1e-6 * expect.abs().max(1.0));
        }
    }

    /// Exhaustive Otsu: for every candidate split, recompute class statistics
    /// directly from the pixel values' bins.
    fn otsu_oracle(values: &[f64]) -> usize {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins: Vec<usize> = values
            .iter()
            .map(|&v| (((v - lo) / (hi - lo) * 256.0).floor() as usize).min(255))
            .collect();
        let n = values.len() as f64;
        let scores: Vec<f64> = (0..255)
            .map(|k| {
                let lower: Vec<f64> = bins.iter().filter(|&&b| b <= k).map(|&b| b as f64).collect();
                let upper: Vec<f64> = bins.iter().filter(|&&b| b > k).map(|&b| b as f64).collect();
                if lower.is_empty() || upper.is_empty() {
                    return 0.0;
                }
                let m0 = lower.iter().sum::<f64>() / lower.len() as f64;
                let m1 = upper.iter().sum::<f64>() / upper.len() as f64;
                (lower.len() as f64 / n) * (upper.len() as f64 / n) * (m0 - m1).powi(2)
            })
            .collect();
        plateau_midpoint_argmax(&scores)
    }

    #[test]
    fn otsu_two_modes_plateau_midpoint() {
        let data: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 0.0 } else { 255.0 }).collect();
        let e = ErrorImage::new(5, 4, data);
        let split = otsu_split(&e).unwrap();
        assert_eq!(split.bin, 127);
        let t = otsu_threshold(&e).unwrap();
        assert!(t > 0.0 && t < 255.0);
    }

    #[test]
    fn otsu_matches_exhaustive_search() {
        let bimodal: Vec<f64> = [10.0; 4].into_iter().chain([200.0; 4]).collect();
        let e = ErrorImage::new(4, 2, bimodal.clone());
        assert_eq!(otsu_split(&e).unwrap().bin, otsu_oracle(&bimodal));

        let three: Vec<f64> = [5.0; 6].into_iter().chain([90.0; 3]).chain([240.0; 3]).collect();
        let e = ErrorImage::new(4, 3, three.clone());
        assert_eq!(otsu_split(&e).unwrap().bin, otsu_oracle(&three));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..64)
                .map(|i| if i % 3 == 0 { rng.random::<f64>() * 30.0 } else { 60.0 + rng.random::<f64>() * 40.0 })
                .collect();
            let e = ErrorImage::new(8, 8, vals.clone());
            assert_eq!(otsu_split(&e).unwrap().bin, otsu_oracle(&vals));
        }
    }

    #[test]
    fn otsu_constant_is_error() {
        let e = ErrorImage::new(3, 3, vec![7.0; 9]);
        assert!(matches!(otsu_threshold(&e), Err(StimuliError::ConstantImage)));
        assert!(extract_rois(&e).is_err());
    }

    fn blob_image(w: usize, h: usize, blobs: &[(RoiBox, f64)]) -> ErrorImage {
        let mut data = vec![1.0; w * h];
        for (b, v) in blobs {
            for y in b.y..b.y + b.h {
                for x in b.x..b.x + b.w {
                    data[y * w + x] = *v;
                }
            }
        }
        ErrorImage::new(w, h, data)
    }

    #[test]
    fn single_square_roi() {
        let sq = RoiBox { x: 12, y: 7, w: 10, h: 10 };
        let e = blob_image(40, 30, &[(sq, 100.0)]);
        assert_eq!(extract_rois(&e).unwrap(), vec![sq]);
    }

    #[test]
    fn two_blobs_heavier_first() {
        let small = RoiBox { x: 2, y: 2, w: 5, h: 5 };
        let big = RoiBox { x: 20, y: 10, w: 12, h: 8 };
        let e = blob_image(40, 30, &[(small, 100.0), (big, 100.0)]);
        let rois = extract_rois(&e).unwrap();
        assert_eq!(rois, vec![big, small]);
    }

    #[test]
    fn diagonal_pixels_join_one_component() {
        let mut data = vec![0.0; 100];
        data[0] = 50.0;
        data[11] = 50.0;
        data[22] = 50.0;
        let rois = extract_rois(&ErrorImage::new(10, 10, data)).unwrap();
        assert_eq!(rois, vec![RoiBox { x: 0, y: 0, w: 3, h: 3 }]);
    }

    #[test]
    fn tiny_components_dropped() {
        // 1 pixel out of 100x100 = 0.01% < 0.1%
        let sq = RoiBox { x: 50, y: 50, w: 20, h: 20 };
        let dot = RoiBox { x: 5, y: 5, w: 1, h: 1 };
        let e = blob_image(100, 100, &[(sq, 90.0), (dot, 90.0)]);
        assert_eq!(extract_rois(&e).unwrap(), vec![sq]);
    }

    #[test]
    fn zoom_factor_one_is_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = RgbImage::from_fn(10, 8, |_, _| rng.random());
        let b = RoiBox { x: 2, y: 3, w: 5, h: 4 };
        let z = zoom_crop(&img, b, 1.0).unwrap();
        assert_eq!(z, crop(&img, b).unwrap());
    }

    #[test]
    fn zoom_2x2_bilinear() {
        let img = RgbImage::new(2, 2, vec![0, 0, 0, 100, 0, 0, 0, 0, 0, 200, 0, 0]).unwrap();
        let z = zoom_crop(&img, RoiBox { x: 0, y: 0, w: 2, h: 2 }, 2.0).unwrap();
        assert_eq!((z.width(), z.height()), (4, 4));
        // Source coords for output 0..4: -0.25, 0.25, 0.75, 1.25 -> clamped 0, 0.25, 0.75, 1.
        let fx = [0.0, 0.25, 0.75, 1.0];
        for (oy, &ty) in fx.iter().enumerate() {
            for (ox, &tx) in fx.iter().enumerate() {
                // red = 100*tx*(1-ty) + 200*tx*ty
                let red: f64 = 100.0 * tx * (1.0 - ty) + 200.0 * tx * ty;
                assert_eq!(z.pixel(ox, oy)[0], red.round() as u8, "at {ox},{oy}");
            }
        }
    }

    #[test]
    fn zoom_constant_and_bounds() {
        let img = RgbImage::filled(9, 9, [33, 66, 99]);
        let z = zoom_crop(&img, RoiBox { x: 1, y: 1, w: 5, h: 3 }, 1.5).unwrap();
        assert_eq!((z.width(), z.height()), (8, 5));
        assert!(z.pixels().all(|p| p == [33, 66, 99]));
        assert!(matches!(
            zoom_crop(&img, RoiBox { x: 5, y: 0, w: 5, h: 1 }, 1.0),
            Err(StimuliError::BoxOutOfBounds(..))
        ));
    }
}
