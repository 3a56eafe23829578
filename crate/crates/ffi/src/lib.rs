//! C ABI over the boostpc core.
//!
//! Every fallible call returns a [`BpcStatus`]; on failure a description is
//! available from [`bpc_last_error`] on the same thread. Objects are opaque
//! handles owned by the caller and released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use boostpc::image::ImageError;
use boostpc::metrics::{self, MetricsError, WaeParams};
use boostpc::reconstruction::{self, CountMatrix, QualityScale, ReconstructionError};
use boostpc::stats::{self, StatsError};
use boostpc::stimuli::{self, StimuliError};
use boostpc::RgbImage;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SizeMismatch = 3,
    Io = 4,
    Disconnected = 5,
    Degenerate = 6,
    Panic = 7,
}

/// RGB image, 8 bits per channel, row-major.
pub struct BpcImage(RgbImage);

/// Win counts of one comparison set, optionally with anchors attached.
pub struct BpcCountMatrix(CountMatrix);

/// Reconstructed scale values.
pub struct BpcScale(QualityScale);

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct BpcWaeParams {
    pub s: f64,
    pub t: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(BpcStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Self(BpcStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Self(BpcStatus::InvalidArgument, msg.into())
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        let status = match e {
            ImageError::BadBufferLength { .. } | ImageError::SizeMismatch(..) => BpcStatus::SizeMismatch,
            ImageError::Read { .. } | ImageError::Write { .. } => BpcStatus::Io,
        };
        Self(status, e.to_string())
    }
}

impl From<StimuliError> for Failure {
    fn from(e: StimuliError) -> Self {
        match e {
            StimuliError::Image(e) => e.into(),
            StimuliError::ConstantImage => Self(BpcStatus::Degenerate, e.to_string()),
            other => Self::invalid(other.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Image(e) => e.into(),
            other => Self::invalid(other.to_string()),
        }
    }
}

impl From<ReconstructionError> for Failure {
    fn from(e: ReconstructionError) -> Self {
        let status = match e {
            ReconstructionError::Disconnected { .. } => BpcStatus::Disconnected,
            ReconstructionError::DegenerateAnchors(_) | ReconstructionError::Solve(_) => BpcStatus::Degenerate,
            _ => BpcStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        let status = match e {
            StatsError::LengthMismatch(..) => BpcStatus::SizeMismatch,
            StatsError::ConstantInput | StatsError::PerfectCorrelation(_) | StatsError::DegenerateResamples(_) => {
                BpcStatus::Degenerate
            }
            _ => BpcStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BpcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            BpcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_ptr<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::invalid("path is not valid UTF-8"))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn bpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---- images ----

/// Copies `len == width * height * 3` bytes of RGB data into a new image.
///
/// # Safety
/// `rgb` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_image_new(
    width: usize,
    height: usize,
    rgb: *const u8,
    len: usize,
    out: *mut *mut BpcImage,
) -> BpcStatus {
    guard(|| {
        let data = slice(rgb, len, "rgb")?.to_vec();
        let img = RgbImage::new(width, height, data)?;
        out_ptr(out, Box::into_raw(Box::new(BpcImage(img))), "out")
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_image_load_png(path: *const c_char, out: *mut *mut BpcImage) -> BpcStatus {
    guard(|| {
        let img = RgbImage::load_png(path_arg(path)?)?;
        out_ptr(out, Box::into_raw(Box::new(BpcImage(img))), "out")
    })
}

/// # Safety
/// `img` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bpc_image_save_png(img: *const BpcImage, path: *const c_char) -> BpcStatus {
    guard(|| {
        let img = deref(img, "img")?;
        img.0.save_png(path_arg(path)?)?;
        Ok(())
    })
}

/// Writes width and height.
///
/// # Safety
/// `img` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_image_size(img: *const BpcImage, width: *mut usize, height: *mut usize) -> BpcStatus {
    guard(|| {
        let img = deref(img, "img")?;
        out_ptr(width, img.0.width(), "width")?;
        out_ptr(height, img.0.height(), "height")
    })
}

/// Copies the pixel data into `buf`, which must hold width * height * 3 bytes.
///
/// # Safety
/// `img` must be a live handle and `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bpc_image_copy_pixels(img: *const BpcImage, buf: *mut u8, len: usize) -> BpcStatus {
    guard(|| {
        let img = deref(img, "img")?;
        let raw = img.0.as_raw();
        if len != raw.len() {
            return Err(Failure(BpcStatus::SizeMismatch, format!("buffer holds {len} bytes, image has {}", raw.len())));
        }
        if buf.is_null() {
            return Err(Failure::null("buf"));
        }
        ptr::copy_nonoverlapping(raw.as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `img` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bpc_image_free(img: *mut BpcImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Amplifies the difference of `interp` from `gt` by `alpha`, capped per
/// pixel so no channel saturates.
///
/// # Safety
/// `gt` and `interp` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_amplify(
    gt: *const BpcImage,
    interp: *const BpcImage,
    alpha: f64,
    out: *mut *mut BpcImage,
) -> BpcStatus {
    guard(|| {
        let img = stimuli::amplify_image(&deref(gt, "gt")?.0, &deref(interp, "interp")?.0, alpha)?;
        out_ptr(out, Box::into_raw(Box::new(BpcImage(img))), "out")
    })
}

// ---- metrics ----

unsafe fn gray_pair(a: *const BpcImage, b: *const BpcImage) -> Result<(boostpc::GrayImage, boostpc::GrayImage), Failure> {
    Ok((
        metrics::to_grayscale(&deref(a, "interp")?.0),
        metrics::to_grayscale(&deref(b, "gt")?.0),
    ))
}

/// RMSE of the luma channels.
///
/// # Safety
/// Both images must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_rmse(interp: *const BpcImage, gt: *const BpcImage, out: *mut f64) -> BpcStatus {
    guard(|| {
        let (a, b) = gray_pair(interp, gt)?;
        out_ptr(out, metrics::rmse(&a, &b)?, "out")
    })
}

/// # Safety
/// Both images must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_gn_rmse(interp: *const BpcImage, gt: *const BpcImage, out: *mut f64) -> BpcStatus {
    guard(|| {
        let (a, b) = gray_pair(interp, gt)?;
        out_ptr(out, metrics::gn_rmse(&a, &b)?, "out")
    })
}

/// # Safety
/// Both images must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_wae(
    interp: *const BpcImage,
    gt: *const BpcImage,
    params: BpcWaeParams,
    out: *mut f64,
) -> BpcStatus {
    guard(|| {
        let (a, b) = gray_pair(interp, gt)?;
        let p = WaeParams::new(params.s, params.t, params.a1, params.a2, params.a3)?;
        out_ptr(out, metrics::wae(&a, &b, &p)?, "out")
    })
}

// ---- scaling ----

/// Empty count matrix over `n` items.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_counts_new(n: usize, out: *mut *mut BpcCountMatrix) -> BpcStatus {
    guard(|| {
        if n < 2 {
            return Err(Failure::invalid(format!("need at least 2 items, got {n}")));
        }
        out_ptr(out, Box::into_raw(Box::new(BpcCountMatrix(CountMatrix::zeros("ffi", n)))), "out")
    })
}

/// Records `times` wins of `winner` over `loser`.
///
/// # Safety
/// `c` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bpc_counts_add(c: *mut BpcCountMatrix, winner: usize, loser: usize, times: u32) -> BpcStatus {
    guard(|| {
        let c = deref_mut(c, "counts")?;
        let n = c.0.n_real();
        if winner >= n || loser >= n || winner == loser {
            return Err(Failure::invalid(format!("items ({winner}, {loser}) invalid for {n} items")));
        }
        c.0.add(winner, loser, times);
        Ok(())
    })
}

/// New matrix with a low and a high anchor appended, each compared
/// `pseudo_count` times with every item.
///
/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_counts_with_anchors(
    c: *const BpcCountMatrix,
    pseudo_count: u32,
    out: *mut *mut BpcCountMatrix,
) -> BpcStatus {
    guard(|| {
        if pseudo_count == 0 {
            return Err(Failure::invalid("pseudo count must be positive"));
        }
        let a = reconstruction::attach_anchors(&deref(c, "counts")?.0, pseudo_count);
        out_ptr(out, Box::into_raw(Box::new(BpcCountMatrix(a))), "out")
    })
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bpc_counts_free(c: *mut BpcCountMatrix) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Case V reconstruction. With anchors attached the scale is also mapped so
/// the low anchor is 0 and the high anchor is 1.
///
/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_reconstruct(c: *const BpcCountMatrix, out: *mut *mut BpcScale) -> BpcStatus {
    guard(|| {
        let c = &deref(c, "counts")?.0;
        let mut q = reconstruction::reconstruct_scale(c)?;
        if c.anchors.is_some() {
            q = reconstruction::rescale_unit_interval(&q)?;
        }
        out_ptr(out, Box::into_raw(Box::new(BpcScale(q))), "out")
    })
}

/// Number of real items (anchors excluded).
///
/// # Safety
/// `s` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_scale_len(s: *const BpcScale, out: *mut usize) -> BpcStatus {
    guard(|| out_ptr(out, deref(s, "scale")?.0.n_real(), "out"))
}

/// Copies the scores of the real items: rescaled values when anchors were
/// attached, latent values otherwise. `len` must equal [`bpc_scale_len`].
///
/// # Safety
/// `s` must be a live handle and `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn bpc_scale_scores(s: *const BpcScale, buf: *mut f64, len: usize) -> BpcStatus {
    guard(|| {
        let q = &deref(s, "scale")?.0;
        let n = q.n_real();
        if len != n {
            return Err(Failure(BpcStatus::SizeMismatch, format!("buffer holds {len} values, scale has {n}")));
        }
        if buf.is_null() {
            return Err(Failure::null("buf"));
        }
        ptr::copy_nonoverlapping(q.scores().as_ptr(), buf, n);
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bpc_scale_free(s: *mut BpcScale) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

// ---- statistics ----

unsafe fn correlation(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
    f: fn(&[f64], &[f64]) -> Result<f64, StatsError>,
) -> BpcStatus {
    guard(|| {
        let r = f(slice(x, n, "x")?, slice(y, n, "y")?)?;
        out_ptr(out, r, "out")
    })
}

/// Spearman rank correlation with average ranks for ties.
///
/// # Safety
/// `x` and `y` must point to `n` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_srocc(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> BpcStatus {
    correlation(x, y, n, out, stats::srocc)
}

/// Kendall tau-b.
///
/// # Safety
/// `x` and `y` must point to `n` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_krocc(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> BpcStatus {
    correlation(x, y, n, out, stats::krocc)
}

/// Pearson correlation.
///
/// # Safety
/// `x` and `y` must point to `n` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_plcc(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> BpcStatus {
    correlation(x, y, n, out, stats::plcc)
}

/// Fisher-z confidence interval of a correlation `r` from `n` samples.
///
/// # Safety
/// `low` and `high` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpc_fisher_ci(r: f64, n: usize, level: f64, low: *mut f64, high: *mut f64) -> BpcStatus {
    guard(|| {
        let (lo, hi) = stats::fisher_ci(r, n, level)?;
        out_ptr(low, lo, "low")?;
        out_ptr(high, hi, "high")
    })
}
