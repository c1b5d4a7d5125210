//! C ABI over the `crackseg` library.
//!
//! Objects are handed out as opaque pointers and released with their
//! matching `*_free` function. Every fallible call returns a [`CsStatus`];
//! on failure a message is kept per thread and read back with
//! [`cs_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use crackseg::checkpoint;
use crackseg::metrics::{evaluate, EvalItem};
use crackseg::scan::{ScanPathSet, ScanStrategy};
use crackseg::{Error, Model, NetworkConfig, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Malformed arguments: bad string, index out of range, buffer too small.
    InvalidArgument = 2,
    Config = 3,
    /// Image or mask data violates a precondition.
    Input = 4,
    Io = 5,
    Checkpoint = 6,
    /// Non-finite values or a numerical domain error.
    Numeric = 7,
    /// Internal failure; the message holds the panic payload.
    Internal = 8,
}

/// Scan orders of one strategy over one grid.
pub struct CsScanPaths {
    inner: ScanPathSet,
}

/// Network with its weights.
pub struct CsModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CsStatus {
    match e {
        Error::Config(_) | Error::Path(_) | Error::Json(_) => CsStatus::Config,
        Error::Input(_) | Error::Dataset(_) | Error::Dim { .. } | Error::Rank { .. } | Error::Shape(_) => CsStatus::Input,
        Error::Io { .. } | Error::Image { .. } => CsStatus::Io,
        Error::Checkpoint(_) => CsStatus::Checkpoint,
        Error::Domain(_) | Error::NonFinite { .. } | Error::Diverged { .. } => CsStatus::Numeric,
        Error::Usage(_) => CsStatus::InvalidArgument,
    }
}

struct Fail(CsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(CsStatus::InvalidArgument, msg.into())
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            CsStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(CsStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s).map(CString::into_raw).map_err(|_| invalid("string contains a NUL byte"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generate `num_paths` (2 or 4) scan orders for `strategy` (for example
/// `"sass"` or `"parallel-snake"`) over a `height x width` grid.
///
/// # Safety
/// `strategy` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_scan_paths_new(
    strategy: *const c_char,
    height: usize,
    width: usize,
    num_paths: usize,
    out: *mut *mut CsScanPaths,
) -> CsStatus {
    guard(|| {
        non_null(out, "out")?;
        let s: ScanStrategy = read_str(strategy, "strategy")?.parse()?;
        let inner = ScanPathSet::generate(s, height, width, num_paths)?;
        *out = Box::into_raw(Box::new(CsScanPaths { inner }));
        Ok(())
    })
}

/// # Safety
/// `paths` must come from [`cs_scan_paths_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cs_scan_paths_free(paths: *mut CsScanPaths) {
    if !paths.is_null() {
        drop(Box::from_raw(paths));
    }
}

/// Number of paths in the set, 0 for null.
///
/// # Safety
/// `paths` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_scan_paths_count(paths: *const CsScanPaths) -> usize {
    paths.as_ref().map_or(0, |p| p.inner.len())
}

/// Sequence length (grid cells) of every path, 0 for null.
///
/// # Safety
/// `paths` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_scan_paths_cells(paths: *const CsScanPaths) -> usize {
    paths.as_ref().map_or(0, |p| p.inner.cells())
}

unsafe fn copy_path(
    paths: *const CsScanPaths,
    index: usize,
    buf: *mut usize,
    len: usize,
    pick: fn(&crackseg::scan::ScanPath) -> &[usize],
) -> CsStatus {
    guard(|| {
        non_null(paths, "paths")?;
        let set = &(*paths).inner;
        let p = set
            .paths()
            .get(index)
            .ok_or_else(|| invalid(format!("path index {index} out of range for {} paths", set.len())))?;
        let src = pick(p);
        if len < src.len() {
            return Err(invalid(format!("buffer holds {len} entries, path needs {}", src.len())));
        }
        slice_mut(buf, len, "buf")?[..src.len()].copy_from_slice(src);
        Ok(())
    })
}

/// Copy path `index`'s visiting order (row-major cell per step) into `buf`,
/// which must hold at least [`cs_scan_paths_cells`] entries.
///
/// # Safety
/// `paths` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_scan_paths_order(paths: *const CsScanPaths, index: usize, buf: *mut usize, len: usize) -> CsStatus {
    copy_path(paths, index, buf, len, |p| p.order())
}

/// Copy path `index`'s inverse order (step per row-major cell) into `buf`.
///
/// # Safety
/// `paths` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_scan_paths_inverse(paths: *const CsScanPaths, index: usize, buf: *mut usize, len: usize) -> CsStatus {
    copy_path(paths, index, buf, len, |p| p.inverse())
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_model_load(path: *const c_char, out: *mut *mut CsModel) -> CsStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = checkpoint::load(Path::new(read_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(CsModel { inner }));
        Ok(())
    })
}

/// Fresh model from a network configuration in JSON (`null` or `{}` for
/// defaults) with weights drawn from `seed`.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_model_new(config_json: *const c_char, seed: u64, out: *mut *mut CsModel) -> CsStatus {
    guard(|| {
        non_null(out, "out")?;
        let config = if config_json.is_null() {
            NetworkConfig::default()
        } else {
            serde_json::from_str(read_str(config_json, "config_json")?)
                .map_err(|e| Fail(CsStatus::Config, format!("invalid network config: {e}")))?
        };
        let inner = Model::new(config, seed)?;
        *out = Box::into_raw(Box::new(CsModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cs_model_free(model: *mut CsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Write the model's checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cs_model_save(model: *const CsModel, path: *const c_char) -> CsStatus {
    guard(|| {
        non_null(model, "model")?;
        checkpoint::save(Path::new(read_str(path, "path")?), &(*model).inner)?;
        Ok(())
    })
}

/// Number of scalar parameters, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_model_param_count(model: *const CsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Patch size; image sides passed to [`cs_model_predict`] must be
/// multiples of it. 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_model_patch_size(model: *const CsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.patch_size)
}

/// Crack probabilities for one RGB image.
///
/// `image` holds `3 * height * width` values in `[0, 1]`, channel-major
/// (all red values row by row, then green, then blue). `out` receives
/// `height * width` probabilities in row-major order.
///
/// # Safety
/// `model` must be a live handle; `image` valid for `3 * height * width`
/// reads and `out` for `height * width` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_model_predict(
    model: *const CsModel,
    image: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        non_null(model, "model")?;
        let n = height.checked_mul(width).ok_or_else(|| invalid("image size overflows"))?;
        if n == 0 {
            return Err(Fail(CsStatus::Input, "image must be non-empty".into()));
        }
        let pixels = slice(image, 3 * n, "image")?;
        let dst = slice_mut(out, n, "out")?;
        let x = Tensor::new([1, 3, height, width], pixels.to_vec())?;
        let prob = (*model).inner.predict(&x)?;
        dst.copy_from_slice(prob.data());
        Ok(())
    })
}

/// Threshold sweep over `n_images` images.
///
/// Image `i` has `sizes[i]` pixels; `probs` and `masks` hold all images
/// back to back (masks as 0/1 bytes). `thresholds` may be null with
/// `n_thresholds == 0` for the default 99-point grid. On success `*json`
/// receives the report, to be released with [`cs_string_free`].
///
/// # Safety
/// Arrays must be valid for the lengths described above; `json` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_evaluate(
    probs: *const f64,
    masks: *const u8,
    sizes: *const usize,
    n_images: usize,
    thresholds: *const f64,
    n_thresholds: usize,
    json: *mut *mut c_char,
) -> CsStatus {
    guard(|| {
        non_null(json, "json")?;
        let sizes = slice(sizes, n_images, "sizes")?;
        let total = sizes.iter().try_fold(0usize, |a, &s| a.checked_add(s)).ok_or_else(|| invalid("sizes overflow"))?;
        let probs = slice(probs, total, "probs")?;
        let masks = slice(masks, total, "masks")?;
        if let Some(b) = masks.iter().find(|&&b| b > 1) {
            return Err(Fail(CsStatus::Input, format!("mask values must be 0 or 1, found {b}")));
        }
        let gts: Vec<bool> = masks.iter().map(|&b| b == 1).collect();
        let grid = if n_thresholds == 0 {
            crackseg::metrics::default_thresholds()
        } else {
            slice(thresholds, n_thresholds, "thresholds")?.to_vec()
        };
        let mut items = Vec::with_capacity(n_images);
        let mut at = 0;
        for (i, &s) in sizes.iter().enumerate() {
            items.push(EvalItem { id: format!("{i}"), prob: &probs[at..at + s], gt: &gts[at..at + s] });
            at += s;
        }
        let report = evaluate(&items, &grid)?;
        let text = serde_json::to_string(&report).map_err(|e| Fail(CsStatus::Internal, e.to_string()))?;
        *json = into_c_string(text)?;
        Ok(())
    })
}
