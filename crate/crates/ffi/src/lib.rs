//! C ABI over the `adired` core.
//!
//! Every function returns an [`AdiredStatus`]; on failure a description is
//! kept per thread and can be copied out with
//! [`adired_last_error_message`]. Objects are opaque handles released with
//! their matching `*_free` function. Panics never cross the boundary; they
//! surface as `ADIRED_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use adired::backend::{load_model, BackendKind, DisNet};
use adired::dismap::{normalize_map, select_dismap_class, ClassSource, DisMap};
use adired::regions::{select_regions, LocalScale, RegionSet, SelectionConfig};
use adired::svm::SvmModel;
use adired::Error;
use image::RgbImage;
use ndarray::Array2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdiredStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Model = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdiredScale {
    Coarse = 0,
    Fine = 1,
}

/// One selected square patch in pixel coordinates.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdiredPatch {
    pub left: u32,
    pub top: u32,
    pub side: u32,
    pub scale: AdiredScale,
    /// Normalized Dis-Map value of the source peak, in `[0, 255]`.
    pub score: f64,
}

pub struct AdiredDisNet(Arc<dyn DisNet>);

pub struct AdiredRegionSet(RegionSet);

pub struct AdiredSvm(SvmModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AdiredStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } | Error::MissingFile(_) => AdiredStatus::Io,
            Error::Parse { .. } | Error::Manifest { .. } | Error::Corrupt { .. } | Error::ImageDecode { .. } => {
                AdiredStatus::Parse
            }
            Error::ShapeMismatch(_)
            | Error::DimensionMismatch { .. }
            | Error::GridTooSmall { .. }
            | Error::ZeroArea
            | Error::PatchTooLarge { .. }
            | Error::CenterOutside { .. } => AdiredStatus::Shape,
            Error::MissingClassifierWeights { .. } | Error::UnsupportedModel { .. } | Error::Onnx(_) => {
                AdiredStatus::Model
            }
            _ => AdiredStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(AdiredStatus::InvalidArgument, message.into())
}

fn null(what: &str) -> Failure {
    Failure(AdiredStatus::NullPointer, format!("`{what}` is null"))
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, recording its error and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdiredStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdiredStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            AdiredStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

unsafe fn out_arg<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { ptr.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { ptr.as_ref() }.ok_or_else(|| null(what))
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length including the NUL,
/// or 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn adired_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n - 1) = 0;
            }
        }
        bytes.len()
    })
}

/// Load a DisNet (`.onnx` or `ADIRTOY v1` fixture).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adired_disnet_load(path: *const c_char, out: *mut *mut AdiredDisNet) -> AdiredStatus {
    guard(|| {
        let out = unsafe { out_arg(out, "out") }?;
        *out = std::ptr::null_mut();
        let path = unsafe { path_arg(path) }?;
        let net = load_model(&path, BackendKind::DisNet)?.into_disnet()?;
        *out = Box::into_raw(Box::new(AdiredDisNet(net)));
        Ok(())
    })
}

/// # Safety
/// `net` must come from [`adired_disnet_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn adired_disnet_free(net: *mut AdiredDisNet) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

/// Side `l` of the DisNet's square activation grid.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn adired_disnet_grid_size(net: *const AdiredDisNet, out: *mut usize) -> AdiredStatus {
    guard(|| {
        let net = unsafe { handle(net, "net") }?;
        *unsafe { out_arg(out, "out") }? = net.0.descriptor().output_dim;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn adired_disnet_num_classes(net: *const AdiredDisNet, out: *mut usize) -> AdiredStatus {
    guard(|| {
        let net = unsafe { handle(net, "net") }?;
        *unsafe { out_arg(out, "out") }? = net.0.classifier().num_classes();
        Ok(())
    })
}

/// Normalized Dis-Map of an interleaved 8-bit RGB image, written row-major
/// into `out_map` (`grid_size * grid_size` values). A negative
/// `class_index` uses the DisNet's own prediction. The class actually used
/// is stored in `out_class`.
///
/// # Safety
/// `rgb` must hold `width * height * 3` bytes and `out_map` `out_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn adired_dismap_compute(
    net: *const AdiredDisNet,
    rgb: *const u8,
    width: u32,
    height: u32,
    class_index: i64,
    out_map: *mut f64,
    out_len: usize,
    out_class: *mut usize,
) -> AdiredStatus {
    guard(|| {
        let net = unsafe { handle(net, "net") }?;
        let n = (width as usize) * (height as usize) * 3;
        let pixels = unsafe { slice_arg(rgb, n, "rgb") }?;
        let out_class = unsafe { out_arg(out_class, "out_class") }?;
        if out_map.is_null() {
            return Err(null("out_map"));
        }
        let image = RgbImage::from_raw(width, height, pixels.to_vec())
            .ok_or_else(|| invalid(format!("bad image size {width}x{height}")))?;
        let forward = net.0.forward(&image)?;
        let classifier = net.0.classifier();
        let (class, source) = if class_index < 0 {
            select_dismap_class(None, classifier.labels(), forward.predicted_class)
        } else {
            (class_index as usize, ClassSource::GroundTruth)
        };
        let map = DisMap::new(&forward.activations, classifier, class, source)?;
        let cells = map.normalized.len();
        if out_len < cells {
            return Err(invalid(format!("out_map holds {out_len} values, need {cells}")));
        }
        let out = unsafe { std::slice::from_raw_parts_mut(out_map, cells) };
        for (o, v) in out.iter_mut().zip(map.normalized.iter()) {
            *o = *v;
        }
        *out_class = map.class_used;
        Ok(())
    })
}

/// Min-max normalize `len` values to `[0, 255]`; `out` may alias `grid`.
///
/// # Safety
/// `grid` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn adired_normalize_map(grid: *const f64, len: usize, out: *mut f64) -> AdiredStatus {
    guard(|| {
        let values = unsafe { slice_arg(grid, len, "grid") }?.to_vec();
        if out.is_null() {
            return Err(null("out"));
        }
        let normalized = normalize_map(&Array2::from_shape_vec((1, len), values).expect("1 x len"));
        let out = unsafe { std::slice::from_raw_parts_mut(out, len) };
        out.copy_from_slice(normalized.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// Adaptive patch selection on a normalized `grid_size x grid_size` map
/// (row-major) for a `width x height` image.
///
/// # Safety
/// `grid` must hold `grid_size * grid_size` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adired_select_regions(
    grid: *const f64,
    grid_size: usize,
    width: u32,
    height: u32,
    t_coarse: f64,
    t_fine: f64,
    fallback_on_empty: bool,
    out: *mut *mut AdiredRegionSet,
) -> AdiredStatus {
    guard(|| {
        let out = unsafe { out_arg(out, "out") }?;
        *out = std::ptr::null_mut();
        if width == 0 || height == 0 {
            return Err(Error::ZeroArea.into());
        }
        let cells = grid_size
            .checked_mul(grid_size)
            .ok_or_else(|| invalid("grid_size overflows"))?;
        let values = unsafe { slice_arg(grid, cells, "grid") }?;
        if values.iter().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(invalid("normalized grid values must lie in [0, 255]"));
        }
        let normalized = Array2::from_shape_vec((grid_size, grid_size), values.to_vec()).expect("square");
        let map = DisMap {
            raw: normalized.clone(),
            normalized,
            class_used: 0,
            class_source: ClassSource::Predicted,
        };
        let config = SelectionConfig {
            t_coarse,
            t_fine,
            fallback_on_empty,
        };
        let set = select_regions(&map, &config, width, height, "ffi")?;
        *out = Box::into_raw(Box::new(AdiredRegionSet(set)));
        Ok(())
    })
}

/// Number of patches, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn adired_region_set_len(set: *const AdiredRegionSet) -> usize {
    unsafe { set.as_ref() }.map_or(0, |s| s.0.len())
}

/// Patch `index`: coarse patches first, each scale by descending score.
///
/// # Safety
/// `set` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adired_region_set_get(
    set: *const AdiredRegionSet,
    index: usize,
    out: *mut AdiredPatch,
) -> AdiredStatus {
    guard(|| {
        let set = unsafe { handle(set, "set") }?;
        let out = unsafe { out_arg(out, "out") }?;
        let p = set
            .0
            .patches
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range for {} patches", set.0.len())))?;
        *out = AdiredPatch {
            left: p.left,
            top: p.top,
            side: p.side,
            scale: match p.scale {
                LocalScale::Coarse => AdiredScale::Coarse,
                LocalScale::Fine => AdiredScale::Fine,
            },
            score: p.score,
        };
        Ok(())
    })
}

/// # Safety
/// `set` must come from [`adired_select_regions`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn adired_region_set_free(set: *mut AdiredRegionSet) {
    if !set.is_null() {
        drop(unsafe { Box::from_raw(set) });
    }
}

/// Load a trained one-vs-rest SVM written by `adired train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adired_svm_load(path: *const c_char, out: *mut *mut AdiredSvm) -> AdiredStatus {
    guard(|| {
        let out = unsafe { out_arg(out, "out") }?;
        *out = std::ptr::null_mut();
        let path = unsafe { path_arg(path) }?;
        *out = Box::into_raw(Box::new(AdiredSvm(SvmModel::load(&path)?)));
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn adired_svm_num_classes(svm: *const AdiredSvm, out: *mut usize) -> AdiredStatus {
    guard(|| {
        let svm = unsafe { handle(svm, "svm") }?;
        *unsafe { out_arg(out, "out") }? = svm.0.num_classes();
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn adired_svm_dim(svm: *const AdiredSvm, out: *mut usize) -> AdiredStatus {
    guard(|| {
        let svm = unsafe { handle(svm, "svm") }?;
        *unsafe { out_arg(out, "out") }? = svm.0.dim();
        Ok(())
    })
}

/// Index of the highest-scoring class for a representation vector.
///
/// # Safety
/// `features` must hold `len` doubles; `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adired_svm_predict(
    svm: *const AdiredSvm,
    features: *const f64,
    len: usize,
    out_class: *mut usize,
) -> AdiredStatus {
    guard(|| {
        let svm = unsafe { handle(svm, "svm") }?;
        let x = unsafe { slice_arg(features, len, "features") }?;
        *unsafe { out_arg(out_class, "out_class") }? = svm.0.predict(x)?;
        Ok(())
    })
}

/// Copy the label of `class_index` into `buf` (NUL-terminated, truncated to
/// `len`) and store the full length including the NUL in `out_len`.
///
/// # Safety
/// `buf` must be null or hold `len` bytes; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adired_svm_label(
    svm: *const AdiredSvm,
    class_index: usize,
    buf: *mut c_char,
    len: usize,
    out_len: *mut usize,
) -> AdiredStatus {
    guard(|| {
        let svm = unsafe { handle(svm, "svm") }?;
        let out_len = unsafe { out_arg(out_len, "out_len") }?;
        let label = svm.0.labels.get(class_index).ok_or_else(|| {
            invalid(format!("class {class_index} out of range for {} classes", svm.0.num_classes()))
        })?;
        let c = CString::new(label.as_str()).map_err(|_| invalid("label contains NUL"))?;
        let bytes = c.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n - 1) = 0;
            }
        }
        *out_len = bytes.len();
        Ok(())
    })
}

/// # Safety
/// `svm` must come from [`adired_svm_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn adired_svm_free(svm: *mut AdiredSvm) {
    if !svm.is_null() {
        drop(unsafe { Box::from_raw(svm) });
    }
}
