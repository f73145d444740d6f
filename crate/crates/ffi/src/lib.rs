//! C interface to the vreid library.
//!
//! Every function returns a [`VreidStatus`]. On failure a description of the
//! error is available from [`vreid_last_error`] on the same thread. Matrices
//! are dense row-major `double` arrays unless stated otherwise.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use candle_core::{DType, Device, Tensor};
use vreid::distance::{cosine_distance_matrix, FeatureMatrix};
use vreid::eval::{cmc_map, ItemLabel};
use vreid::losses::{aitl_loss, batch_hard_triplet_loss, dvdp, BatchFeatures, Reduction};
use vreid::model::{load_checkpoint, Model};
use vreid::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VreidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ZeroVector = 3,
    DimensionMismatch = 4,
    DegenerateBatch = 5,
    NoValidGallery = 6,
    Io = 7,
    Checkpoint = 8,
    Internal = 9,
    Panic = 10,
}

/// A loaded model. Create with `vreid_model_load`, release with
/// `vreid_model_free`.
pub struct VreidModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> VreidStatus {
    match err {
        Error::ZeroVector { .. } => VreidStatus::ZeroVector,
        Error::DimensionMismatch { .. } | Error::ShapeMismatch { .. } => VreidStatus::DimensionMismatch,
        Error::DegenerateBatch(_) => VreidStatus::DegenerateBatch,
        Error::NoValidGallery { .. } => VreidStatus::NoValidGallery,
        Error::Io(_) => VreidStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => VreidStatus::Checkpoint,
        Error::NonFinite { .. }
        | Error::InvalidLayout(_)
        | Error::LabelOutOfRange { .. }
        | Error::InsufficientIdentities { .. }
        | Error::Config(_) => VreidStatus::InvalidArgument,
        _ => VreidStatus::Internal,
    }
}

enum Failure {
    Status(VreidStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<candle_core::Error> for Failure {
    fn from(e: candle_core::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(VreidStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(VreidStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VreidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VreidStatus::Ok
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            VreidStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or point to `len` writable values.
unsafe fn output<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<FeatureMatrix, Failure> {
    if rows == 0 || cols == 0 {
        return Err(invalid("matrix dimensions must be positive"));
    }
    let t = Tensor::from_slice(data, (rows, cols), &Device::Cpu)?;
    Ok(FeatureMatrix::new(t)?)
}

/// # Safety
/// Pointers must reference arrays of the sizes implied by `p * k`, `dim`
/// and `attr_dim`.
unsafe fn batch(
    features: *const f64,
    dim: usize,
    attrs: *const f64,
    attr_dim: usize,
    p: usize,
    k: usize,
) -> Result<BatchFeatures, Failure> {
    let n = p.checked_mul(k).ok_or_else(|| invalid("P * K overflows"))?;
    let f = matrix(input(features, n * dim, "features")?, n, dim)?;
    let a = if attrs.is_null() {
        matrix(&vec![0.5; n], n, 1)?
    } else {
        matrix(input(attrs, n * attr_dim, "attrs")?, n, attr_dim)?
    };
    Ok(BatchFeatures::new(f, a, p, k)?)
}

fn scalar(t: &Tensor) -> Result<f64, Failure> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next vreid call on the same thread.
#[no_mangle]
pub extern "C" fn vreid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Pairwise cosine distances `1 - cos` between the rows of `a` (`rows_a x dim`)
/// and `b` (`rows_b x dim`), written to `out` (`rows_a x rows_b`).
///
/// # Safety
/// All pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn vreid_cosine_distance(
    a: *const f64,
    rows_a: usize,
    b: *const f64,
    rows_b: usize,
    dim: usize,
    out: *mut f64,
) -> VreidStatus {
    guard(|| {
        let fa = matrix(input(a, rows_a * dim, "a")?, rows_a, dim)?;
        let fb = matrix(input(b, rows_b * dim, "b")?, rows_b, dim)?;
        let d = cosine_distance_matrix(&fa, &fb)?.to_rows()?;
        let out = output(out, rows_a * rows_b, "out")?;
        for (dst, src) in out.iter_mut().zip(d.iter().flatten()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// DVDP of an identity-major PK batch of `features` (`P*K x dim`).
/// `out_sum` receives the sum over anchors, `out_mean` the per-anchor mean;
/// either may be null.
///
/// # Safety
/// `features` must hold `p * k * dim` values.
#[no_mangle]
pub unsafe extern "C" fn vreid_dvdp(
    features: *const f64,
    dim: usize,
    p: usize,
    k: usize,
    out_sum: *mut f64,
    out_mean: *mut f64,
) -> VreidStatus {
    guard(|| {
        let b = batch(features, dim, ptr::null(), 0, p, k)?;
        let d = dvdp(&b)?;
        if !out_sum.is_null() {
            *out_sum = d.sum;
        }
        if !out_mean.is_null() {
            *out_mean = d.mean;
        }
        Ok(())
    })
}

/// Attribute-aware identity-hard triplet loss. Intra-class positive and
/// negative are selected by cosine distance of `attrs` (`P*K x attr_dim`,
/// values in [0, 1]); the hinge uses distances of `features`.
/// `sum_reduction` nonzero sums over anchors, zero averages.
///
/// # Safety
/// Array sizes must match `p`, `k`, `dim` and `attr_dim`.
#[no_mangle]
pub unsafe extern "C" fn vreid_aitl_loss(
    features: *const f64,
    dim: usize,
    attrs: *const f64,
    attr_dim: usize,
    p: usize,
    k: usize,
    margin: f64,
    sum_reduction: i32,
    out_loss: *mut f64,
) -> VreidStatus {
    guard(|| {
        if attrs.is_null() {
            return Err(null("attrs"));
        }
        let b = batch(features, dim, attrs, attr_dim, p, k)?;
        let reduction = if sum_reduction != 0 { Reduction::Sum } else { Reduction::Mean };
        let l = aitl_loss(&b, margin, reduction)?;
        *output(out_loss, 1, "out_loss")?.first_mut().expect("len 1") = scalar(&l.loss)?;
        Ok(())
    })
}

/// Batch-hard triplet loss (mean over anchors) of a PK batch.
///
/// # Safety
/// `features` must hold `p * k * dim` values.
#[no_mangle]
pub unsafe extern "C" fn vreid_batch_hard_loss(
    features: *const f64,
    dim: usize,
    p: usize,
    k: usize,
    margin: f64,
    out_loss: *mut f64,
) -> VreidStatus {
    guard(|| {
        let b = batch(features, dim, ptr::null(), 0, p, k)?;
        let l = batch_hard_triplet_loss(&b, margin)?;
        *output(out_loss, 1, "out_loss")?.first_mut().expect("len 1") = scalar(&l.loss)?;
        Ok(())
    })
}

/// CMC and mAP. `out_ranks` receives Rank-1, -5, -10 and -20 hit rates.
/// Gallery items sharing identity and camera with a query are ignored.
/// `out_skipped` (may be null) receives the number of queries without any
/// valid match.
///
/// # Safety
/// Arrays must match `n_query`, `n_gallery` and `dim`; `out_ranks` must hold
/// 4 values.
#[no_mangle]
pub unsafe extern "C" fn vreid_cmc_map(
    query: *const f64,
    query_ids: *const u32,
    query_cams: *const u32,
    n_query: usize,
    gallery: *const f64,
    gallery_ids: *const u32,
    gallery_cams: *const u32,
    n_gallery: usize,
    dim: usize,
    out_ranks: *mut f64,
    out_map: *mut f64,
    out_skipped: *mut usize,
) -> VreidStatus {
    guard(|| {
        let labels = |ids: *const u32, cams: *const u32, n: usize| -> Result<Vec<ItemLabel>, Failure> {
            let ids = input(ids, n, "ids")?;
            let cams = input(cams, n, "cams")?;
            Ok(ids
                .iter()
                .zip(cams)
                .map(|(&person_id, &camera_id)| ItemLabel { person_id, camera_id })
                .collect())
        };
        let q = matrix(input(query, n_query * dim, "query")?, n_query, dim)?;
        let g = matrix(input(gallery, n_gallery * dim, "gallery")?, n_gallery, dim)?;
        let r = cmc_map(
            &q,
            &labels(query_ids, query_cams, n_query)?,
            &g,
            &labels(gallery_ids, gallery_cams, n_gallery)?,
        )?;
        let ranks = output(out_ranks, 4, "out_ranks")?;
        for (dst, k) in ranks.iter_mut().zip([1, 5, 10, 20]) {
            *dst = r.rank(k);
        }
        *output(out_map, 1, "out_map")?.first_mut().expect("len 1") = r.map;
        if !out_skipped.is_null() {
            *out_skipped = r.skipped;
        }
        Ok(())
    })
}

/// Loads a checkpoint written by `vreid train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn vreid_model_load(path: *const c_char, out: *mut *mut VreidModel) -> VreidStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let ck = load_checkpoint(Path::new(path), &Device::Cpu)?;
        *out = Box::into_raw(Box::new(VreidModel { model: ck.model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `vreid_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vreid_model_free(model: *mut VreidModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the expected frame width and height and the Re-ID feature length.
///
/// # Safety
/// `model` must be valid; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn vreid_model_info(
    model: *const VreidModel,
    out_width: *mut usize,
    out_height: *mut usize,
    out_feature_dim: *mut usize,
) -> VreidStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let cfg = m.model.config();
        for (dst, v) in [
            (out_width, cfg.input_width),
            (out_height, cfg.input_height),
            (out_feature_dim, cfg.fused_dim()),
        ] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// Embeds `batch` clips of `frames` RGB frames each. `pixels` holds
/// `batch * frames * height * width * 3` bytes in clip, frame, row, column,
/// channel order at the model's input size. `out` receives
/// `batch x feature_dim` unit-norm features.
///
/// # Safety
/// `model` must be valid and the arrays must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn vreid_model_embed(
    model: *const VreidModel,
    pixels: *const u8,
    batch: usize,
    frames: usize,
    out: *mut f32,
) -> VreidStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if batch == 0 || frames == 0 {
            return Err(invalid("batch and frames must be positive"));
        }
        let cfg = m.config();
        let px = input(pixels, batch * frames * cfg.input_height * cfg.input_width * 3, "pixels")?;
        let x = m.pixels_to_tensor(px, batch, frames)?;
        let feats = m.forward(&x)?.reid_feature.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        output(out, feats.len(), "out")?.copy_from_slice(&feats);
        Ok(())
    })
}
