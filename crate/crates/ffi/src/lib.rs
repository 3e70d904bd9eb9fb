//! C ABI over `oddbound`.
//!
//! Every function returns an [`OddStatus`]; on failure the message is
//! available from [`odd_last_error`] on the same thread. Models and dataset
//! pairs are opaque handles released with their `_free` function. Outputs
//! are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use oddbound::bounds::{self, BoundReport};
use oddbound::critic::CriticMethod;
use oddbound::data::{CsvMode, DatasetPair};
use oddbound::harness::{self, Prediction, SingleConfig};
use oddbound::losses;
use oddbound::nn::Mlp;
use oddbound::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OddStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Parse = 5,
    MissingLabels = 6,
    Divergence = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OddCsvMode {
    Features = 0,
    Logits = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OddMethod {
    Dis2 = 0,
    OddSoft = 1,
    OddHard = 2,
}

/// Flat copy of a bound report. `has_truth` is 0 when the target was not
/// fully labeled; `true_target_accuracy`, `valid` and `assumption2_gap` are
/// then meaningless.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OddReport {
    pub n_source: usize,
    pub n_target: usize,
    pub source_val_accuracy: f64,
    pub discrepancy_full: f64,
    pub discrepancy_nonoverlap: f64,
    pub overlap_discrepancy: f64,
    pub selected_discrepancy: f64,
    pub concentration_term: f64,
    pub predicted_accuracy_lower: f64,
    pub predicted_accuracy_lower_no_delta: f64,
    pub source_agreement: f64,
    pub target_agreement: f64,
    pub has_truth: u8,
    pub true_target_accuracy: f64,
    pub valid: u8,
    pub has_assumption2_gap: u8,
    pub assumption2_gap: f64,
}

impl From<&BoundReport> for OddReport {
    fn from(r: &BoundReport) -> Self {
        Self {
            n_source: r.n_source,
            n_target: r.n_target,
            source_val_accuracy: r.source_val_accuracy,
            discrepancy_full: r.discrepancy_full,
            discrepancy_nonoverlap: r.discrepancy_nonoverlap,
            overlap_discrepancy: r.overlap_discrepancy,
            selected_discrepancy: r.selected_discrepancy,
            concentration_term: r.concentration_term,
            predicted_accuracy_lower: r.predicted_accuracy_lower,
            predicted_accuracy_lower_no_delta: r.predicted_accuracy_lower_no_delta,
            source_agreement: r.source_agreement,
            target_agreement: r.target_agreement,
            has_truth: r.true_target_accuracy.is_some() as u8,
            true_target_accuracy: r.true_target_accuracy.unwrap_or(f64::NAN),
            valid: r.valid.unwrap_or(false) as u8,
            has_assumption2_gap: r.assumption2_gap.is_some() as u8,
            assumption2_gap: r.assumption2_gap.unwrap_or(f64::NAN),
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OddMetrics {
    pub n: usize,
    pub mae: f64,
    pub coverage: f64,
    pub overestimation_mae: f64,
    pub invalid: usize,
}

/// Settings for [`odd_run_single`]. Obtain defaults from
/// [`odd_single_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OddSingleConfig {
    pub mode: OddCsvMode,
    pub method: OddMethod,
    pub seed: u64,
    pub restarts: usize,
    pub critic_epochs: usize,
    pub delta: f64,
    pub val_fraction: f64,
    /// Nonzero trains every critic layer instead of the last one.
    pub all_layers: u8,
}

/// Trained classifier handle.
pub struct OddModel(Mlp);

/// Source and target dataset handle.
pub struct OddPair(DatasetPair);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OddStatus {
    match e {
        Error::Shape { .. } => OddStatus::Shape,
        Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::Empty(_) => OddStatus::InvalidArgument,
        Error::Divergence { .. } => OddStatus::Divergence,
        Error::MissingLabels(_) => OddStatus::MissingLabels,
        Error::Csv { .. } | Error::ModelFormat(_) | Error::Json(_) => OddStatus::Parse,
        Error::Io(_) => OddStatus::Io,
    }
}

struct Fail(OddStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OddStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OddStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OddStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OddStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(OddStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn odd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn odd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn odd_concentration(n_source: usize, n_target: usize, delta: f64, out: *mut f64) -> OddStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = bounds::concentration(n_source, n_target, delta)?;
        Ok(())
    })
}

/// # Safety
/// `logits` must point to `k` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn odd_logistic_loss(logits: *const f64, k: usize, label: usize, out: *mut f64) -> OddStatus {
    guard(|| {
        let z = slice_arg(logits, k, "logits")?;
        let out = out_arg(out, "out")?;
        *out = losses::logistic_loss(z, label)?;
        Ok(())
    })
}

/// # Safety
/// `logits` must point to `k` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn odd_disagreement_loss(logits: *const f64, k: usize, label: usize, out: *mut f64) -> OddStatus {
    guard(|| {
        let z = slice_arg(logits, k, "logits")?;
        let out = out_arg(out, "out")?;
        *out = losses::dis_loss(z, label)?;
        Ok(())
    })
}

/// Loads a model saved in the text format. Release with [`odd_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn odd_model_load(path: *const c_char, out: *mut *mut OddModel) -> OddStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(OddModel(Mlp::load(path)?)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn odd_model_free(model: *mut OddModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model`, `input_dim` and `output_dim` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn odd_model_dims(
    model: *const OddModel,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> OddStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(input_dim, "input_dim")? = m.0.input_dim();
        *out_arg(output_dim, "output_dim")? = m.0.output_dim();
        Ok(())
    })
}

/// Argmax predictions for `n` row-major inputs of width `dim`.
///
/// # Safety
/// `x` must hold `n * dim` doubles and `out` room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn odd_model_predict(
    model: *const OddModel,
    x: *const f64,
    n: usize,
    dim: usize,
    out: *mut usize,
) -> OddStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Fail(OddStatus::InvalidArgument, "n * dim overflows".into()))?;
        let xs = slice_arg(x, len, "x")?;
        let view = ndarray::ArrayView2::from_shape((n, dim), xs)
            .map_err(|e| Fail(OddStatus::Shape, e.to_string()))?;
        let preds = m.0.predict(view)?;
        if n > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&preds);
        }
        Ok(())
    })
}

/// Loads a `domain,label,f0,...` CSV. Release with [`odd_pair_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn odd_pair_load_csv(path: *const c_char, mode: OddCsvMode, out: *mut *mut OddPair) -> OddStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let pair = oddbound::data::load_csv(path, csv_mode(mode))?;
        *out = Box::into_raw(Box::new(OddPair(pair)));
        Ok(())
    })
}

/// # Safety
/// `pair` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn odd_pair_free(pair: *mut OddPair) {
    if !pair.is_null() {
        drop(Box::from_raw(pair));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn odd_pair_sizes(
    pair: *const OddPair,
    n_source: *mut usize,
    n_target: *mut usize,
    dim: *mut usize,
) -> OddStatus {
    guard(|| {
        let p = pair.as_ref().ok_or_else(|| null("pair"))?;
        *out_arg(n_source, "n_source")? = p.0.source.n();
        *out_arg(n_target, "n_target")? = p.0.target.n();
        *out_arg(dim, "dim")? = p.0.dim();
        Ok(())
    })
}

fn csv_mode(m: OddCsvMode) -> CsvMode {
    match m {
        OddCsvMode::Features => CsvMode::Features,
        OddCsvMode::Logits => CsvMode::Logits,
    }
}

#[no_mangle]
pub extern "C" fn odd_single_config_default() -> OddSingleConfig {
    let d = SingleConfig::default();
    OddSingleConfig {
        mode: OddCsvMode::Features,
        method: OddMethod::OddSoft,
        seed: d.seed,
        restarts: d.critic.restarts,
        critic_epochs: d.critic.train.max_epochs,
        delta: d.bound.delta,
        val_fraction: d.val_fraction,
        all_layers: 0,
    }
}

fn single_config(c: &OddSingleConfig) -> SingleConfig {
    let mut s = SingleConfig {
        mode: csv_mode(c.mode),
        method: match c.method {
            OddMethod::Dis2 => CriticMethod::Dis2,
            OddMethod::OddSoft => CriticMethod::OddSoft,
            OddMethod::OddHard => CriticMethod::OddHard,
        },
        seed: c.seed,
        val_fraction: c.val_fraction,
        ..SingleConfig::default()
    };
    s.critic.restarts = c.restarts;
    s.critic.train.max_epochs = c.critic_epochs;
    s.bound.delta = c.delta;
    if c.all_layers != 0 {
        s.critic.scope = oddbound::nn::TrainableScope::All;
    }
    s
}

/// End-to-end bound estimate on a loaded pair. The pair's mode must match
/// `config.mode`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn odd_run_single(
    pair: *const OddPair,
    config: *const OddSingleConfig,
    out: *mut OddReport,
) -> OddStatus {
    guard(|| {
        let p = pair.as_ref().ok_or_else(|| null("pair"))?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_arg(out, "out")?;
        let result = harness::run_single_pair(&p.0, &single_config(c))?;
        *out = OddReport::from(&result.report);
        Ok(())
    })
}

/// MAE, coverage and overestimation MAE of `n` predictions.
///
/// # Safety
/// `predicted` and `truth` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn odd_evaluate(
    predicted: *const f64,
    truth: *const f64,
    n: usize,
    out: *mut OddMetrics,
) -> OddStatus {
    guard(|| {
        let p = slice_arg(predicted, n, "predicted")?;
        let t = slice_arg(truth, n, "truth")?;
        let out = out_arg(out, "out")?;
        let preds: Vec<Prediction> = p
            .iter()
            .zip(t)
            .map(|(&predicted, &truth)| Prediction { predicted, truth })
            .collect();
        let m = harness::evaluate(&preds)?;
        *out = OddMetrics {
            n: m.n,
            mae: m.mae,
            coverage: m.coverage,
            overestimation_mae: m.overestimation_mae,
            invalid: m.invalid,
        };
        Ok(())
    })
}
