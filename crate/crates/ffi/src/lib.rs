//! C ABI over `shiftlab`.
//!
//! Every fallible call returns a [`ShiftlabStatus`]; on failure the message
//! is available from [`shiftlab_last_error_message`] on the same thread.
//! Handles are opaque, created by `*_new`/`*_run` functions and released
//! with the matching `*_free`. Strings returned through `char **` out
//! parameters belong to the caller and are released with
//! [`shiftlab_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use chrono::NaiveDate;
use shiftlab::cli_io::{run, run_study, Command, Preset, RunConfig, StudyOutcome};
use shiftlab::error::Error;
use shiftlab::gap_analysis::{performance_gap, GapReport};
use shiftlab::ids::{EncounterId, MonthYear};
use shiftlab::metrics::{bootstrap_ci, EncounterScore, Measure, MetricCI, ScoreSet};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftlabStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// Malformed string, unknown name or out-of-range index.
    InvalidArgument = 2,
    /// Invalid configuration, temporal bounds or feature group.
    Config = 3,
    MissingInput = 4,
    /// Malformed or inconsistent data, including schema mismatches.
    Data = 5,
    /// The metric is undefined on the given labels.
    UndefinedMetric = 6,
    /// Model fitting or cross-validation failed.
    Model = 7,
    Io = 8,
    /// A panic was caught at the boundary.
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftlabPreset {
    Desk = 0,
    ZeroNoise = 1,
    PlantedMedicationNoise = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftlabMeasure {
    Auroc = 0,
    Brier = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShiftlabInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_replicates: usize,
    pub redraws: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShiftlabGapValues {
    pub p_ret: f64,
    pub p_ret_prime: f64,
    pub p_pro: f64,
    pub delta: f64,
    pub delta_time: f64,
    pub delta_infra: f64,
    pub negated: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShiftlabGap {
    pub p_ret: ShiftlabInterval,
    pub p_ret_prime: ShiftlabInterval,
    pub p_pro: ShiftlabInterval,
    pub delta: ShiftlabInterval,
    pub delta_time: ShiftlabInterval,
    pub delta_infra: ShiftlabInterval,
    pub negated: bool,
}

/// Undefined correlation or slope is NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShiftlabConcordance {
    pub n_pairs: usize,
    pub pearson: f64,
    pub slope: f64,
    pub intercept: f64,
    pub threshold: f64,
    pub n_discordant: usize,
}

/// `label` is owned by the study handle and valid until it is freed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ShiftlabSwapRow {
    pub label: *const c_char,
    pub n_columns: usize,
    pub auroc: f64,
    pub difference: f64,
}

/// Run configuration.
pub struct ShiftlabConfig {
    inner: RunConfig,
}

/// Results of an in-memory study run.
pub struct ShiftlabStudy {
    outcome: StudyOutcome,
    swap_labels: Vec<CString>,
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(e: &Error) -> ShiftlabStatus {
    match e {
        Error::Config { .. } | Error::TemporalBounds(_) | Error::Taxonomy(_) => ShiftlabStatus::Config,
        Error::MissingInput(_) => ShiftlabStatus::MissingInput,
        Error::Data(_)
        | Error::DataAt { .. }
        | Error::Schema(_)
        | Error::MissingMetadata(_)
        | Error::InclusionViolation { .. }
        | Error::Json(_)
        | Error::Csv(_) => ShiftlabStatus::Data,
        Error::UndefinedMetric(_) | Error::DegenerateLabel(_) => ShiftlabStatus::UndefinedMetric,
        Error::DegenerateFeature(_) | Error::TaskMapping { .. } | Error::Fold(_) => ShiftlabStatus::Model,
        Error::Io { .. } => ShiftlabStatus::Io,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ShiftlabStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ShiftlabStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("`{what}` is NULL"));
            ShiftlabStatus::NullArgument
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            ShiftlabStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ShiftlabStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Invalid("string contains a NUL byte".into()))
}

unsafe fn score_set(scores: *const f64, labels: *const u8, n: usize) -> Result<ScoreSet, Failure> {
    if n > 0 && scores.is_null() {
        return Err(Failure::Null("scores"));
    }
    if n > 0 && labels.is_null() {
        return Err(Failure::Null("labels"));
    }
    let (scores, labels) = if n == 0 {
        (&[][..], &[][..])
    } else {
        (std::slice::from_raw_parts(scores, n), std::slice::from_raw_parts(labels, n))
    };
    let month = MonthYear::of(NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"));
    let entries = scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(k, (&score, &label))| EncounterScore {
            encounter_id: EncounterId(k as u64),
            admit_month: month,
            score,
            label: label != 0,
        })
        .collect();
    Ok(ScoreSet { entries })
}

/// Enum arguments arrive as integers so that out-of-range values from C
/// are rejected rather than undefined.
fn measure(m: i32) -> Result<Measure, Failure> {
    match m {
        x if x == ShiftlabMeasure::Auroc as i32 => Ok(Measure::Auroc),
        x if x == ShiftlabMeasure::Brier as i32 => Ok(Measure::Brier),
        other => Err(Failure::Invalid(format!("unknown measure {other}"))),
    }
}

fn preset(p: i32) -> Result<Preset, Failure> {
    match p {
        x if x == ShiftlabPreset::Desk as i32 => Ok(Preset::Desk),
        x if x == ShiftlabPreset::ZeroNoise as i32 => Ok(Preset::ZeroNoise),
        x if x == ShiftlabPreset::PlantedMedicationNoise as i32 => Ok(Preset::PlantedMedicationNoise),
        other => Err(Failure::Invalid(format!("unknown preset {other}"))),
    }
}

fn interval(ci: &MetricCI) -> ShiftlabInterval {
    ShiftlabInterval {
        point: ci.point,
        lower: ci.lower,
        upper: ci.upper,
        n_replicates: ci.n_replicates,
        redraws: ci.redraws,
    }
}

fn gap(g: &GapReport) -> ShiftlabGap {
    ShiftlabGap {
        p_ret: interval(&g.p_ret),
        p_ret_prime: interval(&g.p_ret_prime),
        p_pro: interval(&g.p_pro),
        delta: interval(&g.delta),
        delta_time: interval(&g.delta_time),
        delta_infra: interval(&g.delta_infra),
        negated: g.negated,
    }
}

fn command(name: &str) -> Result<Command, Failure> {
    Ok(match name {
        "simulate" => Command::Simulate,
        "featurize" => Command::Featurize,
        "train" => Command::Train,
        "score" => Command::Score,
        "evaluate" => Command::Evaluate,
        "gap" => Command::Gap,
        "swap" => Command::Swap,
        "drift" => Command::Drift,
        "report" => Command::Report,
        "all" => Command::All,
        other => return Err(Failure::Invalid(format!("unknown command `{other}`"))),
    })
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn shiftlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a
/// successful one. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn shiftlab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `preset_id` is a [`ShiftlabPreset`] value.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_config_new(
    seed: u64,
    preset_id: i32,
    out: *mut *mut ShiftlabConfig,
) -> ShiftlabStatus {
    guard(|| {
        let handle = Box::new(ShiftlabConfig {
            inner: RunConfig::new(seed, preset(preset_id)?),
        });
        write_out(out, Box::into_raw(handle), "out")
    })
}

/// Parses and validates a run configuration document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid for one pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_config_from_json(json: *const c_char, out: *mut *mut ShiftlabConfig) -> ShiftlabStatus {
    guard(|| {
        let inner = RunConfig::from_json(text(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(ShiftlabConfig { inner })), "out")
    })
}

/// # Safety
/// `config` must be a live handle; `out` valid for one pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_config_to_json(config: *const ShiftlabConfig, out: *mut *mut c_char) -> ShiftlabStatus {
    guard(|| {
        let c = borrow(config, "config")?;
        let s = serde_json::to_string_pretty(&c.inner).map_err(Error::from)?;
        write_out(out, owned_string(s)?, "out")
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_config_set_seed(config: *mut ShiftlabConfig, seed: u64) -> ShiftlabStatus {
    guard(|| {
        borrow_mut(config, "config")?.inner.seed = seed;
        Ok(())
    })
}

/// Sets the bootstrap replicate count for evaluation and gap intervals.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_config_set_n_replicates(config: *mut ShiftlabConfig, n: usize) -> ShiftlabStatus {
    guard(|| {
        let c = borrow_mut(config, "config")?;
        let mut next = c.inner.clone();
        next.evaluate.n_replicates = n;
        next.gap.n_replicates = n;
        next.validate()?;
        c.inner = next;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_config_set_cross_validate(config: *mut ShiftlabConfig, enabled: bool) -> ShiftlabStatus {
    guard(|| {
        borrow_mut(config, "config")?.inner.model.cross_validate = enabled;
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_config_free(config: *mut ShiftlabConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs a stage (`simulate` .. `report`, or `all`) into `out_dir`, as the
/// command-line tool does.
///
/// # Safety
/// `config` must be a live handle; `command_name` and `out_dir`
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_run_command(
    config: *const ShiftlabConfig,
    command_name: *const c_char,
    out_dir: *const c_char,
) -> ShiftlabStatus {
    guard(|| {
        let c = borrow(config, "config")?;
        let cmd = command(text(command_name, "command_name")?)?;
        run(cmd, &c.inner, Path::new(text(out_dir, "out_dir")?))?;
        Ok(())
    })
}

/// Runs the whole study in memory.
///
/// # Safety
/// `config` must be a live handle; `out` valid for one pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_study_run(config: *const ShiftlabConfig, out: *mut *mut ShiftlabStudy) -> ShiftlabStatus {
    guard(|| {
        let c = borrow(config, "config")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let outcome = run_study(&c.inner)?;
        let swap_labels = outcome
            .swap
            .rows
            .iter()
            .map(|r| CString::new(r.label.clone()).map_err(|_| Failure::Invalid("label contains NUL".into())))
            .collect::<Result<_, _>>()?;
        write_out(out, Box::into_raw(Box::new(ShiftlabStudy { outcome, swap_labels })), "out")
    })
}

/// `which` is a [`ShiftlabMeasure`] value.
///
/// # Safety
/// `study` must be a live handle; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_study_gap(
    study: *const ShiftlabStudy,
    which: i32,
    out: *mut ShiftlabGap,
) -> ShiftlabStatus {
    guard(|| {
        let s = borrow(study, "study")?;
        let m = measure(which)?;
        let g = s
            .outcome
            .gap(m)
            .ok_or_else(|| Failure::Invalid(format!("no gap report for {}", m.name())))?;
        write_out(out, gap(g), "out")
    })
}

/// # Safety
/// `study` must be a live handle; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_study_concordance(
    study: *const ShiftlabStudy,
    out: *mut ShiftlabConcordance,
) -> ShiftlabStatus {
    guard(|| {
        let c = &borrow(study, "study")?.outcome.concordance;
        let value = ShiftlabConcordance {
            n_pairs: c.pairs.len(),
            pearson: c.pearson.unwrap_or(f64::NAN),
            slope: c.slope.unwrap_or(f64::NAN),
            intercept: c.intercept.unwrap_or(f64::NAN),
            threshold: c.threshold,
            n_discordant: c.discordant.len(),
        };
        write_out(out, value, "out")
    })
}

/// Number of swap rows, sorted by AUROC difference, largest first.
///
/// # Safety
/// `study` must be a live handle; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_study_swap_len(study: *const ShiftlabStudy, out: *mut usize) -> ShiftlabStatus {
    guard(|| write_out(out, borrow(study, "study")?.outcome.swap.rows.len(), "out"))
}

/// # Safety
/// `study` must be a live handle; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_study_swap_row(
    study: *const ShiftlabStudy,
    index: usize,
    out: *mut ShiftlabSwapRow,
) -> ShiftlabStatus {
    guard(|| {
        let s = borrow(study, "study")?;
        let rows = &s.outcome.swap.rows;
        let r = rows
            .get(index)
            .ok_or_else(|| Failure::Invalid(format!("swap row {index} out of range ({} rows)", rows.len())))?;
        let value = ShiftlabSwapRow {
            label: s.swap_labels[index].as_ptr(),
            n_columns: r.n_columns,
            auroc: r.auroc,
            difference: r.difference,
        };
        write_out(out, value, "out")
    })
}

/// All study reports as one JSON document. Free with
/// [`shiftlab_string_free`].
///
/// # Safety
/// `study` must be a live handle; `out` valid for one pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_study_report_json(study: *const ShiftlabStudy, out: *mut *mut c_char) -> ShiftlabStatus {
    guard(|| {
        let o = &borrow(study, "study")?.outcome;
        let doc = serde_json::json!({
            "featurize": o.featurize,
            "cross_validation": o.cv,
            "evaluation": o.evaluation,
            "gap": o.gaps,
            "concordance": o.concordance,
            "discrepancy": o.discrepancy,
            "swap": o.swap,
            "drift": o.drift,
        });
        let s = serde_json::to_string(&doc).map_err(Error::from)?;
        write_out(out, owned_string(s)?, "out")
    })
}

/// # Safety
/// `study` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_study_free(study: *mut ShiftlabStudy) {
    if !study.is_null() {
        drop(Box::from_raw(study));
    }
}

/// AUROC or Brier score of `n` scores with 0/1 labels; `which` is a
/// [`ShiftlabMeasure`] value.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_metric(
    which: i32,
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> ShiftlabStatus {
    guard(|| {
        let set = score_set(scores, labels, n)?;
        write_out(out, measure(which)?.on(&set)?, "out")
    })
}

/// Percentile bootstrap interval with encounter-level resampling.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_bootstrap_ci(
    which: i32,
    scores: *const f64,
    labels: *const u8,
    n: usize,
    n_replicates: usize,
    seed: u64,
    out: *mut ShiftlabInterval,
) -> ShiftlabStatus {
    guard(|| {
        if n_replicates == 0 {
            return Err(Failure::Invalid("n_replicates must be positive".into()));
        }
        let set = score_set(scores, labels, n)?;
        let ci = bootstrap_ci(&set, measure(which)?, n_replicates, seed)?;
        write_out(out, interval(&ci), "out")
    })
}

/// Gap decomposition of three point estimates; `negate` for measures where
/// lower is better.
///
/// # Safety
/// `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_performance_gap(
    p_ret: f64,
    p_ret_prime: f64,
    p_pro: f64,
    negate: bool,
    out: *mut ShiftlabGapValues,
) -> ShiftlabStatus {
    guard(|| {
        let g = performance_gap(p_ret, p_ret_prime, p_pro, negate);
        let value = ShiftlabGapValues {
            p_ret: g.p_ret,
            p_ret_prime: g.p_ret_prime,
            p_pro: g.p_pro,
            delta: g.delta,
            delta_time: g.delta_time,
            delta_infra: g.delta_infra,
            negated: g.negated,
        };
        write_out(out, value, "out")
    })
}
