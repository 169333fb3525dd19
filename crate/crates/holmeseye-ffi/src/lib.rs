//! C ABI over the engine's pure-computational surface: taxonomy export,
//! image grouping, the closed-form scorers, and a table builder behind an
//! opaque handle. Backend-driven operations (pipeline runs, judged scoring)
//! stay out of this layer; bind those through the CLI instead.
//!
//! Conventions: every fallible call returns an `HeStatus`; strings returned
//! through out-parameters are NUL-terminated UTF-8 owned by the callee and
//! must be released with `he_string_free`; handles must be released with
//! their matching `_free` function. Passing NULL where a pointer is required
//! yields `HE_STATUS_NULL_ARGUMENT`, never a crash.

use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};

use holmeseye::pipeline::group_images;
use holmeseye::scoring::{
    render_table, score_qualitative, score_quantitative, RelativeErrorMode, ScoreReport,
    TableLayout, TableSeries,
};
use holmeseye::taxonomy::{builtin_taxonomy, AttributeId, AttributeValue, TaxonomyDoc};

/// Result of every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[allow(non_camel_case_types)] // C-style names flow into the generated header
pub enum HeStatus {
    HE_STATUS_OK = 0,
    HE_STATUS_NULL_ARGUMENT = 1,
    HE_STATUS_INVALID_ARGUMENT = 2,
    HE_STATUS_INVALID_UTF8 = 3,
    HE_STATUS_BAD_LAYOUT = 4,
    HE_STATUS_SERIES_MISMATCH = 5,
}

/// Opaque accumulator of named per-attribute score rows for table rendering.
pub struct HeTableBuilder {
    series: Vec<TableSeries>,
}

fn to_c_string(s: String) -> *mut c_char {
    // interior NULs cannot appear in our JSON/text output
    CString::new(s).expect("no interior NUL").into_raw()
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, HeStatus> {
    if ptr.is_null() {
        return Err(HeStatus::HE_STATUS_NULL_ARGUMENT);
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| HeStatus::HE_STATUS_INVALID_UTF8)
}

/// Release a string previously returned through an out-parameter.
///
/// # Safety
/// `s` must be a pointer obtained from this library, or NULL.
#[no_mangle]
pub unsafe extern "C" fn he_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// The built-in twelve-attribute taxonomy as a JSON document.
///
/// # Safety
/// `out_json` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn he_taxonomy_json(out_json: *mut *mut c_char) -> HeStatus {
    if out_json.is_null() {
        return HeStatus::HE_STATUS_NULL_ARGUMENT;
    }
    let doc = TaxonomyDoc::builtin();
    let json = serde_json::to_string_pretty(&doc).expect("taxonomy serializes");
    unsafe { *out_json = to_c_string(json) };
    HeStatus::HE_STATUS_OK
}

/// Number of contiguous groups formed from `n` images at group size `g`
/// (the ceiling of n/g), or 0 for invalid arguments.
#[no_mangle]
pub extern "C" fn he_group_count(n: u64, g: u64) -> u64 {
    match group_images(n as usize, g as usize) {
        Ok(groups) => groups.len() as u64,
        Err(_) => 0,
    }
}

/// The contiguous grouping of 1-based image indices as a JSON array of
/// arrays.
///
/// # Safety
/// `out_json` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn he_groups_json(n: u64, g: u64, out_json: *mut *mut c_char) -> HeStatus {
    if out_json.is_null() {
        return HeStatus::HE_STATUS_NULL_ARGUMENT;
    }
    match group_images(n as usize, g as usize) {
        Ok(groups) => {
            let json = serde_json::to_string(&groups).expect("groups serialize");
            unsafe { *out_json = to_c_string(json) };
            HeStatus::HE_STATUS_OK
        }
        Err(_) => HeStatus::HE_STATUS_INVALID_ARGUMENT,
    }
}

/// Exact-match score for a qualitative attribute: 100.0 on (normalized)
/// label equality, else 0.0.
///
/// # Safety
/// `prediction` and `truth` must be NUL-terminated strings; `out_score` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn he_score_qualitative(
    prediction: *const c_char,
    truth: *const c_char,
    out_score: *mut f64,
) -> HeStatus {
    if out_score.is_null() {
        return HeStatus::HE_STATUS_NULL_ARGUMENT;
    }
    let (pred, truth) = match (unsafe { read_str(prediction) }, unsafe { read_str(truth) }) {
        (Ok(p), Ok(t)) => (p, t),
        (Err(e), _) | (_, Err(e)) => return e,
    };
    let taxonomy = builtin_taxonomy();
    let spec = taxonomy
        .iter()
        .find(|s| s.id == AttributeId::SE)
        .expect("taxonomy has SE");
    match score_qualitative(
        &AttributeValue::Categorical(pred.to_string()),
        &AttributeValue::Categorical(truth.to_string()),
        spec,
    ) {
        Ok(score) => {
            unsafe { *out_score = score.value };
            HeStatus::HE_STATUS_OK
        }
        Err(_) => HeStatus::HE_STATUS_INVALID_ARGUMENT,
    }
}

/// Relative-error score for a quantitative attribute on the given scale,
/// normalized by the scale width and clamped to [0, 100].
///
/// # Safety
/// `out_score` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn he_score_quantitative(
    prediction: i64,
    truth: i64,
    scale_min: i64,
    scale_max: i64,
    out_score: *mut f64,
) -> HeStatus {
    if out_score.is_null() {
        return HeStatus::HE_STATUS_NULL_ARGUMENT;
    }
    if scale_min >= scale_max {
        return HeStatus::HE_STATUS_INVALID_ARGUMENT;
    }
    let mut spec = builtin_taxonomy()
        .iter()
        .find(|s| s.id == AttributeId::HS)
        .expect("taxonomy has HS")
        .clone();
    spec.scale_min = Some(scale_min);
    spec.scale_max = Some(scale_max);
    match score_quantitative(
        &AttributeValue::Ordinal(prediction),
        &AttributeValue::Ordinal(truth),
        &spec,
        RelativeErrorMode::ScaleWidth,
    ) {
        Ok(score) => {
            unsafe { *out_score = score.value };
            HeStatus::HE_STATUS_OK
        }
        Err(_) => HeStatus::HE_STATUS_INVALID_ARGUMENT,
    }
}

/// Create an empty table builder. Release with `he_table_free`.
#[no_mangle]
pub extern "C" fn he_table_new() -> *mut HeTableBuilder {
    Box::into_raw(Box::new(HeTableBuilder { series: Vec::new() }))
}

/// Release a table builder.
///
/// # Safety
/// `table` must come from `he_table_new`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn he_table_free(table: *mut HeTableBuilder) {
    if !table.is_null() {
        drop(unsafe { Box::from_raw(table) });
    }
}

/// Append one named row of 12 per-attribute scores (category-major attribute
/// order); category and overall means are derived.
///
/// # Safety
/// `table` must come from `he_table_new`; `name` must be a NUL-terminated
/// string; `values` must point to 12 doubles.
#[no_mangle]
pub unsafe extern "C" fn he_table_add_series(
    table: *mut HeTableBuilder,
    name: *const c_char,
    values: *const f64,
) -> HeStatus {
    if table.is_null() || values.is_null() {
        return HeStatus::HE_STATUS_NULL_ARGUMENT;
    }
    let name = match unsafe { read_str(name) } {
        Ok(n) => n.to_string(),
        Err(e) => return e,
    };
    let values = unsafe { std::slice::from_raw_parts(values, AttributeId::ALL.len()) };
    let map: BTreeMap<AttributeId, f64> = AttributeId::ALL
        .iter()
        .zip(values)
        .map(|(id, v)| (*id, *v))
        .collect();
    let report = match ScoreReport::from_attribute_values(&map) {
        Ok(r) => r,
        Err(_) => return HeStatus::HE_STATUS_INVALID_ARGUMENT,
    };
    unsafe { &mut *table }.series.push(TableSeries { name, report });
    HeStatus::HE_STATUS_OK
}

/// Render the accumulated series as a table in the named layout ("main",
/// "ablation", "image_sweep", or "human"), returned as JSON.
///
/// # Safety
/// `table` must come from `he_table_new`; `layout` must be a NUL-terminated
/// string; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn he_table_render_json(
    table: *const HeTableBuilder,
    layout: *const c_char,
    out_json: *mut *mut c_char,
) -> HeStatus {
    if table.is_null() || out_json.is_null() {
        return HeStatus::HE_STATUS_NULL_ARGUMENT;
    }
    let layout = match unsafe { read_str(layout) } {
        Ok(l) => l,
        Err(e) => return e,
    };
    let layout = match layout {
        "main" => TableLayout::Main,
        "ablation" => TableLayout::Ablation,
        "image_sweep" => TableLayout::ImageSweep,
        "human" => TableLayout::Human,
        _ => return HeStatus::HE_STATUS_BAD_LAYOUT,
    };
    let series = &unsafe { &*table }.series;
    match render_table(layout, series) {
        Ok(rendered) => {
            let json = serde_json::to_string_pretty(&rendered).expect("table serializes");
            unsafe { *out_json = to_c_string(json) };
            HeStatus::HE_STATUS_OK
        }
        Err(_) => HeStatus::HE_STATUS_SERIES_MISMATCH,
    }
}
