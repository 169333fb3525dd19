//! The three metric families, per-category and overall aggregation, delta
//! arithmetic against a baseline, and table rendering.
//!
//! Every score lives in [0, 100]. Exact-match scores are 0 or 100; judged
//! similarity lands on the five-level grid {0, 25, 50, 75, 100}; relative
//! error is continuous. The relative-error formula normalizes the absolute
//! deviation by the scale width; a truth-relative variant is available behind
//! a switch so the two readings can be compared.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    assemble, send, AgentBackend, AgentError, CacheStore, PromptTemplate,
};
use crate::taxonomy::{
    spec_of, AttributeCategory, AttributeId, AttributeKind, AttributeProfile, AttributeSpec,
    AttributeValue,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMethod {
    ExactMatch,
    RelativeError,
    JudgedSimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub attribute: AttributeId,
    /// Score in [0, 100].
    pub value: f64,
    pub method: ScoreMethod,
    /// Raw judge level in {0, 0.25, 0.5, 0.75, 1}, when a judge was consulted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_raw: Option<f64>,
}

/// How quantitative deviations are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RelativeErrorMode {
    /// 1 - |pred - truth| / (scale_max - scale_min)
    #[default]
    ScaleWidth,
    /// 1 - |pred - truth| / truth
    TruthRelative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBlock {
    pub per_attribute: BTreeMap<AttributeId, f64>,
    pub per_category: BTreeMap<AttributeCategory, f64>,
    pub average: f64,
}

/// Scores for one individual or an aggregated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scores: BTreeMap<AttributeId, AttributeScore>,
    pub per_category: BTreeMap<AttributeCategory, f64>,
    pub overall: f64,
    pub relative_error_mode: RelativeErrorMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaBlock>,
}

impl ScoreReport {
    /// Build a report from bare per-attribute values (e.g. a published table
    /// row), deriving category and overall means.
    pub fn from_attribute_values(values: &BTreeMap<AttributeId, f64>) -> Result<Self, ScoreError> {
        let mut scores = BTreeMap::new();
        for id in AttributeId::ALL {
            let value = *values
                .get(&id)
                .ok_or(ScoreError::MissingAttribute(id))?;
            scores.insert(
                id,
                AttributeScore {
                    attribute: id,
                    value,
                    method: method_for_kind(id.kind()),
                    judge_raw: None,
                },
            );
        }
        Ok(finalize_report(scores, RelativeErrorMode::default()))
    }

    pub fn attribute_value(&self, id: AttributeId) -> f64 {
        self.scores.get(&id).map(|s| s.value).unwrap_or(0.0)
    }
}

fn method_for_kind(kind: AttributeKind) -> ScoreMethod {
    match kind {
        AttributeKind::Qualitative => ScoreMethod::ExactMatch,
        AttributeKind::Quantitative => ScoreMethod::RelativeError,
        AttributeKind::Ambiguous => ScoreMethod::JudgedSimilarity,
    }
}

fn finalize_report(
    scores: BTreeMap<AttributeId, AttributeScore>,
    mode: RelativeErrorMode,
) -> ScoreReport {
    let mut per_category = BTreeMap::new();
    for category in AttributeCategory::ALL {
        let members = category.members();
        let sum: f64 = members
            .iter()
            .map(|id| scores.get(id).map(|s| s.value).unwrap_or(0.0))
            .sum();
        per_category.insert(category, sum / members.len() as f64);
    }
    let overall = scores.values().map(|s| s.value).sum::<f64>() / scores.len() as f64;
    ScoreReport {
        scores,
        per_category,
        overall,
        relative_error_mode: mode,
        delta: None,
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("{attribute}: kind mismatch, expected {expected:?} got {got}")]
    KindMismatch {
        attribute: AttributeId,
        expected: AttributeKind,
        got: String,
    },
    #[error("{attribute}: ordinal {got} outside scale")]
    OutOfScale { attribute: AttributeId, got: i64 },
    #[error("judge output {got:?} is not on the 0/0.25/0.5/0.75/1 grid")]
    UnparseableJudgment { got: String },
    #[error("{0} missing from profile")]
    MissingAttribute(AttributeId),
    #[error("series missing for layout: {0}")]
    MissingSeries(String),
    #[error("{context}: {source}")]
    Agent {
        context: String,
        source: AgentError,
    },
}

/// Exact-match scoring for qualitative attributes: 100 on normalized label
/// equality, else 0. An abstaining prediction scores 0.
pub fn score_qualitative(
    pred: &AttributeValue,
    truth: &AttributeValue,
    spec: &AttributeSpec,
) -> Result<AttributeScore, ScoreError> {
    let truth_label = match truth {
        AttributeValue::Categorical(l) => l,
        other => {
            return Err(ScoreError::KindMismatch {
                attribute: spec.id,
                expected: AttributeKind::Qualitative,
                got: format!("{other:?}"),
            })
        }
    };
    let value = match pred {
        AttributeValue::Abstain => 0.0,
        AttributeValue::Categorical(l) => {
            if normalize(l) == normalize(truth_label) {
                100.0
            } else {
                0.0
            }
        }
        other => {
            return Err(ScoreError::KindMismatch {
                attribute: spec.id,
                expected: AttributeKind::Qualitative,
                got: format!("{other:?}"),
            })
        }
    };
    Ok(AttributeScore {
        attribute: spec.id,
        value,
        method: ScoreMethod::ExactMatch,
        judge_raw: None,
    })
}

/// Relative-error scoring for quantitative attributes, clamped to [0, 100].
pub fn score_quantitative(
    pred: &AttributeValue,
    truth: &AttributeValue,
    spec: &AttributeSpec,
    mode: RelativeErrorMode,
) -> Result<AttributeScore, ScoreError> {
    let truth_level = match truth {
        AttributeValue::Ordinal(n) => *n,
        other => {
            return Err(ScoreError::KindMismatch {
                attribute: spec.id,
                expected: AttributeKind::Quantitative,
                got: format!("{other:?}"),
            })
        }
    };
    let (min, max) = (spec.scale_min.unwrap_or(1), spec.scale_max.unwrap_or(5));
    if truth_level < min || truth_level > max {
        return Err(ScoreError::OutOfScale {
            attribute: spec.id,
            got: truth_level,
        });
    }
    let value = match pred {
        AttributeValue::Abstain => 0.0,
        AttributeValue::Ordinal(p) => {
            if *p < min || *p > max {
                return Err(ScoreError::OutOfScale {
                    attribute: spec.id,
                    got: *p,
                });
            }
            let err = (*p - truth_level).abs() as f64;
            let denom = match mode {
                RelativeErrorMode::ScaleWidth => (max - min) as f64,
                RelativeErrorMode::TruthRelative => truth_level as f64,
            };
            (100.0 * (1.0 - err / denom)).clamp(0.0, 100.0)
        }
        other => {
            return Err(ScoreError::KindMismatch {
                attribute: spec.id,
                expected: AttributeKind::Quantitative,
                got: format!("{other:?}"),
            })
        }
    };
    Ok(AttributeScore {
        attribute: spec.id,
        value,
        method: ScoreMethod::RelativeError,
        judge_raw: None,
    })
}

/// Judge backend plus its rubric template.
pub struct Judge<'a> {
    pub backend: &'a dyn AgentBackend,
    pub cache: Option<&'a CacheStore>,
    pub template: &'a PromptTemplate,
}

const JUDGE_GRID: [(&str, f64); 5] = [
    ("0", 0.0),
    ("0.25", 0.25),
    ("0.5", 0.5),
    ("0.75", 0.75),
    ("1", 1.0),
];

fn parse_judge_level(raw: &str) -> Option<f64> {
    let trimmed = raw.trim().trim_end_matches(".0");
    let trimmed = if trimmed.is_empty() { "0" } else { trimmed };
    JUDGE_GRID
        .iter()
        .find(|(text, _)| *text == raw.trim() || *text == trimmed)
        .map(|(_, level)| *level)
}

/// Judged similarity for ambiguous attributes: one LLM-judge call returning a
/// level on the five-step grid, times 100. Exactly equal strings bypass the
/// judge entirely; an abstaining prediction scores 0 without a call.
pub fn score_ambiguous(
    pred: &AttributeValue,
    truth: &AttributeValue,
    spec: &AttributeSpec,
    judge: &Judge,
) -> Result<AttributeScore, ScoreError> {
    let truth_text = match truth {
        AttributeValue::FreeText(t) => t,
        other => {
            return Err(ScoreError::KindMismatch {
                attribute: spec.id,
                expected: AttributeKind::Ambiguous,
                got: format!("{other:?}"),
            })
        }
    };
    let pred_text = match pred {
        AttributeValue::Abstain => {
            return Ok(AttributeScore {
                attribute: spec.id,
                value: 0.0,
                method: ScoreMethod::JudgedSimilarity,
                judge_raw: None,
            })
        }
        AttributeValue::FreeText(t) => t,
        other => {
            return Err(ScoreError::KindMismatch {
                attribute: spec.id,
                expected: AttributeKind::Ambiguous,
                got: format!("{other:?}"),
            })
        }
    };
    if normalize(pred_text) == normalize(truth_text) {
        return Ok(AttributeScore {
            attribute: spec.id,
            value: 100.0,
            method: ScoreMethod::JudgedSimilarity,
            judge_raw: Some(1.0),
        });
    }
    let mut bindings = BTreeMap::new();
    bindings.insert("attribute".to_string(), spec.id.to_string());
    bindings.insert("description".to_string(), spec.description.clone());
    bindings.insert("prediction".to_string(), pred_text.clone());
    bindings.insert("truth".to_string(), truth_text.clone());
    let request = assemble(judge.template, &bindings, &[], &[]).map_err(|source| {
        ScoreError::Agent {
            context: format!("judge {0}", spec.id),
            source,
        }
    })?;
    let response =
        send(judge.backend, judge.cache, &request).map_err(|source| ScoreError::Agent {
            context: format!("judge {0}", spec.id),
            source,
        })?;
    let level = match parse_judge_level(&response.text) {
        Some(level) => level,
        None => {
            // one repair retry with an explicit grid reminder
            let mut repair = request.clone();
            repair.text.push_str(
                "\n\nAnswer with exactly one of: 0, 0.25, 0.5, 0.75, 1. No other text.",
            );
            let retry = send(judge.backend, judge.cache, &repair).map_err(|source| {
                ScoreError::Agent {
                    context: format!("judge {0} retry", spec.id),
                    source,
                }
            })?;
            parse_judge_level(&retry.text).ok_or(ScoreError::UnparseableJudgment {
                got: retry.text.clone(),
            })?
        }
    };
    Ok(AttributeScore {
        attribute: spec.id,
        value: level * 100.0,
        method: ScoreMethod::JudgedSimilarity,
        judge_raw: Some(level),
    })
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Score one individual's predicted profile against complete ground truth,
/// dispatching each attribute to its kind's scorer.
pub fn score_profile(
    pred: &AttributeProfile,
    truth: &AttributeProfile,
    taxonomy: &[AttributeSpec],
    judge: &Judge,
    mode: RelativeErrorMode,
) -> Result<ScoreReport, ScoreError> {
    let mut scores = BTreeMap::new();
    for id in AttributeId::ALL {
        let spec = spec_of(taxonomy, id).ok_or(ScoreError::MissingAttribute(id))?;
        let truth_value = truth.get(id).ok_or(ScoreError::MissingAttribute(id))?;
        let pred_value = pred.get(id).ok_or(ScoreError::MissingAttribute(id))?;
        let score = match spec.kind {
            AttributeKind::Qualitative => score_qualitative(pred_value, truth_value, spec)?,
            AttributeKind::Quantitative => {
                score_quantitative(pred_value, truth_value, spec, mode)?
            }
            AttributeKind::Ambiguous => score_ambiguous(pred_value, truth_value, spec, judge)?,
        };
        scores.insert(id, score);
    }
    Ok(finalize_report(scores, mode))
}

/// Per-attribute means over individuals, then category/overall means of those.
pub fn aggregate(reports: &[ScoreReport]) -> Result<ScoreReport, ScoreError> {
    let first = reports
        .first()
        .ok_or_else(|| ScoreError::MissingSeries("aggregate of zero reports".into()))?;
    let mut scores = BTreeMap::new();
    for id in AttributeId::ALL {
        let mut values = Vec::with_capacity(reports.len());
        for report in reports {
            values.push(
                report
                    .scores
                    .get(&id)
                    .ok_or(ScoreError::MissingAttribute(id))?
                    .value,
            );
        }
        // canonical summation order makes the mean permutation-invariant
        // down to the last bit, not just approximately
        values.sort_by(f64::total_cmp);
        scores.insert(
            id,
            AttributeScore {
                attribute: id,
                value: values.iter().sum::<f64>() / reports.len() as f64,
                method: method_for_kind(id.kind()),
                judge_raw: None,
            },
        );
    }
    Ok(finalize_report(scores, first.relative_error_mode))
}

/// Signed per-attribute and average differences, ours minus baseline.
pub fn delta(ours: &ScoreReport, baseline: &ScoreReport) -> DeltaBlock {
    let mut per_attribute = BTreeMap::new();
    for id in AttributeId::ALL {
        per_attribute.insert(id, ours.attribute_value(id) - baseline.attribute_value(id));
    }
    let mut per_category = BTreeMap::new();
    for category in AttributeCategory::ALL {
        per_category.insert(
            category,
            ours.per_category[&category] - baseline.per_category[&category],
        );
    }
    DeltaBlock {
        per_attribute,
        per_category,
        average: ours.overall - baseline.overall,
    }
}

/// One named row (or column) of a rendered table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSeries {
    pub name: String,
    pub report: ScoreReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    /// Baseline row, ours row, delta row; 12 attribute columns + Average.
    Main,
    /// Four ablation rows plus the full configuration last.
    Ablation,
    /// One row per model/strategy, one column per image count.
    ImageSweep,
    /// Category rows, one column per evaluator.
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedTable {
    pub layout: TableLayout,
    pub columns: Vec<String>,
    pub rows: Vec<RenderedRow>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedRow {
    pub name: String,
    pub values: Vec<f64>,
}

fn fmt_row(name: &str, values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:.1}")).collect();
    format!("{name} | {}\n", cells.join(" | "))
}

/// Deterministic text + JSON rendering in the published table shapes.
pub fn render_table(
    layout: TableLayout,
    series: &[TableSeries],
) -> Result<RenderedTable, ScoreError> {
    match layout {
        TableLayout::Main => {
            if series.len() != 2 {
                return Err(ScoreError::MissingSeries(
                    "main layout needs [baseline, ours]".into(),
                ));
            }
            let baseline = &series[0];
            let ours = &series[1];
            let mut columns: Vec<String> =
                AttributeId::ALL.iter().map(|id| id.to_string()).collect();
            columns.push("Average".to_string());
            let row_values = |r: &ScoreReport| -> Vec<f64> {
                let mut v: Vec<f64> =
                    AttributeId::ALL.iter().map(|id| r.attribute_value(*id)).collect();
                v.push(r.overall);
                v
            };
            let d = delta(&ours.report, &baseline.report);
            let mut delta_values: Vec<f64> = AttributeId::ALL
                .iter()
                .map(|id| d.per_attribute[id])
                .collect();
            delta_values.push(d.average);
            let rows = vec![
                RenderedRow {
                    name: baseline.name.clone(),
                    values: row_values(&baseline.report),
                },
                RenderedRow {
                    name: ours.name.clone(),
                    values: row_values(&ours.report),
                },
                RenderedRow {
                    name: "Delta".to_string(),
                    values: delta_values,
                },
            ];
            Ok(assemble_table(TableLayout::Main, columns, rows))
        }
        TableLayout::Ablation => {
            if series.len() != 5 {
                return Err(ScoreError::MissingSeries(
                    "ablation layout needs 4 ablations + full".into(),
                ));
            }
            if !series[4].name.ends_with("(full)") {
                return Err(ScoreError::MissingSeries(
                    "last ablation series must be the full configuration".into(),
                ));
            }
            let mut columns: Vec<String> =
                AttributeId::ALL.iter().map(|id| id.to_string()).collect();
            columns.push("Average".to_string());
            let rows = series
                .iter()
                .map(|s| {
                    let mut values: Vec<f64> = AttributeId::ALL
                        .iter()
                        .map(|id| s.report.attribute_value(*id))
                        .collect();
                    values.push(s.report.overall);
                    RenderedRow {
                        name: s.name.clone(),
                        values,
                    }
                })
                .collect();
            Ok(assemble_table(TableLayout::Ablation, columns, rows))
        }
        TableLayout::ImageSweep => {
            if series.is_empty() {
                return Err(ScoreError::MissingSeries("image sweep needs columns".into()));
            }
            // each series is one image-count column; name like "5 imgs"
            let columns: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
            let values: Vec<f64> = series.iter().map(|s| s.report.overall).collect();
            let rows = vec![RenderedRow {
                name: "Average".to_string(),
                values,
            }];
            Ok(assemble_table(TableLayout::ImageSweep, columns, rows))
        }
        TableLayout::Human => {
            if series.is_empty() {
                return Err(ScoreError::MissingSeries("human layout needs columns".into()));
            }
            let columns: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
            let mut rows = Vec::new();
            for category in AttributeCategory::ALL {
                rows.push(RenderedRow {
                    name: category.label().to_string(),
                    values: series
                        .iter()
                        .map(|s| s.report.per_category[&category])
                        .collect(),
                });
            }
            rows.push(RenderedRow {
                name: "Average".to_string(),
                values: series.iter().map(|s| s.report.overall).collect(),
            });
            Ok(assemble_table(TableLayout::Human, columns, rows))
        }
    }
}

fn assemble_table(
    layout: TableLayout,
    columns: Vec<String>,
    rows: Vec<RenderedRow>,
) -> RenderedTable {
    let mut text = format!(" | {}\n", columns.join(" | "));
    for row in &rows {
        text.push_str(&fmt_row(&row.name, &row.values));
    }
    RenderedTable {
        layout,
        columns,
        rows,
        text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentRole, Script, ScriptedBackend};
    use crate::taxonomy::builtin_taxonomy;

    fn spec(id: AttributeId) -> AttributeSpec {
        spec_of(&builtin_taxonomy(), id).unwrap().clone()
    }

    fn judge_template() -> PromptTemplate {
        PromptTemplate {
            role: AgentRole::LlmJudge,
            name: "l_judge".to_string(),
            body: "attr {attribute} ({description}) pred {prediction} truth {truth}".to_string(),
        }
    }

    #[test]
    fn qualitative_is_exact_match() {
        let se = spec(AttributeId::SE);
        let female = AttributeValue::Categorical("female".to_string());
        let male = AttributeValue::Categorical("male".to_string());
        assert_eq!(score_qualitative(&female, &female, &se).unwrap().value, 100.0);
        assert_eq!(score_qualitative(&male, &female, &se).unwrap().value, 0.0);
        assert_eq!(
            score_qualitative(&AttributeValue::Abstain, &female, &se)
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn quantitative_matches_direct_formula_on_all_pairs() {
        let hs = spec(AttributeId::HS);
        for pred in 1..=5i64 {
            for truth in 1..=5i64 {
                let got = score_quantitative(
                    &AttributeValue::Ordinal(pred),
                    &AttributeValue::Ordinal(truth),
                    &hs,
                    RelativeErrorMode::ScaleWidth,
                )
                .unwrap()
                .value;
                let expected = 100.0 * (1.0 - (pred - truth).abs() as f64 / 4.0);
                assert!((got - expected).abs() < 1e-12, "({pred},{truth})");
            }
        }
    }

    #[test]
    fn quantitative_published_examples() {
        let hs = spec(AttributeId::HS);
        let run = |p: i64, t: i64| {
            score_quantitative(
                &AttributeValue::Ordinal(p),
                &AttributeValue::Ordinal(t),
                &hs,
                RelativeErrorMode::ScaleWidth,
            )
            .unwrap()
            .value
        };
        assert_eq!(run(3, 3), 100.0);
        assert_eq!(run(1, 5), 0.0);
        assert_eq!(run(4, 3), 75.0);
    }

    #[test]
    fn quantitative_truth_relative_mode() {
        let hs = spec(AttributeId::HS);
        let got = score_quantitative(
            &AttributeValue::Ordinal(4),
            &AttributeValue::Ordinal(2),
            &hs,
            RelativeErrorMode::TruthRelative,
        )
        .unwrap()
        .value;
        assert_eq!(got, 0.0); // 1 - 2/2 = 0
    }

    #[test]
    fn quantitative_rejects_out_of_scale() {
        let hs = spec(AttributeId::HS);
        assert!(matches!(
            score_quantitative(
                &AttributeValue::Ordinal(9),
                &AttributeValue::Ordinal(3),
                &hs,
                RelativeErrorMode::ScaleWidth
            ),
            Err(ScoreError::OutOfScale { .. })
        ));
    }

    #[test]
    fn ambiguous_equal_strings_bypass_the_judge() {
        let oc = spec(AttributeId::OC);
        let backend = ScriptedBackend::new("judge", Script::new());
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let v = AttributeValue::FreeText("Chef".to_string());
        let t = AttributeValue::FreeText("chef".to_string());
        let score = score_ambiguous(&v, &t, &oc, &judge).unwrap();
        assert_eq!(score.value, 100.0);
        assert!(backend.call_log().is_empty());
    }

    #[test]
    fn ambiguous_parses_grid_levels() {
        let oc = spec(AttributeId::OC);
        let backend = ScriptedBackend::new(
            "judge",
            Script::new().rule(AgentRole::LlmJudge, "*", "0.75"),
        );
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let score = score_ambiguous(
            &AttributeValue::FreeText("sous chef".to_string()),
            &AttributeValue::FreeText("chef".to_string()),
            &oc,
            &judge,
        )
        .unwrap();
        assert_eq!(score.value, 75.0);
        assert_eq!(score.judge_raw, Some(0.75));
    }

    #[test]
    fn off_grid_judgment_is_unparseable() {
        let oc = spec(AttributeId::OC);
        let backend = ScriptedBackend::new(
            "judge",
            Script::new().rule(AgentRole::LlmJudge, "*", "0.6"),
        );
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let err = score_ambiguous(
            &AttributeValue::FreeText("a".to_string()),
            &AttributeValue::FreeText("b".to_string()),
            &oc,
            &judge,
        )
        .unwrap_err();
        assert!(matches!(err, ScoreError::UnparseableJudgment { .. }));
        // initial attempt plus one repair retry
        assert_eq!(backend.call_log().len(), 2);
    }

    #[test]
    fn abstain_ambiguous_scores_zero_without_a_call() {
        let oc = spec(AttributeId::OC);
        let backend = ScriptedBackend::new("judge", Script::new());
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let score = score_ambiguous(
            &AttributeValue::Abstain,
            &AttributeValue::FreeText("chef".to_string()),
            &oc,
            &judge,
        )
        .unwrap();
        assert_eq!(score.value, 0.0);
        assert!(backend.call_log().is_empty());
    }

    fn complete_profile(taxonomy: &[AttributeSpec]) -> AttributeProfile {
        let mut p = AttributeProfile::new();
        for spec in taxonomy {
            let raw = match spec.kind {
                AttributeKind::Qualitative => "female".to_string(),
                AttributeKind::Quantitative => "4".to_string(),
                AttributeKind::Ambiguous => format!("truth for {}", spec.id),
            };
            p.set(spec.id, crate::taxonomy::parse_value(spec, &raw).unwrap());
        }
        p
    }

    #[test]
    fn perfect_profile_scores_100_overall() {
        let taxonomy = builtin_taxonomy();
        let truth = complete_profile(&taxonomy);
        let backend = ScriptedBackend::new("judge", Script::new());
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let report = score_profile(
            &truth.clone(),
            &truth,
            &taxonomy,
            &judge,
            RelativeErrorMode::ScaleWidth,
        )
        .unwrap();
        assert_eq!(report.overall, 100.0);
        for category in AttributeCategory::ALL {
            assert_eq!(report.per_category[&category], 100.0);
        }
        assert!(backend.call_log().is_empty(), "equality bypass everywhere");
    }

    #[test]
    fn all_abstain_scores_zero() {
        let taxonomy = builtin_taxonomy();
        let truth = complete_profile(&taxonomy);
        let mut pred = AttributeProfile::new();
        pred.fill_abstain();
        let backend = ScriptedBackend::new("judge", Script::new());
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let report =
            score_profile(&pred, &truth, &taxonomy, &judge, RelativeErrorMode::ScaleWidth)
                .unwrap();
        assert_eq!(report.overall, 0.0);
    }

    #[test]
    fn mixed_profile_overall_is_mean_of_components() {
        let taxonomy = builtin_taxonomy();
        let truth = complete_profile(&taxonomy);
        let mut pred = truth.clone();
        pred.set(AttributeId::SE, AttributeValue::Categorical("male".to_string()));
        pred.set(AttributeId::HS, AttributeValue::Ordinal(3)); // truth 4 -> 75
        pred.set(AttributeId::MBTI, AttributeValue::Abstain); // 0
        let backend = ScriptedBackend::new("judge", Script::new());
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let report =
            score_profile(&pred, &truth, &taxonomy, &judge, RelativeErrorMode::ScaleWidth)
                .unwrap();
        // 9 attributes at 100, SE at 0, HS at 75, MBTI at 0
        let expected = (9.0 * 100.0 + 0.0 + 75.0 + 0.0) / 12.0;
        assert!((report.overall - expected).abs() < 1e-12);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let taxonomy = builtin_taxonomy();
        let truth = complete_profile(&taxonomy);
        let backend = ScriptedBackend::new("judge", Script::new());
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let mut worse = truth.clone();
        worse.set(AttributeId::HS, AttributeValue::Ordinal(1));
        let a = score_profile(&truth.clone(), &truth, &taxonomy, &judge, RelativeErrorMode::ScaleWidth).unwrap();
        let b = score_profile(&worse, &truth, &taxonomy, &judge, RelativeErrorMode::ScaleWidth).unwrap();
        let fwd = aggregate(&[a.clone(), b.clone()]).unwrap();
        let rev = aggregate(&[b, a]).unwrap();
        assert_eq!(fwd.overall, rev.overall);
        assert_eq!(fwd.scores, rev.scores);
    }

    #[test]
    fn delta_is_antisymmetric_and_zero_on_self() {
        let taxonomy = builtin_taxonomy();
        let truth = complete_profile(&taxonomy);
        let backend = ScriptedBackend::new("judge", Script::new());
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let mut worse = truth.clone();
        worse.set(AttributeId::HS, AttributeValue::Ordinal(2));
        let ours = score_profile(&truth.clone(), &truth, &taxonomy, &judge, RelativeErrorMode::ScaleWidth).unwrap();
        let base = score_profile(&worse, &truth, &taxonomy, &judge, RelativeErrorMode::ScaleWidth).unwrap();
        let self_delta = delta(&ours, &ours);
        assert_eq!(self_delta.average, 0.0);
        assert!(self_delta.per_attribute.values().all(|v| *v == 0.0));
        let fwd = delta(&ours, &base);
        let rev = delta(&base, &ours);
        assert_eq!(fwd.average, -rev.average);
    }

    #[test]
    fn main_layout_has_attribute_columns_and_delta_row() {
        let taxonomy = builtin_taxonomy();
        let truth = complete_profile(&taxonomy);
        let backend = ScriptedBackend::new("judge", Script::new());
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let ours = score_profile(&truth.clone(), &truth, &taxonomy, &judge, RelativeErrorMode::ScaleWidth).unwrap();
        let table = render_table(
            TableLayout::Main,
            &[
                TableSeries {
                    name: "Strong prompt".to_string(),
                    report: ours.clone(),
                },
                TableSeries {
                    name: "Ours".to_string(),
                    report: ours,
                },
            ],
        )
        .unwrap();
        assert_eq!(table.columns.len(), 13);
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.rows[2].name, "Delta");
    }

    #[test]
    fn ablation_layout_requires_full_last() {
        let taxonomy = builtin_taxonomy();
        let truth = complete_profile(&taxonomy);
        let backend = ScriptedBackend::new("judge", Script::new());
        let judge = Judge {
            backend: &backend,
            cache: None,
            template: &judge_template(),
        };
        let report = score_profile(&truth.clone(), &truth, &taxonomy, &judge, RelativeErrorMode::ScaleWidth).unwrap();
        let series: Vec<TableSeries> = [
            "w/o Extraction",
            "w/o Analysis",
            "w/o Summarization",
            "w/o Inquiry and Decision",
            "HolmesEye (full)",
        ]
        .iter()
        .map(|name| TableSeries {
            name: name.to_string(),
            report: report.clone(),
        })
        .collect();
        let table = render_table(TableLayout::Ablation, &series).unwrap();
        assert_eq!(table.rows.len(), 5);
        assert!(table.rows[4].name.ends_with("(full)"));
        let bad = render_table(TableLayout::Ablation, &series[..4]);
        assert!(bad.is_err());
    }
}
