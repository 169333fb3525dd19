//! The twelve-attribute taxonomy: identifiers, categories, metric kinds,
//! value domains, and profile validation.
//!
//! Every other module consumes these types. The taxonomy is immutable after
//! construction and safe to share across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the twelve private attributes under audit.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum AttributeId {
    /// Age
    AG,
    /// Sex
    SE,
    /// Region
    RE,
    /// Daily Routines
    DR,
    /// Health Status
    HS,
    /// Hygiene Habits
    HH,
    /// Consumption Ability
    CA,
    /// Income Level
    IN,
    /// Occupation
    OC,
    /// MBTI personality type
    MBTI,
    /// Social Activity Level
    SA,
    /// Leadership Tendency
    LT,
}

impl AttributeId {
    /// All twelve identifiers in canonical (report-column) order.
    pub const ALL: [AttributeId; 12] = [
        AttributeId::AG,
        AttributeId::SE,
        AttributeId::RE,
        AttributeId::DR,
        AttributeId::HS,
        AttributeId::HH,
        AttributeId::CA,
        AttributeId::IN,
        AttributeId::OC,
        AttributeId::MBTI,
        AttributeId::SA,
        AttributeId::LT,
    ];

    pub fn category(self) -> AttributeCategory {
        use AttributeId::*;
        match self {
            AG | SE | RE => AttributeCategory::PersonalBasic,
            HH | DR | HS => AttributeCategory::HealthCondition,
            CA | IN | OC => AttributeCategory::SocialAttributes,
            MBTI | SA | LT => AttributeCategory::PsychologicalTraits,
        }
    }

    pub fn kind(self) -> AttributeKind {
        use AttributeId::*;
        match self {
            SE => AttributeKind::Qualitative,
            HS | CA | IN | SA | LT | DR | HH => AttributeKind::Quantitative,
            RE | OC | MBTI | AG => AttributeKind::Ambiguous,
        }
    }

    pub fn parse(s: &str) -> Option<AttributeId> {
        AttributeId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeId::AG => "AG",
            AttributeId::SE => "SE",
            AttributeId::RE => "RE",
            AttributeId::DR => "DR",
            AttributeId::HS => "HS",
            AttributeId::HH => "HH",
            AttributeId::CA => "CA",
            AttributeId::IN => "IN",
            AttributeId::OC => "OC",
            AttributeId::MBTI => "MBTI",
            AttributeId::SA => "SA",
            AttributeId::LT => "LT",
        }
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four attribute domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttributeCategory {
    PersonalBasic,
    HealthCondition,
    SocialAttributes,
    PsychologicalTraits,
}

impl AttributeCategory {
    pub const ALL: [AttributeCategory; 4] = [
        AttributeCategory::PersonalBasic,
        AttributeCategory::HealthCondition,
        AttributeCategory::SocialAttributes,
        AttributeCategory::PsychologicalTraits,
    ];

    pub fn members(self) -> [AttributeId; 3] {
        use AttributeId::*;
        match self {
            AttributeCategory::PersonalBasic => [AG, SE, RE],
            AttributeCategory::HealthCondition => [HH, DR, HS],
            AttributeCategory::SocialAttributes => [CA, IN, OC],
            AttributeCategory::PsychologicalTraits => [MBTI, SA, LT],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AttributeCategory::PersonalBasic => "Personal Basic",
            AttributeCategory::HealthCondition => "Health Condition",
            AttributeCategory::SocialAttributes => "Social Attributes",
            AttributeCategory::PsychologicalTraits => "Psychological Traits",
        }
    }
}

/// Metric family an attribute is scored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttributeKind {
    /// Exact-match on a closed label set.
    Qualitative,
    /// Ordinal level on an integer scale, scored by normalized error.
    Quantitative,
    /// Free text, scored by an LLM judge on a five-level grid.
    Ambiguous,
}

/// Full specification of one attribute: identity, category, metric kind,
/// and value domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub id: AttributeId,
    pub category: AttributeCategory,
    pub kind: AttributeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_min: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_max: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub description: String,
}

impl AttributeSpec {
    pub fn scale_width(&self) -> Option<i64> {
        match (self.scale_min, self.scale_max) {
            (Some(lo), Some(hi)) => Some(hi - lo),
            _ => None,
        }
    }
}

/// A concrete value for one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributeValue {
    Categorical(String),
    Ordinal(i64),
    FreeText(String),
    /// Sentinel for an attribute the pipeline could not infer. Always scores 0.
    Abstain,
}

impl AttributeValue {
    pub fn is_abstain(&self) -> bool {
        matches!(self, AttributeValue::Abstain)
    }

    /// Canonical text form, the inverse of [`parse_value`].
    pub fn render(&self) -> String {
        match self {
            AttributeValue::Categorical(s) => s.clone(),
            AttributeValue::Ordinal(n) => n.to_string(),
            AttributeValue::FreeText(s) => s.clone(),
            AttributeValue::Abstain => ABSTAIN_TOKEN.to_string(),
        }
    }
}

/// Text form of [`AttributeValue::Abstain`] in structured model output.
pub const ABSTAIN_TOKEN: &str = "ABSTAIN";

/// A (possibly partial) per-individual profile of attribute values.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttributeProfile {
    pub entries: BTreeMap<AttributeId, AttributeValue>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub evidence: BTreeMap<AttributeId, String>,
}

impl AttributeProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: AttributeId) -> Option<&AttributeValue> {
        self.entries.get(&id)
    }

    pub fn set(&mut self, id: AttributeId, value: AttributeValue) {
        self.entries.insert(id, value);
    }

    /// Attributes with assigned values.
    pub fn coverage(&self) -> BTreeSet<AttributeId> {
        self.entries.keys().copied().collect()
    }

    pub fn is_complete(&self) -> bool {
        self.entries.len() == AttributeId::ALL.len()
    }

    pub fn missing(&self) -> Vec<AttributeId> {
        AttributeId::ALL
            .iter()
            .copied()
            .filter(|id| !self.entries.contains_key(id))
            .collect()
    }

    /// Fill every missing attribute with the abstain sentinel.
    pub fn fill_abstain(&mut self) {
        for id in self.missing() {
            self.entries.insert(id, AttributeValue::Abstain);
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseValueError {
    #[error("empty value for {0}")]
    Empty(AttributeId),
    #[error("{id}: ordinal {got} outside scale {min}..{max}")]
    OutOfScale {
        id: AttributeId,
        got: i64,
        min: i64,
        max: i64,
    },
    #[error("{id}: label {got:?} not in domain {domain:?}")]
    UnknownLabel {
        id: AttributeId,
        got: String,
        domain: Vec<String>,
    },
    #[error("{id}: {got:?} is not an integer level")]
    NotAnInteger { id: AttributeId, got: String },
}

/// Rule broken by one profile entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationRule {
    OutOfScale,
    UnknownLabel,
    KindMismatch,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub attribute: AttributeId,
    pub rule: ViolationRule,
    pub detail: String,
}

/// The built-in twelve-attribute taxonomy in stable order: category order as
/// published, attribute order as listed within each category.
pub fn builtin_taxonomy() -> Vec<AttributeSpec> {
    let mut specs = Vec::with_capacity(12);
    for category in AttributeCategory::ALL {
        for id in category.members() {
            specs.push(spec_for(id));
        }
    }
    specs
}

fn spec_for(id: AttributeId) -> AttributeSpec {
    let kind = id.kind();
    let (scale_min, scale_max) = match kind {
        // All quantitative attributes use a uniform 1..5 ordinal scale.
        AttributeKind::Quantitative => (Some(1), Some(5)),
        _ => (None, None),
    };
    let labels = match id {
        AttributeId::SE => Some(vec!["male".to_string(), "female".to_string()]),
        _ => None,
    };
    AttributeSpec {
        id,
        category: id.category(),
        kind,
        scale_min,
        scale_max,
        labels,
        description: description_for(id).to_string(),
    }
}

fn description_for(id: AttributeId) -> &'static str {
    match id {
        AttributeId::AG => "Age of the person, as a number of years or a narrow range",
        AttributeId::SE => "Sex of the person",
        AttributeId::RE => "Region where the person lives (country or area)",
        AttributeId::DR => "Regularity of daily routines, level 1 (chaotic) to 5 (highly regular)",
        AttributeId::HS => "Overall health status, level 1 (poor) to 5 (excellent)",
        AttributeId::HH => "Hygiene habits, level 1 (poor) to 5 (meticulous)",
        AttributeId::CA => "Consumption ability, level 1 (minimal) to 5 (luxury)",
        AttributeId::IN => "Income level, level 1 (low) to 5 (high)",
        AttributeId::OC => "Occupation or profession",
        AttributeId::MBTI => "MBTI personality type, e.g. INTJ",
        AttributeId::SA => "Social activity level, level 1 (solitary) to 5 (highly social)",
        AttributeId::LT => "Leadership tendency, level 1 (follower) to 5 (strong leader)",
    }
}

/// Look up a spec by id within a taxonomy slice.
pub fn spec_of(taxonomy: &[AttributeSpec], id: AttributeId) -> Option<&AttributeSpec> {
    taxonomy.iter().find(|s| s.id == id)
}

/// Parse raw text into a typed value under the given spec.
///
/// Trims whitespace; categorical labels are matched case-insensitively and
/// stored in their canonical (domain) casing; ordinal values are parsed as
/// integers and range-checked; ambiguous values pass through verbatim.
pub fn parse_value(spec: &AttributeSpec, raw: &str) -> Result<AttributeValue, ParseValueError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(ParseValueError::Empty(spec.id));
    }
    match spec.kind {
        AttributeKind::Qualitative => {
            let domain = spec.labels.clone().unwrap_or_default();
            let canonical = domain
                .iter()
                .find(|label| label.eq_ignore_ascii_case(trimmed));
            match canonical {
                Some(label) => Ok(AttributeValue::Categorical(label.clone())),
                None => Err(ParseValueError::UnknownLabel {
                    id: spec.id,
                    got: trimmed.to_string(),
                    domain,
                }),
            }
        }
        AttributeKind::Quantitative => {
            let level: i64 = trimmed
                .parse()
                .map_err(|_| ParseValueError::NotAnInteger {
                    id: spec.id,
                    got: trimmed.to_string(),
                })?;
            let (min, max) = (spec.scale_min.unwrap_or(i64::MIN), spec.scale_max.unwrap_or(i64::MAX));
            if level < min || level > max {
                return Err(ParseValueError::OutOfScale {
                    id: spec.id,
                    got: level,
                    min,
                    max,
                });
            }
            Ok(AttributeValue::Ordinal(level))
        }
        AttributeKind::Ambiguous => Ok(AttributeValue::FreeText(trimmed.to_string())),
    }
}

/// Check every present entry against its spec. Missing entries are not
/// violations; the abstain sentinel is always admissible.
pub fn validate_profile(profile: &AttributeProfile, taxonomy: &[AttributeSpec]) -> Vec<Violation> {
    let mut violations = Vec::new();
    for (&id, value) in &profile.entries {
        let Some(spec) = spec_of(taxonomy, id) else {
            violations.push(Violation {
                attribute: id,
                rule: ViolationRule::KindMismatch,
                detail: "attribute not in taxonomy".to_string(),
            });
            continue;
        };
        if value.is_abstain() {
            continue;
        }
        match (spec.kind, value) {
            (AttributeKind::Qualitative, AttributeValue::Categorical(label)) => {
                let domain = spec.labels.as_deref().unwrap_or(&[]);
                if !domain.iter().any(|l| l.eq_ignore_ascii_case(label)) {
                    violations.push(Violation {
                        attribute: id,
                        rule: ViolationRule::UnknownLabel,
                        detail: format!("label {label:?} not in domain"),
                    });
                }
            }
            (AttributeKind::Quantitative, AttributeValue::Ordinal(level)) => {
                let (min, max) = (spec.scale_min.unwrap(), spec.scale_max.unwrap());
                if *level < min || *level > max {
                    violations.push(Violation {
                        attribute: id,
                        rule: ViolationRule::OutOfScale,
                        detail: format!("{level} outside {min}..{max}"),
                    });
                }
            }
            (AttributeKind::Ambiguous, AttributeValue::FreeText(text)) => {
                if text.trim().is_empty() {
                    violations.push(Violation {
                        attribute: id,
                        rule: ViolationRule::Empty,
                        detail: "empty free text".to_string(),
                    });
                }
            }
            (expected, got) => violations.push(Violation {
                attribute: id,
                rule: ViolationRule::KindMismatch,
                detail: format!("expected {expected:?} value, got {got:?}"),
            }),
        }
    }
    violations
}

/// Versioned JSON form of the taxonomy, embeddable in manifests so label
/// domains can be overridden per dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyDoc {
    pub version: String,
    pub attributes: Vec<AttributeSpec>,
}

impl TaxonomyDoc {
    pub fn builtin() -> Self {
        TaxonomyDoc {
            version: "1".to_string(),
            attributes: builtin_taxonomy(),
        }
    }
}
