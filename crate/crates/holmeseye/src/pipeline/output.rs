//! Structured output contract for profile-emitting model calls.
//!
//! Summarize, decide, and the strong-prompt baseline all demand a fenced
//! block of `<AttributeId>: <value>` lines, with `UNKNOWN` marking an
//! uninferable attribute and an optional `QUESTION:` line describing what is
//! missing. The line protocol is model-agnostic and parseable without any
//! provider-specific structured-output support.

use crate::taxonomy::{self, AttributeId, AttributeProfile, AttributeSpec, ABSTAIN_TOKEN};

/// Format instructions bound into every profile-emitting template.
pub const FORMAT_RULES: &str = "\
Answer with a fenced code block containing exactly one line per attribute, \
in the form `<ID>: <value>` (for example `SE: female` or `HS: 4`). \
If an attribute cannot be inferred, write `<ID>: UNKNOWN` and add one final \
line `QUESTION: <a question describing what visual evidence would resolve \
the unknown attributes>`.";

/// Reminder appended to the request on the single repair retry.
pub const REPAIR_REMINDER: &str = "\
Your previous answer did not follow the required format. Reply again with \
only a fenced code block of `<ID>: <value>` lines for all twelve attributes, \
using `UNKNOWN` plus a `QUESTION:` line for anything you cannot infer.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedProfileBlock {
    pub profile: AttributeProfile,
    pub question: Option<String>,
    /// Attributes the model explicitly marked UNKNOWN.
    pub unknown: Vec<AttributeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatViolation(pub String);

/// Parse the structured block out of raw model output.
///
/// The block is the fenced region when one exists, otherwise the whole text.
/// Unrecognized lines are ignored; malformed values for known attributes and
/// structural violations (no attribute lines at all, UNKNOWN entries without
/// a question) are hard failures so the repair retry can fire.
pub fn parse_profile_block(
    raw: &str,
    taxonomy: &[AttributeSpec],
) -> Result<ParsedProfileBlock, FormatViolation> {
    let block = fenced_region(raw).unwrap_or(raw);
    let mut profile = AttributeProfile::new();
    let mut question = None;
    let mut unknown = Vec::new();
    let mut saw_attribute_line = false;
    for line in block.lines() {
        let line = line.trim();
        let Some((head, tail)) = line.split_once(':') else {
            continue;
        };
        let head = head.trim();
        let value = tail.trim();
        if head.eq_ignore_ascii_case("QUESTION") {
            if !value.is_empty() {
                question = Some(value.to_string());
            }
            continue;
        }
        let Some(id) = AttributeId::parse(head) else {
            continue;
        };
        saw_attribute_line = true;
        if value.eq_ignore_ascii_case("UNKNOWN") {
            unknown.push(id);
            continue;
        }
        if value.eq_ignore_ascii_case(ABSTAIN_TOKEN) {
            profile.set(id, crate::taxonomy::AttributeValue::Abstain);
            continue;
        }
        let spec = taxonomy::spec_of(taxonomy, id)
            .ok_or_else(|| FormatViolation(format!("{id} not in taxonomy")))?;
        let parsed = taxonomy::parse_value(spec, value)
            .map_err(|e| FormatViolation(format!("bad value for {id}: {e}")))?;
        profile.set(id, parsed);
    }
    if !saw_attribute_line {
        return Err(FormatViolation(
            "no attribute lines found in output".to_string(),
        ));
    }
    if !unknown.is_empty() && question.is_none() {
        return Err(FormatViolation(format!(
            "attributes marked UNKNOWN ({unknown:?}) but no QUESTION line"
        )));
    }
    Ok(ParsedProfileBlock {
        profile,
        question,
        unknown,
    })
}

fn fenced_region(raw: &str) -> Option<&str> {
    let open = raw.find("```")?;
    let after_open = &raw[open + 3..];
    // skip an optional language tag on the fence line
    let body_start = after_open.find('\n')? + 1;
    let body = &after_open[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// Render a profile (plus optional question) back into the line protocol,
/// e.g. for feeding the initial inference into the decision call.
pub fn render_profile_block(profile: &AttributeProfile, question: Option<&str>) -> String {
    let mut out = String::new();
    for id in AttributeId::ALL {
        match profile.get(id) {
            Some(value) => out.push_str(&format!("{id}: {}\n", value.render())),
            None => out.push_str(&format!("{id}: UNKNOWN\n")),
        }
    }
    if let Some(q) = question {
        out.push_str(&format!("QUESTION: {q}\n"));
    }
    out
}
