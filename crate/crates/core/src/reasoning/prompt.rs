use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Provenance, ReasoningError, ReasoningResult};
use crate::roles::{EventLabel, Role, ROLE_COUNT};
use crate::semantics::SemanticDescription;

pub const STEP_COUNT: usize = 5;

pub const STEP_TITLES: [&str; STEP_COUNT] = [
    "Step 1 - Role-Community Compatibility Analysis",
    "Step 2 - Supply-Demand Balance Assessment",
    "Step 3 - Evolution-Role Alignment",
    "Step 4 - Structural Feasibility Check",
    "Step 5 - Temporal Consistency Evaluation",
];

pub const STEP_GUIDANCE: [&str; STEP_COUNT] = [
    "Compare the node's role distribution with the role composition of every community.",
    "Find roles that each community lacks or has in excess relative to the others.",
    "Relate the change in the node's role affinities to each community's recent composition change.",
    "Check how the node's connections are spread across the communities.",
    "Weigh the node's previous community and the cost of moving it elsewhere.",
];

/// Short step names used in explanation reports.
pub const EXPLANATION_STEPS: [&str; STEP_COUNT] = [
    "Compatibility",
    "Supply-Demand",
    "Evolution Match",
    "Structural Check",
    "Temporal Consistency",
];

/// Probability sums inside this band are renormalized; outside it the
/// reply is rejected.
pub const RENORMALIZE_BAND: (f64, f64) = (0.98, 1.02);

/// What the prompt says about one candidate community.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunitySummary {
    pub id: usize,
    pub size: usize,
    pub gamma: Option<[f64; ROLE_COUNT]>,
    /// Composition change since the previous snapshot.
    pub delta_gamma: Option<[f64; ROLE_COUNT]>,
    pub event: Option<EventLabel>,
}

fn role_list(values: &[f64; ROLE_COUNT], signed: bool) -> String {
    Role::ALL
        .iter()
        .map(|r| {
            let v = 100.0 * values[r.index()];
            if signed {
                format!("{} {v:+.1}%", r.plural())
            } else {
                format!("{} {v:.1}%", r.plural())
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Per-node chain-of-reasoning prompt. Identical inputs give identical
/// bytes, so the text doubles as a cache key.
pub fn build_cot_prompt(
    description: &SemanticDescription,
    communities: &[CommunitySummary],
) -> String {
    let k = communities.len();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Decide which of {k} communities node {} belongs to at snapshot {}.\n",
        description.node, description.t
    );
    out.push_str("INPUT\n");
    out.push_str(&description.text());
    out.push_str("\n\nCOMMUNITIES\n");
    for c in communities {
        let _ = write!(out, "[C{}] {} members", c.id, c.size);
        match &c.gamma {
            Some(g) => {
                let _ = write!(out, "; composition: {}", role_list(g, false));
            }
            None => out.push_str("; composition: empty"),
        }
        if let Some(d) = &c.delta_gamma {
            let _ = write!(
                out,
                "; change since previous snapshot: {}",
                role_list(d, true)
            );
        }
        if let Some(e) = c.event {
            let _ = write!(out, "; latest event: {e}");
        }
        out.push('\n');
    }
    out.push_str("\nREASONING STEPS\n");
    for (title, guidance) in STEP_TITLES.iter().zip(STEP_GUIDANCE) {
        let _ = writeln!(out, "{title}\n  {guidance}");
    }
    let order: Vec<String> = communities.iter().map(|c| format!("C{}", c.id)).collect();
    let _ = write!(
        out,
        "\nOUTPUT\n\
         Reply with exactly one fenced block (```json ... ```) containing one JSON object:\n\
         {{\"probabilities\": [...], \"steps\": [...], \"confidence\": ...}}\n\
         - probabilities: {k} non-negative numbers in the order {}, summing to 1\n\
         - steps: {STEP_COUNT} strings, one per reasoning step above, in order\n\
         - confidence: a number between 0 and 1\n",
        order.join(", ")
    );
    out
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let parts: Vec<&str> = text.split("```").collect();
    // Unterminated trailing fence does not count as a block.
    let complete = if parts.len() % 2 == 1 {
        parts.len()
    } else {
        parts.len() - 1
    };
    parts[..complete]
        .iter()
        .skip(1)
        .step_by(2)
        .copied()
        .collect()
}

fn strip_language_tag(block: &str) -> &str {
    let trimmed = block.trim_start_matches([' ', '\t']);
    match trimmed.split_once('\n') {
        Some((first, rest)) if !first.trim().starts_with(['{', '[']) => rest,
        _ => trimmed,
    }
}

/// Validates a backend reply against the reply contract for `k`
/// communities. Errors name the violated field.
pub fn parse_reasoning_reply(text: &str, k: usize) -> Result<ReasoningResult, ReasoningError> {
    let blocks = fenced_blocks(text);
    let block = match blocks.as_slice() {
        [one] => *one,
        [] => return Err(ReasoningError::reply("block", "no fenced block found")),
        many => {
            return Err(ReasoningError::reply(
                "block",
                format!("expected exactly one fenced block, found {}", many.len()),
            ))
        }
    };
    let value: Value = serde_json::from_str(strip_language_tag(block).trim())
        .map_err(|e| ReasoningError::reply("block", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ReasoningError::reply("block", "expected a JSON object"))?;

    let probs = obj
        .get("probabilities")
        .and_then(Value::as_array)
        .ok_or_else(|| ReasoningError::reply("probabilities", "missing or not an array"))?;
    if probs.len() != k {
        return Err(ReasoningError::reply(
            "probabilities",
            format!("expected {k} values, got {}", probs.len()),
        ));
    }
    let mut q = Vec::with_capacity(k);
    for p in probs {
        match p.as_f64() {
            Some(v) if v.is_finite() && v >= 0.0 => q.push(v),
            _ => {
                return Err(ReasoningError::reply(
                    "probabilities",
                    format!("invalid entry {p}"),
                ))
            }
        }
    }
    let sum: f64 = q.iter().sum();
    if !(RENORMALIZE_BAND.0..=RENORMALIZE_BAND.1).contains(&sum) {
        return Err(ReasoningError::reply(
            "probabilities",
            format!("sum {sum} outside [0.98, 1.02]"),
        ));
    }
    for v in &mut q {
        *v /= sum;
    }

    let steps = obj
        .get("steps")
        .and_then(Value::as_array)
        .ok_or_else(|| ReasoningError::reply("steps", "missing or not an array"))?;
    if steps.len() != STEP_COUNT {
        return Err(ReasoningError::reply(
            "steps",
            format!("expected {STEP_COUNT} steps, got {}", steps.len()),
        ));
    }
    let steps = steps
        .iter()
        .map(|s| s.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| ReasoningError::reply("steps", "every step must be a string"))?;

    let confidence = obj
        .get("confidence")
        .and_then(Value::as_f64)
        .ok_or_else(|| ReasoningError::reply("confidence", "missing or not a number"))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(ReasoningError::reply(
            "confidence",
            format!("{confidence} outside [0, 1]"),
        ));
    }
    Ok(ReasoningResult {
        q,
        steps,
        confidence,
        provenance: Provenance::Llm,
    })
}
