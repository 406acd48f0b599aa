//! Majority-vote adjudication of per-annotator timelines into gold labels.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AnnotatorTimeline, EventPairInstance, Span};
use crate::error::{Error, Result};
use crate::relation_algebra::{interval_relation_from_points, IntervalRelation, Label, RelId, RelationSchema};

/// Resolves three annotator labels. Any label chosen by at least two annotators
/// wins; three distinct labels make the pair *Vague* with all three as its
/// possible relations.
pub fn adjudicate(labels: &[RelId]) -> Result<(Label, BTreeSet<RelId>)> {
    let [a, b, c] = labels else {
        return Err(Error::Input(format!(
            "adjudication needs exactly 3 labels, got {}",
            labels.len()
        )));
    };
    let majority = if a == b || a == c {
        Some(*a)
    } else if b == c {
        Some(*b)
    } else {
        None
    };
    Ok(match majority {
        Some(r) => (Label::Rel(r), BTreeSet::from([r])),
        None => (Label::Vague, BTreeSet::from([*a, *b, *c])),
    })
}

pub fn timelines_to_labels(timelines: &[AnnotatorTimeline]) -> Vec<IntervalRelation> {
    timelines
        .iter()
        .map(|t| interval_relation_from_points(t.start_rel, t.end_rel))
        .collect()
}

/// A raw record carrying per-annotator timelines instead of a gold label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub context_before: Vec<String>,
    #[serde(default)]
    pub context_after: Vec<String>,
    pub e1_span: Span,
    pub e2_span: Span,
    pub timelines: Vec<AnnotatorTimeline>,
}

/// Converts a raw timeline record to a canonical instance. With one expected
/// annotator the mapped label is the gold; with three, the labels are
/// adjudicated.
pub fn convert_timeline_record(
    record: TimelineRecord,
    schema: &RelationSchema,
    expected_annotators: usize,
) -> Result<EventPairInstance> {
    if record.timelines.len() != expected_annotators {
        return Err(Error::Data(format!(
            "{}: expected {expected_annotators} timelines, found {}",
            record.id,
            record.timelines.len()
        )));
    }
    let labels = timelines_to_labels(&record.timelines)
        .into_iter()
        .map(|r| schema.relation(r.name()))
        .collect::<Result<Vec<_>>>()?;
    let (gold, possible_set) = match expected_annotators {
        1 => (Label::Rel(labels[0]), None),
        3 => {
            let (gold, set) = adjudicate(&labels)?;
            (gold, Some(set))
        }
        n => {
            return Err(Error::Input(format!(
                "unsupported annotator count {n} (expected 1 or 3)"
            )))
        }
    };
    let inst = EventPairInstance {
        id: record.id,
        tokens: record.tokens,
        context_before: record.context_before,
        context_after: record.context_after,
        e1_span: record.e1_span,
        e2_span: record.e2_span,
        gold,
        annotator_labels: Some(labels),
        possible_set,
        timelines: Some(record.timelines),
    };
    inst.validate(schema)?;
    Ok(inst)
}
