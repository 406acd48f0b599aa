//! Event-pair instances, the line-oriented dataset format, and the dataset
//! transformations used before training.

mod adjudicate;
mod synthetic;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation_algebra::{Label, PointRelation, RelId, RelationSchema};

pub use adjudicate::{adjudicate, convert_timeline_record, timelines_to_labels, TimelineRecord};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Half-open token range `[start, end)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// One annotator's placement of e1's start and end points relative to e2's.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatorTimeline {
    pub start_rel: PointRelation,
    pub end_rel: PointRelation,
}

impl AnnotatorTimeline {
    /// The same judgement seen from e2's side.
    pub fn swapped(self) -> Self {
        let flip = |p: PointRelation| match p {
            PointRelation::Before => PointRelation::After,
            PointRelation::Equal => PointRelation::Equal,
            PointRelation::After => PointRelation::Before,
        };
        Self {
            start_rel: flip(self.start_rel),
            end_rel: flip(self.end_rel),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventPairInstance {
    pub id: String,
    /// The sentence(s) containing both events.
    pub tokens: Vec<String>,
    pub context_before: Vec<String>,
    pub context_after: Vec<String>,
    pub e1_span: Span,
    pub e2_span: Span,
    pub gold: Label,
    pub annotator_labels: Option<Vec<RelId>>,
    /// Relations known to underlie a *Vague* gold label.
    pub possible_set: Option<BTreeSet<RelId>>,
    pub timelines: Option<Vec<AnnotatorTimeline>>,
}

impl EventPairInstance {
    pub fn validate(&self, schema: &RelationSchema) -> Result<()> {
        let n = self.tokens.len();
        for (name, span) in [("e1_span", self.e1_span), ("e2_span", self.e2_span)] {
            if span.is_empty() || span.end > n {
                return Err(Error::Input(format!(
                    "{}: {name} [{}, {}) invalid for {n} tokens",
                    self.id, span.start, span.end
                )));
            }
        }
        if self.e1_span.overlaps(&self.e2_span) {
            return Err(Error::Input(format!("{}: event spans overlap", self.id)));
        }
        let in_schema = |r: RelId| r.0 < schema.len();
        if let Label::Rel(r) = self.gold {
            if !in_schema(r) {
                return Err(Error::Schema(format!("{}: gold out of schema", self.id)));
            }
        }
        if let Some(set) = &self.possible_set {
            if set.is_empty() {
                return Err(Error::Input(format!("{}: empty possible_set", self.id)));
            }
            if !set.iter().all(|&r| in_schema(r)) {
                return Err(Error::Schema(format!("{}: possible_set out of schema", self.id)));
            }
        }
        if let Some(labels) = &self.annotator_labels {
            if !labels.iter().all(|&r| in_schema(r)) {
                return Err(Error::Schema(format!("{}: annotator label out of schema", self.id)));
            }
        }
        Ok(())
    }
}

/// On-disk form of an instance: one JSON object per line, labels by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub context_before: Vec<String>,
    #[serde(default)]
    pub context_after: Vec<String>,
    pub e1_span: Span,
    pub e2_span: Span,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub possible_set: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timelines: Option<Vec<AnnotatorTimeline>>,
}

impl InstanceRecord {
    pub fn from_instance(inst: &EventPairInstance, schema: &RelationSchema) -> Self {
        let names = |rs: &mut dyn Iterator<Item = RelId>| -> Vec<String> {
            rs.map(|r| schema.relation_name(r).to_string()).collect()
        };
        Self {
            id: inst.id.clone(),
            tokens: inst.tokens.clone(),
            context_before: inst.context_before.clone(),
            context_after: inst.context_after.clone(),
            e1_span: inst.e1_span,
            e2_span: inst.e2_span,
            gold: schema.label_name(inst.gold).to_string(),
            annotator_labels: inst.annotator_labels.as_ref().map(|v| names(&mut v.iter().copied())),
            possible_set: inst.possible_set.as_ref().map(|s| names(&mut s.iter().copied())),
            timelines: inst.timelines.clone(),
        }
    }

    pub fn into_instance(self, schema: &RelationSchema) -> Result<EventPairInstance> {
        let ids = |v: Vec<String>| -> Result<Vec<RelId>> {
            v.iter().map(|n| schema.relation(n)).collect()
        };
        let inst = EventPairInstance {
            gold: schema.label(&self.gold)?,
            annotator_labels: self.annotator_labels.map(ids).transpose()?,
            possible_set: self
                .possible_set
                .map(|v| ids(v).map(|v| v.into_iter().collect()))
                .transpose()?,
            id: self.id,
            tokens: self.tokens,
            context_before: self.context_before,
            context_after: self.context_after,
            e1_span: self.e1_span,
            e2_span: self.e2_span,
            timelines: self.timelines,
        };
        inst.validate(schema)?;
        Ok(inst)
    }
}

/// Reads JSON-lines records, reporting the 1-based line of the first bad record.
pub fn read_jsonl<T, R>(reader: R) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: Read,
{
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(writer: W, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_instances<R: Read>(reader: R, schema: &RelationSchema) -> Result<Vec<EventPairInstance>> {
    let records: Vec<InstanceRecord> = read_jsonl(reader)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.into_instance(schema)
                .map_err(|e| Error::Data(format!("record {}: {e}", i + 1)))
        })
        .collect()
}

pub fn serialize_instances<W: Write>(
    writer: W,
    instances: &[EventPairInstance],
    schema: &RelationSchema,
) -> Result<()> {
    let records: Vec<_> = instances
        .iter()
        .map(|i| InstanceRecord::from_instance(i, schema))
        .collect();
    write_jsonl(writer, &records)
}

pub fn read_instances(path: &Path, schema: &RelationSchema) -> Result<Vec<EventPairInstance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_instances(file, schema).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_instances(path: &Path, instances: &[EventPairInstance], schema: &RelationSchema) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serialize_instances(file, instances, schema)
}

const SWAP_SUFFIX: &str = "~swap";

/// Base id and orientation (true when e1/e2 are swapped relative to the source).
pub fn orientation_key(inst: &EventPairInstance) -> (&str, bool) {
    match inst.id.strip_suffix(SWAP_SUFFIX) {
        Some(base) => (base, true),
        None => (&inst.id, false),
    }
}

/// The same event pair with its arguments swapped and every label inverted.
pub fn swap_arguments(inst: &EventPairInstance, schema: &RelationSchema) -> Result<EventPairInstance> {
    let (base, swapped) = orientation_key(inst);
    let id = if swapped {
        base.to_string()
    } else {
        format!("{base}{SWAP_SUFFIX}")
    };
    let inv = |r: RelId| -> Result<RelId> {
        Ok(schema.inverse_of(Label::Rel(r))?.relation().expect("inverse of a relation"))
    };
    Ok(EventPairInstance {
        id,
        tokens: inst.tokens.clone(),
        context_before: inst.context_before.clone(),
        context_after: inst.context_after.clone(),
        e1_span: inst.e2_span,
        e2_span: inst.e1_span,
        gold: schema.inverse_of(inst.gold)?,
        annotator_labels: inst
            .annotator_labels
            .as_ref()
            .map(|v| v.iter().map(|&r| inv(r)).collect::<Result<Vec<_>>>())
            .transpose()?,
        possible_set: inst
            .possible_set
            .as_ref()
            .map(|s| s.iter().map(|&r| inv(r)).collect::<Result<BTreeSet<_>>>())
            .transpose()?,
        timelines: inst
            .timelines
            .as_ref()
            .map(|t| t.iter().map(|x| x.swapped()).collect()),
    })
}

/// Training-set augmentation: every instance followed by its argument-swapped
/// copy. Only ever apply this to a training split.
pub fn enhance_symmetry(
    train: &[EventPairInstance],
    schema: &RelationSchema,
) -> Result<Vec<EventPairInstance>> {
    let mut out = Vec::with_capacity(train.len() * 2);
    for inst in train {
        out.push(inst.clone());
        out.push(swap_arguments(inst, schema)?);
    }
    Ok(out)
}

/// Seeded shuffled partition into (train, dev, test).
pub fn split<T: Clone>(
    instances: &[T],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "split fractions ({a}, {b}, {c}) must be in [0, 1] and sum to 1"
        )));
    }
    let n = instances.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * a).round() as usize;
    let n_dev = (((n as f64) * b).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| instances[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn instance(id: &str, gold: Label) -> EventPairInstance {
        EventPairInstance {
            id: id.into(),
            tokens: toks(&["I", "slept", "then", "ate"]),
            context_before: toks(&["Morning", "came"]),
            context_after: vec![],
            e1_span: Span::new(1, 2),
            e2_span: Span::new(3, 4),
            gold,
            annotator_labels: None,
            possible_set: None,
            timelines: None,
        }
    }

    #[test]
    fn enhance_before_adds_after() {
        let s = RelationSchema::tbdense();
        let before = s.label("Before").unwrap();
        let out = enhance_symmetry(&[instance("a", before)], &s).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], instance("a", before));
        assert_eq!(out[1].gold, s.label("After").unwrap());
        assert_eq!(out[1].e1_span, Span::new(3, 4));
        assert_eq!(out[1].e2_span, Span::new(1, 2));
    }

    #[test]
    fn enhance_vague_and_empty() {
        let s = RelationSchema::tbdense();
        let mut v = instance("v", Label::Vague);
        v.possible_set = Some([s.relation("Before").unwrap(), s.relation("Include").unwrap()].into());
        let out = enhance_symmetry(&[v], &s).unwrap();
        assert_eq!(out[1].gold, Label::Vague);
        let expected: BTreeSet<_> = [s.relation("After").unwrap(), s.relation("Is_Included").unwrap()].into();
        assert_eq!(out[1].possible_set.as_ref().unwrap(), &expected);
        assert!(enhance_symmetry(&[], &s).unwrap().is_empty());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..100).collect();
        let (a, b, c) = split(&items, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
        let again = split(&items, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((a.clone(), b, c), again);
        let mut all: Vec<u32> = a;
        all.extend(split(&items, (0.8, 0.1, 0.1), 7).unwrap().1);
        all.extend(split(&items, (0.8, 0.1, 0.1), 7).unwrap().2);
        all.sort();
        assert_eq!(all, items);

        let ten: Vec<u32> = (0..10).collect();
        let (a, b, c) = split(&ten, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let (a, b, c) = split::<u32>(&[], (0.8, 0.1, 0.1), 1).unwrap();
        assert!(a.is_empty() && b.is_empty() && c.is_empty());
        assert!(split(&ten, (0.5, 0.1, 0.1), 1).is_err());
    }

    #[test]
    fn validation_rejects_bad_spans() {
        let s = RelationSchema::tbdense();
        let mut i = instance("x", Label::Vague);
        i.e2_span = Span::new(1, 3);
        assert!(matches!(i.validate(&s), Err(Error::Input(_))));
        i.e2_span = Span::new(3, 9);
        assert!(i.validate(&s).is_err());
        i.e2_span = Span::new(3, 4);
        i.possible_set = Some(BTreeSet::new());
        assert!(i.validate(&s).is_err());
    }

    #[test]
    fn bad_line_is_reported() {
        let s = RelationSchema::tbdense();
        let good = serde_json::to_string(&InstanceRecord::from_instance(&instance("a", Label::Vague), &s)).unwrap();
        let text = format!("{good}\n{{not json\n");
        let err = parse_instances(text.as_bytes(), &s).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    fn arb_instance() -> impl Strategy<Value = EventPairInstance> {
        let word = "[a-z]{1,6}";
        (
            "[a-z0-9]{1,8}",
            prop::collection::vec(word, 4..12),
            prop::collection::vec(word, 0..4),
            prop::collection::vec(word, 0..4),
            0usize..6,
            prop::option::of(prop::collection::btree_set(0usize..5, 1..4)),
            prop::option::of(prop::collection::vec(0usize..5, 3)),
            prop::option::of(prop::collection::vec((0usize..3, 0usize..3), 1..4)),
        )
            .prop_map(|(id, tokens, cb, ca, gold, ps, al, tl)| {
                let n = tokens.len();
                let gold = if gold == 5 { Label::Vague } else { Label::Rel(RelId(gold)) };
                EventPairInstance {
                    id,
                    e1_span: Span::new(n - 1, n),
                    e2_span: Span::new(0, 2),
                    tokens,
                    context_before: cb,
                    context_after: ca,
                    gold,
                    annotator_labels: al.map(|v| v.into_iter().map(RelId).collect()),
                    possible_set: ps.map(|s| s.into_iter().map(RelId).collect()),
                    timelines: tl.map(|v| {
                        v.into_iter()
                            .map(|(a, b)| AnnotatorTimeline {
                                start_rel: PointRelation::ALL[a],
                                end_rel: PointRelation::ALL[b],
                            })
                            .collect()
                    }),
                }
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(insts in prop::collection::vec(arb_instance(), 0..6)) {
            let s = RelationSchema::tbdense();
            let mut buf = Vec::new();
            serialize_instances(&mut buf, &insts, &s).unwrap();
            let back = parse_instances(buf.as_slice(), &s).unwrap();
            prop_assert_eq!(back, insts);
        }

        #[test]
        fn enhance_twice_dedups_to_same_pairs(insts in prop::collection::vec(arb_instance(), 0..6)) {
            let s = RelationSchema::tbdense();
            // Unique ids so orientation keys identify pairs.
            let insts: Vec<_> = insts.into_iter().enumerate().map(|(i, mut x)| { x.id = format!("i{i}"); x }).collect();
            let once = enhance_symmetry(&insts, &s).unwrap();
            let twice = enhance_symmetry(&once, &s).unwrap();
            prop_assert_eq!(once.len(), 2 * insts.len());
            let keys = |v: &[EventPairInstance]| -> BTreeSet<(String, bool)> {
                v.iter().map(|x| { let (b, o) = orientation_key(x); (b.to_string(), o) }).collect()
            };
            prop_assert_eq!(keys(&once), keys(&twice));
            for x in &twice {
                let original = once.iter().find(|y| y.id == x.id).unwrap();
                prop_assert_eq!(x, original);
            }
        }
    }
}
