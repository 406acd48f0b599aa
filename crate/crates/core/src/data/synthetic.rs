//! Seeded generator of cue-word corpora with a known composition behind
//! every *Vague* label.
//!
//! Each well-defined relation owns a disjoint cue vocabulary. An instance with
//! relation `r` gets `r`'s cues next to e1 and the cues of `inverse(r)` next
//! to e2, so swapping the arguments yields a correctly labelled instance. A
//! *Vague* instance carries the cues of two distinct relations.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EventPairInstance, Span};
use crate::error::{Error, Result};
use crate::relation_algebra::{Label, RelId, RelationSchema};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub vague_fraction: f64,
    /// Sampling weights over well-defined relations; `None` picks a
    /// schema-appropriate default.
    pub relation_prior: Option<Vec<f64>>,
    /// Probability that a *Vague* composition is a confusion pair rather than
    /// a uniformly random pair.
    pub confusion_pair_prob: f64,
    /// Cue words per relation.
    pub cue_vocab: usize,
    pub filler_vocab: usize,
    pub event_vocab: usize,
    /// Cue tokens per relation placed around each event.
    pub cues_per_relation: usize,
    /// Maximum distance between an event and its cues.
    pub cue_distance: usize,
    pub sentence_len: (usize, usize),
    pub context_len: (usize, usize),
    /// Probability that an individual cue token is replaced by filler.
    pub cue_dropout: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            vague_fraction: 0.45,
            relation_prior: None,
            confusion_pair_prob: 0.5,
            cue_vocab: 100,
            filler_vocab: 400,
            event_vocab: 200,
            cues_per_relation: 1,
            cue_distance: 3,
            sentence_len: (18, 30),
            context_len: (6, 12),
            cue_dropout: 0.0,
        }
    }
}

impl SyntheticConfig {
    pub fn with_vague_fraction(vague_fraction: f64) -> Self {
        Self {
            vague_fraction,
            ..Self::default()
        }
    }
}

/// Label frequencies of the TB-Dense and MATRES training sets, used as the
/// default relation prior for those schemas.
fn default_prior(schema: &RelationSchema) -> Vec<f64> {
    let counts: &[(&str, f64)] = match schema.relations().len() {
        5 => &[
            ("Before", 808.0),
            ("After", 674.0),
            ("Include", 206.0),
            ("Is_Included", 273.0),
            ("Simultaneous", 59.0),
        ],
        3 => &[("Before", 5483.0), ("After", 3651.0), ("Equal", 376.0)],
        _ => &[],
    };
    let named: Option<Vec<f64>> = schema
        .relations()
        .iter()
        .map(|r| counts.iter().find(|(n, _)| n == r).map(|(_, c)| *c))
        .collect();
    named.unwrap_or_else(|| vec![1.0; schema.len()])
}

fn cue_token(schema: &RelationSchema, r: RelId, k: usize) -> String {
    format!("{}_{k}", schema.relation_name(r).to_lowercase())
}

fn sentence(rng: &mut ChaCha8Rng, len: usize, filler_vocab: usize) -> Vec<String> {
    (0..len)
        .map(|_| format!("w{}", rng.gen_range(0..filler_vocab)))
        .collect()
}

pub fn generate_synthetic(
    schema: &RelationSchema,
    n: i64,
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<Vec<EventPairInstance>> {
    if n < 0 {
        return Err(Error::Input(format!("instance count must be non-negative, got {n}")));
    }
    if !(0.0..=1.0).contains(&cfg.vague_fraction) {
        return Err(Error::Input(format!(
            "vague_fraction {} outside [0, 1]",
            cfg.vague_fraction
        )));
    }
    if cfg.vague_fraction > 0.0 && schema.len() < 2 {
        return Err(Error::Input("Vague instances need at least two relations".into()));
    }
    let (lo, hi) = cfg.sentence_len;
    let min_len = 4 * cfg.cue_distance + 4;
    if lo > hi || lo < min_len || cfg.cue_vocab == 0 || cfg.filler_vocab == 0 || cfg.event_vocab == 0 {
        return Err(Error::Input(format!(
            "bad generator configuration (sentence length must be >= {min_len}, vocabularies non-empty)"
        )));
    }
    let prior = cfg.relation_prior.clone().unwrap_or_else(|| default_prior(schema));
    if prior.len() != schema.len() {
        return Err(Error::Input("relation prior length differs from schema".into()));
    }
    let pick_relation =
        WeightedIndex::new(&prior).map_err(|e| Error::Input(format!("bad relation prior: {e}")))?;
    let with_confusion: Vec<RelId> = schema
        .ids()
        .filter(|&r| matches!(schema.confusion_of(r), Ok(Some(_))))
        .collect();
    let confusion_prior = WeightedIndex::new(with_confusion.iter().map(|r| prior[r.0])).ok();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n as usize);
    for idx in 0..n as usize {
        let vague = rng.gen_bool(cfg.vague_fraction);
        let relations: Vec<RelId> = if vague {
            match &confusion_prior {
                Some(cp) if rng.gen_bool(cfg.confusion_pair_prob) => {
                    let r = with_confusion[cp.sample(&mut rng)];
                    let c = schema.confusion_of(r)?.expect("filtered to relations with confusion");
                    vec![r, c]
                }
                _ => {
                    let ids: Vec<RelId> = schema.ids().collect();
                    ids.choose_multiple(&mut rng, 2).copied().collect()
                }
            }
        } else {
            vec![RelId(pick_relation.sample(&mut rng))]
        };

        let len = rng.gen_range(lo..=hi);
        let mut tokens = sentence(&mut rng, len, cfg.filler_vocab);
        let gap = 2 * cfg.cue_distance + 2;
        let (p1, p2) = loop {
            let a = rng.gen_range(cfg.cue_distance..len - cfg.cue_distance);
            let b = rng.gen_range(cfg.cue_distance..len - cfg.cue_distance);
            if a.abs_diff(b) >= gap {
                break (a, b);
            }
        };
        tokens[p1] = format!("ev{}", rng.gen_range(0..cfg.event_vocab));
        tokens[p2] = format!("ev{}", rng.gen_range(0..cfg.event_vocab));

        let mut taken = vec![false; len];
        taken[p1] = true;
        taken[p2] = true;
        let mut place = |rng: &mut ChaCha8Rng, tokens: &mut Vec<String>, at: usize, cue: String| {
            let free: Vec<usize> = (at.saturating_sub(cfg.cue_distance)..=(at + cfg.cue_distance).min(len - 1))
                .filter(|&p| !taken[p])
                .collect();
            if let Some(&p) = free.choose(rng) {
                taken[p] = true;
                if !rng.gen_bool(cfg.cue_dropout) {
                    tokens[p] = cue;
                }
            }
        };
        for &r in &relations {
            let inv = schema.inverse_of(Label::Rel(r))?.relation().expect("relation inverse");
            for _ in 0..cfg.cues_per_relation {
                let c1 = cue_token(schema, r, rng.gen_range(0..cfg.cue_vocab));
                place(&mut rng, &mut tokens, p1, c1);
                let c2 = cue_token(schema, inv, rng.gen_range(0..cfg.cue_vocab));
                place(&mut rng, &mut tokens, p2, c2);
            }
        }

        let (clo, chi) = cfg.context_len;
        let context = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.8) {
                let l = rng.gen_range(clo..=chi.max(clo));
                sentence(rng, l, cfg.filler_vocab)
            } else {
                Vec::new()
            }
        };
        let context_before = context(&mut rng);
        let context_after = context(&mut rng);

        out.push(EventPairInstance {
            id: format!("syn{seed}-{idx}"),
            tokens,
            context_before,
            context_after,
            e1_span: Span::new(p1, p1 + 1),
            e2_span: Span::new(p2, p2 + 1),
            gold: if vague { Label::Vague } else { Label::Rel(relations[0]) },
            annotator_labels: None,
            possible_set: Some(relations.iter().copied().collect::<BTreeSet<_>>()),
            timelines: None,
        });
    }
    Ok(out)
}
