//! Central finite-difference verification of the analytic gradients.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::losses::{cross_entropy, loss_penalty_ablation, loss_vague, loss_well_defined, LossGrad};
use super::{build_confusion_set, instance_loss, Head, Mode, ModelParams, PairInput, TrainConfig};
use crate::data::{EventPairInstance, Span};
use crate::encoder::{insert_markers, Pooling};
use crate::error::{Error, Result};
use crate::relation_algebra::{Label, RelId, RelationSchema};

/// Gradients smaller than this are compared in absolute rather than relative terms.
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSelector {
    /// L1 + L2 for a well-defined gold.
    WellDefined,
    /// L3 with the confusion set frozen at the evaluation point.
    Vague,
    /// L4 with the confusion set frozen.
    Penalty,
    /// Baseline softmax cross-entropy.
    Baseline,
    /// Mean objective over a mixed mini-batch through encoder and head.
    EndToEnd,
}

impl LossSelector {
    pub const ALL: [LossSelector; 5] = [
        LossSelector::WellDefined,
        LossSelector::Vague,
        LossSelector::Penalty,
        LossSelector::Baseline,
        LossSelector::EndToEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossSelector::WellDefined => "well_defined",
            LossSelector::Vague => "vague",
            LossSelector::Penalty => "penalty",
            LossSelector::Baseline => "baseline",
            LossSelector::EndToEnd => "end_to_end",
        }
    }
}

impl fmt::Display for LossSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossSelector::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown loss selector `{s}`")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub selector: LossSelector,
    pub configs: usize,
    pub parameters_checked: usize,
    pub max_rel_error: f64,
    /// True when every analytic gradient was exactly zero.
    pub all_zero: bool,
}

/// Frozen per-instance target so the objective is smooth in the parameters.
#[derive(Clone, Debug)]
enum Target {
    WellDefined(RelId),
    Vague { filtered: Vec<RelId>, w: f64 },
    Penalty { members: Vec<RelId> },
    Baseline(usize),
    Mode { mode: Mode, gold: Label, w: f64 },
}

fn target_loss(target: &Target, outputs: &[f64], t: f64, schema: &RelationSchema) -> Result<LossGrad> {
    match target {
        Target::WellDefined(r) => {
            let (mut l1, l2) = loss_well_defined(outputs, t, *r)?;
            l1.add(&l2);
            Ok(l1)
        }
        Target::Vague { filtered, w } => Ok(loss_vague(outputs, t, filtered, *w)),
        Target::Penalty { members } => Ok(loss_penalty_ablation(outputs, t, members)),
        Target::Baseline(i) => Ok(cross_entropy(outputs, *i)),
        Target::Mode { mode, gold, w } => instance_loss(*mode, *gold, outputs, t, *w, schema),
    }
}

fn objective(model: &ModelParams, batch: &[(PairInput, Target)], schema: &RelationSchema, grads: Option<&mut ModelParams>) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = grads;
    for (input, target) in batch {
        let fwd = model.forward(input)?;
        let loss = target_loss(target, &fwd.outputs, fwd.threshold, schema)?;
        total += loss.value;
        if let Some(g) = grads.as_deref_mut() {
            model.backward(&fwd, &loss.scaled(scale), g);
        }
    }
    Ok(total * scale)
}

fn random_instance(rng: &mut ChaCha8Rng, id: usize) -> EventPairInstance {
    let vocab = 12;
    let word = |rng: &mut ChaCha8Rng| format!("t{}", rng.gen_range(0..vocab));
    let n = rng.gen_range(6..=10);
    let tokens: Vec<String> = (0..n).map(|_| word(rng)).collect();
    let a = rng.gen_range(0..n);
    let b = loop {
        let b = rng.gen_range(0..n);
        if b != a {
            break b;
        }
    };
    let ctx = |rng: &mut ChaCha8Rng| (0..rng.gen_range(0..4)).map(|_| word(rng)).collect();
    EventPairInstance {
        id: format!("g{id}"),
        tokens,
        context_before: ctx(rng),
        context_after: ctx(rng),
        e1_span: Span::new(a, a + 1),
        e2_span: Span::new(b, b + 1),
        gold: Label::Vague,
        annotator_labels: None,
        possible_set: None,
        timelines: None,
    }
}

fn random_config(rng: &mut ChaCha8Rng, mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        buckets: rng.gen_range(8..=16),
        window: rng.gen_range(1..=3),
        embed_dim: rng.gen_range(2..=5),
        hidden_dim: rng.gen_range(2..=5),
        pair_dim: rng.gen_range(2..=5),
        pooling: if rng.gen_bool(0.5) { Pooling::Window } else { Pooling::Span },
        ..TrainConfig::default()
    }
}

/// Raises the threshold bias so every score sits below the threshold.
fn lift_threshold(model: &mut ModelParams, input: &PairInput) -> Result<()> {
    let fwd = model.forward(input)?;
    let top = fwd.outputs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let Head::Metre(h) = &mut model.head {
        let last = h.threshold.layers.last_mut().expect("non-empty");
        last.bias[0] += top - fwd.threshold + 1.0;
    }
    Ok(())
}

fn build_case(selector: LossSelector, rng: &mut ChaCha8Rng, schema: &RelationSchema) -> Result<(ModelParams, Vec<(PairInput, Target)>)> {
    let mode = if selector == LossSelector::Baseline { Mode::Baseline } else { Mode::Metre };
    let cfg = random_config(rng, mode);
    let mut model = ModelParams::init(&cfg, schema, None, rng)?;
    // Spread the embeddings so the head sees varied inputs.
    if let Some(enc) = &mut model.encoder {
        enc.featurizer.table.iter_mut().for_each(|v| *v *= 2.0);
    }
    let inst = random_instance(rng, 0);
    let input = PairInput::Marked(insert_markers(&inst)?);
    let gold = RelId(rng.gen_range(0..schema.len()));
    let batch = match selector {
        LossSelector::WellDefined => vec![(input, Target::WellDefined(gold))],
        LossSelector::Baseline => {
            let idx = rng.gen_range(0..=schema.len());
            vec![(input, Target::Baseline(idx))]
        }
        LossSelector::Vague | LossSelector::Penalty => {
            lift_threshold(&mut model, &input)?;
            let fwd = model.forward(&input)?;
            let cs = build_confusion_set(&fwd.outputs, fwd.threshold, schema)?;
            let target = if selector == LossSelector::Vague {
                Target::Vague {
                    filtered: cs.filtered,
                    w: rng.gen_range(0.5..1.5),
                }
            } else {
                Target::Penalty { members: cs.members }
            };
            vec![(input, target)]
        }
        LossSelector::EndToEnd => {
            let mut batch = Vec::new();
            for i in 0..4 {
                let inst = random_instance(rng, i);
                let input = PairInput::Marked(insert_markers(&inst)?);
                let gold = if i % 2 == 0 { Label::Rel(RelId(rng.gen_range(0..schema.len()))) } else { Label::Vague };
                let target = match gold {
                    Label::Rel(_) => Target::Mode { mode: Mode::Metre, gold, w: 1.0 },
                    Label::Vague => {
                        let fwd = model.forward(&input)?;
                        let cs = build_confusion_set(&fwd.outputs, fwd.threshold, schema)?;
                        Target::Vague { filtered: cs.members, w: 0.8 }
                    }
                };
                batch.push((input, target));
            }
            batch
        }
    };
    Ok((model, batch))
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares analytic gradients of the selected loss with central differences
/// over every parameter of `configs` random small models.
pub fn grad_check(selector: LossSelector, seed: u64, configs: usize, epsilon: f64) -> Result<GradCheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Input("epsilon must be positive".into()));
    }
    let schema = RelationSchema::tbdense();
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    let mut all_zero = true;
    for c in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(c as u64));
        let (model, batch) = build_case(selector, &mut rng, &schema)?;
        let mut grads = model.zeros_like();
        objective(&model, &batch, &schema, Some(&mut grads))?;
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.to_vec()).collect();

        let mut probe = model.clone();
        for (t, values) in analytic.iter().enumerate() {
            for (j, &a) in values.iter().enumerate() {
                let orig = probe.tensors_mut()[t][j];
                probe.tensors_mut()[t][j] = orig + epsilon;
                let plus = objective(&probe, &batch, &schema, None)?;
                probe.tensors_mut()[t][j] = orig - epsilon;
                let minus = objective(&probe, &batch, &schema, None)?;
                probe.tensors_mut()[t][j] = orig;
                let numeric = (plus - minus) / (2.0 * epsilon);
                max_rel_error = max_rel_error.max(rel_error(a, numeric));
                all_zero &= a == 0.0;
                checked += 1;
            }
        }
    }
    Ok(GradCheckReport {
        selector,
        configs,
        parameters_checked: checked,
        max_rel_error,
        all_zero,
    })
}
