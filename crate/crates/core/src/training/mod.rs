//! Model parameters, the training objective for each mode, and the
//! mini-batch training loop.

mod config;
mod gradcheck;
mod losses;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{baseline_decision, BaselineHead, ScoreHead, ScoredPrediction, ScoreTrace};
use crate::data::EventPairInstance;
use crate::encoder::{insert_markers, EncoderParams, EncoderTrace, MarkedSequence, PairRepresentation, PrecomputedEmbeddings};
use crate::error::{Error, Result};
use crate::evaluation::micro_f1;
use crate::nn::{MlpTrace, TensorView};
use crate::relation_algebra::{Label, RelationSchema, SchemaFile};

pub use config::{Mode, TrainConfig};
pub use gradcheck::{grad_check, GradCheckReport, LossSelector};
pub use losses::{
    build_confusion_set, cross_entropy, loss_gold_reward, loss_penalty_ablation, loss_threshold_penalty, loss_vague,
    loss_well_defined, ConfusionSet, LossGrad,
};

/// Weight of the *Vague* loss after `step` updates: a linear ramp capped at `w_bar`.
pub fn weight_at(step: u64, cfg: &TrainConfig) -> f64 {
    (cfg.alpha * step as f64 * cfg.w_bar).min(cfg.w_bar)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Metre(ScoreHead),
    Baseline(BaselineHead),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Absent when pair vectors are precomputed.
    pub encoder: Option<EncoderParams>,
    pub head: Head,
}

/// What the model consumes for one instance.
#[derive(Clone, Debug)]
pub enum PairInput {
    Marked(MarkedSequence),
    Vector(PairRepresentation),
}

pub fn prepare_inputs(
    instances: &[EventPairInstance],
    precomputed: Option<&PrecomputedEmbeddings>,
) -> Result<Vec<PairInput>> {
    instances
        .iter()
        .map(|inst| match precomputed {
            Some(p) => p.get(&inst.id).map(PairInput::Vector),
            None => insert_markers(inst).map(PairInput::Marked),
        })
        .collect()
}

enum HeadTrace {
    Metre(ScoreTrace),
    Baseline(MlpTrace),
}

/// Cached forward pass for one instance.
pub struct Forward {
    encoder: Option<EncoderTrace>,
    head: HeadTrace,
    /// Relation scores (multi-label head) or logits over relations + *Vague* (baseline).
    pub outputs: Vec<f64>,
    /// Adaptive threshold; unused by the baseline.
    pub threshold: f64,
}

impl ModelParams {
    pub fn init(cfg: &TrainConfig, schema: &RelationSchema, precomputed_width: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (encoder, pair_dim) = match precomputed_width {
            Some(w) => (None, w),
            None => (
                Some(EncoderParams::init(
                    cfg.buckets,
                    cfg.window,
                    cfg.embed_dim,
                    cfg.hidden_dim,
                    cfg.pair_dim,
                    cfg.pooling,
                    rng,
                )?),
                cfg.pair_dim,
            ),
        };
        let head = match cfg.mode {
            Mode::Baseline => Head::Baseline(BaselineHead::init(pair_dim, cfg.hidden_dim, schema.len(), rng)),
            _ => Head::Metre(ScoreHead::init(pair_dim, cfg.hidden_dim, schema.len(), rng)),
        };
        Ok(Self { encoder, head })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.as_ref().map(|e| e.zeros_like()),
            head: match &self.head {
                Head::Metre(h) => Head::Metre(h.zeros_like()),
                Head::Baseline(h) => Head::Baseline(h.zeros_like()),
            },
        }
    }

    pub fn num_relations(&self) -> usize {
        match &self.head {
            Head::Metre(h) => h.num_relations(),
            Head::Baseline(h) => h.num_relations(),
        }
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = self.encoder.as_ref().map(|e| e.tensors()).unwrap_or_default();
        match &self.head {
            Head::Metre(h) => out.extend(h.tensors()),
            Head::Baseline(h) => out.extend(h.logits.tensors("mlp_b")),
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.as_mut().map(|e| e.tensors_mut()).unwrap_or_default();
        match &mut self.head {
            Head::Metre(h) => out.extend(h.tensors_mut()),
            Head::Baseline(h) => out.extend(h.logits.tensors_mut()),
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn represent(&self, input: &PairInput) -> Result<(PairRepresentation, Option<EncoderTrace>)> {
        match (input, &self.encoder) {
            (PairInput::Marked(seq), Some(enc)) => {
                let (h, trace) = enc.encode_traced(seq)?;
                Ok((h, Some(trace)))
            }
            (PairInput::Vector(h), None) => Ok((h.clone(), None)),
            (PairInput::Marked(_), None) => Err(Error::Config(
                "model was trained on precomputed vectors; supply an embeddings file".into(),
            )),
            (PairInput::Vector(_), Some(_)) => Err(Error::Config(
                "model has its own encoder; precomputed vectors are not accepted".into(),
            )),
        }
    }

    pub fn forward(&self, input: &PairInput) -> Result<Forward> {
        let (h, encoder) = self.represent(input)?;
        Ok(match &self.head {
            Head::Metre(head) => {
                let (outputs, threshold, trace) = head.score_traced(&h)?;
                Forward {
                    encoder,
                    head: HeadTrace::Metre(trace),
                    outputs,
                    threshold,
                }
            }
            Head::Baseline(head) => {
                let trace = head.logits.forward_traced(&h.0)?;
                Forward {
                    encoder,
                    outputs: trace.output().to_vec(),
                    head: HeadTrace::Baseline(trace),
                    threshold: 0.0,
                }
            }
        })
    }

    /// Backpropagates a loss gradient over the head outputs into `grads`.
    pub fn backward(&self, fwd: &Forward, loss: &LossGrad, grads: &mut ModelParams) {
        let d_h = match (&self.head, &fwd.head, &mut grads.head) {
            (Head::Metre(head), HeadTrace::Metre(trace), Head::Metre(g)) => {
                head.backward(trace, &loss.d_scores, loss.d_threshold, g)
            }
            (Head::Baseline(head), HeadTrace::Baseline(trace), Head::Baseline(g)) => {
                head.logits.backward(trace, &loss.d_scores, &mut g.logits)
            }
            _ => unreachable!("gradient buffer shaped like the model"),
        };
        if let (Some(enc), Some(trace), Some(g)) = (&self.encoder, &fwd.encoder, &mut grads.encoder) {
            enc.backward(trace, &d_h, g);
        }
    }

    pub fn predict(&self, input: &PairInput) -> Result<ScoredPrediction> {
        let fwd = self.forward(input)?;
        Ok(match &self.head {
            Head::Metre(_) => crate::classifier::infer(&fwd.outputs, fwd.threshold),
            Head::Baseline(_) => {
                let n = fwd.outputs.len() - 1;
                let decision = baseline_decision(&fwd.outputs);
                ScoredPrediction {
                    scores: fwd.outputs[..n].to_vec(),
                    threshold: fwd.outputs[n],
                    decision,
                    composition: decision.relation().into_iter().collect(),
                }
            }
        })
    }

    pub fn predict_all(&self, inputs: &[PairInput]) -> Result<Vec<ScoredPrediction>> {
        inputs.iter().map(|i| self.predict(i)).collect()
    }
}

/// Loss of one instance under `mode`, given its forward outputs.
pub fn instance_loss(
    mode: Mode,
    gold: Label,
    outputs: &[f64],
    threshold: f64,
    w: f64,
    schema: &RelationSchema,
) -> Result<LossGrad> {
    match (mode, gold) {
        (Mode::Baseline, _) => Ok(cross_entropy(outputs, schema.label_index(gold))),
        (_, Label::Rel(r)) => {
            let (mut l1, l2) = loss_well_defined(outputs, threshold, r)?;
            l1.add(&l2);
            Ok(l1)
        }
        (Mode::MetreNoCs, Label::Vague) => Ok(LossGrad::zero(outputs.len())),
        (Mode::Metre, Label::Vague) => {
            let cs = build_confusion_set(outputs, threshold, schema)?;
            Ok(loss_vague(outputs, threshold, &cs.filtered, w))
        }
        (Mode::MetrePnt, Label::Vague) => {
            let cs = build_confusion_set(outputs, threshold, schema)?;
            let mut l = loss_vague(outputs, threshold, &cs.filtered, w);
            l.add(&loss_penalty_ablation(outputs, threshold, &cs.members));
            Ok(l)
        }
    }
}

fn check_head(model: &ModelParams, mode: Mode) -> Result<()> {
    match (&model.head, mode) {
        (Head::Baseline(_), Mode::Baseline) => Ok(()),
        (Head::Metre(_), Mode::Metre | Mode::MetreNoCs | Mode::MetrePnt) => Ok(()),
        _ => Err(Error::Config(format!("mode {mode} does not match the model's head"))),
    }
}

/// Mean loss over a batch; when `grads` is given, the gradient of that mean
/// is accumulated into it.
pub fn total_loss(
    model: &ModelParams,
    batch: &[(&PairInput, Label)],
    mode: Mode,
    w: f64,
    schema: &RelationSchema,
    mut grads: Option<&mut ModelParams>,
) -> Result<f64> {
    check_head(model, mode)?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (input, gold) in batch {
        let fwd = model.forward(input)?;
        let loss = instance_loss(mode, *gold, &fwd.outputs, fwd.threshold, w, schema)?;
        total += loss.value;
        if let Some(g) = grads.as_deref_mut() {
            model.backward(&fwd, &loss.scaled(scale), g);
        }
    }
    Ok(total * scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_micro_f1: Option<f64>,
    /// *Vague* loss weight after the epoch's last update.
    pub w: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev micro-F1 (last epoch
    /// without a dev set).
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub steps: u64,
}

/// Mutable training state: parameters, momentum buffer, update counter, RNG.
pub struct TrainState {
    pub params: ModelParams,
    velocity: ModelParams,
    pub step: u64,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        Self {
            velocity: params.zeros_like(),
            params,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Heavy-ball update `v = μ v + g; θ -= lr v`; advances the step counter.
    pub fn apply(&mut self, grads: &ModelParams, learning_rate: f64, momentum: f64) {
        let params = self.params.tensors_mut();
        let velocity = self.velocity.tensors_mut();
        let grads = grads.tensors();
        for ((p, v), g) in params.into_iter().zip(velocity).zip(grads) {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g.data) {
                *v = momentum * *v + g;
                *p -= learning_rate * *v;
            }
        }
        self.step += 1;
    }
}

pub fn evaluate_f1(model: &ModelParams, inputs: &[PairInput], gold: &[Label]) -> Result<f64> {
    let pred: Vec<Label> = model.predict_all(inputs)?.into_iter().map(|p| p.decision).collect();
    micro_f1(gold, &pred)
}

/// Mini-batch gradient descent on the mode's objective. The caller applies
/// symmetry enhancement to `train` beforehand, never to `dev`.
pub fn train(
    train: &[EventPairInstance],
    dev: &[EventPairInstance],
    schema: &RelationSchema,
    cfg: &TrainConfig,
    precomputed: Option<&PrecomputedEmbeddings>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = ModelParams::init(cfg, schema, precomputed.map(|p| p.width()), &mut init_rng)?;
    train_from(params, train, dev, schema, cfg, precomputed)
}

pub fn train_from(
    params: ModelParams,
    train: &[EventPairInstance],
    dev: &[EventPairInstance],
    schema: &RelationSchema,
    cfg: &TrainConfig,
    precomputed: Option<&PrecomputedEmbeddings>,
) -> Result<TrainOutcome> {
    check_head(&params, cfg.mode)?;
    if params.num_relations() != schema.len() {
        return Err(Error::Config(format!(
            "model scores {} relations but schema `{}` has {}",
            params.num_relations(),
            schema.name(),
            schema.len()
        )));
    }
    let train_inputs = prepare_inputs(train, precomputed)?;
    let train_gold: Vec<Label> = train.iter().map(|i| i.gold).collect();
    let dev_inputs = prepare_inputs(dev, precomputed)?;
    let dev_gold: Vec<Label> = dev.iter().map(|i| i.gold).collect();

    let mut state = TrainState::new(params, cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut state.rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&PairInput, Label)> = chunk.iter().map(|&i| (&train_inputs[i], train_gold[i])).collect();
            let w = weight_at(state.step, cfg);
            let mut grads = state.params.zeros_like();
            let loss = total_loss(&state.params, &batch, cfg.mode, w, schema, Some(&mut grads))?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss {loss} at epoch {epoch}, step {}",
                    state.step
                )));
            }
            loss_sum += loss * batch.len() as f64;
            state.apply(&grads, cfg.learning_rate, cfg.momentum);
        }
        let dev_micro_f1 = if dev.is_empty() {
            None
        } else {
            Some(evaluate_f1(&state.params, &dev_inputs, &dev_gold)?)
        };
        log.push(EpochLog {
            epoch,
            mean_loss: if train.is_empty() { 0.0 } else { loss_sum / train.len() as f64 },
            dev_micro_f1,
            w: weight_at(state.step, cfg),
        });
        let score = dev_micro_f1.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => score > *b || (dev_micro_f1.is_none()),
        };
        if improved {
            best = Some((score, epoch, state.params.clone()));
        }
    }

    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (state.params.clone(), 0),
    };
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        steps: state.step,
    })
}

pub const MODEL_FORMAT: &str = "metre-model";
pub const MODEL_VERSION: u32 = 1;

/// Self-contained model file: schema, mode, and every parameter tensor with
/// its shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub schema: SchemaFile,
    pub mode: Mode,
    pub params: ModelParams,
}

impl ModelFile {
    pub fn new(schema: &RelationSchema, mode: Mode, params: ModelParams) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            schema: schema.to_file_form(),
            mode,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: ModelFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported model format {} v{}",
                path.display(),
                model.format,
                model.version
            )));
        }
        Ok(model)
    }

    pub fn schema(&self) -> Result<RelationSchema> {
        RelationSchema::from_file_form(&self.schema)
    }
}
