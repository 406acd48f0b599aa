//! Threshold-relative losses and their gradients with respect to the scores
//! and the threshold.
//!
//! Every loss here has the shape `-log(exp(a) / (Σ exp(b_i) + exp(T)))`, so
//! each is written as a log-sum-exp minus a target term.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::relation_algebra::{RelId, RelationSchema};

/// A loss value with its gradient over the scores and the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub d_scores: Vec<f64>,
    pub d_threshold: f64,
}

impl LossGrad {
    pub fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            d_scores: vec![0.0; n],
            d_threshold: 0.0,
        }
    }

    pub fn add(&mut self, other: &LossGrad) {
        self.value += other.value;
        self.d_scores.iter_mut().zip(&other.d_scores).for_each(|(a, b)| *a += b);
        self.d_threshold += other.d_threshold;
    }

    pub fn scaled(mut self, w: f64) -> Self {
        self.value *= w;
        self.d_scores.iter_mut().for_each(|d| *d *= w);
        self.d_threshold *= w;
        self
    }
}

/// `log Σ exp` over the selected scores plus the threshold, with the softmax
/// weights of each term.
fn lse_with_threshold(scores: &[f64], members: &[RelId], t: f64) -> (f64, Vec<f64>, f64) {
    let max = members.iter().map(|r| scores[r.0]).fold(t, f64::max);
    let exps: Vec<f64> = members.iter().map(|r| (scores[r.0] - max).exp()).collect();
    let et = (t - max).exp();
    let total = exps.iter().sum::<f64>() + et;
    let lse = max + total.ln();
    (lse, exps.into_iter().map(|e| e / total).collect(), et / total)
}

/// `L1 = -log(exp(P(r)) / (exp(P(r)) + exp(T)))`: rewards the gold relation
/// against the threshold.
pub fn loss_gold_reward(scores: &[f64], t: f64, gold: RelId) -> LossGrad {
    let (lse, p, pt) = lse_with_threshold(scores, &[gold], t);
    let mut g = LossGrad::zero(scores.len());
    g.value = lse - scores[gold.0];
    g.d_scores[gold.0] = p[0] - 1.0;
    g.d_threshold = pt;
    g
}

/// `-log(exp(T) / (Σ_{r ∈ penalized} exp(P(r)) + exp(T)))`: pushes the
/// penalized relations below the threshold. Zero when nothing is penalized.
pub fn loss_threshold_penalty(scores: &[f64], t: f64, penalized: &[RelId]) -> LossGrad {
    let mut g = LossGrad::zero(scores.len());
    if penalized.is_empty() {
        return g;
    }
    let (lse, p, pt) = lse_with_threshold(scores, penalized, t);
    g.value = lse - t;
    for (r, pr) in penalized.iter().zip(p) {
        g.d_scores[r.0] = pr;
    }
    g.d_threshold = pt - 1.0;
    g
}

/// Both losses for a well-defined gold relation: `(L1, L2)`, where L2
/// penalizes every other relation.
pub fn loss_well_defined(scores: &[f64], t: f64, gold: RelId) -> Result<(LossGrad, LossGrad)> {
    if gold.0 >= scores.len() {
        return Err(Error::Input(format!("gold index {} outside {} scores", gold.0, scores.len())));
    }
    let others: Vec<RelId> = (0..scores.len()).filter(|&i| i != gold.0).map(RelId).collect();
    Ok((loss_gold_reward(scores, t, gold), loss_threshold_penalty(scores, t, &others)))
}

/// `L3 = -w Σ_{r ∈ CS_T} log(exp(P(r)) / (Σ_{r' ∈ CS_T} exp(P(r')) + exp(T)))`.
/// Relations outside `CS_T` get no gradient at all.
pub fn loss_vague(scores: &[f64], t: f64, filtered: &[RelId], w: f64) -> LossGrad {
    let mut g = LossGrad::zero(scores.len());
    if filtered.is_empty() || w == 0.0 {
        return g;
    }
    let (lse, p, pt) = lse_with_threshold(scores, filtered, t);
    let k = filtered.len() as f64;
    g.value = w * filtered.iter().map(|r| lse - scores[r.0]).sum::<f64>();
    for (r, pr) in filtered.iter().zip(p) {
        g.d_scores[r.0] = w * (k * pr - 1.0);
    }
    g.d_threshold = w * k * pt;
    g
}

/// Ablation loss `L4`: penalizes every relation outside the confusion set.
pub fn loss_penalty_ablation(scores: &[f64], t: f64, members: &[RelId]) -> LossGrad {
    let outside: Vec<RelId> = (0..scores.len())
        .map(RelId)
        .filter(|r| !members.contains(r))
        .collect();
    loss_threshold_penalty(scores, t, &outside)
}

/// Softmax cross-entropy for the single-label baseline.
pub fn cross_entropy(logits: &[f64], gold: usize) -> LossGrad {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + total.ln();
    let mut d_scores: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    d_scores[gold] -= 1.0;
    LossGrad {
        value: lse - logits[gold],
        d_scores,
        d_threshold: 0.0,
    }
}

/// Speculated composition of a *Vague* instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionSet {
    /// `{r_fir, confusion(r_fir), r_sec}`, deduplicated, in that order.
    pub members: Vec<RelId>,
    /// Members still scoring strictly below the threshold (`CS_T`).
    pub filtered: Vec<RelId>,
}

impl ConfusionSet {
    pub fn empty() -> Self {
        Self {
            members: Vec::new(),
            filtered: Vec::new(),
        }
    }

    pub fn member_set(&self) -> BTreeSet<RelId> {
        self.members.iter().copied().collect()
    }
}

pub fn build_confusion_set(scores: &[f64], t: f64, schema: &RelationSchema) -> Result<ConfusionSet> {
    if schema.len() < 2 || scores.len() != schema.len() {
        return Err(Error::Input(format!(
            "confusion set needs >= 2 relations and one score each (schema {}, scores {})",
            schema.len(),
            scores.len()
        )));
    }
    let ranked = crate::classifier::ranking(scores);
    let (first, second) = (ranked[0], ranked[1]);
    let mut members = vec![first];
    if let Some(c) = schema.confusion_of(first)? {
        members.push(c);
    }
    if !members.contains(&second) {
        members.push(second);
    }
    let filtered = members.iter().copied().filter(|r| scores[r.0] < t).collect();
    Ok(ConfusionSet { members, filtered })
}
