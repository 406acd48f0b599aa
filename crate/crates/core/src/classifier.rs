//! Scoring heads and decision rules.
//!
//! The multi-label head produces one unnormalized score per well-defined
//! relation plus an adaptive threshold; a pair is assigned a relation only
//! when exactly one score clears the threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::PairRepresentation;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpTrace, TensorView};
use crate::relation_algebra::{Label, RelId};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPrediction {
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub decision: Label,
    /// Relations scoring strictly above the threshold, best first.
    pub composition: Vec<RelId>,
}

/// Relation indices sorted by descending score; ties keep schema order.
pub fn ranking(scores: &[f64]) -> Vec<RelId> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.into_iter().map(RelId).collect()
}

pub fn topk(scores: &[f64], k: usize) -> Result<Vec<RelId>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Input(format!("k = {k} outside 1..={}", scores.len())));
    }
    let mut r = ranking(scores);
    r.truncate(k);
    Ok(r)
}

pub fn infer(scores: &[f64], threshold: f64) -> ScoredPrediction {
    let composition: Vec<RelId> = ranking(scores)
        .into_iter()
        .filter(|r| scores[r.0] > threshold)
        .collect();
    let decision = match composition.as_slice() {
        [only] => Label::Rel(*only),
        _ => Label::Vague,
    };
    ScoredPrediction {
        scores: scores.to_vec(),
        threshold,
        decision,
        composition,
    }
}

/// MLP2 (relation scores) and MLP3 (threshold); they share no parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreHead {
    pub scores: Mlp,
    pub threshold: Mlp,
}

#[derive(Clone, Debug)]
pub struct ScoreTrace {
    scores: MlpTrace,
    threshold: MlpTrace,
}

impl ScoreHead {
    pub fn init<R: Rng>(pair_dim: usize, hidden: usize, relations: usize, rng: &mut R) -> Self {
        Self {
            scores: Mlp::init(&[pair_dim, hidden, relations], rng),
            threshold: Mlp::init(&[pair_dim, hidden, 1], rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            scores: self.scores.zeros_like(),
            threshold: self.threshold.zeros_like(),
        }
    }

    pub fn num_relations(&self) -> usize {
        self.scores.output_dim()
    }

    pub fn score_traced(&self, h: &PairRepresentation) -> Result<(Vec<f64>, f64, ScoreTrace)> {
        if self.threshold.output_dim() != 1 {
            return Err(Error::Config("threshold MLP must have a scalar output".into()));
        }
        let scores = self.scores.forward_traced(&h.0)?;
        let threshold = self.threshold.forward_traced(&h.0)?;
        Ok((scores.output().to_vec(), threshold.output()[0], ScoreTrace { scores, threshold }))
    }

    pub fn score(&self, h: &PairRepresentation) -> Result<(Vec<f64>, f64)> {
        let (s, t, _) = self.score_traced(h)?;
        Ok((s, t))
    }

    /// Returns the gradient with respect to `h`.
    pub fn backward(&self, trace: &ScoreTrace, d_scores: &[f64], d_threshold: f64, grads: &mut ScoreHead) -> Vec<f64> {
        let mut dh = self.scores.backward(&trace.scores, d_scores, &mut grads.scores);
        let dt = self.threshold.backward(&trace.threshold, &[d_threshold], &mut grads.threshold);
        dh.iter_mut().zip(dt).for_each(|(a, b)| *a += b);
        dh
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = self.scores.tensors("mlp2");
        out.extend(self.threshold.tensors("mlp3"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.scores.tensors_mut();
        out.extend(self.threshold.tensors_mut());
        out
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the first wins ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Single-label classifier over the relations plus *Vague* (last logit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineHead {
    pub logits: Mlp,
}

impl BaselineHead {
    pub fn init<R: Rng>(pair_dim: usize, hidden: usize, relations: usize, rng: &mut R) -> Self {
        Self {
            logits: Mlp::init(&[pair_dim, hidden, relations + 1], rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            logits: self.logits.zeros_like(),
        }
    }

    pub fn num_relations(&self) -> usize {
        self.logits.output_dim() - 1
    }
}

/// Maps baseline logits over `R ∪ {Vague}` to a label.
pub fn baseline_decision(logits: &[f64]) -> Label {
    let i = argmax(logits);
    if i + 1 == logits.len() {
        Label::Vague
    } else {
        Label::Rel(RelId(i))
    }
}

/// Runs the baseline head and returns its label; the head's output width must
/// be `relations + 1`.
pub fn baseline_score_and_infer(h: &PairRepresentation, head: &BaselineHead, relations: usize) -> Result<Label> {
    if head.logits.output_dim() != relations + 1 {
        return Err(Error::Config(format!(
            "baseline head has {} outputs, expected {}",
            head.logits.output_dim(),
            relations + 1
        )));
    }
    Ok(baseline_decision(&head.logits.forward(&h.0)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[usize]) -> Vec<RelId> {
        v.iter().map(|&i| RelId(i)).collect()
    }

    #[test]
    fn infer_cases() {
        let p = infer(&[0.9, -1.0, -1.0, -1.0, -1.0], 0.0);
        assert_eq!(p.decision, Label::Rel(RelId(0)));
        assert_eq!(p.composition, ids(&[0]));

        let p = infer(&[0.5, 0.8, -1.0, -1.0, -1.0], 0.0);
        assert_eq!(p.decision, Label::Vague);
        assert_eq!(p.composition, ids(&[1, 0]));

        let p = infer(&[-0.5, -0.8, -1.0, -1.0, -1.0], 0.0);
        assert_eq!(p.decision, Label::Vague);
        assert!(p.composition.is_empty());

        // A score equal to the threshold does not exceed it.
        let p = infer(&[0.0, 1.0, -1.0], 0.0);
        assert_eq!(p.decision, Label::Rel(RelId(1)));
    }

    #[test]
    fn topk_cases() {
        let s = [0.5, 0.3, 0.1, 0.05, 0.05];
        assert_eq!(topk(&s, 2).unwrap(), ids(&[0, 1]));
        let mut all = topk(&s, 5).unwrap();
        assert_eq!(all, ids(&[0, 1, 2, 3, 4]));
        all.sort();
        assert_eq!(all, ids(&[0, 1, 2, 3, 4]));
        assert_eq!(topk(&s, 4).unwrap()[3], RelId(3));
        assert!(matches!(topk(&s, 0), Err(Error::Input(_))));
        assert!(topk(&s, 6).is_err());
    }

    #[test]
    fn head_shapes_and_bias() {
        let mut head = ScoreHead {
            scores: Mlp::zeros(&[4, 3, 5]),
            threshold: Mlp::zeros(&[4, 3, 1]),
        };
        head.scores.layers[1].bias = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        head.threshold.layers[1].bias = vec![0.25];
        let (s, t) = head.score(&PairRepresentation(vec![0.0; 4])).unwrap();
        assert_eq!(s, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t, 0.25);
        assert!(matches!(head.score(&PairRepresentation(vec![0.0; 3])), Err(Error::Config(_))));
    }

    #[test]
    fn baseline_rules() {
        assert_eq!(baseline_decision(&[0.1, 0.2, 0.0, 0.0, 0.0, 3.0]), Label::Vague);
        assert_eq!(baseline_decision(&[1.0; 6]), Label::Rel(RelId(0)));
        let p = softmax(&[1.0, -2.0, 0.5, 3.0, 0.0, 0.1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut head = BaselineHead { logits: Mlp::zeros(&[2, 2, 6]) };
        head.logits.layers[1].bias[5] = 1.0;
        assert_eq!(baseline_score_and_infer(&PairRepresentation(vec![0.0; 2]), &head, 5).unwrap(), Label::Vague);
        assert!(matches!(
            baseline_score_and_infer(&PairRepresentation(vec![0.0; 2]), &head, 3),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn infer_invariants(scores in prop::collection::vec(-5.0f64..5.0, 1..7), t in -5.0f64..5.0, shift in -10.0f64..10.0) {
            let p = infer(&scores, t);
            prop_assert_eq!(p.decision != Label::Vague, p.composition.len() == 1);
            if let Label::Rel(r) = p.decision {
                prop_assert_eq!(&p.composition, &vec![r]);
            }
            for w in p.composition.windows(2) {
                prop_assert!(scores[w[0].0] >= scores[w[1].0]);
            }
            if !p.composition.is_empty() {
                prop_assert_eq!(&p.composition, &topk(&scores, p.composition.len()).unwrap());
            }
            // Shift invariance; dyadic shifts keep the comparison exact.
            let shift = (shift * 4.0).round() / 4.0;
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let q = infer(&shifted, t + shift);
            prop_assert_eq!(q.decision, p.decision);
            prop_assert_eq!(q.composition, p.composition);
        }

        #[test]
        fn baseline_shift_invariant(logits in prop::collection::vec(-5.0f64..5.0, 2..7), c in -10.0f64..10.0) {
            let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
            prop_assert_eq!(argmax(&softmax(&logits)), argmax(&logits));
            prop_assert_eq!(baseline_decision(&shifted), baseline_decision(&logits));
        }
    }
}
