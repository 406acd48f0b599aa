//! Micro-F1, per-label precision/recall/F1, and TopK precision of predicted
//! *Vague* compositions.

use std::fmt::Write as _;

use serde::Serialize;

use crate::classifier::{topk, ScoredPrediction};
use crate::data::EventPairInstance;
use crate::error::{Error, Result};
use crate::relation_algebra::{Label, RelationSchema};

fn check_lengths(gold: usize, pred: usize) -> Result<()> {
    if gold != pred {
        return Err(Error::Input(format!("{gold} gold labels but {pred} predictions")));
    }
    Ok(())
}

/// Micro-averaged F1 over every label including *Vague*. With one gold and
/// one predicted label per instance this equals accuracy.
pub fn micro_f1(gold: &[Label], pred: &[Label]) -> Result<f64> {
    check_lengths(gold.len(), pred.len())?;
    if gold.is_empty() {
        return Err(Error::Input("micro-F1 of an empty set".into()));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        if g == p {
            tp += 1;
        } else {
            fp += 1;
            fneg += 1;
        }
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Gold-by-predicted counts, indexed in `schema.labels()` order.
pub fn confusion_matrix(gold: &[Label], pred: &[Label], schema: &RelationSchema) -> Result<Vec<Vec<usize>>> {
    check_lengths(gold.len(), pred.len())?;
    let n = schema.len() + 1;
    let mut m = vec![vec![0usize; n]; n];
    for (&g, &p) in gold.iter().zip(pred) {
        m[schema.label_index(g)][schema.label_index(p)] += 1;
    }
    Ok(m)
}

/// One-vs-rest scores per label in `schema.labels()` order; undefined ratios are 0.
pub fn per_relation_prf(gold: &[Label], pred: &[Label], schema: &RelationSchema) -> Result<Vec<(Label, Prf)>> {
    let m = confusion_matrix(gold, pred, schema)?;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(schema
        .labels()
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let tp = m[i][i];
            let support: usize = m[i].iter().sum();
            let predicted: usize = m.iter().map(|row| row[i]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (label, Prf { precision, recall, f1, support })
        })
        .collect())
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Chance that the top `k` of a uniformly random ranking over
/// `num_relations` all fall inside a set of `set_size` relations.
pub fn random_baseline(k: usize, num_relations: usize, set_size: usize) -> Result<f64> {
    if k == 0 || k > set_size || set_size > num_relations {
        return Err(Error::Input(format!(
            "need 1 <= k <= set_size <= num_relations, got k={k}, set_size={set_size}, num_relations={num_relations}"
        )));
    }
    Ok(binomial(set_size, k) / binomial(num_relations, k))
}

pub fn relative_precision(p: f64, p_random: f64) -> Result<f64> {
    if p_random <= 0.0 {
        return Err(Error::Undefined("relative precision against a zero random baseline".into()));
    }
    Ok(p / p_random - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TopkStat {
    pub k: usize,
    /// Correctly predicted *Vague* instances with a known possible set.
    pub evaluated: usize,
    pub hits: usize,
    pub precision: f64,
    /// Random-ranking precision pooled over the evaluated possible-set sizes.
    pub random: f64,
    pub relative: Option<f64>,
}

/// Among instances with gold and predicted *Vague* and a known possible set,
/// the fraction whose top `k` relations all lie in that set. `None` when no
/// instance qualifies.
pub fn topk_vague_precision(
    predictions: &[ScoredPrediction],
    instances: &[EventPairInstance],
    k: usize,
) -> Result<Option<TopkStat>> {
    check_lengths(instances.len(), predictions.len())?;
    let (mut evaluated, mut hits, mut random_sum) = (0usize, 0usize, 0.0);
    for (p, inst) in predictions.iter().zip(instances) {
        let Some(set) = &inst.possible_set else { continue };
        if !(inst.gold.is_vague() && p.decision.is_vague()) {
            continue;
        }
        let top = topk(&p.scores, k)?;
        evaluated += 1;
        if top.iter().all(|r| set.contains(r)) {
            hits += 1;
        }
        if set.len() >= k {
            random_sum += random_baseline(k, p.scores.len(), set.len())?;
        }
    }
    if evaluated == 0 {
        return Ok(None);
    }
    let precision = hits as f64 / evaluated as f64;
    let random = random_sum / evaluated as f64;
    Ok(Some(TopkStat {
        k,
        evaluated,
        hits,
        precision,
        random,
        relative: relative_precision(precision, random).ok(),
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelRow {
    pub label: String,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub schema: String,
    /// Micro-F1 over all labels, *Vague* included.
    pub micro_f1: f64,
    pub instances: usize,
    pub per_relation: Vec<LabelRow>,
    pub labels: Vec<String>,
    pub confusion_matrix: Vec<Vec<usize>>,
    pub topk_vague: Vec<TopkStat>,
}

impl MetricsReport {
    pub fn build(
        schema: &RelationSchema,
        instances: &[EventPairInstance],
        predictions: &[ScoredPrediction],
        max_k: usize,
    ) -> Result<Self> {
        check_lengths(instances.len(), predictions.len())?;
        let gold: Vec<Label> = instances.iter().map(|i| i.gold).collect();
        let pred: Vec<Label> = predictions.iter().map(|p| p.decision).collect();
        let mut topk_vague = Vec::new();
        for k in 1..=max_k.min(schema.len()) {
            if let Some(stat) = topk_vague_precision(predictions, instances, k)? {
                topk_vague.push(stat);
            }
        }
        Ok(Self {
            schema: schema.name().to_string(),
            micro_f1: micro_f1(&gold, &pred)?,
            instances: gold.len(),
            per_relation: per_relation_prf(&gold, &pred, schema)?
                .into_iter()
                .map(|(l, prf)| LabelRow {
                    label: schema.label_name(l).to_string(),
                    prf,
                })
                .collect(),
            labels: schema.labels().iter().map(|&l| schema.label_name(l).to_string()).collect(),
            confusion_matrix: confusion_matrix(&gold, &pred, schema)?,
            topk_vague,
        })
    }

    pub fn to_text(&self) -> String {
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let mut out = String::new();
        let _ = writeln!(out, "schema: {}   instances: {}", self.schema, self.instances);
        let _ = writeln!(out, "micro-F1 (all labels, Vague included): {}", pct(self.micro_f1));
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<14} {:>9} {:>9} {:>9} {:>8}", "label", "precision", "recall", "F1", "support");
        for row in &self.per_relation {
            let _ = writeln!(
                out,
                "{:<14} {:>9} {:>9} {:>9} {:>8}",
                row.label,
                pct(row.prf.precision),
                pct(row.prf.recall),
                pct(row.prf.f1),
                row.prf.support
            );
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<14}", "gold \\ pred");
        for l in &self.labels {
            let _ = write!(out, " {:>12}", l);
        }
        let _ = writeln!(out);
        for (l, row) in self.labels.iter().zip(&self.confusion_matrix) {
            let _ = write!(out, "{:<14}", l);
            for c in row {
                let _ = write!(out, " {:>12}", c);
            }
            let _ = writeln!(out);
        }
        if !self.topk_vague.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "TopK precision on correctly predicted Vague ({} instances)", self.topk_vague[0].evaluated);
            let _ = writeln!(out, "{:<6} {:>9} {:>9} {:>9}", "K", "absolute", "random", "relative");
            for s in &self.topk_vague {
                let rel = s.relative.map(pct).unwrap_or_else(|| "-".into());
                let _ = writeln!(out, "{:<6} {:>9} {:>9} {:>9}", format!("Top{}", s.k), pct(s.precision), pct(s.random), rel);
            }
        }
        out
    }
}
