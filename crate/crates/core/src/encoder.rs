//! Event-pair encoder: typed marker insertion, a hashed bag-of-tokens
//! featurizer pooled around each event, and the projection MLP producing the
//! pair representation `h = MLP1([x_e1 || x_e2])`.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_jsonl, EventPairInstance};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpTrace, TensorView};

pub const E1_LEFT: &str = "<E1:L>";
pub const E1_RIGHT: &str = "<E1:R>";
pub const E2_LEFT: &str = "<E2:L>";
pub const E2_RIGHT: &str = "<E2:R>";
pub const MARKERS: [&str; 4] = [E1_LEFT, E1_RIGHT, E2_LEFT, E2_RIGHT];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkedSequence {
    pub tokens: Vec<String>,
    pub e1_marker_pos: usize,
    pub e2_marker_pos: usize,
    pub e1_right_pos: usize,
    pub e2_right_pos: usize,
}

/// Wraps both event spans in typed markers and surrounds the text with its
/// context sentences.
pub fn insert_markers(inst: &EventPairInstance) -> Result<MarkedSequence> {
    let (s1, s2) = (inst.e1_span, inst.e2_span);
    let n = inst.tokens.len();
    if s1.is_empty() || s2.is_empty() || s1.end > n || s2.end > n {
        return Err(Error::Input(format!("{}: event span out of bounds", inst.id)));
    }
    if s1.overlaps(&s2) {
        return Err(Error::Input(format!("{}: overlapping event spans", inst.id)));
    }
    let mut tokens = Vec::with_capacity(inst.context_before.len() + n + inst.context_after.len() + 4);
    tokens.extend(inst.context_before.iter().cloned());
    let mut pos = [0usize; 4];
    for (i, tok) in inst.tokens.iter().enumerate() {
        for (marker, slot, at) in [(E1_LEFT, 0, s1.start), (E2_LEFT, 2, s2.start)] {
            if i == at {
                pos[slot] = tokens.len();
                tokens.push(marker.to_string());
            }
        }
        tokens.push(tok.clone());
        for (marker, slot, at) in [(E1_RIGHT, 1, s1.end), (E2_RIGHT, 3, s2.end)] {
            if i + 1 == at {
                pos[slot] = tokens.len();
                tokens.push(marker.to_string());
            }
        }
    }
    tokens.extend(inst.context_after.iter().cloned());
    Ok(MarkedSequence {
        tokens,
        e1_marker_pos: pos[0],
        e1_right_pos: pos[1],
        e2_marker_pos: pos[2],
        e2_right_pos: pos[3],
    })
}

/// Drops the four marker tokens, recovering `context_before ++ tokens ++ context_after`.
pub fn strip_markers(seq: &MarkedSequence) -> Vec<String> {
    seq.tokens
        .iter()
        .filter(|t| !MARKERS.contains(&t.as_str()))
        .cloned()
        .collect()
}

/// How the tokens around an event are pooled into its representation.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Mean over a fixed radius around the event's left marker.
    #[default]
    Window,
    /// Mean over the marked span, markers included.
    Span,
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerParams {
    pub buckets: usize,
    pub window: usize,
    pub dim: usize,
    pub pooling: Pooling,
    /// `(buckets + 4) x dim`, row-major; the last four rows belong to the markers.
    pub table: Vec<f64>,
}

impl FeaturizerParams {
    pub fn init<R: Rng>(buckets: usize, window: usize, dim: usize, pooling: Pooling, scale: f64, rng: &mut R) -> Result<Self> {
        if buckets == 0 || dim == 0 {
            return Err(Error::Config("featurizer needs buckets > 0 and dim > 0".into()));
        }
        let rows = buckets + MARKERS.len();
        Ok(Self {
            buckets,
            window,
            dim,
            pooling,
            table: (0..rows * dim).map(|_| rng.gen_range(-scale..scale)).collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            table: vec![0.0; self.table.len()],
            ..self.clone()
        }
    }

    pub fn rows(&self) -> usize {
        self.buckets + MARKERS.len()
    }

    /// Embedding row for a token. Markers own dedicated rows past the hash range.
    pub fn bucket(&self, token: &str) -> usize {
        match MARKERS.iter().position(|m| *m == token) {
            Some(i) => self.buckets + i,
            None => (fnv1a(token.as_bytes()) % self.buckets as u64) as usize,
        }
    }

    fn row(&self, b: usize) -> &[f64] {
        &self.table[b * self.dim..(b + 1) * self.dim]
    }

    fn pool_positions(&self, seq: &MarkedSequence, left: usize, right: usize) -> std::ops::RangeInclusive<usize> {
        match self.pooling {
            Pooling::Window => {
                left.saturating_sub(self.window)..=(left + self.window).min(seq.tokens.len() - 1)
            }
            Pooling::Span => left..=right,
        }
    }

    fn pooled(&self, buckets: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for &b in buckets {
            x.iter_mut().zip(self.row(b)).for_each(|(a, v)| *a += v);
        }
        let inv = 1.0 / buckets.len() as f64;
        x.iter_mut().for_each(|a| *a *= inv);
        x
    }
}

/// Fixed-width vector for one event pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRepresentation(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub featurizer: FeaturizerParams,
    pub mlp1: Mlp,
}

/// Everything the backward pass needs from a forward encoding.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    e1_buckets: Vec<usize>,
    e2_buckets: Vec<usize>,
    mlp1: MlpTrace,
}

impl EncoderParams {
    pub fn init<R: Rng>(
        buckets: usize,
        window: usize,
        embed_dim: usize,
        hidden: usize,
        pair_dim: usize,
        pooling: Pooling,
        rng: &mut R,
    ) -> Result<Self> {
        let featurizer = FeaturizerParams::init(buckets, window, embed_dim, pooling, 0.5, rng)?;
        let mlp1 = Mlp::init(&[2 * embed_dim, hidden, pair_dim], rng);
        Ok(Self { featurizer, mlp1 })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            featurizer: self.featurizer.zeros_like(),
            mlp1: self.mlp1.zeros_like(),
        }
    }

    pub fn pair_dim(&self) -> usize {
        self.mlp1.output_dim()
    }

    pub fn encode_traced(&self, seq: &MarkedSequence) -> Result<(PairRepresentation, EncoderTrace)> {
        let fp = &self.featurizer;
        if self.mlp1.input_dim() != 2 * fp.dim {
            return Err(Error::Config(format!(
                "MLP1 input width {} does not match 2 x embedding width {}",
                self.mlp1.input_dim(),
                fp.dim
            )));
        }
        if fp.table.len() != fp.rows() * fp.dim {
            return Err(Error::Config("embedding table has the wrong size".into()));
        }
        let collect = |left: usize, right: usize| -> Vec<usize> {
            fp.pool_positions(seq, left, right)
                .map(|p| fp.bucket(&seq.tokens[p]))
                .collect()
        };
        let e1_buckets = collect(seq.e1_marker_pos, seq.e1_right_pos);
        let e2_buckets = collect(seq.e2_marker_pos, seq.e2_right_pos);
        let mut x = fp.pooled(&e1_buckets);
        x.extend(fp.pooled(&e2_buckets));
        let mlp1 = self.mlp1.forward_traced(&x)?;
        let h = PairRepresentation(mlp1.output().to_vec());
        Ok((h, EncoderTrace { e1_buckets, e2_buckets, mlp1 }))
    }

    pub fn encode(&self, seq: &MarkedSequence) -> Result<PairRepresentation> {
        Ok(self.encode_traced(seq)?.0)
    }

    pub fn backward(&self, trace: &EncoderTrace, d_h: &[f64], grads: &mut EncoderParams) {
        let dx = self.mlp1.backward(&trace.mlp1, d_h, &mut grads.mlp1);
        let dim = self.featurizer.dim;
        for (buckets, dxi) in [(&trace.e1_buckets, &dx[..dim]), (&trace.e2_buckets, &dx[dim..])] {
            let inv = 1.0 / buckets.len() as f64;
            for &b in buckets {
                let row = &mut grads.featurizer.table[b * dim..(b + 1) * dim];
                row.iter_mut().zip(dxi).for_each(|(g, d)| *g += d * inv);
            }
        }
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = vec![TensorView {
            name: "featurizer.table".into(),
            shape: vec![self.featurizer.rows(), self.featurizer.dim],
            data: &self.featurizer.table,
        }];
        out.extend(self.mlp1.tensors("mlp1"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.featurizer.table];
        out.extend(self.mlp1.tensors_mut());
        out
    }
}

/// Pair vectors computed elsewhere, keyed by instance id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecomputedEmbeddings {
    width: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

impl PrecomputedEmbeddings {
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut out = Self::default();
        for (i, rec) in records.into_iter().enumerate() {
            if i == 0 {
                out.width = rec.vector.len();
            } else if rec.vector.len() != out.width {
                return Err(Error::Format(format!(
                    "record {} (`{}`) has width {}, expected {}",
                    i + 1,
                    rec.id,
                    rec.vector.len(),
                    out.width
                )));
            }
            if rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("`{}` has non-finite entries", rec.id)));
            }
            if out.vectors.insert(rec.id.clone(), rec.vector).is_some() {
                return Err(Error::Format(format!("duplicate id `{}`", rec.id)));
            }
        }
        Ok(out)
    }

    pub fn parse<R: std::io::Read>(reader: R) -> Result<Self> {
        let records = read_jsonl(reader).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_records(records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(file)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<PairRepresentation> {
        self.vectors
            .get(id)
            .map(|v| PairRepresentation(v.clone()))
            .ok_or_else(|| Error::Data(format!("no precomputed embedding for `{id}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Span;
    use crate::relation_algebra::Label;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(tokens: &[&str], e1: (usize, usize), e2: (usize, usize)) -> EventPairInstance {
        EventPairInstance {
            id: "t".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            context_before: vec![],
            context_after: vec![],
            e1_span: Span::new(e1.0, e1.1),
            e2_span: Span::new(e2.0, e2.1),
            gold: Label::Vague,
            annotator_labels: None,
            possible_set: None,
            timelines: None,
        }
    }

    #[test]
    fn markers_wrap_spans() {
        let seq = insert_markers(&inst(&["I", "slept", "then", "ate"], (1, 2), (3, 4))).unwrap();
        assert_eq!(
            seq.tokens,
            ["I", "<E1:L>", "slept", "<E1:R>", "then", "<E2:L>", "ate", "<E2:R>"]
        );
        assert_eq!((seq.e1_marker_pos, seq.e2_marker_pos), (1, 5));
        assert_eq!((seq.e1_right_pos, seq.e2_right_pos), (3, 7));
    }

    #[test]
    fn marker_roles_survive_reversed_order() {
        let seq = insert_markers(&inst(&["a", "b", "c", "d", "e"], (3, 5), (0, 1))).unwrap();
        assert_eq!(seq.tokens, ["<E2:L>", "a", "<E2:R>", "b", "c", "<E1:L>", "d", "e", "<E1:R>"]);
        assert_eq!(seq.tokens[seq.e1_marker_pos], E1_LEFT);
        assert_eq!(seq.tokens[seq.e2_marker_pos], E2_LEFT);
    }

    #[test]
    fn contexts_and_errors() {
        let mut i = inst(&["x", "y"], (0, 1), (1, 2));
        i.context_before = vec!["pre".into()];
        i.context_after = vec!["post".into(), "script".into()];
        let seq = insert_markers(&i).unwrap();
        assert_eq!(seq.tokens.first().unwrap(), "pre");
        assert_eq!(seq.tokens.last().unwrap(), "script");
        assert_eq!(strip_markers(&seq), ["pre", "x", "y", "post", "script"]);
        assert!(matches!(
            insert_markers(&inst(&["a", "b", "c"], (0, 2), (1, 3))),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn markers_have_dedicated_buckets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fp = FeaturizerParams::init(16, 2, 4, Pooling::Window, 0.1, &mut rng).unwrap();
        let ids: Vec<usize> = MARKERS.iter().map(|m| fp.bucket(m)).collect();
        assert_eq!(ids, vec![16, 17, 18, 19]);
        for w in ["a", "E1:L", "<E1:L", "slept"] {
            assert!(fp.bucket(w) < 16);
        }
    }

    #[test]
    fn shapes_and_zero_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderParams::init(32, 5, 4, 6, 8, Pooling::Window, &mut rng).unwrap();
        let seq = insert_markers(&inst(&["I", "slept", "then", "ate"], (1, 2), (3, 4))).unwrap();
        assert_eq!(enc.encode(&seq).unwrap().0.len(), 8);

        let zero = enc.zeros_like();
        assert!(zero.encode(&seq).unwrap().0.iter().all(|&v| v == 0.0));

        let mut bad = enc.clone();
        bad.mlp1 = Mlp::zeros(&[3, 4, 8]);
        assert!(matches!(bad.encode(&seq), Err(Error::Config(_))));
    }

    #[test]
    fn precomputed_loader() {
        let line = |id: &str, w: usize| format!("{{\"id\":\"{id}\",\"vector\":{:?}}}\n", vec![0.5; w]);
        let ok = [line("a", 16), line("b", 16), line("c", 16)].concat();
        let emb = PrecomputedEmbeddings::parse(ok.as_bytes()).unwrap();
        assert_eq!((emb.len(), emb.width()), (3, 16));
        assert!(matches!(emb.get("z"), Err(Error::Data(_))));

        let dup = [line("a", 16), line("a", 16)].concat();
        assert!(matches!(PrecomputedEmbeddings::parse(dup.as_bytes()), Err(Error::Format(_))));
        let ragged = [line("a", 16), line("b", 8)].concat();
        assert!(matches!(PrecomputedEmbeddings::parse(ragged.as_bytes()), Err(Error::Format(_))));
    }
}
