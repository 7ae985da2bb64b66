//! Trait (lexicon-driven) and state (context-driven) emotion features.

use empathy_nn::layers::Linear;
use empathy_nn::{Graph, Tensor, Var};

use super::Resources;
use crate::corpus::{Batch, NUM_EMOTIONS};
use crate::error::Result;

pub const COMPRESS: &str = "trait.compress";
pub const EMOTION_PROJ: &str = "state.emotion_proj";
pub const CONTEXT_PROJ: &str = "state.context_proj";

/// Per-token VAD triples, `[B, L, 3]`.
pub fn vad_features(batch: &Batch, res: &Resources) -> Tensor {
    let data = batch
        .context_ids
        .iter()
        .flat_map(|&id| {
            let (v, a, d) = res.vad(id);
            [v, a, d]
        })
        .collect();
    Tensor::new(&[batch.size, batch.context_len, 3], data).expect("B * L * 3 values")
}

/// Per-token IDF, `[B, L, 1]`; zero at padding.
pub fn idf_features(batch: &Batch, res: &Resources) -> Tensor {
    let data = batch.context_ids.iter().map(|&id| res.idf.get(id)).collect();
    Tensor::new(&[batch.size, batch.context_len, 1], data).expect("B * L values")
}

/// `V_t = vad ⊕ idf ⊕ H̃`.
pub fn build_trait<'g>(vad: Var<'g>, idf: Var<'g>, compressed: Var<'g>) -> Result<Var<'g>> {
    Ok(Var::concat(&[vad, idf, compressed])?)
}

/// `V_s = cos ⊕ idf ⊕ H̃`.
pub fn build_state<'g>(cos: Var<'g>, idf: Var<'g>, compressed: Var<'g>) -> Result<Var<'g>> {
    Ok(Var::concat(&[cos, idf, compressed])?)
}

/// Cosine similarity of every projected context position against every
/// projected emotion-word embedding: `[B, L, d] x [E, d] -> [B, L, E]`.
pub fn state_inclination<'g>(
    g: &'g Graph<'g>,
    context: Var<'g>,
    emotion_words: Var<'g>,
    context_proj: &Linear,
    emotion_proj: &Linear,
) -> Result<Var<'g>> {
    let s = context.shape();
    let c = context_proj.forward(g, context.reshape(&[s[0] * s[1], s[2]])?)?;
    let e = emotion_proj.forward(g, emotion_words)?;
    let k = e.shape()[0];
    Ok(c.cosine_similarity(e)?.reshape(&[s[0], s[1], k])?)
}

/// Embeddings of the emotion label words, mean-pooled over multi-token
/// labels: `avg [E, n] @ table[ids] -> [E, d]`.
pub fn emotion_word_embeddings<'g>(g: &'g Graph<'g>, ids: &[usize], avg: &Tensor) -> Result<Var<'g>> {
    let rows = g.param(super::context::WORD_EMBEDDING)?.embedding(ids, &[ids.len()])?;
    Ok(g.constant(avg.clone()).matmul(rows)?)
}

/// Raw emotion intensity of one VAD triple: `‖(v − 0.5, a / 2)‖`.
pub fn raw_intensity((v, a, _): (f64, f64, f64)) -> f64 {
    ((v - 0.5).powi(2) + (a / 2.0).powi(2)).sqrt()
}

/// Intensities min-max normalized over each row's non-pad positions, `[B * L]`.
/// A row whose values are all equal (including a single token) gets 1
/// everywhere. Padding positions hold 0 and are masked downstream.
pub fn intensity(batch: &Batch, res: &Resources) -> Vec<f64> {
    let l = batch.context_len;
    let mut out = vec![0.0; batch.size * l];
    for b in 0..batch.size {
        let range = b * l..(b + 1) * l;
        let raw: Vec<Option<f64>> = range
            .clone()
            .map(|p| batch.pad_mask[p].then(|| raw_intensity(res.vad(batch.context_ids[p]))))
            .collect();
        let vals = raw.iter().flatten();
        let lo = vals.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.copied().fold(f64::NEG_INFINITY, f64::max);
        for (i, r) in raw.iter().enumerate() {
            if let Some(x) = r {
                out[b * l + i] = if hi > lo { (x - lo) / (hi - lo) } else { 1.0 };
            }
        }
    }
    out
}

/// Softmax of the intensities over non-pad positions, `[B, L]`.
pub fn intensity_weights<'g>(g: &'g Graph<'g>, batch: &Batch, res: &Resources) -> Result<Var<'g>> {
    let i = Tensor::new(&[batch.size, batch.context_len], intensity(batch, res))?;
    Ok(g.constant(i).softmax(Some(&batch.pad_mask))?)
}

pub(crate) fn label_averaging(ids_per_label: &[Vec<usize>]) -> (Vec<usize>, Tensor) {
    let n: usize = ids_per_label.iter().map(Vec::len).sum();
    let mut avg = vec![0.0; NUM_EMOTIONS * n];
    let mut ids = Vec::with_capacity(n);
    for (k, label_ids) in ids_per_label.iter().enumerate() {
        for &id in label_ids {
            avg[k * n + ids.len()] = 1.0 / label_ids.len() as f64;
            ids.push(id);
        }
    }
    (ids, Tensor::new(&[NUM_EMOTIONS, n], avg).expect("E * n values"))
}
