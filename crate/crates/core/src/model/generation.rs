//! Pointer-generator decoding, generation and diversity losses, and the
//! cross-contrastive objective.

use empathy_nn::layers::{Linear, StackDims, TransformerDecoder, TransformerEncoder};
use empathy_nn::{Graph, ParameterStore, Tensor, Var};
use rand::Rng;

use super::context::{embed_tokens, WORD_EMBEDDING};
use crate::corpus::{CLS, PAD, SOS, SYS, UNK, USR};
use crate::error::Result;

/// Vocabulary entries the generator may never emit.
pub const NEVER_GENERATED: [usize; 5] = [PAD, CLS, SOS, USR, SYS];

#[derive(Debug, Clone)]
pub struct PointerGenerator {
    pub dim: usize,
    pub vocab_size: usize,
    pub decoder: TransformerDecoder,
    pub vocab_out: Linear,
    pub copy_query: Linear,
    pub gate: Linear,
}

/// Decoder inputs for one pass.
#[derive(Debug, Clone, Copy)]
pub struct DecodeInput<'a> {
    pub batch: usize,
    pub steps: usize,
    /// `[B, S]` decoder input ids (in-vocabulary).
    pub input_ids: &'a [usize],
    /// `[B, L]` source ids over the extended vocabulary.
    pub source_ext_ids: &'a [usize],
    /// `[B, L]` source keep mask.
    pub source_keep: &'a [bool],
    /// Extended vocabulary width.
    pub ext_width: usize,
    /// Fixes the generation gate to a constant instead of the learned value.
    pub pgen_override: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderOutputs<'g> {
    /// `E_Y`, `[B, S, d]`.
    pub embedded: Var<'g>,
    pub states: Var<'g>,
    /// `[B, S, |V|]`.
    pub p_vocab: Var<'g>,
    /// Copy attention over source positions, `[B, S, L]`.
    pub attention: Var<'g>,
    /// `[B, S, 1]`.
    pub p_gen: Var<'g>,
    /// `[B, S, |V_ext|]`.
    pub p_w: Var<'g>,
}

impl PointerGenerator {
    pub fn new(name: &str, dims: StackDims, vocab_size: usize) -> Result<Self> {
        let d = dims.dim;
        Ok(Self {
            dim: d,
            vocab_size,
            decoder: TransformerDecoder::new(&format!("{name}.decoder"), dims)?,
            vocab_out: Linear::new(format!("{name}.vocab_out"), d, vocab_size, true),
            copy_query: Linear::new(format!("{name}.copy_query"), d, d, false),
            gate: Linear::new(format!("{name}.gate"), 3 * d, 1, true),
        })
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.decoder.register(store, rng)?;
        self.vocab_out.register(store, rng)?;
        self.copy_query.register(store, rng)?;
        self.gate.register(store, rng)?;
        Ok(())
    }

    /// Copy positions: real source tokens other than the leading [CLS].
    pub fn copy_keep(source_keep: &[bool], source_ids: &[usize]) -> Vec<bool> {
        source_keep.iter().zip(source_ids).map(|(&k, &id)| k && id != CLS).collect()
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, memory: Var<'g>, input: &DecodeInput<'_>) -> Result<DecoderOutputs<'g>> {
        let (b, s) = (input.batch, input.steps);
        let l = input.source_keep.len() / b.max(1);
        let embedded = embed_tokens(g, input.input_ids, b, s)?;
        let y_keep: Vec<bool> = input.input_ids.iter().map(|&id| id != PAD).collect();
        let states = self.decoder.forward(g, embedded, &y_keep, memory, input.source_keep)?;

        let vocab_keep: Vec<bool> = (0..b * s * self.vocab_size)
            .map(|i| !NEVER_GENERATED.contains(&(i % self.vocab_size)))
            .collect();
        let p_vocab = self.vocab_out.forward(g, states)?.softmax(Some(&vocab_keep))?;

        let copy_keep = Self::copy_keep(input.source_keep, input.source_ext_ids);
        let mut attn_keep = Vec::with_capacity(b * s * l);
        for bi in 0..b {
            for _ in 0..s {
                attn_keep.extend_from_slice(&copy_keep[bi * l..(bi + 1) * l]);
            }
        }
        let query = self.copy_query.forward(g, states)?;
        let attention = query
            .bmm(memory, true)?
            .scale(1.0 / (self.dim as f64).sqrt())
            .softmax(Some(&attn_keep))?;
        let context = attention.bmm(memory, false)?;

        let p_gen = match input.pgen_override {
            Some(p) => g.constant(Tensor::full(&[b, s, 1], p)),
            None => self
                .gate
                .forward(g, Var::concat(&[states, context, embedded])?)?
                .sigmoid(),
        };
        let generated = p_vocab.pad_last(input.ext_width)?.mul_col(p_gen)?;
        let copied = attention
            .scatter_add(input.source_ext_ids, input.ext_width)?
            .mul_col(p_gen.affine(-1.0, 1.0))?;
        Ok(DecoderOutputs {
            embedded,
            states,
            p_vocab,
            attention,
            p_gen,
            p_w: generated.add(copied)?,
        })
    }
}

/// `−ln P_w[gold]` per step, `[B * S]`.
pub fn step_nll<'g>(p_w: Var<'g>, gold: &[usize]) -> Result<Var<'g>> {
    let s = p_w.shape();
    Ok(p_w.reshape(&[s[0] * s[1], s[2]])?.pick(gold)?.ln().neg())
}

/// Mean of `nll` over kept steps, each step scaled by `weights`.
pub fn masked_mean<'g>(nll: Var<'g>, mask: &[bool], weights: Option<&[f64]>) -> Result<Var<'g>> {
    let count = mask.iter().filter(|&&m| m).count().max(1) as f64;
    let w: Vec<f64> = mask
        .iter()
        .enumerate()
        .map(|(i, &m)| if m { weights.map_or(1.0, |w| w[i]) / count } else { 0.0 })
        .collect();
    let w = nll.graph().constant(Tensor::new(&[w.len()], w)?);
    Ok(nll.mul(w)?.sum())
}

/// `L_g`: mean negative log-likelihood over non-pad gold steps.
pub fn generation_loss<'g>(p_w: Var<'g>, gold: &[usize], mask: &[bool]) -> Result<Var<'g>> {
    masked_mean(step_nll(p_w, gold)?, mask, None)
}

/// Per-step diversity weights: `1 − freq(t) / Σ freq`, rescaled to mean 1
/// over the kept steps. Ids without a frequency (copied OOV words) count as
/// unseen.
pub fn diversity_weights(gold: &[usize], mask: &[bool], freqs: &[f64]) -> Vec<f64> {
    let total: f64 = freqs.iter().sum();
    let raw: Vec<f64> = gold
        .iter()
        .map(|&t| {
            let f = freqs.get(t).copied().unwrap_or(0.0);
            if total > 0.0 {
                1.0 - f / total
            } else {
                1.0
            }
        })
        .collect();
    let (sum, n) = raw
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (w, _)| (s + w, n + 1));
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    raw.iter()
        .zip(mask)
        .map(|(w, &m)| match (m, mean > 0.0) {
            (false, _) => 0.0,
            (true, true) => w / mean,
            (true, false) => 1.0,
        })
        .collect()
}

/// `L_div`: frequency-weighted negative log-likelihood.
pub fn diversity_loss<'g>(p_w: Var<'g>, gold: &[usize], mask: &[bool], freqs: &[f64]) -> Result<Var<'g>> {
    let w = diversity_weights(gold, mask, freqs);
    masked_mean(step_nll(p_w, gold)?, mask, Some(&w))
}

/// The four representations compared by the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum View {
    /// Student context encoding.
    Context,
    /// Encoded reference response.
    Response,
    /// Trait and state emotion encodings.
    Emotion,
    /// Generated word distribution.
    Words,
}

/// Positive pairings. Context and emotion are never paired.
pub const POSITIVE_PAIRS: [(View, View); 5] = [
    (View::Response, View::Emotion),
    (View::Context, View::Words),
    (View::Context, View::Response),
    (View::Emotion, View::Words),
    (View::Response, View::Words),
];

#[derive(Debug, Clone)]
pub struct Contrastive {
    pub response_encoder: TransformerEncoder,
    pub context: Linear,
    pub response: Linear,
    pub emotion: Option<Linear>,
    pub words: Linear,
}

/// Pooled, projected, unit-normalized views, each `[B, d_cl]`.
#[derive(Debug, Clone, Copy)]
pub struct Views<'g> {
    pub context: Var<'g>,
    pub response: Var<'g>,
    pub emotion: Option<Var<'g>>,
    pub words: Var<'g>,
}

impl<'g> Views<'g> {
    pub fn get(&self, v: View) -> Option<Var<'g>> {
        match v {
            View::Context => Some(self.context),
            View::Response => Some(self.response),
            View::Emotion => self.emotion,
            View::Words => Some(self.words),
        }
    }
}

/// Mean similarities of positive and negative pairs in the last batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ContrastStats {
    pub positive: f64,
    pub negative: f64,
}

impl Contrastive {
    pub fn new(name: &str, dims: StackDims, emotion_dim: usize, d_cl: usize) -> Result<Self> {
        let d = dims.dim;
        Ok(Self {
            response_encoder: TransformerEncoder::new(&format!("{name}.response_encoder"), dims)?,
            context: Linear::new(format!("{name}.proj_context"), d, d_cl, true),
            response: Linear::new(format!("{name}.proj_response"), d, d_cl, true),
            emotion: (emotion_dim > 0).then(|| Linear::new(format!("{name}.proj_emotion"), emotion_dim, d_cl, true)),
            words: Linear::new(format!("{name}.proj_words"), d, d_cl, true),
        })
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.response_encoder.register(store, rng)?;
        self.context.register(store, rng)?;
        self.response.register(store, rng)?;
        if let Some(e) = &self.emotion {
            e.register(store, rng)?;
        }
        self.words.register(store, rng)?;
        Ok(())
    }

    /// Builds the views. `embedded` is the decoder input embedding with its
    /// keep mask; `p_w` is pooled over the gold-step mask.
    #[allow(clippy::too_many_arguments)]
    pub fn views<'g>(
        &self,
        g: &'g Graph<'g>,
        context: Var<'g>,
        context_keep: &[bool],
        embedded: Var<'g>,
        embedded_keep: &[bool],
        emotion: Option<Var<'g>>,
        p_w: Var<'g>,
        step_keep: &[bool],
        vocab_size: usize,
    ) -> Result<Views<'g>> {
        let project = |lin: &Linear, x: Var<'g>, keep: &[bool]| -> Result<Var<'g>> {
            Ok(lin.forward(g, mean_pool(x, keep)?)?.row_normalize())
        };
        let encoded = self.response_encoder.forward(g, embedded, embedded_keep)?;
        let words = expected_embedding(g, p_w, vocab_size)?;
        Ok(Views {
            context: project(&self.context, context, context_keep)?,
            response: project(&self.response, encoded, embedded_keep)?,
            emotion: match (&self.emotion, emotion) {
                (Some(lin), Some(e)) => Some(project(lin, e, context_keep)?),
                _ => None,
            },
            words: project(&self.words, words, step_keep)?,
        })
    }
}

/// Mean over kept positions: `[B, T, n]` to `[B, n]`.
pub fn mean_pool<'g>(x: Var<'g>, keep: &[bool]) -> Result<Var<'g>> {
    let s = x.shape();
    let (b, t) = (s[0], s[1]);
    let mut w = vec![0.0; b * t];
    for bi in 0..b {
        let n = keep[bi * t..(bi + 1) * t].iter().filter(|&&k| k).count().max(1) as f64;
        for ti in 0..t {
            if keep[bi * t + ti] {
                w[bi * t + ti] = 1.0 / n;
            }
        }
    }
    let w = x.graph().constant(Tensor::new(&[b, 1, t], w)?);
    Ok(w.bmm(x, false)?.reshape(&[b, s[2]])?)
}

/// Probability-weighted word embedding per step: `P_w @ M`, where rows
/// beyond the vocabulary (copied OOV words) use the [UNK] embedding.
pub fn expected_embedding<'g>(g: &'g Graph<'g>, p_w: Var<'g>, vocab_size: usize) -> Result<Var<'g>> {
    let width = *p_w.shape().last().expect("p_w is 3-d");
    let ids: Vec<usize> = (0..width).map(|i| if i < vocab_size { i } else { UNK }).collect();
    let rows = g.param(WORD_EMBEDDING)?.embedding(&ids, &[width])?;
    Ok(p_w.matmul(rows)?)
}

/// InfoNCE with in-batch negatives: row `i` of `anchor` must pick row `i`
/// of `positive` among all rows, at temperature `tau`.
pub fn info_nce<'g>(anchor: Var<'g>, positive: Var<'g>, tau: f64) -> Result<Var<'g>> {
    let logits = similarity(anchor, positive)?.scale(1.0 / tau);
    let b = logits.shape()[0];
    let diag: Vec<usize> = (0..b).collect();
    Ok(logits.softmax(None)?.pick(&diag)?.ln().mean().neg())
}

/// Dot products of every row pair, `[B, k] x [B, k] -> [B, B]`.
pub fn similarity<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let (sa, sb) = (a.shape(), b.shape());
    Ok(a.reshape(&[1, sa[0], sa[1]])?
        .bmm(b.reshape(&[1, sb[0], sb[1]])?, true)?
        .reshape(&[sa[0], sb[0]])?)
}

/// Average InfoNCE over the available positive pairs, with pair statistics.
/// Returns `None` for a single-example batch, which has no negatives.
pub fn ccl_loss<'g>(views: &Views<'g>, tau: f64) -> Result<Option<(Var<'g>, ContrastStats)>> {
    let b = views.context.shape()[0];
    if b < 2 {
        log::warn!("contrastive loss skipped: batch of {b} has no negatives");
        return Ok(None);
    }
    let mut terms = Vec::new();
    let (mut pos, mut neg, mut npos, mut nneg) = (0.0, 0.0, 0usize, 0usize);
    for (p, q) in POSITIVE_PAIRS {
        let (Some(a), Some(c)) = (views.get(p), views.get(q)) else { continue };
        similarity(a, c)?.with_value(|s| {
            for i in 0..b {
                for j in 0..b {
                    if i == j {
                        pos += s.row(i)[j];
                        npos += 1;
                    } else {
                        neg += s.row(i)[j];
                        nneg += 1;
                    }
                }
            }
        });
        terms.push(info_nce(a, c, tau)?);
    }
    let Some(first) = terms.first().copied() else { return Ok(None) };
    let mut total = first;
    for t in &terms[1..] {
        total = total.add(*t)?;
    }
    let stats = ContrastStats {
        positive: pos / npos.max(1) as f64,
        negative: neg / nneg.max(1) as f64,
    };
    Ok(Some((total.scale(1.0 / terms.len() as f64), stats)))
}

/// `L = γ₁ L_e + γ₂ L_g + γ₃ L_ccl + γ₄ L_div`; an absent contrastive term counts as 0.
pub fn total_loss<'g>(
    l_e: Var<'g>,
    l_g: Var<'g>,
    l_ccl: Option<Var<'g>>,
    l_div: Var<'g>,
    gamma: [f64; 4],
) -> Result<Var<'g>> {
    let mut total = l_e.scale(gamma[0]).add(l_g.scale(gamma[1]))?.add(l_div.scale(gamma[3]))?;
    if let Some(c) = l_ccl {
        total = total.add(c.scale(gamma[2]))?;
    }
    Ok(total)
}
