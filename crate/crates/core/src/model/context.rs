//! Context embedding, the context encoder, and the per-role enrichment blocks.

use empathy_nn::layers::{sinusoidal_positions, AttentionMask, FeedForward, LayerNorm, MultiHeadAttention};
use empathy_nn::{Graph, ParameterStore, Tensor, Var};
use rand::Rng;

use crate::corpus::{Batch, SYS, USR};
use crate::error::{Error, Result};

pub const WORD_EMBEDDING: &str = "embed.word";
pub const STATE_EMBEDDING: &str = "embed.state";

/// Row of the dialogue-state table for a state id; 0 is the zero padding row.
pub fn state_role(id: usize) -> usize {
    match id {
        USR => 1,
        SYS => 2,
        _ => 0,
    }
}

/// Positional rows for `ids`, shape `[ids.len(), d]`.
pub fn position_table(ids: &[usize], d: usize) -> Tensor {
    let max = ids.iter().copied().max().map_or(0, |m| m + 1);
    let table = sinusoidal_positions(max, d);
    let mut data = Vec::with_capacity(ids.len() * d);
    for &p in ids {
        data.extend_from_slice(table.row(p));
    }
    Tensor::new(&[ids.len(), d], data).expect("ids * d values")
}

/// Word embeddings plus sinusoidal positions for a `[B, T]` id grid.
pub fn embed_tokens<'g>(g: &'g Graph<'g>, ids: &[usize], batch: usize, len: usize) -> Result<Var<'g>> {
    let word = g.param(WORD_EMBEDDING)?.embedding(ids, &[batch, len])?;
    let d = word.shape()[2];
    let positions: Vec<usize> = (0..batch * len).map(|i| i % len).collect();
    let pos = position_table(&positions, d).reshaped(&[batch, len, d])?;
    Ok(word.add(g.constant(pos))?)
}

/// `E_C`: word + position + dialogue-state embeddings, `[B, L, d]`.
pub fn embed_context<'g>(g: &'g Graph<'g>, batch: &Batch) -> Result<Var<'g>> {
    let shape = [batch.size, batch.context_len];
    let word = g.param(WORD_EMBEDDING)?.embedding(&batch.context_ids, &shape)?;
    let d = word.shape()[2];
    let pos = position_table(&batch.position_ids, d).reshaped(&[batch.size, batch.context_len, d])?;
    let roles: Vec<usize> = batch.dialogue_state_ids.iter().map(|&s| state_role(s)).collect();
    let state = g.param(STATE_EMBEDDING)?.embedding(&roles, &shape)?;
    Ok(word.add(g.constant(pos))?.add(state)?)
}

/// Role-specific refinement of the encoded context: cross-attention over
/// optional inference features, then a feed-forward block, both residual.
/// Output projections start at zero, so a fresh block is the identity.
#[derive(Debug, Clone)]
pub struct Enricher {
    pub dim: usize,
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl Enricher {
    pub fn new(name: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            dim,
            norm_attn: LayerNorm::new(format!("{name}.norm_attn"), dim),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads)?,
            norm_ff: LayerNorm::new(format!("{name}.norm_ff"), dim),
            ff: FeedForward::new(&format!("{name}.ff"), dim, hidden),
        })
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.norm_attn.register(store)?;
        self.attn.register_identity(store, rng)?;
        self.norm_ff.register(store)?;
        self.ff.register_identity(store, rng)?;
        Ok(())
    }

    /// `h: [B, L, d]`; `features: [B, K, d]` with a `[B * K]` keep mask.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<'g>,
        h: Var<'g>,
        features: Option<(Var<'g>, &[bool])>,
    ) -> Result<Var<'g>> {
        let mut h = h;
        if let Some((f, keep)) = features {
            let (hs, fs) = (h.shape(), f.shape());
            if fs.len() != 3 || fs[2] != self.dim {
                return Err(Error::Data(format!(
                    "inference feature dim {} != model dim {}",
                    fs.last().copied().unwrap_or(0),
                    self.dim
                )));
            }
            if fs[1] > 0 {
                let mask = AttentionMask::padding(keep, hs[0], hs[1]);
                let n = self.norm_attn.forward(g, h)?;
                let (a, _) = self.attn.forward(g, n, f, &mask)?;
                h = h.add(a)?;
            }
        }
        let n = self.norm_ff.forward(g, h)?;
        Ok(h.add(self.ff.forward(g, n)?)?)
    }
}
