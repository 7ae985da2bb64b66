//! Transformer building blocks over a [`Graph`].
//!
//! Layers are plain descriptions (a name prefix plus dimensions). They
//! register their weights into a [`ParameterStore`] once and look them up by
//! name on every forward pass.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Xavier/Glorot uniform initialization.
pub fn xavier<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(&[fan_in, fan_out], bound, rng)
}

/// Fixed sinusoidal position table of shape `[len, d]`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[len, d], data).expect("len * d values")
}

/// Affine map `x W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
            bias,
        }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        store.register(self.weight_name(), xavier(self.in_dim, self.out_dim, rng))?;
        if self.bias {
            store.register(self.bias_name(), Tensor::zeros(&[self.out_dim]))?;
        }
        Ok(())
    }

    /// Registers an all-zero weight, so the layer initially outputs its bias.
    pub fn register_zeros(&self, store: &mut ParameterStore) -> Result<()> {
        store.register(self.weight_name(), Tensor::zeros(&[self.in_dim, self.out_dim]))?;
        if self.bias {
            store.register(self.bias_name(), Tensor::zeros(&[self.out_dim]))?;
        }
        Ok(())
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let y = x.matmul(g.param(&self.weight_name())?)?;
        if self.bias {
            y.add_row(g.param(&self.bias_name())?)
        } else {
            Ok(y)
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }

    pub fn register(&self, store: &mut ParameterStore) -> Result<()> {
        store.register(format!("{}.gamma", self.name), Tensor::full(&[self.dim], 1.0))?;
        store.register(format!("{}.beta", self.name), Tensor::zeros(&[self.dim]))
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.layer_norm(
            g.param(&format!("{}.gamma", self.name))?,
            g.param(&format!("{}.beta", self.name))?,
        )
    }
}

/// Position-wise `Linear -> ReLU -> Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            inner: Linear::new(format!("{name}.inner"), dim, hidden, true),
            outer: Linear::new(format!("{name}.outer"), hidden, dim, true),
        }
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.inner.register(store, rng)?;
        self.outer.register(store, rng)
    }

    /// Zero output projection: the block contributes nothing at init.
    pub fn register_identity<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.inner.register(store, rng)?;
        self.outer.register_zeros(store)
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.inner.forward(g, x)?.relu();
        self.outer.forward(g, h)
    }
}

/// Boolean attention mask of shape `[batch, queries, keys]`; `true` = may attend.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub batch: usize,
    pub queries: usize,
    pub keys: usize,
    pub allow: Vec<bool>,
}

impl AttentionMask {
    /// Every query may attend to every non-padding key.
    pub fn padding(key_keep: &[bool], batch: usize, queries: usize) -> Self {
        let keys = key_keep.len() / batch.max(1);
        let mut allow = Vec::with_capacity(batch * queries * keys);
        for b in 0..batch {
            for _ in 0..queries {
                allow.extend_from_slice(&key_keep[b * keys..(b + 1) * keys]);
            }
        }
        Self {
            batch,
            queries,
            keys,
            allow,
        }
    }

    /// Padding mask combined with a causal (no look-ahead) constraint.
    pub fn causal(key_keep: &[bool], batch: usize) -> Self {
        let keys = key_keep.len() / batch.max(1);
        let mut m = Self::padding(key_keep, batch, keys);
        for b in 0..batch {
            for q in 0..keys {
                for k in q + 1..keys {
                    m.allow[(b * keys + q) * keys + k] = false;
                }
            }
        }
        m
    }

    fn per_head(&self, heads: usize) -> Vec<bool> {
        let block = self.queries * self.keys;
        let mut out = Vec::with_capacity(self.allow.len() * heads);
        for b in 0..self.batch {
            for _ in 0..heads {
                out.extend_from_slice(&self.allow[b * block..(b + 1) * block]);
            }
        }
        out
    }
}

/// Scaled dot-product attention with several heads.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(NnError::Config(format!(
                "{name}: model dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            dim,
            heads,
            query: Linear::new(format!("{name}.query"), dim, dim, true),
            key: Linear::new(format!("{name}.key"), dim, dim, true),
            value: Linear::new(format!("{name}.value"), dim, dim, true),
            output: Linear::new(format!("{name}.output"), dim, dim, true),
        })
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.query.register(store, rng)?;
        self.key.register(store, rng)?;
        self.value.register(store, rng)?;
        self.output.register(store, rng)
    }

    /// Like [`register`](Self::register) but with a zero output projection.
    pub fn register_identity<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.query.register(store, rng)?;
        self.key.register(store, rng)?;
        self.value.register(store, rng)?;
        self.output.register_zeros(store)
    }

    fn split_heads<'g>(&self, x: Var<'g>, batch: usize, len: usize) -> Result<Var<'g>> {
        let dh = self.dim / self.heads;
        x.reshape(&[batch, len, self.heads, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * self.heads, len, dh])
    }

    /// Returns the attended output `[B, Tq, d]` and the attention weights
    /// `[B * heads, Tq, Tk]`.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<'g>,
        queries: Var<'g>,
        keys: Var<'g>,
        mask: &AttentionMask,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let (qs, ks) = (queries.shape(), keys.shape());
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.dim || ks[2] != self.dim {
            return Err(NnError::ShapeMismatch {
                op: "attention",
                lhs: qs,
                rhs: ks,
            });
        }
        let (b, tq, tk) = (qs[0], qs[1], ks[1]);
        if mask.batch != b || mask.queries != tq || mask.keys != tk {
            return Err(NnError::ShapeMismatch {
                op: "attention mask",
                lhs: vec![b, tq, tk],
                rhs: vec![mask.batch, mask.queries, mask.keys],
            });
        }
        let q = self.split_heads(self.query.forward(g, queries)?, b, tq)?;
        let k = self.split_heads(self.key.forward(g, keys)?, b, tk)?;
        let v = self.split_heads(self.value.forward(g, keys)?, b, tk)?;
        let dh = (self.dim / self.heads) as f64;
        let scores = q.bmm(k, true)?.scale(1.0 / dh.sqrt());
        let weights = scores.softmax(Some(&mask.per_head(self.heads)))?;
        let ctx = weights
            .bmm(v, false)?
            .reshape(&[b, self.heads, tq, self.dim / self.heads])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, tq, self.dim])?;
        Ok((self.output.forward(g, ctx)?, weights))
    }
}

/// Pre-norm encoder layer: self-attention then feed-forward, each residual.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

/// Shape of a transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackDims {
    pub dim: usize,
    pub heads: usize,
    pub hidden: usize,
    pub layers: usize,
}

/// Stack of [`EncoderLayer`]s with a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub dims: StackDims,
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl TransformerEncoder {
    pub fn new(name: &str, dims: StackDims) -> Result<Self> {
        let layers = (0..dims.layers)
            .map(|i| {
                let p = format!("{name}.layer{i}");
                Ok(EncoderLayer {
                    norm_attn: LayerNorm::new(format!("{p}.norm_attn"), dims.dim),
                    attn: MultiHeadAttention::new(&format!("{p}.attn"), dims.dim, dims.heads)?,
                    norm_ff: LayerNorm::new(format!("{p}.norm_ff"), dims.dim),
                    ff: FeedForward::new(&format!("{p}.ff"), dims.dim, dims.hidden),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims,
            layers,
            norm: LayerNorm::new(format!("{name}.norm"), dims.dim),
        })
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        for l in &self.layers {
            l.norm_attn.register(store)?;
            l.attn.register(store, rng)?;
            l.norm_ff.register(store)?;
            l.ff.register(store, rng)?;
        }
        self.norm.register(store)
    }

    /// `x: [B, L, d]`, `keep: [B * L]` with `false` at padding positions.
    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>, keep: &[bool]) -> Result<Var<'g>> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.dims.dim || keep.len() != s[0] * s[1] {
            return Err(NnError::ShapeMismatch {
                op: "transformer_encoder",
                lhs: s,
                rhs: vec![keep.len(), self.dims.dim],
            });
        }
        let mask = AttentionMask::padding(keep, s[0], s[1]);
        let mut h = x;
        for l in &self.layers {
            let n = l.norm_attn.forward(g, h)?;
            let (a, _) = l.attn.forward(g, n, n, &mask)?;
            h = h.add(a)?;
            let n = l.norm_ff.forward(g, h)?;
            h = h.add(l.ff.forward(g, n)?)?;
        }
        self.norm.forward(g, h)
    }
}

/// Pre-norm decoder layer: causal self-attention, cross-attention, feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct TransformerDecoder {
    pub dims: StackDims,
    pub layers: Vec<DecoderLayer>,
    pub norm: LayerNorm,
}

impl TransformerDecoder {
    pub fn new(name: &str, dims: StackDims) -> Result<Self> {
        let layers = (0..dims.layers)
            .map(|i| {
                let p = format!("{name}.layer{i}");
                Ok(DecoderLayer {
                    norm_self: LayerNorm::new(format!("{p}.norm_self"), dims.dim),
                    self_attn: MultiHeadAttention::new(&format!("{p}.self_attn"), dims.dim, dims.heads)?,
                    norm_cross: LayerNorm::new(format!("{p}.norm_cross"), dims.dim),
                    cross_attn: MultiHeadAttention::new(&format!("{p}.cross_attn"), dims.dim, dims.heads)?,
                    norm_ff: LayerNorm::new(format!("{p}.norm_ff"), dims.dim),
                    ff: FeedForward::new(&format!("{p}.ff"), dims.dim, dims.hidden),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims,
            layers,
            norm: LayerNorm::new(format!("{name}.norm"), dims.dim),
        })
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        for l in &self.layers {
            l.norm_self.register(store)?;
            l.self_attn.register(store, rng)?;
            l.norm_cross.register(store)?;
            l.cross_attn.register(store, rng)?;
            l.norm_ff.register(store)?;
            l.ff.register(store, rng)?;
        }
        self.norm.register(store)
    }

    /// `y: [B, T, d]` with `y_keep: [B * T]`; `memory: [B, L, d]` with
    /// `memory_keep: [B * L]`.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<'g>,
        y: Var<'g>,
        y_keep: &[bool],
        memory: Var<'g>,
        memory_keep: &[bool],
    ) -> Result<Var<'g>> {
        let (ys, ms) = (y.shape(), memory.shape());
        if ys.len() != 3 || ms.len() != 3 || ys[0] != ms[0] || ys[2] != self.dims.dim {
            return Err(NnError::ShapeMismatch {
                op: "transformer_decoder",
                lhs: ys,
                rhs: ms,
            });
        }
        let self_mask = AttentionMask::causal(y_keep, ys[0]);
        let cross_mask = AttentionMask::padding(memory_keep, ys[0], ys[1]);
        let mut h = y;
        for l in &self.layers {
            let n = l.norm_self.forward(g, h)?;
            let (a, _) = l.self_attn.forward(g, n, n, &self_mask)?;
            h = h.add(a)?;
            let n = l.norm_cross.forward(g, h)?;
            let (c, _) = l.cross_attn.forward(g, n, memory, &cross_mask)?;
            h = h.add(c)?;
            let n = l.norm_ff.forward(g, h)?;
            h = h.add(l.ff.forward(g, n)?)?;
        }
        self.norm.forward(g, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> StackDims {
        StackDims {
            dim: 4,
            heads: 2,
            hidden: 8,
            layers: 1,
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        let err = MultiHeadAttention::new("a", 6, 4).unwrap_err();
        assert!(matches!(err, NnError::Config(_)));
    }

    #[test]
    fn only_cls_visible_gets_all_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        let attn = MultiHeadAttention::new("a", 4, 2).unwrap();
        attn.register(&mut store, &mut rng).unwrap();
        let g = Graph::new(&store);
        let x = g.constant(Tensor::uniform(&[1, 3, 4], 1.0, &mut rng));
        let mask = AttentionMask::padding(&[true, false, false], 1, 3);
        let (_, w) = attn.forward(&g, x, x, &mask).unwrap();
        for row in w.value().data().chunks(3) {
            assert_eq!(row, &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn encoder_ignores_padding_content() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParameterStore::new();
        let enc = TransformerEncoder::new("enc", dims()).unwrap();
        enc.register(&mut store, &mut rng).unwrap();
        let keep = [true, true, false, false];
        let base = Tensor::uniform(&[1, 4, 4], 1.0, &mut rng);
        let mut swapped = base.clone();
        // swap the two padding positions
        let d = swapped.data_mut();
        for j in 0..4 {
            d.swap(2 * 4 + j, 3 * 4 + j);
        }
        let out = |t: Tensor| {
            let g = Graph::new(&store);
            enc.forward(&g, g.constant(t), &keep).unwrap().value()
        };
        let (a, b) = (out(base), out(swapped));
        assert_eq!(&a.data()[..8], &b.data()[..8]);
    }

    #[test]
    fn decoder_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        let dec = TransformerDecoder::new("dec", dims()).unwrap();
        dec.register(&mut store, &mut rng).unwrap();
        let mem = Tensor::uniform(&[1, 2, 4], 1.0, &mut rng);
        let y = Tensor::uniform(&[1, 3, 4], 1.0, &mut rng);
        let mut y2 = y.clone();
        y2.data_mut()[2 * 4] += 5.0;
        let run = |t: Tensor| {
            let g = Graph::new(&store);
            let m = g.constant(mem.clone());
            dec.forward(&g, g.constant(t), &[true; 3], m, &[true, true]).unwrap().value()
        };
        let (a, b) = (run(y), run(y2));
        assert_eq!(&a.data()[..8], &b.data()[..8]);
        assert_ne!(&a.data()[8..], &b.data()[8..]);
    }

    #[test]
    fn sinusoid_first_row() {
        let p = sinusoidal_positions(2, 4);
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((p.data()[4] - 1f64.sin()).abs() < 1e-15);
    }
}
