//! Intensity-pooled emotion predictors and the distillation losses.

use empathy_nn::layers::Linear;
use empathy_nn::{Graph, ParameterStore, Tensor, Var};
use rand::Rng;

use crate::corpus::NUM_EMOTIONS;
use crate::error::Result;

/// Emotion classifier over a `[B, L, d_v]` sequence:
/// pool by intensity weights, gate with a feature attention, classify.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub attn_hidden: Linear,
    pub attn_score: Linear,
    pub gate: Linear,
    pub out: Linear,
}

/// Intermediate tensors of one predictor pass.
#[derive(Debug, Clone, Copy)]
pub struct PredictorOutput<'g> {
    /// Pooled context, `[B, d_v]`.
    pub pooled: Var<'g>,
    /// Feature attention, `[B, d_v]`.
    pub attention: Var<'g>,
    /// Gated features, `[B, d_v]`.
    pub gated: Var<'g>,
    pub logits: Var<'g>,
    /// Emotion distribution, `[B, 32]`.
    pub probs: Var<'g>,
}

impl Predictor {
    pub fn new(name: &str, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            attn_hidden: Linear::new(format!("{name}.attn_hidden"), input_dim, hidden_dim, true),
            attn_score: Linear::new(format!("{name}.attn_score"), hidden_dim, input_dim, false),
            gate: Linear::new(format!("{name}.gate"), input_dim, input_dim, true),
            out: Linear::new(format!("{name}.out"), input_dim, NUM_EMOTIONS, true),
        }
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.attn_hidden.register(store, rng)?;
        self.attn_score.register(store, rng)?;
        self.gate.register(store, rng)?;
        self.out.register(store, rng)?;
        Ok(())
    }

    /// `features: [B, L, d_v]`, `weights: [B, L]` (rows summing to 1).
    pub fn forward<'g>(&self, g: &'g Graph<'g>, features: Var<'g>, weights: Var<'g>) -> Result<PredictorOutput<'g>> {
        let pooled = pool(features, weights)?;
        self.classify(g, pooled)
    }

    /// The part after pooling: attention, gate, output layer.
    pub fn classify<'g>(&self, g: &'g Graph<'g>, pooled: Var<'g>) -> Result<PredictorOutput<'g>> {
        let hidden = self.attn_hidden.forward(g, pooled)?.tanh();
        let attention = self.attn_score.forward(g, hidden)?.softmax(None)?;
        let gated = self.gate.forward(g, pooled.mul(attention)?)?.tanh();
        let logits = self.out.forward(g, gated)?;
        let probs = logits.softmax(None)?;
        Ok(PredictorOutput {
            pooled,
            attention,
            gated,
            logits,
            probs,
        })
    }
}

/// `Σ_i w[b, i] · x[b, i, :]`: `[B, L, n]` pooled to `[B, n]`.
pub fn pool<'g>(x: Var<'g>, weights: Var<'g>) -> Result<Var<'g>> {
    let s = x.shape();
    Ok(weights
        .reshape(&[s[0], 1, s[1]])?
        .bmm(x, false)?
        .reshape(&[s[0], s[2]])?)
}

/// Mean of `−ln p[b, y_b]`.
pub fn cross_entropy<'g>(probs: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    Ok(probs.ln().pick(labels)?.mean().neg())
}

/// Mean over rows of `−Σ_k target[k] · ln p[k]`. `target` should already be
/// detached when it must not receive gradient.
pub fn soft_cross_entropy<'g>(target: Var<'g>, probs: Var<'g>) -> Result<Var<'g>> {
    let rows = probs.shape()[0] as f64;
    Ok(target.mul(probs.ln())?.sum().scale(-1.0 / rows))
}

/// Distillation losses `(L_tchr, L_stu, L_e)`. The teacher distribution is
/// a stop-gradient soft target for the student.
pub fn guidance_losses<'g>(
    teacher: Var<'g>,
    student: Var<'g>,
    labels: &[usize],
) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
    let l_tchr = cross_entropy(teacher, labels)?;
    let l_stu = soft_cross_entropy(teacher.detach(), student)?;
    Ok((l_tchr, l_stu, l_tchr.add(l_stu)?))
}

/// Argmax of each row, lowest index on ties.
pub fn predict(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}
