use std::collections::BTreeSet;

use super::dialogue::Dialogue;
use super::vocab::{Vocabulary, PAD};

/// Per-token inverse document frequency, indexed by vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: Vec<f64>,
}

impl IdfTable {
    pub fn from_weights(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    /// Weight of `id`; ids beyond the table (copy-extended words) count as [PAD].
    pub fn get(&self, id: usize) -> f64 {
        self.weights.get(id).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `ln(N / df)` per token, each dialogue (context and target) being one
/// document. Unseen tokens take `df = 1`.
pub fn compute_idf(dialogues: &[Dialogue], vocab: &Vocabulary) -> IdfTable {
    let n = dialogues.len().max(1) as f64;
    let mut df = vec![0usize; vocab.len()];
    for d in dialogues {
        let doc: BTreeSet<usize> = d
            .context_utterances
            .iter()
            .flatten()
            .chain(&d.target_response)
            .copied()
            .collect();
        for id in doc {
            if let Some(c) = df.get_mut(id) {
                *c += 1;
            }
        }
    }
    let mut weights: Vec<f64> = df.iter().map(|&c| (n / c.max(1) as f64).ln()).collect();
    if let Some(w) = weights.get_mut(PAD) {
        *w = 0.0;
    }
    IdfTable { weights }
}
