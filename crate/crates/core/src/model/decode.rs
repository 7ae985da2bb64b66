use empathy_nn::Graph;

use super::generation::DecodeInput;
use super::guidance::predict;
use super::Model;
use crate::corpus::{Batch, EOS, PAD, SOS, UNK};
use crate::error::Result;

/// One greedily decoded response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    /// Extended-vocabulary ids, without the closing [EOS].
    pub ids: Vec<usize>,
    /// Surface words; copied OOV ids are resolved to their source words.
    pub words: Vec<String>,
    /// Predicted emotion id.
    pub emotion: usize,
}

impl Generated {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

/// Greedy decoding of every context in `batch`, stopping at [EOS] or after
/// `max_len` tokens. The context is encoded once; each step re-runs the
/// decoder over the growing prefix.
pub fn generate(model: &Model, batch: &Batch, max_len: usize) -> Result<Vec<Generated>> {
    let g = Graph::new(&model.store);
    let enc = model.encode(&g, batch)?;
    let memory = enc.h_stu.value();
    let emotions = predict(&enc.student.probs.value());
    drop(g);

    let b = batch.size;
    let v = model.vocab.len();
    let ext_width = batch.extended_vocab_size();
    let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); b];
    let mut done = vec![false; b];
    for step in 0..max_len {
        if done.iter().all(|&d| d) {
            break;
        }
        let s = step + 1;
        let mut inputs = Vec::with_capacity(b * s);
        for (row, out) in outputs.iter().enumerate() {
            inputs.push(SOS);
            for i in 0..step {
                inputs.push(match out.get(i) {
                    Some(&id) if id < v => id,
                    Some(_) => UNK,
                    None if done[row] => PAD,
                    None => UNK,
                });
            }
        }
        let g = Graph::new(&model.store);
        let mem = g.constant(memory.clone());
        let dec = model.generator().forward(
            &g,
            mem,
            &DecodeInput {
                batch: b,
                steps: s,
                input_ids: &inputs,
                source_ext_ids: &batch.context_ext_ids,
                source_keep: &batch.pad_mask,
                ext_width,
                pgen_override: model.pgen_override,
            },
        )?;
        dec.p_w.with_value(|p| {
            for row in 0..b {
                if done[row] {
                    continue;
                }
                let probs = p.row(row * s + step);
                let mut best = 0;
                for (k, &x) in probs.iter().enumerate() {
                    if x > probs[best] {
                        best = k;
                    }
                }
                if best == EOS {
                    done[row] = true;
                } else {
                    outputs[row].push(best);
                }
            }
        });
    }
    Ok(outputs
        .into_iter()
        .enumerate()
        .map(|(row, ids)| {
            let words = ids
                .iter()
                .map(|&id| {
                    if id < v {
                        model.vocab.token(id).unwrap_or_default().to_string()
                    } else {
                        batch.oovs[row][id - v].clone()
                    }
                })
                .collect();
            Generated {
                ids,
                words,
                emotion: emotions[row],
            }
        })
        .collect())
}
