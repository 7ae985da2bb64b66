use empathy_nn::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dialogue::Dialogue;
use super::vocab::{Vocabulary, CLS, EOS, PAD, SOS, SYS, UNK, USR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    pub batch_size: usize,
    /// Context length L including the leading [CLS].
    pub max_context_len: usize,
    /// Target length cap including [SOS] and [EOS].
    pub max_target_len: usize,
    pub shuffle: bool,
}

/// Padded, row-major view of a group of dialogues.
///
/// Context words that map to `[UNK]` get per-example extended ids
/// `|V| + k` in `context_ext_ids`, so the copy head can produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub context_len: usize,
    pub target_len: usize,
    /// Indices of the source dialogues, in row order.
    pub indices: Vec<usize>,
    pub context_ids: Vec<usize>,
    /// `[USR]`, `[SYS]` or `[PAD]` per context position.
    pub dialogue_state_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub pad_mask: Vec<bool>,
    pub emotion_labels: Vec<usize>,
    /// `[SOS] y [EOS]` padded to `target_len`.
    pub target_ids: Vec<usize>,
    pub context_ext_ids: Vec<usize>,
    pub target_ext_ids: Vec<usize>,
    /// Out-of-vocabulary context words per example, in extended-id order.
    pub oovs: Vec<Vec<String>>,
    pub vocab_size: usize,
    /// `[B, K, d]` when any example carries inference features.
    pub inference_features: Option<Tensor>,
    /// `[B * K]`, false for padding feature rows.
    pub feature_mask: Vec<bool>,
}

impl Batch {
    pub fn from_dialogues(
        dialogues: &[Dialogue],
        indices: &[usize],
        vocab: &Vocabulary,
        max_context_len: usize,
        max_target_len: usize,
    ) -> Self {
        assert!(max_context_len >= 2 && max_target_len >= 2);
        let b = indices.len();
        let l = max_context_len;
        let v = vocab.len();
        let mut context_ids = vec![PAD; b * l];
        let mut dialogue_state_ids = vec![PAD; b * l];
        let mut pad_mask = vec![false; b * l];
        let mut context_ext_ids = vec![PAD; b * l];
        let mut oovs = Vec::with_capacity(b);
        let mut targets = Vec::with_capacity(b);
        for (row, &ix) in indices.iter().enumerate() {
            let d = &dialogues[ix];
            let mut flat: Vec<(usize, &str, usize)> = Vec::new();
            for (u, (ids, words)) in d.context_utterances.iter().zip(&d.context_words).enumerate() {
                let state = if u % 2 == 0 { USR } else { SYS };
                flat.extend(ids.iter().zip(words).map(|(&id, w)| (id, w.as_str(), state)));
            }
            let keep = flat.len().min(l - 1);
            let flat = &flat[flat.len() - keep..];
            let base = row * l;
            context_ids[base] = CLS;
            context_ext_ids[base] = CLS;
            dialogue_state_ids[base] = flat.first().map_or(USR, |t| t.2);
            pad_mask[base] = true;
            let mut row_oovs: Vec<String> = Vec::new();
            for (i, &(id, word, state)) in flat.iter().enumerate() {
                let p = base + 1 + i;
                context_ids[p] = id;
                dialogue_state_ids[p] = state;
                pad_mask[p] = true;
                context_ext_ids[p] = if id == UNK {
                    let k = row_oovs.iter().position(|w| w == word).unwrap_or_else(|| {
                        row_oovs.push(word.to_string());
                        row_oovs.len() - 1
                    });
                    v + k
                } else {
                    id
                };
            }
            let n = d.target_response.len().min(max_target_len - 2);
            let mut ids = vec![SOS];
            let mut ext = vec![SOS];
            for (&id, w) in d.target_response[..n].iter().zip(&d.target_words) {
                ids.push(id);
                ext.push(match row_oovs.iter().position(|o| o == w) {
                    Some(k) if id == UNK => v + k,
                    _ => id,
                });
            }
            ids.push(EOS);
            ext.push(EOS);
            targets.push((ids, ext));
            oovs.push(row_oovs);
        }
        let t = targets.iter().map(|(ids, _)| ids.len()).max().unwrap_or(2);
        let mut target_ids = vec![PAD; b * t];
        let mut target_ext_ids = vec![PAD; b * t];
        for (row, (ids, ext)) in targets.iter().enumerate() {
            target_ids[row * t..row * t + ids.len()].copy_from_slice(ids);
            target_ext_ids[row * t..row * t + ext.len()].copy_from_slice(ext);
        }

        let feature_dim = indices
            .iter()
            .filter_map(|&i| dialogues[i].inference_features.as_ref())
            .find_map(|f| f.first().map(Vec::len));
        let (inference_features, feature_mask) = match feature_dim {
            Some(dim) => {
                let k = indices
                    .iter()
                    .map(|&i| dialogues[i].inference_features.as_ref().map_or(0, Vec::len))
                    .max()
                    .unwrap_or(0);
                let mut data = vec![0.0; b * k * dim];
                let mut mask = vec![false; b * k];
                for (row, &ix) in indices.iter().enumerate() {
                    for (j, f) in dialogues[ix].inference_features.iter().flatten().enumerate() {
                        let off = (row * k + j) * dim;
                        let n = f.len().min(dim);
                        data[off..off + n].copy_from_slice(&f[..n]);
                        mask[row * k + j] = true;
                    }
                }
                (Some(Tensor::new(&[b, k, dim], data).expect("feature shape")), mask)
            }
            None => (None, Vec::new()),
        };

        Batch {
            size: b,
            context_len: l,
            target_len: t,
            indices: indices.to_vec(),
            context_ids,
            dialogue_state_ids,
            position_ids: (0..b * l).map(|p| p % l).collect(),
            pad_mask,
            emotion_labels: indices.iter().map(|&i| dialogues[i].emotion.id()).collect(),
            target_ids,
            context_ext_ids,
            target_ext_ids,
            oovs,
            vocab_size: v,
            inference_features,
            feature_mask,
        }
    }

    /// Size of the extended vocabulary: `|V|` plus the largest per-example OOV count.
    pub fn extended_vocab_size(&self) -> usize {
        self.vocab_size + self.oovs.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of decoder steps (`target_len - 1`).
    pub fn steps(&self) -> usize {
        self.target_len - 1
    }

    /// Teacher-forced decoder inputs `[SOS] y`, shape `[B, steps]`.
    pub fn decoder_inputs(&self) -> Vec<usize> {
        self.shifted(&self.target_ids, 0)
    }

    /// Gold outputs `y [EOS]` over the extended vocabulary, shape `[B, steps]`.
    pub fn gold_ext(&self) -> Vec<usize> {
        self.shifted(&self.target_ext_ids, 1)
    }

    /// Non-pad mask of the gold outputs.
    pub fn gold_mask(&self) -> Vec<bool> {
        self.shifted(&self.target_ids, 1).iter().map(|&id| id != PAD).collect()
    }

    fn shifted(&self, ids: &[usize], start: usize) -> Vec<usize> {
        let t = self.target_len;
        (0..self.size)
            .flat_map(|b| ids[b * t + start..b * t + start + t - 1].iter().copied())
            .collect()
    }

    /// Number of real target tokens (including `[EOS]`) to be predicted.
    pub fn num_gold_tokens(&self) -> usize {
        self.gold_mask().iter().filter(|&&m| m).count()
    }
}

/// Groups dialogues into padded batches. With `shuffle` the order is a
/// seeded permutation; the final partial batch is kept.
pub fn make_batches(dialogues: &[Dialogue], vocab: &Vocabulary, spec: &BatchSpec, seed: u64) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..dialogues.len()).collect();
    if spec.shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(spec.batch_size.max(1))
        .map(|ix| Batch::from_dialogues(dialogues, ix, vocab, spec.max_context_len, spec.max_target_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Emotion;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build("a b c d e f g h prize won i".split(' '))
    }

    fn spec(batch_size: usize, l: usize) -> BatchSpec {
        BatchSpec {
            batch_size,
            max_context_len: l,
            max_target_len: 8,
            shuffle: true,
        }
    }

    #[test]
    fn layout_of_two_utterances() {
        let v = vocab();
        let d = Dialogue::from_text(&["a b c", "d e f"], "g h", Emotion::new(3).unwrap(), &v);
        let b = Batch::from_dialogues(&[d], &[0], &v, 10, 8);
        let ids: Vec<usize> = ["a", "b", "c", "d", "e", "f"].iter().map(|w| v.id(w)).collect();
        assert_eq!(b.context_ids[0], CLS);
        assert_eq!(&b.context_ids[1..7], ids.as_slice());
        assert_eq!(&b.context_ids[7..], &[PAD; 3]);
        assert_eq!(b.pad_mask, [[true; 7].as_slice(), &[false; 3]].concat());
        assert_eq!(&b.dialogue_state_ids[..7], &[USR, USR, USR, USR, SYS, SYS, SYS]);
        assert_eq!(b.target_ids, vec![SOS, v.id("g"), v.id("h"), EOS]);
        assert_eq!(b.decoder_inputs(), vec![SOS, v.id("g"), v.id("h")]);
        assert_eq!(b.gold_ext(), vec![v.id("g"), v.id("h"), EOS]);
    }

    #[test]
    fn truncation_drops_oldest_tokens() {
        let v = vocab();
        let d = Dialogue::from_text(&["a b c", "d e"], "g", Emotion::new(0).unwrap(), &v);
        let b = Batch::from_dialogues(&[d], &[0], &v, 4, 8);
        assert_eq!(b.context_ids, vec![CLS, v.id("c"), v.id("d"), v.id("e")]);
        assert_eq!(b.dialogue_state_ids, vec![USR, USR, SYS, SYS]);
    }

    #[test]
    fn oov_words_get_extended_ids() {
        let v = vocab();
        let d = Dialogue::from_text(&["i won a trophy trophy"], "a trophy", Emotion::new(0).unwrap(), &v);
        let b = Batch::from_dialogues(&[d], &[0], &v, 8, 8);
        assert_eq!(b.oovs, vec![vec!["trophy".to_string()]]);
        assert_eq!(b.context_ext_ids[4], v.len());
        assert_eq!(b.context_ext_ids[5], v.len());
        assert_eq!(b.target_ext_ids, vec![SOS, v.id("a"), v.len(), EOS]);
        assert_eq!(b.extended_vocab_size(), v.len() + 1);
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let v = vocab();
        let ds: Vec<Dialogue> = (0..5)
            .map(|i| Dialogue::from_text(&["a b"], "c", Emotion::new(i).unwrap(), &v))
            .collect();
        let bs = make_batches(&ds, &v, &spec(2, 6), 7);
        assert_eq!(bs.iter().map(|b| b.size).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(bs, make_batches(&ds, &v, &spec(2, 6), 7));
    }

    proptest! {
        #[test]
        fn unmasked_positions_hold_pad(
            lens in proptest::collection::vec(proptest::collection::vec(0usize..6, 1..4), 1..6),
            l in 2usize..12,
        ) {
            let v = vocab();
            let words: Vec<&str> = v.tokens()[7..].iter().map(String::as_str).collect();
            let ds: Vec<Dialogue> = lens
                .iter()
                .map(|utts| {
                    let text: Vec<String> = utts.iter().map(|&n| words[..n.max(1)].join(" ")).collect();
                    let refs: Vec<&str> = text.iter().map(String::as_str).collect();
                    Dialogue::from_text(&refs, "a b", Emotion::new(1).unwrap(), &v)
                })
                .collect();
            for b in make_batches(&ds, &v, &spec(2, l), 1) {
                for (id, keep) in b.context_ids.iter().zip(&b.pad_mask) {
                    prop_assert_eq!(*id == PAD, !keep);
                }
            }
        }
    }
}
