//! Emotion accuracy, perplexity and Distinct-n.

use std::collections::HashSet;
use std::fmt;

use empathy_nn::Graph;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_batches, BatchSpec, Dialogue, Emotion};
use crate::error::Result;
use crate::model::generation::step_nll;
use crate::model::guidance::predict;
use crate::model::{generate, Generated, Model};

/// `100 · correct / N`; 0 for an empty set.
pub fn emotion_accuracy(predicted: &[usize], gold: &[usize]) -> f64 {
    assert_eq!(predicted.len(), gold.len(), "prediction and gold counts differ");
    if gold.is_empty() {
        return 0.0;
    }
    let correct = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    100.0 * correct as f64 / gold.len() as f64
}

/// Corpus-level Distinct-n: `100 · unique n-grams / total n-grams` pooled
/// over all responses; 0 when no response has `n` tokens.
pub fn distinct_n<S: AsRef<str>>(responses: &[Vec<S>], n: usize) -> f64 {
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        let toks: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
        for gram in toks.windows(n.max(1)) {
            total += 1;
            seen.insert(gram.to_vec());
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * seen.len() as f64 / total as f64
    }
}

/// Summed negative log-likelihood and token count under teacher forcing.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllTotals {
    pub nll: f64,
    pub tokens: usize,
}

impl NllTotals {
    pub fn perplexity(&self) -> f64 {
        (self.nll / self.tokens.max(1) as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub ppl: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub examples: usize,
    pub tokens: usize,
}

impl EvalReport {
    /// Machine-readable `key=value` lines.
    pub fn key_values(&self) -> String {
        format!(
            "acc={}\nppl={}\ndist1={}\ndist2={}\n",
            self.acc, self.ppl, self.dist1, self.dist2
        )
    }

    /// Parses the output of [`key_values`](Self::key_values) back into `(key, value)` pairs.
    pub fn parse_key_values(text: &str) -> Vec<(String, f64)> {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .filter_map(|(k, v)| Some((k.trim().to_string(), v.trim().parse().ok()?)))
            .collect()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "evaluated {} dialogues ({} reference tokens)",
            self.examples, self.tokens
        )?;
        writeln!(f, "  emotion accuracy  {:8.2} %", self.acc)?;
        writeln!(f, "  perplexity        {:8.3}", self.ppl)?;
        writeln!(f, "  distinct-1        {:8.2} %", self.dist1)?;
        write!(f, "  distinct-2        {:8.2} %", self.dist2)
    }
}

/// One line of the generation output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub context: Vec<String>,
    pub reference: String,
    pub generated: String,
    pub predicted_emotion: String,
    pub gold_emotion: String,
}

impl GenerationRecord {
    pub fn new(dialogue: &Dialogue, generated: &Generated) -> Self {
        Self {
            context: dialogue.context_words.iter().map(|u| u.join(" ")).collect(),
            reference: dialogue.target_words.join(" "),
            generated: generated.text(),
            predicted_emotion: Emotion::new(generated.emotion).map_or_else(String::new, |e| e.label().to_string()),
            gold_emotion: dialogue.emotion.label().to_string(),
        }
    }
}

/// Teacher-forced NLL totals over `dialogues`.
pub fn nll_totals(model: &Model, dialogues: &[Dialogue], spec: &BatchSpec) -> Result<NllTotals> {
    let mut totals = NllTotals::default();
    for batch in make_batches(dialogues, &model.vocab, spec, 0) {
        let g = Graph::new(&model.store);
        let enc = model.encode(&g, &batch)?;
        let dec = model.decode(&g, &batch, enc.h_stu)?;
        let nll = step_nll(dec.p_w, &batch.gold_ext())?.value();
        for (x, keep) in nll.data().iter().zip(batch.gold_mask()) {
            if keep {
                totals.nll += x;
                totals.tokens += 1;
            }
        }
    }
    Ok(totals)
}

/// `exp` of the token-mean teacher-forced NLL.
pub fn perplexity(model: &Model, dialogues: &[Dialogue], spec: &BatchSpec) -> Result<f64> {
    Ok(nll_totals(model, dialogues, spec)?.perplexity())
}

/// Student emotion predictions for every dialogue, in order.
pub fn predict_emotions(model: &Model, dialogues: &[Dialogue], spec: &BatchSpec) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(dialogues.len());
    for batch in make_batches(dialogues, &model.vocab, spec, 0) {
        let g = Graph::new(&model.store);
        let enc = model.encode(&g, &batch)?;
        out.extend(predict(&enc.student.probs.value()));
    }
    Ok(out)
}

/// Full evaluation: accuracy, perplexity, and Distinct-n of greedy responses.
pub fn evaluate(
    model: &Model,
    dialogues: &[Dialogue],
    spec: &BatchSpec,
    max_len: usize,
) -> Result<(EvalReport, Vec<GenerationRecord>)> {
    let spec = BatchSpec { shuffle: false, ..*spec };
    let totals = nll_totals(model, dialogues, &spec)?;
    let mut records = Vec::with_capacity(dialogues.len());
    let mut predicted = Vec::with_capacity(dialogues.len());
    let mut responses = Vec::with_capacity(dialogues.len());
    for batch in make_batches(dialogues, &model.vocab, &spec, 0) {
        for (gen, &ix) in generate(model, &batch, max_len)?.into_iter().zip(&batch.indices) {
            records.push(GenerationRecord::new(&dialogues[ix], &gen));
            predicted.push(gen.emotion);
            responses.push(gen.words);
        }
    }
    let gold: Vec<usize> = dialogues.iter().map(|d| d.emotion.id()).collect();
    let report = EvalReport {
        acc: emotion_accuracy(&predicted, &gold),
        ppl: totals.perplexity(),
        dist1: distinct_n(&responses, 1),
        dist2: distinct_n(&responses, 2),
        examples: dialogues.len(),
        tokens: totals.tokens,
    };
    Ok((report, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(rs: &[&str]) -> Vec<Vec<String>> {
        rs.iter().map(|r| r.split_whitespace().map(String::from).collect()).collect()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(emotion_accuracy(&[1, 2, 3], &[1, 2, 3]), 100.0);
        assert_eq!(emotion_accuracy(&[0, 0], &[1, 2]), 0.0);
        assert_eq!(emotion_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]), 75.0);
    }

    #[test]
    fn distinct_examples() {
        let d1 = distinct_n(&split(&["i am sad", "i am happy"]), 1);
        assert!((d1 - 400.0 / 6.0).abs() < 1e-12);
        assert!((distinct_n(&split(&["a a a"]), 1) - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(distinct_n(&split(&["ok", "ok", "ok", "ok"]), 1), 25.0);
        assert_eq!(distinct_n(&split(&["a", "b"]), 2), 0.0);
    }

    #[test]
    fn key_values_are_exactly_four() {
        let r = EvalReport {
            acc: 50.0,
            ppl: 3.5,
            dist1: 10.0,
            dist2: 20.0,
            examples: 2,
            tokens: 9,
        };
        let keys: Vec<String> = EvalReport::parse_key_values(&r.key_values()).into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, ["acc", "ppl", "dist1", "dist2"]);
    }
}
