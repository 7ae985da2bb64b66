use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::emotion::Emotion;
use super::vocab::{tokenize, Vocabulary};
use crate::error::{Error, Result};

/// One line of a dialogue file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub context: Vec<String>,
    pub target: String,
    pub emotion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub situation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<Vec<Vec<f64>>>,
}

/// A multi-turn context, its reference response and its emotion label.
///
/// Token ids and surface words are kept side by side: words that map to
/// `[UNK]` under a reused vocabulary can still be copied into a response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub context_utterances: Vec<Vec<usize>>,
    pub context_words: Vec<Vec<String>>,
    pub target_response: Vec<usize>,
    pub target_words: Vec<String>,
    pub emotion: Emotion,
    pub situation: Option<String>,
    pub inference_features: Option<Vec<Vec<f64>>>,
}

impl Dialogue {
    pub fn num_context_tokens(&self) -> usize {
        self.context_utterances.iter().map(Vec::len).sum()
    }

    /// Builds a dialogue from raw text with an existing vocabulary.
    pub fn from_text(context: &[&str], target: &str, emotion: Emotion, vocab: &Vocabulary) -> Self {
        let context_words: Vec<Vec<String>> = context.iter().map(|u| tokenize(u)).collect();
        let target_words = tokenize(target);
        Self {
            context_utterances: context_words
                .iter()
                .map(|u| u.iter().map(|w| vocab.id(w)).collect())
                .collect(),
            target_response: target_words.iter().map(|w| vocab.id(w)).collect(),
            context_words,
            target_words,
            emotion,
            situation: None,
            inference_features: None,
        }
    }
}

/// How [`load_dialogues`] obtains token ids.
#[derive(Debug, Clone, Copy)]
pub enum VocabMode<'a> {
    /// Grow a fresh vocabulary from this file (training split).
    Build,
    /// Look tokens up in an existing vocabulary; unknown words become `[UNK]`.
    Reuse(&'a Vocabulary),
}

pub fn load_dialogues(path: impl AsRef<Path>, mode: VocabMode<'_>) -> Result<(Vec<Dialogue>, Vocabulary)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dialogues(BufReader::new(file), &path.display().to_string(), mode)
}

/// Parses line-delimited JSON records. Blank lines are skipped; `source`
/// names the input in error messages.
pub fn parse_dialogues<R: BufRead>(
    reader: R,
    source: &str,
    mode: VocabMode<'_>,
) -> Result<(Vec<Dialogue>, Vocabulary)> {
    let mut vocab = match mode {
        VocabMode::Build => Vocabulary::new(),
        VocabMode::Reuse(v) => v.clone(),
    };
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Record {
            path: source.to_string(),
            line: lineno,
            msg,
        };
        let rec: DialogueRecord =
            serde_json::from_str(&line).map_err(|e| err(format!("malformed record: {e}")))?;
        let emotion: Emotion = rec.emotion.parse().map_err(|e: super::emotion::UnknownEmotion| err(e.to_string()))?;
        let context_words: Vec<Vec<String>> = rec.context.iter().map(|u| tokenize(u)).collect();
        if context_words.iter().all(Vec::is_empty) {
            return Err(err("empty context".into()));
        }
        let target_words = tokenize(&rec.target);
        let mut lookup = |w: &String| match mode {
            VocabMode::Build => vocab.insert(w),
            VocabMode::Reuse(_) => vocab.id(w),
        };
        let context_utterances = context_words
            .iter()
            .map(|u| u.iter().map(&mut lookup).collect())
            .collect();
        let target_response = target_words.iter().map(&mut lookup).collect();
        out.push(Dialogue {
            context_utterances,
            context_words,
            target_response,
            target_words,
            emotion,
            situation: rec.situation,
            inference_features: rec.inference,
        });
    }
    Ok((out, vocab))
}

#[derive(Debug, Deserialize)]
struct InferenceRecord {
    index: usize,
    inference: Vec<Vec<f64>>,
}

/// Attaches precomputed inference features from a line-delimited file of
/// `{"index": i, "inference": [[...], ...]}` records keyed by dialogue index.
pub fn load_inference_features(path: impl AsRef<Path>, dialogues: &mut [Dialogue], dim: usize) -> Result<()> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Record {
            path: source.clone(),
            line: i + 1,
            msg,
        };
        let rec: InferenceRecord =
            serde_json::from_str(&line).map_err(|e| err(format!("malformed record: {e}")))?;
        if let Some(bad) = rec.inference.iter().find(|v| v.len() != dim) {
            return Err(err(format!("feature dim {} != model dim {dim}", bad.len())));
        }
        let d = dialogues
            .get_mut(rec.index)
            .ok_or_else(|| err(format!("no dialogue with index {}", rec.index)))?;
        d.inference_features = Some(rec.inference);
    }
    Ok(())
}
