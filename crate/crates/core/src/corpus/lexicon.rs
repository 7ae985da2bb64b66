use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Valence, arousal, dominance.
pub type Vad = (f64, f64, f64);

/// Neutral triple returned for words the lexicon does not cover.
pub const DEFAULT_VAD: Vad = (0.0, 0.5, 0.0);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VadLexicon {
    entries: HashMap<String, Vad>,
}

impl VadLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an entry, rejecting components outside `[0, 1]`.
    pub fn insert(&mut self, word: &str, vad: Vad) -> Result<()> {
        let (v, a, d) = vad;
        if ![v, a, d].iter().all(|x| (0.0..=1.0).contains(x)) {
            return Err(Error::Data(format!(
                "VAD value for {word:?} outside [0,1]: ({v}, {a}, {d})"
            )));
        }
        self.entries.insert(word.to_lowercase(), vad);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<Vad> {
        self.entries.get(word).copied()
    }

    pub fn lookup(&self, word: &str) -> Vad {
        self.get(word).unwrap_or(DEFAULT_VAD)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

pub fn load_vad(path: impl AsRef<Path>) -> Result<VadLexicon> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_vad(BufReader::new(file), &path.display().to_string())
}

/// Parses `word<TAB>V<TAB>A<TAB>D` lines. A first line whose values are not
/// numeric is taken as a header and skipped.
pub fn parse_vad<R: BufRead>(reader: R, source: &str) -> Result<VadLexicon> {
    let mut lex = VadLexicon::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Record {
            path: source.to_string(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let values: std::result::Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.trim().parse::<f64>()).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(err(format!("bad value for {:?}: {e}", fields[0]))),
        };
        lex.insert(fields[0].trim(), (values[0], values[1], values[2]))
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(lex)
}
