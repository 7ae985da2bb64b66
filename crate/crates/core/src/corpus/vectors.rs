use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Pretrained word vectors of one uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Data(format!(
                "vector for {word:?} has dimension {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }
}

pub fn load_vectors(path: impl AsRef<Path>, dim: usize) -> Result<WordVectors> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_vectors(BufReader::new(file), dim, &path.display().to_string())
}

/// Parses `word v1 ... vd` lines. A leading `count dim` header is skipped.
pub fn parse_vectors<R: BufRead>(reader: R, dim: usize, source: &str) -> Result<WordVectors> {
    let mut out = WordVectors::new(dim);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
            continue;
        }
        let err = |msg: String| Error::Record {
            path: source.to_string(),
            line: i + 1,
            msg,
        };
        let vector = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(format!("bad value for {word:?}: {e}")))?;
        out.insert(word, vector).map_err(|e| err(e.to_string()))?;
    }
    Ok(out)
}
