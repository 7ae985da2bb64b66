use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SOS: usize = 3;
pub const EOS: usize = 4;
/// Dialogue-state token for the speaker's turns.
pub const USR: usize = 5;
/// Dialogue-state token for the listener's turns.
pub const SYS: usize = 6;

pub const RESERVED: [&str; 7] = ["[PAD]", "[UNK]", "[CLS]", "[SOS]", "[EOS]", "[USR]", "[SYS]"];

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Bijective token/id map. Reserved tokens take ids `0..7`; everything else
/// is numbered by first occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from(Vec::new())
    }
}

impl From<Vec<String>> for Vocabulary {
    /// Reserved tokens are always placed first; duplicates are dropped.
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens) {
            v.insert(&t);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    /// Adds `token` if new; returns its id either way.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new();
        assert_eq!(v.len(), 7);
        assert_eq!(v.get("[PAD]"), Some(PAD));
        assert_eq!(v.get("[SYS]"), Some(SYS));
        assert_eq!(v.id("nope"), UNK);
    }

    #[test]
    fn first_occurrence_order() {
        let v = Vocabulary::build(["b", "a", "b", "c"]);
        assert_eq!(&v.tokens()[7..], &["b", "a", "c"]);
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize(words in prop::collection::vec("[a-zA-Z!?.']{1,6}", 1..8), seps in prop::collection::vec("[ \t]{1,3}", 8)) {
            let text: String = words.iter().zip(&seps).map(|(w, s)| format!("{w}{s}")).collect();
            let v = Vocabulary::build(tokenize(&text));
            let normalized = words.iter().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(v.decode(&v.encode(&text)), normalized);
        }

        #[test]
        fn build_is_deterministic(words in prop::collection::vec("[a-z]{1,4}", 0..30)) {
            prop_assert_eq!(Vocabulary::build(&words), Vocabulary::build(&words));
        }
    }
}
