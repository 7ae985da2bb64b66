use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of emotion categories.
pub const NUM_EMOTIONS: usize = 32;

/// The emotion label strings, sorted; a label's position is its id.
pub const EMOTION_LABELS: [&str; NUM_EMOTIONS] = [
    "afraid",
    "angry",
    "annoyed",
    "anticipating",
    "anxious",
    "apprehensive",
    "ashamed",
    "caring",
    "confident",
    "content",
    "devastated",
    "disappointed",
    "disgusted",
    "embarrassed",
    "excited",
    "faithful",
    "furious",
    "grateful",
    "guilty",
    "hopeful",
    "impressed",
    "jealous",
    "joyful",
    "lonely",
    "nostalgic",
    "prepared",
    "proud",
    "sad",
    "sentimental",
    "surprised",
    "terrified",
    "trusting",
];

/// A dialogue-level emotion category, `0..32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Emotion(u8);

impl Emotion {
    pub fn new(id: usize) -> Option<Self> {
        (id < NUM_EMOTIONS).then_some(Self(id as u8))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn label(self) -> &'static str {
        EMOTION_LABELS[self.id()]
    }

    pub fn all() -> impl Iterator<Item = Emotion> {
        (0..NUM_EMOTIONS).map(|i| Emotion(i as u8))
    }
}

impl TryFrom<usize> for Emotion {
    type Error = String;

    fn try_from(id: usize) -> Result<Self, String> {
        Emotion::new(id).ok_or_else(|| format!("emotion id {id} out of range"))
    }
}

impl From<Emotion> for usize {
    fn from(e: Emotion) -> usize {
        e.id()
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownEmotion(pub String);

impl fmt::Display for UnknownEmotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown emotion `{}`; expected one of: {}",
            self.0,
            EMOTION_LABELS.join(", ")
        )
    }
}

impl FromStr for Emotion {
    type Err = UnknownEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase();
        EMOTION_LABELS
            .binary_search(&key.as_str())
            .map(|i| Emotion(i as u8))
            .map_err(|_| UnknownEmotion(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_sorted_and_unique() {
        assert!(EMOTION_LABELS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn parse_round_trips() {
        for e in Emotion::all() {
            assert_eq!(e.label().parse::<Emotion>().unwrap(), e);
        }
        assert_eq!("Proud".parse::<Emotion>().unwrap().label(), "proud");
    }

    #[test]
    fn unknown_label_lists_valid_ones() {
        let msg = "elated".parse::<Emotion>().unwrap_err().to_string();
        assert!(msg.contains("elated") && msg.contains("afraid") && msg.contains("trusting"));
    }
}
