//! Trait versus state polarity of words: valence threshold against
//! nearest group centroid in embedding space.

use std::io::Write;

use crate::corpus::{VadLexicon, WordVectors};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PolarityRecord {
    pub word: String,
    /// Positive trait polarity: valence above 0.5.
    pub trait_positive: bool,
    /// Positive state polarity: closer (by cosine) to the positive centroid.
    pub state_positive: bool,
    pub valence: f64,
    pub sim_pos: f64,
    pub sim_neg: f64,
}

impl PolarityRecord {
    pub fn discrepant(&self) -> bool {
        self.trait_positive != self.state_positive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyReport {
    pub records: Vec<PolarityRecord>,
    pub count: usize,
    /// Percentage of words whose two polarities disagree.
    pub proportion: f64,
}

/// `valence > 0.5` per word; words missing from the lexicon take the
/// default valence 0 and so come out negative.
pub fn trait_polarity<S: AsRef<str>>(lexicon: &VadLexicon, words: &[S]) -> Vec<TraitEntry> {
    words
        .iter()
        .map(|w| {
            let v = lexicon.lookup(w.as_ref()).0;
            (w.as_ref().to_string(), v, v > 0.5)
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn centroid<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        sum.iter_mut().zip(r).for_each(|(s, x)| *s += x);
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

/// Word, valence and trait polarity.
pub type TraitEntry = (String, f64, bool);

/// Compares each word's vector with the centroids of the positive and
/// negative trait groups. Words without a vector are skipped. An exact
/// similarity tie keeps the trait polarity.
pub fn state_polarity(vectors: &WordVectors, traits: &[TraitEntry]) -> Result<Vec<PolarityRecord>> {
    let covered: Vec<(&TraitEntry, &[f64])> = traits
        .iter()
        .filter_map(|t| vectors.get(&t.0).map(|v| (t, v)))
        .collect();
    let group = |positive: bool| centroid(covered.iter().filter(|(t, _)| t.2 == positive).map(|(_, v)| *v), vectors.dim());
    let pos = group(true).ok_or_else(|| Error::Data("no word has positive trait polarity".into()))?;
    let neg = group(false).ok_or_else(|| Error::Data("no word has negative trait polarity".into()))?;
    Ok(covered
        .into_iter()
        .map(|((word, valence, trait_positive), v)| {
            let (sim_pos, sim_neg) = (cosine(v, &pos), cosine(v, &neg));
            PolarityRecord {
                word: word.clone(),
                trait_positive: *trait_positive,
                state_positive: if sim_pos == sim_neg { *trait_positive } else { sim_pos > sim_neg },
                valence: *valence,
                sim_pos,
                sim_neg,
            }
        })
        .collect())
}

pub fn discrepancy_report(records: Vec<PolarityRecord>) -> DiscrepancyReport {
    let count = records.iter().filter(|r| r.discrepant()).count();
    let proportion = if records.is_empty() {
        0.0
    } else {
        100.0 * count as f64 / records.len() as f64
    };
    DiscrepancyReport {
        records,
        count,
        proportion,
    }
}

/// Trait polarity, state polarity and the discrepancy summary for `words`.
pub fn analyze<S: AsRef<str>>(lexicon: &VadLexicon, vectors: &WordVectors, words: &[S]) -> Result<DiscrepancyReport> {
    let traits = trait_polarity(lexicon, words);
    Ok(discrepancy_report(state_polarity(vectors, &traits)?))
}

impl DiscrepancyReport {
    /// Tab-separated `word P_t P_s valence sim_pos sim_neg` rows with a header.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "word\tP_t\tP_s\tvalence\tsim_pos\tsim_neg")?;
        for r in &self.records {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.word,
                u8::from(r.trait_positive),
                u8::from(r.state_positive),
                r.valence,
                r.sim_pos,
                r.sim_neg
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "discrepant words: {} of {} ({:.2}%)",
            self.count,
            self.records.len(),
            self.proportion
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon(entries: &[(&str, f64)]) -> VadLexicon {
        let mut lex = VadLexicon::new();
        for (w, v) in entries {
            lex.insert(w, (*v, 0.5, 0.5)).unwrap();
        }
        lex
    }

    fn vectors(entries: &[(&str, [f64; 2])]) -> WordVectors {
        let mut vs = WordVectors::new(2);
        for (w, v) in entries {
            vs.insert(w, v.to_vec()).unwrap();
        }
        vs
    }

    #[test]
    fn valence_threshold() {
        let lex = lexicon(&[("nice", 0.62), ("meh", 0.5)]);
        let t = trait_polarity(&lex, &["nice", "meh", "absent"]);
        assert_eq!(t.iter().map(|x| x.2).collect::<Vec<_>>(), [true, false, false]);
    }

    #[test]
    fn toy_centroids() {
        let traits = vec![
            ("p".to_string(), 0.9, true),
            ("n".to_string(), 0.1, false),
            ("w".to_string(), 0.2, false),
        ];
        let vs = vectors(&[("p", [1.0, 0.0]), ("n", [0.0, 1.0]), ("w", [0.0, 1.0])]);
        let recs = state_polarity(&vs, &traits).unwrap();
        // Negative centroid is (0, 1), the vector of "w" itself.
        assert!(!recs[2].state_positive);
        let traits = vec![("p".to_string(), 0.9, true), ("n".to_string(), 0.1, false), ("x".to_string(), 0.1, false)];
        let vs = vectors(&[("p", [1.0, 0.0]), ("n", [0.0, 1.0]), ("x", [0.9, 0.1])]);
        let recs = state_polarity(&vs, &traits).unwrap();
        // Negative centroid is (0.45, 0.55); x is closer to (1, 0).
        let x = &recs[2];
        assert!(x.sim_pos > x.sim_neg && x.state_positive && x.discrepant());
    }

    #[test]
    fn tie_keeps_trait_polarity() {
        let traits = vec![
            ("p".to_string(), 0.9, true),
            ("t".to_string(), 0.9, true),
            ("n".to_string(), 0.1, false),
            ("u".to_string(), 0.1, false),
        ];
        let vs = vectors(&[("p", [1.0, 0.0]), ("t", [1.0, 1.0]), ("n", [0.0, 1.0]), ("u", [1.0, 1.0])]);
        let recs = state_polarity(&vs, &traits).unwrap();
        // Centroids (1, 0.5) and (0.5, 1) are symmetric about (1, 1).
        assert_eq!(recs[1].sim_pos, recs[1].sim_neg);
        assert!(recs[1].state_positive && !recs[3].state_positive);
    }

    #[test]
    fn empty_group_is_an_error() {
        let traits = vec![("p".to_string(), 0.9, true)];
        assert!(state_polarity(&vectors(&[("p", [1.0, 0.0])]), &traits).is_err());
    }

    #[test]
    fn proportion() {
        let rec = |d: bool| PolarityRecord {
            word: String::new(),
            trait_positive: true,
            state_positive: !d,
            valence: 0.9,
            sim_pos: 0.0,
            sim_neg: 0.0,
        };
        assert_eq!(discrepancy_report(vec![rec(true), rec(false), rec(true), rec(false)]).proportion, 50.0);
        assert_eq!(discrepancy_report(vec![rec(false)]).proportion, 0.0);
    }
}
