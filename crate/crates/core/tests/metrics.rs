mod common;

use common::*;
use empathy::corpus::BatchSpec;
use empathy::metrics::{distinct_n, emotion_accuracy, evaluate, nll_totals, perplexity, EvalReport};
use empathy::model::generation::NEVER_GENERATED;
use proptest::prelude::*;

fn spec(batch_size: usize) -> BatchSpec {
    BatchSpec {
        batch_size,
        max_context_len: 16,
        max_target_len: 10,
        shuffle: false,
    }
}

#[test]
fn accuracy_counts() {
    assert_eq!(emotion_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]), 75.0);
    assert_eq!(emotion_accuracy(&[5, 5], &[5, 5]), 100.0);
    assert_eq!(emotion_accuracy(&[5, 5], &[1, 2]), 0.0);
}

#[test]
fn uniform_vocabulary_head_has_perplexity_equal_to_its_support() {
    let (d, v) = toy_corpus();
    let mut model = build_model(tiny_config(), &d, &v, &toy_lexicon(), 0);
    model.store.value_mut("generator.vocab_out.weight").unwrap().fill(0.0);
    model.store.value_mut("generator.vocab_out.bias").unwrap().fill(0.0);
    model.pgen_override = Some(1.0);
    let support = (v.len() - NEVER_GENERATED.len()) as f64;
    let ppl = perplexity(&model, &d, &spec(3)).unwrap();
    assert!((ppl - support).abs() < 1e-9, "{ppl} vs {support}");
}

#[test]
fn perplexity_ignores_batch_partitioning() {
    let (d, v) = toy_corpus();
    let model = build_model(tiny_config(), &d, &v, &toy_lexicon(), 1);
    let whole = nll_totals(&model, &d, &spec(8)).unwrap();
    for bs in [1, 3, 5] {
        let part = nll_totals(&model, &d, &spec(bs)).unwrap();
        assert_eq!(part.tokens, whole.tokens);
        assert!((part.perplexity() - whole.perplexity()).abs() < 1e-9 * whole.perplexity());
    }
}

#[test]
fn report_round_trips_through_key_values() {
    let (d, v) = toy_corpus();
    let model = build_model(tiny_config(), &d, &v, &toy_lexicon(), 2);
    let (report, records) = evaluate(&model, &d, &spec(4), 6).unwrap();
    assert_eq!(records.len(), d.len());
    assert_eq!(report.examples, d.len());
    let kv = EvalReport::parse_key_values(&report.key_values());
    let keys: Vec<&str> = kv.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(keys, ["acc", "ppl", "dist1", "dist2"]);
    assert_eq!(kv[1].1, report.ppl);
    assert_eq!(records[2].gold_emotion, "sad");
    assert_eq!(records[2].reference, "i am so sorry for your loss");
}

fn words(r: &[u8]) -> Vec<String> {
    r.iter().map(|b| format!("w{b}")).collect()
}

proptest! {
    #[test]
    fn distinct_is_a_percentage_and_drops_under_duplication(
        responses in prop::collection::vec(prop::collection::vec(0u8..6, 1..6), 1..6),
        n in 1usize..3,
    ) {
        let rs: Vec<Vec<String>> = responses.iter().map(|r| words(r)).collect();
        let d = distinct_n(&rs, n);
        prop_assert!((0.0..=100.0).contains(&d));
        if rs.iter().any(|r| r.len() >= n) {
            prop_assert!(d > 0.0);
        }
        let doubled: Vec<Vec<String>> = rs.iter().chain(&rs).cloned().collect();
        prop_assert!(distinct_n(&doubled, n) <= d);
    }
}
