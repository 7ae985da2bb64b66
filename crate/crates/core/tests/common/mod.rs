#![allow(dead_code)]

use std::io::Cursor;

use empathy::config::{ModelConfig, TrainingConfig};
use empathy::corpus::{parse_dialogues, Dialogue, VadLexicon, VocabMode, Vocabulary};
use empathy::model::{Model, Resources};
use empathy::train::Trainer;

/// A model small enough for finite differences and quick overfitting.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 2,
        ff_dim: 32,
        layers: 1,
        emotion_heads: 1,
        d_cs: 4,
        d_cl: 8,
        max_context_len: 16,
        max_target_len: 10,
        ..ModelConfig::default()
    }
}

pub fn record(context: &[&str], target: &str, emotion: &str) -> String {
    serde_json::json!({"context": context, "target": target, "emotion": emotion}).to_string()
}

pub fn parse(lines: &[String]) -> (Vec<Dialogue>, Vocabulary) {
    parse_dialogues(Cursor::new(lines.join("\n")), "<test>", VocabMode::Build).unwrap()
}

/// Eight dialogues over four emotion classes.
pub fn toy_corpus() -> (Vec<Dialogue>, Vocabulary) {
    parse(&[
        record(&["i won a prize at school today"], "congrats ! you must be proud", "proud"),
        record(&["my team got the award", "that is great"], "you worked hard for it", "proud"),
        record(&["my dog died last night"], "i am so sorry for your loss", "sad"),
        record(&["i miss my old friends", "why is that"], "moving away is hard", "sad"),
        record(&["there is a noise in the dark"], "lock the door and stay safe", "afraid"),
        record(&["a spider crawled on my bed"], "that sounds scary", "afraid"),
        record(&["someone stole my bike"], "that is terrible , call the police", "angry"),
        record(&["my boss yelled at me for nothing"], "he should not treat you like that", "angry"),
    ])
}

pub fn toy_lexicon() -> VadLexicon {
    let mut lex = VadLexicon::new();
    for (w, vad) in [
        ("prize", (0.9, 0.7, 0.7)),
        ("award", (0.88, 0.6, 0.7)),
        ("great", (0.9, 0.6, 0.7)),
        ("died", (0.05, 0.6, 0.2)),
        ("miss", (0.25, 0.4, 0.3)),
        ("loss", (0.1, 0.5, 0.2)),
        ("noise", (0.3, 0.7, 0.4)),
        ("dark", (0.2, 0.5, 0.3)),
        ("spider", (0.25, 0.75, 0.35)),
        ("stole", (0.1, 0.8, 0.4)),
        ("yelled", (0.15, 0.85, 0.5)),
        ("terrible", (0.05, 0.7, 0.3)),
        ("proud", (0.85, 0.6, 0.8)),
        ("sad", (0.1, 0.3, 0.2)),
        ("afraid", (0.1, 0.8, 0.2)),
        ("angry", (0.1, 0.9, 0.6)),
    ] {
        lex.insert(w, vad).unwrap();
    }
    lex
}

pub fn build_model(cfg: ModelConfig, dialogues: &[Dialogue], vocab: &Vocabulary, lexicon: &VadLexicon, seed: u64) -> Model {
    let resources = Resources::build(vocab, lexicon, dialogues);
    Model::new(cfg, vocab.clone(), resources, None, seed).unwrap()
}

pub fn training(batch_size: usize, seed: u64, warmup: u64, lr_factor: f64) -> TrainingConfig {
    TrainingConfig {
        batch_size,
        seed,
        max_steps: 0,
        warmup,
        lr_factor,
        eval_every: 0,
    }
}

pub fn trainer(model: Model, dialogues: &[Dialogue], t: &TrainingConfig) -> Trainer {
    Trainer::new(model, dialogues.to_vec(), t)
}
