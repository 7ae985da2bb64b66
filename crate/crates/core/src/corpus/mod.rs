//! Dialogue records, lexical resources and batching.

mod batch;
mod convert;
mod dialogue;
mod emotion;
mod idf;
mod lexicon;
mod vectors;
mod vocab;

pub use batch::{make_batches, Batch, BatchSpec};
pub use convert::{convert_ed_csv, write_records};
pub use dialogue::{load_dialogues, load_inference_features, parse_dialogues, Dialogue, DialogueRecord, VocabMode};
pub use emotion::{Emotion, UnknownEmotion, EMOTION_LABELS, NUM_EMOTIONS};
pub use idf::{compute_idf, IdfTable};
pub use lexicon::{load_vad, parse_vad, Vad, VadLexicon, DEFAULT_VAD};
pub use vectors::{load_vectors, parse_vectors, WordVectors};
pub use vocab::{tokenize, Vocabulary, CLS, EOS, PAD, RESERVED, SOS, SYS, UNK, USR};
