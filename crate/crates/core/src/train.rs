//! Optimization loop, loss logging and best-checkpoint selection.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use empathy_nn::{Graph, NoamSchedule, OptimizerState};

use crate::checkpoint;
use crate::config::{RunConfig, TrainingConfig};
use crate::corpus::{
    load_dialogues, load_inference_features, load_vad, load_vectors, make_batches, Batch, BatchSpec, Dialogue, VadLexicon,
    VocabMode, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metrics::{emotion_accuracy, nll_totals, predict_emotions};
use crate::model::generation::ContrastStats;
use crate::model::{Model, Resources};

/// Component losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub l_e: f64,
    pub l_g: f64,
    /// `None` when the contrastive loss is disabled or the batch has a single example.
    pub l_ccl: Option<f64>,
    pub l_div: f64,
    pub total: f64,
    pub contrast: Option<ContrastStats>,
    /// Whether the loss log has an `L_ccl` column.
    pub ccl_column: bool,
}

impl StepReport {
    pub fn log_header(with_ccl: bool) -> String {
        if with_ccl {
            "step\tL_e\tL_g\tL_ccl\tL_div\tL".into()
        } else {
            "step\tL_e\tL_g\tL_div\tL".into()
        }
    }

    /// One loss-log line. Values use Rust's shortest round-trip formatting,
    /// so equal lines mean bit-identical losses. A missing contrastive term
    /// is written as `-`.
    pub fn log_line(&self) -> String {
        let mut s = format!("{}\t{}\t{}", self.step, self.l_e, self.l_g);
        if self.ccl_column {
            match self.l_ccl {
                Some(c) => write!(s, "\t{c}").unwrap(),
                None => s.push_str("\t-"),
            }
        }
        write!(s, "\t{}\t{}", self.l_div, self.total).unwrap();
        s
    }
}

pub fn batch_spec(model: &Model, batch_size: usize, shuffle: bool) -> BatchSpec {
    BatchSpec {
        batch_size,
        max_context_len: model.config.max_context_len,
        max_target_len: model.config.max_target_len,
        shuffle,
    }
}

pub fn new_optimizer(model: &Model, training: &TrainingConfig) -> OptimizerState {
    let mut schedule = NoamSchedule::new(model.config.d_model, training.warmup);
    schedule.factor = training.lr_factor;
    OptimizerState::new(schedule)
}

/// Forward, backward and one Adam update on `batch`. `step` is the number
/// reported in errors and in the returned losses.
pub fn train_step(model: &mut Model, optimizer: &mut OptimizerState, batch: &Batch) -> Result<StepReport> {
    let step = optimizer.step + 1;
    let (report, grads) = {
        let g = Graph::new(&model.store);
        let f = model.forward(&g, batch)?;
        let l = &f.losses;
        let report = StepReport {
            step,
            l_e: l.l_e.item(),
            l_g: l.l_g.item(),
            l_ccl: l.l_ccl.map(|v| v.item()),
            l_div: l.l_div.item(),
            total: l.total.item(),
            contrast: f.contrast,
            ccl_column: model.config.ablation.enable_ccl,
        };
        if !report.total.is_finite() {
            return Err(Error::Numeric {
                step,
                msg: format!("non-finite loss ({})", report.log_line()),
            });
        }
        (report, g.backward(l.total)?)
    };
    model.store.accumulate(grads.iter())?;
    optimizer.step(&mut model.store).map_err(|e| Error::Numeric {
        step,
        msg: format!("{e} ({})", report.log_line()),
    })?;
    Ok(report)
}

/// Cycles through reshuffled epochs of the training set.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: OptimizerState,
    train: Vec<Dialogue>,
    spec: BatchSpec,
    seed: u64,
    epoch: u64,
    queue: Vec<Batch>,
}

impl Trainer {
    pub fn new(model: Model, train: Vec<Dialogue>, training: &TrainingConfig) -> Self {
        let spec = batch_spec(&model, training.batch_size, true);
        let optimizer = new_optimizer(&model, training);
        Self {
            model,
            optimizer,
            train,
            spec,
            seed: training.seed,
            epoch: 0,
            queue: Vec::new(),
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.queue.is_empty() {
            let seed = self.seed.wrapping_add(self.epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            self.queue = make_batches(&self.train, &self.model.vocab, &self.spec, seed);
            self.queue.reverse();
            self.epoch += 1;
        }
        self.queue.pop().expect("training set is non-empty")
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let batch = self.next_batch();
        train_step(&mut self.model, &mut self.optimizer, &batch)
    }
}

/// Resources loaded for a run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub vocab: Vocabulary,
    pub train: Vec<Dialogue>,
    pub valid: Vec<Dialogue>,
    pub lexicon: VadLexicon,
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("paths.{what} is not set")))
}

pub fn load_lexicon(cfg: &RunConfig) -> Result<VadLexicon> {
    match &cfg.paths.vad {
        Some(p) => load_vad(p),
        None => Ok(VadLexicon::new()),
    }
}

/// Loads a split with an existing vocabulary, attaching inference features if configured.
pub fn load_split(cfg: &RunConfig, split: &str, vocab: &Vocabulary) -> Result<Vec<Dialogue>> {
    let (path, features) = match split {
        "train" => (&cfg.paths.train, &cfg.paths.inference_train),
        "valid" => (&cfg.paths.valid, &cfg.paths.inference_valid),
        "test" => (&cfg.paths.test, &cfg.paths.inference_test),
        other => return Err(Error::Config(format!("unknown split {other:?}"))),
    };
    let (mut dialogues, _) = load_dialogues(require(path, split)?, VocabMode::Reuse(vocab))?;
    if let Some(f) = features {
        load_inference_features(f, &mut dialogues, cfg.model.d_model)?;
    }
    Ok(dialogues)
}

impl RunData {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let (mut train, vocab) = load_dialogues(require(&cfg.paths.train, "train")?, VocabMode::Build)?;
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        if let Some(f) = &cfg.paths.inference_train {
            load_inference_features(f, &mut train, cfg.model.d_model)?;
        }
        let valid = match &cfg.paths.valid {
            Some(_) => load_split(cfg, "valid", &vocab)?,
            None => Vec::new(),
        };
        Ok(Self {
            vocab,
            train,
            valid,
            lexicon: load_lexicon(cfg)?,
        })
    }
}

/// Validation accuracy and perplexity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub step: u64,
    pub acc: f64,
    pub ppl: f64,
}

pub fn validate(model: &Model, dialogues: &[Dialogue], batch_size: usize, step: u64) -> Result<Validation> {
    let spec = batch_spec(model, batch_size, false);
    let predicted = predict_emotions(model, dialogues, &spec)?;
    let gold: Vec<usize> = dialogues.iter().map(|d| d.emotion.id()).collect();
    Ok(Validation {
        step,
        acc: emotion_accuracy(&predicted, &gold),
        ppl: nll_totals(model, dialogues, &spec)?.perplexity(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub best: Option<Validation>,
    pub steps: u64,
}

/// Trains per `cfg`, writing `loss_log.tsv`, `last.ckpt` and `best.ckpt`
/// (lowest validation perplexity; the last state when there is no
/// validation split) into the checkpoint directory.
pub fn run(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = RunData::load(cfg)?;
    let vectors = match &cfg.paths.vectors {
        Some(p) => Some(load_vectors(p, cfg.model.d_model)?),
        None => None,
    };
    let resources = Resources::build(&data.vocab, &data.lexicon, &data.train);
    let model = Model::new(cfg.model.clone(), data.vocab.clone(), resources, vectors.as_ref(), cfg.training.seed)?;
    log::info!(
        "model with {} parameter tensors ({} weights), vocabulary {}",
        model.store.len(),
        model.store.num_weights(),
        model.vocab.len()
    );

    let dir = cfg.checkpoint_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let log_path = dir.join("loss_log.tsv");
    let last = dir.join("last.ckpt");
    let best_path = dir.join("best.ckpt");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "{}", StepReport::log_header(cfg.model.ablation.enable_ccl)).map_err(|e| Error::io(&log_path, e))?;

    let mut trainer = Trainer::new(model, data.train, &cfg.training);
    let mut best: Option<Validation> = None;
    let consider = |trainer: &Trainer, step: u64, best: &mut Option<Validation>| -> Result<()> {
        if data.valid.is_empty() {
            return Ok(());
        }
        let v = validate(&trainer.model, &data.valid, cfg.training.batch_size, step)?;
        log::info!("step {step}: valid acc {:.2} ppl {:.3}", v.acc, v.ppl);
        if best.is_none_or(|b| v.ppl < b.ppl) {
            *best = Some(v);
            checkpoint::save(&best_path, &trainer.model, Some(&trainer.optimizer))?;
        }
        Ok(())
    };

    for _ in 0..cfg.training.max_steps {
        let r = trainer.step()?;
        writeln!(log_file, "{}", r.log_line()).map_err(|e| Error::io(&log_path, e))?;
        if cfg.training.eval_every > 0 && r.step % cfg.training.eval_every == 0 {
            consider(&trainer, r.step, &mut best)?;
        }
    }
    let steps = trainer.optimizer.step;
    if best.is_none_or(|b| b.step != steps) {
        consider(&trainer, steps, &mut best)?;
    }
    checkpoint::save(&last, &trainer.model, Some(&trainer.optimizer))?;
    if best.is_none() {
        checkpoint::save(&best_path, &trainer.model, Some(&trainer.optimizer))?;
    }
    Ok(TrainOutcome {
        last_checkpoint: last,
        best_checkpoint: best_path,
        loss_log: log_path,
        best,
        steps,
    })
}
