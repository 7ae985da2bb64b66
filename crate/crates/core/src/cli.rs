//! Command-line front end.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus::{convert_ed_csv, load_dialogues, load_vectors, make_batches, write_records, VocabMode};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, GenerationRecord};
use crate::model::generate;
use crate::polarity;
use crate::train::{self, batch_spec, load_lexicon, load_split};

#[derive(Debug, Parser)]
#[command(name = "empathy", version, about = "Train and evaluate empathetic response models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoints and a loss log to the checkpoint directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split and write its generations.
    Eval(EvalArgs),
    /// Generate responses for a dialogue file.
    Generate(GenerateArgs),
    /// Trait/state polarity discrepancy analysis.
    Polarity(PolarityArgs),
    /// Convert EmpatheticDialogues CSV to dialogue records.
    ConvertEd(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub no_tee: bool,
    #[arg(long)]
    pub no_see: bool,
    #[arg(long)]
    pub no_egm: bool,
    #[arg(long)]
    pub no_ccl: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Generation output file (default: `generations_<split>.jsonl` next to the checkpoint).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dialogue records to respond to.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PolarityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Table output file (default: standard output).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.training.seed = s;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_jsonl(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = load_config(&a.common)?;
            let ab = &mut cfg.model.ablation;
            ab.enable_tee &= !a.no_tee;
            ab.enable_see &= !a.no_see;
            ab.enable_egm &= !a.no_egm;
            ab.enable_ccl &= !a.no_ccl;
            let out = train::run(&cfg)?;
            println!("trained {} steps", out.steps);
            if let Some(b) = out.best {
                println!("best validation at step {}: acc {:.2} ppl {:.3}", b.step, b.acc, b.ppl);
            }
            println!("checkpoint: {}", out.best_checkpoint.display());
            println!("loss log: {}", out.loss_log.display());
        }
        Command::Eval(a) => {
            let cfg = load_config(&a.common)?;
            let ckpt = checkpoint::load(&a.checkpoint)?;
            let model = ckpt.model;
            let dialogues = load_split(&cfg, a.split.name(), &model.vocab)?;
            let spec = batch_spec(&model, cfg.training.batch_size, false);
            let (report, records) = evaluate(&model, &dialogues, &spec, cfg.decoding.max_len)?;
            let out = a.output.unwrap_or_else(|| {
                a.checkpoint
                    .with_file_name(format!("generations_{}.jsonl", a.split.name()))
            });
            write_jsonl(&out, &records)?;
            println!("{report}");
            print!("{}", report.key_values());
        }
        Command::Generate(a) => {
            let cfg = load_config(&a.common)?;
            let model = checkpoint::load(&a.checkpoint)?.model;
            let (dialogues, _) = load_dialogues(&a.input, VocabMode::Reuse(&model.vocab))?;
            let spec = batch_spec(&model, cfg.training.batch_size, false);
            let mut records = Vec::with_capacity(dialogues.len());
            for batch in make_batches(&dialogues, &model.vocab, &spec, 0) {
                for (gen, &ix) in generate(&model, &batch, cfg.decoding.max_len)?.into_iter().zip(&batch.indices) {
                    records.push(GenerationRecord::new(&dialogues[ix], &gen));
                }
            }
            write_jsonl(&a.output, &records)?;
            println!("wrote {} responses to {}", records.len(), a.output.display());
        }
        Command::Polarity(a) => {
            let cfg = load_config(&a.common)?;
            let lexicon = load_lexicon(&cfg)?;
            let vectors_path = cfg
                .paths
                .vectors
                .as_ref()
                .ok_or_else(|| Error::Config("paths.vectors is not set".into()))?;
            let vectors = load_vectors(vectors_path, cfg.model.d_model)?;
            let mut words: Vec<String> = match &cfg.paths.train {
                Some(p) => load_dialogues(p, VocabMode::Build)?.1.tokens()[crate::corpus::RESERVED.len()..].to_vec(),
                None => lexicon.words().map(String::from).collect(),
            };
            words.retain(|w| lexicon.get(w).is_some() && vectors.get(w).is_some());
            words.sort();
            let report = polarity::analyze(&lexicon, &vectors, &words)?;
            match &a.output {
                Some(p) => {
                    let mut w = create(p)?;
                    report.write_table(&mut w).map_err(|e| Error::io(p, e))?;
                    w.flush().map_err(|e| Error::io(p, e))?;
                }
                None => report
                    .write_table(std::io::stdout().lock())
                    .map_err(|e| Error::io("<stdout>", e))?,
            }
            println!("{}", report.summary());
        }
        Command::ConvertEd(a) => {
            let file = File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
            let records = convert_ed_csv(BufReader::new(file))?;
            let mut w = create(&a.output)?;
            write_records(&records, &mut w)?;
            w.flush().map_err(|e| Error::io(&a.output, e))?;
            println!("wrote {} records to {}", records.len(), a.output.display());
        }
    }
    Ok(())
}
