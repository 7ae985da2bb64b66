//! The full model: context encoding, trait/state emotion encoding,
//! teacher/student emotion guidance, pointer-generator decoding and the
//! contrastive objective.

pub mod context;
mod decode;
pub mod emotion;
pub mod generation;
pub mod guidance;

use empathy_nn::layers::{Linear, StackDims, TransformerEncoder};
use empathy_nn::{Graph, ParameterStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{
    compute_idf, tokenize, Batch, Dialogue, IdfTable, Vad, VadLexicon, Vocabulary, WordVectors, DEFAULT_VAD, EMOTION_LABELS,
    EOS,
};
use crate::error::{Error, Result};

use context::{Enricher, STATE_EMBEDDING, WORD_EMBEDDING};
use generation::{ContrastStats, Contrastive, DecodeInput, DecoderOutputs, PointerGenerator, Views};
use guidance::{Predictor, PredictorOutput};

pub use decode::{generate, Generated};

/// Lexical statistics the model reads at every step, indexed by vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct Resources {
    pub vad: Vec<Vad>,
    pub idf: IdfTable,
    /// Occurrences of each token among training targets (each target also
    /// counts one [EOS]).
    pub freqs: Vec<f64>,
}

impl Resources {
    pub fn build(vocab: &Vocabulary, lexicon: &VadLexicon, train: &[Dialogue]) -> Self {
        let mut freqs = vec![0.0; vocab.len()];
        for d in train {
            for &t in &d.target_response {
                freqs[t] += 1.0;
            }
            freqs[EOS] += 1.0;
        }
        Self {
            vad: vocab.tokens().iter().map(|t| lexicon.lookup(t)).collect(),
            idf: compute_idf(train, vocab),
            freqs,
        }
    }

    pub fn vad(&self, id: usize) -> Vad {
        self.vad.get(id).copied().unwrap_or(DEFAULT_VAD)
    }
}

/// Everything one forward pass produces. Components disabled by the
/// ablation switches are `None`.
#[derive(Debug, Clone, Copy)]
pub struct Encoding<'g> {
    pub e_c: Var<'g>,
    pub h_c: Var<'g>,
    pub h_tchr: Option<Var<'g>>,
    pub h_stu: Var<'g>,
    pub v_t: Option<Var<'g>>,
    pub h_t: Option<Var<'g>>,
    pub v_cos: Option<Var<'g>>,
    pub v_s: Option<Var<'g>>,
    pub h_s: Option<Var<'g>>,
    /// Softmax of the emotion intensities, `[B, L]`.
    pub intensity: Var<'g>,
    pub teacher: Option<PredictorOutput<'g>>,
    pub student: PredictorOutput<'g>,
}

impl<'g> Encoding<'g> {
    /// `H_t ⊕ H_s` over the enabled emotion views.
    pub fn h_ts(&self) -> Result<Option<Var<'g>>> {
        let parts: Vec<Var<'g>> = [self.h_t, self.h_s].into_iter().flatten().collect();
        Ok(match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => Some(Var::concat(&parts)?),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Losses<'g> {
    pub l_tchr: Option<Var<'g>>,
    pub l_stu: Option<Var<'g>>,
    pub l_e: Var<'g>,
    pub l_g: Var<'g>,
    pub l_ccl: Option<Var<'g>>,
    pub l_div: Var<'g>,
    pub total: Var<'g>,
}

#[derive(Debug, Clone, Copy)]
pub struct Forward<'g> {
    pub encoding: Encoding<'g>,
    pub decoder: DecoderOutputs<'g>,
    pub views: Option<Views<'g>>,
    pub contrast: Option<ContrastStats>,
    pub losses: Losses<'g>,
}

/// Architecture pieces, derived from the configuration and vocabulary size.
#[derive(Debug, Clone)]
struct Modules {
    context_encoder: TransformerEncoder,
    enrich_teacher: Option<Enricher>,
    enrich_student: Enricher,
    compress: Option<Linear>,
    trait_encoder: Option<TransformerEncoder>,
    emotion_proj: Option<Linear>,
    context_proj: Option<Linear>,
    state_encoder: Option<TransformerEncoder>,
    teacher: Option<Predictor>,
    student: Predictor,
    generator: PointerGenerator,
    contrastive: Option<Contrastive>,
}

impl Modules {
    fn new(cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        let a = cfg.ablation;
        let d = cfg.d_model;
        let main = StackDims {
            dim: d,
            heads: cfg.heads,
            hidden: cfg.ff_dim,
            layers: cfg.layers,
        };
        let emotion_dims = |dim: usize| StackDims {
            dim,
            heads: cfg.emotion_heads,
            hidden: 2 * dim,
            layers: cfg.layers,
        };
        let any_emotion = a.enable_tee || a.enable_see;
        Ok(Self {
            context_encoder: TransformerEncoder::new("encoder.context", main)?,
            enrich_teacher: if a.enable_egm {
                Some(Enricher::new("enrich.teacher", d, cfg.heads, cfg.ff_dim)?)
            } else {
                None
            },
            enrich_student: Enricher::new("enrich.student", d, cfg.heads, cfg.ff_dim)?,
            compress: any_emotion.then(|| Linear::new(emotion::COMPRESS, d, cfg.d_cs, false)),
            trait_encoder: if a.enable_tee {
                Some(TransformerEncoder::new("encoder.trait", emotion_dims(cfg.d_trait()))?)
            } else {
                None
            },
            emotion_proj: a.enable_see.then(|| Linear::new(emotion::EMOTION_PROJ, d, d, true)),
            context_proj: a.enable_see.then(|| Linear::new(emotion::CONTEXT_PROJ, d, d, true)),
            state_encoder: if a.enable_see {
                Some(TransformerEncoder::new("encoder.state", emotion_dims(cfg.d_state()))?)
            } else {
                None
            },
            teacher: a.enable_egm.then(|| Predictor::new("teacher", cfg.d_guidance(), d)),
            student: Predictor::new("student", cfg.d_guidance(), d),
            generator: PointerGenerator::new("generator", main, vocab_size)?,
            contrastive: if a.enable_ccl {
                Some(Contrastive::new("ccl", main, cfg.d_emotion(), cfg.d_cl)?)
            } else {
                None
            },
        })
    }

    /// Registers every parameter in a fixed order so initialization is a
    /// pure function of the seed.
    fn register(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.context_encoder.register(store, rng)?;
        if let Some(e) = &self.enrich_teacher {
            e.register(store, rng)?;
        }
        self.enrich_student.register(store, rng)?;
        if let Some(c) = &self.compress {
            c.register(store, rng)?;
        }
        if let Some(e) = &self.trait_encoder {
            e.register(store, rng)?;
        }
        for lin in [&self.emotion_proj, &self.context_proj].into_iter().flatten() {
            lin.register(store, rng)?;
        }
        if let Some(e) = &self.state_encoder {
            e.register(store, rng)?;
        }
        if let Some(t) = &self.teacher {
            t.register(store, rng)?;
        }
        self.student.register(store, rng)?;
        self.generator.register(store, rng)?;
        if let Some(c) = &self.contrastive {
            c.register(store, rng)?;
        }
        Ok(())
    }
}

/// Learned parameters together with the configuration, vocabulary and
/// lexical resources that give them meaning.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub resources: Resources,
    pub store: ParameterStore,
    /// When set, the generation gate is fixed to this value.
    pub pgen_override: Option<f64>,
    modules: Modules,
    emotion_ids: Vec<usize>,
    emotion_avg: Tensor,
}

impl Model {
    /// Builds and initializes a model. Word embeddings start from `vectors`
    /// where available, otherwise uniform in `[-0.1, 0.1]`.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        resources: Resources,
        vectors: Option<&WordVectors>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut table = Tensor::uniform(&[vocab.len(), d], 0.1, &mut rng);
        if let Some(v) = vectors {
            if v.dim() != d {
                return Err(Error::Config(format!("word vectors have dim {}, model dim is {d}", v.dim())));
            }
            for (id, tok) in vocab.tokens().iter().enumerate().skip(1) {
                if let Some(row) = v.get(tok) {
                    table.data_mut()[id * d..(id + 1) * d].copy_from_slice(row);
                }
            }
        }
        table.data_mut()[..d].fill(0.0);
        let mut state = Tensor::uniform(&[3, d], 0.1, &mut rng);
        state.data_mut()[..d].fill(0.0);

        let mut store = ParameterStore::new();
        store.register(WORD_EMBEDDING, table)?;
        store.register(STATE_EMBEDDING, state)?;
        let modules = Modules::new(&config, vocab.len())?;
        modules.register(&mut store, &mut rng)?;
        Self::assemble(config, vocab, resources, store)
    }

    /// Rebuilds a model around an existing parameter store (e.g. a checkpoint).
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, resources: Resources, store: ParameterStore) -> Result<Self> {
        config.validate()?;
        let model = Self::assemble(config, vocab, resources, store)?;
        let mut expected = ParameterStore::new();
        expected.register(WORD_EMBEDDING, Tensor::zeros(&[model.vocab.len(), model.config.d_model]))?;
        expected.register(STATE_EMBEDDING, Tensor::zeros(&[3, model.config.d_model]))?;
        model.modules.register(&mut expected, &mut ChaCha8Rng::seed_from_u64(0))?;
        for (name, p) in expected.iter() {
            let got = model
                .store
                .value(name)
                .map_err(|_| Error::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    p.value.shape()
                )));
            }
        }
        if expected.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, configuration expects {}",
                model.store.len(),
                expected.len()
            )));
        }
        Ok(model)
    }

    fn assemble(config: ModelConfig, vocab: Vocabulary, resources: Resources, store: ParameterStore) -> Result<Self> {
        let modules = Modules::new(&config, vocab.len())?;
        let per_label: Vec<Vec<usize>> = EMOTION_LABELS
            .iter()
            .map(|l| tokenize(l).iter().map(|t| vocab.id(t)).collect())
            .collect();
        let (emotion_ids, emotion_avg) = emotion::label_averaging(&per_label);
        Ok(Self {
            config,
            vocab,
            resources,
            store,
            pgen_override: None,
            modules,
            emotion_ids,
            emotion_avg,
        })
    }

    /// Context, emotion and guidance path.
    pub fn encode<'g>(&self, g: &'g Graph<'g>, batch: &Batch) -> Result<Encoding<'g>> {
        let m = &self.modules;
        let res = &self.resources;
        let keep = &batch.pad_mask;
        let e_c = context::embed_context(g, batch)?;
        let h_c = m.context_encoder.forward(g, e_c, keep)?;

        let features = batch
            .inference_features
            .as_ref()
            .map(|f| (g.constant(f.clone()), batch.feature_mask.as_slice()));
        let h_stu = m.enrich_student.forward(g, h_c, features)?;
        let h_tchr = match &m.enrich_teacher {
            Some(e) => Some(e.forward(g, h_c, features)?),
            None => None,
        };

        let compressed = match &m.compress {
            Some(c) => Some(c.forward(g, h_c)?),
            None => None,
        };
        let idf = g.constant(emotion::idf_features(batch, res));
        let (mut v_t, mut h_t) = (None, None);
        if let (Some(enc), Some(hc)) = (&m.trait_encoder, compressed) {
            let vad = g.constant(emotion::vad_features(batch, res));
            let v = emotion::build_trait(vad, idf, hc)?;
            h_t = Some(enc.forward(g, v, keep)?);
            v_t = Some(v);
        }
        let (mut v_cos, mut v_s, mut h_s) = (None, None, None);
        if let (Some(enc), Some(hc), Some(cp), Some(ep)) = (&m.state_encoder, compressed, &m.context_proj, &m.emotion_proj) {
            let words = emotion::emotion_word_embeddings(g, &self.emotion_ids, &self.emotion_avg)?;
            let cos = emotion::state_inclination(g, e_c, words, cp, ep)?;
            let v = emotion::build_state(cos, idf, hc)?;
            h_s = Some(enc.forward(g, v, keep)?);
            v_cos = Some(cos);
            v_s = Some(v);
        }

        let intensity = emotion::intensity_weights(g, batch, res)?;
        let teacher = match (&m.teacher, h_tchr) {
            (Some(t), Some(h)) => {
                let parts: Vec<Var<'g>> = [Some(h), v_t, v_s].into_iter().flatten().collect();
                Some(t.forward(g, Var::concat(&parts)?, intensity)?)
            }
            _ => None,
        };
        let parts: Vec<Var<'g>> = [Some(h_stu), h_t, h_s].into_iter().flatten().collect();
        let student = m.student.forward(g, Var::concat(&parts)?, intensity)?;
        Ok(Encoding {
            e_c,
            h_c,
            h_tchr,
            h_stu,
            v_t,
            h_t,
            v_cos,
            v_s,
            h_s,
            intensity,
            teacher,
            student,
        })
    }

    /// Teacher-forced decoding of `batch`'s targets over the student memory.
    pub fn decode<'g>(&self, g: &'g Graph<'g>, batch: &Batch, memory: Var<'g>) -> Result<DecoderOutputs<'g>> {
        let inputs = batch.decoder_inputs();
        self.modules.generator.forward(
            g,
            memory,
            &DecodeInput {
                batch: batch.size,
                steps: batch.steps(),
                input_ids: &inputs,
                source_ext_ids: &batch.context_ext_ids,
                source_keep: &batch.pad_mask,
                ext_width: batch.extended_vocab_size(),
                pgen_override: self.pgen_override,
            },
        )
    }

    pub(crate) fn generator(&self) -> &PointerGenerator {
        &self.modules.generator
    }

    /// Full training forward pass with every loss.
    pub fn forward<'g>(&self, g: &'g Graph<'g>, batch: &Batch) -> Result<Forward<'g>> {
        let cfg = &self.config;
        let enc = self.encode(g, batch)?;
        let dec = self.decode(g, batch, enc.h_stu)?;
        let gold = batch.gold_ext();
        let gold_mask = batch.gold_mask();
        let labels = &batch.emotion_labels;

        let (l_tchr, l_stu, l_e) = match enc.teacher {
            Some(t) => {
                let (a, b, e) = guidance::guidance_losses(t.probs, enc.student.probs, labels)?;
                (Some(a), Some(b), e)
            }
            None => (None, None, guidance::cross_entropy(enc.student.probs, labels)?),
        };
        let l_g = generation::generation_loss(dec.p_w, &gold, &gold_mask)?;
        let l_div = generation::diversity_loss(dec.p_w, &gold, &gold_mask, &self.resources.freqs)?;

        let (mut views, mut l_ccl, mut contrast) = (None, None, None);
        if let Some(c) = &self.modules.contrastive {
            let inputs = batch.decoder_inputs();
            let input_keep: Vec<bool> = inputs.iter().map(|&id| id != crate::corpus::PAD).collect();
            let v = c.views(
                g,
                enc.h_stu,
                &batch.pad_mask,
                dec.embedded,
                &input_keep,
                enc.h_ts()?,
                dec.p_w,
                &gold_mask,
                self.vocab.len(),
            )?;
            if let Some((loss, stats)) = generation::ccl_loss(&v, cfg.tau)? {
                l_ccl = Some(loss);
                contrast = Some(stats);
            }
            views = Some(v);
        }
        let total = generation::total_loss(l_e, l_g, l_ccl, l_div, cfg.gamma)?;
        Ok(Forward {
            encoding: enc,
            decoder: dec,
            views,
            contrast,
            losses: Losses {
                l_tchr,
                l_stu,
                l_e,
                l_g,
                l_ccl,
                l_div,
                total,
            },
        })
    }
}
