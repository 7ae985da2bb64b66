//! Run configuration, read from TOML. Every key has a default, so an empty
//! file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::NUM_EMOTIONS;
use crate::error::{Error, Result};

/// Component switches for the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Trait emotion encoding.
    pub enable_tee: bool,
    /// State emotion encoding.
    pub enable_see: bool,
    /// Teacher/student emotion guidance. Off: a single student classifier
    /// trained on hard labels.
    pub enable_egm: bool,
    /// Cross-contrastive loss.
    pub enable_ccl: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            enable_tee: true,
            enable_see: true,
            enable_egm: true,
            enable_ccl: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
    /// Head count of the trait and state encoders (their widths, 14 and 43
    /// by default, admit no other common divisor).
    pub emotion_heads: usize,
    /// Width of the compressed context features appended to both emotion views.
    pub d_cs: usize,
    /// Width of the shared contrastive space.
    pub d_cl: usize,
    pub max_context_len: usize,
    pub max_target_len: usize,
    pub tau: f64,
    /// Weights of the emotion, generation, contrastive and diversity losses.
    pub gamma: [f64; 4],
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 300,
            heads: 2,
            ff_dim: 600,
            layers: 1,
            emotion_heads: 1,
            d_cs: 10,
            d_cl: 64,
            max_context_len: 128,
            max_target_len: 40,
            tau: 0.07,
            gamma: [1.0, 1.0, 1.0, 1.5],
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Trait feature width: VAD (3) + IDF (1) + compressed context.
    pub fn d_trait(&self) -> usize {
        3 + 1 + self.d_cs
    }

    /// State feature width: emotion similarities (32) + IDF (1) + compressed context.
    pub fn d_state(&self) -> usize {
        NUM_EMOTIONS + 1 + self.d_cs
    }

    /// Width of the emotion views that are enabled.
    pub fn d_emotion(&self) -> usize {
        let a = &self.ablation;
        usize::from(a.enable_tee) * self.d_trait() + usize::from(a.enable_see) * self.d_state()
    }

    /// Width of the predictor inputs: context plus enabled emotion views.
    pub fn d_guidance(&self) -> usize {
        self.d_model + self.d_emotion()
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("layers", self.layers),
            ("emotion_heads", self.emotion_heads),
            ("d_cs", self.d_cs),
            ("d_cl", self.d_cl),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.max_context_len < 2 || self.max_target_len < 2 {
            return Err(Error::Config("max_context_len and max_target_len must be at least 2".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Config(format!("gamma entries must be >= 0, got {:?}", self.gamma)));
        }
        for (what, width) in [
            ("d_model", self.d_model),
            ("trait width", self.d_trait()),
            ("state width", self.d_state()),
        ] {
            let heads = if what == "d_model" { self.heads } else { self.emotion_heads };
            if width % heads != 0 {
                return Err(Error::Config(format!("{what} {width} is not divisible by {heads} heads")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vad: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub inference_train: Option<PathBuf>,
    pub inference_valid: Option<PathBuf>,
    pub inference_test: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub seed: u64,
    pub max_steps: u64,
    pub warmup: u64,
    pub lr_factor: f64,
    /// Validate every this many steps (0 disables periodic validation).
    pub eval_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            seed: 0,
            max_steps: 1000,
            warmup: 4000,
            lr_factor: 1.0,
            eval_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    pub max_len: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self { max_len: 30 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub decoding: DecodingConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.training.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.decoding.max_len == 0 {
            return Err(Error::Config("decoding max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.paths.checkpoint_dir.clone().unwrap_or_else(|| PathBuf::from("checkpoints"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_documented_widths() {
        let m = ModelConfig::default();
        assert_eq!(m.d_trait(), 14);
        assert_eq!(m.d_state(), 43);
        assert_eq!(m.d_guidance(), 300 + 14 + 43);
        m.validate().unwrap();
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_override() {
        let cfg = RunConfig::from_toml("[model]\nd_model = 16\nff_dim = 32\n[model.ablation]\nenable_egm = false\n").unwrap();
        assert_eq!(cfg.model.d_model, 16);
        assert!(!cfg.model.ablation.enable_egm);
        assert!(cfg.model.ablation.enable_ccl);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("[model]\nheads = 7\n").is_err());
        assert!(RunConfig::from_toml("[model]\ngamma = [1.0, -1.0, 1.0, 1.0]\n").is_err());
        assert!(RunConfig::from_toml("[model]\nunknown_key = 1\n").is_err());
    }
}
