use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSizes, NoiseSpec, WorldConfig, TARGET_MAX_LEN, VOCAB_THRESHOLD};
use crate::error::{Error, Result};
use crate::objectives::LossWeights;
use crate::rewards::LAMBDA;
use crate::seq::CaptionerDims;
use crate::vse::{VseConfig, MARGIN};

/// Training regime of the captioner after pretraining.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The pretrained captioner as is.
    Baseline,
    /// Self-critical training with CIDEr against the pseudo captions.
    BaselinePlus,
    /// Reinforcement loop with every reward switched off.
    None,
    Flc,
    FlcSrlv,
    Ssr,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Baseline,
        Mode::BaselinePlus,
        Mode::None,
        Mode::Flc,
        Mode::FlcSrlv,
        Mode::Ssr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::BaselinePlus => "baseline_plus",
            Mode::None => "none",
            Mode::Flc => "flc",
            Mode::FlcSrlv => "flc_srlv",
            Mode::Ssr => "ssr",
        }
    }

    /// Which self-supervised rewards feed the loss: (fluency, sentence, concept).
    pub fn rewards(self) -> (bool, bool, bool) {
        match self {
            Mode::Flc => (true, false, false),
            Mode::FlcSrlv => (true, true, false),
            Mode::Ssr => (true, true, true),
            _ => (false, false, false),
        }
    }

    pub fn trains(self) -> bool {
        self != Mode::Baseline
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Every knob of a run, read from a flat TOML file. Missing keys take the
/// defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,

    pub objects: usize,
    pub scenes: usize,
    pub actions: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub mono_size: usize,
    pub disfluency_rate: f64,
    pub irrelevancy_rate: f64,
    pub vocab_threshold: usize,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lm_embed_dim: usize,
    pub lm_hidden_dim: usize,
    pub vse_embed_dim: usize,
    pub vse_hidden_dim: usize,
    pub sentence_joint_dim: usize,
    pub concept_joint_dim: usize,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub margin: f64,

    pub lr_captioner: f64,
    pub lr_lm: f64,
    pub lr_vse: f64,
    pub lr_rl: f64,
    pub batch_pretrain: usize,
    pub batch_rl: usize,
    pub dropout: f64,
    pub epochs_lm: usize,
    pub epochs_vse: usize,
    pub epochs_captioner: usize,
    pub epochs_rl: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub samples_per_image: usize,
    pub length_norm: bool,

    pub beam_size: usize,
    /// Decode step budget including EOS.
    pub max_decode_len: usize,
    /// Beam width for the per-epoch validation decode (1 = greedy).
    pub val_beam_size: usize,

    pub modes: Vec<Mode>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let w = WorldConfig::default();
        let sizes = DatasetSizes::default();
        let noise = NoiseSpec::default();
        Self {
            seed: 1,
            objects: w.objects,
            scenes: w.scenes,
            actions: w.actions,
            feature_dim: w.feature_dim,
            feature_noise: w.feature_noise,
            train_size: sizes.train,
            val_size: sizes.val,
            test_size: sizes.test,
            mono_size: 2000,
            disfluency_rate: noise.disfluency_rate,
            irrelevancy_rate: noise.irrelevancy_rate,
            vocab_threshold: VOCAB_THRESHOLD,
            embed_dim: 64,
            hidden_dim: 64,
            lm_embed_dim: 64,
            lm_hidden_dim: 64,
            vse_embed_dim: 64,
            vse_hidden_dim: 64,
            sentence_joint_dim: 64,
            concept_joint_dim: 32,
            alpha: 0.05,
            beta: 0.15,
            gamma: 1.0,
            lambda: LAMBDA,
            margin: MARGIN,
            lr_captioner: 4e-4,
            lr_lm: 2e-4,
            lr_vse: 2e-4,
            lr_rl: 4e-5,
            batch_pretrain: 128,
            batch_rl: 256,
            dropout: 0.3,
            epochs_lm: 30,
            epochs_vse: 30,
            epochs_captioner: 30,
            epochs_rl: 30,
            patience: 3,
            clip_norm: 5.0,
            samples_per_image: 1,
            length_norm: false,
            beam_size: 10,
            max_decode_len: TARGET_MAX_LEN + 1,
            val_beam_size: 1,
            modes: Mode::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// Published hyper-parameters at desk-scale model sizes.
    pub fn published() -> Self {
        Self::default()
    }

    /// Faster settings for single-core runs: larger learning rates and
    /// shorter phase caps.
    pub fn desk() -> Self {
        Self {
            lr_captioner: 5e-3,
            lr_lm: 5e-3,
            lr_vse: 2e-3,
            lr_rl: 1e-3,
            batch_rl: 64,
            epochs_lm: 60,
            epochs_vse: 20,
            epochs_captioner: 100,
            epochs_rl: 20,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "published" => Ok(Self::published()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (expected published or desk)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_size", self.train_size),
            ("val_size", self.val_size),
            ("test_size", self.test_size),
            ("mono_size", self.mono_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("lm_embed_dim", self.lm_embed_dim),
            ("lm_hidden_dim", self.lm_hidden_dim),
            ("vse_embed_dim", self.vse_embed_dim),
            ("vse_hidden_dim", self.vse_hidden_dim),
            ("sentence_joint_dim", self.sentence_joint_dim),
            ("concept_joint_dim", self.concept_joint_dim),
            ("feature_dim", self.feature_dim),
            ("batch_pretrain", self.batch_pretrain),
            ("batch_rl", self.batch_rl),
            ("samples_per_image", self.samples_per_image),
            ("beam_size", self.beam_size),
            ("val_beam_size", self.val_beam_size),
            ("patience", self.patience),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        let rates = [
            ("lr_captioner", self.lr_captioner),
            ("lr_lm", self.lr_lm),
            ("lr_vse", self.lr_vse),
            ("lr_rl", self.lr_rl),
            ("clip_norm", self.clip_norm),
            ("margin", self.margin),
        ];
        for (k, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if self.max_decode_len < 2 {
            return Err(Error::Config("max_decode_len must be at least 2".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("no modes requested".into()));
        }
        self.loss_weights().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.noise().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.objects < 2 || self.scenes < 2 || self.actions < 2 {
            return Err(Error::Config("world needs at least two concepts per category".into()));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return Err(Error::Config("feature_noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            objects: self.objects,
            scenes: self.scenes,
            actions: self.actions,
            feature_dim: self.feature_dim,
            feature_noise: self.feature_noise,
        }
    }

    pub fn sizes(&self) -> DatasetSizes {
        DatasetSizes {
            train: self.train_size,
            val: self.val_size,
            test: self.test_size,
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec::with_rates(self.disfluency_rate, self.irrelevancy_rate)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn captioner_dims(&self, vocab: usize) -> CaptionerDims {
        CaptionerDims {
            feature: self.feature_dim,
            embed: self.embed_dim,
            hidden: self.hidden_dim,
            vocab,
        }
    }

    pub fn vse(&self) -> VseConfig {
        VseConfig {
            embed_dim: self.vse_embed_dim,
            sentence_hidden: self.vse_hidden_dim,
            sentence_joint: self.sentence_joint_dim,
            concept_joint: self.concept_joint_dim,
            margin: self.margin,
            learning_rate: self.lr_vse,
            batch_size: self.batch_pretrain,
            max_epochs: self.epochs_vse,
            patience: self.patience,
            seed: self.seed,
        }
    }
}
