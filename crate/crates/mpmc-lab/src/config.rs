//! Experiment configuration: a documented TOML file plus `key=value`
//! overrides, with a stable content hash for run records.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mpmc_core::augment::{StrongAugConfig, WeakAugConfig};
use mpmc_core::mpmc::{FocalParams, MpmcSpec};
use mpmc_core::pseudo::GammaSource;
use mpmc_core::segmodel::SegmentorSpec;
use mpmc_core::synth::DatasetSpec;
use mpmc_core::train::TrainHyper;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Directory of a saved dataset. When absent, the corpus is generated
    /// in memory from the spec below.
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub num_classes: usize,
    pub image_size: (usize, usize),
    pub shapes_per_scene: (usize, usize),
    pub class_frequency_skew: f64,
    pub num_train: usize,
    pub num_val: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: None,
            num_classes: 5,
            image_size: (64, 64),
            shapes_per_scene: (2, 5),
            class_frequency_skew: 2.0,
            num_train: 160,
            num_val: 24,
            seed: 11,
        }
    }
}

impl DatasetConfig {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            num_classes: self.num_classes,
            image_size: self.image_size,
            shapes_per_scene: self.shapes_per_scene,
            class_frequency_skew: self.class_frequency_skew,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// (numerator, denominator), e.g. [1, 16].
    pub label_fraction: (u32, u32),
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            label_fraction: (1, 16),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub tap_layer: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage_channels: vec![8, 16],
            stage_strides: vec![2, 2],
            tap_layer: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpmcConfig {
    pub enabled: bool,
    /// Supervised per-patch loss on labeled images (on top of `enabled`).
    #[serde(default = "default_true")]
    pub labeled_loss: bool,
    /// Soft multi-label consistency on unlabeled images (on top of `enabled`).
    #[serde(default = "default_true")]
    pub unlabeled_loss: bool,
    pub scales: (usize, usize),
    pub hidden: usize,
    /// (original features, small-scale pool, large-scale pool).
    #[serde(default = "default_branches")]
    pub branches: (bool, bool, bool),
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

fn default_branches() -> (bool, bool, bool) {
    (true, true, true)
}

fn default_tap_grad_decay() -> f64 {
    1.0
}

fn default_tap_grad_clip() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

impl Default for MpmcConfig {
    fn default() -> Self {
        MpmcConfig {
            enabled: true,
            labeled_loss: true,
            unlabeled_loss: true,
            scales: (7, 19),
            hidden: 16,
            branches: default_branches(),
            gamma_plus: 0.0,
            gamma_minus: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoConfig {
    pub confidence_threshold: f64,
    pub alpha: f64,
    pub beta: f64,
    pub ema_momentum: f64,
    pub use_lambda_s: bool,
    pub use_lambda_m: bool,
    /// "logits" (default) or "probs".
    pub gamma_source: String,
    pub warmup_steps: usize,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig {
            confidence_threshold: 0.95,
            alpha: 0.1,
            beta: 0.25,
            ema_momentum: 0.999,
            use_lambda_s: true,
            use_lambda_m: true,
            gamma_source: "logits".into(),
            warmup_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub total_steps: usize,
    pub poly_power: f64,
    pub grad_clip: f64,
    /// Cap on the patch-head gradient entering the encoder at the tap.
    #[serde(default = "default_tap_grad_clip")]
    pub tap_grad_clip: f64,
    /// Polynomial power for ramping the tap injection down over training.
    #[serde(default = "default_tap_grad_decay")]
    pub tap_grad_decay: f64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    /// Steps between evaluations/checkpoints.
    pub eval_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            total_steps: 400,
            poly_power: 0.9,
            grad_clip: 5.0,
            tap_grad_clip: default_tap_grad_clip(),
            tap_grad_decay: default_tap_grad_decay(),
            labeled_batch: 2,
            unlabeled_batch: 2,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AugmentConfig {
    #[serde(default)]
    pub weak: WeakAugConfig,
    #[serde(default)]
    pub strong: StrongAugConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub mpmc: MpmcConfig,
    #[serde(default)]
    pub pseudo: PseudoConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            mpmc: MpmcConfig::default(),
            pseudo: PseudoConfig::default(),
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML file and apply `key=value` overrides (dotted paths,
    /// e.g. `pseudo.alpha=0.25`).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Value = text.parse().context("parsing config TOML")?;
        // Deep-merge over the defaults so partial tables (e.g. an `[mpmc]`
        // block setting only `enabled`) inherit the remaining fields.
        let mut value =
            toml::Value::try_from(ExperimentConfig::default()).expect("defaults serialize");
        merge_value(&mut value, user);
        for spec in overrides {
            apply_override(&mut value, spec)?;
        }
        let config: ExperimentConfig = value.try_into().context("deserializing config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.spec().validate()?;
        if let Some(path) = &self.dataset.path {
            if !path.exists() {
                bail!("dataset path {} does not exist", path.display());
            }
        }
        if self.dataset.num_train == 0 || self.dataset.num_val == 0 {
            bail!("num_train and num_val must be positive");
        }
        if self.optimizer.labeled_batch == 0 {
            bail!("labeled_batch must be at least 1");
        }
        if self.optimizer.eval_every == 0 {
            bail!("eval_every must be at least 1");
        }
        self.segmentor_spec().validate()?;
        if self.mpmc.enabled {
            self.mpmc_spec().validate()?;
        }
        self.hyper().validate()?;
        self.gamma_source()?;
        Ok(())
    }

    pub fn segmentor_spec(&self) -> SegmentorSpec {
        SegmentorSpec {
            stage_channels: self.model.stage_channels.clone(),
            stage_strides: self.model.stage_strides.clone(),
            tap_layer: self.model.tap_layer,
            num_classes: self.dataset.num_classes,
        }
    }

    pub fn mpmc_spec(&self) -> MpmcSpec {
        MpmcSpec {
            scales: self.mpmc.scales,
            hidden: self.mpmc.hidden,
            num_classes: self.dataset.num_classes,
            in_channels: self.model.stage_channels[self.model.tap_layer],
            branches: self.mpmc.branches,
        }
    }

    pub fn gamma_source(&self) -> Result<GammaSource> {
        match self.pseudo.gamma_source.as_str() {
            "logits" => Ok(GammaSource::Logits),
            "probs" => Ok(GammaSource::Probs),
            other => bail!("gamma_source must be \"logits\" or \"probs\", got {other:?}"),
        }
    }

    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            alpha: self.pseudo.alpha,
            beta: self.pseudo.beta,
            confidence_threshold: self.pseudo.confidence_threshold,
            ema_momentum: self.pseudo.ema_momentum,
            learning_rate: self.optimizer.learning_rate,
            sgd_momentum: self.optimizer.momentum,
            total_steps: self.optimizer.total_steps,
            poly_power: self.optimizer.poly_power,
            grad_clip: self.optimizer.grad_clip,
            tap_grad_clip: self.optimizer.tap_grad_clip,
            tap_grad_decay: self.optimizer.tap_grad_decay,
            warmup_steps: self.pseudo.warmup_steps,
            enable_mpmc_labeled: self.mpmc.enabled && self.mpmc.labeled_loss,
            enable_mpmc_unlabeled: self.mpmc.enabled && self.mpmc.unlabeled_loss,
            // Confidence weighting comes from the patch classifier's
            // unlabeled branch; without it the teacher head never trains and
            // its softmax would inject noise into the pseudo-label loss.
            use_lambda_s: self.mpmc.enabled && self.mpmc.unlabeled_loss && self.pseudo.use_lambda_s,
            use_lambda_m: self.mpmc.enabled && self.mpmc.unlabeled_loss && self.pseudo.use_lambda_m,
            gamma_source: self.gamma_source().unwrap_or_default(),
            focal: FocalParams {
                gamma_plus: self.mpmc.gamma_plus,
                gamma_minus: self.mpmc.gamma_minus,
            },
        }
    }

    /// Corpus and schedule shared by the paired supervised A/B benchmark:
    /// six classes with a mild long tail, 192 train scenes at a 1/16 label
    /// fraction, and a 400-step supervised-only schedule. Both named arms
    /// (`mpmc_off`, `mpmc_on`) differ only in the patch classifier.
    fn benchmark_base() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.out_dir = PathBuf::from("runs/benchmark");
        cfg.dataset.num_classes = 6;
        cfg.dataset.image_size = (48, 48);
        cfg.dataset.shapes_per_scene = (4, 8);
        cfg.dataset.class_frequency_skew = 2.0;
        cfg.dataset.num_train = 192;
        cfg.dataset.num_val = 48;
        cfg.augment.weak.out_size = (48, 48);
        cfg.model.stage_channels = vec![8, 16];
        cfg.model.stage_strides = vec![2, 2];
        cfg.model.tap_layer = 1;
        cfg.mpmc.scales = (3, 9);
        cfg.mpmc.hidden = 12;
        cfg.split.label_fraction = (1, 16);
        cfg.pseudo.alpha = 0.0;
        cfg.pseudo.beta = 0.0;
        cfg.optimizer.unlabeled_batch = 0;
        cfg.optimizer.labeled_batch = 8;
        cfg.optimizer.learning_rate = 0.02;
        cfg.optimizer.grad_clip = 5.0;
        cfg.optimizer.tap_grad_clip = 0.5;
        cfg.optimizer.total_steps = 400;
        cfg.optimizer.eval_every = 100;
        cfg
    }

    /// Supervised-only benchmark arm without the patch classifier.
    pub fn preset_mpmc_off() -> Self {
        let mut cfg = Self::benchmark_base();
        cfg.out_dir = PathBuf::from("runs/mpmc_off");
        cfg.mpmc.enabled = false;
        cfg
    }

    /// Supervised-only benchmark arm with the patch classifier trained on
    /// the labeled images.
    pub fn preset_mpmc_on() -> Self {
        let mut cfg = Self::benchmark_base();
        cfg.out_dir = PathBuf::from("runs/mpmc_on");
        cfg.mpmc.enabled = true;
        cfg.mpmc.labeled_loss = true;
        cfg.mpmc.unlabeled_loss = false;
        cfg
    }

    /// Look up a named run preset.
    pub fn named_preset(name: &str) -> Result<Self> {
        match name {
            "mpmc_off" => Ok(Self::preset_mpmc_off()),
            "mpmc_on" => Ok(Self::preset_mpmc_on()),
            other => bail!("unknown run preset {other:?}; available presets: mpmc_off, mpmc_on"),
        }
    }

    /// Loss-weight preset from the main results: alpha 0.1, beta 0.25.
    pub fn preset_main(mut self) -> Self {
        self.pseudo.alpha = 0.1;
        self.pseudo.beta = 0.25;
        self
    }

    /// Loss-weight preset from the sweep-tuned optimum: alpha 0.25,
    /// beta 0.15.
    pub fn preset_sweep_tuned(mut self) -> Self {
        self.pseudo.alpha = 0.25;
        self.pseudo.beta = 0.15;
        self
    }

    /// FNV-1a hash of the canonical serialization; stable across
    /// re-serialization because field order is fixed by the struct.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut out = String::new();
        write!(out, "{h:016x}").expect("write to string");
        out
    }
}

/// Overlay `user` onto `base`: tables merge key-wise, everything else
/// replaces.
fn merge_value(base: &mut toml::Value, user: toml::Value) {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (key, value) in u {
                match b.get_mut(&key) {
                    Some(slot) => merge_value(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Apply one `dotted.path=value` override to a TOML tree. The value is
/// parsed as TOML; bare words fall back to strings.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} is not key=value"))?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("inserted above"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (n, seg) in segments.iter().enumerate() {
        let table = node
            .as_table_mut()
            .with_context(|| format!("override path {path:?}: {seg:?} is not a table"))?;
        if n + 1 == segments.len() {
            table.insert(seg.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("loop returns on the last segment")
}
