//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nngrams::model::{InputMode, ModelConfig};
use nngrams::noise::DEFAULT_CONFIDENCE_THRESHOLD;
use nngrams::ngram::DEFAULT_GT_CUTOFF;
use nngrams::rescore::{RescoreConfig, RescoreModel};
use nngrams::training::{Plateau, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rescore: RescoreConfig,
    pub vocab_max_size: usize,
    pub vocab_min_count: u64,
    pub katz_order: usize,
    pub katz_gt_cutoff: u64,
    pub noise_threshold: f64,
    pub seed: Option<u64>,
    pub paths: BTreeMap<String, PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::large(),
            train: TrainConfig::default(),
            rescore: RescoreConfig::default(),
            vocab_max_size: 2_000_000,
            vocab_min_count: 1,
            katz_order: 6,
            katz_gt_cutoff: DEFAULT_GT_CUTOFF,
            noise_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            seed: None,
            paths: BTreeMap::new(),
        }
    }
}

const PATH_KEYS: &[&str] = &[
    "corpus", "vocab", "counts", "arpa", "model", "lattice", "lattices", "speech_noise", "testset", "nbest_dir",
    "text", "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Validation(format!("invalid value '{value}' for {key}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut config = RunConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("config line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "model.vocab_size" => m.vocab_size = parse(key, value)?,
            "model.d" | "model.embed_dim" => m.embed_dim = parse(key, value)?,
            "model.k" | "model.history" => m.history = parse(key, value)?,
            "model.n" | "model.count_order" => m.count_order = parse(key, value)?,
            "model.hidden_a" => m.hidden_a = parse(key, value)?,
            "model.hidden_b" => m.hidden_b = parse(key, value)?,
            "model.hidden_c" => m.hidden_c = parse(key, value)?,
            "model.input_mode" => {
                m.input_mode = InputMode::from_str(value).map_err(|e| CliError::Validation(e.to_string()))?
            }
            "train.lr" => t.lr = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.noise_samples" => t.noise_samples = parse(key, value)?,
            "train.max_steps" => t.max_steps = parse(key, value)?,
            "train.max_epochs" => t.max_epochs = parse(key, value)?,
            "train.eps" => t.eps = parse(key, value)?,
            "train.log_every" => t.log_every = parse(key, value)?,
            "train.clip_norm" => t.clip_norm = optional(key, value)?,
            "train.plateau_window" => match optional::<usize>(key, value)? {
                Some(window) => t.plateau.get_or_insert_with(Plateau::default).window = window,
                None => t.plateau = None,
            },
            "train.plateau_min_improvement" => {
                t.plateau.get_or_insert_with(Plateau::default).min_improvement = parse(key, value)?
            }
            "train.threads" => t.threads = parse(key, value)?,
            "rescore.weight" => self.rescore.weight = parse(key, value)?,
            "rescore.model" => {
                self.rescore.model = RescoreModel::from_str(value).map_err(|e| CliError::Validation(e.to_string()))?
            }
            "rescore.n" => self.rescore.n = parse(key, value)?,
            "vocab.max_size" => self.vocab_max_size = parse(key, value)?,
            "vocab.min_count" => self.vocab_min_count = parse(key, value)?,
            "katz.order" => self.katz_order = parse(key, value)?,
            "katz.gt_cutoff" => self.katz_gt_cutoff = parse(key, value)?,
            "noise.confidence_threshold" => self.noise_threshold = parse(key, value)?,
            "run.seed" => self.seed = Some(parse(key, value)?),
            _ => match key.strip_prefix("paths.") {
                Some(name) if PATH_KEYS.contains(&name) => {
                    self.paths.insert(name.to_string(), PathBuf::from(value));
                }
                _ => return Err(CliError::Validation(format!("unknown config key '{key}'"))),
            },
        }
        Ok(())
    }

    /// Checks every field before any stage runs.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.rescore.validate()?;
        if self.vocab_max_size < 3 {
            return Err(CliError::Validation("vocab.max_size must be at least 3".into()));
        }
        if self.katz_order == 0 || self.katz_gt_cutoff == 0 {
            return Err(CliError::Validation("katz.order and katz.gt_cutoff must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_threshold) {
            return Err(CliError::Validation("noise.confidence_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// A path from a flag, falling back to `paths.<name>`.
    pub fn path(&self, flag: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| self.paths.get(name).cloned())
            .ok_or_else(|| {
                CliError::Validation(format!("missing --{} (or paths.{name})", name.replace('_', "-")))
            })
    }

    pub fn require_seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        flag.or(self.seed)
            .ok_or_else(|| CliError::Validation("this command is randomized and needs --seed".into()))
    }
}
