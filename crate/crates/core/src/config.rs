//! Flat `key = value` configuration with typed task settings on top.
//!
//! Resolution order: built-in defaults, then the preset for the chosen task,
//! then a config file, then command-line overrides. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lexico::{ConstraintFloor, Mode};
use crate::nets::Activation;

/// Defaults follow the reference hyperparameters (learning rate 1e-5, batch
/// 64, 10 sampling steps, sequence length 64, dropout 0.1, 20k iterations).
const DEFAULTS: &[(&str, &str)] = &[
    ("task", "gauss2d"),
    ("seed", "0"),
    ("latent_dim", "16"),
    ("hidden_dims", "256,256"),
    ("time_embed_dim", "32"),
    ("activation", "relu"),
    ("steps", "10"),
    ("iterations", "20000"),
    ("flow_iterations", "0"),
    ("batch_size", "64"),
    ("lr", "1e-5"),
    ("optimizer", "adam"),
    ("mode", "lexico"),
    ("constraint", "running_min"),
    ("log_every", "1"),
    ("checkpoint_every", "0"),
    ("divergence_threshold", "1e6"),
    ("embed_dim", "32"),
    ("hidden_dim", "64"),
    ("max_len", "64"),
    ("kl_warmup_steps", "2000"),
    ("kl_weight_max", "1"),
    ("dropout", "0.1"),
    ("corpus_size", "20000"),
    ("val_fraction", "0.1"),
    ("test_fraction", "0.1"),
    ("target_length", "12"),
    ("source_style", "0"),
    ("target_style", "1"),
    ("gauss_mu1", "3,0"),
    ("gauss_sigma1", "1"),
    ("n_samples", "200"),
    ("sw_projections", "128"),
    ("ngram_order", "3"),
    ("ngram_smoothing", "0.1"),
];

/// Desk-scale rescaling of the defaults per task.
fn preset(task: TaskKind) -> &'static [(&'static str, &'static str)] {
    match task {
        TaskKind::Gauss2d => &[
            ("latent_dim", "2"),
            ("constraint", "0"),
            ("iterations", "10000"),
            ("batch_size", "256"),
            ("lr", "1e-3"),
        ],
        TaskKind::LengthControl => &[
            ("iterations", "3000"),
            ("batch_size", "32"),
            ("lr", "2e-3"),
            ("kl_warmup_steps", "1000"),
            ("kl_weight_max", "0.01"),
            ("dropout", "0"),
            ("corpus_size", "4000"),
            ("hidden_dims", "128,128"),
        ],
        TaskKind::StyleTransfer => &[
            ("iterations", "2000"),
            ("batch_size", "32"),
            ("lr", "2e-3"),
            ("kl_warmup_steps", "1000"),
            ("kl_weight_max", "0.01"),
            ("dropout", "0"),
            ("corpus_size", "4000"),
            ("hidden_dims", "128,128"),
        ],
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Config {
    /// Built-in defaults plus the task preset.
    pub fn for_task(task: TaskKind) -> Self {
        let mut values: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in preset(task) {
            values.insert(k.to_string(), v.to_string());
        }
        values.insert("task".into(), task.name().into());
        Config { values }
    }

    /// Resolves a full config from optional file text and overrides. The task
    /// is taken from the overrides, then the file, then `fallback_task`.
    pub fn resolve(file_text: Option<&str>, overrides: &[(String, String)], fallback_task: Option<TaskKind>) -> Result<Self> {
        let file_pairs = file_text.map(parse_pairs).transpose()?.unwrap_or_default();
        let task = overrides
            .iter()
            .rev()
            .chain(file_pairs.iter().rev())
            .find(|(k, _)| k == "task")
            .map(|(_, v)| v.parse::<TaskKind>())
            .transpose()?
            .or(fallback_task)
            .ok_or_else(|| Error::Config("no task given".into()))?;
        let mut cfg = Config::for_task(task);
        for (k, v) in file_pairs.iter().chain(overrides) {
            cfg.set(k, v)?;
        }
        cfg.settings()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::resolve(Some(&text), overrides, None)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    pub fn get_str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no config key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get_str(key);
        raw.parse().map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
    }

    fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get_str(key)
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad list {:?} for {key}", self.get_str(key)))))
            .collect()
    }

    /// Canonical text form: sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn settings(&self) -> Result<TaskSpec> {
        TaskSpec::from_config(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// `π0 = N(0, I₂)` to `π1 = N(mu1, sigma1² I₂)`, no VAE.
    Gauss2d,
    /// Prior latents to latents of sentences of one target length.
    LengthControl,
    /// Latents of source-style sentences to latents of target-style ones.
    StyleTransfer,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Gauss2d => "gauss2d",
            TaskKind::LengthControl => "length_control",
            TaskKind::StyleTransfer => "style_transfer",
        }
    }

    pub fn uses_text(self) -> bool {
        self != TaskKind::Gauss2d
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss2d" => Ok(TaskKind::Gauss2d),
            "length_control" => Ok(TaskKind::LengthControl),
            "style_transfer" => Ok(TaskKind::StyleTransfer),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Typed view of a resolved [`Config`].
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub task: TaskKind,
    pub seed: u64,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
    pub steps: usize,
    pub iterations: usize,
    pub flow_iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: String,
    pub mode: Mode,
    pub constraint: ConstraintFloor,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub divergence_threshold: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub kl_warmup_steps: usize,
    pub kl_weight_max: f64,
    pub dropout: f64,
    pub corpus_size: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub target_length: usize,
    pub source_style: usize,
    pub target_style: usize,
    pub gauss_mu1: Vec<f64>,
    pub gauss_sigma1: f64,
    pub n_samples: usize,
    pub sw_projections: usize,
    pub ngram_order: usize,
    pub ngram_smoothing: f64,
}

impl TaskSpec {
    pub fn from_config(c: &Config) -> Result<Self> {
        let spec = TaskSpec {
            task: c.get("task")?,
            seed: c.get("seed")?,
            latent_dim: c.get("latent_dim")?,
            hidden_dims: c.get_list("hidden_dims")?,
            time_embed_dim: c.get("time_embed_dim")?,
            activation: c.get("activation")?,
            steps: c.get("steps")?,
            iterations: c.get("iterations")?,
            flow_iterations: c.get("flow_iterations")?,
            batch_size: c.get("batch_size")?,
            lr: c.get("lr")?,
            optimizer: c.get_str("optimizer").to_string(),
            mode: c.get("mode")?,
            constraint: c.get("constraint")?,
            log_every: c.get("log_every")?,
            checkpoint_every: c.get("checkpoint_every")?,
            divergence_threshold: c.get("divergence_threshold")?,
            embed_dim: c.get("embed_dim")?,
            hidden_dim: c.get("hidden_dim")?,
            max_len: c.get("max_len")?,
            kl_warmup_steps: c.get("kl_warmup_steps")?,
            kl_weight_max: c.get("kl_weight_max")?,
            dropout: c.get("dropout")?,
            corpus_size: c.get("corpus_size")?,
            val_fraction: c.get("val_fraction")?,
            test_fraction: c.get("test_fraction")?,
            target_length: c.get("target_length")?,
            source_style: c.get("source_style")?,
            target_style: c.get("target_style")?,
            gauss_mu1: c.get_list("gauss_mu1")?,
            gauss_sigma1: c.get("gauss_sigma1")?,
            n_samples: c.get("n_samples")?,
            sw_projections: c.get("sw_projections")?,
            ngram_order: c.get("ngram_order")?,
            ngram_smoothing: c.get("ngram_smoothing")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 {
            return fail("steps must be at least 1".into());
        }
        if self.batch_size == 0 || self.latent_dim == 0 || self.hidden_dims.contains(&0) {
            return fail("batch_size, latent_dim and hidden_dims must be positive".into());
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return fail(format!("time_embed_dim must be even, got {}", self.time_embed_dim));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return fail("lr must be >= 0 and dropout in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.kl_weight_max) {
            return fail(format!("kl_weight_max must be in [0, 1], got {}", self.kl_weight_max));
        }
        if !matches!(self.optimizer.as_str(), "adam" | "sgd") {
            return fail(format!("unknown optimizer {:?}", self.optimizer));
        }
        if self.task == TaskKind::Gauss2d && (self.latent_dim != self.gauss_mu1.len() || self.gauss_sigma1 <= 0.0) {
            return fail("gauss2d needs latent_dim == len(gauss_mu1) and gauss_sigma1 > 0".into());
        }
        if self.val_fraction + self.test_fraction >= 1.0 || self.val_fraction < 0.0 || self.test_fraction < 0.0 {
            return fail("val_fraction + test_fraction must be in [0, 1)".into());
        }
        if self.source_style > 1 || self.target_style > 1 || self.source_style == self.target_style {
            return fail("source_style and target_style must be 0 and 1 in some order".into());
        }
        if self.ngram_order == 0 || self.ngram_smoothing <= 0.0 {
            return fail("ngram_order and ngram_smoothing must be positive".into());
        }
        Ok(())
    }

    /// Iterations spent in the flow-only phase of separate training.
    pub fn flow_phase_iterations(&self) -> usize {
        if self.flow_iterations == 0 {
            self.iterations
        } else {
            self.flow_iterations
        }
    }
}
