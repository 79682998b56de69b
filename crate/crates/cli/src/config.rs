//! Run configuration: defaults, then a flat `key = value` file, then flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use duip_core::data::{LogFormat, SessionPolicy, SplitFractions};
use duip_core::eval::DEFAULT_NEIGHBORS;
use duip_core::trainer::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub format: LogFormat,
    pub policy: SessionPolicy,
    pub tolerance: usize,
    pub categories: Option<PathBuf>,
    pub fractions: SplitFractions,
    pub out: PathBuf,
    pub models: Vec<String>,
    pub k_neighbors: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            format: LogFormat::Tsv,
            policy: SessionPolicy::Daily,
            tolerance: 0,
            categories: None,
            fractions: SplitFractions::default(),
            out: PathBuf::from("duip-out"),
            models: Vec::new(),
            k_neighbors: DEFAULT_NEIGHBORS,
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("bad value `{value}` for `{key}`: {e}")))
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "data",
        "format",
        "policy",
        "tolerance",
        "categories",
        "train_fraction",
        "valid_fraction",
        "test_fraction",
        "out",
        "models",
        "k_neighbors",
        "seed",
        "epochs",
        "batch_size",
        "learning_rate",
        "beta1",
        "beta2",
        "adam_eps",
        "grad_clip_norm",
        "early_stop_patience",
        "d_in",
        "d_h",
        "d_lm",
        "d_ff",
        "n_layers",
        "n_heads",
        "m",
        "max_hard_len",
        "max_len",
        "prompt_mode",
        "d_f",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        let md = &mut t.model;
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "format" => self.format = parse(key, value)?,
            "policy" => self.policy = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            "categories" => self.categories = Some(PathBuf::from(value)),
            "train_fraction" => self.fractions.train = parse(key, value)?,
            "valid_fraction" => self.fractions.valid = parse(key, value)?,
            "test_fraction" => self.fractions.test = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "models" => {
                self.models = value
                    .split(',')
                    .map(|m| m.trim().to_ascii_lowercase())
                    .filter(|m| !m.is_empty())
                    .collect()
            }
            "k_neighbors" => self.k_neighbors = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "grad_clip_norm" => t.grad_clip_norm = parse(key, value)?,
            "early_stop_patience" => t.early_stop_patience = parse(key, value)?,
            "d_in" => md.d_in = parse(key, value)?,
            "d_h" => md.d_h = parse(key, value)?,
            "d_lm" => md.d_lm = parse(key, value)?,
            "d_ff" => md.d_ff = parse(key, value)?,
            "n_layers" => md.n_layers = parse(key, value)?,
            "n_heads" => md.n_heads = parse(key, value)?,
            "m" => md.m = parse(key, value)?,
            "max_hard_len" => md.max_hard_len = parse(key, value)?,
            "max_len" => md.max_len = parse(key, value)?,
            "prompt_mode" => md.prompt_mode = parse(key, value)?,
            "d_f" => md.d_f = parse(key, value)?,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown config key `{key}` (known: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected `key = value`", origin.display(), i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", origin.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, path)
    }

    /// `--set key=value` overrides, in order.
    pub fn apply_pairs(&mut self, pairs: &[String]) -> Result<(), CliError> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{p}`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// The data path, which must exist.
    pub fn data_path(&self) -> Result<&Path, CliError> {
        let p = self
            .data
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset given (use --data or `data = ...`)".into()))?;
        require_file(p)?;
        if let Some(c) = &self.categories {
            require_file(c)?;
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.fractions.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.k_neighbors == 0 {
            return Err(CliError::Usage("k_neighbors must be positive".into()));
        }
        Ok(())
    }
}

pub fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{}: no such file", p.display())))
    }
}
