//! Resolved run settings: defaults, then the `key = value` config file,
//! then command-line flags. The echo written next to every run's outputs
//! holds every resolved key and can be fed back with `--config`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rawinst_core::models::Variant;
use rawinst_core::training::TrainConfig;
use rawinst_core::{Error, Result};

/// Environment variable naming the default data root.
pub const DATA_ENV: &str = "RAWINST_DATA";

/// Which labels enter the metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelScope {
    /// All eleven instruments.
    All,
    /// Only labels active in at least one evaluated track.
    Active,
}

impl FromStr for LabelScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(LabelScope::All),
            "active" => Ok(LabelScope::Active),
            _ => Err(Error::Config(format!(
                "labels must be 'all' or 'active', got '{s}'"
            ))),
        }
    }
}

impl LabelScope {
    fn as_str(self) -> &'static str {
        match self {
            LabelScope::All => "all",
            LabelScope::Active => "active",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub model: Option<Variant>,
    pub data_root: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub threshold: f64,
    pub labels: LabelScope,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        RunConfig {
            command: command.to_string(),
            model: None,
            data_root: None,
            out_dir: None,
            train: TrainConfig::default(),
            threshold: 0.5,
            labels: LabelScope::All,
            checkpoint: None,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "command" => {
                if value != self.command {
                    return Err(Error::Config(format!(
                        "config file is for '{value}', not '{}'",
                        self.command
                    )));
                }
            }
            "model" => self.model = Some(value.parse()?),
            "data_root" => self.data_root = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "threshold" => {
                self.threshold = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid threshold '{value}'")))?
            }
            "labels" => self.labels = value.parse()?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Falls back to the environment for an unset data root.
    pub fn fill_from_env(&mut self) {
        if self.data_root.is_none() {
            self.data_root = std::env::var_os(DATA_ENV).map(PathBuf::from);
        }
    }

    pub fn require_model(&self) -> Result<Variant> {
        self.model
            .ok_or_else(|| Error::Config("--model is required".into()))
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data_root
            .as_deref()
            .ok_or_else(|| Error::Config(format!("--data is required (or set {DATA_ENV})")))
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("--out is required".into()))
    }

    /// Every resolved key, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        if let Some(m) = self.model {
            let _ = writeln!(out, "model = {m}");
        }
        if let Some(p) = &self.data_root {
            let _ = writeln!(out, "data_root = {}", p.display());
        }
        if let Some(p) = &self.out_dir {
            let _ = writeln!(out, "out_dir = {}", p.display());
        }
        if let Some(p) = &self.checkpoint {
            let _ = writeln!(out, "checkpoint = {}", p.display());
        }
        out.push_str(&self.train.to_kv_text());
        let _ = writeln!(out, "threshold = {}", self.threshold);
        let _ = writeln!(out, "labels = {}", self.labels.as_str());
        out
    }
}
