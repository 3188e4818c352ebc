use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which cross-validation fold(s) to train.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldSelection {
    One(usize),
    All,
}

impl fmt::Display for FoldSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldSelection::One(k) => write!(f, "{k}"),
            FoldSelection::All => f.write_str("all"),
        }
    }
}

impl FromStr for FoldSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(FoldSelection::All);
        }
        s.parse()
            .map(FoldSelection::One)
            .map_err(|_| Error::Config(format!("fold must be an index or 'all', got '{s}'")))
    }
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    /// Non-improving epochs before the learning rate decays.
    pub lr_patience_epochs: usize,
    /// Non-improving epochs before training stops.
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub fold: FoldSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr_init: 0.001,
            lr_decay_factor: 0.9,
            lr_patience_epochs: 4,
            early_stop_patience: 7,
            max_epochs: 100,
            seed: 0,
            fold: FoldSelection::One(0),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 8] = [
        "batch_size",
        "lr_init",
        "lr_decay_factor",
        "lr_patience_epochs",
        "early_stop_patience",
        "max_epochs",
        "seed",
        "fold",
    ];

    /// Sets one hyperparameter by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr_init" => self.lr_init = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "lr_patience_epochs" => self.lr_patience_epochs = parse(key, value)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "fold" => self.fold = value.parse()?,
            _ => return Err(Error::Config(format!("unknown training key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad("lr_init must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must be in (0, 1]");
        }
        if self.lr_patience_epochs == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive");
        }
        Ok(())
    }

    /// `key = value` lines covering every field.
    pub fn to_kv_text(&self) -> String {
        format!(
            "batch_size = {}\nlr_init = {}\nlr_decay_factor = {}\nlr_patience_epochs = {}\n\
             early_stop_patience = {}\nmax_epochs = {}\nseed = {}\nfold = {}\n",
            self.batch_size,
            self.lr_init,
            self.lr_decay_factor,
            self.lr_patience_epochs,
            self.early_stop_patience,
            self.max_epochs,
            self.seed,
            self.fold
        )
    }
}
