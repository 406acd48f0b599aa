use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::Pooling;
use crate::error::{Error, Result};

/// Training objective variant.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// L1 + L2 for well-defined golds, confusion-set L3 for *Vague*.
    #[default]
    Metre,
    /// Confusion set forced empty: *Vague* instances contribute no loss.
    MetreNoCs,
    /// Adds the penalty on relations outside the confusion set.
    MetrePnt,
    /// Single-label softmax classifier over relations plus *Vague*.
    Baseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Metre, Mode::MetreNoCs, Mode::MetrePnt, Mode::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Metre => "metre",
            Mode::MetreNoCs => "metre_no_cs",
            Mode::MetrePnt => "metre_pnt",
            Mode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Hyperparameters and model shape. Read from a flat TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Per-step increase rate of the *Vague* loss weight.
    pub alpha: f64,
    /// Cap on the *Vague* loss weight.
    pub w_bar: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub buckets: usize,
    pub window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub pair_dim: usize,
    pub pooling: Pooling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            w_bar: 1.0,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            mode: Mode::Metre,
            buckets: 4096,
            window: 5,
            embed_dim: 64,
            hidden_dim: 64,
            pair_dim: 64,
            pooling: Pooling::Window,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a finite value >= 0");
        }
        if !(self.w_bar >= 0.0 && self.w_bar.is_finite()) {
            return bad("w_bar must be a finite value >= 0");
        }
        // Zero is accepted so a run can be replayed without updates.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite value >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.buckets == 0 || self.embed_dim == 0 || self.hidden_dim == 0 || self.pair_dim == 0 {
            return bad("model widths and bucket count must be positive");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
