use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which sequence element (or window start) feeds the static posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorPolicy {
    First,
    Middle,
    Last,
    /// Drawn once when the model is created, then fixed.
    RandomFixed,
    /// Drawn again for every batch.
    RandomOnBatch,
}

impl AnchorPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            AnchorPolicy::First => "first",
            AnchorPolicy::Middle => "middle",
            AnchorPolicy::Last => "last",
            AnchorPolicy::RandomFixed => "random",
            AnchorPolicy::RandomOnBatch => "rob",
        }
    }
}

impl FromStr for AnchorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "first" => AnchorPolicy::First,
            "middle" => AnchorPolicy::Middle,
            "last" => AnchorPolicy::Last,
            "random" | "random_fixed" => AnchorPolicy::RandomFixed,
            "rob" | "random_on_batch" => AnchorPolicy::RandomOnBatch,
            other => return Err(Error::Config(format!("unknown anchor policy `{other}`"))),
        })
    }
}

impl fmt::Display for AnchorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The two architectural/objective ablations and their combination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Drop the anchor reconstruction term (alpha treated as zero).
    pub no_static_loss: bool,
    /// Feed raw encoder outputs to the dynamic path instead of differences.
    pub no_subtraction: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        no_static_loss: false,
        no_subtraction: false,
    };

    pub fn as_str(self) -> &'static str {
        match (self.no_static_loss, self.no_subtraction) {
            (false, false) => "none",
            (true, false) => "no-loss",
            (false, true) => "no-sub",
            (true, true) => "no-both",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (no_static_loss, no_subtraction) = match s {
            "none" => (false, false),
            "no-loss" | "no_loss" => (true, false),
            "no-sub" | "no_sub" => (false, true),
            "no-both" | "no_both" => (true, true),
            other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
        };
        Ok(Ablation {
            no_static_loss,
            no_subtraction,
        })
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecoderVariance {
    /// Pure squared error.
    #[default]
    FixedUnit,
    /// Experimental: an extra head predicts a per-element log-variance.
    Learned,
}

impl FromStr for DecoderVariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_unit" => Ok(DecoderVariance::FixedUnit),
            "learned" => Ok(DecoderVariance::Learned),
            other => Err(Error::Config(format!("unknown decoder variance `{other}`"))),
        }
    }
}

impl fmt::Display for DecoderVariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderVariance::FixedUnit => "fixed_unit",
            DecoderVariance::Learned => "learned",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub input_dim: usize,
    /// Encoder output width (per-element feature g_t).
    pub g_dim: usize,
    pub enc_hidden: [usize; 2],
    pub s_dim: usize,
    pub d_dim: usize,
    /// Hidden width of the dynamic-posterior and prior LSTMs.
    pub lstm_hidden: usize,
    /// Width of the decoder projection and decoder LSTM.
    pub dec_hidden: usize,
    pub dec_mlp_hidden: usize,
    pub anchor: AnchorPolicy,
    pub anchor_window: usize,
    pub ablation: Ablation,
    pub decoder_variance: DecoderVariance,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 20,
            input_dim: 10,
            g_dim: 32,
            enc_hidden: [32, 64],
            s_dim: 8,
            d_dim: 8,
            lstm_hidden: 32,
            dec_hidden: 32,
            dec_mlp_hidden: 64,
            anchor: AnchorPolicy::First,
            anchor_window: 1,
            ablation: Ablation::NONE,
            decoder_variance: DecoderVariance::FixedUnit,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("seq_len", self.seq_len),
            ("input_dim", self.input_dim),
            ("g_dim", self.g_dim),
            ("enc_hidden[0]", self.enc_hidden[0]),
            ("enc_hidden[1]", self.enc_hidden[1]),
            ("s_dim", self.s_dim),
            ("d_dim", self.d_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("dec_hidden", self.dec_hidden),
            ("dec_mlp_hidden", self.dec_mlp_hidden),
            ("anchor_window", self.anchor_window),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        if self.anchor_window > self.seq_len {
            return Err(Error::Config(format!(
                "anchor window {} exceeds sequence length {}",
                self.anchor_window, self.seq_len
            )));
        }
        Ok(())
    }

    /// Number of admissible window start positions.
    pub fn anchor_positions(&self) -> usize {
        self.seq_len - self.anchor_window + 1
    }

    /// Window start for the deterministic policies.
    pub fn fixed_anchor(&self) -> Option<usize> {
        let span = self.seq_len - self.anchor_window;
        match self.anchor {
            AnchorPolicy::First => Some(0),
            AnchorPolicy::Middle => Some(span / 2),
            AnchorPolicy::Last => Some(span),
            AnchorPolicy::RandomFixed | AnchorPolicy::RandomOnBatch => None,
        }
    }

    pub fn check_anchor(&self, anchor: usize) -> Result<()> {
        if anchor + self.anchor_window > self.seq_len {
            return Err(Error::Config(format!(
                "anchor window {anchor}..{} out of range for sequence length {}",
                anchor + self.anchor_window,
                self.seq_len
            )));
        }
        Ok(())
    }
}
