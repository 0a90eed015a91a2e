//! Flat `key=value` run configuration.
//!
//! One file covers training, model, data and evaluation settings. Lines are
//! `key = value`; `#` starts a comment; unknown or repeated keys are errors.
//! `seed` is required. The digest is the SHA-256 of the canonical form
//! (every key, sorted, `key=value\n`).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::artifact::header_text;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthdata::SyntheticSpec;
use crate::training::TrainConfig;

/// Settings for the evaluation harness.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub seed: u64,
    /// Hidden width of both judge layers.
    pub judge_hidden: usize,
    pub judge_epochs: usize,
    pub judge_lr: f64,
    pub judge_batch: usize,
    pub swap_pairs: usize,
    pub eer_pairs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            judge_hidden: 64,
            judge_epochs: 60,
            judge_lr: 3e-3,
            judge_batch: 32,
            swap_pairs: 200,
            eer_pairs: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub data: SyntheticSpec,
    /// Fraction of the data used for training.
    pub train_fraction: f64,
    pub split_seed: u64,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            data: SyntheticSpec::default(),
            train_fraction: 0.8,
            split_seed: 0,
            eval: EvalConfig::default(),
        }
    }
}

/// Parses `key = value` lines into a map.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(j) => &raw[..j],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key `{k}` given twice", i + 1)));
        }
    }
    Ok(map)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{v}`")))
}

fn parse_with<T>(key: &str, v: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    f(v).map_err(|e| Error::Config(format!("key `{key}`: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_kv(text)?)
    }

    /// Applies `map` over the defaults. `seed` must be present; `data.seed`
    /// and `eval.seed` default to it. Model sequence length and input width
    /// default to the data's.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let seed: u64 = match map.get("seed") {
            Some(v) => parse("seed", v)?,
            None => return Err(Error::Config("missing required key `seed`".into())),
        };
        let mut c = RunConfig::default();
        c.train.seed = seed;
        c.data.seed = seed;
        c.eval.seed = seed;
        let mut model_seq_len = None;
        let mut model_input_dim = None;
        for (k, v) in map {
            let k = k.as_str();
            let v = v.as_str();
            match k {
                "seed" => {}
                "train.alpha" => c.train.alpha = parse(k, v)?,
                "train.beta" => c.train.beta = parse(k, v)?,
                "train.kl_range" => c.train.kl_range = parse_with(k, v, str::parse)?,
                "train.lr" => c.train.lr = parse(k, v)?,
                "train.batch_size" => c.train.batch_size = parse(k, v)?,
                "train.epochs" => c.train.epochs = parse(k, v)?,
                "train.checkpoint_every" => c.train.checkpoint_every = parse(k, v)?,
                "model.seq_len" => model_seq_len = Some(parse(k, v)?),
                "model.input_dim" => model_input_dim = Some(parse(k, v)?),
                "model.g_dim" => c.model.g_dim = parse(k, v)?,
                "model.enc_hidden1" => c.model.enc_hidden[0] = parse(k, v)?,
                "model.enc_hidden2" => c.model.enc_hidden[1] = parse(k, v)?,
                "model.s_dim" => c.model.s_dim = parse(k, v)?,
                "model.d_dim" => c.model.d_dim = parse(k, v)?,
                "model.lstm_hidden" => c.model.lstm_hidden = parse(k, v)?,
                "model.dec_hidden" => c.model.dec_hidden = parse(k, v)?,
                "model.dec_mlp_hidden" => c.model.dec_mlp_hidden = parse(k, v)?,
                "model.anchor" => c.model.anchor = parse_with(k, v, str::parse)?,
                "model.anchor_window" => c.model.anchor_window = parse(k, v)?,
                "model.ablation" => c.model.ablation = parse_with(k, v, str::parse)?,
                "model.decoder_variance" => c.model.decoder_variance = parse_with(k, v, str::parse)?,
                "data.n_sequences" => c.data.n_sequences = parse(k, v)?,
                "data.seq_len" => c.data.seq_len = parse(k, v)?,
                "data.dim" => c.data.dim = parse(k, v)?,
                "data.static_classes" => c.data.static_classes = parse(k, v)?,
                "data.dynamic_classes" => c.data.dynamic_classes = parse(k, v)?,
                "data.noise" => c.data.noise = parse(k, v)?,
                "data.seed" => c.data.seed = parse(k, v)?,
                "data.train_fraction" => c.train_fraction = parse(k, v)?,
                "data.split_seed" => c.split_seed = parse(k, v)?,
                "eval.seed" => c.eval.seed = parse(k, v)?,
                "eval.judge_hidden" => c.eval.judge_hidden = parse(k, v)?,
                "eval.judge_epochs" => c.eval.judge_epochs = parse(k, v)?,
                "eval.judge_lr" => c.eval.judge_lr = parse(k, v)?,
                "eval.judge_batch" => c.eval.judge_batch = parse(k, v)?,
                "eval.swap_pairs" => c.eval.swap_pairs = parse(k, v)?,
                "eval.eer_pairs" => c.eval.eer_pairs = parse(k, v)?,
                _ => return Err(Error::UnknownKey(k.to_string())),
            }
        }
        c.model.seq_len = model_seq_len.unwrap_or(c.data.seq_len);
        c.model.input_dim = model_input_dim.unwrap_or(c.data.dim);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!(
                "data.train_fraction must lie in [0, 1], got {}",
                self.train_fraction
            )));
        }
        let e = &self.eval;
        if e.judge_hidden == 0 || e.judge_batch == 0 || !(e.judge_lr > 0.0) {
            return Err(Error::Config("eval judge settings must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its current value.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: &dyn Display| {
            m.insert(k.to_string(), v.to_string());
        };
        let (t, md, d, e) = (&self.train, &self.model, &self.data, &self.eval);
        put("seed", &t.seed);
        put("train.alpha", &t.alpha);
        put("train.beta", &t.beta);
        put("train.kl_range", &t.kl_range);
        put("train.lr", &t.lr);
        put("train.batch_size", &t.batch_size);
        put("train.epochs", &t.epochs);
        put("train.checkpoint_every", &t.checkpoint_every);
        put("model.seq_len", &md.seq_len);
        put("model.input_dim", &md.input_dim);
        put("model.g_dim", &md.g_dim);
        put("model.enc_hidden1", &md.enc_hidden[0]);
        put("model.enc_hidden2", &md.enc_hidden[1]);
        put("model.s_dim", &md.s_dim);
        put("model.d_dim", &md.d_dim);
        put("model.lstm_hidden", &md.lstm_hidden);
        put("model.dec_hidden", &md.dec_hidden);
        put("model.dec_mlp_hidden", &md.dec_mlp_hidden);
        put("model.anchor", &md.anchor);
        put("model.anchor_window", &md.anchor_window);
        put("model.ablation", &md.ablation);
        put("model.decoder_variance", &md.decoder_variance);
        put("data.n_sequences", &d.n_sequences);
        put("data.seq_len", &d.seq_len);
        put("data.dim", &d.dim);
        put("data.static_classes", &d.static_classes);
        put("data.dynamic_classes", &d.dynamic_classes);
        put("data.noise", &d.noise);
        put("data.seed", &d.seed);
        put("data.train_fraction", &self.train_fraction);
        put("data.split_seed", &self.split_seed);
        put("eval.seed", &e.seed);
        put("eval.judge_hidden", &e.judge_hidden);
        put("eval.judge_epochs", &e.judge_epochs);
        put("eval.judge_lr", &e.judge_lr);
        put("eval.judge_batch", &e.judge_batch);
        put("eval.swap_pairs", &e.swap_pairs);
        put("eval.eer_pairs", &e.eer_pairs);
        m
    }

    pub fn canonical_text(&self) -> String {
        header_text(&self.to_map())
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }
}
