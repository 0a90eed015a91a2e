//! The single-anchor sequential disentanglement network.
//!
//! Data flow for a batch `x: [batch, T, d]`:
//!
//! 1. a per-element MLP encoder maps every `x_t` to `g_t` independently;
//! 2. the static path pools `g` over the anchor window, applies
//!    `tanh(linear(.))` and two linear heads for the static posterior;
//! 3. the dynamic path feeds `u_t = g_t - g_anchor` (the anchor slot itself
//!    carries a noise vector, or zeros in eval mode) through an LSTM whose
//!    hidden states give the per-step dynamic posterior;
//! 4. a prior LSTM consumes `d_{t-1}` (a learned start token at the first
//!    step) and emits the per-step dynamic prior;
//! 5. the decoder maps `(s, d_t)` back to `x_t` through a projection, an LSTM
//!    and an MLP.

mod config;
mod layers;
mod params;

pub use config::{Ablation, AnchorPolicy, DecoderVariance, ModelConfig};
pub use layers::{lstm_cell, lstm_sequence, LstmWeights};
pub use params::{Bound, ParamStore};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Var};
use crate::distributions::DiagGaussian;
use crate::error::{Error, Result, TensorError};
use crate::tensor::Tensor;
use layers::{add_linear, add_lstm, linear, linear_seq};

/// Whether posterior codes are sampled (training) or taken at their means.
pub enum Mode<'r> {
    Train(&'r mut dyn RngCore),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

/// Latent quantities of one forward pass, as graph handles.
#[derive(Clone, Debug)]
pub struct LatentCodes {
    /// Encoder outputs `[batch, T, g_dim]`.
    pub g: Var,
    pub anchor: usize,
    /// `[batch, s_dim]`.
    pub static_post: DiagGaussian,
    pub s: Var,
    /// Dynamic-path inputs `[batch, T, g_dim]`.
    pub dyn_inputs: Var,
    /// `[batch, T, d_dim]`.
    pub dyn_post: DiagGaussian,
    pub d: Var,
    /// Teacher-forced prior `[batch, T, d_dim]`.
    pub prior: DiagGaussian,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub x: Var,
    pub latents: LatentCodes,
    pub x_hat: Var,
    /// Present only with [`DecoderVariance::Learned`].
    pub x_hat_logvar: Option<Var>,
}

/// Eval-mode codes as plain tensors.
#[derive(Clone, Debug)]
pub struct Codes {
    pub s_mean: Tensor,
    pub s_logvar: Tensor,
    pub d_mean: Tensor,
    pub d_logvar: Tensor,
    pub x_hat: Tensor,
}

impl Codes {
    /// Time-averaged dynamic code `sum_t d_t / T`, `[batch, d_dim]`.
    pub fn pooled_dynamics(&self) -> Tensor {
        pool_time(&self.d_mean)
    }
}

/// `[batch, T, k] -> [batch, k]` by averaging over time.
pub fn pool_time(d: &Tensor) -> Tensor {
    let s = d.shape();
    let (b, t, k) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; b * k];
    for bi in 0..b {
        for ti in 0..t {
            for ki in 0..k {
                out[bi * k + ki] += d.data()[(bi * t + ti) * k + ki];
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= t as f64);
    Tensor::from_parts(vec![b, k], out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Resolved anchor for every policy except random-on-batch.
    pub fixed_anchor: Option<usize>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut p = ParamStore::new();
        add_linear(&mut p, rng, "enc.l1", c.input_dim, c.enc_hidden[0]);
        add_linear(&mut p, rng, "enc.l2", c.enc_hidden[0], c.enc_hidden[1]);
        add_linear(&mut p, rng, "enc.l3", c.enc_hidden[1], c.g_dim);

        add_linear(&mut p, rng, "static.hidden", c.g_dim, c.g_dim);
        add_linear(&mut p, rng, "static.mean", c.g_dim, c.s_dim);
        add_linear(&mut p, rng, "static.logvar", c.g_dim, c.s_dim);

        add_lstm(&mut p, rng, "dyn.lstm", c.g_dim, c.lstm_hidden);
        add_linear(&mut p, rng, "dyn.mean", c.lstm_hidden, c.d_dim);
        add_linear(&mut p, rng, "dyn.logvar", c.lstm_hidden, c.d_dim);

        p.insert("prior.start", Tensor::zeros(&[c.d_dim]));
        add_lstm(&mut p, rng, "prior.lstm", c.d_dim, c.lstm_hidden);
        add_linear(&mut p, rng, "prior.mean", c.lstm_hidden, c.d_dim);
        add_linear(&mut p, rng, "prior.logvar", c.lstm_hidden, c.d_dim);

        add_linear(&mut p, rng, "dec.proj", c.s_dim + c.d_dim, c.dec_hidden);
        add_lstm(&mut p, rng, "dec.lstm", c.dec_hidden, c.dec_hidden);
        add_linear(&mut p, rng, "dec.l1", c.dec_hidden, c.dec_mlp_hidden);
        add_linear(&mut p, rng, "dec.l2", c.dec_mlp_hidden, c.dec_hidden);
        add_linear(&mut p, rng, "dec.mean", c.dec_hidden, c.input_dim);
        if c.decoder_variance == DecoderVariance::Learned {
            add_linear(&mut p, rng, "dec.logvar", c.dec_hidden, c.input_dim);
        }

        let fixed_anchor = match config.anchor {
            AnchorPolicy::RandomFixed => Some(rng.random_range(0..config.anchor_positions())),
            AnchorPolicy::RandomOnBatch => None,
            _ => config.fixed_anchor(),
        };
        Ok(Self {
            config,
            params: p,
            fixed_anchor,
        })
    }

    /// Anchor for the next batch. Only random-on-batch consumes `rng`.
    pub fn anchor_for_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.fixed_anchor {
            Some(i) => i,
            None => rng.random_range(0..self.config.anchor_positions()),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.seq_len || shape[2] != c.input_dim {
            return Err(TensorError::Shape {
                op: "model input",
                lhs: shape.to_vec(),
                rhs: vec![0, c.seq_len, c.input_dim],
            }
            .into());
        }
        Ok(())
    }

    /// Per-element encoder `[batch, T, d] -> [batch, T, g_dim]`; no
    /// information crosses time steps.
    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let h = linear_seq(g, p, "enc.l1", x)?;
        let h = g.relu(h);
        let h = linear_seq(g, p, "enc.l2", h)?;
        let h = g.relu(h);
        let h = linear_seq(g, p, "enc.l3", h)?;
        Ok(g.relu(h))
    }

    /// Mean of `g` over the anchor window starting at `anchor`.
    pub fn anchor_feature(&self, g: &mut Graph, feats: Var, anchor: usize) -> Result<Var> {
        self.config.check_anchor(anchor)?;
        let w = self.config.anchor_window;
        let window = g.slice(feats, 1, anchor..anchor + w)?;
        Ok(g.mean(window, 1)?)
    }

    /// Static posterior from the pooled anchor feature `[batch, g_dim]`.
    pub fn static_path(
        &self,
        g: &mut Graph,
        p: &Bound,
        g_anchor: Var,
        mode: &mut Mode,
    ) -> Result<(DiagGaussian, Var)> {
        let h = linear(g, p, "static.hidden", g_anchor)?;
        let h = g.tanh(h);
        let mean = linear(g, p, "static.mean", h)?;
        let logvar = linear(g, p, "static.logvar", h)?;
        let q = DiagGaussian::new(g, mean, logvar)?;
        let s = match mode {
            Mode::Train(rng) => {
                let noise = normal_tensor(&mut **rng, g.shape(mean));
                q.reparameterize(g, &noise)?
            }
            Mode::Eval => mean,
        };
        Ok((q, s))
    }

    /// Dynamic-path inputs: `g_t - g_anchor` for every step except the
    /// anchor slot, which carries `slot` (noise in training, zeros in eval).
    /// With the no-subtraction ablation non-anchor steps pass `g_t` through.
    pub fn subtract_anchor(
        &self,
        g: &mut Graph,
        feats: Var,
        g_anchor: Var,
        anchor: usize,
        slot: Tensor,
    ) -> Result<Var> {
        let shape = g.shape(feats).to_vec();
        let (batch, steps, width) = (shape[0], shape[1], shape[2]);
        if anchor >= steps {
            return Err(Error::Config(format!(
                "anchor index {anchor} out of range for sequence length {steps}"
            )));
        }
        if slot.shape() != [batch, width] {
            return Err(TensorError::Shape {
                op: "subtract_anchor",
                lhs: vec![batch, width],
                rhs: slot.shape().to_vec(),
            }
            .into());
        }
        let rest = if self.config.ablation.no_subtraction {
            feats
        } else {
            let a = g.reshape(g_anchor, &[batch, 1, width])?;
            g.sub(feats, a)?
        };
        let slot = slot.reshape(&[batch, 1, width])?;
        let slot = g.constant(slot);
        let mut parts = Vec::with_capacity(3);
        if anchor > 0 {
            parts.push(g.slice(rest, 1, 0..anchor)?);
        }
        parts.push(slot);
        if anchor + 1 < steps {
            parts.push(g.slice(rest, 1, anchor + 1..steps)?);
        }
        Ok(g.concat(&parts, 1)?)
    }

    /// LSTM over the dynamic inputs and the per-step posterior heads.
    pub fn dynamic_path(
        &self,
        g: &mut Graph,
        p: &Bound,
        u: Var,
        mode: &mut Mode,
    ) -> Result<(DiagGaussian, Var)> {
        let w = LstmWeights::bind(p, "dyn.lstm");
        let h = lstm_sequence(g, &w, u)?;
        let mean = linear_seq(g, p, "dyn.mean", h)?;
        let logvar = linear_seq(g, p, "dyn.logvar", h)?;
        let q = DiagGaussian::new(g, mean, logvar)?;
        let d = match mode {
            Mode::Train(rng) => {
                let noise = normal_tensor(&mut **rng, g.shape(mean));
                q.reparameterize(g, &noise)?
            }
            Mode::Eval => mean,
        };
        Ok((q, d))
    }

    /// Prior parameters with teacher forcing: step `t` sees `d_{t-1}`.
    pub fn prior_teacher_forced(&self, g: &mut Graph, p: &Bound, d: Var) -> Result<DiagGaussian> {
        let shape = g.shape(d).to_vec();
        let (batch, steps, k) = (shape[0], shape[1], shape[2]);
        let start = p.var("prior.start");
        let start = g.broadcast(start, &[batch, 1, k])?;
        let inputs = if steps > 1 {
            let prev = g.slice(d, 1, 0..steps - 1)?;
            g.concat(&[start, prev], 1)?
        } else {
            start
        };
        let w = LstmWeights::bind(p, "prior.lstm");
        let h = lstm_sequence(g, &w, inputs)?;
        let mean = linear_seq(g, p, "prior.mean", h)?;
        let logvar = linear_seq(g, p, "prior.logvar", h)?;
        Ok(DiagGaussian::new(g, mean, logvar)?)
    }

    /// Ancestral sampling from the prior; `noise: [batch, T, d_dim]`.
    pub fn prior_generate(
        &self,
        g: &mut Graph,
        p: &Bound,
        noise: &Tensor,
    ) -> Result<(DiagGaussian, Var)> {
        let shape = noise.shape().to_vec();
        if shape.len() != 3 || shape[2] != self.config.d_dim {
            return Err(TensorError::Shape {
                op: "prior_generate",
                lhs: vec![0, self.config.seq_len, self.config.d_dim],
                rhs: shape,
            }
            .into());
        }
        let (batch, steps, k) = (shape[0], shape[1], shape[2]);
        let w = LstmWeights::bind(p, "prior.lstm");
        let hidden = w.hidden(g);
        let start = p.var("prior.start");
        let mut input = g.broadcast(start, &[batch, k])?;
        let mut h = g.constant(Tensor::zeros(&[batch, hidden]));
        let mut c = h;
        let (mut means, mut logvars, mut samples) = (vec![], vec![], vec![]);
        for t in 0..steps {
            (h, c) = lstm_cell(g, &w, input, h, c)?;
            let mean = linear(g, p, "prior.mean", h)?;
            let logvar = linear(g, p, "prior.logvar", h)?;
            let eps = Tensor::from_fn(&[batch, k], |i| {
                noise.data()[((i / k) * steps + t) * k + i % k]
            });
            let q = DiagGaussian::new(g, mean, logvar)?;
            let sample = q.reparameterize(g, &eps)?;
            means.push(g.reshape(mean, &[batch, 1, k])?);
            logvars.push(g.reshape(logvar, &[batch, 1, k])?);
            samples.push(g.reshape(sample, &[batch, 1, k])?);
            input = sample;
        }
        let mean = g.concat(&means, 1)?;
        let logvar = g.concat(&logvars, 1)?;
        let d = g.concat(&samples, 1)?;
        Ok((DiagGaussian::new(g, mean, logvar)?, d))
    }

    /// Decoder: `s: [batch, s_dim]`, `d: [batch, T, d_dim]` to `x_hat`.
    pub fn decode(&self, g: &mut Graph, p: &Bound, s: Var, d: Var) -> Result<(Var, Option<Var>)> {
        let ds = g.shape(d).to_vec();
        let ss = g.shape(s).to_vec();
        if ds.len() != 3 || ss.len() != 2 || ss[0] != ds[0] {
            return Err(TensorError::Shape {
                op: "decode",
                lhs: ss,
                rhs: ds,
            }
            .into());
        }
        let (batch, steps) = (ds[0], ds[1]);
        let s3 = g.reshape(s, &[batch, 1, ss[1]])?;
        let s_rep = g.broadcast(s3, &[batch, steps, ss[1]])?;
        let z = g.concat(&[s_rep, d], 2)?;
        let h = linear_seq(g, p, "dec.proj", z)?;
        let h = g.tanh(h);
        let w = LstmWeights::bind(p, "dec.lstm");
        let h = lstm_sequence(g, &w, h)?;
        let h = linear_seq(g, p, "dec.l1", h)?;
        let h = g.relu(h);
        let h = linear_seq(g, p, "dec.l2", h)?;
        let h = g.relu(h);
        let mean = linear_seq(g, p, "dec.mean", h)?;
        let logvar = match self.config.decoder_variance {
            DecoderVariance::FixedUnit => None,
            DecoderVariance::Learned => Some(linear_seq(g, p, "dec.logvar", h)?),
        };
        Ok((mean, logvar))
    }

    /// encode, static path, subtraction, dynamic path, teacher-forced prior
    /// and decode, in that order.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: &Tensor,
        anchor: usize,
        mode: &mut Mode,
    ) -> Result<ForwardOutput> {
        self.check_input(x.shape())?;
        self.config.check_anchor(anchor)?;
        let batch = x.shape()[0];
        let xv = g.constant(x.clone());
        let feats = self.encode(g, p, xv)?;
        let g_anchor = self.anchor_feature(g, feats, anchor)?;
        let (static_post, s) = self.static_path(g, p, g_anchor, mode)?;
        let slot_shape = [batch, self.config.g_dim];
        let slot = match mode {
            Mode::Train(rng) => normal_tensor(&mut **rng, &slot_shape),
            Mode::Eval => Tensor::zeros(&slot_shape),
        };
        let u = self.subtract_anchor(g, feats, g_anchor, anchor, slot)?;
        let (dyn_post, d) = self.dynamic_path(g, p, u, mode)?;
        let prior = self.prior_teacher_forced(g, p, d)?;
        let (x_hat, x_hat_logvar) = self.decode(g, p, s, d)?;
        Ok(ForwardOutput {
            x: xv,
            latents: LatentCodes {
                g: feats,
                anchor,
                static_post,
                s,
                dyn_inputs: u,
                dyn_post,
                d,
                prior,
            },
            x_hat,
            x_hat_logvar,
        })
    }

    /// Deterministic eval-mode codes and reconstruction.
    pub fn infer(&self, x: &Tensor, anchor: usize) -> Result<Codes> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, x, anchor, &mut Mode::Eval)?;
        let l = &out.latents;
        Ok(Codes {
            s_mean: g.value(l.static_post.mean).clone(),
            s_logvar: g.value(l.static_post.logvar).clone(),
            d_mean: g.value(l.dyn_post.mean).clone(),
            d_logvar: g.value(l.dyn_post.logvar).clone(),
            x_hat: g.value(out.x_hat).clone(),
        })
    }

    /// Decoder applied to explicit codes (used by swaps and resampling).
    pub fn decode_codes(&self, s: &Tensor, d: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let sv = g.constant(s.clone());
        let dv = g.constant(d.clone());
        let (x_hat, _) = self.decode(&mut g, &p, sv, dv)?;
        Ok(g.value(x_hat).clone())
    }

    /// Draws `[batch, T, d_dim]` dynamics from the prior by ancestral
    /// sampling.
    pub fn sample_prior_dynamics<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Tensor> {
        let noise = normal_tensor(rng, &[batch, self.config.seq_len, self.config.d_dim]);
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let (_, d) = self.prior_generate(&mut g, &p, &noise)?;
        Ok(g.value(d).clone())
    }
}
