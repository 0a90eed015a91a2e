//! Adam, the seeded mini-batch loop and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artifact::{self, Artifact};
use crate::autodiff::Graph;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::objective::{total_loss, KlRange, LossBreakdown, ObjectiveConfig};
use crate::synthdata::Dataset;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kl_range: KlRange,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

pub const MAX_EPOCHS: usize = 2000;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            kl_range: KlRange::Full,
            lr: 1e-3,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs > MAX_EPOCHS {
            return Err(Error::Config(format!(
                "at most {MAX_EPOCHS} epochs, got {}",
                self.epochs
            )));
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha: self.alpha,
            beta: self.beta,
            kl_range: self.kl_range,
        }
    }
}

/// First and second moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        let z: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked before anything
/// is modified, so a rejected step leaves parameters and moments intact.
pub fn adam_step(
    params: &mut [Tensor],
    names: &[String],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    for ((p, g), name) in params.iter().zip(grads).zip(names) {
        if p.shape() != g.shape() {
            return Err(crate::error::TensorError::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            }
            .into());
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient for parameter `{name}`"),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let p = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// One row of the loss history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let to_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record([
        "step",
        "epoch",
        "recon_rest",
        "recon_anchor",
        "kl_static",
        "kl_dynamic",
        "total",
    ])
    .map_err(to_err)?;
    for r in history {
        let l = &r.loss;
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            l.recon_rest.to_string(),
            l.recon_anchor.to_string(),
            l.kl_static.to_string(),
            l.kl_dynamic.to_string(),
            l.total.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Order in which epoch `epoch` visits the `n` training sequences.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub run: RunConfig,
    pub model: Model,
    pub adam: AdamState,
    /// Parameter init, training noise and per-batch anchors, in that order.
    pub rng: ChaCha8Rng,
    /// Epochs completed.
    pub epoch: usize,
    pub history: Vec<LossRecord>,
    pub data_digest: String,
}

impl Trainer {
    /// Fresh run. `run.model.seq_len` and `run.model.input_dim` must already
    /// match the data.
    pub fn new(run: RunConfig, data_digest: String) -> Result<Self> {
        run.train.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(run.train.seed);
        let model = Model::new(run.model.clone(), &mut rng)?;
        let adam = AdamState::zeros_like(model.params.tensors());
        Ok(Self {
            run,
            model,
            adam,
            rng,
            epoch: 0,
            history: Vec::new(),
            data_digest,
        })
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        let c = &self.model.config;
        if data.seq_len() != c.seq_len || data.dim() != c.input_dim {
            return Err(Error::Compat(format!(
                "data has T={}, d={}; model expects T={}, d={}",
                data.seq_len(),
                data.dim(),
                c.seq_len,
                c.input_dim
            )));
        }
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        Ok(())
    }

    /// Forward, objective, backward and Adam on one batch.
    pub fn step(&mut self, x: &Tensor) -> Result<LossBreakdown> {
        let anchor = self.model.anchor_for_batch(&mut self.rng);
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g, true);
        let vars = p.vars().to_vec();
        let out = self
            .model
            .forward(&mut g, &p, x, anchor, &mut Mode::Train(&mut self.rng))?;
        let terms = total_loss(&mut g, &out, &self.run.train.objective(), self.model.config.ablation)?;
        let loss = terms.values(&g);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: format!(
                    "loss at epoch {} step {}: {loss:?}",
                    self.epoch + 1,
                    self.adam.t + 1
                ),
            });
        }
        let objective = g.neg(terms.total);
        let mut grads = g.backward(objective)?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v).expect("leaf")).collect();
        let names = self.model.params.names().to_vec();
        adam_step(
            self.model.params.tensors_mut(),
            &names,
            &grads,
            &mut self.adam,
            self.run.train.lr,
        )?;
        Ok(loss)
    }

    pub fn run_epoch(&mut self, data: &Dataset) -> Result<()> {
        self.check_data(data)?;
        let order = epoch_order(self.run.train.seed, self.epoch, data.len());
        for chunk in order.chunks(self.run.train.batch_size) {
            let x = data.batch(chunk);
            let loss = self.step(&x)?;
            self.history.push(LossRecord {
                step: self.adam.t,
                epoch: self.epoch + 1,
                loss,
            });
        }
        self.epoch += 1;
        Ok(())
    }

    /// Trains until `run.train.epochs` epochs are complete, writing a
    /// checkpoint to `checkpoint` at the configured cadence. On failure the
    /// last written checkpoint is left as it was.
    pub fn train(&mut self, data: &Dataset, checkpoint: Option<&Path>) -> Result<()> {
        while self.epoch < self.run.train.epochs {
            self.run_epoch(data)?;
            let every = self.run.train.checkpoint_every;
            if let Some(path) = checkpoint {
                if every > 0 && self.epoch % every == 0 {
                    self.save_checkpoint(path)?;
                }
            }
            if let Some(last) = self.history.last() {
                log::info!(
                    "epoch {} total {:.4} recon {:.4} kl_s {:.4} kl_d {:.4}",
                    self.epoch,
                    last.loss.total,
                    last.loss.recon_rest + last.loss.recon_anchor,
                    last.loss.kl_static,
                    last.loss.kl_dynamic
                );
            }
        }
        Ok(())
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut header: BTreeMap<String, String> = self.run.to_map();
        header.insert("artifact".into(), "checkpoint".into());
        header.insert("config_digest".into(), self.run.digest());
        header.insert("state.data_digest".into(), self.data_digest.clone());
        header.insert("state.epoch".into(), self.epoch.to_string());
        header.insert("state.adam_t".into(), self.adam.t.to_string());
        header.insert("state.rng_seed".into(), hex::encode(self.rng.get_seed()));
        header.insert("state.rng_stream".into(), self.rng.get_stream().to_string());
        header.insert("state.rng_word_pos".into(), self.rng.get_word_pos().to_string());
        if let Some(i) = self.model.fixed_anchor {
            header.insert("state.fixed_anchor".into(), i.to_string());
        }
        let mut tensors: Vec<(String, Tensor)> = self
            .model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        for (i, name) in self.model.params.names().iter().enumerate() {
            tensors.push((format!("adam.m.{name}"), self.adam.m[i].clone()));
            tensors.push((format!("adam.v.{name}"), self.adam.v[i].clone()));
        }
        Artifact { header, tensors }
    }

    /// Restores a run. The loss history before the checkpoint is not stored
    /// and starts out empty.
    pub fn from_artifact(a: &Artifact) -> Result<Self> {
        if a.header_value("artifact")? != "checkpoint" {
            return Err(Error::Compat("not a checkpoint file".into()));
        }
        let config_map: BTreeMap<String, String> = a
            .header
            .iter()
            .filter(|(k, _)| !k.starts_with("state.") && *k != "artifact" && *k != "config_digest")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let run = RunConfig::from_map(&config_map)?;
        if run.digest() != a.header_value("config_digest")? {
            return Err(Error::Compat("config digest does not match the stored config".into()));
        }
        // Building the model consumes the same draws as the original run;
        // the restored rng state below supersedes them.
        let mut scratch = ChaCha8Rng::seed_from_u64(run.train.seed);
        let mut model = Model::new(run.model.clone(), &mut scratch)?;
        model.fixed_anchor = match a.header.get("state.fixed_anchor") {
            Some(_) => Some(a.parse_header("state.fixed_anchor")?),
            None => None,
        };
        if model.fixed_anchor.is_none() != (model.config.anchor == crate::model::AnchorPolicy::RandomOnBatch) {
            return Err(Error::Compat("anchor state does not match the anchor policy".into()));
        }
        let n = model.params.len();
        let params: Vec<(String, Tensor)> = model
            .params
            .names()
            .iter()
            .map(|name| Ok((name.clone(), a.tensor(name)?.clone())))
            .collect::<Result<_>>()?;
        model.params.assign_from(&params)?;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (name, p) in model.params.iter() {
            for (prefix, out) in [("adam.m", &mut m), ("adam.v", &mut v)] {
                let t = a.tensor(&format!("{prefix}.{name}"))?;
                if t.shape() != p.shape() {
                    return Err(Error::Compat(format!("{prefix}.{name} has the wrong shape")));
                }
                out.push(t.clone());
            }
        }
        if a.tensors.len() != 3 * n {
            return Err(Error::Compat(format!(
                "checkpoint holds {} tensors, config implies {}",
                a.tensors.len(),
                3 * n
            )));
        }
        let seed_hex = a.header_value("state.rng_seed")?;
        let seed: [u8; 32] = hex::decode(seed_hex)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Format("bad rng seed".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(a.parse_header("state.rng_stream")?);
        rng.set_word_pos(a.parse_header("state.rng_word_pos")?);
        Ok(Self {
            run,
            model,
            adam: AdamState {
                m,
                v,
                t: a.parse_header("state.adam_t")?,
            },
            rng,
            epoch: a.parse_header("state.epoch")?,
            history: Vec::new(),
            data_digest: a.header_value("state.data_digest")?.to_string(),
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        artifact::write(path, &self.to_artifact())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_artifact(&artifact::read(path)?)
    }
}

#[cfg(test)]
mod tests;
