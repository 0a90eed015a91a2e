//! Training objective: split reconstruction, beta-weighted static and
//! dynamic KL terms, and their total in maximization form.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::distributions::{
    gaussian_log_likelihood, kl_between, kl_to_standard_normal, recon_log_likelihood,
    DiagGaussian,
};
use crate::error::{Error, Result};
use crate::model::{Ablation, ForwardOutput, LatentCodes};
use crate::tensor::Tensor;

/// Time steps covered by the dynamic KL term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KlRange {
    #[default]
    Full,
    SkipAnchor,
}

impl FromStr for KlRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(KlRange::Full),
            "skip_anchor" => Ok(KlRange::SkipAnchor),
            other => Err(Error::Config(format!("unknown kl range `{other}`"))),
        }
    }
}

impl fmt::Display for KlRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KlRange::Full => "full",
            KlRange::SkipAnchor => "skip_anchor",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kl_range: KlRange,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            kl_range: KlRange::Full,
        }
    }
}

/// Loss terms as graph handles.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub recon_rest: Var,
    pub recon_anchor: Var,
    pub kl_static: Var,
    pub kl_dynamic: Var,
    /// Maximization form; training minimizes its negation.
    pub total: Var,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            recon_rest: g.value(self.recon_rest).item(),
            recon_anchor: g.value(self.recon_anchor).item(),
            kl_static: g.value(self.kl_static).item(),
            kl_dynamic: g.value(self.kl_dynamic).item(),
            total: g.value(self.total).item(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub recon_rest: f64,
    /// Before alpha.
    pub recon_anchor: f64,
    /// Before beta.
    pub kl_static: f64,
    pub kl_dynamic: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.recon_rest,
            self.recon_anchor,
            self.kl_static,
            self.kl_dynamic,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn step_log_likelihood(
    g: &mut Graph,
    x: Var,
    x_hat: Var,
    logvar: Option<Var>,
    range: std::ops::Range<usize>,
) -> Result<Var> {
    let xs = g.slice(x, 1, range.clone())?;
    let xh = g.slice(x_hat, 1, range.clone())?;
    Ok(match logvar {
        None => recon_log_likelihood(g, xs, xh)?,
        Some(lv) => {
            let lvs = g.slice(lv, 1, range)?;
            gaussian_log_likelihood(g, xs, xh, lvs)?
        }
    })
}

/// Reconstruction log-likelihood split into (all steps except the anchor,
/// the anchor step alone).
pub fn recon_loss(
    g: &mut Graph,
    x: Var,
    x_hat: Var,
    x_hat_logvar: Option<Var>,
    anchor: usize,
) -> Result<(Var, Var)> {
    if g.shape(x) != g.shape(x_hat) {
        return Err(crate::error::TensorError::Shape {
            op: "recon_loss",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(x_hat).to_vec(),
        }
        .into());
    }
    let steps = g.shape(x)[1];
    if anchor >= steps {
        return Err(Error::Config(format!(
            "anchor index {anchor} out of range for sequence length {steps}"
        )));
    }
    let anchor_term = step_log_likelihood(g, x, x_hat, x_hat_logvar, anchor..anchor + 1)?;
    let mut parts = Vec::with_capacity(2);
    if anchor > 0 {
        parts.push(step_log_likelihood(g, x, x_hat, x_hat_logvar, 0..anchor)?);
    }
    if anchor + 1 < steps {
        parts.push(step_log_likelihood(g, x, x_hat, x_hat_logvar, anchor + 1..steps)?);
    }
    let rest = match parts.as_slice() {
        [] => g.scalar(0.0),
        [one] => *one,
        [a, b] => g.add(*a, *b)?,
        _ => unreachable!(),
    };
    Ok((rest, anchor_term))
}

/// (KL of the static posterior to N(0, I), summed KL of the dynamic
/// posterior to the teacher-forced prior). Both before beta.
pub fn kl_reg(g: &mut Graph, latents: &LatentCodes, kl_range: KlRange) -> Result<(Var, Var)> {
    let kl_static = kl_to_standard_normal(g, &latents.static_post)?;
    let kl_dynamic = match kl_range {
        KlRange::Full => kl_between(g, &latents.dyn_post, &latents.prior)?,
        KlRange::SkipAnchor => {
            let steps = g.shape(latents.dyn_post.mean)[1];
            let i = latents.anchor;
            let mut total: Option<Var> = None;
            for range in [0..i, i + 1..steps] {
                if range.is_empty() {
                    continue;
                }
                let q = slice_gaussian(g, &latents.dyn_post, range.clone())?;
                let p = slice_gaussian(g, &latents.prior, range)?;
                let k = kl_between(g, &q, &p)?;
                total = Some(match total {
                    Some(t) => g.add(t, k)?,
                    None => k,
                });
            }
            total.unwrap_or_else(|| g.scalar(0.0))
        }
    };
    Ok((kl_static, kl_dynamic))
}

fn slice_gaussian(
    g: &mut Graph,
    d: &DiagGaussian,
    range: std::ops::Range<usize>,
) -> Result<DiagGaussian> {
    let mean = g.slice(d.mean, 1, range.clone())?;
    let logvar = g.slice(d.logvar, 1, range)?;
    Ok(DiagGaussian::new(g, mean, logvar)?)
}

/// `(recon_rest + alpha * recon_anchor) - beta * (kl_static + kl_dynamic)`.
/// The no-static-loss ablation sets the effective alpha to zero.
pub fn total_loss(
    g: &mut Graph,
    out: &ForwardOutput,
    obj: &ObjectiveConfig,
    ablation: Ablation,
) -> Result<LossTerms> {
    let (recon_rest, recon_anchor) =
        recon_loss(g, out.x, out.x_hat, out.x_hat_logvar, out.latents.anchor)?;
    let (kl_static, kl_dynamic) = kl_reg(g, &out.latents, obj.kl_range)?;
    let alpha = if ablation.no_static_loss { 0.0 } else { obj.alpha };
    let weighted_anchor = g.scale(recon_anchor, alpha)?;
    let recon = g.add(recon_rest, weighted_anchor)?;
    let kl = g.add(kl_static, kl_dynamic)?;
    let reg = g.scale(kl, obj.beta)?;
    let total = g.sub(recon, reg)?;
    Ok(LossTerms {
        recon_rest,
        recon_anchor,
        kl_static,
        kl_dynamic,
        total,
    })
}

/// Plain-tensor snapshot of everything the ELBO depends on.
#[derive(Clone, Debug)]
pub struct ElboInputs {
    pub x: Tensor,
    pub x_hat: Tensor,
    pub x_hat_logvar: Option<Tensor>,
    pub s_mean: Tensor,
    pub s_logvar: Tensor,
    pub d_mean: Tensor,
    pub d_logvar: Tensor,
    pub prior_mean: Tensor,
    pub prior_logvar: Tensor,
}

impl ElboInputs {
    pub fn from_forward(g: &Graph, out: &ForwardOutput) -> Self {
        let l = &out.latents;
        Self {
            x: g.value(out.x).clone(),
            x_hat: g.value(out.x_hat).clone(),
            x_hat_logvar: out.x_hat_logvar.map(|v| g.value(v).clone()),
            s_mean: g.value(l.static_post.mean).clone(),
            s_logvar: g.value(l.static_post.logvar).clone(),
            d_mean: g.value(l.dyn_post.mean).clone(),
            d_logvar: g.value(l.dyn_post.logvar).clone(),
            prior_mean: g.value(l.prior.mean).clone(),
            prior_logvar: g.value(l.prior.logvar).clone(),
        }
    }
}

/// The standard sequential ELBO `log p(x | z) - KL(q(z | x) || p(z))`,
/// evaluated sequence by sequence with scalar loops and standard deviations
/// rather than the graph's vectorized log-variance formulas.
pub fn elbo_oracle(inp: &ElboInputs) -> f64 {
    let batch = inp.x.shape()[0];
    let per_seq_x = inp.x.numel() / batch;
    let s_dim = inp.s_mean.numel() / batch;
    let per_seq_d = inp.d_mean.numel() / batch;

    let mut elbo = 0.0;
    for b in 0..batch {
        // log-likelihood of every step, Gaussian density without 2*pi term
        let mut log_lik = 0.0;
        for j in b * per_seq_x..(b + 1) * per_seq_x {
            let r = inp.x.data()[j] - inp.x_hat.data()[j];
            log_lik += match &inp.x_hat_logvar {
                None => -(r * r) / 2.0,
                Some(lv) => {
                    let sigma = (lv.data()[j] / 2.0).exp();
                    -(r / sigma) * (r / sigma) / 2.0 - sigma.ln()
                }
            };
        }
        let mut kl = 0.0;
        for j in b * s_dim..(b + 1) * s_dim {
            let sq = (inp.s_logvar.data()[j] / 2.0).exp();
            kl += gauss_kl_std(inp.s_mean.data()[j], sq, 0.0, 1.0);
        }
        for j in b * per_seq_d..(b + 1) * per_seq_d {
            let sq = (inp.d_logvar.data()[j] / 2.0).exp();
            let sp = (inp.prior_logvar.data()[j] / 2.0).exp();
            kl += gauss_kl_std(inp.d_mean.data()[j], sq, inp.prior_mean.data()[j], sp);
        }
        elbo += log_lik - kl;
    }
    elbo
}

/// KL between univariate Gaussians given by standard deviations.
fn gauss_kl_std(mu_q: f64, sd_q: f64, mu_p: f64, sd_p: f64) -> f64 {
    (sd_p / sd_q).ln() + (sd_q * sd_q + (mu_q - mu_p) * (mu_q - mu_p)) / (2.0 * sd_p * sd_p)
        - 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normal_tensor, DecoderVariance, Mode, Model, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64, variance: DecoderVariance, ablation: Ablation) -> Model {
        let config = ModelConfig {
            seq_len: 5,
            input_dim: 3,
            g_dim: 6,
            enc_hidden: [6, 6],
            s_dim: 2,
            d_dim: 3,
            lstm_hidden: 4,
            dec_hidden: 4,
            dec_mlp_hidden: 6,
            decoder_variance: variance,
            ablation,
            ..Default::default()
        };
        Model::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn run(
        m: &Model,
        x: &Tensor,
        anchor: usize,
        obj: &ObjectiveConfig,
        seed: u64,
    ) -> (LossBreakdown, ElboInputs) {
        let mut g = Graph::new();
        let p = m.params.bind(&mut g, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = m.forward(&mut g, &p, x, anchor, &mut Mode::Train(&mut rng)).unwrap();
        let terms = total_loss(&mut g, &out, obj, m.config.ablation).unwrap();
        (terms.values(&g), ElboInputs::from_forward(&g, &out))
    }

    #[test]
    fn unit_weights_reproduce_the_standard_elbo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..50u64 {
            let variance = if i % 2 == 0 {
                DecoderVariance::FixedUnit
            } else {
                DecoderVariance::Learned
            };
            let m = tiny(i, variance, Ablation::NONE);
            let batch = rng.random_range(1..5);
            let x = normal_tensor(&mut rng, &[batch, 5, 3]);
            let anchor = rng.random_range(0..5);
            let (loss, inputs) = run(&m, &x, anchor, &ObjectiveConfig::default(), i);
            let oracle = elbo_oracle(&inputs);
            assert!(
                (loss.total - oracle).abs() < 1e-10,
                "batch {i}: {} vs {oracle}",
                loss.total
            );
        }
    }

    #[test]
    fn total_is_linear_in_beta() {
        let m = tiny(3, DecoderVariance::FixedUnit, Ablation::NONE);
        let x = normal_tensor(&mut ChaCha8Rng::seed_from_u64(4), &[3, 5, 3]);
        let at = |beta: f64| {
            let obj = ObjectiveConfig {
                alpha: 0.4,
                beta,
                ..Default::default()
            };
            run(&m, &x, 2, &obj, 5).0
        };
        let (l0, l1, l2) = (at(0.0), at(0.25), at(1.0));
        let kl = l0.kl_static + l0.kl_dynamic;
        assert!((l0.total - (l0.recon_rest + 0.4 * l0.recon_anchor)).abs() < 1e-12);
        assert!((l0.total - l1.total - 0.25 * kl).abs() < 1e-10);
        assert!((l0.total - l2.total - kl).abs() < 1e-10);
        assert!(kl >= 0.0);
    }

    #[test]
    fn no_static_loss_drops_exactly_the_anchor_term() {
        let obj = ObjectiveConfig {
            alpha: 0.3,
            beta: 0.2,
            ..Default::default()
        };
        let x = normal_tensor(&mut ChaCha8Rng::seed_from_u64(6), &[2, 5, 3]);
        let full = run(&tiny(7, DecoderVariance::FixedUnit, Ablation::NONE), &x, 1, &obj, 8).0;
        let ablated = Ablation {
            no_static_loss: true,
            no_subtraction: false,
        };
        let nl = run(&tiny(7, DecoderVariance::FixedUnit, ablated), &x, 1, &obj, 8).0;
        assert_eq!(full.recon_anchor, nl.recon_anchor);
        assert!((full.total - nl.total - 0.3 * full.recon_anchor).abs() < 1e-12);
    }

    #[test]
    fn skip_anchor_removes_one_step_of_dynamic_kl() {
        let m = tiny(9, DecoderVariance::FixedUnit, Ablation::NONE);
        let x = normal_tensor(&mut ChaCha8Rng::seed_from_u64(10), &[2, 5, 3]);
        for anchor in [0, 2, 4] {
            let full = run(&m, &x, anchor, &ObjectiveConfig::default(), 11);
            let skip_obj = ObjectiveConfig {
                kl_range: KlRange::SkipAnchor,
                ..Default::default()
            };
            let skip = run(&m, &x, anchor, &skip_obj, 11);
            let inp = &full.1;
            let mut anchor_kl = 0.0;
            for b in 0..2 {
                for k in 0..3 {
                    let j = (b * 5 + anchor) * 3 + k;
                    anchor_kl += gauss_kl_std(
                        inp.d_mean.data()[j],
                        (inp.d_logvar.data()[j] / 2.0).exp(),
                        inp.prior_mean.data()[j],
                        (inp.prior_logvar.data()[j] / 2.0).exp(),
                    );
                }
            }
            assert!((full.0.kl_dynamic - skip.0.kl_dynamic - anchor_kl).abs() < 1e-10);
            assert_eq!(full.0.kl_static, skip.0.kl_static);
        }
    }

    #[test]
    fn univariate_kl_matches_known_values() {
        assert_eq!(gauss_kl_std(0.0, 1.0, 0.0, 1.0), 0.0);
        assert!((gauss_kl_std(1.0, 1.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn recon_split_partitions_full_sum() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 5, 3], |i| (i as f64 * 0.3).sin()));
        let xh = g.constant(Tensor::from_fn(&[2, 5, 3], |i| (i as f64 * 0.7).cos()));
        let full = recon_log_likelihood(&mut g, x, xh).unwrap();
        for anchor in 0..5 {
            let (rest, a) = recon_loss(&mut g, x, xh, None, anchor).unwrap();
            let sum = g.value(rest).item() + g.value(a).item();
            assert!((sum - g.value(full).item()).abs() < 1e-12);
        }
        assert!(recon_loss(&mut g, x, xh, None, 5).is_err());
        let (rest, a) = recon_loss(&mut g, x, x, None, 2).unwrap();
        assert_eq!((g.value(rest).item(), g.value(a).item()), (0.0, 0.0));
    }

    #[test]
    fn kl_range_parses() {
        assert_eq!("full".parse::<KlRange>().unwrap(), KlRange::Full);
        assert_eq!("skip_anchor".parse::<KlRange>().unwrap(), KlRange::SkipAnchor);
        assert!("d2T".parse::<KlRange>().is_err());
    }
}
