//! Diagonal Gaussians parameterized by mean and log-variance, with the
//! closed-form KL terms and the reconstruction likelihood used by the
//! objective. Every reduction is a plain sum over all elements (latent
//! dimensions, time steps and batch).

use crate::autodiff::{Graph, Var};
use crate::error::TensorError;
use crate::tensor::Tensor;

type Res<T> = Result<T, TensorError>;

#[derive(Clone, Copy, Debug)]
pub struct DiagGaussian {
    pub mean: Var,
    pub logvar: Var,
}

impl DiagGaussian {
    pub fn new(g: &Graph, mean: Var, logvar: Var) -> Res<Self> {
        if g.shape(mean) != g.shape(logvar) {
            return Err(TensorError::Shape {
                op: "diag_gaussian",
                lhs: g.shape(mean).to_vec(),
                rhs: g.shape(logvar).to_vec(),
            });
        }
        Ok(Self { mean, logvar })
    }

    /// N(0, I) of the given shape, as graph constants.
    pub fn standard(g: &mut Graph, shape: &[usize]) -> Self {
        Self {
            mean: g.constant(Tensor::zeros(shape)),
            logvar: g.constant(Tensor::zeros(shape)),
        }
    }

    pub fn shape<'g>(&self, g: &'g Graph) -> &'g [usize] {
        g.shape(self.mean)
    }

    /// `mean + exp(0.5 * logvar) * noise`, differentiable in both parameters.
    pub fn reparameterize(&self, g: &mut Graph, noise: &Tensor) -> Res<Var> {
        if noise.shape() != g.shape(self.mean) {
            return Err(TensorError::Shape {
                op: "reparameterize",
                lhs: g.shape(self.mean).to_vec(),
                rhs: noise.shape().to_vec(),
            });
        }
        let half = g.scale(self.logvar, 0.5)?;
        let std = g.exp(half);
        let eps = g.constant(noise.clone());
        let spread = g.mul(std, eps)?;
        g.add(self.mean, spread)
    }
}

/// `KL(q || N(0, I))`, summed over every element.
///
/// Evaluated in the same operation order as [`kl_between`] so that the two
/// agree bit-for-bit when the second argument is the standard normal.
pub fn kl_to_standard_normal(g: &mut Graph, q: &DiagGaussian) -> Res<Var> {
    let neg_lv = g.neg(q.logvar);
    let var = g.exp(q.logvar);
    let mu2 = g.square(q.mean);
    let num = g.add(var, mu2)?;
    let inner = g.add(neg_lv, num)?;
    finish_kl(g, inner)
}

/// `KL(q || p)` for diagonal Gaussians of equal shape, summed over every
/// element.
pub fn kl_between(g: &mut Graph, q: &DiagGaussian, p: &DiagGaussian) -> Res<Var> {
    if g.shape(q.mean) != g.shape(p.mean) {
        return Err(TensorError::Shape {
            op: "kl_between",
            lhs: g.shape(q.mean).to_vec(),
            rhs: g.shape(p.mean).to_vec(),
        });
    }
    let lv_diff = g.sub(p.logvar, q.logvar)?;
    let var_q = g.exp(q.logvar);
    let dmu = g.sub(q.mean, p.mean)?;
    let dmu2 = g.square(dmu);
    let num = g.add(var_q, dmu2)?;
    let var_p = g.exp(p.logvar);
    let ratio = g.div(num, var_p)?;
    let inner = g.add(lv_diff, ratio)?;
    finish_kl(g, inner)
}

fn finish_kl(g: &mut Graph, inner: Var) -> Res<Var> {
    let one = g.scalar(1.0);
    let shifted = g.sub(inner, one)?;
    let half = g.scale(shifted, 0.5)?;
    Ok(g.sum_all(half))
}

/// Unit-variance Gaussian log-likelihood up to its additive constant:
/// `-0.5 * sum((x - x_hat)^2)` over every element, not normalized by batch.
pub fn recon_log_likelihood(g: &mut Graph, x: Var, x_hat: Var) -> Res<Var> {
    if g.shape(x) != g.shape(x_hat) {
        return Err(TensorError::Shape {
            op: "recon_log_likelihood",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(x_hat).to_vec(),
        });
    }
    let diff = g.sub(x, x_hat)?;
    let sq = g.square(diff);
    let total = g.sum_all(sq);
    g.scale(total, -0.5)
}

/// Gaussian log-likelihood with a learned per-element log-variance, up to
/// the `-0.5 * log(2 pi)` constant.
pub fn gaussian_log_likelihood(g: &mut Graph, x: Var, mean: Var, logvar: Var) -> Res<Var> {
    if g.shape(x) != g.shape(mean) || g.shape(mean) != g.shape(logvar) {
        return Err(TensorError::Shape {
            op: "gaussian_log_likelihood",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(mean).to_vec(),
        });
    }
    let diff = g.sub(x, mean)?;
    let sq = g.square(diff);
    let neg_lv = g.neg(logvar);
    let prec = g.exp(neg_lv);
    let weighted = g.mul(sq, prec)?;
    let terms = g.add(weighted, logvar)?;
    let total = g.sum_all(terms);
    g.scale(total, -0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn gaussian(g: &mut Graph, mean: &[f64], logvar: &[f64]) -> DiagGaussian {
        let m = g.constant(Tensor::from_vec(mean.to_vec()));
        let l = g.constant(Tensor::from_vec(logvar.to_vec()));
        DiagGaussian::new(g, m, l).unwrap()
    }

    #[test]
    fn zero_variance_limit_returns_mean() {
        let mut g = Graph::new();
        let q = gaussian(&mut g, &[0.3, -2.0], &[-60.0, -60.0]);
        let s = q.reparameterize(&mut g, &Tensor::from_vec(vec![1.7, -0.4])).unwrap();
        let out = g.value(s).data();
        assert!((out[0] - 0.3).abs() < 1e-12 && (out[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_passes_noise_through() {
        let mut g = Graph::new();
        let q = DiagGaussian::standard(&mut g, &[3]);
        let n = Tensor::from_vec(vec![0.5, -1.5, 2.25]);
        let s = q.reparameterize(&mut g, &n).unwrap();
        assert_eq!(g.value(s), &n);
    }

    #[test]
    fn reparameterize_rejects_noise_shape() {
        let mut g = Graph::new();
        let q = DiagGaussian::standard(&mut g, &[3]);
        assert!(q.reparameterize(&mut g, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn kl_closed_form_cases() {
        let mut g = Graph::new();
        let q = DiagGaussian::standard(&mut g, &[4]);
        let k = kl_to_standard_normal(&mut g, &q).unwrap();
        assert_eq!(g.value(k).item(), 0.0);

        let q = gaussian(&mut g, &[1.0], &[0.0]);
        let k = kl_to_standard_normal(&mut g, &q).unwrap();
        assert!((g.value(k).item() - 0.5).abs() < 1e-15);

        let q = gaussian(&mut g, &[0.0], &[1.0]);
        let k = kl_to_standard_normal(&mut g, &q).unwrap();
        let e = std::f64::consts::E;
        assert!((g.value(k).item() - 0.5 * (e - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn kl_between_identical_is_zero() {
        let mut g = Graph::new();
        let q = gaussian(&mut g, &[0.4, -1.1, 3.0], &[0.2, -0.7, 1.3]);
        let k = kl_between(&mut g, &q, &q).unwrap();
        assert!(g.value(k).item().abs() < 1e-12);
    }

    #[test]
    fn kl_between_standard_matches_bitwise() {
        let mut g = Graph::new();
        let q = gaussian(&mut g, &[0.4, -1.1, 3.0, 0.01], &[0.2, -0.7, 1.3, -4.0]);
        let p = DiagGaussian::standard(&mut g, &[4]);
        let a = kl_between(&mut g, &q, &p).unwrap();
        let b = kl_to_standard_normal(&mut g, &q).unwrap();
        assert_eq!(g.value(a).item().to_bits(), g.value(b).item().to_bits());
    }

    #[test]
    fn recon_conventions() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1.0]));
        let z = g.constant(Tensor::from_vec(vec![0.0]));
        let r = recon_log_likelihood(&mut g, x, z).unwrap();
        assert_eq!(g.value(r).item(), -0.5);
        let r = recon_log_likelihood(&mut g, x, x).unwrap();
        assert_eq!(g.value(r).item(), 0.0);

        let one = Tensor::new(vec![1, 2], vec![0.3, -0.2]).unwrap();
        let two = Tensor::new(vec![2, 2], vec![0.3, -0.2, 0.3, -0.2]).unwrap();
        let r1 = {
            let a = g.constant(one.clone());
            let b = g.constant(Tensor::zeros(&[1, 2]));
            recon_log_likelihood(&mut g, a, b).unwrap()
        };
        let r2 = {
            let a = g.constant(two);
            let b = g.constant(Tensor::zeros(&[2, 2]));
            recon_log_likelihood(&mut g, a, b).unwrap()
        };
        assert_eq!(g.value(r2).item(), 2.0 * g.value(r1).item());
    }

    #[test]
    fn gradients_of_all_four_pass_grad_check() {
        let mu = Tensor::from_vec(vec![0.3, -0.8, 1.1]);
        let lv = Tensor::from_vec(vec![-0.4, 0.6, 0.05]);
        let mu_p = Tensor::from_vec(vec![-0.2, 0.1, 0.9]);
        let lv_p = Tensor::from_vec(vec![0.3, -0.5, 0.2]);
        let noise = Tensor::from_vec(vec![0.7, -1.2, 0.4]);

        let r = grad_check(
            |g: &mut Graph, v: &[Var]| {
                let q = DiagGaussian::new(g, v[0], v[1])?;
                let s = q.reparameterize(g, &noise)?;
                let sq = g.square(s);
                Ok::<_, TensorError>(g.sum_all(sq))
            },
            &[mu.clone(), lv.clone()],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "reparameterize {r:?}");

        let r = grad_check(
            |g: &mut Graph, v: &[Var]| {
                let q = DiagGaussian::new(g, v[0], v[1])?;
                kl_to_standard_normal(g, &q)
            },
            &[mu.clone(), lv.clone()],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "kl_to_standard_normal {r:?}");

        let r = grad_check(
            |g: &mut Graph, v: &[Var]| {
                let q = DiagGaussian::new(g, v[0], v[1])?;
                let p = DiagGaussian::new(g, v[2], v[3])?;
                kl_between(g, &q, &p)
            },
            &[mu.clone(), lv.clone(), mu_p.clone(), lv_p],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "kl_between {r:?}");

        let r = grad_check(
            |g: &mut Graph, v: &[Var]| recon_log_likelihood(g, v[0], v[1]),
            &[mu, mu_p],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "recon {r:?}");
    }
}
