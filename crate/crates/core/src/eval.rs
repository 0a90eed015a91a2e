//! Evaluation battery over a trained model: judge classifiers, latent and
//! generation leakage, swaps, generation metrics, verification EER and
//! embedding export.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{normal_tensor, Codes, Model, ParamStore};
use crate::synthdata::{split, Dataset, LabelKind};
use crate::tensor::Tensor;
use crate::training::{adam_step, epoch_order, AdamState};

pub use crate::config::EvalConfig;

/// Two-hidden-layer ReLU network with a softmax output, trained with Adam
/// on mean cross-entropy. Inputs are standardized with training-set
/// statistics.
#[derive(Clone, Debug)]
pub struct Classifier {
    params: ParamStore,
    classes: usize,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl From<&EvalConfig> for ClassifierConfig {
    fn from(e: &EvalConfig) -> Self {
        Self {
            hidden: e.judge_hidden,
            epochs: e.judge_epochs,
            lr: e.judge_lr,
            batch: e.judge_batch,
            seed: e.seed,
        }
    }
}

const LAYERS: [&str; 3] = ["l1", "l2", "out"];

impl Classifier {
    pub fn fit(x: &Tensor, y: &[usize], classes: usize, cfg: &ClassifierConfig) -> Result<Self> {
        if x.rank() != 2 || x.shape()[0] != y.len() || y.is_empty() {
            return Err(Error::Data(format!(
                "classifier needs [n, f] features and n labels, got {:?} and {}",
                x.shape(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        let first = y[0];
        if y.iter().all(|&l| l == first) {
            return Err(Error::Data("training labels contain a single class".into()));
        }
        let (n, f) = (x.shape()[0], x.shape()[1]);
        let mut shift = vec![0.0; f];
        let mut scale = vec![0.0; f];
        for j in 0..f {
            let col = (0..n).map(|i| x.data()[i * f + j]);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            shift[j] = mean;
            scale[j] = if var > 1e-24 { 1.0 / var.sqrt() } else { 1.0 };
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let widths = [f, cfg.hidden, cfg.hidden, classes];
        for (i, name) in LAYERS.iter().enumerate() {
            let k = (1.0 / widths[i] as f64).sqrt();
            params.insert(
                format!("{name}.w"),
                Tensor::from_fn(&[widths[i], widths[i + 1]], |_| rng.random_range(-k..k)),
            );
            params.insert(
                format!("{name}.b"),
                Tensor::from_fn(&[widths[i + 1]], |_| rng.random_range(-k..k)),
            );
        }
        let mut clf = Self {
            params,
            classes,
            shift,
            scale,
        };
        let xs = clf.standardize(x);
        let mut adam = AdamState::zeros_like(clf.params.tensors());
        let names = clf.params.names().to_vec();
        for epoch in 0..cfg.epochs {
            for chunk in epoch_order(cfg.seed, epoch, n).chunks(cfg.batch) {
                let xb = xs.select_rows(chunk);
                let onehot = Tensor::from_fn(&[chunk.len(), classes], |i| {
                    (y[chunk[i / classes]] == i % classes) as u8 as f64
                });
                let mut g = Graph::new();
                let p = clf.params.bind(&mut g, true);
                let vars = p.vars().to_vec();
                let xv = g.constant(xb);
                let logits = clf.logits(&mut g, &vars, xv)?;
                let logp = log_softmax(&mut g, logits)?;
                let t = g.constant(onehot);
                let picked = g.mul(logp, t)?;
                let total = g.sum_all(picked);
                let loss = g.scale(total, -1.0 / chunk.len() as f64)?;
                let mut grads = g.backward(loss)?;
                let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v).expect("leaf")).collect();
                adam_step(clf.params.tensors_mut(), &names, &grads, &mut adam, cfg.lr)?;
            }
        }
        Ok(clf)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn standardize(&self, x: &Tensor) -> Tensor {
        let f = self.shift.len();
        Tensor::from_fn(x.shape(), |i| (x.data()[i] - self.shift[i % f]) * self.scale[i % f])
    }

    fn logits(&self, g: &mut Graph, vars: &[crate::autodiff::Var], x: crate::autodiff::Var) -> Result<crate::autodiff::Var> {
        let mut h = x;
        for (i, _) in LAYERS.iter().enumerate() {
            h = g.linear(h, vars[2 * i], vars[2 * i + 1])?;
            if i + 1 < LAYERS.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Class probabilities `[n, K]`.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.shift.len() {
            return Err(Error::Data(format!(
                "classifier expects [n, {}] features, got {:?}",
                self.shift.len(),
                x.shape()
            )));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(self.standardize(x));
        let logits = self.logits(&mut g, p.vars(), xv)?;
        let logp = log_softmax(&mut g, logits)?;
        Ok(g.value(logp).map(f64::exp))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.shape()[0])
            .map(|i| {
                let row = p.row(i);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        metrics::accuracy(&self.predict(x)?, y)
    }
}

/// Row-wise `z - logsumexp(z)` with the row maximum held constant.
fn log_softmax(g: &mut Graph, z: crate::autodiff::Var) -> Result<crate::autodiff::Var> {
    let (n, k) = (g.shape(z)[0], g.shape(z)[1]);
    let zv = g.value(z);
    let maxes = Tensor::from_fn(&[n, 1], |i| {
        zv.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    });
    let m = g.constant(maxes);
    let shifted = g.sub(z, m)?;
    let e = g.exp(shifted);
    let s = g.sum(e, 1)?;
    let ls = g.log(s)?;
    let ls = g.reshape(ls, &[n, 1])?;
    let out = g.sub(shifted, ls)?;
    debug_assert_eq!(g.shape(out), [n, k]);
    Ok(out)
}

fn labels(data: &Dataset, kind: LabelKind) -> Result<(&[usize], usize)> {
    let (l, k) = match kind {
        LabelKind::Static => (&data.static_labels, data.static_classes),
        LabelKind::Dynamic => (&data.dynamic_labels, data.dynamic_classes),
    };
    l.as_deref()
        .map(|l| (l, k))
        .ok_or_else(|| Error::Data(format!("dataset has no {kind:?} labels")))
}

/// `[n, T, d]` to `[n, T * d]`.
fn flatten(x: &Tensor) -> Tensor {
    let n = x.shape()[0];
    x.reshape(&[n, x.numel() / n.max(1)]).expect("same numel")
}

/// Classifier on flattened raw sequences.
#[derive(Clone, Debug)]
pub struct Judge {
    pub kind: LabelKind,
    pub classifier: Classifier,
    pub test_accuracy: f64,
}

impl Judge {
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        self.classifier.predict_proba(&flatten(x))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.classifier.predict(&flatten(x))
    }
}

pub fn train_judge(train: &Dataset, test: &Dataset, kind: LabelKind, cfg: &EvalConfig) -> Result<Judge> {
    let (y, k) = labels(train, kind)?;
    let classifier = Classifier::fit(&flatten(&train.values), y, k, &cfg.into())?;
    let (yt, _) = labels(test, kind)?;
    let test_accuracy = classifier.accuracy(&flatten(&test.values), yt)?;
    Ok(Judge {
        kind,
        classifier,
        test_accuracy,
    })
}

#[derive(Clone, Debug)]
pub struct Judges {
    pub static_judge: Judge,
    pub dynamic_judge: Judge,
}

pub fn train_judges(train: &Dataset, test: &Dataset, cfg: &EvalConfig) -> Result<Judges> {
    Ok(Judges {
        static_judge: train_judge(train, test, LabelKind::Static, cfg)?,
        dynamic_judge: train_judge(train, test, LabelKind::Dynamic, cfg)?,
    })
}

/// Named metric values for one protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub protocol: String,
    pub seed: u64,
    pub config_digest: String,
    pub metrics: Vec<(String, f64)>,
}

impl EvalReport {
    fn new(protocol: &str, seed: u64, config_digest: &str) -> Self {
        Self {
            protocol: protocol.into(),
            seed,
            config_digest: config_digest.into(),
            metrics: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("{} metric `{name}`", self.protocol),
            });
        }
        self.metrics.push((name.into(), value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|m| m.1)
    }

    pub const CSV_HEADER: &'static str = "protocol,metric,value,seed,config_digest";

    /// Rows without the header.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for (name, value) in &self.metrics {
            let _ = writeln!(s, "{},{},{},{},{}", self.protocol, name, value, self.seed, self.config_digest);
        }
        s
    }

    pub fn write_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in reports {
            s.push_str(&r.csv_rows());
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Context shared by the protocols.
pub struct EvalContext<'a> {
    pub model: &'a Model,
    pub cfg: &'a EvalConfig,
    pub config_digest: &'a str,
}

const CHUNK: usize = 256;

impl EvalContext<'_> {
    /// Eval-mode codes for every sequence. Each chunk of sequences uses the
    /// model's anchor; random-on-batch draws it per chunk from the eval seed.
    pub fn codes(&self, data: &Dataset) -> Result<Codes> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut parts: Vec<Codes> = Vec::new();
        for chunk in idx.chunks(CHUNK) {
            let anchor = self.model.anchor_for_batch(&mut rng);
            parts.push(self.model.infer(&data.batch(chunk), anchor)?);
        }
        let cat = |f: &dyn Fn(&Codes) -> &Tensor| concat_rows(parts.iter().map(f));
        Ok(Codes {
            s_mean: cat(&|c| &c.s_mean),
            s_logvar: cat(&|c| &c.s_logvar),
            d_mean: cat(&|c| &c.d_mean),
            d_logvar: cat(&|c| &c.d_logvar),
            x_hat: cat(&|c| &c.x_hat),
        })
    }

    fn decode(&self, s: &Tensor, d: &Tensor) -> Result<Tensor> {
        let n = s.shape()[0];
        let idx: Vec<usize> = (0..n).collect();
        let mut parts = Vec::new();
        for chunk in idx.chunks(CHUNK) {
            parts.push(self.model.decode_codes(&s.select_rows(chunk), &d.select_rows(chunk))?);
        }
        Ok(concat_rows(parts.iter()))
    }

    /// Four probes on `s` and time-pooled `d` over an internal split, and
    /// the two gaps.
    pub fn leakage_latent(&self, data: &Dataset) -> Result<EvalReport> {
        let codes = self.codes(data)?;
        latent_leakage(&codes.s_mean, &codes.pooled_dynamics(), data, self.cfg, self.config_digest)
    }

    /// Sequences generated with one factor resampled: a fresh `s ~ N(0, I)`
    /// with the inferred dynamics, or prior-rollout dynamics with the
    /// inferred static code.
    pub fn generate(&self, data: &Dataset, mode: Resample) -> Result<Tensor> {
        let codes = self.codes(data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ mode as u64);
        let n = data.len();
        match mode {
            Resample::Static => {
                let s = normal_tensor(&mut rng, &[n, self.model.config.s_dim]);
                self.decode(&s, &codes.d_mean)
            }
            Resample::Dynamic => {
                let d = self.model.sample_prior_dynamics(n, &mut rng)?;
                self.decode(&codes.s_mean, &d)
            }
        }
    }

    pub fn leakage_generation(&self, judges: &Judges, data: &Dataset, mode: Resample) -> Result<EvalReport> {
        let (ys, _) = labels(data, LabelKind::Static)?;
        let (yd, _) = labels(data, LabelKind::Dynamic)?;
        let x = self.generate(data, mode)?;
        let static_acc = metrics::accuracy(&judges.static_judge.predict(&x)?, ys)?;
        let dynamic_acc = metrics::accuracy(&judges.dynamic_judge.predict(&x)?, yd)?;
        let mut r = EvalReport::new(mode.protocol(), self.cfg.seed, self.config_digest);
        r.push("static_accuracy", static_acc)?;
        r.push("dynamic_accuracy", dynamic_acc)?;
        r.push(
            "gap",
            match mode {
                Resample::Static => dynamic_acc - static_acc,
                Resample::Dynamic => static_acc - dynamic_acc,
            },
        )?;
        r.push("judge_static_test_accuracy", judges.static_judge.test_accuracy)?;
        r.push("judge_dynamic_test_accuracy", judges.dynamic_judge.test_accuracy)?;
        Ok(r)
    }

    /// Accuracy of the kept factor and diversity (IS, H(y|x), H(y)) of the
    /// resampled one, for each resampling direction.
    pub fn generation_metrics(&self, judges: &Judges, data: &Dataset) -> Result<EvalReport> {
        let mut r = EvalReport::new("metrics", self.cfg.seed, self.config_digest);
        for mode in [Resample::Static, Resample::Dynamic] {
            let x = self.generate(data, mode)?;
            let (kept, kept_kind, varied) = match mode {
                Resample::Static => (&judges.dynamic_judge, LabelKind::Dynamic, &judges.static_judge),
                Resample::Dynamic => (&judges.static_judge, LabelKind::Static, &judges.dynamic_judge),
            };
            let (y, _) = labels(data, kept_kind)?;
            let prefix = mode.protocol();
            r.push(&format!("{prefix}.acc"), metrics::accuracy(&kept.predict(&x)?, y)?)?;
            let p = varied.predict_proba(&x)?;
            let (hyx, hy) = metrics::entropy_metrics(&p)?;
            r.push(&format!("{prefix}.is"), metrics::inception_score(&p)?)?;
            r.push(&format!("{prefix}.h_yx"), hyx)?;
            r.push(&format!("{prefix}.h_y"), hy)?;
        }
        Ok(r)
    }

    /// `(dec(s1, d2), dec(s2, d1))` in eval mode.
    pub fn swap(&self, x1: &Tensor, x2: &Tensor) -> Result<(Tensor, Tensor)> {
        if x1.shape() != x2.shape() {
            return Err(crate::error::TensorError::Shape {
                op: "swap",
                lhs: x1.shape().to_vec(),
                rhs: x2.shape().to_vec(),
            }
            .into());
        }
        let both = Dataset::new(concat_rows([x1, x2].into_iter()), None, None)?;
        let codes = self.codes(&both)?;
        let n = x1.shape()[0];
        let first: Vec<usize> = (0..n).collect();
        let second: Vec<usize> = (n..2 * n).collect();
        let (s1, s2) = (codes.s_mean.select_rows(&first), codes.s_mean.select_rows(&second));
        let (d1, d2) = (codes.d_mean.select_rows(&first), codes.d_mean.select_rows(&second));
        Ok((self.decode(&s1, &d2)?, self.decode(&s2, &d1)?))
    }

    /// Random pairs; the judged static label of `dec(s1, d2)` should be that
    /// of sequence 1 and the judged dynamic label that of sequence 2.
    pub fn swap_fidelity(&self, judges: &Judges, data: &Dataset) -> Result<(EvalReport, Tensor, Vec<(usize, usize)>)> {
        let (ys, _) = labels(data, LabelKind::Static)?;
        let (yd, _) = labels(data, LabelKind::Dynamic)?;
        if data.len() < 2 {
            return Err(Error::Data("swap needs at least two sequences".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5a9);
        let pairs: Vec<(usize, usize)> = (0..self.cfg.swap_pairs)
            .map(|_| {
                let a = rng.random_range(0..data.len());
                let mut b = rng.random_range(0..data.len() - 1);
                if b >= a {
                    b += 1;
                }
                (a, b)
            })
            .collect();
        let (ia, ib): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let (x_bar, _) = self.swap(&data.batch(&ia), &data.batch(&ib))?;
        let ps = judges.static_judge.predict(&x_bar)?;
        let pd = judges.dynamic_judge.predict(&x_bar)?;
        let want_s: Vec<usize> = ia.iter().map(|&i| ys[i]).collect();
        let want_d: Vec<usize> = ib.iter().map(|&i| yd[i]).collect();
        let mut r = EvalReport::new("swap", self.cfg.seed, self.config_digest);
        r.push("static_match", metrics::accuracy(&ps, &want_s)?)?;
        r.push("dynamic_match", metrics::accuracy(&pd, &want_d)?)?;
        r.push("pairs", pairs.len() as f64)?;
        Ok((r, x_bar, pairs))
    }

    /// Cosine-similarity verification of static identity: pairs sharing the
    /// static class are "same". Low EER on `s` and high EER on pooled `d` is
    /// the disentangled outcome.
    pub fn eer_protocol(&self, data: &Dataset) -> Result<EvalReport> {
        let (ys, _) = labels(data, LabelKind::Static)?;
        let codes = self.codes(data)?;
        let pooled = codes.pooled_dynamics();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xee7);
        let n = data.len();
        if n < 2 {
            return Err(Error::Data("eer needs at least two sequences".into()));
        }
        let mut s_pairs = Vec::with_capacity(self.cfg.eer_pairs);
        let mut d_pairs = Vec::with_capacity(self.cfg.eer_pairs);
        for i in 0..self.cfg.eer_pairs {
            // alternate same and different pairs so both kinds are present
            let a = rng.random_range(0..n);
            let want_same = i % 2 == 0;
            let candidates: Vec<usize> = (0..n)
                .filter(|&b| b != a && (ys[b] == ys[a]) == want_same)
                .collect();
            let Some(&b) = candidates.get(rng.random_range(0..candidates.len().max(1))) else {
                continue;
            };
            s_pairs.push((metrics::cosine_similarity(codes.s_mean.row(a), codes.s_mean.row(b)), want_same));
            d_pairs.push((metrics::cosine_similarity(pooled.row(a), pooled.row(b)), want_same));
        }
        let static_eer = metrics::eer(&s_pairs)?;
        let dynamic_eer = metrics::eer(&d_pairs)?;
        let mut r = EvalReport::new("eer", self.cfg.seed, self.config_digest);
        r.push("static_eer", static_eer)?;
        r.push("dynamic_eer", dynamic_eer)?;
        r.push("gap", dynamic_eer - static_eer)?;
        Ok(r)
    }

    /// CSV with `id,static_label,dynamic_label,s0..,dpooled0..`. Missing
    /// labels are left empty.
    pub fn export_embeddings(&self, data: &Dataset, path: &Path) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let codes = self.codes(data)?;
        let pooled = codes.pooled_dynamics();
        let (ks, kd) = (self.model.config.s_dim, self.model.config.d_dim);
        let mut s = String::from("id,static_label,dynamic_label");
        for j in 0..ks {
            let _ = write!(s, ",s{j}");
        }
        for j in 0..kd {
            let _ = write!(s, ",dpooled{j}");
        }
        s.push('\n');
        let label = |l: &Option<Vec<usize>>, i: usize| l.as_ref().map_or(String::new(), |l| l[i].to_string());
        for i in 0..data.len() {
            let _ = write!(s, "{i},{},{}", label(&data.static_labels, i), label(&data.dynamic_labels, i));
            for v in codes.s_mean.row(i).iter().chain(pooled.row(i)) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    Static = 1,
    Dynamic = 2,
}

impl Resample {
    pub fn protocol(self) -> &'static str {
        match self {
            Resample::Static => "resample_static",
            Resample::Dynamic => "resample_dynamic",
        }
    }
}

fn concat_rows<'a>(parts: impl Iterator<Item = &'a Tensor>) -> Tensor {
    let mut shape: Option<Vec<usize>> = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        let s = shape.get_or_insert_with(|| p.shape().to_vec());
        debug_assert_eq!(s[1..], p.shape()[1..]);
        rows += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = shape.unwrap_or_else(|| vec![0]);
    shape[0] = rows;
    Tensor::from_parts(shape, data)
}

/// Probe accuracies for explicit static and pooled dynamic features.
pub fn latent_leakage(
    s: &Tensor,
    d_pooled: &Tensor,
    data: &Dataset,
    cfg: &EvalConfig,
    config_digest: &str,
) -> Result<EvalReport> {
    let (ys, ks) = labels(data, LabelKind::Static)?;
    let (yd, kd) = labels(data, LabelKind::Dynamic)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    let cut = (0.8 * data.len() as f64).round() as usize;
    let (tr, te) = order.split_at(cut);
    if tr.is_empty() || te.is_empty() {
        return Err(Error::Data("too few sequences for the latent split".into()));
    }
    let pick = |y: &[usize], ix: &[usize]| ix.iter().map(|&i| y[i]).collect::<Vec<_>>();
    let ccfg = ClassifierConfig::from(cfg);
    let acc = |f: &Tensor, y: &[usize], k: usize| -> Result<f64> {
        let clf = Classifier::fit(&f.select_rows(tr), &pick(y, tr), k, &ccfg)?;
        clf.accuracy(&f.select_rows(te), &pick(y, te))
    };
    let ss = acc(s, ys, ks)?;
    let ds = acc(s, yd, kd)?;
    let sd = acc(d_pooled, ys, ks)?;
    let dd = acc(d_pooled, yd, kd)?;
    let mut r = EvalReport::new("leakage-latent", cfg.seed, config_digest);
    r.push("static_from_s", ss)?;
    r.push("dynamic_from_s", ds)?;
    r.push("static_from_d", sd)?;
    r.push("dynamic_from_d", dd)?;
    r.push("static_gap", ss - ds)?;
    r.push("dynamic_gap", dd - sd)?;
    r.push("chance_static", 1.0 / ks as f64)?;
    r.push("chance_dynamic", 1.0 / kd as f64)?;
    Ok(r)
}

/// Convenience: split, judges and every protocol on one dataset.
pub fn full_report(ctx: &EvalContext, data: &Dataset, train_fraction: f64, split_seed: u64) -> Result<Vec<EvalReport>> {
    let (train, test) = split(data, train_fraction, split_seed)?;
    let judges = train_judges(&train, &test, ctx.cfg)?;
    Ok(vec![
        ctx.leakage_latent(data)?,
        ctx.leakage_generation(&judges, &test, Resample::Static)?,
        ctx.leakage_generation(&judges, &test, Resample::Dynamic)?,
        ctx.swap_fidelity(&judges, &test)?.0,
        ctx.generation_metrics(&judges, &test)?,
        ctx.eer_protocol(&test)?,
    ])
}
