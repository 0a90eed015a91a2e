//! Short runs of the default model on the default synthetic data.

use dbse::config::RunConfig;
use dbse::synthdata::{generate, split};
use dbse::training::Trainer;

fn epoch_means(t: &Trainer, f: impl Fn(&dbse::LossBreakdown) -> f64) -> Vec<f64> {
    (1..=t.epoch)
        .map(|e| {
            let recs: Vec<_> = t.history.iter().filter(|r| r.epoch == e).collect();
            recs.iter().map(|r| f(&r.loss)).sum::<f64>() / recs.len() as f64
        })
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run(text: &str) -> Trainer {
    let run = RunConfig::parse(text).unwrap();
    let data = generate(&run.data).unwrap();
    let (train, _) = split(&data, run.train_fraction, run.split_seed).unwrap();
    let mut t = Trainer::new(run, train.digest()).unwrap();
    t.train(&train, None).unwrap();
    t
}

#[test]
fn reconstruction_only_training_lowers_mse_every_epoch() {
    let t = run("seed = 3\ntrain.alpha = 1\ntrain.beta = 0\ntrain.epochs = 10\n");
    // unit-variance likelihood: squared error = -2 * log-likelihood
    let mse = epoch_means(&t, |l| -2.0 * (l.recon_rest + l.recon_anchor));
    for w in mse.windows(2) {
        assert!(w[1] < w[0], "{mse:?}");
    }
}

#[test]
fn objective_trends_upward() {
    let t = run("seed = 4\ntrain.epochs = 10\n");
    let total = epoch_means(&t, |l| l.total);
    let (early, late) = total.split_at(total.len() / 2);
    assert!(median(late) > median(early), "{total:?}");
}
