use super::*;
use crate::synthdata::{generate, SyntheticSpec};

fn tiny_run(seed: u64) -> (RunConfig, Dataset) {
    let mut run = RunConfig::default();
    run.data = SyntheticSpec {
        n_sequences: 48,
        seq_len: 8,
        dim: 3,
        seed,
        ..Default::default()
    };
    run.model.seq_len = 8;
    run.model.input_dim = 3;
    run.model.g_dim = 8;
    run.model.enc_hidden = [8, 8];
    run.model.s_dim = 3;
    run.model.d_dim = 3;
    run.model.lstm_hidden = 6;
    run.model.dec_hidden = 6;
    run.model.dec_mlp_hidden = 8;
    run.train.seed = seed;
    run.train.batch_size = 16;
    run.train.epochs = 3;
    run.train.lr = 3e-3;
    let data = generate(&run.data).unwrap();
    (run, data)
}

fn trainer(run: RunConfig, data: &Dataset) -> Trainer {
    Trainer::new(run, data.digest()).unwrap()
}

#[test]
fn zero_gradient_leaves_parameters_and_decays_moments() {
    let mut params = vec![Tensor::from_vec(vec![1.0, -2.0])];
    let names = vec!["p".to_string()];
    let mut state = AdamState {
        m: vec![Tensor::from_vec(vec![0.5, 0.5])],
        v: vec![Tensor::from_vec(vec![0.0, 0.0])],
        t: 0,
    };
    let zero = vec![Tensor::zeros(&[2])];
    let before = params.clone();
    // v stays zero, so the step is m_hat / eps; use lr = 0 to isolate decay
    adam_step(&mut params, &names, &zero, &mut state, 0.0).unwrap();
    assert_eq!(params, before);
    assert_eq!(state.m[0].data(), &[0.45, 0.45]);
    assert_eq!(state.t, 1);

    let mut fresh = AdamState::zeros_like(&params);
    adam_step(&mut params, &names, &zero, &mut fresh, 0.1).unwrap();
    assert_eq!(params, before);
}

#[test]
fn first_step_is_lr_times_normalized_gradient() {
    let g = [3.0, -0.25, 1e-3];
    let mut params = vec![Tensor::zeros(&[3])];
    let mut state = AdamState::zeros_like(&params);
    adam_step(&mut params, &["p".into()], &[Tensor::from_vec(g.to_vec())], &mut state, 0.01).unwrap();
    for (p, g) in params[0].data().iter().zip(g) {
        let expected = -0.01 * g / (g.abs() + ADAM_EPS);
        assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
    }
}

#[test]
fn quadratic_bowl_converges() {
    let mut params = vec![Tensor::from_vec(vec![1.0, -0.7, 0.3, 2.0])];
    let names = vec!["x".to_string()];
    let mut state = AdamState::zeros_like(&params);
    for _ in 0..500 {
        let grad = params[0].map(|x| 2.0 * x);
        adam_step(&mut params, &names, &[grad], &mut state, 0.05).unwrap();
    }
    let norm = params[0].data().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm < 1e-3, "norm {norm}");
}

#[test]
fn non_finite_gradient_is_rejected_by_name() {
    let mut params = vec![Tensor::zeros(&[2]), Tensor::zeros(&[1])];
    let names = vec!["a".to_string(), "dec.b".to_string()];
    let mut state = AdamState::zeros_like(&params);
    let grads = vec![Tensor::ones(&[2]), Tensor::from_vec(vec![f64::NAN])];
    let err = adam_step(&mut params, &names, &grads, &mut state, 0.1).unwrap_err();
    assert!(err.to_string().contains("dec.b"), "{err}");
    assert_eq!(state.t, 0);
    assert_eq!(params[0], Tensor::zeros(&[2]));
}

#[test]
fn epoch_order_is_a_function_of_seed_and_epoch() {
    let a = epoch_order(5, 2, 50);
    assert_eq!(a, epoch_order(5, 2, 50));
    assert_ne!(a, epoch_order(5, 3, 50));
    assert_ne!(a, epoch_order(6, 2, 50));
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
}

#[test]
fn same_seed_same_history_and_parameters() {
    let (run, data) = tiny_run(1);
    let mut a = trainer(run.clone(), &data);
    let mut b = trainer(run, &data);
    a.train(&data, None).unwrap();
    b.train(&data, None).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.history.len(), 9);
    assert_eq!(encode_bytes(&a), encode_bytes(&b));

    let (mut other, _) = tiny_run(1);
    other.train.seed = 2;
    let mut c = trainer(other, &data);
    c.train(&data, None).unwrap();
    assert_ne!(a.history, c.history);
}

fn encode_bytes(t: &Trainer) -> Vec<u8> {
    artifact::encode(&t.to_artifact())
}

#[test]
fn resume_matches_uninterrupted_run() {
    for anchor in ["rob", "random", "last"] {
        let (mut run, data) = tiny_run(3);
        run.model.anchor = anchor.parse().unwrap();
        run.train.checkpoint_every = 1;
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("c.bin");

        let mut full = trainer(run.clone(), &data);
        full.train(&data, None).unwrap();

        let mut first = run.clone();
        first.train.epochs = 2;
        let mut part = trainer(first, &data);
        part.train(&data, Some(&ckpt)).unwrap();
        let mut resumed = Trainer::load_checkpoint(&ckpt).unwrap();
        assert_eq!(resumed.epoch, 2);
        resumed.run.train.epochs = 3;
        resumed.train(&data, None).unwrap();

        assert_eq!(resumed.model.params, full.model.params, "anchor {anchor}");
        assert_eq!(resumed.adam, full.adam);
        assert_eq!(resumed.history[..], full.history[6..]);
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (run, data) = tiny_run(4);
    let mut t = trainer(run, &data);
    t.run_epoch(&data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.bin");
    t.save_checkpoint(&p).unwrap();
    let first = std::fs::read(&p).unwrap();
    Trainer::load_checkpoint(&p).unwrap().save_checkpoint(&p).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), first);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (run, data) = tiny_run(5);
    let t = trainer(run, &data);
    let good = artifact::encode(&t.to_artifact());

    let mut bad = good.clone();
    bad[1] = b'x';
    assert!(Trainer::from_artifact(&artifact::decode(&bad).unwrap_or_default()).is_err());
    assert!(artifact::decode(&bad).is_err());

    assert!(artifact::decode(&good[..good.len() - 3]).is_err());

    let mut a = t.to_artifact();
    a.tensors.pop();
    assert!(Trainer::from_artifact(&a).is_err());

    let mut a = t.to_artifact();
    a.tensors[0].1 = Tensor::zeros(&[1]);
    assert!(matches!(Trainer::from_artifact(&a), Err(Error::Compat(_))));

    let mut a = t.to_artifact();
    a.header.insert("model.s_dim".into(), "4".into());
    assert!(Trainer::from_artifact(&a).is_err());
}

#[test]
fn data_shape_mismatch_is_a_compat_error() {
    let (run, _) = tiny_run(6);
    let other = generate(&SyntheticSpec {
        n_sequences: 4,
        seq_len: 9,
        dim: 3,
        ..Default::default()
    })
    .unwrap();
    let mut t = trainer(run, &other);
    assert!(matches!(t.run_epoch(&other), Err(Error::Compat(_))));
}

#[test]
fn divergence_is_reported_and_keeps_the_checkpoint() {
    let (mut run, data) = tiny_run(7);
    run.train.checkpoint_every = 1;
    run.train.epochs = 1;
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("c.bin");
    let mut t = trainer(run, &data);
    t.train(&data, Some(&ckpt)).unwrap();
    let saved = std::fs::read(&ckpt).unwrap();
    t.model.params.get_mut("dec.mean.b").unwrap().data_mut()[0] = f64::INFINITY;
    t.run.train.epochs = 2;
    let err = t.train(&data, Some(&ckpt)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    assert_eq!(std::fs::read(&ckpt).unwrap(), saved);
}

#[test]
fn loss_breakdown_wiring_of_ablations() {
    let (run, data) = tiny_run(8);
    let first_record = |ablation: &str| {
        let mut r = run.clone();
        r.model.ablation = ablation.parse().unwrap();
        r.train.alpha = 0.5;
        r.train.beta = 0.3;
        let mut t = trainer(r, &data);
        t.step(&data.batch(&[0, 1, 2, 3])).unwrap()
    };
    let none = first_record("none");
    let no_loss = first_record("no-loss");
    assert_eq!(
        (none.recon_rest, none.recon_anchor, none.kl_static, none.kl_dynamic),
        (no_loss.recon_rest, no_loss.recon_anchor, no_loss.kl_static, no_loss.kl_dynamic)
    );
    assert!((none.total - no_loss.total - 0.5 * none.recon_anchor).abs() < 1e-9);

    // Subtraction changes the dynamic inputs only: the static KL is the same.
    let no_sub = first_record("no-sub");
    assert_eq!(none.kl_static, no_sub.kl_static);
    assert_ne!(none.kl_dynamic, no_sub.kl_dynamic);
}

#[test]
fn loss_csv_layout() {
    let (run, data) = tiny_run(10);
    let mut t = trainer(run, &data);
    t.run_epoch(&data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("loss.csv");
    write_loss_csv(&p, &t.history).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,epoch,recon_rest,recon_anchor,kl_static,kl_dynamic,total"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[..2], ["1", "1"]);
    assert_eq!(first[6].parse::<f64>().unwrap(), t.history[0].loss.total);
    assert_eq!(text.lines().count(), 4);
}
