use super::*;
use std::io::Write as _;

fn small(noise: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_sequences: 200,
        noise,
        seed,
        ..Default::default()
    }
}

fn per_seq(d: &Dataset, i: usize) -> &[f64] {
    let per = d.seq_len() * d.dim();
    &d.values.data()[i * per..(i + 1) * per]
}

#[test]
fn generation_is_deterministic() {
    let a = generate(&small(0.05, 3)).unwrap();
    assert_eq!(a, generate(&small(0.05, 3)).unwrap());
    assert_ne!(a, generate(&small(0.05, 4)).unwrap());
    assert_eq!(a.values.shape(), &[200, 20, 10]);
    assert_eq!((a.static_classes, a.dynamic_classes), (5, 4));
}

#[test]
fn noiseless_sequences_depend_only_on_classes() {
    let d = generate(&small(0.0, 5)).unwrap();
    let (s, dy) = (d.static_labels.as_ref().unwrap(), d.dynamic_labels.as_ref().unwrap());
    for i in 0..d.len() {
        for j in 0..i {
            if s[i] == s[j] && dy[i] == dy[j] {
                assert_eq!(per_seq(&d, i), per_seq(&d, j));
            }
        }
    }
}

#[test]
fn channel_means_ignore_the_dynamic_class() {
    let spec = small(0.0, 0);
    for c_s in 0..spec.static_classes {
        for k in 0..spec.dim {
            let means: Vec<f64> = (0..spec.dynamic_classes)
                .map(|c_d| {
                    (0..spec.seq_len).map(|t| spec.waveform(c_s, c_d, t, k)).sum::<f64>()
                        / spec.seq_len as f64
                })
                .collect();
            for m in &means {
                assert!((m - means[0]).abs() < 1e-12);
                assert!((m - (-1.0 + 0.5 * c_s as f64)).abs() < 1e-12);
            }
        }
    }
}

/// Offset = grand mean; amplitude = sqrt(2 * within-channel variance).
fn amplitude_offset(d: &Dataset, i: usize) -> (f64, f64) {
    let (t_len, dim) = (d.seq_len(), d.dim());
    let x = per_seq(d, i);
    let offset = x.iter().sum::<f64>() / x.len() as f64;
    let mut var = 0.0;
    for k in 0..dim {
        let m = (0..t_len).map(|t| x[t * dim + k]).sum::<f64>() / t_len as f64;
        var += (0..t_len).map(|t| (x[t * dim + k] - m).powi(2)).sum::<f64>() / t_len as f64;
    }
    ((2.0 * var / dim as f64).sqrt(), offset)
}

/// Frequency with the largest DFT power summed over channels.
fn dominant_frequency(d: &Dataset, i: usize, max_f: usize) -> usize {
    let (t_len, dim) = (d.seq_len(), d.dim());
    let x = per_seq(d, i);
    (1..=max_f)
        .map(|f| {
            let mut power = 0.0;
            for k in 0..dim {
                let (mut re, mut im) = (0.0, 0.0);
                for t in 0..t_len {
                    let w = 2.0 * PI * f as f64 * t as f64 / t_len as f64;
                    re += x[t * dim + k] * w.cos();
                    im -= x[t * dim + k] * w.sin();
                }
                power += re * re + im * im;
            }
            (f, power)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn raw_classes_are_separable() {
    let d = generate(&SyntheticSpec::default()).unwrap();
    let s = d.static_labels.as_ref().unwrap();
    let dy = d.dynamic_labels.as_ref().unwrap();
    let (fit, held) = (0..1000, 1000..2000);

    let mut centroids = vec![(0.0, 0.0, 0usize); 5];
    for i in fit {
        let (a, b) = amplitude_offset(&d, i);
        let c = &mut centroids[s[i]];
        c.0 += a;
        c.1 += b;
        c.2 += 1;
    }
    let centroids: Vec<(f64, f64)> = centroids
        .iter()
        .map(|&(a, b, n)| (a / n as f64, b / n as f64))
        .collect();
    let mut static_hits = 0;
    let mut dynamic_hits = 0;
    for i in held.clone() {
        let (a, b) = amplitude_offset(&d, i);
        let guess = (0..5)
            .min_by(|&p, &q| {
                let dp = (a - centroids[p].0).powi(2) + (b - centroids[p].1).powi(2);
                let dq = (a - centroids[q].0).powi(2) + (b - centroids[q].1).powi(2);
                dp.total_cmp(&dq)
            })
            .unwrap();
        static_hits += (guess == s[i]) as usize;
        dynamic_hits += (dominant_frequency(&d, i, 4) == dy[i] + 1) as usize;
    }
    let n = held.len() as f64;
    assert!(static_hits as f64 / n > 0.95, "static {static_hits}");
    assert!(dynamic_hits as f64 / n >= 0.95, "dynamic {dynamic_hits}");
}

#[test]
fn labels_are_close_to_uniform() {
    let d = generate(&SyntheticSpec::default()).unwrap();
    for (labels, k) in [(&d.static_labels, 5), (&d.dynamic_labels, 4)] {
        let labels = labels.as_ref().unwrap();
        for c in 0..k {
            let frac = labels.iter().filter(|&&l| l == c).count() as f64 / labels.len() as f64;
            assert!((frac - 1.0 / k as f64).abs() < 0.03, "class {c}: {frac}");
        }
    }
}

#[test]
fn spec_validation() {
    let ok = SyntheticSpec::default();
    assert!(ok.validate().is_ok());
    for bad in [
        SyntheticSpec { static_classes: 1, ..ok.clone() },
        SyntheticSpec { dynamic_classes: 5, ..ok.clone() },
        SyntheticSpec { seq_len: 3, ..ok.clone() },
        SyntheticSpec { noise: -0.1, ..ok.clone() },
        SyntheticSpec { noise: f64::NAN, ..ok.clone() },
    ] {
        assert!(generate(&bad).is_err(), "{bad:?}");
    }
}

#[test]
fn split_sizes_membership_and_balance() {
    let d = generate(&SyntheticSpec {
        n_sequences: 100,
        ..Default::default()
    })
    .unwrap();
    let (tr, te) = split(&d, 0.8, 9).unwrap();
    assert_eq!((tr.len(), te.len()), (80, 20));
    let (tr2, te2) = split(&d, 0.8, 9).unwrap();
    assert_eq!((tr.clone(), te.clone()), (tr2, te2));

    let full = generate(&SyntheticSpec::default()).unwrap();
    let (tr, te) = split(&full, 0.8, 1).unwrap();
    let pick = |x: &Dataset, dynamic: bool| {
        if dynamic {
            x.dynamic_labels.clone().unwrap()
        } else {
            x.static_labels.clone().unwrap()
        }
    };
    for (dynamic, k) in [(false, 5), (true, 4)] {
        for c in 0..k {
            let frac = |x: &Dataset| {
                let l = pick(x, dynamic);
                l.iter().filter(|&&v| v == c).count() as f64 / l.len() as f64
            };
            assert!((frac(&tr) - frac(&full)).abs() < 0.05);
            assert!((frac(&te) - frac(&full)).abs() < 0.05);
        }
    }

    let (all, none) = split(&d, 1.0, 0).unwrap();
    assert_eq!((all.len(), none.len()), (100, 0));
    assert!(require_nonempty(&none, "test").is_err());
    assert!(require_nonempty(&all, "train").is_ok());
    assert!(split(&d, 1.5, 0).is_err());
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let d = generate(&small(0.05, 2)).unwrap();
    d.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.digest(), d.digest());
    let first = std::fs::read(&path).unwrap();
    back.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
    p
}

fn opts(seq_len: usize) -> CsvOptions {
    CsvOptions {
        seq_len,
        columns: vec![],
        static_label: None,
        dynamic_label: None,
    }
}

#[test]
fn csv_windows() {
    let dir = tempfile::tempdir().unwrap();
    let rows = |n: usize| {
        let mut s = String::from("a,b\n");
        for i in 0..n {
            s.push_str(&format!("{},{}\n", i, 2 * i % 7));
        }
        s
    };
    let p = write_file(dir.path(), "exact.csv", &rows(5));
    let one = load_csv(&p, &opts(5)).unwrap();
    assert_eq!(one.data.values.shape(), &[1, 5, 2]);
    assert_eq!(one.dropped_rows, 0);
    assert!(stats_path(&p).exists());

    let p = write_file(dir.path(), "extra.csv", &rows(13));
    let two = load_csv(&p, &opts(5)).unwrap();
    assert_eq!(two.data.values.shape(), &[2, 5, 2]);
    assert_eq!(two.dropped_rows, 3);
    // z-scored over the rows in use
    for k in 0..2 {
        let col: Vec<f64> = (0..10).map(|r| two.data.values.data()[r * 2 + k]).collect();
        assert!(col.iter().sum::<f64>().abs() < 1e-12);
        assert!((col.iter().map(|v| v * v).sum::<f64>() / 10.0 - 1.0).abs() < 1e-12);
    }

    let p = write_file(dir.path(), "short.csv", &rows(4));
    assert!(load_csv(&p, &opts(5)).is_err());
}

#[test]
fn csv_round_trip_recovers_values() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate(&small(0.05, 11)).unwrap();
    let p = dir.path().join("seqs.csv");
    export_csv(&d, &p).unwrap();
    let loaded = load_csv(
        &p,
        &CsvOptions {
            seq_len: 20,
            columns: vec![],
            static_label: Some("static_label".into()),
            dynamic_label: Some("dynamic_label".into()),
        },
    )
    .unwrap();
    assert!(loaded.destandardize().max_abs_diff(&d.values) < 1e-12);
    assert_eq!(loaded.data.static_labels, d.static_labels);
    assert_eq!(loaded.data.dynamic_labels, d.dynamic_labels);
    assert_eq!(loaded.columns.len(), 10);
}

#[test]
fn csv_errors_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_file(dir.path(), "bad.csv", "a,b\n1,2\n3,oops\n5,6\n");
    let err = load_csv(&p, &opts(1)).unwrap_err().to_string();
    assert!(err.contains("row 3") && err.contains("oops"), "{err}");

    let p = write_file(dir.path(), "ragged.csv", "a,b\n1,2\n3\n");
    let err = load_csv(&p, &opts(1)).unwrap_err().to_string();
    assert!(err.contains("row 3"), "{err}");

    let p = write_file(dir.path(), "cols.csv", "a,b\n1,2\n");
    let mut o = opts(1);
    o.columns = vec!["c".into()];
    let err = load_csv(&p, &o).unwrap_err().to_string();
    assert!(err.contains("missing column `c`"), "{err}");
}
