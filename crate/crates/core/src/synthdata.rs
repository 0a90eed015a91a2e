//! Labeled synthetic sequences, CSV ingestion and train/test splits.
//!
//! A synthetic sequence with static class `c_s` and dynamic class `c_d` has
//! channel values
//!
//! ```text
//! x_t[k] = a(c_s) sin(2 pi f(c_d) t / T + phi_k(c_s)) + b(c_s) + noise
//! a = 0.5 + 0.25 c_s     b = -1 + 0.5 c_s     f = c_d + 1 cycles
//! phi_k = 2 pi k / d + pi c_s / S
//! ```
//!
//! with `t = 0..T`. Whole cycles keep the per-channel mean equal to `b`, so
//! the dynamic class never shows up in time averages.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::artifact::{self, Artifact};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_sequences: usize,
    pub seq_len: usize,
    pub dim: usize,
    pub static_classes: usize,
    pub dynamic_classes: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_sequences: 2000,
            seq_len: 20,
            dim: 10,
            static_classes: 5,
            dynamic_classes: 4,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.static_classes < 2 || self.dynamic_classes < 2 {
            return Err(Error::Config("need at least two static and two dynamic classes".into()));
        }
        if self.dynamic_classes > 4 {
            return Err(Error::Config(format!(
                "at most 4 dynamic classes (frequencies 1..=4), got {}",
                self.dynamic_classes
            )));
        }
        if self.seq_len < 4 {
            return Err(Error::Config(format!("seq_len must be at least 4, got {}", self.seq_len)));
        }
        if self.dim == 0 || self.n_sequences == 0 {
            return Err(Error::Config("dim and n_sequences must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }

    /// Noiseless value of channel `k` at step `t` for the given classes.
    pub fn waveform(&self, c_s: usize, c_d: usize, t: usize, k: usize) -> f64 {
        let a = 0.5 + 0.25 * c_s as f64;
        let b = -1.0 + 0.5 * c_s as f64;
        let f = (c_d + 1) as f64;
        let phase = 2.0 * PI * k as f64 / self.dim as f64 + PI * c_s as f64 / self.static_classes as f64;
        a * (2.0 * PI * f * t as f64 / self.seq_len as f64 + phase).sin() + b
    }
}

/// Sequences `[n, T, d]` with optional per-sequence labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub values: Tensor,
    pub static_labels: Option<Vec<usize>>,
    pub dynamic_labels: Option<Vec<usize>>,
    pub static_classes: usize,
    pub dynamic_classes: usize,
}

impl Dataset {
    pub fn new(
        values: Tensor,
        static_labels: Option<Vec<usize>>,
        dynamic_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::Data(format!(
                "sequences must be [n, T, d], got {:?}",
                values.shape()
            )));
        }
        let n = values.shape()[0];
        let classes = |labels: &Option<Vec<usize>>, what: &str| -> Result<usize> {
            match labels {
                None => Ok(0),
                Some(l) if l.len() != n => Err(Error::Data(format!(
                    "{what} labels: {} entries for {n} sequences",
                    l.len()
                ))),
                Some(l) => Ok(l.iter().max().map_or(0, |m| m + 1)),
            }
        };
        let static_classes = classes(&static_labels, "static")?;
        let dynamic_classes = classes(&dynamic_labels, "dynamic")?;
        Ok(Self {
            values,
            static_labels,
            dynamic_labels,
            static_classes,
            dynamic_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    /// `[indices.len(), T, d]` batch in the given order.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let per = self.seq_len() * self.dim();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.values.data()[i * per..(i + 1) * per]);
        }
        Tensor::from_parts(vec![indices.len(), self.seq_len(), self.dim()], data)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pick = |l: &Option<Vec<usize>>| l.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset {
            values: self.batch(indices),
            static_labels: pick(&self.static_labels),
            dynamic_labels: pick(&self.dynamic_labels),
            static_classes: self.static_classes,
            dynamic_classes: self.dynamic_classes,
        }
    }

    /// Hex SHA-256 over shape, values and labels.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for &d in self.values.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in self.values.data() {
            h.update(v.to_le_bytes());
        }
        for labels in [&self.static_labels, &self.dynamic_labels] {
            match labels {
                None => h.update([0u8]),
                Some(l) => {
                    h.update([1u8]);
                    for &v in l {
                        h.update((v as u64).to_le_bytes());
                    }
                }
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = BTreeMap::new();
        header.insert("artifact".into(), "dataset".into());
        header.insert("static_classes".into(), self.static_classes.to_string());
        header.insert("dynamic_classes".into(), self.dynamic_classes.to_string());
        header.insert("digest".into(), self.digest());
        let mut tensors = vec![("values".to_string(), self.values.clone())];
        for (name, labels) in [
            ("static_labels", &self.static_labels),
            ("dynamic_labels", &self.dynamic_labels),
        ] {
            if let Some(l) = labels {
                tensors.push((name.into(), Tensor::from_vec(l.iter().map(|&v| v as f64).collect())));
            }
        }
        artifact::write(path, &Artifact { header, tensors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = artifact::read(path)?;
        if a.header_value("artifact")? != "dataset" {
            return Err(Error::Compat(format!("{} is not a dataset file", path.display())));
        }
        let labels = |name: &str| -> Result<Option<Vec<usize>>> {
            match a.tensors.iter().find(|(n, _)| n == name) {
                None => Ok(None),
                Some((_, t)) => t
                    .data()
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(Error::Format(format!("bad label {v} in {name}")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some),
            }
        };
        let mut d = Dataset::new(
            a.tensor("values")?.clone(),
            labels("static_labels")?,
            labels("dynamic_labels")?,
        )?;
        d.static_classes = d.static_classes.max(a.parse_header("static_classes")?);
        d.dynamic_classes = d.dynamic_classes.max(a.parse_header("dynamic_classes")?);
        if d.digest() != a.header_value("digest")? {
            return Err(Error::Format(format!("{}: digest mismatch", path.display())));
        }
        Ok(d)
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, t_len, dim) = (spec.n_sequences, spec.seq_len, spec.dim);
    let mut values = Vec::with_capacity(n * t_len * dim);
    let mut static_labels = Vec::with_capacity(n);
    let mut dynamic_labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c_s = rng.random_range(0..spec.static_classes);
        let c_d = rng.random_range(0..spec.dynamic_classes);
        for t in 0..t_len {
            for k in 0..dim {
                let eps: f64 = rng.sample(StandardNormal);
                values.push(spec.waveform(c_s, c_d, t, k) + spec.noise * eps);
            }
        }
        static_labels.push(c_s);
        dynamic_labels.push(c_d);
    }
    let mut d = Dataset::new(
        Tensor::from_parts(vec![n, t_len, dim], values),
        Some(static_labels),
        Some(dynamic_labels),
    )?;
    d.static_classes = spec.static_classes;
    d.dynamic_classes = spec.dynamic_classes;
    Ok(d)
}

/// Deterministic shuffled split. With labels, each static class is split
/// separately so that both sides keep the class proportions.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!(
            "train fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match &data.static_labels {
        Some(labels) => {
            let mut g = vec![Vec::new(); data.static_classes];
            for (i, &l) in labels.iter().enumerate() {
                g[l].push(i);
            }
            g
        }
        None => vec![(0..data.len()).collect()],
    };
    let target = (train_fraction * data.len() as f64).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut assigned = 0.0;
    for mut group in groups {
        group.shuffle(&mut rng);
        // Cumulative rounding keeps the total train count at `target`.
        let before = (assigned * train_fraction).round() as usize;
        assigned += group.len() as f64;
        let after = (assigned * train_fraction).round() as usize;
        let k = after - before;
        train.extend_from_slice(&group[..k]);
        test.extend_from_slice(&group[k..]);
    }
    debug_assert_eq!(train.len(), target);
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((data.subset(&train), data.subset(&test)))
}

/// Errors when an empty side of a split is about to be used.
pub fn require_nonempty<'a>(data: &'a Dataset, what: &str) -> Result<&'a Dataset> {
    if data.is_empty() {
        return Err(Error::Data(format!("{what} split is empty")));
    }
    Ok(data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Static,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvOptions {
    pub seq_len: usize,
    /// Value columns; empty means every column except the label columns.
    pub columns: Vec<String>,
    pub static_label: Option<String>,
    pub dynamic_label: Option<String>,
}

/// Standardized dataset from a CSV plus the per-column statistics used.
#[derive(Clone, Debug)]
pub struct CsvDataset {
    pub data: Dataset,
    pub columns: Vec<String>,
    pub stats: Vec<ColumnStats>,
    /// Trailing rows that did not fill a window.
    pub dropped_rows: usize,
}

impl CsvDataset {
    /// Undoes the z-scoring.
    pub fn destandardize(&self) -> Tensor {
        let d = self.stats.len();
        let v = &self.data.values;
        Tensor::from_fn(v.shape(), |i| {
            let s = self.stats[i % d];
            v.data()[i] * s.std + s.mean
        })
    }
}

pub fn stats_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".stats.csv");
    path.with_file_name(name)
}

/// Loads non-overlapping windows of `seq_len` rows. Values are z-scored per
/// column; the statistics are written next to the file. A label column
/// takes its value from the first row of each window.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<CsvDataset> {
    if opts.seq_len == 0 {
        return Err(Error::Config("seq_len must be positive".into()));
    }
    let csv_err = |row: usize, msg: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(0, e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(1, format!("missing column `{name}`")))
    };
    let label_names: Vec<&String> = opts.static_label.iter().chain(&opts.dynamic_label).collect();
    let columns: Vec<String> = if opts.columns.is_empty() {
        header
            .iter()
            .filter(|h| !label_names.contains(h))
            .cloned()
            .collect()
    } else {
        opts.columns.clone()
    };
    if columns.is_empty() {
        return Err(csv_err(1, "no value columns".into()));
    }
    let value_idx = columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let static_idx = opts.static_label.as_deref().map(find).transpose()?;
    let dynamic_idx = opts.dynamic_label.as_deref().map(find).transpose()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut static_raw = Vec::new();
    let mut dynamic_raw = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // header is row 1
        let rec = rec.map_err(|e| csv_err(row, e.to_string()))?;
        let cell = |j: usize| -> Result<&str> {
            rec.get(j)
                .map(str::trim)
                .ok_or_else(|| csv_err(row, format!("missing cell for column `{}`", header[j])))
        };
        let mut vals = Vec::with_capacity(value_idx.len());
        for &j in &value_idx {
            let s = cell(j)?;
            let v: f64 = s
                .parse()
                .map_err(|_| csv_err(row, format!("non-numeric value `{s}` in column `{}`", header[j])))?;
            if !v.is_finite() {
                return Err(csv_err(row, format!("non-finite value in column `{}`", header[j])));
            }
            vals.push(v);
        }
        rows.push(vals);
        if let Some(j) = static_idx {
            static_raw.push(cell(j)?.to_string());
        }
        if let Some(j) = dynamic_idx {
            dynamic_raw.push(cell(j)?.to_string());
        }
    }

    let windows = rows.len() / opts.seq_len;
    if windows == 0 {
        return Err(csv_err(
            rows.len() + 1,
            format!("{} rows, fewer than one window of {}", rows.len(), opts.seq_len),
        ));
    }
    let used = windows * opts.seq_len;
    let dropped_rows = rows.len() - used;
    if dropped_rows > 0 {
        log::warn!(
            "{}: dropping {dropped_rows} trailing rows that do not fill a window",
            path.display()
        );
    }

    let d = columns.len();
    let stats: Vec<ColumnStats> = (0..d)
        .map(|k| {
            let n = used as f64;
            let mean = rows[..used].iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows[..used].iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
            // constant columns are centred only
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            ColumnStats { mean, std }
        })
        .collect();
    let values = Tensor::from_fn(&[windows, opts.seq_len, d], |i| {
        let k = i % d;
        (rows[i / d][k] - stats[k].mean) / stats[k].std
    });
    let window_labels = |raw: &[String]| -> Option<Vec<usize>> {
        if raw.is_empty() {
            return None;
        }
        let firsts: Vec<&String> = (0..windows).map(|w| &raw[w * opts.seq_len]).collect();
        // integer labels are kept as they are, anything else is numbered in
        // sorted order of its text
        if let Ok(ints) = firsts.iter().map(|s| s.parse::<usize>()).collect::<Result<Vec<_>, _>>() {
            return Some(ints);
        }
        let names: std::collections::BTreeSet<&String> = firsts.iter().copied().collect();
        let index: BTreeMap<&String, usize> = names.into_iter().zip(0..).collect();
        Some(firsts.iter().map(|s| index[s]).collect())
    };
    let data = Dataset::new(values, window_labels(&static_raw), window_labels(&dynamic_raw))?;

    write_stats(&stats_path(path), &columns, &stats)?;
    Ok(CsvDataset {
        data,
        columns,
        stats,
        dropped_rows,
    })
}

fn write_stats(path: &Path, columns: &[String], stats: &[ColumnStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let to_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["column", "mean", "std"]).map_err(to_err)?;
    for (c, s) in columns.iter().zip(stats) {
        w.write_record([c.clone(), format!("{:e}", s.mean), format!("{:e}", s.std)])
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes one row per time step with columns `x0..x{d-1}` and, when present,
/// `static_label` and `dynamic_label`. Values use shortest round-trip
/// formatting, so reloading is exact up to the z-scoring.
pub fn export_csv(data: &Dataset, path: &Path) -> Result<()> {
    let to_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    let d = data.dim();
    let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    if data.static_labels.is_some() {
        header.push("static_label".into());
    }
    if data.dynamic_labels.is_some() {
        header.push("dynamic_label".into());
    }
    w.write_record(&header).map_err(to_err)?;
    let t_len = data.seq_len();
    for i in 0..data.len() {
        for t in 0..t_len {
            let start = (i * t_len + t) * d;
            let mut rec: Vec<String> = data.values.data()[start..start + d]
                .iter()
                .map(|v| v.to_string())
                .collect();
            if let Some(l) = &data.static_labels {
                rec.push(l[i].to_string());
            }
            if let Some(l) = &data.dynamic_labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec).map_err(to_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
