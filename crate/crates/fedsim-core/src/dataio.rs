//! Dataset loading, generation, and partitioning into device shards.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamKind};

/// A sparse sample matrix with labels, stored CSR-style.
///
/// Feature indices are 0-based in memory. `ground_truth`, when present, is an
/// interpolating parameter vector: `labels[i] == <ground_truth, x_i>` up to
/// floating-point evaluation order (the bias, if any, lives in a constant-1
/// feature coordinate rather than a separate intercept).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<f64>,
    d: usize,
    ground_truth: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<(u32, f64)>>, labels: Vec<f64>, d: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows vs {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for row in &rows {
            for &(idx, val) in row {
                if idx as usize >= d {
                    return Err(Error::InvalidInput(format!(
                        "feature index {idx} out of range for dimension {d}"
                    )));
                }
                indices.push(idx);
                values.push(val);
            }
            offsets.push(indices.len());
        }
        Ok(Self {
            offsets,
            indices,
            values,
            labels,
            d,
            ground_truth: None,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Sparse row `i` as parallel (indices, values) slices.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.offsets[i];
        let hi = self.offsets[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn ground_truth(&self) -> Option<&[f64]> {
        self.ground_truth.as_deref()
    }

    /// `<w, x_i>` for a dense parameter vector.
    pub fn dot_row(&self, i: usize, w: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, &v)| v * w[j as usize]).sum()
    }

    /// `y[j] += s * x_i[j]` scattered over the sparse support of row `i`.
    pub fn add_row(&self, i: usize, s: f64, y: &mut [f64]) {
        let (idx, val) = self.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            y[j as usize] += s * v;
        }
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        let (_, val) = self.row(i);
        val.iter().map(|v| v * v).sum()
    }

    /// Serialize in libsvm text format (1-based indices, labels as decimal reals).
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            let _ = write!(out, "{}", self.labels[i]);
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                let _ = write!(out, " {}:{}", j + 1, v);
            }
            out.push('\n');
        }
        out
    }
}

/// Assignment of sample indices to `N` devices with aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DevicePartition {
    shards: Vec<Vec<u32>>,
    weights: Vec<f64>,
}

impl DevicePartition {
    /// Build from explicit shards; weights default to shard-size proportions.
    pub fn from_shards(shards: Vec<Vec<u32>>) -> Result<Self> {
        let total: usize = shards.iter().map(|s| s.len()).sum();
        if total == 0 {
            return Err(Error::InvalidPartition("no samples assigned".into()));
        }
        let weights = shards
            .iter()
            .map(|s| s.len() as f64 / total as f64)
            .collect();
        Ok(Self { shards, weights })
    }

    pub fn n_devices(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, k: usize) -> &[u32] {
        &self.shards[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    /// N * max_k p_k and N * min_k p_k.
    pub fn nu_max_min(&self) -> (f64, f64) {
        let n = self.n_devices() as f64;
        let mut hi = f64::MIN;
        let mut lo = f64::MAX;
        for &p in &self.weights {
            hi = hi.max(p);
            lo = lo.min(p);
        }
        (n * hi, n * lo)
    }
}

/// Parse the libsvm text format: `<label> <idx>:<val> ...` per line with
/// 1-based strictly increasing indices. The dimension is the largest index
/// seen; empty input parses to the empty dataset.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a first token");
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad label `{label_tok}`"),
        })?;
        let mut row = Vec::new();
        let mut prev_idx = 0u32;
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected idx:val, got `{tok}`"),
            })?;
            let idx: u32 = idx_s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature index `{idx_s}`"),
            })?;
            let val: f64 = val_s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature value `{val_s}`"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "indices are 1-based".into(),
                });
            }
            if idx <= prev_idx {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-monotone index {idx} after {prev_idx}"),
                });
            }
            prev_idx = idx;
            d = d.max(idx as usize);
            row.push((idx - 1, val));
        }
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(rows, labels, d)
}

/// Split `[0, n)` into `N` shards in index order; the first `n mod N` devices
/// get one extra sample, and `p_k = n_k / n`.
pub fn partition_even(ds: &Dataset, n_devices: usize) -> Result<DevicePartition> {
    let n = ds.n();
    if n_devices == 0 || n_devices > n {
        return Err(Error::InvalidPartition(format!(
            "cannot split {n} samples over {n_devices} devices"
        )));
    }
    let base = n / n_devices;
    let extra = n % n_devices;
    let mut shards = Vec::with_capacity(n_devices);
    let mut next = 0u32;
    for k in 0..n_devices {
        let size = base + usize::from(k < extra);
        let shard: Vec<u32> = (next..next + size as u32).collect();
        next += size as u32;
        shards.push(shard);
    }
    DevicePartition::from_shards(shards)
}

/// Overparameterized regression labels on top of existing features: append a
/// constant-1 coordinate, draw an interpolating parameter vector (one
/// standard normal per coordinate, bias included), and set
/// `y_i = <w*, [x_i, 1]>`. The output interpolates by construction, so the
/// least-squares objective at the ground truth is exactly zero.
pub fn gen_overparam_regression(features: &Dataset, seed: u64) -> Result<Dataset> {
    if features.n() == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let d = features.dim() + 1;
    let mut rng = stream(seed, StreamKind::GroundTruth, 0, 0);
    let w_star: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();

    let bias_idx = (d - 1) as u32;
    let mut rows = Vec::with_capacity(features.n());
    let mut labels = Vec::with_capacity(features.n());
    for i in 0..features.n() {
        let (idx, val) = features.row(i);
        let mut row: Vec<(u32, f64)> = idx.iter().copied().zip(val.iter().copied()).collect();
        row.push((bias_idx, 1.0));
        let y: f64 = row.iter().map(|&(j, v)| v * w_star[j as usize]).sum();
        rows.push(row);
        labels.push(y);
    }
    let mut out = Dataset::new(rows, labels, d)?;
    out.ground_truth = Some(w_star);
    Ok(out)
}

/// Dense Gaussian features with per-coordinate standard deviations
/// `sqrt(spectrum[j])` and interpolating regression labels from a random
/// parameter vector (no bias). Controls the condition numbers of the induced
/// quadratic through `spectrum`.
pub fn gen_gaussian_quadratic(n: usize, d: usize, spectrum: &[f64], seed: u64) -> Result<Dataset> {
    if spectrum.len() != d {
        return Err(Error::InvalidInput(format!(
            "spectrum has {} entries for dimension {d}",
            spectrum.len()
        )));
    }
    if let Some(bad) = spectrum.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "non-positive spectrum entry {bad}"
        )));
    }
    if n < d {
        return Err(Error::InvalidInput(format!(
            "need n >= d, got n={n}, d={d}"
        )));
    }
    let sd: Vec<f64> = spectrum.iter().map(|s| s.sqrt()).collect();

    let mut rng = stream(seed, StreamKind::GroundTruth, 0, 0);
    let w_star: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(seed, StreamKind::Features, 0, i as u64);
        let row: Vec<(u32, f64)> = (0..d)
            .map(|j| (j as u32, sd[j] * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let y: f64 = row.iter().map(|&(j, v)| v * w_star[j as usize]).sum();
        rows.push(row);
        labels.push(y);
    }
    let mut out = Dataset::new(rows, labels, d)?;
    out.ground_truth = Some(w_star);
    Ok(out)
}

/// The paired-centers dataset on which local FedAvg updates cancel exactly.
///
/// Device `k` holds `n_per_device` copies of a one-dimensional sample
/// `(x, z) = (sqrt(2), sqrt(2) * c_k)` with centers
/// `c_0 = +radius, c_1 = -radius, c_2 = +radius, ...`, so the least-squares
/// local objective is `(w - c_k)^2`, the global objective is minimized at
/// `w* = 0` with value `radius^2`, and the weighted center sum is exactly
/// zero. Starting full-batch deterministic local GD from zero keeps the
/// weighted average of device iterates at exactly zero forever, while the
/// devices themselves drift apart between communications.
pub fn gen_counterexample(
    n_devices: usize,
    n_per_device: usize,
    radius: f64,
) -> Result<(Dataset, DevicePartition)> {
    if n_devices == 0 || !n_devices.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "device count must be even, got {n_devices}"
        )));
    }
    if n_per_device == 0 {
        return Err(Error::InvalidInput(
            "need at least one sample per device".into(),
        ));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let x = 2f64.sqrt();
    let mut rows = Vec::with_capacity(n_devices * n_per_device);
    let mut labels = Vec::with_capacity(n_devices * n_per_device);
    for k in 0..n_devices {
        let center = if k % 2 == 0 { radius } else { -radius };
        for _ in 0..n_per_device {
            rows.push(vec![(0u32, x)]);
            labels.push(x * center);
        }
    }
    let ds = Dataset::new(rows, labels, 1)?;
    let part = partition_even(&ds, n_devices)?;
    Ok((ds, part))
}

/// Convenience for passing datasets and partitions around threads.
pub type SharedDataset = Arc<Dataset>;
