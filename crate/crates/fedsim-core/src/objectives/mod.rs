//! Global and per-device objectives, their gradients, and measured
//! gradient-norm/variance bounds.
//!
//! The global objective is `F(w) = sum_k p_k F_k(w)` where device `k` averages
//! a per-sample loss over its shard. Three losses are supported: binary
//! logistic regression with and without an L2 term, and least squares
//! (`F_k(w) = 1/(2 n_k) sum_j (w^T x_j - z_j)^2`).

mod spectral;

pub use spectral::{
    global_hessian, local_hessian, psd_residual_min, second_moment_matrix, spectral_report,
    statistical_moment_matrix, SpectralReport,
};

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::dataio::{Dataset, DevicePartition};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{stream, StreamKind};

/// Loss family of an objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `1/n_k sum log(1+exp(-y w'x)) + lambda/2 ||w||^2` per device.
    RegLogistic { lambda: f64 },
    /// Unregularized binary logistic regression.
    Logistic,
    /// `1/(2 n_k) sum (w'x - z)^2` per device.
    LeastSquares,
}

impl LossKind {
    pub fn lambda(&self) -> f64 {
        match self {
            LossKind::RegLogistic { lambda } => *lambda,
            _ => 0.0,
        }
    }
}

/// A dataset, a device partition, and a loss: everything needed to evaluate
/// `F`, the `F_k`, and their exact or stochastic gradients. Immutable and
/// cheap to clone (the dataset is shared).
#[derive(Debug, Clone)]
pub struct Objective {
    kind: LossKind,
    data: Arc<Dataset>,
    part: Arc<DevicePartition>,
    /// p_k / n_k for the device owning each sample; lets whole-objective
    /// evaluations run as one flat weighted pass over the samples.
    sample_weight: Arc<Vec<f64>>,
}

/// Samples per parallel evaluation chunk. Chunks are summed sequentially and
/// merged in chunk order, so results do not depend on the thread count.
const EVAL_CHUNK: usize = 4096;

impl Objective {
    pub fn new(kind: LossKind, data: Arc<Dataset>, part: Arc<DevicePartition>) -> Self {
        let mut sample_weight = vec![0.0; data.n()];
        for k in 0..part.n_devices() {
            let w = part.weight(k) / part.shard(k).len() as f64;
            for &i in part.shard(k) {
                sample_weight[i as usize] = w;
            }
        }
        Self {
            kind,
            data,
            part,
            sample_weight: Arc::new(sample_weight),
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn partition(&self) -> &Arc<DevicePartition> {
        &self.part
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn n_devices(&self) -> usize {
        self.part.n_devices()
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.data.dim() {
            return Err(Error::Shape {
                expected: self.data.dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    fn sample_loss(&self, i: usize, w: &[f64]) -> f64 {
        let z = self.data.dot_row(i, w);
        let y = self.data.label(i);
        match self.kind {
            LossKind::RegLogistic { .. } | LossKind::Logistic => {
                // log(1 + exp(-m)) evaluated stably on both tails
                let m = y * z;
                if m >= 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            }
            LossKind::LeastSquares => 0.5 * (z - y) * (z - y),
        }
    }

    /// d(loss)/dz for sample `i` at inner product `z`; the per-sample gradient
    /// is this scalar times the feature vector.
    fn sample_grad_coeff(&self, i: usize, z: f64) -> f64 {
        let y = self.data.label(i);
        match self.kind {
            LossKind::RegLogistic { .. } | LossKind::Logistic => {
                // -y * sigmoid(-y z); exp saturates to the correct limits
                let m = y * z;
                -y / (1.0 + m.exp())
            }
            LossKind::LeastSquares => z - y,
        }
    }

    /// Global objective `F(w) = sum_k p_k F_k(w)`.
    pub fn value(&self, w: &[f64]) -> Result<f64> {
        self.check_dim(w)?;
        let n = self.data.n();
        let data_term: f64 = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&i| self.sample_weight[i] * self.sample_loss(i, w))
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .sum();
        Ok(data_term + 0.5 * self.kind.lambda() * linalg::norm_sq(w))
    }

    /// Local objective `F_k(w)`.
    pub fn value_device(&self, k: usize, w: &[f64]) -> Result<f64> {
        self.check_dim(w)?;
        let shard = self.part.shard(k);
        let mean: f64 = shard
            .iter()
            .map(|&i| self.sample_loss(i as usize, w))
            .sum::<f64>()
            / shard.len() as f64;
        Ok(mean + 0.5 * self.kind.lambda() * linalg::norm_sq(w))
    }

    /// Exact local gradient `grad F_k(w)`.
    pub fn grad_full(&self, k: usize, w: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(w)?;
        let shard = self.part.shard(k);
        let mut g = vec![0.0; w.len()];
        for &i in shard {
            let i = i as usize;
            let z = self.data.dot_row(i, w);
            self.data.add_row(i, self.sample_grad_coeff(i, z), &mut g);
        }
        linalg::scale(&mut g, 1.0 / shard.len() as f64);
        linalg::axpy(&mut g, self.kind.lambda(), w);
        Ok(g)
    }

    /// Exact global gradient `grad F(w) = sum_k p_k grad F_k(w)`.
    pub fn grad_global(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(w)?;
        let n = self.data.n();
        let chunks: Vec<Vec<f64>> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; w.len()];
                for &i in chunk {
                    let z = self.data.dot_row(i, w);
                    self.data.add_row(
                        i,
                        self.sample_weight[i] * self.sample_grad_coeff(i, z),
                        &mut g,
                    );
                }
                g
            })
            .collect();
        let mut g = vec![0.0; w.len()];
        for c in chunks {
            linalg::axpy(&mut g, 1.0, &c);
        }
        linalg::axpy(&mut g, self.kind.lambda(), w);
        Ok(g)
    }

    /// `F(w)` and `grad F(w)` in one pass over the data; the per-sample inner
    /// products are shared between the two, which matters when a simulator
    /// records both at every evaluation point.
    pub fn loss_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(w)?;
        let n = self.data.n();
        let chunks: Vec<(f64, Vec<f64>)> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut g = vec![0.0; w.len()];
                for &i in chunk {
                    let z = self.data.dot_row(i, w);
                    let y = self.data.label(i);
                    let sw = self.sample_weight[i];
                    match self.kind {
                        LossKind::RegLogistic { .. } | LossKind::Logistic => {
                            let m = y * z;
                            loss += sw
                                * if m >= 0.0 {
                                    (-m).exp().ln_1p()
                                } else {
                                    -m + m.exp().ln_1p()
                                };
                            self.data.add_row(i, sw * (-y / (1.0 + m.exp())), &mut g);
                        }
                        LossKind::LeastSquares => {
                            loss += sw * 0.5 * (z - y) * (z - y);
                            self.data.add_row(i, sw * (z - y), &mut g);
                        }
                    }
                }
                (loss, g)
            })
            .collect();
        let mut loss = 0.0;
        let mut g = vec![0.0; w.len()];
        for (l, c) in chunks {
            loss += l;
            linalg::axpy(&mut g, 1.0, &c);
        }
        let lambda = self.kind.lambda();
        loss += 0.5 * lambda * linalg::norm_sq(w);
        linalg::axpy(&mut g, lambda, w);
        Ok((loss, g))
    }

    /// Minibatch gradient: the mean per-sample gradient over `batch` plus the
    /// regularizer gradient. Unbiased for `grad_full` when the batch indices
    /// are drawn uniformly from shard `k`.
    pub fn grad_stochastic(&self, k: usize, w: &[f64], batch: &[u32]) -> Result<Vec<f64>> {
        self.check_dim(w)?;
        let shard = self.part.shard(k);
        for &i in batch {
            if shard.binary_search(&i).is_err() {
                return Err(Error::InvalidBatch {
                    index: i as usize,
                    device: k,
                });
            }
        }
        Ok(self.grad_batch_unchecked(w, batch))
    }

    /// Batch gradient without the shard membership check; the simulator draws
    /// batches from the shard directly so the check would be dead weight in
    /// the hot loop.
    pub(crate) fn grad_batch_unchecked(&self, w: &[f64], batch: &[u32]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        for &i in batch {
            let i = i as usize;
            let z = self.data.dot_row(i, w);
            self.data.add_row(i, self.sample_grad_coeff(i, z), &mut g);
        }
        linalg::scale(&mut g, 1.0 / batch.len() as f64);
        linalg::axpy(&mut g, self.kind.lambda(), w);
        g
    }
}

/// Empirical versions of the bounded-gradient and bounded-variance constants:
/// draws `sample_count` single-sample gradients per device at each probe
/// point and returns
/// `G_hat^2 = max over probes and devices of mean ||g||^2` and
/// `sigma_hat^2 = sum_k p_k sigma_hat_k^2` with `sigma_hat_k^2` the largest
/// per-probe deviation from the exact local gradient.
pub fn measure_bounds(
    obj: &Objective,
    sample_count: usize,
    probes: &[Vec<f64>],
    seed: u64,
) -> Result<(f64, f64)> {
    if sample_count == 0 {
        return Err(Error::InvalidInput("sample_count must be positive".into()));
    }
    let part = obj.partition().clone();
    let mut g_hat_sq = 0.0f64;
    let mut sigma_k_sq = vec![0.0f64; part.n_devices()];
    for (pi, w) in probes.iter().enumerate() {
        for (k, dev_var) in sigma_k_sq.iter_mut().enumerate() {
            let exact = obj.grad_full(k, w)?;
            let shard = part.shard(k);
            let mut rng = stream(seed, StreamKind::BoundProbe, k as u64, pi as u64);
            let mut mean_norm = 0.0;
            let mut mean_var = 0.0;
            for _ in 0..sample_count {
                let i = shard[rng.random_range(0..shard.len())];
                let g = obj.grad_batch_unchecked(w, &[i]);
                mean_norm += linalg::norm_sq(&g);
                mean_var += linalg::dist_sq(&g, &exact);
            }
            mean_norm /= sample_count as f64;
            mean_var /= sample_count as f64;
            g_hat_sq = g_hat_sq.max(mean_norm);
            *dev_var = dev_var.max(mean_var);
        }
    }
    let sigma_sq = sigma_k_sq
        .iter()
        .zip(part.weights())
        .map(|(s, p)| p * s)
        .sum();
    Ok((g_hat_sq, sigma_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{
        gen_gaussian_quadratic, gen_overparam_regression, parse_libsvm, partition_even,
    };
    use rand_distr::StandardNormal;

    fn toy_objective(kind: LossKind, n_devices: usize) -> Objective {
        let text = "+1 1:0.5 3:1\n-1 2:2\n+1 1:-1 2:0.5\n-1 3:0.25\n+1 1:0.1 2:0.1 3:0.1\n-1 1:2";
        let ds = Arc::new(parse_libsvm(text).unwrap());
        let part = Arc::new(partition_even(&ds, n_devices).unwrap());
        Objective::new(kind, ds, part)
    }

    #[test]
    fn logistic_value_at_zero_is_ln2() {
        let obj = toy_objective(LossKind::RegLogistic { lambda: 0.3 }, 2);
        let w = vec![0.0; obj.dim()];
        assert!((obj.value(&w).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn least_squares_vanishes_at_ground_truth() {
        let feats = toy_objective(LossKind::Logistic, 2);
        let ds = Arc::new(gen_overparam_regression(feats.data(), 9).unwrap());
        let part = Arc::new(partition_even(&ds, 3).unwrap());
        let obj = Objective::new(LossKind::LeastSquares, ds.clone(), part);
        let w = ds.ground_truth().unwrap().to_vec();
        assert_eq!(obj.value(&w).unwrap(), 0.0);
        for k in 0..3 {
            let g = obj.grad_full(k, &w).unwrap();
            assert!(linalg::norm_sq(&g) < 1e-28);
        }
    }

    #[test]
    fn value_rejects_wrong_dimension() {
        let obj = toy_objective(LossKind::Logistic, 2);
        assert!(matches!(obj.value(&[0.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            obj.grad_full(0, &[0.0; 17]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn device_gradients_average_to_global() {
        let obj = toy_objective(LossKind::RegLogistic { lambda: 0.05 }, 3);
        let w: Vec<f64> = (0..obj.dim()).map(|i| 0.3 * i as f64 - 0.2).collect();
        let mut avg = vec![0.0; obj.dim()];
        for k in 0..3 {
            let g = obj.grad_full(k, &w).unwrap();
            linalg::axpy(&mut avg, obj.partition().weight(k), &g);
        }
        let global = obj.grad_global(&w).unwrap();
        assert!(linalg::max_abs_diff(&avg, &global) < 1e-12);
    }

    // Central finite differences with h = 1e-6 * (1 + |w_i|) as the gradient
    // oracle; checked across all loss kinds and random probe points.
    #[test]
    fn gradients_match_finite_differences() {
        let kinds = [
            LossKind::RegLogistic { lambda: 0.1 },
            LossKind::Logistic,
            LossKind::LeastSquares,
        ];
        let mut rng = stream(123, StreamKind::BoundProbe, 99, 0);
        for trial in 0..30 {
            let kind = kinds[trial % kinds.len()];
            let obj = toy_objective(kind, 2);
            let w: Vec<f64> = (0..obj.dim())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            for k in 0..obj.n_devices() {
                let g = obj.grad_full(k, &w).unwrap();
                for i in 0..w.len() {
                    let h = 1e-6 * (1.0 + w[i].abs());
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[i] += h;
                    wm[i] -= h;
                    let fd = (obj.value_device(k, &wp).unwrap()
                        - obj.value_device(k, &wm).unwrap())
                        / (2.0 * h);
                    let denom = g[i].abs().max(fd.abs()).max(1e-8);
                    assert!(
                        (g[i] - fd).abs() / denom <= 1e-5,
                        "kind {kind:?} device {k} coord {i}: analytic {} vs fd {fd}",
                        g[i]
                    );
                }
            }
        }
    }

    #[test]
    fn fused_evaluation_matches_separate_paths() {
        for kind in [
            LossKind::RegLogistic { lambda: 0.07 },
            LossKind::LeastSquares,
        ] {
            let obj = toy_objective(kind, 3);
            let w: Vec<f64> = vec![0.3, -0.6, 0.9];
            let (loss, grad) = obj.loss_and_grad(&w).unwrap();
            assert_eq!(loss, obj.value(&w).unwrap());
            assert_eq!(grad, obj.grad_global(&w).unwrap());
        }
    }

    #[test]
    fn full_batch_equals_grad_full() {
        let obj = toy_objective(LossKind::RegLogistic { lambda: 0.2 }, 2);
        let w: Vec<f64> = vec![0.4, -0.3, 0.7];
        for k in 0..2 {
            let batch: Vec<u32> = obj.partition().shard(k).to_vec();
            let gs = obj.grad_stochastic(k, &w, &batch).unwrap();
            let gf = obj.grad_full(k, &w).unwrap();
            assert_eq!(gs, gf);
        }
    }

    #[test]
    fn out_of_shard_batch_is_rejected() {
        let obj = toy_objective(LossKind::Logistic, 2);
        let foreign = obj.partition().shard(1)[0];
        let err = obj
            .grad_stochastic(0, &vec![0.0; obj.dim()], &[foreign])
            .unwrap_err();
        assert!(matches!(err, Error::InvalidBatch { device: 0, .. }));
    }

    // Monte-Carlo oracle: the mean of single-sample gradients over uniform
    // draws approaches grad_full at the 4-sigma/sqrt(n) scale.
    #[test]
    fn stochastic_gradient_is_unbiased() {
        let obj = toy_objective(LossKind::RegLogistic { lambda: 0.1 }, 2);
        let w = vec![0.25, -0.5, 0.1];
        let draws = 100_000;
        for k in 0..2 {
            let exact = obj.grad_full(k, &w).unwrap();
            let shard = obj.partition().shard(k);
            let mut rng = stream(7, StreamKind::BoundProbe, k as u64, 0);
            let mut mean = vec![0.0; w.len()];
            let mut m2 = vec![0.0; w.len()];
            for _ in 0..draws {
                let i = shard[rng.random_range(0..shard.len())];
                let g = obj.grad_batch_unchecked(&w, &[i]);
                for j in 0..w.len() {
                    mean[j] += g[j];
                    m2[j] += g[j] * g[j];
                }
            }
            for j in 0..w.len() {
                mean[j] /= draws as f64;
                let var = (m2[j] / draws as f64 - mean[j] * mean[j]).max(0.0);
                let tol = 4.0 * var.sqrt() / (draws as f64).sqrt() + 1e-12;
                assert!(
                    (mean[j] - exact[j]).abs() <= tol,
                    "device {k} coord {j}: |{} - {}| > {tol}",
                    mean[j],
                    exact[j]
                );
            }
        }
    }

    // Single-sample least-squares gradient is the rank-one stochastic Hessian
    // applied to (w - w*).
    #[test]
    fn single_sample_ls_gradient_is_stochastic_hessian_action() {
        let ds = Arc::new(gen_gaussian_quadratic(8, 3, &[1.0, 1.0, 1.0], 21).unwrap());
        let part = Arc::new(partition_even(&ds, 2).unwrap());
        let obj = Objective::new(LossKind::LeastSquares, ds.clone(), part);
        let w_star = ds.ground_truth().unwrap().to_vec();
        let w = vec![0.3, -0.8, 1.5];
        for i in 0..4u32 {
            let g = obj.grad_stochastic(0, &w, &[i]).unwrap();
            // xi * <xi, w - w*>
            let mut diff = w.clone();
            for (d, s) in diff.iter_mut().zip(&w_star) {
                *d -= s;
            }
            let coeff = ds.dot_row(i as usize, &diff);
            let mut expect = vec![0.0; 3];
            ds.add_row(i as usize, coeff, &mut expect);
            assert!(linalg::max_abs_diff(&g, &expect) < 1e-12);
        }
    }

    #[test]
    fn measured_bounds_degenerate_cases() {
        // every per-sample least-squares gradient vanishes at the interpolant
        let ds = Arc::new(gen_gaussian_quadratic(8, 3, &[1.0; 3], 4).unwrap());
        let part = Arc::new(partition_even(&ds, 2).unwrap());
        let obj = Objective::new(LossKind::LeastSquares, ds.clone(), part);
        let w_star = ds.ground_truth().unwrap().to_vec();
        let (g2, s2) = measure_bounds(&obj, 200, &[w_star], 0).unwrap();
        assert_eq!(g2, 0.0);
        assert_eq!(s2, 0.0);

        // single-sample shards make the "stochastic" gradient deterministic
        let ds = Arc::new(parse_libsvm("+1 1:1\n-1 1:2").unwrap());
        let part = Arc::new(partition_even(&ds, 2).unwrap());
        let obj = Objective::new(LossKind::Logistic, ds, part);
        let (_, s2) = measure_bounds(&obj, 100, &[vec![0.4]], 0).unwrap();
        assert_eq!(s2, 0.0);
    }

    #[test]
    fn measured_bounds_are_reproducible() {
        let obj = toy_objective(LossKind::Logistic, 3);
        let probes = vec![vec![0.0; 3], vec![0.2, -0.1, 0.5]];
        let a = measure_bounds(&obj, 500, &probes, 42).unwrap();
        let b = measure_bounds(&obj, 500, &probes, 42).unwrap();
        assert_eq!(a, b);
    }
}
