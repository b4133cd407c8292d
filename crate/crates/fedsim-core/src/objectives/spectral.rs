//! Curvature and condition-number estimation.
//!
//! For least squares the relevant operators are the local second-moment
//! matrices `H^k = 1/n_k sum_j x_j x_j'` and their weighted sum
//! `H = sum_k p_k H^k`. `H` is typically singular in the overparameterized
//! regime, so every eigen-quantity below is taken on the range of the matrix
//! in question: eigenvalues under `1e-10 * lambda_max` count as zero, and
//! generalized eigenproblems `A v = lambda H v` are solved after projecting
//! onto the positive eigenspace of `H`.
//!
//! Three condition numbers come out of this: `kappa = L / mu`,
//! `kappa1 = l / mu` with `l` the tightest constant satisfying
//! `E ||xi||^2 xi xi' <= l H^k` on every device, and the statistical
//! condition number `kappa_tilde`, the tightest constant with
//! `E sum_k p_k H~ H^+ H~ <= kappa_tilde H` for the rank-one stochastic
//! Hessians `H~ = xi xi'`. For logistic losses the same feature-space
//! quantities are reported (the quadratic surrogate), while `L` and `mu` come
//! from the logistic curvature bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{measure_bounds, LossKind, Objective};
use crate::error::{Error, Result};

/// Relative eigenvalue cutoff below which the spectrum counts as zero.
const RANK_TOL: f64 = 1e-10;

/// Measured curvature constants and condition numbers of an objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Smoothness bound for the device objectives.
    #[serde(rename = "L")]
    pub l_smooth: f64,
    /// Strong-convexity constant (least-squares: smallest nonzero eigenvalue
    /// of `H`; regularized logistic: the regularization weight).
    pub mu: f64,
    /// Tight per-sample smoothness constant (see module docs).
    pub l: f64,
    /// The loose variant `max ||x||^2`, always an upper bound for `l`.
    pub l_loose: f64,
    /// Smallest nonzero eigenvalue of `H`.
    pub lambda_min_pos: f64,
    /// Largest eigenvalue of `H`.
    pub lambda_max: f64,
    /// `L / mu`.
    pub kappa: f64,
    /// `l / lambda_min_pos`.
    pub kappa1: f64,
    /// Statistical condition number, clamped below at 1.
    pub kappa_tilde: f64,
    /// `N * max_k p_k`.
    pub nu_max: f64,
    /// `N * min_k p_k`.
    pub nu_min: f64,
    /// Measured bound on `E ||g||^2` (single-sample gradients at the probes).
    pub g_hat_sq: f64,
    /// Measured variance bound `sum_k p_k sigma_k^2`.
    pub sigma_hat_sq: f64,
}

/// `H^k` for device `k`.
pub fn local_hessian(obj: &Objective, k: usize) -> DMatrix<f64> {
    let d = obj.dim();
    let data = obj.data();
    let shard = obj.partition().shard(k);
    let mut h = DMatrix::zeros(d, d);
    let scale = 1.0 / shard.len() as f64;
    for &i in shard {
        let (idx, val) = data.row(i as usize);
        for (&a, &va) in idx.iter().zip(val) {
            for (&b, &vb) in idx.iter().zip(val) {
                h[(a as usize, b as usize)] += scale * va * vb;
            }
        }
    }
    h
}

/// `H = sum_k p_k H^k`.
pub fn global_hessian(obj: &Objective) -> DMatrix<f64> {
    let d = obj.dim();
    let part = obj.partition();
    let mut h = DMatrix::zeros(d, d);
    for k in 0..part.n_devices() {
        h += local_hessian(obj, k) * part.weight(k);
    }
    h
}

/// Eigendecomposition of a symmetric PSD matrix restricted to its range:
/// orthonormal basis `q` of the positive eigenspace with eigenvalues `lam`.
struct RangeEig {
    q: DMatrix<f64>,
    lam: DVector<f64>,
    lambda_max: f64,
}

fn range_eig(m: &DMatrix<f64>) -> RangeEig {
    let eig = m.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let cutoff = RANK_TOL * lambda_max;
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > cutoff && eig.eigenvalues[i] > 0.0)
        .collect();
    if keep.is_empty() {
        return RangeEig {
            q: DMatrix::zeros(m.nrows(), 0),
            lam: DVector::zeros(0),
            lambda_max,
        };
    }
    let q = DMatrix::from_columns(
        &keep
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    let lam = DVector::from_iterator(keep.len(), keep.iter().map(|&i| eig.eigenvalues[i]));
    RangeEig { q, lam, lambda_max }
}

/// Largest generalized eigenvalue of `A v = lambda B v` restricted to the
/// range of `B`: the tightest `c` with `A <= c B` there.
fn generalized_max(a: &DMatrix<f64>, b_eig: &RangeEig) -> f64 {
    if b_eig.lam.is_empty() {
        return 0.0;
    }
    // P = Q Lambda^{-1/2}; the problem becomes a plain symmetric one for P'AP.
    let mut p = b_eig.q.clone();
    for (j, mut col) in p.column_iter_mut().enumerate() {
        col /= b_eig.lam[j].sqrt();
    }
    let m = p.transpose() * a * &p;
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::MIN, |acc, &v| acc.max(v))
}

/// Smallest eigenvalue of `c*B - A` projected onto the range of `B`; the
/// semidefinite-ordering residual asserted by the property tests.
pub fn psd_residual_min(c: f64, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let b_eig = range_eig(b);
    if b_eig.lam.is_empty() {
        return 0.0;
    }
    let diff = b * c - a;
    let m = b_eig.q.transpose() * diff * &b_eig.q;
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::MAX, |acc, &v| acc.min(v))
}

/// `E ||xi||^2 xi xi'` for device `k`.
pub fn second_moment_matrix(obj: &Objective, k: usize) -> DMatrix<f64> {
    let d = obj.dim();
    let data = obj.data();
    let shard = obj.partition().shard(k);
    let mut a = DMatrix::zeros(d, d);
    let scale = 1.0 / shard.len() as f64;
    for &i in shard {
        let i = i as usize;
        let w = scale * data.row_norm_sq(i);
        let (idx, val) = data.row(i);
        for (&r, &vr) in idx.iter().zip(val) {
            for (&c, &vc) in idx.iter().zip(val) {
                a[(r as usize, c as usize)] += w * vr * vc;
            }
        }
    }
    a
}

/// `E sum_k p_k H~ H^+ H~ = sum_k p_k/n_k sum_j (x_j' H^+ x_j) x_j x_j'`,
/// with the pseudo-inverse taken on the range of `H`.
pub fn statistical_moment_matrix(obj: &Objective) -> DMatrix<f64> {
    statistical_moment(obj, &range_eig(&global_hessian(obj)))
}

fn statistical_moment(obj: &Objective, h_eig: &RangeEig) -> DMatrix<f64> {
    let d = obj.dim();
    let data = obj.data();
    let part = obj.partition();
    let mut m = DMatrix::zeros(d, d);
    for k in 0..part.n_devices() {
        let shard = part.shard(k);
        let scale = part.weight(k) / shard.len() as f64;
        for &i in shard {
            let i = i as usize;
            let (idx, val) = data.row(i);
            // x' H^+ x through the range basis: sum_r (q_r' x)^2 / lam_r
            let mut quad = 0.0;
            for r in 0..h_eig.lam.len() {
                let qr = h_eig.q.column(r);
                let proj: f64 = idx.iter().zip(val).map(|(&j, &v)| v * qr[j as usize]).sum();
                quad += proj * proj / h_eig.lam[r];
            }
            let w = scale * quad;
            for (&r, &vr) in idx.iter().zip(val) {
                for (&c, &vc) in idx.iter().zip(val) {
                    m[(r as usize, c as usize)] += w * vr * vc;
                }
            }
        }
    }
    m
}

/// Compute the full spectral report for an objective.
///
/// The measured `G_hat^2`/`sigma_hat^2` entries use 1000 single-sample draws
/// per device at the origin; callers with trajectory iterates at hand should
/// prefer [`measure_bounds`] directly for those.
pub fn spectral_report(obj: &Objective) -> Result<SpectralReport> {
    let part = obj.partition();
    let n_devices = part.n_devices();

    let locals: Vec<DMatrix<f64>> = (0..n_devices).map(|k| local_hessian(obj, k)).collect();
    let mut h = DMatrix::zeros(obj.dim(), obj.dim());
    for (k, hk) in locals.iter().enumerate() {
        h += hk * part.weight(k);
    }
    let h_eig = range_eig(&h);
    if h_eig.lam.is_empty() {
        return Err(Error::DegenerateSpectrum(
            "all data-matrix eigenvalues are zero".into(),
        ));
    }
    let lambda_max = h_eig.lambda_max;
    let lambda_min_pos = h_eig.lam.iter().fold(f64::MAX, |a, &b| a.min(b));

    // l = max_k of the tightest constant with E||xi||^2 xi xi' <= l H^k
    let mut l = 0.0f64;
    for (k, hk) in locals.iter().enumerate() {
        let a = second_moment_matrix(obj, k);
        let hk_eig = range_eig(hk);
        l = l.max(generalized_max(&a, &hk_eig));
    }
    let mut l_loose = 0.0f64;
    for i in 0..obj.data().n() {
        l_loose = l_loose.max(obj.data().row_norm_sq(i));
    }

    let kappa_tilde_raw = generalized_max(&statistical_moment(obj, &h_eig), &h_eig);
    let kappa_tilde = if kappa_tilde_raw < 1.0 {
        log::warn!("computed kappa_tilde = {kappa_tilde_raw} < 1; clamping to 1 (numerical noise)");
        1.0
    } else {
        kappa_tilde_raw
    };

    let local_lambda_max = locals
        .iter()
        .map(|hk| range_eig(hk).lambda_max)
        .fold(0.0f64, f64::max);
    let (l_smooth, mu) = match obj.kind() {
        LossKind::LeastSquares => (local_lambda_max, lambda_min_pos),
        // Per-sample logistic Hessians are bounded by x x'/4; the quadratic
        // surrogate at the origin attains that bound exactly.
        LossKind::RegLogistic { lambda } => (lambda + local_lambda_max / 4.0, lambda),
        LossKind::Logistic => (local_lambda_max / 4.0, lambda_min_pos / 4.0),
    };

    let (nu_max, nu_min) = part.nu_max_min();
    let probes = vec![vec![0.0; obj.dim()]];
    let (g_hat_sq, sigma_hat_sq) = measure_bounds(obj, 1000, &probes, 0)?;

    Ok(SpectralReport {
        l_smooth,
        mu,
        l,
        l_loose,
        lambda_min_pos,
        lambda_max,
        kappa: l_smooth / mu,
        kappa1: l / lambda_min_pos,
        kappa_tilde,
        nu_max,
        nu_min,
        g_hat_sq,
        sigma_hat_sq,
    })
}
