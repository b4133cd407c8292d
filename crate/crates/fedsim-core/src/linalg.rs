//! Small dense-vector helpers shared by the objective and simulator code.
//!
//! Parameter vectors are plain `Vec<f64>`; dimensions here are a few hundred
//! at most, so simple loops beat pulling in a full linear-algebra stack for
//! the hot path. The spectral module uses nalgebra where eigendecompositions
//! are actually needed.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y += s * x
#[inline]
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

#[inline]
pub fn scale(y: &mut [f64], s: f64) {
    for yi in y.iter_mut() {
        *yi *= s;
    }
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Largest absolute componentwise difference.
#[inline]
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Weighted average of rows: out = sum_k weights[k] * rows[k].
pub fn weighted_mean(rows: &[&[f64]], weights: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (row, &w) in rows.iter().zip(weights) {
        axpy(&mut out, w, row);
    }
    out
}
