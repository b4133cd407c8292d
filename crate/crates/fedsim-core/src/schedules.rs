//! Step-size and momentum schedules.
//!
//! Each constructor below mirrors one schedule used by the convergence
//! analysis or the experiment protocol. The analysis pins only the *form* of
//! the constant step sizes, so those constructors take an explicit prefactor
//! `c` with documented defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default prefactor for the general (smooth strongly convex) constant step.
pub const OVERPARAM_GENERAL_C: f64 = 0.5;
/// Default prefactor for the quadratic (linear regression) constant step.
pub const OVERPARAM_QUADRATIC_C: f64 = 0.25;

/// Decaying step for strongly convex FedAvg:
/// `alpha_t = 1 / (4 mu (gamma + t))` with `gamma = max(32 kappa, E)`.
///
/// The offset keeps `alpha_t <= 2 alpha_{t+E}` for every `t`, which is what
/// the drift bound needs from a nonincreasing schedule.
pub fn scvx_decay(mu: f64, kappa: f64, e_local: u64, t: u64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidSchedule(format!(
            "mu must be positive, got {mu}"
        )));
    }
    if !(kappa >= 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "kappa must be >= 1, got {kappa}"
        )));
    }
    if e_local == 0 {
        return Err(Error::InvalidSchedule("E must be >= 1".into()));
    }
    let gamma = (32.0 * kappa).max(e_local as f64);
    Ok(1.0 / (4.0 * mu * (gamma + t as f64)))
}

/// Decaying pair for Nesterov FedAvg on strongly convex objectives:
/// `alpha_t = (6/mu) / (t + gamma)` and
/// `beta_{t-1} = 3 / (14 (t+gamma) (1 - 6/(t+gamma)) max(mu, 1))`,
/// `gamma = max(32 kappa, E)`.
///
/// The `max(mu, 1)` factor is dimensionally odd for `mu != 1` but is applied
/// verbatim; it is what the analysis states.
pub fn nesterov_scvx(mu: f64, kappa: f64, e_local: u64, t: u64) -> Result<(f64, f64)> {
    if !(mu > 0.0) {
        return Err(Error::InvalidSchedule(format!(
            "mu must be positive, got {mu}"
        )));
    }
    let gamma = (32.0 * kappa).max(e_local as f64);
    let tg = t as f64 + gamma;
    if tg <= 6.0 {
        return Err(Error::InvalidSchedule(format!("t + gamma = {tg} <= 6")));
    }
    let alpha = 6.0 / mu / tg;
    let beta = 3.0 / (14.0 * tg * (1.0 - 6.0 / tg) * mu.max(1.0));
    Ok((alpha, beta))
}

/// Constant `alpha = c sqrt(scale / T)` for the convex-smooth horizon-`T`
/// results (`scale` is `N` with full participation, `K` with partial),
/// clamped to `1/(4 L)` as the analysis requires.
pub fn const_sqrt(scale: f64, horizon: u64, c: f64, l_smooth: f64) -> Result<f64> {
    if !(scale >= 1.0) || horizon == 0 {
        return Err(Error::InvalidSchedule(format!(
            "need scale >= 1 and T >= 1, got scale={scale}, T={horizon}"
        )));
    }
    if (horizon as f64) < scale {
        return Err(Error::InvalidSchedule(format!(
            "need T >= scale, got T={horizon} < {scale}"
        )));
    }
    let raw = c * (scale / horizon as f64).sqrt();
    let cap = 1.0 / (4.0 * l_smooth);
    if raw > cap {
        log::warn!("const_sqrt step {raw:e} exceeds 1/(4L) = {cap:e}; clamping");
        Ok(cap)
    } else {
        Ok(raw)
    }
}

/// Constant step for overparameterized FedAvg:
/// `alpha = (c/E) N / (l nu_max + m (N - nu_min))` where `m` is `L` for
/// general smooth losses (default `c = 1/2`) and `mu` for quadratics
/// (default `c = 1/4`).
pub fn overparam_const(
    e_local: u64,
    n_devices: usize,
    l: f64,
    l_or_mu: f64,
    nu_max: f64,
    nu_min: f64,
    c: f64,
) -> Result<f64> {
    if e_local == 0 || n_devices == 0 {
        return Err(Error::InvalidSchedule("need E >= 1 and N >= 1".into()));
    }
    if !(l > 0.0 && l_or_mu >= 0.0 && nu_max > 0.0 && nu_min > 0.0) {
        return Err(Error::InvalidSchedule(
            "curvature constants must be positive".into(),
        ));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "prefactor must be in (0,1], got {c}"
        )));
    }
    let n = n_devices as f64;
    Ok(c / e_local as f64 * n / (l * nu_max + l_or_mu * (n - nu_min)))
}

/// Constant MaSS triple for overparameterized linear regression:
/// `eta1` as in [`overparam_const`] (quadratic form, `m = mu`),
/// `eta2 = eta1 (1 - 1/kt) / (1 + 1/sqrt(k1 kt))`, and
/// `gamma = (1 - 1/sqrt(k1 kt)) / (1 + 1/sqrt(k1 kt))`.
///
/// `kappa1 = kappa_tilde = 1` collapses the triple to plain averaged SGD
/// steps (`eta2 = 0`, `gamma = 0`).
#[allow(clippy::too_many_arguments)]
pub fn mass_const(
    e_local: u64,
    n_devices: usize,
    l: f64,
    mu: f64,
    nu_max: f64,
    nu_min: f64,
    kappa1: f64,
    kappa_tilde: f64,
    c: f64,
) -> Result<(f64, f64, f64)> {
    if !(kappa1 >= 1.0) || !(kappa_tilde >= 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "condition numbers must be >= 1, got kappa1={kappa1}, kappa_tilde={kappa_tilde}"
        )));
    }
    let eta1 = overparam_const(e_local, n_devices, l, mu, nu_max, nu_min, c)?;
    let root = (kappa1 * kappa_tilde).sqrt();
    let denom = 1.0 + 1.0 / root;
    let eta2 = eta1 * (1.0 - 1.0 / kappa_tilde) / denom;
    let gamma = (1.0 - 1.0 / root) / denom;
    Ok((eta1, eta2, gamma))
}

/// Map a MaSS step triple to the equivalent three-sequence parameters
/// `(alpha, delta, eta)`: `alpha = (1-gamma)/(1+gamma)`, `eta = eta1`,
/// `delta = (eta - eta2 (1 + alpha)) / alpha`. With `eta2 = 0` this yields
/// `delta = eta / alpha`, the Nesterov specialization.
pub fn mass_to_three_sequence(eta1: f64, eta2: f64, gamma: f64) -> Result<(f64, f64, f64)> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidSchedule(format!(
            "gamma must be in [0,1), got {gamma}"
        )));
    }
    let alpha = (1.0 - gamma) / (1.0 + gamma);
    let eta = eta1;
    let delta = (eta - eta2 * (1.0 + alpha)) / alpha;
    Ok((alpha, delta, eta))
}

/// Inverse of [`mass_to_three_sequence`].
pub fn three_sequence_to_mass(alpha: f64, delta: f64, eta: f64) -> Result<(f64, f64, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "alpha must be in (0,1], got {alpha}"
        )));
    }
    let gamma = (1.0 - alpha) / (1.0 + alpha);
    let eta2 = (eta - alpha * delta) / (1.0 + alpha);
    Ok((eta, eta2, gamma))
}

/// The experiment-protocol decay `eta_t = min(eta0, n c / (1 + t))`.
pub fn experiment_decay(eta0: f64, n_samples: usize, c: f64, t: u64) -> Result<f64> {
    if !(eta0 > 0.0 && c > 0.0) || n_samples == 0 {
        return Err(Error::InvalidSchedule(
            "eta0, n and c must be positive".into(),
        ));
    }
    Ok(eta0.min(n_samples as f64 * c / (1.0 + t as f64)))
}

/// Learning-rate grid for the experiment protocol: every `eta0` crossed with
/// `{c0/4, c0/2, c0, 2 c0, 4 c0}`.
pub fn lr_grid(eta0s: &[f64], c0: f64) -> Vec<(f64, f64)> {
    let mut cells = Vec::new();
    for &eta0 in eta0s {
        for i in -2i32..=2 {
            cells.push((eta0, c0 * 2f64.powi(i)));
        }
    }
    cells
}

/// Per-step step sizes handed to the local update rules. Fields irrelevant
/// to the active rule are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepSizes {
    pub alpha: f64,
    pub beta: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma: f64,
}

/// A named schedule: a pure function from the step index to step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `1/(4 mu (gamma + t))` decay for strongly convex FedAvg.
    ScvxDecay { mu: f64, kappa: f64, e_local: u64 },
    /// Decaying `(alpha_t, beta_{t-1})` pair for Nesterov FedAvg.
    NesterovScvxDecay { mu: f64, kappa: f64, e_local: u64 },
    /// Constant `c sqrt(scale/T)`, clamped to `1/(4L)`; `beta = alpha` when
    /// driven with the Nesterov rule.
    ConstSqrt {
        scale: f64,
        horizon: u64,
        c: f64,
        l_smooth: f64,
    },
    /// Constant overparameterized step.
    OverparamConst {
        e_local: u64,
        n_devices: usize,
        l: f64,
        l_or_mu: f64,
        nu_max: f64,
        nu_min: f64,
        c: f64,
    },
    /// Constant MaSS triple for overparameterized regression.
    MassConst {
        e_local: u64,
        n_devices: usize,
        l: f64,
        mu: f64,
        nu_max: f64,
        nu_min: f64,
        kappa1: f64,
        kappa_tilde: f64,
        c: f64,
    },
    /// Experiment-protocol decay `min(eta0, n c/(1+t))`; `beta` is the fixed
    /// momentum used when driven with the Nesterov rule.
    ExperimentDecay {
        eta0: f64,
        n_samples: usize,
        c: f64,
        #[serde(default)]
        beta: f64,
    },
    /// Explicit constants, mostly for tests and degeneracy checks.
    Fixed {
        #[serde(default)]
        alpha: f64,
        #[serde(default)]
        beta: f64,
        #[serde(default)]
        eta1: f64,
        #[serde(default)]
        eta2: f64,
        #[serde(default)]
        gamma: f64,
    },
}

impl Schedule {
    /// Step sizes for local step `t`.
    pub fn at(&self, t: u64) -> Result<StepSizes> {
        let mut s = StepSizes::default();
        match *self {
            Schedule::ScvxDecay { mu, kappa, e_local } => {
                s.alpha = scvx_decay(mu, kappa, e_local, t)?;
            }
            Schedule::NesterovScvxDecay { mu, kappa, e_local } => {
                let (alpha, beta) = nesterov_scvx(mu, kappa, e_local, t)?;
                s.alpha = alpha;
                s.beta = beta;
            }
            Schedule::ConstSqrt {
                scale,
                horizon,
                c,
                l_smooth,
            } => {
                s.alpha = const_sqrt(scale, horizon, c, l_smooth)?;
                s.beta = s.alpha;
            }
            Schedule::OverparamConst {
                e_local,
                n_devices,
                l,
                l_or_mu,
                nu_max,
                nu_min,
                c,
            } => {
                s.alpha = overparam_const(e_local, n_devices, l, l_or_mu, nu_max, nu_min, c)?;
            }
            Schedule::MassConst {
                e_local,
                n_devices,
                l,
                mu,
                nu_max,
                nu_min,
                kappa1,
                kappa_tilde,
                c,
            } => {
                let (eta1, eta2, gamma) = mass_const(
                    e_local,
                    n_devices,
                    l,
                    mu,
                    nu_max,
                    nu_min,
                    kappa1,
                    kappa_tilde,
                    c,
                )?;
                s.eta1 = eta1;
                s.eta2 = eta2;
                s.gamma = gamma;
            }
            Schedule::ExperimentDecay {
                eta0,
                n_samples,
                c,
                beta,
            } => {
                s.alpha = experiment_decay(eta0, n_samples, c, t)?;
                s.beta = beta;
            }
            Schedule::Fixed {
                alpha,
                beta,
                eta1,
                eta2,
                gamma,
            } => {
                s = StepSizes {
                    alpha,
                    beta,
                    eta1,
                    eta2,
                    gamma,
                };
            }
        }
        Ok(s)
    }
}
