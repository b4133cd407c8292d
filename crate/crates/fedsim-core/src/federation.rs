//! The federated optimization loop: local updates, periodic communication,
//! device sampling, aggregation, and diagnostics.
//!
//! All `N` devices take one local step per iteration `t`; whenever `t+1` is a
//! multiple of `E` the candidates are aggregated (over all devices or a
//! sampled subset) and the aggregate is broadcast back as every device's
//! parameter vector. Between communications the devices drift apart; the
//! recorded `drift` column tracks `sum_k p_k ||w_k - w_bar||^2`, taken at
//! communication steps *before* the broadcast (afterwards it is identically
//! zero).
//!
//! A run is sequential over `t` and deterministic: every batch is drawn from
//! a counter-based stream keyed by `(master_seed, device, t)`, so neither
//! evaluation parallelism nor early stopping can change any draw.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::Objective;
use crate::rng::{stream, StreamKind};
use crate::schedules::{Schedule, StepSizes};

/// Loss value past which a run is declared divergent. Grid searches probe
/// unstable step sizes on purpose, so this is an expected error path.
const DIVERGENCE_GUARD: f64 = 1e12;

/// Local update rule run on each device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Sgd,
    Nesterov,
    Mass,
}

impl UpdateRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateRule::Sgd => "sgd",
            UpdateRule::Nesterov => "nesterov",
            UpdateRule::Mass => "mass",
        }
    }
}

/// How the participant set of a communication round is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every device participates; aggregation is the p-weighted average.
    Full,
    /// Scheme I: K i.i.d. draws proportional to the weights, with
    /// replacement; aggregation is the plain mean over the multiset.
    WithReplacement,
    /// Scheme II: a uniform K-subset; aggregation is the (N/K)-scaled
    /// p-weighted sum over the subset.
    WithoutReplacement,
}

impl Sampling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sampling::Full => "full",
            Sampling::WithReplacement => "with_replacement",
            Sampling::WithoutReplacement => "without_replacement",
        }
    }
}

/// Full description of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationConfig {
    /// Device count `N`.
    pub n_devices: usize,
    /// Participants per communication round `K`; must equal `N` under full
    /// participation.
    pub k_active: usize,
    /// Local steps between communications `E`.
    pub local_steps: u64,
    /// Total local iterations `T`; a final partial window is allowed.
    pub total_steps: u64,
    /// Minibatch size per device per step; a batch at least as large as the
    /// shard degenerates to the deterministic full-batch gradient.
    pub batch_size: usize,
    pub rule: UpdateRule,
    pub sampling: Sampling,
    pub schedule: Schedule,
    pub master_seed: u64,
    /// Record the trajectory every this many steps (communication rounds and
    /// the final step are always recorded).
    pub eval_stride: u64,
    /// Store the averaged iterate at every communication round.
    #[serde(default)]
    pub record_iterates: bool,
    /// Evaluate the MaSS gradient at `w` instead of at the auxiliary iterate
    /// `u`. The accelerated analysis wants `u`; this exposes the literal
    /// reading of the update for comparison.
    #[serde(default)]
    pub mass_grad_at_w: bool,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 || self.k_active == 0 || self.k_active > self.n_devices {
            return Err(Error::InvalidInput(format!(
                "need 1 <= K <= N, got K={}, N={}",
                self.k_active, self.n_devices
            )));
        }
        if matches!(self.sampling, Sampling::Full) && self.k_active != self.n_devices {
            return Err(Error::InvalidInput(format!(
                "full participation requires K = N, got K={}, N={}",
                self.k_active, self.n_devices
            )));
        }
        if self.local_steps == 0 || self.total_steps == 0 || self.eval_stride == 0 {
            return Err(Error::InvalidInput(
                "E, T and eval_stride must be >= 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-device optimizer state. Fields unused by the active rule stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    /// Model parameters `w_t^k`.
    pub w: Vec<f64>,
    /// Previous auxiliary iterate `v_t^k` (Nesterov).
    pub v_prev: Option<Vec<f64>>,
    /// Auxiliary iterate `u_t^k` (MaSS).
    pub u: Option<Vec<f64>>,
    /// Previous parameters `w_{t-1}^k` (MaSS).
    pub w_prev: Option<Vec<f64>>,
}

impl DeviceState {
    fn fresh(rule: UpdateRule, w0: &[f64]) -> Self {
        let w = w0.to_vec();
        match rule {
            UpdateRule::Sgd => Self {
                w,
                v_prev: None,
                u: None,
                w_prev: None,
            },
            UpdateRule::Nesterov => Self {
                v_prev: Some(w.clone()),
                w,
                u: None,
                w_prev: None,
            },
            UpdateRule::Mass => Self {
                u: Some(w.clone()),
                w_prev: Some(w.clone()),
                w,
                v_prev: None,
            },
        }
    }
}

/// One SGD step: `w <- w - alpha g`.
pub fn local_step_sgd(state: &mut DeviceState, g: &[f64], alpha: f64) {
    linalg::axpy(&mut state.w, -alpha, g);
}

/// One Nesterov step:
/// `v_new = w - alpha g; w <- v_new + beta (v_new - v_prev); v_prev <- v_new`.
pub fn local_step_nesterov(state: &mut DeviceState, g: &[f64], alpha: f64, beta: f64) {
    let v_prev = state.v_prev.as_mut().expect("nesterov state initialized");
    let mut v_new = state.w.clone();
    linalg::axpy(&mut v_new, -alpha, g);
    for i in 0..state.w.len() {
        state.w[i] = v_new[i] + beta * (v_new[i] - v_prev[i]);
    }
    *v_prev = v_new;
}

/// One MaSS step, gradient evaluated at the auxiliary iterate `u`:
/// `w_new = u - eta1 g; u <- w_new + gamma (w_new - w) + eta2 g; w <- w_new`.
pub fn local_step_mass(state: &mut DeviceState, g: &[f64], eta1: f64, eta2: f64, gamma: f64) {
    let u = state.u.as_mut().expect("mass state initialized");
    let w_prev = state.w_prev.as_mut().expect("mass state initialized");
    for i in 0..state.w.len() {
        let w_old = state.w[i];
        let w_new = u[i] - eta1 * g[i];
        u[i] = w_new + gamma * (w_new - w_old) + eta2 * g[i];
        w_prev[i] = w_old;
        state.w[i] = w_new;
    }
}

/// Draw the participant set for a communication round. Scheme I returns a
/// size-K multiset drawn i.i.d. proportional to the weights; scheme II a
/// uniform K-subset in ascending order.
pub fn sample_devices(
    scheme: Sampling,
    k_active: usize,
    weights: &[f64],
    rng: &mut ChaCha12Rng,
) -> Result<Vec<usize>> {
    let n = weights.len();
    match scheme {
        Sampling::Full => Err(Error::InvalidInput(
            "full participation is not sampled".into(),
        )),
        Sampling::WithReplacement => {
            let mut cum = Vec::with_capacity(n);
            let mut acc = 0.0;
            for &p in weights {
                acc += p;
                cum.push(acc);
            }
            let total = acc;
            let picks = (0..k_active)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * total;
                    cum.partition_point(|&c| c <= u).min(n - 1)
                })
                .collect();
            Ok(picks)
        }
        Sampling::WithoutReplacement => {
            if k_active > n {
                return Err(Error::InvalidInput(format!("K={k_active} > N={n}")));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..k_active {
                let j = rng.random_range(i..n);
                idx.swap(i, j);
            }
            let mut picks = idx[..k_active].to_vec();
            picks.sort_unstable();
            Ok(picks)
        }
    }
}

/// Combine post-update candidates into the broadcast iterate. All three
/// normalizations make the sampled aggregate an unbiased estimate of the
/// full p-weighted average.
pub fn aggregate(
    scheme: Sampling,
    participants: &[usize],
    candidates: &[Vec<f64>],
    weights: &[f64],
    k_active: usize,
) -> Result<Vec<f64>> {
    if participants.is_empty() {
        return Err(Error::InvalidInput("empty participant set".into()));
    }
    let dim = candidates[0].len();
    let n = candidates.len();
    let mut out = vec![0.0; dim];
    match scheme {
        Sampling::Full => {
            for k in 0..n {
                linalg::axpy(&mut out, weights[k], &candidates[k]);
            }
        }
        Sampling::WithReplacement => {
            for &k in participants {
                linalg::axpy(&mut out, 1.0, &candidates[k]);
            }
            linalg::scale(&mut out, 1.0 / k_active as f64);
        }
        Sampling::WithoutReplacement => {
            for &k in participants {
                linalg::axpy(&mut out, weights[k], &candidates[k]);
            }
            linalg::scale(&mut out, n as f64 / k_active as f64);
        }
    }
    Ok(out)
}

/// Dispersion of device iterates around their weighted average:
/// `sum_k p_k ||w_k - w_bar||^2`.
///
/// Computed on deviations from the first iterate, which is algebraically the
/// same but keeps the result exactly zero when all devices coincide.
pub fn drift(iterates: &[Vec<f64>], weights: &[f64]) -> f64 {
    if iterates.is_empty() {
        return 0.0;
    }
    let dim = iterates[0].len();
    let devs: Vec<Vec<f64>> = iterates
        .iter()
        .map(|w| w.iter().zip(&iterates[0]).map(|(a, b)| a - b).collect())
        .collect();
    let refs: Vec<&[f64]> = devs.iter().map(|v| v.as_slice()).collect();
    let mean = linalg::weighted_mean(&refs, weights, dim);
    devs.iter()
        .zip(weights)
        .map(|(d, &p)| p * linalg::dist_sq(d, &mean))
        .sum()
}

/// One recorded evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajPoint {
    /// Local iteration index of the evaluated iterate.
    pub t: u64,
    /// `F(w_bar_t)`.
    pub loss: f64,
    /// Device dispersion (pre-broadcast at communication steps).
    pub drift: f64,
    /// `||grad F(w_bar_t)||`.
    pub grad_norm: f64,
    /// Communication rounds completed by step `t`.
    pub comm_round: u64,
}

/// The recorded output of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub points: Vec<TrajPoint>,
    /// `(t, w_bar_t)` at communication rounds, when recording is enabled.
    pub iterates: Vec<(u64, Vec<f64>)>,
}

impl Trajectory {
    pub fn final_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.loss)
    }

    /// CSV serialization with header `t,loss,drift,grad_norm,comm_round`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,loss,drift,grad_norm,comm_round\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.t, p.loss, p.drift, p.grad_norm, p.comm_round
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header.trim() != "t,loss,drift,grad_norm,comm_round" {
            return Err(Error::Parse {
                line: 1,
                msg: format!("bad header `{header}`"),
            });
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: "expected 5 columns".into(),
                });
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    msg: format!("bad number `{s}`"),
                })
            };
            points.push(TrajPoint {
                t: cols[0].parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    msg: "bad t".into(),
                })?,
                loss: parse_f(cols[1])?,
                drift: parse_f(cols[2])?,
                grad_norm: parse_f(cols[3])?,
                comm_round: cols[4].parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    msg: "bad comm_round".into(),
                })?,
            });
        }
        Ok(Self {
            points,
            iterates: Vec::new(),
        })
    }
}

/// Stop a run early once `loss - f_star <= epsilon` at a recorded point.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub f_star: f64,
    pub epsilon: f64,
}

/// Run the simulation; see [`run_detailed`] for the full-state variant.
pub fn run(config: &FederationConfig, objective: &Objective) -> Result<Trajectory> {
    run_detailed(config, objective, None).map(|(traj, _)| traj)
}

/// Run the simulation with an optional early-stop rule.
pub fn run_with_stop(
    config: &FederationConfig,
    objective: &Objective,
    stop: Option<StopRule>,
) -> Result<Trajectory> {
    run_detailed(config, objective, stop).map(|(traj, _)| traj)
}

/// Run the simulation and also return the final device states.
pub fn run_detailed(
    config: &FederationConfig,
    objective: &Objective,
    stop: Option<StopRule>,
) -> Result<(Trajectory, Vec<DeviceState>)> {
    config.validate()?;
    let part = objective.partition().clone();
    if part.n_devices() != config.n_devices {
        return Err(Error::InvalidInput(format!(
            "config has {} devices but the partition has {}",
            config.n_devices,
            part.n_devices()
        )));
    }
    let dim = objective.dim();
    let weights = part.weights().to_vec();
    let w0 = vec![0.0; dim];
    let mut states: Vec<DeviceState> = (0..config.n_devices)
        .map(|_| DeviceState::fresh(config.rule, &w0))
        .collect();

    let mut traj = Trajectory::default();
    let record = |traj: &mut Trajectory,
                  t: u64,
                  w_bar: &[f64],
                  drift_val: f64,
                  comm_round: u64,
                  step_size: f64|
     -> Result<bool> {
        let (loss, grad) = objective.loss_and_grad(w_bar)?;
        if !loss.is_finite() || loss > DIVERGENCE_GUARD {
            return Err(Error::Divergence {
                step: t,
                step_size,
                loss,
            });
        }
        let grad_norm = linalg::norm_sq(&grad).sqrt();
        traj.points.push(TrajPoint {
            t,
            loss,
            drift: drift_val,
            grad_norm,
            comm_round,
        });
        Ok(stop.map(|s| loss - s.f_star <= s.epsilon).unwrap_or(false))
    };

    // initial point
    if record(&mut traj, 0, &w0, 0.0, 0, 0.0)? {
        return Ok((traj, states));
    }

    let mut candidates: Vec<Vec<f64>> = vec![vec![0.0; dim]; config.n_devices];
    let mut grads: Vec<Vec<f64>> = vec![vec![0.0; dim]; config.n_devices];
    let mut batch_buf: Vec<u32> = Vec::new();

    for t in 0..config.total_steps {
        let params: StepSizes = config.schedule.at(t)?;
        let step_size = match config.rule {
            UpdateRule::Mass => params.eta1,
            _ => params.alpha,
        };

        // local step phase: every device computes its broadcast candidate
        for k in 0..config.n_devices {
            let shard = part.shard(k);
            batch_buf.clear();
            if config.batch_size >= shard.len() {
                batch_buf.extend_from_slice(shard);
            } else {
                let mut rng = stream(config.master_seed, StreamKind::Batch, k as u64, t);
                for _ in 0..config.batch_size {
                    batch_buf.push(shard[rng.random_range(0..shard.len())]);
                }
            }
            let eval_point: &[f64] = match config.rule {
                UpdateRule::Mass if !config.mass_grad_at_w => {
                    states[k].u.as_ref().expect("mass state")
                }
                _ => &states[k].w,
            };
            let g = objective.grad_batch_unchecked(eval_point, &batch_buf);
            let cand = &mut candidates[k];
            match config.rule {
                UpdateRule::Sgd => {
                    // v_{t+1} = w - alpha g
                    cand.copy_from_slice(&states[k].w);
                    linalg::axpy(cand, -params.alpha, &g);
                }
                UpdateRule::Nesterov => {
                    // momentum-combined candidate v_{t+1} + beta (v_{t+1} - v_t)
                    let v_prev = states[k].v_prev.as_ref().expect("nesterov state");
                    for i in 0..dim {
                        let v_new = states[k].w[i] - params.alpha * g[i];
                        cand[i] = v_new + params.beta * (v_new - v_prev[i]);
                    }
                }
                UpdateRule::Mass => {
                    // w_{t+1} = u - eta1 g
                    let u = states[k].u.as_ref().expect("mass state");
                    cand.copy_from_slice(u);
                    linalg::axpy(cand, -params.eta1, &g);
                }
            }
            grads[k] = g;
        }

        let t1 = t + 1;
        let is_comm = t1.is_multiple_of(config.local_steps);

        // aggregation phase
        let broadcast: Option<Vec<f64>> = if is_comm {
            let agg = match config.sampling {
                Sampling::Full => {
                    aggregate(Sampling::Full, &[0], &candidates, &weights, config.k_active)?
                }
                scheme => {
                    let mut rng = stream(config.master_seed, StreamKind::DeviceSampling, 0, t1);
                    let picks = sample_devices(scheme, config.k_active, &weights, &mut rng)?;
                    aggregate(scheme, &picks, &candidates, &weights, config.k_active)?
                }
            };
            Some(agg)
        } else {
            None
        };

        // pre-broadcast dispersion is the informative drift at comm steps
        let drift_pre = if is_comm {
            Some(drift(&candidates, &weights))
        } else {
            None
        };

        // finalize phase: install the new w (broadcast or own candidate) and
        // roll the per-rule auxiliary state forward
        for k in 0..config.n_devices {
            let w_new: &[f64] = broadcast.as_deref().unwrap_or(&candidates[k]);
            match config.rule {
                UpdateRule::Sgd => {
                    states[k].w.copy_from_slice(w_new);
                }
                UpdateRule::Nesterov => {
                    // v_prev advances to v_{t+1}; only w is synchronized
                    let g = &grads[k];
                    let state = &mut states[k];
                    let v_prev = state.v_prev.as_mut().expect("nesterov state");
                    for i in 0..dim {
                        v_prev[i] = state.w[i] - params.alpha * g[i];
                    }
                    state.w.copy_from_slice(w_new);
                }
                UpdateRule::Mass => {
                    // u_{t+1} is formed locally from the (possibly broadcast)
                    // w_{t+1} and the device's own previous w and gradient
                    let g = &grads[k];
                    let state = &mut states[k];
                    let u = state.u.as_mut().expect("mass state");
                    let w_prev = state.w_prev.as_mut().expect("mass state");
                    for i in 0..dim {
                        let w_old = state.w[i];
                        u[i] = w_new[i] + params.gamma * (w_new[i] - w_old) + params.eta2 * g[i];
                        w_prev[i] = w_old;
                    }
                    state.w.copy_from_slice(w_new);
                }
            }
        }

        // recording
        let is_final = t1 == config.total_steps;
        if is_comm || is_final || t1 % config.eval_stride == 0 {
            let w_refs: Vec<&[f64]> = states.iter().map(|s| s.w.as_slice()).collect();
            let w_bar = linalg::weighted_mean(&w_refs, &weights, dim);
            let drift_val = drift_pre.unwrap_or_else(|| {
                let iters: Vec<Vec<f64>> = states.iter().map(|s| s.w.clone()).collect();
                drift(&iters, &weights)
            });
            if is_comm && config.record_iterates {
                traj.iterates.push((t1, w_bar.clone()));
            }
            if record(
                &mut traj,
                t1,
                &w_bar,
                drift_val,
                t1 / config.local_steps,
                step_size,
            )? {
                return Ok((traj, states));
            }
        }
    }

    Ok((traj, states))
}
