//! JSON run configuration.
//!
//! A config document has up to five sections: `dataset`, `objective`,
//! `federation`, `schedule`, and `experiment`. Unknown keys anywhere are
//! rejected, and referenced files must exist at load time. Relative dataset
//! paths are searched in the working directory first and then under
//! `$FEDSIM_DATA_DIR`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use serde::Deserialize;

use fedsim_core::dataio::{
    gen_counterexample, gen_gaussian_quadratic, gen_overparam_regression, parse_libsvm,
    partition_even,
};
use fedsim_core::federation::{FederationConfig, Sampling, UpdateRule};
use fedsim_core::objectives::{LossKind, Objective};
use fedsim_core::schedules::Schedule;
use fedsim_core::{Dataset, DevicePartition};

pub const DATA_DIR_ENV: &str = "FEDSIM_DATA_DIR";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: DatasetSpec,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub federation: Option<FederationSection>,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub experiment: Option<ExperimentSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Regression labels over features loaded from a libsvm file.
    OverparamRegression { features_path: String, seed: u64 },
    /// Dense Gaussian features with a given coordinate spectrum.
    GaussianQuadratic {
        n: usize,
        d: usize,
        spectrum: SpectrumSpec,
        seed: u64,
    },
    /// The paired-centers dataset.
    Counterexample {
        devices: usize,
        per_device: usize,
        radius: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SpectrumSpec {
    Uniform(f64),
    PerCoordinate(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: String,
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl ObjectiveSpec {
    pub fn loss_kind(&self) -> anyhow::Result<LossKind> {
        match self.kind.as_str() {
            "reg_logistic" => {
                let lambda = self
                    .lambda
                    .ok_or_else(|| anyhow!("objective kind reg_logistic requires `lambda`"))?;
                Ok(LossKind::RegLogistic { lambda })
            }
            "logistic" => Ok(LossKind::Logistic),
            "least_squares" => Ok(LossKind::LeastSquares),
            other => bail!("unknown objective kind `{other}`"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    pub n_devices: usize,
    #[serde(default)]
    pub k_active: Option<usize>,
    pub local_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub rule: UpdateRule,
    pub sampling: Sampling,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub eval_stride: Option<u64>,
    #[serde(default)]
    pub record_iterates: bool,
    #[serde(default)]
    pub mass_grad_at_w: bool,
}

impl FederationSection {
    /// Assemble the simulator config; the evaluation stride defaults to 1 on
    /// small datasets and 10 once full evaluations get expensive.
    pub fn to_config(&self, schedule: Schedule, n_samples: usize) -> FederationConfig {
        FederationConfig {
            n_devices: self.n_devices,
            k_active: self.k_active.unwrap_or(self.n_devices),
            local_steps: self.local_steps,
            total_steps: self.total_steps,
            batch_size: self.batch_size,
            rule: self.rule,
            sampling: self.sampling,
            schedule,
            master_seed: self.master_seed,
            eval_stride: self
                .eval_stride
                .unwrap_or(if n_samples <= 10_000 { 1 } else { 10 }),
            record_iterates: self.record_iterates,
            mass_grad_at_w: self.mass_grad_at_w,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub epsilon: f64,
    #[serde(default)]
    pub fstar_path: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub devices: Option<Vec<usize>>,
    #[serde(default = "default_participation")]
    pub participation: f64,
    #[serde(default = "default_fstar_tol")]
    pub fstar_tol: f64,
    #[serde(default = "default_nesterov_beta")]
    pub nesterov_beta: f64,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_participation() -> f64 {
    1.0
}

fn default_fstar_tol() -> f64 {
    1e-9
}

fn default_nesterov_beta() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub eta0s: Vec<f64>,
    pub c0: f64,
}

/// Resolve a dataset path against the working directory, then the data dir.
pub fn resolve_data_path(path: &str) -> anyhow::Result<PathBuf> {
    let direct = PathBuf::from(path);
    if direct.exists() {
        return Ok(direct);
    }
    if direct.is_relative() {
        if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
            let joined = Path::new(&dir).join(path);
            if joined.exists() {
                return Ok(joined);
            }
        }
    }
    bail!("dataset file not found: {path}")
}

/// Dataset plus an optional partition fixed by its generator.
pub struct LoadedData {
    pub data: Arc<Dataset>,
    pub fixed_partition: Option<Arc<DevicePartition>>,
}

pub fn load_config(path: &Path) -> anyhow::Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let cfg: ConfigFile = serde_json::from_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))?;
    // referenced files must exist at load time
    if let Some(p) = &cfg.dataset.path {
        resolve_data_path(p)?;
    }
    if let Some(GeneratorSpec::OverparamRegression { features_path, .. }) = &cfg.dataset.generator {
        resolve_data_path(features_path)?;
    }
    if let Some(exp) = &cfg.experiment {
        if let Some(p) = &exp.fstar_path {
            if !Path::new(p).exists() {
                bail!("f* cache file not found: {p}");
            }
        }
    }
    Ok(cfg)
}

pub fn load_dataset(spec: &DatasetSpec) -> anyhow::Result<LoadedData> {
    match (&spec.path, &spec.generator) {
        (Some(path), None) => {
            let resolved = resolve_data_path(path)?;
            let text = std::fs::read_to_string(&resolved)
                .with_context(|| format!("cannot read dataset {}", resolved.display()))?;
            let data = parse_libsvm(&text)
                .with_context(|| format!("cannot parse dataset {}", resolved.display()))?;
            Ok(LoadedData {
                data: Arc::new(data),
                fixed_partition: None,
            })
        }
        (None, Some(generator)) => load_generated(generator),
        _ => bail!("dataset section needs exactly one of `path` or `generator`"),
    }
}

fn load_generated(generator: &GeneratorSpec) -> anyhow::Result<LoadedData> {
    match generator {
        GeneratorSpec::OverparamRegression {
            features_path,
            seed,
        } => {
            let resolved = resolve_data_path(features_path)?;
            let text = std::fs::read_to_string(&resolved)?;
            let features = parse_libsvm(&text)?;
            let data = gen_overparam_regression(&features, *seed)?;
            Ok(LoadedData {
                data: Arc::new(data),
                fixed_partition: None,
            })
        }
        GeneratorSpec::GaussianQuadratic {
            n,
            d,
            spectrum,
            seed,
        } => {
            let spectrum = match spectrum {
                SpectrumSpec::Uniform(v) => vec![*v; *d],
                SpectrumSpec::PerCoordinate(v) => v.clone(),
            };
            let data = gen_gaussian_quadratic(*n, *d, &spectrum, *seed)?;
            Ok(LoadedData {
                data: Arc::new(data),
                fixed_partition: None,
            })
        }
        GeneratorSpec::Counterexample {
            devices,
            per_device,
            radius,
        } => {
            let (data, part) = gen_counterexample(*devices, *per_device, *radius)?;
            Ok(LoadedData {
                data: Arc::new(data),
                fixed_partition: Some(Arc::new(part)),
            })
        }
    }
}

/// Build the objective for `n_devices`, honoring a generator-fixed partition.
pub fn build_objective(
    loaded: &LoadedData,
    kind: LossKind,
    n_devices: usize,
) -> anyhow::Result<Objective> {
    let part = match &loaded.fixed_partition {
        Some(p) => {
            if p.n_devices() != n_devices {
                bail!(
                    "generator fixes the partition at {} devices but the config asks for {n_devices}",
                    p.n_devices()
                );
            }
            p.clone()
        }
        None => Arc::new(partition_even(&loaded.data, n_devices)?),
    };
    Ok(Objective::new(kind, loaded.data.clone(), part))
}
