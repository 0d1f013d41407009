//! Seeded generators for the synthetic benchmark regimes.
//!
//! - `Random`: Static G-Po demand.
//! - `Periodic`: an issue point every `period` steps with shifted-Poisson sizes;
//!   the first issue point sits at index `period − 1`.
//! - `Alternating`: interdemand times cycling through a pair of periods with a
//!   constant size.
//! - `FromModel`: forward simulation of any fitted model.
//!
//! Series `i` draws from stream `(seed, i)`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::models::{simulate_pairs, simulate_periods, ModelSpec};
use crate::series::{recompose, DemandSeries};
use crate::{rng, Error, Result};

/// Random-regime interval mean used when none is given.
pub const DEFAULT_RANDOM_MU_Q: f64 = 3.0;
/// Random-regime size mean used when none is given.
pub const DEFAULT_RANDOM_MU_M: f64 = 5.0;
/// Ten weeks of hourly periods.
pub const DEFAULT_PERIODS: usize = 1680;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    Random {
        mu_q: f64,
        mu_m: f64,
    },
    Periodic {
        period: u64,
        size_mean: f64,
    },
    Alternating {
        periods: [u64; 2],
        size: u64,
        /// Start each series on a randomly chosen element of `periods`.
        #[serde(default)]
        phase_jitter: bool,
    },
    FromModel {
        model: Box<ModelSpec>,
        /// Starting means for models without a law before the first issue point.
        #[serde(default)]
        initial_means: Option<(f64, f64)>,
    },
}

impl GeneratorKind {
    pub fn random() -> Self {
        GeneratorKind::Random {
            mu_q: DEFAULT_RANDOM_MU_Q,
            mu_m: DEFAULT_RANDOM_MU_M,
        }
    }

    pub fn periodic() -> Self {
        GeneratorKind::Periodic {
            period: 20,
            size_mean: 5.0,
        }
    }

    pub fn alternating() -> Self {
        GeneratorKind::Alternating {
            periods: [4, 16],
            size: 10,
            phase_jitter: false,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            GeneratorKind::Random { .. } => "random",
            GeneratorKind::Periodic { .. } => "periodic",
            GeneratorKind::Alternating { .. } => "alternating",
            GeneratorKind::FromModel { .. } => "model",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n_series: usize,
    pub n_periods: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    /// 100 series of 1680 periods.
    pub fn new(kind: GeneratorKind, seed: u64) -> Self {
        Self {
            kind,
            n_series: 100,
            n_periods: DEFAULT_PERIODS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_series == 0 || self.n_periods == 0 {
            return Err(Error::InvalidConfig("n_series and n_periods must be >= 1".into()));
        }
        match &self.kind {
            GeneratorKind::Random { mu_q, mu_m } => {
                DistributionSpec::shifted_geometric(*mu_q)?;
                DistributionSpec::shifted_poisson(*mu_m)?;
            }
            GeneratorKind::Periodic { period, size_mean } => {
                if *period == 0 {
                    return Err(Error::InvalidConfig("period must be >= 1".into()));
                }
                DistributionSpec::shifted_poisson(*size_mean)?;
            }
            GeneratorKind::Alternating { periods, size, .. } => {
                if periods.contains(&0) || *size == 0 {
                    return Err(Error::InvalidConfig("alternating periods and size must be >= 1".into()));
                }
            }
            GeneratorKind::FromModel { .. } => {}
        }
        Ok(())
    }
}

/// Generates `spec.n_series` series.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<DemandSeries>> {
    spec.validate()?;
    let random_model = match spec.kind {
        GeneratorKind::Random { mu_q, mu_m } => Some(ModelSpec::fixed_static(
            DistributionSpec::shifted_geometric(mu_q)?,
            DistributionSpec::shifted_poisson(mu_m)?,
        )?),
        _ => None,
    };
    let label = spec.kind.label();
    (0..spec.n_series)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(spec.seed, i as u64);
            let n = spec.n_periods;
            let values = match &spec.kind {
                GeneratorKind::Random { .. } => {
                    simulate_periods(random_model.as_ref().expect("built above"), n, None, &mut r)?
                }
                GeneratorKind::Periodic { period, size_mean } => {
                    let law = DistributionSpec::shifted_poisson(*size_mean)?;
                    let mut v = vec![0u64; n];
                    let mut idx = *period as usize - 1;
                    while idx < n {
                        v[idx] = law.sample_count(&mut r)?;
                        idx += *period as usize;
                    }
                    v
                }
                GeneratorKind::Alternating {
                    periods,
                    size,
                    phase_jitter,
                } => {
                    let mut k = if *phase_jitter { r.random_range(0..2usize) } else { 0 };
                    let mut v = vec![0u64; n];
                    let mut pos = 0usize;
                    loop {
                        pos += periods[k] as usize;
                        if pos > n {
                            break;
                        }
                        v[pos - 1] = *size;
                        k = 1 - k;
                    }
                    v
                }
                GeneratorKind::FromModel { model, initial_means } => {
                    simulate_periods(model, n, *initial_means, &mut r)?
                }
            };
            DemandSeries::new(format!("{label}-{i:04}"), 0, values)
        })
        .collect()
}

/// Simulates `n_series` series of exactly `n_issues` issue points each.
pub fn simulate_issues(model: &ModelSpec, n_series: usize, n_issues: usize, seed: u64) -> Result<Vec<DemandSeries>> {
    if n_issues == 0 {
        return Err(Error::InvalidConfig("need at least one issue point".into()));
    }
    (0..n_series)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let si = simulate_pairs(model, n_issues, None, &mut r)?;
            let s = recompose(&si)?;
            DemandSeries::new(format!("sim-{i:04}"), 0, s.values().to_vec())
        })
        .collect()
}

/// Sidecar written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetadata {
    pub generator: GeneratorSpec,
    pub seed: u64,
    pub n_series: usize,
    pub n_periods: usize,
}

/// Path of the metadata sidecar for a dataset file.
pub fn metadata_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    csv.with_file_name(name)
}

/// Writes the dataset as long-format CSV plus its metadata sidecar.
pub fn write_generated(path: &Path, spec: &GeneratorSpec, data: &[DemandSeries]) -> Result<()> {
    crate::harness::write_periods_csv(path, data)?;
    let meta = GeneratorMetadata {
        generator: spec.clone(),
        seed: spec.seed,
        n_series: spec.n_series,
        n_periods: spec.n_periods,
    };
    let mut f = std::fs::File::create(metadata_path(path))?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    Ok(())
}
