//! Conditional-mean recursions for self-modulating renewal processes.
//!
//! A modulator carries the conditional mean of the next interdemand time (or
//! demand size) from one issue point to the next. Elapsed time since the last
//! issue point is not part of the state; it enters forecasts through the
//! hazard rate.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smoothing weight of an exponentially weighted moving average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwmaConfig {
    alpha: f64,
}

impl EwmaConfig {
    /// `alpha` must lie in `(0, 1]`.
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "EWMA alpha must be in (0, 1], got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for EwmaConfig {
    fn default() -> Self {
        Self { alpha: 0.1 }
    }
}

/// Stationary autoregressive mean process
/// `m_i = (1 − φ − β) μ + β m_{i−1} + φ x_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryArConfig {
    phi: f64,
    beta: f64,
    mu_level: f64,
}

impl StationaryArConfig {
    pub fn new(phi: f64, beta: f64, mu_level: f64) -> Result<Self> {
        if !(phi >= 0.0 && beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "AR weights must be nonnegative, got phi={phi}, beta={beta}"
            )));
        }
        if !(phi + beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "AR weights must satisfy phi + beta < 1, got {}",
                phi + beta
            )));
        }
        if !(mu_level >= 1.0 && mu_level.is_finite()) {
            return Err(Error::InvalidConfig(format!("AR level must be >= 1, got {mu_level}")));
        }
        Ok(Self { phi, beta, mu_level })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu_level(&self) -> f64 {
        self.mu_level
    }

    /// State sitting at the stationary level.
    pub fn initial_state(&self) -> ModulatorState {
        ModulatorState {
            current_mean: self.mu_level,
            history_count: 0,
        }
    }
}

/// Conditional mean carried between issue points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulatorState {
    current_mean: f64,
    history_count: usize,
}

impl ModulatorState {
    /// State with no observations; the first EWMA step adopts its observation.
    pub fn unseeded() -> Self {
        Self {
            current_mean: 1.0,
            history_count: 0,
        }
    }

    /// State seeded at `mean`, counted as one observation.
    pub fn seeded(mean: f64) -> Result<Self> {
        if !(mean >= 1.0 && mean.is_finite()) {
            return Err(Error::InvalidData(format!("modulator mean must be >= 1, got {mean}")));
        }
        Ok(Self {
            current_mean: mean,
            history_count: 1,
        })
    }

    pub fn current_mean(&self) -> f64 {
        self.current_mean
    }

    pub fn history_count(&self) -> usize {
        self.history_count
    }

    pub fn is_seeded(&self) -> bool {
        self.history_count > 0
    }
}

/// One EWMA update. The first observation initialises the mean.
pub fn ewma_step(cfg: &EwmaConfig, state: ModulatorState, observation: f64) -> ModulatorState {
    let current_mean = if state.history_count == 0 {
        observation
    } else {
        cfg.alpha * observation + (1.0 - cfg.alpha) * state.current_mean
    };
    ModulatorState {
        current_mean,
        history_count: state.history_count + 1,
    }
}

/// One stationary-AR update.
pub fn stationary_ar_step(cfg: &StationaryArConfig, state: ModulatorState, observation: f64) -> ModulatorState {
    let current_mean =
        (1.0 - cfg.phi - cfg.beta) * cfg.mu_level + cfg.beta * state.current_mean + cfg.phi * observation;
    ModulatorState {
        current_mean,
        history_count: state.history_count + 1,
    }
}

/// Either recursion behind one interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanRecursion {
    Ewma(EwmaConfig),
    StationaryAr(StationaryArConfig),
}

impl MeanRecursion {
    pub fn initial_state(&self) -> ModulatorState {
        match self {
            MeanRecursion::Ewma(_) => ModulatorState::unseeded(),
            MeanRecursion::StationaryAr(cfg) => cfg.initial_state(),
        }
    }

    pub fn step(&self, state: ModulatorState, observation: f64) -> ModulatorState {
        match self {
            MeanRecursion::Ewma(cfg) => ewma_step(cfg, state, observation),
            MeanRecursion::StationaryAr(cfg) => stationary_ar_step(cfg, state, observation),
        }
    }

    /// Whether `state` defines a conditional law for the next observation.
    pub fn has_mean(&self, state: &ModulatorState) -> bool {
        match self {
            MeanRecursion::Ewma(_) => state.is_seeded(),
            MeanRecursion::StationaryAr(_) => true,
        }
    }

    /// Folds the recursion over `observations` from the initial state.
    pub fn run(&self, observations: impl IntoIterator<Item = f64>) -> ModulatorState {
        observations
            .into_iter()
            .fold(self.initial_state(), |s, x| self.step(s, x))
    }
}
