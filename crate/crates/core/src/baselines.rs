//! Point-forecast baselines: Croston, SBA, TSB and the all-zeros forecast.

use serde::{Deserialize, Serialize};

use crate::series::{decompose, DemandSeries};
use crate::{Error, Result};

/// Default smoothing weight for every baseline.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Constant per-period point forecast over a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointForecast {
    pub per_period: Vec<f64>,
}

impl PointForecast {
    pub fn constant(value: f64, horizon: usize) -> Self {
        Self {
            per_period: vec![value; horizon],
        }
    }
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {w}")))
    }
}

fn smooth(values: impl Iterator<Item = f64>, alpha: f64) -> Option<f64> {
    values.fold(None, |acc, x| {
        Some(match acc {
            None => x,
            Some(s) => alpha * x + (1.0 - alpha) * s,
        })
    })
}

/// Croston's demand rate: EWMA of sizes over EWMA of intervals.
pub fn croston_rate(series: &DemandSeries, alpha: f64) -> Result<f64> {
    check_weight("alpha", alpha)?;
    let si = decompose(series);
    let (Some(size), Some(interval)) = (
        smooth(si.sizes().iter().map(|&m| m as f64), alpha),
        smooth(si.intervals().iter().map(|&q| q as f64), alpha),
    ) else {
        return Err(Error::Unfit {
            item: series.item_id().to_string(),
            reason: "no issue points".into(),
        });
    };
    Ok(size / interval)
}

pub fn croston_forecast(series: &DemandSeries, alpha: f64, horizon: usize) -> Result<PointForecast> {
    Ok(PointForecast::constant(croston_rate(series, alpha)?, horizon))
}

/// Croston with the `(1 − α/2)` bias correction.
pub fn sba_forecast(series: &DemandSeries, alpha: f64, horizon: usize) -> Result<PointForecast> {
    let rate = croston_rate(series, alpha)?;
    Ok(PointForecast::constant((1.0 - alpha / 2.0) * rate, horizon))
}

/// Teunter–Syntetos–Babai forecast.
///
/// The demand probability is smoothed with `beta` in every period against the
/// indicator of nonzero demand; the size is smoothed with `alpha` at issue
/// points only. Initial values are the issue-point frequency over the series
/// and the first positive size.
pub fn tsb_forecast(series: &DemandSeries, alpha: f64, beta: f64, horizon: usize) -> Result<PointForecast> {
    check_weight("alpha", alpha)?;
    check_weight("beta", beta)?;
    let values = series.values();
    let mut prob = series.issue_count() as f64 / values.len() as f64;
    let mut size = values.iter().find(|&&v| v > 0).map_or(0.0, |&v| v as f64);
    for &y in values {
        if y > 0 {
            prob += beta * (1.0 - prob);
            size += alpha * (y as f64 - size);
        } else {
            prob -= beta * prob;
        }
    }
    Ok(PointForecast::constant(prob * size, horizon))
}

pub fn zeros_forecast(horizon: usize) -> PointForecast {
    PointForecast::constant(0.0, horizon)
}
