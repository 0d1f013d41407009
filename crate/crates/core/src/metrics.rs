//! Forecast accuracy metrics and the Syntetos–Boylan classifier.
//!
//! Metrics take `M × L` panels: one row per item, one column per horizon
//! period. Aggregation runs over items in row order.

use serde::{Deserialize, Serialize};

use crate::series::{decompose, DemandSeries};
use crate::{Error, Result};

/// A metric value with the number of items that could not contribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub skipped: usize,
}

fn check_shapes(actuals: &[Vec<f64>], forecasts: &[Vec<f64>]) -> Result<usize> {
    if actuals.len() != forecasts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} actual rows vs {} forecast rows",
            actuals.len(),
            forecasts.len()
        )));
    }
    if actuals.is_empty() {
        return Err(Error::ShapeMismatch("no items".into()));
    }
    let horizon = actuals[0].len();
    for (i, (a, f)) in actuals.iter().zip(forecasts).enumerate() {
        if a.len() != horizon || f.len() != horizon {
            return Err(Error::ShapeMismatch(format!(
                "item {i}: {} actuals and {} forecasts, expected {horizon}",
                a.len(),
                f.len()
            )));
        }
    }
    if horizon == 0 {
        return Err(Error::ShapeMismatch("empty horizon".into()));
    }
    Ok(horizon)
}

fn cells<'a>(actuals: &'a [Vec<f64>], forecasts: &'a [Vec<f64>]) -> impl Iterator<Item = (f64, f64)> + 'a {
    actuals
        .iter()
        .zip(forecasts)
        .flat_map(|(a, f)| a.iter().copied().zip(f.iter().copied()))
}

/// Two-sided weighted quantile loss for one cell, including the factor 2.
pub fn quantile_loss_cell(actual: f64, quantile: f64, rho: f64) -> f64 {
    let diff = actual - quantile;
    if diff > 0.0 {
        2.0 * rho * diff
    } else {
        2.0 * (1.0 - rho) * -diff
    }
}

/// Mean quantile loss over all cells.
pub fn quantile_loss(actuals: &[Vec<f64>], quantiles: &[Vec<f64>], rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("quantile level must be in (0, 1), got {rho}")));
    }
    let horizon = check_shapes(actuals, quantiles)?;
    let total: f64 = cells(actuals, quantiles)
        .map(|(y, q)| quantile_loss_cell(y, q, rho))
        .sum();
    Ok(total / (horizon * actuals.len()) as f64)
}

/// MAPE over nonzero actuals; items without any nonzero actual are skipped.
pub fn mape(actuals: &[Vec<f64>], forecasts: &[Vec<f64>]) -> Result<MetricValue> {
    check_shapes(actuals, forecasts)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (a, f) in actuals.iter().zip(forecasts) {
        let terms: Vec<f64> = a
            .iter()
            .zip(f)
            .filter(|(&y, _)| y > 0.0)
            .map(|(&y, &yhat)| (y - yhat).abs() / y.abs())
            .collect();
        if !terms.is_empty() {
            sum += terms.iter().sum::<f64>() / terms.len() as f64;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("MAPE: no item has a nonzero actual".into()));
    }
    Ok(MetricValue {
        value: sum / used as f64,
        skipped: actuals.len() - used,
    })
}

/// sMAPE with the leading factor 2; cells where actual and forecast are both
/// zero contribute 0.
pub fn smape(actuals: &[Vec<f64>], forecasts: &[Vec<f64>]) -> Result<f64> {
    let horizon = check_shapes(actuals, forecasts)?;
    let total: f64 = cells(actuals, forecasts)
        .map(|(y, yhat)| {
            let denom = y.abs() + yhat.abs();
            if denom == 0.0 {
                0.0
            } else {
                (y - yhat).abs() / denom
            }
        })
        .sum();
    Ok(2.0 * total / (horizon * actuals.len()) as f64)
}

pub fn rmse(actuals: &[Vec<f64>], forecasts: &[Vec<f64>]) -> Result<f64> {
    let horizon = check_shapes(actuals, forecasts)?;
    let sse: f64 = cells(actuals, forecasts).map(|(y, yhat)| (y - yhat).powi(2)).sum();
    Ok((sse / (horizon * actuals.len()) as f64).sqrt())
}

/// Which RMSSE formula to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmsseVariant {
    /// Squared errors over the mean absolute in-sample first difference
    /// (sum of `L'−1` terms divided by `L'`), averaged over items and horizon,
    /// with no outer root.
    #[default]
    Printed,
    /// M5 competition form: per-item root of mean squared error over the mean
    /// squared in-sample first difference (divisor `L'−1`), averaged over items.
    M5,
}

/// Root mean squared scaled error. Items whose scale is zero are skipped.
pub fn rmsse(
    actuals: &[Vec<f64>],
    forecasts: &[Vec<f64>],
    in_sample: &[Vec<f64>],
    variant: RmsseVariant,
) -> Result<MetricValue> {
    let horizon = check_shapes(actuals, forecasts)?;
    if in_sample.len() != actuals.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} in-sample histories for {} items",
            in_sample.len(),
            actuals.len()
        )));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for ((a, f), hist) in actuals.iter().zip(forecasts).zip(in_sample) {
        if hist.len() < 2 {
            continue;
        }
        let diffs = hist.windows(2).map(|w| w[1] - w[0]);
        let sq_err = a.iter().zip(f).map(|(y, yhat)| (y - yhat).powi(2));
        match variant {
            RmsseVariant::Printed => {
                let scale = diffs.map(f64::abs).sum::<f64>() / hist.len() as f64;
                if scale == 0.0 {
                    continue;
                }
                total += sq_err.map(|e| e / scale).sum::<f64>();
            }
            RmsseVariant::M5 => {
                let scale = diffs.map(|d| d * d).sum::<f64>() / (hist.len() - 1) as f64;
                if scale == 0.0 {
                    continue;
                }
                total += (sq_err.sum::<f64>() / horizon as f64 / scale).sqrt();
            }
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("RMSSE: every item has zero scale".into()));
    }
    let value = match variant {
        RmsseVariant::Printed => total / (used * horizon) as f64,
        RmsseVariant::M5 => total / used as f64,
    };
    Ok(MetricValue {
        value,
        skipped: actuals.len() - used,
    })
}

/// Accuracy of one model over a dataset.
///
/// Quantile losses are absent for point-forecast methods; any metric that is
/// undefined on the data is absent as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub p50_loss: Option<f64>,
    pub p90_loss: Option<f64>,
    pub mape: Option<f64>,
    pub smape: Option<f64>,
    pub rmse: Option<f64>,
    pub rmsse: Option<f64>,
    pub item_count: usize,
    pub mape_skipped: usize,
    pub rmsse_skipped: usize,
}

/// Panels needed to score one model.
pub struct EvaluationInput<'a> {
    pub actuals: &'a [Vec<f64>],
    pub point: &'a [Vec<f64>],
    /// Per-period 0.5 and 0.9 quantiles, when the model is probabilistic.
    pub quantiles: Option<(&'a [Vec<f64>], &'a [Vec<f64>])>,
    pub in_sample: &'a [Vec<f64>],
    pub rmsse_variant: RmsseVariant,
}

/// Computes the full metric set.
pub fn evaluate(input: &EvaluationInput<'_>) -> Result<MetricsReport> {
    check_shapes(input.actuals, input.point)?;
    let (p50_loss, p90_loss) = match input.quantiles {
        Some((q50, q90)) => (
            Some(quantile_loss(input.actuals, q50, 0.5)?),
            Some(quantile_loss(input.actuals, q90, 0.9)?),
        ),
        None => (None, None),
    };
    let item_count = input.actuals.len();
    let (mape, mape_skipped) = match mape(input.actuals, input.point) {
        Ok(v) => (Some(v.value), v.skipped),
        Err(Error::UndefinedMetric(_)) => (None, item_count),
        Err(e) => return Err(e),
    };
    let (rmsse, rmsse_skipped) = match rmsse(input.actuals, input.point, input.in_sample, input.rmsse_variant) {
        Ok(v) => (Some(v.value), v.skipped),
        Err(Error::UndefinedMetric(_)) => (None, item_count),
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        p50_loss,
        p90_loss,
        mape,
        smape: Some(smape(input.actuals, input.point)?),
        rmse: Some(rmse(input.actuals, input.point)?),
        rmsse,
        item_count,
        mape_skipped,
        rmsse_skipped,
    })
}

/// Syntetos–Boylan demand class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SbcClass {
    Smooth,
    Erratic,
    Intermittent,
    Lumpy,
}

impl SbcClass {
    pub fn name(self) -> &'static str {
        match self {
            SbcClass::Smooth => "smooth",
            SbcClass::Erratic => "erratic",
            SbcClass::Intermittent => "intermittent",
            SbcClass::Lumpy => "lumpy",
        }
    }
}

/// Cut-offs on mean interdemand time and squared size CV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbcThresholds {
    pub interval: f64,
    pub cv2: f64,
}

impl Default for SbcThresholds {
    fn default() -> Self {
        Self {
            interval: 1.32,
            cv2: 0.49,
        }
    }
}

/// Class from the two summary statistics.
pub fn sbc_from_stats(mean_interval: f64, size_cv2: f64, t: &SbcThresholds) -> SbcClass {
    match (mean_interval >= t.interval, size_cv2 >= t.cv2) {
        (false, false) => SbcClass::Smooth,
        (false, true) => SbcClass::Erratic,
        (true, false) => SbcClass::Intermittent,
        (true, true) => SbcClass::Lumpy,
    }
}

/// Mean interdemand time and squared coefficient of variation of sizes.
///
/// The CV² uses the population variance; a single issue point has CV² = 0.
pub fn sbc_stats(series: &DemandSeries) -> Result<(f64, f64)> {
    let si = decompose(series);
    if si.issue_count() == 0 {
        return Err(Error::InvalidData(format!(
            "item `{}` has no issue points to classify",
            series.item_id()
        )));
    }
    let n = si.issue_count() as f64;
    let p = si.intervals().iter().sum::<u64>() as f64 / n;
    Ok((p, squared_cv(si.sizes().iter().map(|&m| m as f64))))
}

pub fn sbc_classify(series: &DemandSeries, t: &SbcThresholds) -> Result<SbcClass> {
    let (p, cv2) = sbc_stats(series)?;
    Ok(sbc_from_stats(p, cv2, t))
}

/// Population variance over squared mean; 0 for fewer than two values.
pub fn squared_cv(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    var / (mean * mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> Vec<Vec<f64>> {
        vec![v.to_vec()]
    }

    #[test]
    fn quantile_loss_examples() {
        assert_abs_diff_eq!(
            quantile_loss(&row(&[10.0]), &row(&[8.0]), 0.9).unwrap(),
            3.6,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            quantile_loss(&row(&[8.0]), &row(&[10.0]), 0.9).unwrap(),
            0.4,
            epsilon = 1e-12
        );
        let a = vec![vec![1.0, 5.0], vec![0.0, 2.0]];
        let f = vec![vec![3.0, 4.0], vec![1.0, 2.0]];
        assert_abs_diff_eq!(
            quantile_loss(&a, &f, 0.5).unwrap(),
            (2.0 + 1.0 + 1.0 + 0.0) / 4.0,
            epsilon = 1e-12
        );
        assert_eq!(quantile_loss(&a, &a, 0.9).unwrap(), 0.0);
        assert!(quantile_loss(&a, &row(&[1.0, 2.0]), 0.5).is_err());
        assert!(quantile_loss(&a, &a, 1.0).is_err());
    }

    #[test]
    fn mape_examples() {
        let a = vec![vec![3.0, 0.0, 7.0], vec![0.0, 1.0, 0.0]];
        let zeros = vec![vec![0.0; 3]; 2];
        assert_eq!(mape(&a, &zeros).unwrap().value, 1.0);
        assert_eq!(mape(&a, &a).unwrap().value, 0.0);
        let v = mape(&row(&[0.0, 4.0]), &row(&[9.0, 2.0])).unwrap();
        assert_eq!(v.value, 0.5);
        let v = mape(&[vec![0.0, 0.0], vec![4.0, 0.0]], &[vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!((v.value, v.skipped), (0.5, 1));
        assert!(matches!(
            mape(&row(&[0.0]), &row(&[1.0])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn smape_examples() {
        let a = vec![vec![3.0, 1.0], vec![2.0, 9.0]];
        assert_eq!(smape(&a, &vec![vec![0.0; 2]; 2]).unwrap(), 2.0);
        assert_eq!(smape(&a, &a).unwrap(), 0.0);
        assert_eq!(smape(&row(&[2.0]), &row(&[2.0])).unwrap(), 0.0);
        assert_eq!(smape(&row(&[2.0]), &row(&[0.0])).unwrap(), 2.0);
        assert_eq!(smape(&row(&[0.0]), &row(&[0.0])).unwrap(), 0.0);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&row(&[1.0, 2.0]), &row(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(rmse(&row(&[3.0]), &row(&[1.0])).unwrap(), 2.0);
        assert_eq!(rmse(&row(&[0.0, 4.0]), &row(&[2.0, 2.0])).unwrap(), 2.0);
    }

    #[test]
    fn rmsse_examples() {
        let hist = row(&[0.0, 2.0, 0.0]);
        let v = rmsse(&row(&[2.0]), &row(&[0.0]), &hist, RmsseVariant::Printed).unwrap();
        assert_abs_diff_eq!(v.value, 3.0, epsilon = 1e-12);
        let v = rmsse(&row(&[2.0]), &row(&[2.0]), &hist, RmsseVariant::Printed).unwrap();
        assert_eq!(v.value, 0.0);

        let a = vec![vec![2.0], vec![2.0]];
        let f = vec![vec![0.0], vec![0.0]];
        let h = vec![vec![5.0, 5.0, 5.0], vec![0.0, 2.0, 0.0]];
        let v = rmsse(&a, &f, &h, RmsseVariant::Printed).unwrap();
        assert_eq!(v.skipped, 1);
        assert_abs_diff_eq!(v.value, 3.0, epsilon = 1e-12);
        assert!(rmsse(
            &row(&[1.0]),
            &row(&[0.0]),
            &row(&[5.0, 5.0, 5.0]),
            RmsseVariant::Printed
        )
        .is_err());
    }

    #[test]
    fn rmsse_m5_variant() {
        // scale = (4 + 4) / 2 = 4; per-item root of 4 / 4 = 1
        let v = rmsse(&row(&[2.0]), &row(&[0.0]), &row(&[0.0, 2.0, 0.0]), RmsseVariant::M5).unwrap();
        assert_abs_diff_eq!(v.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sbc_examples() {
        let t = SbcThresholds::default();
        assert_eq!(sbc_from_stats(1.5, 0.2, &t), SbcClass::Intermittent);
        assert_eq!(sbc_from_stats(1.5, 1.0, &t), SbcClass::Lumpy);
        assert_eq!(sbc_from_stats(1.1, 0.2, &t), SbcClass::Smooth);
        assert_eq!(sbc_from_stats(1.1, 0.6, &t), SbcClass::Erratic);
    }

    #[test]
    fn sbc_on_series() {
        let t = SbcThresholds::default();
        let single = DemandSeries::from_values(vec![0, 0, 4]).unwrap();
        assert_eq!(sbc_stats(&single).unwrap(), (3.0, 0.0));
        assert_eq!(sbc_classify(&single, &t).unwrap(), SbcClass::Intermittent);
        // sizes 1 and 9: mean 5, variance 16, cv2 0.64; p = 2
        let lumpy = DemandSeries::from_values(vec![0, 1, 0, 9]).unwrap();
        assert_eq!(sbc_classify(&lumpy, &t).unwrap(), SbcClass::Lumpy);
        assert!(sbc_classify(&DemandSeries::from_values(vec![0]).unwrap(), &t).is_err());
    }

    #[test]
    fn report_skips_undefined_metrics() {
        let actuals = vec![vec![0.0, 0.0]];
        let point = vec![vec![1.0, 1.0]];
        let hist = vec![vec![1.0, 1.0]];
        let r = evaluate(&EvaluationInput {
            actuals: &actuals,
            point: &point,
            quantiles: None,
            in_sample: &hist,
            rmsse_variant: RmsseVariant::Printed,
        })
        .unwrap();
        assert_eq!(r.mape, None);
        assert_eq!(r.rmsse, None);
        assert_eq!((r.mape_skipped, r.rmsse_skipped), (1, 1));
        assert_eq!(r.rmse, Some(1.0));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"mape_skipped\":1"));
    }

    fn panel() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        (1usize..6, 1usize..8).prop_flat_map(|(m, l)| {
            let row = prop::collection::vec(0u32..20, l).prop_map(|v| v.into_iter().map(f64::from).collect::<Vec<_>>());
            (prop::collection::vec(row.clone(), m), prop::collection::vec(row, m))
        })
    }

    proptest! {
        #[test]
        fn median_loss_is_mae((a, f) in panel()) {
            let n = (a.len() * a[0].len()) as f64;
            let mae: f64 = a.iter().flatten().zip(f.iter().flatten()).map(|(y, q)| (y - q).abs()).sum::<f64>() / n;
            prop_assert!((quantile_loss(&a, &f, 0.5).unwrap() - mae).abs() < 1e-12);
        }

        #[test]
        fn smape_is_symmetric((a, f) in panel()) {
            prop_assert!((smape(&a, &f).unwrap() - smape(&f, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn perfect_forecast_scores_zero((a, _f) in panel()) {
            prop_assert_eq!(smape(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(quantile_loss(&a, &a, 0.9).unwrap(), 0.0);
            if let Ok(v) = mape(&a, &a) { prop_assert_eq!(v.value, 0.0); }
        }

        #[test]
        fn aggregation_ignores_item_order((a, f) in panel()) {
            let mut ra = a.clone();
            let mut rf = f.clone();
            ra.reverse();
            rf.reverse();
            prop_assert!((rmse(&a, &f).unwrap() - rmse(&ra, &rf).unwrap()).abs() < 1e-12);
            prop_assert!((smape(&a, &f).unwrap() - smape(&ra, &rf).unwrap()).abs() < 1e-12);
            prop_assert!((quantile_loss(&a, &f, 0.9).unwrap() - quantile_loss(&ra, &rf, 0.9).unwrap()).abs() < 1e-12);
            if let (Ok(x), Ok(y)) = (mape(&a, &f), mape(&ra, &rf)) {
                prop_assert!((x.value - y.value).abs() < 1e-12);
            }
        }
    }
}
