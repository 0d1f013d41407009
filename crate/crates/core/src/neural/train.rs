//! Adam training with decoupled weight decay, and the finite-difference
//! gradient check.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::likelihood::{series_loss_grad, validate_batch};
use super::{nll_and_gradient, HeadKinds, RnnParams, TrainSeries};
use crate::{Error, Result};

/// Smallest denominator used when forming relative gradient errors.
pub const GRADIENT_DENOM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-step multiplicative shrinkage `θ ← θ (1 − weight_decay)`.
    pub weight_decay: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// `None` trains full-batch; otherwise series are shuffled per epoch and
    /// split into minibatches of this size.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            weight_decay: 0.01,
            epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return bad(format!("weight decay must be in [0, 1), got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must be in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("Adam epsilon must be > 0".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be >= 1".into());
        }
        Ok(())
    }
}

/// Trained parameters with the loss recorded at the start of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: RnnParams,
    /// Summed negative log-likelihood over the whole dataset, per epoch.
    pub loss_trace: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.adam_beta1.powi(self.t);
        let c2 = 1.0 - cfg.adam_beta2.powi(self.t);
        let keep = 1.0 - cfg.weight_decay;
        for (k, x) in theta.iter_mut().enumerate() {
            let g = grad[k];
            self.m[k] = cfg.adam_beta1 * self.m[k] + (1.0 - cfg.adam_beta1) * g;
            self.v[k] = cfg.adam_beta2 * self.v[k] + (1.0 - cfg.adam_beta2) * g * g;
            let update = (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + cfg.adam_epsilon);
            *x = *x * keep - cfg.learning_rate * update;
        }
    }
}

/// Loss and gradient over `batch`, computed per series in parallel and
/// reduced in batch order.
fn batch_loss_grad(params: &RnnParams, heads: HeadKinds, batch: &[&TrainSeries]) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = batch.par_iter().map(|s| series_loss_grad(params, heads, s)).collect();
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (loss, grad)
}

/// Trains a global network on every sequence of `dataset` with Adam.
///
/// Sequences are put in a canonical order first, so full-batch results do not
/// depend on the order of `dataset`.
pub fn train_global(
    params: &RnnParams,
    dataset: &[TrainSeries],
    heads: HeadKinds,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidData("training dataset is empty".into()));
    }
    if let Some(short) = dataset.iter().position(|s| s.len() < 2) {
        return Err(Error::InvalidData(format!(
            "training series {short} has fewer than 2 issue points"
        )));
    }
    validate_batch(heads, dataset)?;
    let mut ordered: Vec<&TrainSeries> = dataset.iter().collect();
    ordered.sort_by(|a, b| a.canonical_cmp(b));

    let mut params = params.clone();
    let mut adam = Adam::new(params.len());
    let mut rng = crate::rng::stream(cfg.seed, 1);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let check = |loss: f64, grad: &[f64]| -> Result<()> {
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss is {loss}"),
                });
            }
            if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("gradient coordinate {k} is {}", grad[k]),
                });
            }
            Ok(())
        };
        match cfg.batch_size {
            None => {
                let (loss, grad) = batch_loss_grad(&params, heads, &ordered);
                check(loss, &grad)?;
                loss_trace.push(loss);
                adam.step(cfg, params.as_flat_mut(), &grad);
            }
            Some(size) => {
                let mut order = ordered.clone();
                order.shuffle(&mut rng);
                let mut epoch_loss = 0.0;
                for chunk in order.chunks(size) {
                    let (loss, grad) = batch_loss_grad(&params, heads, chunk);
                    check(loss, &grad)?;
                    epoch_loss += loss;
                    adam.step(cfg, params.as_flat_mut(), &grad);
                }
                loss_trace.push(epoch_loss);
            }
        }
        if let Some(k) = params.as_flat().iter().position(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("parameter {k} became non-finite"),
            });
        }
        log::debug!("epoch {epoch}: nll {}", loss_trace[epoch]);
    }
    Ok(TrainOutcome { params, loss_trace })
}

/// Comparison of an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|a − n| / max(|a|, |n|, GRADIENT_DENOM_FLOOR)` per coordinate.
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_index: usize,
}

impl GradientReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Central finite-difference gradient of the summed batch NLL.
pub fn numeric_gradient(params: &RnnParams, heads: HeadKinds, batch: &[TrainSeries], epsilon: f64) -> Result<Vec<f64>> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be in [1e-6, 1e-3], got {epsilon}"
        )));
    }
    validate_batch(heads, batch)?;
    let nll = |p: &RnnParams| -> f64 {
        batch
            .iter()
            .map(|s| super::sequence_nll(p, heads, s).expect("batch validated"))
            .sum()
    };
    (0..params.len())
        .into_par_iter()
        .map(|k| {
            let mut p = params.clone();
            let x = p.as_flat()[k];
            p.as_flat_mut()[k] = x + epsilon;
            let up = nll(&p);
            p.as_flat_mut()[k] = x - epsilon;
            let down = nll(&p);
            Ok((up - down) / (2.0 * epsilon))
        })
        .collect()
}

/// Compares a supplied analytic gradient with central differences.
pub fn compare_gradients(
    analytic: &[f64],
    params: &RnnParams,
    heads: HeadKinds,
    batch: &[TrainSeries],
    epsilon: f64,
) -> Result<GradientReport> {
    if analytic.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} entries, parameters {}",
            analytic.len(),
            params.len()
        )));
    }
    let numeric = numeric_gradient(params, heads, batch, epsilon)?;
    let relative_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRADIENT_DENOM_FLOOR))
        .collect();
    let (worst_index, max_relative_error) = relative_errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (k, e)| if e > best.1 { (k, e) } else { best });
    Ok(GradientReport {
        analytic: analytic.to_vec(),
        numeric,
        relative_errors,
        max_relative_error,
        worst_index,
    })
}

/// Checks the backpropagated gradient against central differences.
pub fn gradient_check(
    params: &RnnParams,
    heads: HeadKinds,
    batch: &[TrainSeries],
    epsilon: f64,
) -> Result<GradientReport> {
    let (_, analytic) = nll_and_gradient(params, heads, batch)?;
    compare_gradients(&analytic, params, heads, batch, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{IntervalHead, RnnShape, SizeHead};
    use crate::series::{decompose, DemandSeries};

    fn toy_batch() -> Vec<TrainSeries> {
        vec![
            TrainSeries::new(vec![2.0, 1.0, 4.0, 3.0], vec![3, 1, 6, 2]).unwrap(),
            TrainSeries::new(vec![5.0, 2.0, 7.0], vec![1, 2, 9]).unwrap(),
        ]
    }

    fn all_heads() -> Vec<HeadKinds> {
        let mut out = Vec::new();
        for q in [IntervalHead::Geometric, IntervalHead::NegBin] {
            for m in [SizeHead::Poisson, SizeHead::NegBin] {
                out.push(HeadKinds::new(q, m));
            }
        }
        out
    }

    fn alternating(n_pairs: usize) -> TrainSeries {
        let mut v = Vec::new();
        for _ in 0..n_pairs {
            v.extend([0, 0, 0, 10]);
            v.extend([0; 15]);
            v.push(10);
        }
        TrainSeries::from(&decompose(&DemandSeries::from_values(v).unwrap()))
    }

    #[test]
    fn gradient_check_all_heads() {
        for seed in [1, 2] {
            let p = RnnParams::init(RnnShape::new(3, 1).unwrap(), seed);
            for heads in all_heads() {
                let r = gradient_check(&p, heads, &toy_batch(), 1e-5).unwrap();
                assert!(
                    r.passes(1e-4),
                    "{heads:?}: {} at {}",
                    r.max_relative_error,
                    r.worst_index
                );
            }
        }
    }

    #[test]
    fn gradient_check_stacked_layers() {
        let p = RnnParams::init(RnnShape::new(3, 2).unwrap(), 9);
        let heads = HeadKinds::new(IntervalHead::NegBin, SizeHead::NegBin);
        let r = gradient_check(&p, heads, &toy_batch(), 1e-5).unwrap();
        assert!(r.passes(1e-4), "{}", r.max_relative_error);
    }

    #[test]
    fn gradient_check_exponential_head() {
        let p = RnnParams::init(RnnShape::new(3, 1).unwrap(), 4);
        let batch = vec![TrainSeries::new(vec![0.3, 1.7, 0.05, 2.2], vec![1, 4, 2, 2]).unwrap()];
        let heads = HeadKinds::new(IntervalHead::Exponential, SizeHead::NegBin);
        let r = gradient_check(&p, heads, &batch, 1e-5).unwrap();
        assert!(r.passes(1e-4), "{}", r.max_relative_error);
    }

    #[test]
    fn unused_dispersion_has_zero_gradient() {
        let p = RnnParams::init(RnnShape::new(3, 1).unwrap(), 1);
        let heads = HeadKinds::new(IntervalHead::Geometric, SizeHead::Poisson);
        let r = gradient_check(&p, heads, &toy_batch(), 1e-5).unwrap();
        for k in [p.interval_dispersion_index(), p.size_dispersion_index()] {
            assert!(r.analytic[k].abs() < 1e-10 && r.numeric[k].abs() < 1e-10);
        }
    }

    #[test]
    fn corrupted_gradient_fails_check() {
        let p = RnnParams::init(RnnShape::new(3, 1).unwrap(), 1);
        let heads = HeadKinds::new(IntervalHead::NegBin, SizeHead::NegBin);
        let (_, mut g) = nll_and_gradient(&p, heads, &toy_batch()).unwrap();
        g[5] += 0.1;
        let r = compare_gradients(&g, &p, heads, &toy_batch(), 1e-5).unwrap();
        assert!(!r.passes(1e-4));
        assert_eq!(r.worst_index, 5);
    }

    #[test]
    fn epsilon_is_range_checked() {
        let p = RnnParams::init(RnnShape::new(2, 1).unwrap(), 1);
        let heads = HeadKinds::new(IntervalHead::Geometric, SizeHead::Poisson);
        assert!(gradient_check(&p, heads, &toy_batch(), 1e-2).is_err());
    }

    #[test]
    fn loss_trace_is_reproducible() {
        let batch: Vec<TrainSeries> = (0..5)
            .map(|i| TrainSeries::new(vec![1.0 + i as f64, 2.0, 3.0], vec![2, 1 + i, 4]).unwrap())
            .collect();
        let heads = HeadKinds::new(IntervalHead::NegBin, SizeHead::NegBin);
        let p = RnnParams::init(RnnShape::new(4, 1).unwrap(), 3);
        let cfg = TrainConfig {
            epochs: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train_global(&p, &batch, heads, &cfg).unwrap();
        let b = train_global(&p, &batch, heads, &cfg).unwrap();
        assert_eq!(a.loss_trace.len(), 1);
        assert_eq!(a.loss_trace[0].to_bits(), b.loss_trace[0].to_bits());
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn order_invariance_full_batch() {
        let mut batch: Vec<TrainSeries> = (0..6)
            .map(|i| {
                TrainSeries::new(vec![1.0 + (i % 3) as f64, 2.0, 5.0 - (i % 2) as f64], vec![2, 1 + i, 4]).unwrap()
            })
            .collect();
        let heads = HeadKinds::new(IntervalHead::NegBin, SizeHead::Poisson);
        let p = RnnParams::init(RnnShape::new(3, 1).unwrap(), 8);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train_global(&p, &batch, heads, &cfg).unwrap();
        batch.reverse();
        batch.swap(1, 4);
        let b = train_global(&p, &batch, heads, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_learning_rate_only_decays() {
        let batch = toy_batch();
        let heads = HeadKinds::new(IntervalHead::Geometric, SizeHead::NegBin);
        let p = RnnParams::init(RnnShape::new(3, 1).unwrap(), 2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train_global(&p, &batch, heads, &cfg).unwrap();
        for (a, b) in out.params.as_flat().iter().zip(p.as_flat()) {
            let mut want = *b;
            for _ in 0..3 {
                want *= 0.99;
            }
            assert_eq!(*a, want);
        }
    }

    #[test]
    fn alternating_series_loss_decreases() {
        let data = vec![alternating(20)];
        let heads = HeadKinds::new(IntervalHead::NegBin, SizeHead::NegBin);
        let mut p = RnnParams::init(RnnShape::new(5, 1).unwrap(), 0);
        p.init_head_biases(&data, heads);
        let cfg = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        let out = train_global(&p, &data, heads, &cfg).unwrap();
        let first = out.loss_trace[0];
        let last = *out.loss_trace.last().unwrap();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn minibatch_training_is_seeded() {
        let batch: Vec<TrainSeries> = (0..7)
            .map(|i| TrainSeries::new(vec![1.0 + i as f64, 2.0], vec![2, 3]).unwrap())
            .collect();
        let heads = HeadKinds::new(IntervalHead::Geometric, SizeHead::Poisson);
        let p = RnnParams::init(RnnShape::new(2, 1).unwrap(), 3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: Some(3),
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_global(&p, &batch, heads, &cfg).unwrap();
        let b = train_global(&p, &batch, heads, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_rejects_bad_input() {
        let heads = HeadKinds::new(IntervalHead::Geometric, SizeHead::Poisson);
        let p = RnnParams::init(RnnShape::new(2, 1).unwrap(), 3);
        let cfg = TrainConfig::default();
        assert!(train_global(&p, &[], heads, &cfg).is_err());
        let short = vec![TrainSeries::new(vec![1.0], vec![1]).unwrap()];
        assert!(train_global(&p, &short, heads, &cfg).is_err());
        let bad = TrainConfig {
            weight_decay: 1.0,
            ..TrainConfig::default()
        };
        assert!(train_global(&p, &toy_batch(), heads, &bad).is_err());
    }
}
