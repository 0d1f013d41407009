//! Sequence negative log-likelihood and its gradient by backpropagation
//! through time.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::lstm::{backward, forward, StepCache};
use super::{encode_input, sigmoid, softplus, HeadKinds, IntervalHead, RnnParams, SizeHead};
use crate::distributions::ln_rising;
use crate::series::SizeIntervalSeries;
use crate::{Error, Result};

/// Issue-point sequence in the form the trainer consumes. Intervals are
/// reals so continuous-time gaps fit the same container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSeries {
    intervals: Vec<f64>,
    sizes: Vec<u64>,
}

impl TrainSeries {
    pub fn new(intervals: Vec<f64>, sizes: Vec<u64>) -> Result<Self> {
        if intervals.len() != sizes.len() {
            return Err(Error::InvalidData(format!(
                "{} intervals but {} sizes",
                intervals.len(),
                sizes.len()
            )));
        }
        if intervals.iter().any(|&q| !(q > 0.0 && q.is_finite())) {
            return Err(Error::InvalidData("intervals must be positive and finite".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidData("sizes must be >= 1".into()));
        }
        Ok(Self { intervals, sizes })
    }

    pub fn intervals(&self) -> &[f64] {
        &self.intervals
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Total order used to make full-batch training independent of input order.
    pub(crate) fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.intervals
            .iter()
            .map(|q| q.to_bits())
            .cmp(other.intervals.iter().map(|q| q.to_bits()))
            .then_with(|| self.sizes.cmp(&other.sizes))
    }
}

impl From<&SizeIntervalSeries> for TrainSeries {
    fn from(si: &SizeIntervalSeries) -> Self {
        Self {
            intervals: si.intervals().iter().map(|&q| q as f64).collect(),
            sizes: si.sizes().to_vec(),
        }
    }
}

/// `ψ(r + x) − ψ(r)`.
fn digamma_diff(r: f64, x: u64) -> f64 {
    if x <= 64 {
        (0..x).map(|j| 1.0 / (r + j as f64)).sum()
    } else {
        digamma(r + x as f64) - digamma(r)
    }
}

/// `ln s` for `s = softplus(z)`, accurate when `s` underflows.
fn ln_softplus(z: f64) -> f64 {
    if z < -30.0 {
        z
    } else {
        softplus(z).ln()
    }
}

/// Log-likelihood term with derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    value: f64,
    /// Derivative with respect to the head pre-activation.
    d_pre: f64,
    /// Derivative with respect to the dispersion parameter `θ`.
    d_theta: f64,
}

/// Shifted count `k ≥ 1` with mean `1 + softplus(z)`; `theta` is used by the
/// negative binomial only.
fn count_term(k: u64, z: f64, theta: Option<f64>, poisson: bool) -> Term {
    let x = (k - 1) as f64;
    let s = softplus(z).max(f64::MIN_POSITIVE);
    let ln_s = ln_softplus(z);
    let ds_dz = sigmoid(z);
    match (theta, poisson) {
        (None, true) => {
            let value = x * ln_s - s - ln_gamma(k as f64);
            Term {
                value,
                d_pre: (x / s - 1.0) * ds_dz,
                d_theta: 0.0,
            }
        }
        (None, false) => {
            // geometric with success probability 1 / (1 + s)
            let value = x * ln_s - (x + 1.0) * s.ln_1p();
            Term {
                value,
                d_pre: (x / s - (x + 1.0) / (1.0 + s)) * ds_dz,
                d_theta: 0.0,
            }
        }
        (Some(theta), _) => {
            let d = softplus(theta).max(f64::MIN_POSITIVE);
            let ln_d = ln_softplus(theta);
            let ln_1d = d.ln_1p();
            let r = s / d;
            let xi = k - 1;
            let value = ln_rising(r, xi) - ln_gamma(k as f64) - r * ln_1d + x * (ln_d - ln_1d);
            let d_r = digamma_diff(r, xi) - ln_1d;
            let d_s = d_r / d;
            let d_d = -d_r * r / d - r / (1.0 + d) + x / (d * (1.0 + d));
            Term {
                value,
                d_pre: d_s * ds_dz,
                d_theta: d_d * sigmoid(theta),
            }
        }
    }
}

/// Exponential gap `x > 0` with mean `softplus(z)`.
fn exponential_term(x: f64, z: f64) -> Term {
    let mu = softplus(z).max(f64::MIN_POSITIVE);
    let value = -ln_softplus(z) - x / mu;
    Term {
        value,
        d_pre: (-1.0 / mu + x / (mu * mu)) * sigmoid(z),
        d_theta: 0.0,
    }
}

fn interval_term(params: &RnnParams, heads: HeadKinds, q: f64, z: f64) -> Term {
    match heads.interval {
        IntervalHead::Exponential => exponential_term(q, z),
        IntervalHead::Geometric => count_term(q as u64, z, None, false),
        IntervalHead::NegBin => count_term(q as u64, z, Some(params.as_flat()[params.layout().disp_q]), false),
    }
}

fn size_term(params: &RnnParams, heads: HeadKinds, m: u64, z: f64) -> Term {
    match heads.size {
        SizeHead::Poisson => count_term(m, z, None, true),
        SizeHead::NegBin => count_term(m, z, Some(params.as_flat()[params.layout().disp_m]), false),
    }
}

fn check_series(heads: HeadKinds, s: &TrainSeries) -> Result<()> {
    if heads.interval != IntervalHead::Exponential && s.intervals.iter().any(|&q| q < 1.0 || q.fract() != 0.0) {
        return Err(Error::InvalidData(
            "count interval heads need integer intervals >= 1".into(),
        ));
    }
    Ok(())
}

/// Negative log-likelihood of one sequence, without gradients.
pub fn sequence_nll(params: &RnnParams, heads: HeadKinds, series: &TrainSeries) -> Result<f64> {
    check_series(heads, series)?;
    Ok(run(params, heads, series, None))
}

/// Summed negative log-likelihood over `batch` and its gradient in flat order.
pub fn nll_and_gradient(params: &RnnParams, heads: HeadKinds, batch: &[TrainSeries]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for s in batch {
        check_series(heads, s)?;
        total += run(params, heads, s, Some(&mut grad));
    }
    Ok((total, grad))
}

/// Per-series loss and gradient; used by the parallel trainer.
pub(crate) fn series_loss_grad(params: &RnnParams, heads: HeadKinds, s: &TrainSeries) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let loss = run(params, heads, s, Some(&mut grad));
    (loss, grad)
}

pub(crate) fn validate_batch(heads: HeadKinds, batch: &[TrainSeries]) -> Result<()> {
    batch.iter().try_for_each(|s| check_series(heads, s))
}

/// Forward pass, plus the backward pass when `grad` is given.
fn run(params: &RnnParams, heads: HeadKinds, s: &TrainSeries, grad: Option<&mut [f64]>) -> f64 {
    let theta = params.as_flat();
    let lay = params.layout();
    let width = params.hidden_width();
    let n_layers = lay.layers.len();
    let mut caches: Vec<Vec<StepCache>> = Vec::with_capacity(s.len());
    let mut terms: Vec<(Term, Term)> = Vec::with_capacity(s.len());
    let mut h: Vec<Vec<f64>> = vec![vec![0.0; width]; n_layers];
    let mut c: Vec<Vec<f64>> = vec![vec![0.0; width]; n_layers];
    let mut prev = (0.0, 0.0);
    let mut nll = 0.0;
    for (&q, &m) in s.intervals.iter().zip(&s.sizes) {
        let mut x = encode_input(prev.0, prev.1).to_vec();
        let mut step = Vec::with_capacity(n_layers);
        for (l, layout) in lay.layers.iter().enumerate() {
            let cache = forward(theta, layout, width, &x, &h[l], &c[l]);
            h[l].clone_from(&cache.h);
            c[l].clone_from(&cache.c);
            x.clone_from(&cache.h);
            step.push(cache);
        }
        let top = &h[n_layers - 1];
        let tq = interval_term(params, heads, q, params.interval_preactivation(top));
        let tm = size_term(params, heads, m, params.size_preactivation(top));
        nll -= tq.value + tm.value;
        terms.push((tq, tm));
        caches.push(step);
        prev = (q, m as f64);
    }
    let Some(grad) = grad else {
        return nll;
    };

    let mut dh_next: Vec<Vec<f64>> = vec![vec![0.0; width]; n_layers];
    let mut dc_next: Vec<Vec<f64>> = vec![vec![0.0; width]; n_layers];
    for (step, (tq, tm)) in caches.iter().zip(&terms).rev() {
        let top = &step[n_layers - 1].h;
        // loss is the negative log-likelihood
        let (gq, gm) = (-tq.d_pre, -tm.d_pre);
        grad[lay.disp_q] -= tq.d_theta;
        grad[lay.disp_m] -= tm.d_theta;
        let mut dh = dh_next[n_layers - 1].clone();
        for k in 0..width {
            grad[lay.head_q + k] += gq * top[k];
            grad[lay.head_m + k] += gm * top[k];
            dh[k] += gq * theta[lay.head_q + k] + gm * theta[lay.head_m + k];
        }
        grad[lay.head_q + width] += gq;
        grad[lay.head_m + width] += gm;
        for l in (0..n_layers).rev() {
            let out = backward(theta, grad, &lay.layers[l], width, &step[l], &dh, &dc_next[l]);
            dh_next[l] = out.dh_prev;
            dc_next[l] = out.dc_prev;
            if l > 0 {
                dh = dh_next[l - 1].iter().zip(&out.dx).map(|(a, b)| a + b).collect();
            }
        }
    }
    nll
}
