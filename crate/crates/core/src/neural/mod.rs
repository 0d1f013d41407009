//! A small recurrent core written from scratch.
//!
//! An LSTM reads the previous interdemand time and demand size, both passed
//! through `ln(1 + x)`, and two affine heads map its top hidden state to the
//! conditional means of the next interval and size. Count means go through
//! `1 + softplus`, so they always exceed 1; the exponential interval head uses
//! a plain softplus. Negative binomial dispersions are global scalars
//! `ν = 1 + softplus(θ)`.
//!
//! Step `i` is predicted from the state after reading step `i − 1`; the first
//! step reads the input `(0, 0)`.
//!
//! All weights live in one flat vector so the optimiser, the gradient check
//! and the checkpoint code can treat them uniformly.

mod checkpoint;
mod likelihood;
mod lstm;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use likelihood::{nll_and_gradient, sequence_nll, TrainSeries};
pub use lstm::{lstm_step, NetworkState, RnnState};
pub use train::{
    compare_gradients, gradient_check, numeric_gradient, train_global, GradientReport, TrainConfig, TrainOutcome,
    GRADIENT_DENOM_FLOOR,
};

/// Width of the LSTM input: transformed previous interval and size.
pub const INPUT_DIM: usize = 2;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Conditional mean `1 + softplus(w·h + w0)` of a count head.
pub fn project_mean(w: &[f64], w0: f64, hidden: &[f64]) -> f64 {
    1.0 + softplus(dot(w, hidden) + w0)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// LSTM input for the previous interval and size.
pub fn encode_input(prev_interval: f64, prev_size: f64) -> [f64; INPUT_DIM] {
    [prev_interval.ln_1p(), prev_size.ln_1p()]
}

/// Likelihood attached to the interval head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalHead {
    Geometric,
    NegBin,
    /// Continuous gaps with mean `softplus(w·h + w0)`.
    Exponential,
}

/// Likelihood attached to the size head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeHead {
    Poisson,
    NegBin,
}

/// The pair of head likelihoods a network is trained under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadKinds {
    pub interval: IntervalHead,
    pub size: SizeHead,
}

impl HeadKinds {
    pub fn new(interval: IntervalHead, size: SizeHead) -> Self {
        Self { interval, size }
    }
}

/// Offsets of one LSTM layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerLayout {
    pub input_dim: usize,
    pub w_x: usize,
    pub w_h: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub hidden: usize,
    pub layers: Vec<LayerLayout>,
    pub head_q: usize,
    pub head_m: usize,
    pub disp_q: usize,
    pub disp_m: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(hidden: usize, num_layers: usize) -> Self {
        let g = 4 * hidden;
        let mut at = 0;
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let input_dim = if l == 0 { INPUT_DIM } else { hidden };
            let w_x = at;
            let w_h = w_x + g * input_dim;
            let bias = w_h + g * hidden;
            at = bias + g;
            layers.push(LayerLayout {
                input_dim,
                w_x,
                w_h,
                bias,
            });
        }
        let head_q = at;
        let head_m = head_q + hidden + 1;
        let disp_q = head_m + hidden + 1;
        let disp_m = disp_q + 1;
        Self {
            hidden,
            layers,
            head_q,
            head_m,
            disp_q,
            disp_m,
            len: disp_m + 1,
        }
    }
}

/// Architecture of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnShape {
    pub hidden_width: usize,
    pub num_layers: usize,
}

impl RnnShape {
    pub fn new(hidden_width: usize, num_layers: usize) -> Result<Self> {
        if hidden_width == 0 || num_layers == 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden width and layer count must be >= 1, got {hidden_width} and {num_layers}"
            )));
        }
        Ok(Self {
            hidden_width,
            num_layers,
        })
    }
}

/// LSTM weights, the two mean heads and the two dispersion scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct RnnParams {
    shape: RnnShape,
    layout: Layout,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    shape: RnnShape,
    data: Vec<f64>,
}

impl From<RnnParams> for RawParams {
    fn from(p: RnnParams) -> Self {
        RawParams {
            shape: p.shape,
            data: p.data,
        }
    }
}

impl TryFrom<RawParams> for RnnParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        RnnParams::from_flat(raw.shape, raw.data)
    }
}

impl RnnParams {
    /// All-zero parameters.
    pub fn zeros(shape: RnnShape) -> Self {
        let layout = Layout::new(shape.hidden_width, shape.num_layers);
        let data = vec![0.0; layout.len];
        Self { shape, layout, data }
    }

    /// Seeded initialisation: LSTM and head weights uniform on `±1/√H`,
    /// head biases 0 and dispersions at `ν = 2`.
    pub fn init(shape: RnnShape, seed: u64) -> Self {
        let mut p = Self::zeros(shape);
        let bound = 1.0 / (shape.hidden_width as f64).sqrt();
        let mut rng = crate::rng::stream(seed, 0);
        let head_end = p.layout.disp_q;
        for x in &mut p.data[..head_end] {
            *x = rng.random_range(-bound..bound);
        }
        let (hq, hm) = (p.layout.head_q, p.layout.head_m);
        let h = shape.hidden_width;
        p.data[hq + h] = 0.0;
        p.data[hm + h] = 0.0;
        let theta = inverse_softplus(1.0);
        p.data[p.layout.disp_q] = theta;
        p.data[p.layout.disp_m] = theta;
        p
    }

    /// Rebuilds parameters from a flat vector in the internal order.
    pub fn from_flat(shape: RnnShape, data: Vec<f64>) -> Result<Self> {
        let shape = RnnShape::new(shape.hidden_width, shape.num_layers)?;
        let layout = Layout::new(shape.hidden_width, shape.num_layers);
        if data.len() != layout.len {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                layout.len,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidData("parameters must be finite".into()));
        }
        Ok(Self { shape, layout, data })
    }

    pub fn shape(&self) -> RnnShape {
        self.shape
    }

    pub fn hidden_width(&self) -> usize {
        self.shape.hidden_width
    }

    pub fn num_layers(&self) -> usize {
        self.shape.num_layers
    }

    /// Flat view of every parameter.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Index of the interval-head bias in the flat vector.
    pub fn interval_bias_index(&self) -> usize {
        self.layout.head_q + self.shape.hidden_width
    }

    /// Index of the size-head bias in the flat vector.
    pub fn size_bias_index(&self) -> usize {
        self.layout.head_m + self.shape.hidden_width
    }

    /// Index of the interval dispersion scalar.
    pub fn interval_dispersion_index(&self) -> usize {
        self.layout.disp_q
    }

    /// Index of the size dispersion scalar.
    pub fn size_dispersion_index(&self) -> usize {
        self.layout.disp_m
    }

    /// `(w, w0)` of the interval head.
    pub fn interval_head(&self) -> (&[f64], f64) {
        let h = self.shape.hidden_width;
        let at = self.layout.head_q;
        (&self.data[at..at + h], self.data[at + h])
    }

    /// `(w, w0)` of the size head.
    pub fn size_head(&self) -> (&[f64], f64) {
        let h = self.shape.hidden_width;
        let at = self.layout.head_m;
        (&self.data[at..at + h], self.data[at + h])
    }

    /// Interval dispersion `ν_q`.
    pub fn nu_q(&self) -> f64 {
        1.0 + softplus(self.data[self.layout.disp_q])
    }

    /// Size dispersion `ν_m`.
    pub fn nu_m(&self) -> f64 {
        1.0 + softplus(self.data[self.layout.disp_m])
    }

    /// Pre-activation of the interval head.
    pub fn interval_preactivation(&self, hidden: &[f64]) -> f64 {
        let (w, w0) = self.interval_head();
        dot(w, hidden) + w0
    }

    /// Pre-activation of the size head.
    pub fn size_preactivation(&self, hidden: &[f64]) -> f64 {
        let (w, w0) = self.size_head();
        dot(w, hidden) + w0
    }

    /// Conditional interval mean for the given head kind.
    pub fn interval_mean(&self, hidden: &[f64], kind: IntervalHead) -> f64 {
        let z = self.interval_preactivation(hidden);
        match kind {
            IntervalHead::Exponential => softplus(z),
            IntervalHead::Geometric | IntervalHead::NegBin => 1.0 + softplus(z),
        }
    }

    /// Conditional size mean.
    pub fn size_mean(&self, hidden: &[f64]) -> f64 {
        1.0 + softplus(self.size_preactivation(hidden))
    }

    /// Points both head biases at the pooled means of `data`, so training
    /// starts from the static fit.
    pub fn init_head_biases(&mut self, data: &[TrainSeries], heads: HeadKinds) {
        let (mut q_sum, mut m_sum, mut n) = (0.0, 0.0, 0usize);
        for s in data {
            q_sum += s.intervals().iter().sum::<f64>();
            m_sum += s.sizes().iter().map(|&m| m as f64).sum::<f64>();
            n += s.len();
        }
        if n == 0 {
            return;
        }
        let (q_mean, m_mean) = (q_sum / n as f64, m_sum / n as f64);
        let q_target = match heads.interval {
            IntervalHead::Exponential => q_mean,
            _ => q_mean - 1.0,
        };
        let qi = self.interval_bias_index();
        let mi = self.size_bias_index();
        self.data[qi] = inverse_softplus(q_target.max(1e-3));
        self.data[mi] = inverse_softplus((m_mean - 1.0).max(1e-3));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn project_mean_examples() {
        let h = [0.3, -2.0, 5.0];
        assert_abs_diff_eq!(project_mean(&[0.0; 3], 0.0, &h), 1.0 + 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(project_mean(&[0.0; 3], 0.0, &h), 1.693147, epsilon = 1e-6);
        let low = project_mean(&[0.0; 3], -40.0, &h);
        // the excess over 1 is below f64 resolution at this pre-activation
        assert_abs_diff_eq!(low, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(softplus(-40.0), 4.248354255291589e-18, epsilon = 1e-30);
        // 1 + ln(1 + e^10), evaluated at 50 digits
        assert_abs_diff_eq!(project_mean(&[0.0; 3], 10.0, &h), 11.000045398899218, epsilon = 1e-12);
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        for y in [1e-6, 0.5, 1.0, 7.0, 45.0] {
            assert_abs_diff_eq!(softplus(inverse_softplus(y)), y, epsilon = 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn layout_is_contiguous() {
        let l = Layout::new(3, 2);
        assert_eq!(l.layers[0].w_x, 0);
        assert_eq!(l.layers[0].w_h, 12 * 2);
        assert_eq!(l.layers[1].w_x, 12 * 2 + 12 * 3 + 12);
        assert_eq!(l.layers[1].input_dim, 3);
        assert_eq!(l.len, (12 * 2 + 12 * 3 + 12) + (12 * 3 + 12 * 3 + 12) + 2 * 4 + 2);
    }

    #[test]
    fn init_is_seeded() {
        let shape = RnnShape::new(4, 1).unwrap();
        assert_eq!(RnnParams::init(shape, 3), RnnParams::init(shape, 3));
        assert_ne!(RnnParams::init(shape, 3), RnnParams::init(shape, 4));
        assert_abs_diff_eq!(RnnParams::init(shape, 3).nu_q(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn flat_roundtrip_validates() {
        let shape = RnnShape::new(2, 1).unwrap();
        let p = RnnParams::init(shape, 1);
        assert_eq!(RnnParams::from_flat(shape, p.as_flat().to_vec()).unwrap(), p);
        assert!(RnnParams::from_flat(shape, vec![0.0; 3]).is_err());
        let mut bad = p.as_flat().to_vec();
        bad[0] = f64::NAN;
        assert!(RnnParams::from_flat(shape, bad).is_err());
        assert!(RnnShape::new(0, 1).is_err());
    }

    proptest! {
        #[test]
        fn project_mean_exceeds_one_and_increases(w0 in -20.0f64..30.0, d in 1e-3f64..5.0) {
            let h = [0.1, 0.2];
            let w = [0.5, -0.5];
            let a = project_mean(&w, w0, &h);
            let b = project_mean(&w, w0 + d, &h);
            prop_assert!(a > 1.0);
            prop_assert!(b > a);
        }
    }
}
