//! LSTM cell: forward step and the backward pass through one step.
//!
//! Gate rows are ordered input, forget, candidate, output.

use serde::{Deserialize, Serialize};

use super::{sigmoid, LayerLayout, RnnParams};
use crate::{Error, Result};

/// Hidden and cell vectors of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RnnState {
    pub fn zeros(width: usize) -> Self {
        Self {
            hidden: vec![0.0; width],
            cell: vec![0.0; width],
        }
    }

    fn is_finite(&self) -> bool {
        self.hidden.iter().chain(&self.cell).all(|x| x.is_finite())
    }
}

/// States of every layer of a stacked network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub layers: Vec<RnnState>,
}

impl NetworkState {
    pub fn zeros(params: &RnnParams) -> Self {
        Self {
            layers: (0..params.num_layers())
                .map(|_| RnnState::zeros(params.hidden_width()))
                .collect(),
        }
    }

    /// Hidden vector of the top layer, which feeds the heads.
    pub fn top_hidden(&self) -> &[f64] {
        &self.layers.last().expect("at least one layer").hidden
    }

    /// Advances every layer by one step.
    pub fn step(&self, params: &RnnParams, input: &[f64]) -> Result<Self> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (l, state) in self.layers.iter().enumerate() {
            let next = layer_step(params, l, state, &x)?;
            x.clone_from(&next.hidden);
            layers.push(next);
        }
        Ok(Self { layers })
    }
}

/// One step of the first LSTM layer.
pub fn lstm_step(params: &RnnParams, state: &RnnState, input: &[f64]) -> Result<RnnState> {
    layer_step(params, 0, state, input)
}

fn layer_step(params: &RnnParams, layer: usize, state: &RnnState, input: &[f64]) -> Result<RnnState> {
    let lay = params.layout().layers[layer];
    if input.len() != lay.input_dim || state.hidden.len() != params.hidden_width() {
        return Err(Error::ShapeMismatch(format!(
            "layer {layer} expects input {} and width {}",
            lay.input_dim,
            params.hidden_width()
        )));
    }
    if input.iter().any(|x| !x.is_finite()) || !state.is_finite() {
        return Err(Error::Domain("LSTM input and state must be finite".into()));
    }
    let cache = forward(
        params.as_flat(),
        &lay,
        params.hidden_width(),
        input,
        &state.hidden,
        &state.cell,
    );
    let next = RnnState {
        hidden: cache.h,
        cell: cache.c,
    };
    if !next.is_finite() {
        return Err(Error::Domain(format!("LSTM layer {layer} produced a non-finite state")));
    }
    Ok(next)
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tc: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn forward(
    theta: &[f64],
    lay: &LayerLayout,
    width: usize,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> StepCache {
    let din = lay.input_dim;
    let mut pre = theta[lay.bias..lay.bias + 4 * width].to_vec();
    for (r, a) in pre.iter_mut().enumerate() {
        let wx = &theta[lay.w_x + r * din..lay.w_x + (r + 1) * din];
        let wh = &theta[lay.w_h + r * width..lay.w_h + (r + 1) * width];
        *a += super::dot(wx, x) + super::dot(wh, h_prev);
    }
    let i: Vec<f64> = pre[..width].iter().map(|&a| sigmoid(a)).collect();
    let f: Vec<f64> = pre[width..2 * width].iter().map(|&a| sigmoid(a)).collect();
    let g: Vec<f64> = pre[2 * width..3 * width].iter().map(|&a| a.tanh()).collect();
    let o: Vec<f64> = pre[3 * width..].iter().map(|&a| sigmoid(a)).collect();
    let c: Vec<f64> = (0..width).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..width).map(|k| o[k] * tc[k]).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c,
        tc,
        h,
    }
}

/// Gradients flowing out of one backward step.
pub(crate) struct StepGrad {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Backward pass through one step; parameter gradients accumulate in `grad`.
pub(crate) fn backward(
    theta: &[f64],
    grad: &mut [f64],
    lay: &LayerLayout,
    width: usize,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
) -> StepGrad {
    let din = lay.input_dim;
    let mut da = vec![0.0; 4 * width];
    let mut dc_prev = vec![0.0; width];
    for k in 0..width {
        let d_o = dh[k] * cache.tc[k];
        let dct = dc[k] + dh[k] * cache.o[k] * (1.0 - cache.tc[k] * cache.tc[k]);
        let d_i = dct * cache.g[k];
        let d_g = dct * cache.i[k];
        let d_f = dct * cache.c_prev[k];
        dc_prev[k] = dct * cache.f[k];
        da[k] = d_i * cache.i[k] * (1.0 - cache.i[k]);
        da[width + k] = d_f * cache.f[k] * (1.0 - cache.f[k]);
        da[2 * width + k] = d_g * (1.0 - cache.g[k] * cache.g[k]);
        da[3 * width + k] = d_o * cache.o[k] * (1.0 - cache.o[k]);
    }
    let mut dx = vec![0.0; din];
    let mut dh_prev = vec![0.0; width];
    for (r, &a) in da.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let rx = lay.w_x + r * din;
        for j in 0..din {
            grad[rx + j] += a * cache.x[j];
            dx[j] += a * theta[rx + j];
        }
        let rh = lay.w_h + r * width;
        for j in 0..width {
            grad[rh + j] += a * cache.h_prev[j];
            dh_prev[j] += a * theta[rh + j];
        }
        grad[lay.bias + r] += a;
    }
    StepGrad { dx, dh_prev, dc_prev }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{RnnShape, INPUT_DIM};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar reference: one unit at a time, straight from the gate equations.
    fn reference(p: &RnnParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = p.hidden_width();
        let lay = p.layout().layers[0];
        let t = p.as_flat();
        let gate = |r: usize| {
            let mut a = t[lay.bias + r];
            for j in 0..INPUT_DIM {
                a += t[lay.w_x + r * INPUT_DIM + j] * x[j];
            }
            for j in 0..w {
                a += t[lay.w_h + r * w + j] * h[j];
            }
            a
        };
        let mut hn = Vec::new();
        let mut cn = Vec::new();
        for k in 0..w {
            let ig = sig(gate(k));
            let fg = sig(gate(w + k));
            let gg = gate(2 * w + k).tanh();
            let og = sig(gate(3 * w + k));
            let cell = fg * c[k] + ig * gg;
            cn.push(cell);
            hn.push(og * cell.tanh());
        }
        (hn, cn)
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let p = RnnParams::zeros(RnnShape::new(4, 1).unwrap());
        let s = lstm_step(&p, &RnnState::zeros(4), &[3.0, -7.5]).unwrap();
        assert_eq!(s.hidden, vec![0.0; 4]);
        assert_eq!(s.cell, vec![0.0; 4]);
    }

    #[test]
    fn matches_scalar_reference() {
        let p = RnnParams::init(RnnShape::new(3, 1).unwrap(), 11);
        let s0 = RnnState::zeros(3);
        let s1 = lstm_step(&p, &s0, &[0.0, 0.0]).unwrap();
        let (h, c) = reference(&p, &[0.0, 0.0], &s0.hidden, &s0.cell);
        for k in 0..3 {
            assert_abs_diff_eq!(s1.hidden[k], h[k], epsilon = 1e-15);
            assert_abs_diff_eq!(s1.cell[k], c[k], epsilon = 1e-15);
        }
        let x = [1.6, 2.4];
        let s2 = lstm_step(&p, &s1, &x).unwrap();
        let (h, c) = reference(&p, &x, &s1.hidden, &s1.cell);
        for k in 0..3 {
            assert_abs_diff_eq!(s2.hidden[k], h[k], epsilon = 1e-15);
            assert_abs_diff_eq!(s2.cell[k], c[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn step_is_pure() {
        let p = RnnParams::init(RnnShape::new(5, 2).unwrap(), 2);
        let s = NetworkState::zeros(&p);
        let a = s.step(&p, &[1.0, 2.0]).unwrap();
        let b = s.step(&p, &[1.0, 2.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers.len(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        let p = RnnParams::init(RnnShape::new(2, 1).unwrap(), 2);
        assert!(lstm_step(&p, &RnnState::zeros(2), &[f64::NAN, 0.0]).is_err());
        assert!(lstm_step(&p, &RnnState::zeros(2), &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn hidden_stays_in_open_unit_interval(seed in 0u64..1000, a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let p = RnnParams::init(RnnShape::new(3, 1).unwrap(), seed);
            let mut s = RnnState::zeros(3);
            for _ in 0..5 {
                s = lstm_step(&p, &s, &[a, b]).unwrap();
                prop_assert!(s.hidden.iter().all(|h| h.abs() < 1.0));
            }
        }
    }
}
