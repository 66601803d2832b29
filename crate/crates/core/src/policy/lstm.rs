//! Single-layer LSTM cell with manual forward/backward passes. Gate
//! layout in the packed weight rows is [input, forget, cell, output].

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    /// 4H x input, row-major.
    pub w_ih: Vec<f64>,
    /// 4H x H, row-major.
    pub w_hh: Vec<f64>,
    /// 4H.
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            input,
            hidden,
            w_ih: vec![0.0; 4 * hidden * input],
            w_hh: vec![0.0; 4 * hidden * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }
}

/// Cached activations of one forward step, enough to run the backward
/// pass without recomputation.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub gi: Vec<f64>,
    pub gf: Vec<f64>,
    pub gg: Vec<f64>,
    pub go: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn lstm_forward(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
    let hn = p.hidden;
    debug_assert_eq!(x.len(), p.input);
    debug_assert_eq!(h_prev.len(), hn);
    let mut pre = p.bias.clone();
    for r in 0..4 * hn {
        let wrow = &p.w_ih[r * p.input..(r + 1) * p.input];
        let urow = &p.w_hh[r * hn..(r + 1) * hn];
        let mut acc = 0.0;
        for (w, xv) in wrow.iter().zip(x) {
            acc += w * xv;
        }
        for (u, hv) in urow.iter().zip(h_prev) {
            acc += u * hv;
        }
        pre[r] += acc;
    }
    let mut gi = vec![0.0; hn];
    let mut gf = vec![0.0; hn];
    let mut gg = vec![0.0; hn];
    let mut go = vec![0.0; hn];
    for k in 0..hn {
        gi[k] = sigmoid(pre[k]);
        gf[k] = sigmoid(pre[hn + k]);
        gg[k] = pre[2 * hn + k].tanh();
        go[k] = sigmoid(pre[3 * hn + k]);
    }
    let mut c = vec![0.0; hn];
    let mut tanh_c = vec![0.0; hn];
    let mut h = vec![0.0; hn];
    for k in 0..hn {
        c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
        tanh_c[k] = c[k].tanh();
        h[k] = go[k] * tanh_c[k];
    }
    LstmStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gi,
        gf,
        gg,
        go,
        c,
        tanh_c,
        h,
    }
}

/// Gradient accumulators matching [`LstmParams`].
#[derive(Debug, Clone)]
pub struct LstmGrad {
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LstmGrad {
    pub fn zeros(p: &LstmParams) -> Self {
        LstmGrad {
            w_ih: vec![0.0; p.w_ih.len()],
            w_hh: vec![0.0; p.w_hh.len()],
            bias: vec![0.0; p.bias.len()],
        }
    }
}

/// Backward through one step. `dh`/`dc` are gradients flowing into this
/// step's outputs; returns (dh_prev, dc_prev) and writes dx into `dx`.
pub fn lstm_backward(
    p: &LstmParams,
    step: &LstmStep,
    dh: &[f64],
    dc_in: &[f64],
    grad: &mut LstmGrad,
    dx: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let hn = p.hidden;
    let mut dc = dc_in.to_vec();
    let mut dpre = vec![0.0; 4 * hn];
    for k in 0..hn {
        let do_ = dh[k] * step.tanh_c[k];
        dc[k] += dh[k] * step.go[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
        let di = dc[k] * step.gg[k];
        let df = dc[k] * step.c_prev[k];
        let dg = dc[k] * step.gi[k];
        dpre[k] = di * step.gi[k] * (1.0 - step.gi[k]);
        dpre[hn + k] = df * step.gf[k] * (1.0 - step.gf[k]);
        dpre[2 * hn + k] = dg * (1.0 - step.gg[k] * step.gg[k]);
        dpre[3 * hn + k] = do_ * step.go[k] * (1.0 - step.go[k]);
    }
    let mut dh_prev = vec![0.0; hn];
    let mut dc_prev = vec![0.0; hn];
    for k in 0..hn {
        dc_prev[k] = dc[k] * step.gf[k];
    }
    for v in dx.iter_mut() {
        *v = 0.0;
    }
    for r in 0..4 * hn {
        let d = dpre[r];
        if d == 0.0 {
            continue;
        }
        let wih_row = &mut grad.w_ih[r * p.input..(r + 1) * p.input];
        for (gw, xv) in wih_row.iter_mut().zip(&step.x) {
            *gw += d * xv;
        }
        let whh_row = &mut grad.w_hh[r * hn..(r + 1) * hn];
        for (gu, hv) in whh_row.iter_mut().zip(&step.h_prev) {
            *gu += d * hv;
        }
        grad.bias[r] += d;
        let w_row = &p.w_ih[r * p.input..(r + 1) * p.input];
        for (dxv, w) in dx.iter_mut().zip(w_row) {
            *dxv += d * w;
        }
        let u_row = &p.w_hh[r * hn..(r + 1) * hn];
        for (dhv, u) in dh_prev.iter_mut().zip(u_row) {
            *dhv += d * u;
        }
    }
    (dh_prev, dc_prev)
}
