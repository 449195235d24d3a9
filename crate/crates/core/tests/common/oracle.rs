//! Brute-force reference: plain index loops over the cell and network
//! equations, sharing no arithmetic code with the library.

#![allow(clippy::needless_range_loop)]

use ltlstm::cells::{Affine, CellParams, Gate};
use ltlstm::network::{NetworkConfig, NetworkParams, Variant};
use ltlstm::numerics::Matrix;

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.rows()];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, x) in v.iter().enumerate() {
            *o += m.get(i, j) * x;
        }
    }
    out
}

/// Row `n` of `W_x·x + W_r·r + b`.
fn affine_row(a: &Affine, x: &[f64], r: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for (j, xj) in x.iter().enumerate() {
        s += a.w_input.get(n, j) * xj;
    }
    if let Some(w) = &a.w_recurrent {
        for (j, rj) in r.iter().enumerate() {
            s += w.get(n, j) * rj;
        }
    }
    s + a.bias[n]
}

pub fn dense_gate(a: &Affine, peephole: Option<&[f64]>, x: &[f64], r: &[f64], state: &[f64]) -> Vec<f64> {
    (0..a.bias.len())
        .map(|n| {
            let peep = peephole.map_or(0.0, |p| p[n] * state[n]);
            sig(affine_row(a, x, r, n) + peep)
        })
        .collect()
}

pub fn factorized_gate(acute: &Affine, grave: &Affine, x: &[f64], r: &[f64]) -> Vec<f64> {
    let k = acute.bias.len();
    let mut out = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let ia = sig(affine_row(acute, x, r, a));
            let ib = sig(affine_row(grave, x, r, b));
            out[a * k + b] = (ia * ib).sqrt();
        }
    }
    out
}

fn gate(g: &Gate, x: &[f64], r: &[f64], state: &[f64]) -> Vec<f64> {
    match g {
        Gate::Dense(d) => dense_gate(&d.affine, d.peephole.as_deref(), x, r, state),
        Gate::Factorized(f) => factorized_gate(&f.acute, &f.grave, x, r),
    }
}

/// One cell step. Returns `(c, h)`.
pub fn cell(p: &CellParams, x: &[f64], r: &[f64], prev_c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = prev_c.len();
    let i = gate(&p.input_gate, x, r, prev_c);
    let f = gate(&p.forget_gate, x, r, prev_c);
    let mut c = vec![0.0; n];
    for k in 0..n {
        c[k] = f[k] * prev_c[k] + i[k] * affine_row(&p.candidate, x, r, k).tanh();
    }
    let o = gate(&p.output_gate, x, r, &c);
    let mut y = vec![0.0; n];
    for k in 0..n {
        y[k] = o[k] * c[k].tanh();
    }
    (c.clone(), mat_vec(&p.projection, &y))
}

#[derive(Debug, Clone)]
pub struct OracleFrame {
    pub time_c: Vec<Vec<f64>>,
    pub time_h: Vec<Vec<f64>>,
    pub layer_m: Vec<Vec<f64>>,
    pub layer_g: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// The whole unrolled network from zero state.
pub fn network(p: &NetworkParams, cfg: &NetworkConfig, frames: &[Vec<f64>]) -> Vec<OracleFrame> {
    let layers = cfg.num_layers;
    let mut c = vec![vec![0.0; cfg.cell_dim]; layers];
    let mut h = vec![vec![0.0; cfg.proj_dim]; layers];
    let mut out = Vec::new();
    let mut t = 0;
    while t < frames.len() {
        let mut xs: Vec<Vec<f64>> = Vec::new();
        for l in 0..layers {
            let x = if l == 0 {
                frames[t].clone()
            } else {
                let shortcut = cfg.variant == Variant::Residual && xs[l - 1].len() == h[l - 1].len();
                let mut v = h[l - 1].clone();
                if shortcut {
                    for (a, b) in v.iter_mut().zip(&xs[l - 1]) {
                        *a += b;
                    }
                }
                v
            };
            let (cn, hn) = cell(&p.time_cells[l], &x, &h[l], &c[l]);
            c[l] = cn;
            h[l] = hn;
            xs.push(x);
        }
        let mut layer_m = Vec::new();
        let mut layer_g = Vec::new();
        let top = if cfg.variant == Variant::LayerTrajectory {
            let mut m = vec![0.0; cfg.cell_dim];
            let mut g = vec![0.0; cfg.proj_dim];
            for l in 0..layers {
                let (mn, gn) = cell(&p.layer_cells[l], &h[l], &g, &m);
                m = mn;
                g = gn;
                layer_m.push(m.clone());
                layer_g.push(g.clone());
            }
            g
        } else {
            h[layers - 1].clone()
        };
        let mut logits = mat_vec(&p.output_weights, &top);
        for (z, b) in logits.iter_mut().zip(&p.output_bias) {
            *z += b;
        }
        out.push(OracleFrame {
            time_c: c.clone(),
            time_h: h.clone(),
            layer_m,
            layer_g,
            logits,
        });
        t += cfg.frame_stride;
    }
    out
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, zero when both vanish.
pub fn vec_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
