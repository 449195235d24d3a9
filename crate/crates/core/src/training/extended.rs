//! Double-double loss evaluation for the finite-difference side of gradient
//! checks. A central difference with step `h` amplifies loss roundoff by
//! `1/h`; evaluating in roughly 32 significant digits keeps that term far
//! below the truncation error.

use twofloat::TwoFloat as X;

use super::batch::Batch;
use crate::cells::{Affine, CellParams, Gate};
use crate::error::Result;
use crate::network::{NetworkConfig, NetworkParams, Variant};
use crate::numerics::Matrix;

const ZERO: X = X::from_f64(0.0);
const ONE: X = X::from_f64(1.0);

fn lift(v: &[f64]) -> Vec<X> {
    v.iter().map(|&x| X::from(x)).collect()
}

struct XMatrix {
    cols: usize,
    data: Vec<X>,
}

impl XMatrix {
    fn new(m: &Matrix) -> Self {
        Self {
            cols: m.cols(),
            data: lift(m.as_slice()),
        }
    }

    fn matvec(&self, v: &[X]) -> Vec<X> {
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).fold(ZERO, |acc, (a, b)| acc + *a * *b))
            .collect()
    }
}

struct XAffine {
    w_input: XMatrix,
    w_recurrent: Option<XMatrix>,
    bias: Vec<X>,
}

impl XAffine {
    fn new(a: &Affine) -> Self {
        Self {
            w_input: XMatrix::new(&a.w_input),
            w_recurrent: a.w_recurrent.as_ref().map(XMatrix::new),
            bias: lift(&a.bias),
        }
    }

    fn apply(&self, x: &[X], r: &[X], peep: Option<(&[X], &[X])>) -> Vec<X> {
        let mut out = self.w_input.matvec(x);
        if let Some(w) = &self.w_recurrent {
            for (o, v) in out.iter_mut().zip(w.matvec(r)) {
                *o += v;
            }
        }
        if let Some((p, s)) = peep {
            for ((o, p), s) in out.iter_mut().zip(p).zip(s) {
                *o += *p * *s;
            }
        }
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += *b;
        }
        out
    }

    fn elements_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [X]>) {
        out.push(&mut self.w_input.data);
        if let Some(w) = &mut self.w_recurrent {
            out.push(&mut w.data);
        }
        out.push(&mut self.bias);
    }
}

// `TwoFloat` addition and multiplication are accurate to double-double
// precision; its division and transcendental functions are not, so those are
// provided here.

const LN_2_HI: f64 = std::f64::consts::LN_2;
const LN_2_LO: f64 = 2.319_046_813_846_299_6e-17;

fn div(a: X, b: X) -> X {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    X::from(q1) + q2 + q3
}

fn exp(x: X) -> X {
    if x.hi() < -745.0 {
        return ZERO;
    }
    let k = (x.hi() / LN_2_HI).round();
    let r = x - X::from(LN_2_HI) * k - X::from(LN_2_LO) * k;
    // expm1 of r/1024 by Taylor series, then undo the scaling with
    // s ← 2s + s² ten times.
    let t = r * (1.0 / 1024.0);
    let mut term = t;
    let mut s = t;
    for n in 2..=12 {
        term = div(term * t, X::from(n as f64));
        s += term;
    }
    for _ in 0..10 {
        s = s * 2.0 + s * s;
    }
    let scale = 2f64.powi(k as i32);
    (s + 1.0) * scale
}

fn ln(x: X) -> X {
    let mut y = X::from(x.hi().ln());
    for _ in 0..2 {
        y = y + x * exp(-y) - 1.0;
    }
    y
}

fn sigmoid(a: X) -> X {
    if a >= 0.0 {
        div(ONE, ONE + exp(-a))
    } else {
        let e = exp(a);
        div(e, ONE + e)
    }
}

fn tanh(a: X) -> X {
    let t = exp(-2.0 * a.abs());
    let v = div(ONE - t, ONE + t);
    if a < 0.0 {
        -v
    } else {
        v
    }
}

enum XGate {
    Dense(XAffine, Option<Vec<X>>),
    Factorized(XAffine, XAffine),
}

impl XGate {
    fn new(g: &Gate) -> Self {
        match g {
            Gate::Dense(g) => XGate::Dense(XAffine::new(&g.affine), g.peephole.as_deref().map(lift)),
            Gate::Factorized(g) => XGate::Factorized(XAffine::new(&g.acute), XAffine::new(&g.grave)),
        }
    }

    fn value(&self, x: &[X], r: &[X], state: &[X]) -> Vec<X> {
        match self {
            XGate::Dense(a, p) => a
                .apply(x, r, p.as_deref().map(|p| (p, state)))
                .into_iter()
                .map(sigmoid)
                .collect(),
            XGate::Factorized(acute, grave) => {
                let a: Vec<X> = acute.apply(x, r, None).into_iter().map(sigmoid).collect();
                let b: Vec<X> = grave.apply(x, r, None).into_iter().map(sigmoid).collect();
                a.iter().flat_map(|ai| b.iter().map(move |bj| (*ai * *bj).sqrt())).collect()
            }
        }
    }

    fn elements_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [X]>) {
        match self {
            XGate::Dense(a, p) => {
                a.elements_mut(out);
                if let Some(p) = p {
                    out.push(p);
                }
            }
            XGate::Factorized(a, b) => {
                a.elements_mut(out);
                b.elements_mut(out);
            }
        }
    }
}

struct XCell {
    input: XGate,
    forget: XGate,
    output: XGate,
    candidate: XAffine,
    projection: XMatrix,
}

impl XCell {
    fn new(c: &CellParams) -> Self {
        Self {
            input: XGate::new(&c.input_gate),
            forget: XGate::new(&c.forget_gate),
            output: XGate::new(&c.output_gate),
            candidate: XAffine::new(&c.candidate),
            projection: XMatrix::new(&c.projection),
        }
    }

    /// Returns `(c, h)`.
    fn step(&self, x: &[X], r: &[X], prev_c: &[X]) -> (Vec<X>, Vec<X>) {
        let i = self.input.value(x, r, prev_c);
        let f = self.forget.value(x, r, prev_c);
        let z: Vec<X> = self.candidate.apply(x, r, None).into_iter().map(tanh).collect();
        let c: Vec<X> = (0..z.len()).map(|n| f[n] * prev_c[n] + i[n] * z[n]).collect();
        let o = self.output.value(x, r, &c);
        let y: Vec<X> = o.iter().zip(&c).map(|(o, c)| *o * tanh(*c)).collect();
        let h = self.projection.matvec(&y);
        (c, h)
    }

    fn elements_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [X]>) {
        self.input.elements_mut(out);
        self.forget.elements_mut(out);
        self.output.elements_mut(out);
        self.candidate.elements_mut(out);
        out.push(&mut self.projection.data);
    }
}

/// A network lifted to double-double arithmetic.
pub(crate) struct ExtendedNetwork {
    time: Vec<XCell>,
    layer: Vec<XCell>,
    output_weights: XMatrix,
    output_bias: Vec<X>,
}

impl ExtendedNetwork {
    pub(crate) fn new(params: &NetworkParams) -> Self {
        Self {
            time: params.time_cells.iter().map(XCell::new).collect(),
            layer: params.layer_cells.iter().map(XCell::new).collect(),
            output_weights: XMatrix::new(&params.output_weights),
            output_bias: lift(&params.output_bias),
        }
    }

    /// Element `index` in `NetworkParams` tensor order.
    pub(crate) fn element_mut(&mut self, mut index: usize) -> Option<&mut X> {
        let mut tensors = Vec::new();
        for c in &mut self.time {
            c.elements_mut(&mut tensors);
        }
        for c in &mut self.layer {
            c.elements_mut(&mut tensors);
        }
        tensors.push(&mut self.output_weights.data);
        tensors.push(&mut self.output_bias);
        for t in tensors {
            if index < t.len() {
                return Some(&mut t[index]);
            }
            index -= t.len();
        }
        None
    }

    fn sequence_logits(&self, config: &NetworkConfig, frames: &[Vec<f64>]) -> Vec<Vec<X>> {
        let layers = config.num_layers;
        let mut cs = vec![vec![ZERO; config.cell_dim]; layers];
        let mut hs = vec![vec![ZERO; config.proj_dim]; layers];
        let mut out = Vec::new();
        for s in frames.iter().step_by(config.frame_stride.max(1)) {
            let mut x = lift(s);
            let mut below: Option<(Vec<X>, Vec<X>)> = None;
            for l in 0..layers {
                if let Some((bx, bh)) = below.take() {
                    x = if config.residual_into(l) {
                        bx.iter().zip(&bh).map(|(a, b)| *a + *b).collect()
                    } else {
                        bh
                    };
                }
                let (c, h) = self.time[l].step(&x, &hs[l], &cs[l]);
                cs[l] = c;
                hs[l] = h.clone();
                below = Some((x.clone(), h));
            }
            let top = if config.variant == Variant::LayerTrajectory {
                let mut g = vec![ZERO; config.proj_dim];
                let mut m = vec![ZERO; config.cell_dim];
                for (cell, h_time) in self.layer.iter().zip(&hs) {
                    let (c, h) = cell.step(h_time, &g, &m);
                    m = c;
                    g = h;
                }
                g
            } else {
                hs[layers - 1].clone()
            };
            let mut logits = self.output_weights.matvec(&top);
            for (z, b) in logits.iter_mut().zip(&self.output_bias) {
                *z += *b;
            }
            out.push(logits);
        }
        out
    }

    /// Frame-pooled mean cross-entropy, as `batch_loss` computes it.
    pub(crate) fn batch_loss(&self, config: &NetworkConfig, batch: &Batch) -> Result<X> {
        let total = batch.compared_frames(config)?;
        if total == 0 {
            return Ok(ZERO);
        }
        let mut loss = ZERO;
        for s in &batch.sequences {
            let logits = self.sequence_logits(config, &s.frames);
            for (z, &label) in logits.iter().skip(config.target_delay).zip(&s.labels) {
                if label >= z.len() {
                    return Err(crate::Error::LabelOutOfRange {
                        label,
                        classes: z.len(),
                    });
                }
                let max = z.iter().copied().fold(z[0], |m, v| if v > m { v } else { m });
                let sum = z.iter().fold(ZERO, |acc, v| acc + exp(*v - max));
                loss += max + ln(sum) - z[label];
            }
        }
        Ok(div(loss, X::from(total as f64)))
    }
}
