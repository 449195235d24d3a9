//! Single-step LSTM kernels: the time cell, the layer (trajectory) cell, the
//! residual input rule and factorized gates.
//!
//! A time cell and a layer cell share one parameter layout ([`CellParams`]).
//! The layer cell reads the time-cell output of its own layer as input and
//! recurs over the layer below instead of the previous frame.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Input,
    Forget,
    Output,
}

impl GateKind {
    pub const ALL: [GateKind; 3] = [GateKind::Input, GateKind::Forget, GateKind::Output];

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Input => "input",
            GateKind::Forget => "forget",
            GateKind::Output => "output",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// Dimensions of one cell. `recurrent_dim` is `None` for the bottom layer
/// cell, which has no recurrence matrices at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellDims {
    pub input_dim: usize,
    pub recurrent_dim: Option<usize>,
    pub cell_dim: usize,
    pub proj_dim: usize,
}

impl CellDims {
    fn fan_in(&self) -> usize {
        self.input_dim + self.recurrent_dim.unwrap_or(0)
    }
}

/// `W_input·x + W_recurrent·r + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w_input: Matrix,
    pub w_recurrent: Option<Matrix>,
    pub bias: Vector,
}

impl Affine {
    fn zeros(out: usize, dims: &CellDims) -> Self {
        Self {
            w_input: Matrix::zeros(out, dims.input_dim),
            w_recurrent: dims.recurrent_dim.map(|r| Matrix::zeros(out, r)),
            bias: vec![0.0; out],
        }
    }

    fn uniform<R: Rng + ?Sized>(out: usize, dims: &CellDims, scale: f64, rng: &mut R) -> Self {
        Self {
            w_input: Matrix::uniform(out, dims.input_dim, scale, rng),
            w_recurrent: dims.recurrent_dim.map(|r| Matrix::uniform(out, r, scale, rng)),
            bias: vec![0.0; out],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    fn check(&self, op: &'static str, x: &[f64], r: &[f64]) -> Result<()> {
        if x.len() != self.w_input.cols() {
            return Err(Error::dims(op, self.w_input.shape(), (x.len(), 1)));
        }
        if let Some(w) = &self.w_recurrent {
            if r.len() != w.cols() {
                return Err(Error::dims(op, w.shape(), (r.len(), 1)));
            }
        }
        Ok(())
    }

    /// Matrix products for a window of frames; elementwise terms are added later.
    fn products(&self, xs: &[&[f64]], rs: &[&[f64]]) -> Result<Vec<(Vector, Option<Vector>)>> {
        let wx = self.w_input.matvec_batch(xs)?;
        let wr = match &self.w_recurrent {
            Some(w) => w.matvec_batch(rs)?.into_iter().map(Some).collect(),
            None => vec![None; xs.len()],
        };
        Ok(wx.into_iter().zip(wr).collect())
    }

    fn backward(&self, da: &[f64], x: &[f64], r: &[f64], grad: &mut Affine, dx: &mut [f64], dr: &mut [f64]) {
        grad.w_input.add_outer(da, x);
        self.w_input.matvec_t_acc(da, dx);
        if let (Some(w), Some(gw)) = (&self.w_recurrent, grad.w_recurrent.as_mut()) {
            gw.add_outer(da, r);
            w.matvec_t_acc(da, dr);
        }
        numerics::add_assign(&mut grad.bias, da);
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        out.push((format!("{prefix}.w_input"), self.w_input.as_slice()));
        if let Some(w) = &self.w_recurrent {
            out.push((format!("{prefix}.w_recurrent"), w.as_slice()));
        }
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.w_input.as_mut_slice());
        if let Some(w) = &mut self.w_recurrent {
            out.push(w.as_mut_slice());
        }
        out.push(&mut self.bias);
    }
}

/// Pre-activation sum in fixed order: `Wx + Wr + peephole⊙state + bias`.
fn pre_activation(
    wx: &[f64],
    wr: Option<&[f64]>,
    peephole: Option<(&[f64], &[f64])>,
    bias: &[f64],
) -> Vector {
    let mut out = wx.to_vec();
    if let Some(wr) = wr {
        numerics::add_assign(&mut out, wr);
    }
    if let Some((p, s)) = peephole {
        for ((o, p), s) in out.iter_mut().zip(p).zip(s) {
            *o += p * s;
        }
    }
    numerics::add_assign(&mut out, bias);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub affine: Affine,
    pub peephole: Option<Vector>,
}

/// Gate computed as `vec(sqrt(acute · graveᵀ))`, flattened row-major with the
/// acute factor indexing rows. Has no peephole.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedGateParams {
    k: usize,
    pub acute: Affine,
    pub grave: Affine,
}

impl FactorizedGateParams {
    pub fn new(cell_dim: usize, acute: Affine, grave: Affine) -> Result<Self> {
        let k = factor_side(cell_dim)?;
        for half in [&acute, &grave] {
            if half.out_dim() != k || half.w_input.rows() != k {
                return Err(Error::Config(format!(
                    "factorized gate halves must have {k} rows for cell_dim {cell_dim}"
                )));
            }
        }
        Ok(Self { k, acute, grave })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// `k` with `k² = cell_dim`, or a configuration error.
pub fn factor_side(cell_dim: usize) -> Result<usize> {
    let k = (cell_dim as f64).sqrt().round() as usize;
    if k == 0 || k * k != cell_dim {
        return Err(Error::Config(format!(
            "factorized gates need a perfect-square cell_dim, got {cell_dim}"
        )));
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    Dense(GateParams),
    Factorized(FactorizedGateParams),
}

impl Gate {
    pub fn is_factorized(&self) -> bool {
        matches!(self, Gate::Factorized(_))
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        match self {
            Gate::Dense(g) => {
                g.affine.tensors(prefix, out);
                if let Some(p) = &g.peephole {
                    out.push((format!("{prefix}.peephole"), p));
                }
            }
            Gate::Factorized(g) => {
                g.acute.tensors(&format!("{prefix}.acute"), out);
                g.grave.tensors(&format!("{prefix}.grave"), out);
            }
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        match self {
            Gate::Dense(g) => {
                g.affine.tensors_mut(out);
                if let Some(p) = &mut g.peephole {
                    out.push(p);
                }
            }
            Gate::Factorized(g) => {
                g.acute.tensors_mut(out);
                g.grave.tensors_mut(out);
            }
        }
    }
}

/// `σ(W_input·x + W_recurrent·r + peephole⊙peep_state + bias)`.
pub fn gate_activation(gp: &GateParams, x: &[f64], r: &[f64], peep_state: Option<&[f64]>) -> Result<Vector> {
    gp.affine.check("gate_activation", x, r)?;
    let peep = match (&gp.peephole, peep_state) {
        (Some(p), Some(s)) => {
            if s.len() != p.len() {
                return Err(Error::dims("gate_activation", (p.len(), 1), (s.len(), 1)));
            }
            Some((p.as_slice(), s))
        }
        (None, None) => None,
        (Some(_), None) => {
            return Err(Error::PeepholeMismatch {
                has: "has",
                supplied: "absent",
            })
        }
        (None, Some(_)) => {
            return Err(Error::PeepholeMismatch {
                has: "has no",
                supplied: "supplied",
            })
        }
    };
    let (wx, wr) = gp.affine.products(&[x], &[r])?.remove(0);
    let a = pre_activation(&wx, wr.as_deref(), peep, &gp.affine.bias);
    Ok(numerics::sigmoid(&a))
}

/// Factorized gate value for one frame.
pub fn factorized_gate_activation(fp: &FactorizedGateParams, x: &[f64], r: &[f64]) -> Result<Vector> {
    fp.acute.check("factorized_gate_activation", x, r)?;
    fp.grave.check("factorized_gate_activation", x, r)?;
    let acute = fp.acute.products(&[x], &[r])?.remove(0);
    let grave = fp.grave.products(&[x], &[r])?.remove(0);
    Ok(factorized_value(fp, &acute, &grave).value)
}

fn factorized_value(
    fp: &FactorizedGateParams,
    acute: &(Vector, Option<Vector>),
    grave: &(Vector, Option<Vector>),
) -> GateTrace {
    let a = numerics::sigmoid(&pre_activation(&acute.0, acute.1.as_deref(), None, &fp.acute.bias));
    let b = numerics::sigmoid(&pre_activation(&grave.0, grave.1.as_deref(), None, &fp.grave.bias));
    let mut value = Vec::with_capacity(fp.k * fp.k);
    for &ai in &a {
        for &bj in &b {
            value.push((ai * bj).sqrt());
        }
    }
    GateTrace {
        value,
        factors: Some((a, b)),
    }
}

/// `x_below + h_below`, the residual input rule.
pub fn residual_input(x_below: &[f64], h_below: &[f64]) -> Result<Vector> {
    numerics::add(x_below, h_below).map_err(|_| Error::dims("residual_input", (x_below.len(), 1), (h_below.len(), 1)))
}

/// Parameters of one LSTM cell with a linear output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub output_gate: Gate,
    /// Never factorized, never has a peephole.
    pub candidate: Affine,
    pub projection: Matrix,
}

pub type TimeCellParams = CellParams;
pub type LayerCellParams = CellParams;

#[derive(Debug, Clone, Copy)]
enum Fill {
    Zeros,
    /// Standard init: uniform weights in ±1/sqrt(fan-in), zero peepholes,
    /// zero biases except the forget gate at 1.0.
    Init,
    /// Every element uniform in ±scale, peepholes and biases included.
    Random(f64),
}

impl CellParams {
    pub fn zeros(dims: CellDims, factorized: [bool; 3]) -> Result<Self> {
        Self::build(dims, factorized, Fill::Zeros, &mut rand::rngs::mock::StepRng::new(0, 0))
    }

    pub fn init<R: Rng + ?Sized>(dims: CellDims, factorized: [bool; 3], rng: &mut R) -> Result<Self> {
        Self::build(dims, factorized, Fill::Init, rng)
    }

    pub fn random<R: Rng + ?Sized>(dims: CellDims, factorized: [bool; 3], scale: f64, rng: &mut R) -> Result<Self> {
        Self::build(dims, factorized, Fill::Random(scale), rng)
    }

    fn build<R: Rng + ?Sized>(dims: CellDims, factorized: [bool; 3], fill: Fill, rng: &mut R) -> Result<Self> {
        if dims.input_dim == 0 || dims.cell_dim == 0 || dims.proj_dim == 0 || dims.recurrent_dim == Some(0) {
            return Err(Error::Config(format!("cell dimensions must be positive: {dims:?}")));
        }
        let k = if factorized.iter().any(|&f| f) {
            factor_side(dims.cell_dim)?
        } else {
            0
        };
        let weight_scale = 1.0 / (dims.fan_in() as f64).sqrt();
        let affine = |out: usize, bias: f64, rng: &mut R| match fill {
            Fill::Zeros => Affine::zeros(out, &dims),
            Fill::Init => {
                let mut a = Affine::uniform(out, &dims, weight_scale, rng);
                a.bias.iter_mut().for_each(|b| *b = bias);
                a
            }
            Fill::Random(s) => {
                let mut a = Affine::uniform(out, &dims, s, rng);
                a.bias = numerics::uniform_vec(out, s, rng);
                a
            }
        };
        let mut gates = Vec::with_capacity(3);
        for kind in GateKind::ALL {
            let bias = if kind == GateKind::Forget { 1.0 } else { 0.0 };
            let gate = if factorized[kind.index()] {
                let acute = affine(k, bias, rng);
                let grave = affine(k, bias, rng);
                Gate::Factorized(FactorizedGateParams::new(dims.cell_dim, acute, grave)?)
            } else {
                let a = affine(dims.cell_dim, bias, rng);
                let peephole = match fill {
                    Fill::Random(s) => numerics::uniform_vec(dims.cell_dim, s, rng),
                    _ => vec![0.0; dims.cell_dim],
                };
                Gate::Dense(GateParams {
                    affine: a,
                    peephole: Some(peephole),
                })
            };
            gates.push(gate);
        }
        let candidate = affine(dims.cell_dim, 0.0, rng);
        let projection = match fill {
            Fill::Zeros => Matrix::zeros(dims.proj_dim, dims.cell_dim),
            Fill::Init => Matrix::uniform(dims.proj_dim, dims.cell_dim, 1.0 / (dims.cell_dim as f64).sqrt(), rng),
            Fill::Random(s) => Matrix::uniform(dims.proj_dim, dims.cell_dim, s, rng),
        };
        let output_gate = gates.pop().unwrap();
        let forget_gate = gates.pop().unwrap();
        let input_gate = gates.pop().unwrap();
        Ok(Self {
            input_gate,
            forget_gate,
            output_gate,
            candidate,
            projection,
        })
    }

    pub fn dims(&self) -> CellDims {
        CellDims {
            input_dim: self.candidate.w_input.cols(),
            recurrent_dim: self.candidate.w_recurrent.as_ref().map(Matrix::cols),
            cell_dim: self.candidate.out_dim(),
            proj_dim: self.projection.rows(),
        }
    }

    pub fn gate(&self, kind: GateKind) -> &Gate {
        match kind {
            GateKind::Input => &self.input_gate,
            GateKind::Forget => &self.forget_gate,
            GateKind::Output => &self.output_gate,
        }
    }

    /// Same shape, every element zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn tensors(&self, prefix: &str) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.input_gate.tensors(&format!("{prefix}.input"), &mut out);
        self.forget_gate.tensors(&format!("{prefix}.forget"), &mut out);
        self.output_gate.tensors(&format!("{prefix}.output"), &mut out);
        self.candidate.tensors(&format!("{prefix}.candidate"), &mut out);
        out.push((format!("{prefix}.projection"), self.projection.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.input_gate.tensors_mut(&mut out);
        self.forget_gate.tensors_mut(&mut out);
        self.output_gate.tensors_mut(&mut out);
        self.candidate.tensors_mut(&mut out);
        out.push(self.projection.as_mut_slice());
        out
    }

    fn check_inputs(&self, x: &[f64], r: &[f64], prev_c: &[f64]) -> Result<()> {
        let d = self.dims();
        if x.len() != d.input_dim {
            return Err(Error::dims("cell input", (d.input_dim, 1), (x.len(), 1)));
        }
        if d.recurrent_dim.is_some_and(|rd| rd != r.len()) {
            return Err(Error::dims("cell recurrent input", (d.recurrent_dim.unwrap(), 1), (r.len(), 1)));
        }
        if prev_c.len() != d.cell_dim {
            return Err(Error::dims("cell memory", (d.cell_dim, 1), (prev_c.len(), 1)));
        }
        Ok(())
    }

    /// One step for a single frame.
    pub fn forward(&self, x: &[f64], r: &[f64], prev_c: &[f64]) -> Result<CellActivations> {
        Ok(self.forward_batch(&[x], &[r], &[prev_c])?.remove(0))
    }

    /// One step for a window of independent frames. Every matrix product is a
    /// single batched kernel call; per-frame arithmetic is identical to
    /// [`CellParams::forward`].
    pub fn forward_batch(&self, xs: &[&[f64]], rs: &[&[f64]], prev_cs: &[&[f64]]) -> Result<Vec<CellActivations>> {
        if xs.len() != rs.len() || xs.len() != prev_cs.len() {
            return Err(Error::dims("forward_batch", (xs.len(), rs.len()), (prev_cs.len(), 1)));
        }
        for ((x, r), c) in xs.iter().zip(rs).zip(prev_cs) {
            self.check_inputs(x, r, c)?;
        }
        let gate_products = |gate: &Gate| -> Result<Vec<GateProducts>> {
            Ok(match gate {
                Gate::Dense(g) => g.affine.products(xs, rs)?.into_iter().map(GateProducts::Dense).collect(),
                Gate::Factorized(g) => g
                    .acute
                    .products(xs, rs)?
                    .into_iter()
                    .zip(g.grave.products(xs, rs)?)
                    .map(|(a, b)| GateProducts::Factorized(a, b))
                    .collect(),
            })
        };
        let ip = gate_products(&self.input_gate)?;
        let fp = gate_products(&self.forget_gate)?;
        let op = gate_products(&self.output_gate)?;
        let cp = self.candidate.products(xs, rs)?;

        let mut partial = Vec::with_capacity(xs.len());
        for b in 0..xs.len() {
            let prev_c = prev_cs[b];
            let i = finish_gate(&self.input_gate, &ip[b], prev_c);
            let f = finish_gate(&self.forget_gate, &fp[b], prev_c);
            let zpre = pre_activation(&cp[b].0, cp[b].1.as_deref(), None, &self.candidate.bias);
            let z = numerics::tanh(&zpre);
            let c: Vector = (0..z.len()).map(|n| f.value[n] * prev_c[n] + i.value[n] * z[n]).collect();
            let o = finish_gate(&self.output_gate, &op[b], &c);
            let tanh_c = numerics::tanh(&c);
            let y: Vector = o.value.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
            partial.push((i, f, o, z, c, tanh_c, y));
        }
        let ys: Vec<&[f64]> = partial.iter().map(|p| p.6.as_slice()).collect();
        let hs = self.projection.matvec_batch(&ys)?;
        Ok(partial
            .into_iter()
            .zip(hs)
            .enumerate()
            .map(|(b, ((i, f, o, z, c, tanh_c, y), h))| CellActivations {
                x: xs[b].to_vec(),
                r: rs[b].to_vec(),
                prev_c: prev_cs[b].to_vec(),
                i,
                f,
                o,
                z,
                c,
                tanh_c,
                y,
                h,
            })
            .collect())
    }

    /// Reverse-mode step. `dh` is the gradient on the projected output and
    /// `dc_next` the gradient reaching this step's memory from later uses.
    /// Parameter gradients accumulate into `grad`.
    pub fn backward(&self, act: &CellActivations, dh: &[f64], dc_next: &[f64], grad: &mut CellParams) -> CellInputGrads {
        let d = self.dims();
        let n = d.cell_dim;
        let mut dx = vec![0.0; d.input_dim];
        let mut dr = vec![0.0; d.recurrent_dim.unwrap_or(0)];
        let mut dprev_c = vec![0.0; n];

        grad.projection.add_outer(dh, &act.y);
        let mut dy = vec![0.0; n];
        self.projection.matvec_t_acc(dh, &mut dy);

        // output gate and the memory it reads through tanh and its peephole
        let d_o: Vector = (0..n).map(|j| dy[j] * act.tanh_c[j]).collect();
        let mut dc: Vector = (0..n)
            .map(|j| dc_next[j] + dy[j] * act.o.value[j] * (1.0 - act.tanh_c[j] * act.tanh_c[j]))
            .collect();
        let peep_o = gate_backward(
            &self.output_gate,
            &act.o,
            &d_o,
            &act.x,
            &act.r,
            &act.c,
            &mut grad.output_gate,
            &mut dx,
            &mut dr,
        );
        if let Some(p) = peep_o {
            numerics::add_assign(&mut dc, &p);
        }

        let d_i: Vector = (0..n).map(|j| dc[j] * act.z[j]).collect();
        let d_f: Vector = (0..n).map(|j| dc[j] * act.prev_c[j]).collect();
        let dzpre: Vector = (0..n).map(|j| dc[j] * act.i.value[j] * (1.0 - act.z[j] * act.z[j])).collect();
        for j in 0..n {
            dprev_c[j] = dc[j] * act.f.value[j];
        }
        self.candidate
            .backward(&dzpre, &act.x, &act.r, &mut grad.candidate, &mut dx, &mut dr);
        for (gate, trace, dg, ggrad) in [
            (&self.input_gate, &act.i, &d_i, &mut grad.input_gate),
            (&self.forget_gate, &act.f, &d_f, &mut grad.forget_gate),
        ] {
            if let Some(p) = gate_backward(gate, trace, dg, &act.x, &act.r, &act.prev_c, ggrad, &mut dx, &mut dr) {
                numerics::add_assign(&mut dprev_c, &p);
            }
        }
        CellInputGrads { dx, dr, dprev_c }
    }
}

enum GateProducts {
    Dense((Vector, Option<Vector>)),
    Factorized((Vector, Option<Vector>), (Vector, Option<Vector>)),
}

fn finish_gate(gate: &Gate, products: &GateProducts, peep_state: &[f64]) -> GateTrace {
    match (gate, products) {
        (Gate::Dense(g), GateProducts::Dense((wx, wr))) => {
            let peep = g.peephole.as_deref().map(|p| (p, peep_state));
            let a = pre_activation(wx, wr.as_deref(), peep, &g.affine.bias);
            GateTrace {
                value: numerics::sigmoid(&a),
                factors: None,
            }
        }
        (Gate::Factorized(g), GateProducts::Factorized(a, b)) => factorized_value(g, a, b),
        _ => unreachable!("gate products computed for the same gate"),
    }
}

/// Backpropagates a gate-value gradient into parameters and inputs. Returns
/// the gradient on the peephole state, if the gate has a peephole.
#[allow(clippy::too_many_arguments)]
fn gate_backward(
    gate: &Gate,
    trace: &GateTrace,
    dvalue: &[f64],
    x: &[f64],
    r: &[f64],
    peep_state: &[f64],
    grad: &mut Gate,
    dx: &mut [f64],
    dr: &mut [f64],
) -> Option<Vector> {
    match (gate, grad) {
        (Gate::Dense(g), Gate::Dense(gg)) => {
            let da: Vector = dvalue
                .iter()
                .zip(&trace.value)
                .map(|(d, s)| d * s * (1.0 - s))
                .collect();
            g.affine.backward(&da, x, r, &mut gg.affine, dx, dr);
            match (&g.peephole, gg.peephole.as_mut()) {
                (Some(p), Some(gp)) => {
                    for j in 0..da.len() {
                        gp[j] += da[j] * peep_state[j];
                    }
                    Some(da.iter().zip(p).map(|(d, p)| d * p).collect())
                }
                _ => None,
            }
        }
        (Gate::Factorized(g), Gate::Factorized(gg)) => {
            // d sqrt(σ(a)σ(b)) / da = ½·value·(1 − σ(a)), no division by the factors
            let (fa, fb) = trace.factors.as_ref().expect("factorized trace carries its factors");
            let k = g.k;
            let mut da = vec![0.0; k];
            let mut db = vec![0.0; k];
            for a in 0..k {
                for b in 0..k {
                    let t = dvalue[a * k + b] * trace.value[a * k + b];
                    da[a] += t;
                    db[b] += t;
                }
            }
            for a in 0..k {
                da[a] *= 0.5 * (1.0 - fa[a]);
                db[a] *= 0.5 * (1.0 - fb[a]);
            }
            g.acute.backward(&da, x, r, &mut gg.acute, dx, dr);
            g.grave.backward(&db, x, r, &mut gg.grave, dx, dr);
            None
        }
        _ => unreachable!("gradient set mirrors parameter shapes"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace {
    pub value: Vector,
    /// Sigmoid factors (acute, grave) of a factorized gate.
    pub factors: Option<(Vector, Vector)>,
}

/// Everything one forward step computed, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CellActivations {
    pub x: Vector,
    pub r: Vector,
    pub prev_c: Vector,
    pub i: GateTrace,
    pub f: GateTrace,
    pub o: GateTrace,
    /// tanh of the candidate pre-activation.
    pub z: Vector,
    pub c: Vector,
    pub tanh_c: Vector,
    /// Pre-projection output `o ⊙ tanh(c)`.
    pub y: Vector,
    pub h: Vector,
}

#[derive(Debug, Clone)]
pub struct CellInputGrads {
    pub dx: Vector,
    pub dr: Vector,
    pub dprev_c: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeCellState {
    pub c: Vector,
    pub h: Vector,
}

impl TimeCellState {
    pub fn zeros(cell_dim: usize, proj_dim: usize) -> Self {
        Self {
            c: vec![0.0; cell_dim],
            h: vec![0.0; proj_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCellState {
    pub m: Vector,
    pub g: Vector,
}

impl TrajectoryCellState {
    pub fn zeros(cell_dim: usize, proj_dim: usize) -> Self {
        Self {
            m: vec![0.0; cell_dim],
            g: vec![0.0; proj_dim],
        }
    }
}

/// Time-cell step: recurrence over the previous frame.
pub fn time_lstm_step(p: &TimeCellParams, x: &[f64], prev: &TimeCellState) -> Result<(Vector, TimeCellState)> {
    let act = p.forward(x, &prev.h, &prev.c)?;
    let h = act.h.clone();
    Ok((h, TimeCellState { c: act.c, h: act.h }))
}

/// Layer-cell step: input is this layer's time-cell output, recurrence is
/// over the layer below at the same frame.
pub fn layer_lstm_step(
    p: &LayerCellParams,
    h_in: &[f64],
    prev: &TrajectoryCellState,
) -> Result<(Vector, TrajectoryCellState)> {
    let act = p.forward(h_in, &prev.g, &prev.m)?;
    let g = act.h.clone();
    Ok((g, TrajectoryCellState { m: act.c, g: act.h }))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(input: usize, cell: usize, proj: usize) -> CellDims {
        CellDims {
            input_dim: input,
            recurrent_dim: Some(proj),
            cell_dim: cell,
            proj_dim: proj,
        }
    }

    fn seeded_gate(cell: usize, input: usize, rec: usize, seed: u64) -> GateParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GateParams {
            affine: Affine {
                w_input: Matrix::uniform(cell, input, 1.0, &mut rng),
                w_recurrent: Some(Matrix::uniform(cell, rec, 1.0, &mut rng)),
                bias: numerics::uniform_vec(cell, 1.0, &mut rng),
            },
            peephole: Some(numerics::uniform_vec(cell, 1.0, &mut rng)),
        }
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_gate_is_one_half() {
        let gp = GateParams {
            affine: Affine::zeros(3, &dims(2, 3, 2)),
            peephole: Some(vec![0.0; 3]),
        };
        let v = gate_activation(&gp, &[5.0, -1.0], &[2.0, 2.0], Some(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(v, vec![0.5; 3]);
    }

    #[test]
    fn saturated_gate_approaches_one() {
        let mut gp = GateParams {
            affine: Affine::zeros(3, &dims(2, 3, 2)),
            peephole: None,
        };
        gp.affine.bias = vec![100.0; 3];
        let v = gate_activation(&gp, &[0.3, 0.1], &[0.0, 0.0], None).unwrap();
        assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-10));
    }

    #[test]
    fn gate_matches_scalar_loop() {
        let gp = seeded_gate(2, 3, 2, 11);
        let x = [0.4, -0.2, 0.9];
        let r = [-0.5, 0.3];
        let s = [0.7, -1.1];
        let got = gate_activation(&gp, &x, &r, Some(&s)).unwrap();
        for row in 0..2 {
            let mut a = 0.0;
            for c in 0..3 {
                a += gp.affine.w_input.get(row, c) * x[c];
            }
            let mut b = 0.0;
            for c in 0..2 {
                b += gp.affine.w_recurrent.as_ref().unwrap().get(row, c) * r[c];
            }
            let want = sig(a + b + gp.peephole.as_ref().unwrap()[row] * s[row] + gp.affine.bias[row]);
            assert!((got[row] - want).abs() <= 1e-12 * want.abs());
        }
    }

    #[test]
    fn gate_rejects_peephole_and_shape_mismatches() {
        let gp = seeded_gate(2, 3, 2, 1);
        assert!(matches!(
            gate_activation(&gp, &[0.0; 3], &[0.0; 2], None),
            Err(Error::PeepholeMismatch { .. })
        ));
        assert!(matches!(
            gate_activation(&gp, &[0.0; 2], &[0.0; 2], Some(&[0.0; 2])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn factorized(k: usize, input: usize, rec: usize, seed: u64) -> FactorizedGateParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut half = || Affine {
            w_input: Matrix::uniform(k, input, 1.0, &mut rng),
            w_recurrent: Some(Matrix::uniform(k, rec, 1.0, &mut rng)),
            bias: vec![0.0; k],
        };
        let acute = half();
        let grave = half();
        FactorizedGateParams::new(k * k, acute, grave).unwrap()
    }

    #[test]
    fn factorized_zero_params_give_one_half() {
        let mut fp = factorized(2, 3, 2, 0);
        for a in [&mut fp.acute, &mut fp.grave] {
            *a = Affine::zeros(2, &dims(3, 4, 2));
        }
        let v = factorized_gate_activation(&fp, &[1.0, 2.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!(v, vec![0.5; 4]);
    }

    #[test]
    fn factorized_saturated_acute() {
        let mut fp = factorized(3, 2, 2, 0);
        fp.acute = Affine::zeros(3, &dims(2, 9, 2));
        fp.acute.bias = vec![100.0; 3];
        fp.grave = Affine::zeros(3, &dims(2, 9, 2));
        let v = factorized_gate_activation(&fp, &[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!(v.iter().all(|x| (x - 0.5f64.sqrt()).abs() < 1e-6));
    }

    #[test]
    fn factorized_matches_scalar_loop() {
        let mut fp = factorized(2, 3, 2, 5);
        fp.acute.bias = vec![0.3, -0.2];
        fp.grave.bias = vec![-0.7, 0.1];
        let x = [0.2, -0.4, 0.6];
        let r = [1.0, -0.3];
        let got = factorized_gate_activation(&fp, &x, &r).unwrap();
        let half = |h: &Affine, row: usize| {
            let mut s = 0.0;
            for c in 0..3 {
                s += h.w_input.get(row, c) * x[c];
            }
            for c in 0..2 {
                s += h.w_recurrent.as_ref().unwrap().get(row, c) * r[c];
            }
            sig(s + h.bias[row])
        };
        for a in 0..2 {
            for b in 0..2 {
                let want = (half(&fp.acute, a) * half(&fp.grave, b)).sqrt();
                assert!((got[a * 2 + b] - want).abs() <= 1e-12 * want);
            }
        }
    }

    #[test]
    fn factorized_requires_square_cell_dim() {
        let d = dims(2, 6, 2);
        assert!(matches!(CellParams::zeros(d, [false, true, false]), Err(Error::Config(_))));
        assert!(CellParams::zeros(d, [false; 3]).is_ok());
    }

    #[test]
    fn zero_cell_emits_zero() {
        let p = CellParams::zeros(dims(3, 4, 2), [false; 3]).unwrap();
        let (h, next) = time_lstm_step(&p, &[1.0, -2.0, 0.5], &TimeCellState::zeros(4, 2)).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(next.c, vec![0.0; 4]);
    }

    #[test]
    fn saturated_forget_carries_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = CellParams::init(dims(3, 4, 2), [false; 3], &mut rng).unwrap();
        if let Gate::Dense(g) = &mut p.forget_gate {
            g.affine.bias = vec![100.0; 4];
        }
        if let Gate::Dense(g) = &mut p.input_gate {
            g.affine.bias = vec![-100.0; 4];
        }
        let prev = TimeCellState {
            c: vec![0.3, -0.8, 1.5, 0.0],
            h: vec![0.1, 0.2],
        };
        let (_, next) = time_lstm_step(&p, &[0.2, 0.2, -0.1], &prev).unwrap();
        for (a, b) in next.c.iter().zip(&prev.c) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_step_mirrors_time_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = CellParams::random(dims(2, 4, 2), [false; 3], 0.5, &mut rng).unwrap();
        let input = [0.7, -0.1];
        let (h, ts) = time_lstm_step(&p, &input, &TimeCellState::zeros(4, 2)).unwrap();
        let (g, ls) = layer_lstm_step(&p, &input, &TrajectoryCellState::zeros(4, 2)).unwrap();
        assert_eq!(h, g);
        assert_eq!(ts.c, ls.m);
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual_input(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(residual_input(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(residual_input(&[1.0, -1.0], &[2.0, 2.0]).unwrap(), vec![3.0, 1.0]);
        assert!(residual_input(&[0.0; 80], &[0.0; 512]).is_err());
    }

    proptest! {
        #[test]
        fn gates_in_open_unit_interval(seed in 0u64..5000, fac in proptest::array::uniform3(proptest::bool::ANY)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = CellParams::random(dims(3, 9, 2), fac, 2.0, &mut rng).unwrap();
            let x = numerics::uniform_vec(3, 3.0, &mut rng);
            let r = numerics::uniform_vec(2, 3.0, &mut rng);
            let c = numerics::uniform_vec(9, 3.0, &mut rng);
            let act = p.forward(&x, &r, &c).unwrap();
            for g in [&act.i, &act.f, &act.o] {
                prop_assert!(g.value.iter().all(|&v| v > 0.0 && v < 1.0));
            }
            prop_assert!(act.y.iter().all(|&v| v > -1.0 && v < 1.0));
        }

        #[test]
        fn factorized_gate_is_rank_one(seed in 0u64..5000) {
            let fp = factorized(3, 4, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let x = numerics::uniform_vec(4, 2.0, &mut rng);
            let r = numerics::uniform_vec(2, 2.0, &mut rng);
            let v = factorized_gate_activation(&fp, &x, &r).unwrap();
            let k = 3;
            for a in 0..k { for a2 in 0..k { for b in 0..k { for b2 in 0..k {
                let lhs = v[a * k + b] * v[a2 * k + b2];
                let rhs = v[a * k + b2] * v[a2 * k + b];
                prop_assert!((lhs - rhs).abs() <= 1e-10);
            }}}}
        }
    }
}
