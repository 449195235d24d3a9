use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, NetworkParams, SequenceTrace, Variant};
use crate::numerics::{self, Vector};

/// One gradient accumulator per parameter element, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(pub NetworkParams);

impl GradientSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self(params.zeros_like())
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .tensors()
            .iter()
            .map(|(_, t)| numerics::norm_sq(t))
            .sum::<f64>()
            .sqrt()
    }

    /// First non-finite tensor, if any.
    pub fn non_finite(&self) -> Option<String> {
        self.0
            .tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    pub fn accumulate(&mut self, other: &GradientSet) {
        for (a, (_, b)) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            numerics::add_assign(a, b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.for_each_mut(|v| *v *= factor);
    }

    /// Rescales to `max_norm` when the global norm exceeds it. Returns the
    /// pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

impl Deref for GradientSet {
    type Target = NetworkParams;

    fn deref(&self) -> &NetworkParams {
        &self.0
    }
}

impl DerefMut for GradientSet {
    fn deref_mut(&mut self) -> &mut NetworkParams {
        &mut self.0
    }
}

/// Backpropagation through time over a traced forward pass.
///
/// Time recurrence flows backward across frames; the layer scan flows
/// backward down the layers inside each frame.
pub fn backward_sequence(
    params: &NetworkParams,
    config: &NetworkConfig,
    trace: &SequenceTrace,
    dlogits_seq: &[Vector],
) -> Result<GradientSet> {
    if trace.frames.is_empty() {
        return Err(Error::TraceMismatch("no forward trace".into()));
    }
    if trace.frames.len() != dlogits_seq.len() {
        return Err(Error::TraceMismatch(format!(
            "{} traced frames but {} logit gradients",
            trace.frames.len(),
            dlogits_seq.len()
        )));
    }
    let layers = config.num_layers;
    let layered = config.variant == Variant::LayerTrajectory;
    if params.time_cells.len() != layers || trace.frames.iter().any(|f| f.time.len() != layers) {
        return Err(Error::TraceMismatch("trace depth does not match the network".into()));
    }
    if layered && trace.frames.iter().any(|f| f.layer.len() != layers) {
        return Err(Error::TraceMismatch("trace has no layer-scan activations".into()));
    }

    let mut grads = GradientSet::zeros_like(params);
    let mut dh_recur: Vec<Vector> = vec![vec![0.0; config.proj_dim]; layers];
    let mut dc_recur: Vec<Vector> = vec![vec![0.0; config.cell_dim]; layers];

    for (frame, dlogits) in trace.frames.iter().zip(dlogits_seq).rev() {
        if dlogits.len() != config.output_dim {
            return Err(Error::dims("backward_sequence dlogits", (config.output_dim, 1), (dlogits.len(), 1)));
        }
        let mut dh = std::mem::take(&mut dh_recur);

        let top = if layered {
            &frame.layer[layers - 1].h
        } else {
            &frame.time[layers - 1].h
        };
        grads.output_weights.add_outer(dlogits, top);
        numerics::add_assign(&mut grads.output_bias, dlogits);
        let mut dtop = vec![0.0; config.proj_dim];
        params.output_weights.matvec_t_acc(dlogits, &mut dtop);

        if layered {
            let mut dg = dtop;
            let mut dm = vec![0.0; config.cell_dim];
            for l in (0..layers).rev() {
                let g = params.layer_cells[l].backward(&frame.layer[l], &dg, &dm, &mut grads.layer_cells[l]);
                numerics::add_assign(&mut dh[l], &g.dx);
                dg = g.dr;
                dm = g.dprev_c;
            }
        } else {
            numerics::add_assign(&mut dh[layers - 1], &dtop);
        }

        let mut dx_shortcut: Option<Vector> = None;
        let mut next_dh = vec![Vec::new(); layers];
        for l in (0..layers).rev() {
            let g = params.time_cells[l].backward(&frame.time[l], &dh[l], &dc_recur[l], &mut grads.time_cells[l]);
            next_dh[l] = g.dr;
            dc_recur[l] = g.dprev_c;
            let mut dx = g.dx;
            if let Some(extra) = dx_shortcut.take() {
                numerics::add_assign(&mut dx, &extra);
            }
            if l > 0 {
                numerics::add_assign(&mut dh[l - 1], &dx);
                if config.residual_into(l) {
                    dx_shortcut = Some(dx);
                }
            }
        }
        dh_recur = next_dh;
    }
    Ok(grads)
}
