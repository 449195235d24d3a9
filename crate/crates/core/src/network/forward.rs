use super::config::{NetworkConfig, Variant};
use super::params::NetworkParams;
use crate::cells::{residual_input, CellActivations, TimeCellState};
use crate::error::{Error, Result};
use crate::numerics::{self, Vector};

/// Time-cell states carried from one frame to the next. Layer-scan states
/// are rebuilt inside every frame and never stored here.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStates {
    pub time_states: Vec<crate::cells::TimeCellState>,
}

impl FrameStates {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Self {
            time_states: (0..config.num_layers)
                .map(|_| TimeCellState::zeros(config.cell_dim, config.proj_dim))
                .collect(),
        }
    }

    fn check(&self, config: &NetworkConfig) -> Result<()> {
        if self.time_states.len() != config.num_layers {
            return Err(Error::StateMismatch(format!(
                "{} layer states for a {}-layer network",
                self.time_states.len(),
                config.num_layers
            )));
        }
        for (l, s) in self.time_states.iter().enumerate() {
            if s.c.len() != config.cell_dim || s.h.len() != config.proj_dim {
                return Err(Error::StateMismatch(format!(
                    "layer {l} state has c:{} h:{}, expected c:{} h:{}",
                    s.c.len(),
                    s.h.len(),
                    config.cell_dim,
                    config.proj_dim
                )));
            }
        }
        Ok(())
    }
}

/// Everything one frame computed.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    pub time: Vec<CellActivations>,
    /// Layer-scan activations, empty unless layer-trajectory.
    pub layer: Vec<CellActivations>,
    pub logits: Vector,
}

impl FrameTrace {
    pub fn next_states(&self) -> FrameStates {
        FrameStates {
            time_states: self
                .time
                .iter()
                .map(|a| TimeCellState {
                    c: a.c.clone(),
                    h: a.h.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrace {
    pub frames: Vec<FrameTrace>,
}

impl SequenceTrace {
    pub fn logits(&self) -> Vec<Vector> {
        self.frames.iter().map(|f| f.logits.clone()).collect()
    }
}

/// Runs every time cell for one frame using only prior-frame states.
pub fn time_lane(
    params: &NetworkParams,
    config: &NetworkConfig,
    s_t: &[f64],
    states: &FrameStates,
) -> Result<Vec<CellActivations>> {
    if s_t.len() != config.input_dim {
        return Err(Error::dims("forward_frame input", (config.input_dim, 1), (s_t.len(), 1)));
    }
    states.check(config)?;
    let mut acts: Vec<CellActivations> = Vec::with_capacity(config.num_layers);
    for (l, (cell, prev)) in params.time_cells.iter().zip(&states.time_states).enumerate() {
        let x = match acts.last() {
            None => s_t.to_vec(),
            Some(below) if config.residual_into(l) => residual_input(&below.x, &below.h)?,
            Some(below) => below.h.clone(),
        };
        acts.push(cell.forward(&x, &prev.h, &prev.c)?);
    }
    Ok(acts)
}

pub fn output_layer_batch(params: &NetworkParams, tops: &[&[f64]]) -> Result<Vec<Vector>> {
    let mut out = params.output_weights.matvec_batch(tops)?;
    for o in &mut out {
        numerics::add_assign(o, &params.output_bias);
    }
    Ok(out)
}

/// Layer scan plus output layer for a window of frames, layer-major: every
/// frame goes through the bottom layer cell before any frame reaches the
/// next one. `hs[b][l]` is the time-cell output of layer `l` at frame `b`.
/// Each layer and the output layer are one batched kernel call.
pub fn layer_scan_batch(
    params: &NetworkParams,
    config: &NetworkConfig,
    hs: &[Vec<Vector>],
) -> Result<Vec<(Vec<CellActivations>, Vector)>> {
    if config.variant != Variant::LayerTrajectory {
        return Err(Error::Config(format!("layer scan requested for the {} variant", config.variant)));
    }
    if let Some(bad) = hs.iter().find(|h| h.len() != config.num_layers) {
        return Err(Error::dims("layer_scan", (config.num_layers, 1), (bad.len(), 1)));
    }
    let zeros_g = vec![0.0; config.proj_dim];
    let zeros_m = vec![0.0; config.cell_dim];
    let mut per_frame: Vec<Vec<CellActivations>> = vec![Vec::with_capacity(config.num_layers); hs.len()];
    for (l, cell) in params.layer_cells.iter().enumerate() {
        let xs: Vec<&[f64]> = hs.iter().map(|h| h[l].as_slice()).collect();
        let rs: Vec<&[f64]> = per_frame
            .iter()
            .map(|acts| acts.last().map_or(zeros_g.as_slice(), |a| a.h.as_slice()))
            .collect();
        let cs: Vec<&[f64]> = per_frame
            .iter()
            .map(|acts| acts.last().map_or(zeros_m.as_slice(), |a| a.c.as_slice()))
            .collect();
        let out = cell.forward_batch(&xs, &rs, &cs)?;
        for (acts, a) in per_frame.iter_mut().zip(out) {
            acts.push(a);
        }
    }
    let tops: Vec<&[f64]> = per_frame.iter().map(|a| a.last().unwrap().h.as_slice()).collect();
    let logits = output_layer_batch(params, &tops)?;
    Ok(per_frame.into_iter().zip(logits).collect())
}

pub fn forward_frame_traced(
    params: &NetworkParams,
    config: &NetworkConfig,
    s_t: &[f64],
    states: &FrameStates,
) -> Result<FrameTrace> {
    let time = time_lane(params, config, s_t, states)?;
    let (layer, logits) = match config.variant {
        Variant::LayerTrajectory => {
            let hs: Vec<Vector> = time.iter().map(|a| a.h.clone()).collect();
            layer_scan_batch(params, config, &[hs])?.remove(0)
        }
        Variant::Stacked | Variant::Residual => {
            let top = time.last().unwrap().h.as_slice();
            (Vec::new(), output_layer_batch(params, &[top])?.remove(0))
        }
    };
    Ok(FrameTrace { time, layer, logits })
}

/// One frame: returns logits and the updated time-cell states.
pub fn forward_frame(
    params: &NetworkParams,
    config: &NetworkConfig,
    s_t: &[f64],
    states: &FrameStates,
) -> Result<(Vector, FrameStates)> {
    let trace = forward_frame_traced(params, config, s_t, states)?;
    let next = trace.next_states();
    Ok((trace.logits, next))
}

/// Input frames `0, stride, 2·stride, …`.
pub fn strided<T>(frames: &[T], stride: usize) -> impl Iterator<Item = &T> {
    frames.iter().step_by(stride.max(1))
}

/// Runs a whole sequence from zero state. Output `t` corresponds to input
/// frame `t·frame_stride`.
pub fn forward_sequence_traced(
    params: &NetworkParams,
    config: &NetworkConfig,
    frames: &[Vector],
) -> Result<SequenceTrace> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("frame sequence"));
    }
    let mut states = FrameStates::zeros(config);
    let mut out = Vec::with_capacity(config.processed_frames(frames.len()));
    for s_t in strided(frames, config.frame_stride) {
        let trace = forward_frame_traced(params, config, s_t, &states)?;
        states = trace.next_states();
        out.push(trace);
    }
    Ok(SequenceTrace { frames: out })
}

pub fn forward_sequence(params: &NetworkParams, config: &NetworkConfig, frames: &[Vector]) -> Result<Vec<Vector>> {
    Ok(forward_sequence_traced(params, config, frames)?.logits())
}
