use std::fmt;
use std::str::FromStr;

use crate::cells::{factor_side, CellDims, GateKind};
use crate::error::{Error, Result};
use crate::kvfile::KeyValues;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Stacked,
    Residual,
    LayerTrajectory,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Stacked, Variant::Residual, Variant::LayerTrajectory];

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Stacked => 0,
            Variant::Residual => 1,
            Variant::LayerTrajectory => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Stacked => "stacked",
            Variant::Residual => "residual",
            Variant::LayerTrajectory => "layer_trajectory",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "stacked" | "lstm" => Ok(Variant::Stacked),
            "residual" | "reslstm" => Ok(Variant::Residual),
            "layer_trajectory" | "layertrajectory" | "ltlstm" => Ok(Variant::LayerTrajectory),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lane {
    Time,
    Layer,
}

impl Lane {
    fn name(self) -> &'static str {
        match self {
            Lane::Time => "time",
            Lane::Layer => "layer",
        }
    }
}

/// Subset of {input, forget, output} × {time, layer} gates that are factorized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FactorizedGates(u8);

impl FactorizedGates {
    pub const NONE: FactorizedGates = FactorizedGates(0);

    fn bit(lane: Lane, gate: GateKind) -> u8 {
        let lane_offset = match lane {
            Lane::Time => 0,
            Lane::Layer => 3,
        };
        1 << (lane_offset + gate.index())
    }

    pub fn with(mut self, lane: Lane, gate: GateKind) -> Self {
        self.0 |= Self::bit(lane, gate);
        self
    }

    pub fn contains(self, lane: Lane, gate: GateKind) -> bool {
        self.0 & Self::bit(lane, gate) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn lane_mask(self, lane: Lane) -> [bool; 3] {
        GateKind::ALL.map(|g| self.contains(lane, g))
    }

    pub fn any_in(self, lane: Lane) -> bool {
        self.lane_mask(lane).iter().any(|&b| b)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits < 64).then_some(Self(bits))
    }
}

impl fmt::Display for FactorizedGates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let mut parts = Vec::new();
        for lane in [Lane::Time, Lane::Layer] {
            for gate in GateKind::ALL {
                if self.contains(lane, gate) {
                    parts.push(format!("{}.{}", lane.name(), gate.name()));
                }
            }
        }
        f.write_str(&parts.join(","))
    }
}

impl FromStr for FactorizedGates {
    type Err = String;

    /// `none`, or comma-separated `lane.gate` items such as `time.forget,layer.forget`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut set = FactorizedGates::NONE;
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(set);
        }
        for item in s.split(',').map(str::trim) {
            let (lane, gate) = item
                .split_once('.')
                .ok_or_else(|| format!("expected `lane.gate`, got `{item}`"))?;
            let lane = match lane {
                "time" => Lane::Time,
                "layer" => Lane::Layer,
                other => return Err(format!("unknown lane `{other}`")),
            };
            let gate = match gate {
                "input" => GateKind::Input,
                "forget" => GateKind::Forget,
                "output" => GateKind::Output,
                other => return Err(format!("unknown gate `{other}`")),
            };
            set = set.with(lane, gate);
        }
        Ok(set)
    }
}

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub num_layers: usize,
    pub input_dim: usize,
    pub cell_dim: usize,
    pub proj_dim: usize,
    pub output_dim: usize,
    pub factorized_gates: FactorizedGates,
    pub target_delay: usize,
    pub frame_stride: usize,
}

pub const NETWORK_KEYS: &[&str] = &[
    "variant",
    "num_layers",
    "input_dim",
    "cell_dim",
    "proj_dim",
    "output_dim",
    "factorized_gates",
    "target_delay",
    "frame_stride",
];

impl NetworkConfig {
    /// Desk-scale defaults: input 16, cell 64, projection 32, 8 classes.
    pub fn desk(variant: Variant, num_layers: usize) -> Self {
        Self {
            variant,
            num_layers,
            input_dim: 16,
            cell_dim: 64,
            proj_dim: 32,
            output_dim: 8,
            factorized_gates: FactorizedGates::NONE,
            target_delay: 0,
            frame_stride: 1,
        }
    }

    /// The production-size model: 80-dim input, 1024 cells, 512 projection, 9404 outputs.
    pub fn production(variant: Variant, num_layers: usize) -> Self {
        Self {
            variant,
            num_layers,
            input_dim: 80,
            cell_dim: 1024,
            proj_dim: 512,
            output_dim: 9404,
            factorized_gates: FactorizedGates::NONE,
            target_delay: 5,
            frame_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("input_dim", self.input_dim),
            ("cell_dim", self.cell_dim),
            ("proj_dim", self.proj_dim),
            ("output_dim", self.output_dim),
            ("frame_stride", self.frame_stride),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.factorized_gates.is_empty() {
            factor_side(self.cell_dim)?;
        }
        if self.variant != Variant::LayerTrajectory && self.factorized_gates.any_in(Lane::Layer) {
            return Err(Error::Config(format!(
                "layer-lane gates can only be factorized for the layer-trajectory variant, not {}",
                self.variant
            )));
        }
        Ok(())
    }

    pub fn time_cell_dims(&self, layer: usize) -> CellDims {
        CellDims {
            input_dim: if layer == 0 { self.input_dim } else { self.proj_dim },
            recurrent_dim: Some(self.proj_dim),
            cell_dim: self.cell_dim,
            proj_dim: self.proj_dim,
        }
    }

    /// The bottom layer cell has no recurrence matrices.
    pub fn layer_cell_dims(&self, layer: usize) -> CellDims {
        CellDims {
            input_dim: self.proj_dim,
            recurrent_dim: (layer > 0).then_some(self.proj_dim),
            cell_dim: self.cell_dim,
            proj_dim: self.proj_dim,
        }
    }

    /// Whether layer `layer` (0-based, ≥ 1) adds the shortcut from the input
    /// of the layer below. The first boundary carries one only when
    /// `input_dim == proj_dim`.
    pub fn residual_into(&self, layer: usize) -> bool {
        self.variant == Variant::Residual && (layer >= 2 || (layer == 1 && self.input_dim == self.proj_dim))
    }

    /// Number of processed frames for `frames` input frames.
    pub fn processed_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.frame_stride)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::desk(kv.require("variant")?, kv.require("num_layers")?);
        if let Some(v) = kv.get("input_dim")? {
            cfg.input_dim = v;
        }
        if let Some(v) = kv.get("cell_dim")? {
            cfg.cell_dim = v;
        }
        if let Some(v) = kv.get("proj_dim")? {
            cfg.proj_dim = v;
        }
        if let Some(v) = kv.get("output_dim")? {
            cfg.output_dim = v;
        }
        if let Some(v) = kv.get("factorized_gates")? {
            cfg.factorized_gates = v;
        }
        if let Some(v) = kv.get("target_delay")? {
            cfg.target_delay = v;
        }
        if let Some(v) = kv.get("frame_stride")? {
            cfg.frame_stride = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "variant = {}\nnum_layers = {}\ninput_dim = {}\ncell_dim = {}\nproj_dim = {}\noutput_dim = {}\nfactorized_gates = {}\ntarget_delay = {}\nframe_stride = {}\n",
            self.variant,
            self.num_layers,
            self.input_dim,
            self.cell_dim,
            self.proj_dim,
            self.output_dim,
            self.factorized_gates,
            self.target_delay,
            self.frame_stride
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorized_set_text_round_trip() {
        let set: FactorizedGates = "time.forget, layer.forget".parse().unwrap();
        assert!(set.contains(Lane::Time, GateKind::Forget));
        assert!(set.contains(Lane::Layer, GateKind::Forget));
        assert!(!set.contains(Lane::Time, GateKind::Input));
        assert_eq!(set.to_string().parse::<FactorizedGates>().unwrap(), set);
        assert_eq!("none".parse::<FactorizedGates>().unwrap(), FactorizedGates::NONE);
        assert!("time.cell".parse::<FactorizedGates>().is_err());
    }

    #[test]
    fn config_kv_round_trip() {
        let mut cfg = NetworkConfig::desk(Variant::LayerTrajectory, 3);
        cfg.factorized_gates = FactorizedGates::NONE.with(Lane::Layer, GateKind::Output);
        cfg.target_delay = 2;
        let kv = KeyValues::parse(&cfg.to_kv(), "mem").unwrap();
        assert_eq!(NetworkConfig::from_kv(&kv).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        let mut cfg = NetworkConfig::desk(Variant::Stacked, 2);
        cfg.cell_dim = 60;
        assert!(cfg.validate().is_ok());
        cfg.factorized_gates = FactorizedGates::NONE.with(Lane::Time, GateKind::Input);
        assert!(cfg.validate().is_err());
        cfg.cell_dim = 64;
        assert!(cfg.validate().is_ok());
        cfg.factorized_gates = FactorizedGates::NONE.with(Lane::Layer, GateKind::Input);
        assert!(cfg.validate().is_err());
        cfg.factorized_gates = FactorizedGates::NONE;
        cfg.frame_stride = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn residual_boundaries() {
        let mut cfg = NetworkConfig::desk(Variant::Residual, 4);
        assert!(!cfg.residual_into(1));
        assert!(cfg.residual_into(2) && cfg.residual_into(3));
        cfg.input_dim = cfg.proj_dim;
        assert!(cfg.residual_into(1));
        cfg.variant = Variant::Stacked;
        assert!(!cfg.residual_into(2));
    }

    #[test]
    fn stride_frame_counts() {
        let mut cfg = NetworkConfig::desk(Variant::Stacked, 1);
        cfg.frame_stride = 2;
        assert_eq!(cfg.processed_frames(7), 4);
        cfg.frame_stride = 1;
        assert_eq!(cfg.processed_frames(7), 7);
    }
}
