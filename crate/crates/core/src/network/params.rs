use rand::Rng;

use super::config::{Lane, NetworkConfig, Variant};
use crate::cells::CellParams;
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};

/// All trainable parameters of a network.
///
/// Tensor order (used by checkpoints, gradient checks and optimizers): time
/// cells bottom to top, then layer cells bottom to top, then the output
/// layer. Within a cell: input, forget and output gates, candidate,
/// projection.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub time_cells: Vec<CellParams>,
    /// Empty unless the variant is layer-trajectory.
    pub layer_cells: Vec<CellParams>,
    pub output_weights: Matrix,
    pub output_bias: Vector,
}

impl NetworkParams {
    /// Standard initialization.
    pub fn init<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let time_cells = (0..config.num_layers)
            .map(|l| {
                CellParams::init(
                    config.time_cell_dims(l),
                    config.factorized_gates.lane_mask(Lane::Time),
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let layer_cells = if config.variant == Variant::LayerTrajectory {
            (0..config.num_layers)
                .map(|l| {
                    CellParams::init(
                        config.layer_cell_dims(l),
                        config.factorized_gates.lane_mask(Lane::Layer),
                        rng,
                    )
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let scale = 1.0 / (config.proj_dim as f64).sqrt();
        Ok(Self {
            time_cells,
            layer_cells,
            output_weights: Matrix::uniform(config.output_dim, config.proj_dim, scale, rng),
            output_bias: vec![0.0; config.output_dim],
        })
    }

    /// Every element (peepholes and biases included) uniform in ±`scale`.
    pub fn random<R: Rng + ?Sized>(config: &NetworkConfig, scale: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let time_cells = (0..config.num_layers)
            .map(|l| {
                CellParams::random(
                    config.time_cell_dims(l),
                    config.factorized_gates.lane_mask(Lane::Time),
                    scale,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let layer_cells = if config.variant == Variant::LayerTrajectory {
            (0..config.num_layers)
                .map(|l| {
                    CellParams::random(
                        config.layer_cell_dims(l),
                        config.factorized_gates.lane_mask(Lane::Layer),
                        scale,
                        rng,
                    )
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            time_cells,
            layer_cells,
            output_weights: Matrix::uniform(config.output_dim, config.proj_dim, scale, rng),
            output_bias: numerics::uniform_vec(config.output_dim, scale, rng),
        })
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        Ok(Self::random(config, 0.0, &mut rand::rngs::mock::StepRng::new(0, 0))?.zeros_like())
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|v| *v = 0.0);
        z
    }

    /// Confirms every tensor has the shape `config` implies.
    pub fn check(&self, config: &NetworkConfig) -> Result<()> {
        let expected = Self::zeros(config)?;
        let got = self.tensors();
        let want = expected.tensors();
        if got.len() != want.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, config implies {}",
                got.len(),
                want.len()
            )));
        }
        for ((gn, gt), (wn, wt)) in got.iter().zip(&want) {
            if gn != wn || gt.len() != wt.len() {
                return Err(Error::Config(format!(
                    "tensor {gn} ({} elements) does not match {wn} ({} elements)",
                    gt.len(),
                    wt.len()
                )));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, cell) in self.time_cells.iter().enumerate() {
            out.extend(cell.tensors(&format!("time[{l}]")));
        }
        for (l, cell) in self.layer_cells.iter().enumerate() {
            out.extend(cell.tensors(&format!("layer[{l}]")));
        }
        out.push(("output.weights".to_string(), self.output_weights.as_slice()));
        out.push(("output.bias".to_string(), &self.output_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for cell in &mut self.time_cells {
            out.extend(cell.tensors_mut());
        }
        for cell in &mut self.layer_cells {
            out.extend(cell.tensors_mut());
        }
        out.push(self.output_weights.as_mut_slice());
        out.push(&mut self.output_bias);
        out
    }

    pub fn num_elements(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(&mut f);
        }
    }

    /// Flattened copy in tensor order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_elements() {
            return Err(Error::dims("set_flat", (self.num_elements(), 1), (flat.len(), 1)));
        }
        let mut it = flat.iter();
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Mutable access to one element by flat index.
    pub fn element_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for t in self.tensors_mut() {
            if index < t.len() {
                return Some(&mut t[index]);
            }
            index -= t.len();
        }
        None
    }

    /// Tensor name and offset for a flat index.
    pub fn locate(&self, mut index: usize) -> Option<(String, usize)> {
        for (name, t) in self.tensors() {
            if index < t.len() {
                return Some((name, index));
            }
            index -= t.len();
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{Gate, GateKind};
    use crate::network::FactorizedGates;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bottom_layer_cell_has_no_recurrence() {
        let cfg = NetworkConfig::desk(Variant::LayerTrajectory, 3);
        let p = NetworkParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.layer_cells.len(), 3);
        assert!(p.layer_cells[0].candidate.w_recurrent.is_none());
        assert!(p.layer_cells[1].candidate.w_recurrent.is_some());
        assert!(p.time_cells[0].candidate.w_recurrent.is_some());
        let stacked = NetworkParams::init(&NetworkConfig::desk(Variant::Stacked, 3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(stacked.layer_cells.is_empty());
    }

    #[test]
    fn init_follows_convention() {
        let cfg = NetworkConfig::desk(Variant::Stacked, 1);
        let p = NetworkParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cell = &p.time_cells[0];
        let Gate::Dense(forget) = &cell.forget_gate else { panic!() };
        assert!(forget.affine.bias.iter().all(|&b| b == 1.0));
        assert!(forget.peephole.as_ref().unwrap().iter().all(|&v| v == 0.0));
        let Gate::Dense(input) = &cell.input_gate else { panic!() };
        assert!(input.affine.bias.iter().all(|&b| b == 0.0));
        let s = 1.0 / ((16 + 32) as f64).sqrt();
        assert!(input.affine.w_input.as_slice().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn factorized_gates_carry_no_peephole() {
        let mut cfg = NetworkConfig::desk(Variant::LayerTrajectory, 2);
        cfg.factorized_gates = FactorizedGates::NONE
            .with(Lane::Time, GateKind::Forget)
            .with(Lane::Layer, GateKind::Input);
        let p = NetworkParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(p.time_cells[1].forget_gate.is_factorized());
        assert!(!p.time_cells[1].input_gate.is_factorized());
        assert!(p.layer_cells[0].input_gate.is_factorized());
        assert!(p.tensors().iter().all(|(n, _)| !(n.contains("forget") && n.starts_with("time") && n.ends_with("peephole"))));
        p.check(&cfg).unwrap();
        assert!(p.check(&NetworkConfig::desk(Variant::LayerTrajectory, 2)).is_err());
    }

    #[test]
    fn flat_round_trip_and_locate() {
        let cfg = NetworkConfig::desk(Variant::Residual, 2);
        let p = NetworkParams::random(&cfg, 0.3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.locate(0).unwrap(), ("time[0].input.w_input".to_string(), 0));
        let last = p.num_elements() - 1;
        assert_eq!(p.locate(last).unwrap().0, "output.bias");
        assert!(p.locate(last + 1).is_none());
    }
}
