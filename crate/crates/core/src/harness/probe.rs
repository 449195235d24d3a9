use std::fmt::Write as _;

use crate::error::Result;
use crate::network::{NetworkConfig, NetworkParams};
use crate::numerics;
use crate::training::{batch_loss_and_grad, Batch};

/// Per-layer L2 norms of time-cell parameter gradients, bottom to top.
#[derive(Debug, Clone, PartialEq)]
pub struct GradNormProfile {
    pub norms: Vec<f64>,
}

impl GradNormProfile {
    pub const CSV_HEADER: &'static str = "layer,grad_norm";

    /// Bottom over top norm; `None` when the top norm is zero.
    pub fn ratio(&self) -> Option<f64> {
        let top = *self.norms.last()?;
        (top > 0.0).then(|| self.norms[0] / top)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (l, n) in self.norms.iter().enumerate() {
            let _ = writeln!(out, "{l},{n:e}");
        }
        out
    }
}

/// One forward/backward pass of the (mean-normalized) batch loss.
pub fn grad_norm_probe(params: &NetworkParams, config: &NetworkConfig, batch: &Batch) -> Result<GradNormProfile> {
    let (_, grads) = batch_loss_and_grad(params, config, batch)?;
    let norms = grads
        .time_cells
        .iter()
        .map(|cell| {
            cell.tensors("")
                .iter()
                .map(|(_, t)| numerics::norm_sq(t))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(GradNormProfile { norms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_task, SyntheticTaskSpec};
    use crate::network::Variant;
    use crate::training::Sequence;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(variant: Variant, layers: usize) -> (NetworkParams, NetworkConfig, Vec<Sequence>) {
        let mut cfg = NetworkConfig::desk(variant, layers);
        cfg.target_delay = 2;
        let p = NetworkParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut spec = SyntheticTaskSpec::delayed_recall(2, 4);
        spec.train_count = 4;
        spec.seq_len = 10;
        (p, cfg, generate_task(&spec).unwrap().train)
    }

    #[test]
    fn single_layer_ratio_is_one() {
        let (p, cfg, seqs) = setup(Variant::Stacked, 1);
        let prof = grad_norm_probe(&p, &cfg, &Batch::new(seqs)).unwrap();
        assert_eq!(prof.norms.len(), 1);
        assert_eq!(prof.ratio(), Some(1.0));
    }

    #[test]
    fn duplicated_batch_keeps_profile() {
        let (p, cfg, seqs) = setup(Variant::LayerTrajectory, 3);
        let once = grad_norm_probe(&p, &cfg, &Batch::new(seqs.clone())).unwrap();
        let twice = grad_norm_probe(&p, &cfg, &Batch::new([seqs.clone(), seqs].concat())).unwrap();
        for (a, b) in once.norms.iter().zip(&twice.norms) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
        assert!(once.norms.iter().all(|n| *n >= 0.0));
        let csv = once.to_csv();
        assert!(csv.starts_with("layer,grad_norm\n0,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
