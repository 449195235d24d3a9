use rayon::prelude::*;

use super::backward::{backward_sequence, GradientSet};
use super::loss::cross_entropy_sum;
use crate::error::{Error, Result};
use crate::network::{forward_sequence, forward_sequence_traced, NetworkConfig, NetworkParams};
use crate::numerics::Vector;

/// One utterance: input frames and one label per processed frame (before
/// the target-delay shift).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Vector>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub sequences: Vec<Sequence>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEval {
    /// Frame-pooled mean cross-entropy.
    pub loss: f64,
    pub compared: usize,
    pub correct: usize,
}

impl BatchEval {
    pub fn frame_accuracy(&self) -> f64 {
        if self.compared == 0 {
            0.0
        } else {
            self.correct as f64 / self.compared as f64
        }
    }
}

impl Batch {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        Self { sequences }
    }

    /// Total compared frames across the batch after stride and delay.
    pub(crate) fn compared_frames(&self, config: &NetworkConfig) -> Result<usize> {
        let mut total = 0;
        for (i, s) in self.sequences.iter().enumerate() {
            if s.frames.is_empty() {
                return Err(Error::EmptyInput("sequence with no frames"));
            }
            let processed = config.processed_frames(s.frames.len());
            if s.labels.len() != processed {
                return Err(Error::Config(format!(
                    "sequence {i}: {} labels for {processed} processed frames",
                    s.labels.len()
                )));
            }
            total += processed.saturating_sub(config.target_delay);
        }
        Ok(total)
    }
}

/// Frame-pooled loss without gradients.
pub fn batch_loss(params: &NetworkParams, config: &NetworkConfig, batch: &Batch) -> Result<BatchEval> {
    let total = batch.compared_frames(config)?;
    let parts = batch
        .sequences
        .par_iter()
        .map(|s| {
            let logits = forward_sequence(params, config, &s.frames)?;
            cross_entropy_sum(&logits, &s.labels, config.target_delay, 0.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut correct = 0;
    for p in &parts {
        loss += p.loss;
        correct += p.correct;
    }
    Ok(BatchEval {
        loss: if total == 0 { 0.0 } else { loss / total as f64 },
        compared: total,
        correct,
    })
}

/// Frame-pooled loss and its exact gradient. Sequences are processed in
/// parallel; per-sequence gradients are summed in batch order so the result
/// does not depend on scheduling.
pub fn batch_loss_and_grad(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &Batch,
) -> Result<(BatchEval, GradientSet)> {
    let total = batch.compared_frames(config)?;
    if total == 0 {
        log::warn!("degenerate batch: no frame has a delayed label");
        return Ok((
            BatchEval {
                loss: 0.0,
                compared: 0,
                correct: 0,
            },
            GradientSet::zeros_like(params),
        ));
    }
    let scale = 1.0 / total as f64;
    let parts = batch
        .sequences
        .par_iter()
        .map(|s| {
            let trace = forward_sequence_traced(params, config, &s.frames)?;
            let out = cross_entropy_sum(&trace.logits(), &s.labels, config.target_delay, scale)?;
            let grads = backward_sequence(params, config, &trace, &out.dlogits)?;
            Ok((out.loss, out.correct, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = GradientSet::zeros_like(params);
    let mut loss = 0.0;
    let mut correct = 0;
    for (l, c, g) in &parts {
        loss += l;
        correct += c;
        grads.accumulate(g);
    }
    Ok((
        BatchEval {
            loss: loss * scale,
            compared: total,
            correct,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;
    use crate::numerics;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(rng: &mut ChaCha8Rng, len: usize, dim: usize, classes: usize) -> Sequence {
        use rand::Rng;
        Sequence {
            frames: (0..len).map(|_| numerics::uniform_vec(dim, 1.0, rng)).collect(),
            labels: (0..len).map(|_| rng.gen_range(0..classes)).collect(),
        }
    }

    fn setup() -> (NetworkConfig, NetworkParams, ChaCha8Rng) {
        let mut cfg = NetworkConfig::desk(Variant::LayerTrajectory, 2);
        cfg.input_dim = 4;
        cfg.cell_dim = 9;
        cfg.proj_dim = 3;
        cfg.output_dim = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = NetworkParams::random(&cfg, 0.5, &mut rng).unwrap();
        (cfg, p, rng)
    }

    #[test]
    fn duplicated_batch_gives_same_mean_gradient() {
        let (cfg, p, mut rng) = setup();
        let s = seq(&mut rng, 5, 4, 3);
        let (e1, g1) = batch_loss_and_grad(&p, &cfg, &Batch::new(vec![s.clone()])).unwrap();
        let (e2, g2) = batch_loss_and_grad(&p, &cfg, &Batch::new(vec![s.clone(), s])).unwrap();
        assert!((e1.loss - e2.loss).abs() < 1e-15);
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn loss_invariant_under_reordering() {
        let (cfg, p, mut rng) = setup();
        let seqs: Vec<Sequence> = (0..4).map(|i| seq(&mut rng, 3 + i, 4, 3)).collect();
        let a = batch_loss(&p, &cfg, &Batch::new(seqs.clone())).unwrap();
        let mut rev = seqs;
        rev.reverse();
        let b = batch_loss(&p, &cfg, &Batch::new(rev)).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-13);
        assert_eq!(a.compared, b.compared);
    }

    #[test]
    fn forward_only_loss_matches_gradient_pass() {
        let (cfg, p, mut rng) = setup();
        let b = Batch::new((0..3).map(|_| seq(&mut rng, 4, 4, 3)).collect());
        let e = batch_loss(&p, &cfg, &b).unwrap();
        let (eg, _) = batch_loss_and_grad(&p, &cfg, &b).unwrap();
        assert!((e.loss - eg.loss).abs() < 1e-14);
        assert_eq!(e.correct, eg.correct);
    }

    #[test]
    fn label_count_checked() {
        let (cfg, p, mut rng) = setup();
        let mut s = seq(&mut rng, 4, 4, 3);
        s.labels.pop();
        assert!(batch_loss(&p, &cfg, &Batch::new(vec![s])).is_err());
    }
}
