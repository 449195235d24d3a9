#![allow(dead_code)]

use ltlstm::network::{NetworkConfig, NetworkParams, Variant};
use ltlstm::numerics::{self, Vector};
use ltlstm::training::{Batch, Sequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod oracle;

/// Tiny model used for gradient and oracle checks.
pub fn tiny_config(variant: Variant, layers: usize) -> NetworkConfig {
    NetworkConfig {
        variant,
        num_layers: layers,
        input_dim: 3,
        cell_dim: 4,
        proj_dim: 3,
        output_dim: 5,
        factorized_gates: Default::default(),
        target_delay: 0,
        frame_stride: 1,
    }
}

pub fn random_frames(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vector> {
    (0..len).map(|_| numerics::uniform_vec(dim, 1.0, rng)).collect()
}

pub fn random_batch(config: &NetworkConfig, sequences: usize, len: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch::new(
        (0..sequences)
            .map(|_| {
                let frames = random_frames(&mut rng, len, config.input_dim);
                let labels = (0..config.processed_frames(len))
                    .map(|_| rng.gen_range(0..config.output_dim))
                    .collect();
                Sequence { frames, labels }
            })
            .collect(),
    )
}

pub fn random_params(config: &NetworkConfig, seed: u64) -> NetworkParams {
    NetworkParams::random(config, 0.6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
