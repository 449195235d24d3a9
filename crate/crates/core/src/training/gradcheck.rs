use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backward::GradientSet;
use super::batch::{batch_loss_and_grad, Batch};
use super::extended::ExtendedNetwork;
use crate::error::Result;
use crate::network::{NetworkConfig, NetworkParams};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Above this many parameters a seeded random subsample is checked.
    pub max_elements: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-6,
            max_elements: 4096,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `|a − n| / max(|a|, |n|, 1e-8)` maximized over checked elements.
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_offset: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    pub total: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences of the batch loss.
pub fn grad_check(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &Batch,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let opts = GradCheckOptions {
        step,
        tolerance,
        ..Default::default()
    };
    grad_check_with(params, config, batch, opts, |p, c, b| Ok(batch_loss_and_grad(p, c, b)?.1))
}

/// As [`grad_check`], with the analytic gradient supplied by the caller.
///
/// The perturbed losses are evaluated in double-double arithmetic, so the
/// numeric side carries only the O(step²) truncation error.
pub fn grad_check_with<F>(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &Batch,
    opts: GradCheckOptions,
    analytic: F,
) -> Result<GradCheckReport>
where
    F: Fn(&NetworkParams, &NetworkConfig, &Batch) -> Result<GradientSet>,
{
    assert!(opts.step > 0.0, "finite-difference step must be positive");
    let grads = analytic(params, config, batch)?.to_flat();
    let total = grads.len();
    let indices: Vec<usize> = if total > opts.max_elements {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, total, opts.max_elements).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..total).collect()
    };

    let mut probe = ExtendedNetwork::new(params);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_offset: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: indices.len(),
        total,
        tolerance: opts.tolerance,
    };
    for &i in &indices {
        let original = *probe.element_mut(i).unwrap();
        *probe.element_mut(i).unwrap() = original + opts.step;
        let plus = probe.batch_loss(config, batch)?;
        *probe.element_mut(i).unwrap() = original - opts.step;
        let minus = probe.batch_loss(config, batch)?;
        *probe.element_mut(i).unwrap() = original;
        let numeric = (plus - minus).hi() / (2.0 * opts.step);
        let err = relative_error(grads[i], numeric);
        if err > report.max_rel_error || report.worst_tensor.is_empty() {
            let (tensor, offset) = params.locate(i).unwrap();
            report.max_rel_error = err;
            report.worst_tensor = tensor;
            report.worst_offset = offset;
            report.worst_analytic = grads[i];
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
