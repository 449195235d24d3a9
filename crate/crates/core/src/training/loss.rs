use crate::error::{Error, Result};
use crate::numerics::Vector;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean per-frame cross-entropy over compared frames (0 when none).
    pub loss: f64,
    /// One gradient per logits frame; zero for excluded frames.
    pub dlogits: Vec<Vector>,
    pub compared: usize,
    /// Frames whose arg-max matched the label.
    pub correct: usize,
}

pub fn log_softmax(logits: &[f64]) -> Vector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Sum (not mean) of per-frame cross-entropy with gradients scaled by
/// `grad_scale`. Label `j` is compared with logits frame `j + target_delay`.
pub(crate) fn cross_entropy_sum(
    logits_seq: &[Vector],
    labels: &[usize],
    target_delay: usize,
    grad_scale: f64,
) -> Result<LossOutput> {
    let mut dlogits: Vec<Vector> = logits_seq.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut total = 0.0;
    let mut compared = 0;
    let mut correct = 0;
    for (t, logits) in logits_seq.iter().enumerate().skip(target_delay) {
        let Some(&label) = labels.get(t - target_delay) else {
            break;
        };
        if label >= logits.len() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: logits.len(),
            });
        }
        let lp = log_softmax(logits);
        total -= lp[label];
        let argmax = lp
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > lp[best] { i } else { best });
        if argmax == label {
            correct += 1;
        }
        for (d, l) in dlogits[t].iter_mut().zip(&lp) {
            *d = l.exp() * grad_scale;
        }
        dlogits[t][label] -= grad_scale;
        compared += 1;
    }
    Ok(LossOutput {
        loss: total,
        dlogits,
        compared,
        correct,
    })
}

/// Mean cross-entropy over frames that have a delayed label.
///
/// Labels are shifted later by `target_delay` frames; frames without a label
/// after the shift are excluded. With no compared frames the loss is 0, the
/// gradient is all zeros and a warning is logged.
pub fn cross_entropy_loss(logits_seq: &[Vector], labels: &[usize], target_delay: usize) -> Result<LossOutput> {
    let compared = labels
        .len()
        .min(logits_seq.len().saturating_sub(target_delay));
    if compared == 0 {
        log::warn!(
            "degenerate batch: {} frames with target delay {target_delay} leave no compared frames",
            logits_seq.len()
        );
        return cross_entropy_sum(logits_seq, &[], 0, 0.0);
    }
    let mut out = cross_entropy_sum(logits_seq, labels, target_delay, 1.0 / compared as f64)?;
    out.loss /= compared as f64;
    Ok(out)
}
