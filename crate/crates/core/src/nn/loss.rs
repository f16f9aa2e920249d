//! Softmax and the summed two-head categorical cross-entropy.

use crate::error::{Error, Result};

/// Numerically stable row softmax.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    assert_eq!(logits.len() % classes, 0);
    let mut out = vec![0.0; logits.len()];
    for (row, orow) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &l) in orow.iter_mut().zip(row.iter()) {
            *o = (l - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

pub struct TwoHeadLoss {
    pub loss: f64,
    pub seq_loss: f64,
    pub plane_loss: f64,
    /// (softmax - onehot) / N per head
    pub d_seq_logits: Vec<f64>,
    pub d_plane_logits: Vec<f64>,
}

/// Summed categorical cross-entropy over both heads, mean over the batch.
/// Head weights are 1:1.
pub fn two_head_loss(
    seq_logits: &[f64],
    plane_logits: &[f64],
    seq_targets: &[usize],
    plane_targets: &[usize],
    seq_classes: usize,
    plane_classes: usize,
) -> Result<TwoHeadLoss> {
    let n = seq_targets.len();
    if plane_targets.len() != n
        || seq_logits.len() != n * seq_classes
        || plane_logits.len() != n * plane_classes
    {
        return Err(Error::ShapeMismatch("two_head_loss batch sizes".into()));
    }
    let (seq_loss, d_seq_logits) = head_ce(seq_logits, seq_targets, seq_classes, "sequence")?;
    let (plane_loss, d_plane_logits) = head_ce(plane_logits, plane_targets, plane_classes, "plane")?;
    Ok(TwoHeadLoss {
        loss: seq_loss + plane_loss,
        seq_loss,
        plane_loss,
        d_seq_logits,
        d_plane_logits,
    })
}

fn head_ce(
    logits: &[f64],
    targets: &[usize],
    classes: usize,
    head: &'static str,
) -> Result<(f64, Vec<f64>)> {
    let n = targets.len();
    let probs = softmax_rows(logits, classes);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (b, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::IndexOutOfRange { head, index: t });
        }
        // clamp away from zero so a confidently-wrong fixture cannot produce inf
        loss += -(probs[b * classes + t].max(1e-300)).ln();
        grad[b * classes + t] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    for g in grad.iter_mut() {
        *g *= inv_n;
    }
    Ok((loss * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let probs = softmax_rows(&[1.0, 2.0, 3.0, -5.0, 0.0, 5.0], 3);
        for row in probs.chunks_exact(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let seq = vec![0.0; 17];
        let plane = vec![0.0; 10];
        let l = two_head_loss(&seq, &plane, &[3], &[7], 17, 10).unwrap();
        let expect = (17f64).ln() + (10f64).ln();
        assert!((l.loss - expect).abs() < 1e-12, "{} vs {}", l.loss, expect);
        assert!((l.loss - 5.136).abs() < 1e-3);
    }

    #[test]
    fn loss_vanishes_with_growing_margin() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 100.0] {
            let mut seq = vec![0.0; 17];
            seq[4] = margin;
            let mut plane = vec![0.0; 10];
            plane[2] = margin;
            let l = two_head_loss(&seq, &plane, &[4], &[2], 17, 10).unwrap();
            assert!(l.loss < prev);
            prev = l.loss;
        }
        assert!(prev < 1e-40);
    }

    #[test]
    fn bad_target_index_rejected() {
        let seq = vec![0.0; 17];
        let plane = vec![0.0; 10];
        assert!(matches!(
            two_head_loss(&seq, &plane, &[17], &[0], 17, 10),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let seq = vec![0.2, -0.4, 1.0];
        let plane = vec![0.0, 0.0];
        let l = two_head_loss(&seq, &plane, &[1], &[0], 3, 2).unwrap();
        let p = softmax_rows(&seq, 3);
        assert!((l.d_seq_logits[0] - p[0]).abs() < 1e-12);
        assert!((l.d_seq_logits[1] - (p[1] - 1.0)).abs() < 1e-12);
        assert!((l.d_seq_logits[2] - p[2]).abs() < 1e-12);
    }
}
