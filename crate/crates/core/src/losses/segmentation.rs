//! Dice + cross-entropy supervision and the pseudo-label cross-entropy.
//!
//! Logit tensors are `[B, K, H, W]` (or `[K, H, W]` for a single image);
//! label slices are `B·H·W` class indices in the same pixel order.

use crate::error::{Error, Result};
use crate::numerics::{softmax_into, Tensor};

use super::LossValue;

pub const DICE_SMOOTHING: f64 = 1e-5;

struct Layout {
    batch: usize,
    classes: usize,
    pixels: usize,
}

impl Layout {
    fn of(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [k, h, w] => Ok(Self { batch: 1, classes: k, pixels: h * w }),
            [b, k, h, w] => Ok(Self { batch: b, classes: k, pixels: h * w }),
            ref s => Err(Error::ShapeMismatch(format!("expected [B,K,H,W] or [K,H,W], got {s:?}"))),
        }
    }

    fn index(&self, b: usize, k: usize, p: usize) -> usize {
        (b * self.classes + k) * self.pixels + p
    }

    /// Per-pixel softmax over classes, same layout as the logits.
    fn softmax(&self, logits: &[f64]) -> Vec<f64> {
        let mut probs = vec![0.0; logits.len()];
        let mut column = vec![0.0; self.classes];
        let mut out = vec![0.0; self.classes];
        for b in 0..self.batch {
            for p in 0..self.pixels {
                for k in 0..self.classes {
                    column[k] = logits[self.index(b, k, p)];
                }
                softmax_into(&column, &mut out);
                for k in 0..self.classes {
                    probs[self.index(b, k, p)] = out[k];
                }
            }
        }
        probs
    }
}

fn check_labels(layout: &Layout, labels: &[usize]) -> Result<()> {
    if labels.len() != layout.batch * layout.pixels {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} pixels",
            labels.len(),
            layout.batch * layout.pixels
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= layout.classes) {
        return Err(Error::Data(format!("label {y} outside 0..{}", layout.classes)));
    }
    Ok(())
}

/// `0.5 · (1 − mean soft Dice over classes present in labels) + 0.5 · mean pixel CE`,
/// with the gradient with respect to the logits (key `"logits"`).
pub fn dice_ce_loss(logits: &Tensor, labels: &[usize]) -> Result<LossValue> {
    let layout = Layout::of(logits)?;
    check_labels(&layout, labels)?;
    let probs = layout.softmax(logits.data());
    let total_pixels = (layout.batch * layout.pixels) as f64;
    let label_at = |b: usize, p: usize| labels[b * layout.pixels + p];

    let mut present = vec![false; layout.classes];
    labels.iter().for_each(|&y| present[y] = true);
    let num_present = present.iter().filter(|&&x| x).count() as f64;

    // Dice terms, accumulated over the whole batch.
    let mut intersection = vec![0.0; layout.classes];
    let mut pred_sum = vec![0.0; layout.classes];
    let mut gt_sum = vec![0.0; layout.classes];
    for b in 0..layout.batch {
        for p in 0..layout.pixels {
            let y = label_at(b, p);
            gt_sum[y] += 1.0;
            for k in 0..layout.classes {
                let pk = probs[layout.index(b, k, p)];
                pred_sum[k] += pk;
                if k == y {
                    intersection[k] += pk;
                }
            }
        }
    }
    let mut dice_mean = 0.0;
    for k in (0..layout.classes).filter(|&k| present[k]) {
        dice_mean += (2.0 * intersection[k] + DICE_SMOOTHING) / (pred_sum[k] + gt_sum[k] + DICE_SMOOTHING);
    }
    dice_mean /= num_present;

    let mut ce = 0.0;
    for b in 0..layout.batch {
        for p in 0..layout.pixels {
            ce -= probs[layout.index(b, label_at(b, p), p)].ln();
        }
    }
    ce /= total_pixels;
    let value = 0.5 * (1.0 - dice_mean) + 0.5 * ce;

    // dL/dp for the Dice part, then through the softmax; CE goes straight to logits.
    let mut grad = vec![0.0; probs.len()];
    let mut dprob = vec![0.0; layout.classes];
    for b in 0..layout.batch {
        for p in 0..layout.pixels {
            let y = label_at(b, p);
            for k in 0..layout.classes {
                dprob[k] = if present[k] {
                    let s = pred_sum[k] + gt_sum[k] + DICE_SMOOTHING;
                    let g = if k == y { 1.0 } else { 0.0 };
                    let dd = (2.0 * g * s - (2.0 * intersection[k] + DICE_SMOOTHING)) / (s * s);
                    -0.5 * dd / num_present
                } else {
                    0.0
                };
            }
            let inner: f64 = (0..layout.classes).map(|k| probs[layout.index(b, k, p)] * dprob[k]).sum();
            for k in 0..layout.classes {
                let idx = layout.index(b, k, p);
                let pk = probs[idx];
                let onehot = if k == y { 1.0 } else { 0.0 };
                grad[idx] = pk * (dprob[k] - inner) + 0.5 * (pk - onehot) / total_pixels;
            }
        }
    }
    Ok(LossValue::new(value).with_grad("logits", Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Argmax class (ties to the smallest index) and its probability, per pixel.
pub fn pseudo_labels(teacher_probs: &Tensor) -> Result<(Vec<usize>, Vec<f64>)> {
    let layout = Layout::of(teacher_probs)?;
    let data = teacher_probs.data();
    let mut labels = Vec::with_capacity(layout.batch * layout.pixels);
    let mut confidence = Vec::with_capacity(layout.batch * layout.pixels);
    for b in 0..layout.batch {
        for p in 0..layout.pixels {
            let mut best = 0;
            let mut best_p = data[layout.index(b, 0, p)];
            for k in 1..layout.classes {
                let v = data[layout.index(b, k, p)];
                if v > best_p {
                    best = k;
                    best_p = v;
                }
            }
            labels.push(best);
            confidence.push(best_p);
        }
    }
    Ok((labels, confidence))
}

/// Mean cross-entropy of the student against the teacher's argmax labels,
/// over pixels whose teacher confidence is at least `threshold`. Zero (with a
/// zero gradient) when no pixel qualifies.
pub fn pseudo_label_ce_loss(student_logits: &Tensor, teacher_probs: &Tensor, threshold: f64) -> Result<LossValue> {
    if !student_logits.same_shape(teacher_probs) {
        return Err(Error::ShapeMismatch(format!(
            "student {:?} vs teacher {:?}",
            student_logits.shape(),
            teacher_probs.shape()
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("confidence threshold must be in [0, 1], got {threshold}")));
    }
    let layout = Layout::of(student_logits)?;
    let (labels, confidence) = pseudo_labels(teacher_probs)?;
    let probs = layout.softmax(student_logits.data());
    let kept = confidence.iter().filter(|&&c| c >= threshold).count();
    let mut grad = vec![0.0; probs.len()];
    if kept == 0 {
        return Ok(LossValue::new(0.0).with_grad("logits", Tensor::new(student_logits.shape().to_vec(), grad)?));
    }
    let inv = 1.0 / kept as f64;
    let mut value = 0.0;
    for b in 0..layout.batch {
        for p in 0..layout.pixels {
            let q = b * layout.pixels + p;
            if confidence[q] < threshold {
                continue;
            }
            let y = labels[q];
            value -= probs[layout.index(b, y, p)].ln() * inv;
            for k in 0..layout.classes {
                let idx = layout.index(b, k, p);
                let onehot = if k == y { 1.0 } else { 0.0 };
                grad[idx] = (probs[idx] - onehot) * inv;
            }
        }
    }
    Ok(LossValue::new(value).with_grad("logits", Tensor::new(student_logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, gradient_relative_error, RngStream};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn one_hot_logits(k: usize, labels: &[usize], scale: f64) -> Tensor {
        let n = labels.len();
        let mut data = vec![-scale; k * n];
        for (p, &y) in labels.iter().enumerate() {
            data[y * n + p] = scale;
        }
        Tensor::new(vec![k, 1, n], data).unwrap()
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let labels = [0, 1, 2, 1, 0, 0];
        let lv = dice_ce_loss(&one_hot_logits(3, &labels, 20.0), &labels).unwrap();
        assert!(lv.value <= 1e-4, "{}", lv.value);
    }

    #[test]
    fn binary_half_probabilities() {
        let logits = Tensor::new(vec![2, 1, 2], vec![0.0; 4]).unwrap();
        let lv = dice_ce_loss(&logits, &[1, 1]).unwrap();
        let dice = (2.0 + DICE_SMOOTHING) / (3.0 + DICE_SMOOTHING);
        let expected = 0.5 * (1.0 - dice) + 0.5 * 2f64.ln();
        assert!((lv.value - expected).abs() < 1e-12);
        assert!((lv.value - (0.5 / 3.0 + 0.5 * 2f64.ln())).abs() < 1e-5);
    }

    #[test]
    fn dice_ce_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(31);
        for _ in 0..10 {
            let shape = vec![2, 3, 3, 4];
            let n: usize = shape.iter().product();
            let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let labels: Vec<usize> = (0..24).map(|_| rng.random_range(0..3)).collect();
            let t = Tensor::new(shape.clone(), x.clone()).unwrap();
            let lv = dice_ce_loss(&t, &labels).unwrap();
            let f = |v: &[f64]| dice_ce_loss(&Tensor::new(shape.clone(), v.to_vec()).unwrap(), &labels).unwrap().value;
            let fd = finite_diff_gradient(f, &x, 1e-6).unwrap();
            assert!(gradient_relative_error(lv.grad("logits").unwrap().data(), &fd) < 1e-6);
        }
    }

    #[test]
    fn uniform_teacher_masks_everything() {
        let teacher = Tensor::new(vec![4, 2, 2], vec![0.25; 16]).unwrap();
        let student = Tensor::new(vec![4, 2, 2], (0..16).map(|i| i as f64 * 0.1).collect()).unwrap();
        let lv = pseudo_label_ce_loss(&student, &teacher, 0.9).unwrap();
        assert_eq!(lv.value, 0.0);
        assert!(lv.grad("logits").unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn student_matching_teacher_is_near_zero() {
        let labels = [2, 0, 1, 1];
        let student = one_hot_logits(3, &labels, 20.0);
        let mut teacher = vec![0.0; 12];
        for (p, &y) in labels.iter().enumerate() {
            teacher[y * 4 + p] = 1.0;
        }
        let teacher = Tensor::new(vec![3, 1, 4], teacher).unwrap();
        assert!(pseudo_label_ce_loss(&student, &teacher, 0.5).unwrap().value <= 1e-6);
    }

    #[test]
    fn zero_threshold_is_plain_cross_entropy() {
        let mut rng = RngStream::new(2);
        let student = Tensor::new(vec![3, 2, 2], (0..12).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let raw: Vec<f64> = (0..12).map(|_| rng.random::<f64>() + 0.01).collect();
        let mut teacher = raw.clone();
        for p in 0..4 {
            let s: f64 = (0..3).map(|k| raw[k * 4 + p]).sum();
            (0..3).for_each(|k| teacher[k * 4 + p] /= s);
        }
        let teacher = Tensor::new(vec![3, 2, 2], teacher).unwrap();
        let (labels, _) = pseudo_labels(&teacher).unwrap();
        let lv = pseudo_label_ce_loss(&student, &teacher, 0.0).unwrap();
        let mut ce = 0.0;
        for p in 0..4 {
            let col: Vec<f64> = (0..3).map(|k| student.data()[k * 4 + p]).collect();
            ce -= crate::numerics::stable_log_softmax(&col).unwrap()[labels[p]];
        }
        assert!((lv.value - ce / 4.0).abs() < 1e-12);
    }
}
