//! Hand-derived loss gradients against central finite differences on random instances.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::centers::uniformity_loss_and_grad;
use crate::error::{Error, Result};
use crate::losses::{
    aaco_loss, anco_loss, dice_ce_loss, instance_discrimination_loss, pseudo_label_ce_loss, relational_distribution,
    relational_query_grad, select_query_key_sets, AacoBatch, PositiveSampling,
};
use crate::numerics::{finite_diff_gradient, gradient_relative_error, normalize_in_place, RngStream, Tensor};

pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Uniformity,
    Instance,
    Anco,
    Aaco,
    DiceCe,
    PseudoCe,
}

impl LossKind {
    pub const ALL: [LossKind; 6] =
        [LossKind::Uniformity, LossKind::Instance, LossKind::Anco, LossKind::Aaco, LossKind::DiceCe, LossKind::PseudoCe];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Uniformity => "uniformity",
            LossKind::Instance => "instance",
            LossKind::Anco => "anco",
            LossKind::Aaco => "aaco",
            LossKind::DiceCe => "dice_ce",
            LossKind::PseudoCe => "pseudo_ce",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: LossKind,
    pub instances: usize,
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
}

fn gaussian(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_rows(rng: &mut RngStream, n: usize, d: usize) -> Vec<f64> {
    let mut v = gaussian(rng, n * d);
    for row in v.chunks_mut(d) {
        normalize_in_place(row).expect("gaussian row is nonzero");
    }
    v
}

fn compare(analytic: &[f64], f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<f64> {
    let numeric = finite_diff_gradient(f, x, h)?;
    Ok(gradient_relative_error(analytic, &numeric))
}

fn value_or_nan(r: Result<f64>) -> f64 {
    r.unwrap_or(f64::NAN)
}

/// Relative error between the hand gradient and finite differences on one random instance.
pub fn check_instance(kind: LossKind, rng: &mut RngStream, h: f64) -> Result<f64> {
    match kind {
        LossKind::Uniformity => {
            let (k, d) = (rng.random_range(2..=8), rng.random_range(2..=16));
            let tau = rng.random_range(0.1..1.0);
            let x = unit_rows(rng, k, d);
            let (_, grad) = uniformity_loss_and_grad(&x, d, tau);
            compare(&grad, |p| uniformity_loss_and_grad(p, d, tau).0, &x, h)
        }
        LossKind::Instance => {
            let (n, d) = (rng.random_range(1..=8), rng.random_range(2..=16));
            let (tau_s, tau_t) = (rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
            let q = gaussian(rng, d);
            let mined = gaussian(rng, n * d);
            let teacher = relational_distribution(&gaussian(rng, d), &mined, tau_t)?;
            let f = |w: &[f64]| {
                value_or_nan(
                    relational_distribution(w, &mined, tau_s)
                        .and_then(|s| instance_discrimination_loss(&s, &teacher))
                        .map(|l| l.value),
                )
            };
            let lv = instance_discrimination_loss(&relational_distribution(&q, &mined, tau_s)?, &teacher)?;
            let grad = relational_query_grad(&q, &mined, tau_s, lv.grad("student_logits").expect("grad").data())?;
            compare(&grad, f, &q, h)
        }
        LossKind::Anco => {
            let (n, d, k) = (rng.random_range(4..=24), rng.random_range(2..=12), rng.random_range(2..=4));
            let tau = rng.random_range(0.1..1.0);
            let reps = unit_rows(rng, n, d);
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let sets = select_query_key_sets(&reps, &labels, d, 6, rng)?;
            let x: Vec<f64> = sets.classes.iter().flat_map(|c| c.queries.iter().copied()).collect();
            let lv = anco_loss(&sets, tau)?;
            let f = |q: &[f64]| {
                let mut s = sets.clone();
                let mut off = 0;
                for c in &mut s.classes {
                    let len = c.queries.len();
                    c.queries.copy_from_slice(&q[off..off + len]);
                    off += len;
                }
                value_or_nan(anco_loss(&s, tau).map(|l| l.value))
            };
            compare(lv.grad("queries").expect("grad").data(), f, &x, h)
        }
        LossKind::Aaco => {
            let (n, d, k) = (rng.random_range(2..=16), rng.random_range(2..=12), rng.random_range(1..=4));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let centers: Vec<f64> = {
                let table = unit_rows(rng, k, d);
                labels.iter().flat_map(|&y| table[y * d..(y + 1) * d].to_vec()).collect()
            };
            let batch = AacoBatch::new(
                d,
                (0..n as u64).map(|i| i * 7 + 3).collect(),
                unit_rows(rng, n, d),
                labels,
                centers,
                rng.random_range(0.0..1.0),
                rng.random_range(0.1..1.0),
                rng.random_range(1..=4),
            )?;
            let sampling = PositiveSampling { seed: rng.random(), iteration: rng.random_range(0..1000) };
            let lv = aaco_loss(&batch, sampling)?;
            let f = |p: &[f64]| {
                let mut b = batch.clone();
                b.features.copy_from_slice(p);
                value_or_nan(aaco_loss(&b, sampling).map(|l| l.value))
            };
            compare(lv.grad("features").expect("grad").data(), f, &batch.features, h)
        }
        LossKind::DiceCe => {
            let (b, k, s) = (rng.random_range(1..=2), rng.random_range(2..=4), rng.random_range(2..=4));
            let shape = vec![b, k, s, s];
            let logits = Tensor::new(shape.clone(), gaussian(rng, b * k * s * s))?;
            let labels: Vec<usize> = (0..b * s * s).map(|_| rng.random_range(0..k)).collect();
            let lv = dice_ce_loss(&logits, &labels)?;
            let f = |x: &[f64]| {
                value_or_nan(Tensor::new(shape.clone(), x.to_vec()).and_then(|t| dice_ce_loss(&t, &labels)).map(|l| l.value))
            };
            compare(lv.grad("logits").expect("grad").data(), f, logits.data(), h)
        }
        LossKind::PseudoCe => {
            let (b, k, s) = (rng.random_range(1..=2), rng.random_range(2..=4), rng.random_range(2..=4));
            let shape = vec![b, k, s, s];
            let n = b * k * s * s;
            let student = Tensor::new(shape.clone(), gaussian(rng, n))?;
            let mut probs = vec![0.0; n];
            let teacher_logits: Vec<f64> = gaussian(rng, n).iter().map(|x| 2.0 * x).collect();
            let pixels = s * s;
            for bi in 0..b {
                for p in 0..pixels {
                    let col: Vec<f64> = (0..k).map(|c| teacher_logits[(bi * k + c) * pixels + p]).collect();
                    let mut out = vec![0.0; k];
                    crate::numerics::softmax_into(&col, &mut out);
                    (0..k).for_each(|c| probs[(bi * k + c) * pixels + p] = out[c]);
                }
            }
            let teacher = Tensor::new(shape.clone(), probs)?;
            let threshold = rng.random_range(0.0..0.6);
            let lv = pseudo_label_ce_loss(&student, &teacher, threshold)?;
            let f = |x: &[f64]| {
                value_or_nan(
                    Tensor::new(shape.clone(), x.to_vec())
                        .and_then(|t| pseudo_label_ce_loss(&t, &teacher, threshold))
                        .map(|l| l.value),
                )
            };
            compare(lv.grad("logits").expect("grad").data(), f, student.data(), h)
        }
    }
}

/// Runs `instances` random checks of one loss; instance `i` draws from `derive(seed, [kind, i])`.
pub fn gradcheck(kind: LossKind, instances: usize, seed: u64, h: f64) -> Result<GradcheckReport> {
    if instances == 0 {
        return Err(Error::Config("gradcheck needs at least one instance".into()));
    }
    let tag = LossKind::ALL.iter().position(|&k| k == kind).expect("listed") as u64;
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for i in 0..instances {
        let mut rng = RngStream::derive(seed, &[tag, i as u64]);
        let err = check_instance(kind, &mut rng, h)?;
        max = if err.is_nan() { f64::NAN } else { max.max(err) };
        sum += err;
    }
    Ok(GradcheckReport { loss: kind, instances, max_relative_error: max, mean_relative_error: sum / instances as f64 })
}
