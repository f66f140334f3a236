//! Relational similarity distributions and the KL instance-discrimination loss.

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, dot, norm, stable_log_softmax, Tensor, ZERO_NORM};

use super::LossValue;

/// Log-softmax over the cosine similarities between one embedding and `N`
/// mined-view embeddings, at temperature `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDistribution {
    /// Pre-softmax scores `sim(w, v_n) / τ`.
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub tau: f64,
}

impl SimilarityDistribution {
    pub fn from_logits(logits: Vec<f64>, tau: f64) -> Result<Self> {
        let log_probs = stable_log_softmax(&logits)?;
        Ok(Self { logits, log_probs, tau })
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

/// `mined` holds `N` embeddings of the same length as `query`, row-major.
pub fn relational_distribution(query: &[f64], mined: &[f64], tau: f64) -> Result<SimilarityDistribution> {
    let d = query.len();
    if d == 0 || mined.is_empty() || mined.len() % d != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} mined values for embedding dimension {d}",
            mined.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let logits = mined
        .chunks(d)
        .map(|v| cosine_similarity(query, v).map(|s| s / tau))
        .collect::<Result<Vec<_>>>()?;
    SimilarityDistribution::from_logits(logits, tau)
}

/// `KL(u_s ‖ u_t)` with the gradient with respect to the student logits
/// (key `"student_logits"`).
pub fn instance_discrimination_loss(
    student: &SimilarityDistribution,
    teacher: &SimilarityDistribution,
) -> Result<LossValue> {
    if student.len() != teacher.len() {
        return Err(Error::ShapeMismatch(format!(
            "student has {} mined views, teacher {}",
            student.len(),
            teacher.len()
        )));
    }
    let kl: f64 = student
        .log_probs
        .iter()
        .zip(&teacher.log_probs)
        .map(|(ls, lt)| ls.exp() * (ls - lt))
        .sum();
    // ∂KL/∂s_k = p_k (log p_k − log q_k − KL)
    let grad: Vec<f64> = student
        .log_probs
        .iter()
        .zip(&teacher.log_probs)
        .map(|(ls, lt)| ls.exp() * (ls - lt - kl))
        .collect();
    let n = grad.len();
    Ok(LossValue::new(kl).with_grad("student_logits", Tensor::new(vec![n], grad)?))
}

/// Pulls a gradient on the relational logits back onto the query embedding:
/// `∂/∂w Σ_n g_n · cos(w, v_n) / τ`.
pub fn relational_query_grad(query: &[f64], mined: &[f64], tau: f64, logit_grad: &[f64]) -> Result<Vec<f64>> {
    let d = query.len();
    if mined.len() != logit_grad.len() * d {
        return Err(Error::ShapeMismatch("logit gradient does not match mined views".into()));
    }
    let wn = norm(query);
    if !(wn >= ZERO_NORM) {
        return Err(Error::ZeroVector { norm: wn });
    }
    let mut out = vec![0.0; d];
    for (v, &g) in mined.chunks(d).zip(logit_grad) {
        let vn = norm(v);
        if !(vn >= ZERO_NORM) {
            return Err(Error::ZeroVector { norm: vn });
        }
        let cos = dot(query, v) / (wn * vn);
        let scale = g / tau / wn;
        for ((o, &vi), &wi) in out.iter_mut().zip(v).zip(query) {
            *o += scale * (vi / vn - cos * wi / wn);
        }
    }
    Ok(out)
}
