//! Segmentation metrics and representation diagnostics.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::centers::{Assignment, ClassCenters};
use crate::data::{augment_with, AugmentedSample, Dihedral, SegmentationSample};
use crate::error::{Error, Result};
use crate::model::{HeadSelection, SegmentationNetwork};
use crate::numerics::{dot, RngStream};

/// `2|P∩G| / (|P| + |G|)` for class `c`; 1 when both masks are empty.
pub fn dice_score(pred: &[usize], gt: &[usize], class: usize) -> f64 {
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(gt) {
        let (ia, ib) = (a == class, b == class);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    if p + g == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + g) as f64
    }
}

/// Mask pixels with a 4-neighbour outside the mask (the image border counts as outside).
fn boundary(labels: &[usize], class: usize, n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let at = |r: isize, c: isize| r >= 0 && c >= 0 && r < n as isize && c < n as isize && labels[r as usize * n + c as usize] == class;
    for r in 0..n as isize {
        for c in 0..n as isize {
            if at(r, c) && !(at(r - 1, c) && at(r + 1, c) && at(r, c - 1) && at(r, c + 1)) {
                out.push((r as usize, c as usize));
            }
        }
    }
    out
}

fn mean_nearest(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    from.iter()
        .map(|&(r, c)| {
            to.iter()
                .map(|&(r2, c2)| {
                    let (dr, dc) = (r as f64 - r2 as f64, c as f64 - c2 as f64);
                    dr * dr + dc * dc
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum()
}

/// Symmetric mean boundary distance in pixels between the class-`c` masks of
/// two `n × n` label maps, by exhaustive boundary-pair search.
pub fn average_surface_distance(pred: &[usize], gt: &[usize], class: usize, n: usize) -> Result<f64> {
    let bp = boundary(pred, class, n);
    let bg = boundary(gt, class, n);
    if bp.is_empty() || bg.is_empty() {
        return Err(Error::EmptyMask { class });
    }
    Ok((mean_nearest(&bp, &bg) + mean_nearest(&bg, &bp)) / (bp.len() + bg.len()) as f64)
}

/// Anything producing unit per-pixel features, `[H·W, d]`, for an `n × n` image.
pub trait FeatureMap {
    fn dense_features(&self, image: &[f64], n: usize) -> Result<Vec<f64>>;
}

impl FeatureMap for SegmentationNetwork {
    fn dense_features(&self, image: &[f64], n: usize) -> Result<Vec<f64>> {
        let f = self.forward_image(image, n, n, HeadSelection::DENSE)?;
        Ok(f.heads.dense_reps.expect("dense head requested"))
    }
}

/// Root mean squared feature distance between two views at corresponding
/// source pixels, averaged per class then over classes with equal weight.
/// At most `subsample` pixels per class are drawn per view pair.
pub fn alignment_from_views<M: FeatureMap + ?Sized>(
    model: &M,
    pairs: &[(AugmentedSample, AugmentedSample)],
    num_classes: usize,
    subsample: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut sums = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (a, b) in pairs {
        let n = a.sample.size;
        if b.sample.size != n || a.sample.id != b.sample.id {
            return Err(Error::Data("alignment pairs must be views of the same sample".into()));
        }
        let source_labels = a.transform.inverse().apply(&a.sample.labels, n);
        let fa = model.dense_features(&a.sample.image, n)?;
        let fb = model.dense_features(&b.sample.image, n)?;
        let d = fa.len() / (n * n);
        for class in 0..num_classes {
            let members: Vec<usize> = (0..n * n).filter(|&p| source_labels[p] == class).collect();
            let picked: Vec<usize> = if members.len() > subsample {
                index::sample(rng, members.len(), subsample).into_iter().map(|i| members[i]).collect()
            } else {
                members
            };
            for p in picked {
                let (ia, ib) = (a.transform.map_index(p, n), b.transform.map_index(p, n));
                let (va, vb) = (&fa[ia * d..(ia + 1) * d], &fb[ib * d..(ib + 1) * d]);
                sums[class] += va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                counts[class] += 1;
            }
        }
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass { class });
    }
    let per_class: f64 = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).sum();
    Ok((per_class / num_classes as f64).sqrt())
}

/// Alignment over `pairs_per_image` random dihedral view pairs of every sample,
/// each view with intensity noise `sigma`.
pub fn alignment_metric<M: FeatureMap + ?Sized>(
    model: &M,
    samples: &[SegmentationSample],
    num_classes: usize,
    pairs_per_image: usize,
    subsample: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut pairs = Vec::with_capacity(samples.len() * pairs_per_image);
    for s in samples {
        for _ in 0..pairs_per_image {
            let (ga, gb) = (Dihedral::random(rng), Dihedral::random(rng));
            let a = augment_with(s, ga, sigma, rng);
            let b = augment_with(s, gb, sigma, rng);
            pairs.push((a, b));
        }
    }
    alignment_from_views(model, &pairs, num_classes, subsample, rng)
}

/// Largest inner product between distinct class means (`K × d`, unit rows).
pub fn divergence_metric(means: &[f64], k: usize) -> Result<f64> {
    if k < 2 || means.len() % k != 0 || means.is_empty() {
        return Err(Error::ShapeMismatch(format!("divergence needs K ≥ 2 means, got {k}")));
    }
    let d = means.len() / k;
    let mut best = f64::NEG_INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            best = best.max(dot(&means[a * d..(a + 1) * d], &means[b * d..(b + 1) * d]));
        }
    }
    Ok(best.clamp(-1.0, 1.0))
}

/// Renormalized mean feature of every class, `K × d`.
pub fn class_means(features: &[f64], labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if labels.is_empty() || features.len() % labels.len() != 0 {
        return Err(Error::ShapeMismatch("features do not match labels".into()));
    }
    let d = features.len() / labels.len();
    let mut means = vec![0.0; k * d];
    let mut seen = vec![false; k];
    for (f, &y) in features.chunks(d).zip(labels) {
        seen[y] = true;
        means[y * d..(y + 1) * d].iter_mut().zip(f).for_each(|(m, x)| *m += x);
    }
    if let Some(class) = seen.iter().position(|s| !s) {
        return Err(Error::MissingClass { class });
    }
    for row in means.chunks_mut(d) {
        crate::numerics::normalize_in_place(row)?;
    }
    Ok(means)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnError {
    /// Mean over classes of the per-class error rate.
    pub equal_weight: f64,
    /// Overall fraction of misclassified pixels.
    pub pixel_weighted: f64,
}

/// Error of the nearest-assigned-center classifier. Ties go to the smaller class id.
pub fn nn_classifier_error(
    features: &[f64],
    labels: &[usize],
    centers: &ClassCenters,
    assignment: &Assignment,
) -> Result<NnError> {
    let k = centers.k();
    let d = centers.dim();
    if features.len() != labels.len() * d || assignment.as_slice().len() != k {
        return Err(Error::ShapeMismatch("features, centers and assignment disagree".into()));
    }
    let mut wrong = vec![0usize; k];
    let mut total = vec![0usize; k];
    for (f, &y) in features.chunks(d).zip(labels) {
        let mut best = (f64::INFINITY, 0);
        for c in 0..k {
            let psi = centers.row(assignment.center_of(c));
            let dist: f64 = f.iter().zip(psi).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, c);
            }
        }
        total[y] += 1;
        wrong[y] += (best.1 != y) as usize;
    }
    if let Some(class) = total.iter().position(|&t| t == 0) {
        return Err(Error::MissingClass { class });
    }
    let equal_weight = wrong.iter().zip(&total).map(|(&w, &t)| w as f64 / t as f64).sum::<f64>() / k as f64;
    let pixel_weighted = wrong.iter().sum::<usize>() as f64 / total.iter().sum::<usize>() as f64;
    Ok(NnError { equal_weight, pixel_weighted })
}

/// Per-class Dice and ASD averaged over images. ASD skips images where either
/// mask is empty; those are counted in `asd_missing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub dsc: Vec<f64>,
    pub asd: Vec<Option<f64>>,
    pub asd_missing: Vec<usize>,
}

pub fn segmentation_metrics(preds: &[Vec<usize>], gts: &[Vec<usize>], n: usize, k: usize) -> Result<SegmentationMetrics> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Data(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    let mut dsc = vec![0.0; k];
    let mut asd_sum = vec![0.0; k];
    let mut asd_count = vec![0usize; k];
    let mut asd_missing = vec![0usize; k];
    for (p, g) in preds.iter().zip(gts) {
        for c in 0..k {
            dsc[c] += dice_score(p, g, c);
            match average_surface_distance(p, g, c, n) {
                Ok(v) => {
                    asd_sum[c] += v;
                    asd_count[c] += 1;
                }
                Err(Error::EmptyMask { .. }) => asd_missing[c] += 1,
                Err(e) => return Err(e),
            }
        }
    }
    dsc.iter_mut().for_each(|v| *v /= preds.len() as f64);
    let asd = asd_sum.iter().zip(&asd_count).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect();
    Ok(SegmentationMetrics { dsc, asd, asd_missing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iteration: u64,
    pub dsc: Vec<f64>,
    pub asd: Vec<Option<f64>>,
    pub asd_missing: Vec<usize>,
    /// Mean Dice over foreground classes (all classes when K = 1).
    pub mean_dsc: f64,
    pub alignment_a: Option<f64>,
    pub divergence_d: Option<f64>,
    pub nn_error: Option<f64>,
    pub nn_error_pixel: Option<f64>,
}

impl MetricsReport {
    pub fn from_segmentation(iteration: u64, seg: SegmentationMetrics) -> Self {
        let fg = if seg.dsc.len() > 1 { &seg.dsc[1..] } else { &seg.dsc[..] };
        let mean_dsc = fg.iter().sum::<f64>() / fg.len() as f64;
        Self {
            iteration,
            dsc: seg.dsc,
            asd: seg.asd,
            asd_missing: seg.asd_missing,
            mean_dsc,
            alignment_a: None,
            divergence_d: None,
            nn_error: None,
            nn_error_pixel: None,
        }
    }

    pub fn csv_header(k: usize) -> Vec<String> {
        let mut h = vec!["iteration".to_string(), "mean_dsc".into()];
        h.extend((0..k).map(|c| format!("dsc_{c}")));
        h.extend((0..k).map(|c| format!("asd_{c}")));
        h.extend(["alignment_a", "divergence_d", "nn_error", "nn_error_pixel"].map(String::from));
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut r = vec![self.iteration.to_string(), self.mean_dsc.to_string()];
        r.extend(self.dsc.iter().map(f64::to_string));
        r.extend(self.asd.iter().map(|&v| opt(v)));
        r.extend([self.alignment_a, self.divergence_d, self.nn_error, self.nn_error_pixel].map(opt));
        r
    }
}
