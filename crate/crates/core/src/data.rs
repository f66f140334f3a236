//! Synthetic long-tailed segmentation scenes, dihedral augmentation and
//! view-batch assembly.
//!
//! Class 0 is background. Every foreground class gets one shape per image
//! (disk, annulus or thin ribbon), sized so the expected pixel share follows
//! the configured profile. Intensities are a per-class mean plus Gaussian noise.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Annulus,
    Ribbon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub image_size: usize,
    pub num_classes: usize,
    /// Target pixel share per class, background first; sums to 1.
    pub profile: Vec<f64>,
    /// Shape of each foreground class (`num_classes − 1` entries).
    pub shapes: Vec<ShapeKind>,
    pub intensity_means: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_classes: 4,
            profile: vec![0.90, 0.06, 0.03, 0.01],
            shapes: vec![ShapeKind::Annulus, ShapeKind::Disk, ShapeKind::Disk],
            intensity_means: vec![0.0, 0.3, 0.6, 0.45],
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes;
        if k == 0 || self.image_size < 8 {
            return Err(Error::Config(format!("need K ≥ 1 and image_size ≥ 8, got {k}, {}", self.image_size)));
        }
        if self.profile.len() != k || self.intensity_means.len() != k || self.shapes.len() + 1 != k {
            return Err(Error::Config(format!(
                "profile ({}), intensity_means ({}) and shapes ({}) must cover {k} classes",
                self.profile.len(),
                self.intensity_means.len(),
                self.shapes.len()
            )));
        }
        let sum: f64 = self.profile.iter().sum();
        if self.profile.iter().any(|&p| !(p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("profile must be positive and sum to 1, sums to {sum}")));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    pub id: u64,
    pub size: usize,
    /// `1 × H × W` intensities.
    pub image: Vec<f64>,
    /// `H × W` class ids.
    pub labels: Vec<usize>,
}

impl SegmentationSample {
    pub fn class_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        self.labels.iter().for_each(|&y| counts[y] += 1);
        counts
    }
}

const PLACEMENT_ATTEMPTS: usize = 200;

fn shape_pixels(kind: ShapeKind, area: f64, n: usize, rng: &mut RngStream) -> Vec<usize> {
    let inside = |r: f64, c: f64| r >= 0.0 && c >= 0.0 && r < n as f64 && c < n as f64;
    let mut px = Vec::new();
    match kind {
        ShapeKind::Disk | ShapeKind::Annulus => {
            let (inner, outer) = if kind == ShapeKind::Disk {
                (0.0, (area / std::f64::consts::PI).sqrt())
            } else {
                // Ring of width 2: area = π((r+2)² − r²) = 4π(r+1).
                let r = (area / (4.0 * std::f64::consts::PI) - 1.0).max(0.5);
                (r, r + 2.0)
            };
            let cr = rng.random_range(0.0..n as f64);
            let cc = rng.random_range(0.0..n as f64);
            for r in 0..n {
                for c in 0..n {
                    let d = ((r as f64 + 0.5 - cr).powi(2) + (c as f64 + 0.5 - cc).powi(2)).sqrt();
                    if d < outer && d >= inner {
                        px.push(r * n + c);
                    }
                }
            }
            // A shape clipped by the border is rejected by the caller.
            let full = std::f64::consts::PI * (outer * outer - inner * inner);
            if cr - outer < 0.0 || cc - outer < 0.0 || cr + outer > n as f64 || cc + outer > n as f64 {
                px.clear();
            } else if (px.len() as f64) < 0.5 * full {
                px.clear();
            }
        }
        ShapeKind::Ribbon => {
            let target = area.round().max(1.0) as usize;
            let mut r = rng.random_range(0.0..n as f64);
            let mut c = rng.random_range(0.0..n as f64);
            let mut theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut painted = vec![false; n * n];
            let mut steps = 0;
            while px.len() < target && steps < 40 * n {
                steps += 1;
                theta += 0.08 * (steps as f64 * 0.3).sin();
                r += 0.5 * theta.sin();
                c += 0.5 * theta.cos();
                if !inside(r, c) {
                    px.clear();
                    break;
                }
                // Two-pixel-wide stroke.
                for (dr, dc) in [(0.0, 0.0), (-theta.cos(), theta.sin())] {
                    let (rr, cc) = (r + dr, c + dc);
                    if inside(rr, cc) {
                        let idx = rr as usize * n + cc as usize;
                        if !painted[idx] && px.len() < target {
                            painted[idx] = true;
                            px.push(idx);
                        }
                    }
                }
            }
            if px.len() < target {
                px.clear();
            }
        }
    }
    px
}

/// One sample, drawn from the substream keyed by `(config.seed, id)`.
pub fn generate_sample(config: &SceneConfig, id: u64) -> Result<SegmentationSample> {
    config.validate()?;
    let n = config.image_size;
    let mut rng = RngStream::derive(config.seed, &[id]);
    let mut labels = vec![0usize; n * n];
    // Claimed pixels plus a one-pixel margin, so shapes never touch.
    let mut blocked = vec![false; n * n];
    for class in 1..config.num_classes {
        let jitter = rng.random_range(0.8..1.2);
        let area = config.profile[class] * (n * n) as f64 * jitter;
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let px = shape_pixels(config.shapes[class - 1], area, n, &mut rng);
            if !px.is_empty() && px.iter().all(|&i| !blocked[i]) {
                placed = Some(px);
                break;
            }
        }
        let px = placed.ok_or_else(|| {
            Error::InfeasibleProfile(format!(
                "could not place class {class} ({:?}, ~{area:.0} px) in a {n}×{n} image",
                config.shapes[class - 1]
            ))
        })?;
        for &i in &px {
            labels[i] = class;
            let (r, c) = ((i / n) as isize, (i % n) as isize);
            for (dr, dc) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < n && (cc as usize) < n {
                    blocked[rr as usize * n + cc as usize] = true;
                }
            }
        }
    }
    let image = labels
        .iter()
        .map(|&y| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.intensity_means[y] + config.noise_sigma * z
        })
        .collect();
    Ok(SegmentationSample { id, size: n, image, labels })
}

/// Samples with ids `first_id .. first_id + count`.
pub fn generate_dataset(config: &SceneConfig, first_id: u64, count: usize) -> Result<Vec<SegmentationSample>> {
    if count == 0 {
        return Err(Error::Data("dataset size must be at least 1".into()));
    }
    (0..count as u64).map(|i| generate_sample(config, first_id + i)).collect()
}

/// Pixel share of each class over a set of samples.
pub fn class_frequencies(samples: &[SegmentationSample], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    let mut total = 0;
    for s in samples {
        s.labels.iter().for_each(|&y| counts[y] += 1);
        total += s.labels.len();
    }
    counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

/// Element of the dihedral group of the square: an optional horizontal flip
/// followed by `rotation` clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dihedral {
    pub rotation: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Self = Self { rotation: 0, flip: false };

    pub fn all() -> impl Iterator<Item = Self> {
        (0..8u8).map(|i| Self { rotation: i % 4, flip: i >= 4 })
    }

    pub fn random(rng: &mut RngStream) -> Self {
        let i: u8 = rng.random_range(0..8);
        Self { rotation: i % 4, flip: i >= 4 }
    }

    pub fn inverse(self) -> Self {
        if self.flip {
            self
        } else {
            Self { rotation: (4 - self.rotation) % 4, flip: false }
        }
    }

    /// Destination of source coordinate `(r, c)` in an `n × n` grid.
    pub fn map(self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let (mut r, mut c) = if self.flip { (r, n - 1 - c) } else { (r, c) };
        for _ in 0..self.rotation {
            (r, c) = (c, n - 1 - r);
        }
        (r, c)
    }

    pub fn map_index(self, idx: usize, n: usize) -> usize {
        let (r, c) = self.map(idx / n, idx % n, n);
        r * n + c
    }

    /// Moves every value of an `n × n` plane (or a stack of planes).
    pub fn apply<T: Copy + Default>(self, values: &[T], n: usize) -> Vec<T> {
        let plane = n * n;
        let mut out = vec![T::default(); values.len()];
        for (src, dst) in values.chunks(plane).zip(out.chunks_mut(plane)) {
            for (i, &v) in src.iter().enumerate() {
                dst[self.map_index(i, n)] = v;
            }
        }
        out
    }
}

/// An augmented copy of a sample together with the transform used.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub sample: SegmentationSample,
    pub transform: Dihedral,
}

/// Applies `transform` to image and labels, then adds noise of width `sigma` to the image.
pub fn augment_with(
    sample: &SegmentationSample,
    transform: Dihedral,
    sigma: f64,
    rng: &mut RngStream,
) -> AugmentedSample {
    let n = sample.size;
    let mut image = transform.apply(&sample.image, n);
    if sigma > 0.0 {
        for v in &mut image {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    let labels = transform.apply(&sample.labels, n);
    AugmentedSample { sample: SegmentationSample { id: sample.id, size: n, image, labels }, transform }
}

/// Uniformly random dihedral element plus intensity noise.
pub fn augment(sample: &SegmentationSample, sigma: f64, rng: &mut RngStream) -> AugmentedSample {
    let t = Dihedral::random(rng);
    augment_with(sample, t, sigma, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch {
    pub x1: Vec<AugmentedSample>,
    pub x2: Vec<AugmentedSample>,
    /// Mined views from the unlabeled pool.
    pub x3: Vec<AugmentedSample>,
    /// Pool positions of the batch samples and the mined samples.
    pub batch_indices: Vec<usize>,
    pub mined_indices: Vec<usize>,
}

/// Two independent augmentations of each `pool[batch_indices[i]]` plus `n_mined`
/// distinct pool samples, each with its own augmentation.
pub fn make_view_batch(
    pool: &[SegmentationSample],
    batch_indices: &[usize],
    n_mined: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<ViewBatch> {
    if pool.len() < n_mined {
        return Err(Error::PoolTooSmall { pool: pool.len(), requested: n_mined });
    }
    if let Some(&i) = batch_indices.iter().find(|&&i| i >= pool.len()) {
        return Err(Error::Data(format!("batch index {i} outside a pool of {}", pool.len())));
    }
    let mut x1 = Vec::with_capacity(batch_indices.len());
    let mut x2 = Vec::with_capacity(batch_indices.len());
    for &i in batch_indices {
        x1.push(augment(&pool[i], sigma, rng));
        x2.push(augment(&pool[i], sigma, rng));
    }
    let mined_indices: Vec<usize> = index::sample(rng, pool.len(), n_mined).into_vec();
    let x3 = mined_indices.iter().map(|&i| augment(&pool[i], sigma, rng)).collect();
    Ok(ViewBatch { x1, x2, x3, batch_indices: batch_indices.to_vec(), mined_indices })
}

/// Disjoint labeled / unlabeled / validation id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub labeled: Vec<u64>,
    pub unlabeled: Vec<u64>,
    pub validation: Vec<u64>,
}

/// Shuffles ids `0..total` with a stream keyed by `seed`, reserves
/// `validation` of them, and labels `round(ratio · rest)` (at least one) of the rest.
pub fn split_ids(total: usize, validation: usize, labeled_ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(labeled_ratio > 0.0 && labeled_ratio <= 1.0) || validation >= total {
        return Err(Error::Config(format!(
            "cannot split {total} samples with {validation} held out at labeled ratio {labeled_ratio}"
        )));
    }
    let mut rng = RngStream::derive(seed, &[0x5150]);
    let mut ids: Vec<u64> = index::sample(&mut rng, total, total).into_iter().map(|i| i as u64).collect();
    let validation_ids: Vec<u64> = ids.drain(..validation).collect();
    let n_labeled = ((labeled_ratio * ids.len() as f64).round() as usize).clamp(1, ids.len());
    let mut labeled: Vec<u64> = ids.drain(..n_labeled).collect();
    let mut unlabeled = ids;
    let mut validation_ids = validation_ids;
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    validation_ids.sort_unstable();
    Ok(DatasetSplit { labeled, unlabeled, validation: validation_ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_is_met() {
        let cfg = SceneConfig { seed: 3, ..SceneConfig::default() };
        let data = generate_dataset(&cfg, 0, 200).unwrap();
        let freq = class_frequencies(&data, 4);
        for (f, t) in freq.iter().zip(&cfg.profile) {
            assert!((f - t).abs() <= 0.3 * t, "{freq:?}");
        }
        assert!(freq.windows(2).all(|w| w[0] > w[1]));
        for c in 0..4 {
            let present = data.iter().filter(|s| s.labels.contains(&c)).count();
            assert!(present as f64 >= 0.8 * data.len() as f64);
        }
    }

    #[test]
    fn deterministic_per_id() {
        let cfg = SceneConfig::default();
        let a = generate_dataset(&cfg, 10, 5).unwrap();
        let b = generate_dataset(&cfg, 10, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_sample(&cfg, 12).unwrap(), a[2]);
    }

    #[test]
    fn single_class_is_background() {
        let cfg = SceneConfig {
            num_classes: 1,
            profile: vec![1.0],
            shapes: vec![],
            intensity_means: vec![0.0],
            ..SceneConfig::default()
        };
        let s = generate_sample(&cfg, 0).unwrap();
        assert!(s.labels.iter().all(|&y| y == 0));
    }

    #[test]
    fn infeasible_profile() {
        let cfg = SceneConfig {
            image_size: 16,
            profile: vec![0.1, 0.8, 0.05, 0.05],
            ..SceneConfig::default()
        };
        assert!(matches!(generate_sample(&cfg, 0), Err(Error::InfeasibleProfile(_))));
    }

    #[test]
    fn rejects_bad_profile() {
        let cfg = SceneConfig { profile: vec![0.5, 0.2, 0.2, 0.2], ..SceneConfig::default() };
        assert!(matches!(generate_sample(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn dihedral_group_laws() {
        let n = 5;
        let grid: Vec<usize> = (0..n * n).collect();
        let mut images = Vec::new();
        for g in Dihedral::all() {
            let moved = g.apply(&grid, n);
            assert_eq!(g.inverse().apply(&moved, n), grid);
            images.push(moved);
        }
        images.sort();
        images.dedup();
        assert_eq!(images.len(), 8);
        assert_eq!(Dihedral::IDENTITY.apply(&grid, n), grid);
    }

    #[test]
    fn quarter_turn_moves_labels_with_pixels() {
        let cfg = SceneConfig::default();
        let s = generate_sample(&cfg, 1).unwrap();
        let g = Dihedral { rotation: 1, flip: false };
        let a = augment_with(&s, g, 0.0, &mut RngStream::new(0));
        let n = s.size;
        for r in 0..n {
            for c in 0..n {
                let (r2, c2) = g.map(r, c, n);
                assert_eq!((r2, c2), (c, n - 1 - r));
                assert_eq!(a.sample.labels[r2 * n + c2], s.labels[r * n + c]);
                assert_eq!(a.sample.image[r2 * n + c2], s.image[r * n + c]);
            }
        }
    }

    #[test]
    fn augmentation_conserves_label_counts_and_noise_spares_labels() {
        let cfg = SceneConfig::default();
        let s = generate_sample(&cfg, 4).unwrap();
        let mut rng = RngStream::new(8);
        for _ in 0..16 {
            let a = augment(&s, 0.1, &mut rng);
            assert_eq!(a.sample.class_counts(4), s.class_counts(4));
            let back = a.transform.inverse().apply(&a.sample.labels, s.size);
            assert_eq!(back, s.labels);
        }
    }

    #[test]
    fn view_batches() {
        let cfg = SceneConfig { image_size: 16, profile: vec![0.8, 0.1, 0.06, 0.04], ..SceneConfig::default() };
        let pool = generate_dataset(&cfg, 0, 6).unwrap();
        let mut rng = RngStream::new(1);
        let vb = make_view_batch(&pool, &[0, 3], 1, 0.05, &mut rng).unwrap();
        assert_eq!((vb.x1.len(), vb.x2.len(), vb.x3.len()), (2, 2, 1));
        assert_eq!(vb.x1[1].sample.id, vb.x2[1].sample.id);
        let full = make_view_batch(&pool, &[0], 6, 0.05, &mut rng).unwrap();
        let mut mined = full.mined_indices.clone();
        mined.sort_unstable();
        assert_eq!(mined, (0..6).collect::<Vec<_>>());
        assert!(matches!(make_view_batch(&pool, &[0], 7, 0.05, &mut rng), Err(Error::PoolTooSmall { .. })));
        let a = make_view_batch(&pool, &[1, 2], 3, 0.05, &mut RngStream::new(9)).unwrap();
        let b = make_view_batch(&pool, &[1, 2], 3, 0.05, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_disjoint_and_stable() {
        let s = split_ids(240, 40, 0.1, 7).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.len(), s.validation.len()), (20, 180, 40));
        let mut all: Vec<u64> = [s.labeled.clone(), s.unlabeled.clone(), s.validation.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..240).collect::<Vec<_>>());
        assert_eq!(split_ids(240, 40, 0.1, 7).unwrap(), s);
        assert_ne!(split_ids(240, 40, 0.1, 8).unwrap(), s);
    }
}
