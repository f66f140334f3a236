use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{class_frequencies, generate_dataset, split_ids, DatasetSplit, SceneConfig, SegmentationSample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::config::DataConfig;
use super::container::Container;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scene: SceneConfig,
    pub split: DatasetSplit,
    pub class_frequencies: Vec<f64>,
}

/// Generated scenes partitioned into labeled, unlabeled and validation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scene: SceneConfig,
    pub split: DatasetSplit,
    pub labeled: Vec<SegmentationSample>,
    pub unlabeled: Vec<SegmentationSample>,
    pub validation: Vec<SegmentationSample>,
}

impl Dataset {
    /// Ids `0 .. train_count + validation_count`; the split is keyed by the scene seed.
    pub fn generate(cfg: &DataConfig) -> Result<Self> {
        let total = cfg.train_count + cfg.validation_count;
        let samples = generate_dataset(&cfg.scene, 0, total)?;
        let split = split_ids(total, cfg.validation_count, cfg.labeled_ratio, cfg.scene.seed)?;
        Self::from_samples(cfg.scene.clone(), split, samples)
    }

    fn from_samples(scene: SceneConfig, split: DatasetSplit, samples: Vec<SegmentationSample>) -> Result<Self> {
        let pick = |ids: &[u64]| -> Result<Vec<SegmentationSample>> {
            ids.iter()
                .map(|&id| {
                    samples
                        .get(id as usize)
                        .filter(|s| s.id == id)
                        .cloned()
                        .ok_or_else(|| Error::Data(format!("split refers to missing sample {id}")))
                })
                .collect()
        };
        Ok(Self {
            labeled: pick(&split.labeled)?,
            unlabeled: pick(&split.unlabeled)?,
            validation: pick(&split.validation)?,
            scene,
            split,
        })
    }

    /// From `cfg.path` when set, otherwise generated.
    pub fn resolve(cfg: &DataConfig) -> Result<Self> {
        match &cfg.path {
            Some(p) => Self::load(Path::new(p)),
            None => Self::generate(cfg),
        }
    }

    pub fn manifest(&self) -> DatasetManifest {
        let all: Vec<SegmentationSample> =
            self.labeled.iter().chain(&self.unlabeled).chain(&self.validation).cloned().collect();
        DatasetManifest {
            scene: self.scene.clone(),
            split: self.split.clone(),
            class_frequencies: class_frequencies(&all, self.scene.num_classes),
        }
    }

    fn ordered(&self) -> Vec<&SegmentationSample> {
        let mut all: Vec<&SegmentationSample> = self.labeled.iter().chain(&self.unlabeled).chain(&self.validation).collect();
        all.sort_by_key(|s| s.id);
        all
    }

    /// Images `[N, 1, H, W]` and labels `[N, H, W]` in id order, manifest as metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let all = self.ordered();
        let n = self.scene.image_size;
        let mut c = Container::new(serde_json::to_value(self.manifest())?);
        c.push("images", Tensor::new(vec![all.len(), 1, n, n], all.iter().flat_map(|s| s.image.clone()).collect())?);
        c.push(
            "labels",
            Tensor::new(vec![all.len(), n, n], all.iter().flat_map(|s| s.labels.iter().map(|&y| y as f64)).collect())?,
        );
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let manifest: DatasetManifest =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::CorruptFile(format!("dataset manifest: {e}")))?;
        let images = c.require("images")?;
        let labels = c.require("labels")?;
        let n = manifest.scene.image_size;
        let count = images.shape()[0];
        if images.shape() != [count, 1, n, n] || labels.shape() != [count, n, n] {
            return Err(Error::Data("dataset tensors do not match the manifest".into()));
        }
        let k = manifest.scene.num_classes;
        let samples = (0..count)
            .map(|i| {
                let lab: Vec<usize> = labels.data()[i * n * n..(i + 1) * n * n].iter().map(|&v| v as usize).collect();
                if lab.iter().any(|&y| y >= k) {
                    return Err(Error::Data(format!("sample {i} has a label outside 0..{k}")));
                }
                Ok(SegmentationSample {
                    id: i as u64,
                    size: n,
                    image: images.data()[i * n * n..(i + 1) * n * n].to_vec(),
                    labels: lab,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(manifest.scene, manifest.split, samples)
    }
}
