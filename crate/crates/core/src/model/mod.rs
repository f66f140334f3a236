//! Toy encoder-decoder segmentation network with hand-written backward pass,
//! its embedding heads, momentum SGD and the EMA student/teacher pair.
//!
//! Parameters are named `<layer>.weight` / `<layer>.bias` with layers
//! `enc{l}.conv{1,2}`, `mid.conv{1,2}`, `dec{l}.conv{1,2}` (3×3 convolutions),
//! `seg`, `rep.conv{1,2}` (1×1 convolutions) and `proj_{g,l}.fc{1,2}`,
//! `pred_{g,l}.fc{1,2}` (fully connected).

mod layers;
mod network;
mod params;

pub use network::{HeadGrads, HeadOutputs, HeadSelection, ImageForward, ModelConfig, SegmentationNetwork};
pub use params::{ema_update, ParamStore, Sgd, SgdConfig};

use crate::error::{Error, Result};

/// Student network plus an EMA teacher of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTeacher {
    pub student: SegmentationNetwork,
    pub teacher: SegmentationNetwork,
    pub ema_decay: f64,
}

impl StudentTeacher {
    /// The teacher starts as a copy of the student.
    pub fn new(student: SegmentationNetwork, ema_decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ema_decay) {
            return Err(Error::Config(format!("EMA decay must be in [0, 1], got {ema_decay}")));
        }
        Ok(Self { teacher: student.clone(), student, ema_decay })
    }

    pub fn from_parts(student: SegmentationNetwork, teacher: SegmentationNetwork, ema_decay: f64) -> Result<Self> {
        student.params.check_compatible(&teacher.params)?;
        if student.config != teacher.config {
            return Err(Error::ShapeMismatch("student and teacher architectures differ".into()));
        }
        let mut pair = Self::new(student, ema_decay)?;
        pair.teacher = teacher;
        Ok(pair)
    }

    pub fn ema_update(&mut self) -> Result<()> {
        ema_update(&mut self.teacher.params, &self.student.params, self.ema_decay)
    }
}
