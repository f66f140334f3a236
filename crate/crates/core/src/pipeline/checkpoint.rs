use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::centers::{Assignment, ClassCenters, EmpiricalMeans};
use crate::error::{Error, Result};
use crate::model::{ParamStore, SegmentationNetwork, Sgd, StudentTeacher};
use crate::numerics::{RngState, RngStream, Tensor};

use super::config::{Stage, TrainConfig};
use super::container::Container;

/// Complete training state; resuming from it continues the run bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    /// Iterations completed in `stage`.
    pub iteration: u64,
    pub config: TrainConfig,
    pub pair: StudentTeacher,
    pub optimizer: Sgd,
    pub centers: Option<ClassCenters>,
    pub means: Option<EmpiricalMeans>,
    pub assignment: Option<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CentersMeta {
    k: usize,
    dim: usize,
    tau: f64,
    final_loss: f64,
    final_grad_norm: f64,
    iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeansMeta {
    eta: f64,
    initialized: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    stage: Stage,
    iteration: u64,
    config: TrainConfig,
    ema_decay: f64,
    /// Stream the next iteration draws from.
    rng: RngState,
    centers: Option<CentersMeta>,
    means: Option<MeansMeta>,
    assignment: Option<Vec<usize>>,
}

/// Per-iteration random stream; derived rather than carried, so resuming needs only the counter.
pub fn iteration_rng(seed: u64, stage: Stage, iteration: u64) -> RngStream {
    RngStream::derive(seed, &[stage.tag(), iteration])
}

fn push_params(c: &mut Container, prefix: &str, params: &ParamStore) {
    for (name, t) in params.iter() {
        c.push(format!("{prefix}/{name}"), t.clone());
    }
}

fn read_params(c: &Container, prefix: &str) -> ParamStore {
    let mut p = ParamStore::new();
    let lead = format!("{prefix}/");
    for (name, t) in &c.tensors {
        if let Some(rest) = name.strip_prefix(&lead) {
            p.insert(rest, t.clone());
        }
    }
    p
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let meta = Meta {
            stage: self.stage,
            iteration: self.iteration,
            config: self.config.clone(),
            ema_decay: self.pair.ema_decay,
            rng: iteration_rng(self.config.seed, self.stage, self.iteration).state(),
            centers: self.centers.as_ref().map(|c| CentersMeta {
                k: c.k(),
                dim: c.dim(),
                tau: c.tau,
                final_loss: c.final_loss,
                final_grad_norm: c.final_grad_norm,
                iterations: c.iterations,
            }),
            means: self.means.as_ref().map(|m| MeansMeta { eta: m.eta(), initialized: m.initialized_flags().to_vec() }),
            assignment: self.assignment.as_ref().map(|a| a.as_slice().to_vec()),
        };
        let mut c = Container::new(serde_json::to_value(&meta)?);
        push_params(&mut c, "student", &self.pair.student.params);
        push_params(&mut c, "teacher", &self.pair.teacher.params);
        push_params(&mut c, "velocity", &self.optimizer.velocities);
        if let Some(cs) = &self.centers {
            c.push("centers", Tensor::new(vec![cs.k(), cs.dim()], cs.rows().to_vec())?);
        }
        if let Some(m) = &self.means {
            c.push("means", Tensor::new(vec![m.k(), m.dim()], m.means().to_vec())?);
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: Meta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::CorruptFile(format!("checkpoint header: {e}")))?;
        meta.config.validate()?;
        let model = meta.config.model;
        let student = SegmentationNetwork::with_params(model, read_params(c, "student"))?;
        let teacher = SegmentationNetwork::with_params(model, read_params(c, "teacher"))?;
        let velocities = read_params(c, "velocity");
        student.params.check_compatible(&velocities)?;
        let optimizer = Sgd { config: meta.config.optimizer, velocities };
        let centers = match meta.centers {
            Some(cm) => {
                let mut cs = ClassCenters::from_rows(cm.k, cm.dim, c.require("centers")?.data().to_vec(), cm.tau)?;
                cs.final_loss = cm.final_loss;
                cs.final_grad_norm = cm.final_grad_norm;
                cs.iterations = cm.iterations;
                Some(cs)
            }
            None => None,
        };
        let means = match meta.means {
            Some(mm) => {
                let t = c.require("means")?;
                Some(EmpiricalMeans::from_parts(t.shape()[0], t.shape()[1], mm.eta, t.data().to_vec(), mm.initialized)?)
            }
            None => None,
        };
        let assignment = meta.assignment.map(Assignment::new).transpose()?;
        Ok(Self {
            stage: meta.stage,
            iteration: meta.iteration,
            pair: StudentTeacher::from_parts(student, teacher, meta.ema_decay)?,
            config: meta.config,
            optimizer,
            centers,
            means,
            assignment,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.to_container()?.encode()
    }
}

/// Centers file written by the `centers` subcommand.
pub fn save_centers(centers: &ClassCenters, path: &Path) -> Result<()> {
    let meta = CentersMeta {
        k: centers.k(),
        dim: centers.dim(),
        tau: centers.tau,
        final_loss: centers.final_loss,
        final_grad_norm: centers.final_grad_norm,
        iterations: centers.iterations,
    };
    let mut c = Container::new(serde_json::to_value(meta)?);
    c.push("centers", Tensor::new(vec![centers.k(), centers.dim()], centers.rows().to_vec())?);
    c.save(path)
}

pub fn load_centers(path: &Path) -> Result<ClassCenters> {
    let c = Container::load(path)?;
    let meta: CentersMeta =
        serde_json::from_value(c.meta.clone()).map_err(|e| Error::CorruptFile(format!("centers header: {e}")))?;
    let mut cs = ClassCenters::from_rows(meta.k, meta.dim, c.require("centers")?.data().to_vec(), meta.tau)?;
    cs.final_loss = meta.final_loss;
    cs.final_grad_norm = meta.final_grad_norm;
    cs.iterations = meta.iterations;
    Ok(cs)
}
