use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evaluation::MetricsReport;

use super::config::Stage;

/// One logged training iteration. Loss components are already weighted, so
/// `total` is their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub stage: Stage,
    pub total: f64,
    pub inst_global: f64,
    pub inst_local: f64,
    pub sup: f64,
    pub anco: f64,
    pub unsup: f64,
    pub aaco: f64,
    pub tau_s: f64,
    pub tau_an: f64,
    pub tau_sa: f64,
    pub allocation_hash: Option<u64>,
    pub aaco_active: bool,
    pub metrics: Option<MetricsReport>,
}

impl LogRow {
    pub fn component_sum(&self) -> f64 {
        self.inst_global + self.inst_local + self.sup + self.anco + self.unsup + self.aaco
    }
}

/// RFC-4180 CSV sink with a fixed header for a given class count.
pub struct RunLog {
    writer: csv::Writer<File>,
    num_classes: usize,
}

impl RunLog {
    pub fn header(num_classes: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "iteration",
            "stage",
            "total",
            "inst_global",
            "inst_local",
            "sup",
            "anco",
            "unsup",
            "aaco",
            "tau_s",
            "tau_an",
            "tau_sa",
            "allocation_hash",
            "aaco_active",
            "val_mean_dsc",
        ]
        .map(String::from)
        .to_vec();
        h.extend((0..num_classes).map(|c| format!("val_dsc_{c}")));
        h.extend(["alignment_a", "divergence_d", "nn_error"].map(String::from));
        h
    }

    pub fn create(path: &Path, num_classes: usize) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(Self::header(num_classes))?;
        writer.flush()?;
        Ok(Self { writer, num_classes })
    }

    /// Appends to an existing log (for resumed runs), writing the header only for a new file.
    pub fn append(path: &Path, num_classes: usize) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        if fresh {
            return Self::create(path, num_classes);
        }
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(Self { writer: csv::Writer::from_writer(file), num_classes })
    }

    pub fn record(row: &LogRow, num_classes: usize) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let stage = match row.stage {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        };
        let mut r = vec![
            row.iteration.to_string(),
            stage.to_string(),
            row.total.to_string(),
            row.inst_global.to_string(),
            row.inst_local.to_string(),
            row.sup.to_string(),
            row.anco.to_string(),
            row.unsup.to_string(),
            row.aaco.to_string(),
            row.tau_s.to_string(),
            row.tau_an.to_string(),
            row.tau_sa.to_string(),
            row.allocation_hash.map(|h| format!("{h:016x}")).unwrap_or_default(),
            (row.aaco_active as u8).to_string(),
        ];
        let m = row.metrics.as_ref();
        r.push(opt(m.map(|m| m.mean_dsc)));
        r.extend((0..num_classes).map(|c| opt(m.and_then(|m| m.dsc.get(c).copied()))));
        r.push(opt(m.and_then(|m| m.alignment_a)));
        r.push(opt(m.and_then(|m| m.divergence_d)));
        r.push(opt(m.and_then(|m| m.nn_error)));
        r
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        self.writer.write_record(Self::record(row, self.num_classes))?;
        self.writer.flush()?;
        Ok(())
    }
}
