//! Run directory: `config.json`, `metrics.jsonl`, `checkpoints/<stage>.ckpt` and selection
//! JSON files. An in-memory log keeps the records without touching disk.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::model::{save_checkpoint, BrainModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: String,
    pub split: Split,
    pub epoch: usize,
    pub step: usize,
    pub si_sdr_db: f64,
    pub l_d: f64,
    pub l_reg: f64,
    pub total: f64,
    pub lr: f64,
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub si_sdri_db: Option<f64>,
}

impl MetricRecord {
    pub fn new(stage: &str, split: Split, epoch: usize, step: usize, b: &LossBreakdown, lr: f64, tau: Option<f64>) -> Self {
        MetricRecord {
            stage: stage.to_string(),
            split,
            epoch,
            step,
            si_sdr_db: b.si_sdr_db,
            l_d: b.l_d,
            l_reg: b.l_reg,
            total: b.total,
            lr,
            tau,
            si_sdri_db: None,
        }
    }

    pub fn with_si_sdri(mut self, v: f64) -> Self {
        self.si_sdri_db = Some(v);
        self
    }
}

#[derive(Debug, Default)]
pub struct RunLog {
    dir: Option<PathBuf>,
    metrics: Option<BufWriter<File>>,
    records: Vec<MetricRecord>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        RunLog::default()
    }

    /// Creates (or reuses) `dir`, writes the config snapshot and starts `metrics.jsonl` afresh.
    pub fn create(dir: &Path, config: &impl Serialize) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.json");
        fs::write(&cfg_path, serde_json::to_vec_pretty(config)?).map_err(|e| Error::io(&cfg_path, e))?;
        let mpath = dir.join("metrics.jsonl");
        let file = File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
        Ok(RunLog { dir: Some(dir.to_path_buf()), metrics: Some(BufWriter::new(file)), records: Vec::new() })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn push(&mut self, rec: MetricRecord) -> Result<()> {
        if let (Some(w), Some(dir)) = (self.metrics.as_mut(), self.dir.as_ref()) {
            let path = dir.join("metrics.jsonl");
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
        }
        self.records.push(rec);
        Ok(())
    }

    /// Writes `checkpoints/<stage>.ckpt`; returns its path, or `None` for an in-memory log.
    pub fn save_checkpoint(&self, model: &BrainModel, stage: &str, meta: serde_json::Value) -> Result<Option<PathBuf>> {
        match &self.dir {
            Some(d) => {
                let path = d.join("checkpoints").join(format!("{stage}.ckpt"));
                save_checkpoint(model, &path, meta)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }

    /// Writes pretty JSON at `name` relative to the run directory (no-op in memory).
    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        if let Some(d) = &self.dir {
            let path = d.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
