use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One optimization step of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub batch: usize,
    /// Objective estimate the classifier step descended on.
    pub j: f64,
    /// Mean classification loss on the perturbed batch.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
    pub wall_ms: f64,
}

/// Append-only sequence of [`StepRecord`]s with strictly increasing step index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    records: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_id: Option<String>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return invalid(format!("run log step {} after {}", record.step, last.step));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn next_step(&self) -> u64 {
        self.records.last().map_or(0, |r| r.step + 1)
    }

    /// Mean of `f` over the records of the last epoch that has any `Some` value.
    pub fn final_epoch_mean(&self, f: impl Fn(&StepRecord) -> Option<f64>) -> Option<f64> {
        let last = self.records.last()?.epoch;
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.epoch == last)
            .filter_map(f)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Per-epoch means of the logged classification loss.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, c)| s / c.max(1) as f64).collect()
    }

    /// Equality of everything except wall-clock timings.
    pub fn same_trajectory(&self, other: &RunLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                let mut b = b.clone();
                b.wall_ms = a.wall_ms;
                *a == b
            })
    }

    /// One JSON object per record.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
