use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::ParamVector;
use crate::metrics::DelayLedger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Fixed iteration budget exhausted.
    Completed,
    /// Accuracy target met.
    Converged,
    /// Iteration cap hit before the accuracy target.
    NotConverged,
    /// Iterate or gradient became non-finite.
    Diverged,
}

/// One applied gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: u64,
    /// Worker (or client, under client sampling) that delivered the gradient.
    pub worker: usize,
    /// Data client whose function the gradient was taken on.
    pub client: usize,
    pub tau: u64,
    pub eta: f64,
    /// `‖∇f(x⁽ᵗ⁾)‖` before the update.
    pub grad_norm: f64,
    /// `f(x⁽ᵗ⁾)` before the update.
    pub f_value: f64,
    /// Simulated wall clock at which the update happened.
    pub sim_time: f64,
    /// `|𝒜_t|`
    pub selected: usize,
    /// `|𝒞_t|`
    pub concurrency: usize,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "t",
    "worker",
    "client",
    "tau",
    "eta",
    "grad_norm",
    "f_value",
    "sim_time",
    "selected",
    "concurrency",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub final_point: ParamVector,
    /// `‖∇f(x⁽ᵀ⁾)‖`
    pub final_grad_norm: f64,
    pub final_value: f64,
    pub sim_time: f64,
    pub status: RunStatus,
    pub ledger: DelayLedger,
}

impl RunTrace {
    pub fn iterations(&self) -> u64 {
        self.records.len() as u64
    }

    /// `‖∇f(x⁽ᵗ⁾)‖` for `t = 0..=T`.
    pub fn grad_norms(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.grad_norm)
            .chain(std::iter::once(self.final_grad_norm))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(CSV_COLUMNS)?;
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}
