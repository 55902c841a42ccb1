//! Single-configuration runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{RunStatus, RunTrace};
use crate::error::Result;
use crate::metrics::{error_estimate_last_k, MetricsSummary};
use crate::stepsize::{StepsizePolicy, TuneReport};

use super::experiment::Prepared;
use super::svg::{downsample, LineChart, Series};

const CHART_POINTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub replica: u32,
    pub seed: u64,
    pub status: RunStatus,
    pub iterations: u64,
    pub sim_time: f64,
    pub final_grad_norm: f64,
    pub error_last30: f64,
}

/// Contents of the metrics file: the summary of replica 0, the stepsize that
/// was used and, for multi-replica runs, one line per replica.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateOutput {
    #[serde(flatten)]
    pub summary: MetricsSummary,
    pub stepsize: StepsizePolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuneReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub replicas: Vec<ReplicaSummary>,
}

impl SimulateOutput {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// True unless some replica stopped short of its accuracy target.
    pub fn converged(&self) -> bool {
        self.summary.converged()
            && self
                .replicas
                .iter()
                .all(|r| !matches!(r.status, RunStatus::NotConverged | RunStatus::Diverged))
    }
}

pub struct SimulateResult {
    /// Trace of replica 0.
    pub trace: RunTrace,
    pub output: SimulateOutput,
}

pub fn run_simulate(prepared: &Prepared) -> Result<SimulateResult> {
    let cfg = &prepared.config;
    let (stepsize, tuning) = prepared.stepsize()?;
    let mut traces = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| prepared.run(&cfg.policy, stepsize, cfg.stop, prepared.run_seed(r)))
        .collect::<Result<Vec<_>>>()?;
    let replicas = if traces.len() > 1 {
        traces
            .iter()
            .zip(0..)
            .map(|(t, r)| ReplicaSummary {
                replica: r,
                seed: prepared.run_seed(r).0,
                status: t.status,
                iterations: t.iterations(),
                sim_time: t.sim_time,
                final_grad_norm: t.final_grad_norm,
                error_last30: error_estimate_last_k(t, 30).value,
            })
            .collect()
    } else {
        Vec::new()
    };
    let trace = traces.swap_remove(0);
    let summary = MetricsSummary::from_trace(&trace)?;
    Ok(SimulateResult {
        trace,
        output: SimulateOutput {
            summary,
            stepsize,
            tuning,
            replicas,
        },
    })
}

/// Gradient norm against iteration, log scale.
pub fn trace_chart(trace: &RunTrace, title: &str) -> LineChart {
    let pts: Vec<(f64, f64)> = trace
        .grad_norms()
        .into_iter()
        .enumerate()
        .map(|(t, g)| (t as f64, g))
        .filter(|(_, g)| *g > 0.0)
        .collect();
    LineChart {
        title: title.into(),
        x_label: "iteration".into(),
        y_label: "gradient norm".into(),
        log_y: true,
        series: vec![Series::line("replica 0", downsample(&pts, CHART_POINTS))],
        ..Default::default()
    }
}
