//! Asynchronous vs. delay-adaptive vs. mini-batch SGD on one fleet.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{RunStatus, RunTrace, SchedulerPolicy};
use crate::error::{Error, Result};
use crate::metrics::error_estimate_last_k;
use crate::stepsize::{AdaptiveMode, StepsizePolicy};

use super::config::StepsizeSpec;
use super::experiment::Prepared;
use super::svg::{downsample, LineChart, Series};

/// Curve points kept per policy in the CSV and the chart.
pub const CURVE_POINTS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    /// Every finished worker restarts at once, constant stepsize.
    Async,
    /// As `Async`, with the delay-adaptive stepsize.
    Adaptive,
    /// Synchronous mini-batches over the whole fleet.
    Minibatch,
}

impl PolicyVariant {
    pub const ALL: [PolicyVariant; 3] = [PolicyVariant::Async, PolicyVariant::Adaptive, PolicyVariant::Minibatch];

    pub fn name(self) -> &'static str {
        match self {
            PolicyVariant::Async => "async",
            PolicyVariant::Adaptive => "adaptive",
            PolicyVariant::Minibatch => "minibatch",
        }
    }

    fn scheduler(self) -> SchedulerPolicy {
        match self {
            PolicyVariant::Async | PolicyVariant::Adaptive => SchedulerPolicy::MaxConcurrency { initial: None },
            PolicyVariant::Minibatch => SchedulerPolicy::Minibatch,
        }
    }
}

impl fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyVariant::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config("policies", format!("unknown policy {s:?}; expected async, adaptive or minibatch")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: PolicyVariant,
    pub stepsize: StepsizePolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuned_on_edge: Option<bool>,
    pub status: RunStatus,
    pub iterations: u64,
    /// Gradient computations started, including ones still in flight.
    pub gradients_computed: u64,
    pub sim_time: f64,
    pub final_grad_norm: f64,
    pub error_last30: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub results: Vec<PolicyResult>,
}

pub struct CompareRun {
    pub report: CompareReport,
    pub traces: Vec<RunTrace>,
}

fn base_eta(p: &Prepared) -> Result<f64> {
    let resolved = p.resolve(&p.config.stepsize_template())?;
    Ok(resolved.base_eta())
}

/// Runs every variant on the config's objective, fleet, stop rule and seed.
/// With a `tune` section each variant gets its own tuned stepsize; otherwise
/// all share the base stepsize of the config.
pub fn run_compare(prepared: &Prepared, variants: &[PolicyVariant], mode: AdaptiveMode) -> Result<CompareRun> {
    if variants.is_empty() {
        return Err(Error::config("policies", "nothing to compare"));
    }
    if prepared.config.policy.samples_clients() {
        return Err(Error::config("policy", "compare uses its own schedulers; drop the client-sampling policy"));
    }
    let eta = if prepared.config.tune.is_some() { 1.0 } else { base_eta(prepared)? };
    let cfg = &prepared.config;
    let runs = variants
        .par_iter()
        .map(|&v| -> Result<(PolicyResult, RunTrace)> {
            let template = match v {
                PolicyVariant::Adaptive => StepsizeSpec::DelayAdaptive { eta, mode, tau_c: None },
                _ => StepsizeSpec::Constant { eta },
            };
            let scheduler = v.scheduler();
            let mut p = prepared.clone();
            p.config.policy = scheduler.clone();
            let (spec, edge) = if cfg.tune.is_some() {
                let (spec, report) = p.tune(&scheduler, &template)?;
                (spec, Some(report.on_edge))
            } else {
                (template, None)
            };
            let stepsize = p.resolve(&spec)?;
            let trace = p.run(&scheduler, stepsize, cfg.stop, p.run_seed(0))?;
            let result = PolicyResult {
                policy: v,
                stepsize,
                tuned_on_edge: edge,
                status: trace.status,
                iterations: trace.iterations(),
                gradients_computed: trace.ledger.samples_per_unit.iter().sum(),
                sim_time: trace.sim_time,
                final_grad_norm: trace.final_grad_norm,
                error_last30: error_estimate_last_k(&trace, 30).value,
            };
            Ok((result, trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let (results, traces) = runs.into_iter().unzip();
    Ok(CompareRun {
        report: CompareReport { results },
        traces,
    })
}

impl CompareReport {
    pub fn all_converged(&self) -> bool {
        self.results
            .iter()
            .all(|r| !matches!(r.status, RunStatus::NotConverged | RunStatus::Diverged))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn curve(trace: &RunTrace) -> Vec<(u64, f64, f64)> {
    let mut pts = vec![(0, 0.0, trace.records.first().map_or(trace.final_grad_norm, |r| r.grad_norm))];
    let norms = trace.grad_norms();
    pts.extend(trace.records.iter().map(|r| (r.t + 1, r.sim_time, norms[r.t as usize + 1])));
    let idx: Vec<(f64, f64)> = (0..pts.len()).map(|i| (i as f64, 0.0)).collect();
    downsample(&idx, CURVE_POINTS)
        .into_iter()
        .map(|(i, _)| pts[i as usize])
        .collect()
}

impl CompareRun {
    /// Long-format curves: `policy,t,sim_time,grad_norm`.
    pub fn curves_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["policy", "t", "sim_time", "grad_norm"])?;
        for (r, trace) in self.report.results.iter().zip(&self.traces) {
            for (t, time, g) in curve(trace) {
                w.write_record([r.policy.name().to_string(), t.to_string(), time.to_string(), g.to_string()])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Gradient norm against simulated wall time.
    pub fn chart(&self) -> LineChart {
        let series = self
            .report
            .results
            .iter()
            .zip(&self.traces)
            .map(|(r, trace)| {
                let pts = curve(trace)
                    .into_iter()
                    .filter(|(_, _, g)| *g > 0.0)
                    .map(|(_, time, g)| (time, g))
                    .collect();
                Series::line(r.policy.name(), pts)
            })
            .collect();
        LineChart {
            title: "policy comparison".into(),
            x_label: "simulated time".into(),
            y_label: "gradient norm".into(),
            log_y: true,
            series,
            ..Default::default()
        }
    }
}
