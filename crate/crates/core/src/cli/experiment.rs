//! A config resolved into an objective, a fleet and a starting point.

use std::path::Path;

use crate::engine::{RunStatus, RunTrace, SchedulerPolicy, Simulation, StopRule, WorkerModel};
use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::metrics::error_estimate_last_k;
use crate::objectives::{AnyObjective, Objective};
use crate::rng::MasterSeed;
use crate::stepsize::{grid_tune, grid_tune_deepening, StepsizePolicy, TuneCriterion, TuneOutcome, TuneReport};

use super::config::{expand_workers, ExperimentConfig, StepsizeSpec};

/// First iteration cap and growth factor of the deepening tuner.
pub const TUNE_FIRST_CAP: u64 = 1000;
pub const TUNE_GROWTH: u64 = 4;

#[derive(Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub objective: AnyObjective,
    pub workers: Vec<WorkerModel>,
    pub x0: ParamVector,
}

impl Prepared {
    pub fn new(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let objective = config.objective.build(config.master_seed(), base_dir)?;
        let x0 = match &config.x0 {
            Some(v) if v.len() != objective.dim() => {
                return Err(Error::config(
                    "x0",
                    format!("dimension {} does not match objective dimension {}", v.len(), objective.dim()),
                ))
            }
            Some(v) => ParamVector(v.clone()),
            None => ParamVector::zeros(objective.dim()),
        };
        let workers = expand_workers(&config.workers);
        if config.policy.samples_clients() && objective.num_clients() > 1 && objective.num_clients() != workers.len() {
            return Err(Error::config(
                "workers",
                format!("{} clients need {} worker models, got {}", objective.num_clients(), objective.num_clients(), workers.len()),
            ));
        }
        Ok(Prepared {
            config,
            objective,
            workers,
            x0,
        })
    }

    /// Seed of replica `r`.
    pub fn run_seed(&self, replica: u32) -> MasterSeed {
        self.config.master_seed().child(u64::from(replica))
    }

    pub fn resolve(&self, spec: &StepsizeSpec) -> Result<StepsizePolicy> {
        spec.resolve(&self.config.stepsize_context(&self.objective))
    }

    pub fn simulation(&self, policy: SchedulerPolicy, stepsizes: StepsizePolicy, stop: StopRule, seed: MasterSeed) -> Simulation<'_> {
        Simulation::new(&self.objective, self.workers.clone(), policy, stepsizes, stop)
            .with_noise(self.config.noise)
            .with_x0(self.x0.clone())
            .with_seed(seed)
    }

    pub fn run(&self, policy: &SchedulerPolicy, stepsizes: StepsizePolicy, stop: StopRule, seed: MasterSeed) -> Result<RunTrace> {
        self.simulation(policy.clone(), stepsizes, stop, seed).run()
    }

    /// Picks the base stepsize of `template` on the configured grid.
    pub fn tune(&self, policy: &SchedulerPolicy, template: &StepsizeSpec) -> Result<(StepsizeSpec, TuneReport)> {
        let request = self.config.tune.unwrap_or_default();
        let grid = request.grid.points()?;
        let stop = self.config.stop;
        let seed = self.run_seed(0);
        let criterion = request.criterion_for(&stop);
        let horizon = self.config.horizon();
        let eval = |eta: f64, cap: Option<u64>| -> TuneOutcome {
            let spec = match template.with_eta(eta) {
                Ok(s) => s,
                Err(_) => return failed(),
            };
            let Ok(stepsizes) = self.resolve(&spec) else {
                return failed();
            };
            let stop = cap.map_or(stop, |c| cap_stop(stop, c));
            match self.run(policy, stepsizes, stop, seed) {
                Ok(trace) => outcome(&trace),
                Err(_) => failed(),
            }
        };
        let (eta, report) = match criterion {
            TuneCriterion::MinTToEps => {
                grid_tune_deepening(|eta, cap| eval(eta, Some(cap)), &grid, TUNE_FIRST_CAP, TUNE_GROWTH, horizon)?
            }
            TuneCriterion::MinFinalError => grid_tune(|eta| eval(eta, None), &grid, criterion)?,
        };
        Ok((template.with_eta(eta)?, report))
    }

    /// The configured stepsize, tuned first when the config asks for it.
    pub fn stepsize(&self) -> Result<(StepsizePolicy, Option<TuneReport>)> {
        let template = self.config.stepsize_template();
        if self.config.tune.is_some() {
            let (spec, report) = self.tune(&self.config.policy, &template)?;
            Ok((self.resolve(&spec)?, Some(report)))
        } else {
            Ok((self.resolve(&template)?, None))
        }
    }
}

fn failed() -> TuneOutcome {
    TuneOutcome {
        final_error: f64::INFINITY,
        iterations_to_eps: None,
    }
}

/// Lowers the iteration cap of an accuracy-based stop rule.
pub fn cap_stop(stop: StopRule, cap: u64) -> StopRule {
    match stop {
        StopRule::Iterations { t } => StopRule::Iterations { t: t.min(cap) },
        StopRule::GradNorm { eps, max_iter } => StopRule::GradNorm {
            eps,
            max_iter: max_iter.min(cap),
        },
        StopRule::LastK { eps, k, max_iter } => StopRule::LastK {
            eps,
            k,
            max_iter: max_iter.min(cap),
        },
    }
}

/// Tuning score of a finished run: the last-30 error estimate (infinite on
/// divergence) and the iteration count if the accuracy target was met.
pub fn outcome(trace: &RunTrace) -> TuneOutcome {
    let final_error = match trace.status {
        RunStatus::Diverged => f64::INFINITY,
        _ => error_estimate_last_k(trace, 30).value,
    };
    TuneOutcome {
        final_error,
        iterations_to_eps: (trace.status == RunStatus::Converged).then(|| trace.iterations()),
    }
}
