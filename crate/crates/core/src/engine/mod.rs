//! Discrete-event simulation of a parameter server and its workers.
//!
//! The iteration counter advances once per applied gradient; the simulated
//! wall clock advances to each job's finish time. Simultaneous finishes are
//! applied lowest worker id first.

mod policy;
mod state;
mod trace;
mod worker;

pub use policy::{ClientCapacity, CustomSelector, SchedulerPolicy, SelectionContext, SelectorFn};
pub use state::{EngineState, InFlightJob};
pub use trace::{IterationRecord, RunStatus, RunTrace, CSV_COLUMNS};
pub use worker::{two_speed_fleet, ComputeTime, WorkerModel};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::objectives::{HeterogeneousFamily, NoiseModel, Objective};
use crate::rng::MasterSeed;
use crate::stepsize::StepsizePolicy;

/// When to end a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    /// Exactly `t` applied gradients.
    Iterations { t: u64 },
    /// `‖∇f(x⁽ᵗ⁾)‖ ≤ eps`, at most `max_iter` iterations.
    GradNorm { eps: f64, max_iter: u64 },
    /// Mean of the last `k` gradient norms `≤ eps`, at most `max_iter` iterations.
    LastK { eps: f64, k: usize, max_iter: u64 },
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StopRule::Iterations { t } => t >= 1,
            StopRule::GradNorm { eps, max_iter } => eps >= 0.0 && max_iter >= 1,
            StopRule::LastK { eps, k, max_iter } => eps >= 0.0 && k >= 1 && max_iter >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("stop", format!("invalid stop rule {self:?}")))
        }
    }
}

/// Test hooks that deliberately break the engine. Only for mutation testing
/// of the verification suite.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultInjection {
    pub invert_tie_break: bool,
    pub delay_off_by_one: bool,
}

/// A gradient norm this many times the initial one counts as divergence.
const DIVERGENCE_FACTOR: f64 = 1e12;

/// A fully specified simulation.
#[derive(Clone)]
pub struct Simulation<'a> {
    pub objective: &'a dyn Objective,
    pub noise: NoiseModel,
    pub workers: Vec<WorkerModel>,
    pub policy: SchedulerPolicy,
    pub stepsizes: StepsizePolicy,
    pub x0: ParamVector,
    pub stop: StopRule,
    pub seed: MasterSeed,
    #[doc(hidden)]
    pub faults: FaultInjection,
}

impl<'a> Simulation<'a> {
    pub fn new(
        objective: &'a dyn Objective,
        workers: Vec<WorkerModel>,
        policy: SchedulerPolicy,
        stepsizes: StepsizePolicy,
        stop: StopRule,
    ) -> Self {
        Simulation {
            objective,
            noise: NoiseModel::noiseless(),
            workers,
            policy,
            stepsizes,
            x0: ParamVector::zeros(objective.dim()),
            stop,
            seed: MasterSeed(0),
            faults: FaultInjection::default(),
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_seed(mut self, seed: MasterSeed) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_x0(mut self, x0: ParamVector) -> Self {
        self.x0 = x0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers.is_empty() {
            return Err(Error::config("workers", "empty initial worker set"));
        }
        for w in &self.workers {
            w.compute.validate()?;
        }
        if self.x0.len() != self.objective.dim() {
            return Err(Error::config(
                "x0",
                format!("dimension {} does not match objective dimension {}", self.x0.len(), self.objective.dim()),
            ));
        }
        if !self.x0.is_finite() {
            return Err(Error::NumericDomain("x0 is not finite".into()));
        }
        self.policy.validate(self.workers.len())?;
        self.stepsizes.validate()?;
        self.stop.validate()
    }

    /// Validates the configuration and starts the initial jobs.
    pub fn start(&'a self) -> Result<EngineState<'a>> {
        self.validate()?;
        EngineState::new(self)
    }

    pub fn run(&self) -> Result<RunTrace> {
        let mut st = self.start()?;
        let threshold = DIVERGENCE_FACTOR * st.grad_norm().max(1.0);
        let mut window: VecDeque<f64> = VecDeque::new();
        if let StopRule::LastK { k, .. } = self.stop {
            window.push_back(st.grad_norm());
            if window.len() > k {
                window.pop_front();
            }
        }
        let status = loop {
            st.advance_event()?;
            let t = st.iteration();
            let g = st.grad_norm();
            if !g.is_finite() || g > threshold || !st.point().is_finite() {
                break RunStatus::Diverged;
            }
            match self.stop {
                StopRule::Iterations { t: budget } => {
                    if t >= budget {
                        break RunStatus::Completed;
                    }
                }
                StopRule::GradNorm { eps, max_iter } => {
                    if g <= eps {
                        break RunStatus::Converged;
                    }
                    if t >= max_iter {
                        break RunStatus::NotConverged;
                    }
                }
                StopRule::LastK { eps, k, max_iter } => {
                    window.push_back(g);
                    if window.len() > k {
                        window.pop_front();
                    }
                    if window.len() == k && window.iter().sum::<f64>() / k as f64 <= eps {
                        break RunStatus::Converged;
                    }
                    if t >= max_iter {
                        break RunStatus::NotConverged;
                    }
                }
            }
        };
        Ok(st.finish(status))
    }
}

/// Asynchronous SGD with a configurable worker-selection policy.
#[allow(clippy::too_many_arguments)]
pub fn run_homogeneous(
    objective: &dyn Objective,
    noise: NoiseModel,
    workers: Vec<WorkerModel>,
    policy: SchedulerPolicy,
    stepsizes: StepsizePolicy,
    x0: ParamVector,
    stop: StopRule,
    seed: MasterSeed,
) -> Result<RunTrace> {
    if policy.samples_clients() {
        return Err(Error::config("policy", "client-sampling policies belong to run_heterogeneous"));
    }
    Simulation::new(objective, workers, policy, stepsizes, stop)
        .with_noise(noise)
        .with_x0(x0)
        .with_seed(seed)
        .run()
}

/// Asynchronous SGD over heterogeneous clients with uniform client sampling
/// and constant concurrency `tau_c`. `workers[i]` is the speed of client `i`.
#[allow(clippy::too_many_arguments)]
pub fn run_heterogeneous(
    family: &HeterogeneousFamily,
    noise: NoiseModel,
    workers: Vec<WorkerModel>,
    tau_c: usize,
    stepsizes: StepsizePolicy,
    x0: ParamVector,
    stop: StopRule,
    seed: MasterSeed,
) -> Result<RunTrace> {
    if workers.len() != family.num_clients() {
        return Err(Error::config(
            "workers",
            format!("need one worker model per client ({}), got {}", family.num_clients(), workers.len()),
        ));
    }
    let policy = SchedulerPolicy::ClientSampling {
        tau_c,
        capacity: ClientCapacity::Fifo,
    };
    Simulation::new(family, workers, policy, stepsizes, stop)
        .with_noise(noise)
        .with_x0(x0)
        .with_seed(seed)
        .run()
}
