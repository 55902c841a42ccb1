//! Experiment configuration files.
//!
//! A config is a JSON document. Every field except `objective`, `workers` and
//! `stop` has a default; the master seed determines all randomness.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "objective": { "family": "quadratic", "dim": 10, "lambda_min": 1.0, "lambda_max": 2.0 },
//!   "noise": { "sigma": 0.0 },
//!   "workers": [ { "count": 1, "compute": { "kind": "constant", "delta": 1.0 } } ],
//!   "policy": { "kind": "max_concurrency" },
//!   "stepsize": { "kind": "constant", "eta": 0.1 },
//!   "tune": { "grid": { "lo_exp": -5, "hi_exp": 2, "per_decade": 4 } },
//!   "stop": { "kind": "last_k", "eps": 1e-14, "k": 30, "max_iter": 1000000 },
//!   "sweep": { "slow_factors": [1, 4, 16, 64, 256] },
//!   "replicas": 1
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{ComputeTime, SchedulerPolicy, StopRule, WorkerModel};
use crate::error::{Error, Result};
use crate::objectives::{
    AnyObjective, HeterogeneousFamily, LogisticObjective, NoiseModel, Objective, QuadraticObjective,
};
use crate::rng::{names, MasterSeed};
use crate::stepsize::{log_grid, AdaptiveMode, StepsizePolicy, TuneCriterion};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub noise: NoiseModel,
    pub workers: Vec<WorkerGroup>,
    #[serde(default = "max_concurrency")]
    pub policy: SchedulerPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stepsize: Option<StepsizeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune: Option<TuneRequest>,
    pub stop: StopRule,
    /// Starting point; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default = "one")]
    pub replicas: u32,
    #[serde(default)]
    pub outputs: OutputNames,
}

fn max_concurrency() -> SchedulerPolicy {
    SchedulerPolicy::MaxConcurrency { initial: None }
}

fn one() -> u32 {
    1
}

fn one_usize() -> usize {
    1
}

/// How the objective is obtained. Generated families draw from the
/// `objective-gen` stream of the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `½‖Ax − b‖²` with the singular values of `A` equally spaced in
    /// `[lambda_min, lambda_max]`.
    Quadratic { dim: usize, lambda_min: f64, lambda_max: f64 },
    Logistic { m: usize, dim: usize },
    /// Quadratic base plus per-client linear shifts of RMS norm `zeta`.
    Heterogeneous {
        dim: usize,
        lambda_min: f64,
        lambda_max: f64,
        clients: usize,
        zeta: f64,
    },
    /// A serialized objective, relative paths resolved against the config file.
    File { path: PathBuf },
}

impl ObjectiveSpec {
    pub fn build(&self, seed: MasterSeed, base_dir: &Path) -> Result<AnyObjective> {
        let mut rng = seed.stream(names::OBJECTIVE);
        let obj = match self {
            ObjectiveSpec::Quadratic {
                dim,
                lambda_min,
                lambda_max,
            } => AnyObjective::Quadratic(QuadraticObjective::generate(*dim, *lambda_min, *lambda_max, &mut rng)?),
            ObjectiveSpec::Logistic { m, dim } => AnyObjective::Logistic(LogisticObjective::generate(*m, *dim, &mut rng)?),
            ObjectiveSpec::Heterogeneous {
                dim,
                lambda_min,
                lambda_max,
                clients,
                zeta,
            } => {
                let base = QuadraticObjective::generate(*dim, *lambda_min, *lambda_max, &mut rng)?;
                AnyObjective::Heterogeneous(HeterogeneousFamily::generate(base, *clients, *zeta, &mut rng)?)
            }
            ObjectiveSpec::File { path } => {
                let full = base_dir.join(path);
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| Error::config("objective.path", format!("{}: {e}", full.display())))?;
                AnyObjective::from_json(&text)?
            }
        };
        Ok(obj)
    }
}

/// `count` identical workers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerGroup {
    #[serde(default = "one_usize")]
    pub count: usize,
    pub compute: ComputeTime,
}

impl WorkerGroup {
    pub fn constant(count: usize, delta: f64) -> Self {
        WorkerGroup {
            count,
            compute: ComputeTime::Constant { delta },
        }
    }
}

pub fn expand_workers(groups: &[WorkerGroup]) -> Vec<WorkerModel> {
    groups
        .iter()
        .flat_map(|g| std::iter::repeat_n(WorkerModel { compute: g.compute }, g.count))
        .collect()
}

/// Stepsize as written in a config. Constants left out (`L`, `τ_C`, `σ`) are
/// filled in from the objective, the policy and the noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepsizeSpec {
    Constant {
        eta: f64,
    },
    DelayAdaptive {
        eta: f64,
        #[serde(default = "scale_mode")]
        mode: AdaptiveMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau_c: Option<u64>,
    },
    /// The constant-stepsize theory value. `tau_max` defaults to `τ_C`;
    /// `r0` is required when `σ > 0`.
    Theoretical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau_max: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r0: Option<f64>,
    },
}

fn scale_mode() -> AdaptiveMode {
    AdaptiveMode::Scale
}

/// Run-specific constants used to resolve a [`StepsizeSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeContext {
    pub l: f64,
    pub tau_c: u64,
    pub sigma: f64,
    pub horizon: u64,
}

impl StepsizeSpec {
    pub fn resolve(&self, ctx: &StepsizeContext) -> Result<StepsizePolicy> {
        let policy = match *self {
            StepsizeSpec::Constant { eta } => StepsizePolicy::Constant { eta },
            StepsizeSpec::DelayAdaptive { eta, mode, tau_c } => StepsizePolicy::DelayAdaptive {
                eta,
                l: ctx.l,
                tau_c: tau_c.unwrap_or(ctx.tau_c),
                mode,
            },
            StepsizeSpec::Theoretical { tau_max, r0 } => {
                let r0 = match (r0, ctx.sigma > 0.0) {
                    (Some(r), _) => r,
                    (None, false) => 1.0,
                    (None, true) => return Err(Error::config("stepsize.r0", "required when sigma > 0")),
                };
                StepsizePolicy::TheoreticalConstant {
                    l: ctx.l,
                    tau_max: tau_max.unwrap_or(ctx.tau_c).max(1),
                    tau_c: ctx.tau_c,
                    sigma: ctx.sigma,
                    r0,
                    horizon: ctx.horizon,
                }
            }
        };
        policy
            .validate()
            .map_err(|e| Error::config("stepsize", e.to_string()))?;
        Ok(policy)
    }

    /// Same rule with base stepsize `eta`, for tuning.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        match *self {
            StepsizeSpec::Constant { .. } => Ok(StepsizeSpec::Constant { eta }),
            StepsizeSpec::DelayAdaptive { mode, tau_c, .. } => Ok(StepsizeSpec::DelayAdaptive { eta, mode, tau_c }),
            StepsizeSpec::Theoretical { .. } => Err(Error::config("stepsize", "the theoretical stepsize cannot be tuned")),
        }
    }
}

/// Decimal exponents and density of a log-spaced stepsize grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo_exp: i32,
    pub hi_exp: i32,
    pub per_decade: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lo_exp: -5,
            hi_exp: 2,
            per_decade: 4,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        if self.hi_exp <= self.lo_exp || self.per_decade == 0 {
            return Err(Error::config("tune.grid", format!("empty grid {self:?}")));
        }
        Ok(log_grid(self.lo_exp, self.hi_exp, self.per_decade))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneRequest {
    #[serde(default)]
    pub grid: GridSpec,
    /// Defaults to iterations-to-accuracy for accuracy-based stop rules and to
    /// final error for fixed budgets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<TuneCriterion>,
}

impl TuneRequest {
    pub fn criterion_for(&self, stop: &StopRule) -> TuneCriterion {
        self.criterion.unwrap_or(match stop {
            StopRule::Iterations { .. } => TuneCriterion::MinFinalError,
            _ => TuneCriterion::MinTToEps,
        })
    }
}

/// Sweep axes. `slow_factors` drives the scaling experiment: two unit-speed
/// workers, the second slowed down by each factor in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub slow_factors: Vec<u32>,
}

/// File names written under `--out`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputNames {
    pub trace: String,
    pub metrics: String,
    pub report: String,
}

impl Default for OutputNames {
    fn default() -> Self {
        OutputNames {
            trace: "trace.csv".into(),
            metrics: "metrics.json".into(),
            report: "report.svg".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config(json_path(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers.is_empty() || self.workers.iter().all(|g| g.count == 0) {
            return Err(Error::config("workers", "empty initial worker set"));
        }
        for (i, g) in self.workers.iter().enumerate() {
            g.compute
                .validate()
                .map_err(|_| Error::config(format!("workers[{i}].compute"), format!("invalid compute-time model {:?}", g.compute)))?;
        }
        NoiseModel::new(self.noise.sigma).map_err(|e| Error::config("noise.sigma", e.to_string()))?;
        self.policy.validate(self.fleet_size())?;
        self.stop.validate()?;
        if self.stepsize.is_none() && self.tune.is_none() {
            return Err(Error::config("stepsize", "required unless tune is given"));
        }
        if let Some(t) = &self.tune {
            t.grid.points()?;
            if let Some(s) = &self.stepsize {
                s.with_eta(1.0)?;
            }
        }
        if self.replicas == 0 {
            return Err(Error::config("replicas", "must be at least 1"));
        }
        if let Some(s) = &self.sweep {
            if s.slow_factors.contains(&0) {
                return Err(Error::config("sweep.slow_factors", "factors must be positive"));
            }
        }
        Ok(())
    }

    pub fn fleet_size(&self) -> usize {
        self.workers.iter().map(|g| g.count).sum()
    }

    pub fn master_seed(&self) -> MasterSeed {
        MasterSeed(self.seed)
    }

    /// Iteration cap of the stop rule.
    pub fn horizon(&self) -> u64 {
        match self.stop {
            StopRule::Iterations { t } => t,
            StopRule::GradNorm { max_iter, .. } | StopRule::LastK { max_iter, .. } => max_iter,
        }
    }

    /// The stepsize rule that tuning adjusts, or the fixed one.
    pub fn stepsize_template(&self) -> StepsizeSpec {
        self.stepsize.unwrap_or(StepsizeSpec::Constant { eta: 0.0 })
    }

    pub fn stepsize_context(&self, objective: &dyn Objective) -> StepsizeContext {
        StepsizeContext {
            l: objective.smoothness(),
            tau_c: nominal_concurrency(&self.policy, self.fleet_size()) as u64,
            sigma: self.noise.sigma,
            horizon: self.horizon(),
        }
    }
}

/// Number of jobs a policy keeps in flight at the start of a run.
pub fn nominal_concurrency(policy: &SchedulerPolicy, units: usize) -> usize {
    match policy {
        SchedulerPolicy::MaxConcurrency { initial: Some(c) } => c.len(),
        SchedulerPolicy::Table { initial, .. } => initial.len(),
        SchedulerPolicy::Custom(c) => c.initial.len(),
        SchedulerPolicy::ClientSampling { tau_c, .. } => *tau_c,
        SchedulerPolicy::SampledMinibatch { batch, .. } => *batch,
        SchedulerPolicy::MaxConcurrency { initial: None }
        | SchedulerPolicy::Minibatch
        | SchedulerPolicy::RandomIdle { .. } => units,
    }
    .max(1)
}

fn json_path(e: &serde_json::Error) -> String {
    format!("config (line {}, column {})", e.line(), e.column())
}

/// Built-in experiment presets.
pub const PRESETS: [&str; 5] = ["quadratic", "logistic", "serial", "two-worker", "straggler"];

/// Grid-tuned, noiseless two-worker setups for the √τ_max scaling sweep
/// (`quadratic`, `logistic`), plus small demonstration setups.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let scaling = |objective| ExperimentConfig {
        seed: 1,
        objective,
        noise: NoiseModel::noiseless(),
        workers: vec![WorkerGroup::constant(2, 1.0)],
        policy: max_concurrency(),
        stepsize: None,
        tune: Some(TuneRequest {
            grid: GridSpec::default(),
            criterion: Some(TuneCriterion::MinTToEps),
        }),
        stop: StopRule::LastK {
            eps: 1e-14,
            k: 30,
            max_iter: 2_000_000,
        },
        x0: None,
        sweep: Some(Sweep {
            slow_factors: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
        }),
        replicas: 1,
        outputs: OutputNames::default(),
    };
    let small_quadratic = ObjectiveSpec::Quadratic {
        dim: 10,
        lambda_min: 1.0,
        lambda_max: 2.0,
    };
    let cfg = match name {
        "quadratic" => scaling(small_quadratic),
        "logistic" => scaling(ObjectiveSpec::Logistic { m: 100, dim: 20 }),
        "serial" => ExperimentConfig {
            workers: vec![WorkerGroup::constant(1, 1.0)],
            stepsize: Some(StepsizeSpec::Constant { eta: 0.1 }),
            tune: None,
            stop: StopRule::Iterations { t: 1000 },
            sweep: None,
            ..scaling(small_quadratic.clone())
        },
        "two-worker" => ExperimentConfig {
            workers: vec![WorkerGroup::constant(1, 1.0), WorkerGroup::constant(1, 8.0)],
            stepsize: Some(StepsizeSpec::Constant { eta: 0.05 }),
            tune: None,
            stop: StopRule::Iterations { t: 1000 },
            sweep: None,
            ..scaling(small_quadratic.clone())
        },
        "straggler" => ExperimentConfig {
            workers: vec![WorkerGroup::constant(9, 10.0), WorkerGroup::constant(1, 60.0)],
            stepsize: Some(StepsizeSpec::Constant { eta: 0.02 }),
            tune: None,
            stop: StopRule::GradNorm {
                eps: 1e-8,
                max_iter: 200_000,
            },
            sweep: None,
            ..scaling(small_quadratic.clone())
        },
        other => {
            return Err(Error::config(
                "preset",
                format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", ")),
            ))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
