use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a custom selection rule sees at each server step.
#[derive(Debug)]
pub struct SelectionContext<'a> {
    /// The iteration `t` whose update was just applied.
    pub iteration: u64,
    pub finished_worker: usize,
    /// `idle[w]` is true when worker `w` has no job in flight (includes `j_t`).
    pub idle: &'a [bool],
}

/// Chooses `𝒜_t` from the idle workers.
pub type SelectorFn = dyn Fn(&SelectionContext<'_>) -> Vec<usize> + Send + Sync;

#[derive(Clone)]
pub struct CustomSelector {
    pub initial: Vec<usize>,
    pub select: Arc<SelectorFn>,
}

impl fmt::Debug for CustomSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSelector").field("initial", &self.initial).finish_non_exhaustive()
    }
}

/// How a client handles a job sampled while it is still busy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientCapacity {
    /// Jobs pile up and run one after another.
    #[default]
    Fifo,
    /// Every job runs immediately, as an independent copy.
    Unbounded,
}

/// Server-side rule for the initial active set `𝒞₀` and the per-step
/// selection `𝒜_t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerPolicy {
    /// `𝒞₀` = `initial` (all workers when absent), `𝒜_t = {j_t}`.
    MaxConcurrency {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<Vec<usize>>,
    },
    /// Mini-batch SGD with batch size `n` (the fleet size): `𝒞₀ = [n]`,
    /// `𝒜_t = [n]` when `(t+1) mod n = 0`, otherwise empty.
    Minibatch,
    /// `𝒞₀ = [n]`; each idle worker is re-selected independently with
    /// probability `p`, and `j_t` is forced when nothing would remain in flight.
    RandomIdle { p: f64 },
    /// Explicit table: `schedule[t mod len]` lists the workers started at step `t`.
    Table {
        initial: Vec<usize>,
        schedule: Vec<Vec<usize>>,
    },
    /// Arbitrary selection rule supplied in code.
    #[serde(skip)]
    Custom(CustomSelector),
    /// Uniform client sampling with constant concurrency `tau_c`: one client
    /// drawn from `[n]` per applied gradient, jobs on busy clients queue up.
    ClientSampling {
        tau_c: usize,
        #[serde(default)]
        capacity: ClientCapacity,
    },
    /// Mini-batch SGD whose batch of `batch` clients is drawn uniformly with
    /// replacement at every batch boundary.
    SampledMinibatch {
        batch: usize,
        #[serde(default = "unbounded")]
        capacity: ClientCapacity,
    },
}

fn unbounded() -> ClientCapacity {
    ClientCapacity::Unbounded
}

impl SchedulerPolicy {
    /// True for the client-sampling family (multiset active sets).
    pub fn samples_clients(&self) -> bool {
        matches!(
            self,
            SchedulerPolicy::ClientSampling { .. } | SchedulerPolicy::SampledMinibatch { .. }
        )
    }

    pub fn validate(&self, units: usize) -> Result<()> {
        let err = |reason: String| Err(Error::config("policy", reason));
        if units == 0 {
            return Err(Error::config("workers", "empty worker set"));
        }
        let check_ids = |ids: &[usize], what: &str| -> Result<()> {
            if let Some(bad) = ids.iter().find(|w| **w >= units) {
                return Err(Error::config(
                    format!("policy.{what}"),
                    format!("worker {bad} out of range (fleet has {units})"),
                ));
            }
            let mut seen = vec![false; units];
            for w in ids {
                if std::mem::replace(&mut seen[*w], true) {
                    return Err(Error::config(format!("policy.{what}"), format!("worker {w} listed twice")));
                }
            }
            Ok(())
        };
        match self {
            SchedulerPolicy::MaxConcurrency { initial: Some(init) } => {
                check_ids(init, "initial")?;
                if init.is_empty() {
                    return Err(Error::config("policy.initial", "empty initial worker set"));
                }
                Ok(())
            }
            SchedulerPolicy::RandomIdle { p } if !(0.0..=1.0).contains(p) => err(format!("p = {p} not in [0, 1]")),
            SchedulerPolicy::Table { initial, schedule } => {
                check_ids(initial, "initial")?;
                if initial.is_empty() {
                    return Err(Error::config("policy.initial", "empty initial worker set"));
                }
                if schedule.is_empty() {
                    return err("schedule table is empty".into());
                }
                for (i, row) in schedule.iter().enumerate() {
                    check_ids(row, &format!("schedule[{i}]"))?;
                }
                Ok(())
            }
            SchedulerPolicy::Custom(c) => {
                check_ids(&c.initial, "initial")?;
                if c.initial.is_empty() {
                    return Err(Error::config("policy.initial", "empty initial worker set"));
                }
                Ok(())
            }
            SchedulerPolicy::ClientSampling { tau_c, .. } if *tau_c == 0 => err("tau_c must be >= 1".into()),
            SchedulerPolicy::SampledMinibatch { batch, .. } if *batch == 0 => err("batch must be >= 1".into()),
            _ => Ok(()),
        }
    }
}
