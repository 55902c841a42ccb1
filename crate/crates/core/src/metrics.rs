//! Delay and concurrency statistics computed from a finished run.
//!
//! Two in-flight conventions are in use:
//!
//! * Average/maximum delay statistics treat `τ = t − start` and, at
//!   termination, leave out the job that would be applied next (`j_T`),
//!   giving the denominator `T + |𝒞_T| − 1`.
//! * The delay-conservation identity counts every delay one higher
//!   (`t − start + 1`, so the initial jobs start at 1) and includes every
//!   job of `𝒞_T`. Under that counting
//!   `Σ applied + Σ active = Σ_{t=0}^{T} |𝒞_t|` holds exactly.
//!
//! All delay sums use `u128` with overflow checks.

use serde::{Deserialize, Serialize};

use crate::engine::{RunStatus, RunTrace};
use crate::error::{Error, Result};

/// A job still in flight when the run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InFlightRecord {
    /// Worker id (worker scheduling) or client id (client sampling).
    pub unit: usize,
    pub start_iteration: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InFlightConvention {
    /// Leave out `j_T`, the next job to finish (denominator `T + |𝒞_T| − 1`).
    ExcludeNext,
    /// Count every in-flight job (denominator `T + |𝒞_T|`).
    All,
}

/// Raw delay bookkeeping of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayLedger {
    /// Number of applied gradients `T`.
    pub iterations: u64,
    /// `τ_t` for `t = 0..T`.
    pub applied: Vec<u64>,
    /// Unit that produced the gradient applied at `t`.
    pub applied_units: Vec<usize>,
    /// Jobs in `𝒞_T`, in the order they would finish.
    pub in_flight: Vec<InFlightRecord>,
    /// `|𝒞_t|` for `t = 0..=T`.
    pub concurrency_log: Vec<u64>,
    /// `T_i`: how many jobs each unit was assigned (initial set included).
    pub samples_per_unit: Vec<u64>,
}

/// Exact non-negative rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub lhs: u128,
    pub rhs: u128,
    pub pass: bool,
}

fn sum_checked<I: IntoIterator<Item = u64>>(it: I) -> Result<u128> {
    it.into_iter()
        .try_fold(0u128, |acc, v| acc.checked_add(u128::from(v)))
        .ok_or(Error::Overflow)
}

impl DelayLedger {
    pub fn new(units: usize) -> Self {
        DelayLedger {
            samples_per_unit: vec![0; units],
            ..Default::default()
        }
    }

    /// Current concurrency `|𝒞_T|` at termination.
    pub fn final_concurrency(&self) -> usize {
        self.in_flight.len()
    }

    pub fn convention(&self) -> InFlightConvention {
        if self.in_flight.is_empty() {
            InFlightConvention::All
        } else {
            InFlightConvention::ExcludeNext
        }
    }

    fn in_flight_for(&self, convention: InFlightConvention) -> &[InFlightRecord] {
        match convention {
            InFlightConvention::ExcludeNext if !self.in_flight.is_empty() => &self.in_flight[1..],
            _ => &self.in_flight,
        }
    }

    fn in_flight_delay(&self, job: &InFlightRecord) -> u64 {
        self.iterations - job.start_iteration
    }

    /// `τ_avg` as an exact fraction under the given convention.
    pub fn tau_avg_ratio_with(&self, convention: InFlightConvention) -> Result<Ratio> {
        if self.iterations == 0 {
            return Err(Error::UndefinedStatistic("tau_avg needs T >= 1".into()));
        }
        let flying = self.in_flight_for(convention);
        let num = sum_checked(self.applied.iter().copied())?
            .checked_add(sum_checked(flying.iter().map(|j| self.in_flight_delay(j)))?)
            .ok_or(Error::Overflow)?;
        let den = u128::from(self.iterations) + flying.len() as u128;
        Ok(Ratio { num, den })
    }

    /// Average delay over applied and in-flight gradients.
    pub fn tau_avg(&self) -> Result<f64> {
        self.tau_avg_ratio_with(self.convention()).map(Ratio::to_f64)
    }

    /// Largest applied or in-flight delay.
    pub fn tau_max(&self) -> u64 {
        let flying = self.in_flight_for(self.convention());
        self.applied
            .iter()
            .copied()
            .chain(flying.iter().map(|j| self.in_flight_delay(j)))
            .max()
            .unwrap_or(0)
    }

    /// `Σ_{t=0}^{T} |𝒞_t| / (T + 1)` as an exact fraction.
    pub fn avg_concurrency_ratio(&self) -> Result<Ratio> {
        Ok(Ratio {
            num: sum_checked(self.concurrency_log.iter().copied())?,
            den: self.concurrency_log.len().max(1) as u128,
        })
    }

    pub fn avg_concurrency(&self) -> f64 {
        self.avg_concurrency_ratio().map(Ratio::to_f64).unwrap_or(f64::NAN)
    }

    pub fn max_concurrency(&self) -> u64 {
        self.concurrency_log.iter().copied().max().unwrap_or(0)
    }

    /// Both sides of the delay-conservation identity, delays counted from 1.
    pub fn conservation(&self) -> Result<Conservation> {
        let applied = sum_checked(self.applied.iter().map(|d| d + 1))?;
        let active = sum_checked(self.in_flight.iter().map(|j| self.in_flight_delay(j) + 1))?;
        let lhs = applied.checked_add(active).ok_or(Error::Overflow)?;
        let rhs = sum_checked(self.concurrency_log.iter().copied())?;
        Ok(Conservation {
            lhs,
            rhs,
            pass: lhs == rhs,
        })
    }

    /// Like [`conservation`](Self::conservation) but a mismatch is an error.
    pub fn remark5_check(&self) -> Result<Conservation> {
        let r = self.conservation()?;
        if r.pass {
            Ok(r)
        } else {
            Err(Error::IdentityViolation { lhs: r.lhs, rhs: r.rhs })
        }
    }

    /// Average delay with the same +1 counting as the conservation identity,
    /// normalised by `T + |𝒞_T| − 1`.
    pub fn tau_avg_shifted_ratio(&self) -> Result<Ratio> {
        let r = self.conservation()?;
        let den = (u128::from(self.iterations) + self.in_flight.len() as u128)
            .checked_sub(1)
            .filter(|d| *d > 0)
            .ok_or_else(|| Error::UndefinedStatistic("T + |C_T| - 1 must be positive".into()))?;
        Ok(Ratio { num: r.lhs, den })
    }

    /// Average delay of one unit over all jobs it was ever assigned.
    pub fn tau_avg_per_client(&self, unit: usize) -> Result<f64> {
        let samples = self.samples_per_unit.get(unit).copied().unwrap_or(0);
        if samples == 0 {
            return Err(Error::UndefinedStatistic(format!("client {unit} was never sampled")));
        }
        let applied = sum_checked(
            self.applied
                .iter()
                .zip(&self.applied_units)
                .filter(|(_, u)| **u == unit)
                .map(|(d, _)| *d),
        )?;
        let flying = sum_checked(
            self.in_flight
                .iter()
                .filter(|j| j.unit == unit)
                .map(|j| self.in_flight_delay(j)),
        )?;
        Ok((applied + flying) as f64 / samples as f64)
    }
}

/// Mean of the last `k` gradient norms `‖∇f(x⁽ᵀ⁻ⁱ⁾)‖`, `i = 0..k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub value: f64,
    pub window: usize,
    /// The trace was shorter than `k`; the whole trace was averaged.
    pub truncated: bool,
}

pub fn error_estimate_last_k(trace: &RunTrace, k: usize) -> ErrorEstimate {
    let norms = trace.grad_norms();
    let window = k.max(1).min(norms.len());
    let tail = &norms[norms.len() - window..];
    ErrorEstimate {
        value: tail.iter().sum::<f64>() / window as f64,
        window,
        truncated: window < k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradWeights {
    Uniform,
    /// `|𝒜_t|`
    ActiveSetSize,
    /// `η_t`
    Eta,
}

/// Weighted mean of `‖∇f(x⁽ᵗ⁾)‖²` over the applied iterations.
pub fn weighted_grad_average(trace: &RunTrace, weights: GradWeights) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for r in &trace.records {
        let w = match weights {
            GradWeights::Uniform => 1.0,
            GradWeights::ActiveSetSize => r.selected as f64,
            GradWeights::Eta => r.eta,
        };
        num += w * r.grad_norm * r.grad_norm;
        den += w;
    }
    if den == 0.0 {
        return Err(Error::UndefinedStatistic("all weights are zero".into()));
    }
    Ok(num / den)
}

/// JSON-facing metrics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub status: RunStatus,
    pub iterations: u64,
    pub sim_time: f64,
    pub final_grad_norm: f64,
    pub final_value: f64,
    pub tau_avg: Option<f64>,
    pub tau_avg_convention: InFlightConvention,
    pub tau_max: u64,
    /// `null` for units that were never sampled.
    pub tau_avg_per_client: Vec<Option<f64>>,
    pub avg_concurrency: f64,
    pub max_concurrency: u64,
    #[serde(rename = "remark5")]
    pub conservation: Conservation,
    pub error_last30: f64,
    pub error_last30_truncated: bool,
}

impl MetricsSummary {
    pub fn from_trace(trace: &RunTrace) -> Result<Self> {
        let l = &trace.ledger;
        let est = error_estimate_last_k(trace, 30);
        Ok(MetricsSummary {
            status: trace.status,
            iterations: trace.iterations(),
            sim_time: trace.sim_time,
            final_grad_norm: trace.final_grad_norm,
            final_value: trace.final_value,
            tau_avg: l.tau_avg().ok(),
            tau_avg_convention: l.convention(),
            tau_max: l.tau_max(),
            tau_avg_per_client: (0..l.samples_per_unit.len())
                .map(|u| l.tau_avg_per_client(u).ok())
                .collect(),
            avg_concurrency: l.avg_concurrency(),
            max_concurrency: l.max_concurrency(),
            conservation: l.conservation()?,
            error_last30: est.value,
            error_last30_truncated: est.truncated,
        })
    }

    pub fn converged(&self) -> bool {
        !matches!(self.status, RunStatus::NotConverged | RunStatus::Diverged)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn serial(t: u64) -> DelayLedger {
        DelayLedger {
            iterations: t,
            applied: vec![0; t as usize],
            applied_units: vec![0; t as usize],
            in_flight: vec![InFlightRecord {
                unit: 0,
                start_iteration: t,
            }],
            concurrency_log: vec![1; t as usize + 1],
            samples_per_unit: vec![t + 1],
        }
    }

    #[test]
    fn serial_statistics() {
        let l = serial(10);
        assert_eq!(l.tau_avg().unwrap(), 0.0);
        assert_eq!(l.tau_max(), 0);
        assert_eq!(l.tau_avg_per_client(0).unwrap(), 0.0);
    }

    #[test]
    fn serial_identity_counts_from_one() {
        let r = serial(3).remark5_check().unwrap();
        assert_eq!((r.lhs, r.rhs), (4, 4));
    }

    #[test]
    fn mismatch_is_reported() {
        let mut l = serial(3);
        l.applied[1] = 1;
        let e = l.remark5_check().unwrap_err();
        assert_eq!(e, Error::IdentityViolation { lhs: 5, rhs: 4 });
    }

    #[test]
    fn zero_iterations_undefined() {
        let l = DelayLedger::new(1);
        assert!(matches!(l.tau_avg(), Err(Error::UndefinedStatistic(_))));
    }

    #[test]
    fn unsampled_client_is_undefined() {
        let mut l = serial(3);
        l.samples_per_unit.push(0);
        assert!(matches!(l.tau_avg_per_client(1), Err(Error::UndefinedStatistic(_))));
    }

    #[test]
    fn straggler_in_flight_sets_tau_max() {
        // Fast worker 0 applied every step; worker 1 started at 0 and never returned.
        let t = 50;
        let l = DelayLedger {
            iterations: t,
            applied: vec![0; t as usize],
            applied_units: vec![0; t as usize],
            in_flight: vec![
                InFlightRecord { unit: 0, start_iteration: t },
                InFlightRecord { unit: 1, start_iteration: 0 },
            ],
            concurrency_log: vec![2; t as usize + 1],
            samples_per_unit: vec![t + 1, 1],
        };
        assert_eq!(l.tau_max(), t);
        assert_eq!(l.tau_avg_per_client(1).unwrap(), t as f64);
        assert!(l.remark5_check().is_ok());
    }
}
