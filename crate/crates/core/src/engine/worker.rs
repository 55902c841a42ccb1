use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution of the time a worker needs to compute one gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComputeTime {
    Constant {
        delta: f64,
    },
    LogNormal {
        mu: f64,
        s: f64,
    },
    /// `delta`, or `delta * slow_factor` with probability `straggle_prob`.
    Straggler {
        delta: f64,
        slow_factor: f64,
        straggle_prob: f64,
    },
}

impl ComputeTime {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ComputeTime::Constant { delta } => delta > 0.0 && delta.is_finite(),
            ComputeTime::LogNormal { mu, s } => mu.is_finite() && s >= 0.0 && s.is_finite(),
            ComputeTime::Straggler {
                delta,
                slow_factor,
                straggle_prob,
            } => {
                delta > 0.0
                    && delta.is_finite()
                    && slow_factor >= 1.0
                    && slow_factor.is_finite()
                    && (0.0..=1.0).contains(&straggle_prob)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("workers.compute", format!("invalid compute-time model {self:?}")))
        }
    }

    /// Draws one compute duration. Constant models consume no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ComputeTime::Constant { delta } => delta,
            ComputeTime::LogNormal { mu, s } => LogNormal::new(mu, s).expect("validated").sample(rng),
            ComputeTime::Straggler {
                delta,
                slow_factor,
                straggle_prob,
            } => {
                if rng.gen::<f64>() < straggle_prob {
                    delta * slow_factor
                } else {
                    delta
                }
            }
        }
    }

    /// Mean compute time.
    pub fn mean(&self) -> f64 {
        match *self {
            ComputeTime::Constant { delta } => delta,
            ComputeTime::LogNormal { mu, s } => (mu + 0.5 * s * s).exp(),
            ComputeTime::Straggler {
                delta,
                slow_factor,
                straggle_prob,
            } => delta * (1.0 - straggle_prob + straggle_prob * slow_factor),
        }
    }
}

/// A worker (or, under client sampling, a client) and its speed model.
/// The worker id is its index in the fleet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerModel {
    pub compute: ComputeTime,
}

impl WorkerModel {
    pub fn constant(delta: f64) -> Self {
        WorkerModel {
            compute: ComputeTime::Constant { delta },
        }
    }
}

/// Fleet with `Δ = 1` for every worker except the last, which is `slow_factor`
/// times slower.
pub fn two_speed_fleet(fast: usize, slow_factor: f64) -> Vec<WorkerModel> {
    let mut fleet = vec![WorkerModel::constant(1.0); fast];
    fleet.push(WorkerModel::constant(slow_factor));
    fleet
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::MasterSeed;

    #[test]
    fn constant_is_constant() {
        let mut rng = MasterSeed(1).stream("d");
        let c = ComputeTime::Constant { delta: 2.5 };
        assert!((0..10).all(|_| c.sample(&mut rng) == 2.5));
    }

    #[test]
    fn straggler_takes_both_values() {
        let mut rng = MasterSeed(1).stream("d");
        let c = ComputeTime::Straggler {
            delta: 1.0,
            slow_factor: 6.0,
            straggle_prob: 0.3,
        };
        let draws: Vec<f64> = (0..200).map(|_| c.sample(&mut rng)).collect();
        assert!(draws.iter().all(|d| *d == 1.0 || *d == 6.0));
        assert!(draws.contains(&6.0) && draws.contains(&1.0));
    }

    #[test]
    fn lognormal_positive() {
        let mut rng = MasterSeed(1).stream("d");
        let c = ComputeTime::LogNormal { mu: 0.0, s: 1.0 };
        assert!((0..100).all(|_| c.sample(&mut rng) > 0.0));
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(ComputeTime::Constant { delta: 0.0 }.validate().is_err());
        assert!(ComputeTime::Straggler {
            delta: 1.0,
            slow_factor: 0.5,
            straggle_prob: 0.1
        }
        .validate()
        .is_err());
    }
}
