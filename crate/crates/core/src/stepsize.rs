//! Stepsize policies and the log-grid stepsize tuner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplier applied to the large-delay branch of the delay-adaptive rule so
/// the emitted stepsize is strictly below `min{η, 1/(4Lτ)}`.
pub const STRICT_SHAVE: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveMode {
    /// Shrink stale gradients to just under `min{η, 1/(4Lτ)}`.
    Scale,
    /// Zero out stale gradients.
    Drop,
}

/// Rule mapping `(t, τ_t)` to `η_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepsizePolicy {
    Constant {
        eta: f64,
    },
    DelayAdaptive {
        eta: f64,
        l: f64,
        tau_c: u64,
        mode: AdaptiveMode,
    },
    /// Fixed stepsize from the constant-stepsize convergence analysis.
    TheoreticalConstant {
        l: f64,
        tau_max: u64,
        tau_c: u64,
        sigma: f64,
        r0: f64,
        horizon: u64,
    },
}

impl StepsizePolicy {
    pub fn stepsize_at(&self, _t: u64, tau: u64) -> f64 {
        match *self {
            StepsizePolicy::Constant { eta } => eta,
            StepsizePolicy::DelayAdaptive { eta, l, tau_c, mode } => {
                if tau <= tau_c {
                    eta
                } else {
                    match mode {
                        AdaptiveMode::Drop => 0.0,
                        AdaptiveMode::Scale => eta.min(1.0 / (4.0 * l * tau as f64)) * STRICT_SHAVE,
                    }
                }
            }
            StepsizePolicy::TheoreticalConstant {
                l,
                tau_max,
                tau_c,
                sigma,
                r0,
                horizon,
            } => theoretical_eta_thm1(l, tau_max, tau_c, sigma, r0, horizon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config("stepsize", what.to_string()));
        match *self {
            StepsizePolicy::Constant { eta } if !(eta > 0.0 && eta.is_finite()) => bad("eta must be positive"),
            StepsizePolicy::DelayAdaptive { eta, l, .. } if !(eta > 0.0 && eta.is_finite() && l > 0.0) => {
                bad("eta and l must be positive")
            }
            StepsizePolicy::TheoreticalConstant {
                l, tau_max, tau_c, sigma, r0, ..
            } if !(l > 0.0 && tau_max > 0 && tau_c > 0 && sigma >= 0.0 && r0 >= 0.0) => {
                bad("theoretical stepsize needs l, tau_max, tau_c > 0 and sigma, r0 >= 0")
            }
            _ => Ok(()),
        }
    }

    /// Base stepsize `η` of the policy (the value emitted for fresh gradients).
    pub fn base_eta(&self) -> f64 {
        self.stepsize_at(0, 0)
    }
}

/// `min{ 1/(2L√(τ_max τ_C)), (r₀ / (2Lσ²(T+1)))^{1/2} }`; the second branch is
/// `+∞` when `σ = 0`.
pub fn theoretical_eta_thm1(l: f64, tau_max: u64, tau_c: u64, sigma: f64, r0: f64, horizon: u64) -> f64 {
    let delay_branch = 1.0 / (2.0 * l * ((tau_max as f64) * (tau_c as f64)).sqrt());
    let noise_branch = if sigma == 0.0 {
        f64::INFINITY
    } else {
        (r0 / (2.0 * l * sigma * sigma * (horizon as f64 + 1.0))).sqrt()
    };
    delay_branch.min(noise_branch)
}

/// Two upper bounds on the base stepsize of the delay-adaptive rule: the
/// stated `1/(4L)` and the tighter `1/(4Lτ_C)` the convergence bound needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveEtaCap {
    pub stated: f64,
    pub proof: f64,
    /// The tighter of the two, used by [`adaptive_eta_cap`] callers.
    pub chosen: f64,
    /// True when the two bounds differ (`τ_C > 1`).
    pub discrepancy: bool,
}

pub fn adaptive_eta_cap(l: f64, tau_c: u64) -> AdaptiveEtaCap {
    let stated = 1.0 / (4.0 * l);
    let proof = 1.0 / (4.0 * l * tau_c.max(1) as f64);
    AdaptiveEtaCap {
        stated,
        proof,
        chosen: stated.min(proof),
        discrepancy: proof < stated,
    }
}

/// Log-spaced grid from `10^lo_exp` to `10^hi_exp` with `per_decade` points per
/// decade (both ends included).
pub fn log_grid(lo_exp: i32, hi_exp: i32, per_decade: usize) -> Vec<f64> {
    assert!(hi_exp >= lo_exp && per_decade >= 1);
    let steps = (hi_exp - lo_exp) as usize * per_decade;
    (0..=steps)
        .map(|k| {
            let e = lo_exp as f64 + k as f64 / per_decade as f64;
            if k % per_decade == 0 {
                // exact powers of ten at decade boundaries
                format!("1e{}", e.round() as i64).parse().unwrap()
            } else {
                10f64.powf(e)
            }
        })
        .collect()
}

/// Default tuning grid: 8 decades from `1e-5` to `1e2`, 4 points per decade.
pub fn default_grid() -> Vec<f64> {
    log_grid(-5, 2, 4)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TuneCriterion {
    MinFinalError,
    MinTToEps,
}

/// What a single tuning run reports back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub final_error: f64,
    /// Iterations until the target accuracy was met, if it was.
    pub iterations_to_eps: Option<u64>,
}

impl TuneOutcome {
    pub fn diverged(&self) -> bool {
        !self.final_error.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub eta: f64,
    pub final_error: f64,
    pub iterations_to_eps: Option<u64>,
    pub diverged: bool,
    /// Iteration cap of the run, when the tuner imposed one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub criterion: TuneCriterion,
    pub grid: Vec<f64>,
    pub points: Vec<TunePoint>,
    pub best_eta: f64,
    pub best_index: usize,
    /// The chosen stepsize sits on the first or last grid point.
    pub on_edge: bool,
}

impl TuneReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Evaluates `run` at every grid point (in parallel) and picks the best one.
///
/// `MinTToEps` ranks by iterations-to-accuracy, falling back to final error
/// when no point reaches the target; ties go to the smaller final error, then
/// to the smaller stepsize.
pub fn grid_tune<F>(run: F, grid: &[f64], criterion: TuneCriterion) -> Result<(f64, TuneReport)>
where
    F: Fn(f64) -> TuneOutcome + Sync,
{
    if grid.is_empty() {
        return Err(Error::InvalidSpec("tuning grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::InvalidSpec("tuning grid must be strictly ascending".into()));
    }
    let outcomes: Vec<TuneOutcome> = grid.par_iter().map(|&eta| run(eta)).collect();
    let points: Vec<TunePoint> = grid
        .iter()
        .zip(&outcomes)
        .map(|(&eta, o)| TunePoint {
            eta,
            final_error: o.final_error,
            iterations_to_eps: o.iterations_to_eps,
            diverged: o.diverged(),
            cap: None,
        })
        .collect();

    if points.iter().all(|p| p.diverged) {
        return Err(Error::TuningFailed {
            diverged: grid.to_vec(),
        });
    }

    let key = |p: &TunePoint| -> (u64, f64) {
        let t = match criterion {
            TuneCriterion::MinTToEps => p.iterations_to_eps.unwrap_or(u64::MAX),
            TuneCriterion::MinFinalError => 0,
        };
        (t, p.final_error)
    };
    let best_index = points
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.diverged)
        .min_by(|(_, a), (_, b)| {
            let (ta, ea) = key(a);
            let (tb, eb) = key(b);
            ta.cmp(&tb).then(ea.total_cmp(&eb))
        })
        .map(|(i, _)| i)
        .expect("at least one finite point");

    let report = TuneReport {
        criterion,
        grid: grid.to_vec(),
        best_eta: grid[best_index],
        best_index,
        on_edge: best_index == 0 || best_index == grid.len() - 1,
        points,
    };
    Ok((report.best_eta, report))
}

/// `MinTToEps` tuner for expensive runs, by iterative deepening.
///
/// Every grid point is run with an iteration cap (`run(eta, cap)` must stop
/// there) starting at `first_cap` and growing by `growth` up to `max_cap`.
/// At the first cap where some point reaches the target, every other point
/// has been shown to need more iterations, so the minimum is exact. Points
/// that diverge are dropped from later rounds.
pub fn grid_tune_deepening<F>(run: F, grid: &[f64], first_cap: u64, growth: u64, max_cap: u64) -> Result<(f64, TuneReport)>
where
    F: Fn(f64, u64) -> TuneOutcome + Sync,
{
    if grid.is_empty() {
        return Err(Error::InvalidSpec("tuning grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::InvalidSpec("tuning grid must be strictly ascending".into()));
    }
    if first_cap == 0 || growth < 2 {
        return Err(Error::InvalidSpec("deepening needs first_cap >= 1 and growth >= 2".into()));
    }
    let mut points: Vec<TunePoint> = grid
        .iter()
        .map(|&eta| TunePoint {
            eta,
            final_error: f64::NAN,
            iterations_to_eps: None,
            diverged: false,
            cap: None,
        })
        .collect();
    let mut cap = first_cap.min(max_cap);
    loop {
        let live: Vec<usize> = (0..grid.len()).filter(|&i| !points[i].diverged).collect();
        let outcomes: Vec<TuneOutcome> = live.par_iter().map(|&i| run(grid[i], cap)).collect();
        for (&i, o) in live.iter().zip(&outcomes) {
            points[i] = TunePoint {
                eta: grid[i],
                final_error: o.final_error,
                iterations_to_eps: o.iterations_to_eps,
                diverged: o.diverged(),
                cap: Some(cap),
            };
        }
        let done = points.iter().any(|p| p.iterations_to_eps.is_some());
        if done || cap >= max_cap || points.iter().all(|p| p.diverged) {
            break;
        }
        cap = cap.saturating_mul(growth).min(max_cap);
    }
    let best_index = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| Some((i, p.iterations_to_eps?, p.final_error)))
        .min_by(|a, b| a.1.cmp(&b.1).then(a.2.total_cmp(&b.2)))
        .map(|(i, _, _)| i);
    let Some(best_index) = best_index else {
        return Err(Error::TuningFailed {
            diverged: points.iter().filter(|p| p.diverged).map(|p| p.eta).collect(),
        });
    };
    let report = TuneReport {
        criterion: TuneCriterion::MinTToEps,
        grid: grid.to_vec(),
        best_eta: grid[best_index],
        best_index,
        on_edge: best_index == 0 || best_index == grid.len() - 1,
        points,
    };
    Ok((report.best_eta, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_small_delay_keeps_eta() {
        let p = StepsizePolicy::DelayAdaptive {
            eta: 0.1,
            l: 1.0,
            tau_c: 8,
            mode: AdaptiveMode::Scale,
        };
        assert_eq!(p.stepsize_at(0, 3), 0.1);
        assert_eq!(p.stepsize_at(0, 8), 0.1);
    }

    #[test]
    fn adaptive_large_delay_is_strictly_below_cap() {
        let p = StepsizePolicy::DelayAdaptive {
            eta: 0.1,
            l: 1.0,
            tau_c: 8,
            mode: AdaptiveMode::Scale,
        };
        let e = p.stepsize_at(0, 100);
        assert!(e < 0.0025);
        assert!(e > 0.0025 * (1.0 - 1e-8));
    }

    #[test]
    fn drop_mode_zeroes_stale() {
        let p = StepsizePolicy::DelayAdaptive {
            eta: 0.1,
            l: 1.0,
            tau_c: 8,
            mode: AdaptiveMode::Drop,
        };
        assert_eq!(p.stepsize_at(0, 100), 0.0);
        assert_eq!(p.stepsize_at(0, 2), 0.1);
    }

    #[test]
    fn theoretical_stepsize_examples() {
        assert_eq!(theoretical_eta_thm1(1.0, 4, 1, 0.0, 1.0, 10), 0.25);
        assert_eq!(theoretical_eta_thm1(1.0, 1, 1, 1.0, 2.0, 0), 0.5);
        let l = 3.0;
        assert_eq!(theoretical_eta_thm1(l, 9, 4, 0.0, 0.0, 5), 1.0 / (2.0 * l * 6.0));
    }

    #[test]
    fn theoretical_policy_ignores_delay() {
        let p = StepsizePolicy::TheoreticalConstant {
            l: 1.0,
            tau_max: 4,
            tau_c: 1,
            sigma: 0.0,
            r0: 1.0,
            horizon: 100,
        };
        assert_eq!(p.stepsize_at(0, 0), 0.25);
        assert_eq!(p.stepsize_at(7, 1000), 0.25);
    }

    #[test]
    fn eta_cap_flags_discrepancy() {
        let c = adaptive_eta_cap(2.0, 4);
        assert_eq!(c.stated, 0.125);
        assert_eq!(c.proof, 1.0 / 32.0);
        assert_eq!(c.chosen, c.proof);
        assert!(c.discrepancy);
        assert!(!adaptive_eta_cap(2.0, 1).discrepancy);
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 29);
        assert_eq!(g[0], 1e-5);
        assert_eq!(*g.last().unwrap(), 1e2);
        assert_eq!(g[4], 1e-4);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_point_grid_is_edge() {
        let (eta, rep) = grid_tune(
            |_| TuneOutcome {
                final_error: 1.0,
                iterations_to_eps: None,
            },
            &[0.3],
            TuneCriterion::MinFinalError,
        )
        .unwrap();
        assert_eq!(eta, 0.3);
        assert!(rep.on_edge);
    }

    #[test]
    fn all_diverged_is_error() {
        let r = grid_tune(
            |_| TuneOutcome {
                final_error: f64::INFINITY,
                iterations_to_eps: None,
            },
            &[0.1, 1.0],
            TuneCriterion::MinFinalError,
        );
        assert!(matches!(r, Err(Error::TuningFailed { .. })));
    }

    #[test]
    fn unsorted_grid_rejected() {
        let r = grid_tune(
            |_| TuneOutcome {
                final_error: 1.0,
                iterations_to_eps: None,
            },
            &[1.0, 0.1],
            TuneCriterion::MinFinalError,
        );
        assert!(r.is_err());
    }

    #[test]
    fn t_to_eps_prefers_fewer_iterations() {
        let (eta, rep) = grid_tune(
            |eta| TuneOutcome {
                final_error: eta,
                iterations_to_eps: Some(if eta == 0.1 { 5 } else { 50 }),
            },
            &[0.01, 0.1, 1.0],
            TuneCriterion::MinTToEps,
        )
        .unwrap();
        assert_eq!(eta, 0.1);
        assert!(!rep.on_edge);
    }

    fn t_of(eta: f64, cap: u64) -> TuneOutcome {
        // T(eta) = 10 / eta below 1, divergence from 1 on
        if eta >= 1.0 {
            return TuneOutcome {
                final_error: f64::INFINITY,
                iterations_to_eps: None,
            };
        }
        let t = (10.0 / eta).round() as u64;
        TuneOutcome {
            final_error: if t <= cap { 0.0 } else { 1.0 },
            iterations_to_eps: (t <= cap).then_some(t),
        }
    }

    #[test]
    fn deepening_matches_full_evaluation() {
        let grid = log_grid(-4, 1, 2);
        let (eta, rep) = grid_tune_deepening(t_of, &grid, 10, 4, 1_000_000).unwrap();
        let (full, _) = grid_tune(|e| t_of(e, u64::MAX), &grid, TuneCriterion::MinTToEps).unwrap();
        assert_eq!(eta, full);
        assert_eq!(rep.points[rep.best_index].cap, Some(40));
        assert!(rep.points.last().unwrap().diverged);
    }

    #[test]
    fn deepening_respects_max_cap() {
        let r = grid_tune_deepening(t_of, &[1e-3, 1e-2], 10, 4, 100);
        assert!(matches!(r, Err(Error::TuningFailed { .. })));
        let r = grid_tune_deepening(t_of, &[1e-3, 1e-2], 10, 4, 1000).unwrap();
        assert_eq!(r.0, 1e-2);
    }
}
