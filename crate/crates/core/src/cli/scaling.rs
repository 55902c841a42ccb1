//! Iterations-to-accuracy as a function of the maximum delay.
//!
//! Two unit-speed workers, the second slowed down by a factor `x` (so
//! `τ_max = x`), noiseless gradients, the stepsize tuned separately at every
//! sweep point, and a least-squares line of `T` against `√τ_max`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{two_speed_fleet, SchedulerPolicy, StopRule};
use crate::error::{Error, Result};
use crate::stepsize::{TuneCriterion, TuneReport};

use super::config::{StepsizeSpec, TuneRequest};
use super::experiment::Prepared;
use super::svg::{LineChart, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub slow_factor: u32,
    /// Nominal maximum delay, equal to the slow factor.
    pub tau_max: u64,
    /// Largest delay seen in the tuned run, in-flight jobs included.
    pub tau_max_observed: u64,
    pub eta: f64,
    /// Iterations until the last-`k` error estimate reached `eps`.
    pub iterations: Option<u64>,
    /// Simulated wall time of the tuned run.
    pub sim_time: f64,
    pub on_edge: bool,
    pub tuning: TuneReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub eps: f64,
    pub k: usize,
    pub max_iter: u64,
    pub points: Vec<ScalingPoint>,
    /// Fit of `T` against `√τ_max` over the converged points.
    pub fit: Option<LinearFit>,
    /// Same fit restricted to points whose slow worker delivered at least one
    /// gradient before the target was met (`T ≥ x`), i.e. where `τ_max = x`
    /// actually occurred.
    pub fit_realized: Option<LinearFit>,
    pub warnings: Vec<String>,
}

/// Ordinary least squares `y ≈ slope·x + intercept`. Needs at least three
/// points; `R²` is clamped to `[0, 1]` (and is 1 when `y` is constant).
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidSpec(format!("a line fit needs at least 3 points, got {}", xs.len().min(ys.len()))));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidSpec("a line fit needs at least two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    })
}

/// Runs the sweep. The config's own fleet is ignored.
pub fn run_scaling(prepared: &Prepared, slow_factors: &[u32]) -> Result<ScalingReport> {
    let cfg = &prepared.config;
    if cfg.noise.sigma != 0.0 {
        return Err(Error::config("noise.sigma", "the scaling experiment requires sigma = 0"));
    }
    let StopRule::LastK { eps, k, max_iter } = cfg.stop else {
        return Err(Error::config("stop", "the scaling experiment needs a last_k stop rule"));
    };
    if slow_factors.len() < 2 {
        return Err(Error::config("sweep.slow_factors", "need at least two slow factors"));
    }
    let mut factors = slow_factors.to_vec();
    factors.sort_unstable();
    factors.dedup();

    let template = match cfg.stepsize {
        Some(s) => s.with_eta(1.0)?,
        None => StepsizeSpec::Constant { eta: 1.0 },
    };
    let policy = SchedulerPolicy::MaxConcurrency { initial: None };
    let mut base = prepared.clone();
    base.config.policy = policy.clone();
    base.config.tune = Some(TuneRequest {
        grid: cfg.tune.unwrap_or_default().grid,
        criterion: Some(TuneCriterion::MinTToEps),
    });

    let points = factors
        .par_iter()
        .map(|&x| -> Result<ScalingPoint> {
            let mut p = base.clone();
            p.workers = two_speed_fleet(1, f64::from(x));
            let (spec, tuning) = p.tune(&policy, &template)?;
            let trace = p.run(&policy, p.resolve(&spec)?, p.config.stop, p.run_seed(0))?;
            let best = &tuning.points[tuning.best_index];
            Ok(ScalingPoint {
                slow_factor: x,
                tau_max: u64::from(x),
                tau_max_observed: trace.ledger.tau_max(),
                eta: tuning.best_eta,
                iterations: best.iterations_to_eps,
                sim_time: trace.sim_time,
                on_edge: tuning.on_edge,
                tuning,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    for p in &points {
        if p.on_edge {
            warnings.push(format!("slow factor {}: tuned stepsize {:e} is on the edge of the grid", p.slow_factor, p.eta));
        }
        if let Some(t) = p.iterations.filter(|t| *t < p.tau_max) {
            warnings.push(format!(
                "slow factor {}: accuracy reached after {t} iterations, before the slow worker's first gradient arrived",
                p.slow_factor
            ));
        }
        if p.iterations.is_none() {
            warnings.push(format!("slow factor {}: accuracy {eps:e} not reached within {max_iter} iterations", p.slow_factor));
        }
    }
    let fit_over = |realized_only: bool| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter_map(|p| {
                let t = p.iterations.filter(|t| !realized_only || *t >= p.tau_max)?;
                Some(((p.tau_max as f64).sqrt(), t as f64))
            })
            .unzip();
        fit_line(&xs, &ys)
    };
    let fit = match fit_over(false) {
        Ok(f) => Some(f),
        Err(e) => {
            warnings.push(format!("no fit: {e}"));
            None
        }
    };
    let fit_realized = fit_over(true).ok();
    Ok(ScalingReport {
        eps,
        k,
        max_iter,
        points,
        fit,
        fit_realized,
        warnings,
    })
}

impl ScalingReport {
    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.iterations.is_some())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per sweep point.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["slow_factor", "tau_max", "sqrt_tau_max", "eta", "iterations", "sim_time", "on_edge"])?;
        for p in &self.points {
            w.write_record([
                p.slow_factor.to_string(),
                p.tau_max.to_string(),
                (p.tau_max as f64).sqrt().to_string(),
                p.eta.to_string(),
                p.iterations.map(|t| t.to_string()).unwrap_or_default(),
                p.sim_time.to_string(),
                p.on_edge.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn chart(&self, title: &str) -> LineChart {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter_map(|p| Some(((p.tau_max as f64).sqrt(), p.iterations? as f64)))
            .collect();
        let mut series = vec![Series::scatter("T", pts.clone())];
        if let Some(f) = self.fit {
            let line = pts.iter().map(|&(x, _)| (x, f.slope * x + f.intercept)).collect();
            series.push(Series::line(format!("fit R²={:.3}", f.r_squared), line));
        }
        LineChart {
            title: title.into(),
            x_label: "sqrt(tau_max)".into(),
            y_label: "iterations to eps".into(),
            series,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = fit_line(&[1.0, 2.0, 3.0, 4.0], &[3.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_ignores_point_order() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let ys = [10.0, 25.0, 38.0, 90.0, 150.0];
        let a = fit_line(&xs, &ys).unwrap();
        let b = fit_line(&[16.0, 1.0, 8.0, 2.0, 4.0], &[150.0, 10.0, 90.0, 25.0, 38.0]).unwrap();
        assert!((a.slope - b.slope).abs() < 1e-12);
        assert!((a.r_squared - b.r_squared).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&a.r_squared));
    }

    #[test]
    fn fit_needs_three_points() {
        assert!(fit_line(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_line(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
