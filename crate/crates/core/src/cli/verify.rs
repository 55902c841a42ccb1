//! Self-check suite behind the `verify` command.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    ClientCapacity, ComputeTime, FaultInjection, SchedulerPolicy, Simulation, StopRule, WorkerModel,
};
use crate::error::Result;
use crate::linalg::{axpy, ParamVector};
use crate::objectives::{
    make_logistic, make_quadratic, stochastic_gradient, HeterogeneousFamily, NoiseModel, Objective,
};
use crate::rng::MasterSeed;
use crate::speedup::{self, OracleMethod, SpeedupInput};
use crate::stepsize::StepsizePolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Suite sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub fuzz_configs: usize,
    pub fuzz_max_iter: u64,
    pub seed: MasterSeed,
    #[doc(hidden)]
    pub faults: FaultInjection,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            fuzz_configs: 200,
            fuzz_max_iter: 2000,
            seed: MasterSeed(0),
            faults: FaultInjection::default(),
        }
    }
}

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let checks: Vec<CheckResult> = vec![
        outcome("conservation_fuzz", conservation_fuzz(opts)),
        outcome("determinism", determinism(opts)),
        outcome("minibatch_oracle", minibatch_oracle(opts)),
        outcome("wall_time_example", wall_time_example()),
        outcome("wall_time_exhaustive", wall_time_exhaustive(opts.seed)),
        outcome("wall_time_monte_carlo", wall_time_monte_carlo(opts.seed)),
        outcome("gradient_finite_differences", finite_differences(opts.seed)),
        outcome("noise_calibration", noise_calibration(opts.seed)),
    ];
    let passed = checks.iter().all(|c| c.pass);
    VerifyReport { checks, passed }
}

type Check = Result<std::result::Result<String, String>>;

fn outcome(name: &str, r: Check) -> CheckResult {
    let (pass, detail) = match r {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name: name.into(),
        pass,
        detail,
    }
}

/// A random scheduler and fleet for `n` units.
pub fn random_policy<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SchedulerPolicy {
    match rng.gen_range(0..5) {
        0 => SchedulerPolicy::MaxConcurrency { initial: None },
        1 => SchedulerPolicy::Minibatch,
        2 => SchedulerPolicy::RandomIdle {
            p: rng.gen_range(0.05..1.0),
        },
        3 => SchedulerPolicy::ClientSampling {
            tau_c: rng.gen_range(1..=2 * n),
            capacity: if rng.gen() { ClientCapacity::Fifo } else { ClientCapacity::Unbounded },
        },
        _ => SchedulerPolicy::SampledMinibatch {
            batch: rng.gen_range(1..=2 * n),
            capacity: if rng.gen() { ClientCapacity::Fifo } else { ClientCapacity::Unbounded },
        },
    }
}

pub fn random_fleet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<WorkerModel> {
    (0..n)
        .map(|_| WorkerModel {
            compute: match rng.gen_range(0..3) {
                0 => ComputeTime::Constant {
                    delta: f64::from(rng.gen_range(1..5u8)),
                },
                1 => ComputeTime::LogNormal {
                    mu: 0.0,
                    s: rng.gen_range(0.0..1.5),
                },
                _ => ComputeTime::Straggler {
                    delta: 1.0,
                    slow_factor: 10.0,
                    straggle_prob: 0.1,
                },
            },
        })
        .collect()
}

fn conservation_fuzz(opts: &VerifyOptions) -> Check {
    let obj = make_quadratic(2, 1.0, 2.0, opts.seed)?;
    let mut rng = opts.seed.stream("verify/conservation");
    for i in 0..opts.fuzz_configs {
        let n = rng.gen_range(1..=16);
        let policy = random_policy(n, &mut rng);
        let workers = random_fleet(n, &mut rng);
        let t = rng.gen_range(1..=opts.fuzz_max_iter);
        let mut sim = Simulation::new(&obj, workers, policy.clone(), StepsizePolicy::Constant { eta: 0.01 }, StopRule::Iterations { t })
            .with_seed(opts.seed.child(i as u64));
        sim.faults = opts.faults;
        let trace = sim.run()?;
        let r = trace.ledger.conservation()?;
        if !r.pass {
            return Ok(Err(format!(
                "config {i} (n={n}, T={t}, policy={policy:?}): lhs={} rhs={}",
                r.lhs, r.rhs
            )));
        }
    }
    Ok(Ok(format!("{} configurations, exact equality", opts.fuzz_configs)))
}

fn determinism(opts: &VerifyOptions) -> Check {
    let obj = make_quadratic(3, 1.0, 2.0, opts.seed)?;
    let mut sim = Simulation::new(
        &obj,
        vec![WorkerModel::constant(1.0); 2],
        SchedulerPolicy::MaxConcurrency { initial: None },
        StepsizePolicy::Constant { eta: 0.05 },
        StopRule::Iterations { t: 8 },
    );
    sim.faults = opts.faults;
    let trace = sim.run()?;
    let workers: Vec<usize> = trace.records.iter().map(|r| r.worker).collect();
    let taus: Vec<u64> = trace.records.iter().map(|r| r.tau).collect();
    let golden_workers = [0, 1, 0, 1, 0, 1, 0, 1];
    let golden_taus = [0, 1, 1, 1, 1, 1, 1, 1];
    if workers != golden_workers || taus != golden_taus {
        return Ok(Err(format!(
            "equal-speed pair: workers {workers:?} delays {taus:?}, expected {golden_workers:?} {golden_taus:?}"
        )));
    }

    let fleet = vec![
        WorkerModel {
            compute: ComputeTime::LogNormal { mu: 0.0, s: 1.0 },
        };
        6
    ];
    let replay = || {
        let mut sim = Simulation::new(
            &obj,
            fleet.clone(),
            SchedulerPolicy::MaxConcurrency { initial: None },
            StepsizePolicy::Constant { eta: 0.02 },
            StopRule::Iterations { t: 500 },
        )
        .with_noise(NoiseModel { sigma: 1.0 })
        .with_seed(opts.seed);
        sim.faults = opts.faults;
        sim.run()
    };
    let (a, b) = (replay()?, replay()?);
    if a.to_csv_string()? != b.to_csv_string()? {
        return Ok(Err("replay with the same seed produced a different trace".into()));
    }
    Ok(Ok("golden schedule and same-seed replay match".into()))
}

/// Mini-batch SGD written out directly: every batch evaluates one stochastic
/// gradient per worker at the batch's starting point, then takes one step
/// with their sum. Worker `i` draws noise from its own engine stream.
pub fn reference_minibatch(
    obj: &dyn Objective,
    n: usize,
    batches: usize,
    eta: f64,
    noise: &NoiseModel,
    x0: &ParamVector,
    seed: MasterSeed,
) -> Result<ParamVector> {
    let mut streams: Vec<_> = (0..n).map(|i| seed.stream(&crate::rng::names::noise(i))).collect();
    let mut x = x0.clone();
    for _ in 0..batches {
        let mut sum = ParamVector::zeros(x.len());
        for (i, s) in streams.iter_mut().enumerate() {
            let g = stochastic_gradient(obj, i % obj.num_clients(), &x, noise, s)?;
            axpy(1.0, &g, &mut sum);
        }
        axpy(-eta, &sum, &mut x);
    }
    Ok(x)
}

/// Largest per-coordinate relative difference.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

fn minibatch_oracle(opts: &VerifyOptions) -> Check {
    let noise = NoiseModel { sigma: 0.5 };
    let mut worst: f64 = 0.0;
    for n in [2usize, 4, 8] {
        for k in 0..5u64 {
            let seed = opts.seed.child(100 + 10 * n as u64 + k);
            let obj = make_quadratic(5, 1.0, 2.0, seed)?;
            let batches = 25;
            let mut sim = Simulation::new(
                &obj,
                vec![WorkerModel::constant(1.0); n],
                SchedulerPolicy::Minibatch,
                StepsizePolicy::Constant { eta: 0.02 },
                StopRule::Iterations { t: (batches * n) as u64 },
            )
            .with_noise(noise)
            .with_seed(seed);
            sim.faults = opts.faults;
            let trace = sim.run()?;
            let direct = reference_minibatch(&obj, n, batches, 0.02, &noise, &ParamVector::zeros(5), seed)?;
            worst = worst.max(max_rel_diff(&trace.final_point, &direct));
        }
    }
    if worst <= 1e-12 {
        Ok(Ok(format!("15 quadratics, max relative difference {worst:.2e}")))
    } else {
        Ok(Err(format!("max relative difference {worst:.2e} > 1e-12")))
    }
}

fn wall_time_example() -> Check {
    let input = SpeedupInput::new(speedup::parse_fleet("900x10,100x60")?, 10)?;
    let a = speedup::async_time(&input);
    let m = speedup::minibatch_time(&input);
    if a == 15.0 && (42.4..=42.7).contains(&m) {
        Ok(Ok(format!("async {a}, mini-batch {m:.4}")))
    } else {
        Ok(Err(format!("async {a} (want 15), mini-batch {m} (want 42.4..42.7)")))
    }
}

fn wall_time_exhaustive(seed: MasterSeed) -> Check {
    let mut rng = seed.stream("verify/wall-time");
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(1..=12);
        let c = rng.gen_range(1..=5);
        let deltas = (0..n).map(|_| rng.gen_range(0.1..100.0)).collect();
        let input = SpeedupInput::new(deltas, c)?;
        let closed = speedup::minibatch_time(&input);
        let oracle = speedup::minibatch_time_oracle(&input, OracleMethod::Exhaustive, seed);
        if oracle.fell_back {
            continue;
        }
        worst = worst.max((closed - oracle.estimate).abs() / oracle.estimate);
    }
    if worst <= 1e-12 {
        Ok(Ok(format!("max relative difference {worst:.2e}")))
    } else {
        Ok(Err(format!("max relative difference {worst:.2e} > 1e-12")))
    }
}

fn wall_time_monte_carlo(seed: MasterSeed) -> Check {
    let mut rng = seed.stream("verify/wall-time-mc");
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let n = rng.gen_range(10..=200);
        let c = rng.gen_range(1..=20);
        let deltas = (0..n).map(|_| rng.gen_range(1.0..60.0)).collect();
        let input = SpeedupInput::new(deltas, c)?;
        let closed = speedup::minibatch_time(&input);
        let est = speedup::minibatch_time_oracle(&input, OracleMethod::MonteCarlo { samples: 100_000 }, seed.child(i));
        worst = worst.max((closed - est.estimate).abs() / est.stderr.max(f64::MIN_POSITIVE));
    }
    if worst <= 4.0 {
        Ok(Ok(format!("10 inputs, worst deviation {worst:.2} standard errors")))
    } else {
        Ok(Err(format!("deviation {worst:.2} standard errors exceeds 4")))
    }
}

/// Largest relative error of the analytic gradient against central
/// differences with step `h`, over `points` random points.
pub fn fd_error(obj: &dyn Objective, points: usize, h: f64, seed: MasterSeed) -> f64 {
    let mut rng = seed.stream("verify/fd");
    let d = obj.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g = obj.gradient(&x);
        let mut fd = vec![0.0; d];
        let mut xp = x.clone();
        for j in 0..d {
            xp[j] = x[j] + h;
            let up = obj.value(&xp);
            xp[j] = x[j] - h;
            let down = obj.value(&xp);
            xp[j] = x[j];
            fd[j] = (up - down) / (2.0 * h);
        }
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(diff / g.norm().max(1e-12));
    }
    worst
}

fn finite_differences(seed: MasterSeed) -> Check {
    let quad = make_quadratic(10, 1.0, 2.0, seed)?;
    let logi = make_logistic(100, 20, seed)?;
    let het = HeterogeneousFamily::generate(quad.clone(), 4, 1.0, &mut seed.stream("verify/het"))?;
    let errs = [
        ("quadratic", fd_error(&quad, 10, 1e-5, seed)),
        ("logistic", fd_error(&logi, 10, 1e-5, seed)),
        ("heterogeneous", fd_error(&het, 10, 1e-5, seed)),
    ];
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    if errs.iter().all(|(_, e)| *e <= 1e-6) {
        Ok(Ok(detail))
    } else {
        Ok(Err(format!("{detail} (limit 1e-6)")))
    }
}

fn noise_calibration(seed: MasterSeed) -> Check {
    let noise = NoiseModel { sigma: 2.0 };
    let mut rng = seed.stream("verify/noise");
    let samples = 100_000;
    let mut acc = 0.0;
    let mut g = vec![0.0; 10];
    for _ in 0..samples {
        g.fill(0.0);
        noise.perturb(&mut g, &mut rng);
        acc += g.iter().map(|v| v * v).sum::<f64>();
    }
    let ratio = acc / samples as f64 / (noise.sigma * noise.sigma);
    if (0.99..=1.01).contains(&ratio) {
        Ok(Ok(format!("E|xi|^2 / sigma^2 = {ratio:.4}")))
    } else {
        Ok(Err(format!("E|xi|^2 / sigma^2 = {ratio:.4} outside [0.99, 1.01]")))
    }
}
