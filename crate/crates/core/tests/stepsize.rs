use proptest::prelude::*;

use asyncsgd::cli::verify::random_fleet;
use asyncsgd::engine::{RunStatus, SchedulerPolicy, Simulation, StopRule, WorkerModel};
use asyncsgd::objectives::make_quadratic;
use asyncsgd::stepsize::{
    adaptive_eta_cap, default_grid, grid_tune, log_grid, theoretical_eta_thm1, AdaptiveMode, StepsizePolicy, TuneCriterion,
    TuneOutcome,
};
use asyncsgd::{Error, MasterSeed};

fn adaptive(mode: AdaptiveMode) -> StepsizePolicy {
    StepsizePolicy::DelayAdaptive { eta: 0.1, l: 1.0, tau_c: 8, mode }
}

#[test]
fn delay_adaptive_examples() {
    assert_eq!(adaptive(AdaptiveMode::Scale).stepsize_at(0, 3), 0.1);
    assert_eq!(adaptive(AdaptiveMode::Scale).stepsize_at(0, 8), 0.1);
    let big = adaptive(AdaptiveMode::Scale).stepsize_at(0, 100);
    assert!(big < 0.0025 && big > 0.0025 * (1.0 - 1e-8), "{big}");
    assert_eq!(adaptive(AdaptiveMode::Drop).stepsize_at(0, 100), 0.0);
    assert_eq!(adaptive(AdaptiveMode::Drop).stepsize_at(0, 8), 0.1);
}

#[test]
fn theoretical_stepsize_examples() {
    assert_eq!(theoretical_eta_thm1(1.0, 4, 1, 0.0, 0.0, 10), 0.25);
    assert_eq!(theoretical_eta_thm1(1.0, 1, 1, 1.0, 2.0, 0), 0.5);
    assert_eq!(theoretical_eta_thm1(4.0, 3, 3, 0.0, 1.0, 100), 1.0 / 24.0);
    // Noise branch takes over for long horizons.
    let eta = theoretical_eta_thm1(1.0, 1, 1, 1.0, 2.0, 99);
    assert!((eta - 0.1).abs() < 1e-15);
}

#[test]
fn stated_and_proof_caps() {
    let c = adaptive_eta_cap(2.0, 4);
    assert_eq!(c.stated, 0.125);
    assert_eq!(c.proof, 1.0 / 32.0);
    assert_eq!(c.chosen, c.proof);
    assert!(c.discrepancy);
    assert!(!adaptive_eta_cap(2.0, 1).discrepancy);
}

#[test]
fn default_grid_spans_eight_decades() {
    let g = default_grid();
    assert_eq!(g.len(), 29);
    assert_eq!(g[0], 1e-5);
    assert_eq!(g[28], 1e2);
    assert_eq!(g[4], 1e-4);
    assert!(g.windows(2).all(|w| (w[1] / w[0] - 10f64.powf(0.25)).abs() < 1e-12));
    assert_eq!(log_grid(0, 1, 1), vec![1.0, 10.0]);
}

#[test]
fn single_point_grid_is_on_the_edge() {
    let (eta, report) = grid_tune(
        |_| TuneOutcome { final_error: 1.0, iterations_to_eps: None },
        &[0.3],
        TuneCriterion::MinFinalError,
    )
    .unwrap();
    assert_eq!(eta, 0.3);
    assert!(report.on_edge);
}

#[test]
fn all_diverged_is_an_error() {
    let r = grid_tune(
        |_| TuneOutcome { final_error: f64::INFINITY, iterations_to_eps: None },
        &[0.1, 1.0],
        TuneCriterion::MinTToEps,
    );
    match r {
        Err(Error::TuningFailed { diverged }) => assert_eq!(diverged, vec![0.1, 1.0]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn serial_quadratic_tuning_picks_fastest_stable_stepsize() {
    let q = make_quadratic(6, 1.0, 2.0, MasterSeed(2)).unwrap();
    let run = |eta: f64| {
        let tr = Simulation::new(
            &q,
            vec![WorkerModel::constant(1.0)],
            SchedulerPolicy::MaxConcurrency { initial: None },
            StepsizePolicy::Constant { eta },
            StopRule::GradNorm { eps: 1e-8, max_iter: 20_000 },
        )
        .run()
        .unwrap();
        TuneOutcome {
            final_error: if tr.status == RunStatus::Diverged { f64::INFINITY } else { tr.final_grad_norm },
            iterations_to_eps: (tr.status == RunStatus::Converged).then(|| tr.iterations()),
        }
    };
    let grid = default_grid();
    let (eta, report) = grid_tune(run, &grid, TuneCriterion::MinTToEps).unwrap();
    // Brute force over the same grid.
    let best = grid
        .iter()
        .filter_map(|e| run(*e).iterations_to_eps.map(|t| (t, *e)))
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .unwrap();
    assert_eq!(eta, best.1);
    // For serial gradient descent with L = 4 the fastest grid point is the
    // largest one below 2/L.
    let stable_max = grid.iter().copied().filter(|e| *e < 0.5).fold(0.0, f64::max);
    assert_eq!(eta, stable_max);
    assert!(!report.on_edge);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scale_mode_respects_the_delay_bound(eta in 1e-4..10.0f64, l in 0.1..10.0f64, tau_c in 1u64..50, tau in 0u64..10_000) {
        let p = StepsizePolicy::DelayAdaptive { eta, l, tau_c, mode: AdaptiveMode::Scale };
        let s = p.stepsize_at(0, tau);
        prop_assert!(s > 0.0);
        if tau <= tau_c {
            prop_assert_eq!(s, eta);
        } else {
            prop_assert!(s < 1.0 / (4.0 * l * tau as f64));
            prop_assert!(s <= eta);
        }
    }

    #[test]
    fn stepsizes_do_not_grow_with_delay(eta in 1e-4..10.0f64, tau_c in 1u64..50, a in 0u64..5000, b in 0u64..5000, drop in any::<bool>()) {
        let mode = if drop { AdaptiveMode::Drop } else { AdaptiveMode::Scale };
        let p = StepsizePolicy::DelayAdaptive { eta, l: 1.0, tau_c, mode };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(p.stepsize_at(0, hi) <= p.stepsize_at(0, lo));
        let s = p.stepsize_at(0, hi);
        let allowed = if drop { s == 0.0 || s == eta } else { s > 0.0 };
        prop_assert!(allowed);
    }

    #[test]
    fn large_delays_are_a_minority(seed in any::<u64>(), n in 1usize..12, t in 50u64..3000) {
        let q = make_quadratic(2, 1.0, 2.0, MasterSeed(seed)).unwrap();
        let mut rng = MasterSeed(seed).stream("fleet");
        let fleet = random_fleet(n, &mut rng);
        let tr = Simulation::new(&q, fleet, SchedulerPolicy::MaxConcurrency { initial: None }, StepsizePolicy::Constant { eta: 0.01 }, StopRule::Iterations { t })
            .with_seed(MasterSeed(seed))
            .run()
            .unwrap();
        let tau_c = n as u64;
        if tr.ledger.tau_avg()? <= tau_c as f64 {
            let big = tr.ledger.applied.iter().filter(|d| **d > tau_c).count();
            prop_assert!(big as f64 / t as f64 <= 0.5);
        }
    }
}
