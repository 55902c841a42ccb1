//! Command-line front end.
//!
//! Every command reads an [`ExperimentConfig`](config::ExperimentConfig) (from
//! a file or a built-in preset), runs it, and writes its outputs under
//! `--out`. Exit codes: 0 success, 1 usage or configuration error, 2 a run
//! did not reach its accuracy target, 3 a verification check failed.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod scaling;
pub mod simulate;
pub mod svg;
pub mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::engine::FaultInjection;
use crate::error::{Error, Result};
use crate::rng::MasterSeed;
use crate::speedup::{parse_fleet, write_alpha_csv, OracleMethod, SpeedupInput, SpeedupReport};
use crate::stepsize::AdaptiveMode;

use self::compare::{run_compare, PolicyVariant};
use self::config::{preset, ExperimentConfig};
use self::experiment::Prepared;
use self::scaling::run_scaling;
use self::simulate::{run_simulate, trace_chart};
use self::svg::{LineChart, Series};
use self::verify::{run_verify, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "asyncsgd", version, about = "Simulate asynchronous SGD with delayed gradients")]
pub struct Cli {
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset: quadratic, logistic, serial, two-worker or straggler.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration; writes the trace CSV, metrics JSON and a chart.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Print the resolved config instead of running it.
        #[arg(long)]
        print_config: bool,
    },
    /// Iterations-to-accuracy against the slow worker's delay, with a √τ_max fit.
    Scaling {
        #[command(flatten)]
        source: Source,
        /// Comma-separated slow factors; overrides the config's sweep.
        #[arg(long, value_delimiter = ',')]
        slow_factors: Option<Vec<u32>>,
    },
    /// Constant-stepsize async, delay-adaptive async and mini-batch SGD on one fleet.
    Compare {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_value = "async,adaptive,minibatch")]
        policies: Vec<String>,
        #[arg(long, value_enum, default_value_t = ModeArg::Scale)]
        adaptive_mode: ModeArg,
    },
    /// Expected wall time of asynchronous vs. mini-batch SGD for a fleet.
    Speedup {
        /// Fleet as `count x delta` terms, e.g. `900x10,100x60`.
        #[arg(long, conflicts_with = "deltas_file", required_unless_present = "deltas_file")]
        fleet: Option<String>,
        /// File with one compute time per line.
        #[arg(long)]
        deltas_file: Option<PathBuf>,
        /// Gradients per round, drawn uniformly from the fleet.
        #[arg(long)]
        tau_c: u32,
        /// Monte-Carlo samples for the oracle; exhaustive enumeration when absent.
        #[arg(long)]
        samples: Option<u64>,
    },
    /// Grid-tune the stepsize of a configuration.
    Tune {
        #[command(flatten)]
        source: Source,
    },
    /// Run the self-check suite.
    Verify {
        /// Fuzzed configurations for the delay identity.
        #[arg(long, default_value_t = 200)]
        fuzz: usize,
        #[arg(long, hide = true, value_enum)]
        inject: Option<FaultArg>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Scale,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    TieBreak,
    DelayOffByOne,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool already initialised: {e}");
        }
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn load(source: &Source, seed: Option<u64>) -> Result<(ExperimentConfig, PathBuf)> {
    let (mut cfg, base) = match (&source.config, &source.preset) {
        (Some(path), _) => {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (ExperimentConfig::load(path)?, base)
        }
        (None, Some(name)) => (preset(name)?, PathBuf::from(".")),
        (None, None) => return Err(Error::config("config", "pass --config or --preset")),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((cfg, base))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    std::fs::write(&path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn execute(cli: &Cli) -> Result<i32> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate { source, print_config } => {
            let (cfg, base) = load(source, cli.seed)?;
            if *print_config {
                print!("{}", cfg.to_json()?);
                return Ok(EXIT_OK);
            }
            let names = cfg.outputs.clone();
            let prepared = Prepared::new(cfg, &base)?;
            let r = run_simulate(&prepared)?;
            let mut csv = Vec::new();
            r.trace.write_csv(&mut csv)?;
            write(out, &names.trace, &String::from_utf8(csv).expect("csv output is utf-8"))?;
            write(out, &names.metrics, &r.output.to_json()?)?;
            write(out, &names.report, &trace_chart(&r.trace, "gradient norm").render())?;
            let s = &r.output.summary;
            println!(
                "status {:?}, T = {}, final |grad f| = {:.3e}, tau_max = {}, sim time = {}",
                s.status, s.iterations, s.final_grad_norm, s.tau_max, s.sim_time
            );
            Ok(if r.output.converged() { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
        Command::Scaling { source, slow_factors } => {
            let (cfg, base) = load(source, cli.seed)?;
            let factors = match (slow_factors, &cfg.sweep) {
                (Some(f), _) => f.clone(),
                (None, Some(s)) => s.slow_factors.clone(),
                (None, None) => return Err(Error::config("sweep", "no slow factors given")),
            };
            let prepared = Prepared::new(cfg, &base)?;
            let report = run_scaling(&prepared, &factors)?;
            write(out, "scaling.json", &report.to_json()?)?;
            write(out, "scaling.csv", &report.to_csv()?)?;
            write(out, "scaling.svg", &report.chart("iterations vs sqrt(tau_max)").render())?;
            for p in &report.points {
                println!("x = {:>4}  eta = {:.3e}  T = {:?}", p.slow_factor, p.eta, p.iterations);
            }
            if let Some(f) = report.fit {
                println!("fit T = {:.3} sqrt(tau_max) + {:.3}, R^2 = {:.4}", f.slope, f.intercept, f.r_squared);
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(if report.all_converged() { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
        Command::Compare {
            source,
            policies,
            adaptive_mode,
        } => {
            let (cfg, base) = load(source, cli.seed)?;
            let variants = policies.iter().map(|p| p.parse()).collect::<Result<Vec<PolicyVariant>>>()?;
            let mode = match adaptive_mode {
                ModeArg::Scale => AdaptiveMode::Scale,
                ModeArg::Drop => AdaptiveMode::Drop,
            };
            let prepared = Prepared::new(cfg, &base)?;
            let run = run_compare(&prepared, &variants, mode)?;
            write(out, "compare.json", &run.report.to_json()?)?;
            write(out, "compare_curves.csv", &run.curves_csv()?)?;
            write(out, "compare.svg", &run.chart().render())?;
            for r in &run.report.results {
                println!(
                    "{:<10} status {:?}, T = {}, gradients = {}, sim time = {}",
                    r.policy.name(),
                    r.status,
                    r.iterations,
                    r.gradients_computed,
                    r.sim_time
                );
            }
            Ok(if run.report.all_converged() { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
        Command::Speedup {
            fleet,
            deltas_file,
            tau_c,
            samples,
        } => {
            let deltas = match (fleet, deltas_file) {
                (Some(f), _) => parse_fleet(f)?,
                (None, Some(path)) => read_deltas(path)?,
                (None, None) => return Err(Error::config("fleet", "pass --fleet or --deltas-file")),
            };
            let input = SpeedupInput::new(deltas, *tau_c)?;
            let method = samples.map_or(OracleMethod::Exhaustive, |s| OracleMethod::MonteCarlo { samples: s });
            let report = SpeedupReport::compute(&input, method, MasterSeed(cli.seed.unwrap_or(0)));
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            write(out, "speedup.json", &json)?;
            let mut csv = Vec::new();
            write_alpha_csv(&input, &mut csv)?;
            write(out, "alphas.csv", &String::from_utf8(csv).expect("csv output is utf-8"))?;
            println!(
                "async {:.6}  mini-batch {:.6}  ratio {:.4}  oracle {:.6} ± {:.2e}",
                report.async_time, report.minibatch_time, report.ratio, report.oracle.estimate, report.oracle.stderr
            );
            Ok(EXIT_OK)
        }
        Command::Tune { source } => {
            let (mut cfg, base) = load(source, cli.seed)?;
            cfg.tune.get_or_insert_with(Default::default);
            let prepared = Prepared::new(cfg, &base)?;
            let template = prepared.config.stepsize_template();
            let (_, report) = match prepared.tune(&prepared.config.policy, &template) {
                Ok(r) => r,
                Err(Error::TuningFailed { diverged }) => {
                    eprintln!("no stepsize on the grid reached the target (diverged: {diverged:?})");
                    return Ok(EXIT_NOT_CONVERGED);
                }
                Err(e) => return Err(e),
            };
            write(out, "tune.json", &report.to_json()?)?;
            write(out, "tune.svg", &tune_chart(&report).render())?;
            println!("best eta {:e} (index {} of {})", report.best_eta, report.best_index, report.grid.len());
            if report.on_edge {
                eprintln!("warning: best stepsize is on the edge of the grid");
            }
            Ok(EXIT_OK)
        }
        Command::Verify { fuzz, inject } => {
            let mut faults = FaultInjection::default();
            match inject {
                Some(FaultArg::TieBreak) => faults.invert_tie_break = true,
                Some(FaultArg::DelayOffByOne) => faults.delay_off_by_one = true,
                None => {}
            }
            let opts = VerifyOptions {
                fuzz_configs: *fuzz,
                seed: MasterSeed(cli.seed.unwrap_or(0)),
                faults,
                ..Default::default()
            };
            let report = run_verify(&opts);
            for c in &report.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            write(out, "verify.json", &report.to_json()?)?;
            Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
    }
}

fn read_deltas(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.parse::<f64>()
                .map_err(|e| Error::config(format!("deltas_file line {}", i + 1), e.to_string()))
        })
        .collect()
}

fn tune_chart(report: &crate::stepsize::TuneReport) -> LineChart {
    let pts = report
        .points
        .iter()
        .filter(|p| p.final_error.is_finite() && p.final_error > 0.0)
        .map(|p| (p.eta, p.final_error))
        .collect();
    LineChart {
        title: "stepsize tuning".into(),
        x_label: "eta".into(),
        y_label: "final error".into(),
        log_x: true,
        log_y: true,
        series: vec![Series::scatter("final error", pts)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["asyncsgd", "simulate"]), EXIT_USAGE);
        assert_eq!(run(["asyncsgd", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["asyncsgd", "simulate", "--preset", "nope"]), EXIT_USAGE);
        assert_eq!(run(["asyncsgd", "--help"]), EXIT_OK);
    }
}
