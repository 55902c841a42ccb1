//! Expected wall time of asynchronous vs. mini-batch SGD on a fleet of
//! workers with constant per-gradient times `Δ₁ ≤ … ≤ Δₙ`.
//!
//! Asynchronous SGD with concurrency `τ_C` delivers `τ_C` gradients every
//! `Δ̄ = n⁻¹ Σ Δᵢ` in expectation. A mini-batch of `τ_C` uniformly drawn
//! workers (with replacement) waits for the slowest one, so a batch takes
//! `E max{Δ_{i₁}, …, Δ_{i_C}} = Σ αᵢ Δᵢ` with
//! `αᵢ = (i^C − (i−1)^C) / n^C`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::MasterSeed;

/// Upper bound on `n^{τ_C}` for exhaustive enumeration.
pub const EXHAUSTIVE_BUDGET: u64 = 1_000_000;

/// Samples used when an exhaustive request falls back to Monte-Carlo.
pub const FALLBACK_SAMPLES: u64 = 100_000;

const MC_SHARDS: u64 = 16;

/// Sorted, positive per-worker compute times and a concurrency level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupInput {
    deltas: Vec<f64>,
    tau_c: u32,
}

impl SpeedupInput {
    /// Sorts `deltas` ascending.
    pub fn new(mut deltas: Vec<f64>, tau_c: u32) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::InvalidSpec("need at least one worker time".into()));
        }
        if let Some(bad) = deltas.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidSpec(format!("worker times must be positive and finite, got {bad}")));
        }
        if tau_c == 0 {
            return Err(Error::InvalidSpec("tau_c must be >= 1".into()));
        }
        deltas.sort_by(f64::total_cmp);
        Ok(SpeedupInput { deltas, tau_c })
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn tau_c(&self) -> u32 {
        self.tau_c
    }

    pub fn n(&self) -> usize {
        self.deltas.len()
    }
}

/// Parses `"900x10,100x60"` / `"1,3"` style fleet descriptions.
pub fn parse_fleet(spec: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (count, value) = match part.split_once(['x', '*']) {
            Some((c, v)) => (
                c.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidSpec(format!("bad count in `{part}`: {e}")))?,
                v,
            ),
            None => (1, part),
        };
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|e| Error::InvalidSpec(format!("bad time in `{part}`: {e}")))?;
        out.extend(std::iter::repeat_n(v, count));
    }
    Ok(out)
}

/// `Δ̄`, the expected time for asynchronous SGD to produce `τ_C` gradients.
pub fn async_time(input: &SpeedupInput) -> f64 {
    input.deltas.iter().sum::<f64>() / input.n() as f64
}

/// `αᵢ = (i/n)^C − ((i−1)/n)^C`, computed without forming `n^C`.
pub fn alphas(n: usize, tau_c: u32) -> Vec<f64> {
    let c = f64::from(tau_c);
    let nf = n as f64;
    (1..=n)
        .map(|i| {
            let fi = i as f64;
            let top = (c * (fi / nf).ln()).exp();
            if i == 1 {
                top
            } else {
                // top * (1 - ((i-1)/i)^C)
                -top * (c * (-1.0 / fi).ln_1p()).exp_m1()
            }
        })
        .collect()
}

/// `Δ̃ = Σ αᵢ Δᵢ`, the expected time of one mini-batch of `τ_C` gradients.
pub fn minibatch_time(input: &SpeedupInput) -> f64 {
    alphas(input.n(), input.tau_c)
        .iter()
        .zip(&input.deltas)
        .map(|(a, d)| a * d)
        .sum()
}

/// `Δ̃ / Δ̄ ≥ 1`.
pub fn speedup_ratio(input: &SpeedupInput) -> f64 {
    minibatch_time(input) / async_time(input)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleMethod {
    /// Enumerate all `n^{τ_C}` index tuples (falls back to Monte-Carlo over budget).
    Exhaustive,
    MonteCarlo { samples: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub estimate: f64,
    /// Zero for exhaustive enumeration.
    pub stderr: f64,
    pub method: OracleMethod,
    /// Exhaustive enumeration was requested but exceeded the budget.
    pub fell_back: bool,
}

/// Direct estimate of `E max{Δ_{i₁}, …, Δ_{i_C}}` with `i_j ~ Uniform[1, n]`.
pub fn minibatch_time_oracle(input: &SpeedupInput, method: OracleMethod, seed: MasterSeed) -> OracleEstimate {
    match method {
        OracleMethod::Exhaustive => {
            let n = input.n() as u64;
            match n.checked_pow(input.tau_c).filter(|total| *total <= EXHAUSTIVE_BUDGET) {
                Some(total) => OracleEstimate {
                    estimate: exhaustive(input, total),
                    stderr: 0.0,
                    method,
                    fell_back: false,
                },
                None => OracleEstimate {
                    fell_back: true,
                    ..monte_carlo(input, FALLBACK_SAMPLES, seed)
                },
            }
        }
        OracleMethod::MonteCarlo { samples } => monte_carlo(input, samples, seed),
    }
}

fn exhaustive(input: &SpeedupInput, total: u64) -> f64 {
    let n = input.n();
    let c = input.tau_c as usize;
    // counts[k] = number of tuples whose largest index is k
    let mut counts = vec![0u64; n];
    let mut tuple = vec![0usize; c];
    loop {
        let top = *tuple.iter().max().expect("tau_c >= 1");
        counts[top] += 1;
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == c {
                debug_assert_eq!(counts.iter().sum::<u64>(), total);
                return counts
                    .iter()
                    .zip(&input.deltas)
                    .map(|(k, d)| *k as f64 * d)
                    .sum::<f64>()
                    / total as f64;
            }
            tuple[pos] += 1;
            if tuple[pos] < n {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
    }
}

fn monte_carlo(input: &SpeedupInput, samples: u64, seed: MasterSeed) -> OracleEstimate {
    let samples = samples.max(2);
    let n = input.n();
    let c = input.tau_c;
    let per_shard = samples / MC_SHARDS;
    let extra = samples % MC_SHARDS;
    let partial: Vec<(f64, f64)> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = seed.child(shard).stream("speedup-oracle");
            let count = per_shard + u64::from(shard < extra);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let top = (0..c).map(|_| rng.gen_range(0..n)).max().expect("tau_c >= 1");
                let v = input.deltas[top];
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = partial.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let nf = samples as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    OracleEstimate {
        estimate: mean,
        stderr: (var / nf).sqrt(),
        method: OracleMethod::MonteCarlo { samples },
        fell_back: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// JSON output of the `speedup` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub deltas: DeltaSummary,
    pub tau_c: u32,
    pub async_time: f64,
    pub minibatch_time: f64,
    pub ratio: f64,
    pub oracle: OracleEstimate,
}

impl SpeedupReport {
    pub fn compute(input: &SpeedupInput, method: OracleMethod, seed: MasterSeed) -> Self {
        let d = input.deltas();
        SpeedupReport {
            deltas: DeltaSummary {
                n: d.len(),
                min: d[0],
                max: d[d.len() - 1],
                mean: async_time(input),
            },
            tau_c: input.tau_c(),
            async_time: async_time(input),
            minibatch_time: minibatch_time(input),
            ratio: speedup_ratio(input),
            oracle: minibatch_time_oracle(input, method, seed),
        }
    }
}

/// Writes `rank,delta,alpha` rows (rank is 1-based).
pub fn write_alpha_csv<W: Write>(input: &SpeedupInput, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "delta", "alpha"])?;
    for (i, (a, d)) in alphas(input.n(), input.tau_c()).iter().zip(input.deltas()).enumerate() {
        out.write_record([(i + 1).to_string(), d.to_string(), a.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed_fleet() -> Vec<f64> {
        parse_fleet("900x10,100x60").unwrap()
    }

    #[test]
    fn fleet_parsing() {
        assert_eq!(parse_fleet("2x1.5, 3").unwrap(), vec![1.5, 1.5, 3.0]);
        assert!(parse_fleet("ax1").is_err());
        assert_eq!(mixed_fleet().len(), 1000);
    }

    #[test]
    fn input_validation() {
        assert!(SpeedupInput::new(vec![], 1).is_err());
        assert!(SpeedupInput::new(vec![1.0, -1.0], 1).is_err());
        assert!(SpeedupInput::new(vec![1.0], 0).is_err());
        let s = SpeedupInput::new(vec![3.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(s.deltas(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn async_examples() {
        assert_eq!(async_time(&SpeedupInput::new(vec![4.0; 5], 3).unwrap()), 4.0);
        assert_eq!(async_time(&SpeedupInput::new(mixed_fleet(), 10).unwrap()), 15.0);
        assert_eq!(async_time(&SpeedupInput::new(vec![1.0, 3.0], 2).unwrap()), 2.0);
    }

    #[test]
    fn two_worker_batch() {
        let input = SpeedupInput::new(vec![1.0, 3.0], 2).unwrap();
        let a = alphas(2, 2);
        assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] - 0.75).abs() < 1e-15);
        assert!((minibatch_time(&input) - 2.5).abs() < 1e-15);
        let o = minibatch_time_oracle(&input, OracleMethod::Exhaustive, MasterSeed(0));
        assert_eq!(o.estimate, 2.5);
        assert!(!o.fell_back);
    }

    #[test]
    fn single_draw_is_mean() {
        let input = SpeedupInput::new(vec![1.0, 2.0, 7.0], 1).unwrap();
        assert!((minibatch_time(&input) - async_time(&input)).abs() < 1e-15);
        let o = minibatch_time_oracle(&input, OracleMethod::Exhaustive, MasterSeed(0));
        assert!((o.estimate - async_time(&input)).abs() < 1e-15);
    }

    #[test]
    fn mixed_fleet_example() {
        let input = SpeedupInput::new(mixed_fleet(), 10).unwrap();
        let mb = minibatch_time(&input);
        assert!((42.4..=42.7).contains(&mb), "{mb}");
        assert!((speedup_ratio(&input) - mb / 15.0).abs() < 1e-15);
    }

    #[test]
    fn oversized_exhaustive_falls_back() {
        let input = SpeedupInput::new(mixed_fleet(), 10).unwrap();
        let o = minibatch_time_oracle(&input, OracleMethod::Exhaustive, MasterSeed(3));
        assert!(o.fell_back);
        assert!(o.stderr > 0.0);
    }

    #[test]
    fn alpha_csv_has_header() {
        let input = SpeedupInput::new(vec![1.0, 3.0], 2).unwrap();
        let mut buf = Vec::new();
        write_alpha_csv(&input, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "rank,delta,alpha");
        assert_eq!(s.lines().count(), 3);
    }
}
