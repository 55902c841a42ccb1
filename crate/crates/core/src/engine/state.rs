use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index;
use rand::Rng;

use super::policy::{ClientCapacity, SchedulerPolicy, SelectionContext};
use super::trace::{IterationRecord, RunStatus, RunTrace};
use super::Simulation;
use crate::error::{Error, Result};
use crate::linalg::{axpy, norm, ParamVector};
use crate::metrics::{DelayLedger, InFlightRecord};
use crate::objectives::stochastic_gradient;
use crate::rng::{names, Stream};

/// A gradient computation in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct InFlightJob {
    /// Worker id, or client id under client sampling.
    pub worker: usize,
    /// Data client whose function is differentiated.
    pub client: usize,
    /// `t'` such that the gradient is taken at `x⁽ᵗ'⁾`.
    pub start_iteration: u64,
    pub assignment_point: ParamVector,
    /// Stochastic gradient at `assignment_point`, sampled when the job starts.
    pub gradient: ParamVector,
    pub finish_time: f64,
}

struct Pending {
    tie: usize,
    seq: u64,
    job: InFlightJob,
}

impl Pending {
    fn key(&self) -> (f64, usize, u64) {
        (self.job.finish_time, self.tie, self.seq)
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed: BinaryHeap is a max-heap and we want the earliest finish on top.
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, wa, sa) = self.key();
        let (tb, wb, sb) = other.key();
        tb.total_cmp(&ta).then(wb.cmp(&wa)).then(sb.cmp(&sa))
    }
}

/// Mutable state of a running simulation.
pub struct EngineState<'a> {
    sim: &'a Simulation<'a>,
    client_mode: bool,
    x: ParamVector,
    t: u64,
    now: f64,
    queue: BinaryHeap<Pending>,
    idle: Vec<bool>,
    busy_until: Vec<f64>,
    noise_streams: Vec<Stream>,
    delay_streams: Vec<Stream>,
    sampling: Stream,
    scheduler: Stream,
    seq: u64,
    grad_buf: ParamVector,
    grad_norm: f64,
    value: f64,
    records: Vec<IterationRecord>,
    ledger: DelayLedger,
}

impl<'a> EngineState<'a> {
    pub(super) fn new(sim: &'a Simulation<'a>) -> Result<Self> {
        let units = sim.workers.len();
        let obj = sim.objective;
        let client_mode = sim.policy.samples_clients();
        if client_mode && obj.num_clients() > 1 && obj.num_clients() != units {
            return Err(Error::config(
                "workers",
                format!("{} clients need {} worker models, got {units}", obj.num_clients(), obj.num_clients()),
            ));
        }
        let mut st = EngineState {
            sim,
            client_mode,
            x: sim.x0.clone(),
            t: 0,
            now: 0.0,
            queue: BinaryHeap::new(),
            idle: vec![true; units],
            busy_until: vec![0.0; units],
            noise_streams: (0..units).map(|i| sim.seed.stream(&names::noise(i))).collect(),
            delay_streams: (0..units).map(|i| sim.seed.stream(&names::delay(i))).collect(),
            sampling: sim.seed.stream(names::CLIENT_SAMPLING),
            scheduler: sim.seed.stream(names::SCHEDULER),
            seq: 0,
            grad_buf: ParamVector::zeros(obj.dim()),
            grad_norm: 0.0,
            value: 0.0,
            records: Vec::new(),
            ledger: DelayLedger::new(units),
        };
        st.refresh_point_stats();

        let initial = st.initial_selection();
        for w in initial {
            st.assign(w)?;
        }
        st.ledger.concurrency_log.push(st.queue.len() as u64);
        Ok(st)
    }

    fn units(&self) -> usize {
        self.idle.len()
    }

    fn initial_selection(&mut self) -> Vec<usize> {
        let n = self.units();
        let sim = self.sim;
        match &sim.policy {
            SchedulerPolicy::MaxConcurrency { initial } => initial.clone().unwrap_or_else(|| (0..n).collect()),
            SchedulerPolicy::Minibatch | SchedulerPolicy::RandomIdle { .. } => (0..n).collect(),
            SchedulerPolicy::Table { initial, .. } => initial.clone(),
            SchedulerPolicy::Custom(c) => c.initial.clone(),
            SchedulerPolicy::ClientSampling { tau_c, .. } => {
                if *tau_c <= n {
                    index::sample(&mut self.sampling, n, *tau_c).into_vec()
                } else {
                    (0..*tau_c).map(|_| self.sampling.gen_range(0..n)).collect()
                }
            }
            SchedulerPolicy::SampledMinibatch { batch, .. } => {
                (0..*batch).map(|_| self.sampling.gen_range(0..n)).collect()
            }
        }
    }

    fn refresh_point_stats(&mut self) {
        self.sim.objective.gradient_into(&self.x, &mut self.grad_buf);
        self.grad_norm = norm(&self.grad_buf);
        self.value = self.sim.objective.value(&self.x);
    }

    /// Starts a job on `unit` at the current iterate.
    fn assign(&mut self, unit: usize) -> Result<()> {
        let obj = self.sim.objective;
        let client = unit % obj.num_clients();
        let gradient = stochastic_gradient(obj, client, &self.x, &self.sim.noise, &mut self.noise_streams[unit])?;
        let duration = self.sim.workers[unit].compute.sample(&mut self.delay_streams[unit]);
        let finish_time = if self.client_mode && self.capacity() == ClientCapacity::Fifo {
            let f = self.now.max(self.busy_until[unit]) + duration;
            self.busy_until[unit] = f;
            f
        } else {
            self.now + duration
        };
        let tie = if self.sim.faults.invert_tie_break {
            usize::MAX - unit
        } else {
            unit
        };
        self.idle[unit] = false;
        self.ledger.samples_per_unit[unit] += 1;
        self.queue.push(Pending {
            tie,
            seq: self.seq,
            job: InFlightJob {
                worker: unit,
                client,
                start_iteration: self.t,
                assignment_point: self.x.clone(),
                gradient,
                finish_time,
            },
        });
        self.seq += 1;
        Ok(())
    }

    fn capacity(&self) -> ClientCapacity {
        match self.sim.policy {
            SchedulerPolicy::ClientSampling { capacity, .. } | SchedulerPolicy::SampledMinibatch { capacity, .. } => {
                capacity
            }
            _ => ClientCapacity::Unbounded,
        }
    }

    /// `𝒜_t` for the step that just applied `finished`'s gradient.
    fn select(&mut self, applied_t: u64, finished: usize) -> Result<Vec<usize>> {
        let n = self.units();
        let sim = self.sim;
        let selected = match &sim.policy {
            SchedulerPolicy::MaxConcurrency { .. } => vec![finished],
            SchedulerPolicy::Minibatch => {
                if (applied_t + 1).is_multiple_of(n as u64) {
                    (0..n).collect()
                } else {
                    Vec::new()
                }
            }
            SchedulerPolicy::RandomIdle { p } => {
                let mut chosen = Vec::new();
                for w in 0..n {
                    if self.idle[w] && self.scheduler.gen::<f64>() < *p {
                        chosen.push(w);
                    }
                }
                if chosen.is_empty() && self.queue.is_empty() {
                    chosen.push(finished);
                }
                chosen
            }
            SchedulerPolicy::Table { schedule, .. } => schedule[(applied_t % schedule.len() as u64) as usize].clone(),
            SchedulerPolicy::Custom(c) => {
                let ctx = SelectionContext {
                    iteration: applied_t,
                    finished_worker: finished,
                    idle: &self.idle,
                };
                (c.select)(&ctx)
            }
            SchedulerPolicy::ClientSampling { .. } => vec![self.sampling.gen_range(0..n)],
            SchedulerPolicy::SampledMinibatch { batch, .. } => {
                if (applied_t + 1).is_multiple_of(*batch as u64) {
                    (0..*batch).map(|_| self.sampling.gen_range(0..n)).collect()
                } else {
                    Vec::new()
                }
            }
        };
        if !self.client_mode {
            let mut seen = vec![false; n];
            for &w in &selected {
                if w >= n || !self.idle[w] || std::mem::replace(&mut seen[w], true) {
                    return Err(Error::BusyWorkerSelected {
                        worker: w,
                        iteration: applied_t,
                    });
                }
            }
        }
        Ok(selected)
    }

    /// Pops the earliest-finishing job, applies its gradient (`t → t+1`),
    /// runs the scheduler's selection and starts the new jobs at `x⁽ᵗ⁺¹⁾`.
    /// Server work takes no simulated time.
    pub fn advance_event(&mut self) -> Result<&IterationRecord> {
        let concurrency = self.queue.len();
        let Pending { job, .. } = self.queue.pop().ok_or(Error::Deadlock { iteration: self.t })?;
        self.now = job.finish_time;
        let t = self.t;
        let mut tau = t - job.start_iteration;
        if self.sim.faults.delay_off_by_one {
            tau += 1;
        }
        let eta = self.sim.stepsizes.stepsize_at(t, tau);
        if eta != 0.0 {
            axpy(-eta, &job.gradient, &mut self.x);
        }
        let record = IterationRecord {
            t,
            worker: job.worker,
            client: job.client,
            tau,
            eta,
            grad_norm: self.grad_norm,
            f_value: self.value,
            sim_time: self.now,
            selected: 0,
            concurrency,
        };

        self.t += 1;
        if !self.client_mode {
            self.idle[job.worker] = true;
        }
        let selected = self.select(t, job.worker)?;
        for &w in &selected {
            self.assign(w)?;
        }

        self.ledger.applied.push(tau);
        self.ledger.applied_units.push(job.worker);
        self.ledger.concurrency_log.push(self.queue.len() as u64);
        self.records.push(IterationRecord {
            selected: selected.len(),
            ..record
        });
        self.refresh_point_stats();
        Ok(self.records.last().expect("just pushed"))
    }

    /// Number of applied gradients so far.
    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn sim_time(&self) -> f64 {
        self.now
    }

    pub fn point(&self) -> &ParamVector {
        &self.x
    }

    /// `‖∇f(x⁽ᵗ⁾)‖` at the current iterate.
    pub fn grad_norm(&self) -> f64 {
        self.grad_norm
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    /// Closes the run: jobs still queued become the in-flight set `𝒞_T`,
    /// listed in completion order.
    pub fn finish(mut self, status: RunStatus) -> RunTrace {
        let mut flying = Vec::with_capacity(self.queue.len());
        while let Some(p) = self.queue.pop() {
            flying.push(InFlightRecord {
                unit: p.job.worker,
                start_iteration: p.job.start_iteration,
            });
        }
        self.ledger.iterations = self.t;
        self.ledger.in_flight = flying;
        RunTrace {
            records: self.records,
            final_point: self.x,
            final_grad_norm: self.grad_norm,
            final_value: self.value,
            sim_time: self.now,
            status,
            ledger: self.ledger,
        }
    }
}
