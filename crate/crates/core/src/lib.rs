//! Deterministic discrete-event simulator for asynchronous SGD with delayed
//! gradients.
//!
//! * [`objectives`]: synthetic objectives with certified smoothness,
//!   heterogeneity and noise constants.
//! * [`engine`]: the parameter-server simulation (worker scheduling and
//!   uniform client sampling).
//! * [`stepsize`]: constant, delay-adaptive and theory-derived stepsizes, plus
//!   the log-grid tuner.
//! * [`metrics`]: delay/concurrency statistics and the delay-conservation
//!   identity.
//! * [`speedup`]: expected wall time of asynchronous vs. mini-batch SGD.
//! * [`cli`]: configuration files, experiment presets and the command front end.

pub mod cli;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod objectives;
pub mod rng;
pub mod speedup;
pub mod stepsize;

pub use error::{Error, Result};
pub use linalg::ParamVector;
pub use rng::MasterSeed;
