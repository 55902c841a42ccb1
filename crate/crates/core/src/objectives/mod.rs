//! Synthetic objectives with certified constants and the additive gradient
//! noise model.
//!
//! Client indices are 0-based. Single-function objectives expose exactly one
//! client.

mod heterogeneous;
mod logistic;
mod quadratic;

pub use heterogeneous::HeterogeneousFamily;
pub use logistic::{make_logistic, LogisticObjective};
pub use quadratic::{make_quadratic, QuadraticObjective};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ParamVector;

/// A differentiable objective `f = n⁻¹ Σᵢ fᵢ`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn num_clients(&self) -> usize {
        1
    }

    /// Global objective value `f(x)`.
    fn value(&self, x: &[f64]) -> f64;

    /// Global gradient `∇f(x)` written into `out`.
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn client_value(&self, _client: usize, x: &[f64]) -> f64 {
        self.value(x)
    }

    fn client_gradient_into(&self, _client: usize, x: &[f64], out: &mut [f64]) {
        self.gradient_into(x, out)
    }

    /// Smoothness constant `L` shared by every client function.
    fn smoothness(&self) -> f64;

    fn gradient(&self, x: &[f64]) -> ParamVector {
        let mut g = ParamVector::zeros(self.dim());
        self.gradient_into(x, &mut g);
        g
    }
}

/// Serializable union of the supported objective families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AnyObjective {
    Quadratic(QuadraticObjective),
    Logistic(LogisticObjective),
    Heterogeneous(HeterogeneousFamily),
}

impl AnyObjective {
    fn inner(&self) -> &dyn Objective {
        match self {
            AnyObjective::Quadratic(o) => o,
            AnyObjective::Logistic(o) => o,
            AnyObjective::Heterogeneous(o) => o,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let obj: AnyObjective = serde_json::from_str(s)?;
        obj.validate()?;
        Ok(obj)
    }

    fn validate(&self) -> Result<()> {
        match self {
            AnyObjective::Quadratic(q) => {
                QuadraticObjective::from_parts(q.matrix_a.clone(), q.vector_b.clone(), q.smoothness_l).map(|_| ())
            }
            AnyObjective::Logistic(l) => {
                LogisticObjective::from_data(l.features.clone(), l.labels.clone()).map(|_| ())
            }
            AnyObjective::Heterogeneous(h) => {
                HeterogeneousFamily::from_shifts(h.base.clone(), h.shifts.clone()).map(|_| ())
            }
        }
    }
}

impl Objective for AnyObjective {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn num_clients(&self) -> usize {
        self.inner().num_clients()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.inner().value(x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.inner().gradient_into(x, out)
    }
    fn client_value(&self, client: usize, x: &[f64]) -> f64 {
        self.inner().client_value(client, x)
    }
    fn client_gradient_into(&self, client: usize, x: &[f64], out: &mut [f64]) {
        self.inner().client_gradient_into(client, x, out)
    }
    fn smoothness(&self) -> f64 {
        self.inner().smoothness()
    }
}

/// Additive isotropic Gaussian noise with `E‖ξ‖² = σ²` (per-coordinate
/// variance `σ²/d`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(NoiseModel { sigma })
    }

    pub fn noiseless() -> Self {
        NoiseModel { sigma: 0.0 }
    }

    /// Adds one noise draw to `g`. Draws nothing when `σ = 0`.
    pub fn perturb<R: Rng + ?Sized>(&self, g: &mut [f64], stream: &mut R) {
        if self.sigma == 0.0 {
            return;
        }
        let sd = self.sigma / (g.len() as f64).sqrt();
        for gi in g.iter_mut() {
            let z: f64 = stream.sample(StandardNormal);
            *gi += sd * z;
        }
    }
}

/// `∇fᵢ(x) + ξ` with the noise drawn from `stream` only.
pub fn stochastic_gradient<O: Objective + ?Sized, R: Rng + ?Sized>(
    obj: &O,
    client: usize,
    x: &[f64],
    noise: &NoiseModel,
    stream: &mut R,
) -> Result<ParamVector> {
    if x.len() != obj.dim() {
        return Err(Error::InvalidSpec(format!("point has dimension {}, expected {}", x.len(), obj.dim())));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericDomain("non-finite point passed to stochastic_gradient".into()));
    }
    if client >= obj.num_clients() {
        return Err(Error::InvalidSpec(format!(
            "client {client} out of range (objective has {} clients)",
            obj.num_clients()
        )));
    }
    let mut g = ParamVector::zeros(obj.dim());
    obj.client_gradient_into(client, x, &mut g);
    noise.perturb(&mut g, stream);
    Ok(g)
}
