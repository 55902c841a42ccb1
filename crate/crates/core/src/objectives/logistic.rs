use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::rng::{names, MasterSeed};

/// `f(x) = m⁻¹ Σⱼ log(1 + exp(−bⱼ aⱼᵀx))` over a fixed synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticObjective {
    pub features: Matrix,
    pub labels: Vec<f64>,
    /// `¼ m⁻¹ Σ‖aⱼ‖²`
    pub smoothness_l: f64,
    /// `m⁻¹ Σ‖aⱼ‖`, an upper bound on `‖∇f(x)‖` everywhere.
    pub grad_bound_g: f64,
}

impl LogisticObjective {
    /// Standard normal features, labels uniform on `{-1, +1}`.
    pub fn generate<R: Rng + ?Sized>(m: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if m == 0 || dim == 0 {
            return Err(Error::InvalidSpec(format!("logistic sizes must be positive, got m={m}, d={dim}")));
        }
        let features = Matrix::gaussian(m, dim, rng);
        let labels = (0..m).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        Self::from_data(features, labels)
    }

    /// Wraps an explicit dataset and certifies its constants.
    pub fn from_data(features: Matrix, labels: Vec<f64>) -> Result<Self> {
        if !features.is_consistent() || features.rows != labels.len() || features.rows == 0 {
            return Err(Error::InvalidSpec("features/labels shape mismatch".into()));
        }
        if labels.iter().any(|b| *b != 1.0 && *b != -1.0) {
            return Err(Error::InvalidSpec("labels must be +1 or -1".into()));
        }
        let m = features.rows as f64;
        let (mut sq, mut lin) = (0.0, 0.0);
        for j in 0..features.rows {
            let n = norm(features.row(j));
            sq += n * n;
            lin += n;
        }
        Ok(LogisticObjective {
            features,
            labels,
            smoothness_l: 0.25 * sq / m,
            grad_bound_g: lin / m,
        })
    }
}

pub fn make_logistic(m: usize, dim: usize, seed: MasterSeed) -> Result<LogisticObjective> {
    LogisticObjective::generate(m, dim, &mut seed.stream(names::OBJECTIVE))
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Objective for LogisticObjective {
    fn dim(&self) -> usize {
        self.features.cols
    }

    fn value(&self, x: &[f64]) -> f64 {
        let m = self.labels.len();
        let s: f64 = (0..m)
            .map(|j| softplus(-self.labels[j] * dot(self.features.row(j), x)))
            .sum();
        s / m as f64
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.labels.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..m {
            let b = self.labels[j];
            let a = self.features.row(j);
            let w = -b * sigmoid(-b * dot(a, x)) / m as f64;
            axpy(w, a, out);
        }
    }

    fn smoothness(&self) -> f64 {
        self.smoothness_l
    }
}
