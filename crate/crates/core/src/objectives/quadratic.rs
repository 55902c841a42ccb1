use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{names, MasterSeed};

/// `f(x) = ½‖Ax − b‖²` with a symmetric positive semi-definite `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticObjective {
    pub matrix_a: Matrix,
    pub vector_b: Vec<f64>,
    /// Largest eigenvalue of `AᵀA`.
    pub smoothness_l: f64,
}

impl QuadraticObjective {
    /// Builds `A = QΛQᵀ` with `Q` the orthogonal factor of a Gaussian matrix and
    /// `Λ` equally spaced in `[lambda_min, lambda_max]`; `b ~ N(0, I)`.
    pub fn generate<R: Rng + ?Sized>(
        dim: usize,
        lambda_min: f64,
        lambda_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidSpec(format!("quadratic dimension must be >= 2, got {dim}")));
        }
        if !(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        let spectrum = equally_spaced(lambda_min, lambda_max, dim);
        let q = Matrix::gaussian(dim, dim, rng).orthonormal_factor();

        let mut a = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                let v: f64 = (0..dim).map(|k| q.get(i, k) * spectrum[k] * q.get(j, k)).sum();
                a.data[i * dim + j] = v;
                a.data[j * dim + i] = v;
            }
        }
        let vector_b = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Ok(QuadraticObjective {
            matrix_a: a,
            vector_b,
            smoothness_l: lambda_max * lambda_max,
        })
    }

    pub fn from_parts(matrix_a: Matrix, vector_b: Vec<f64>, smoothness_l: f64) -> Result<Self> {
        if !matrix_a.is_consistent() || matrix_a.rows != vector_b.len() {
            return Err(Error::InvalidSpec("matrix/vector shape mismatch".into()));
        }
        if !(smoothness_l.is_finite() && smoothness_l >= 0.0) {
            return Err(Error::InvalidSpec(format!("bad smoothness constant {smoothness_l}")));
        }
        Ok(QuadraticObjective {
            matrix_a,
            vector_b,
            smoothness_l,
        })
    }

    /// Residual `Ax − b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.matrix_a.mul_vec(x);
        for (ri, bi) in r.iter_mut().zip(&self.vector_b) {
            *ri -= bi;
        }
        r
    }
}

pub fn make_quadratic(dim: usize, lambda_min: f64, lambda_max: f64, seed: MasterSeed) -> Result<QuadraticObjective> {
    QuadraticObjective::generate(dim, lambda_min, lambda_max, &mut seed.stream(names::OBJECTIVE))
}

pub(crate) fn equally_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
        .collect()
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.matrix_a.cols
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r = self.residual(x);
        0.5 * dot(&r, &r)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let r = self.residual(x);
        self.matrix_a.tr_mul_vec_into(&r, out);
    }

    fn smoothness(&self) -> f64 {
        self.smoothness_l
    }
}
