use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Objective, QuadraticObjective};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Client objectives `fᵢ(x) = f(x) + cᵢᵀx` around a shared quadratic `f`,
/// with `Σᵢ cᵢ = 0` so the client average is exactly `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneousFamily {
    pub base: QuadraticObjective,
    pub shifts: Vec<Vec<f64>>,
    /// `ζᵢ = ‖cᵢ‖`
    pub zeta_i: Vec<f64>,
    /// `n⁻¹ Σ ζᵢ²`
    pub zeta_sq: f64,
}

impl HeterogeneousFamily {
    /// Draws Gaussian shifts, centres them and rescales so that `ζ² = zeta_rms²`.
    pub fn generate<R: Rng + ?Sized>(
        base: QuadraticObjective,
        clients: usize,
        zeta_rms: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if clients == 0 {
            return Err(Error::InvalidSpec("heterogeneous family needs at least one client".into()));
        }
        if !(zeta_rms >= 0.0 && zeta_rms.is_finite()) {
            return Err(Error::InvalidSpec(format!("zeta must be finite and >= 0, got {zeta_rms}")));
        }
        let d = base.dim();
        let mut shifts: Vec<Vec<f64>> = (0..clients)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mean: Vec<f64> = (0..d)
            .map(|k| shifts.iter().map(|c| c[k]).sum::<f64>() / clients as f64)
            .collect();
        for c in &mut shifts {
            for (ck, mk) in c.iter_mut().zip(&mean) {
                *ck -= mk;
            }
        }
        let rms = (shifts.iter().map(|c| dot(c, c)).sum::<f64>() / clients as f64).sqrt();
        let scale = if rms > 0.0 { zeta_rms / rms } else { 0.0 };
        for c in &mut shifts {
            c.iter_mut().for_each(|v| *v *= scale);
        }
        // Re-centre after scaling so the sum is zero to round-off.
        if clients > 1 {
            let mean: Vec<f64> = (0..d)
                .map(|k| shifts.iter().map(|c| c[k]).sum::<f64>() / clients as f64)
                .collect();
            for c in &mut shifts {
                for (ck, mk) in c.iter_mut().zip(&mean) {
                    *ck -= mk;
                }
            }
        }
        Self::from_shifts(base, shifts)
    }

    pub fn from_shifts(base: QuadraticObjective, shifts: Vec<Vec<f64>>) -> Result<Self> {
        if shifts.is_empty() || shifts.iter().any(|c| c.len() != base.dim()) {
            return Err(Error::InvalidSpec("shift vectors must match the base dimension".into()));
        }
        let zeta_i: Vec<f64> = shifts.iter().map(|c| norm(c)).collect();
        let zeta_sq = zeta_i.iter().map(|z| z * z).sum::<f64>() / zeta_i.len() as f64;
        Ok(HeterogeneousFamily {
            base,
            shifts,
            zeta_i,
            zeta_sq,
        })
    }
}

impl Objective for HeterogeneousFamily {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn num_clients(&self) -> usize {
        self.shifts.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.base.value(x)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.base.gradient_into(x, out);
    }

    fn client_value(&self, client: usize, x: &[f64]) -> f64 {
        self.base.value(x) + dot(&self.shifts[client], x)
    }

    fn client_gradient_into(&self, client: usize, x: &[f64], out: &mut [f64]) {
        self.base.gradient_into(x, out);
        for (o, c) in out.iter_mut().zip(&self.shifts[client]) {
            *o += c;
        }
    }

    fn smoothness(&self) -> f64 {
        self.base.smoothness_l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::make_quadratic;
    use crate::rng::MasterSeed;

    #[test]
    fn single_client_has_zero_shift() {
        let base = make_quadratic(4, 1.0, 2.0, MasterSeed(1)).unwrap();
        let fam = HeterogeneousFamily::generate(base, 1, 3.0, &mut MasterSeed(1).stream("h")).unwrap();
        assert!(fam.shifts[0].iter().all(|v| *v == 0.0));
        assert_eq!(fam.zeta_sq, 0.0);
    }

    #[test]
    fn shifts_sum_to_zero_and_hit_target() {
        let base = make_quadratic(5, 1.0, 2.0, MasterSeed(1)).unwrap();
        let fam = HeterogeneousFamily::generate(base, 7, 0.5, &mut MasterSeed(2).stream("h")).unwrap();
        for k in 0..5 {
            let s: f64 = fam.shifts.iter().map(|c| c[k]).sum();
            assert!(s.abs() < 1e-14);
        }
        assert!((fam.zeta_sq.sqrt() - 0.5).abs() < 1e-12);
        assert_eq!(fam.num_clients(), 7);
    }

    #[test]
    fn rejects_zero_clients() {
        let base = make_quadratic(3, 1.0, 2.0, MasterSeed(1)).unwrap();
        assert!(HeterogeneousFamily::generate(base, 0, 1.0, &mut MasterSeed(2).stream("h")).is_err());
    }
}
