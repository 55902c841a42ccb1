use proptest::prelude::*;
use rand::Rng;

use asyncsgd::linalg::Matrix;
use asyncsgd::objectives::{
    make_logistic, make_quadratic, stochastic_gradient, AnyObjective, HeterogeneousFamily, LogisticObjective,
    NoiseModel, Objective, QuadraticObjective,
};
use asyncsgd::MasterSeed;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows;
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j].powi(2)).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (mkp, mkq) = (row[p], row[q]);
                    row[p] = c * mkp - s * mkq;
                    row[q] = s * mkp + c * mkq;
                }
                let (rp, rq) = (m[p].clone(), m[q].clone());
                for k in 0..n {
                    m[p][k] = c * rp[k] - s * rq[k];
                    m[q][k] = s * rp[k] + c * rq[k];
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest eigenvalue of `AᵀA` by power iteration.
fn power_iteration(a: &Matrix) -> f64 {
    let n = a.cols;
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let w = a.transpose().mul_vec(&a.mul_vec(&v));
        lambda = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    lambda
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            xp[j] = x[j] + h;
            let up = f(&xp);
            xp[j] = x[j] - h;
            let down = f(&xp);
            xp[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

#[test]
fn quadratic_spectrum_is_equally_spaced() {
    let q = make_quadratic(10, 1.0, 2.0, MasterSeed(4)).unwrap();
    let ev = jacobi_eigenvalues(&q.matrix_a);
    for (k, e) in ev.iter().enumerate() {
        let want = 1.0 + k as f64 / 9.0;
        assert!((e - want).abs() < 1e-10, "eigenvalue {k}: {e} vs {want}");
    }
}

#[test]
fn equal_eigenvalues_give_identity() {
    let q = make_quadratic(2, 1.0, 1.0, MasterSeed(9)).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((q.matrix_a.get(i, j) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn smoothness_matches_power_iteration() {
    for s in 0..5 {
        let q = make_quadratic(10, 1.0, 2.0, MasterSeed(s)).unwrap();
        assert_eq!(q.smoothness_l, 4.0);
        assert!((power_iteration(&q.matrix_a) - 4.0).abs() < 1e-8);
    }
}

#[test]
fn invalid_quadratics_are_rejected() {
    assert!(make_quadratic(1, 1.0, 2.0, MasterSeed(0)).is_err());
    assert!(make_quadratic(3, 0.0, 2.0, MasterSeed(0)).is_err());
    assert!(make_quadratic(3, 2.0, 1.0, MasterSeed(0)).is_err());
}

#[test]
fn logistic_hand_example() {
    let obj = LogisticObjective::from_data(Matrix::from_rows(vec![vec![2.0]]).unwrap(), vec![1.0]).unwrap();
    assert!((obj.gradient(&[0.0])[0] + 1.0).abs() < 1e-15);
    assert!((obj.value(&[0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn logistic_value_at_origin_is_log_two() {
    let obj = make_logistic(100, 20, MasterSeed(3)).unwrap();
    assert!((obj.value(&[0.0; 20]) - std::f64::consts::LN_2).abs() < 1e-14);
    assert!(obj.value(&[1e6; 20]).is_finite());
    assert!(obj.value(&[-1e6; 20]).is_finite());
}

#[test]
fn noiseless_gradient_is_exact() {
    let q = QuadraticObjective::from_parts(Matrix::identity(2), vec![0.0, 0.0], 1.0).unwrap();
    let mut rng = MasterSeed(0).stream("t");
    let g = stochastic_gradient(&q, 0, &[3.0, 4.0], &NoiseModel::noiseless(), &mut rng).unwrap();
    assert_eq!(g.0, vec![3.0, 4.0]);
}

#[test]
fn noise_has_total_variance_sigma_squared() {
    let q = QuadraticObjective::from_parts(Matrix::identity(2), vec![0.0, 0.0], 1.0).unwrap();
    let noise = NoiseModel::new(1.0).unwrap();
    let mut rng = MasterSeed(12).stream("t");
    let x = [0.5, -0.25];
    let n = 100_000;
    let (mut sq, mut mean) = (0.0, [0.0; 2]);
    for _ in 0..n {
        let g = stochastic_gradient(&q, 0, &x, &noise, &mut rng).unwrap();
        let e = [g[0] - x[0], g[1] - x[1]];
        sq += e[0] * e[0] + e[1] * e[1];
        mean[0] += e[0];
        mean[1] += e[1];
    }
    let msq = sq / n as f64;
    assert!((0.99..=1.01).contains(&msq), "{msq}");
    assert!(mean.iter().all(|m| (m / n as f64).abs() < 0.01));
}

#[test]
fn non_finite_points_are_rejected() {
    let q = make_quadratic(2, 1.0, 2.0, MasterSeed(0)).unwrap();
    let mut rng = MasterSeed(0).stream("t");
    assert!(stochastic_gradient(&q, 0, &[f64::NAN, 0.0], &NoiseModel::noiseless(), &mut rng).is_err());
    assert!(stochastic_gradient(&q, 0, &[f64::INFINITY, 0.0], &NoiseModel::noiseless(), &mut rng).is_err());
}

#[test]
fn objectives_round_trip_through_json() {
    let q = make_quadratic(4, 1.0, 2.0, MasterSeed(1)).unwrap();
    let mut rng = MasterSeed(2).stream("shifts");
    let objs = [
        AnyObjective::Quadratic(q.clone()),
        AnyObjective::Logistic(make_logistic(7, 3, MasterSeed(2)).unwrap()),
        AnyObjective::Heterogeneous(HeterogeneousFamily::generate(q, 3, 0.5, &mut rng).unwrap()),
    ];
    for o in objs {
        let text = o.to_json().unwrap();
        let back = AnyObjective::from_json(&text).unwrap();
        assert_eq!(back, o);
        assert_eq!(back.to_json().unwrap(), text);
    }
}

#[test]
fn single_client_family_has_no_shift() {
    let q = make_quadratic(3, 1.0, 2.0, MasterSeed(1)).unwrap();
    let mut rng = MasterSeed(2).stream("shifts");
    let h = HeterogeneousFamily::generate(q, 1, 1.0, &mut rng).unwrap();
    assert!(h.shifts[0].iter().all(|c| *c == 0.0));
    assert_eq!(h.zeta_sq, 0.0);
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadratic_gradient_matches_finite_differences(seed in any::<u64>(), x in point(6)) {
        let q = make_quadratic(6, 1.0, 2.0, MasterSeed(seed)).unwrap();
        let fd = central_difference(|p| q.value(p), &x);
        prop_assert!(rel_err(&q.gradient(&x), &fd) <= 1e-6);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences(seed in any::<u64>(), x in point(5)) {
        let l = make_logistic(30, 5, MasterSeed(seed)).unwrap();
        let fd = central_difference(|p| l.value(p), &x);
        prop_assert!(rel_err(&l.gradient(&x), &fd) <= 1e-6);
    }

    #[test]
    fn logistic_gradient_is_bounded(seed in any::<u64>(), dir in point(5), scale in 0.0..1e6f64) {
        let l = make_logistic(30, 5, MasterSeed(seed)).unwrap();
        let x: Vec<f64> = dir.iter().map(|d| d * scale).collect();
        let g = l.gradient(&x);
        prop_assert!(g.norm() <= l.grad_bound_g * (1.0 + 1e-12));
    }

    #[test]
    fn client_gradients_differ_by_their_shift(seed in any::<u64>(), x in point(4), clients in 1usize..8) {
        let q = make_quadratic(4, 1.0, 2.0, MasterSeed(seed)).unwrap();
        let mut rng = MasterSeed(seed).stream("shifts");
        let h = HeterogeneousFamily::generate(q, clients, 2.0, &mut rng).unwrap();
        let base = h.base.gradient(&x);
        let mut mean = vec![0.0; 4];
        for c in 0..clients {
            let mut g = vec![0.0; 4];
            h.client_gradient_into(c, &x, &mut g);
            for k in 0..4 {
                prop_assert!((g[k] - base[k] - h.shifts[c][k]).abs() <= 1e-12 * (1.0 + base[k].abs()));
                mean[k] += g[k] / clients as f64;
            }
            prop_assert!((h.zeta_i[c] - h.shifts[c].iter().map(|v| v * v).sum::<f64>().sqrt()).abs() < 1e-12);
        }
        prop_assert!(rel_err(&mean, &base) <= 1e-10);
        let fd = central_difference(|p| h.value(p), &x);
        prop_assert!(rel_err(&h.gradient(&x), &fd) <= 1e-6);
    }

    #[test]
    fn same_seed_same_objective(seed in any::<u64>()) {
        prop_assert_eq!(make_quadratic(3, 1.0, 2.0, MasterSeed(seed)).unwrap(), make_quadratic(3, 1.0, 2.0, MasterSeed(seed)).unwrap());
        prop_assert_eq!(make_logistic(5, 2, MasterSeed(seed)).unwrap(), make_logistic(5, 2, MasterSeed(seed)).unwrap());
    }
}

#[test]
fn noise_draws_only_from_the_given_stream() {
    let q = make_quadratic(3, 1.0, 2.0, MasterSeed(0)).unwrap();
    let noise = NoiseModel::new(0.7).unwrap();
    let mut a = MasterSeed(5).stream("x");
    let mut b = MasterSeed(5).stream("x");
    let ga = stochastic_gradient(&q, 0, &[0.1, 0.2, 0.3], &noise, &mut a).unwrap();
    let gb = stochastic_gradient(&q, 0, &[0.1, 0.2, 0.3], &noise, &mut b).unwrap();
    assert_eq!(ga, gb);
    assert_eq!(a.gen::<u64>(), b.gen::<u64>());
}
