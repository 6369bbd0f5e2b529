#![allow(clippy::too_many_arguments)]

use pathmfc::calculus::{Constant, Scaled};
use pathmfc::control::ActionSet;
use pathmfc::hilbert::SpectralOperator;
use pathmfc::hjb::{
    hamiltonian_sup_finite, hamiltonian_sup_randomized, hjb_residual,
    investment_hamiltonian_closed_form, investment_objective, HamiltonianForm, LinearValue,
    TabulatedIntegrand, W2Penalty,
};
use pathmfc::measure::{EmpiricalControlMeasure, EmpiricalPathMeasure};
use pathmfc::pathspace::{PathGrid, TimeGrid};
use pathmfc::sde::builtin;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

const FORMS: [HamiltonianForm; 3] = [
    HamiltonianForm::MtBruteforce,
    HamiltonianForm::MMaps,
    HamiltonianForm::Esssup,
];

fn atoms(n: usize, seed: u64) -> EmpiricalPathMeasure {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = (0..n)
        .map(|_| PathGrid::constant(grid, &[rng.random_range(-1.0..1.0)]))
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    EmpiricalPathMeasure::new(paths, w.iter().map(|x| x / s).collect()).unwrap()
}

/// Max over all maps `atom -> action` of the weighted sum, by enumeration.
fn brute_force(values: &[Vec<f64>], p: &[f64]) -> f64 {
    let (n, q) = (values.len(), values[0].len());
    let mut best = f64::NEG_INFINITY;
    for code in 0..q.pow(n as u32) {
        let mut c = code;
        let mut v = 0.0;
        for i in 0..n {
            v += p[i] * values[i][c % q];
            c /= q;
        }
        best = best.max(v);
    }
    best
}

#[test]
fn three_forms_agree_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let n = 1 + trial % 5;
        let mu = atoms(n, trial as u64);
        let actions: Vec<Vec<f64>> = (0..3).map(|k| vec![k as f64]).collect();
        let values: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let f = TabulatedIntegrand {
            actions: actions.clone(),
            values: values.clone(),
        };
        let set = ActionSet::finite(actions).unwrap();
        let law = mu.full_view();
        let got: Vec<f64> = FORMS
            .iter()
            .map(|form| hamiltonian_sup_finite(&f, &law, &set, *form).unwrap().value)
            .collect();
        assert_eq!(got[0], got[1]);
        assert_eq!(got[1], got[2]);
        assert!((got[0] - brute_force(&values, mu.weights())).abs() < 1e-12);
        let rnd = hamiltonian_sup_randomized(&f, &law, &set, &[0.3, 0.7]).unwrap();
        assert!(rnd.value >= got[0] - 1e-12);
    }
}

#[test]
fn randomization_never_hurts_with_law_dependence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..10 {
        let mu = atoms(2, 100 + trial);
        let target = EmpiricalControlMeasure::uniform(
            (0..3).map(|_| vec![rng.random_range(0.0..1.0)]).collect(),
        )
        .unwrap();
        let f = W2Penalty { target };
        let set = ActionSet::scalar_finite(&[0.0, 0.5, 1.0]);
        let det =
            hamiltonian_sup_finite(&f, &mu.full_view(), &set, HamiltonianForm::MMaps).unwrap();
        let rnd =
            hamiltonian_sup_randomized(&f, &mu.full_view(), &set, &[0.25, 0.25, 0.5]).unwrap();
        assert!(rnd.value >= det.value - 1e-12);
    }
}

fn grid_search(
    p: &[f64],
    t: f64,
    r: f64,
    a2: &[f64],
    c: &SpectralOperator,
    m: &SpectralOperator,
    lo: &[f64],
    hi: &[f64],
) -> Vec<f64> {
    // coordinatewise separable, so search each coordinate on a fine grid
    (0..p.len())
        .map(|k| {
            let steps = 200_000;
            (0..=steps)
                .map(|s| lo[k] + (hi[k] - lo[k]) * s as f64 / steps as f64)
                .map(|u| {
                    let mut v = vec![0.0; p.len()];
                    v[k] = u;
                    (u, investment_objective(&v, p, t, r, a2, c, m))
                })
                .fold((0.0, f64::NEG_INFINITY), |best, x| {
                    if x.1 > best.1 {
                        x
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

fn projected_gradient(
    p: &[f64],
    t: f64,
    r: f64,
    a2: &[f64],
    c: &SpectralOperator,
    m: &SpectralOperator,
    lo: &[f64],
    hi: &[f64],
) -> Vec<f64> {
    let disc = (-r * t).exp();
    let mut u = vec![0.0; p.len()];
    for _ in 0..5000 {
        for k in 0..p.len() {
            let g = c.eigenvalues[k] * p[k] - disc * (a2[k] + 2.0 * m.eigenvalues[k] * u[k]);
            u[k] = (u[k] + 0.05 * g).clamp(lo[k], hi[k]);
        }
    }
    u
}

#[test]
fn investment_maximizer_matches_numerical_search() {
    let c = SpectralOperator::bounded(vec![1.0, 0.5, 2.0]);
    let m = SpectralOperator::bounded(vec![1.0, 2.0, 0.5]);
    let (lo, hi) = (vec![-1.0; 3], vec![1.0; 3]);
    let set = ActionSet::boxed(lo.clone(), hi.clone()).unwrap();
    let (p, a2, t, r) = ([0.8, -1.2, 3.0], [0.1, 0.0, -0.2], 0.4, 0.05);
    let s = investment_hamiltonian_closed_form(&p, t, r, &a2, &c, &m, &set).unwrap();
    let g = grid_search(&p, t, r, &a2, &c, &m, &lo, &hi);
    let pg = projected_gradient(&p, t, r, &a2, &c, &m, &lo, &hi);
    for k in 0..3 {
        assert!((s.u_star[k] - g[k]).abs() <= 1e-4);
        assert!((s.u_star[k] - pg[k]).abs() <= 1e-8);
    }
    assert_eq!(s.u_star[2], 1.0);
    assert!(s.unconstrained_value.is_none());
    assert!((s.value - investment_objective(&s.u_star, &p, t, r, &a2, &c, &m)).abs() < 1e-14);
}

#[test]
fn interior_investment_value_is_quadratic() {
    let c = SpectralOperator::bounded(vec![1.0, 1.0]);
    let m = SpectralOperator::bounded(vec![2.0, 1.0]);
    let set = ActionSet::boxed(vec![-10.0; 2], vec![10.0; 2]).unwrap();
    let (t, r) = (0.5, 0.1);
    let s =
        investment_hamiltonian_closed_form(&[1.0, -0.5], t, r, &[0.0, 0.0], &c, &m, &set).unwrap();
    let want = (-r * t).exp() * (2.0 * s.u_star[0].powi(2) + s.u_star[1].powi(2));
    assert!((s.unconstrained_value.unwrap() - want).abs() < 1e-12);
    assert!((s.value - want).abs() < 1e-12);
}

fn linear_setup() -> (pathmfc::sde::ModelSpec, LinearValue, EmpiricalPathMeasure) {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let (lambda, beta, a1, ag) = (vec![1.0, 0.5], 0.3, vec![1.0, -0.5], vec![0.5, 2.0]);
    let model = builtin::linear_costs(grid, lambda.clone(), beta, 0.7, 0.4, a1.clone(), ag.clone());
    let w = LinearValue {
        horizon: 1.0,
        lambda,
        beta,
        a1,
        ag,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let paths = (0..6)
        .map(|_| {
            PathGrid::from_fn(grid, 2, |_| {
                vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            })
            .unwrap()
        })
        .collect();
    (model, w, EmpiricalPathMeasure::uniform(paths).unwrap())
}

#[test]
fn the_linear_value_solves_the_equation() {
    let (model, w, mu) = linear_setup();
    for t in [0.0, 0.5, 0.95] {
        for form in FORMS {
            let r = hjb_residual(&w, &model, t, &mu, form).unwrap();
            assert!(r.residual.abs() < 1e-10, "{r:?}");
            assert!(r.terminal_gap < 1e-12);
        }
    }
}

#[test]
fn wrong_candidates_leave_a_residual() {
    let (model, w, mu) = linear_setup();
    let doubled = Scaled {
        inner: Arc::new(w),
        factor: 2.0,
    };
    let r = hjb_residual(&doubled, &model, 0.5, &mu, HamiltonianForm::MMaps).unwrap();
    assert!(r.residual.abs() > 1e-3);
    assert!(r.terminal_gap > 1e-3);
    let c = Constant { value: 1.0, dim: 2 };
    let r = hjb_residual(&c, &model, 0.5, &mu, HamiltonianForm::MMaps).unwrap();
    let running = mu
        .view(10)
        .expect(|x| 1.0 * x.current()[0] - 0.5 * x.current()[1]);
    assert!((r.residual - running).abs() < 1e-12, "{r:?}");
}
