//! Acceptance suite. Prints one line per criterion and exits non-zero when
//! any criterion fails. Every reference value is computed here, independently
//! of the library code under test.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use pathmfc::calculus::{
    ito_verify, ito_verify_many, measure_derivative_field, measure_derivative_field_richardson,
    zoo, zoo_by_tag, CylindricalFunctional, Linear,
};
use pathmfc::control::{
    dpp_check, law_invariance_check, ActionSet, CheckStatus, ControlPolicy, PolicyKind,
};
use pathmfc::hilbert::SpectralOperator;
use pathmfc::hjb::{
    hamiltonian_sup_finite, hamiltonian_sup_randomized, investment_hamiltonian_closed_form,
    HamiltonianForm, TabulatedIntegrand, W2Penalty,
};
use pathmfc::measure::{wasserstein2, EmpiricalControlMeasure, EmpiricalPathMeasure, W2Mode};
use pathmfc::pathspace::{stop, PathGrid, TimeGrid};
use pathmfc::sde::{
    builtin, flow_restart_check, integrate, integrate_with, integrate_yosida, s2_distance, Init,
    InitialLaw, IntegrateOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

/// Name, check and runtime budget in seconds.
type Criterion = (&'static str, fn() -> Outcome, Option<u64>);

const SEED: u64 = 7_031_985;

fn grid(steps: usize) -> TimeGrid {
    TimeGrid::new(1.0, steps).unwrap()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample mean, its standard error, sample variance and the delta-method
/// standard error of the sample variance.
fn moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let m = mean(x);
    let c2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let c4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let var = c2 * n / (n - 1.0);
    (m, (var / n).sqrt(), var, ((c4 - c2 * c2) / n).sqrt())
}

fn sci(x: &[f64]) -> String {
    let v: Vec<String> = x.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", v.join(", "))
}

fn uniform_paths(rng: &mut ChaCha8Rng, g: TimeGrid, n: usize, d: usize) -> Vec<PathGrid> {
    (0..n)
        .map(|_| {
            let mut x = PathGrid::zeros(g, d);
            for j in 0..g.nodes() {
                for v in x.at_mut(j) {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            x
        })
        .collect()
}

fn sup_norm_sq(a: &PathGrid, b: &PathGrid) -> f64 {
    (0..a.grid().nodes())
        .map(|j| {
            a.at(j)
                .iter()
                .zip(b.at(j))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

fn c1_ou() -> Outcome {
    let (lambda, s0, n) = (1.0, 0.5, 4000);
    let model = builtin::ou(grid(1000), lambda, s0);
    let e = integrate(
        &model,
        &Init::constant(vec![0.0]),
        &ControlPolicy::none(),
        0.0,
        n,
        SEED,
    )?;
    let x = e.marginal(1000, 0);
    let exact = s0 * s0 * (1.0 - (-2.0f64).exp()) / 2.0;
    let (m, se, v, vse) = moments(&x);
    Ok((
        m.abs() <= 3.0 * se && (v - exact).abs() <= 3.0 * vse,
        format!(
            "mean {m:.2e} (3se {:.2e}), var {v:.5} vs {exact:.5} (3se {:.2e})",
            3.0 * se,
            3.0 * vse
        ),
    ))
}

fn c2_mean_field() -> Outcome {
    let steps = 1000;
    let dt = 1.0 / steps as f64;
    let model = builtin::mean_reversion(grid(steps), 1.0, 0.0, 0.0);
    let init = Init::TwoPoint {
        a: vec![-1.0],
        b: vec![1.0],
    };
    let e = integrate(&model, &init, &ControlPolicy::none(), 0.0, 200, SEED)?;
    let (mut drift, mut dev) = (0.0f64, 0.0f64);
    for j in 0..=steps {
        let xs: Vec<f64> = e.particles.iter().map(|p| p.at(j)[0]).collect();
        drift = drift.max(mean(&xs).abs());
        // with the mean pinned at 0, dx = -x dt
        let decay = (-(j as f64) * dt).exp();
        for p in &e.particles {
            dev = dev.max((p.at(j)[0] - decay * p.at(0)[0]).abs());
        }
    }
    Ok((
        drift <= 1e-12 && dev <= dt,
        format!("max |mean| {drift:.1e}, max deviation {dev:.2e} (dt {dt})"),
    ))
}

fn c3_weak_order() -> Outcome {
    let exact = (-1.0f64).exp();
    let mut errors = Vec::new();
    for (m, r) in [(10, 4), (20, 2), (40, 1)] {
        let model = builtin::weak_order(grid(m), 1.0, 0.2);
        let opts = IntegrateOptions::new(0.0, 20_000, SEED).substeps(r);
        let e = integrate_with(
            &model,
            &Init::constant(vec![1.0]),
            &ControlPolicy::none(),
            &opts,
        )?;
        errors.push((mean(&e.marginal(m, 0)) - exact).abs());
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
    Ok((
        ratios.iter().all(|r| (0.3..=0.7).contains(r)),
        format!("errors {}, ratios {ratios:.3?}", sci(&errors)),
    ))
}

/// `max_k E|Y_k - X_k|^2` square-rooted, with `X_{k+1} = f (X_k + s0 dW_k)` and
/// `Y_{k+1} = f_n (Y_k + s0 dW_k)`, by propagating the joint mean and covariance.
fn scalar_yosida_bound(lambda: f64, n: f64, s0: f64, x0: f64, steps: usize) -> f64 {
    let dt = 1.0 / steps as f64;
    let a = -lambda;
    let f = (a * dt).exp();
    let fy = (n * a / (n - a) * dt).exp();
    let (mut my, mut mx) = (x0, x0);
    let (mut cyy, mut cxx, mut cxy) = (0.0, 0.0, 0.0);
    let q = s0 * s0 * dt;
    let mut worst = 0.0f64;
    for _ in 0..steps {
        my *= fy;
        mx *= f;
        cyy = fy * fy * (cyy + q);
        cxx = f * f * (cxx + q);
        cxy = fy * f * (cxy + q);
        worst = worst.max((my - mx).powi(2) + cyy + cxx - 2.0 * cxy);
    }
    worst.sqrt()
}

fn c4_yosida() -> Outcome {
    let (lambda, s0, x0, steps) = (1.0, 0.5, 1.0, 200);
    let model = builtin::ou(grid(steps), lambda, s0);
    let init = Init::constant(vec![x0]);
    let opts = IntegrateOptions::new(0.0, 2000, SEED);
    let none = ControlPolicy::none();
    let exact = integrate_with(&model, &init, &none, &opts)?;
    let mut d = Vec::new();
    for n in [2.0, 8.0, 32.0] {
        d.push(s2_distance(
            &integrate_yosida(&model, n, &init, &none, &opts)?,
            &exact,
        )?);
    }
    let bound = scalar_yosida_bound(lambda, 32.0, s0, x0, steps);
    Ok((
        d.windows(2).all(|w| w[1] < w[0]) && d[2] <= 10.0 * bound,
        format!("distances {}, oracle at n=32 {bound:.3e}", sci(&d)),
    ))
}

fn c5_flow() -> Outcome {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for model in builtin::all_models(grid(100)) {
        let init = Init::Gaussian {
            mean: vec![0.2; model.d()],
            std: 0.5,
        };
        for s in [0.0, 0.3, 0.5, 1.0] {
            let r = flow_restart_check(&model, &init, &ControlPolicy::none(), 0.0, s, 64, SEED)?;
            worst = worst.max(r.max_particle_gap);
            runs += 1;
        }
    }
    Ok((worst == 0.0, format!("{runs} restarts, max gap {worst:e}")))
}

fn c6_non_anticipativity() -> Outcome {
    let t0 = 0.3;
    let mut identical = true;
    let mut checked = 0;
    for model in [
        builtin::mean_reversion(grid(100), 1.0, 0.3, 1.0),
        builtin::controlled_mean_field(grid(100), 1.0, 0.3, 0.1),
    ] {
        let history = Init::BrownianHistory {
            x0: vec![0.0; model.d()],
            std: 1.0,
        };
        let paths: Vec<PathGrid> = (0..64)
            .map(|i| history.sample(i, SEED, &model.grid, 1))
            .collect();
        let stopped = paths
            .iter()
            .map(|p| stop(p, t0))
            .collect::<Result<Vec<_>, _>>()?;
        let policy = ControlPolicy::constant(vec![1.0]);
        let policy = if model.actions.contains(&[1.0]) {
            policy
        } else {
            ControlPolicy::none()
        };
        let a = integrate(&model, &Init::atoms(paths), &policy, t0, 64, SEED + 1)?;
        let b = integrate(&model, &Init::atoms(stopped), &policy, t0, 64, SEED + 1)?;
        for (p, q) in a.particles.iter().zip(&b.particles) {
            identical &= p
                .raw()
                .iter()
                .zip(q.raw())
                .all(|(x, y)| x.to_bits() == y.to_bits());
        }
        checked += a.particles.len();
    }
    Ok((
        identical,
        format!("{checked} particles compared bit for bit"),
    ))
}

fn c7_wasserstein() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let g = grid(10);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let n = 1 + k % 6;
        let a = uniform_paths(&mut rng, g, n, 2);
        let b = uniform_paths(&mut rng, g, n, 2);
        let got = wasserstein2(
            &EmpiricalPathMeasure::uniform(a.clone())?,
            &EmpiricalPathMeasure::uniform(b.clone())?,
            W2Mode::Exact,
        )?
        .distance;
        // exhaustive search over permutations in lexicographic order
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        loop {
            let c: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| sup_norm_sq(&a[i], &b[j]))
                .sum();
            best = best.min(c);
            let Some(i) = (0..n.saturating_sub(1))
                .rev()
                .find(|&i| perm[i] < perm[i + 1])
            else {
                break;
            };
            let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
            perm.swap(i, j);
            perm[i + 1..].reverse();
        }
        worst = worst.max((got - (best / n as f64).sqrt()).abs());
    }
    let w = |x: &EmpiricalPathMeasure, y: &EmpiricalPathMeasure| {
        wasserstein2(x, y, W2Mode::Exact).map(|r| r.distance)
    };
    let (mut tri, mut sym, mut selfd) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    let mut positive = true;
    for _ in 0..1000 {
        let ms: Vec<EmpiricalPathMeasure> = (0..3)
            .map(|_| {
                let n = rng.random_range(1..=4);
                let paths = uniform_paths(&mut rng, g, n, 1);
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = w.iter().sum();
                EmpiricalPathMeasure::new(paths, w.iter().map(|v| v / s).collect())
            })
            .collect::<Result<_, _>>()?;
        let (ab, bc, ac) = (w(&ms[0], &ms[1])?, w(&ms[1], &ms[2])?, w(&ms[0], &ms[2])?);
        tri = tri.max(ac - ab - bc);
        sym = sym.max((ab - w(&ms[1], &ms[0])?).abs());
        selfd = selfd.max(w(&ms[0], &ms[0])?);
        // continuous random supports are distinct almost surely
        positive &= ab > 0.0;
    }
    Ok((
        worst <= 1e-10 && tri <= 1e-10 && sym <= 1e-12 && selfd <= 1e-12 && positive,
        format!("brute-force gap {worst:.1e}; triangle excess {tri:.1e}, symmetry {sym:.1e}, self {selfd:.1e}"),
    ))
}

fn c8_derivatives() -> Outcome {
    let (d, atoms, eps, tol) = (2, 8, 1e-5, 1e-5);
    let g = grid(20);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let paths = uniform_paths(&mut rng, g, atoms, d);
    let w: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|v| v / total).collect();
    let mu = EmpiricalPathMeasure::new(paths.clone(), p.clone())?;
    let h = [1.0, -0.5];
    let q = [1.0, 2.0];
    let dot = |x: &[f64]| x[0] * h[0] + x[1] * h[1];
    let mut ok = true;
    let mut lines = Vec::new();
    for tag in ["linear", "mean_square", "quadratic_diagonal"] {
        let phi = zoo_by_tag(tag, d)?;
        let (mut plain, mut rich) = (0.0f64, 0.0f64);
        for t in [0.0, 0.5, 1.0] {
            let j = g.snap(t)?;
            let m: f64 = paths.iter().zip(&p).map(|(x, w)| w * dot(x.at(j))).sum();
            let exact: Vec<Vec<f64>> = paths
                .iter()
                .map(|x| match tag {
                    "linear" => h.to_vec(),
                    "mean_square" => h.iter().map(|v| 2.0 * m * v).collect(),
                    _ => x.at(j).iter().zip(q).map(|(v, q)| 2.0 * q * v).collect(),
                })
                .collect();
            let gap = |f: Vec<pathmfc::hilbert::HilbertVec>| {
                f.iter()
                    .zip(&exact)
                    .flat_map(|(a, b)| a.0.iter().zip(b).map(|(x, y)| (x - y).abs()))
                    .fold(0.0, f64::max)
            };
            plain = plain.max(gap(measure_derivative_field(
                phi.as_ref(),
                t,
                &mu,
                Some(eps),
            )?));
            rich = rich.max(gap(measure_derivative_field_richardson(
                phi.as_ref(),
                t,
                &mu,
                Some(eps),
            )?));
        }
        // a plain error under 1e-9 is roundoff; extrapolation cannot improve it
        ok &= rich <= tol && (rich <= plain || plain <= 1e-9);
        lines.push(format!("{tag} {plain:.1e}->{rich:.1e}"));
    }
    Ok((
        ok,
        format!("plain->richardson max error: {}", lines.join(", ")),
    ))
}

fn c9_ito() -> Outcome {
    let (steps, n, d) = (1000, 4000, 2);
    let dt = 1.0 / steps as f64;
    let g = grid(steps);
    let phis: Vec<Arc<dyn CylindricalFunctional>> =
        zoo(d).into_iter().filter(|p| p.regular()).collect();
    let refs: Vec<&dyn CylindricalFunctional> = phis.iter().map(|p| p.as_ref()).collect();
    let init = Init::Gaussian {
        mean: vec![0.3, -0.2],
        std: 0.5,
    };
    let mut reports = Vec::new();
    for (k, model) in builtin::ito_pairs(g, d).iter().enumerate() {
        reports.extend(ito_verify_many(
            &refs,
            model,
            &init,
            0.0,
            1.0,
            n,
            SEED + k as u64,
        )?);
    }
    let ou = builtin::ou(g, 1.0, 0.5);
    let mild = ito_verify(
        &Linear { h: vec![1.0] },
        &ou,
        &Init::Gaussian {
            mean: vec![1.0],
            std: 0.3,
        },
        0.0,
        1.0,
        n,
        SEED,
    )?;
    reports.push(mild);
    let mut ok = true;
    let mut worst = 0.0f64;
    for r in &reports {
        let slack = (r.lhs - r.rhs).abs() - 3.0 * r.stderr - 10.0 * dt;
        worst = worst.max(slack + 10.0 * dt);
        ok &= slack <= 0.0;
    }
    // closed forms: a constant drift c moves phi_1 by <c, h>; under OU the
    // mean of Linear{1} decays like e^{-t}
    let c = [0.5, -0.25];
    let lin = reports
        .iter()
        .find(|r| r.model == "constant_drift" && r.functional == "linear")
        .ok_or("missing linear/constant_drift")?;
    let shift_gap = (lin.lhs - (c[0] - 0.5 * c[1])).abs();
    let mild_gap = (reports.last().unwrap().lhs - ((-1.0f64).exp() - 1.0)).abs();
    let mild_se = 0.3 / (n as f64).sqrt();
    ok &= shift_gap <= 1e-9 && mild_gap <= 3.0 * mild_se + 10.0 * dt;
    Ok((
        ok,
        format!(
            "{} runs, max |res| - 3se {worst:.2e} (10dt {:.0e}); drift shift gap {shift_gap:.0e}, OU mean gap {mild_gap:.1e}",
            reports.len(),
            10.0 * dt
        ),
    ))
}

fn c10_dpp() -> Outcome {
    let steps = 100;
    let dt = 1.0 / steps as f64;
    let model = builtin::quadratic(grid(steps), 1.0, 0.5);
    let init = Init::Gaussian {
        mean: vec![0.5],
        std: 0.5,
    };
    // dx = -x dt + s0 dB: E x_t^2 = e^{-2t} (m^2 + v) + s0^2 (1 - e^{-2t}) / 2
    let (second, s0sq) = (0.5, 0.25);
    let a = (1.0 - (-2.0f64).exp()) / 2.0;
    let closed = -(second * a
        + s0sq / 2.0 * (1.0 - a)
        + second * (-2.0f64).exp()
        + s0sq / 2.0 * (1.0 - (-2.0f64).exp()));
    let mut ok = true;
    let mut parts = Vec::new();
    for s in [0.25, 0.5, 0.75] {
        let r = dpp_check(
            &model,
            &init,
            &[ControlPolicy::none()],
            0.0,
            s,
            4000,
            SEED,
            4,
        )?;
        ok &= r.gap.abs() <= 3.0 * r.stderr && (r.lhs - closed).abs() <= 3.0 * r.stderr + 10.0 * dt;
        parts.push(format!(
            "s={s}: gap {:.1e} (3se {:.1e})",
            r.gap,
            3.0 * r.stderr
        ));
        if s == 0.25 {
            parts.push(format!("value {:.4} vs closed form {closed:.4}", r.lhs));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn c11_law_invariance() -> Outcome {
    let model = builtin::controlled_mean_field(grid(50), 1.0, 0.3, 0.1);
    let a = Init::RademacherUniform { scale: 1.0 };
    let b = Init::RademacherSign { scale: 1.0 };
    let c = |tag: &str, u: f64| ControlPolicy::new(tag, PolicyKind::Constant { u: vec![u] });
    let fb = |tag: &str, k: f64| {
        ControlPolicy::new(
            tag,
            PolicyKind::LinearFeedback {
                gain: vec![k],
                offset: vec![0.0],
            },
        )
    };
    let families = vec![
        vec![c("zero", 0.0)],
        vec![c("down", -1.0), c("zero", 0.0), c("up", 1.0)],
        vec![fb("strong", -1.0), fb("weak", -0.5)],
        vec![
            c("zero", 0.0),
            ControlPolicy::new(
                "mean",
                PolicyKind::MeanFeedback {
                    gain: vec![-1.0],
                    offset: vec![0.0],
                },
            ),
        ],
    ];
    let mut ok = true;
    let mut worst = 0.0f64;
    for fam in &families {
        let r = law_invariance_check(&model, &a, &b, fam, 0.0, 4000, SEED, SEED + 1)?;
        ok &= r.status == CheckStatus::Pass && r.gap.abs() <= 3.0 * r.stderr;
        worst = worst.max(r.gap.abs() / r.stderr);
    }
    let shifted = Init::Constant { value: vec![1.0] };
    let guard = law_invariance_check(
        &model,
        &a,
        &shifted,
        &families[0],
        0.0,
        4000,
        SEED,
        SEED + 1,
    )?;
    ok &= guard.status == CheckStatus::Inconclusive;
    Ok((
        ok,
        format!(
            "4 families, max |gap|/se {worst:.2}; guard rail {:?}",
            guard.status
        ),
    ))
}

fn c12_hamiltonian() -> Outcome {
    let g = grid(1);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let forms = [
        HamiltonianForm::MtBruteforce,
        HamiltonianForm::MMaps,
        HamiltonianForm::Esssup,
    ];
    let (mut unequal, mut oracle, mut deficit) = (0, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..50 {
        let k = rng.random_range(1..=4);
        let q = rng.random_range(2..=5);
        let paths: Vec<PathGrid> = (0..k)
            .map(|_| PathGrid::constant(g, &[rng.random_range(-1.0..1.0)]))
            .collect();
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let p: Vec<f64> = w.iter().map(|v| v / w.iter().sum::<f64>()).collect();
        let mu = EmpiricalPathMeasure::new(paths, p.clone())?;
        let actions: Vec<Vec<f64>> = (0..q).map(|a| vec![a as f64]).collect();
        let values: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..q).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        // with no law dependence the sup splits atom by atom
        let expected: f64 = values
            .iter()
            .zip(&p)
            .map(|(row, w)| w * row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .sum();
        let f = TabulatedIntegrand {
            actions: actions.clone(),
            values,
        };
        let set = ActionSet::finite(actions)?;
        let law = mu.full_view();
        let got = forms
            .iter()
            .map(|form| hamiltonian_sup_finite(&f, &law, &set, *form).map(|v| v.value))
            .collect::<Result<Vec<_>, _>>()?;
        unequal += got.iter().any(|v| v.to_bits() != got[0].to_bits()) as usize;
        oracle = oracle.max((got[0] - expected).abs());
        deficit =
            deficit.max(got[0] - hamiltonian_sup_randomized(&f, &law, &set, &[0.5, 0.5])?.value);
    }
    let mu = EmpiricalPathMeasure::dirac(PathGrid::constant(g, &[0.0]));
    let set = ActionSet::scalar_finite(&[0.0, 1.0]);
    let f = W2Penalty {
        target: EmpiricalControlMeasure::uniform(vec![vec![0.0], vec![1.0]])?,
    };
    let det = hamiltonian_sup_finite(&f, &mu.full_view(), &set, HamiltonianForm::MMaps)?.value;
    let rnd = hamiltonian_sup_randomized(&f, &mu.full_view(), &set, &[0.5, 0.5])?.value;
    // a single atom picks one action: W2(delta_u, uniform{0,1}) = sqrt(1/2);
    // splitting the atom in half reproduces the target exactly
    let penalty_ok = (det + 0.5f64.sqrt()).abs() <= 1e-12 && rnd.abs() <= 1e-12;
    Ok((
        unequal == 0 && oracle <= 1e-12 && deficit <= 1e-12 && penalty_ok,
        format!("50 instances, {unequal} unequal, oracle gap {oracle:.0e}; W2 penalty det {det:.4} < randomized {rnd:.4}"),
    ))
}

fn c13_investment() -> Outcome {
    let d = 3;
    let points = 20_001;
    let h = 2.0 / (points - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut value_ratio, mut pg_gap) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        let m: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a2: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let (t, r): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..0.1));
        let disc = (-r * t).exp();
        let obj = |k: usize, u: f64| c[k] * u * p[k] - disc * (a2[k] * u + m[k] * u * u);
        let set = ActionSet::boxed(vec![-1.0; d], vec![1.0; d])?;
        let sol = investment_hamiltonian_closed_form(
            &p,
            t,
            r,
            &a2,
            &SpectralOperator::bounded(c.clone()),
            &SpectralOperator::bounded(m.clone()),
            &set,
        )?;
        let mut grid_value = 0.0;
        for k in 0..d {
            grid_value += (0..points)
                .map(|i| obj(k, -1.0 + h * i as f64))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let bound: f64 = m.iter().map(|m| disc * m * h * h / 4.0).sum::<f64>() + 1e-12;
        // the grid can neither beat the maximum nor miss it by more than the bound
        value_ratio = value_ratio.max((sol.value - grid_value).abs() / bound);
        let step = 0.25 / (disc * m.iter().cloned().fold(0.0, f64::max));
        let mut u = vec![0.0; d];
        for _ in 0..2000 {
            for k in 0..d {
                let grad = c[k] * p[k] - disc * (a2[k] + 2.0 * m[k] * u[k]);
                u[k] = (u[k] + step * grad).clamp(-1.0, 1.0);
            }
        }
        pg_gap = pg_gap.max(
            u.iter()
                .zip(&sol.u_star)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    Ok((
        value_ratio <= 1.0 && pg_gap <= 1e-8,
        format!(
            "100 instances, grid gap / bound {value_ratio:.3}, projected-gradient gap {pg_gap:.1e}"
        ),
    ))
}

fn run_suite(
    out: &Path,
    threads: usize,
) -> Result<(bool, Value, Duration), Box<dyn std::error::Error>> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml");
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_pathmfc"))
        .arg("suite")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .stdout(std::process::Stdio::null())
        .status()?;
    let elapsed = start.elapsed();
    let mut report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json"))?)?;
    report
        .as_object_mut()
        .ok_or("report is not an object")?
        .remove("wall_time_seconds");
    Ok((status.success(), report, elapsed))
}

fn c14_suite() -> Outcome {
    let dir = tempfile::tempdir()?;
    let (ok_a, a, ta) = run_suite(&dir.path().join("a"), 1)?;
    let (ok_b, b, tb) = run_suite(&dir.path().join("b"), 2)?;
    let limit = Duration::from_secs(600);
    Ok((
        ok_a && ok_b && a == b && ta < limit && tb < limit,
        format!(
            "exit 0: {}, reports identical across --threads 1/2: {}, wall {:.0}s / {:.0}s",
            ok_a && ok_b,
            a == b,
            ta.as_secs_f64(),
            tb.as_secs_f64()
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 14] = [
        ("OU oracle", c1_ou, Some(10)),
        ("mean-field coupling oracle", c2_mean_field, Some(5)),
        ("weak order", c3_weak_order, Some(30)),
        ("Yosida convergence", c4_yosida, Some(20)),
        ("flow property", c5_flow, Some(10)),
        ("non-anticipativity", c6_non_anticipativity, None),
        ("W2 exact vs brute force", c7_wasserstein, None),
        ("discrete measure derivative", c8_derivatives, Some(5)),
        ("functional Ito formula", c9_ito, Some(120)),
        ("DPP tower", c10_dpp, Some(60)),
        ("law invariance", c11_law_invariance, Some(60)),
        ("Hamiltonian three forms", c12_hamiltonian, Some(10)),
        ("investment Hamiltonian", c13_investment, Some(5)),
        ("full suite", c14_suite, None),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        let in_time = budget.is_none_or(|b| secs < b as f64);
        let pass = pass && in_time;
        let limit = budget.map_or(String::new(), |b| format!(" < {b}s"));
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{secs:.2}s{limit}]",
            if pass { "PASS" } else { "FAIL" }
        );
        failed += !pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
