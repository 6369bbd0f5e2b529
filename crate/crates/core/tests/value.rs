use pathmfc::control::{
    dpp_check, estimate_value, law_invariance_check, reward, CheckStatus, ControlPolicy,
    DppVariant, PolicyKind,
};
use pathmfc::pathspace::{stop, PathGrid, TimeGrid};
use pathmfc::sde::{builtin, integrate, Init, InitialLaw};
use pathmfc::stats::mean;

fn grid(m: usize) -> TimeGrid {
    TimeGrid::new(1.0, m).unwrap()
}

fn feedback_family() -> Vec<ControlPolicy> {
    vec![
        ControlPolicy::constant(vec![0.0]),
        ControlPolicy::constant(vec![-1.0]),
        ControlPolicy::new(
            "fb",
            PolicyKind::LinearFeedback {
                gain: vec![-1.0],
                offset: vec![0.0],
            },
        ),
    ]
}

#[test]
fn terminal_square_value() {
    let s0 = 0.8;
    let model = builtin::terminal_square(grid(50), s0);
    let e = integrate(
        &model,
        &Init::constant(vec![0.0]),
        &ControlPolicy::none(),
        0.0,
        20_000,
        11,
    )
    .unwrap();
    let r = reward(&model, &e);
    assert!((r.mean + s0 * s0).abs() <= 3.0 * r.stderr, "{r:?}");
    assert!(r.warnings.is_empty());
}

#[test]
fn quadratic_value_matches_moments() {
    // E x_t^2 = s0^2 (1 - e^{-2 lambda t}) / (2 lambda) from x_0 = 0
    let (lambda, s0, m) = (1.0, 0.5, 200);
    let model = builtin::quadratic(grid(m), lambda, s0);
    let e = integrate(
        &model,
        &Init::constant(vec![0.0]),
        &ControlPolicy::none(),
        0.0,
        20_000,
        12,
    )
    .unwrap();
    let r = reward(&model, &e);
    let second = |t: f64| s0 * s0 * (1.0 - (-2.0 * lambda * t).exp()) / (2.0 * lambda);
    let dt = 1.0 / m as f64;
    let running: f64 = (0..m).map(|j| second(j as f64 * dt) * dt).sum();
    let exact = -(running + second(1.0));
    assert!(
        (r.mean - exact).abs() <= 3.0 * r.stderr + dt,
        "{} vs {exact}",
        r.mean
    );
}

#[test]
fn dpp_holds_at_interior_split_times() {
    let model = builtin::quadratic(grid(40), 1.0, 0.5);
    let init = Init::Gaussian {
        mean: vec![0.5],
        std: 0.5,
    };
    for s in [0.25, 0.5, 0.75] {
        let r = dpp_check(&model, &init, &[ControlPolicy::none()], 0.0, s, 2000, 7, 4).unwrap();
        assert_eq!(r.variant, DppVariant::Exact);
        assert!(r.pass, "{r:?}");
    }
    let controlled = builtin::controlled_mean_field(grid(40), 1.0, 0.3, 0.1);
    let r = dpp_check(&controlled, &init, &feedback_family(), 0.0, 0.5, 2000, 7, 4).unwrap();
    assert_eq!(r.variant, DppVariant::Inequality);
    assert!(r.pass, "{r:?}");
}

#[test]
fn equal_laws_give_equal_values() {
    let model = builtin::controlled_mean_field(grid(20), 1.0, 0.3, 0.1);
    let r = law_invariance_check(
        &model,
        &Init::RademacherUniform { scale: 1.0 },
        &Init::RademacherSign { scale: 1.0 },
        &feedback_family(),
        0.0,
        4000,
        1,
        2,
    )
    .unwrap();
    assert_eq!(r.status, CheckStatus::Pass, "{r:?}");
}

#[test]
fn value_growth_is_bounded() {
    let model = builtin::controlled_mean_field(grid(20), 1.0, 0.3, 0.1);
    let c0 = model.cost_growth.unwrap().c0;
    let k = model.apriori_constant();
    for scale in [0.1, 1.0, 10.0] {
        let init = Init::constant(vec![scale]);
        let v = estimate_value(&model, &init, &feedback_family(), 0.0, 200, 3).unwrap();
        let bound = 3.0 * c0 * 2.0 * (1.0 + 2.0 * k * k) * (1.0 + scale * scale);
        assert!(v.value.mean.abs() <= bound);
    }
}

#[test]
fn value_depends_only_on_the_stopped_initial_path() {
    let model = builtin::controlled_mean_field(grid(20), 1.0, 0.3, 0.1);
    let history = Init::BrownianHistory {
        x0: vec![0.2],
        std: 1.0,
    };
    let paths: Vec<PathGrid> = (0..32)
        .map(|i| history.sample(i, 5, &model.grid, 1))
        .collect();
    let stopped: Vec<PathGrid> = paths.iter().map(|p| stop(p, 0.4).unwrap()).collect();
    let a = estimate_value(&model, &Init::atoms(paths), &feedback_family(), 0.4, 32, 9).unwrap();
    let b = estimate_value(
        &model,
        &Init::atoms(stopped),
        &feedback_family(),
        0.4,
        32,
        9,
    )
    .unwrap();
    assert_eq!(a.value.mean.to_bits(), b.value.mean.to_bits());
    assert_eq!(a.best, b.best);
}

#[test]
fn the_best_member_beats_every_other_member() {
    let model = builtin::controlled_mean_field(grid(20), 1.0, 0.3, 0.1);
    let v = estimate_value(
        &model,
        &Init::Gaussian {
            mean: vec![1.0],
            std: 0.3,
        },
        &feedback_family(),
        0.0,
        500,
        4,
    )
    .unwrap();
    let means: Vec<f64> = v.members.iter().map(|m| m.mean).collect();
    assert!(means.iter().all(|m| *m <= v.value.mean));
    assert!(mean(&means) <= v.value.mean);
}
