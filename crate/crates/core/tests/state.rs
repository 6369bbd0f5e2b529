use pathmfc::measure::{stopped_measure, wasserstein2, EmpiricalPathMeasure, W2Mode};
use pathmfc::pathspace::{stop, sup_norm, PathGrid, TimeGrid};
use proptest::prelude::*;

fn grid() -> TimeGrid {
    TimeGrid::new(1.0, 8).unwrap()
}

fn arb_measure(n: usize) -> impl Strategy<Value = EmpiricalPathMeasure> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 9), n).prop_map(|rows| {
        let atoms = rows
            .into_iter()
            .map(|r| {
                let mut it = r.into_iter();
                PathGrid::from_fn(grid(), 1, |_| vec![it.next().unwrap()]).unwrap()
            })
            .collect();
        EmpiricalPathMeasure::uniform(atoms).unwrap()
    })
}

fn exact(a: &EmpiricalPathMeasure, b: &EmpiricalPathMeasure) -> f64 {
    wasserstein2(a, b, W2Mode::Exact).unwrap().distance
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn w2_is_a_metric(a in arb_measure(4), b in arb_measure(4), c in arb_measure(4)) {
        prop_assert!(exact(&a, &a) <= 1e-12);
        prop_assert!((exact(&a, &b) - exact(&b, &a)).abs() <= 1e-12);
        prop_assert!(exact(&a, &c) <= exact(&a, &b) + exact(&b, &c) + 1e-9);
    }

    #[test]
    fn stopping_is_idempotent_and_contracts(a in arb_measure(3), b in arb_measure(3), t in 0.0f64..1.0) {
        let sa = stopped_measure(&a, t).unwrap();
        let again = stopped_measure(&sa, t).unwrap();
        prop_assert_eq!(again.atoms(), sa.atoms());
        let sb = stopped_measure(&b, t).unwrap();
        prop_assert!(exact(&sa, &sb) <= exact(&a, &b) + 1e-12);
    }

    #[test]
    fn stopped_paths_never_exceed_the_original(a in arb_measure(1), t in 0.0f64..1.0) {
        let x = &a.atoms()[0];
        prop_assert!(sup_norm(&stop(x, t).unwrap()) <= sup_norm(x));
    }
}

#[test]
fn sliced_is_seeded_and_vanishes_on_the_diagonal() {
    let atoms: Vec<PathGrid> = (0..5)
        .map(|i| PathGrid::from_fn(grid(), 2, |t| vec![i as f64 * t, -(i as f64)]).unwrap())
        .collect();
    let a = EmpiricalPathMeasure::uniform(atoms.clone()).unwrap();
    let b = EmpiricalPathMeasure::uniform(
        atoms
            .iter()
            .map(|x| {
                PathGrid::from_fn(grid(), 2, |t| {
                    let j = grid().snap(t).unwrap();
                    vec![x.at(j)[0] + 0.5, x.at(j)[1]]
                })
                .unwrap()
            })
            .collect(),
    )
    .unwrap();
    let mode = W2Mode::Sliced {
        projections: 64,
        seed: 3,
    };
    assert_eq!(wasserstein2(&a, &a, mode).unwrap().distance, 0.0);
    let first = wasserstein2(&a, &b, mode).unwrap();
    assert_eq!(first, wasserstein2(&a, &b, mode).unwrap());
    assert!(first.distance > 0.0);
    assert_eq!(first.projections, Some(64));
}
