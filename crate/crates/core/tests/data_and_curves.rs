use proptest::prelude::*;
use survkit::curves::{CurveRole, Interp, StepCurve};
use survkit::datamodel::{build_grid, event_matrix, life_table, read_csv, write_csv_to, CsvSchema, GridStrategy, TimeGrid};
use survkit::nonparam::{kaplan_meier, nelson_aalen};
use survkit::stacking::stack;

mod common;

fn arb_survival() -> impl Strategy<Value = StepCurve> {
    proptest::collection::vec(0.0f64..0.6, 1..12).prop_map(|h| {
        let grid = TimeGrid::new((1..=h.len()).map(|i| i as f64).collect()).unwrap();
        StepCurve::new(grid, h, CurveRole::Hazard, Interp::ForwardFill).unwrap().convert(CurveRole::Survival).unwrap()
    })
}

proptest! {
    #[test]
    fn life_table_counts_match_records(ds in common::arb_dataset(40)) {
        let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).unwrap();
        let lt = life_table(&ds, &grid);
        prop_assert_eq!(lt.deaths.iter().sum::<u64>() as usize, ds.num_deaths());
        prop_assert_eq!(lt.at_risk[0] as usize, ds.records().iter().filter(|r| r.time >= grid.tau(1)).count());
        prop_assert!(lt.at_risk.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(event_matrix(&ds, &grid).column_sums(), lt.deaths.clone());
    }

    #[test]
    fn kappa_brackets_time(times in proptest::collection::btree_set(1u32..100, 1..20), t in 0.0f64..120.0) {
        let grid = TimeGrid::new(times.iter().map(|&v| f64::from(v)).collect()).unwrap();
        let k = grid.kappa(t);
        prop_assert!(grid.tau(k) <= t);
        if k < grid.len() {
            prop_assert!(t < grid.tau(k + 1));
        }
    }

    #[test]
    fn km_is_a_survival_curve(ds in common::arb_dataset(40)) {
        let km = kaplan_meier(&ds).unwrap();
        let s = km.survival();
        prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
        // KM and NA agree through S = Π(1 − h) and H = Σ h
        let na = nelson_aalen(&ds).unwrap();
        let h = km.hazards();
        let mut acc = 0.0;
        for (hv, nv) in h.iter().zip(&na.values) {
            acc += hv;
            prop_assert!((acc - nv).abs() < 1e-12);
        }
    }

    #[test]
    fn role_conversions_round_trip(s in arb_survival()) {
        for role in [CurveRole::Hazard, CurveRole::Cumhaz, CurveRole::Pmf, CurveRole::Cdf] {
            let back = s.convert(role).unwrap().convert(CurveRole::Survival).unwrap();
            for (a, b) in back.values.iter().zip(&s.values) {
                prop_assert!((a - b).abs() < 1e-10, "{role:?}: {a} vs {b}");
            }
        }
        let pmf = s.convert(CurveRole::Pmf).unwrap();
        let total: f64 = pmf.values.iter().sum::<f64>() + s.values.last().unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_stays_between_knots(s in arb_survival(), t in 0.0f64..15.0) {
        for interp in [Interp::ForwardFill, Interp::ConstantHazard, Interp::ConstantDensity] {
            let c = s.clone().with_interp(interp);
            let v = c.eval_survival(t);
            let l = c.grid.kappa(t);
            let hi = if l == 0 { 1.0 } else { c.values[l - 1] };
            let lo = if l < c.values.len() { c.values[l] } else { hi };
            prop_assert!(v <= hi + 1e-12 && v >= lo - 1e-12, "{interp:?} at {t}: {v} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn stacking_preserves_counts(ds in common::arb_dataset(30)) {
        let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).unwrap();
        let lt = life_table(&ds, &grid);
        let p = stack(&ds, &grid).unwrap();
        prop_assert_eq!(p.rows() as u64, lt.at_risk.iter().sum::<u64>());
        prop_assert_eq!(p.label_sums(), lt.deaths);
    }

    #[test]
    fn csv_round_trip(ds in common::arb_dataset(20)) {
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf, None).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        prop_assert_eq!(back.records(), ds.records());
    }
}

#[test]
fn grid_strategies_are_increasing() {
    let mut r = common::rng(1);
    let ds = common::random_dataset(&mut r, 60, 1, 1, false);
    for strategy in [GridStrategy::UniqueDeaths, GridStrategy::Uniform, GridStrategy::LogUniform, GridStrategy::Quantile] {
        let g = build_grid(&ds, strategy, Some(10)).unwrap();
        assert!(g.times().windows(2).all(|w| w[0] < w[1]), "{strategy:?}");
        assert!(g.len() <= 10 || strategy == GridStrategy::UniqueDeaths);
    }
}

#[test]
fn censoring_flip_swaps_labels() {
    let mut r = common::rng(2);
    let ds = common::random_dataset(&mut r, 30, 1, 1, true);
    let f = ds.flip_censoring();
    assert_eq!(f.num_deaths() + ds.num_deaths(), ds.len());
}
