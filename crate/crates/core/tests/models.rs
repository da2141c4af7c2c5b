use proptest::prelude::*;
use survkit::autodiff::{Activation, NetShape, OptConfig};
use survkit::cox::{cox_partial_nll, fit_deepsurv, CoxModel, ScoreConfig};
use survkit::curves::SurvivalModel;
use survkit::datamodel::{build_grid, GridStrategy, TimeGrid};
use survkit::discretemodels::{fit_discrete, pmf_nll, DiscreteFamily, DiscreteModel};
use survkit::parametric::{fit_parametric, ParametricFamily, ParametricModel};
use survkit::simulate::{generate, Censoring, Scenario, ScenarioFamily};
use survkit::soden::{piecewise_cumhaz, soden_fit, EncoderKind, SodenModel, SolverConfig};
use survkit::SurvError;

mod common;

proptest! {
    #[test]
    fn partial_likelihood_ignores_score_shift(ds in common::arb_dataset(25), shift in -5.0f64..5.0, seed in 0u64..1000) {
        let mut r = common::rng(seed);
        let scores = common::random_params(&mut r, ds.len(), 2.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let ev: Vec<bool> = ds.records().iter().map(|r| r.is_death()).collect();
        let a = cox_partial_nll(&scores, &ds.times(), &ev).unwrap();
        let b = cox_partial_nll(&shifted, &ds.times(), &ev).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn discrete_heads_are_distributions(ds in common::arb_dataset(20), seed in 0u64..1000) {
        let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).unwrap();
        let shape = NetShape { hidden: vec![3], activation: Activation::Tanh };
        let dh = DiscreteModel::init(DiscreteFamily::DeepHit { placeholder: true }, grid.clone(), 1, &shape, seed).unwrap();
        let nn = DiscreteModel::init(DiscreteFamily::NnetSurvival, grid.clone(), 1, &shape, seed).unwrap();
        for rec in ds.records() {
            let f = dh.head(&dh.store.view(), &rec.features).unwrap();
            prop_assert_eq!(f.len(), grid.len() + 1);
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let b = nn.predict(&rec.features).unwrap();
            prop_assert!(b.survival.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(b.hazard.iter().all(|&h| h > 0.0 && h < 1.0));
        }
        prop_assert!(dh.loss(&ds).unwrap() >= 0.0);
    }

    #[test]
    fn piecewise_cumhaz_is_monotone(h in proptest::collection::vec(0.0f64..2.0, 1..8), a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let grid = TimeGrid::new((1..=h.len()).map(|i| i as f64).collect()).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(piecewise_cumhaz(&grid, &h, lo) <= piecewise_cumhaz(&grid, &h, hi) + 1e-12);
    }
}

#[test]
fn uniform_pmf_loss_is_log_bins() {
    let mut r = common::rng(3);
    let ds = common::random_dataset(&mut r, 20, 1, 1, false);
    let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).unwrap();
    let l = grid.len();
    let m = DiscreteModel::zeros(DiscreteFamily::DeepHit { placeholder: true }, grid.clone(), 1, &NetShape::linear()).unwrap();
    let uniform = vec![vec![1.0 / (l + 1) as f64; l + 1]; ds.len()];
    let idx: Vec<usize> = (0..ds.len()).collect();
    let direct = pmf_nll(&uniform, &ds, &idx, &grid).unwrap();
    assert!((m.loss(&ds).unwrap() - direct).abs() < 1e-12);
}

#[test]
fn censored_after_grid_without_placeholder_errors() {
    let ds = survkit::datamodel::SurvivalDataset::from_times(&[1.0, 3.0], &[1, 0]).unwrap();
    let grid = TimeGrid::new(vec![1.0]).unwrap();
    let err = fit_discrete(DiscreteFamily::DeepHit { placeholder: false }, &ds, &grid, &NetShape::linear(), &OptConfig::adam(0.1, 1), 0);
    assert!(err.is_err());
}

#[test]
fn training_lowers_the_loss_and_is_reproducible() {
    let sc = Scenario::new(ScenarioFamily::WeibullPh { beta: vec![1.0], shape: 1.5, scale: 1.0 }, Censoring::Exponential { rate: 0.3 }, 200, 4);
    let (ds, _) = generate(&sc).unwrap();
    let opt = OptConfig::adam(0.05, 100);
    let (m1, t1) = fit_parametric(ParametricFamily::Weibull, &ds, &opt, 9).unwrap();
    let (m2, _) = fit_parametric(ParametricFamily::Weibull, &ds, &opt, 9).unwrap();
    assert!(t1.last().unwrap() < t1.first().unwrap());
    assert_eq!(m1.store.flat(), m2.store.flat());
    // shape e^φ should be near the simulated 1.5
    assert!((m1.phi().unwrap().exp() - 1.5).abs() < 0.3);
    let json = m1.to_json().unwrap();
    let back: ParametricModel = serde_json::from_str(&json).unwrap();
    assert_eq!(back, m1);
}

#[test]
fn cox_model_survival_is_monotone_and_round_trips() {
    let sc = Scenario::new(ScenarioFamily::ExponentialPh { beta: vec![0.5, -0.5], psi: 0.0 }, Censoring::Exponential { rate: 0.2 }, 150, 2);
    let (ds, _) = generate(&sc).unwrap();
    let score = ScoreConfig::Mlp { hidden: vec![4], activation: Activation::Relu };
    let (m, _) = fit_deepsurv(&ds, &score, &OptConfig::adam(0.01, 30), 1).unwrap();
    let x = [0.3, -0.1];
    let ts = [0.1, 0.5, 1.0, 2.0, 5.0];
    let s: Vec<f64> = ts.iter().map(|&t| m.survival(&x, t)).collect();
    assert!(s.windows(2).all(|w| w[1] <= w[0]));
    let back: CoxModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn soden_fit_runs_and_predicts_monotone_curves() {
    let sc = Scenario::new(ScenarioFamily::ExponentialPh { beta: vec![0.5], psi: 0.0 }, Censoring::Exponential { rate: 0.3 }, 60, 8);
    let (ds, _) = generate(&sc).unwrap();
    let shape = NetShape { hidden: vec![4], activation: Activation::Tanh };
    for kind in [EncoderKind::Generic, EncoderKind::Ph, EncoderKind::Eh, EncoderKind::AftG] {
        let (m, trace) = soden_fit(kind, &ds, &shape, None, &OptConfig::adam(0.02, 5), 3).unwrap();
        assert!(trace.last().unwrap().is_finite());
        let grid = TimeGrid::new(vec![0.5, 1.0, 2.0]).unwrap();
        let b = m.predict(&[0.2], &grid).unwrap();
        assert!(b.cumhaz.windows(2).all(|w| w[1] >= w[0]), "{kind:?}");
        let back: SodenModel = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.cumhaz(&[0.2], 1.0).unwrap(), m.cumhaz(&[0.2], 1.0).unwrap());
    }
}

#[test]
fn soden_exponential_matches_closed_form() {
    let m = SodenModel::exponential(&[0.4], -0.2, SolverConfig { steps_per_unit: 10.0, delta: 1e-8 });
    let h = m.cumhaz(&[1.0], 2.0).unwrap();
    assert!((h - 2.0 * (0.4f64 - 0.2).exp()).abs() < 1e-9);
}

#[test]
fn numerical_errors_are_classified() {
    assert!(SurvError::degenerate("x").is_numerical());
    assert!(!SurvError::validation("x").is_numerical());
}
