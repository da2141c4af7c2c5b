//! Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p survkit --test acceptance`.

use std::process::ExitCode;

use rand::Rng;
use std::time::{Duration, Instant};

use survkit::autodiff::{train, Activation, MlpConfig, NetShape, OptConfig, OutputTransform};
use survkit::competing::{CRDeepHit, RankingConfig, cr_fit};
use survkit::cox::{coxtime_fit, coxtime_loss, deepsurv_batch_loss, fit_deepsurv, BreslowBaseline, CoxTimeMode, ScoreConfig};
use survkit::curves::{FnPredictions, ModelOnData};
use survkit::datamodel::{build_grid, life_table, GridStrategy, SurvivalDataset, TimeGrid};
use survkit::discretemodels::{hazard_nll_discrete, DiscreteFamily, DiscreteModel, HazardForm};
use survkit::kernel::{dksa_batch_loss, dksa_fit, kernet_build};
use survkit::metrics::{antolini_ctd, brier, d_calibration, harrell_cindex, CensorModel, ConformalBand, ImputeMode, Imputer};
use survkit::nonparam::{conditional_km, kaplan_meier, kaplan_meier_on, nelson_aalen, ConditionalMode};
use survkit::parametric::{fit_parametric, Baseline, ParametricFamily, ParametricModel};
use survkit::simulate::{generate, Censoring, Scenario, ScenarioFamily};
use survkit::soden::{rk4_cumhaz, rk4_scalar, EncoderKind, SodenModel, SolverConfig, DEFAULT_DELTA};
use survkit::stacking::stack;

#[macro_use]
mod common;

type Outcome = Result<String, String>;

trait Lift<T> {
    fn s(self) -> Result<T, String>;
}

impl<T> Lift<T> for survkit::Result<T> {
    fn s(self) -> Result<T, String> {
        self.map_err(|e| e.to_string())
    }
}

fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol})"))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn all_idx(ds: &SurvivalDataset) -> Vec<usize> {
    (0..ds.len()).collect()
}

fn devices() -> SurvivalDataset {
    SurvivalDataset::from_columns(vec![vec![0.0], vec![1.0], vec![2.0]], &[2.0, 10.0, 6.0], &[1, 1, 0]).unwrap()
}

fn tanh_shape(hidden: usize) -> NetShape {
    NetShape {
        hidden: vec![hidden],
        activation: Activation::Tanh,
    }
}

fn criterion1() -> Outcome {
    // risk ranks A below B and above C, so one of two comparable pairs is concordant
    let c = harrell_cindex(&[2.0, 1.0, 3.0], &devices()).s()?;
    ensure(c == Some(0.5), || format!("c-index {c:?}"))?;

    let ds = SurvivalDataset::from_columns(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], &[1.0, 2.0, 3.0], &[1, 0, 1]).s()?;
    let p = stack(&ds, &TimeGrid::new(vec![1.0, 3.0]).s()?).s()?;
    ensure((p.rows(), p.cols()) == (4, 4), || format!("stacked shape {}x{}", p.rows(), p.cols()))?;
    ensure(p.labels == [1, 0, 0, 1], || format!("labels {:?}", p.labels))?;

    let km = kaplan_meier(&devices()).s()?;
    close(km.survival()[0], 2.0 / 3.0, 1e-12, "KM at 2")?;
    close(km.survival()[1], 0.0, 1e-12, "KM at 10")?;
    let na = nelson_aalen(&devices()).s()?;
    close(na.values[0], 1.0 / 3.0, 1e-12, "NA at 2")?;
    close(na.values[1], 4.0 / 3.0, 1e-12, "NA at 10")?;
    Ok("c-index 1/2, stacked 4x4 labels (1,0,0,1), KM (2/3,0), NA (1/3,4/3)".into())
}

fn criterion2() -> Outcome {
    let mut worst_weib: f64 = 0.0;
    let mut worst_bres: f64 = 0.0;
    let mut worst_disc: f64 = 0.0;
    for inst in 0..10u64 {
        let mut r = common::rng(200 + inst);
        let ds = common::random_dataset(&mut r, 40, 2, 1, inst % 2 == 0);

        let beta = common::random_params(&mut r, 2, 1.0);
        let psi = common::random_params(&mut r, 1, 1.0)[0];
        let w = ParametricModel::weibull(&beta, psi, 0.0);
        let e = ParametricModel::exponential(&beta, psi);
        worst_weib = worst_weib.max((w.hazard_nll(&ds).s()? - e.hazard_nll(&ds).s()?).abs());
        for t in [0.1, 0.7, 2.5] {
            let x = &ds.record(1).features;
            worst_weib = worst_weib.max((w.cumhaz(x, t).s()? - e.cumhaz(x, t).s()?).abs());
        }

        let bres = BreslowBaseline::from_scores(&ds, &vec![0.0; ds.len()]).s()?;
        let na = nelson_aalen(&ds).s()?;
        for (t, v) in na.grid.times().iter().zip(&na.values) {
            worst_bres = worst_bres.max((bres.cumhaz_at(*t) - v).abs());
        }

        let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).s()?;
        let hazards: Vec<Vec<f64>> = (0..ds.len()).map(|_| (0..grid.len()).map(|_| r.random_range(0.05..0.95)).collect()).collect();
        let idx = all_idx(&ds);
        let a = hazard_nll_discrete(&hazards, &ds, &idx, &grid, HazardForm::PerPoint).s()?;
        let b = hazard_nll_discrete(&hazards, &ds, &idx, &grid, HazardForm::PerIndex).s()?;
        worst_disc = worst_disc.max((a - b).abs());
    }
    ensure(worst_weib <= 1e-6, || format!("Weibull(φ=0) vs exponential differ by {worst_weib:e}"))?;
    ensure(worst_bres <= 1e-6, || format!("Breslow(f=0) vs Nelson-Aalen differ by {worst_bres:e}"))?;
    ensure(worst_disc <= 1e-6, || format!("per-point vs per-index differ by {worst_disc:e}"))?;

    let solver = SolverConfig {
        steps_per_unit: 1000.0,
        delta: DEFAULT_DELTA,
    };
    let m = SodenModel::weibull(&[0.0], 0.0, 2f64.ln(), solver);
    let h1 = rk4_cumhaz(&m, &[0.0], 1.0, 1000).s()?;
    close(h1, 1.0, 1e-3, "SODEN Weibull H(1)")?;
    let h_half = rk4_cumhaz(&m, &[0.0], 0.5, 500).s()?;
    close(h_half, 0.25, 1e-3, "SODEN Weibull H(0.5)")?;

    let y = rk4_scalar(|_, y| y + 1.0, 0.0, 1.0, 100);
    close(y, std::f64::consts::E - 1.0, 1e-6, "RK4 on H' = H + 1")?;
    Ok(format!(
        "max gaps: Weibull/exp {worst_weib:.1e}, Breslow/NA {worst_bres:.1e}, per-point/per-index {worst_disc:.1e}; SODEN H(1) = {h1:.6}; RK4 linear ODE err {:.1e}",
        (y - (std::f64::consts::E - 1.0)).abs()
    ))
}

/// Maximizes a unimodal function on [0, 1] by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-11 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

fn criterion3() -> Outcome {
    let mut worst_numeric: f64 = 0.0;
    let mut worst_neural: f64 = 0.0;
    for inst in 0..20u64 {
        let mut r = common::rng(300 + inst);
        let n = r.random_range(20..40);
        let ds = common::random_dataset(&mut r, n, 0, 1, inst % 2 == 0);
        let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).s()?;
        let closed = life_table(&ds, &grid).hazards();
        let idx = all_idx(&ds);

        // the likelihood separates across bins, so each h[ℓ] is maximized with the others held fixed
        for ell in 0..grid.len() {
            let lik = |h: f64| {
                let mut hz = vec![0.5; grid.len()];
                hz[ell] = h;
                let rows = vec![hz; ds.len()];
                -hazard_nll_discrete(&rows, &ds, &idx, &grid, HazardForm::PerPoint).unwrap()
            };
            worst_numeric = worst_numeric.max((golden_max(lik) - closed[ell]).abs());
        }

        let mut model = DiscreteModel::init(DiscreteFamily::NnetSurvival, grid.clone(), 0, &NetShape::linear(), inst).s()?;
        let mut store = model.store.clone();
        for opt in [OptConfig::adam(0.05, 1500), OptConfig::adam(0.002, 1000)] {
            train(&mut store, &opt, ds.len(), inst, |p, ctx| model.batch_loss(p, &ds, ctx.batch)).s()?;
        }
        model.store = store;
        let fitted = model.curve(&[]).s()?.values;
        worst_neural = worst_neural.max(max_abs_diff(&fitted, &closed));
    }
    ensure(worst_numeric <= 1e-6, || format!("numeric maximizer off by {worst_numeric:e}"))?;
    ensure(worst_neural <= 1e-3, || format!("feature-blind fit off by {worst_neural:e}"))?;
    Ok(format!("20 datasets: |D/N − argmax| ≤ {worst_numeric:.1e}, |D/N − neural| ≤ {worst_neural:.1e}"))
}

fn criterion4() -> Outcome {
    let beta = [0.8, -0.5];
    let mut cox_err: f64 = 0.0;
    let mut rate_err: f64 = 0.0;
    for seed in 1..=3u64 {
        let sc = Scenario::new(
            ScenarioFamily::ExponentialPh { beta: beta.to_vec(), psi: 0.0 },
            Censoring::Exponential { rate: 0.3 },
            2000,
            seed,
        );
        let (ds, _) = generate(&sc).s()?;
        let (model, _) = fit_deepsurv(&ds, &ScoreConfig::Linear, &OptConfig::adam(0.05, 400), seed).s()?;
        let theta = model.coefficients().ok_or("linear Cox model has no coefficients")?;
        cox_err = cox_err.max(max_abs_diff(&theta, &beta));

        let sc = Scenario::new(
            ScenarioFamily::ExponentialPh { beta: vec![], psi: 1.5f64.ln() },
            Censoring::Exponential { rate: 0.5 },
            2000,
            seed,
        );
        let (ds, _) = generate(&sc).s()?;
        let (m, _) = fit_parametric(ParametricFamily::Exponential, &ds, &OptConfig::adam(0.05, 400), seed).s()?;
        rate_err = rate_err.max((m.psi().exp() - 1.5).abs());
    }
    ensure(cox_err <= 0.15, || format!("Cox coefficients off by {cox_err}"))?;
    ensure(rate_err <= 0.1, || format!("exponential rate off by {rate_err}"))?;

    let sc = Scenario::new(ScenarioFamily::CompetingExponential { rates: vec![1.0, 2.0], dim: 1 }, Censoring::None, 5000, 7);
    let (ds, _) = generate(&sc).s()?;
    let grid = build_grid(&ds, GridStrategy::Quantile, Some(20)).s()?;
    let opt = OptConfig::adam(0.02, 40).with_batch(500);
    let (model, _) = cr_fit(&ds, &grid, &NetShape::linear(), RankingConfig::none(2), true, &opt, 7).s()?;
    let mut r = common::rng(77);
    let mut mass = 0.0;
    let m = 50;
    for _ in 0..m {
        let x = [r.random_range(-2.0..2.0)];
        mass += model.pmf(&x).s()?[1].iter().sum::<f64>();
    }
    mass /= m as f64;
    close(mass, 2.0 / 3.0, 0.05, "event-2 mass")?;
    Ok(format!("Cox |θ−β| ≤ {cox_err:.3}, rate err {rate_err:.3}, CR event-2 mass {mass:.4}"))
}

fn criterion5() -> Outcome {
    // C^td equals Harrell's C under proportional hazards
    let mut worst_ph: f64 = 0.0;
    for seed in 0..3u64 {
        let sc = Scenario::new(
            ScenarioFamily::WeibullPh {
                beta: vec![0.7, -0.4],
                shape: 1.3,
                scale: 1.0,
            },
            Censoring::Exponential { rate: 0.4 },
            300,
            seed,
        );
        let (ds, _) = generate(&sc).s()?;
        let mut r = common::rng(500 + seed);
        let model = ParametricModel::weibull(&common::random_params(&mut r, 2, 1.0), 0.0, 0.3);
        let view = model.store.view();
        let risk = ds.records().iter().map(|rec| model.log_partial_hazard(&view, &rec.features)).collect::<survkit::Result<Vec<f64>>>().s()?;
        let c = harrell_cindex(&risk, &ds).s()?.ok_or("no comparable pairs")?;
        let ctd = antolini_ctd(&ModelOnData { model: &model, data: &ds }, &ds).s()?.ok_or("no comparable pairs")?;
        worst_ph = worst_ph.max((c - ctd).abs());
    }
    ensure(worst_ph <= 1e-12, || format!("C^td and C differ by {worst_ph:e}"))?;

    let sc = Scenario::new(ScenarioFamily::ExponentialPh { beta: vec![0.5], psi: 0.0 }, Censoring::None, 200, 3);
    let (ds, _) = generate(&sc).s()?;
    let cm = CensorModel::fit(&ds).s()?;
    for (i, t) in [0.0, 0.3, 1.0, 5.0, 1e3].into_iter().enumerate() {
        ensure(cm.positive(i, t).s()? == 1.0, || format!("IPCW weight at {t} is not 1"))?;
    }

    let mut worst_mass: f64 = 0.0;
    for seed in 0..5u64 {
        let sc = Scenario::new(
            ScenarioFamily::ExponentialPh { beta: vec![0.5, 0.5], psi: 0.0 },
            Censoring::Exponential { rate: 0.5 },
            300,
            seed,
        );
        let (ds, oracle) = generate(&sc).s()?;
        let dc = d_calibration(&ModelOnData { model: &oracle, data: &ds }, &ds, 10).s()?;
        worst_mass = worst_mass.max((dc.proportions.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst_mass <= 1e-12, || format!("D-calibration mass off by {worst_mass:e}"))?;
    let times: Vec<f64> = (1..=10).map(f64::from).collect();
    let exact = SurvivalDataset::from_times(&times, &[1; 10]).s()?;
    let deciles = FnPredictions {
        n: 10,
        f: |i: usize, _t: f64| 0.05 + 0.1 * i as f64,
    };
    let dc = d_calibration(&deciles, &exact, 10).s()?;
    close(dc.chi2, 0.0, 1e-12, "χ² on exact deciles")?;

    let mut brier_gap = f64::INFINITY;
    for seed in 0..5u64 {
        let fam = ScenarioFamily::ExponentialPh { beta: vec![1.0, -1.0], psi: 0.0 };
        let (train_ds, _) = generate(&Scenario::new(fam.clone(), Censoring::Exponential { rate: 0.3 }, 1000, seed)).s()?;
        let (eval, oracle) = generate(&Scenario::new(fam, Censoring::Exponential { rate: 0.3 }, 1000, seed + 100)).s()?;
        let mut ys = eval.times();
        ys.sort_by(f64::total_cmp);
        let t = ys[ys.len() / 2];
        let censor = CensorModel::fit(&train_ds).s()?;
        let b_oracle = brier(&ModelOnData { model: &oracle, data: &eval }, &eval, &censor, t).s()?;
        let half = FnPredictions { n: eval.len(), f: |_: usize, _: f64| 0.5 };
        let b_half = brier(&half, &eval, &censor, t).s()?;
        ensure(b_oracle <= b_half, || format!("seed {seed}: oracle Brier {b_oracle} > constant {b_half}"))?;
        brier_gap = brier_gap.min(b_half - b_oracle);
    }

    let fam = ScenarioFamily::ExponentialPh { beta: vec![0.7], psi: 0.0 };
    let (calib, oracle) = generate(&Scenario::new(fam.clone(), Censoring::None, 500, 11)).s()?;
    let (test, _) = generate(&Scenario::new(fam, Censoring::None, 2000, 12)).s()?;
    let med = |ds: &SurvivalDataset| ds.records().iter().map(|r| oracle.median(&r.features)).collect::<Vec<_>>();
    let imputer = Imputer::new(&calib, &calib).s()?;
    let band = ConformalBand::calibrate(&calib, &med(&calib), &imputer, ImputeMode::Hinge, 0.1).s()?;
    let covered = test
        .records()
        .iter()
        .zip(med(&test))
        .filter(|(r, m)| {
            let (lo, hi) = band.cover(*m);
            lo <= r.time && r.time <= hi
        })
        .count();
    let coverage = covered as f64 / test.len() as f64;
    ensure(coverage >= 0.87, || format!("conformal coverage {coverage}"))?;
    Ok(format!(
        "|C^td − C| ≤ {worst_ph:.1e}, D-cal mass err {worst_mass:.1e}, χ² = {:.1e}, min Brier margin {brier_gap:.4}, coverage {coverage:.4}",
        dc.chi2
    ))
}

fn criterion6() -> Outcome {
    let sc = Scenario::new(ScenarioFamily::TwoCluster { rates: [0.5, 2.0] }, Censoring::Exponential { rate: 0.3 }, 120, 5);
    let (ds, _) = generate(&sc).s()?;
    let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).s()?;
    let opt = OptConfig::adam(0.01, 15).with_batch(32);
    let (dksa, _) = dksa_fit(&ds, &grid, &tanh_shape(8), 2, &opt, 5).s()?;
    let all = all_idx(&ds);
    let fine = kernet_build(&dksa, &all, 0.0, None, None).s()?;
    let coarse = kernet_build(&dksa, &all, f64::INFINITY, None, None).s()?;
    let pop = kaplan_meier_on(&ds, &grid).s()?;

    let mut r = common::rng(66);
    let mut queries: Vec<Vec<f64>> = (0..10).map(|i| ds.record(i).features.clone()).collect();
    queries.extend((0..5).map(|_| vec![f64::from(u8::from(r.random::<bool>())), r.random_range(-2.0..2.0)]));
    let kernel = |a: &[f64], b: &[f64]| dksa.kernel(a, b).unwrap();
    let (mut gap_dksa, mut gap_kkm, mut gap_pop): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for x in &queries {
        let base = dksa.predict(x).s()?;
        gap_dksa = gap_dksa.max(max_abs_diff(fine.predict(x).s()?.survival(), base.survival()));
        let kkm = conditional_km(&ds, x, &ConditionalMode::Kernel(&kernel)).s()?;
        gap_kkm = gap_kkm.max(max_abs_diff(kkm.survival(), base.survival()));
        gap_pop = gap_pop.max(max_abs_diff(coarse.predict(x).s()?.survival(), pop.survival()));
    }
    ensure(gap_dksa <= 1e-12, || format!("kernet(ε=0) vs DKSA gap {gap_dksa:e}"))?;
    ensure(gap_kkm <= 1e-12, || format!("DKSA vs kernel KM gap {gap_kkm:e}"))?;
    ensure(gap_pop <= 1e-12, || format!("kernet(ε=∞) vs population KM gap {gap_pop:e}"))?;

    let mut gap_one: f64 = 0.0;
    let one = |_: &[f64], _: &[f64]| 1.0;
    for inst in 0..5u64 {
        let mut r = common::rng(600 + inst);
        let ds = common::random_dataset(&mut r, 30, 2, 1, true);
        let km = kaplan_meier(&ds).s()?;
        let ckm = conditional_km(&ds, &[0.1, -0.2], &ConditionalMode::Kernel(&one)).s()?;
        gap_one = gap_one.max(max_abs_diff(ckm.survival(), km.survival()));
    }
    ensure(gap_one <= 1e-12, || format!("conditional KM (K≡1) vs KM gap {gap_one:e}"))?;
    Ok(format!(
        "gaps: kernet/DKSA {gap_dksa:.1e}, DKSA/kernel-KM {gap_kkm:.1e}, coarse kernet/KM {gap_pop:.1e}, K≡1/KM {gap_one:.1e}"
    ))
}

fn criterion7() -> Outcome {
    let mut report: Vec<String> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    let mut record = |name: &str, worst: f64, tol: f64| {
        report.push(format!("{name} {worst:.1e}"));
        if worst.is_nan() || worst > tol {
            failures.push(format!("{name}: {worst:e} > {tol:e}"));
        }
    };
    let shape = tanh_shape(4);
    let instances = 10u64;

    macro_rules! sweep {
        ($name:expr, $tol:expr, |$r:ident, $inst:ident| $run:expr) => {{
            let mut worst: f64 = 0.0;
            for $inst in 0..instances {
                let mut $r = common::rng(7000 + $inst);
                let e: f64 = $run;
                worst = worst.max(e);
            }
            record($name, worst, $tol);
        }};
    }

    sweep!("exponential", 1e-4, |r, inst| {
        let ds = common::random_dataset(&mut r, 12, 2, 1, inst % 2 == 0);
        let mut m = ParametricModel::exponential(&[0.0, 0.0], 0.0);
        m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.7));
        let idx = all_idx(&ds);
        grad_check!(&m.store, |p| m.nll_on(&p, &ds, &idx).unwrap())
    });
    sweep!("weibull", 1e-4, |r, inst| {
        let ds = common::random_dataset(&mut r, 12, 2, 1, inst % 2 == 0);
        let mut m = ParametricModel::weibull(&[0.0, 0.0], 0.0, 0.0);
        m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.7));
        let idx = all_idx(&ds);
        grad_check!(&m.store, |p| m.nll_on(&p, &ds, &idx).unwrap())
    });
    sweep!("generic-parametric", 1e-4, |r, inst| {
        let ds = common::random_dataset(&mut r, 12, 2, 1, inst % 2 == 0);
        let fam = ParametricFamily::Generic {
            baseline: Baseline::Weibull,
            net: MlpConfig::new(vec![2, 4, 1], Activation::Tanh, OutputTransform::Identity),
        };
        let mut m = ParametricModel::init(fam, 2, inst).unwrap();
        m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.7));
        let idx = all_idx(&ds);
        grad_check!(&m.store, |p| m.nll_on(&p, &ds, &idx).unwrap())
    });
    sweep!("cox-partial", 1e-4, |r, inst| {
        let ds = common::random_dataset(&mut r, 12, 2, 1, inst % 2 == 0);
        let score = ScoreConfig::Mlp {
            hidden: vec![4],
            activation: Activation::Tanh,
        };
        let (mut m, _) = fit_deepsurv(&ds, &score, &OptConfig::adam(0.01, 0), inst).unwrap();
        m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.7));
        let idx = all_idx(&ds);
        grad_check!(&m.store, |p| deepsurv_batch_loss(&m.net, &p, &ds, &idx).unwrap())
    });
    for (name, mode) in [("cox-time-exact", CoxTimeMode::Exact), ("cox-time-case-control", CoxTimeMode::CaseControl)] {
        sweep!(name, 1e-4, |r, inst| {
            let ds = common::random_dataset(&mut r, 12, 2, 1, inst % 2 == 0);
            let score = ScoreConfig::Mlp {
                hidden: vec![4],
                activation: Activation::Tanh,
            };
            let (mut m, _) = coxtime_fit(&ds, &score, &OptConfig::adam(0.01, 0), mode, inst).unwrap();
            m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.7));
            let idx = all_idx(&ds);
            let input = |j: usize, t: f64| {
                let mut v = ds.record(j).features.clone();
                v.extend(m.scaling.features(t));
                v
            };
            grad_check!(&m.store, |p| coxtime_loss(|j, t| Ok(m.net.forward(&p, &input(j, t))?[0]), &ds, &idx, mode, &mut common::rng(99)).unwrap())
        });
    }
    for (name, family) in [("deephit", DiscreteFamily::DeepHit { placeholder: true }), ("nnet-survival", DiscreteFamily::NnetSurvival)] {
        sweep!(name, 1e-4, |r, inst| {
            let ds = common::random_dataset(&mut r, 12, 2, 1, inst % 2 == 0);
            let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).unwrap();
            let mut m = DiscreteModel::init(family, grid, 2, &shape, inst).unwrap();
            m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.7));
            let idx = all_idx(&ds);
            grad_check!(&m.store, |p| m.batch_loss(&p, &ds, &idx).unwrap())
        });
    }
    sweep!("nnet-survival-per-index", 1e-4, |r, inst| {
        let ds = common::random_dataset(&mut r, 12, 2, 1, inst % 2 == 0);
        let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).unwrap();
        let mut m = DiscreteModel::init(DiscreteFamily::NnetSurvival, grid.clone(), 2, &shape, inst).unwrap();
        m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.7));
        let idx = all_idx(&ds);
        grad_check!(&m.store, |p| {
            let heads: Vec<_> = idx.iter().map(|&i| m.head(&p, &ds.record(i).features).unwrap()).collect();
            hazard_nll_discrete(&heads, &ds, &idx, &grid, HazardForm::PerIndex).unwrap()
        })
    });
    sweep!("dksa", 1e-4, |r, inst| {
        let ds = common::random_dataset(&mut r, 12, 2, 1, inst % 2 == 0);
        let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).unwrap();
        let (mut m, _) = dksa_fit(&ds, &grid, &shape, 2, &OptConfig::adam(0.01, 0), inst).unwrap();
        m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.7));
        let idx = all_idx(&ds);
        grad_check!(&m.store, |p| dksa_batch_loss(&m.net, &p, &ds, &grid, &idx).unwrap())
    });
    sweep!("cr-deephit", 1e-4, |r, inst| {
        let ds = common::random_dataset(&mut r, 12, 2, 2, inst % 2 == 0);
        let grid = build_grid(&ds, GridStrategy::UniqueDeaths, None).unwrap();
        let ranking = RankingConfig {
            eta: vec![0.5, 0.8],
            sigma: 0.3,
        };
        let mut m = CRDeepHit::init(grid, 2, 2, &shape, ranking, true, inst).unwrap();
        m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.7));
        let idx = all_idx(&ds);
        grad_check!(&m.store, |p| {
            let (nll, rank) = m.batch_losses(&p, &ds, &idx).unwrap();
            nll + rank
        })
    });
    for kind in [EncoderKind::Generic, EncoderKind::Ph, EncoderKind::AftG, EncoderKind::Eh, EncoderKind::Weibull] {
        sweep!(&format!("soden-{kind:?}"), 1e-3, |r, inst| {
            let ds = common::random_dataset(&mut r, 10, 2, 1, inst % 2 == 0);
            let solver = SolverConfig {
                steps_per_unit: 50.0 / ds.max_time(),
                delta: DEFAULT_DELTA,
            };
            let mut m = SodenModel::init(kind, 2, &shape, solver, ds.max_time(), inst).unwrap();
            m.store.set_flat(&common::random_params(&mut r, m.store.len(), 0.5));
            let idx = all_idx(&ds);
            grad_check!(&m.store, |p| m.nll_on(&p, &ds, &idx).unwrap())
        });
    }
    if failures.is_empty() {
        Ok(format!("worst relative errors: {}", report.join(", ")))
    } else {
        Err(failures.join("; "))
    }
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("reference toy values", Duration::from_secs(1), criterion1),
        ("closed-form identities", Duration::from_secs(10), criterion2),
        ("discrete hazard MLE", Duration::from_secs(30), criterion3),
        ("parameter recovery", Duration::from_secs(300), criterion4),
        ("metric properties", Duration::from_secs(120), criterion5),
        ("exact reductions", Duration::from_secs(60), criterion6),
        ("gradient checks", Duration::from_secs(120), criterion7),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *budget => Err(format!("{detail} (over the {:?} budget)", budget)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} [{:.2}s] {detail}", i + 1, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} [{:.2}s] {why}", i + 1, elapsed.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
