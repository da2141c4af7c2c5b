//! The `evaluate` subcommand.
//!
//! Curves are predicted once per evaluation record and every metric reads
//! from that cache. Continuous-time families without a grid of their own are
//! sampled at 200 uniform points up to twice the largest observed time.

use std::path::Path;

use survkit::competing::{cr_brier, cr_ctd, cr_ibs, cr_integrated_ctd};
use survkit::curves::{PredictionBundle, SurvivalModel, SurvivalPredictions};
use survkit::datamodel::{CsvSchema, SurvivalDataset, TimeGrid};
use survkit::metrics::{
    antolini_ctd, brier, d_calibration, harrell_cindex, ibs, integrated_uno_ctd, mae_survival, td_auc, uno_ctd, CensorModel,
    ConformalBand, ImputeMode, Imputer, MetricReport,
};
use survkit::registry::SavedModel;
use survkit::{Result, SurvError};

use crate::commands::load_model;
use crate::config;
use crate::EvaluateArgs;

const FALLBACK_POINTS: usize = 200;
const DCAL_BINS: usize = 10;
const NEEDS_TRAIN: &str = "needs --train";

fn prediction_grid(model: &SavedModel, max_time: f64) -> Result<TimeGrid> {
    match model.natural_grid() {
        Some(g) => Ok(g),
        None => {
            let top = 2.0 * max_time.max(f64::MIN_POSITIVE);
            TimeGrid::new((1..=FALLBACK_POINTS).map(|k| top * k as f64 / FALLBACK_POINTS as f64).collect())
        }
    }
}

/// Cached curves, or exact survival for families without a grid of their own.
struct Preds<'a> {
    bundles: Vec<PredictionBundle>,
    exact: Option<(&'a SavedModel, &'a SurvivalDataset)>,
}

impl SurvivalPredictions for Preds<'_> {
    fn len(&self) -> usize {
        self.bundles.len()
    }
    fn survival(&self, record: usize, t: f64) -> f64 {
        match self.exact {
            Some((m, ds)) => m.survival(&ds.record(record).features, t),
            None => self.bundles[record].eval_survival(t),
        }
    }
}

fn bundles(model: &SavedModel, ds: &SurvivalDataset, grid: &TimeGrid) -> Result<Vec<PredictionBundle>> {
    ds.records().iter().map(|r| model.predict(&r.features, grid)).collect()
}

/// Predicted median, or the restricted mean when the curve never reaches 1/2.
fn point_times(b: &[PredictionBundle]) -> Vec<f64> {
    b.iter()
        .map(|b| {
            let c = b.survival_curve();
            c.median_time().unwrap_or_else(|| c.mean_time(None))
        })
        .collect()
}

/// Linear-interpolated percentile of a sample.
fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

fn integration_range(ds: &SurvivalDataset) -> Result<(f64, f64)> {
    let times = ds.times();
    let (a, b) = (percentile(&times, 0.1), percentile(&times, 0.9));
    if b > a {
        Ok((a, b))
    } else {
        Err(SurvError::validation("evaluation times are too concentrated for an integrated score"))
    }
}

struct Request {
    cindex: bool,
    ctd: bool,
    uno: Vec<f64>,
    auc: Vec<f64>,
    brier: Vec<f64>,
    ibs: bool,
    dcal: bool,
    mae: Option<ImputeMode>,
    conformal: Option<f64>,
    integrated_ctd: bool,
    all: bool,
}

impl Request {
    fn from_args(a: &EvaluateArgs, eval: &SurvivalDataset) -> Result<Self> {
        let mut r = Request {
            cindex: a.cindex,
            ctd: a.ctd,
            uno: a.uno_ctd.clone().unwrap_or_default(),
            auc: a.auc.clone().unwrap_or_default(),
            brier: a.brier.clone().unwrap_or_default(),
            ibs: a.ibs,
            dcal: a.dcal,
            mae: a.mae.as_deref().map(str::parse).transpose()?,
            conformal: a.conformal,
            integrated_ctd: false,
            all: a.all,
        };
        if a.all {
            r.cindex = true;
            r.ctd = true;
            r.ibs = true;
            r.dcal = true;
            r.integrated_ctd = true;
            r.mae.get_or_insert(ImputeMode::Hinge);
            if a.calib.is_some() {
                r.conformal.get_or_insert(0.1);
            }
            if r.auc.is_empty() {
                r.auc.push(percentile(&eval.times(), 0.5));
            }
        } else if !(r.cindex || r.ctd || r.ibs || r.dcal || r.mae.is_some() || r.conformal.is_some())
            && r.uno.is_empty()
            && r.auc.is_empty()
            && r.brier.is_empty()
        {
            return Err(SurvError::validation("no metric requested (try --all)"));
        }
        if r.conformal.is_some() && a.calib.is_none() {
            return Err(SurvError::validation("--conformal needs --calib"));
        }
        // explicit requests for weighted or imputed scores fail without training labels
        let explicit_ipcw = a.uno_ctd.is_some() || a.auc.is_some() || a.brier.is_some() || (a.ibs && !a.all) || a.mae.is_some();
        if a.train.is_none() && (explicit_ipcw || a.conformal.is_some()) {
            return Err(SurvError::validation("censoring-weighted and imputed metrics need --train"));
        }
        Ok(r)
    }
}

pub fn run(a: &EvaluateArgs, out: &Path) -> Result<()> {
    let model = load_model(&a.model_file)?;
    let k = match (a.events, &model) {
        (Some(k), _) => k,
        (None, SavedModel::CompetingDeephit(m)) => m.k as u32,
        (None, _) => 1,
    };
    let schema = CsvSchema::default().with_events(k);
    let eval = config::load(&a.data, &schema, "data")?;
    let train = a.train.as_deref().map(|p| config::load(p, &schema, "train")).transpose()?;
    let calib = a.calib.as_deref().map(|p| config::load(p, &schema, "calib")).transpose()?;
    for ds in [Some(&eval), train.as_ref(), calib.as_ref()].into_iter().flatten() {
        if ds.dim() != model.dim() {
            return Err(SurvError::DimensionMismatch {
                expected: model.dim(),
                got: ds.dim(),
            });
        }
    }
    let req = Request::from_args(a, &eval)?;
    let report = if model.is_competing() {
        competing_report(&model, &eval, train.as_ref(), &req)?
    } else {
        single_report(&model, &eval, train.as_ref(), calib.as_ref(), &req)?
    };
    std::fs::write(out.join("metrics.json"), report.to_json()?)?;
    let mut inputs: Vec<&Path> = vec![&a.model_file, &a.data];
    inputs.extend(a.train.as_deref());
    inputs.extend(a.calib.as_deref());
    config::write_manifest(out, "evaluate", &serde_json::json!({ "all": a.all }), &inputs)?;
    print!("{}", report.to_table());
    Ok(())
}

fn single_report(
    model: &SavedModel,
    eval: &SurvivalDataset,
    train: Option<&SurvivalDataset>,
    calib: Option<&SurvivalDataset>,
    req: &Request,
) -> Result<MetricReport> {
    let max_time = [Some(eval), train, calib].into_iter().flatten().map(SurvivalDataset::max_time).fold(0.0, f64::max);
    let grid = prediction_grid(model, max_time)?;
    let pred = Preds {
        bundles: bundles(model, eval, &grid)?,
        exact: model.natural_grid().is_none().then_some((model, eval)),
    };
    let times = point_times(&pred.bundles);
    let censor = train.map(CensorModel::fit).transpose()?;
    let mut rep = MetricReport::default();

    if req.cindex {
        let risk = eval
            .records()
            .iter()
            .zip(&times)
            .map(|(r, t)| Ok(model.ph_score(&r.features)?.unwrap_or(-t)))
            .collect::<Result<Vec<_>>>()?;
        rep.push("cindex", harrell_cindex(&risk, eval)?, None);
    }
    if req.ctd {
        rep.push("ctd", antolini_ctd(&pred, eval)?, None);
    }
    match &censor {
        Some(c) => {
            for &t in &req.uno {
                rep.push(format!("uno_ctd@{t}"), uno_ctd(&pred, eval, c, t)?, None);
            }
            for &t in &req.auc {
                rep.push(format!("auc@{t}"), td_auc(&pred, eval, c, t)?, None);
            }
            for &t in &req.brier {
                rep.push(format!("brier@{t}"), Some(brier(&pred, eval, c, t)?), None);
            }
            if req.integrated_ctd || req.ibs {
                let (lo, hi) = integration_range(eval)?;
                if req.integrated_ctd {
                    rep.push("uno_ctd_integrated", integrated_uno_ctd(&pred, eval, c, lo, hi)?, None);
                }
                if req.ibs {
                    rep.push("ibs", Some(ibs(&pred, eval, c, lo, hi)?), None);
                }
            }
        }
        None => {
            if req.integrated_ctd {
                rep.push("uno_ctd_integrated", None, Some(NEEDS_TRAIN));
            }
            if req.ibs {
                rep.push("ibs", None, Some(NEEDS_TRAIN));
            }
        }
    }
    if req.dcal {
        let d = d_calibration(&pred, eval, DCAL_BINS)?;
        rep.push("dcal_chi2", Some(d.chi2), None);
        rep.push("dcal_p_value", Some(d.p_value), Some(if d.calibrated { "calibrated" } else { "not calibrated" }));
    }
    if let Some(mode) = req.mae {
        match train {
            Some(tr) => {
                let imp = Imputer::new(tr, eval)?;
                let tag = serde_json::to_value(mode)?.as_str().unwrap_or_default().to_string();
                rep.push(format!("mae_{tag}"), Some(mae_survival(&times, eval, &imp, mode, false)?), None);
                rep.push(format!("wmae_{tag}"), Some(mae_survival(&times, eval, &imp, mode, true)?), None);
            }
            None => rep.push("mae_hinge", None, Some(NEEDS_TRAIN)),
        }
    }
    if let Some(alpha) = req.conformal {
        match (train, calib) {
            (Some(tr), Some(cal)) => {
                let imp = Imputer::new(tr, cal)?;
                let cal_times = point_times(&bundles(model, cal, &grid)?);
                let band = ConformalBand::calibrate(cal, &cal_times, &imp, req.mae.unwrap_or(ImputeMode::Hinge), alpha)?;
                let deaths: Vec<(f64, f64)> = eval.records().iter().zip(&times).filter(|(r, _)| r.is_death()).map(|(r, &t)| (r.time, t)).collect();
                let covered = deaths
                    .iter()
                    .filter(|(y, t)| {
                        let (lo, hi) = band.cover(*t);
                        lo <= *y && *y <= hi
                    })
                    .count();
                rep.push("conformal_qhat", Some(band.qhat), None);
                let cov = (!deaths.is_empty()).then(|| covered as f64 / deaths.len() as f64);
                rep.push("conformal_coverage", cov, Some("over uncensored evaluation records"));
            }
            _ => rep.push("conformal_qhat", None, Some("needs --train and --calib")),
        }
    }
    Ok(rep)
}

fn competing_report(model: &SavedModel, eval: &SurvivalDataset, train: Option<&SurvivalDataset>, req: &Request) -> Result<MetricReport> {
    if !req.all && (req.dcal || req.mae.is_some() || req.conformal.is_some() || !req.uno.is_empty() || !req.auc.is_empty()) {
        log::warn!("only cause-specific concordance and Brier scores are reported for competing-risks models");
    }
    let cifs = eval.records().iter().map(|r| model.cif(&r.features)).collect::<Result<Vec<_>>>()?;
    let k = eval.num_events() as usize;
    let censor = train.map(CensorModel::fit).transpose()?;
    let mut rep = MetricReport::default();
    for d in 1..=k {
        if req.cindex || req.ctd {
            rep.push(format!("cr_ctd_{d}"), cr_ctd(&cifs, eval, d)?, None);
        }
        let Some(c) = &censor else {
            if req.ibs {
                rep.push(format!("cr_ibs_{d}"), None, Some(NEEDS_TRAIN));
            }
            continue;
        };
        for &t in &req.brier {
            rep.push(format!("cr_brier_{d}@{t}"), Some(cr_brier(&cifs, eval, c, d, t)?), None);
        }
        if req.integrated_ctd || req.ibs {
            let (lo, hi) = integration_range(eval)?;
            if req.integrated_ctd {
                rep.push(format!("cr_ctd_integrated_{d}"), cr_integrated_ctd(&cifs, eval, c, d, lo, hi)?, None);
            }
            if req.ibs {
                rep.push(format!("cr_ibs_{d}"), Some(cr_ibs(&cifs, eval, c, d, lo, hi)?), None);
            }
        }
    }
    Ok(rep)
}
