//! Single-risk evaluation metrics.
//!
//! Scores that can be undefined (an empty comparable-pair set) return
//! `None`. Inverse-probability-of-censoring weights come from a
//! [`CensorModel`] fitted on training labels and assume censoring is
//! independent of the features.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::curves::SurvivalPredictions;
use crate::datamodel::SurvivalDataset;
use crate::error::{Result, SurvError};
use crate::nonparam::{kaplan_meier, KMEstimate};

/// Number of uniform points used by the integrated scores.
pub const INTEGRATION_POINTS: usize = 64;

/// Tolerance applied before rounding bin and order-statistic indices up.
const INDEX_TOL: f64 = 1e-12;

pub const IPCW_CAVEAT: &str = "assumes censoring independent of features";

/// Kaplan-Meier estimate of the censoring survival function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensorModel {
    /// `None` when the training labels contain no censoring, so Ŝ_censor ≡ 1.
    pub km: Option<KMEstimate>,
}

impl CensorModel {
    pub fn fit(train: &SurvivalDataset) -> Result<Self> {
        let flipped = train.flip_censoring();
        if flipped.num_deaths() == 0 {
            return Ok(CensorModel { km: None });
        }
        Ok(CensorModel {
            km: Some(kaplan_meier(&flipped)?),
        })
    }

    pub fn constant() -> Self {
        CensorModel { km: None }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.km.as_ref().map_or(1.0, |k| k.eval(t))
    }

    /// Ŝ_censor(t), failing if it is zero.
    pub fn positive(&self, record: usize, t: f64) -> Result<f64> {
        let s = self.eval(t);
        if s <= 0.0 {
            return Err(SurvError::WeightOverflow { record, time: t });
        }
        Ok(s)
    }
}

/// Comparable pairs (i, j): Δ_i ≠ 0 and Y_i < Y_j.
fn for_each_pair(ds: &SurvivalDataset, mut f: impl FnMut(usize, usize)) {
    let recs = ds.records();
    for (i, ri) in recs.iter().enumerate() {
        if !ri.is_death() {
            continue;
        }
        for (j, rj) in recs.iter().enumerate() {
            if ri.time < rj.time {
                f(i, j);
            }
        }
    }
}

fn check_len(n: usize, ds: &SurvivalDataset) -> Result<()> {
    if n != ds.len() {
        return Err(SurvError::DimensionMismatch {
            expected: ds.len(),
            got: n,
        });
    }
    Ok(())
}

/// Harrell's c-index; higher risk should mean shorter survival.
pub fn harrell_cindex(risk: &[f64], ds: &SurvivalDataset) -> Result<Option<f64>> {
    check_len(risk.len(), ds)?;
    let (mut good, mut total) = (0usize, 0usize);
    for_each_pair(ds, |i, j| {
        total += 1;
        if risk[i] > risk[j] {
            good += 1;
        }
    });
    Ok((total > 0).then(|| good as f64 / total as f64))
}

/// Antolini's C^td: fraction of pairs with Ŝ(Y_i|X_i) < Ŝ(Y_i|X_j).
pub fn antolini_ctd<P: SurvivalPredictions + ?Sized>(pred: &P, ds: &SurvivalDataset) -> Result<Option<f64>> {
    check_len(pred.len(), ds)?;
    let (mut good, mut total) = (0usize, 0usize);
    let mut own = vec![f64::NAN; ds.len()];
    for_each_pair(ds, |i, j| {
        let yi = ds.record(i).time;
        if own[i].is_nan() {
            own[i] = pred.survival(i, yi);
        }
        total += 1;
        if own[i] < pred.survival(j, yi) {
            good += 1;
        }
    });
    Ok((total > 0).then(|| good as f64 / total as f64))
}

/// Uno's truncated C^td at time t with weights 1/Ŝ_censor(Y_i)².
pub fn uno_ctd<P: SurvivalPredictions + ?Sized>(
    pred: &P,
    ds: &SurvivalDataset,
    censor: &CensorModel,
    t: f64,
) -> Result<Option<f64>> {
    check_len(pred.len(), ds)?;
    let s_t: Vec<f64> = (0..ds.len()).map(|j| pred.survival(j, t)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, ri) in ds.records().iter().enumerate() {
        if !ri.is_death() || ri.time >= t {
            continue;
        }
        let mut w = None;
        for (j, rj) in ds.records().iter().enumerate() {
            if rj.time > ri.time {
                let wi = match w {
                    Some(v) => v,
                    None => {
                        let v = censor.positive(i, ri.time)?.powi(-2);
                        w = Some(v);
                        v
                    }
                };
                den += wi;
                if s_t[i] < s_t[j] {
                    num += wi;
                }
            }
        }
    }
    Ok((den > 0.0).then(|| num / den))
}

fn uniform_points(t_min: f64, t_max: f64) -> Result<Vec<f64>> {
    if !(t_max > t_min) || t_min < 0.0 {
        return Err(SurvError::validation("integration needs 0 ≤ t_min < t_max"));
    }
    let m = INTEGRATION_POINTS - 1;
    Ok((0..=m).map(|k| t_min + (t_max - t_min) * k as f64 / m as f64).collect())
}

/// Trapezoid average of (t, value) samples over their own span.
fn trapezoid_mean(samples: &[(f64, f64)]) -> Option<f64> {
    match samples {
        [] => None,
        [(_, v)] => Some(*v),
        _ => {
            let area: f64 = samples.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
            Some(area / (samples[samples.len() - 1].0 - samples[0].0))
        }
    }
}

/// Uno's C^td averaged over [t_min, t_max]; points where it is undefined are skipped.
pub fn integrated_uno_ctd<P: SurvivalPredictions + ?Sized>(
    pred: &P,
    ds: &SurvivalDataset,
    censor: &CensorModel,
    t_min: f64,
    t_max: f64,
) -> Result<Option<f64>> {
    let mut samples = Vec::new();
    for t in uniform_points(t_min, t_max)? {
        if let Some(v) = uno_ctd(pred, ds, censor, t)? {
            samples.push((t, v));
        }
    }
    Ok(trapezoid_mean(&samples))
}

/// Time-dependent AUC over pairs Δ_i = 1, Y_i ≤ t, Y_j > t with weights 1/[Ŝc(Y_i)Ŝc(t)].
pub fn td_auc<P: SurvivalPredictions + ?Sized>(
    pred: &P,
    ds: &SurvivalDataset,
    censor: &CensorModel,
    t: f64,
) -> Result<Option<f64>> {
    check_len(pred.len(), ds)?;
    let s_t: Vec<f64> = (0..ds.len()).map(|j| pred.survival(j, t)).collect();
    let negatives: Vec<usize> = (0..ds.len()).filter(|&j| ds.record(j).time > t).collect();
    if negatives.is_empty() {
        return Ok(None);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, ri) in ds.records().iter().enumerate() {
        if !ri.is_death() || ri.time > t {
            continue;
        }
        let w = 1.0 / (censor.positive(i, ri.time)? * censor.positive(i, t)?);
        for &j in &negatives {
            den += w;
            if s_t[i] < s_t[j] {
                num += w;
            }
        }
    }
    Ok((den > 0.0).then(|| num / den))
}

/// IPCW Brier score at time t.
pub fn brier<P: SurvivalPredictions + ?Sized>(pred: &P, ds: &SurvivalDataset, censor: &CensorModel, t: f64) -> Result<f64> {
    check_len(pred.len(), ds)?;
    if ds.is_empty() {
        return Err(SurvError::validation("Brier score needs at least one record"));
    }
    let mut total = 0.0;
    for (i, r) in ds.records().iter().enumerate() {
        let s = pred.survival(i, t);
        if r.time <= t {
            if r.is_death() {
                total += s * s / censor.positive(i, r.time)?;
            }
        } else {
            total += (1.0 - s).powi(2) / censor.positive(i, t)?;
        }
    }
    Ok(total / ds.len() as f64)
}

/// Brier score averaged over [t_min, t_max] by a 64-point trapezoid.
pub fn ibs<P: SurvivalPredictions + ?Sized>(
    pred: &P,
    ds: &SurvivalDataset,
    censor: &CensorModel,
    t_min: f64,
    t_max: f64,
) -> Result<f64> {
    let samples = uniform_points(t_min, t_max)?
        .into_iter()
        .map(|t| Ok((t, brier(pred, ds, censor, t)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid_mean(&samples).expect("64 samples"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DCalibration {
    /// Bin probabilities p̂_1..p̂_B; bin 1 is [0, 1/B], bin ℓ is ((ℓ−1)/B, ℓ/B].
    pub proportions: Vec<f64>,
    pub chi2: f64,
    pub p_value: f64,
    pub calibrated: bool,
}

/// 1-based bin index of a survival probability.
pub fn dcal_bin(s: f64, bins: usize) -> usize {
    ((s * bins as f64 - INDEX_TOL).ceil() as i64).clamp(1, bins as i64) as usize
}

/// D-calibration with `bins` equal-width bins and a 0.05 threshold.
///
/// A censored record's 1/n mass is spread evenly over its own bin and every
/// later-index bin.
pub fn d_calibration<P: SurvivalPredictions + ?Sized>(pred: &P, ds: &SurvivalDataset, bins: usize) -> Result<DCalibration> {
    check_len(pred.len(), ds)?;
    if ds.is_empty() || bins < 2 {
        return Err(SurvError::validation("D-calibration needs n ≥ 1 and at least two bins"));
    }
    let n = ds.len() as f64;
    let mut p = vec![0.0; bins];
    for (i, r) in ds.records().iter().enumerate() {
        let l = dcal_bin(pred.survival(i, r.time), bins);
        if r.is_death() {
            p[l - 1] += 1.0 / n;
        } else {
            let share = 1.0 / n / (bins - l + 1) as f64;
            for v in &mut p[l - 1..] {
                *v += share;
            }
        }
    }
    let b = bins as f64;
    let chi2 = b * n * p.iter().map(|v| (v - 1.0 / b).powi(2)).sum::<f64>();
    let dist = ChiSquared::new(b - 1.0).map_err(|e| SurvError::Domain(e.to_string()))?;
    let p_value = dist.sf(chi2);
    Ok(DCalibration {
        proportions: p,
        chi2,
        p_value,
        calibrated: p_value >= 0.05,
    })
}

/// E[T | T > y] under a training Kaplan-Meier curve, integrated to `horizon`.
///
/// Falls back to y (with a warning) when Ŝ_KM(y) = 0.
pub fn margin_time(km: &KMEstimate, y: f64, horizon: f64) -> f64 {
    let s = km.eval(y);
    if s <= 0.0 {
        log::warn!("Kaplan-Meier survival is zero at {y}; margin imputation falls back to the observed time");
        return y;
    }
    let tail = if horizon > y { km.area(horizon) - km.area(y) } else { 0.0 };
    y + tail / s
}

/// Pseudo-observation time (n+1)·∫Ŝ_KM⁺ − n·∫Ŝ_KM, both areas to `horizon`.
pub fn po_time(train: &SurvivalDataset, y: f64, event: u32, horizon: f64) -> Result<f64> {
    train.require_deaths()?;
    let train = train.collapse_events();
    let n = train.len() as f64;
    let extra = SurvivalDataset::new(
        vec![crate::datamodel::SurvivalRecord::new(vec![0.0; train.dim()], y, u32::from(event != 0))],
        1,
    )?;
    let plus = train.concat(&extra)?;
    let a_plus = kaplan_meier(&plus)?.area(horizon);
    let a = kaplan_meier(&train)?.area(horizon);
    Ok((n + 1.0) * a_plus - n * a)
}

/// Common PO / margin horizon: the largest observed time across both sets.
pub fn common_horizon(train: &SurvivalDataset, eval: &SurvivalDataset) -> f64 {
    train.max_time().max(eval.max_time())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeMode {
    Hinge,
    Margin,
    Po,
}

impl std::str::FromStr for ImputeMode {
    type Err = SurvError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hinge" => ImputeMode::Hinge,
            "margin" => ImputeMode::Margin,
            "po" => ImputeMode::Po,
            other => return Err(SurvError::validation(format!("unknown imputation mode '{other}'"))),
        })
    }
}

/// Training-side ingredients for imputing censored targets.
pub struct Imputer<'a> {
    pub train: &'a SurvivalDataset,
    pub km: KMEstimate,
    pub horizon: f64,
}

impl<'a> Imputer<'a> {
    pub fn new(train: &'a SurvivalDataset, eval: &SurvivalDataset) -> Result<Self> {
        Ok(Imputer {
            train,
            km: kaplan_meier(&train.collapse_events())?,
            horizon: common_horizon(train, eval),
        })
    }

    /// Absolute error of a point prediction against the record's (imputed) target.
    pub fn error(&self, mode: ImputeMode, pred: f64, y: f64, event: u32) -> Result<f64> {
        if event != 0 {
            return Ok((pred - y).abs());
        }
        Ok(match mode {
            ImputeMode::Hinge => (y - pred).max(0.0),
            ImputeMode::Margin => (pred - margin_time(&self.km, y, self.horizon)).abs(),
            ImputeMode::Po => (pred - po_time(self.train, y, 0, self.horizon)?).abs(),
        })
    }
}

/// Mean absolute survival-time error; the weighted form gives censored
/// records weight 1 − Ŝ_KM(Y_i) and normalizes by the total weight.
pub fn mae_survival(pred_times: &[f64], eval: &SurvivalDataset, imputer: &Imputer<'_>, mode: ImputeMode, weighted: bool) -> Result<f64> {
    check_len(pred_times.len(), eval)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (r, &t_hat) in eval.records().iter().zip(pred_times) {
        let w = if weighted && r.event == 0 { 1.0 - imputer.km.eval(r.time) } else { 1.0 };
        num += w * imputer.error(mode, t_hat, r.time, r.event)?;
        den += w;
    }
    if den <= 0.0 {
        return Err(SurvError::degenerate("all MAE weights are zero"));
    }
    Ok(num / den)
}

/// Split-conformal band around a point predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct ConformalBand {
    pub alpha: f64,
    /// Calibrated radius; may be infinite.
    pub qhat: f64,
    pub n_calib: usize,
}

impl ConformalBand {
    /// q̂ = R_(⌈(1−α)(n+1)⌉) with R_(n+1) = ∞.
    pub fn from_residuals(residuals: &[f64], alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SurvError::validation("α must lie in (0, 1)"));
        }
        if residuals.iter().any(|r| r.is_nan()) {
            return Err(SurvError::validation("residuals must not be NaN"));
        }
        let n = residuals.len();
        let mut sorted = residuals.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        sorted.push(f64::INFINITY);
        let k = (((1.0 - alpha) * (n as f64 + 1.0)) - INDEX_TOL).ceil().max(1.0) as usize;
        Ok(ConformalBand {
            alpha,
            qhat: sorted[k.min(n + 1) - 1],
            n_calib: n,
        })
    }

    /// Calibrates on a held-out set: residuals are |T̂ − target| with censored
    /// targets from the chosen imputation.
    pub fn calibrate(calib: &SurvivalDataset, pred_times: &[f64], imputer: &Imputer<'_>, mode: ImputeMode, alpha: f64) -> Result<Self> {
        check_len(pred_times.len(), calib)?;
        let residuals = calib
            .records()
            .iter()
            .zip(pred_times)
            .map(|(r, &t)| imputer.error(mode, t, r.time, r.event))
            .collect::<Result<Vec<_>>>()?;
        Self::from_residuals(&residuals, alpha)
    }

    /// [max(0, T̂ − q̂), T̂ + q̂].
    pub fn cover(&self, pred_time: f64) -> (f64, f64) {
        ((pred_time - self.qhat).max(0.0), pred_time + self.qhat)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    /// `None` when the score is undefined.
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, value: Option<f64>, note: Option<&str>) {
        self.entries.push(MetricEntry {
            name: name.into(),
            value,
            note: note.map(str::to_owned),
        });
    }

    pub fn get(&self, name: &str) -> Option<&MetricEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>12}  note\n", "metric", "value");
        for e in &self.entries {
            let v = e.value.map_or("undefined".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!("{:<width$}  {:>12}  {}\n", e.name, v, e.note.as_deref().unwrap_or("")));
        }
        out
    }
}
