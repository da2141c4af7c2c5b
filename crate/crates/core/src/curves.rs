//! Curve algebra on a time grid.
//!
//! Discrete curves follow the usual identities: S[ℓ] = Π_{m≤ℓ}(1 − h[m]),
//! f[ℓ] = S[ℓ−1] − S[ℓ], H[ℓ] = Σ_{m≤ℓ} h[m], F = 1 − S, with S[0] = 1.
//! All conversions go through the survival values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datamodel::{SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};

/// Floor applied before taking logs of survival values.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveRole {
    Survival,
    Hazard,
    Cumhaz,
    Pmf,
    Cdf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interp {
    #[default]
    ForwardFill,
    ConstantHazard,
    ConstantDensity,
}

impl std::str::FromStr for Interp {
    type Err = SurvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward-fill" => Ok(Interp::ForwardFill),
            "constant-hazard" => Ok(Interp::ConstantHazard),
            "constant-density" => Ok(Interp::ConstantDensity),
            other => Err(SurvError::validation(format!("unknown interpolation '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub role: CurveRole,
    pub interp: Interp,
}

const TOL: f64 = 1e-12;

impl StepCurve {
    pub fn new(grid: TimeGrid, values: Vec<f64>, role: CurveRole, interp: Interp) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SurvError::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SurvError::validation("curve values must be finite"));
        }
        let c = StepCurve {
            grid,
            values,
            role,
            interp,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn survival(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values, CurveRole::Survival, Interp::ForwardFill)
    }

    pub fn with_interp(mut self, interp: Interp) -> Self {
        self.interp = interp;
        self
    }

    fn validate(&self) -> Result<()> {
        let v = &self.values;
        let nonincreasing = v.windows(2).all(|w| w[1] <= w[0] + TOL);
        let nondecreasing = v.windows(2).all(|w| w[1] + TOL >= w[0]);
        let in_unit = v.iter().all(|&x| (-TOL..=1.0 + TOL).contains(&x));
        let ok = match self.role {
            CurveRole::Survival => in_unit && nonincreasing,
            CurveRole::Cdf => in_unit && nondecreasing,
            CurveRole::Hazard => in_unit,
            CurveRole::Cumhaz => v.iter().all(|&x| x >= -TOL) && nondecreasing,
            CurveRole::Pmf => v.iter().all(|&x| x >= -TOL) && v.iter().sum::<f64>() <= 1.0 + 1e-9,
        };
        if ok {
            Ok(())
        } else {
            Err(SurvError::validation(format!("values are not a valid {:?} curve", self.role)))
        }
    }

    /// Survival values S[1..L] implied by this curve.
    pub fn survival_values(&self) -> Vec<f64> {
        let v = &self.values;
        match self.role {
            CurveRole::Survival => v.clone(),
            CurveRole::Cdf => v.iter().map(|f| 1.0 - f).collect(),
            CurveRole::Pmf => {
                let mut acc = 1.0;
                v.iter()
                    .map(|f| {
                        acc -= f;
                        acc.max(0.0)
                    })
                    .collect()
            }
            CurveRole::Hazard => {
                let mut acc = 1.0;
                v.iter()
                    .map(|h| {
                        acc *= 1.0 - h;
                        acc
                    })
                    .collect()
            }
            CurveRole::Cumhaz => {
                let mut acc = 1.0;
                let mut prev = 0.0;
                v.iter()
                    .map(|&big_h| {
                        acc *= 1.0 - (big_h - prev);
                        prev = big_h;
                        acc
                    })
                    .collect()
            }
        }
    }

    /// Converts to another role using the exact discrete identities.
    pub fn convert(&self, target: CurveRole) -> Result<StepCurve> {
        if target == self.role {
            return Ok(self.clone());
        }
        // Hazard ↔ cumhaz does not need survival values.
        let values = match (self.role, target) {
            (CurveRole::Hazard, CurveRole::Cumhaz) => cumsum(&self.values),
            (CurveRole::Cumhaz, _) if target == CurveRole::Hazard => diffs(&self.values),
            _ => {
                let s = self.survival_values();
                match target {
                    CurveRole::Survival => s,
                    CurveRole::Cdf => s.iter().map(|v| 1.0 - v).collect(),
                    CurveRole::Pmf => {
                        let mut prev = 1.0;
                        s.iter()
                            .map(|&v| {
                                let f = prev - v;
                                prev = v;
                                f
                            })
                            .collect()
                    }
                    CurveRole::Hazard => hazards_from_survival(&s)?,
                    CurveRole::Cumhaz => cumsum(&hazards_from_survival(&s)?),
                }
            }
        };
        StepCurve::new(self.grid.clone(), values, target, self.interp)
    }

    /// S(t) with S(0) = 1 under the curve's interpolation mode.
    pub fn eval_survival(&self, t: f64) -> f64 {
        let s = if self.role == CurveRole::Survival {
            std::borrow::Cow::Borrowed(&self.values)
        } else {
            std::borrow::Cow::Owned(self.survival_values())
        };
        eval_knots(&self.grid, &s, self.interp, t)
    }

    /// Smallest t with S(t) ≤ 1/2, or `None` if the curve never gets there.
    pub fn median_time(&self) -> Option<f64> {
        let s = self.survival_values();
        let l = s.iter().position(|&v| v <= 0.5)? + 1;
        let (a, b) = (self.grid.tau(l - 1), self.grid.tau(l));
        let s0 = if l == 1 { 1.0 } else { s[l - 2] };
        let s1 = s[l - 1];
        if s0 <= 0.5 {
            return Some(a);
        }
        Some(match self.interp {
            Interp::ForwardFill => b,
            Interp::ConstantDensity => a + (s0 - 0.5) / (s0 - s1) * (b - a),
            Interp::ConstantHazard => {
                let (l0, l1) = (s0.max(LOG_FLOOR).ln(), s1.max(LOG_FLOOR).ln());
                a + (l0 - 0.5f64.ln()) / (l0 - l1) * (b - a)
            }
        })
    }

    /// ∫_0^horizon S(t) dt, integrated exactly segment by segment.
    pub fn mean_time(&self, horizon: Option<f64>) -> f64 {
        let s = self.survival_values();
        integrate_knots(&self.grid, &s, self.interp, horizon.unwrap_or(self.grid.last()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("time\tvalue\n");
        for (t, v) in self.grid.times().iter().zip(&self.values) {
            let _ = writeln!(out, "{t}\t{v}");
        }
        out
    }
}

fn cumsum(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn diffs(v: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    v.iter()
        .map(|&x| {
            let d = x - prev;
            prev = x;
            d
        })
        .collect()
}

fn hazards_from_survival(s: &[f64]) -> Result<Vec<f64>> {
    let mut prev = 1.0;
    s.iter()
        .enumerate()
        .map(|(l, &v)| {
            if prev <= 0.0 {
                return Err(SurvError::degenerate(format!(
                    "hazard at index {} needs division by a zero survival value",
                    l + 1
                )));
            }
            let h = (prev - v) / prev;
            prev = v;
            Ok(h)
        })
        .collect()
}

/// Piecewise evaluation through knots (0, 1), (τ_1, S_1), …, constant after τ_L.
pub fn eval_knots(grid: &TimeGrid, s: &[f64], interp: Interp, t: f64) -> f64 {
    if t <= 0.0 {
        return if grid.tau(1) <= 0.0 && t >= 0.0 { s[0] } else { 1.0 };
    }
    let k = grid.kappa(t);
    if k == grid.len() {
        return s[k - 1];
    }
    let s0 = if k == 0 { 1.0 } else { s[k - 1] };
    let (a, b) = (grid.tau(k), grid.tau(k + 1));
    let s1 = s[k];
    let w = (t - a) / (b - a);
    match interp {
        Interp::ForwardFill => s0,
        Interp::ConstantDensity => s0 + (s1 - s0) * w,
        Interp::ConstantHazard => {
            let (l0, l1) = (s0.max(LOG_FLOOR).ln(), s1.max(LOG_FLOOR).ln());
            (l0 + (l1 - l0) * w).exp()
        }
    }
}

fn segment_area(s0: f64, s1: f64, width: f64, interp: Interp) -> f64 {
    match interp {
        Interp::ForwardFill => s0 * width,
        Interp::ConstantDensity => 0.5 * (s0 + s1) * width,
        Interp::ConstantHazard => {
            let (a, b) = (s0.max(LOG_FLOOR), s1.max(LOG_FLOOR));
            let r = (a / b).ln();
            if r.abs() < 1e-12 {
                a * width
            } else {
                (a - b) / r * width
            }
        }
    }
}

/// Exact area under the interpolated knots on [0, horizon].
pub fn integrate_knots(grid: &TimeGrid, s: &[f64], interp: Interp, horizon: f64) -> f64 {
    if horizon <= 0.0 {
        return 0.0;
    }
    let mut area = 0.0;
    let mut prev_t = 0.0;
    let mut prev_s = 1.0;
    for (l, &tau) in grid.times().iter().enumerate() {
        if tau >= horizon {
            let end_s = eval_knots(grid, s, interp, horizon);
            // forward fill holds prev_s on the open segment
            return area + segment_area(prev_s, end_s, horizon - prev_t, interp);
        }
        area += segment_area(prev_s, s[l], tau - prev_t, interp);
        prev_t = tau;
        prev_s = s[l];
    }
    area + prev_s * (horizon - prev_t)
}

/// (Σ_{m≤ℓ} h[m], −log Π_{m≤ℓ}(1 − h[m])) for a discrete hazard curve.
pub fn taylor_gap(hazard: &StepCurve, ell: usize) -> Result<(f64, f64)> {
    if hazard.role != CurveRole::Hazard {
        return Err(SurvError::validation("taylor_gap needs a hazard curve"));
    }
    if ell == 0 || ell > hazard.values.len() {
        return Err(SurvError::validation(format!("index {ell} out of range")));
    }
    let hs = &hazard.values[..ell];
    if let Some(h) = hs.iter().find(|&&h| !(0.0..1.0).contains(&h)) {
        return Err(SurvError::Domain(format!("hazard {h} outside [0, 1)")));
    }
    let sum = hs.iter().sum();
    let neglog = -hs.iter().map(|h| (-h).ln_1p()).sum::<f64>();
    Ok((sum, neglog))
}

/// Continuous-time S = exp(−H) for cumulative-hazard samples.
pub fn cont_convert(cumhaz: &[f64]) -> Result<Vec<f64>> {
    if cumhaz.iter().any(|&h| h < 0.0 || !h.is_finite()) {
        return Err(SurvError::validation("cumulative hazard must be finite and nonnegative"));
    }
    if cumhaz.windows(2).any(|w| w[1] < w[0]) {
        return Err(SurvError::validation("cumulative hazard must be non-decreasing"));
    }
    Ok(cumhaz.iter().map(|h| (-h).exp()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeKind {
    Continuous,
    Discrete,
}

/// Predicted curves for one input on a grid.
///
/// For continuous-time models `hazard` holds the instantaneous rate at each
/// knot and `cumhaz` the integrated hazard; for discrete-time models they are
/// the per-bin probabilities and their partial sums, and `pmf` is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub grid: TimeGrid,
    pub kind: TimeKind,
    pub survival: Vec<f64>,
    pub hazard: Vec<f64>,
    pub cumhaz: Vec<f64>,
    pub pmf: Option<Vec<f64>>,
    pub interp: Interp,
}

impl PredictionBundle {
    /// Continuous-time bundle from a rate and an integrated hazard.
    pub fn continuous(grid: TimeGrid, hazard: Vec<f64>, cumhaz: Vec<f64>) -> Result<Self> {
        let survival = cont_convert(&cumhaz)?;
        Ok(PredictionBundle {
            grid,
            kind: TimeKind::Continuous,
            survival,
            hazard,
            cumhaz,
            pmf: None,
            interp: Interp::ConstantHazard,
        })
    }

    /// Discrete-time bundle from any one discrete curve.
    pub fn discrete(curve: &StepCurve) -> Result<Self> {
        let survival = curve.survival_values();
        let pmf = curve.convert(CurveRole::Pmf)?.values;
        let hazard = match curve.role {
            CurveRole::Hazard => curve.values.clone(),
            _ => hazards_from_survival(&survival).unwrap_or_else(|_| {
                // after S hits zero the remaining hazards are undefined; report 1
                let mut prev = 1.0;
                survival
                    .iter()
                    .map(|&v| {
                        let h = if prev > 0.0 { (prev - v) / prev } else { 1.0 };
                        prev = v;
                        h
                    })
                    .collect()
            }),
        };
        let cumhaz = cumsum(&hazard);
        Ok(PredictionBundle {
            grid: curve.grid.clone(),
            kind: TimeKind::Discrete,
            survival,
            hazard,
            cumhaz,
            pmf: Some(pmf),
            interp: curve.interp,
        })
    }

    pub fn survival_curve(&self) -> StepCurve {
        StepCurve {
            grid: self.grid.clone(),
            values: self.survival.clone(),
            role: CurveRole::Survival,
            interp: self.interp,
        }
    }

    pub fn with_interp(mut self, interp: Interp) -> Self {
        self.interp = interp;
        self
    }

    pub fn eval_survival(&self, t: f64) -> f64 {
        eval_knots(&self.grid, &self.survival, self.interp, t)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("time\tsurvival\thazard\tcumhaz\n");
        for l in 0..self.grid.len() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                self.grid.times()[l],
                self.survival[l],
                self.hazard[l],
                self.cumhaz[l]
            );
        }
        out
    }
}

/// A fitted model that can evaluate S(t | x) at any t ≥ 0.
pub trait SurvivalModel {
    fn survival(&self, x: &[f64], t: f64) -> f64;
}

/// Per-record survival predictions on an evaluation set.
pub trait SurvivalPredictions {
    fn len(&self) -> usize;
    /// Ŝ(t | X_record).
    fn survival(&self, record: usize, t: f64) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SurvivalPredictions for [PredictionBundle] {
    fn len(&self) -> usize {
        <[PredictionBundle]>::len(self)
    }
    fn survival(&self, record: usize, t: f64) -> f64 {
        self[record].eval_survival(t)
    }
}

impl SurvivalPredictions for Vec<PredictionBundle> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn survival(&self, record: usize, t: f64) -> f64 {
        self[record].eval_survival(t)
    }
}

impl SurvivalPredictions for Vec<StepCurve> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn survival(&self, record: usize, t: f64) -> f64 {
        self[record].eval_survival(t)
    }
}

/// Evaluates a [`SurvivalModel`] on the features of a dataset.
pub struct ModelOnData<'a, M: ?Sized> {
    pub model: &'a M,
    pub data: &'a SurvivalDataset,
}

impl<'a, M: SurvivalModel + ?Sized> SurvivalPredictions for ModelOnData<'a, M> {
    fn len(&self) -> usize {
        self.data.len()
    }
    fn survival(&self, record: usize, t: f64) -> f64 {
        self.model.survival(&self.data.record(record).features, t)
    }
}

/// Wraps a closure `(record, t) -> Ŝ(t | X_record)`.
pub struct FnPredictions<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(usize, f64) -> f64> SurvivalPredictions for FnPredictions<F> {
    fn len(&self) -> usize {
        self.n
    }
    fn survival(&self, record: usize, t: f64) -> f64 {
        (self.f)(record, t)
    }
}
