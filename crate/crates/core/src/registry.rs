//! One serializable wrapper over every model family, plus a declarative fit
//! spec, so front ends (CLI, Python) share the same plumbing.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, LossTrace, NetShape, OptConfig, OutputTransform};
use crate::competing::{cr_fit, CRDeepHit, RankingConfig};
use crate::cox::{coxtime_fit, fit_deepsurv, CoxModel, CoxTimeModel, CoxTimeMode, ScoreConfig};
use crate::curves::{PredictionBundle, StepCurve, SurvivalModel};
use crate::datamodel::{build_grid, GridStrategy, SurvivalDataset, TimeGrid};
use crate::discretemodels::{fit_discrete, DiscreteFamily, DiscreteModel};
use crate::error::{Result, SurvError};
use crate::kernel::{dksa_fit, kernet_build, DKSAModel, KernetModel};
use crate::parametric::{fit_parametric, Baseline, ParametricFamily, ParametricModel};
use crate::soden::{soden_fit, EncoderKind, SodenModel, SolverConfig, DEFAULT_DELTA};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Exponential,
    Weibull,
    /// Weibull baseline with a neural log partial hazard.
    NeuralWeibull,
    Deepsurv,
    CoxTime,
    Deephit,
    NnetSurvival,
    Dksa,
    Kernet,
    Soden,
    CrDeephit,
}

impl std::str::FromStr for ModelKind {
    type Err = SurvError;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| SurvError::validation(format!("unknown model '{s}'")))
    }
}

/// Everything needed to fit one model; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub grid: GridStrategy,
    pub grid_size: Option<usize>,
    /// DeepSurv / Cox-Time: use a linear score instead of the MLP.
    pub linear: bool,
    pub case_control: bool,
    pub placeholder: bool,
    pub embed_dim: usize,
    pub eps: f64,
    pub tau_pred: Option<f64>,
    pub encoder: EncoderKind,
    pub steps_per_unit: Option<f64>,
    pub eta: Vec<f64>,
    pub sigma: f64,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            model: ModelKind::Weibull,
            hidden: vec![32],
            activation: Activation::Relu,
            lr: 1e-2,
            epochs: 200,
            batch_size: None,
            seed: 0,
            grid: GridStrategy::Quantile,
            grid_size: Some(20),
            linear: false,
            case_control: false,
            placeholder: true,
            embed_dim: 4,
            eps: 0.1,
            tau_pred: None,
            encoder: EncoderKind::Generic,
            steps_per_unit: None,
            eta: Vec::new(),
            sigma: 0.1,
        }
    }
}

impl FitSpec {
    pub fn shape(&self) -> NetShape {
        NetShape {
            hidden: self.hidden.clone(),
            activation: self.activation,
        }
    }

    pub fn opt(&self) -> OptConfig {
        OptConfig {
            batch_size: self.batch_size,
            ..OptConfig::adam(self.lr, self.epochs)
        }
    }

    fn score(&self) -> ScoreConfig {
        if self.linear {
            ScoreConfig::Linear
        } else {
            ScoreConfig::Mlp {
                hidden: self.hidden.clone(),
                activation: self.activation,
            }
        }
    }

    fn time_grid(&self, ds: &SurvivalDataset) -> Result<TimeGrid> {
        build_grid(ds, self.grid, self.grid_size)
    }
}

/// A fitted model of any family, tagged by `model` in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum SavedModel {
    Parametric(ParametricModel),
    Cox(CoxModel),
    CoxTime(CoxTimeModel),
    Discrete(DiscreteModel),
    Dksa(DKSAModel),
    Kernet(KernetModel),
    Soden(SodenModel),
    CompetingDeephit(CRDeepHit),
}

/// Fits the model described by `spec`; kernets cluster the whole training set.
pub fn fit_model(spec: &FitSpec, ds: &SurvivalDataset) -> Result<(SavedModel, LossTrace)> {
    if ds.is_empty() {
        return Err(SurvError::validation("training data is empty"));
    }
    let opt = spec.opt();
    let seed = spec.seed;
    let single = |ds: &SurvivalDataset| -> Result<()> {
        ds.require_single_risk()?;
        ds.require_deaths()
    };
    match spec.model {
        ModelKind::Exponential | ModelKind::Weibull | ModelKind::NeuralWeibull => {
            single(ds)?;
            let family = match spec.model {
                ModelKind::Exponential => ParametricFamily::Exponential,
                ModelKind::Weibull => ParametricFamily::Weibull,
                _ => ParametricFamily::Generic {
                    baseline: Baseline::Weibull,
                    net: spec.shape().config(ds.dim(), 1, OutputTransform::Identity),
                },
            };
            let (m, t) = fit_parametric(family, ds, &opt, seed)?;
            Ok((SavedModel::Parametric(m), t))
        }
        ModelKind::Deepsurv => {
            single(ds)?;
            let (m, t) = fit_deepsurv(ds, &spec.score(), &opt, seed)?;
            Ok((SavedModel::Cox(m), t))
        }
        ModelKind::CoxTime => {
            single(ds)?;
            let mode = if spec.case_control { CoxTimeMode::CaseControl } else { CoxTimeMode::Exact };
            let (m, t) = coxtime_fit(ds, &spec.score(), &opt, mode, seed)?;
            Ok((SavedModel::CoxTime(m), t))
        }
        ModelKind::Deephit | ModelKind::NnetSurvival => {
            single(ds)?;
            let family = match spec.model {
                ModelKind::Deephit => DiscreteFamily::DeepHit { placeholder: spec.placeholder },
                _ => DiscreteFamily::NnetSurvival,
            };
            let (m, t) = fit_discrete(family, ds, &spec.time_grid(ds)?, &spec.shape(), &opt, seed)?;
            Ok((SavedModel::Discrete(m), t))
        }
        ModelKind::Dksa | ModelKind::Kernet => {
            single(ds)?;
            let grid = build_grid(ds, GridStrategy::UniqueDeaths, None)?;
            let (m, t) = dksa_fit(ds, &grid, &spec.shape(), spec.embed_dim, &opt, seed)?;
            if spec.model == ModelKind::Dksa {
                return Ok((SavedModel::Dksa(m), t));
            }
            let all: Vec<usize> = (0..ds.len()).collect();
            let k = kernet_build(&m, &all, spec.eps, spec.tau_pred, None)?;
            Ok((SavedModel::Kernet(k), t))
        }
        ModelKind::Soden => {
            single(ds)?;
            let solver = spec.steps_per_unit.map(|s| SolverConfig {
                steps_per_unit: s,
                delta: DEFAULT_DELTA,
            });
            let (m, t) = soden_fit(spec.encoder, ds, &spec.shape(), solver, &opt, seed)?;
            Ok((SavedModel::Soden(m), t))
        }
        ModelKind::CrDeephit => {
            ds.require_deaths()?;
            let k = ds.num_events() as usize;
            let ranking = if spec.eta.is_empty() {
                RankingConfig::none(k)
            } else {
                RankingConfig {
                    eta: spec.eta.clone(),
                    sigma: spec.sigma,
                }
            };
            if ranking.eta.len() != k {
                return Err(SurvError::validation(format!("eta needs one weight per event type ({k})")));
            }
            let (m, t) = cr_fit(ds, &spec.time_grid(ds)?, &spec.shape(), ranking, spec.placeholder, &opt, seed)?;
            Ok((SavedModel::CompetingDeephit(m), LossTrace { epochs: t.total }))
        }
    }
}

fn km_bundle(grid: &TimeGrid, s: &[f64]) -> Result<PredictionBundle> {
    PredictionBundle::discrete(&StepCurve::survival(grid.clone(), s.to_vec())?)
}

impl SavedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn is_competing(&self) -> bool {
        matches!(self, SavedModel::CompetingDeephit(_))
    }

    /// Expected feature dimension.
    pub fn dim(&self) -> usize {
        match self {
            SavedModel::Parametric(m) => m.dim(),
            SavedModel::Cox(m) => m.dim(),
            SavedModel::CoxTime(m) => m.dim(),
            SavedModel::Discrete(m) => m.dim(),
            SavedModel::Dksa(m) => m.train.dim(),
            SavedModel::Kernet(m) => m.net.config.input_dim(),
            SavedModel::Soden(m) => m.dim,
            SavedModel::CompetingDeephit(m) => m.net.config.input_dim(),
        }
    }

    /// The model's own time grid, if it has one.
    pub fn natural_grid(&self) -> Option<TimeGrid> {
        match self {
            SavedModel::Parametric(_) | SavedModel::Soden(_) => None,
            SavedModel::Cox(m) => Some(m.baseline.grid.clone()),
            SavedModel::CoxTime(m) => Some(m.baseline.grid.clone()),
            SavedModel::Discrete(m) => Some(m.grid.clone()),
            SavedModel::Dksa(m) => Some(m.grid.clone()),
            SavedModel::Kernet(m) => Some(m.grid.clone()),
            SavedModel::CompetingDeephit(m) => Some(m.grid.clone()),
        }
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(SurvError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Overall survival Ŝ(t|x); for competing risks this is 1 − Σ_δ F̂_δ(t|x).
    pub fn survival_at(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_dim(x)?;
        let s = match self {
            SavedModel::Parametric(m) => m.survival(x, t),
            SavedModel::Cox(m) => m.survival(x, t),
            SavedModel::CoxTime(m) => m.survival(x, t),
            SavedModel::Discrete(m) => m.curve(x)?.eval_survival(t),
            SavedModel::Dksa(m) => m.predict(x)?.eval(t),
            SavedModel::Kernet(m) => m.predict(x)?.eval(t),
            SavedModel::Soden(m) => (-m.cumhaz(x, t)?).exp(),
            SavedModel::CompetingDeephit(m) => {
                let total: f64 = m.cif(x)?.iter().map(|c| crate::competing::eval_cif(c, t)).sum();
                (1.0 - total).max(0.0)
            }
        };
        if s.is_nan() {
            return Err(SurvError::Domain(format!("survival at t = {t} is NaN")));
        }
        Ok(s)
    }

    /// f, S, h, H on `grid` (or the model's own grid for discrete families).
    pub fn predict(&self, x: &[f64], grid: &TimeGrid) -> Result<PredictionBundle> {
        self.check_dim(x)?;
        match self {
            SavedModel::Parametric(m) => m.predict(x, grid),
            SavedModel::Cox(m) => m.predict(x, grid),
            SavedModel::CoxTime(m) => m.predict(x, grid),
            SavedModel::Discrete(m) => m.predict(x),
            SavedModel::Dksa(m) => {
                let km = m.predict(x)?;
                km_bundle(km.grid(), km.survival())
            }
            SavedModel::Kernet(m) => {
                let km = m.predict(x)?;
                km_bundle(km.grid(), km.survival())
            }
            SavedModel::Soden(m) => m.predict(x, grid),
            SavedModel::CompetingDeephit(m) => {
                let s: Vec<f64> = m
                    .grid
                    .times()
                    .iter()
                    .map(|&t| self.survival_at(x, t))
                    .collect::<Result<_>>()?;
                km_bundle(&m.grid, &s)
            }
        }
    }

    /// Cumulative incidence curves (competing-risks models only).
    pub fn cif(&self, x: &[f64]) -> Result<Vec<StepCurve>> {
        match self {
            SavedModel::CompetingDeephit(m) => {
                self.check_dim(x)?;
                m.cif(x)
            }
            _ => Err(SurvError::validation("cumulative incidence needs a competing-risks model")),
        }
    }

    /// A log-partial-hazard score for proportional-hazards families.
    pub fn ph_score(&self, x: &[f64]) -> Result<Option<f64>> {
        self.check_dim(x)?;
        Ok(match self {
            SavedModel::Parametric(m) => Some(m.log_partial_hazard(&m.store.view(), x)?),
            SavedModel::Cox(m) => Some(m.risk_score(x)?),
            _ => None,
        })
    }
}

impl SurvivalModel for SavedModel {
    fn survival(&self, x: &[f64], t: f64) -> f64 {
        self.survival_at(x, t).unwrap_or(f64::NAN)
    }
}
