//! Discrete-time neural survival models on a fixed grid.
//!
//! DeepHit (single risk) outputs a PMF through a softmax; Nnet-survival
//! outputs per-bin hazards through sigmoids.

use serde::{Deserialize, Serialize};

use crate::autodiff::{init_rng, train, LossTrace, Mlp, NetShape, OptConfig, OutputTransform, ParamStore, ParamView, Real};
use crate::curves::{CurveRole, Interp, PredictionBundle, StepCurve, SurvivalModel};
use crate::datamodel::{event_matrix, SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DiscreteFamily {
    /// Softmax PMF over L bins, plus an extra bin for times past τ_L when `placeholder` is set.
    DeepHit { placeholder: bool },
    /// Independent sigmoid hazard per bin.
    NnetSurvival,
}

impl DiscreteFamily {
    fn outputs(&self, l: usize) -> usize {
        match self {
            DiscreteFamily::DeepHit { placeholder: true } => l + 1,
            _ => l,
        }
    }

    fn transform(&self) -> OutputTransform {
        match self {
            DiscreteFamily::DeepHit { .. } => OutputTransform::Softmax,
            DiscreteFamily::NnetSurvival => OutputTransform::Sigmoid,
        }
    }
}

/// −log f[κ] for deaths, −log Σ_{m>κ} f[m] for censored records.
///
/// `pmf` may carry one trailing placeholder bin beyond the grid.
pub fn pmf_nll_term<S: Real>(pmf: &[S], l: usize, kappa: usize, death: bool) -> Result<S> {
    if death {
        if kappa == 0 {
            return Err(SurvError::validation("death before the first grid time has no bin"));
        }
        let f = pmf[kappa - 1];
        if f.value() <= 0.0 {
            return Err(SurvError::degenerate("zero probability at an observed death"));
        }
        Ok(-f.ln())
    } else {
        let tail = &pmf[kappa..];
        if tail.is_empty() {
            return Err(SurvError::validation(format!(
                "censored at the last of {l} grid times leaves no tail mass; enable a placeholder bin"
            )));
        }
        let mass = S::sum(tail);
        if mass.value() <= 0.0 {
            return Err(SurvError::degenerate("zero tail mass for a censored record"));
        }
        Ok(-mass.ln())
    }
}

/// Mean PMF negative log-likelihood; `pmfs[i]` belongs to record `idx[i]`.
pub fn pmf_nll<S: Real>(pmfs: &[Vec<S>], ds: &SurvivalDataset, idx: &[usize], grid: &TimeGrid) -> Result<S> {
    let terms = idx
        .iter()
        .zip(pmfs)
        .map(|(&i, f)| {
            let r = ds.record(i);
            pmf_nll_term(f, grid.len(), grid.kappa(r.time), r.is_death())
        })
        .collect::<Result<Vec<S>>>()?;
    Ok(S::sum(&terms) / idx.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HazardForm {
    /// Outer sum over records.
    PerPoint,
    /// Outer sum over time indices using the event matrix.
    PerIndex,
}

/// Mean Bernoulli negative log-likelihood of discrete hazards.
///
/// Record i survives bins 1..κ_i−1 and, at κ_i, dies if Δ_i = 1 or survives
/// otherwise. Censored records with κ_i = 0 contribute nothing.
pub fn hazard_nll_discrete<S: Real>(
    hazards: &[Vec<S>],
    ds: &SurvivalDataset,
    idx: &[usize],
    grid: &TimeGrid,
    form: HazardForm,
) -> Result<S> {
    if idx.is_empty() {
        return Err(SurvError::validation("empty batch"));
    }
    for &i in idx {
        let r = ds.record(i);
        if r.is_death() && grid.kappa(r.time) == 0 {
            return Err(SurvError::validation(format!("record {i}: death before the first grid time")));
        }
    }
    let log_h = |h: S| h.ln();
    let log_1mh = |h: S| h.rsub(1.0).ln();
    let mut terms: Vec<S> = Vec::new();
    match form {
        HazardForm::PerPoint => {
            for (&i, h) in idx.iter().zip(hazards) {
                let r = ds.record(i);
                let k = grid.kappa(r.time);
                for m in 1..k {
                    terms.push(log_1mh(h[m - 1]));
                }
                if k >= 1 {
                    terms.push(if r.is_death() { log_h(h[k - 1]) } else { log_1mh(h[k - 1]) });
                }
            }
        }
        HazardForm::PerIndex => {
            let b = event_matrix(ds, grid);
            let kap: Vec<usize> = idx.iter().map(|&i| grid.kappa(ds.record(i).time)).collect();
            for ell in 1..=grid.len() {
                for (pos, &i) in idx.iter().enumerate() {
                    if kap[pos] >= ell {
                        let h = hazards[pos][ell - 1];
                        terms.push(if b.get(i, ell) == 1 { log_h(h) } else { log_1mh(h) });
                    }
                }
            }
        }
    }
    let n = idx.len() as f64;
    match terms.is_empty() {
        true => Ok(hazards[0][0].lift(0.0)),
        false => Ok(-S::sum(&terms) / n),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pub family: DiscreteFamily,
    pub grid: TimeGrid,
    pub net: Mlp,
    pub store: ParamStore,
    pub interp: Interp,
}

impl DiscreteModel {
    pub fn init(family: DiscreteFamily, grid: TimeGrid, dim: usize, shape: &NetShape, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let cfg = shape.config(dim, family.outputs(grid.len()), family.transform());
        let net = Mlp::register(&mut store, "net", cfg, &mut init_rng(seed))?;
        Ok(DiscreteModel {
            family,
            grid,
            net,
            store,
            interp: Interp::ForwardFill,
        })
    }

    /// Same layout with all parameters zero.
    pub fn zeros(family: DiscreteFamily, grid: TimeGrid, dim: usize, shape: &NetShape) -> Result<Self> {
        let mut m = Self::init(family, grid, dim, shape, 0)?;
        let n = m.store.len();
        m.store.set_flat(&vec![0.0; n]);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.net.config.input_dim()
    }

    /// Raw head output: PMF (with placeholder bin if configured) or hazards.
    pub fn head<S: Real>(&self, p: &ParamView<S>, x: &[f64]) -> Result<Vec<S>> {
        self.net.forward(p, x)
    }

    pub fn batch_loss<S: Real>(&self, p: &ParamView<S>, ds: &SurvivalDataset, idx: &[usize]) -> Result<S> {
        let heads = idx
            .iter()
            .map(|&i| self.head(p, &ds.record(i).features))
            .collect::<Result<Vec<_>>>()?;
        match self.family {
            DiscreteFamily::DeepHit { .. } => pmf_nll(&heads, ds, idx, &self.grid),
            DiscreteFamily::NnetSurvival => hazard_nll_discrete(&heads, ds, idx, &self.grid, HazardForm::PerPoint),
        }
    }

    pub fn loss(&self, ds: &SurvivalDataset) -> Result<f64> {
        let idx: Vec<usize> = (0..ds.len()).collect();
        self.batch_loss(&self.store.view(), ds, &idx)
    }

    /// The model's defining curve on the grid (PMF or hazard).
    pub fn curve(&self, x: &[f64]) -> Result<StepCurve> {
        let out = self.head(&self.store.view(), x)?;
        let l = self.grid.len();
        let (values, role) = match self.family {
            DiscreteFamily::DeepHit { .. } => (out[..l].to_vec(), CurveRole::Pmf),
            DiscreteFamily::NnetSurvival => (out, CurveRole::Hazard),
        };
        StepCurve::new(self.grid.clone(), values, role, self.interp)
    }

    /// f, S, h, H on the grid.
    pub fn predict(&self, x: &[f64]) -> Result<PredictionBundle> {
        PredictionBundle::discrete(&self.curve(x)?)
    }
}

impl SurvivalModel for DiscreteModel {
    fn survival(&self, x: &[f64], t: f64) -> f64 {
        self.curve(x).map(|c| c.eval_survival(t)).unwrap_or(f64::NAN)
    }
}

pub fn fit_discrete(
    family: DiscreteFamily,
    ds: &SurvivalDataset,
    grid: &TimeGrid,
    shape: &NetShape,
    opt: &OptConfig,
    seed: u64,
) -> Result<(DiscreteModel, LossTrace)> {
    ds.require_single_risk()?;
    let mut model = DiscreteModel::init(family, grid.clone(), ds.dim(), shape, seed)?;
    let mut store = model.store.clone();
    let trace = train(&mut store, opt, ds.len(), seed, |p, ctx| model.batch_loss(p, ds, ctx.batch))?;
    model.store = store;
    Ok((model, trace))
}

pub fn predict_discrete(model: &DiscreteModel, x: &[f64]) -> Result<PredictionBundle> {
    model.predict(x)
}
