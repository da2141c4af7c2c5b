//! Fully parametric proportional-hazards models trained by hazard-form NLL.
//!
//! The hazard is h(t|x) = h0(t) e^{f(x)} with a closed-form baseline, so the
//! log-likelihood of a record is Δ[f(x) + log h0(Y)] − e^{f(x)} H0(Y).

use serde::{Deserialize, Serialize};

use crate::autodiff::{init_rng, train, LossTrace, Mlp, MlpConfig, OptConfig, ParamStore, ParamView, Real, TensorId};
use crate::curves::{PredictionBundle, SurvivalModel};
use crate::datamodel::{SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// h0 = e^ψ.
    Exponential,
    /// h0 = e^φ t^{e^φ − 1} e^ψ, H0 = t^{e^φ} e^ψ.
    Weibull,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ParametricFamily {
    /// Rate e^{βᵀx + ψ}.
    Exponential,
    /// Log partial hazard (βᵀx)e^φ on a Weibull baseline.
    Weibull,
    /// Closed-form baseline with a neural log partial hazard.
    Generic { baseline: Baseline, net: MlpConfig },
}

impl ParametricFamily {
    fn baseline(&self) -> Baseline {
        match self {
            ParametricFamily::Exponential => Baseline::Exponential,
            ParametricFamily::Weibull => Baseline::Weibull,
            ParametricFamily::Generic { baseline, .. } => *baseline,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Score {
    Linear { beta: TensorId },
    Net(Mlp),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricModel {
    pub family: ParametricFamily,
    pub store: ParamStore,
    dim: usize,
    score: Score,
    psi: TensorId,
    phi: Option<TensorId>,
}

impl ParametricModel {
    /// Linear families start at zero; networks use seeded uniform init.
    pub fn init(family: ParametricFamily, dim: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = init_rng(seed);
        let score = match &family {
            ParametricFamily::Generic { net, .. } => {
                if net.input_dim() != dim || net.output_dim() != 1 {
                    return Err(SurvError::validation(format!(
                        "score network must map {dim} features to 1 output"
                    )));
                }
                Score::Net(Mlp::register(&mut store, "score", net.clone(), &mut rng)?)
            }
            _ => Score::Linear {
                beta: store.add_zeros("beta", vec![dim]),
            },
        };
        let psi = store.add_zeros("psi", vec![1]);
        let phi = match family.baseline() {
            Baseline::Weibull => Some(store.add_zeros("phi", vec![1])),
            Baseline::Exponential => None,
        };
        Ok(ParametricModel {
            family,
            store,
            dim,
            score,
            psi,
            phi,
        })
    }

    pub fn exponential(beta: &[f64], psi: f64) -> Self {
        let mut m = Self::init(ParametricFamily::Exponential, beta.len(), 0).unwrap();
        m.set_linear(beta, psi, None);
        m
    }

    pub fn weibull(beta: &[f64], psi: f64, phi: f64) -> Self {
        let mut m = Self::init(ParametricFamily::Weibull, beta.len(), 0).unwrap();
        m.set_linear(beta, psi, Some(phi));
        m
    }

    fn set_linear(&mut self, beta: &[f64], psi: f64, phi: Option<f64>) {
        if let Score::Linear { beta: id } = self.score {
            self.store.get_mut(id).copy_from_slice(beta);
        }
        self.store.get_mut(self.psi)[0] = psi;
        if let (Some(id), Some(v)) = (self.phi, phi) {
            self.store.get_mut(id)[0] = v;
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> Option<&[f64]> {
        match self.score {
            Score::Linear { beta } => Some(self.store.get(beta)),
            Score::Net(_) => None,
        }
    }

    pub fn psi(&self) -> f64 {
        self.store.get(self.psi)[0]
    }

    pub fn phi(&self) -> Option<f64> {
        self.phi.map(|id| self.store.get(id)[0])
    }

    /// Log partial hazard f(x).
    pub fn log_partial_hazard<S: Real>(&self, p: &ParamView<S>, x: &[f64]) -> Result<S> {
        if x.len() != self.dim {
            return Err(SurvError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        match (&self.score, &self.family) {
            (Score::Net(mlp), _) => Ok(mlp.forward(p, x)?[0]),
            (Score::Linear { beta }, fam) => {
                let lin = S::affine_const(p.tensor(*beta), x, p.constant(0.0));
                Ok(match fam {
                    ParametricFamily::Weibull => lin * p.scalar(self.phi.unwrap()).exp(),
                    _ => lin,
                })
            }
        }
    }

    /// (log h0(t), H0(t)); the log is `None` where h0 is 0 or infinite.
    pub fn baseline_terms<S: Real>(&self, p: &ParamView<S>, t: f64) -> (Option<S>, S) {
        let psi = p.scalar(self.psi);
        match self.family.baseline() {
            Baseline::Exponential => (Some(psi), psi.exp() * t),
            Baseline::Weibull => {
                let phi = p.scalar(self.phi.unwrap());
                if t <= 0.0 {
                    return (None, p.constant(0.0));
                }
                let k = phi.exp();
                let lt = t.ln();
                ((Some((k - 1.0) * lt + psi + phi)), (k * lt + psi).exp())
            }
        }
    }

    /// Mean negative log-likelihood over the given record indices.
    pub fn nll_on<S: Real>(&self, p: &ParamView<S>, ds: &SurvivalDataset, idx: &[usize]) -> Result<S> {
        if idx.is_empty() {
            return Err(SurvError::validation("empty batch"));
        }
        let mut terms = Vec::with_capacity(idx.len());
        for &i in idx {
            let r = ds.record(i);
            let f = self.log_partial_hazard(p, &r.features)?;
            let (log_h0, big_h0) = self.baseline_terms(p, r.time);
            let mut ll = -(f.exp() * big_h0);
            if r.is_death() {
                let lh = log_h0.ok_or_else(|| {
                    SurvError::degenerate(format!("baseline hazard is 0 or infinite at death time {}", r.time))
                })?;
                ll = ll + f + lh;
            }
            terms.push(ll);
        }
        Ok(-S::sum(&terms) / idx.len() as f64)
    }

    pub fn hazard_nll(&self, ds: &SurvivalDataset) -> Result<f64> {
        let idx: Vec<usize> = (0..ds.len()).collect();
        self.nll_on(&self.store.view(), ds, &idx)
    }

    pub fn cumhaz(&self, x: &[f64], t: f64) -> Result<f64> {
        let p = self.store.view();
        let f = self.log_partial_hazard(&p, x)?;
        Ok(f.exp() * self.baseline_terms(&p, t).1)
    }

    pub fn hazard(&self, x: &[f64], t: f64) -> Result<f64> {
        let p = self.store.view();
        let f = self.log_partial_hazard(&p, x)?;
        Ok(match self.baseline_terms(&p, t).0 {
            Some(lh) => (f + lh).exp(),
            None => {
                // Weibull at t = 0: h0 is 0 for shape > 1, infinite below 1
                let k = self.phi().unwrap_or(0.0).exp();
                if k > 1.0 {
                    0.0
                } else if k < 1.0 {
                    f64::INFINITY
                } else {
                    (f + self.psi()).exp()
                }
            }
        })
    }

    /// Hazard, cumulative hazard and survival on a grid.
    pub fn predict(&self, x: &[f64], grid: &TimeGrid) -> Result<PredictionBundle> {
        let mut h = Vec::with_capacity(grid.len());
        let mut big_h = Vec::with_capacity(grid.len());
        for &t in grid.times() {
            h.push(self.hazard(x, t)?);
            big_h.push(self.cumhaz(x, t)?);
        }
        PredictionBundle::continuous(grid.clone(), h, big_h)
    }

    /// (shape, scale) of the equivalent Weibull distribution.
    pub fn weibull_aft_view(&self, x: &[f64]) -> Result<(f64, f64)> {
        if self.family != ParametricFamily::Weibull {
            return Err(SurvError::validation("AFT view needs a linear Weibull model"));
        }
        let phi = self.phi().unwrap();
        let lin: f64 = self.beta().unwrap().iter().zip(x).map(|(b, v)| b * v).sum();
        Ok((phi.exp(), (-lin - self.psi() * (-phi).exp()).exp()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl SurvivalModel for ParametricModel {
    fn survival(&self, x: &[f64], t: f64) -> f64 {
        (-self.cumhaz(x, t).unwrap_or(f64::NAN)).exp()
    }
}

/// Fits a parametric PH model; returns the model and its per-epoch loss trace.
pub fn fit_parametric(
    family: ParametricFamily,
    ds: &SurvivalDataset,
    opt: &OptConfig,
    seed: u64,
) -> Result<(ParametricModel, LossTrace)> {
    if ds.is_empty() {
        return Err(SurvError::validation("cannot fit on an empty dataset"));
    }
    ds.require_single_risk()?;
    if family.baseline() == Baseline::Weibull {
        if let Some(i) = ds.records().iter().position(|r| r.is_death() && r.time <= 0.0) {
            return Err(SurvError::validation(format!(
                "record {i}: a death at time 0 has undefined Weibull log-hazard"
            )));
        }
    }
    let mut model = ParametricModel::init(family, ds.dim(), seed)?;
    let mut store = model.store.clone();
    let trace = train(&mut store, opt, ds.len(), seed, |p, ctx| model.nll_on(p, ds, ctx.batch))?;
    model.store = store;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_loss_values() {
        let m = ParametricModel::exponential(&[], 0.0);
        let death = SurvivalDataset::from_times(&[1.0], &[1]).unwrap();
        assert!((m.hazard_nll(&death).unwrap() - 1.0).abs() < 1e-15);
        let cens = SurvivalDataset::from_times(&[1.0], &[0]).unwrap();
        assert!((m.hazard_nll(&cens).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn predictions() {
        let m = ParametricModel::exponential(&[0.0], 0.0);
        assert!((m.survival(&[1.0], 2.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(m.survival(&[1.0], 0.0), 1.0);
        let w = ParametricModel::weibull(&[0.0], 0.0, 2f64.ln());
        assert!((w.cumhaz(&[3.0], 1.5).unwrap() - 2.25).abs() < 1e-12);
        assert!((w.survival(&[3.0], 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(w.survival(&[3.0], 0.0), 1.0);
    }

    #[test]
    fn aft_view() {
        let w = ParametricModel::weibull(&[0.0], 0.0, 0.0);
        assert_eq!(w.weibull_aft_view(&[1.0]).unwrap(), (1.0, 1.0));
        let w = ParametricModel::weibull(&[0.0], 0.0, 2f64.ln());
        let (k, s) = w.weibull_aft_view(&[1.0]).unwrap();
        assert!((k - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weibull_rejects_death_at_zero() {
        let ds = SurvivalDataset::from_times(&[0.0, 1.0], &[1, 1]).unwrap();
        let r = fit_parametric(ParametricFamily::Weibull, &ds, &OptConfig::adam(0.01, 2), 0);
        assert!(matches!(r, Err(SurvError::Validation(_))));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = SurvivalDataset::from_times(&[], &[]).unwrap();
        assert!(fit_parametric(ParametricFamily::Exponential, &ds, &OptConfig::default(), 0).is_err());
    }
}
