//! Semiparametric proportional hazards (Cox / DeepSurv) and Cox-Time.
//!
//! Training is two-step: minimize the partial likelihood for the score
//! network, then plug the scores into Breslow's closed-form baseline on the
//! unique death times.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{init_rng, train, Activation, LossTrace, Mlp, MlpConfig, OptConfig, OutputTransform, ParamStore, ParamView, Real};
use crate::curves::{Interp, PredictionBundle, SurvivalModel};
use crate::datamodel::{build_grid, GridStrategy, SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};

/// Mean negative partial log-likelihood with Breslow's handling of ties.
///
/// `scores[i]` is f(X_i). Risk sets are accumulated in order of decreasing
/// time, shifted by the largest score for stability.
pub fn cox_partial_nll<S: Real>(scores: &[S], times: &[f64], events: &[bool]) -> Result<S> {
    let n = scores.len();
    if n == 0 || times.len() != n || events.len() != n {
        return Err(SurvError::validation("scores, times and events must be nonempty and aligned"));
    }
    let shift = scores.iter().map(|s| s.value()).fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut terms = Vec::new();
    let mut cum: Option<S> = None;
    let mut g = 0;
    while g < n {
        let mut end = g;
        while end < n && times[order[end]] == times[order[g]] {
            let e = (scores[order[end]] - shift).exp();
            cum = Some(match cum {
                Some(c) => c + e,
                None => e,
            });
            end += 1;
        }
        let log_risk = cum.unwrap().ln() + shift;
        for &i in &order[g..end] {
            if events[i] {
                terms.push(log_risk - scores[i]);
            }
        }
        g = end;
    }
    if terms.is_empty() {
        return Ok(scores[0].lift(0.0));
    }
    Ok(S::sum(&terms) / n as f64)
}

/// Breslow's piecewise-constant baseline on a death-time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreslowBaseline {
    pub grid: TimeGrid,
    pub deaths: Vec<f64>,
    /// Σ_j 1{Y_j ≥ τ_ℓ} e^{score_j(τ_ℓ)}.
    pub risk_sums: Vec<f64>,
    /// λ̂_ℓ, the baseline hazard on (τ_{ℓ−1}, τ_ℓ].
    pub rates: Vec<f64>,
    /// Ĥ0 at each knot; a step function in between.
    pub cumhaz: Vec<f64>,
}

impl BreslowBaseline {
    /// `score(j, ℓ)` is the score of record j at knot ℓ (1-based).
    pub fn fit(ds: &SurvivalDataset, grid: &TimeGrid, mut score: impl FnMut(usize, usize) -> Result<f64>) -> Result<Self> {
        let l = grid.len();
        let mut deaths = vec![0.0; l];
        let kap: Vec<usize> = ds.records().iter().map(|r| grid.kappa(r.time)).collect();
        for (r, &k) in ds.records().iter().zip(&kap) {
            if r.is_death() && k >= 1 {
                deaths[k - 1] += 1.0;
            }
        }
        let mut risk_sums = vec![0.0; l];
        for ell in 1..=l {
            let mut acc = 0.0;
            for (j, &k) in kap.iter().enumerate() {
                if k >= ell {
                    acc += score(j, ell)?.exp();
                }
            }
            risk_sums[ell - 1] = acc;
        }
        let widths = grid.widths();
        let mut cumhaz = Vec::with_capacity(l);
        let mut rates = Vec::with_capacity(l);
        let mut acc = 0.0;
        for ell in 0..l {
            let jump = if risk_sums[ell] > 0.0 { deaths[ell] / risk_sums[ell] } else { 0.0 };
            acc += jump;
            cumhaz.push(acc);
            rates.push(if widths[ell] > 0.0 { jump / widths[ell] } else { f64::INFINITY });
        }
        Ok(BreslowBaseline {
            grid: grid.clone(),
            deaths,
            risk_sums,
            rates,
            cumhaz,
        })
    }

    /// Baseline for time-independent scores.
    pub fn from_scores(ds: &SurvivalDataset, scores: &[f64]) -> Result<Self> {
        let grid = build_grid(ds, GridStrategy::UniqueDeaths, None)?;
        Self::fit(ds, &grid, |j, _| Ok(scores[j]))
    }

    /// Ĥ0(t) = Σ_{τ_m ≤ t} D[m] / R[m].
    pub fn cumhaz_at(&self, t: f64) -> f64 {
        match self.grid.kappa(t) {
            0 => 0.0,
            k => self.cumhaz[k - 1],
        }
    }

    /// ĥ0(t), right-continuous at knots from the left: λ̂_ℓ on (τ_{ℓ−1}, τ_ℓ].
    pub fn rate_at(&self, t: f64) -> f64 {
        let times = self.grid.times();
        let ell = times.partition_point(|&tau| tau < t);
        if ell >= times.len() {
            0.0
        } else {
            self.rates[ell]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScoreConfig {
    /// f(x) = θᵀx (plus an intercept that cancels in the partial likelihood).
    Linear,
    Mlp { hidden: Vec<usize>, activation: Activation },
}

impl ScoreConfig {
    fn build(&self, store: &mut ParamStore, prefix: &str, input: usize, seed: u64) -> Result<Mlp> {
        match self {
            ScoreConfig::Linear => Mlp::register_zeros(store, prefix, MlpConfig::linear(input, 1, OutputTransform::Identity)),
            ScoreConfig::Mlp { hidden, activation } => {
                let mut widths = vec![input];
                widths.extend(hidden);
                widths.push(1);
                Mlp::register(store, prefix, MlpConfig::new(widths, *activation, OutputTransform::Identity), &mut init_rng(seed))
            }
        }
    }
}

/// DeepSurv / Cox model: a score network plus a Breslow baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub net: Mlp,
    pub store: ParamStore,
    pub baseline: BreslowBaseline,
}

impl CoxModel {
    pub fn dim(&self) -> usize {
        self.net.config.input_dim()
    }

    /// Log partial hazard f(x).
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.store.view(), x)?[0])
    }

    /// For a linear score, the coefficient vector θ.
    pub fn coefficients(&self) -> Option<Vec<f64>> {
        if self.net.layers().len() == 1 {
            Some(self.store.get(self.net.layers()[0].0).to_vec())
        } else {
            None
        }
    }

    /// Replaces the baseline using the current scores on `ds`.
    pub fn refit_baseline(&mut self, ds: &SurvivalDataset) -> Result<()> {
        let scores = ds.records().iter().map(|r| self.risk_score(&r.features)).collect::<Result<Vec<_>>>()?;
        self.baseline = BreslowBaseline::from_scores(ds, &scores)?;
        Ok(())
    }

    /// A model whose score network is identically zero.
    pub fn zero(ds: &SurvivalDataset) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = ScoreConfig::Linear.build(&mut store, "score", ds.dim(), 0)?;
        let baseline = BreslowBaseline::from_scores(ds, &vec![0.0; ds.len()])?;
        Ok(CoxModel { net, store, baseline })
    }

    pub fn predict(&self, x: &[f64], grid: &TimeGrid) -> Result<PredictionBundle> {
        let ef = self.risk_score(x)?.exp();
        let h = grid.times().iter().map(|&t| self.baseline.rate_at(t) * ef).collect();
        let big_h = grid.times().iter().map(|&t| self.baseline.cumhaz_at(t) * ef).collect();
        Ok(PredictionBundle::continuous(grid.clone(), h, big_h)?.with_interp(Interp::ForwardFill))
    }
}

impl SurvivalModel for CoxModel {
    fn survival(&self, x: &[f64], t: f64) -> f64 {
        let f = self.risk_score(x).unwrap_or(f64::NAN);
        (-(f.exp() * self.baseline.cumhaz_at(t))).exp()
    }
}

fn batch_arrays(ds: &SurvivalDataset, idx: &[usize]) -> (Vec<f64>, Vec<bool>) {
    (
        idx.iter().map(|&i| ds.record(i).time).collect(),
        idx.iter().map(|&i| ds.record(i).is_death()).collect(),
    )
}

/// Partial-likelihood loss of a score network on a batch.
pub fn deepsurv_batch_loss<S: Real>(net: &Mlp, p: &ParamView<S>, ds: &SurvivalDataset, idx: &[usize]) -> Result<S> {
    let scores = idx
        .iter()
        .map(|&i| Ok(net.forward(p, &ds.record(i).features)?[0]))
        .collect::<Result<Vec<S>>>()?;
    let (t, e) = batch_arrays(ds, idx);
    cox_partial_nll(&scores, &t, &e)
}

pub fn fit_deepsurv(ds: &SurvivalDataset, score: &ScoreConfig, opt: &OptConfig, seed: u64) -> Result<(CoxModel, LossTrace)> {
    ds.require_single_risk()?;
    ds.require_deaths()?;
    let mut store = ParamStore::new();
    let net = score.build(&mut store, "score", ds.dim(), seed)?;
    let trace = train(&mut store, opt, ds.len(), seed, |p, ctx| deepsurv_batch_loss(&net, p, ds, ctx.batch))?;
    let mut model = CoxModel {
        net,
        store,
        baseline: BreslowBaseline::from_scores(ds, &vec![0.0; ds.len()])?,
    };
    model.refit_baseline(ds)?;
    Ok((model, trace))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoxTimeMode {
    Exact,
    /// One uniformly sampled control per case, resampled on every call.
    CaseControl,
}

/// Cox-Time loss on a batch, where `g(j, t)` scores record j at time t.
///
/// In exact mode each case i contributes log Σ_{j: Y_j ≥ Y_i} e^{g(j, Y_i)} − g(i, Y_i).
/// In case-control mode the inner sum keeps only the case and one control.
pub fn coxtime_loss<S: Real>(
    mut g: impl FnMut(usize, f64) -> Result<S>,
    ds: &SurvivalDataset,
    idx: &[usize],
    mode: CoxTimeMode,
    rng: &mut ChaCha8Rng,
) -> Result<S> {
    if idx.is_empty() {
        return Err(SurvError::validation("empty batch"));
    }
    let mut terms = Vec::new();
    let mut any: Option<S> = None;
    for &i in idx {
        let ri = ds.record(i);
        if !ri.is_death() {
            continue;
        }
        let gi = g(i, ri.time)?;
        any = Some(gi);
        let controls: Vec<usize> = idx.iter().copied().filter(|&j| j != i && ds.record(j).time >= ri.time).collect();
        let inner: Vec<S> = match mode {
            CoxTimeMode::Exact => {
                let mut v = vec![gi];
                for &j in &controls {
                    v.push(g(j, ri.time)?);
                }
                v
            }
            CoxTimeMode::CaseControl => {
                if controls.is_empty() {
                    vec![gi]
                } else {
                    let c = controls[rng.random_range(0..controls.len())];
                    vec![gi, g(c, ri.time)?]
                }
            }
        };
        terms.push(S::log_sum_exp(&inner) - gi);
    }
    match any {
        None => {
            // no cases: the loss is identically zero
            let r0 = ds.record(idx[0]);
            Ok(g(idx[0], r0.time)?.lift(0.0))
        }
        Some(_) => Ok(S::sum(&terms) / idx.len() as f64),
    }
}

/// Maps time onto network inputs in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeScaling {
    pub t_max: f64,
}

impl TimeScaling {
    pub fn fit(ds: &SurvivalDataset) -> Self {
        let t_max = ds.max_time();
        TimeScaling {
            t_max: if t_max > 0.0 { t_max } else { 1.0 },
        }
    }

    /// (t / t_max, log1p(t) / log1p(t_max)).
    pub fn features(&self, t: f64) -> [f64; 2] {
        [t / self.t_max, t.ln_1p() / self.t_max.ln_1p()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxTimeModel {
    pub net: Mlp,
    pub store: ParamStore,
    pub scaling: TimeScaling,
    pub baseline: BreslowBaseline,
    pub mode: CoxTimeMode,
}

fn coxtime_input(x: &[f64], scaling: &TimeScaling, t: f64) -> Vec<f64> {
    let mut v = x.to_vec();
    v.extend(scaling.features(t));
    v
}

impl CoxTimeModel {
    pub fn dim(&self) -> usize {
        self.net.config.input_dim() - 2
    }

    /// g(x, t).
    pub fn score(&self, x: &[f64], t: f64) -> Result<f64> {
        self.score_with(&self.store.view(), x, t)
    }

    fn score_with<S: Real>(&self, p: &ParamView<S>, x: &[f64], t: f64) -> Result<S> {
        if x.len() != self.dim() {
            return Err(SurvError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.net.forward(p, &coxtime_input(x, &self.scaling, t))?[0])
    }

    pub fn refit_baseline(&mut self, ds: &SurvivalDataset) -> Result<()> {
        let grid = build_grid(ds, GridStrategy::UniqueDeaths, None)?;
        let baseline = BreslowBaseline::fit(ds, &grid, |j, ell| self.score(&ds.record(j).features, grid.tau(ell)))?;
        self.baseline = baseline;
        Ok(())
    }

    /// ĥ(t|x) = ĥ0(t)e^{g(x,t)}, Ĥ(t|x) = e^{g(x,t)}Ĥ0(t).
    pub fn predict(&self, x: &[f64], grid: &TimeGrid) -> Result<PredictionBundle> {
        let mut h = Vec::with_capacity(grid.len());
        let mut big_h = Vec::with_capacity(grid.len());
        for &t in grid.times() {
            let eg = self.score(x, t)?.exp();
            h.push(self.baseline.rate_at(t) * eg);
            big_h.push(self.baseline.cumhaz_at(t) * eg);
        }
        // e^{g(x,t)} may decrease in t, so Ĥ need not be monotone
        let survival = big_h.iter().map(|v: &f64| (-v).exp()).collect();
        Ok(PredictionBundle {
            grid: grid.clone(),
            kind: crate::curves::TimeKind::Continuous,
            survival,
            hazard: h,
            cumhaz: big_h,
            pmf: None,
            interp: Interp::ForwardFill,
        })
    }
}

impl SurvivalModel for CoxTimeModel {
    fn survival(&self, x: &[f64], t: f64) -> f64 {
        let g = self.score(x, t).unwrap_or(f64::NAN);
        (-(g.exp() * self.baseline.cumhaz_at(t))).exp()
    }
}

/// Trains Cox-Time's g(x, t) and fits its baseline.
pub fn coxtime_fit(
    ds: &SurvivalDataset,
    score: &ScoreConfig,
    opt: &OptConfig,
    mode: CoxTimeMode,
    seed: u64,
) -> Result<(CoxTimeModel, LossTrace)> {
    ds.require_single_risk()?;
    ds.require_deaths()?;
    let mut store = ParamStore::new();
    let net = score.build(&mut store, "g", ds.dim() + 2, seed)?;
    let scaling = TimeScaling::fit(ds);
    let grid = build_grid(ds, GridStrategy::UniqueDeaths, None)?;
    let placeholder = BreslowBaseline::fit(ds, &grid, |_, _| Ok(0.0))?;
    let mut model = CoxTimeModel {
        net,
        store: store.clone(),
        scaling,
        baseline: placeholder,
        mode,
    };
    let trace = train(&mut store, opt, ds.len(), seed, |p, ctx| {
        coxtime_loss(
            |j, t| model.score_with(p, &ds.record(j).features, t),
            ds,
            ctx.batch,
            mode,
            ctx.rng,
        )
    })?;
    model.store = store;
    model.refit_baseline(ds)?;
    Ok((model, trace))
}
