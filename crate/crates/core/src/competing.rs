//! Competing risks: full DeepHit with a joint softmax over (event, bin)
//! cells, its ranking loss, cumulative incidence prediction, and per-event
//! evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::autodiff::{init_rng, train, Mlp, NetShape, OptConfig, OutputTransform, ParamStore, ParamView, Real};
use crate::curves::{eval_knots, CurveRole, Interp, StepCurve};
use crate::datamodel::{SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};
use crate::metrics::{CensorModel, INTEGRATION_POINTS};

/// Position of f_δ[ℓ] in the flat head output (δ and ℓ are 1-based).
pub fn cell(l: usize, delta: usize, ell: usize) -> usize {
    (delta - 1) * l + (ell - 1)
}

/// F_δ[κ] = Σ_{m≤κ} f_δ[m].
fn cif_at<S: Real>(out: &[S], l: usize, delta: usize, kappa: usize) -> Option<S> {
    (kappa > 0).then(|| S::sum(&out[cell(l, delta, 1)..=cell(l, delta, kappa)]))
}

/// One record's NLL term: −log f_Δ[κ] for events, −log(1 − Σ_δ F_δ[κ]) when censored.
///
/// The censored argument is computed as the mass of all cells after κ
/// (including the placeholder), which equals 1 − Σ_δ F_δ[κ] exactly in
/// arithmetic and avoids cancellation.
pub fn cr_nll_term<S: Real>(out: &[S], l: usize, k: usize, kappa: usize, event: u32) -> Result<S> {
    if event != 0 {
        if kappa == 0 {
            return Err(SurvError::validation("event before the first grid time has no bin"));
        }
        let f = out[cell(l, event as usize, kappa)];
        if f.value() <= 0.0 {
            return Err(SurvError::degenerate("zero probability at an observed event"));
        }
        return Ok(-f.ln());
    }
    let mut tail: Vec<S> = Vec::new();
    for delta in 1..=k {
        tail.extend_from_slice(&out[(delta - 1) * l + kappa..delta * l]);
    }
    tail.extend_from_slice(&out[k * l..]);
    if tail.is_empty() {
        return Err(SurvError::degenerate("censored at the last grid time with no placeholder bin leaves log(0)"));
    }
    let mass = S::sum(&tail);
    if mass.value() <= 0.0 {
        return Err(SurvError::degenerate("zero remaining mass for a censored record"));
    }
    Ok(-mass.ln())
}

/// Mean competing-risks NLL; `outs[b]` is the head output for record `idx[b]`.
pub fn cr_nll<S: Real>(outs: &[Vec<S>], ds: &SurvivalDataset, idx: &[usize], grid: &TimeGrid) -> Result<S> {
    if idx.is_empty() {
        return Err(SurvError::validation("empty batch"));
    }
    let (l, k) = (grid.len(), ds.num_events() as usize);
    let terms = idx
        .iter()
        .zip(outs)
        .map(|(&i, o)| {
            let r = ds.record(i);
            cr_nll_term(o, l, k, grid.kappa(r.time), r.event)
        })
        .collect::<Result<Vec<S>>>()?;
    Ok(S::sum(&terms) / idx.len() as f64)
}

/// DeepHit ranking loss within a batch.
///
/// (1/k) Σ_δ (η_δ/|E_δ|) Σ_{(i,j)∈E_δ} exp((F_δ[κ_i|X_j] − F_δ[κ_i|X_i])/σ)
/// with E_δ = {(i, j) : Δ_i = δ, Y_i < Y_j}; an empty E_δ contributes 0.
pub fn cr_ranking_loss<S: Real>(
    outs: &[Vec<S>],
    ds: &SurvivalDataset,
    idx: &[usize],
    grid: &TimeGrid,
    eta: &[f64],
    sigma: f64,
) -> Result<S> {
    let (l, k) = (grid.len(), ds.num_events() as usize);
    if !(sigma > 0.0) {
        return Err(SurvError::validation("σ must be positive"));
    }
    if eta.len() != k || eta.iter().any(|&e| !(e >= 0.0)) {
        return Err(SurvError::validation(format!("η needs {k} nonnegative entries")));
    }
    let zero = outs.first().map(|o| o[0].lift(0.0)).ok_or_else(|| SurvError::validation("empty batch"))?;
    let mut per_event = Vec::new();
    for delta in 1..=k {
        if eta[delta - 1] == 0.0 {
            continue;
        }
        let mut terms = Vec::new();
        for (a, &i) in idx.iter().enumerate() {
            let ri = ds.record(i);
            if ri.event as usize != delta {
                continue;
            }
            let kappa = grid.kappa(ri.time);
            let own = cif_at(&outs[a], l, delta, kappa);
            for (b, &j) in idx.iter().enumerate() {
                if ri.time < ds.record(j).time {
                    terms.push(match (own, cif_at(&outs[b], l, delta, kappa)) {
                        (Some(fi), Some(fj)) => ((fj - fi) / sigma).exp(),
                        _ => zero + 1.0,
                    });
                }
            }
        }
        if !terms.is_empty() {
            per_event.push(S::sum(&terms) * (eta[delta - 1] / terms.len() as f64));
        }
    }
    if per_event.is_empty() {
        return Ok(zero);
    }
    Ok(S::sum(&per_event) / k as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CRDeepHit {
    pub grid: TimeGrid,
    pub k: usize,
    pub placeholder: bool,
    pub eta: Vec<f64>,
    pub sigma: f64,
    pub net: Mlp,
    pub store: ParamStore,
    pub interp: Interp,
}

/// Ranking hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub eta: Vec<f64>,
    pub sigma: f64,
}

impl RankingConfig {
    pub fn none(k: usize) -> Self {
        RankingConfig {
            eta: vec![0.0; k],
            sigma: 1.0,
        }
    }
}

impl CRDeepHit {
    pub fn init(grid: TimeGrid, k: usize, dim: usize, shape: &NetShape, ranking: RankingConfig, placeholder: bool, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(SurvError::validation("competing risks need k ≥ 1"));
        }
        let outputs = grid.len() * k + usize::from(placeholder);
        let mut store = ParamStore::new();
        let net = Mlp::register(&mut store, "net", shape.config(dim, outputs, OutputTransform::Softmax), &mut init_rng(seed))?;
        Ok(CRDeepHit {
            grid,
            k,
            placeholder,
            eta: ranking.eta,
            sigma: ranking.sigma,
            net,
            store,
            interp: Interp::ForwardFill,
        })
    }

    pub fn head<S: Real>(&self, p: &ParamView<S>, x: &[f64]) -> Result<Vec<S>> {
        self.net.forward(p, x)
    }

    /// (NLL, ranking) on a batch.
    pub fn batch_losses<S: Real>(&self, p: &ParamView<S>, ds: &SurvivalDataset, idx: &[usize]) -> Result<(S, S)> {
        if ds.num_events() as usize != self.k {
            return Err(SurvError::validation(format!("model has k = {}, data has k = {}", self.k, ds.num_events())));
        }
        let outs = idx
            .iter()
            .map(|&i| self.head(p, &ds.record(i).features))
            .collect::<Result<Vec<_>>>()?;
        let nll = cr_nll(&outs, ds, idx, &self.grid)?;
        let rank = cr_ranking_loss(&outs, ds, idx, &self.grid, &self.eta, self.sigma)?;
        Ok((nll, rank))
    }

    pub fn loss(&self, ds: &SurvivalDataset) -> Result<(f64, f64)> {
        let idx: Vec<usize> = (0..ds.len()).collect();
        self.batch_losses(&self.store.view(), ds, &idx)
    }

    /// f_δ[ℓ|x] as a k × L table.
    pub fn pmf(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let out = self.head(&self.store.view(), x)?;
        let l = self.grid.len();
        Ok((1..=self.k).map(|d| out[cell(l, d, 1)..=cell(l, d, l)].to_vec()).collect())
    }

    /// One non-decreasing CIF curve per event.
    pub fn cif(&self, x: &[f64]) -> Result<Vec<StepCurve>> {
        self.pmf(x)?
            .into_iter()
            .map(|f| {
                let mut acc = 0.0;
                let values = f
                    .into_iter()
                    .map(|v| {
                        acc += v;
                        acc.min(1.0)
                    })
                    .collect();
                StepCurve::new(self.grid.clone(), values, CurveRole::Cdf, self.interp)
            })
            .collect()
    }
}

/// Per-epoch mean of each loss component.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CRTrace {
    pub total: Vec<f64>,
    pub nll: Vec<f64>,
    pub ranking: Vec<f64>,
}

pub fn cr_fit(
    ds: &SurvivalDataset,
    grid: &TimeGrid,
    shape: &NetShape,
    ranking: RankingConfig,
    placeholder: bool,
    opt: &OptConfig,
    seed: u64,
) -> Result<(CRDeepHit, CRTrace)> {
    let mut model = CRDeepHit::init(grid.clone(), ds.num_events() as usize, ds.dim(), shape, ranking, placeholder, seed)?;
    let mut store = model.store.clone();
    let epochs = opt.epochs;
    let (mut nll_sum, mut rank_sum, mut count) = (vec![0.0; epochs], vec![0.0; epochs], vec![0usize; epochs]);
    let total = train(&mut store, opt, ds.len(), seed, |p, ctx| {
        let (nll, rank) = model.batch_losses(p, ds, ctx.batch)?;
        let b = ctx.batch.len();
        nll_sum[ctx.epoch] += nll.value() * b as f64;
        rank_sum[ctx.epoch] += rank.value() * b as f64;
        count[ctx.epoch] += b;
        Ok(nll + rank)
    })?;
    model.store = store;
    let mean = |s: &[f64]| s.iter().zip(&count).map(|(v, &c)| v / c as f64).collect::<Vec<_>>();
    Ok((
        model,
        CRTrace {
            total: total.epochs,
            nll: mean(&nll_sum),
            ranking: mean(&rank_sum),
        },
    ))
}

pub fn cif_predict(model: &CRDeepHit, x: &[f64]) -> Result<Vec<StepCurve>> {
    model.cif(x)
}

/// Evaluates a CIF curve at any t ≥ 0 under its interpolation mode.
pub fn eval_cif(curve: &StepCurve, t: f64) -> f64 {
    let complement: Vec<f64> = curve.values.iter().map(|v| 1.0 - v).collect();
    1.0 - eval_knots(&curve.grid, &complement, curve.interp, t)
}

/// Per-record cumulative incidence predictions.
pub trait CifPredictions {
    fn len(&self) -> usize;
    /// F̂_δ(t | X_record), δ 1-based.
    fn cif(&self, record: usize, delta: usize, t: f64) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CifPredictions for Vec<Vec<StepCurve>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn cif(&self, record: usize, delta: usize, t: f64) -> f64 {
        eval_cif(&self[record][delta - 1], t)
    }
}

/// Wraps a closure `(record, δ, t) -> F̂_δ(t | X_record)`.
pub struct FnCif<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(usize, usize, f64) -> f64> CifPredictions for FnCif<F> {
    fn len(&self) -> usize {
        self.n
    }
    fn cif(&self, record: usize, delta: usize, t: f64) -> f64 {
        (self.f)(record, delta, t)
    }
}

fn check(pred_len: usize, ds: &SurvivalDataset, delta: usize) -> Result<()> {
    if pred_len != ds.len() {
        return Err(SurvError::DimensionMismatch {
            expected: ds.len(),
            got: pred_len,
        });
    }
    if delta == 0 || delta > ds.num_events() as usize {
        return Err(SurvError::validation(format!("event {delta} is outside 1..={}", ds.num_events())));
    }
    Ok(())
}

/// C^td for event δ: pairs Δ_i = δ, Y_i < Y_j scored by F̂_δ(Y_i|X_i) > F̂_δ(Y_i|X_j).
///
/// Exact prediction ties count as misordered.
pub fn cr_ctd<P: CifPredictions + ?Sized>(pred: &P, ds: &SurvivalDataset, delta: usize) -> Result<Option<f64>> {
    check(pred.len(), ds, delta)?;
    let (mut good, mut total) = (0usize, 0usize);
    for (i, ri) in ds.records().iter().enumerate() {
        if ri.event as usize != delta {
            continue;
        }
        let own = pred.cif(i, delta, ri.time);
        for (j, rj) in ds.records().iter().enumerate() {
            if ri.time < rj.time {
                total += 1;
                if own > pred.cif(j, delta, ri.time) {
                    good += 1;
                }
            }
        }
    }
    Ok((total > 0).then(|| good as f64 / total as f64))
}

/// Truncated C^td for event δ at t with weights 1/Ŝ_censor(Y_i)².
pub fn cr_ctd_t<P: CifPredictions + ?Sized>(
    pred: &P,
    ds: &SurvivalDataset,
    censor: &CensorModel,
    delta: usize,
    t: f64,
) -> Result<Option<f64>> {
    check(pred.len(), ds, delta)?;
    let f_t: Vec<f64> = (0..ds.len()).map(|j| pred.cif(j, delta, t)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, ri) in ds.records().iter().enumerate() {
        if ri.event as usize != delta || ri.time >= t {
            continue;
        }
        let later: Vec<usize> = (0..ds.len()).filter(|&j| ds.record(j).time > ri.time).collect();
        if later.is_empty() {
            continue;
        }
        let w = censor.positive(i, ri.time)?.powi(-2);
        for j in later {
            den += w;
            if f_t[i] > f_t[j] {
                num += w;
            }
        }
    }
    Ok((den > 0.0).then(|| num / den))
}

/// Brier score for event δ at time t.
pub fn cr_brier<P: CifPredictions + ?Sized>(pred: &P, ds: &SurvivalDataset, censor: &CensorModel, delta: usize, t: f64) -> Result<f64> {
    check(pred.len(), ds, delta)?;
    if ds.is_empty() {
        return Err(SurvError::validation("Brier score needs at least one record"));
    }
    let mut total = 0.0;
    for (i, r) in ds.records().iter().enumerate() {
        let f = pred.cif(i, delta, t);
        if r.time <= t {
            if r.event as usize == delta {
                total += (1.0 - f).powi(2) / censor.positive(i, r.time)?;
            } else if r.event != 0 {
                total += f * f / censor.positive(i, r.time)?;
            }
        } else {
            total += f * f / censor.positive(i, t)?;
        }
    }
    Ok(total / ds.len() as f64)
}

fn grid_points(t_min: f64, t_max: f64) -> Result<Vec<f64>> {
    if !(t_max > t_min) || t_min < 0.0 {
        return Err(SurvError::validation("integration needs 0 ≤ t_min < t_max"));
    }
    let m = INTEGRATION_POINTS - 1;
    Ok((0..=m).map(|k| t_min + (t_max - t_min) * k as f64 / m as f64).collect())
}

fn trapezoid(samples: &[(f64, f64)]) -> Option<f64> {
    match samples {
        [] => None,
        [(_, v)] => Some(*v),
        _ => {
            let area: f64 = samples.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
            Some(area / (samples[samples.len() - 1].0 - samples[0].0))
        }
    }
}

/// Integrated truncated C^td for event δ; undefined points are skipped.
pub fn cr_integrated_ctd<P: CifPredictions + ?Sized>(
    pred: &P,
    ds: &SurvivalDataset,
    censor: &CensorModel,
    delta: usize,
    t_min: f64,
    t_max: f64,
) -> Result<Option<f64>> {
    let mut samples = Vec::new();
    for t in grid_points(t_min, t_max)? {
        if let Some(v) = cr_ctd_t(pred, ds, censor, delta, t)? {
            samples.push((t, v));
        }
    }
    Ok(trapezoid(&samples))
}

/// Integrated Brier score for event δ.
pub fn cr_ibs<P: CifPredictions + ?Sized>(
    pred: &P,
    ds: &SurvivalDataset,
    censor: &CensorModel,
    delta: usize,
    t_min: f64,
    t_max: f64,
) -> Result<f64> {
    let samples = grid_points(t_min, t_max)?
        .into_iter()
        .map(|t| Ok((t, cr_brier(pred, ds, censor, delta, t)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(&samples).expect("64 samples"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn uniform_head_terms() {
        let out = uniform(4);
        let v: f64 = cr_nll_term(&out, 2, 2, 1, 1).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
        let v: f64 = cr_nll_term(&out, 2, 2, 1, 0).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!(cr_nll_term(&out, 2, 2, 2, 0).is_err());
    }

    #[test]
    fn uniform_cif() {
        let g = TimeGrid::new(vec![1.0, 2.0]).unwrap();
        let mut m = CRDeepHit::init(g, 2, 1, &NetShape::linear(), RankingConfig::none(2), false, 0).unwrap();
        let n = m.store.len();
        m.store.set_flat(&vec![0.0; n]);
        for c in m.cif(&[1.0]).unwrap() {
            assert!((c.values[0] - 0.25).abs() < 1e-15 && (c.values[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn ranking_identical_predictions() {
        let g = TimeGrid::new(vec![1.0, 2.0]).unwrap();
        let ds = SurvivalDataset::from_columns_k(vec![vec![0.0]; 3], &[1.0, 2.0, 3.0], &[1, 2, 0], 2).unwrap();
        let outs = vec![uniform(4); 3];
        let v: f64 = cr_ranking_loss(&outs, &ds, &[0, 1, 2], &g, &[0.5, 2.0], 1.0).unwrap();
        assert!((v - 1.25).abs() < 1e-15);
        let v: f64 = cr_ranking_loss(&outs, &ds, &[0, 1, 2], &g, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(v, 0.0);
    }
}
