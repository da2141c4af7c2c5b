//! Deep kernel survival analysis (DKSA) and survival kernets.
//!
//! Both predict with a kernel-weighted Kaplan-Meier estimator whose kernel is
//! K(x, x') = exp(−‖f(x) − f(x')‖²) on a learned embedding f. Kernets compress
//! the training set into ε-net clusters and only consult exemplars within a
//! prediction radius.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{init_rng, train, LossTrace, Mlp, NetShape, OptConfig, OutputTransform, ParamStore, ParamView, Real};
use crate::curves::SurvivalModel;
use crate::datamodel::{SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};
use crate::nonparam::{discrete_hazards, euclidean, km_from_counts, weighted_counts, KMEstimate};

/// Added inside logs of the training loss.
pub const LOG_EPS: f64 = 1e-8;

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Gaussian kernel on embeddings.
pub fn gaussian_kernel(a: &[f64], b: &[f64]) -> f64 {
    (-squared_distance(a, b)).exp()
}

/// Kernel weights rescaled by their maximum, which leaves every D/N ratio
/// unchanged while keeping far-away queries from underflowing to zero.
fn relative_weights(query: &[f64], points: &[&[f64]]) -> Vec<f64> {
    let logs: Vec<f64> = points.iter().map(|p| -squared_distance(query, p)).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logs.iter().map(|l| (l - m).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DKSAModel {
    pub net: Mlp,
    pub store: ParamStore,
    pub grid: TimeGrid,
    pub train: SurvivalDataset,
    /// f(X_j) for every training record, cached after fitting.
    pub embeddings: Vec<Vec<f64>>,
}

impl DKSAModel {
    pub fn new(net: Mlp, store: ParamStore, grid: TimeGrid, train: SurvivalDataset) -> Result<Self> {
        let mut m = DKSAModel {
            net,
            store,
            grid,
            train,
            embeddings: Vec::new(),
        };
        m.refresh_embeddings()?;
        Ok(m)
    }

    pub fn refresh_embeddings(&mut self) -> Result<()> {
        let view = self.store.view();
        self.embeddings = self
            .train
            .records()
            .iter()
            .map(|r| self.net.forward(&view, &r.features))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&self.store.view(), x)
    }

    /// Learned kernel between two raw inputs.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(gaussian_kernel(&self.embed(a)?, &self.embed(b)?))
    }

    fn weights_for(&self, e: &[f64], exclude: Option<usize>) -> Vec<f64> {
        let pts: Vec<&[f64]> = self.embeddings.iter().map(|v| v.as_slice()).collect();
        let mut w = relative_weights(e, &pts);
        if let Some(i) = exclude {
            w[i] = 0.0;
        }
        w
    }

    /// Kernel-weighted (D, N) for a query.
    pub fn weighted_counts(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = self.weights_for(&self.embed(x)?, None);
        Ok(weighted_counts(&self.train, &self.grid, &w))
    }

    pub fn hazard(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (d, n) = self.weighted_counts(x)?;
        Ok(discrete_hazards(&d, &n))
    }

    /// Hazard for training point i using every other training point.
    pub fn loo_hazard(&self, i: usize) -> Result<Vec<f64>> {
        if self.train.len() < 2 {
            return Err(SurvError::validation("leave-one-out needs at least two training points"));
        }
        let w = self.weights_for(&self.embeddings[i], Some(i));
        let (d, n) = weighted_counts(&self.train, &self.grid, &w);
        Ok(discrete_hazards(&d, &n))
    }

    pub fn predict(&self, x: &[f64]) -> Result<KMEstimate> {
        let (d, n) = self.weighted_counts(x)?;
        km_from_counts(&self.grid, d, n)
    }
}

impl SurvivalModel for DKSAModel {
    fn survival(&self, x: &[f64], t: f64) -> f64 {
        self.predict(x).map(|km| km.eval(t)).unwrap_or(f64::NAN)
    }
}

pub fn dksa_hazard(model: &DKSAModel, x: &[f64]) -> Result<Vec<f64>> {
    model.hazard(x)
}

pub fn loo_hazard(model: &DKSAModel, i: usize) -> Result<Vec<f64>> {
    model.loo_hazard(i)
}

/// Hazard-form NLL with leave-one-out hazards restricted to the batch.
///
/// For each i the numerator and denominator at index ℓ are
/// Σ_{j≠i} K_ij 1{κ_j = ℓ, Δ_j = 1} and Σ_{j≠i} K_ij 1{κ_j ≥ ℓ}.
pub fn dksa_batch_loss<S: Real>(
    net: &Mlp,
    p: &ParamView<S>,
    ds: &SurvivalDataset,
    grid: &TimeGrid,
    idx: &[usize],
) -> Result<S> {
    let b = idx.len();
    if b < 2 {
        return Err(SurvError::validation("DKSA batches need at least two points"));
    }
    let l = grid.len();
    let emb = idx
        .iter()
        .map(|&i| net.forward(p, &ds.record(i).features))
        .collect::<Result<Vec<Vec<S>>>>()?;
    let kap: Vec<usize> = idx.iter().map(|&i| grid.kappa(ds.record(i).time)).collect();
    let death: Vec<bool> = idx.iter().map(|&i| ds.record(i).is_death()).collect();
    let mut terms = Vec::new();
    for a in 0..b {
        let ka = kap[a];
        if ka == 0 {
            continue;
        }
        // kernel to every other batch member, bucketed by κ
        let mut num: Vec<Vec<S>> = vec![Vec::new(); l + 1];
        let mut den: Vec<Vec<S>> = vec![Vec::new(); l + 1];
        for c in 0..b {
            if c == a || kap[c] == 0 {
                continue;
            }
            let diffs: Vec<S> = emb[a].iter().zip(&emb[c]).map(|(u, v)| (*u - *v).square()).collect();
            let k = if diffs.is_empty() { p.constant(1.0) } else { (-S::sum(&diffs)).exp() };
            den[kap[c]].push(k);
            if death[c] {
                num[kap[c]].push(k);
            }
        }
        // suffix sums give the at-risk weight at each ℓ ≤ κ_a
        let mut suffix: Option<S> = None;
        let mut at_risk: Vec<Option<S>> = vec![None; l + 1];
        for ell in (1..=l).rev() {
            if !den[ell].is_empty() {
                let s = S::sum(&den[ell]);
                suffix = Some(match suffix {
                    Some(v) => v + s,
                    None => s,
                });
            }
            at_risk[ell] = suffix;
        }
        for ell in 1..=ka {
            let hazard = match (at_risk[ell], num[ell].is_empty()) {
                (Some(n), false) => Some(S::sum(&num[ell]) / n),
                _ => None,
            };
            let is_event = ell == ka && death[a];
            let term = match hazard {
                Some(h) if is_event => (h + LOG_EPS).ln(),
                Some(h) => (h.rsub(1.0) + LOG_EPS).ln(),
                // zero hazard: log(0 + ε) for an event, log(1 + ε) otherwise
                None if is_event => p.constant(LOG_EPS.ln()),
                None => p.constant((1.0 + LOG_EPS).ln()),
            };
            terms.push(term);
        }
    }
    if terms.is_empty() {
        return Ok(p.constant(0.0));
    }
    Ok(-S::sum(&terms) / b as f64)
}

pub fn dksa_fit(
    ds: &SurvivalDataset,
    grid: &TimeGrid,
    shape: &NetShape,
    embed_dim: usize,
    opt: &OptConfig,
    seed: u64,
) -> Result<(DKSAModel, LossTrace)> {
    ds.require_single_risk()?;
    if ds.len() < 2 || opt.batch_size.is_some_and(|b| b < 2) {
        return Err(SurvError::validation("DKSA training needs batches of at least two points"));
    }
    let mut store = ParamStore::new();
    let net = Mlp::register(&mut store, "embed", shape.config(ds.dim(), embed_dim, OutputTransform::Identity), &mut init_rng(seed))?;
    let trace = train(&mut store, opt, ds.len(), seed, |p, ctx| {
        if ctx.batch.len() < 2 {
            // a trailing singleton batch carries no leave-one-out signal
            return Ok(p.constant(0.0));
        }
        dksa_batch_loss(&net, p, ds, grid, ctx.batch)
    })?;
    Ok((DKSAModel::new(net, store, grid.clone(), ds.clone())?, trace))
}

/// Greedy ε-net. Returns exemplar positions (into `embeddings`) and, per
/// point, the index into the exemplar list of its assigned cluster.
pub fn epsnet_cluster(embeddings: &[Vec<f64>], eps: f64, order: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(eps >= 0.0) {
        return Err(SurvError::validation("ε must be nonnegative"));
    }
    let mut exemplars: Vec<usize> = Vec::new();
    let mut assignment = vec![usize::MAX; embeddings.len()];
    for &i in order {
        let mut best: Option<(usize, f64)> = None;
        for (q, &e) in exemplars.iter().enumerate() {
            let d = euclidean(&embeddings[i], &embeddings[e]);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((q, d));
            }
        }
        match best {
            Some((q, d)) if d <= eps => assignment[i] = q,
            _ => {
                assignment[i] = exemplars.len();
                exemplars.push(i);
            }
        }
    }
    Ok((exemplars, assignment))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernetModel {
    pub net: Mlp,
    pub store: ParamStore,
    pub grid: TimeGrid,
    pub eps: f64,
    /// `None` means unbounded.
    pub tau_pred: Option<f64>,
    /// Seed of the insertion-order shuffle, if one was used.
    pub order_seed: Option<u64>,
    /// Training-set indices of the exemplars.
    pub exemplar_records: Vec<usize>,
    pub exemplar_embeddings: Vec<Vec<f64>>,
    /// D_cluster[ℓ | j] per exemplar.
    pub cluster_deaths: Vec<Vec<f64>>,
    /// N_cluster[ℓ | j] per exemplar.
    pub cluster_at_risk: Vec<Vec<f64>>,
    /// Cluster members (training-set indices) per exemplar.
    pub members: Vec<Vec<usize>>,
}

/// Compresses `d2` (indices into the DKSA training set) into ε-net clusters.
pub fn kernet_build(
    dksa: &DKSAModel,
    d2: &[usize],
    eps: f64,
    tau_pred: Option<f64>,
    order_seed: Option<u64>,
) -> Result<KernetModel> {
    if let Some(t) = tau_pred {
        if !(t > 0.0) {
            return Err(SurvError::validation("prediction radius must be positive"));
        }
    }
    if d2.is_empty() {
        return Err(SurvError::validation("clustering set is empty"));
    }
    let sub = dksa.train.subset(d2);
    let emb: Vec<Vec<f64>> = d2.iter().map(|&i| dksa.embeddings[i].clone()).collect();
    let mut order: Vec<usize> = (0..d2.len()).collect();
    if let Some(seed) = order_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (ex, assign) = epsnet_cluster(&emb, eps, &order)?;
    let mut members = vec![Vec::new(); ex.len()];
    for (pos, &q) in assign.iter().enumerate() {
        members[q].push(pos);
    }
    let mut cluster_deaths = Vec::with_capacity(ex.len());
    let mut cluster_at_risk = Vec::with_capacity(ex.len());
    for m in &members {
        let mut w = vec![0.0; sub.len()];
        for &pos in m {
            w[pos] = 1.0;
        }
        let (d, n) = weighted_counts(&sub, &dksa.grid, &w);
        cluster_deaths.push(d);
        cluster_at_risk.push(n);
    }
    Ok(KernetModel {
        net: dksa.net.clone(),
        store: dksa.store.clone(),
        grid: dksa.grid.clone(),
        eps,
        tau_pred,
        order_seed,
        exemplar_records: ex.iter().map(|&p| d2[p]).collect(),
        exemplar_embeddings: ex.iter().map(|&p| emb[p].clone()).collect(),
        cluster_deaths,
        cluster_at_risk,
        members: members.into_iter().map(|m| m.into_iter().map(|p| d2[p]).collect()).collect(),
    })
}

impl KernetModel {
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&self.store.view(), x)
    }

    /// Exemplars within the prediction radius of a query embedding.
    pub fn neighbors(&self, e: &[f64]) -> Vec<usize> {
        (0..self.exemplar_embeddings.len())
            .filter(|&j| match self.tau_pred {
                None => true,
                Some(r) => euclidean(e, &self.exemplar_embeddings[j]) <= r,
            })
            .collect()
    }

    pub fn weighted_counts(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = self.embed(x)?;
        let near = self.neighbors(&e);
        let l = self.grid.len();
        let (mut d, mut n) = (vec![0.0; l], vec![0.0; l]);
        if near.is_empty() {
            log::warn!("no exemplar within the prediction radius; returning constant survival 1");
            return Ok((d, n));
        }
        let pts: Vec<&[f64]> = near.iter().map(|&j| self.exemplar_embeddings[j].as_slice()).collect();
        let w = relative_weights(&e, &pts);
        for (&j, wj) in near.iter().zip(w) {
            for ell in 0..l {
                d[ell] += wj * self.cluster_deaths[j][ell];
                n[ell] += wj * self.cluster_at_risk[j][ell];
            }
        }
        Ok((d, n))
    }

    pub fn predict(&self, x: &[f64]) -> Result<KMEstimate> {
        let (d, n) = self.weighted_counts(x)?;
        km_from_counts(&self.grid, d, n)
    }

    /// Kaplan-Meier restricted to one cluster.
    pub fn cluster_km(&self, j: usize) -> Result<KMEstimate> {
        km_from_counts(&self.grid, self.cluster_deaths[j].clone(), self.cluster_at_risk[j].clone())
    }
}

impl SurvivalModel for KernetModel {
    fn survival(&self, x: &[f64], t: f64) -> f64 {
        self.predict(x).map(|km| km.eval(t)).unwrap_or(f64::NAN)
    }
}

pub fn kernet_predict(model: &KernetModel, x: &[f64]) -> Result<KMEstimate> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsnet_trace() {
        let e = vec![vec![0.0], vec![0.5], vec![2.0]];
        let order = [0, 1, 2];
        let (q, a) = epsnet_cluster(&e, 1.0, &order).unwrap();
        assert_eq!(q, vec![0, 2]);
        assert_eq!(a, vec![0, 0, 1]);
        let (q, _) = epsnet_cluster(&e, 0.0, &order).unwrap();
        assert_eq!(q, vec![0, 1, 2]);
        let (q, _) = epsnet_cluster(&e, 1e300, &order).unwrap();
        assert_eq!(q, vec![0]);
    }

    #[test]
    fn kernel_bounds() {
        assert_eq!(gaussian_kernel(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        let k = gaussian_kernel(&[0.0], &[3.0]);
        assert!(k > 0.0 && k < 1.0);
    }
}
