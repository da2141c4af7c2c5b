//! Kaplan-Meier, Nelson-Aalen, and weighted (k-NN / kernel) conditional KM.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::curves::{CurveRole, Interp, StepCurve};
use crate::datamodel::{build_grid, life_table, GridStrategy, SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};

/// Pointwise confidence band on the KM knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMEstimate {
    /// Forward-filled survival on the grid.
    pub curve: StepCurve,
    /// Possibly weighted death counts per index.
    pub deaths: Vec<f64>,
    /// Possibly weighted at-risk counts per index.
    pub at_risk: Vec<f64>,
    pub band: Option<Band>,
}

impl KMEstimate {
    pub fn grid(&self) -> &TimeGrid {
        &self.curve.grid
    }

    pub fn survival(&self) -> &[f64] {
        &self.curve.values
    }

    pub fn hazards(&self) -> Vec<f64> {
        discrete_hazards(&self.deaths, &self.at_risk)
    }

    /// Forward-filled Ŝ(t).
    pub fn eval(&self, t: f64) -> f64 {
        self.curve.eval_survival(t)
    }

    /// ∫_0^horizon Ŝ.
    pub fn area(&self, horizon: f64) -> f64 {
        self.curve.mean_time(Some(horizon))
    }
}

/// D[ℓ]/N[ℓ], with indices that have nobody at risk contributing 0.
pub fn discrete_hazards(deaths: &[f64], at_risk: &[f64]) -> Vec<f64> {
    deaths
        .iter()
        .zip(at_risk)
        .map(|(&d, &n)| if n > 0.0 { d / n } else { 0.0 })
        .collect()
}

/// Product-limit survival from (weighted) counts.
pub fn km_from_counts(grid: &TimeGrid, deaths: Vec<f64>, at_risk: Vec<f64>) -> Result<KMEstimate> {
    let mut acc = 1.0;
    let values = discrete_hazards(&deaths, &at_risk)
        .into_iter()
        .map(|h| {
            acc *= 1.0 - h;
            acc.max(0.0)
        })
        .collect();
    Ok(KMEstimate {
        curve: StepCurve::new(grid.clone(), values, CurveRole::Survival, Interp::ForwardFill)?,
        deaths,
        at_risk,
        band: None,
    })
}

/// Weighted death and at-risk counts on a grid, deaths snapped by floor.
pub fn weighted_counts(ds: &SurvivalDataset, grid: &TimeGrid, weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = grid.len();
    let mut deaths = vec![0.0; l];
    let mut start = vec![0.0; l + 1];
    for (r, &w) in ds.records().iter().zip(weights) {
        let k = grid.kappa(r.time);
        if r.is_death() && k >= 1 {
            deaths[k - 1] += w;
        }
        start[k] += w;
    }
    let mut at_risk = vec![0.0; l];
    let mut acc = 0.0;
    for ell in (1..=l).rev() {
        acc += start[ell];
        at_risk[ell - 1] = acc;
    }
    (deaths, at_risk)
}

/// Population Kaplan-Meier on the unique death times.
pub fn kaplan_meier(ds: &SurvivalDataset) -> Result<KMEstimate> {
    ds.require_single_risk()?;
    let grid = build_grid(ds, GridStrategy::UniqueDeaths, None)?;
    kaplan_meier_on(ds, &grid)
}

/// Kaplan-Meier on a caller-chosen grid.
pub fn kaplan_meier_on(ds: &SurvivalDataset, grid: &TimeGrid) -> Result<KMEstimate> {
    let lt = life_table(ds, grid);
    km_from_counts(
        grid,
        lt.deaths.iter().map(|&d| d as f64).collect(),
        lt.at_risk.iter().map(|&n| n as f64).collect(),
    )
}

/// Discrete cumulative hazard Ĥ[ℓ] = Σ_{m≤ℓ} D[m]/N[m].
pub fn nelson_aalen(ds: &SurvivalDataset) -> Result<StepCurve> {
    let km = kaplan_meier(ds)?;
    let mut acc = 0.0;
    let values = km
        .hazards()
        .into_iter()
        .map(|h| {
            acc += h;
            acc
        })
        .collect();
    StepCurve::new(km.grid().clone(), values, CurveRole::Cumhaz, Interp::ForwardFill)
}

/// Exponential Greenwood band built on the log(−log Ŝ) scale.
pub fn greenwood_band(km: &KMEstimate, level: f64) -> Result<Band> {
    if !(0.0 < level && level < 1.0) {
        return Err(SurvError::validation("band level must lie in (0, 1)"));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let mut var_sum = 0.0;
    let mut lower = Vec::with_capacity(km.deaths.len());
    let mut upper = Vec::with_capacity(km.deaths.len());
    for ((&d, &n), &s) in km.deaths.iter().zip(&km.at_risk).zip(km.survival()) {
        if n > d {
            var_sum += d / (n * (n - d));
        }
        if s <= 0.0 || s >= 1.0 {
            lower.push(s);
            upper.push(s);
            continue;
        }
        let se = var_sum.sqrt() / s.ln().abs();
        lower.push(s.powf((z * se).exp()));
        upper.push(s.powf((-z * se).exp()));
    }
    Ok(Band { level, lower, upper })
}

/// KM with a band attached.
pub fn kaplan_meier_with_band(ds: &SurvivalDataset, level: f64) -> Result<KMEstimate> {
    let mut km = kaplan_meier(ds)?;
    km.band = Some(greenwood_band(&km, level)?);
    Ok(km)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// How training points are weighted for a query.
pub enum ConditionalMode<'a> {
    /// The k nearest points in Euclidean distance, all ties at the k-th distance included.
    Knn { k: usize },
    /// Weight K(x, X_j).
    Kernel(&'a dyn Fn(&[f64], &[f64]) -> f64),
    /// Explicit per-record weights.
    Weights(&'a [f64]),
}

/// Per-record weights used by [`conditional_km`].
pub fn conditional_weights(ds: &SurvivalDataset, x: &[f64], mode: &ConditionalMode<'_>) -> Result<Vec<f64>> {
    let n = ds.len();
    match mode {
        ConditionalMode::Knn { k } => {
            if *k == 0 || *k > n {
                return Err(SurvError::validation(format!("k must be in 1..={n}, got {k}")));
            }
            let dist: Vec<f64> = ds.records().iter().map(|r| euclidean(x, &r.features)).collect();
            let mut sorted = dist.clone();
            sorted.sort_by(f64::total_cmp);
            let cutoff = sorted[k - 1];
            Ok(dist.iter().map(|&d| if d <= cutoff { 1.0 } else { 0.0 }).collect())
        }
        ConditionalMode::Kernel(kernel) => {
            let w: Vec<f64> = ds.records().iter().map(|r| kernel(x, &r.features)).collect();
            if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(SurvError::validation("kernel values must be finite and nonnegative"));
            }
            Ok(w)
        }
        ConditionalMode::Weights(w) => {
            if w.len() != n {
                return Err(SurvError::DimensionMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
            if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(SurvError::validation("weights must be finite and nonnegative"));
            }
            Ok(w.to_vec())
        }
    }
}

/// Weighted KM from given weights; all-zero weights yield S ≡ 1 with a warning.
pub fn weighted_km(ds: &SurvivalDataset, grid: &TimeGrid, weights: &[f64]) -> Result<KMEstimate> {
    if weights.iter().all(|&w| w == 0.0) {
        log::warn!("all conditional weights are zero; returning constant survival 1");
    }
    let (d, n) = weighted_counts(ds, grid, weights);
    km_from_counts(grid, d, n)
}

/// Conditional KM on the training set's unique death times.
pub fn conditional_km(ds: &SurvivalDataset, x: &[f64], mode: &ConditionalMode<'_>) -> Result<KMEstimate> {
    ds.require_single_risk()?;
    if x.len() != ds.dim() {
        return Err(SurvError::DimensionMismatch {
            expected: ds.dim(),
            got: x.len(),
        });
    }
    let grid = build_grid(ds, GridStrategy::UniqueDeaths, None)?;
    let w = conditional_weights(ds, x, mode)?;
    weighted_km(ds, &grid, &w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn devices() -> SurvivalDataset {
        SurvivalDataset::from_columns(vec![vec![0.0], vec![1.0], vec![2.0]], &[2.0, 10.0, 6.0], &[1, 1, 0]).unwrap()
    }

    #[test]
    fn km_and_na_on_devices() {
        let ds = devices();
        let km = kaplan_meier(&ds).unwrap();
        assert_eq!(km.grid().times(), &[2.0, 10.0]);
        assert!((km.survival()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival()[1], 0.0);
        let na = nelson_aalen(&ds).unwrap();
        assert!((na.values[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((na.values[1] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn km_small_cases() {
        let one = SurvivalDataset::from_times(&[1.0], &[1]).unwrap();
        assert_eq!(kaplan_meier(&one).unwrap().survival(), &[0.0]);
        let three = SurvivalDataset::from_times(&[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap();
        let s = kaplan_meier(&three).unwrap();
        let expect = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (a, b) in s.survival().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let na = nelson_aalen(&three).unwrap();
        assert!((na.values[2] - (1.0 / 3.0 + 0.5 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn band_contains_estimate_and_widens_with_level() {
        let ds = SurvivalDataset::from_times(&[1.0, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0], &[1, 0, 1, 1, 0, 1, 0]).unwrap();
        let km = kaplan_meier(&ds).unwrap();
        let b95 = greenwood_band(&km, 0.95).unwrap();
        let b99 = greenwood_band(&km, 0.99).unwrap();
        for (l, &s) in km.survival().iter().enumerate() {
            assert!(b95.lower[l] <= s && s <= b95.upper[l]);
            assert!(b99.lower[l] <= b95.lower[l] && b95.upper[l] <= b99.upper[l]);
            assert!((0.0..=1.0).contains(&b99.lower[l]) && b99.upper[l] <= 1.0);
        }
    }

    #[test]
    fn conditional_reductions() {
        let ds = devices();
        let km = kaplan_meier(&ds).unwrap();
        let one = |_: &[f64], _: &[f64]| 1.0;
        let kern = conditional_km(&ds, &[0.5], &ConditionalMode::Kernel(&one)).unwrap();
        assert_eq!(kern.survival(), km.survival());
        let knn = conditional_km(&ds, &[0.5], &ConditionalMode::Knn { k: 3 }).unwrap();
        assert_eq!(knn.survival(), km.survival());
        let w = [1.0, 0.0, 0.0];
        let single = conditional_km(&ds, &[0.0], &ConditionalMode::Weights(&w)).unwrap();
        assert_eq!(single.survival(), &[0.0, 0.0]);
        let zero = [0.0; 3];
        let flat = conditional_km(&ds, &[0.0], &ConditionalMode::Weights(&zero)).unwrap();
        assert_eq!(flat.survival(), &[1.0, 1.0]);
    }

    #[test]
    fn knn_includes_ties() {
        let ds = devices();
        // query at 1.0: distances (1, 0, 1), so k=2 takes all three points
        let w = conditional_weights(&ds, &[1.0], &ConditionalMode::Knn { k: 2 }).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
    }
}
