//! Survival stacking: every (record, time index) pair in a risk set becomes a
//! binary classification row x ⊕ e_ℓ labelled by whether the record died at ℓ.

use serde::{Deserialize, Serialize};

use crate::autodiff::{train, LossTrace, OptConfig, ParamStore, ParamView, Real, TensorId};
use crate::curves::{CurveRole, Interp, StepCurve};
use crate::datamodel::{SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};

/// Above this many cells the one-hot block is kept implicit.
pub const DENSE_CELL_LIMIT: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedProblem {
    pub d: usize,
    pub l: usize,
    /// Original features of each source record.
    pub source_features: Vec<Vec<f64>>,
    /// (source record, 1-based time index) per row.
    pub provenance: Vec<(usize, usize)>,
    pub labels: Vec<u8>,
    /// Materialized rows when the matrix fits under [`DENSE_CELL_LIMIT`].
    pub dense: Option<Vec<Vec<f64>>>,
}

fn concat_one_hot(x: &[f64], l: usize, ell: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(x.len() + l);
    row.extend_from_slice(x);
    row.extend((1..=l).map(|m| if m == ell { 1.0 } else { 0.0 }));
    row
}

impl StackedProblem {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cols(&self) -> usize {
        self.d + self.l
    }

    /// x_i ⊕ e_ℓ for row r.
    pub fn row(&self, r: usize) -> Vec<f64> {
        match &self.dense {
            Some(rows) => rows[r].clone(),
            None => {
                let (i, ell) = self.provenance[r];
                concat_one_hot(&self.source_features[i], self.l, ell)
            }
        }
    }

    /// Label sums per time-index block, equal to the death counts D[ℓ].
    pub fn label_sums(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.l];
        for (&(_, ell), &y) in self.provenance.iter().zip(&self.labels) {
            out[ell - 1] += u64::from(y);
        }
        out
    }

    /// CSV with columns x0.., e1..eL, label.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x{j}")).collect();
        header.extend((1..=self.l).map(|m| format!("e{m}")));
        header.push("label".into());
        wr.write_record(&header)?;
        for r in 0..self.rows() {
            let mut fields: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            fields.push(self.labels[r].to_string());
            wr.write_record(&fields)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Builds the stacked problem: grid index major, dataset order minor.
pub fn stack(ds: &SurvivalDataset, grid: &TimeGrid) -> Result<StackedProblem> {
    ds.require_single_risk()?;
    ds.require_deaths()?;
    let (d, l) = (ds.dim(), grid.len());
    let kappa: Vec<usize> = ds.records().iter().map(|r| grid.kappa(r.time)).collect();
    let mut provenance = Vec::new();
    let mut labels = Vec::new();
    for ell in 1..=l {
        for (i, r) in ds.records().iter().enumerate() {
            if kappa[i] >= ell {
                provenance.push((i, ell));
                labels.push(u8::from(r.is_death() && kappa[i] == ell));
            }
        }
    }
    let mut p = StackedProblem {
        d,
        l,
        source_features: ds.features(),
        provenance,
        labels,
        dense: None,
    };
    if p.rows() * p.cols() <= DENSE_CELL_LIMIT {
        p.dense = Some((0..p.rows()).map(|r| p.row(r)).collect());
    }
    Ok(p)
}

/// Anything that maps a stacked row to a probability.
pub trait StackClassifier {
    fn predict_proba(&self, row: &[f64]) -> Result<f64>;
}

/// Logistic regression trained with the built-in optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticAdapter {
    pub d: usize,
    pub l: usize,
    /// Ignore original features and use only the intercept and time one-hots.
    pub feature_blind: bool,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub trained: bool,
}

impl LogisticAdapter {
    pub fn new(d: usize, l: usize, feature_blind: bool) -> Self {
        LogisticAdapter {
            d,
            l,
            feature_blind,
            weights: vec![0.0; d + l],
            intercept: 0.0,
            trained: false,
        }
    }

    fn logit<S: Real>(w: &[S], b: S, row: &[f64], d: usize, blind: bool) -> S {
        if blind {
            S::affine_const(&w[d..], &row[d..], b)
        } else {
            S::affine_const(w, row, b)
        }
    }

    pub fn fit(&mut self, problem: &StackedProblem, opt: &OptConfig, seed: u64) -> Result<LossTrace> {
        if problem.d != self.d || problem.l != self.l {
            return Err(SurvError::DimensionMismatch {
                expected: self.d + self.l,
                got: problem.cols(),
            });
        }
        let mut store = ParamStore::new();
        let wid: TensorId = store.add("w", vec![self.d + self.l], self.weights.clone());
        let bid: TensorId = store.add("b", vec![1], vec![self.intercept]);
        let (d, blind) = (self.d, self.feature_blind);
        let trace = train(&mut store, opt, problem.rows(), seed, |p: &ParamView<_>, ctx| {
            let (w, b) = (p.tensor(wid), p.scalar(bid));
            let terms: Vec<_> = ctx
                .batch
                .iter()
                .map(|&r| {
                    let z = Self::logit(w, b, &problem.row(r), d, blind);
                    // −[y log σ(z) + (1−y) log(1−σ(z))] = softplus(z) − y z
                    z.softplus() - z * f64::from(problem.labels[r])
                })
                .collect();
            Ok(Real::sum(&terms) / ctx.batch.len() as f64)
        })?;
        self.weights = store.get(wid).to_vec();
        self.intercept = store.get(bid)[0];
        self.trained = true;
        Ok(trace)
    }
}

impl StackClassifier for LogisticAdapter {
    fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        if !self.trained {
            return Err(SurvError::validation("classifier has not been trained"));
        }
        if row.len() != self.d + self.l {
            return Err(SurvError::DimensionMismatch {
                expected: self.d + self.l,
                got: row.len(),
            });
        }
        Ok(Self::logit(&self.weights, self.intercept, row, self.d, self.feature_blind).sigmoid())
    }
}

/// Classifier probability at x ⊕ e_ℓ, read as the discrete hazard h[ℓ|x].
pub fn hazard_via_classifier<C: StackClassifier + ?Sized>(problem: &StackedProblem, clf: &C, x: &[f64], ell: usize) -> Result<f64> {
    if x.len() != problem.d {
        return Err(SurvError::DimensionMismatch {
            expected: problem.d,
            got: x.len(),
        });
    }
    if ell == 0 || ell > problem.l {
        return Err(SurvError::validation(format!("time index {ell} is outside 1..={}", problem.l)));
    }
    clf.predict_proba(&concat_one_hot(x, problem.l, ell))
}

/// The full discrete hazard curve for x.
pub fn hazard_curve<C: StackClassifier + ?Sized>(problem: &StackedProblem, clf: &C, x: &[f64], grid: &TimeGrid) -> Result<StepCurve> {
    let h = (1..=problem.l)
        .map(|ell| hazard_via_classifier(problem, clf, x, ell))
        .collect::<Result<Vec<_>>>()?;
    StepCurve::new(grid.clone(), h, CurveRole::Hazard, Interp::ForwardFill)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_record_toy() {
        let ds = SurvivalDataset::from_columns(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], &[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap();
        let grid = TimeGrid::new(vec![1.0, 3.0]).unwrap();
        let p = stack(&ds, &grid).unwrap();
        assert_eq!((p.rows(), p.cols()), (4, 4));
        assert_eq!(p.labels, vec![1, 0, 0, 1]);
        assert_eq!(p.row(0), vec![1.0, 2.0, 1.0, 0.0]);
        assert_eq!(p.row(3), vec![5.0, 6.0, 0.0, 1.0]);
        assert_eq!(p.provenance, vec![(0, 1), (1, 1), (2, 1), (2, 2)]);
    }

    #[test]
    fn untrained_classifier_errors() {
        let c = LogisticAdapter::new(1, 2, false);
        assert!(c.predict_proba(&[0.0, 1.0, 0.0]).is_err());
    }
}
