#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survkit::datamodel::{SurvivalDataset, SurvivalRecord};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random dataset with N(0,1)-ish features, exponential times and roughly 30% censoring.
///
/// With `ties` the times are rounded up to multiples of 0.25. Record 0 is
/// always an event of type 1 so the set has at least one death.
pub fn random_dataset(r: &mut ChaCha8Rng, n: usize, d: usize, k: u32, ties: bool) -> SurvivalDataset {
    let records = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
            let u: f64 = r.random_range(0.02..1.0);
            let mut t = -u.ln() + 0.05;
            if ties {
                t = (t * 4.0).ceil() / 4.0;
            }
            let event = if i == 0 {
                1
            } else if r.random::<f64>() < 0.7 {
                r.random_range(1..=k)
            } else {
                0
            };
            SurvivalRecord::new(x, t, event)
        })
        .collect();
    SurvivalDataset::new(records, k).unwrap()
}

/// Uniform values in [−a, a].
pub fn random_params(r: &mut ChaCha8Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-a..a)).collect()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), zero when both vanish.
pub fn norm_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares the tape gradient of a loss with central finite differences.
///
/// The body is expanded twice, once over a recording view and once over a
/// plain f64 view of a scratch copy whose parameters are perturbed.
#[macro_export]
macro_rules! grad_check {
    ($store:expr, |$p:ident| $body:expr) => {{
        let store: &survkit::autodiff::ParamStore = $store;
        let analytic = {
            let tape = survkit::autodiff::Tape::new();
            let $p = store.watch(&tape);
            let loss = $body;
            $p.gradient(&tape, loss)
        };
        let mut scratch = store.clone();
        let numeric = survkit::autodiff::finite_difference(&store.flat(), 1e-6, |x| {
            scratch.set_flat(x);
            let $p = scratch.view();
            let v: f64 = $body;
            v
        });
        $crate::common::norm_rel_err(&analytic, &numeric)
    }};
}

/// Proptest strategy for small single-risk datasets with one feature.
///
/// Times are multiples of 0.5 so ties are common; the first record is a death.
pub fn arb_dataset(max_n: usize) -> impl proptest::strategy::Strategy<Value = SurvivalDataset> {
    use proptest::prelude::*;
    proptest::collection::vec((1u32..12, any::<bool>(), -2.0f64..2.0), 2..max_n).prop_map(|rows| {
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, (t, e, x))| SurvivalRecord::new(vec![x], f64::from(t) * 0.5, u32::from(e || i == 0)))
            .collect();
        SurvivalDataset::new(records, 1).unwrap()
    })
}
