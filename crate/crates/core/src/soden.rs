//! SODEN: the cumulative hazard solves dH/dt = h((t, H, x); θ) with H(0) = 0.
//!
//! The ODE is integrated with fixed-step classical RK4 and trained by
//! backpropagating through the unrolled solver. Encoders cover a generic rate
//! network, proportional hazards, AFT written as g(H)·e^{f(x)}, extended
//! hazards, a piecewise-constant conversion of a discrete model, and the
//! closed-form Weibull and exponential models.

use serde::{Deserialize, Serialize};

use crate::autodiff::{init_rng, train, LossTrace, Mlp, NetShape, OptConfig, OutputTransform, ParamStore, ParamView, Real, TensorId};
use crate::curves::{PredictionBundle, SurvivalModel};
use crate::datamodel::{SurvivalDataset, TimeGrid};
use crate::discretemodels::DiscreteModel;
use crate::error::{Result, SurvError};

/// Floor added to H before taking fractional powers.
pub const DEFAULT_DELTA: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub steps_per_unit: f64,
    pub delta: f64,
}

impl SolverConfig {
    /// 100 steps across the dataset's largest observed time.
    pub fn for_dataset(ds: &SurvivalDataset) -> Self {
        let span = ds.max_time();
        SolverConfig {
            steps_per_unit: if span > 0.0 { 100.0 / span } else { 100.0 },
            delta: DEFAULT_DELTA,
        }
    }

    pub fn steps_for(&self, t: f64) -> usize {
        if t <= 0.0 {
            0
        } else {
            ((self.steps_per_unit * t).ceil() as usize).max(1)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Generic,
    Ph,
    AftG,
    Eh,
    Weibull,
    Exponential,
}

impl std::str::FromStr for EncoderKind {
    type Err = SurvError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "generic" => EncoderKind::Generic,
            "ph" => EncoderKind::Ph,
            "aft-gh" | "aft" => EncoderKind::AftG,
            "eh" => EncoderKind::Eh,
            "weibull" => EncoderKind::Weibull,
            "exponential" => EncoderKind::Exponential,
            other => return Err(SurvError::validation(format!("unknown SODEN encoder '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoder", rename_all = "kebab-case")]
pub enum Encoder {
    /// softplus(net(t / time_scale, H, x)).
    Generic { net: Mlp, time_scale: f64 },
    /// h0(t) e^{f(x)}.
    Ph { h0: Mlp, f: Mlp, time_scale: f64 },
    /// g(H) e^{f(x)}.
    AftG { g: Mlp, f: Mlp },
    /// h0(t e^{f1(x)}) e^{f2(x)}.
    Eh { h0: Mlp, f1: Mlp, f2: Mlp, time_scale: f64 },
    /// h[ℓ|x] / (τ_ℓ − τ_{ℓ−1}) on (τ_{ℓ−1}, τ_ℓ], zero past the grid.
    Piecewise { model: Box<DiscreteModel> },
    /// e^φ (H + δ)^{1 − e^{−φ}} e^{βᵀx + ψ e^{−φ}}.
    Weibull { beta: TensorId, psi: TensorId, phi: TensorId },
    /// e^{βᵀx + ψ}.
    Exponential { beta: TensorId, psi: TensorId },
}

/// Per-record quantities that do not change along the solve.
enum Prepared<S> {
    Generic(Vec<S>),
    Scaled(S),
    Eh { stretch: S, scale: S },
    Piecewise(Vec<f64>),
    Weibull { coef: S, power: S },
    Constant(S),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SodenModel {
    pub dim: usize,
    pub encoder: Encoder,
    pub store: ParamStore,
    pub solver: SolverConfig,
}

impl SodenModel {
    pub fn init(kind: EncoderKind, dim: usize, shape: &NetShape, solver: SolverConfig, time_scale: f64, seed: u64) -> Result<Self> {
        if !(time_scale > 0.0) {
            return Err(SurvError::validation("time scale must be positive"));
        }
        let mut store = ParamStore::new();
        let mut rng = init_rng(seed);
        let encoder = match kind {
            EncoderKind::Generic => Encoder::Generic {
                net: Mlp::register(&mut store, "rate", shape.config(dim + 2, 1, OutputTransform::Softplus), &mut rng)?,
                time_scale,
            },
            EncoderKind::Ph => Encoder::Ph {
                h0: Mlp::register(&mut store, "h0", shape.config(1, 1, OutputTransform::Softplus), &mut rng)?,
                f: Mlp::register(&mut store, "f", shape.config(dim, 1, OutputTransform::Identity), &mut rng)?,
                time_scale,
            },
            EncoderKind::AftG => Encoder::AftG {
                g: Mlp::register(&mut store, "g", shape.config(1, 1, OutputTransform::Softplus), &mut rng)?,
                f: Mlp::register(&mut store, "f", shape.config(dim, 1, OutputTransform::Identity), &mut rng)?,
            },
            EncoderKind::Eh => Encoder::Eh {
                h0: Mlp::register(&mut store, "h0", shape.config(1, 1, OutputTransform::Softplus), &mut rng)?,
                f1: Mlp::register(&mut store, "f1", shape.config(dim, 1, OutputTransform::Identity), &mut rng)?,
                f2: Mlp::register(&mut store, "f2", shape.config(dim, 1, OutputTransform::Identity), &mut rng)?,
                time_scale,
            },
            EncoderKind::Weibull => Encoder::Weibull {
                beta: store.add_zeros("beta", vec![dim]),
                psi: store.add_zeros("psi", vec![1]),
                phi: store.add_zeros("phi", vec![1]),
            },
            EncoderKind::Exponential => Encoder::Exponential {
                beta: store.add_zeros("beta", vec![dim]),
                psi: store.add_zeros("psi", vec![1]),
            },
        };
        Ok(SodenModel { dim, encoder, store, solver })
    }

    pub fn weibull(beta: &[f64], psi: f64, phi: f64, solver: SolverConfig) -> Self {
        let mut m = Self::init(EncoderKind::Weibull, beta.len(), &NetShape::linear(), solver, 1.0, 0).unwrap();
        m.store.set_flat(&[beta, &[psi, phi]].concat());
        m
    }

    pub fn exponential(beta: &[f64], psi: f64, solver: SolverConfig) -> Self {
        let mut m = Self::init(EncoderKind::Exponential, beta.len(), &NetShape::linear(), solver, 1.0, 0).unwrap();
        m.store.set_flat(&[beta, &[psi]].concat());
        m
    }

    /// Continuous-time view of a fitted discrete model.
    pub fn piecewise(model: DiscreteModel, solver: SolverConfig) -> Self {
        SodenModel {
            dim: model.dim(),
            encoder: Encoder::Piecewise { model: Box::new(model) },
            store: ParamStore::new(),
            solver,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(SurvError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn prepare<S: Real>(&self, p: &ParamView<S>, x: &[f64]) -> Result<Prepared<S>> {
        self.check_dim(x)?;
        Ok(match &self.encoder {
            Encoder::Generic { .. } => Prepared::Generic(x.iter().map(|&v| p.constant(v)).collect()),
            Encoder::Ph { f, .. } | Encoder::AftG { f, .. } => Prepared::Scaled(f.forward(p, x)?[0].exp()),
            Encoder::Eh { f1, f2, .. } => Prepared::Eh {
                stretch: f1.forward(p, x)?[0].exp(),
                scale: f2.forward(p, x)?[0].exp(),
            },
            Encoder::Piecewise { model } => Prepared::Piecewise(model.predict(x)?.hazard),
            Encoder::Weibull { beta, psi, phi } => {
                let lin = S::affine_const(p.tensor(*beta), x, p.constant(0.0));
                let phi = p.scalar(*phi);
                let inv_k = (-phi).exp();
                let coef = (lin + p.scalar(*psi) * inv_k + phi).exp();
                Prepared::Weibull {
                    coef,
                    power: inv_k.rsub(1.0),
                }
            }
            Encoder::Exponential { beta, psi } => {
                Prepared::Constant((S::affine_const(p.tensor(*beta), x, p.constant(0.0)) + p.scalar(*psi)).exp())
            }
        })
    }

    fn rate_prepared<S: Real>(&self, p: &ParamView<S>, prep: &Prepared<S>, t: f64, big_h: S) -> Result<S> {
        let r = match (&self.encoder, prep) {
            (Encoder::Generic { net, time_scale }, Prepared::Generic(xs)) => {
                let mut input = Vec::with_capacity(xs.len() + 2);
                input.push(p.constant(t / time_scale));
                input.push(big_h);
                input.extend_from_slice(xs);
                net.forward_vars(p, &input)?[0]
            }
            (Encoder::Ph { h0, time_scale, .. }, Prepared::Scaled(s)) => h0.forward(p, &[t / time_scale])?[0] * *s,
            (Encoder::AftG { g, .. }, Prepared::Scaled(s)) => g.forward_vars(p, &[big_h])?[0] * *s,
            (Encoder::Eh { h0, time_scale, .. }, Prepared::Eh { stretch, scale }) => {
                h0.forward_vars(p, &[*stretch * (t / time_scale)])?[0] * *scale
            }
            (Encoder::Piecewise { model }, Prepared::Piecewise(h)) => p.constant(piecewise_rate(&model.grid, h, t)),
            (Encoder::Weibull { .. }, Prepared::Weibull { coef, power }) => {
                let base = big_h + self.solver.delta;
                if base.value() <= 0.0 {
                    return Err(SurvError::Domain(format!("H + δ = {} is not positive", base.value())));
                }
                // (H+δ)^p with p differentiable in φ
                (base.ln() * *power).exp() * *coef
            }
            (Encoder::Exponential { .. }, Prepared::Constant(c)) => *c,
            _ => unreachable!("prepared state always matches its encoder"),
        };
        if !r.value().is_finite() {
            return Err(SurvError::Domain(format!("non-finite rate {} at t = {t}, H = {}", r.value(), big_h.value())));
        }
        Ok(r)
    }

    /// h((t, H, x)).
    pub fn rate<S: Real>(&self, p: &ParamView<S>, x: &[f64], t: f64, big_h: S) -> Result<S> {
        let prep = self.prepare(p, x)?;
        self.rate_prepared(p, &prep, t, big_h)
    }

    fn rk4_from<S: Real>(&self, p: &ParamView<S>, prep: &Prepared<S>, t0: f64, h0: S, t1: f64, steps: usize) -> Result<S> {
        let dt = (t1 - t0) / steps as f64;
        let mut h = h0;
        for s in 0..steps {
            let t = t0 + s as f64 * dt;
            let k1 = self.rate_prepared(p, prep, t, h)?;
            let k2 = self.rate_prepared(p, prep, t + 0.5 * dt, h + k1 * (0.5 * dt))?;
            let k3 = self.rate_prepared(p, prep, t + 0.5 * dt, h + k2 * (0.5 * dt))?;
            let k4 = self.rate_prepared(p, prep, t + dt, h + k3 * dt)?;
            h = h + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        Ok(h)
    }

    /// H(t_end | x) by RK4 with the given number of uniform steps.
    ///
    /// The piecewise encoder integrates its step rate in closed form instead.
    pub fn cumhaz_with<S: Real>(&self, p: &ParamView<S>, x: &[f64], t_end: f64, steps: usize) -> Result<S> {
        if !(t_end >= 0.0) {
            return Err(SurvError::validation("t_end must be nonnegative"));
        }
        let prep = self.prepare(p, x)?;
        if let (Encoder::Piecewise { model }, Prepared::Piecewise(h)) = (&self.encoder, &prep) {
            return Ok(p.constant(piecewise_cumhaz(&model.grid, h, t_end)));
        }
        if t_end == 0.0 {
            return Ok(p.constant(0.0));
        }
        if steps == 0 {
            return Err(SurvError::validation("RK4 needs at least one step"));
        }
        self.rk4_from(p, &prep, 0.0, p.constant(0.0), t_end, steps)
    }

    pub fn cumhaz(&self, x: &[f64], t: f64) -> Result<f64> {
        self.cumhaz_with(&self.store.view(), x, t, self.solver.steps_for(t))
    }

    /// Mean SODEN negative log-likelihood over `idx`.
    pub fn nll_on<S: Real>(&self, p: &ParamView<S>, ds: &SurvivalDataset, idx: &[usize]) -> Result<S> {
        if idx.is_empty() {
            return Err(SurvError::validation("empty batch"));
        }
        let mut terms = Vec::with_capacity(idx.len());
        for &i in idx {
            let r = ds.record(i);
            let prep = self.prepare(p, &r.features)?;
            let big_h = match (&self.encoder, &prep) {
                (Encoder::Piecewise { model }, Prepared::Piecewise(h)) => p.constant(piecewise_cumhaz(&model.grid, h, r.time)),
                _ => match self.solver.steps_for(r.time) {
                    0 => p.constant(0.0),
                    steps => self.rk4_from(p, &prep, 0.0, p.constant(0.0), r.time, steps)?,
                },
            };
            let mut ll = -big_h;
            if r.is_death() {
                // a zero rate yields an infinite loss, reported as such
                ll = ll + self.rate_prepared(p, &prep, r.time, big_h)?.ln();
            }
            terms.push(ll);
        }
        Ok(-S::sum(&terms) / idx.len() as f64)
    }

    pub fn nll(&self, ds: &SurvivalDataset) -> Result<f64> {
        let idx: Vec<usize> = (0..ds.len()).collect();
        self.nll_on(&self.store.view(), ds, &idx)
    }

    /// Ĥ, Ŝ and ĥ = rate(t, Ĥ(t), x) at every grid time, solving knot to knot.
    pub fn predict(&self, x: &[f64], grid: &TimeGrid) -> Result<PredictionBundle> {
        let p = self.store.view();
        let prep = self.prepare(&p, x)?;
        let mut big_h = Vec::with_capacity(grid.len());
        let mut rates = Vec::with_capacity(grid.len());
        let (mut t, mut h) = (0.0, 0.0);
        for &tau in grid.times() {
            h = match (&self.encoder, &prep) {
                (Encoder::Piecewise { model }, Prepared::Piecewise(hz)) => piecewise_cumhaz(&model.grid, hz, tau),
                _ => match self.solver.steps_for(tau - t) {
                    0 => h,
                    steps => self.rk4_from(&p, &prep, t, h, tau, steps)?,
                },
            };
            t = tau;
            big_h.push(h);
            rates.push(self.rate_prepared(&p, &prep, tau, h)?);
        }
        PredictionBundle::continuous(grid.clone(), rates, big_h)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl SurvivalModel for SodenModel {
    fn survival(&self, x: &[f64], t: f64) -> f64 {
        self.cumhaz(x, t).map(|h| (-h).exp()).unwrap_or(f64::NAN)
    }
}

/// Rate of the piecewise-constant conversion of discrete hazards.
pub fn piecewise_rate(grid: &TimeGrid, hazards: &[f64], t: f64) -> f64 {
    if t > grid.last() {
        return 0.0;
    }
    // t in (τ_{ℓ−1}, τ_ℓ]; t = 0 takes the first bin
    let ell = (grid.times().partition_point(|&tau| tau < t) + 1).min(grid.len());
    hazards[ell - 1] / (grid.tau(ell) - grid.tau(ell - 1))
}

/// H(t) = Σ_{m<ℓ} h[m] + h[ℓ] (t − τ_{ℓ−1}) / (τ_ℓ − τ_{ℓ−1}) for t in (τ_{ℓ−1}, τ_ℓ].
pub fn piecewise_cumhaz(grid: &TimeGrid, hazards: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for ell in 1..=grid.len() {
        let (lo, hi) = (grid.tau(ell - 1), grid.tau(ell));
        if t >= hi {
            acc += hazards[ell - 1];
        } else {
            if t > lo {
                acc += hazards[ell - 1] * (t - lo) / (hi - lo);
            }
            break;
        }
    }
    acc
}

/// Standalone solver entry point.
pub fn rk4_cumhaz(model: &SodenModel, x: &[f64], t_end: f64, steps: usize) -> Result<f64> {
    model.cumhaz_with(&model.store.view(), x, t_end, steps)
}

pub fn soden_nll(model: &SodenModel, ds: &SurvivalDataset) -> Result<f64> {
    model.nll(ds)
}

/// Classical RK4 for a scalar ODE dy/dt = f(t, y); used by tests and oracles.
pub fn rk4_scalar(f: impl Fn(f64, f64) -> f64, y0: f64, t1: f64, steps: usize) -> f64 {
    let dt = t1 / steps as f64;
    let mut y = y0;
    for s in 0..steps {
        let t = s as f64 * dt;
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1);
        let k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2);
        let k4 = f(t + dt, y + dt * k3);
        y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

pub fn soden_fit(
    kind: EncoderKind,
    ds: &SurvivalDataset,
    shape: &NetShape,
    solver: Option<SolverConfig>,
    opt: &OptConfig,
    seed: u64,
) -> Result<(SodenModel, LossTrace)> {
    ds.require_single_risk()?;
    let solver = solver.unwrap_or_else(|| SolverConfig::for_dataset(ds));
    let scale = if ds.max_time() > 0.0 { ds.max_time() } else { 1.0 };
    let mut model = SodenModel::init(kind, ds.dim(), shape, solver, scale, seed)?;
    let mut store = model.store.clone();
    let trace = train(&mut store, opt, ds.len(), seed, |p, ctx| model.nll_on(p, ds, ctx.batch))?;
    model.store = store;
    Ok((model, trace))
}

pub fn soden_predict(model: &SodenModel, x: &[f64], grid: &TimeGrid) -> Result<PredictionBundle> {
    model.predict(x, grid)
}
