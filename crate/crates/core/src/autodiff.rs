//! Minimal reverse-mode automatic differentiation.
//!
//! Every differentiable quantity in the crate is written once against the
//! [`Real`] trait. Evaluating with `f64` gives plain values; evaluating with
//! [`Var`] records a tape whose single backward sweep yields gradients.
//! Dense layers, softmax and log-sum-exp are recorded as fused nodes with
//! many parents, which keeps the tape roughly the size of the arithmetic.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};

/// Scalar arithmetic shared by plain floats and taped variables.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant living in the same computation as `self`.
    fn lift(&self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    fn relu(self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// `c - self`
    fn rsub(self, c: f64) -> Self {
        -self + c
    }

    /// Sum of a nonempty slice.
    fn sum(xs: &[Self]) -> Self;
    fn dot(a: &[Self], b: &[Self]) -> Self;
    /// `w·x + b` with constant inputs `x`.
    fn affine_const(w: &[Self], x: &[f64], b: Self) -> Self;
    fn softmax(xs: &[Self]) -> Vec<Self>;
    fn log_sum_exp(xs: &[Self]) -> Self;
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_values(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn lse_value(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sigmoid(self) -> Self {
        stable_sigmoid(self)
    }
    fn softplus(self) -> Self {
        stable_softplus(self)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn affine_const(w: &[Self], x: &[f64], b: Self) -> Self {
        w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b
    }
    fn softmax(xs: &[Self]) -> Vec<Self> {
        softmax_values(xs)
    }
    fn log_sum_exp(xs: &[Self]) -> Self {
        lse_value(xs)
    }
}

#[derive(Default)]
struct Nodes {
    value: Vec<f64>,
    // edges of node i live in parent/partial[start[i]..start[i + 1]]
    start: Vec<u32>,
    parent: Vec<u32>,
    partial: Vec<f64>,
}

/// Records primitive operations for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Nodes>,
}

impl Tape {
    pub fn new() -> Self {
        let tape = Tape::default();
        tape.nodes.borrow_mut().start.push(0);
        tape
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, std::iter::empty())
    }

    fn push(&self, value: f64, edges: impl IntoIterator<Item = (u32, f64)>) -> Var<'_> {
        let mut n = self.nodes.borrow_mut();
        let idx = n.value.len() as u32;
        n.value.push(value);
        for (p, d) in edges {
            n.parent.push(p);
            n.partial.push(d);
        }
        let end = n.parent.len() as u32;
        n.start.push(end);
        Var { tape: self, idx }
    }

    /// Adjoints of every recorded node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let n = self.nodes.borrow();
        let mut adj = vec![0.0; n.value.len()];
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let (s, e) = (n.start[i] as usize, n.start[i + 1] as usize);
            for k in s..e {
                adj[n.parent[k] as usize] += a * n.partial[k];
            }
        }
        adj
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}: {})", self.idx, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.idx as usize
    }

    fn unary(self, value: f64, partial: f64) -> Self {
        self.tape.push(value, [(self.idx, partial)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        let v = self.value() + rhs.value();
        self.tape.push(v, [(self.idx, 1.0), (rhs.idx, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        let v = self.value() - rhs.value();
        self.tape.push(v, [(self.idx, 1.0), (rhs.idx, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.tape.push(a * b, [(self.idx, b), (rhs.idx, a)])
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.tape
            .push(a / b, [(self.idx, 1.0 / b), (rhs.idx, -a / (b * b))])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.value(), -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Self {
        self.unary(self.value() + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Self {
        self.unary(self.value() - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Self {
        self.unary(self.value() * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Self {
        self.unary(self.value() / c, 1.0 / c)
    }
}

impl<'t> Real for Var<'t> {
    fn value(&self) -> f64 {
        self.tape.nodes.borrow().value[self.idx as usize]
    }
    fn lift(&self, c: f64) -> Self {
        self.tape.var(c)
    }
    fn exp(self) -> Self {
        let y = self.value().exp();
        self.unary(y, y)
    }
    fn ln(self) -> Self {
        let x = self.value();
        self.unary(x.ln(), 1.0 / x)
    }
    fn sqrt(self) -> Self {
        let y = self.value().sqrt();
        self.unary(y, 0.5 / y)
    }
    fn powf(self, p: f64) -> Self {
        let x = self.value();
        self.unary(x.powf(p), p * x.powf(p - 1.0))
    }
    fn tanh(self) -> Self {
        let y = self.value().tanh();
        self.unary(y, 1.0 - y * y)
    }
    fn sigmoid(self) -> Self {
        let y = stable_sigmoid(self.value());
        self.unary(y, y * (1.0 - y))
    }
    fn softplus(self) -> Self {
        let x = self.value();
        self.unary(stable_softplus(x), stable_sigmoid(x))
    }
    fn relu(self) -> Self {
        let x = self.value();
        if x > 0.0 {
            self.unary(x, 1.0)
        } else {
            self.unary(0.0, 0.0)
        }
    }
    fn sum(xs: &[Self]) -> Self {
        let tape = xs[0].tape;
        let v = xs.iter().map(|x| x.value()).sum();
        tape.push(v, xs.iter().map(|x| (x.idx, 1.0)))
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        let tape = a[0].tape;
        let av: Vec<f64> = a.iter().map(|x| x.value()).collect();
        let bv: Vec<f64> = b.iter().map(|x| x.value()).collect();
        let v = av.iter().zip(&bv).map(|(x, y)| x * y).sum();
        let edges = a
            .iter()
            .zip(&bv)
            .map(|(x, &y)| (x.idx, y))
            .chain(b.iter().zip(&av).map(|(y, &x)| (y.idx, x)));
        tape.push(v, edges.collect::<Vec<_>>())
    }
    fn affine_const(w: &[Self], x: &[f64], b: Self) -> Self {
        let tape = b.tape;
        let v = {
            let n = tape.nodes.borrow();
            w.iter()
                .zip(x)
                .map(|(w, x)| n.value[w.idx as usize] * x)
                .sum::<f64>()
                + n.value[b.idx as usize]
        };
        let edges = w
            .iter()
            .zip(x)
            .map(|(w, &x)| (w.idx, x))
            .chain(std::iter::once((b.idx, 1.0)));
        tape.push(v, edges.collect::<Vec<_>>())
    }
    fn softmax(xs: &[Self]) -> Vec<Self> {
        let tape = xs[0].tape;
        let vals: Vec<f64> = xs.iter().map(|x| x.value()).collect();
        let s = softmax_values(&vals);
        (0..xs.len())
            .map(|i| {
                let edges: Vec<(u32, f64)> = xs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let d = if i == j { s[i] * (1.0 - s[i]) } else { -s[i] * s[j] };
                        (x.idx, d)
                    })
                    .collect();
                tape.push(s[i], edges)
            })
            .collect()
    }
    fn log_sum_exp(xs: &[Self]) -> Self {
        let tape = xs[0].tape;
        let vals: Vec<f64> = xs.iter().map(|x| x.value()).collect();
        let s = softmax_values(&vals);
        let v = lse_value(&vals);
        tape.push(v, xs.iter().zip(s).map(|(x, p)| (x.idx, p)))
    }
}

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major.
    pub values: Vec<f64>,
}

pub const PARAM_STORE_VERSION: u32 = 1;

/// Named flat parameter arrays with fixed shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub version: u32,
    tensors: Vec<ParamTensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            version: PARAM_STORE_VERSION,
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> TensorId {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape/value mismatch");
        self.tensors.push(ParamTensor {
            name: name.into(),
            shape,
            values,
        });
        TensorId(self.tensors.len() - 1)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> TensorId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    /// Uniform in ±`bound`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> TensorId {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| {
                if bound > 0.0 {
                    rng.random_range(-bound..bound)
                } else {
                    0.0
                }
            })
            .collect();
        self.add(name, shape, values)
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn get(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].values
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut [f64] {
        &mut self.tensors[id.0].values
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.tensors.iter().position(|t| t.name == name).map(TensorId)
    }

    /// Total parameter count.
    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.values.iter().cloned()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len());
        let mut k = 0;
        for t in &mut self.tensors {
            let n = t.values.len();
            t.values.copy_from_slice(&flat[k..k + n]);
            k += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    /// Plain-float view for prediction.
    pub fn view(&self) -> ParamView<f64> {
        ParamView::from_values(self.flat(), self.offsets(), 0.0)
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn watch<'t>(&self, tape: &'t Tape) -> ParamView<Var<'t>> {
        let anchor = tape.var(0.0);
        let values = self
            .tensors
            .iter()
            .flat_map(|t| t.values.iter())
            .map(|&v| tape.var(v))
            .collect();
        ParamView::from_values(values, self.offsets(), anchor)
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.tensors.len() + 1);
        let mut k = 0;
        off.push(0);
        for t in &self.tensors {
            k += t.values.len();
            off.push(k);
        }
        off
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let store: ParamStore = serde_json::from_str(s)?;
        if store.version != PARAM_STORE_VERSION {
            return Err(SurvError::Schema(format!(
                "unsupported parameter store version {}",
                store.version
            )));
        }
        for t in &store.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(SurvError::Schema(format!("tensor {} has inconsistent shape", t.name)));
            }
        }
        Ok(store)
    }
}

/// Parameters materialized as scalars of type `S`.
pub struct ParamView<S> {
    values: Vec<S>,
    offsets: Vec<usize>,
    anchor: S,
}

impl<S: Real> ParamView<S> {
    fn from_values(values: Vec<S>, offsets: Vec<usize>, anchor: S) -> Self {
        ParamView {
            values,
            offsets,
            anchor,
        }
    }

    pub fn tensor(&self, id: TensorId) -> &[S] {
        &self.values[self.offsets[id.0]..self.offsets[id.0 + 1]]
    }

    pub fn scalar(&self, id: TensorId) -> S {
        self.tensor(id)[0]
    }

    pub fn constant(&self, c: f64) -> S {
        self.anchor.lift(c)
    }

    pub fn all(&self) -> &[S] {
        &self.values
    }
}

impl<'t> ParamView<Var<'t>> {
    /// Gradient of `loss` aligned with the store's flat layout.
    pub fn gradient(&self, tape: &'t Tape, loss: Var<'t>) -> Vec<f64> {
        let adj = tape.gradient(loss);
        self.values.iter().map(|v| adj[v.index()]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputTransform {
    Identity,
    Softmax,
    Sigmoid,
    Softplus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: OutputTransform,
}

impl MlpConfig {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: OutputTransform) -> Self {
        MlpConfig {
            widths,
            hidden,
            output,
        }
    }

    /// Single affine layer.
    pub fn linear(input: usize, output: usize, transform: OutputTransform) -> Self {
        Self::new(vec![input, output], Activation::Relu, transform)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(SurvError::validation("an MLP needs input and output widths"));
        }
        if self.widths[1..].contains(&0) {
            return Err(SurvError::validation("layer widths must be at least 1"));
        }
        Ok(())
    }
}

/// Hidden-layer layout shared by model configs; input and output widths come from the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape {
            hidden: vec![32],
            activation: Activation::Relu,
        }
    }
}

impl NetShape {
    /// No hidden layers.
    pub fn linear() -> Self {
        NetShape {
            hidden: Vec::new(),
            activation: Activation::Relu,
        }
    }

    pub fn config(&self, input: usize, output: usize, transform: OutputTransform) -> MlpConfig {
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(output);
        MlpConfig::new(widths, self.activation, transform)
    }
}

/// Dense feed-forward network whose weights live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub config: MlpConfig,
    layers: Vec<(TensorId, TensorId)>,
}

impl Mlp {
    /// Adds weights initialized uniformly in ±1/√fan_in.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        config: MlpConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Mlp> {
        config.validate()?;
        let mut layers = Vec::new();
        for (k, w) in config.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = if fan_in > 0 { 1.0 / (fan_in as f64).sqrt() } else { 1.0 };
            let wid = store.add_uniform(format!("{prefix}.{k}.weight"), vec![fan_out, fan_in], bound, rng);
            let bid = store.add_uniform(format!("{prefix}.{k}.bias"), vec![fan_out], bound, rng);
            layers.push((wid, bid));
        }
        Ok(Mlp { config, layers })
    }

    /// Same layout with every parameter set to zero.
    pub fn register_zeros(store: &mut ParamStore, prefix: &str, config: MlpConfig) -> Result<Mlp> {
        config.validate()?;
        let mut layers = Vec::new();
        for (k, w) in config.widths.windows(2).enumerate() {
            let wid = store.add_zeros(format!("{prefix}.{k}.weight"), vec![w[1], w[0]]);
            let bid = store.add_zeros(format!("{prefix}.{k}.bias"), vec![w[1]]);
            layers.push((wid, bid));
        }
        Ok(Mlp { config, layers })
    }

    pub fn layers(&self) -> &[(TensorId, TensorId)] {
        &self.layers
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.config.input_dim() {
            return Err(SurvError::DimensionMismatch {
                expected: self.config.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// Forward pass on constant inputs.
    pub fn forward<S: Real>(&self, p: &ParamView<S>, x: &[f64]) -> Result<Vec<S>> {
        self.check(x.len())?;
        let (w0, b0) = self.layers[0];
        let (w, b) = (p.tensor(w0), p.tensor(b0));
        let fan_in = x.len();
        let mut h: Vec<S> = (0..b.len())
            .map(|o| S::affine_const(&w[o * fan_in..(o + 1) * fan_in], x, b[o]))
            .collect();
        h = self.finish_layer(0, h);
        for k in 1..self.layers.len() {
            h = self.layer(p, k, &h);
        }
        Ok(h)
    }

    /// Forward pass where inputs are themselves differentiable.
    pub fn forward_vars<S: Real>(&self, p: &ParamView<S>, x: &[S]) -> Result<Vec<S>> {
        self.check(x.len())?;
        let mut h = self.layer(p, 0, x);
        for k in 1..self.layers.len() {
            h = self.layer(p, k, &h);
        }
        Ok(h)
    }

    fn layer<S: Real>(&self, p: &ParamView<S>, k: usize, x: &[S]) -> Vec<S> {
        let (wid, bid) = self.layers[k];
        let (w, b) = (p.tensor(wid), p.tensor(bid));
        let fan_in = x.len();
        let out = (0..b.len())
            .map(|o| {
                if fan_in == 0 {
                    b[o]
                } else {
                    S::dot(&w[o * fan_in..(o + 1) * fan_in], x) + b[o]
                }
            })
            .collect();
        self.finish_layer(k, out)
    }

    fn finish_layer<S: Real>(&self, k: usize, z: Vec<S>) -> Vec<S> {
        if k + 1 < self.layers.len() {
            match self.config.hidden {
                Activation::Relu => z.into_iter().map(Real::relu).collect(),
                Activation::Tanh => z.into_iter().map(Real::tanh).collect(),
            }
        } else {
            match self.config.output {
                OutputTransform::Identity => z,
                OutputTransform::Softmax => S::softmax(&z),
                OutputTransform::Sigmoid => z.into_iter().map(Real::sigmoid).collect(),
                OutputTransform::Softplus => z.into_iter().map(Real::softplus).collect(),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-2,
            epochs: 500,
            batch_size: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptConfig {
    pub fn adam(lr: f64, epochs: usize) -> Self {
        OptConfig {
            lr,
            epochs,
            ..Default::default()
        }
    }

    pub fn sgd(lr: f64, epochs: usize) -> Self {
        OptConfig {
            kind: OptimizerKind::Sgd,
            lr,
            epochs,
            ..Default::default()
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch_size = Some(batch);
        self
    }
}

/// First-order optimizer state.
pub struct Optimizer {
    cfg: OptConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: OptConfig, n_params: usize) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(SurvError::validation("learning rate must be positive"));
        }
        Ok(Optimizer {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        })
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(SurvError::Divergence {
                epoch: self.t as usize,
                detail: format!("non-finite gradient at parameter {k}"),
            });
        }
        let lr = self.cfg.lr;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
                }
            }
        }
        Ok(())
    }
}

/// Per-epoch mean loss; entry 0 is evaluated before the first update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<f64>,
}

impl LossTrace {
    pub fn first(&self) -> Option<f64> {
        self.epochs.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epochs.last().copied()
    }
}

/// Context handed to a minibatch loss.
pub struct BatchCtx<'a> {
    pub epoch: usize,
    pub batch: &'a [usize],
    /// Stream reserved for stochastic losses (e.g. sampled controls).
    pub rng: &'a mut ChaCha8Rng,
}

/// Minibatch training loop over `n` records.
///
/// Batches are drawn from a seeded shuffle, so the same seed and data give
/// bitwise-identical parameters. On a non-finite loss or gradient the store is
/// rolled back to the last finite state and a divergence error is returned.
pub fn train<F>(store: &mut ParamStore, cfg: &OptConfig, n: usize, seed: u64, mut loss: F) -> Result<LossTrace>
where
    F: for<'t> FnMut(&ParamView<Var<'t>>, &mut BatchCtx<'_>) -> Result<Var<'t>>,
{
    if n == 0 {
        return Err(SurvError::validation("cannot train on an empty dataset"));
    }
    let mut opt = Optimizer::new(cfg.clone(), store.len())?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
    shuffle.set_stream(1);
    let mut aux = ChaCha8Rng::seed_from_u64(seed);
    aux.set_stream(2);
    let batch = cfg.batch_size.unwrap_or(n).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = LossTrace::default();
    for epoch in 0..cfg.epochs {
        if batch < n {
            use rand::seq::SliceRandom;
            order.shuffle(&mut shuffle);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(batch) {
            let tape = Tape::new();
            let view = store.watch(&tape);
            let mut ctx = BatchCtx {
                epoch,
                batch: chunk,
                rng: &mut aux,
            };
            let l = loss(&view, &mut ctx)?;
            let lv = l.value();
            if !lv.is_finite() {
                return Err(SurvError::Divergence {
                    epoch,
                    detail: format!("loss is {lv}"),
                });
            }
            let grads = view.gradient(&tape, l);
            let mut flat = store.flat();
            let before = flat.clone();
            opt.step(&mut flat, &grads).map_err(|e| match e {
                SurvError::Divergence { detail, .. } => SurvError::Divergence { epoch, detail },
                e => e,
            })?;
            if flat.iter().any(|v| !v.is_finite()) {
                store.set_flat(&before);
                return Err(SurvError::Divergence {
                    epoch,
                    detail: "parameters became non-finite".into(),
                });
            }
            store.set_flat(&flat);
            total += lv * chunk.len() as f64;
            count += chunk.len();
        }
        trace.epochs.push(total / count as f64);
    }
    Ok(trace)
}

/// Seeded generator used for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + step;
            let up = f(&xp);
            xp[i] = orig - step;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest relative discrepancy between two gradients, with an absolute floor.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
