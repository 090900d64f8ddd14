//! A small recurrent-network toolkit: LSTM layers with backpropagation
//! through time, a stacked LSTM with an affine read-out, Adam, lag windows
//! and finite-difference gradient checking.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, SimRng};
use crate::scalar::Scalar;

/// Named parameter tensors of a model. Gradients use the same type.
pub trait Params<S: Scalar> {
    fn tensors(&self) -> Vec<&[S]>;
    fn tensors_mut(&mut self) -> Vec<&mut [S]>;
    fn tensor_names(&self) -> Vec<String>;
    /// Same shapes, all zeros.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(S::zero());
        }
    }

    /// `self += factor · other`; shapes must match.
    fn add_scaled(&mut self, other: &Self, factor: S) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + factor * *y;
            }
        }
    }

    fn flat(&self) -> Vec<S> {
        self.tensors().concat()
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

fn uniform_init<S: Scalar>(r: &mut SimRng, len: usize, bound: f64) -> Vec<S> {
    (0..len).map(|_| S::of(r.gen_range(-bound..=bound))).collect()
}

/// One LSTM layer. Gate blocks are stacked in the order input, forget,
/// candidate, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LstmLayer<S> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4H × I`.
    pub w_x: Matrix<S>,
    /// `4H × H`.
    pub w_h: Matrix<S>,
    /// `4H`.
    pub b: Vec<S>,
}

/// Activations of one layer over one sequence, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmTape<S> {
    xs: Vec<Vec<S>>,
    /// `hs[t]` is the output after step `t`.
    hs: Vec<Vec<S>>,
    cs: Vec<Vec<S>>,
    /// Activated gates `[i, f, g, o]` per step.
    gates: Vec<Vec<S>>,
    tanh_c: Vec<Vec<S>>,
}

impl<S: Scalar> LstmLayer<S> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_x: Matrix::zeros(4 * hidden_dim, input_dim),
            w_h: Matrix::zeros(4 * hidden_dim, hidden_dim),
            b: vec![S::zero(); 4 * hidden_dim],
        }
    }

    /// Uniform weights in `±1/√(I + H)`, forget-gate bias 1.
    pub fn init(input_dim: usize, hidden_dim: usize, r: &mut SimRng) -> Self {
        let h = hidden_dim;
        let bound = 1.0 / ((input_dim + h) as f64).sqrt();
        let mut layer = Self::zeros(input_dim, hidden_dim);
        layer.w_x.as_mut_slice().copy_from_slice(&uniform_init(r, 4 * h * input_dim, bound));
        layer.w_h.as_mut_slice().copy_from_slice(&uniform_init(r, 4 * h * h, bound));
        layer.b = uniform_init(r, 4 * h, bound);
        for x in &mut layer.b[h..2 * h] {
            *x = S::one();
        }
        layer
    }

    fn check_input(&self, xs: &[Vec<S>]) -> Result<()> {
        if xs.is_empty() {
            return Err(Error::Shape("empty input sequence".into()));
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.input_dim) {
            return Err(Error::Length {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, xs: &[Vec<S>]) -> Result<LstmTape<S>> {
        self.check_input(xs)?;
        let h = self.hidden_dim;
        let steps = xs.len();
        let mut tape = LstmTape {
            xs: xs.to_vec(),
            hs: Vec::with_capacity(steps),
            cs: Vec::with_capacity(steps),
            gates: Vec::with_capacity(steps),
            tanh_c: Vec::with_capacity(steps),
        };
        let zero = vec![S::zero(); h];
        for x in xs {
            let h_prev = tape.hs.last().unwrap_or(&zero);
            let c_prev = tape.cs.last().unwrap_or(&zero);
            let mut z = self.b.clone();
            self.w_x.mul_vec_add(x, &mut z);
            self.w_h.mul_vec_add(h_prev, &mut z);
            for k in 0..h {
                z[k] = sigmoid(z[k]);
                z[h + k] = sigmoid(z[h + k]);
                z[2 * h + k] = z[2 * h + k].tanh();
                z[3 * h + k] = sigmoid(z[3 * h + k]);
            }
            let mut c = vec![S::zero(); h];
            let mut tc = vec![S::zero(); h];
            let mut out = vec![S::zero(); h];
            for k in 0..h {
                c[k] = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
                tc[k] = c[k].tanh();
                out[k] = z[3 * h + k] * tc[k];
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("LSTM activation".into()));
            }
            tape.gates.push(z);
            tape.cs.push(c);
            tape.tanh_c.push(tc);
            tape.hs.push(out);
        }
        Ok(tape)
    }

    /// Backpropagate upstream gradients `dhs[t]` on every output, adding
    /// parameter gradients into `grad` and returning input gradients.
    pub fn backward(&self, tape: &LstmTape<S>, dhs: &[Vec<S>], grad: &mut Self) -> Result<Vec<Vec<S>>> {
        let steps = tape.hs.len();
        if dhs.len() != steps {
            return Err(Error::Length {
                expected: steps,
                actual: dhs.len(),
            });
        }
        let h = self.hidden_dim;
        let zero = vec![S::zero(); h];
        let mut dh_next = vec![S::zero(); h];
        let mut dc_next = vec![S::zero(); h];
        let mut dz = vec![S::zero(); 4 * h];
        let mut dxs = vec![vec![S::zero(); self.input_dim]; steps];
        let one = S::one();
        for t in (0..steps).rev() {
            let gates = &tape.gates[t];
            let tc = &tape.tanh_c[t];
            let c_prev = if t > 0 { &tape.cs[t - 1] } else { &zero };
            let h_prev = if t > 0 { &tape.hs[t - 1] } else { &zero };
            for k in 0..h {
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let dh = dhs[t][k] + dh_next[k];
                let dc = dc_next[k] + dh * o * (one - tc[k] * tc[k]);
                dz[k] = dc * g * i * (one - i);
                dz[h + k] = dc * c_prev[k] * f * (one - f);
                dz[2 * h + k] = dc * i * (one - g * g);
                dz[3 * h + k] = dh * tc[k] * o * (one - o);
                dc_next[k] = dc * f;
            }
            for (gb, d) in grad.b.iter_mut().zip(&dz) {
                *gb = *gb + *d;
            }
            grad.w_x.add_outer(&dz, &tape.xs[t]);
            grad.w_h.add_outer(&dz, h_prev);
            self.w_x.mul_t_vec_add(&dz, &mut dxs[t]);
            dh_next.fill(S::zero());
            self.w_h.mul_t_vec_add(&dz, &mut dh_next);
        }
        Ok(dxs)
    }
}

impl<S: Scalar> Params<S> for LstmLayer<S> {
    fn tensors(&self) -> Vec<&[S]> {
        vec![self.w_x.as_slice(), self.w_h.as_slice(), &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        vec![self.w_x.as_mut_slice(), self.w_h.as_mut_slice(), &mut self.b]
    }

    fn tensor_names(&self) -> Vec<String> {
        vec!["w_x".into(), "w_h".into(), "b".into()]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim)
    }
}

/// Stacked LSTM layers with dropout between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LstmStack<S> {
    pub layers: Vec<LstmLayer<S>>,
    /// Dropout probability on each layer's outputs during training.
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct StackTape<S> {
    layers: Vec<LstmTape<S>>,
    /// Inverted-dropout multipliers on each layer's outputs, when training.
    masks: Vec<Option<Vec<Vec<S>>>>,
    outputs: Vec<Vec<S>>,
}

impl<S: Scalar> StackTape<S> {
    /// Output sequence of the top layer, after dropout.
    pub fn outputs(&self) -> &[Vec<S>] {
        &self.outputs
    }
}

impl<S: Scalar> LstmStack<S> {
    pub fn init(input_dim: usize, hidden: &[usize], dropout: f64, r: &mut SimRng) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!("hidden sizes must be nonempty and positive, got {hidden:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut dim = input_dim;
        for &h in hidden {
            layers.push(LstmLayer::init(dim, h, r));
            dim = h;
        }
        Ok(Self { layers, dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_dim)
    }

    /// Validate that adjacent layer sizes chain.
    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("stack has no layers".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[1].input_dim != pair[0].hidden_dim {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    k,
                    pair[0].hidden_dim,
                    k + 1,
                    pair[1].input_dim
                )));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            let h = l.hidden_dim;
            if l.w_x.rows() != 4 * h || l.w_x.cols() != l.input_dim || l.w_h.rows() != 4 * h || l.w_h.cols() != h || l.b.len() != 4 * h {
                return Err(Error::Shape(format!("layer {k} parameter shapes are inconsistent")));
            }
        }
        Ok(())
    }

    /// Run the stack; `train` supplies the dropout stream and enables dropout.
    pub fn forward(&self, xs: &[Vec<S>], mut train: Option<&mut SimRng>) -> Result<StackTape<S>> {
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut input = xs.to_vec();
        for layer in &self.layers {
            let tape = layer.forward(&input)?;
            let mut out = tape.hs.clone();
            let mask = match train.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    let keep = S::of(1.0 / (1.0 - self.dropout));
                    let m: Vec<Vec<S>> = out
                        .iter()
                        .map(|h| h.iter().map(|_| if r.gen::<f64>() < self.dropout { S::zero() } else { keep }).collect())
                        .collect();
                    for (o, mk) in out.iter_mut().zip(&m) {
                        for (v, k) in o.iter_mut().zip(mk) {
                            *v = *v * *k;
                        }
                    }
                    Some(m)
                }
                _ => None,
            };
            tapes.push(tape);
            masks.push(mask);
            input = out;
        }
        Ok(StackTape {
            layers: tapes,
            masks,
            outputs: input,
        })
    }

    /// Backpropagate gradients on the top-layer outputs.
    pub fn backward(&self, tape: &StackTape<S>, d_out: &[Vec<S>], grad: &mut Self) -> Result<Vec<Vec<S>>> {
        let mut d = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            if let Some(mask) = &tape.masks[k] {
                for (dv, mk) in d.iter_mut().zip(mask) {
                    for (x, m) in dv.iter_mut().zip(mk) {
                        *x = *x * *m;
                    }
                }
            }
            d = self.layers[k].backward(&tape.layers[k], &d, &mut grad.layers[k])?;
        }
        Ok(d)
    }
}

impl<S: Scalar> Params<S> for LstmStack<S> {
    fn tensors(&self) -> Vec<&[S]> {
        self.layers.iter().flat_map(Params::tensors).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        self.layers.iter_mut().flat_map(Params::tensors_mut).collect()
    }

    fn tensor_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| l.tensor_names().into_iter().map(move |n| format!("lstm{k}.{n}")))
            .collect()
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Params::zeros_like).collect(),
            dropout: self.dropout,
        }
    }
}

/// Stacked LSTM whose final output passes through an affine map to a scalar.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct CascadeNet<S> {
    pub stack: LstmStack<S>,
    pub head_w: Vec<S>,
    /// Length 1.
    pub head_b: Vec<S>,
    #[serde(skip)]
    cache: Vec<CascadeTape<S>>,
}

impl<S: PartialEq> PartialEq for CascadeNet<S> {
    /// Compares parameters only.
    fn eq(&self, other: &Self) -> bool {
        self.stack == other.stack && self.head_w == other.head_w && self.head_b == other.head_b
    }
}

#[derive(Clone, Debug)]
pub struct CascadeTape<S> {
    stack: StackTape<S>,
    output: S,
}

impl<S: Scalar> CascadeTape<S> {
    pub fn output(&self) -> S {
        self.output
    }
}

impl<S: Scalar> CascadeNet<S> {
    pub fn init(input_dim: usize, hidden: &[usize], dropout: f64, r: &mut SimRng) -> Result<Self> {
        let stack = LstmStack::init(input_dim, hidden, dropout, r)?;
        let h = stack.output_dim();
        let bound = 1.0 / (h as f64).sqrt();
        Ok(Self {
            head_w: uniform_init(r, h, bound),
            head_b: vec![S::zero()],
            stack,
            cache: Vec::new(),
        })
    }

    pub fn from_parts(stack: LstmStack<S>, head_w: Vec<S>, head_b: S) -> Result<Self> {
        let net = Self {
            stack,
            head_w,
            head_b: vec![head_b],
            cache: Vec::new(),
        };
        net.check()?;
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.stack.input_dim()
    }

    pub fn check(&self) -> Result<()> {
        self.stack.check()?;
        if self.head_w.len() != self.stack.output_dim() || self.head_b.len() != 1 {
            return Err(Error::Shape("read-out does not match the top layer".into()));
        }
        Ok(())
    }

    pub fn forward(&self, xs: &[Vec<S>], train: Option<&mut SimRng>) -> Result<CascadeTape<S>> {
        let stack = self.stack.forward(xs, train)?;
        let last = stack.outputs.last().expect("nonempty sequence");
        let output = self.head_w.iter().zip(last).fold(self.head_b[0], |acc, (w, h)| acc + *w * *h);
        if !output.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(CascadeTape { stack, output })
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, xs: &[Vec<S>]) -> Result<S> {
        Ok(self.forward(xs, None)?.output)
    }

    /// Gradients for upstream `d_output`, added into `grad`; returns
    /// gradients with respect to the inputs.
    pub fn backward(&self, tape: &CascadeTape<S>, d_output: S, grad: &mut Self) -> Result<Vec<Vec<S>>> {
        let outs = &tape.stack.outputs;
        let last = outs.last().expect("nonempty sequence");
        grad.head_b[0] = grad.head_b[0] + d_output;
        for (g, h) in grad.head_w.iter_mut().zip(last) {
            *g = *g + d_output * *h;
        }
        let mut d_out = vec![vec![S::zero(); last.len()]; outs.len()];
        for (d, w) in d_out.last_mut().expect("nonempty").iter_mut().zip(&self.head_w) {
            *d = d_output * *w;
        }
        self.stack.backward(&tape.stack, &d_out, &mut grad.stack)
    }

    /// Forward a batch and keep the activations for [`Self::backward_batch`].
    pub fn forward_batch(&mut self, batch: &[Vec<Vec<S>>], mut train: Option<&mut SimRng>) -> Result<Vec<S>> {
        self.cache.clear();
        let mut preds = Vec::with_capacity(batch.len());
        for xs in batch {
            let tape = self.forward(xs, train.as_deref_mut())?;
            preds.push(tape.output);
            self.cache.push(tape);
        }
        Ok(preds)
    }

    /// Mean squared error of the cached batch against `targets` and its
    /// gradient. Consumes the cache.
    pub fn backward_batch(&mut self, targets: &[S]) -> Result<(S, Self)> {
        if self.cache.is_empty() {
            return Err(Error::State("backward called without a cached forward pass".into()));
        }
        if self.cache.len() != targets.len() {
            return Err(Error::Length {
                expected: self.cache.len(),
                actual: targets.len(),
            });
        }
        let cache = std::mem::take(&mut self.cache);
        let n = S::of_usize(targets.len());
        let mut grad = self.zeros_like();
        let mut loss = S::zero();
        for (tape, &y) in cache.iter().zip(targets) {
            let err = tape.output - y;
            loss = loss + err * err / n;
            self.backward(tape, S::of(2.0) * err / n, &mut grad)?;
        }
        Ok((loss, grad))
    }
}

impl<S: Scalar> Params<S> for CascadeNet<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut t = self.stack.tensors();
        t.push(&self.head_w);
        t.push(&self.head_b);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut t = self.stack.tensors_mut();
        t.push(&mut self.head_w);
        t.push(&mut self.head_b);
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut n = self.stack.tensor_names();
        n.push("head.w".into());
        n.push("head.b".into());
        n
    }

    fn zeros_like(&self) -> Self {
        Self {
            stack: self.stack.zeros_like(),
            head_w: vec![S::zero(); self.head_w.len()],
            head_b: vec![S::zero()],
            cache: Vec::new(),
        }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<S: Scalar> Adam<S> {
    /// One update of `params` against `grads` with learning rate `lr`.
    pub fn step<P: Params<S>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let g = grads.tensors();
        for (name, t) in grads.tensor_names().iter().zip(&g) {
            if let Some(k) = t.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}[{k}]")));
            }
        }
        if self.m.is_empty() {
            self.m = g.iter().map(|t| vec![S::zero(); t.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != g.len() || self.m.iter().zip(&g).any(|(m, t)| m.len() != t.len()) {
            return Err(Error::Shape("optimizer state does not match the parameters".into()));
        }
        self.step += 1;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let t = self.step as i32;
        let c1 = S::one() - S::of(self.beta1.powi(t));
        let c2 = S::one() - S::of(self.beta2.powi(t));
        let (lr, eps) = (S::of(lr), S::of(self.eps));
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(&g).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (S::one() - b1) * g[k];
                v[k] = b2 * v[k] + (S::one() - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Optimisation settings shared by all recurrent models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-step decay: the rate at step `k` is scaled by `1 / (1 + decay·k)`.
    pub lr_decay: f64,
    /// Halve the rate every this many epochs.
    pub halve_every: Option<usize>,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Cap on windows drawn per epoch (per node for graph models).
    pub windows_per_epoch: Option<usize>,
    pub seed: u64,
    pub lags: Vec<usize>,
    pub skip_nearest: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            lr_decay: 1e-6,
            halve_every: None,
            epochs: 200,
            batch_size: 32,
            windows_per_epoch: None,
            seed: 0,
            lags: (2..=9).collect(),
            skip_nearest: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lr_decay >= 0.0) {
            return Err(Error::Config(format!("learning-rate decay must be nonnegative, got {}", self.lr_decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.halve_every == Some(0) || self.windows_per_epoch == Some(0) {
            return Err(Error::Config("epochs, batch size, halving interval and window cap must be positive".into()));
        }
        check_lags(&self.lags, self.skip_nearest)
    }

    pub fn lr_at(&self, step: u64, epoch: usize) -> f64 {
        let halvings = self.halve_every.map_or(0, |h| epoch / h) as i32;
        self.learning_rate / (1.0 + self.lr_decay * step as f64) * 0.5f64.powi(halvings)
    }

    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0)
    }
}

fn check_lags(lags: &[usize], skip_nearest: bool) -> Result<()> {
    if lags.is_empty() || lags.contains(&0) {
        return Err(Error::Config(format!("lags must be a nonempty set of positive integers, got {lags:?}")));
    }
    if skip_nearest && lags.contains(&1) {
        return Err(Error::Config("lag 1 is excluded when skipping the nearest slot".into()));
    }
    Ok(())
}

/// One supervised example: lagged values before `t` and the value at `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window<S> {
    pub t: usize,
    /// `values[t − p]` for the lags `p` in ascending order.
    pub inputs: Vec<S>,
    pub target: S,
}

impl<S: Scalar> Window<S> {
    /// The inputs as a one-dimensional sequence, oldest first.
    pub fn sequence(&self) -> Vec<Vec<S>> {
        self.inputs.iter().rev().map(|&x| vec![x]).collect()
    }
}

/// Sorted, deduplicated lag set after validation.
pub fn normalize_lags(lags: &[usize], skip_nearest: bool) -> Result<Vec<usize>> {
    check_lags(lags, skip_nearest)?;
    let mut l = lags.to_vec();
    l.sort_unstable();
    l.dedup();
    Ok(l)
}

/// Lag windows with targets at every `t` in `targets` (clipped so that all
/// lags are available).
pub fn make_windows_in<S: Scalar>(
    values: &[S],
    lags: &[usize],
    skip_nearest: bool,
    targets: std::ops::Range<usize>,
) -> Result<Vec<Window<S>>> {
    let lags = normalize_lags(lags, skip_nearest)?;
    let max_lag = *lags.last().expect("nonempty");
    let start = targets.start.max(max_lag);
    let end = targets.end.min(values.len());
    Ok((start..end)
        .map(|t| Window {
            t,
            inputs: lags.iter().map(|&p| values[t - p]).collect(),
            target: values[t],
        })
        .collect())
}

/// All lag windows of a series; there are `len − max lag` of them.
pub fn make_windows<S: Scalar>(values: &[S], lags: &[usize], skip_nearest: bool) -> Result<Vec<Window<S>>> {
    make_windows_in(values, lags, skip_nearest, 0..values.len())
}

/// Train a cascade on windows with minibatch Adam; returns the mean training
/// loss of each epoch.
pub fn train_cascade<S: Scalar>(
    net: &mut CascadeNet<S>,
    windows: &[Window<S>],
    cfg: &TrainConfig,
    opt: &mut Adam<S>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let mut r = rng::seeded(rng::child_seed(cfg.seed, 0x7261_696e));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let take = cfg.windows_per_epoch.map_or(order.len(), |c| c.min(order.len()));
        let mut total = 0.0;
        for batch in order[..take].chunks(cfg.batch_size) {
            let inputs: Vec<Vec<Vec<S>>> = batch.iter().map(|&i| windows[i].sequence()).collect();
            let targets: Vec<S> = batch.iter().map(|&i| windows[i].target).collect();
            net.forward_batch(&inputs, Some(&mut r))?;
            let (loss, grad) = net.backward_batch(&targets)?;
            total += loss.as_f64() * batch.len() as f64;
            let lr = cfg.lr_at(opt.step, epoch);
            opt.step(net, &grad, lr)?;
        }
        history.push(total / take as f64);
    }
    Ok(history)
}

/// Largest relative discrepancy between `analytic` gradients and central
/// differences of `loss`, over every parameter (or every `stride`-th one).
///
/// The relative error of one entry is `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check<S: Scalar, P: Params<S>>(
    params: &mut P,
    analytic: &P,
    mut loss: impl FnMut(&P) -> Result<S>,
    eps: f64,
    floor: f64,
    stride: usize,
) -> Result<GradientReport> {
    let grads = analytic.flat();
    let names = params.tensor_names();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut report = GradientReport::default();
    let mut flat_index = 0;
    for (tensor, &size) in sizes.iter().enumerate() {
        for k in (0..size).step_by(stride.max(1)) {
            let original = params.tensors()[tensor][k];
            params.tensors_mut()[tensor][k] = original + S::of(eps);
            let plus = loss(params)?;
            params.tensors_mut()[tensor][k] = original - S::of(eps);
            let minus = loss(params)?;
            params.tensors_mut()[tensor][k] = original;
            let numeric = ((plus - minus) / S::of(2.0 * eps)).as_f64();
            let a = grads[flat_index + k].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = format!("{}[{k}]", names[tensor]);
            }
        }
        flat_index += size;
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameter with the largest error.
    pub worst: String,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model plus optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "M: Serialize + serde::de::DeserializeOwned, S: Scalar")]
pub struct Checkpoint<M, S> {
    pub version: u32,
    pub model: M,
    pub optimizer: Adam<S>,
    pub train: TrainConfig,
}

impl<M, S> Checkpoint<M, S>
where
    M: Serialize + serde::de::DeserializeOwned,
    S: Scalar,
{
    pub fn new(model: M, optimizer: Adam<S>, train: TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model,
            optimizer,
            train,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Load and check the version; shape validation is up to the model.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}
