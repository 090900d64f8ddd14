//! Exponential-kernel Hawkes processes: intensity, likelihood, stability and
//! thinning simulation.
//!
//! The conditional intensity of node `u` is
//!
//! ```text
//! λ_u(t) = μ_u + Σ_{i: t_i < t} A[u][u_i] · g(t − t_i),    g(s) = w·exp(−w·s)
//! ```
//!
//! so **`A[u][v]` is the influence of events at `v` on the intensity of `u`**
//! (row = receiving node, column = source node). Column sums of `A` are the
//! expected number of direct offspring of an event at the column's node.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventSequence};
use crate::linalg::Matrix;
use crate::rng;
use crate::scalar::{CompensatedSum, Scalar};

/// Exponential triggering density `w·exp(−w·t)`.
pub fn kernel<S: Scalar>(w: S, t: S) -> Result<S> {
    if t < S::zero() || t.is_nan() {
        return Err(Error::Domain(format!("kernel evaluated at negative elapsed time {t}")));
    }
    if !(w > S::zero()) {
        return Err(Error::Domain(format!("kernel rate must be positive, got {w}")));
    }
    Ok(w * (-w * t).exp())
}

/// Background rates `mu`, excitation matrix `a` and shared kernel rate `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct HawkesModel<S> {
    mu: Vec<S>,
    a: Matrix<S>,
    w: S,
}

#[derive(Serialize, Deserialize)]
struct ModelJson<S> {
    mu: Vec<S>,
    #[serde(rename = "A")]
    a: Vec<Vec<S>>,
    w: S,
}

impl<S: Scalar> HawkesModel<S> {
    pub fn new(mu: Vec<S>, a: Matrix<S>, w: S) -> Result<Self> {
        let u = mu.len();
        if a.rows() != u || a.cols() != u {
            return Err(Error::Shape(format!(
                "excitation matrix is {}x{} but there are {u} background rates",
                a.rows(),
                a.cols()
            )));
        }
        if let Some(m) = mu.iter().find(|m| !(m.is_finite() && **m >= S::zero())) {
            return Err(Error::Domain(format!("background rate {m} must be finite and nonnegative")));
        }
        if let Some(x) = a.as_slice().iter().find(|x| !(x.is_finite() && **x >= S::zero())) {
            return Err(Error::Domain(format!("excitation {x} must be finite and nonnegative")));
        }
        if !(w.is_finite() && w > S::zero()) {
            return Err(Error::Domain(format!("kernel rate must be positive, got {w}")));
        }
        Ok(Self { mu, a, w })
    }

    pub fn from_rows(mu: Vec<S>, a: &[Vec<S>], w: S) -> Result<Self> {
        Self::new(mu, Matrix::from_rows(a)?, w)
    }

    pub fn univariate(mu: S, a: S, w: S) -> Result<Self> {
        Self::new(vec![mu], Matrix::from_fn(1, 1, |_, _| a), w)
    }

    pub fn num_nodes(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[S] {
        &self.mu
    }

    pub fn excitation(&self) -> &Matrix<S> {
        &self.a
    }

    pub fn w(&self) -> S {
        self.w
    }

    pub fn with_w(&self, w: S) -> Result<Self> {
        Self::new(self.mu.clone(), self.a.clone(), w)
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = ModelJson {
            mu: self.mu.clone(),
            a: self.a.to_rows(),
            w: self.w,
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ModelJson<S> = serde_json::from_str(text)?;
        if raw.mu.is_empty() {
            return Self::new(raw.mu, Matrix::zeros(0, 0), raw.w);
        }
        Self::from_rows(raw.mu, &raw.a, raw.w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Expected number of direct offspring of one event at `u`.
    pub fn branching_ratio(&self, u: usize) -> Result<S> {
        self.check_node(u)?;
        Ok((0..self.num_nodes()).map(|v| self.a.get(v, u)).sum())
    }

    pub fn spectral_radius(&self) -> Result<S> {
        spectral_radius(&self.a)
    }

    /// Long-run mean event rate per node, the solution of `Λ = μ + AΛ`.
    pub fn stationary_rates(&self) -> Result<Vec<S>> {
        let rho = self.spectral_radius()?;
        if rho >= S::one() {
            return Err(Error::Unstable { radius: rho.as_f64() });
        }
        let n = self.num_nodes();
        let mut rates = self.mu.clone();
        for _ in 0..100_000 {
            let mut next = self.mu.clone();
            self.a.mul_vec_add(&rates, &mut next);
            let change = next
                .iter()
                .zip(&rates)
                .map(|(a, b)| (*a - *b).abs())
                .fold(S::zero(), S::max);
            rates = next;
            let scale = rates.iter().copied().fold(S::one(), S::max);
            if change <= S::epsilon() * S::of(4.0) * scale {
                break;
            }
        }
        debug_assert_eq!(rates.len(), n);
        Ok(rates)
    }

    fn check_node(&self, u: usize) -> Result<()> {
        if u >= self.num_nodes() {
            return Err(Error::Bounds {
                what: "node set",
                index: u,
                bound: self.num_nodes(),
            });
        }
        Ok(())
    }

    fn check_sequence(&self, seq: &EventSequence) -> Result<()> {
        if seq.num_nodes() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "sequence has {} nodes, model has {}",
                seq.num_nodes(),
                self.num_nodes()
            )));
        }
        Ok(())
    }
}

/// Visit every event together with the kernel-weighted excitation carried by
/// strictly earlier events, `state[v] = Σ_{j: u_j = v, t_j < t_i} g(t_i − t_j)`.
///
/// Uses the exponential kernel's memoryless recursion, so the cost is
/// `O(n·U)`. Events sharing a timestamp do not excite each other.
pub(crate) fn scan_excitation<S: Scalar>(
    seq: &EventSequence,
    w: S,
    mut visit: impl FnMut(usize, &Event, &[S]) -> Result<()>,
) -> Result<()> {
    let events = seq.events();
    let mut state = vec![S::zero(); seq.num_nodes()];
    let mut last_t = 0.0f64;
    let mut i = 0;
    while i < events.len() {
        let t = events[i].time;
        let decay = (-w * S::of(t - last_t)).exp();
        for s in state.iter_mut() {
            *s = *s * decay;
        }
        last_t = t;
        let mut j = i;
        while j < events.len() && events[j].time == t {
            visit(j, &events[j], &state)?;
            j += 1;
        }
        for e in &events[i..j] {
            state[e.node] = state[e.node] + w;
        }
        i = j;
    }
    Ok(())
}

/// `λ_u(t)` by direct summation over all events strictly before `t`.
pub fn intensity<S: Scalar>(model: &HawkesModel<S>, seq: &EventSequence, u: usize, t: f64) -> Result<S> {
    model.check_node(u)?;
    model.check_sequence(seq)?;
    if !(t >= 0.0 && t <= seq.horizon()) {
        return Err(Error::Domain(format!("time {t} outside [0, {}]", seq.horizon())));
    }
    let mut acc = CompensatedSum::new();
    acc.add(model.mu[u]);
    for e in seq.events().iter().take_while(|e| e.time < t) {
        let a = model.a.get(u, e.node);
        if a > S::zero() {
            acc.add(a * kernel(model.w, S::of(t - e.time))?);
        }
    }
    Ok(acc.value())
}

/// Intensities of every node at each query time.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityTrace<S> {
    pub times: Vec<f64>,
    /// `lambda[k][u]` is the intensity of node `u` at `times[k]`.
    pub lambda: Vec<Vec<S>>,
}

pub fn intensity_trace<S: Scalar>(model: &HawkesModel<S>, seq: &EventSequence, times: &[f64]) -> Result<IntensityTrace<S>> {
    let mut lambda = Vec::with_capacity(times.len());
    for &t in times {
        let row = (0..model.num_nodes())
            .map(|u| intensity(model, seq, u, t))
            .collect::<Result<Vec<_>>>()?;
        lambda.push(row);
    }
    Ok(IntensityTrace {
        times: times.to_vec(),
        lambda,
    })
}

/// Log-likelihood of independent sequences, each observed on `[0, T_c)`.
///
/// The compensator uses the closed form `∫_0^s g = 1 − exp(−w·s)`. If an
/// observed event has zero intensity the data is impossible under the model
/// and the result is `−∞`.
pub fn log_likelihood<S: Scalar>(model: &HawkesModel<S>, seqs: &[EventSequence]) -> Result<S> {
    let mut total = CompensatedSum::new();
    let col_sums = model.a.column_sums();
    for seq in seqs {
        model.check_sequence(seq)?;
        let mut impossible = false;
        scan_excitation(seq, model.w, |_, e, state| {
            let row = model.a.row(e.node);
            let mut lambda = model.mu[e.node];
            for (&a, &s) in row.iter().zip(state) {
                lambda = lambda + a * s;
            }
            if lambda > S::zero() {
                total.add(lambda.ln());
            } else {
                impossible = true;
            }
            Ok(())
        })?;
        if impossible {
            return Ok(S::neg_infinity());
        }
        total.add(-compensator(model, seq, &col_sums));
    }
    Ok(total.value())
}

/// `Σ_u ∫_0^T λ_u(t) dt` in closed form.
pub(crate) fn compensator<S: Scalar>(model: &HawkesModel<S>, seq: &EventSequence, col_sums: &[S]) -> S {
    let horizon = seq.horizon();
    let mut acc = CompensatedSum::new();
    for &m in &model.mu {
        acc.add(m * S::of(horizon));
    }
    for e in seq.events() {
        let mass = S::one() - (-model.w * S::of(horizon - e.time)).exp();
        acc.add(col_sums[e.node] * mass);
    }
    acc.value()
}

/// Largest eigenvalue modulus of a square nonnegative matrix.
///
/// Power iteration on `A + I`: for nonnegative `A` the Perron root `ρ` is the
/// only eigenvalue on the spectral circle after the unit shift, so the
/// iteration converges even when `A` itself is periodic.
pub fn spectral_radius<S: Scalar>(a: &Matrix<S>) -> Result<S> {
    if !a.is_square() {
        return Err(Error::Shape(format!("spectral radius of a {}x{} matrix", a.rows(), a.cols())));
    }
    if a.as_slice().iter().any(|x| *x < S::zero() || !x.is_finite()) {
        return Err(Error::Domain("spectral radius requires a finite nonnegative matrix".into()));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(S::zero());
    }
    let tol = S::of(1e-10).max(S::epsilon() * S::of(16.0));
    let mut x = vec![S::one() / S::of_usize(n).sqrt(); n];
    let mut estimate = S::zero();
    for _ in 0..10_000 {
        let mut y = x.clone();
        a.mul_vec_add(&x, &mut y);
        let norm = y.iter().map(|v| *v * *v).sum::<S>().sqrt();
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = *yi / norm;
        }
        let converged = (norm - estimate).abs() <= tol * norm;
        estimate = norm;
        if converged {
            break;
        }
    }
    Ok((estimate - S::one()).max(S::zero()))
}

/// Simulate on `[0, horizon)` by Ogata thinning.
///
/// Between events every intensity decays, so the total intensity right after
/// the current point bounds the total intensity until the next candidate.
/// The bound is recomputed after every accepted or rejected candidate.
pub fn simulate<S: Scalar>(model: &HawkesModel<S>, horizon: f64, seed: u64) -> Result<EventSequence> {
    simulate_with_rng(model, horizon, rng::seeded(seed))
}

pub fn simulate_with_rng<S: Scalar>(model: &HawkesModel<S>, horizon: f64, mut rng: rng::SimRng) -> Result<EventSequence> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    let radius = model.spectral_radius()?;
    if radius >= S::one() {
        return Err(Error::Unstable { radius: radius.as_f64() });
    }

    let n = model.num_nodes();
    let w = model.w.as_f64();
    let mu: Vec<f64> = model.mu.iter().map(|m| m.as_f64()).collect();
    let a: Vec<f64> = model.a.as_slice().iter().map(|x| x.as_f64()).collect();
    let col_sums: Vec<f64> = model.a.column_sums().into_iter().map(Scalar::as_f64).collect();
    let mu_total: f64 = mu.iter().sum();

    // state[v] = Σ_{past events at v} g(t − t_j)
    let mut state = vec![0.0f64; n];
    let mut events = Vec::new();
    let mut t = 0.0f64;
    let mut lambda_u = vec![0.0f64; n];
    loop {
        let bound = mu_total + col_sums.iter().zip(&state).map(|(c, s)| c * s).sum::<f64>();
        if bound <= 0.0 {
            break;
        }
        let dt = rng::exponential(&mut rng, bound);
        t += dt;
        if t >= horizon {
            break;
        }
        let decay = (-w * dt).exp();
        for s in state.iter_mut() {
            *s *= decay;
        }
        let mut total = 0.0;
        for (u, lu) in lambda_u.iter_mut().enumerate() {
            let row = &a[u * n..(u + 1) * n];
            *lu = mu[u] + row.iter().zip(&state).map(|(x, s)| x * s).sum::<f64>();
            total += *lu;
        }
        let draw: f64 = rng.gen::<f64>() * bound;
        if draw < total {
            let mut node = n - 1;
            let mut cum = 0.0;
            for (u, lu) in lambda_u.iter().enumerate() {
                cum += lu;
                if draw < cum {
                    node = u;
                    break;
                }
            }
            events.push(Event::new(t, node));
            state[node] += w;
        }
    }
    EventSequence::new(events, horizon, n)
}
