//! L1-penalised EM inference of a multivariate Hawkes model.
//!
//! For a fixed kernel rate `w` the fit alternates
//!
//! * an E-step attributing each event either to the background of its node
//!   or to one earlier event, restricted to parents within a truncation
//!   window (the exponential kernel is negligible beyond a few `1/w`), and
//! * an M-step that re-estimates `μ` in closed form and moves each `a_uv` to
//!   the geometric mean of its current value and the closed-form EM update,
//!   followed by soft thresholding `max(a − λ, 0)`.
//!
//! Entries that reach zero stay at zero, since the update is multiplicative.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::gsrnn::graph::{Edge, WeightedGraph};
use crate::hawkes::{self, scan_excitation, HawkesModel};
use crate::linalg::Matrix;
use crate::scalar::{CompensatedSum, Scalar};

/// Which excitation entries `A[u][v]` may be nonzero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeMask {
    n: usize,
    allowed: Vec<bool>,
}

impl EdgeMask {
    pub fn full(n: usize) -> Self {
        Self {
            n,
            allowed: vec![true; n * n],
        }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            allowed: vec![false; n * n],
        }
    }

    /// Entries of `a` that are strictly positive.
    pub fn support_of<S: Scalar>(a: &Matrix<S>) -> Self {
        Self {
            n: a.rows(),
            allowed: a.as_slice().iter().map(|x| *x > S::zero()).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Whether `A[u][v]` (influence of `v` on `u`) is allowed.
    pub fn allows(&self, u: usize, v: usize) -> bool {
        self.allowed[u * self.n + v]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.allowed[u * self.n + v] = value;
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|&&b| b).count()
    }

    /// Allowed `(u, v)` pairs in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.allowed
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / self.n, k % self.n))
    }

    pub fn union(&self, other: &EdgeMask) -> Result<EdgeMask> {
        if self.n != other.n {
            return Err(Error::Shape(format!("masks of size {} and {}", self.n, other.n)));
        }
        Ok(Self {
            n: self.n,
            allowed: self.allowed.iter().zip(&other.allowed).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// Each node may be excited by itself and by its `k` nearest other nodes
    /// (Euclidean distance on `coords`, ties by lower index).
    pub fn knn(coords: &[(f64, f64)], k: usize) -> Self {
        let n = coords.len();
        let mut mask = Self::empty(n);
        for u in 0..n {
            mask.set(u, u, true);
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&v| v != u)
                .map(|v| {
                    let (dx, dy) = (coords[u].0 - coords[v].0, coords[u].1 - coords[v].1);
                    (dx * dx + dy * dy, v)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, v) in others.iter().take(k) {
                mask.set(u, v, true);
            }
        }
        mask
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig<S> {
    /// L1 penalty weight λ.
    pub l1_lambda: S,
    pub max_iters: usize,
    /// Stop once the largest relative parameter change falls below this.
    pub tol: S,
    /// E-step parent window in hours; `None` means `10 / w`, infinity means
    /// no truncation.
    pub truncation: Option<f64>,
    pub prior_edges: Option<EdgeMask>,
}

impl<S: Scalar> Default for EmConfig<S> {
    fn default() -> Self {
        Self {
            l1_lambda: S::of(0.01),
            max_iters: 500,
            tol: S::of(1e-5),
            truncation: None,
            prior_edges: None,
        }
    }
}

impl<S: Scalar> EmConfig<S> {
    pub fn window_for(&self, w: S) -> f64 {
        self.truncation.unwrap_or(10.0 / w.as_f64())
    }

    fn validate(&self, num_nodes: usize) -> Result<()> {
        if !(self.l1_lambda >= S::zero()) {
            return Err(Error::Config(format!("l1 penalty must be nonnegative, got {}", self.l1_lambda)));
        }
        if let Some(t) = self.truncation {
            if !(t > 0.0) {
                return Err(Error::Config(format!("truncation window must be positive, got {t}")));
            }
        }
        if let Some(mask) = &self.prior_edges {
            if mask.size() != num_nodes {
                return Err(Error::Shape(format!("prior mask is for {} nodes, data has {num_nodes}", mask.size())));
            }
        }
        Ok(())
    }
}

/// Sufficient statistics of one E-step.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities<S> {
    /// Σ p_ii over events at each node.
    pub background: Vec<S>,
    /// `triggered[u][v]` = Σ p_ij over events i at u with parents j at v.
    pub triggered: Matrix<S>,
    /// Σ log of the (truncated) intensity at each event.
    pub log_intensity: S,
    pub num_events: usize,
}

/// Attribution of one event.
#[derive(Clone, Debug, PartialEq)]
pub struct EventResponsibility<S> {
    pub background: S,
    /// `(parent event index, probability)`, parents in increasing time.
    pub parents: Vec<(usize, S)>,
}

fn check_inputs<S: Scalar>(model: &HawkesModel<S>, seqs: &[EventSequence], trunc: f64) -> Result<()> {
    if !(trunc > 0.0) {
        return Err(Error::Config(format!("truncation window must be positive, got {trunc}")));
    }
    for seq in seqs {
        if seq.num_nodes() != model.num_nodes() {
            return Err(Error::Shape(format!(
                "sequence has {} nodes, model has {}",
                seq.num_nodes(),
                model.num_nodes()
            )));
        }
    }
    Ok(())
}

fn degenerate(seq_idx: usize, event: usize) -> Error {
    Error::Degenerate(format!(
        "event {event} of sequence {seq_idx} has zero intensity (no background and no excitation)"
    ))
}

/// Per-event attribution probabilities, mainly for inspection and tests.
pub fn event_responsibilities<S: Scalar>(
    model: &HawkesModel<S>,
    seq: &EventSequence,
    trunc: f64,
) -> Result<Vec<EventResponsibility<S>>> {
    check_inputs(model, std::slice::from_ref(seq), trunc)?;
    let events = seq.events();
    let a = model.excitation();
    let w = model.w();
    let mut out = Vec::with_capacity(events.len());
    for (i, ev) in events.iter().enumerate() {
        let mut parents = Vec::new();
        let mut denom = CompensatedSum::new();
        denom.add(model.mu()[ev.node]);
        for j in (0..i).rev() {
            let dt = ev.time - events[j].time;
            if dt > trunc {
                break;
            }
            if dt == 0.0 {
                continue;
            }
            let x = a.get(ev.node, events[j].node) * hawkes::kernel(w, S::of(dt))?;
            denom.add(x);
            parents.push((j, x));
        }
        let d = denom.value();
        if !(d > S::zero()) {
            return Err(degenerate(0, i));
        }
        parents.reverse();
        for p in parents.iter_mut() {
            p.1 = p.1 / d;
        }
        out.push(EventResponsibility {
            background: model.mu()[ev.node] / d,
            parents,
        });
    }
    Ok(out)
}

/// Candidate parents of every event within a truncation window, with their
/// kernel values. Depends only on the data, `w` and the window, so a fit
/// builds it once and reuses it in every E-step.
#[derive(Clone, Debug)]
pub struct ParentWindows<S> {
    w: S,
    /// Event `i` owns `parents[start[i]..start[i + 1]]`.
    start: Vec<usize>,
    parents: Vec<(usize, S)>,
}

impl<S: Scalar> ParentWindows<S> {
    pub fn build(seq: &EventSequence, w: S, trunc: f64) -> Self {
        let events = seq.events();
        let mut start = Vec::with_capacity(events.len() + 1);
        let mut parents = Vec::new();
        start.push(0);
        for (i, ev) in events.iter().enumerate() {
            for j in (0..i).rev() {
                let dt = ev.time - events[j].time;
                if dt > trunc {
                    break;
                }
                if dt > 0.0 {
                    parents.push((events[j].node, w * (-w * S::of(dt)).exp()));
                }
            }
            start.push(parents.len());
        }
        Self { w, start, parents }
    }

    pub fn parents_of(&self, i: usize) -> &[(usize, S)] {
        &self.parents[self.start[i]..self.start[i + 1]]
    }
}

/// Running sums of E-step statistics.
struct Accumulator<S> {
    n: usize,
    background: Vec<CompensatedSum<S>>,
    triggered: Vec<CompensatedSum<S>>,
    log_intensity: CompensatedSum<S>,
    num_events: usize,
}

impl<S: Scalar> Accumulator<S> {
    fn new(n: usize) -> Self {
        Self {
            n,
            background: vec![CompensatedSum::new(); n],
            triggered: vec![CompensatedSum::new(); n * n],
            log_intensity: CompensatedSum::new(),
            num_events: 0,
        }
    }

    /// Record one event at `u` with background `mu` and excitation terms
    /// `(source, a·g)`.
    fn event(&mut self, u: usize, mu: S, terms: &[(usize, S)]) -> bool {
        let d = terms.iter().fold(mu, |acc, &(_, x)| acc + x);
        if !(d > S::zero()) {
            return false;
        }
        self.background[u].add(mu / d);
        for &(v, x) in terms {
            if x > S::zero() {
                self.triggered[u * self.n + v].add(x / d);
            }
        }
        self.log_intensity.add(d.ln());
        self.num_events += 1;
        true
    }

    fn finish(self) -> Responsibilities<S> {
        let n = self.n;
        Responsibilities {
            background: self.background.iter().map(CompensatedSum::value).collect(),
            triggered: Matrix::from_fn(n, n, |u, v| self.triggered[u * n + v].value()),
            log_intensity: self.log_intensity.value(),
            num_events: self.num_events,
        }
    }
}

fn e_step_windowed<S: Scalar>(
    model: &HawkesModel<S>,
    seqs: &[EventSequence],
    windows: &[ParentWindows<S>],
) -> Result<Responsibilities<S>> {
    let a = model.excitation();
    let mu = model.mu();
    let mut acc = Accumulator::new(model.num_nodes());
    let mut terms = Vec::new();
    for (c, (seq, win)) in seqs.iter().zip(windows).enumerate() {
        if win.w != model.w() || win.start.len() != seq.len() + 1 {
            return Err(Error::Shape(format!("parent windows of sequence {c} do not match the model")));
        }
        for (i, ev) in seq.events().iter().enumerate() {
            let row = a.row(ev.node);
            terms.clear();
            terms.extend(win.parents_of(i).iter().map(|&(v, g)| (v, row[v] * g)));
            if !acc.event(ev.node, mu[ev.node], &terms) {
                return Err(degenerate(c, i));
            }
        }
    }
    Ok(acc.finish())
}

/// Aggregated E-step statistics over all sequences.
///
/// With an infinite `trunc` the exact statistics are obtained from the
/// kernel recursion in `O(n·U)` per sequence; otherwise parents are scanned
/// inside the window.
pub fn e_step<S: Scalar>(model: &HawkesModel<S>, seqs: &[EventSequence], trunc: f64) -> Result<Responsibilities<S>> {
    check_inputs(model, seqs, trunc)?;
    if trunc.is_finite() {
        let windows: Vec<_> = seqs.iter().map(|s| ParentWindows::build(s, model.w(), trunc)).collect();
        return e_step_windowed(model, seqs, &windows);
    }
    let a = model.excitation();
    let mu = model.mu();
    let mut acc = Accumulator::new(model.num_nodes());
    let mut terms = Vec::new();
    for (c, seq) in seqs.iter().enumerate() {
        scan_excitation(seq, model.w(), |i, ev, state| {
            let row = a.row(ev.node);
            terms.clear();
            terms.extend(state.iter().enumerate().map(|(v, &s)| (v, row[v] * s)));
            if acc.event(ev.node, mu[ev.node], &terms) {
                Ok(())
            } else {
                Err(degenerate(c, i))
            }
        })?;
    }
    Ok(acc.finish())
}

/// `Σ_c Σ_{j: u_j = v} (1 − exp(−w (T_c − t_j)))` for each source node `v`.
pub fn kernel_mass_by_source<S: Scalar>(seqs: &[EventSequence], w: S, n: usize) -> Vec<S> {
    let mut mass = vec![CompensatedSum::new(); n];
    for seq in seqs {
        let horizon = seq.horizon();
        for e in seq.events() {
            mass[e.node].add(S::one() - (-w * S::of(horizon - e.time)).exp());
        }
    }
    mass.iter().map(CompensatedSum::value).collect()
}

/// Soft threshold `max(x − λ, 0)`.
pub fn shrink<S: Scalar>(x: S, lambda: S) -> S {
    (x - lambda).max(S::zero())
}

/// One M-step from E-step statistics gathered under `model`.
pub fn m_step<S: Scalar>(
    stats: &Responsibilities<S>,
    seqs: &[EventSequence],
    model: &HawkesModel<S>,
    lambda: S,
    mask: Option<&EdgeMask>,
) -> Result<HawkesModel<S>> {
    let mass = kernel_mass_by_source(seqs, model.w(), model.num_nodes());
    m_step_with_mass(stats, &mass, seqs, model, lambda, mask)
}

fn m_step_with_mass<S: Scalar>(
    stats: &Responsibilities<S>,
    mass: &[S],
    seqs: &[EventSequence],
    model: &HawkesModel<S>,
    lambda: S,
    mask: Option<&EdgeMask>,
) -> Result<HawkesModel<S>> {
    let n = model.num_nodes();
    if stats.background.len() != n || stats.triggered.rows() != n {
        return Err(Error::Shape("E-step statistics do not match the model".into()));
    }
    let total_time: S = seqs.iter().map(|s| S::of(s.horizon())).sum();
    if !(total_time > S::zero()) {
        return Err(Error::Degenerate("no observation time".into()));
    }
    let mu: Vec<S> = stats.background.iter().map(|&b| b / total_time).collect();
    let old = model.excitation();
    let mut a = Matrix::zeros(n, n);
    for u in 0..n {
        for v in 0..n {
            if mask.is_some_and(|m| !m.allows(u, v)) {
                continue;
            }
            let num = stats.triggered.get(u, v);
            let den = mass[v];
            let updated = if den > S::zero() {
                (old.get(u, v) * num / den).sqrt()
            } else if num == S::zero() {
                S::zero()
            } else {
                return Err(Error::Degenerate(format!(
                    "a[{u}][{v}] has responsibility mass {num} but no kernel mass"
                )));
            };
            a.set(u, v, shrink(updated, lambda));
        }
    }
    HawkesModel::new(mu, a, model.w())
}

/// One line of the fit log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `−L + λ|A|₁` of this iterate, with `L` evaluated under the E-step
    /// truncation.
    pub penalized_nll: f64,
    pub log_likelihood: f64,
    /// Largest relative change from the previous iterate; `None` for the
    /// initial point.
    pub max_param_delta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EmState<S> {
    pub model: HawkesModel<S>,
    /// Number of M-steps performed.
    pub iter: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

impl<S: Scalar> EmState<S> {
    /// CSV `iter,penalized_nll,max_param_delta`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iter,penalized_nll,max_param_delta\n");
        for r in &self.history {
            let delta = r.max_param_delta.map_or(String::new(), |d| d.to_string());
            let _ = writeln!(out, "{},{},{}", r.iter, r.penalized_nll, delta);
        }
        out
    }
}

/// Starting point: `μ_u` = events at `u` per unit time and `0.5/U` on every
/// allowed excitation entry.
pub fn default_init<S: Scalar>(seqs: &[EventSequence], n: usize, w: S, mask: Option<&EdgeMask>) -> Result<HawkesModel<S>> {
    let total_time: f64 = seqs.iter().map(EventSequence::horizon).sum();
    let mut counts = vec![0usize; n];
    for seq in seqs {
        for (c, k) in counts.iter_mut().zip(seq.counts()) {
            *c += k;
        }
    }
    let mu = counts
        .iter()
        .map(|&c| if total_time > 0.0 { S::of(c as f64 / total_time) } else { S::zero() })
        .collect();
    let start = S::of(0.5 / n.max(1) as f64);
    let a = Matrix::from_fn(n, n, |u, v| if mask.is_none_or(|m| m.allows(u, v)) { start } else { S::zero() });
    HawkesModel::new(mu, a, w)
}

fn max_relative_change<S: Scalar>(old: &HawkesModel<S>, new: &HawkesModel<S>) -> S {
    let floor = S::of(1e-12);
    let rel = |a: S, b: S| (b - a).abs() / (a.abs() + floor);
    let dm = old.mu().iter().zip(new.mu()).map(|(a, b)| rel(*a, *b));
    let da = old
        .excitation()
        .as_slice()
        .iter()
        .zip(new.excitation().as_slice())
        .map(|(a, b)| rel(*a, *b));
    dm.chain(da).fold(S::zero(), S::max)
}

fn l1<S: Scalar>(a: &Matrix<S>) -> S {
    a.as_slice().iter().map(|x| x.abs()).sum()
}

/// Fit `(μ, A)` at fixed kernel rate `w`.
pub fn fit<S: Scalar>(
    seqs: &[EventSequence],
    w: S,
    cfg: &EmConfig<S>,
    init: Option<HawkesModel<S>>,
) -> Result<EmState<S>> {
    let n = match (seqs.first(), &init) {
        (Some(s), _) => s.num_nodes(),
        (None, Some(m)) => m.num_nodes(),
        (None, None) => return Err(Error::Config("no sequences and no initial model".into())),
    };
    cfg.validate(n)?;
    if let Some(bad) = seqs.iter().find(|s| s.num_nodes() != n) {
        return Err(Error::Shape(format!("sequences disagree on node count: {} and {n}", bad.num_nodes())));
    }
    let mask = cfg.prior_edges.as_ref();
    let mut model = match init {
        Some(m) => {
            if m.num_nodes() != n {
                return Err(Error::Shape(format!("initial model has {} nodes, data has {n}", m.num_nodes())));
            }
            m.with_w(w)?
        }
        None => default_init(seqs, n, w, mask)?,
    };
    let trunc = cfg.window_for(w);
    let windows: Option<Vec<ParentWindows<S>>> =
        trunc.is_finite().then(|| seqs.iter().map(|s| ParentWindows::build(s, w, trunc)).collect());
    let mass = kernel_mass_by_source(seqs, w, n);
    let col_compensator = |m: &HawkesModel<S>| -> S {
        let cols = m.excitation().column_sums();
        seqs.iter().map(|s| hawkes::compensator(m, s, &cols)).sum()
    };

    let mut history = Vec::new();
    let mut delta: Option<S> = None;
    let mut converged = false;
    let mut iter = 0;
    loop {
        let stats = match &windows {
            Some(win) => e_step_windowed(&model, seqs, win)?,
            None => e_step(&model, seqs, trunc)?,
        };
        let ll = stats.log_intensity - col_compensator(&model);
        let objective = -ll + cfg.l1_lambda * l1(model.excitation());
        if !objective.is_finite() {
            return Err(Error::Divergence(format!("objective is {objective} at iteration {iter}")));
        }
        history.push(IterationRecord {
            iter,
            penalized_nll: objective.as_f64(),
            log_likelihood: ll.as_f64(),
            max_param_delta: delta.map(Scalar::as_f64),
        });
        if converged || iter >= cfg.max_iters {
            break;
        }
        let next = m_step_with_mass(&stats, &mass, seqs, &model, cfg.l1_lambda, mask)?;
        let change = max_relative_change(&model, &next);
        delta = Some(change);
        model = next;
        iter += 1;
        converged = change < cfg.tol;
    }
    Ok(EmState {
        model,
        iter,
        converged,
        history,
    })
}

#[derive(Clone, Debug)]
pub struct GridSearch<S> {
    pub best_w: S,
    pub best: EmState<S>,
    /// Unpenalised log-likelihood of the fitted model per grid point; `−∞`
    /// where the fit failed.
    pub log_likelihoods: Vec<S>,
}

/// Fit at each kernel rate and keep the one whose fitted model has the
/// highest exact log-likelihood. Ties go to the smaller rate.
pub fn grid_search_w<S: Scalar>(seqs: &[EventSequence], w_grid: &[S], cfg: &EmConfig<S>) -> Result<GridSearch<S>> {
    if w_grid.is_empty() {
        return Err(Error::Config("empty kernel-rate grid".into()));
    }
    if let Some(bad) = w_grid.iter().find(|w| !(**w > S::zero())) {
        return Err(Error::Config(format!("kernel rate {bad} must be positive")));
    }
    let mut lls = Vec::with_capacity(w_grid.len());
    let mut best: Option<(S, S, EmState<S>)> = None;
    let mut failures = Vec::new();
    for &w in w_grid {
        let outcome = fit(seqs, w, cfg, None).and_then(|state| {
            let ll = hawkes::log_likelihood(&state.model, seqs)?;
            Ok((ll, state))
        });
        match outcome {
            Ok((ll, state)) => {
                lls.push(ll);
                let better = match &best {
                    None => true,
                    Some((bw, bll, _)) => ll > *bll || (ll == *bll && w < *bw),
                };
                if better {
                    best = Some((w, ll, state));
                }
            }
            Err(e) => {
                lls.push(S::neg_infinity());
                failures.push(format!("w={w}: {e}"));
            }
        }
    }
    match best {
        Some((best_w, _, best)) => Ok(GridSearch {
            best_w,
            best,
            log_likelihoods: lls,
        }),
        None => Err(Error::Divergence(format!("every grid fit failed: {}", failures.join("; ")))),
    }
}

/// Turn an excitation matrix into a sparse weighted graph.
///
/// Off-diagonal entries are candidate edges `v → u` with value `A[u][v]`.
/// With `knn_init = Some(k)` each node first keeps only its `k` strongest
/// incoming candidates. The `⌈s · U(U−1)⌉` largest positive candidates are
/// kept (ties by larger value, then lower row-major index) and weighted by
/// `A[u][v] / max(A)`. An all-zero matrix yields an edgeless graph.
pub fn build_stwg<S: Scalar>(model: &HawkesModel<S>, target_sparsity: f64, knn_init: Option<usize>) -> Result<WeightedGraph> {
    if !(target_sparsity > 0.0 && target_sparsity <= 1.0) {
        return Err(Error::Config(format!("target sparsity must be in (0, 1], got {target_sparsity}")));
    }
    let a = model.excitation();
    let n = a.rows();
    let global_max = a.max_value().unwrap_or(S::zero()).as_f64();
    if global_max <= 0.0 {
        return WeightedGraph::new(n, Vec::new());
    }

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for u in 0..n {
        let mut row: Vec<(f64, usize, usize)> = (0..n)
            .filter(|&v| v != u)
            .map(|v| (a.get(u, v).as_f64(), u, v))
            .filter(|c| c.0 > 0.0)
            .collect();
        if let Some(k) = knn_init {
            row.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.2.cmp(&y.2)));
            row.truncate(k);
        }
        candidates.extend(row);
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let off_diagonal = (n * n.saturating_sub(1)) as f64;
    let keep = ((target_sparsity * off_diagonal) - 1e-9).ceil().max(0.0) as usize;
    let edges = candidates
        .into_iter()
        .take(keep)
        .map(|(value, u, v)| Edge {
            src: v,
            dst: u,
            weight: value / global_max,
        })
        .collect();
    WeightedGraph::new(n, edges)
}
