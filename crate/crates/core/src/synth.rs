//! Synthetic ground-truth graphs and graph-recovery scoring.

use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, EdgeMask, EmConfig};
use crate::error::{Error, Result};
use crate::events::{EventSequence, NodeSeries, SeriesState};
use crate::gsrnn::lattice_graph;
use crate::hawkes::{self, HawkesModel};
use crate::linalg::Matrix;
use crate::rng;

/// Which edges the inference may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "extra", rename_all = "snake_case")]
pub enum Prior {
    /// Every directed pair, self-loops included.
    Null,
    /// The true edges plus this many random non-edges.
    GroundTruthPlus(usize),
}

impl Prior {
    pub fn label(&self) -> String {
        match self {
            Prior::Null => "Null".to_string(),
            Prior::GroundTruthPlus(k) => format!("GT+{k}"),
        }
    }
}

impl std::str::FromStr for Prior {
    type Err = Error;

    /// `null` or `gt+K` (case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "null" {
            return Ok(Prior::Null);
        }
        lower
            .strip_prefix("gt+")
            .and_then(|k| k.parse().ok())
            .map(Prior::GroundTruthPlus)
            .ok_or_else(|| Error::Config(format!("unknown prior '{s}', expected 'null' or 'gt+K'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    /// Probability that each directed pair is an edge.
    pub sparsity: f64,
    pub mu_range: (f64, f64),
    pub a_range: (f64, f64),
    /// Kernel rate shared by all nodes.
    pub w: f64,
    pub horizon: f64,
    pub self_loops: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 30,
            sparsity: 0.2,
            mu_range: (0.0, 0.1),
            a_range: (0.02, 0.1),
            w: 20.0,
            horizon: 3e4,
            self_loops: true,
            seed: 0,
        }
    }
}

/// Spectral radius above which the sampled matrix is rescaled.
pub const STABILITY_LIMIT: f64 = 0.95;
/// Spectral radius after rescaling.
pub const RESCALED_RADIUS: f64 = 0.9;

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi;
        if self.num_nodes == 0 {
            return Err(Error::Config("synthetic graph needs at least one node".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!("sparsity must be in [0, 1], got {}", self.sparsity)));
        }
        if !range_ok(self.mu_range) || !range_ok(self.a_range) {
            return Err(Error::Config("parameter ranges must be finite, nonnegative and ordered".into()));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::Config(format!("kernel rate must be positive, got {}", self.w)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }
}

/// Sample a random sparse ground-truth model.
pub fn generate_model(spec: &SyntheticSpec) -> Result<HawkesModel<f64>> {
    spec.validate()?;
    let n = spec.num_nodes;
    let mut r = rng::seeded(rng::child_seed(spec.seed, 0));
    let mut a = Matrix::zeros(n, n);
    for u in 0..n {
        for v in 0..n {
            // always draw both numbers so the stream layout does not depend on outcomes
            let keep = r.gen::<f64>() < spec.sparsity;
            let value = rng::uniform(&mut r, spec.a_range.0, spec.a_range.1);
            if keep && (spec.self_loops || u != v) {
                a.set(u, v, value);
            }
        }
    }
    let mu = (0..n).map(|_| rng::uniform(&mut r, spec.mu_range.0, spec.mu_range.1)).collect();
    let rho = hawkes::spectral_radius(&a)?;
    if rho >= STABILITY_LIMIT {
        let scale = RESCALED_RADIUS / rho;
        a = a.map(|x| x * scale);
        let after = hawkes::spectral_radius(&a)?;
        if after >= 1.0 {
            return Err(Error::Unstable { radius: after });
        }
    }
    HawkesModel::new(mu, a, spec.w)
}

/// Ground-truth model and one simulated sequence on `[0, horizon)`.
pub fn generate(spec: &SyntheticSpec) -> Result<(HawkesModel<f64>, EventSequence)> {
    let model = generate_model(spec)?;
    let seq = hawkes::simulate(&model, spec.horizon, rng::child_seed(spec.seed, 1))?;
    Ok((model, seq))
}

/// Candidate edge set for a prior; random extras are drawn from `seed`.
pub fn prior_mask(truth: &EdgeMask, prior: Prior, seed: u64) -> Result<EdgeMask> {
    let n = truth.size();
    match prior {
        Prior::Null => Ok(EdgeMask::full(n)),
        Prior::GroundTruthPlus(k) => {
            let non_edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|u| (0..n).map(move |v| (u, v)))
                .filter(|&(u, v)| !truth.allows(u, v))
                .collect();
            if k > non_edges.len() {
                return Err(Error::Config(format!(
                    "cannot add {k} extra edges, only {} non-edges exist",
                    non_edges.len()
                )));
            }
            let mut r = rng::seeded(seed);
            let mut mask = truth.clone();
            for i in index::sample(&mut r, non_edges.len(), k) {
                let (u, v) = non_edges[i];
                mask.set(u, v, true);
            }
            Ok(mask)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryResult {
    /// `(false-positive rate, true-positive rate)`, increasing in both.
    pub roc: Vec<(f64, f64)>,
    pub auc: f64,
    pub num_candidates: usize,
    pub num_positives: usize,
}

impl RecoveryResult {
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.roc {
            let _ = writeln!(out, "{f},{t}");
        }
        out
    }
}

/// ROC curve of `score > θ` classifiers, with `θ` swept over every distinct
/// score and `±∞`.
pub fn roc_curve(scored: &[(f64, bool)]) -> Result<Vec<(f64, f64)>> {
    if scored.is_empty() {
        return Err(Error::Metric("no candidates to score".into()));
    }
    if let Some((s, _)) = scored.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::Metric(format!("score {s} is not comparable")));
    }
    let pos = scored.iter().filter(|(_, y)| *y).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "ROC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut roc = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        // lowering θ just below this score admits the whole tie group
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(roc)
}

/// Trapezoidal area under a curve given as points of increasing abscissa.
pub fn trapezoid_auc(curve: &[(f64, f64)]) -> f64 {
    curve.windows(2).map(|p| (p[1].0 - p[0].0) * (p[1].1 + p[0].1) / 2.0).sum()
}

/// Score `inferred` against the true edge set over the candidate edges.
pub fn evaluate_recovery(truth: &EdgeMask, inferred: &Matrix<f64>, candidates: &EdgeMask) -> Result<RecoveryResult> {
    let n = truth.size();
    if candidates.size() != n || inferred.rows() != n || inferred.cols() != n {
        return Err(Error::Shape("truth, inferred matrix and candidate mask must agree in size".into()));
    }
    let scored: Vec<(f64, bool)> = candidates.entries().map(|(u, v)| (inferred.get(u, v), truth.allows(u, v))).collect();
    let roc = roc_curve(&scored)?;
    Ok(RecoveryResult {
        auc: trapezoid_auc(&roc),
        num_candidates: scored.len(),
        num_positives: scored.iter().filter(|s| s.1).count(),
        roc,
    })
}

/// Generate, fit under the prior, and score one synthetic instance.
pub fn run_cell(spec: &SyntheticSpec, prior: Prior, cfg: &EmConfig<f64>) -> Result<RecoveryResult> {
    let (truth, seq) = generate(spec)?;
    recover(&truth, &seq, prior, spec, cfg)
}

fn recover(
    truth: &HawkesModel<f64>,
    seq: &EventSequence,
    prior: Prior,
    spec: &SyntheticSpec,
    cfg: &EmConfig<f64>,
) -> Result<RecoveryResult> {
    let edges = EdgeMask::support_of(truth.excitation());
    let candidates = prior_mask(&edges, prior, rng::child_seed(spec.seed, 2))?;
    let cfg = EmConfig {
        prior_edges: Some(candidates.clone()),
        ..cfg.clone()
    };
    let state = em::fit(std::slice::from_ref(seq), spec.w, &cfg, None)?;
    evaluate_recovery(&edges, state.model.excitation(), &candidates)
}

/// Mean AUC per `(prior, sparsity)` cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AucTable {
    pub sparsities: Vec<f64>,
    pub priors: Vec<Prior>,
    pub seeds: Vec<u64>,
    /// `auc[prior][sparsity][seed]`.
    pub auc: Vec<Vec<Vec<f64>>>,
}

impl AucTable {
    pub fn mean(&self, prior: usize, sparsity: usize) -> f64 {
        let cell = &self.auc[prior][sparsity];
        cell.iter().sum::<f64>() / cell.len() as f64
    }

    /// One row per prior, one column per sparsity, cells hold the mean AUC.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("prior");
        for s in &self.sparsities {
            let _ = write!(out, ",{s}");
        }
        out.push('\n');
        for (p, prior) in self.priors.iter().enumerate() {
            out.push_str(&prior.label());
            for s in 0..self.sparsities.len() {
                let _ = write!(out, ",{:.4}", self.mean(p, s));
            }
            out.push('\n');
        }
        out
    }
}

/// Recovery AUC over a grid of sparsities and priors, one synthetic instance
/// per `(sparsity, seed)` shared by all priors. Cells run in parallel on the
/// current rayon pool; results do not depend on the schedule.
pub fn run_table1(
    base: &SyntheticSpec,
    sparsities: &[f64],
    priors: &[Prior],
    seeds: &[u64],
    cfg: &EmConfig<f64>,
) -> Result<AucTable> {
    if sparsities.is_empty() || priors.is_empty() || seeds.is_empty() {
        return Err(Error::Config("table needs at least one sparsity, prior and seed".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..sparsities.len()).flat_map(|s| (0..seeds.len()).map(move |k| (s, k))).collect();
    let results: Vec<Result<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(s, k)| {
            let spec = SyntheticSpec {
                sparsity: sparsities[s],
                seed: seeds[k],
                ..base.clone()
            };
            let (truth, seq) = generate(&spec)?;
            priors
                .iter()
                .map(|&p| recover(&truth, &seq, p, &spec, cfg).map(|r| r.auc))
                .collect()
        })
        .collect();
    let mut auc = vec![vec![vec![0.0; seeds.len()]; sparsities.len()]; priors.len()];
    for (&(s, k), res) in jobs.iter().zip(results) {
        for (p, value) in res?.into_iter().enumerate() {
            auc[p][s][k] = value;
        }
    }
    Ok(AucTable {
        sparsities: sparsities.to_vec(),
        priors: priors.to_vec(),
        seeds: seeds.to_vec(),
        auc,
    })
}

/// Noisy diffusion on a `rows × cols` grid with a daily cycle, sampled once
/// per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub steps: usize,
    /// Steps per day.
    pub period: usize,
    /// Share of each cell's next deviation taken from the mean of its
    /// four neighbours (missing neighbours count as zero).
    pub coupling: f64,
    /// Decay of the deviation per step.
    pub persistence: f64,
    pub noise: f64,
    /// Level of the daily cycle around which deviations evolve.
    pub base: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            steps: 60 * 24,
            period: 24,
            coupling: 0.6,
            persistence: 0.9,
            noise: 1.0,
            base: 10.0,
            amplitude: 3.0,
            seed: 0,
        }
    }
}

/// Simulate a [`GridSpec`]: deviations follow
/// `d ← persistence · ((1 − coupling) · d_i + coupling · mean_nbrs d) + noise · ε`
/// and the observed value is the daily cycle plus the deviation.
pub fn diffusion_grid(spec: &GridSpec) -> Result<NodeSeries<f64>> {
    if spec.rows == 0 || spec.cols == 0 || spec.steps == 0 || spec.period == 0 {
        return Err(Error::Config("grid dimensions, step count and period must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.coupling) || !(0.0..1.0).contains(&spec.persistence) {
        return Err(Error::Config("coupling must lie in [0, 1] and persistence in [0, 1)".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!("noise scale must be nonnegative, got {}", spec.noise)));
    }
    let n = spec.rows * spec.cols;
    let graph = lattice_graph(spec.rows, spec.cols)?;
    let mut r = rng::seeded(spec.seed);
    let mut dev = vec![0.0; n];
    let mut values = vec![Vec::with_capacity(spec.steps); n];
    let normal = rand_distr::StandardNormal;
    for t in 0..spec.steps {
        let cycle = spec.base + spec.amplitude * (std::f64::consts::TAU * (t % spec.period) as f64 / spec.period as f64).sin();
        let next: Vec<f64> = (0..n)
            .map(|u| {
                let nbr: f64 = graph.in_neighbors(u).iter().map(|&(v, w)| w * dev[v]).sum();
                let eps: f64 = r.sample(normal);
                spec.persistence * ((1.0 - spec.coupling) * dev[u] + spec.coupling * nbr) + spec.noise * eps
            })
            .collect();
        dev = next;
        for (u, d) in dev.iter().enumerate() {
            values[u].push(cycle + d);
        }
    }
    NodeSeries::new(values, 1.0, spec.period, SeriesState::Raw)
}
