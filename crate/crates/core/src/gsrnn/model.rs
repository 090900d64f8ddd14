//! The graph-structured recurrent network and its training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::WeightedGraph;
use crate::error::{Error, Result};
use crate::neural::{self, Adam, CascadeNet, LstmStack, Params, StackTape, TrainConfig};
use crate::rng::{self, SimRng};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsrnnConfig {
    /// Layer sizes of the per-class input networks.
    pub input_hidden: Vec<usize>,
    /// Layer sizes of the per-class-pair edge networks.
    pub edge_hidden: Vec<usize>,
    /// Layer sizes of the node networks (before the scalar read-out).
    pub node_hidden: Vec<usize>,
    pub dropout: f64,
    /// One node network per node instead of one per class.
    pub per_node: bool,
    /// Give edges between nodes of the same class their own edge network;
    /// when false such edges are ignored.
    pub intra_class_edges: bool,
}

impl Default for GsrnnConfig {
    fn default() -> Self {
        Self {
            input_hidden: vec![64],
            edge_hidden: vec![64],
            node_hidden: vec![128],
            dropout: 0.2,
            per_node: false,
            intra_class_edges: true,
        }
    }
}

/// Edge network for neighbours of class `src_class` feeding nodes of class
/// `dst_class`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EdgeRnn<S> {
    pub dst_class: usize,
    pub src_class: usize,
    pub stack: LstmStack<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct GsrnnModel<S> {
    pub config: GsrnnConfig,
    /// Class of every node.
    pub classes: Vec<usize>,
    pub num_classes: usize,
    /// Ascending lag set.
    pub lags: Vec<usize>,
    /// Series values are divided by this before entering the networks and
    /// predictions multiplied by it.
    pub scale: f64,
    pub input_rnns: Vec<LstmStack<S>>,
    /// Sorted by `(dst_class, src_class)`.
    pub edge_rnns: Vec<EdgeRnn<S>>,
    pub node_rnns: Vec<CascadeNet<S>>,
}

/// Activations of one node prediction.
#[derive(Clone, Debug)]
pub struct NodeTape<S> {
    class: usize,
    node_net: usize,
    own: StackTape<S>,
    /// `(edge network index, tape)` for each slot with neighbours.
    edges: Vec<(usize, Option<StackTape<S>>)>,
    node: neural::CascadeTape<S>,
}

impl<S: Scalar> NodeTape<S> {
    /// Network output on the scaled axis.
    pub fn output(&self) -> S {
        self.node.output()
    }
}

impl<S: Scalar> GsrnnModel<S> {
    /// Build networks for the classes and class pairs realised by `graph`.
    pub fn build(graph: &WeightedGraph, config: GsrnnConfig, lags: &[usize], scale: f64, seed: u64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("input scale must be positive, got {scale}")));
        }
        let lags = neural::normalize_lags(lags, false)?;
        let mut r = rng::seeded(seed);
        let num_classes = graph.num_classes();
        let input_rnns = (0..num_classes)
            .map(|_| LstmStack::init(1, &config.input_hidden, config.dropout, &mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut edge_rnns = Vec::new();
        for (k, l) in graph.class_pairs() {
            if k == l && !config.intra_class_edges {
                continue;
            }
            edge_rnns.push(EdgeRnn {
                dst_class: k,
                src_class: l,
                stack: LstmStack::init(1, &config.edge_hidden, config.dropout, &mut r)?,
            });
        }
        let mut model = Self {
            classes: graph.classes().to_vec(),
            num_classes,
            lags,
            scale,
            input_rnns,
            edge_rnns,
            node_rnns: Vec::new(),
            config,
        };
        let owners: Vec<usize> = if model.config.per_node {
            model.classes.clone()
        } else {
            (0..num_classes).collect()
        };
        for k in owners {
            let width = model.concat_width(k);
            model.node_rnns.push(CascadeNet::init(width, &model.config.node_hidden, model.config.dropout, &mut r)?);
        }
        Ok(model)
    }

    pub fn num_nodes(&self) -> usize {
        self.classes.len()
    }

    pub fn max_lag(&self) -> usize {
        *self.lags.last().expect("nonempty lag set")
    }

    fn input_width(&self) -> usize {
        self.config.input_hidden.last().copied().unwrap_or(0)
    }

    fn edge_width(&self) -> usize {
        self.config.edge_hidden.last().copied().unwrap_or(0)
    }

    /// Edge networks feeding class `k`, by ascending source class.
    fn slots(&self, k: usize) -> impl Iterator<Item = (usize, &EdgeRnn<S>)> {
        self.edge_rnns.iter().enumerate().filter(move |(_, e)| e.dst_class == k)
    }

    /// Node-network input width for class `k`.
    pub fn concat_width(&self, k: usize) -> usize {
        self.input_width() + self.slots(k).count() * self.edge_width()
    }

    fn node_net_index(&self, node: usize) -> usize {
        if self.config.per_node {
            node
        } else {
            self.classes[node]
        }
    }

    /// Check that `graph` only uses classes and class pairs this model has
    /// networks for.
    pub fn check_graph(&self, graph: &WeightedGraph) -> Result<()> {
        if graph.num_nodes() != self.num_nodes() || graph.classes() != self.classes.as_slice() {
            return Err(Error::Config("graph nodes or classes differ from the trained model".into()));
        }
        for (k, l) in graph.class_pairs() {
            if k == l && !self.config.intra_class_edges {
                continue;
            }
            if !self.edge_rnns.iter().any(|e| e.dst_class == k && e.src_class == l) {
                return Err(Error::Config(format!("no edge network for class pair ({k}, {l})")));
            }
        }
        Ok(())
    }

    fn lag_sequence(&self, series: &[S], t: usize) -> Vec<Vec<S>> {
        let inv = S::of(1.0 / self.scale);
        self.lags.iter().rev().map(|&p| vec![series[t - p] * inv]).collect()
    }

    /// Pooled neighbour window of class `src_class` for `node`, oldest first;
    /// `None` when there are no such neighbours.
    fn pooled_sequence(&self, graph: &WeightedGraph, values: &[Vec<S>], node: usize, src_class: usize, t: usize) -> Option<Vec<Vec<S>>> {
        let nbrs: Vec<(usize, f64)> = graph
            .in_neighbors(node)
            .iter()
            .copied()
            .filter(|&(j, _)| graph.class_of(j) == src_class)
            .collect();
        if nbrs.is_empty() {
            return None;
        }
        let inv = S::of(1.0 / self.scale);
        Some(
            self.lags
                .iter()
                .rev()
                .map(|&p| {
                    let pooled = nbrs.iter().fold(S::zero(), |acc, &(j, w)| acc + S::of(w) * values[j][t - p]);
                    vec![pooled * inv]
                })
                .collect(),
        )
    }

    fn check_target(&self, values: &[Vec<S>], node: usize, t: usize) -> Result<()> {
        if values.len() != self.num_nodes() {
            return Err(Error::Length {
                expected: self.num_nodes(),
                actual: values.len(),
            });
        }
        if node >= self.num_nodes() {
            return Err(Error::Bounds {
                what: "node set",
                index: node,
                bound: self.num_nodes(),
            });
        }
        if t < self.max_lag() || values.iter().any(|v| v.len() < t) {
            return Err(Error::Bounds {
                what: "history for target time",
                index: t,
                bound: values.iter().map(Vec::len).min().unwrap_or(0),
            });
        }
        Ok(())
    }

    /// Forward pass for `node` predicting time `t` from values strictly
    /// before `t`.
    pub fn forward_node(
        &self,
        graph: &WeightedGraph,
        values: &[Vec<S>],
        node: usize,
        t: usize,
        mut train: Option<&mut SimRng>,
    ) -> Result<NodeTape<S>> {
        self.check_target(values, node, t)?;
        let k = self.classes[node];
        let own = self.input_rnns[k].forward(&self.lag_sequence(&values[node], t), train.as_deref_mut())?;
        let steps = self.lags.len();
        let mut concat: Vec<Vec<S>> = own.outputs().to_vec();
        let mut edges = Vec::new();
        let ew = self.edge_width();
        for (e, rnn) in self.slots(k) {
            match self.pooled_sequence(graph, values, node, rnn.src_class, t) {
                Some(seq) => {
                    let tape = rnn.stack.forward(&seq, train.as_deref_mut())?;
                    for (c, o) in concat.iter_mut().zip(tape.outputs()) {
                        c.extend_from_slice(o);
                    }
                    edges.push((e, Some(tape)));
                }
                None => {
                    for c in concat.iter_mut() {
                        c.extend(std::iter::repeat_n(S::zero(), ew));
                    }
                    edges.push((e, None));
                }
            }
        }
        debug_assert_eq!(concat.len(), steps);
        let node_net = self.node_net_index(node);
        let node_tape = self.node_rnns[node_net].forward(&concat, train)?;
        Ok(NodeTape {
            class: k,
            node_net,
            own,
            edges,
            node: node_tape,
        })
    }

    /// Evaluation-mode prediction on the original value scale.
    pub fn predict(&self, graph: &WeightedGraph, values: &[Vec<S>], node: usize, t: usize) -> Result<S> {
        Ok(self.forward_node(graph, values, node, t, None)?.output() * S::of(self.scale))
    }

    /// Accumulate gradients of `d_output · output` into `grad`.
    pub fn backward_node(&self, tape: &NodeTape<S>, d_output: S, grad: &mut Self) -> Result<()> {
        let d_concat = self.node_rnns[tape.node_net].backward(&tape.node, d_output, &mut grad.node_rnns[tape.node_net])?;
        let iw = self.input_width();
        let ew = self.edge_width();
        let d_own: Vec<Vec<S>> = d_concat.iter().map(|d| d[..iw].to_vec()).collect();
        self.input_rnns[tape.class].backward(&tape.own, &d_own, &mut grad.input_rnns[tape.class])?;
        for (slot, (e, edge_tape)) in tape.edges.iter().enumerate() {
            if let Some(et) = edge_tape {
                let lo = iw + slot * ew;
                let d_edge: Vec<Vec<S>> = d_concat.iter().map(|d| d[lo..lo + ew].to_vec()).collect();
                self.edge_rnns[*e].stack.backward(et, &d_edge, &mut grad.edge_rnns[*e].stack)?;
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Params<S> for GsrnnModel<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut t: Vec<&[S]> = self.input_rnns.iter().flat_map(Params::tensors).collect();
        t.extend(self.edge_rnns.iter().flat_map(|e| e.stack.tensors()));
        t.extend(self.node_rnns.iter().flat_map(Params::tensors));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut t: Vec<&mut [S]> = self.input_rnns.iter_mut().flat_map(Params::tensors_mut).collect();
        t.extend(self.edge_rnns.iter_mut().flat_map(|e| e.stack.tensors_mut()));
        t.extend(self.node_rnns.iter_mut().flat_map(Params::tensors_mut));
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (k, s) in self.input_rnns.iter().enumerate() {
            names.extend(s.tensor_names().into_iter().map(|n| format!("input[{k}].{n}")));
        }
        for e in &self.edge_rnns {
            names.extend(e.stack.tensor_names().into_iter().map(|n| format!("edge[{},{}].{n}", e.dst_class, e.src_class)));
        }
        for (k, s) in self.node_rnns.iter().enumerate() {
            names.extend(s.tensor_names().into_iter().map(|n| format!("node[{k}].{n}")));
        }
        names
    }

    fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            classes: self.classes.clone(),
            num_classes: self.num_classes,
            lags: self.lags.clone(),
            scale: self.scale,
            input_rnns: self.input_rnns.iter().map(Params::zeros_like).collect(),
            edge_rnns: self
                .edge_rnns
                .iter()
                .map(|e| EdgeRnn {
                    dst_class: e.dst_class,
                    src_class: e.src_class,
                    stack: e.stack.zeros_like(),
                })
                .collect(),
            node_rnns: self.node_rnns.iter().map(Params::zeros_like).collect(),
        }
    }
}

/// How nodes are drawn within a class each epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Uniform,
    /// Weighted by each node's mean squared error in the previous epoch.
    ErrorProportional,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubsampleConfig {
    /// Fraction of each class drawn per epoch, indexed by class; a single
    /// entry applies to all classes. Empty means every node.
    pub fractions: Vec<f64>,
    pub sampling: Sampling,
}

impl SubsampleConfig {
    fn fraction(&self, class: usize) -> f64 {
        match self.fractions.len() {
            0 => 1.0,
            1 => self.fractions[0],
            _ => self.fractions.get(class).copied().unwrap_or(1.0),
        }
    }
}

/// Draw the nodes used in one epoch.
fn draw_nodes(classes: &[usize], num_classes: usize, sub: &SubsampleConfig, errors: &[f64], r: &mut SimRng) -> Result<Vec<usize>> {
    let mut chosen = Vec::new();
    for k in 0..num_classes {
        let members: Vec<usize> = (0..classes.len()).filter(|&u| classes[u] == k).collect();
        if members.is_empty() {
            continue;
        }
        let f = sub.fraction(k);
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("subsample fraction for class {k} must be in (0, 1], got {f}")));
        }
        let count = ((f * members.len() as f64).ceil() as usize).clamp(1, members.len());
        if count == members.len() {
            chosen.extend(members);
            continue;
        }
        let mut picked: Vec<usize> = match sub.sampling {
            Sampling::Uniform => members.choose_multiple(r, count).copied().collect(),
            Sampling::ErrorProportional => members
                .choose_multiple_weighted(r, count, |&u| errors[u].max(1e-12))
                .map_err(|e| Error::Config(format!("error-weighted sampling failed: {e}")))?
                .copied()
                .collect(),
        };
        picked.sort_unstable();
        chosen.extend(picked);
    }
    Ok(chosen)
}

/// Loss history of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean training loss per epoch (scaled axis).
    pub loss: Vec<f64>,
    /// Nodes used per epoch.
    pub nodes_per_epoch: Vec<usize>,
}

/// Train on targets `t < train_end` of every node. `values[node][t]` is the
/// (already augmented) series.
pub fn train<S: Scalar>(
    model: &mut GsrnnModel<S>,
    graph: &WeightedGraph,
    values: &[Vec<S>],
    train_end: usize,
    cfg: &TrainConfig,
    subsample: &SubsampleConfig,
    opt: &mut Adam<S>,
) -> Result<TrainReport> {
    cfg.validate()?;
    model.check_graph(graph)?;
    let start = model.max_lag();
    if train_end <= start || values.iter().any(|v| v.len() < train_end) {
        return Err(Error::Config(format!(
            "training range ends at {train_end} but needs more than {start} steps of history in every node"
        )));
    }
    let mut r = rng::seeded(rng::child_seed(cfg.seed, 0x6773_726e));
    let n = model.num_nodes();
    let mut node_error = vec![1.0f64; n];
    let mut report = TrainReport::default();
    let inv = S::of(1.0 / model.scale);
    for epoch in 0..cfg.epochs {
        let nodes = draw_nodes(&model.classes, model.num_classes, subsample, &node_error, &mut r)?;
        let mut jobs: Vec<(usize, usize)> = Vec::new();
        for &u in &nodes {
            let mut ts: Vec<usize> = (start..train_end).collect();
            if let Some(cap) = cfg.windows_per_epoch {
                if cap < ts.len() {
                    ts = ts.choose_multiple(&mut r, cap).copied().collect();
                }
            }
            jobs.extend(ts.into_iter().map(|t| (u, t)));
        }
        jobs.shuffle(&mut r);
        let mut total = 0.0;
        let mut per_node = vec![(0.0f64, 0usize); n];
        for batch in jobs.chunks(cfg.batch_size) {
            let bn = S::of_usize(batch.len());
            let mut grad = model.zeros_like();
            for &(u, t) in batch {
                let tape = model.forward_node(graph, values, u, t, Some(&mut r))?;
                let err = tape.output() - values[u][t] * inv;
                let e2 = (err * err).as_f64();
                total += e2;
                per_node[u].0 += e2;
                per_node[u].1 += 1;
                model.backward_node(&tape, S::of(2.0) * err / bn, &mut grad)?;
            }
            let lr = cfg.lr_at(opt.step, epoch);
            opt.step(model, &grad, lr)?;
        }
        for (u, &(s, c)) in per_node.iter().enumerate() {
            if c > 0 {
                node_error[u] = s / c as f64;
            }
        }
        report.loss.push(total / jobs.len().max(1) as f64);
        report.nodes_per_epoch.push(nodes.len());
    }
    Ok(report)
}
