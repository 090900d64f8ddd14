//! Directed weighted graph with node classes, plus the constructions used to
//! feed the graph-structured network.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Directed edge `src → dst`. `weight` scales the contribution of `src` when
/// pooling the neighbourhood of `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    edges: Vec<Edge>,
    classes: Vec<usize>,
}

/// Sparse directed graph over `num_nodes` nodes with a class label per node.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    num_nodes: usize,
    edges: Vec<Edge>,
    classes: Vec<usize>,
    /// in_edges[dst] = [(src, weight)], sorted by src
    in_edges: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    /// Every node starts in class 0.
    pub fn new(num_nodes: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::with_classes(edges, vec![0; num_nodes])
    }

    pub fn with_classes(mut edges: Vec<Edge>, classes: Vec<usize>) -> Result<Self> {
        let num_nodes = classes.len();
        let mut seen = BTreeSet::new();
        for e in &edges {
            for idx in [e.src, e.dst] {
                if idx >= num_nodes {
                    return Err(Error::Bounds {
                        what: "graph nodes",
                        index: idx,
                        bound: num_nodes,
                    });
                }
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Domain(format!(
                    "edge {}->{} has non-positive weight {}",
                    e.src, e.dst, e.weight
                )));
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(Error::Invariant(format!("duplicate edge {}->{}", e.src, e.dst)));
            }
        }
        edges.sort_by_key(|e| (e.dst, e.src));
        let mut in_edges = vec![Vec::new(); num_nodes];
        for e in &edges {
            in_edges[e.dst].push((e.src, e.weight));
        }
        Ok(Self {
            num_nodes,
            edges,
            classes,
            in_edges,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn class_of(&self, u: usize) -> usize {
        self.classes[u]
    }

    /// One more than the largest class label.
    pub fn num_classes(&self) -> usize {
        self.classes.iter().max().map_or(0, |m| m + 1)
    }

    pub fn in_neighbors(&self, dst: usize) -> &[(usize, f64)] {
        &self.in_edges[dst]
    }

    pub fn set_classes(&mut self, classes: Vec<usize>) -> Result<()> {
        if classes.len() != self.num_nodes {
            return Err(Error::Length {
                expected: self.num_nodes,
                actual: classes.len(),
            });
        }
        self.classes = classes;
        Ok(())
    }

    /// Ordered class pairs `(class of dst, class of src)` realised by at
    /// least one edge.
    pub fn class_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.edges
            .iter()
            .map(|e| (self.classes[e.dst], self.classes[e.src]))
            .collect()
    }

    pub fn scale_weights(&self, factor: f64) -> Result<Self> {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                weight: e.weight * factor,
                ..*e
            })
            .collect();
        Self::with_classes(edges, self.classes.clone())
    }

    pub fn without_intra_class_edges(&self) -> Result<Self> {
        let edges = self
            .edges
            .iter()
            .filter(|e| self.classes[e.src] != self.classes[e.dst])
            .copied()
            .collect();
        Self::with_classes(edges, self.classes.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GraphJson {
            edges: self.edges.clone(),
            classes: self.classes.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GraphJson = serde_json::from_str(text)?;
        Self::with_classes(raw.edges, raw.classes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Split nodes into `k` classes by total activity.
///
/// Nodes are ranked by total (ascending, ties by node index) and cut into
/// `k` consecutive groups whose sizes differ by at most one; the remainder
/// goes to the lowest classes. Class 0 holds the least active nodes.
pub fn partition_nodes<S: Scalar>(totals: &[S], k: usize) -> Result<Vec<usize>> {
    let n = totals.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot split {n} nodes into {k} classes")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| totals[a].partial_cmp(&totals[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let base = n / k;
    let extra = n % k;
    let mut classes = vec![0; n];
    let mut pos = 0;
    for class in 0..k {
        let size = base + usize::from(class < extra);
        for &node in &order[pos..pos + size] {
            classes[node] = class;
        }
        pos += size;
    }
    Ok(classes)
}

/// 4-neighbour grid on `rows × cols` cells, node index `r * cols + c`, with
/// both directions present and every weight `1/4`.
pub fn lattice_graph(rows: usize, cols: usize) -> Result<WeightedGraph> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config("lattice needs at least one row and column".into()));
    }
    let mut edges = Vec::new();
    let id = |r: usize, c: usize| r * cols + c;
    for r in 0..rows {
        for c in 0..cols {
            let here = id(r, c);
            let mut link = |other: usize| {
                edges.push(Edge {
                    src: other,
                    dst: here,
                    weight: 0.25,
                })
            };
            if r > 0 {
                link(id(r - 1, c));
            }
            if r + 1 < rows {
                link(id(r + 1, c));
            }
            if c > 0 {
                link(id(r, c - 1));
            }
            if c + 1 < cols {
                link(id(r, c + 1));
            }
        }
    }
    WeightedGraph::new(rows * cols, edges)
}

/// `Σ_{j → i, class(j) = l} w_ij · X_j`, or zeros when `i` has no such
/// in-neighbour.
pub fn pool_neighbors<S: Scalar>(graph: &WeightedGraph, node: usize, class: usize, inputs: &[Vec<S>]) -> Result<Vec<S>> {
    if node >= graph.num_nodes() {
        return Err(Error::Bounds {
            what: "graph nodes",
            index: node,
            bound: graph.num_nodes(),
        });
    }
    if inputs.len() != graph.num_nodes() {
        return Err(Error::Length {
            expected: graph.num_nodes(),
            actual: inputs.len(),
        });
    }
    let dim = inputs[node].len();
    let mut pooled = vec![S::zero(); dim];
    for &(src, weight) in graph.in_neighbors(node) {
        if graph.class_of(src) != class {
            continue;
        }
        let x = &inputs[src];
        if x.len() != dim {
            return Err(Error::Shape(format!(
                "neighbour {src} supplies {} values, node {node} expects {dim}",
                x.len()
            )));
        }
        let w = S::of(weight);
        for (p, &v) in pooled.iter_mut().zip(x) {
            *p = *p + w * v;
        }
    }
    Ok(pooled)
}
