use proptest::prelude::*;
use stwg::augment::{self, TrailingPolicy};
use stwg::gsrnn::{lattice_graph, pool_neighbors, Edge, GsrnnConfig, GsrnnModel, WeightedGraph};
use stwg::neural::{CascadeNet, LstmLayer, LstmStack};
use stwg::{NodeSeries, SeriesState};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-loop LSTM with gate blocks ordered input, forget, cell, output.
fn lstm_oracle(layer: &LstmLayer<f64>, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let hd = layer.hidden_dim;
    let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
    let mut out = Vec::new();
    for x in xs {
        let z: Vec<f64> = (0..4 * hd)
            .map(|r| {
                let mut s = layer.b[r];
                for (j, xj) in x.iter().enumerate() {
                    s += layer.w_x.get(r, j) * xj;
                }
                for (j, hj) in h.iter().enumerate() {
                    s += layer.w_h.get(r, j) * hj;
                }
                s
            })
            .collect();
        for k in 0..hd {
            let (i, f, g, o) = (sigmoid(z[k]), sigmoid(z[hd + k]), z[2 * hd + k].tanh(), sigmoid(z[3 * hd + k]));
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        out.push(h.clone());
    }
    out
}

fn stack_oracle(stack: &LstmStack<f64>, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    stack.layers.iter().fold(xs.to_vec(), |seq, layer| lstm_oracle(layer, &seq))
}

fn cascade_oracle(net: &CascadeNet<f64>, xs: &[Vec<f64>]) -> f64 {
    let top = stack_oracle(&net.stack, xs);
    let last = top.last().unwrap();
    net.head_b[0] + net.head_w.iter().zip(last).map(|(w, h)| w * h).sum::<f64>()
}

fn config(dropout: f64) -> GsrnnConfig {
    GsrnnConfig {
        input_hidden: vec![2],
        edge_hidden: vec![3],
        node_hidden: vec![2, 3],
        dropout,
        ..GsrnnConfig::default()
    }
}

fn histories(n: usize, len: usize, salt: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|u| (0..len).map(|t| ((t * 7 + u * 3 + salt) % 11) as f64 * 0.5).collect())
        .collect()
}

fn lag_window(series: &[f64], lags: &[usize], t: usize, scale: f64) -> Vec<Vec<f64>> {
    let inv = 1.0 / scale;
    lags.iter().rev().map(|&p| vec![series[t - p] * inv]).collect()
}

#[test]
fn edgeless_graph_matches_joint_forward_exactly() {
    let graph = WeightedGraph::with_classes(Vec::new(), vec![0, 1, 1, 0]).unwrap();
    let lags = [2, 3, 5];
    let model = GsrnnModel::<f64>::build(&graph, config(0.2), &lags, 4.0, 11).unwrap();
    assert!(model.edge_rnns.is_empty());
    let v = histories(4, 20, 0);
    for node in 0..4 {
        for t in 5..20 {
            let k = graph.class_of(node);
            let own = model.input_rnns[k].forward(&lag_window(&v[node], &lags, t, 4.0), None).unwrap();
            let joint = model.node_rnns[k].predict(own.outputs()).unwrap() * 4.0;
            assert_eq!(model.predict(&graph, &v, node, t).unwrap(), joint);
        }
    }
}

#[test]
fn single_node_graph_matches_flat_cascade_exactly() {
    let graph = WeightedGraph::new(1, Vec::new()).unwrap();
    let lags = [2, 4, 6, 8];
    let model = GsrnnModel::<f64>::build(&graph, config(0.0), &lags, 2.5, 5).unwrap();
    let node = &model.node_rnns[0];
    let mut layers = model.input_rnns[0].layers.clone();
    layers.extend(node.stack.layers.iter().cloned());
    let flat = CascadeNet::from_parts(LstmStack { layers, dropout: 0.0 }, node.head_w.clone(), node.head_b[0]).unwrap();
    let v = histories(1, 30, 2);
    for t in 8..30 {
        let expected = flat.predict(&lag_window(&v[0], &lags, t, 2.5)).unwrap() * 2.5;
        assert_eq!(model.predict(&graph, &v, 0, t).unwrap(), expected);
    }
}

#[test]
fn two_node_case_matches_plain_loop_oracle() {
    // node 1 feeds node 0 with weight 0.5; node 0 feeds node 1 with weight 2
    let graph = WeightedGraph::with_classes(
        vec![Edge { src: 1, dst: 0, weight: 0.5 }, Edge { src: 0, dst: 1, weight: 2.0 }],
        vec![0, 1],
    )
    .unwrap();
    let lags = [2, 3];
    let model = GsrnnModel::<f64>::build(&graph, config(0.0), &lags, 1.0, 8).unwrap();
    let v = vec![vec![1.0, 0.0, 2.0, 1.0, 0.0, 3.0], vec![0.0, 1.0, 1.0, 0.0, 2.0, 0.0]];
    for (node, src_class, other) in [(0usize, 1usize, 1usize), (1, 0, 0)] {
        let weight = if node == 0 { 0.5 } else { 2.0 };
        let t = 5;
        let own = stack_oracle(&model.input_rnns[node], &lag_window(&v[node], &lags, t, 1.0));
        let pooled: Vec<Vec<f64>> = lags.iter().rev().map(|&p| vec![weight * v[other][t - p]]).collect();
        let edge = model
            .edge_rnns
            .iter()
            .find(|e| e.dst_class == node && e.src_class == src_class)
            .unwrap();
        let nbr = stack_oracle(&edge.stack, &pooled);
        let concat: Vec<Vec<f64>> = own.iter().zip(&nbr).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
        let expected = cascade_oracle(&model.node_rnns[node], &concat);
        let got = model.predict(&graph, &v, node, t).unwrap();
        assert!((got - expected).abs() < 1e-12, "node {node}: {got} vs {expected}");
    }
}

#[test]
fn missing_class_pair_contributes_zeros() {
    // node 2 (class 1) has no class-0 neighbours even though the pair exists elsewhere
    let graph = WeightedGraph::with_classes(
        vec![Edge { src: 0, dst: 1, weight: 1.0 }, Edge { src: 3, dst: 2, weight: 1.0 }],
        vec![0, 1, 1, 1],
    )
    .unwrap();
    let lags = [2, 3];
    let model = GsrnnModel::<f64>::build(&graph, config(0.0), &lags, 1.0, 3).unwrap();
    let v = histories(4, 10, 1);
    let t = 6;
    let own = stack_oracle(&model.input_rnns[1], &lag_window(&v[2], &lags, t, 1.0));
    let mut concat: Vec<Vec<f64>> = own.clone();
    for e in model.edge_rnns.iter().filter(|e| e.dst_class == 1) {
        let block: Vec<Vec<f64>> = if e.src_class == 1 {
            let pooled: Vec<Vec<f64>> = lags.iter().rev().map(|&p| vec![v[3][t - p]]).collect();
            stack_oracle(&e.stack, &pooled)
        } else {
            vec![vec![0.0; 3]; lags.len()]
        };
        for (c, b) in concat.iter_mut().zip(block) {
            c.extend(b);
        }
    }
    let expected = cascade_oracle(&model.node_rnns[1], &concat);
    assert!((model.predict(&graph, &v, 2, t).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn full_pipeline_prediction_ignores_the_target_hour_and_later() {
    let period = 6;
    let raw: Vec<Vec<f64>> = histories(3, 5 * period, 4).into_iter().map(|r| r.iter().map(|x| x.round()).collect()).collect();
    let graph = WeightedGraph::with_classes(
        vec![Edge { src: 1, dst: 0, weight: 1.0 }, Edge { src: 2, dst: 0, weight: 0.5 }],
        vec![0, 0, 1],
    )
    .unwrap();
    let lags: Vec<usize> = (2..=9).collect();
    let model = GsrnnModel::<f64>::build(&graph, config(0.0), &lags, 10.0, 2).unwrap();
    let sr_period = augment::super_resolved_period(period);
    let to_sr = |r: &Vec<Vec<f64>>| {
        let s = NodeSeries::new(r.clone(), 1.0, period, SeriesState::Raw).unwrap();
        augment::augment(&s, TrailingPolicy::Error).unwrap().values
    };
    let base = to_sr(&raw);
    for hour in [2 * period, 2 * period + 3, 4 * period + 5] {
        let t = hour / period * sr_period + 2 * (hour % period);
        let before = model.predict(&graph, &base, 0, t).unwrap();
        let mut changed = raw.clone();
        for row in &mut changed {
            for x in &mut row[hour..] {
                *x += 3.0;
            }
        }
        assert_eq!(model.predict(&graph, &to_sr(&changed), 0, t).unwrap(), before, "hour {hour}");
    }
}

#[test]
fn lattice_edge_count_formula() {
    let mut r = 1usize;
    let mut c = 1usize;
    for k in 0..20 {
        // deterministic spread of shapes including thin grids
        r = 1 + (r * 5 + k) % 9;
        c = 1 + (c * 7 + 2 * k) % 11;
        let g = lattice_graph(r, c).unwrap();
        assert_eq!(g.edges().len(), 2 * (r * (c - 1) + c * (r - 1)), "{r}x{c}");
        assert!(g.edges().iter().all(|e| e.weight == 0.25));
    }
}

fn small_graph() -> WeightedGraph {
    WeightedGraph::with_classes(
        vec![
            Edge { src: 1, dst: 0, weight: 0.3 },
            Edge { src: 2, dst: 0, weight: 1.7 },
            Edge { src: 3, dst: 0, weight: 0.9 },
            Edge { src: 0, dst: 2, weight: 1.1 },
        ],
        vec![0, 1, 1, 0],
    )
    .unwrap()
}

proptest! {
    #[test]
    fn pooling_is_linear(
        x in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4),
        y in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let g = small_graph();
        let mix: Vec<Vec<f64>> = x.iter().zip(&y).map(|(p, q)| p.iter().zip(q).map(|(u, v)| a * u + b * v).collect()).collect();
        for node in 0..4 {
            for class in 0..2 {
                let lhs = pool_neighbors(&g, node, class, &mix).unwrap();
                let px = pool_neighbors(&g, node, class, &x).unwrap();
                let py = pool_neighbors(&g, node, class, &y).unwrap();
                for k in 0..3 {
                    prop_assert!((lhs[k] - (a * px[k] + b * py[k])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn doubling_weights_doubles_pooling(x in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 4)) {
        let g = small_graph();
        let g2 = g.scale_weights(2.0).unwrap();
        for node in 0..4 {
            for class in 0..2 {
                let once = pool_neighbors(&g, node, class, &x).unwrap();
                let twice = pool_neighbors(&g2, node, class, &x).unwrap();
                for (o, t) in once.iter().zip(&twice) {
                    prop_assert!((2.0 * o - t).abs() < 1e-12);
                }
            }
        }
    }
}
