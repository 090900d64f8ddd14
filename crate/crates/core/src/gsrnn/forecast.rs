//! One-step-ahead forecasting on the raw time axis and its scoring.

use std::fmt::Write as _;
use std::ops::Range;

use serde::Serialize;

use super::baselines::Predictor;
use super::graph::WeightedGraph;
use super::model::GsrnnModel;
use crate::augment::super_resolved_period;
use crate::error::{Error, Result};
use crate::events::{NodeSeries, SeriesState};
use crate::metrics;
use crate::scalar::Scalar;

/// A trained graph network bound to the graph it reads neighbours from.
pub struct GraphPredictor<'a, S> {
    pub model: &'a GsrnnModel<S>,
    pub graph: &'a WeightedGraph,
}

impl<'a, S: Scalar> GraphPredictor<'a, S> {
    pub fn new(model: &'a GsrnnModel<S>, graph: &'a WeightedGraph) -> Result<Self> {
        model.check_graph(graph)?;
        Ok(Self { model, graph })
    }
}

impl<S: Scalar> Predictor<S> for GraphPredictor<'_, S> {
    fn min_target(&self) -> usize {
        self.model.max_lag()
    }

    fn predict(&self, values: &[Vec<S>], node: usize, t: usize) -> Result<S> {
        self.model.predict(self.graph, values, node, t)
    }
}

/// Position of raw step `t` in a series of the given representation.
pub fn model_index(state: SeriesState, period: usize, t: usize) -> usize {
    match state {
        SeriesState::SuperResolved => (t / period) * super_resolved_period(period) + 2 * (t % period),
        SeriesState::Raw | SeriesState::DiurnalCumulative => t,
    }
}

/// Forecasts and actuals over a range of raw steps, for every node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForecastRun {
    pub start: usize,
    pub period: usize,
    /// `actual[node][i]` is the raw count at step `start + i`.
    pub actual: Vec<Vec<f64>>,
    pub actual_cdf: Vec<Vec<f64>>,
    pub predicted_cdf: Vec<Vec<f64>>,
    pub predicted_pdf: Vec<Vec<f64>>,
}

fn pooled_rmse(actual: &[Vec<f64>], predicted: &[Vec<f64>], nodes: &[usize]) -> Result<f64> {
    let a: Vec<f64> = nodes.iter().flat_map(|&u| actual[u].iter().copied()).collect();
    let p: Vec<f64> = nodes.iter().flat_map(|&u| predicted[u].iter().copied()).collect();
    metrics::rmse(&a, &p)
}

impl ForecastRun {
    pub fn num_nodes(&self) -> usize {
        self.actual.len()
    }

    fn all_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).collect()
    }

    /// Count error pooled over all nodes and steps.
    pub fn rmse_pdf(&self) -> Result<f64> {
        pooled_rmse(&self.actual, &self.predicted_pdf, &self.all_nodes())
    }

    /// Within-day cumulative error pooled over all nodes and steps.
    pub fn rmse_cdf(&self) -> Result<f64> {
        pooled_rmse(&self.actual_cdf, &self.predicted_cdf, &self.all_nodes())
    }

    pub fn rmse_pdf_of(&self, nodes: &[usize]) -> Result<f64> {
        pooled_rmse(&self.actual, &self.predicted_pdf, nodes)
    }

    pub fn rmse_cdf_of(&self, nodes: &[usize]) -> Result<f64> {
        pooled_rmse(&self.actual_cdf, &self.predicted_cdf, nodes)
    }

    /// `t,actual,predicted_cdf,predicted_pdf` for one node.
    pub fn node_csv(&self, node: usize) -> String {
        let mut out = String::from("t,actual,predicted_cdf,predicted_pdf\n");
        for i in 0..self.actual[node].len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.start + i,
                self.actual[node][i],
                self.predicted_cdf[node][i],
                self.predicted_pdf[node][i]
            );
        }
        out
    }

    /// Reassemble a run from per-node CSVs written by [`Self::node_csv`].
    pub fn from_node_csvs(texts: &[String], period: usize) -> Result<Self> {
        if texts.is_empty() || period == 0 {
            return Err(Error::Config("need at least one node file and a positive period".into()));
        }
        let mut run = ForecastRun {
            start: 0,
            period,
            actual: Vec::new(),
            actual_cdf: Vec::new(),
            predicted_cdf: Vec::new(),
            predicted_pdf: Vec::new(),
        };
        for (u, text) in texts.iter().enumerate() {
            let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
            let header = reader.headers()?.clone();
            if header.iter().collect::<Vec<_>>() != ["t", "actual", "predicted_cdf", "predicted_pdf"] {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("node file {u} has header {:?}", header.iter().collect::<Vec<_>>()),
                });
            }
            let (mut ts, mut a, mut pc, mut pp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (line, rec) in reader.records().enumerate() {
                let rec = rec?;
                let field = |k: usize| -> Result<f64> {
                    rec[k]
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse {
                            line: line as u64 + 2,
                            message: format!("node file {u}: {e}"),
                        })
                };
                ts.push(field(0)? as usize);
                a.push(field(1)?);
                pc.push(field(2)?);
                pp.push(field(3)?);
            }
            let start = *ts.first().ok_or_else(|| Error::Parse {
                line: 2,
                message: format!("node file {u} has no rows"),
            })?;
            if ts.iter().enumerate().any(|(i, &t)| t != start + i) {
                return Err(Error::Shape(format!("node file {u} has non-consecutive steps")));
            }
            if u == 0 {
                run.start = start;
            } else if start != run.start || a.len() != run.actual[0].len() {
                return Err(Error::Shape(format!("node file {u} covers different steps than node file 0")));
            }
            run.actual_cdf.push(running_cdf(&a, start, period));
            run.actual.push(a);
            run.predicted_cdf.push(pc);
            run.predicted_pdf.push(pp);
        }
        Ok(run)
    }
}

/// Within-day running sum of counts beginning at raw step `start`; a day
/// that began before `start` is summed from `start` on.
fn running_cdf(counts: &[f64], start: usize, period: usize) -> Vec<f64> {
    let mut acc = 0.0;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if (start + i).is_multiple_of(period) {
                acc = 0.0;
            }
            acc += c;
            acc
        })
        .collect()
}

/// Forecast raw steps `steps` of every node. `input` is the series the
/// predictor consumes (raw, cumulative or super-resolved); `raw` holds the
/// actual counts. Cumulative forecasts become counts by subtracting the
/// actual cumulative value one step earlier; count forecasts become
/// cumulative ones by adding it.
pub fn forecast<S: Scalar, P: Predictor<S> + ?Sized>(
    predictor: &P,
    input: &NodeSeries<S>,
    raw: &NodeSeries<S>,
    steps: Range<usize>,
) -> Result<ForecastRun> {
    if raw.state != SeriesState::Raw {
        return Err(Error::State(format!("actual counts must be a raw series, got {}", raw.state.tag())));
    }
    if input.period != raw.period || input.num_nodes() != raw.num_nodes() {
        return Err(Error::Shape("input and actual series disagree in period or node count".into()));
    }
    if steps.is_empty() {
        return Err(Error::Config("empty forecast range".into()));
    }
    let period = raw.period;
    if steps.end > raw.len() {
        return Err(Error::Bounds {
            what: "raw steps available for forecasting",
            index: steps.end - 1,
            bound: raw.len(),
        });
    }
    let last = model_index(input.state, period, steps.end - 1);
    if last >= input.len() {
        return Err(Error::Bounds {
            what: "input steps available for forecasting",
            index: last,
            bound: input.len(),
        });
    }
    let first = model_index(input.state, period, steps.start);
    if first < predictor.min_target() {
        return Err(Error::Bounds {
            what: "history before the first forecast",
            index: first,
            bound: predictor.min_target(),
        });
    }
    let n = raw.num_nodes();
    let mut run = ForecastRun {
        start: steps.start,
        period,
        actual: Vec::with_capacity(n),
        actual_cdf: Vec::with_capacity(n),
        predicted_cdf: Vec::with_capacity(n),
        predicted_pdf: Vec::with_capacity(n),
    };
    for u in 0..n {
        let counts: Vec<f64> = raw.node(u).iter().map(|x| x.as_f64()).collect();
        // cumulative values from the start of each day, for every step up to the end
        let cdf = running_cdf(&counts[..steps.end], 0, period);
        let (mut pc, mut pp) = (Vec::with_capacity(steps.len()), Vec::with_capacity(steps.len()));
        for t in steps.clone() {
            let pred = predictor.predict(&input.values, u, model_index(input.state, period, t))?.as_f64();
            let before = if t % period == 0 { 0.0 } else { cdf[t - 1] };
            match input.state {
                SeriesState::Raw => {
                    pp.push(pred);
                    pc.push(before + pred);
                }
                SeriesState::DiurnalCumulative | SeriesState::SuperResolved => {
                    pc.push(pred);
                    pp.push(pred - before);
                }
            }
        }
        run.actual.push(counts[steps.clone()].to_vec());
        run.actual_cdf.push(cdf[steps.clone()].to_vec());
        run.predicted_cdf.push(pc);
        run.predicted_pdf.push(pp);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{self, TrailingPolicy};

    /// Predicts the true value, read from a stored copy.
    struct Oracle(Vec<Vec<f64>>);

    impl Predictor<f64> for Oracle {
        fn min_target(&self) -> usize {
            1
        }
        fn predict(&self, _values: &[Vec<f64>], node: usize, t: usize) -> Result<f64> {
            Ok(self.0[node][t])
        }
    }

    fn raw() -> NodeSeries<f64> {
        let v = vec![vec![1.0, 0.0, 2.0, 3.0, 0.0, 1.0, 1.0, 4.0, 0.0, 2.0, 1.0, 1.0]];
        NodeSeries::new(v, 1.0, 4, SeriesState::Raw).unwrap()
    }

    #[test]
    fn perfect_forecasts_score_zero_in_every_representation() {
        let raw = raw();
        let sr = augment::augment(&raw, TrailingPolicy::Error).unwrap();
        for input in [raw.clone(), sr] {
            let oracle = Oracle(input.values.clone());
            let run = forecast(&oracle, &input, &raw, 4..12).unwrap();
            assert_eq!(run.rmse_pdf().unwrap(), 0.0);
            assert_eq!(run.rmse_cdf().unwrap(), 0.0);
            assert_eq!(run.actual[0], raw.node(0)[4..].to_vec());
        }
    }

    #[test]
    fn super_resolved_index_skips_midpoints() {
        assert_eq!(model_index(SeriesState::SuperResolved, 4, 0), 0);
        assert_eq!(model_index(SeriesState::SuperResolved, 4, 3), 6);
        assert_eq!(model_index(SeriesState::SuperResolved, 4, 4), 7);
        assert_eq!(model_index(SeriesState::Raw, 4, 5), 5);
    }

    #[test]
    fn range_errors() {
        let raw = raw();
        let oracle = Oracle(raw.values.clone());
        assert!(matches!(forecast(&oracle, &raw, &raw, 4..13), Err(Error::Bounds { .. })));
        assert!(matches!(forecast(&oracle, &raw, &raw, 0..4), Err(Error::Bounds { .. })));
    }

    #[test]
    fn node_csv_round_trip() {
        let raw = raw();
        let oracle = Oracle(raw.values.iter().map(|v| v.iter().map(|x| x + 0.5).collect()).collect());
        let run = forecast(&oracle, &raw, &raw, 4..12).unwrap();
        let back = ForecastRun::from_node_csvs(&[run.node_csv(0)], 4).unwrap();
        assert_eq!(back, run);
    }
}
