//! Reference forecasters: independent per-node networks, per-slot historical
//! averages and nearest-neighbour window matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{self, Adam, CascadeNet, TrainConfig};
use crate::rng;
use crate::scalar::Scalar;

/// One-step-ahead forecaster over node-major histories.
pub trait Predictor<S: Scalar> {
    /// Earliest target time with enough history.
    fn min_target(&self) -> usize;

    /// Forecast `values[node][t]` using values strictly before `t`.
    fn predict(&self, values: &[Vec<S>], node: usize, t: usize) -> Result<S>;
}

fn check_history<S>(values: &[Vec<S>], node: usize, t: usize, min_target: usize) -> Result<()> {
    if node >= values.len() {
        return Err(Error::Bounds {
            what: "node set",
            index: node,
            bound: values.len(),
        });
    }
    if t < min_target || values[node].len() < t {
        return Err(Error::Bounds {
            what: "history for target time",
            index: t,
            bound: values[node].len(),
        });
    }
    Ok(())
}

/// An independent recurrent network per node, fed only its own lags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SingleNodeModel<S> {
    pub lags: Vec<usize>,
    /// Per-node input and output scale.
    pub scales: Vec<f64>,
    pub nets: Vec<CascadeNet<S>>,
}

impl<S: Scalar> SingleNodeModel<S> {
    pub fn build(scales: Vec<f64>, hidden: &[usize], dropout: f64, lags: &[usize], seed: u64) -> Result<Self> {
        if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("input scale must be positive, got {s}")));
        }
        let lags = neural::normalize_lags(lags, false)?;
        let mut r = rng::seeded(seed);
        let nets = scales
            .iter()
            .map(|_| CascadeNet::init(1, hidden, dropout, &mut r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { lags, scales, nets })
    }

    /// Train every node on its targets before `train_end`; returns per-node
    /// loss histories.
    pub fn train(&mut self, values: &[Vec<S>], train_end: usize, cfg: &TrainConfig) -> Result<Vec<Vec<f64>>> {
        if values.len() != self.nets.len() {
            return Err(Error::Length {
                expected: self.nets.len(),
                actual: values.len(),
            });
        }
        let mut histories = Vec::with_capacity(values.len());
        for (u, series) in values.iter().enumerate() {
            let inv = S::of(1.0 / self.scales[u]);
            let scaled: Vec<S> = series[..train_end.min(series.len())].iter().map(|&x| x * inv).collect();
            let windows = neural::make_windows_in(&scaled, &self.lags, false, 0..train_end)?;
            let node_cfg = TrainConfig {
                seed: rng::child_seed(cfg.seed, u as u64),
                ..cfg.clone()
            };
            histories.push(neural::train_cascade(&mut self.nets[u], &windows, &node_cfg, &mut Adam::default())?);
        }
        Ok(histories)
    }
}

impl<S: Scalar> Predictor<S> for SingleNodeModel<S> {
    fn min_target(&self) -> usize {
        *self.lags.last().expect("nonempty lag set")
    }

    fn predict(&self, values: &[Vec<S>], node: usize, t: usize) -> Result<S> {
        check_history(values, node, t, self.min_target())?;
        if values.len() != self.nets.len() {
            return Err(Error::Length {
                expected: self.nets.len(),
                actual: values.len(),
            });
        }
        let scale = self.scales[node];
        let inv = S::of(1.0 / scale);
        let seq: Vec<Vec<S>> = self.lags.iter().rev().map(|&p| vec![values[node][t - p] * inv]).collect();
        Ok(self.nets[node].predict(&seq)? * S::of(scale))
    }
}

/// Mean of the training values at the same slot of a repeating period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoricalAverage {
    pub period: usize,
    /// `means[node][slot]`.
    pub means: Vec<Vec<f64>>,
}

/// One week of hourly slots.
pub const WEEK_SLOTS: usize = 7 * 24;

impl HistoricalAverage {
    pub fn fit<S: Scalar>(values: &[Vec<S>], train_end: usize, period: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::Config("period must be positive".into()));
        }
        if train_end < period || values.iter().any(|v| v.len() < train_end) {
            return Err(Error::Config(format!(
                "historical average needs at least one full period ({period} steps) of training data"
            )));
        }
        let means = values
            .iter()
            .map(|v| {
                let mut sums = vec![0.0; period];
                let mut counts = vec![0usize; period];
                for (t, x) in v[..train_end].iter().enumerate() {
                    sums[t % period] += x.as_f64();
                    counts[t % period] += 1;
                }
                sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
            })
            .collect();
        Ok(Self { period, means })
    }
}

impl<S: Scalar> Predictor<S> for HistoricalAverage {
    fn min_target(&self) -> usize {
        0
    }

    fn predict(&self, values: &[Vec<S>], node: usize, t: usize) -> Result<S> {
        if node >= self.means.len() {
            return Err(Error::Bounds {
                what: "node set",
                index: node,
                bound: self.means.len(),
            });
        }
        let _ = values;
        Ok(S::of(self.means[node][t % self.period]))
    }
}

/// Average successor of the `k` historical windows closest to the most
/// recent one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnForecaster {
    pub k: usize,
    pub window: usize,
    /// Candidate successors are restricted to times before this.
    pub train_end: usize,
}

impl KnnForecaster {
    pub fn new(k: usize, window: usize, train_end: usize) -> Result<Self> {
        if k == 0 || window == 0 {
            return Err(Error::Config("neighbour count and window length must be positive".into()));
        }
        Ok(Self { k, window, train_end })
    }
}

impl<S: Scalar> Predictor<S> for KnnForecaster {
    fn min_target(&self) -> usize {
        self.window
    }

    fn predict(&self, values: &[Vec<S>], node: usize, t: usize) -> Result<S> {
        check_history(values, node, t, self.window)?;
        let v = &values[node];
        let query = &v[t - self.window..t];
        let end = self.train_end.min(t);
        if end <= self.window {
            return Err(Error::Config(format!(
                "no historical windows of length {} before step {end}",
                self.window
            )));
        }
        let mut scored: Vec<(f64, usize)> = (self.window..end)
            .map(|s| {
                let d: f64 = v[s - self.window..s]
                    .iter()
                    .zip(query)
                    .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
                    .sum();
                (d, s)
            })
            .collect();
        // stable sort keeps earlier windows first among equal distances
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let take = self.k.min(scored.len());
        let mean = scored[..take].iter().map(|&(_, s)| v[s].as_f64()).sum::<f64>() / take as f64;
        Ok(S::of(mean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn historical_average_of_periodic_series_is_exact() {
        let v: Vec<Vec<f64>> = vec![(0..40).map(|t| (t % 4) as f64).collect()];
        let ha = HistoricalAverage::fit(&v, 32, 4).unwrap();
        for t in 32..40 {
            assert_eq!(Predictor::predict(&ha, &v, 0, t).unwrap(), (t % 4) as f64);
        }
        assert!(HistoricalAverage::fit(&v, 3, 4).is_err());
    }

    #[test]
    fn knn_with_all_windows_is_global_successor_mean() {
        let v: Vec<Vec<f64>> = vec![vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]];
        let knn = KnnForecaster::new(100, 2, 8).unwrap();
        // successors of windows ending before t = 7 are v[2..7]
        let expected = (4.0 + 1.0 + 5.0 + 9.0 + 2.0) / 5.0;
        assert!((Predictor::predict(&knn, &v, 0, 7).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn knn_breaks_ties_by_earlier_window() {
        let v: Vec<Vec<f64>> = vec![vec![0.0, 7.0, 0.0, 8.0, 0.0]];
        let knn = KnnForecaster::new(1, 1, 5).unwrap();
        assert_eq!(Predictor::predict(&knn, &v, 0, 5).unwrap(), 7.0);
    }

    #[test]
    fn single_node_ignores_other_nodes_and_the_future() {
        let m = SingleNodeModel::<f64>::build(vec![2.0, 3.0], &[4], 0.0, &[2, 3], 1).unwrap();
        let v = vec![(0..12).map(f64::from).collect::<Vec<_>>(), vec![1.0; 12]];
        let p = m.predict(&v, 0, 6).unwrap();
        let mut w = v.clone();
        w[1] = vec![50.0; 12];
        w[0][5] = -4.0;
        w[0][6] = 99.0;
        assert_eq!(m.predict(&w, 0, 6).unwrap(), p);
        assert!(m.predict(&v, 0, 2).is_err());
    }
}
