//! Forecast evaluation: RMSE, the hit-rate precision matrix for sparse
//! counts, and periodograms.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Scalar};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Length { expected: a, actual: b });
    }
    Ok(())
}

/// Root mean squared difference of two equal-length series.
pub fn rmse<S: Scalar>(actual: &[S], predicted: &[S]) -> Result<f64> {
    check_lengths(actual.len(), predicted.len())?;
    if actual.is_empty() {
        return Err(Error::Metric("RMSE of empty series".into()));
    }
    let sum: CompensatedSum<f64> = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| {
            let d = (*a - *p).as_f64();
            d * d
        })
        .collect();
    Ok((sum.value() / actual.len() as f64).sqrt())
}

/// Hit rates of a count forecast over thresholds and allowed delays.
///
/// For threshold `i` (1-based) let `N_i` count slots whose actual value is at
/// least `i`. A slot `t` is a hit with delay budget `d` if the prediction
/// reaches `i` somewhere in `t − d ..= t`. `beta[d][i − 1] = N_{i,d} / N_i`,
/// undefined when `N_i = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrecisionMatrix {
    pub max_delay: usize,
    pub max_threshold: usize,
    /// `N_i` for `i = 1..=n`.
    pub counts: Vec<usize>,
    /// `hits[d][i − 1]` = `N_{i,d}`.
    pub hits: Vec<Vec<usize>>,
    pub beta: Vec<Vec<Option<f64>>>,
}

impl PrecisionMatrix {
    pub fn get(&self, delay: usize, threshold: usize) -> Option<f64> {
        self.beta.get(delay)?.get(threshold.checked_sub(1)?).copied().flatten()
    }

    /// Delay rows, threshold columns; undefined cells are written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delay");
        for i in 1..=self.max_threshold {
            let _ = write!(out, ",threshold_{i}");
        }
        out.push('\n');
        for (d, row) in self.beta.iter().enumerate() {
            let _ = write!(out, "{d}");
            for b in row {
                match b {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// One row per cell: `delay,threshold,n_actual,n_hit,beta`.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("delay,threshold,n_actual,n_hit,beta\n");
        for d in 0..=self.max_delay {
            for i in 1..=self.max_threshold {
                let beta = self.beta[d][i - 1].map_or("NA".to_string(), |b| b.to_string());
                let _ = writeln!(out, "{d},{i},{},{},{beta}", self.counts[i - 1], self.hits[d][i - 1]);
            }
        }
        out
    }
}

pub fn precision_matrix<S: Scalar>(actual: &[S], predicted: &[S], max_delay: usize, max_threshold: usize) -> Result<PrecisionMatrix> {
    check_lengths(actual.len(), predicted.len())?;
    if max_threshold == 0 {
        return Err(Error::Config("precision matrix needs at least one threshold".into()));
    }
    let n = max_threshold;
    let mut counts = vec![0usize; n];
    let mut hits = vec![vec![0usize; n]; max_delay + 1];
    for (t, a) in actual.iter().enumerate() {
        let a = a.as_f64();
        for i in 1..=n {
            let level = i as f64;
            if a < level {
                break;
            }
            counts[i - 1] += 1;
            // first delay at which the window reaches the level, if any
            let first = (0..=max_delay.min(t)).find(|&d| predicted[t - d].as_f64() >= level);
            if let Some(d0) = first {
                for row in &mut hits[d0..] {
                    row[i - 1] += 1;
                }
            }
        }
    }
    Ok(from_counts(max_delay, max_threshold, counts, hits))
}

fn from_counts(max_delay: usize, max_threshold: usize, counts: Vec<usize>, hits: Vec<Vec<usize>>) -> PrecisionMatrix {
    let beta = hits
        .iter()
        .map(|row| {
            row.iter()
                .zip(&counts)
                .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
                .collect()
        })
        .collect();
    PrecisionMatrix {
        max_delay,
        max_threshold,
        counts,
        hits,
        beta,
    }
}

/// Sum the counts of several matrices (e.g. one per node) and recompute the
/// ratios.
pub fn pool_precision(parts: &[PrecisionMatrix]) -> Result<PrecisionMatrix> {
    let first = parts.first().ok_or_else(|| Error::Metric("nothing to pool".into()))?;
    let (m, n) = (first.max_delay, first.max_threshold);
    if parts.iter().any(|p| p.max_delay != m || p.max_threshold != n) {
        return Err(Error::Shape("precision matrices differ in delay or threshold range".into()));
    }
    let mut counts = vec![0usize; n];
    let mut hits = vec![vec![0usize; n]; m + 1];
    for p in parts {
        for (c, x) in counts.iter_mut().zip(&p.counts) {
            *c += x;
        }
        for (row, prow) in hits.iter_mut().zip(&p.hits) {
            for (h, x) in row.iter_mut().zip(prow) {
                *h += x;
            }
        }
    }
    Ok(from_counts(m, n, counts, hits))
}

/// One-sided periodogram.
///
/// With `X_k` the DFT of `x`, the DC term is `|X_0|²/N` and each positive
/// frequency `k/(N·Δt)` carries `2|X_k|²/N` (`|X_k|²/N` at the Nyquist bin),
/// so `dc + Σ power = Σ x²`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    pub dc: f64,
    /// Cycles per unit of `sample_spacing`.
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    /// Frequency with the most power, excluding DC.
    pub fn peak_frequency(&self) -> Option<f64> {
        self.power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| self.frequencies[k])
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("frequency,power\n0,{}\n", self.dc);
        for (f, p) in self.frequencies.iter().zip(&self.power) {
            let _ = writeln!(out, "{f},{p}");
        }
        out
    }
}

pub fn spectrum<S: Scalar>(series: &[S], sample_spacing: f64) -> Result<Spectrum> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Length { expected: 2, actual: n });
    }
    if !(sample_spacing > 0.0) {
        return Err(Error::Config(format!("sample spacing must be positive, got {sample_spacing}")));
    }
    let mut buf: Vec<Complex<f64>> = series.iter().map(|x| Complex::new(x.as_f64(), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nf = n as f64;
    let half = n / 2;
    let mut frequencies = Vec::with_capacity(half);
    let mut power = Vec::with_capacity(half);
    for (k, x) in buf.iter().enumerate().take(half + 1).skip(1) {
        let p = x.norm_sqr() / nf;
        let one_sided = if n.is_multiple_of(2) && k == half { p } else { 2.0 * p };
        frequencies.push(k as f64 / (nf * sample_spacing));
        power.push(one_sided);
    }
    Ok(Spectrum {
        dc: buf[0].norm_sqr() / nf,
        frequencies,
        power,
    })
}
