//! Augmentation of temporally sparse count series.
//!
//! A raw series with `T` steps per day is turned into a within-day running
//! sum (restarting every day), which is then interpolated to `2T − 1`
//! samples per day by inserting the midpoint between adjacent samples of the
//! same day. Both maps have exact inverses and never mix values across days.
//!
//! Throughout, `period` means the number of raw steps per day.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{NodeSeries, SeriesState};
use crate::scalar::Scalar;

/// What to do with a final day that has fewer than `period` raw steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrailingPolicy {
    /// Refuse series whose length is not a whole number of days.
    #[default]
    Error,
    /// Discard the partial day.
    Drop,
    /// Complete the partial day with zero counts.
    ZeroPad,
}

impl std::str::FromStr for TrailingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Self::Error),
            "drop" => Ok(Self::Drop),
            "zero_pad" | "zero-pad" => Ok(Self::ZeroPad),
            other => Err(Error::Config(format!("unknown trailing-day policy '{other}'"))),
        }
    }
}

/// Samples per day after super-resolution.
pub fn super_resolved_period(period: usize) -> usize {
    2 * period - 1
}

fn check_period(period: usize) -> Result<()> {
    if period < 2 {
        return Err(Error::Config(format!("period must be at least 2, got {period}")));
    }
    Ok(())
}

fn check_blocks(len: usize, block: usize) -> Result<()> {
    if !len.is_multiple_of(block) {
        return Err(Error::Length {
            expected: (len / block + 1) * block,
            actual: len,
        });
    }
    Ok(())
}

/// Apply a trailing-day policy to a raw slice.
pub fn complete_days<S: Scalar>(x: &[S], period: usize, policy: TrailingPolicy) -> Result<Vec<S>> {
    check_period(period)?;
    let rem = x.len() % period;
    if rem == 0 {
        return Ok(x.to_vec());
    }
    match policy {
        TrailingPolicy::Error => Err(Error::Length {
            expected: x.len() - rem + period,
            actual: x.len(),
        }),
        TrailingPolicy::Drop => Ok(x[..x.len() - rem].to_vec()),
        TrailingPolicy::ZeroPad => {
            let mut out = x.to_vec();
            out.resize(x.len() - rem + period, S::zero());
            Ok(out)
        }
    }
}

/// Running sum restarting at every day boundary.
pub fn cumulate_slice<S: Scalar>(x: &[S], period: usize) -> Result<Vec<S>> {
    check_period(period)?;
    check_blocks(x.len(), period)?;
    let mut out = Vec::with_capacity(x.len());
    for day in x.chunks(period) {
        let mut acc = S::zero();
        for &v in day {
            acc = acc + v;
            out.push(acc);
        }
    }
    Ok(out)
}

/// Inverse of [`cumulate_slice`]: first difference within each day.
pub fn decumulate_slice<S: Scalar>(y: &[S], period: usize) -> Result<Vec<S>> {
    check_period(period)?;
    check_blocks(y.len(), period)?;
    let mut out = Vec::with_capacity(y.len());
    for (d, day) in y.chunks(period).enumerate() {
        out.push(day[0]);
        for (k, pair) in day.windows(2).enumerate() {
            if pair[1] < pair[0] {
                return Err(Error::Invariant(format!(
                    "cumulative series decreases inside day {d} at step {}",
                    k + 1
                )));
            }
            out.push(pair[1] - pair[0]);
        }
    }
    Ok(out)
}

/// Within-day midpoint interpolation: `T` samples per day become `2T − 1`.
pub fn super_resolve_slice<S: Scalar>(y: &[S], period: usize) -> Result<Vec<S>> {
    check_period(period)?;
    check_blocks(y.len(), period)?;
    let half = S::of(0.5);
    let mut out = Vec::with_capacity(y.len() / period * super_resolved_period(period));
    for day in y.chunks(period) {
        out.push(day[0]);
        for pair in day.windows(2) {
            out.push(half * (pair[0] + pair[1]));
            out.push(pair[1]);
        }
    }
    Ok(out)
}

/// Left inverse of [`super_resolve_slice`]: keep the even offsets of each day.
pub fn downsample_slice<S: Scalar>(z: &[S], period: usize) -> Result<Vec<S>> {
    check_period(period)?;
    let block = super_resolved_period(period);
    if !z.len().is_multiple_of(block) {
        return Err(Error::Shape(format!(
            "super-resolved length {} is not a multiple of the day length {block}",
            z.len()
        )));
    }
    Ok(z.chunks(block).flat_map(|day| day.iter().step_by(2).copied()).collect())
}

fn require_state<S>(series: &NodeSeries<S>, expected: SeriesState) -> Result<()> {
    if series.state != expected {
        return Err(Error::State(format!(
            "expected a {} series, got {}",
            expected.tag(),
            series.state.tag()
        )));
    }
    Ok(())
}

fn rebuild<S: Scalar>(
    series: &NodeSeries<S>,
    state: SeriesState,
    f: impl Fn(&[S]) -> Result<Vec<S>>,
) -> Result<NodeSeries<S>> {
    let values = series.values.iter().map(|v| f(v)).collect::<Result<Vec<_>>>()?;
    NodeSeries::new(values, series.bin_width, series.period, state)
}

pub fn cumulate<S: Scalar>(raw: &NodeSeries<S>, policy: TrailingPolicy) -> Result<NodeSeries<S>> {
    require_state(raw, SeriesState::Raw)?;
    let p = raw.period;
    rebuild(raw, SeriesState::DiurnalCumulative, |x| cumulate_slice(&complete_days(x, p, policy)?, p))
}

pub fn decumulate<S: Scalar>(cdf: &NodeSeries<S>) -> Result<NodeSeries<S>> {
    require_state(cdf, SeriesState::DiurnalCumulative)?;
    rebuild(cdf, SeriesState::Raw, |y| decumulate_slice(y, cdf.period))
}

pub fn super_resolve<S: Scalar>(cdf: &NodeSeries<S>) -> Result<NodeSeries<S>> {
    require_state(cdf, SeriesState::DiurnalCumulative)?;
    rebuild(cdf, SeriesState::SuperResolved, |y| super_resolve_slice(y, cdf.period))
}

pub fn downsample<S: Scalar>(sr: &NodeSeries<S>) -> Result<NodeSeries<S>> {
    require_state(sr, SeriesState::SuperResolved)?;
    rebuild(sr, SeriesState::DiurnalCumulative, |z| downsample_slice(z, sr.period))
}

/// Raw counts to the super-resolved cumulative representation.
pub fn augment<S: Scalar>(raw: &NodeSeries<S>, policy: TrailingPolicy) -> Result<NodeSeries<S>> {
    super_resolve(&cumulate(raw, policy)?)
}

/// Super-resolved cumulative series back to raw counts.
pub fn restore<S: Scalar>(sr: &NodeSeries<S>) -> Result<NodeSeries<S>> {
    decumulate(&downsample(sr)?)
}

/// Per-step counts implied by one-step-ahead cumulative predictions.
///
/// `predicted[i]` forecasts `actual_cdf[start + i]`. The implied count is the
/// prediction minus the actual cumulative value one step earlier, or the
/// prediction itself at the first step of a day.
pub fn pdf_from_predicted_cdf<S: Scalar>(predicted: &[S], actual_cdf: &[S], period: usize, start: usize) -> Result<Vec<S>> {
    check_period(period)?;
    if start + predicted.len() > actual_cdf.len() {
        return Err(Error::Length {
            expected: actual_cdf.len().saturating_sub(start),
            actual: predicted.len(),
        });
    }
    Ok(predicted
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let t = start + i;
            if t.is_multiple_of(period) {
                p
            } else {
                p - actual_cdf[t - 1]
            }
        })
        .collect())
}
