//! Timestamped events on a node set, CSV ingestion, and binning into
//! regular-interval count series.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A single event: `time` in hours since the start of observation, at `node`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub node: usize,
}

impl Event {
    pub fn new(time: f64, node: usize) -> Self {
        Self { time, node }
    }
}

/// Events observed on `[0, horizon)`, sorted by time.
///
/// Ties in time are ordered by node index and then by input order. Events
/// that fall exactly on the horizon are not part of the observation window
/// and are dropped on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSequence {
    events: Vec<Event>,
    horizon: f64,
    num_nodes: usize,
}

impl EventSequence {
    pub fn new(mut events: Vec<Event>, horizon: f64, num_nodes: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        for e in &events {
            if !(e.time.is_finite() && e.time >= 0.0) {
                return Err(Error::Domain(format!("event time {} is not a finite nonnegative value", e.time)));
            }
            if e.node >= num_nodes {
                return Err(Error::Bounds {
                    what: "node set",
                    index: e.node,
                    bound: num_nodes,
                });
            }
            if e.time > horizon {
                return Err(Error::Domain(format!(
                    "event time {} exceeds horizon {horizon}",
                    e.time
                )));
            }
        }
        events.retain(|e| e.time < horizon);
        // stable: equal (time, node) keep input order
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.node.cmp(&b.node)));
        Ok(Self {
            events,
            horizon,
            num_nodes,
        })
    }

    pub fn empty(horizon: f64, num_nodes: usize) -> Result<Self> {
        Self::new(Vec::new(), horizon, num_nodes)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of events at each node.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_nodes];
        for e in &self.events {
            counts[e.node] += 1;
        }
        counts
    }

    /// Copy with a different horizon. Fails if an event lies beyond it.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.events.clone(), horizon, self.num_nodes)
    }

    /// Events strictly before `horizon`, observed on `[0, horizon)`.
    pub fn truncate(&self, horizon: f64) -> Result<Self> {
        let kept = self.events.iter().copied().take_while(|e| e.time < horizon).collect();
        Self::new(kept, horizon, self.num_nodes)
    }
}

/// Read an event CSV with header `time,node`.
///
/// Unless `horizon` is given, the horizon is the end of the bin of width
/// `bin_width` that contains the latest event, so every event lies strictly
/// inside the window. An empty file gets a single-bin horizon.
pub fn load_events(
    path: impl AsRef<Path>,
    num_nodes: usize,
    horizon: Option<f64>,
    bin_width: f64,
) -> Result<EventSequence> {
    let text = fs::read_to_string(path)?;
    parse_events(&text, num_nodes, horizon, bin_width)
}

pub fn parse_events(
    text: &str,
    num_nodes: usize,
    horizon: Option<f64>,
    bin_width: f64,
) -> Result<EventSequence> {
    if !(bin_width > 0.0) {
        return Err(Error::Domain(format!("bin width must be positive, got {bin_width}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader.headers()?.clone();
    if header.len() != 2 || &header[0] != "time" || &header[1] != "node" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `time,node`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut events = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let time: f64 = parse_field(&record[0], line, "time")?;
        let node: usize = parse_field(&record[1], line, "node")?;
        if node >= num_nodes {
            return Err(Error::Bounds {
                what: "node set",
                index: node,
                bound: num_nodes,
            });
        }
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("time `{}` is not a finite nonnegative number", &record[0]),
            });
        }
        events.push(Event::new(time, node));
    }

    let horizon = match horizon {
        Some(h) => h,
        None => {
            let latest = events.iter().map(|e| e.time).fold(0.0_f64, f64::max);
            if events.is_empty() {
                bin_width
            } else {
                ((latest / bin_width).floor() + 1.0) * bin_width
            }
        }
    };
    EventSequence::new(events, horizon, num_nodes)
}

fn parse_field<T: FromStr>(raw: &str, line: u64, name: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| Error::Parse {
        line,
        message: format!("invalid {name} `{raw}`: {e}"),
    })
}

/// Write the events as `time,node` CSV. Times use the shortest decimal form
/// that parses back to the identical `f64`.
pub fn save_events(seq: &EventSequence, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, events_to_csv(seq))?;
    Ok(())
}

pub fn events_to_csv(seq: &EventSequence) -> String {
    let mut out = String::from("time,node\n");
    for e in seq.events() {
        out.push_str(&format!("{},{}\n", e.time, e.node));
    }
    out
}

/// Which transformation a [`NodeSeries`] currently carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesState {
    Raw,
    DiurnalCumulative,
    SuperResolved,
}

impl SeriesState {
    pub fn tag(self) -> &'static str {
        match self {
            SeriesState::Raw => "raw",
            SeriesState::DiurnalCumulative => "diurnal_cumulative",
            SeriesState::SuperResolved => "super_resolved",
        }
    }
}

impl FromStr for SeriesState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(SeriesState::Raw),
            "diurnal_cumulative" => Ok(SeriesState::DiurnalCumulative),
            "super_resolved" => Ok(SeriesState::SuperResolved),
            other => Err(Error::Parse {
                line: 1,
                message: format!("unknown series state `{other}`"),
            }),
        }
    }
}

/// Regular-interval per-node series, `values[node][step]`.
///
/// `period` is the number of raw steps per day (24 for hourly bins). It is
/// kept unchanged through augmentation; super-resolved blocks have length
/// `2 * period - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSeries<S> {
    pub values: Vec<Vec<S>>,
    pub bin_width: f64,
    pub period: usize,
    pub state: SeriesState,
}

impl<S: Scalar> NodeSeries<S> {
    pub fn new(values: Vec<Vec<S>>, bin_width: f64, period: usize, state: SeriesState) -> Result<Self> {
        let len = values.first().map_or(0, Vec::len);
        if let Some(bad) = values.iter().find(|v| v.len() != len) {
            return Err(Error::Length {
                expected: len,
                actual: bad.len(),
            });
        }
        if period == 0 {
            return Err(Error::Config("period must be at least 1".into()));
        }
        Ok(Self {
            values,
            bin_width,
            period,
            state,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, u: usize) -> &[S] {
        &self.values[u]
    }

    pub fn totals(&self) -> Vec<S> {
        self.values.iter().map(|v| v.iter().copied().sum()).collect()
    }

    /// Steps `[start, end)` of every node, keeping metadata.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::Bounds {
                what: "series",
                index: end,
                bound: self.len(),
            });
        }
        Ok(Self {
            values: self.values.iter().map(|v| v[start..end].to_vec()).collect(),
            ..self.clone()
        })
    }

    pub fn map_values(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            values: self.values.iter().map(|v| v.iter().map(|&x| f(x)).collect()).collect(),
            ..self.clone()
        }
    }

    /// CSV with comment lines carrying state and period, then
    /// `t,node0,node1,...` and one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("#state={}\n", self.state.tag()));
        out.push_str(&format!("#period={}\n", self.period));
        out.push_str(&format!("#bin_width={}\n", self.bin_width));
        out.push('t');
        for u in 0..self.num_nodes() {
            out.push_str(&format!(",node{u}"));
        }
        out.push('\n');
        for t in 0..self.len() {
            out.push_str(&t.to_string());
            for v in &self.values {
                out.push_str(&format!(",{}", v[t]));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }

    /// Parse the format written by [`NodeSeries::to_csv`]. Missing comment
    /// lines default to `state=raw`, `period=24`, `bin_width=1`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut state = SeriesState::Raw;
        let mut period = 24usize;
        let mut bin_width = 1.0f64;
        let mut body_start = 0usize;
        let mut comment_lines = 0u64;
        for line in text.lines() {
            let Some(comment) = line.strip_prefix('#') else {
                break;
            };
            comment_lines += 1;
            body_start += line.len() + 1;
            if let Some((key, value)) = comment.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "state" => state = value.parse()?,
                    "period" => period = parse_field(value, comment_lines, "period")?,
                    "bin_width" => bin_width = parse_field(value, comment_lines, "bin_width")?,
                    _ => {}
                }
            }
        }
        let body = &text[body_start.min(text.len())..];
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let header = reader.headers()?.clone();
        if header.is_empty() || &header[0] != "t" {
            return Err(Error::Parse {
                line: comment_lines + 1,
                message: "expected header starting with `t`".into(),
            });
        }
        let num_nodes = header.len() - 1;
        let mut values = vec![Vec::new(); num_nodes];
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: comment_lines + e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = comment_lines + record.position().map_or(0, |p| p.line());
            for (u, column) in values.iter_mut().enumerate() {
                let x: f64 = parse_field(&record[u + 1], line, "value")?;
                column.push(S::of(x));
            }
        }
        Self::new(values, bin_width, period, state)
    }
}

/// Count events per node in consecutive bins `[k·w, (k+1)·w)` covering the
/// horizon.
pub fn bin_counts<S: Scalar>(seq: &EventSequence, bin_width: f64, period: usize) -> Result<NodeSeries<S>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Domain(format!("bin width must be positive, got {bin_width}")));
    }
    let bins = (seq.horizon() / bin_width).ceil() as usize;
    let mut counts = vec![vec![0u64; bins]; seq.num_nodes()];
    for e in seq.events() {
        let k = ((e.time / bin_width).floor() as usize).min(bins.saturating_sub(1));
        counts[e.node][k] += 1;
    }
    let values = counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| S::of(c as f64)).collect())
        .collect();
    NodeSeries::new(values, bin_width, period, SeriesState::Raw)
}
