//! Sparse spatio-temporal event modelling: Hawkes-process graph inference
//! and graph-structured recurrent forecasting.

// `!(x > 0.0)` is used on purpose so that NaN is rejected along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod em;
pub mod error;
pub mod events;
pub mod gsrnn;
pub mod hawkes;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use events::{Event, EventSequence, NodeSeries, SeriesState};
pub use hawkes::HawkesModel;
pub use scalar::Scalar;

pub type HawkesModelF64 = HawkesModel<f64>;
pub type HawkesModelF32 = HawkesModel<f32>;
pub type NodeSeriesF64 = NodeSeries<f64>;
pub type NodeSeriesF32 = NodeSeries<f32>;
pub type CascadeNetF64 = neural::CascadeNet<f64>;
pub type CascadeNetF32 = neural::CascadeNet<f32>;
pub type GsrnnModelF64 = gsrnn::GsrnnModel<f64>;
pub type GsrnnModelF32 = gsrnn::GsrnnModel<f32>;
pub type SingleNodeModelF64 = gsrnn::SingleNodeModel<f64>;
pub type SingleNodeModelF32 = gsrnn::SingleNodeModel<f32>;
