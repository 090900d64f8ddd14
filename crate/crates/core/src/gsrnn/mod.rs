//! Graph-structured recurrent forecasting.
//!
//! Every node reads its own lag window through an input network shared by
//! its class, and the weighted sum of each neighbouring class's lag windows
//! through an edge network shared by the class pair. The per-step outputs
//! are concatenated (own first, then source classes in ascending order) and
//! fed to a node network that emits the forecast.

pub mod baselines;
pub mod forecast;
pub mod graph;
pub mod model;

pub use baselines::{HistoricalAverage, KnnForecaster, Predictor, SingleNodeModel, WEEK_SLOTS};
pub use forecast::{forecast, model_index, ForecastRun, GraphPredictor};
pub use graph::{lattice_graph, partition_nodes, pool_neighbors, Edge, WeightedGraph};
pub use model::{train, EdgeRnn, GsrnnConfig, GsrnnModel, NodeTape, Sampling, SubsampleConfig, TrainReport};
