use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use stwg::augment::{self, TrailingPolicy};
use stwg::em::{self, EdgeMask, EmConfig};
use stwg::events::{self, NodeSeries, SeriesState};
use stwg::gsrnn::{
    self, lattice_graph, partition_nodes, ForecastRun, GraphPredictor, GsrnnConfig, GsrnnModel, SingleNodeModel,
    SubsampleConfig, WeightedGraph,
};
use stwg::metrics;
use stwg::neural::{Adam, Checkpoint, TrainConfig};
use stwg::synth::{self, GridSpec, Prior, SyntheticSpec};
use stwg::{Error, HawkesModel, Result};

use crate::output::OutputDir;
use crate::{Cli, Command, Direction};

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate { grid, bin_width, period } => simulate(cli, *grid, *bin_width, *period),
        Command::Infer {
            events,
            num_nodes,
            horizon,
            bin_width,
            w,
            w_grid,
            sparsity,
            knn_init,
            classes,
        } => infer(
            cli,
            InferArgs {
                events,
                num_nodes: *num_nodes,
                horizon: *horizon,
                bin_width: *bin_width,
                w: *w,
                w_grid,
                sparsity: *sparsity,
                knn_init: *knn_init,
                classes: *classes,
            },
        ),
        Command::EvalGraph { truth, inferred, prior } => eval_graph(cli, truth, inferred, prior),
        Command::Augment {
            series,
            direction,
            trailing,
        } => augment_cmd(cli, series, *direction, trailing),
        Command::Train => train(cli),
        Command::Forecast {
            checkpoint,
            series,
            graph,
            start,
            end,
        } => forecast(cli, checkpoint, series, graph.as_deref(), *start, *end),
        Command::Evaluate {
            forecast,
            period,
            metrics,
            max_delay,
            max_threshold,
        } => evaluate(cli, forecast, *period, metrics, *max_delay, *max_threshold),
        Command::Table1 => table1(cli),
    }
}

fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!("input {} does not exist", path.display())));
    }
    Ok(())
}

fn read_config<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T> {
    let Some(path) = &cli.config else {
        return Ok(T::default());
    };
    require_exists(path)?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn simulate(cli: &Cli, grid: bool, bin_width: Option<f64>, period: usize) -> Result<()> {
    let mut out = OutputDir::create(&cli.out)?;
    if grid {
        let mut spec: GridSpec = read_config(cli)?;
        if let Some(seed) = cli.seed {
            spec.seed = seed;
        }
        let series = synth::diffusion_grid(&spec)?;
        out.write("series.csv", &series.to_csv())?;
        out.write("graph.json", &lattice_graph(spec.rows, spec.cols)?.to_json()?)?;
        return out.finish("simulate", spec.seed, &json!({ "grid": spec }));
    }
    let mut spec: SyntheticSpec = read_config(cli)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let (model, seq) = synth::generate(&spec)?;
    out.write("events.csv", &events::events_to_csv(&seq))?;
    out.write("truth.json", &model.to_json()?)?;
    if let Some(width) = bin_width {
        let counts: NodeSeries<f64> = events::bin_counts(&seq, width, period)?;
        out.write("counts.csv", &counts.to_csv())?;
    }
    out.finish(
        "simulate",
        spec.seed,
        &json!({ "spec": spec, "bin_width": bin_width, "period": period }),
    )
}

/// EM settings as read from JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EmParams {
    l1_lambda: f64,
    max_iters: usize,
    tol: f64,
    /// Parent window in hours; absent means `10 / w`.
    truncation: Option<f64>,
}

impl Default for EmParams {
    fn default() -> Self {
        let d = EmConfig::<f64>::default();
        Self {
            l1_lambda: d.l1_lambda,
            max_iters: d.max_iters,
            tol: d.tol,
            truncation: d.truncation,
        }
    }
}

impl EmParams {
    fn to_config(&self) -> EmConfig<f64> {
        EmConfig {
            l1_lambda: self.l1_lambda,
            max_iters: self.max_iters,
            tol: self.tol,
            truncation: self.truncation,
            prior_edges: None,
        }
    }
}

struct InferArgs<'a> {
    events: &'a Path,
    num_nodes: usize,
    horizon: Option<f64>,
    bin_width: f64,
    w: Option<f64>,
    w_grid: &'a [f64],
    sparsity: Option<f64>,
    knn_init: Option<usize>,
    classes: usize,
}

fn infer(cli: &Cli, args: InferArgs<'_>) -> Result<()> {
    let params: EmParams = read_config(cli)?;
    require_exists(args.events)?;
    let seq = events::load_events(args.events, args.num_nodes, args.horizon, args.bin_width)?;
    let cfg = params.to_config();
    let mut out = OutputDir::create(&cli.out)?;
    let seqs = std::slice::from_ref(&seq);
    let (state, w) = if args.w_grid.is_empty() {
        let w = args
            .w
            .ok_or_else(|| Error::Config("either --w or --w-grid is required".into()))?;
        (em::fit(seqs, w, &cfg, None)?, w)
    } else {
        let search = em::grid_search_w(seqs, args.w_grid, &cfg)?;
        let mut csv = String::from("w,log_likelihood\n");
        for (w, ll) in args.w_grid.iter().zip(&search.log_likelihoods) {
            let _ = writeln!(csv, "{w},{ll}");
        }
        out.write("w_grid.csv", &csv)?;
        (search.best, search.best_w)
    };
    out.write("model.json", &state.model.to_json()?)?;
    out.write("iterations.csv", &state.log_csv())?;
    if let Some(s) = args.sparsity {
        let mut graph = em::build_stwg(&state.model, s, args.knn_init)?;
        let totals: Vec<f64> = seq.counts().iter().map(|&c| c as f64).collect();
        graph.set_classes(partition_nodes(&totals, args.classes)?)?;
        out.write("graph.json", &graph.to_json()?)?;
    }
    out.finish(
        "infer",
        cli.seed.unwrap_or(0),
        &json!({
            "em": params,
            "events": path_str(args.events),
            "num_nodes": args.num_nodes,
            "horizon": seq.horizon(),
            "w": w,
            "w_grid": args.w_grid,
            "converged": state.converged,
            "iterations": state.iter,
            "sparsity": args.sparsity,
            "knn_init": args.knn_init,
            "classes": args.classes,
        }),
    )
}

fn eval_graph(cli: &Cli, truth: &Path, inferred: &Path, prior: &str) -> Result<()> {
    require_exists(truth)?;
    require_exists(inferred)?;
    let prior: Prior = prior.parse()?;
    let truth_model = HawkesModel::<f64>::load(truth)?;
    let inferred_model = HawkesModel::<f64>::load(inferred)?;
    let seed = cli.seed.unwrap_or(0);
    let edges = EdgeMask::support_of(truth_model.excitation());
    let candidates = synth::prior_mask(&edges, prior, seed)?;
    let result = synth::evaluate_recovery(&edges, inferred_model.excitation(), &candidates)?;
    let mut out = OutputDir::create(&cli.out)?;
    out.write("roc.csv", &result.roc_csv())?;
    out.write(
        "auc.csv",
        &format!(
            "auc,num_candidates,num_positives\n{},{},{}\n",
            result.auc, result.num_candidates, result.num_positives
        ),
    )?;
    out.finish(
        "eval-graph",
        seed,
        &json!({ "truth": path_str(truth), "inferred": path_str(inferred), "prior": prior.label() }),
    )
}

fn augment_cmd(cli: &Cli, series: &Path, direction: Direction, trailing: &str) -> Result<()> {
    require_exists(series)?;
    let policy: TrailingPolicy = trailing.parse()?;
    let input = NodeSeries::<f64>::load(series)?;
    let result = match direction {
        Direction::Forward => augment::augment(&input, policy)?,
        Direction::Inverse => augment::restore(&input)?,
    };
    let mut out = OutputDir::create(&cli.out)?;
    out.write("series.csv", &result.to_csv())?;
    out.finish(
        "augment",
        cli.seed.unwrap_or(0),
        &json!({
            "series": path_str(series),
            "direction": format!("{direction:?}").to_lowercase(),
            "trailing": policy,
        }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModelKind {
    /// Graph network over the supplied graph.
    Gsrnn,
    /// The same per-class networks with every edge removed.
    Joint,
    /// An independent network per node.
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Representation {
    Raw,
    Augmented,
}

/// Training run as read from the `--config` file. Paths are relative to the
/// working directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRun {
    series: PathBuf,
    graph: Option<PathBuf>,
    model: ModelKind,
    representation: Representation,
    trailing: TrailingPolicy,
    /// Raw steps used for training; defaults to the first 80% (whole days
    /// for augmented input).
    train_steps: Option<usize>,
    /// Reassign node classes by activity into this many groups.
    classes: Option<usize>,
    train: TrainConfig,
    network: GsrnnConfig,
    single_hidden: Vec<usize>,
    subsample: SubsampleConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            series: PathBuf::new(),
            graph: None,
            model: ModelKind::Gsrnn,
            representation: Representation::Augmented,
            trailing: TrailingPolicy::Drop,
            train_steps: None,
            classes: None,
            train: TrainConfig::default(),
            network: GsrnnConfig::default(),
            single_hidden: vec![64, 128],
            subsample: SubsampleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Net {
    Graph(GsrnnModel<f64>),
    Single(SingleNodeModel<f64>),
}

/// Everything needed to rebuild the model input at forecast time.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Trained {
    kind: ModelKind,
    representation: Representation,
    trailing: TrailingPolicy,
    period: usize,
    train_steps: usize,
    net: Net,
}

fn load_raw(path: &Path) -> Result<NodeSeries<f64>> {
    require_exists(path)?;
    let raw = NodeSeries::<f64>::load(path)?;
    if raw.state != SeriesState::Raw {
        return Err(Error::State(format!("expected a raw count series, got {}", raw.state.tag())));
    }
    Ok(raw)
}

fn model_input(raw: &NodeSeries<f64>, rep: Representation, policy: TrailingPolicy) -> Result<NodeSeries<f64>> {
    match rep {
        Representation::Raw => Ok(raw.clone()),
        Representation::Augmented => augment::augment(raw, policy),
    }
}

/// Index in the model input that corresponds to raw step `raw_steps`.
fn input_end(rep: Representation, period: usize, raw_steps: usize) -> Result<usize> {
    match rep {
        Representation::Raw => Ok(raw_steps),
        Representation::Augmented => {
            if !raw_steps.is_multiple_of(period) {
                return Err(Error::Config(format!(
                    "training length {raw_steps} is not a whole number of {period}-step days"
                )));
            }
            Ok(raw_steps / period * augment::super_resolved_period(period))
        }
    }
}

fn default_train_steps(rep: Representation, raw: &NodeSeries<f64>) -> usize {
    match rep {
        Representation::Raw => raw.len() * 4 / 5,
        Representation::Augmented => raw.len() / raw.period * 4 / 5 * raw.period,
    }
}

fn edgeless(classes: &[usize]) -> Result<WeightedGraph> {
    WeightedGraph::with_classes(Vec::new(), classes.to_vec())
}

fn train(cli: &Cli) -> Result<()> {
    if cli.config.is_none() {
        return Err(Error::Config("train needs --config".into()));
    }
    let run: TrainRun = read_config(cli)?;
    let raw = load_raw(&run.series)?;
    let input = model_input(&raw, run.representation, run.trailing)?;
    let train_steps = run.train_steps.unwrap_or_else(|| default_train_steps(run.representation, &raw));
    let end = input_end(run.representation, raw.period, train_steps)?;
    if end == 0 || end > input.len() {
        return Err(Error::Config(format!(
            "training length {train_steps} does not fit a series of {} steps",
            raw.len()
        )));
    }
    let mut cfg = run.train.clone();
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mut out = OutputDir::create(&cli.out)?;
    let totals: Vec<f64> = input.values.iter().map(|v| v[..end].iter().sum()).collect();
    let (net, optimizer, loss_csv) = match run.model {
        ModelKind::Gsrnn | ModelKind::Joint => {
            let mut graph = match (&run.graph, run.model) {
                (Some(path), _) => {
                    require_exists(path)?;
                    WeightedGraph::load(path)?
                }
                (None, ModelKind::Joint) => edgeless(&vec![0; raw.num_nodes()])?,
                (None, _) => return Err(Error::Config("the graph model needs a graph file".into())),
            };
            if let Some(k) = run.classes {
                graph.set_classes(partition_nodes(&totals, k)?)?;
            }
            if run.model == ModelKind::Joint {
                graph = edgeless(graph.classes())?;
            }
            let scale = input.values.iter().flat_map(|v| v[..end].iter().map(|x| x.abs())).fold(0.0, f64::max);
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let mut model = GsrnnModel::build(&graph, run.network.clone(), &cfg.lags, scale, cfg.seed)?;
            let mut opt = Adam::default();
            let report = gsrnn::train(&mut model, &graph, &input.values, end, &cfg, &run.subsample, &mut opt)?;
            let mut csv = String::from("epoch,loss,nodes\n");
            for (e, (l, n)) in report.loss.iter().zip(&report.nodes_per_epoch).enumerate() {
                let _ = writeln!(csv, "{e},{l},{n}");
            }
            (Net::Graph(model), opt, csv)
        }
        ModelKind::Single => {
            let scales: Vec<f64> = input
                .values
                .iter()
                .map(|v| {
                    let m = v[..end].iter().map(|x| x.abs()).fold(0.0, f64::max);
                    if m > 0.0 {
                        m
                    } else {
                        1.0
                    }
                })
                .collect();
            let mut model = SingleNodeModel::build(scales, &run.single_hidden, run.network.dropout, &cfg.lags, cfg.seed)?;
            let histories = model.train(&input.values, end, &cfg)?;
            let mut csv = String::from("epoch,loss\n");
            for e in 0..cfg.epochs {
                let mean = histories.iter().map(|h| h[e]).sum::<f64>() / histories.len() as f64;
                let _ = writeln!(csv, "{e},{mean}");
            }
            (Net::Single(model), Adam::default(), csv)
        }
    };
    let trained = Trained {
        kind: run.model,
        representation: run.representation,
        trailing: run.trailing,
        period: raw.period,
        train_steps,
        net,
    };
    let checkpoint = Checkpoint::new(trained, optimizer, cfg.clone());
    out.write("checkpoint.json", &serde_json::to_string(&checkpoint)?)?;
    out.write("loss.csv", &loss_csv)?;
    let mut effective = serde_json::to_value(&run)?;
    effective["train"] = serde_json::to_value(&cfg)?;
    effective["train_steps"] = json!(train_steps);
    out.finish("train", cfg.seed, &effective)
}

fn forecast(
    cli: &Cli,
    checkpoint: &Path,
    series: &Path,
    graph: Option<&Path>,
    start: Option<usize>,
    end: Option<usize>,
) -> Result<()> {
    require_exists(checkpoint)?;
    let ck: Checkpoint<Trained, f64> = Checkpoint::load(checkpoint)?;
    let trained = &ck.model;
    let raw = load_raw(series)?;
    if raw.period != trained.period {
        return Err(Error::Config(format!(
            "series has {} steps per day, the model was trained with {}",
            raw.period, trained.period
        )));
    }
    let input = model_input(&raw, trained.representation, trained.trailing)?;
    let covered = match trained.representation {
        Representation::Raw => raw.len(),
        Representation::Augmented => (input.len() / augment::super_resolved_period(raw.period) * raw.period).min(raw.len()),
    };
    let steps = start.unwrap_or(trained.train_steps)..end.unwrap_or(covered);
    let run: ForecastRun = match &trained.net {
        Net::Graph(model) => {
            let g = match (graph, trained.kind) {
                (_, ModelKind::Joint) => edgeless(&model.classes)?,
                (Some(path), _) => {
                    require_exists(path)?;
                    WeightedGraph::load(path)?
                }
                (None, _) => return Err(Error::Config("the graph model needs --graph".into())),
            };
            gsrnn::forecast(&GraphPredictor::new(model, &g)?, &input, &raw, steps.clone())?
        }
        Net::Single(model) => gsrnn::forecast(model, &input, &raw, steps.clone())?,
    };
    let mut out = OutputDir::create(&cli.out)?;
    for u in 0..run.num_nodes() {
        out.write(&format!("node_{u}.csv"), &run.node_csv(u))?;
    }
    out.write(
        "summary.csv",
        &format!("rmse_cdf,rmse_pdf\n{},{}\n", run.rmse_cdf()?, run.rmse_pdf()?),
    )?;
    out.finish(
        "forecast",
        ck.train.seed,
        &json!({
            "checkpoint": path_str(checkpoint),
            "series": path_str(series),
            "graph": graph.map(path_str),
            "start": steps.start,
            "end": steps.end,
        }),
    )
}

/// `node_<k>.csv` files of a directory, ordered by `k`, which must run
/// from 0 without gaps.
fn node_files(dir: &Path) -> Result<Vec<String>> {
    require_exists(dir)?;
    let mut indexed = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(k) = name.strip_prefix("node_").and_then(|r| r.strip_suffix(".csv")).and_then(|k| k.parse::<usize>().ok()) {
            indexed.push((k, name));
        }
    }
    indexed.sort();
    if indexed.is_empty() || indexed.iter().enumerate().any(|(i, (k, _))| i != *k) {
        return Err(Error::Shape(format!(
            "{} must contain node_0.csv .. node_<n-1>.csv without gaps",
            dir.display()
        )));
    }
    indexed.into_iter().map(|(_, name)| Ok(fs::read_to_string(dir.join(name))?)).collect()
}

fn evaluate(cli: &Cli, dir: &Path, period: usize, wanted: &[String], max_delay: usize, max_threshold: usize) -> Result<()> {
    if let Some(bad) = wanted.iter().find(|m| !matches!(m.as_str(), "rmse" | "precision" | "spectrum")) {
        return Err(Error::Config(format!("unknown metric '{bad}'")));
    }
    let run = ForecastRun::from_node_csvs(&node_files(dir)?, period)?;
    let mut out = OutputDir::create(&cli.out)?;
    let has = |m: &str| wanted.iter().any(|w| w == m);
    if has("rmse") {
        let mut csv = String::from("scope,rmse_cdf,rmse_pdf\n");
        let _ = writeln!(csv, "all,{},{}", run.rmse_cdf()?, run.rmse_pdf()?);
        for u in 0..run.num_nodes() {
            let _ = writeln!(csv, "node{u},{},{}", run.rmse_cdf_of(&[u])?, run.rmse_pdf_of(&[u])?);
        }
        out.write("metrics.csv", &csv)?;
    }
    if has("precision") {
        let parts = (0..run.num_nodes())
            .map(|u| metrics::precision_matrix(&run.actual[u], &run.predicted_pdf[u], max_delay, max_threshold))
            .collect::<Result<Vec<_>>>()?;
        let pooled = metrics::pool_precision(&parts)?;
        out.write("precision.csv", &pooled.to_csv())?;
        out.write("precision_long.csv", &pooled.to_long_csv())?;
    }
    if has("spectrum") {
        let total = |rows: &[Vec<f64>]| -> Vec<f64> { (0..rows[0].len()).map(|t| rows.iter().map(|r| r[t]).sum()).collect() };
        out.write("spectrum_actual.csv", &metrics::spectrum(&total(&run.actual), 1.0)?.to_csv())?;
        out.write("spectrum_predicted.csv", &metrics::spectrum(&total(&run.predicted_pdf), 1.0)?.to_csv())?;
    }
    out.finish(
        "evaluate",
        cli.seed.unwrap_or(0),
        &json!({
            "forecast": path_str(dir),
            "period": period,
            "metrics": wanted,
            "max_delay": max_delay,
            "max_threshold": max_threshold,
        }),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Table1Run {
    base: SyntheticSpec,
    sparsities: Vec<f64>,
    /// `null` or `gt+K`.
    priors: Vec<String>,
    /// Empty means five consecutive seeds starting at `--seed`.
    seeds: Vec<u64>,
    em: EmParams,
}

impl Default for Table1Run {
    fn default() -> Self {
        Self {
            base: SyntheticSpec::default(),
            sparsities: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            priors: vec!["null".into(), "gt+200".into()],
            seeds: Vec::new(),
            em: EmParams::default(),
        }
    }
}

fn table1(cli: &Cli) -> Result<()> {
    let mut run: Table1Run = read_config(cli)?;
    let seed = cli.seed.unwrap_or(0);
    if run.seeds.is_empty() {
        run.seeds = (0..5).map(|k| seed + k).collect();
    }
    let priors = run.priors.iter().map(|p| p.parse()).collect::<Result<Vec<Prior>>>()?;
    let table = synth::run_table1(&run.base, &run.sparsities, &priors, &run.seeds, &run.em.to_config())?;
    let mut out = OutputDir::create(&cli.out)?;
    out.write("table1.csv", &table.to_csv())?;
    let mut cells = String::from("prior,sparsity,seed,auc\n");
    for (p, prior) in table.priors.iter().enumerate() {
        for (s, sparsity) in table.sparsities.iter().enumerate() {
            for (k, seed) in table.seeds.iter().enumerate() {
                let _ = writeln!(cells, "{},{sparsity},{seed},{}", prior.label(), table.auc[p][s][k]);
            }
        }
    }
    out.write("table1_cells.csv", &cells)?;
    out.finish("table1", seed, &serde_json::to_value(&run)?)
}
