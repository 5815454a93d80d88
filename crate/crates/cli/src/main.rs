//! `catgranger`: simulate categorical time series, fit sparse MTD and mLTD
//! models, trace regularization paths and score recovered Granger graphs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use catgranger::bench::{bench_projection, BenchConfig};
use catgranger::evaluation::{
    auc_from_supports, auto_lambda_grid, cross_validate, path_supports, reg_path, roc_points, run_experiment,
    summarize, AucOptions, ExperimentConfig, PathConfig, DEFAULT_LAMBDA_RATIO, DEFAULT_N_LAMBDAS, SUPPORT_CUTOFF,
};
use catgranger::io::{
    default_names, read_dataset_csv, read_json, write_dataset_csv, write_experiment_csv, write_graph_csv,
    write_graph_dot, write_json, write_summary_json, GraphRecord, LabelMap, ModelRecord, SimulationModelRecord,
    TruthRecord,
};
use catgranger::mltd::{fit_mltd, mltd_granger_graph};
use catgranger::mtd::{fit_mtd, mtd_granger_graph, DEFAULT_EDGE_THRESHOLD, DEFAULT_EPSILON};
use catgranger::simulate::{simulate, Regime, SimSpec};
use catgranger::{CategoricalDataset, GrangerGraph, Matrix, ModelKind, MtdParams, PenaltyKind, RegPath};

/// λ below which fitted weights are indistinguishable from solver noise.
const TINY_LAMBDA: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "catgranger", version, about = "Granger networks for multivariate categorical time series")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory all outputs are written to.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    /// Graph output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Mtd,
    Mltd,
    Var,
}

impl RegimeArg {
    fn regime(self, delta: Option<f64>) -> Regime {
        let r = match self {
            RegimeArg::Mtd => Regime::sparse_mtd(),
            RegimeArg::Mltd => Regime::sparse_mltd(),
            RegimeArg::Var => Regime::latent_var(),
        };
        delta.map_or(r, |d| r.with_delta(d))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Mtd,
    Mltd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PenaltyArg {
    L1,
    Group,
}

impl From<PenaltyArg> for PenaltyKind {
    fn from(p: PenaltyArg) -> Self {
        match p {
            PenaltyArg::L1 => PenaltyKind::L1,
            PenaltyArg::Group => PenaltyKind::GroupLasso,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a benchmark dataset; writes data.csv, truth.json and model.json.
    Simulate(SimulateArgs),
    /// Fit one penalized model per target; writes model.json and a graph.
    Fit(FitArgs),
    /// Fit every target over a descending λ grid; writes path.json.
    Path(PathArgs),
    /// Blocked cross-validation over a λ grid; writes cv.json.
    Cv(CvArgs),
    /// Score a path against a ground-truth graph; writes auc.json.
    EvalAuc(EvalAucArgs),
    /// Time Dykstra against the dense QP projection; writes bench.csv.
    BenchProjection(BenchArgs),
    /// Convert a model.json into a thresholded graph in the chosen format.
    Export(ExportArgs),
    /// Simulate replicates and score every method; writes experiment.csv and summary.json.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    regime: RegimeArg,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long = "T", default_value_t = 400)]
    t: usize,
    /// Edge probability; defaults to the regime's value.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset CSV, one column per series.
    #[arg(long)]
    data: PathBuf,
    /// The CSV has no header row.
    #[arg(long)]
    no_header: bool,
    /// Alphabet sizes: one value for all series or one per series.
    #[arg(long, value_delimiter = ',')]
    alphabet: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct ModelSel {
    #[arg(long, value_enum, default_value_t = ModelArg::Mtd)]
    model: ModelArg,
    #[arg(long, value_enum, default_value_t = PenaltyArg::Group)]
    penalty: PenaltyArg,
    /// Parameter floor of the MTD model.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Explicit strictly decreasing λ values; otherwise an automatic grid.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_N_LAMBDAS)]
    n_lambdas: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_RATIO)]
    lambda_ratio: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sel: ModelSel,
    #[arg(long)]
    lambda: f64,
    /// `all` or a series index.
    #[arg(long, default_value = "all")]
    target: String,
    /// Edge threshold on the graph weights.
    #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sel: ModelSel,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sel: ModelSel,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args, Debug)]
struct EvalAucArgs {
    /// truth.json from `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// path.json from `path`.
    #[arg(long)]
    path: PathBuf,
    /// Leave self-edges out of the ROC.
    #[arg(long)]
    exclude_diagonal: bool,
    #[arg(long, default_value_t = SUPPORT_CUTOFF)]
    cutoff: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![10, 20, 30, 40, 50, 60])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0.7)]
    sd: f64,
    /// Skip the QP above this many variables.
    #[arg(long, default_value_t = catgranger::projection::QP_MAX_DIM)]
    qp_max_dim: usize,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// model.json from `fit`.
    #[arg(long)]
    models: PathBuf,
    /// Optional label map for node names.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    regime: RegimeArg,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long = "T", default_value_t = 400)]
    t: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long)]
    delta: Option<f64>,
    /// Methods to score, e.g. `mtd-l1,mltd-group`; defaults to all three.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<ModelKind>>,
    #[arg(long, default_value_t = DEFAULT_N_LAMBDAS)]
    n_lambdas: usize,
    #[arg(long)]
    exclude_diagonal: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn usage_error(msg: &str) -> ! {
    Cli::command().error(ErrorKind::ArgumentConflict, msg).exit()
}

fn model_kind(sel: &ModelSel) -> ModelKind {
    match (sel.model, sel.penalty) {
        (ModelArg::Mtd, PenaltyArg::L1) => ModelKind::MtdL1,
        (ModelArg::Mtd, PenaltyArg::Group) => ModelKind::MtdGroup,
        (ModelArg::Mltd, PenaltyArg::Group) => ModelKind::MltdGroup,
        (ModelArg::Mltd, PenaltyArg::L1) => usage_error("the mltd model only supports --penalty group"),
    }
}

fn run(cli: Cli) -> Result<()> {
    // Validate subcommand-specific flag combinations before any work.
    let kind = match &cli.command {
        Command::Fit(a) => Some(model_kind(&a.sel)),
        Command::Path(a) => Some(model_kind(&a.sel)),
        Command::Cv(a) => Some(model_kind(&a.sel)),
        _ => None,
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            usage_error("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    fs::create_dir_all(&cli.output_dir)
        .with_context(|| format!("creating output directory {}", cli.output_dir.display()))?;
    let out = cli.output_dir.as_path();
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, cli.seed, out),
        Command::Fit(a) => cmd_fit(a, kind.expect("validated"), cli.format, out),
        Command::Path(a) => cmd_path(a, kind.expect("validated"), out),
        Command::Cv(a) => cmd_cv(a, kind.expect("validated"), out),
        Command::EvalAuc(a) => cmd_eval_auc(a, out),
        Command::BenchProjection(a) => cmd_bench(a, cli.seed, out),
        Command::Export(a) => cmd_export(a, cli.format, out),
        Command::Experiment(a) => cmd_experiment(a, cli.seed, out),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, out: &Path) -> Result<()> {
    let spec = SimSpec::new(a.regime.regime(a.delta), a.d, a.m, a.t, seed);
    let sim = simulate(&spec)?;
    write_dataset_csv(&sim.data, &default_names(a.d), create(out, "data.csv")?)?;
    write_json(&TruthRecord::from_simulation(&sim), create(out, "truth.json")?)?;
    write_json(
        &SimulationModelRecord::from_simulation(&sim, DEFAULT_EPSILON),
        create(out, "model.json")?,
    )?;
    Ok(())
}

fn load_data(a: &DataArgs) -> Result<(CategoricalDataset, LabelMap)> {
    let reader = open(&a.data)?;
    let sizes = match a.alphabet.as_deref() {
        None => None,
        Some([m]) => {
            // Broadcast a single size; the column count is known only after parsing.
            let (probe, _) = read_dataset_csv(open(&a.data)?, !a.no_header, None)
                .with_context(|| format!("reading {}", a.data.display()))?;
            Some(vec![*m; probe.n_series()])
        }
        Some(s) => Some(s.to_vec()),
    };
    let (data, labels) = read_dataset_csv(reader, !a.no_header, sizes.as_deref())
        .with_context(|| format!("reading {}", a.data.display()))?;
    Ok((data, labels))
}

fn path_config(sel: &ModelSel) -> PathConfig<f64> {
    let mut cfg = PathConfig::default();
    cfg.mtd.epsilon = sel.epsilon;
    cfg
}

fn write_graph(graph: &GrangerGraph, names: &[String], format: Format, out: &Path) -> Result<()> {
    match format {
        Format::Json => write_json(&GraphRecord::new(graph, names), create(out, "graph.json")?)?,
        Format::Csv => write_graph_csv(graph, names, create(out, "graph.csv")?)?,
        Format::Dot => write_graph_dot(graph, names, create(out, "graph.dot")?)?,
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs, kind: ModelKind, format: Format, out: &Path) -> Result<()> {
    if !(a.lambda >= 0.0 && a.lambda.is_finite()) {
        bail!("--lambda must be finite and nonnegative, got {}", a.lambda);
    }
    if a.lambda > 0.0 && a.lambda < TINY_LAMBDA {
        eprintln!(
            "warning: lambda {} is below {TINY_LAMBDA:e}; the penalty is negligible next to solver tolerances",
            a.lambda
        );
    }
    let (data, labels) = load_data(&a.data)?;
    let d = data.n_series();
    let targets: Vec<usize> = if a.target == "all" {
        (0..d).collect()
    } else {
        let i: usize = a
            .target
            .parse()
            .with_context(|| format!("--target must be `all` or an index, got `{}`", a.target))?;
        if i >= d {
            bail!("--target {i} out of range for {d} series");
        }
        vec![i]
    };
    let cfg = path_config(&a.sel);
    let records: Vec<ModelRecord> = targets
        .par_iter()
        .map(|&i| -> Result<ModelRecord> {
            Ok(match kind.mtd_penalty() {
                Some(penalty) => {
                    let mut c = cfg.mtd.clone();
                    c.lambda = a.lambda;
                    c.penalty = penalty;
                    let fit = fit_mtd(&data, i, &c)?;
                    ModelRecord {
                        objective: Some(fit.objective),
                        status: Some(fit.status),
                        ..ModelRecord::from_mtd(&fit.params, c.epsilon, Some(a.lambda), Some(penalty))
                    }
                }
                None => {
                    let mut c = cfg.mltd.clone();
                    c.lambda = a.lambda;
                    let fit = fit_mltd(&data, i, &c)?;
                    ModelRecord {
                        objective: Some(fit.objective),
                        status: Some(fit.status),
                        ..ModelRecord::from_mltd(&fit.params, Some(a.lambda))
                    }
                }
            })
        })
        .collect::<Result<_>>()?;
    for r in &records {
        if r.status != Some(catgranger::FitStatus::Converged) {
            eprintln!("warning: target {} ended with status {:?}", r.target, r.status);
        }
    }
    write_json(&records, create(out, "model.json")?)?;
    write_json(&labels, create(out, "labels.json")?)?;
    let graph = graph_from_records(&records, d, a.threshold)?;
    write_graph(&graph, &labels.names(), format, out)
}

/// Graph from per-target models; rows of targets without a model stay empty.
fn graph_from_records(records: &[ModelRecord], d: usize, threshold: f64) -> Result<GrangerGraph> {
    if records.len() == d && records.iter().enumerate().all(|(i, r)| r.target == i) {
        if records.iter().all(|r| r.model == "mtd") {
            let fits: Vec<MtdParams> = records.iter().map(ModelRecord::to_mtd).collect::<catgranger::Result<_>>()?;
            return Ok(mtd_granger_graph(&fits, threshold)?);
        }
        if records.iter().all(|r| r.model == "mltd") {
            let fits: Vec<_> = records.iter().map(ModelRecord::to_mltd).collect::<catgranger::Result<_>>()?;
            return Ok(mltd_granger_graph(&fits, threshold)?);
        }
    }
    let mut w = Matrix::zeros(d, d);
    for r in records {
        if r.target >= d || r.gamma.len() != d {
            bail!("model for target {} does not match {d} series", r.target);
        }
        for (j, &g) in r.gamma.iter().enumerate() {
            w[(r.target, j)] = g;
        }
    }
    Ok(GrangerGraph::from_weights(w, threshold)?)
}

fn grid(g: &GridArgs, data: &CategoricalDataset, kind: ModelKind) -> Result<Vec<f64>> {
    Ok(match &g.lambdas {
        Some(l) => l.clone(),
        None => auto_lambda_grid(data, kind, g.n_lambdas, g.lambda_ratio)?,
    })
}

fn cmd_path(a: &PathArgs, kind: ModelKind, out: &Path) -> Result<()> {
    let (data, _) = load_data(&a.data)?;
    let lambdas = grid(&a.grid, &data, kind)?;
    let path = reg_path(&data, kind, &lambdas, &path_config(&a.sel))?;
    let bad = path.unconverged();
    if !bad.is_empty() {
        eprintln!("warning: {} of {} fits did not converge", bad.len(), path.len() * data.n_series());
    }
    write_json(&path, create(out, "path.json")?)?;
    Ok(())
}

fn cmd_cv(a: &CvArgs, kind: ModelKind, out: &Path) -> Result<()> {
    let (data, _) = load_data(&a.data)?;
    let lambdas = grid(&a.grid, &data, kind)?;
    let cv = cross_validate(&data, kind, &lambdas, a.folds, &path_config(&a.sel))?;
    write_json(&cv, create(out, "cv.json")?)?;
    Ok(())
}

fn cmd_eval_auc(a: &EvalAucArgs, out: &Path) -> Result<()> {
    let truth: TruthRecord = read_json(open(&a.truth)?)?;
    let path: RegPath = read_json(open(&a.path)?)?;
    let adjacency = truth.adjacency_bool();
    if path.weights.iter().any(|w| w.rows() != adjacency.len()) {
        bail!("path has a different number of series than the truth graph");
    }
    let opts = AucOptions {
        cutoff: a.cutoff,
        include_diagonal: !a.exclude_diagonal,
    };
    let supports = path_supports(&path, opts.cutoff);
    let auc = auc_from_supports(&adjacency, &supports, opts.include_diagonal)?;
    let roc = roc_points(&adjacency, &supports, opts.include_diagonal)?;
    let report = serde_json::json!({
        "model": path.kind,
        "auc": auc,
        "include_diagonal": opts.include_diagonal,
        "cutoff": opts.cutoff,
        "roc": roc.iter().map(|(f, t)| [f, t]).collect::<Vec<_>>(),
    });
    write_json(&report, create(out, "auc.json")?)?;
    Ok(())
}

fn cmd_bench(a: &BenchArgs, seed: u64, out: &Path) -> Result<()> {
    let cfg = BenchConfig {
        dims: a.dims.clone(),
        m: a.m,
        reps: a.reps,
        sd: a.sd,
        seed,
        qp_max_dim: a.qp_max_dim,
        qp_reps: None,
    };
    for &d in &cfg.dims {
        let n = cfg.m + d * cfg.m * cfg.m;
        if n > cfg.qp_max_dim {
            eprintln!("notice: d={d} has {n} variables, above the QP cap {}; QP skipped", cfg.qp_max_dim);
        }
    }
    let rows = bench_projection(&cfg)?;
    let mut w = csv::Writer::from_writer(create(out, "bench.csv")?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_export(a: &ExportArgs, format: Format, out: &Path) -> Result<()> {
    let records: Vec<ModelRecord> = read_json(open(&a.models)?)?;
    let d = records
        .first()
        .map(|r| r.gamma.len())
        .context("model file has no models")?;
    let names = match &a.labels {
        Some(p) => {
            let map: LabelMap = read_json(open(p)?)?;
            if map.series.len() != d {
                bail!("label map has {} series, models have {d}", map.series.len());
            }
            map.names()
        }
        None => default_names(d),
    };
    let graph = graph_from_records(&records, d, a.threshold)?;
    write_graph(&graph, &names, format, out)
}

fn cmd_experiment(a: &ExperimentArgs, seed: u64, out: &Path) -> Result<()> {
    let mut cfg = ExperimentConfig::new(a.regime.regime(a.delta), a.d, a.m, a.t, a.reps, seed);
    if let Some(m) = &a.methods {
        cfg.methods = m.clone();
    }
    cfg.n_lambdas = a.n_lambdas;
    cfg.include_diagonal = !a.exclude_diagonal;
    let rows = run_experiment(&cfg)?;
    write_experiment_csv(&rows, create(out, "experiment.csv")?)?;
    write_summary_json(&summarize(&rows), create(out, "summary.json")?)?;
    Ok(())
}
