use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis};
use serde_json::{json, Value};

use wgflow::bench::{field_errors, Scenario};
use wgflow::datasets::{
    bench_mixture, default_header, gen_gaussian, gen_mixture, gen_s_shape, gen_subspace5d, mcar_mask, mean_impute, parse_mixture,
    read_csv, write_csv_to, Link,
};
use wgflow::flow::{adapt, impute, rmse_on, run_flow, AdaptConfig, FieldSource, FlowConfig, ImputeConfig, SigmaPolicy};
use wgflow::local_linear::fit_batch;
use wgflow::selection::{default_candidates, select_bandwidth};
use wgflow::subspace::{SubspaceInit, SubspaceOptions};
use wgflow::{nw_velocity, BuiltinScore, Divergence, Error, FitOptions, SampleSet, Solver};

#[derive(Parser)]
#[command(name = "wgflow", version, about = "Velocity-field estimation and particle flows for f-divergences")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Local-linear or Nadaraya-Watson field at query points.
    Estimate(EstimateArgs),
    /// Euler particle flow towards a target sample.
    Flow(FlowArgs),
    /// Fill empty CSV cells by the missing-data flow.
    Impute(ImputeArgs),
    /// Transport a labelled source set towards a target set.
    Adapt(AdaptArgs),
    /// Cross-validated bandwidth selection; prints the report as JSON.
    Select(SelectArgs),
    /// Field-error table of LL, NW and KDE on named scenarios.
    Bench(BenchArgs),
    /// Write a synthetic data set.
    Gen(GenArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random draw of the run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-query work (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write run metrics as JSON to this path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// File of `key = value` lines used as default flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Newton,
    Adam,
}

#[derive(Args, Clone)]
struct FitArgs {
    /// Bound on |log r| fed to exponential conjugates.
    #[arg(long, default_value_t = 30.0)]
    clamp: f64,
    #[arg(long, value_enum, default_value_t = SolverArg::Newton)]
    solver: SolverArg,
    /// Iteration cap of the Adam solver.
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
}

impl FitArgs {
    fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            clamp: self.clamp,
            solver: match self.solver {
                SolverArg::Newton => Solver::Newton,
                SolverArg::Adam => Solver::Adam,
            },
            max_iters: self.max_iters,
            tol: self.tol,
            learning_rate: self.learning_rate,
            seed,
            ..FitOptions::default()
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Ll,
    Nw,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, value_enum, default_value_t = Method::Ll)]
    method: Method,
    /// Field divergence: fkl, bkl, pearson or neyman.
    #[arg(long, default_value = "bkl")]
    div: String,
    /// CSV sample of the target p (required for ll).
    #[arg(short = 'p', long)]
    target: Option<PathBuf>,
    /// CSV sample of the current distribution q.
    #[arg(short = 'q', long)]
    particles: PathBuf,
    /// CSV of query points (default: the q sample).
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Built-in target score for nw: `gauss <mu> <sd>` or `mixture w:mu:sd,...`.
    #[arg(long)]
    score: Option<String>,
    /// Bandwidth: a number, `median` or `cv`.
    #[arg(long, default_value = "cv")]
    sigma: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FlowArgs {
    /// CSV sample of the target p.
    #[arg(short = 'p', long)]
    target: PathBuf,
    /// CSV of initial particles.
    #[arg(short = 'q', long)]
    init: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Ll)]
    method: Method,
    #[arg(long, default_value = "bkl")]
    div: String,
    /// Built-in target score, required for nw.
    #[arg(long)]
    score: Option<String>,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Bandwidth policy: a number, `median` or `cv`.
    #[arg(long, default_value = "cv")]
    sigma: String,
    /// Iterations between cross-validated bandwidth refreshes.
    #[arg(long, default_value_t = 10)]
    cv_every: usize,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    /// Skip the held-out KL monitor.
    #[arg(long)]
    no_monitor: bool,
    #[arg(long, default_value_t = 1)]
    monitor_every: usize,
    #[arg(long, default_value_t = 2)]
    monitor_folds: usize,
    /// Record particles every k iterations into --trajectory.
    #[arg(long, requires = "trajectory")]
    snapshot_every: Option<usize>,
    /// Trajectory CSV (long format: iter, particle, coordinates).
    #[arg(long, requires = "snapshot_every")]
    trajectory: Option<PathBuf>,
    /// Run the flow in a learned m-dimensional linear feature space.
    #[arg(long)]
    subspace: Option<usize>,
    /// Outer iterations of the feature-map search.
    #[arg(long, default_value_t = 20)]
    subspace_iters: usize,
    /// Feature-map initialisation: moments, field or random.
    #[arg(long, default_value = "moments")]
    subspace_init: String,
    /// Where to write the learned d×m feature map.
    #[arg(long, requires = "subspace")]
    subspace_out: Option<PathBuf>,
    /// Final particles CSV.
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ImputeArgs {
    /// CSV with empty cells for missing values.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value = "fkl")]
    div: String,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value = "median")]
    sigma: String,
    #[arg(long, default_value_t = 10)]
    cv_every: usize,
    /// Complete CSV used only to report RMSE on the missing cells.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AdaptArgs {
    /// Labelled source CSV.
    #[arg(long)]
    source: PathBuf,
    /// Target CSV; a label column, if present, is used for evaluation only.
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Scale of the one-hot label embedding; 0 aligns marginals only.
    #[arg(long, default_value_t = 1.0)]
    label_scale: f64,
    #[arg(long, default_value = "median")]
    sigma: String,
    #[arg(long, default_value_t = 10)]
    cv_every: usize,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(short = 'p', long)]
    target: PathBuf,
    #[arg(short = 'q', long)]
    particles: PathBuf,
    #[arg(long, default_value = "bkl")]
    div: String,
    /// Comma-separated bandwidths (default: multiples of the median).
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    /// gauss, mixture or all.
    #[arg(long, default_value = "all")]
    scenario: String,
    /// Sample sizes per set.
    #[arg(long, value_delimiter = ',', default_value = "100,1000")]
    n: Vec<usize>,
    /// Number of seeds, counted from --seed.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Error table CSV (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Gauss,
    Mixture,
    SShape,
    Subspace5d,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    dist: Dist,
    #[arg(long)]
    n: usize,
    /// Gaussian mean, comma-separated (its length sets the dimension).
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    mean: String,
    #[arg(long, default_value_t = 1.0)]
    sd: f64,
    /// Mixture components `w:mu:sd,...` (default: the three-mode bench mixture).
    #[arg(long)]
    components: Option<String>,
    /// Noise level of the S shape.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Link of the 5-d construction: sin or cos.
    #[arg(long, default_value = "sin")]
    link: String,
    /// Blank out each cell independently with this probability.
    #[arg(long, default_value_t = 0.0)]
    missing_rate: f64,
    /// Append the mixture component as a `label` column.
    #[arg(long)]
    labels: bool,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// Exit status 2 for bad input or arguments, 1 for failures while running.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Files produced by a run, written only once the whole run has succeeded.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn csv(&mut self, path: &Path, header: &[String], data: ndarray::ArrayView2<f64>) -> CliResult<()> {
        let mut buf = Vec::new();
        write_csv_to(&mut buf, header, data)?;
        self.files.push((path.to_path_buf(), buf));
        Ok(())
    }

    fn metrics(&mut self, common: &Common, command: &str, config: Value, records: Value, summary: Value) -> CliResult<()> {
        if let Some(path) = &common.metrics {
            let doc = json!({
                "command": command,
                "config": config,
                "seed": common.seed,
                "records": records,
                "summary": summary,
            });
            let text = serde_json::to_vec_pretty(&doc).map_err(|e| Failure::Runtime(e.to_string()))?;
            self.files.push((path.clone(), text));
        }
        Ok(())
    }

    fn commit(self) -> CliResult<()> {
        for (path, bytes) in self.files {
            std::fs::write(&path, bytes).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn read_input(path: &Path) -> CliResult<wgflow::datasets::Table> {
    read_csv(path).map_err(|e| match e {
        Error::Io(_) => usage(e.to_string()),
        e => usage(format!("{}: {e}", path.display())),
    })
}

fn read_complete(path: &Path) -> CliResult<(Vec<String>, SampleSet)> {
    let t = read_input(path)?;
    if t.has_missing() {
        return Err(usage(format!("{}: empty cells are only allowed for impute", path.display())));
    }
    Ok((t.header, t.data))
}

fn parse_div(s: &str) -> CliResult<Divergence> {
    s.parse().map_err(|e: Error| usage(e.to_string()))
}

fn parse_sigma(s: &str, cv_every: usize) -> CliResult<SigmaPolicy> {
    match s.parse::<SigmaPolicy>().map_err(|e| usage(e.to_string()))? {
        SigmaPolicy::Cv { .. } => Ok(SigmaPolicy::Cv { every: cv_every }),
        other => Ok(other),
    }
}

fn parse_score(s: Option<&str>, dim: usize) -> CliResult<BuiltinScore> {
    let s = s.ok_or_else(|| usage("--method nw needs --score 'gauss <mu> <sd>' or 'mixture <spec>'"))?;
    let score: BuiltinScore = s.parse().map_err(|e: Error| usage(e.to_string()))?;
    Ok(score.with_dim(dim)?)
}

fn same_width(what: &str, a: &SampleSet, b: &SampleSet) -> CliResult<()> {
    if a.dim() != b.dim() {
        return Err(usage(format!("{what}: {} columns vs {} columns", a.dim(), b.dim())));
    }
    Ok(())
}

fn sigma_value(policy: &SigmaPolicy) -> Value {
    match policy {
        SigmaPolicy::Fixed(s) => json!(s),
        SigmaPolicy::Median => json!("median"),
        SigmaPolicy::Cv { every } => json!({ "cv_every": every }),
    }
}

fn estimate(a: EstimateArgs) -> CliResult<Outputs> {
    let div = parse_div(&a.div)?;
    let (header, dq) = read_complete(&a.particles)?;
    let queries = match &a.queries {
        Some(p) => read_complete(p)?.1,
        None => dq.clone(),
    };
    same_width("queries and particles", &queries, &dq)?;
    let dp = match &a.target {
        Some(p) => {
            let dp = read_complete(p)?.1;
            same_width("target and particles", &dp, &dq)?;
            Some(dp)
        }
        None => None,
    };
    let opts = a.fit.options(a.common.seed);
    let sigma = match a.sigma.as_str() {
        "median" | "cv" => {
            let dp = dp.as_ref().ok_or_else(|| usage("--sigma median|cv needs --target"))?;
            if a.sigma == "median" {
                wgflow::kernel::pooled_median_bandwidth(dp, &dq, wgflow::selection::MEDIAN_POINTS)?
            } else {
                select_bandwidth(dp, &dq, div, &default_candidates(dp, &dq)?, a.folds, a.common.seed)?.chosen
            }
        }
        other => match parse_sigma(other, 1)? {
            SigmaPolicy::Fixed(s) => s,
            _ => unreachable!("named policies handled above"),
        },
    };
    let d = dq.dim();
    let mut cols: Vec<String> = header.clone();
    cols.extend(header.iter().map(|h| format!("w_{h}")));
    let table = match a.method {
        Method::Ll => {
            let dp = dp.as_ref().ok_or_else(|| usage("--method ll needs --target"))?;
            let fits = fit_batch(&queries, dp, &dq, div, &FitOptions { sigma, ..opts })?;
            cols.push("b".into());
            cols.push("objective".into());
            let mut t = Array2::zeros((queries.len(), 2 * d + 2));
            for (j, f) in fits.iter().enumerate() {
                for c in 0..d {
                    t[[j, c]] = f.query[c];
                    t[[j, d + c]] = f.w[c];
                }
                t[[j, 2 * d]] = f.b;
                t[[j, 2 * d + 1]] = f.objective_value;
            }
            t
        }
        Method::Nw => {
            if div != Divergence::BackwardKl {
                return Err(usage("--method nw estimates the bkl field only"));
            }
            let score = parse_score(a.score.as_deref(), d)?;
            let field = nw_velocity(&dq, &score, &queries, sigma)?;
            ndarray::concatenate(Axis(1), &[queries.data(), field.view()]).expect("same row count")
        }
    };
    let mut out = Outputs::default();
    out.csv(&a.output, &cols, table.view())?;
    let config = json!({
        "method": if a.method == Method::Ll { "ll" } else { "nw" },
        "div": div.to_string(),
        "sigma": a.sigma,
        "queries": queries.len(),
    });
    out.metrics(&a.common, "estimate", config, json!([]), json!({ "sigma": sigma }))?;
    Ok(out)
}

fn flow(a: FlowArgs) -> CliResult<Outputs> {
    let started = Instant::now();
    let div = parse_div(&a.div)?;
    let (header, q0) = read_complete(&a.init)?;
    let dp = read_complete(&a.target)?.1;
    same_width("target and initial particles", &dp, &q0)?;
    let sigma = parse_sigma(&a.sigma, a.cv_every)?;
    let init = match a.subspace_init.as_str() {
        "moments" => SubspaceInit::Moments,
        "field" => SubspaceInit::FieldOuterProduct,
        "random" => SubspaceInit::Random,
        other => return Err(usage(format!("unknown --subspace-init '{other}' (expected moments, field or random)"))),
    };
    let config = FlowConfig {
        field: div,
        iters: a.iters,
        eta: a.eta,
        sigma: sigma.clone(),
        monitor: !a.no_monitor,
        monitor_every: a.monitor_every,
        monitor_folds: a.monitor_folds,
        cv_folds: a.cv_folds,
        snapshot_every: a.snapshot_every,
        fit: a.fit.options(a.common.seed),
        subspace: SubspaceOptions {
            init,
            ..SubspaceOptions::default()
        },
        seed: a.common.seed,
    };
    let score;
    let source = match (a.method, a.subspace) {
        (Method::Nw, Some(_)) => return Err(usage("--subspace works with --method ll only")),
        (Method::Nw, None) => {
            score = parse_score(a.score.as_deref(), dp.dim())?;
            FieldSource::NadarayaWatson(&score)
        }
        (Method::Ll, Some(m)) => FieldSource::Subspace {
            m,
            outer_iters: a.subspace_iters,
        },
        (Method::Ll, None) => FieldSource::LocalLinear,
    };
    let state = run_flow(&dp, &q0, &config, source)?;

    let mut out = Outputs::default();
    out.csv(&a.output, &header, state.particles.view())?;
    if let (Some(path), Some(_)) = (&a.trajectory, a.snapshot_every) {
        let n = q0.len();
        let d = q0.dim();
        let mut rows = Array2::zeros((state.trajectory.len() * n, d + 2));
        for (k, (t, x)) in state.trajectory.iter().enumerate() {
            for i in 0..n {
                let r = k * n + i;
                rows[[r, 0]] = *t as f64;
                rows[[r, 1]] = i as f64;
                for c in 0..d {
                    rows[[r, 2 + c]] = x[[i, c]];
                }
            }
        }
        let mut cols = vec!["iter".to_string(), "particle".to_string()];
        cols.extend(header.iter().cloned());
        out.csv(path, &cols, rows.view())?;
    }
    if let (Some(path), Some(map)) = (&a.subspace_out, &state.feature_map) {
        let cols: Vec<String> = (0..map.output_dim()).map(|j| format!("s{j}")).collect();
        out.csv(path, &cols, map.matrix())?;
    }
    let monitor: BTreeMap<usize, f64> = state.history.iter().copied().collect();
    let records: Vec<Value> = (0..=state.t)
        .map(|t| {
            json!({
                "iter": t,
                "sigma": state.sigmas.get(t),
                "monitor": monitor.get(&t),
            })
        })
        .collect();
    let summary = json!({
        "initial_monitor": state.history.first().map(|h| h.1),
        "final_monitor": state.history.last().map(|h| h.1),
        "iterations": state.t,
        "warnings": state.warnings,
        "feature_map_dim": state.feature_map.as_ref().map(|m| m.output_dim()),
        "elapsed_seconds": started.elapsed().as_secs_f64(),
    });
    let cfg = json!({
        "method": if a.method == Method::Ll { "ll" } else { "nw" },
        "div": div.to_string(),
        "iters": a.iters,
        "eta": a.eta,
        "sigma": sigma_value(&sigma),
        "monitor": !a.no_monitor,
        "monitor_every": a.monitor_every,
        "subspace": a.subspace,
        "particles": q0.len(),
        "target": dp.len(),
    });
    out.metrics(&a.common, "flow", cfg, json!(records), summary)?;
    Ok(out)
}

fn impute_cmd(a: ImputeArgs) -> CliResult<Outputs> {
    let div = parse_div(&a.div)?;
    let table = read_input(&a.input)?;
    let sigma = parse_sigma(&a.sigma, a.cv_every)?;
    let config = ImputeConfig {
        field: div,
        iters: a.iters,
        eta: a.eta,
        sigma: sigma.clone(),
        fit: a.fit.options(a.common.seed),
        seed: a.common.seed,
        ..ImputeConfig::default()
    };
    let result = impute(&table.data, &table.mask, &config)?;
    let mut summary = json!({ "missing": table.mask.iter().filter(|m| !**m).count() });
    if let Some(path) = &a.truth {
        let (_, truth) = read_complete(path)?;
        if truth.data().dim() != table.data.data().dim() {
            return Err(usage(format!("{}: shape differs from the input", path.display())));
        }
        let missing = table.mask.mapv(|m| !m);
        let baseline = mean_impute(&table.data, &table.mask)?;
        summary["rmse"] = json!(rmse_on(result.imputed.data(), truth.data(), &missing));
        summary["mean_imputation_rmse"] = json!(rmse_on(baseline.data(), truth.data(), &missing));
    }
    let mut out = Outputs::default();
    out.csv(&a.output, &table.header, result.imputed.data())?;
    let cfg = json!({ "div": div.to_string(), "iters": a.iters, "eta": a.eta, "sigma": sigma_value(&sigma) });
    out.metrics(&a.common, "impute", cfg, json!(result.records), summary)?;
    Ok(out)
}

/// Splits the label column off a table.
fn labelled(path: &Path, name: &str, required: bool) -> CliResult<(Vec<String>, SampleSet, Option<Vec<usize>>)> {
    let (header, data) = read_complete(path)?;
    let Some(col) = header.iter().position(|h| h == name) else {
        if required {
            return Err(usage(format!("{}: no '{name}' column", path.display())));
        }
        return Ok((header, data, None));
    };
    let mut labels = Vec::with_capacity(data.len());
    for (i, v) in data.data().column(col).iter().enumerate() {
        if *v < 0.0 || v.fract() != 0.0 {
            return Err(usage(format!("{}: row {} label {v} is not a class index", path.display(), i + 1)));
        }
        labels.push(*v as usize);
    }
    let keep: Vec<usize> = (0..header.len()).filter(|&c| c != col).collect();
    let features = data.data().select(Axis(1), &keep);
    let names = keep.iter().map(|&c| header[c].clone()).collect();
    Ok((names, SampleSet::new(features), Some(labels)))
}

fn adapt_cmd(a: AdaptArgs) -> CliResult<Outputs> {
    let (names, src, src_labels) = labelled(&a.source, &a.label_column, true)?;
    let (_, tgt, tgt_labels) = labelled(&a.target, &a.label_column, false)?;
    same_width("source and target features", &src, &tgt)?;
    let source = SampleSet::with_labels(src.data().to_owned(), src_labels.expect("required"))?;
    let sigma = parse_sigma(&a.sigma, a.cv_every)?;
    let config = AdaptConfig {
        iters: a.iters,
        eta: a.eta,
        label_scale: a.label_scale,
        sigma: sigma.clone(),
        fit: a.fit.options(a.common.seed),
        seed: a.common.seed,
        ..AdaptConfig::default()
    };
    let result = adapt(&source, &tgt, tgt_labels.as_deref(), &config)?;
    let labels = result.transported.labels().expect("labels carried");
    let mut table = result.transported.data().to_owned();
    table.push_column(ndarray::Array1::from_iter(labels.iter().map(|&l| l as f64)).view()).expect("row count");
    let mut cols = names;
    cols.push(a.label_column.clone());
    let mut out = Outputs::default();
    out.csv(&a.output, &cols, table.view())?;
    let cfg = json!({ "iters": a.iters, "eta": a.eta, "label_scale": a.label_scale, "sigma": sigma_value(&sigma) });
    let summary = json!({ "accuracy_before": result.accuracy_before, "accuracy_after": result.accuracy_after });
    out.metrics(&a.common, "adapt", cfg, json!(result.records), summary)?;
    Ok(out)
}

fn select_cmd(a: SelectArgs) -> CliResult<Outputs> {
    let div = parse_div(&a.div)?;
    let dp = read_complete(&a.target)?.1;
    let dq = read_complete(&a.particles)?.1;
    same_width("target and particles", &dp, &dq)?;
    let cands = match a.candidates {
        Some(c) => c,
        None => default_candidates(&dp, &dq)?,
    };
    let report = select_bandwidth(&dp, &dq, div, &cands, a.folds, a.common.seed)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    let mut out = Outputs::default();
    let cfg = json!({ "div": div.to_string(), "folds": a.folds });
    out.metrics(&a.common, "select", cfg, json!([]), serde_json::to_value(&report).expect("serialisable"))?;
    Ok(out)
}

fn bench_cmd(a: BenchArgs) -> CliResult<Outputs> {
    let scenarios = match a.scenario.as_str() {
        "all" => vec![Scenario::Gauss, Scenario::Mixture],
        s => vec![s.parse::<Scenario>().map_err(|e| usage(e.to_string()))?],
    };
    let mut rows = Vec::new();
    for &sc in &scenarios {
        for &n in &a.n {
            for k in 0..a.seeds {
                rows.extend(field_errors(sc, n, a.common.seed + k, a.folds)?);
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut out = Outputs::default();
    match &a.output {
        Some(p) => out.files.push((p.clone(), bytes)),
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    let cfg = json!({ "scenario": a.scenario, "n": a.n, "seeds": a.seeds, "folds": a.folds });
    out.metrics(&a.common, "bench", cfg, json!(rows), json!({ "rows": rows.len() }))?;
    Ok(out)
}

fn gen(a: GenArgs) -> CliResult<Outputs> {
    let seed = a.common.seed;
    let set = match a.dist {
        Dist::Gauss => {
            let mean = a
                .mean
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("bad --mean entry '{v}'"))))
                .collect::<CliResult<Vec<f64>>>()?;
            gen_gaussian(&mean, a.sd, a.n, seed)?
        }
        Dist::Mixture => {
            let comps = match &a.components {
                Some(s) => parse_mixture(s)?,
                None => bench_mixture(),
            };
            gen_mixture(&comps, a.n, seed)?
        }
        Dist::SShape => gen_s_shape(a.n, a.noise, seed)?,
        Dist::Subspace5d => gen_subspace5d(a.link.parse::<Link>()?, a.n, seed),
    };
    let mut data = set.data().to_owned();
    let mask = mcar_mask(data.nrows(), data.ncols(), a.missing_rate, seed)?;
    for ((i, j), m) in mask.indexed_iter() {
        if !m {
            data[[i, j]] = f64::NAN;
        }
    }
    let mut header = default_header(data.ncols());
    if a.labels {
        let labels = set.labels().ok_or_else(|| usage("--labels applies to --dist mixture"))?;
        data.push_column(ndarray::Array1::from_iter(labels.iter().map(|&l| l as f64)).view()).expect("row count");
        header.push("label".into());
    }
    let mut out = Outputs::default();
    out.csv(&a.output, &header, data.view())?;
    Ok(out)
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Estimate(a) => &a.common,
        Command::Flow(a) => &a.common,
        Command::Impute(a) => &a.common,
        Command::Adapt(a) => &a.common,
        Command::Select(a) => &a.common,
        Command::Bench(a) => &a.common,
        Command::Gen(a) => &a.common,
    }
}

/// `key = value` lines become `--key=value` flags placed right after the
/// subcommand, so that flags given on the command line override them.
fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut injected = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key = value", path.display(), no + 1)))?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        match v {
            "true" => injected.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{k}={v}"))),
        }
    }
    let Some(sub) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(args);
    };
    let at = sub + 2;
    let mut out: Vec<OsString> = args[..at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

fn run() -> CliResult<()> {
    let args = expand_config(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(k) = common(&cli.command).threads {
        if k == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let outputs = match cli.command {
        Command::Estimate(a) => estimate(a)?,
        Command::Flow(a) => flow(a)?,
        Command::Impute(a) => impute_cmd(a)?,
        Command::Adapt(a) => adapt_cmd(a)?,
        Command::Select(a) => select_cmd(a)?,
        Command::Bench(a) => bench_cmd(a)?,
        Command::Gen(a) => gen(a)?,
    };
    outputs.commit()
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
