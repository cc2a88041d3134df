use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::batching::{ibs_boundaries_with_min, BatchMeans, EbsTracker, IbsTracker};
use crate::covariance::{ebs2b_estimate, ebs_estimate, ibs_estimate, lugsail_estimate, psd_project, CovEstimate, EstimatorKind};
use crate::dist::normal_quantile;
use crate::error::{Error, Result};
use crate::experiments::{
    fit_logistic, ks_distance, mean_model_bias_oracle, misclassification_table, qq_data, run_replications,
    write_long_csv, write_qq_csv, write_run, ClassificationConfig, ExperimentConfig, DEFAULT_IBS_SCALE,
};
use crate::linalg::Matrix;
use crate::models::{csv_split_reader, default_beta_star, gen_design, gen_stream, CsvSpec, DesignKind, ModelKind};
use crate::regions::{all_regions, classify_conservative, classify_plain, predict_prob_interval, RectRegion, RegionSet, SimultaneousOptions};
use crate::sgd::{run_asgd, LearningRateSchedule};

const AFTER_HELP: &str = "\
Every subcommand accepts --config FILE. The file holds flat `key = value` lines
(TOML); each key is a long flag name of that subcommand (`_` and `-` are
interchangeable, lists are arrays or comma-separated strings). Flags given on
the command line override the file.

Exit status: 0 success, 2 usage or configuration error, 3 data error.
Worker threads: RAYON_NUM_THREADS.";

#[derive(Parser, Debug)]
#[command(name = "sgd-infer", version, about = "Covariance estimation and confidence regions for averaged SGD", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo replications on a synthetic model; writes long-form metrics.
    Simulate(SimulateArgs),
    /// Covariance estimate from a stored iterate chain or from a labelled CSV.
    Estimate(EstimateArgs),
    /// Ellipsoid and the three rectangles from a saved estimate.
    Regions(RegionsArgs),
    /// Probability intervals and plain/conservative classes from a saved fit.
    Predict(PredictArgs),
    /// Approximate finite-sample bias on the mean model.
    BiasOracle(BiasArgs),
    /// QQ table of pooled batch-mean components from one synthetic run.
    Qq(QqArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat key = value file with defaults for the other flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (a directory for `simulate`); stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long, value_enum)]
    design: Option<DesignKind>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Largest sample size (averaged iterates).
    #[arg(long, alias = "n-max")]
    n: Option<u64>,
    #[arg(long, alias = "replications")]
    reps: Option<usize>,
    #[arg(long, alias = "eta0")]
    eta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Batch-size exponent; default (1+alpha)/2.
    #[arg(long)]
    beta: Option<f64>,
    /// Batch-size constant.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    burn_in: Option<u64>,
    /// Comma-separated sample sizes at which to evaluate.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<u64>>,
    /// Significance level of every region.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    estimators: Option<Vec<EstimatorKind>>,
    /// First IBS batch size; default picks one giving d+1 batches.
    #[arg(long)]
    ibs_scale: Option<f64>,
    /// Put true coefficients on 0..1 inclusive instead of the interior grid.
    #[arg(long, value_name = "BOOL")]
    beta_star_endpoints: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    theta0: Option<Vec<f64>>,
    #[arg(long, value_name = "BOOL")]
    rectangles: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    oracle: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    psd_project: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    parallel: Option<bool>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with one iterate per line (optional header).
    #[arg(long, value_name = "FILE", conflicts_with = "data", required_unless_present = "data")]
    iterates: Option<PathBuf>,
    /// Labelled CSV with a 0/1 response; fits logistic regression.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lugsail")]
    estimator: EstimatorKind,
    /// Fixed batch size instead of the doubling rule.
    #[arg(long)]
    b: Option<u64>,
    #[arg(long, default_value_t = 0.1)]
    c: f64,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0.51)]
    alpha: f64,
    #[arg(long)]
    ibs_scale: Option<f64>,
    #[arg(long, requires = "data")]
    response: Option<String>,
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long, value_name = "BOOL")]
    intercept: Option<bool>,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    burn_in: Option<u64>,
    /// Training rows used for the maximum-likelihood start.
    #[arg(long)]
    warm_start: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct RegionsArgs {
    #[command(flatten)]
    common: Common,
    /// JSON written by `estimate`.
    #[arg(long, value_name = "FILE")]
    estimate: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    p: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// JSON written by `estimate`.
    #[arg(long, value_name = "FILE")]
    fit: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    p: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    cutoffs: Vec<f64>,
    /// One line per observation even when the fit carries a train/test split.
    #[arg(long)]
    rows: bool,
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long, value_name = "BOOL")]
    intercept: Option<bool>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct BiasArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    n: Vec<u64>,
    #[arg(long, default_value_t = 0.51)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    c: f64,
    #[arg(long)]
    beta: Option<f64>,
    /// Scale constant of the iterate autocovariance.
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct QqArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "linear")]
    model: ModelKind,
    #[arg(long, value_enum, default_value = "identity")]
    design: DesignKind,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 0.51)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    c: f64,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    burn_in: u64,
    /// `ebs` or `ibs`.
    #[arg(long, value_enum, default_value = "ebs")]
    estimator: EstimatorKind,
    #[arg(long)]
    ibs_scale: Option<f64>,
    /// Center at the batch-means average instead of the true coefficients (EBS only).
    #[arg(long)]
    center: bool,
}

/// Fitted coefficients and covariance as exchanged between subcommands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub theta_hat: Vec<f64>,
    /// Averaged iterates behind `theta_hat`.
    pub n: u64,
    pub estimate: CovEstimate<f64>,
    /// Split used for fitting, when the fit came from a CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<CsvSpec>,
}

/// Runs the command line and returns the process exit status.
pub fn cli_main(argv: Vec<String>) -> i32 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                3
            } else {
                2
            }
        }
    }
}

/// Replaces `--config FILE` with the file's entries as flags placed right
/// after the subcommand, so explicit flags later on the line win.
fn expand_config(mut argv: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => {
            let p = p.to_string();
            argv.remove(pos);
            p
        }
        None => {
            if pos + 1 >= argv.len() {
                return Err(Error::InvalidParameter("--config needs a file".into()));
            }
            argv.remove(pos);
            argv.remove(pos)
        }
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::InvalidParameter(format!("cannot read config {path}: {e}")))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidParameter(format!("config {path}: {e}")))?;
    let mut flags = Vec::new();
    for (key, value) in table {
        let v = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            toml::Value::Array(items) => items
                .into_iter()
                .map(|i| match i {
                    toml::Value::String(s) => Ok(s),
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::Float(f) => Ok(f.to_string()),
                    other => Err(Error::InvalidParameter(format!("config key {key}: unsupported list item {other}"))),
                })
                .collect::<Result<Vec<_>>>()?
                .join(","),
            other => {
                return Err(Error::InvalidParameter(format!("config key {key}: unsupported value {other}")));
            }
        };
        flags.push(format!("--{}={v}", key.replace('_', "-")));
    }
    // argv[0] is the program, argv[1] the subcommand.
    let at = argv.len().min(2);
    argv.splice(at..at, flags);
    Ok(argv)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Regions(a) => regions(a),
        Command::Predict(a) => predict(a),
        Command::BiasOracle(a) => bias_oracle(a),
        Command::Qq(a) => qq(a),
    }
}

fn with_output(out: &Option<PathBuf>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut w = io::BufWriter::new(fs::File::create(path)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn simulate_config(a: &SimulateArgs) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    macro_rules! set {
        ($($field:ident <- $flag:expr),* $(,)?) => {
            $(if let Some(v) = $flag.clone() { cfg.$field = v; })*
        };
    }
    set!(
        model <- a.model,
        design <- a.design,
        d <- a.d,
        rho <- a.rho,
        n_max <- a.n,
        replications <- a.reps,
        eta0 <- a.eta,
        alpha <- a.alpha,
        c <- a.c,
        burn_in <- a.burn_in,
        checkpoints <- a.checkpoints,
        p <- a.p,
        estimators <- a.estimators,
        seed <- a.common.seed,
        beta_star_endpoints <- a.beta_star_endpoints,
        rectangles <- a.rectangles,
        oracle <- a.oracle,
        psd_project <- a.psd_project,
        parallel <- a.parallel,
    );
    if a.beta.is_some() {
        cfg.beta = a.beta;
    }
    if a.ibs_scale.is_some() {
        cfg.ibs_scale = a.ibs_scale;
    }
    if a.theta0.is_some() {
        cfg.theta0 = a.theta0.clone();
    }
    if cfg.model == ModelKind::Mean && a.d.is_none() {
        cfg.d = 1;
    }
    cfg
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = simulate_config(&a);
    cfg.validate()?;
    let result = match a.precision {
        Precision::F64 => run_replications::<f64>(&cfg)?,
        Precision::F32 => run_replications::<f32>(&cfg)?,
    };
    match &a.common.out {
        Some(dir) => write_run(&result, dir),
        None => write_long_csv(&result.rows, io::stdout().lock()),
    }
}

fn data_error(row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Data {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Numeric rows of a header-optional CSV; a first line that does not parse is
/// taken as the header.
fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, usize> = rec
            .iter()
            .enumerate()
            .map(|(j, s)| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(j))
            .collect();
        match parsed {
            Ok(v) => {
                if let Some(first) = rows.first() {
                    if first.len() != v.len() {
                        return Err(data_error(i + 1, v.len(), format!("expected {} columns", first.len())));
                    }
                }
                rows.push(v);
            }
            Err(_) if i == 0 => {}
            Err(j) => return Err(data_error(i + 1, j, format!("not a finite number: {:?}", &rec[j]))),
        }
    }
    if rows.is_empty() {
        return Err(Error::Degenerate("no iterates".into()));
    }
    Ok(rows)
}

fn estimate_from_chain(chain: &[Vec<f64>], a: &EstimateArgs) -> Result<CovEstimate<f64>> {
    let d = chain[0].len();
    let n = chain.len() as u64;
    if a.estimator == EstimatorKind::Ibs {
        let part = ibs_boundaries_with_min(n, a.alpha, a.ibs_scale.unwrap_or(DEFAULT_IBS_SCALE), d + 1)?;
        return ibs_estimate(&part.batch_means(chain)?);
    }
    let bm = match a.b {
        Some(b) => BatchMeans::from_chain(chain, b)?,
        None => {
            let beta = a.beta.unwrap_or((1.0 + a.alpha) / 2.0);
            let mut t = EbsTracker::<f64>::doubling(d, a.c, beta)?;
            for x in chain {
                t.push(x)?;
            }
            t.batch_means()?
        }
    };
    match a.estimator {
        EstimatorKind::Ebs => ebs_estimate(&bm),
        EstimatorKind::Ebs2b => ebs2b_estimate(&bm),
        _ => lugsail_estimate(&bm),
    }
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let fit = if let Some(path) = &a.iterates {
        let chain = read_numeric_rows(path)?;
        let d = chain[0].len();
        let mut theta_hat = vec![0.0; d];
        for x in &chain {
            theta_hat.iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
        theta_hat.iter_mut().for_each(|m| *m /= chain.len() as f64);
        FitFile {
            theta_hat,
            n: chain.len() as u64,
            estimate: estimate_from_chain(&chain, &a)?,
            data: None,
        }
    } else {
        let path = a.data.as_ref().expect("clap enforces --iterates or --data");
        let response = a
            .response
            .clone()
            .ok_or_else(|| Error::InvalidParameter("--data needs --response".into()))?;
        let mut spec = CsvSpec::new(response);
        spec.features = a.features.clone();
        spec.train_fraction = a.train_fraction;
        spec.seed = a.common.seed.unwrap_or(0);
        spec.intercept = a.intercept.unwrap_or(false);
        let split = csv_split_reader::<f64, _>(fs::File::open(path)?, &spec)?;
        let defaults = ClassificationConfig::default();
        let cfg = ClassificationConfig {
            eta0: a.eta.unwrap_or(defaults.eta0),
            alpha: a.alpha,
            c: a.c,
            beta: a.beta,
            warm_start: a.warm_start.unwrap_or(defaults.warm_start),
            burn_in: a.burn_in.unwrap_or(defaults.burn_in),
            estimator: a.estimator,
            ..defaults
        };
        let model = fit_logistic(split.train.data(), &cfg)?;
        spec.features = Some(
            split
                .feature_names
                .iter()
                .filter(|f| *f != "(intercept)")
                .cloned()
                .collect(),
        );
        FitFile {
            theta_hat: model.theta_hat,
            n: model.n,
            estimate: model.estimate,
            data: Some(spec),
        }
    };
    with_output(&a.common.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &fit)?;
        writeln!(w)?;
        Ok(())
    })
}

fn load_fit(path: &Path) -> Result<FitFile> {
    let fit: FitFile = serde_json::from_reader(io::BufReader::new(fs::File::open(path)?))?;
    let d = fit.theta_hat.len();
    if fit.estimate.matrix.rows() != d || fit.estimate.matrix.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: fit.estimate.matrix.rows(),
        });
    }
    Ok(fit)
}

/// Estimate usable for regions: indefinite lugsail output is projected.
fn usable_sigma(est: &CovEstimate<f64>) -> Result<Matrix<f64>> {
    if est.indefinite {
        Ok(psd_project(est)?.matrix)
    } else {
        Ok(est.matrix.clone())
    }
}

fn write_rect_line(w: &mut dyn Write, r: &RectRegion) -> Result<()> {
    let name = format!("{:?}", r.kind).to_lowercase();
    let prob = r.probability.map_or("-".to_string(), |v| format!("{v:.6}"));
    write!(w, "{name:<14}{:>12.6}{prob:>12}", r.z)?;
    for h in &r.halfwidths {
        write!(w, "{h:>14.6e}")?;
    }
    writeln!(w)?;
    Ok(())
}

fn write_region_table(w: &mut dyn Write, set: &RegionSet) -> Result<()> {
    write!(w, "{:<14}{:>12}{:>12}", "region", "critical", "prob")?;
    for i in 0..set.uncorrected.halfwidths.len() {
        write!(w, "{:>14}", format!("halfwidth_{}", i + 1))?;
    }
    writeln!(w)?;
    let e = &set.ellipsoid;
    writeln!(w, "{:<14}{:>12.6}{:>12.6}", "ellipsoid", e.threshold, 1.0 - e.p)?;
    for r in [&set.uncorrected, &set.bonferroni, &set.simultaneous] {
        write_rect_line(w, r)?;
    }
    writeln!(w, "volume ratio (simultaneous / ellipsoid) {:.6}", set.volume_ratio)?;
    Ok(())
}

fn regions(a: RegionsArgs) -> Result<()> {
    let fit = load_fit(&a.estimate)?;
    let sigma = usable_sigma(&fit.estimate)?;
    let mut opts = SimultaneousOptions::default();
    if let Some(seed) = a.common.seed {
        opts.mvn.seed = seed;
    }
    let set = all_regions(&fit.theta_hat, &sigma, fit.n, a.p, &opts)?;
    with_output(&a.common.out, |w| match a.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &set)?;
            writeln!(w)?;
            Ok(())
        }
        Format::Table => write_region_table(w, &set),
    })
}

/// Covariate rows for per-observation output; the response column, if named,
/// is excluded from the default feature set.
fn read_features(path: &Path, features: Option<&[String]>, response: Option<&str>, intercept: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let names: Vec<String> = match features {
        Some(f) => f.to_vec(),
        None => headers.iter().filter(|h| Some(h.as_str()) != response).cloned().collect(),
    };
    let cols = names
        .iter()
        .map(|n| headers.iter().position(|h| h == n).ok_or_else(|| Error::MissingColumn(n.clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut x = Vec::with_capacity(cols.len() + 1);
        if intercept {
            x.push(1.0);
        }
        for (&c, name) in cols.iter().zip(&names) {
            let v = rec
                .get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data {
                    row: i + 1,
                    column: name.clone(),
                    message: "not a finite number".into(),
                })?;
            x.push(v);
        }
        out.push(x);
    }
    Ok(out)
}

fn predict(a: PredictArgs) -> Result<()> {
    let fit = load_fit(&a.fit)?;
    let sigma = usable_sigma(&fit.estimate)?;
    let z = normal_quantile(1.0 - a.p / 2.0)?;
    if let (Some(spec), false) = (&fit.data, a.rows) {
        let mut spec = spec.clone();
        if let Some(seed) = a.common.seed {
            spec.seed = seed;
        }
        let split = csv_split_reader::<f64, _>(fs::File::open(&a.data)?, &spec)?;
        let table = misclassification_table(&split.test, &fit.theta_hat, &sigma, fit.n, a.p, &a.cutoffs)?;
        return with_output(&a.common.out, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["q", "plain_error", "conservative_error", "plain_positive", "conservative_positive", "test_rows"])?;
            for r in &table {
                out.write_record([
                    r.q.to_string(),
                    format!("{:.10e}", r.plain_error),
                    format!("{:.10e}", r.conservative_error),
                    r.plain_positive.to_string(),
                    r.conservative_positive.to_string(),
                    split.test.len().to_string(),
                ])?;
            }
            out.flush()?;
            Ok(())
        });
    }
    let spec = fit.data.as_ref();
    let features = a.features.clone().or_else(|| spec.and_then(|s| s.features.clone()));
    let response = a.response.clone().or_else(|| spec.map(|s| s.response.clone()));
    let intercept = a.intercept.or(spec.map(|s| s.intercept)).unwrap_or(false);
    let xs = read_features(&a.data, features.as_deref(), response.as_deref(), intercept)?;
    with_output(&a.common.out, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["row".to_string(), "p_hat".into(), "se".into(), "lower".into(), "upper".into()];
        for q in &a.cutoffs {
            header.push(format!("plain_{q}"));
            header.push(format!("conservative_{q}"));
        }
        out.write_record(&header)?;
        for (i, x) in xs.iter().enumerate() {
            let pi = predict_prob_interval(x, &fit.theta_hat, &sigma, fit.n, a.p)?;
            let mut rec = vec![
                (i + 1).to_string(),
                format!("{:.10e}", pi.p_hat),
                format!("{:.10e}", pi.se),
                format!("{:.10e}", pi.lower),
                format!("{:.10e}", pi.upper),
            ];
            for &q in &a.cutoffs {
                rec.push(classify_plain(pi.p_hat, q).to_string());
                rec.push(classify_conservative(pi.p_hat, pi.se, q, z).to_string());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })
}

fn bias_oracle(a: BiasArgs) -> Result<()> {
    let beta = a.beta.unwrap_or((1.0 + a.alpha) / 2.0);
    let rows = a
        .n
        .iter()
        .map(|&n| mean_model_bias_oracle(n, a.alpha, a.c, beta, a.c1))
        .collect::<Result<Vec<_>>>()?;
    with_output(&a.common.out, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "b", "a", "ebs", "lugsail"])?;
        for r in &rows {
            out.write_record([
                r.n.to_string(),
                r.b.to_string(),
                r.a.to_string(),
                format!("{:.10e}", r.ebs),
                format!("{:.10e}", r.lugsail),
            ])?;
        }
        out.flush()?;
        Ok(())
    })
}

fn qq(a: QqArgs) -> Result<()> {
    let d = if a.model == ModelKind::Mean { 1 } else { a.d };
    let design = gen_design::<f64>(a.design, d, a.rho)?;
    let theta_star = default_beta_star(d, false);
    let mut stream = gen_stream(a.model, design, theta_star.clone(), a.common.seed.unwrap_or(0))?;
    let schedule = LearningRateSchedule::new(a.eta, a.alpha)?;
    let oracle = a.model.oracle::<f64>(d);
    let bm = match a.estimator {
        EstimatorKind::Ibs => {
            let scale = match a.ibs_scale {
                Some(s) => s,
                None => ibs_boundaries_with_min(a.n, a.alpha, DEFAULT_IBS_SCALE, d + 1)?.scale,
            };
            let mut t = IbsTracker::new(d, a.alpha, scale)?;
            run_asgd(&oracle, &mut stream, &schedule, vec![0.0; d], a.burn_in, a.n, &mut t)?;
            // Fold each batch's own sqrt(size) into its mean so a unit batch
            // size gives the same pooled components.
            let batches = t.batches();
            let means = batches
                .means
                .iter()
                .zip(&batches.sizes)
                .map(|(m, &s)| {
                    let r = (s as f64).sqrt();
                    m.iter().zip(&theta_star).map(|(x, t)| t + r * (x - t)).collect()
                })
                .collect();
            BatchMeans::new(means, 1)?
        }
        _ => {
            let beta = a.beta.unwrap_or((1.0 + a.alpha) / 2.0);
            let mut t = EbsTracker::<f64>::doubling(d, a.c, beta)?;
            run_asgd(&oracle, &mut stream, &schedule, vec![0.0; d], a.burn_in, a.n, &mut t)?;
            t.batch_means()?
        }
    };
    let reference = (!a.center || a.estimator == EstimatorKind::Ibs).then_some(theta_star.as_slice());
    let points = qq_data(&bm, reference)?;
    eprintln!("ks_distance {:.6} over {} components", ks_distance(&points), points.len());
    with_output(&a.common.out, |w| write_qq_csv(&points, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(cli_main(argv("sgd-infer --help")), 0);
        assert_eq!(cli_main(argv("sgd-infer --version")), 0);
        assert_eq!(cli_main(argv("sgd-infer simulate --help")), 0);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(cli_main(argv("sgd-infer")), 2);
        assert_eq!(cli_main(argv("sgd-infer frobnicate")), 2);
        assert_eq!(cli_main(argv("sgd-infer simulate --bogus 1")), 2);
        assert_eq!(cli_main(argv("sgd-infer simulate --alpha 0.4 --reps 1 --n 100")), 2);
    }

    #[test]
    fn config_expands_before_explicit_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "model = \"mean\"\nn_max = 2000\nreplications = 3\nestimators = [\"ebs\", \"lugsail\"]\nrectangles = false\n").unwrap();
        let a = expand_config(vec![
            "x".into(),
            "simulate".into(),
            "--config".into(),
            cfg.display().to_string(),
            "--reps".into(),
            "5".into(),
        ])
        .unwrap();
        let Command::Simulate(s) = Cli::try_parse_from(a).unwrap().command else {
            panic!()
        };
        let c = simulate_config(&s);
        assert_eq!(c.replications, 5);
        assert_eq!(c.n_max, 2000);
        assert_eq!(c.d, 1);
        assert!(!c.rectangles);
        assert_eq!(c.estimators, vec![EstimatorKind::Ebs, EstimatorKind::Lugsail]);
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "colour = 3\n").unwrap();
        assert_eq!(cli_main(vec!["x".into(), "bias-oracle".into(), "--config".into(), cfg.display().to_string()]), 2);
    }

    #[test]
    fn iterate_chain_estimate() {
        let dir = tempfile::tempdir().unwrap();
        let chain = dir.path().join("chain.csv");
        let body: String = (0..100).map(|i| format!("{}\n", [1, 3, 2, 4][i % 4])).collect();
        fs::write(&chain, format!("theta\n{body}")).unwrap();
        let out = dir.path().join("fit.json");
        let code = cli_main(argv(&format!(
            "x estimate --iterates {} --b 2 --estimator ebs --out {}",
            chain.display(),
            out.display()
        )));
        assert_eq!(code, 0);
        let fit = load_fit(&out).unwrap();
        assert!((fit.estimate.matrix[(0, 0)] - 0.5).abs() < 1e-12);
        assert_eq!(fit.theta_hat, vec![2.5]);
    }

    #[test]
    fn bad_iterate_row_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let chain = dir.path().join("chain.csv");
        fs::write(&chain, "1,2\n3,4\n5,x\n").unwrap();
        assert_eq!(cli_main(argv(&format!("x estimate --iterates {} --b 1", chain.display()))), 3);
        assert_eq!(cli_main(argv("x estimate --iterates /nonexistent/chain.csv")), 3);
    }
}
