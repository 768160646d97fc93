//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineConfig, LambdaChoice};
use crate::checkpoint::Checkpoint;
use crate::data::{
    fit_zscore, gen_counting_task, gen_fig2_pairs, load_feature_table, make_binary_labels,
    save_feature_table, CountingTaskConfig, Dataset, FeatureSchema,
};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, write_roc_csv, CvConfig, EvalReport, Method, NormalizationScope};
use crate::network::{predict, train, NetworkConfig, TrainConfig, DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN_WIDTHS};
use crate::pooling::{injectivity_report, AttentionParams, PoolingKind, DEFAULT_ATTENTION_DIM};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "minn", about = "Multiple-instance outcome prediction with injective pooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Repeated stratified cross-validation of a MIL model or the baseline.
    Cv(ExperimentArgs),
    /// Cross-validation of the largest-lesion LASSO logistic regression.
    Baseline(ExperimentArgs),
    /// Fit one model on the whole dataset and write a checkpoint.
    Train(ExperimentArgs),
    /// Score a feature table with a checkpoint.
    Predict(PredictArgs),
    /// Emit synthetic datasets.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Check which poolings separate the counterexample bag pairs.
    InjectivityCheck(InjectivityArgs),
}

fn parse_pooling(s: &str) -> std::result::Result<PoolingKind, String> {
    s.parse::<PoolingKind>().map_err(|e| e.to_string())
}

/// Comma-separated hidden layer widths, e.g. `64,48,32`.
#[derive(Debug, Clone)]
struct Widths(Vec<usize>);

fn parse_widths(s: &str) -> std::result::Result<Widths, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad width '{p}': {e}")))
        .collect::<std::result::Result<_, _>>()
        .map(Widths)
}

#[derive(Debug, Clone, Default, Args)]
struct ExperimentArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_pooling)]
    pooling: Option<PoolingKind>,
    /// Evaluate the LASSO baseline instead of a MIL network.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon_days: Option<f64>,
    #[arg(long)]
    volume_feature: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = parse_widths)]
    hidden_widths: Option<Widths>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    attention_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_bags: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory; predictions go to `predictions.csv`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Cumulative-risk counting task.
    Counting(CountingArgs),
    /// Counterexample bag pairs.
    Fig2(Fig2Args),
}

#[derive(Debug, Args)]
struct CountingArgs {
    #[arg(long, default_value_t = 500)]
    n_bags: usize,
    #[arg(long, default_value_t = 2)]
    min_size: usize,
    #[arg(long, default_value_t = 8)]
    max_size: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    threshold: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Fig2Args {
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InjectivityArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = DEFAULT_ATTENTION_DIM)]
    attention_dim: usize,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Experiment settings as read from a JSON config file. Every field is
/// optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<FeatureSchema>,
    pub counting_task: Option<CountingTaskConfig>,
    pub horizon_days: Option<f64>,
    pub pooling: Option<PoolingKind>,
    pub baseline: Option<bool>,
    pub hidden_widths: Option<Vec<usize>>,
    pub embedding_dim: Option<usize>,
    pub attention_dim: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_bags: Option<usize>,
    pub weight_decay: Option<f64>,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub inner_folds: Option<usize>,
    pub volume_feature: Option<String>,
    pub runs: Option<usize>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// Fully resolved settings, echoed to `config.resolved.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub data: Option<PathBuf>,
    pub schema: FeatureSchema,
    pub counting_task: Option<CountingTaskConfig>,
    pub horizon_days: Option<f64>,
    pub method: Method,
    pub runs: usize,
    pub folds: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn overlay(mut self, a: &ExperimentArgs) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if a.$f.is_some() { self.$f = a.$f.clone(); } )* };
        }
        take!(
            data, pooling, runs, folds, seed, horizon_days, volume_feature, out, workers,
            embedding_dim, attention_dim, learning_rate, epochs, batch_bags,
            weight_decay, lambda
        );
        if let Some(w) = &a.hidden_widths {
            self.hidden_widths = Some(w.0.clone());
        }
        if a.baseline {
            self.baseline = Some(true);
        }
        self
    }

    pub fn resolve(self, force_baseline: bool) -> Result<ResolvedConfig> {
        if self.data.is_some() == self.counting_task.is_some() {
            return Err(Error::Config(
                "exactly one of `data` or `counting_task` must be given".into(),
            ));
        }
        let seed = self.seed.unwrap_or(0);
        let baseline = force_baseline || self.baseline.unwrap_or(false);
        let method = if baseline {
            if self.pooling.is_some() {
                return Err(Error::Config("choose either a pooling kind or the baseline".into()));
            }
            let lambda = match (&self.lambda_grid, self.lambda) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config("give either `lambda` or `lambda_grid`".into()))
                }
                (Some(grid), None) => LambdaChoice::Grid {
                    values: grid.clone(),
                    inner_folds: self.inner_folds.unwrap_or(5),
                },
                (None, l) => LambdaChoice::Fixed(l.unwrap_or(0.01)),
            };
            if let LambdaChoice::Fixed(l) = lambda {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(Error::Config(format!("lambda must be non-negative, got {l}")));
                }
            }
            Method::Baseline(BaselineConfig {
                volume_feature: self.volume_feature.clone().unwrap_or_else(|| "volume".into()),
                lambda,
                ..BaselineConfig::default()
            })
        } else {
            let pooling = self.pooling.ok_or_else(|| {
                Error::Config("no pooling given; valid kinds are max, mean, att, sum, uatt".into())
            })?;
            let defaults = TrainConfig::default();
            let network = NetworkConfig {
                input_dim: 1,
                hidden_widths: self.hidden_widths.clone().unwrap_or_else(|| DEFAULT_HIDDEN_WIDTHS.to_vec()),
                embedding_dim: self.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM),
                attention_dim: self.attention_dim.unwrap_or(DEFAULT_ATTENTION_DIM),
                pooling,
                seed,
            };
            network.validate()?;
            let training = TrainConfig {
                learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
                epochs: self.epochs.unwrap_or(defaults.epochs),
                batch_bags: self.batch_bags.unwrap_or(defaults.batch_bags),
                weight_decay: self.weight_decay.unwrap_or(defaults.weight_decay),
                seed,
                ..defaults
            };
            training.validate()?;
            Method::Mil { network, training }
        };
        let runs = self.runs.unwrap_or(10);
        let folds = self.folds.unwrap_or(10);
        if runs == 0 || folds < 2 {
            return Err(Error::Config("need runs >= 1 and folds >= 2".into()));
        }
        if let Some(h) = self.horizon_days {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("horizon must be positive, got {h}")));
            }
        }
        let workers = self
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(ResolvedConfig {
            data: self.data,
            schema: self.schema.unwrap_or_default(),
            counting_task: self.counting_task,
            horizon_days: self.horizon_days,
            method,
            runs,
            folds,
            seed,
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
            workers,
        })
    }
}

/// Loads (or generates) the dataset and applies survival labeling.
/// Returns the dataset and the number of excluded bags.
fn load_dataset(cfg: &ResolvedConfig) -> Result<(Dataset, usize)> {
    let raw = match (&cfg.data, &cfg.counting_task) {
        (Some(path), _) => load_feature_table(path, &cfg.schema)?,
        (None, Some(task)) => gen_counting_task(task)?.dataset,
        (None, None) => unreachable!("validated in resolve"),
    };
    raw.validate()?;
    let (dataset, excluded) = match cfg.horizon_days {
        Some(h) => {
            let (d, tally) = make_binary_labels(&raw, h)?;
            (d, tally.excluded)
        }
        None => (raw, 0),
    };
    if let Some(bag) = dataset.bags.iter().find(|b| b.label.is_none()) {
        return Err(Error::Labeling(format!(
            "patient {} has no label; add a label column or pass --horizon-days",
            bag.patient_id
        )));
    }
    Ok((dataset, excluded))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn resolve_args(args: &ExperimentArgs, force_baseline: bool) -> Result<ResolvedConfig> {
    let base = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    base.overlay(args).resolve(force_baseline)
}

fn echo_config(cfg: &ResolvedConfig) -> Result<()> {
    create_dir(&cfg.out)?;
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    write_file(&cfg.out.join("config.resolved.json"), text)
}

fn set_input_dim(cfg: &mut ResolvedConfig, width: usize) {
    if let Method::Mil { network, .. } = &mut cfg.method {
        network.input_dim = width;
    }
}

fn cmd_cv(args: &ExperimentArgs, force_baseline: bool) -> Result<EvalReport> {
    let mut cfg = resolve_args(args, force_baseline)?;
    let (dataset, excluded) = load_dataset(&cfg)?;
    set_input_dim(&mut cfg, dataset.width());
    echo_config(&cfg)?;
    let cv = CvConfig {
        runs: cfg.runs,
        folds: cfg.folds,
        base_seed: cfg.seed,
        workers: cfg.workers,
        normalization: NormalizationScope::TrainOnly,
    };
    let mut report = cross_validate(&dataset, &cfg.method, &cv)?;
    report.excluded_bags = excluded;

    write_file(&cfg.out.join("report.json"), report.to_json()?)?;
    report.write_runs_csv(create_file(&cfg.out.join("runs.csv"))?)?;
    report.write_summary_csv(create_file(&cfg.out.join("summary.csv"))?)?;
    let roc_dir = cfg.out.join("roc");
    create_dir(&roc_dir)?;
    for run in &report.runs {
        write_roc_csv(&run.roc()?, create_file(&roc_dir.join(format!("run-{}.csv", run.run)))?)?;
    }
    eprintln!(
        "{}: mean AUC {:.3} (95% CI {:.3}, {:.3}) over {} runs",
        report.method,
        report.mean_auc,
        report.ci_low,
        report.ci_high,
        report.runs.len()
    );
    Ok(report)
}

fn cmd_train(args: &ExperimentArgs) -> Result<()> {
    let mut cfg = resolve_args(args, false)?;
    let (dataset, _) = load_dataset(&cfg)?;
    set_input_dim(&mut cfg, dataset.width());
    let Method::Mil { network, training } = &cfg.method else {
        return Err(Error::Config("`train` fits MIL networks only; use `baseline` for LASSO".into()));
    };
    echo_config(&cfg)?;
    let normalizer = fit_zscore(&dataset.bags)?;
    let normalized = Dataset {
        bags: normalizer.apply(&dataset.bags)?,
        ..dataset.clone()
    };
    let network = network.clone();
    let outcome = train(&normalized, &network, training)?;
    Checkpoint {
        config: network,
        train_seed: training.seed,
        normalizer: Some(normalizer),
        params: outcome.params,
    }
    .save(cfg.out.join("checkpoint.bin"))?;
    let mut wtr = csv::Writer::from_writer(create_file(&cfg.out.join("history.csv"))?);
    wtr.write_record(["epoch", "mean_loss"])?;
    for (e, loss) in outcome.history.iter().enumerate() {
        wtr.write_record([e.to_string(), loss.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io(cfg.out.join("history.csv"), e))?;
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let dataset = load_feature_table(&args.data, &FeatureSchema::default())?;
    dataset.validate()?;
    if dataset.width() != ck.config.input_dim {
        return Err(Error::Shape(format!(
            "table has {} features, checkpoint expects {}",
            dataset.width(),
            ck.config.input_dim
        )));
    }
    let bags = match &ck.normalizer {
        Some(n) => n.apply(&dataset.bags)?,
        None => dataset.bags.clone(),
    };
    let preds = predict(&ck.params, &bags, &ck.config)?;
    create_dir(&args.out)?;
    let mut wtr = csv::Writer::from_writer(create_file(&args.out.join("predictions.csv"))?);
    wtr.write_record(["patient_id", "probability"])?;
    for p in preds {
        wtr.write_record([p.patient_id, p.probability.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io(&args.out, e))?;
    Ok(())
}

fn cmd_synth(cmd: &SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Counting(a) => {
            let task = gen_counting_task(&CountingTaskConfig {
                n_bags: a.n_bags,
                min_bag_size: a.min_size,
                max_bag_size: a.max_size,
                dim: a.dim,
                threshold: a.threshold,
                seed: a.seed,
                ..CountingTaskConfig::default()
            })?;
            create_dir(&a.out)?;
            save_feature_table(&task.dataset, a.out.join("counting.csv"), &FeatureSchema::default())?;
            let mut wtr = csv::Writer::from_writer(create_file(&a.out.join("instance_classes.csv"))?);
            wtr.write_record(["patient_id", "tumor_id", "high_risk"])?;
            for (bag, truth) in task.dataset.bags.iter().zip(&task.high_risk) {
                for (inst, &h) in bag.instances.iter().zip(truth) {
                    wtr.write_record([inst.patient_id.as_str(), inst.tumor_id.as_str(), if h { "1" } else { "0" }])?;
                }
            }
            wtr.flush().map_err(|e| Error::io(&a.out, e))?;
        }
        SynthCommand::Fig2(a) => {
            let pairs = gen_fig2_pairs(a.dim, a.seed)?;
            create_dir(&a.out)?;
            let mut wtr = csv::Writer::from_writer(create_file(&a.out.join("fig2_pairs.csv"))?);
            let mut header = vec!["case".to_string(), "bag".into(), "instance".into()];
            header.extend((0..a.dim).map(|j| format!("h{j}")));
            wtr.write_record(&header)?;
            for pair in &pairs {
                for (b, bag) in [&pair.first, &pair.second].into_iter().enumerate() {
                    for (n, row) in bag.iter_rows().enumerate() {
                        let mut rec = vec![pair.case.tag().to_string(), (b + 1).to_string(), n.to_string()];
                        rec.extend(row.iter().map(|v| v.to_string()));
                        wtr.write_record(&rec)?;
                    }
                }
            }
            wtr.flush().map_err(|e| Error::io(&a.out, e))?;
        }
    }
    Ok(())
}

/// Returns whether every expected collapse/distinction held.
fn cmd_injectivity(a: &InjectivityArgs) -> Result<bool> {
    if a.attention_dim == 0 {
        return Err(Error::Config("attention dimension must be positive".into()));
    }
    let pairs = gen_fig2_pairs(a.dim, a.seed)?;
    let params = AttentionParams::random(a.attention_dim, a.dim, 0.5, a.seed.wrapping_add(1));
    let report = injectivity_report(&PoolingKind::ALL, &pairs, &params)?;
    let json = report.to_json()? + "\n";
    if let Some(path) = &a.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_file(path, &json)?;
    }
    print!("{json}");
    Ok(report.claims_hold)
}

fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Cv(a) => cmd_cv(a, false).map(|_| EXIT_OK),
        Command::Baseline(a) => cmd_cv(a, true).map(|_| EXIT_OK),
        Command::Train(a) => cmd_train(a).map(|_| EXIT_OK),
        Command::Predict(a) => cmd_predict(a).map(|_| EXIT_OK),
        Command::Synth(c) => cmd_synth(c).map(|_| EXIT_OK),
        Command::InjectivityCheck(a) => cmd_injectivity(a).map(|ok| if ok { EXIT_OK } else { EXIT_RUNTIME }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
