use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::Args;
use serde::Serialize;

use gatedtab::data::{
    correlation_matrix, encode, load_csv, split_indices, DatasetStats, PreparedData, RawTable,
    SchemaFile,
};
use gatedtab::eval::{
    auroc, mean_auroc_over_seeds, roc_csv, roc_points, trapezoid_area, Candidate, EvalResult,
    RunSpec, SplitMode,
};
use gatedtab::hpo::{dim_curve, dim_curve_csv, run_grid, GridProgress, GridSpec, RunOptions, TrialResult};
use gatedtab::model::{Batch, Checkpoint, HeadKind, InputSpec, Model};
use gatedtab::train::{train as fit, StopReason};

use crate::config::{output_dir, require_file, RunConfig};
use crate::CliError;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).context("serializing")? + "\n";
    write(path, text)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

/// Reads the schema file and the CSV it describes. Missing files and
/// malformed schemas are usage errors.
pub fn load_table(data: &Path, schema: &Path) -> Result<RawTable, CliError> {
    require_file(schema, "schema")?;
    require_file(data, "data")?;
    let schema_file = SchemaFile::read(schema)
        .map_err(|e| CliError::Usage(format!("{}: {e}", schema.display())))?;
    let raw = load_csv(data, &schema_file).with_context(|| format!("loading {}", data.display()))?;
    Ok(raw)
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory (relative paths go under $GATEDTAB_OUT when set).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub head: Option<HeadKind>,
    /// Seed of the main run.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Seeds for an additional multi-seed evaluation.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Any other setting as `section.key=value`, e.g. `model.embed_dim=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed runs evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

impl TrainArgs {
    /// File values, then `--set`, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                require_file(path, "config")?;
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                RunConfig::parse(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        config.apply_overrides(&self.overrides)?;
        if let Some(p) = &self.data {
            config.data = p.clone();
        }
        if let Some(p) = &self.schema {
            config.schema = p.clone();
        }
        if let Some(p) = &self.out {
            config.out = Some(p.clone());
        }
        if let Some(h) = self.head {
            config.model.head = h;
        }
        if let Some(s) = self.seed {
            config.train.seed = s;
        }
        if let Some(s) = self.split_seed {
            config.split_seed = s;
        }
        if let Some(s) = &self.seeds {
            config.seeds = s.clone();
        }
        if let Some(n) = self.max_epochs {
            config.train.max_epochs = n;
        }
        if let Some(lr) = self.lr {
            config.train.lr = lr;
        }
        if let Some(b) = self.batch_size {
            config.train.batch_size = b;
        }
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCounts {
    pub total: usize,
    /// Column embeddings and transformer layers.
    pub trunk: usize,
    pub head: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub dataset: String,
    pub model_id: String,
    pub seed: u64,
    pub split_seed: u64,
    pub rows: [usize; 3],
    pub params: ParamCounts,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub best_val_auroc: Option<f64>,
    /// Scored once, after the best epoch was restored.
    pub test_auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi_seed: Option<EvalResult>,
}

/// Trains one model and writes `config.kv`, `metrics.jsonl`,
/// `checkpoint.json`, `roc_test.csv` and `summary.json`.
pub fn train(config: &RunConfig, parallel: usize) -> Result<(PathBuf, TrainSummary), CliError> {
    config.check()?;
    let raw = load_table(&config.data, &config.schema)?;
    let out = output_dir(
        config.out.as_deref(),
        &format!("train-{}-{}", raw.name, config.model.head),
    );
    create_dir(&out)?;
    write(&out.join("config.kv"), config.to_kv())?;

    let prepared = PreparedData::new(raw, config.split_seed).context("preparing data")?;
    let (tr, va, te) = (prepared.train(), prepared.validation(), prepared.test());
    let mut model = Model::build(&config.model, &InputSpec::of(&prepared.schema), config.train.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    log::info!(
        "training {} ({} parameters) on {} rows",
        Candidate::Model(config.model.clone()).id(),
        model.param_count(),
        tr.n_rows()
    );
    let report = fit(&mut model, &tr, &va, &config.train).context("training")?;
    report
        .write_metrics(out.join("metrics.jsonl"))
        .context("writing metrics")?;
    Checkpoint::from_model(&model, prepared.raw.fingerprint())
        .with_schema(prepared.schema.clone(), config.split_seed)
        .save(out.join("checkpoint.json"))
        .context("writing checkpoint")?;

    let test_auroc = if report.diverged() {
        None
    } else {
        let scores = model.logits(&Batch::of(&te)).context("scoring the test split")?;
        let points = roc_points(&scores, &te.labels).context("ROC curve")?;
        write(&out.join("roc_test.csv"), roc_csv(&points))?;
        Some(auroc(&scores, &te.labels).context("test AUROC")?)
    };

    let multi_seed = if config.seeds.len() >= 2 {
        let spec = RunSpec {
            dataset: prepared.raw.name.clone(),
            candidate: Candidate::Model(config.model.clone()),
            train: config.train.clone(),
            split: SplitMode::Fixed(config.split_seed),
        };
        let result = mean_auroc_over_seeds(&prepared.raw, &spec, &config.seeds, parallel)
            .context("multi-seed evaluation")?;
        write_json(&out.join("seeds.json"), &result)?;
        Some(result)
    } else {
        None
    };

    let trunk = model.param_count_with_prefix("embed") + model.param_count_with_prefix("transformer");
    let summary = TrainSummary {
        dataset: prepared.raw.name.clone(),
        model_id: Candidate::Model(config.model.clone()).id().to_string(),
        seed: config.train.seed,
        split_seed: config.split_seed,
        rows: [tr.n_rows(), va.n_rows(), te.n_rows()],
        params: ParamCounts {
            total: model.param_count(),
            trunk,
            head: model.param_count() - trunk,
        },
        epochs_run: report.epochs.len(),
        best_epoch: report.best_epoch,
        stop_reason: report.stop_reason,
        best_val_auroc: report.best_val_auroc.is_finite().then_some(report.best_val_auroc),
        test_auroc,
        diagnostic: report.diagnostic.clone(),
        multi_seed,
    };
    write_json(&out.join("summary.json"), &summary)?;
    if report.diverged() {
        return Err(anyhow!(
            "training diverged: {}",
            report.diagnostic.unwrap_or_default()
        )
        .into());
    }
    Ok((out, summary))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    Train,
    Validation,
    #[default]
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Rows to score, using the split stored in the checkpoint.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub dataset: String,
    pub split: SplitChoice,
    pub rows: usize,
    pub auroc: f64,
    /// Trapezoidal area under the written ROC points.
    pub roc_area: f64,
}

/// Scores a checkpoint on one split and writes `evaluation.json` and
/// `roc.csv`.
pub fn evaluate(args: &EvaluateArgs) -> Result<(PathBuf, Evaluation), CliError> {
    require_file(&args.checkpoint, "checkpoint")?;
    let checkpoint = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let raw = load_table(&args.data, &args.schema)?;
    if raw.fingerprint() != checkpoint.fingerprint {
        return Err(anyhow!(
            "schema fingerprint mismatch: checkpoint was trained on {}, data is {}",
            checkpoint.fingerprint,
            raw.fingerprint()
        )
        .into());
    }
    let schema = checkpoint
        .schema
        .clone()
        .ok_or_else(|| anyhow!("checkpoint carries no fitted encoders"))?;
    let dataset = encode(&raw, &schema).context("encoding")?;
    let splits = split_indices(raw.n_rows(), checkpoint.split_seed.unwrap_or(0)).context("splitting")?;
    let subset = match args.split {
        SplitChoice::Train => dataset.subset(&splits.train),
        SplitChoice::Validation => dataset.subset(&splits.validation),
        SplitChoice::Test => dataset.subset(&splits.test),
        SplitChoice::All => dataset,
    };
    let model = checkpoint.to_model().context("rebuilding the model")?;
    let scores = model.logits(&Batch::of(&subset)).context("scoring")?;
    let points = roc_points(&scores, &subset.labels).context("ROC curve")?;
    let evaluation = Evaluation {
        dataset: raw.name.clone(),
        split: args.split,
        rows: subset.n_rows(),
        auroc: auroc(&scores, &subset.labels).context("AUROC")?,
        roc_area: trapezoid_area(&points),
    };
    let out = output_dir(args.out.as_deref(), &format!("evaluate-{}", raw.name));
    create_dir(&out)?;
    write(&out.join("roc.csv"), roc_csv(&points))?;
    write_json(&out.join("evaluation.json"), &evaluation)?;
    Ok((out, evaluation))
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    /// Grid spec file; without one the full default grid is used.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum number of trials that actually train.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Seconds after which no new trial starts.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Continue the trial log in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuneSummary {
    pub dataset: String,
    pub progress: GridProgress,
    pub best: Option<TrialResult>,
}

/// Runs the grid and writes `grid.kv`, `trials.jsonl` (plus timings),
/// `progress.json`, `dim_curve.csv` and, when any trial succeeded,
/// `best.json` and `best_config.kv`.
pub fn tune(args: &TuneArgs) -> Result<(PathBuf, TuneSummary), CliError> {
    let spec = match &args.spec {
        Some(path) => {
            require_file(path, "grid spec")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            GridSpec::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => GridSpec::default(),
    };
    if args.parallel == 0 {
        return Err(CliError::Usage("--parallel must be at least 1".into()));
    }
    let raw = load_table(&args.data, &args.schema)?;
    let out = output_dir(args.out.as_deref(), &format!("tune-{}", raw.name));
    create_dir(&out)?;
    write(&out.join("grid.kv"), spec.to_kv())?;
    let options = RunOptions {
        budget: args.budget,
        time_limit: args.time_limit.map(Duration::from_secs_f64),
        parallel: args.parallel,
        resume: args.resume,
    };
    let outcome = run_grid(&spec, &raw, &out.join("trials.jsonl"), &options).map_err(|e| match e {
        gatedtab::hpo::HpoError::SpecMismatch { .. } => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.into()),
    })?;
    write(&out.join("dim_curve.csv"), dim_curve_csv(&dim_curve(&outcome.results)))?;
    write_json(&out.join("progress.json"), &outcome.progress)?;
    if let Some(best) = &outcome.best {
        write_json(&out.join("best.json"), best)?;
        let text = format!(
            "data = {}\nschema = {}\nsplit_seed = {}\n{}",
            args.data.display(),
            args.schema.display(),
            spec.split_seed,
            best.to_kv()
        );
        write(&out.join("best_config.kv"), text)?;
    }
    Ok((
        out,
        TuneSummary {
            dataset: raw.name.clone(),
            progress: outcome.progress,
            best: outcome.best,
        },
    ))
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Split whose training rows fit the encoders used for correlations.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

pub fn dataset_summary_csv(stats: &DatasetStats) -> String {
    format!(
        "dataset,datapoints,features,categorical,continuous,positive_percent\n{},{},{},{},{},{:.2}\n",
        stats.name,
        stats.n_rows,
        stats.n_features,
        stats.n_categorical,
        stats.n_continuous,
        stats.positive_percent
    )
}

/// Writes `stats.json`, `dataset_summary.csv` and `correlation.csv`.
pub fn dataset_report(args: &ReportArgs) -> Result<(PathBuf, DatasetStats), CliError> {
    let raw = load_table(&args.data, &args.schema)?;
    let stats = DatasetStats::of(&raw);
    let out = output_dir(args.out.as_deref(), &format!("report-{}", raw.name));
    create_dir(&out)?;
    let prepared = PreparedData::new(raw, args.split_seed).context("preparing data")?;
    let corr = correlation_matrix(&prepared.dataset, &prepared.schema).context("correlations")?;
    write(&out.join("correlation.csv"), corr.to_csv())?;
    write(&out.join("dataset_summary.csv"), dataset_summary_csv(&stats))?;
    write_json(&out.join("stats.json"), &stats)?;
    Ok((out, stats))
}
