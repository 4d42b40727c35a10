//! Command-line pipeline: synthetic data generation, training, evaluation,
//! gradient checking, sensitivity sweeps, and hidden-state export.
//!
//! Every command is a thin argument layer over a `run_*` function, so tests
//! drive the exact code paths the binary runs. Each training run writes its
//! manifest copy next to its artifacts; a run is reproducible from that copy
//! plus the seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cells::CellKind;
use crate::data::{Dataset, DatasetManifest, HistoryPolicy, Instance, MissingPolicy};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::{HyperModel, ModelConfig, PredictMode, Task};
use crate::synth::{generate, load_spec, write_oracle_sidecar, RegimeSpec};
use crate::train::{evaluate, fit, run_gradcheck, Objective, TrainConfig, TrainItem, TrainReport};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "HYPERFORECAST_OUT";

fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Parser, Debug)]
#[command(
    name = "hyperforecast",
    about = "Time-series forecasting with hypernetwork-generated recurrent cells",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic regime-switching series with its manifest and
    /// oracle baseline.
    Synth(SynthArgs),
    /// Train a model from a dataset manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest's test split.
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train one model per axis value and tabulate test metrics.
    Sweep(SweepArgs),
    /// Export per-window final encoder states to CSV.
    ExportHidden(ExportHiddenArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Regime spec file (key=value).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    t: usize,
    #[arg(long)]
    t_x: Option<usize>,
    #[arg(long, default_value_t = 1)]
    t_y: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Train,valid,test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    split: String,
    #[arg(long, default_value_t = 128)]
    l_max: usize,
    #[arg(long, default_value = "recent")]
    history_policy: String,
}

#[derive(Args, Debug, Clone)]
struct ModelFlags {
    /// Main cell kind: gru or lstm.
    #[arg(long, default_value = "gru")]
    cell: String,
    #[arg(long, default_value_t = 32)]
    d_s: usize,
    /// Encoder state width; defaults to d_s rounded up to even.
    #[arg(long)]
    d_h: Option<usize>,
    /// Weight-generator bottleneck width; defaults to d_h.
    #[arg(long)]
    d_v: Option<usize>,
    /// Attention width; defaults to d_h.
    #[arg(long)]
    d_a: Option<usize>,
    #[arg(long, default_value = "regression")]
    task: String,
    /// Output classes (classification only); sets the head width.
    #[arg(long)]
    n_classes: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 2e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// l2 or cross_entropy; defaults to the task's natural objective.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest path.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Also write hidden_states.csv for the last test instance.
    #[arg(long, default_value_t = false)]
    export_hidden: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// last or mean; both are reported when omitted.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// gru, lstm, or both.
    #[arg(long, default_value = "both")]
    cell: String,
    #[arg(long, default_value_t = 12345)]
    seed: u64,
    /// Deliberately desynchronize the analytic pass (checker self-test).
    #[arg(long, default_value_t = false, hide = true)]
    corrupt_backward: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Sweep axis: tk (encoder input length t/k) or horizon (t_y).
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long)]
    values: String,
    /// Comma-separated seeds; one run per (value, seed).
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct ExportHiddenArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test-split instance index; defaults to the most recent.
    #[arg(long)]
    instance: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            std::process::ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let spec = load_spec(&args.spec)?;
            let out = resolve_out(args.out, "synth");
            let options = SynthOptions {
                t: args.t,
                t_x: args.t_x.unwrap_or(args.t),
                t_y: args.t_y,
                k: args.k,
                stride: args.stride,
                split: parse_split(&args.split)?,
                l_max: args.l_max,
                history_policy: HistoryPolicy::parse(&args.history_policy)?,
            };
            let outcome = run_synth(&spec, args.seed, &out, &options)?;
            println!("series:   {}", outcome.series_csv.display());
            println!("manifest: {}", outcome.manifest_path.display());
            println!("oracle:   {}", outcome.oracle_path.display());
            Ok(())
        }
        Command::Train(args) => {
            let manifest = DatasetManifest::load(&args.manifest)?;
            let out = resolve_out(args.out, "train");
            let outcome = run_train(
                &manifest,
                &model_settings(&args.model)?,
                &train_settings(&args.train, &args.model)?,
                &out,
                args.export_hidden,
            )?;
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("report:     {}", outcome.report_csv.display());
            println!("metrics:    {}", outcome.metrics_csv.display());
            for line in outcome.summary_lines() {
                println!("{}", line);
            }
            Ok(())
        }
        Command::Eval(args) => {
            let manifest = DatasetManifest::load(&args.manifest)?;
            let model = HyperModel::load(&args.checkpoint)?;
            let modes = match args.mode {
                Some(m) => vec![PredictMode::parse(&m)?],
                None => vec![PredictMode::Last, PredictMode::Mean],
            };
            let rows = run_eval(&manifest, &model, &modes)?;
            let text = metrics_csv(&rows);
            if let Some(dir) = args.out {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("metrics.csv");
                std::fs::write(&path, &text)?;
                println!("metrics: {}", path.display());
            }
            for row in &rows {
                println!("mode={} scale={}", row.mode.as_str(), row.scale);
                println!("{}", row.metrics.table());
            }
            Ok(())
        }
        Command::Gradcheck(args) => {
            let kinds: Vec<CellKind> = match args.cell.as_str() {
                "both" => vec![CellKind::Gru, CellKind::Lstm],
                other => vec![CellKind::parse(other)?],
            };
            let mut all_pass = true;
            for kind in kinds {
                println!("cell={}", kind.as_str());
                let report = run_gradcheck(kind, args.seed, args.corrupt_backward)?;
                report.print();
                all_pass &= report.pass;
            }
            if all_pass {
                Ok(())
            } else {
                Err(Error::numeric(
                    "gradient check failed (see per-tensor table above)",
                ))
            }
        }
        Command::Sweep(args) => {
            let manifest = DatasetManifest::load(&args.manifest)?;
            let axis = SweepAxis::parse(&args.axis)?;
            let values = parse_usize_list(&args.values)?;
            let seeds = parse_u64_list(&args.seeds)?;
            let out = resolve_out(args.out, "sweep");
            let report = run_sweep(
                &manifest,
                axis,
                &values,
                &seeds,
                &model_settings(&args.model)?,
                &train_settings(&args.train, &args.model)?,
                &out,
            )?;
            println!("sweep table: {}", report.table_path.display());
            for note in &report.notes {
                println!("{}", note);
            }
            Ok(())
        }
        Command::ExportHidden(args) => {
            let manifest = DatasetManifest::load(&args.manifest)?;
            let model = HyperModel::load(&args.checkpoint)?;
            let out = resolve_out(args.out, "export");
            std::fs::create_dir_all(&out)?;
            let path = out.join("hidden_states.csv");
            run_export_hidden(&manifest, &model, args.instance, &path)?;
            println!("hidden states: {}", path.display());
            Ok(())
        }
    }
}

fn resolve_out(requested: Option<PathBuf>, command: &str) -> PathBuf {
    requested.unwrap_or_else(|| default_out_root().join(command))
}

fn parse_split(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(format!("split: invalid fraction '{}'", p)))
        })
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::config(format!(
            "split: expected three fractions, got '{}'",
            s
        )));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(format!("invalid integer '{}'", p)))
        })
        .collect()
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(format!("invalid integer '{}'", p)))
        })
        .collect()
}

/// Resolved model dimensions and kind, before d_x/d_y are known.
#[derive(Debug, Clone)]
pub struct ModelSettings {
    pub cell: CellKind,
    pub d_s: usize,
    pub d_h: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub task: Task,
    pub n_classes: Option<usize>,
}

fn model_settings(flags: &ModelFlags) -> Result<ModelSettings> {
    let d_h = flags.d_h.unwrap_or(flags.d_s + flags.d_s % 2);
    Ok(ModelSettings {
        cell: CellKind::parse(&flags.cell)?,
        d_s: flags.d_s,
        d_h,
        d_v: flags.d_v.unwrap_or(d_h),
        d_a: flags.d_a.unwrap_or(d_h),
        task: Task::parse(&flags.task)?,
        n_classes: flags.n_classes,
    })
}

fn train_settings(flags: &TrainFlags, model: &ModelFlags) -> Result<TrainConfig> {
    let task = Task::parse(&model.task)?;
    let objective = match &flags.objective {
        Some(o) => Objective::parse(o)?,
        None => match task {
            Task::Regression => Objective::L2,
            Task::Classification => Objective::CrossEntropy,
        },
    };
    Ok(TrainConfig {
        learning_rate: flags.learning_rate,
        weight_decay: flags.weight_decay,
        batch_size: flags.batch_size,
        epochs: flags.epochs,
        seed: flags.seed,
        objective,
        patience: flags.patience,
        clip_norm: flags.clip_norm,
        verbose: true,
    })
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub t: usize,
    pub t_x: usize,
    pub t_y: usize,
    pub k: usize,
    pub stride: usize,
    pub split: (f64, f64, f64),
    pub l_max: usize,
    pub history_policy: HistoryPolicy,
}

pub struct SynthOutcome {
    pub series_csv: PathBuf,
    pub manifest_path: PathBuf,
    pub oracle_path: PathBuf,
    pub manifest: DatasetManifest,
}

/// Generate a series, then write the CSV, a matching dataset manifest, and
/// the oracle-RMSE sidecar into `out`.
pub fn run_synth(
    spec: &RegimeSpec,
    seed: u64,
    out: &Path,
    options: &SynthOptions,
) -> Result<SynthOutcome> {
    std::fs::create_dir_all(out)?;
    let series = generate(spec, seed)?;
    let series_csv = out.join("series.csv");
    crate::data::write_csv(&series_csv, &series, ',')?;

    let manifest = DatasetManifest {
        csv_path: series_csv.clone(),
        feature_cols: vec!["value".to_string()],
        target_cols: vec!["value".to_string()],
        timestamp_col: None,
        delimiter: ',',
        missing: MissingPolicy::ForwardFill,
        t: options.t,
        t_x: options.t_x,
        t_y: options.t_y,
        k: options.k,
        stride: options.stride,
        split: options.split,
        l_max: options.l_max,
        history_policy: options.history_policy,
    };
    let manifest_path = out.join("dataset.manifest");
    manifest.save(&manifest_path)?;

    let oracle_path = out.join("oracle_rmse.csv");
    write_oracle_sidecar(spec, &series, &oracle_path)?;

    Ok(SynthOutcome {
        series_csv,
        manifest_path,
        oracle_path,
        manifest,
    })
}

/// Metrics for one (mode, scale) combination.
pub struct MetricsRow {
    pub mode: PredictMode,
    /// "raw" (training statistics inverted) or "normalized".
    pub scale: &'static str,
    pub metrics: Metrics,
}

fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::new();
    if let Some(first) = rows.first() {
        let _ = writeln!(s, "mode,scale,{}", first.metrics.csv_header());
    }
    for row in rows {
        let _ = writeln!(
            s,
            "{},{},{}",
            row.mode.as_str(),
            row.scale,
            row.metrics.csv_row()
        );
    }
    s
}

pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report_csv: PathBuf,
    pub metrics_csv: PathBuf,
    pub manifest_copy: PathBuf,
    pub hidden_states: Option<PathBuf>,
    pub report: TrainReport,
    pub test_metrics: Vec<MetricsRow>,
    pub model: HyperModel,
}

impl TrainOutcome {
    pub fn summary_lines(&self) -> Vec<String> {
        self.test_metrics
            .iter()
            .map(|row| {
                format!(
                    "test mode={} scale={}: {}",
                    row.mode.as_str(),
                    row.scale,
                    row.metrics.csv_row()
                )
            })
            .collect()
    }
}

pub fn items_for(dataset: &Dataset, split: &[Instance]) -> Result<Vec<TrainItem>> {
    split
        .iter()
        .map(|inst| {
            Ok(TrainItem {
                inst: inst.clone(),
                hist: dataset.history(inst)?,
            })
        })
        .collect()
}

fn model_config_for(
    dataset: &Dataset,
    settings: &ModelSettings,
) -> Result<ModelConfig> {
    let d_y = match settings.task {
        Task::Regression => dataset.target_rows.len(),
        Task::Classification => settings.n_classes.ok_or_else(|| {
            Error::config("classification needs --n-classes to size the head")
        })?,
    };
    let config = ModelConfig {
        d_x: dataset.feature_rows.len(),
        d_y,
        d_s: settings.d_s,
        d_h: settings.d_h,
        d_v: settings.d_v,
        d_a: settings.d_a,
        t: dataset.manifest.t,
        k: dataset.manifest.k,
        t_y: dataset.manifest.t_y,
        task: settings.task,
    };
    config.validate()?;
    Ok(config)
}

/// Full training pipeline: prepare data, fit, evaluate the test split under
/// both prediction modes on both scales, and write every artifact.
pub fn run_train(
    manifest: &DatasetManifest,
    settings: &ModelSettings,
    train_cfg: &TrainConfig,
    out: &Path,
    export_hidden: bool,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    let dataset = Dataset::prepare(manifest)?;
    let config = model_config_for(&dataset, settings)?;
    let mut model = HyperModel::init(config, settings.cell, train_cfg.seed)?;

    let train_items = items_for(&dataset, &dataset.train)?;
    let valid_items = items_for(&dataset, &dataset.valid)?;
    let test_items = items_for(&dataset, &dataset.test)?;

    let report = fit(&mut model, &train_items, &valid_items, train_cfg)?;

    let manifest_copy = out.join("manifest.copy");
    manifest.save(&manifest_copy)?;
    let report_csv = out.join("train_report.csv");
    report.save_csv(&report_csv)?;
    let checkpoint = out.join("model.ckpt");
    model.save(&checkpoint)?;

    let mut rows = Vec::new();
    for mode in [PredictMode::Last, PredictMode::Mean] {
        match settings.task {
            Task::Regression => {
                rows.push(MetricsRow {
                    mode,
                    scale: "raw",
                    metrics: evaluate(
                        &model,
                        &test_items,
                        mode,
                        Some((&dataset.stats, &dataset.target_rows)),
                    )?,
                });
                rows.push(MetricsRow {
                    mode,
                    scale: "normalized",
                    metrics: evaluate(&model, &test_items, mode, None)?,
                });
            }
            Task::Classification => {
                rows.push(MetricsRow {
                    mode,
                    scale: "raw",
                    metrics: evaluate(&model, &test_items, mode, None)?,
                });
            }
        }
    }
    let metrics_path = out.join("metrics.csv");
    std::fs::write(&metrics_path, metrics_csv(&rows))?;

    let hidden_states = if export_hidden {
        let path = out.join("hidden_states.csv");
        let item = test_items
            .last()
            .ok_or_else(|| Error::contract("no test instance to export"))?;
        model.export_hidden_states(&item.hist.windows, &path)?;
        Some(path)
    } else {
        None
    };

    Ok(TrainOutcome {
        out_dir: out.to_path_buf(),
        checkpoint,
        report_csv,
        metrics_csv: metrics_path,
        manifest_copy,
        hidden_states,
        report,
        test_metrics: rows,
        model,
    })
}

/// Evaluate a trained model on a manifest's test split. Normalization
/// statistics are refit from the manifest's training split, which is
/// deterministic for a fixed manifest.
pub fn run_eval(
    manifest: &DatasetManifest,
    model: &HyperModel,
    modes: &[PredictMode],
) -> Result<Vec<MetricsRow>> {
    let dataset = Dataset::prepare(manifest)?;
    let test_items = items_for(&dataset, &dataset.test)?;
    let mut rows = Vec::new();
    for &mode in modes {
        match model.config.task {
            Task::Regression => {
                rows.push(MetricsRow {
                    mode,
                    scale: "raw",
                    metrics: evaluate(
                        model,
                        &test_items,
                        mode,
                        Some((&dataset.stats, &dataset.target_rows)),
                    )?,
                });
                rows.push(MetricsRow {
                    mode,
                    scale: "normalized",
                    metrics: evaluate(model, &test_items, mode, None)?,
                });
            }
            Task::Classification => {
                rows.push(MetricsRow {
                    mode,
                    scale: "raw",
                    metrics: evaluate(model, &test_items, mode, None)?,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Vary the encoder input length t/k by adjusting the pooling kernel.
    Tk,
    /// Vary the prediction horizon t_y.
    Horizon,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tk" => Ok(SweepAxis::Tk),
            "horizon" => Ok(SweepAxis::Horizon),
            other => Err(Error::config(format!("unknown sweep axis '{}'", other))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Tk => "tk",
            SweepAxis::Horizon => "horizon",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: usize,
    pub seed: u64,
    /// Raw-scale test RMSE under the last-window mode; None when the run
    /// failed (error text in `status`).
    pub rmse: Option<f64>,
    pub status: String,
}

pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub table_path: PathBuf,
    pub notes: Vec<String>,
}

fn sweep_manifest(
    base: &DatasetManifest,
    axis: SweepAxis,
    value: usize,
) -> Result<DatasetManifest> {
    let mut m = base.clone();
    match axis {
        SweepAxis::Tk => {
            if value == 0 || base.t % value != 0 {
                return Err(Error::config(format!(
                    "tk value {} does not divide window length {}",
                    value, base.t
                )));
            }
            m.k = base.t / value;
        }
        SweepAxis::Horizon => {
            if value == 0 {
                return Err(Error::config("horizon must be positive"));
            }
            m.t_y = value;
        }
    }
    Ok(m)
}

/// One training run per (axis value, seed); each run gets its own
/// subdirectory. Per-run failures are recorded in the table and the sweep
/// continues. For the tk axis the table is annotated with whether the
/// shortest encoder input came out worst, a qualitative expectation rather
/// than an assertion.
pub fn run_sweep(
    base: &DatasetManifest,
    axis: SweepAxis,
    values: &[usize],
    seeds: &[u64],
    settings: &ModelSettings,
    train_cfg: &TrainConfig,
    out: &Path,
) -> Result<SweepReport> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::config("sweep needs at least one value and one seed"));
    }
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for &value in values {
        for &seed in seeds {
            let run_dir = out.join(format!("{}_{}_seed{}", axis.as_str(), value, seed));
            let mut cfg = train_cfg.clone();
            cfg.seed = seed;
            let outcome = sweep_manifest(base, axis, value)
                .and_then(|m| run_train(&m, settings, &cfg, &run_dir, false));
            match outcome {
                Ok(o) => {
                    let rmse = o
                        .test_metrics
                        .iter()
                        .find(|r| r.mode == PredictMode::Last && r.scale == "raw")
                        .and_then(|r| match &r.metrics {
                            Metrics::Regression { rmse, .. } => Some(*rmse),
                            Metrics::Classification { acc, .. } => Some(1.0 - acc),
                        });
                    rows.push(SweepRow {
                        value,
                        seed,
                        rmse,
                        status: "ok".to_string(),
                    });
                }
                Err(e) => rows.push(SweepRow {
                    value,
                    seed,
                    rmse: None,
                    status: format!("failed: {}", e),
                }),
            }
        }
    }

    let mut table = format!("{},seed,rmse,status\n", axis.as_str());
    for row in &rows {
        let _ = writeln!(
            table,
            "{},{},{},{}",
            row.value,
            row.seed,
            row.rmse.map(|v| v.to_string()).unwrap_or_default(),
            row.status
        );
    }

    let mut notes = Vec::new();
    if axis == SweepAxis::Tk && values.len() > 1 {
        let min_value = *values.iter().min().unwrap();
        let mut worst_at_min = 0usize;
        let mut seeds_counted = 0usize;
        for &seed in seeds {
            let per_seed: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.seed == seed && r.rmse.is_some())
                .collect();
            if per_seed.len() != values.len() {
                continue;
            }
            seeds_counted += 1;
            let worst = per_seed
                .iter()
                .max_by(|a, b| a.rmse.partial_cmp(&b.rmse).unwrap())
                .unwrap();
            if worst.value == min_value {
                worst_at_min += 1;
            }
        }
        let note = format!(
            "# expectation: shortest encoder input (tk={}) worst in {}/{} seeds",
            min_value, worst_at_min, seeds_counted
        );
        table.push_str(&note);
        table.push('\n');
        notes.push(note);
    }

    let table_path = out.join("sweep.csv");
    std::fs::write(&table_path, table)?;
    Ok(SweepReport {
        rows,
        table_path,
        notes,
    })
}

/// Final encoder state of every historical window of one test instance.
pub fn run_export_hidden(
    manifest: &DatasetManifest,
    model: &HyperModel,
    instance: Option<usize>,
    path: &Path,
) -> Result<()> {
    let dataset = Dataset::prepare(manifest)?;
    let idx = instance.unwrap_or(dataset.test.len().saturating_sub(1));
    let inst = dataset
        .test
        .get(idx)
        .ok_or_else(|| Error::contract(format!("test instance {} out of range", idx)))?;
    let hist = dataset.history(inst)?;
    model.export_hidden_states(&hist.windows, path)
}
