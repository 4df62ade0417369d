//! `agroval`: command-line access to each pipeline stage and the full run matrix.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agroval::calendar::YearRange;
use agroval::evaluate::{evaluate_experiment, Baseline, DEFAULT_GAP_THRESHOLD};
use agroval::experiment::{
    load_panels, load_records, report, run_matrix, shap_cells, train_on_plan, write_report, ExperimentConfig,
    RunOptions, ShapSplit,
};
use agroval::explain::{shap_concentration, shap_rows, summarize, write_shap_csv, write_summary_csv};
use agroval::indicators::{build_feature_table, builtin_spec, FeatureSpec, FeatureTable};
use agroval::ingest::{
    load_weather_csv, load_yield_csv, synth_generate, validate_panels, write_weather_csv, write_yield_csv, Cell,
    SynthConfig,
};
use agroval::models::{HyperGrid, ModelKind, TreeEnsemble};
use agroval::splits::{make_split_plan, select_validation_years, SplitPlan, ValidationMode};
use agroval::targets::{build_target_table, QuadraticTrend, TargetConfig, TargetKind, TargetTable};
use agroval::{Error, ErrorCategory};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agroval", version, about = "Crop-yield prediction with temporal validation and SHAP diagnostics")]
struct Cli {
    /// Seed for every random choice (0 if omitted; `run` falls back to the config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file (experiment TOML for `run`, grid or synth settings elsewhere).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, global = true, env = "AGROVAL_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic weather and yield panels plus their ground truth.
    Synth(SynthArgs),
    /// Cross-check a weather and a yield panel.
    Validate(PanelArgs),
    /// Build and export a feature table.
    Features(FeaturesArgs),
    /// Build and export a target table.
    Targets(TargetsArgs),
    /// Partition cells into train, test and validation.
    Split(SplitArgs),
    /// Grid-search and fit one model on a split.
    Train(TrainArgs),
    /// Score a saved model on a split.
    Evaluate(EvaluateArgs),
    /// SHAP values for a saved model.
    Explain(ExplainArgs),
    /// Run the full experiment matrix from `--config`.
    Run(RunArgs),
    /// Summarize the records under `--out`.
    Report,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    regions: Option<usize>,
    /// Year span as FIRST:LAST.
    #[arg(long)]
    years: Option<String>,
}

#[derive(Args)]
struct PanelArgs {
    #[arg(long)]
    weather: PathBuf,
    #[arg(long)]
    yields: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    panels: PanelArgs,
    /// Builtin spec name or path to a spec JSON file.
    #[arg(long)]
    spec: String,
    /// Reference period FIRST:LAST for thresholds and index fits.
    #[arg(long)]
    reference: Option<String>,
    /// Split plan whose train cells feed the region-mean-yield column.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct TargetsArgs {
    #[arg(long)]
    yields: PathBuf,
    /// yield, gap_abs, gap_ratio or anomaly.
    #[arg(long)]
    kind: String,
    /// Trend window FIRST:LAST.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    lag: Option<i32>,
    #[arg(long)]
    anomaly_window: Option<i32>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    yields: PathBuf,
    /// `auto` or comma-separated years.
    #[arg(long, default_value = "2004,2018")]
    validation: String,
    #[arg(long)]
    pool: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    /// Restrict cells to rows of this feature table.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Restrict cells to rows of this target table.
    #[arg(long)]
    targets: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value = "gbt")]
    model: String,
    #[arg(long, default_value_t = 5)]
    n_folds: usize,
    /// Base name of the written model file.
    #[arg(long, default_value = "model")]
    name: String,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// eval_mean or train_mean.
    #[arg(long, default_value = "eval_mean")]
    baseline: String,
    #[arg(long, default_value_t = DEFAULT_GAP_THRESHOLD)]
    gap_threshold: f64,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Split plan used to pick rows; every row is explained without it.
    #[arg(long)]
    split: Option<PathBuf>,
    /// test, validation or all.
    #[arg(long, default_value = "test")]
    rows: String,
    /// Model id written into the CSVs; defaults to the model file stem.
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Skip matrix points that already have a record.
    #[arg(long)]
    resume: bool,
    /// Concurrent worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

/// Bad flag combinations detected after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

impl Cli {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn open(path: &Path) -> Result<fs::File> {
    Ok(fs::File::open(path).map_err(|e| Error::io(path, e))?)
}

fn load_spec(spec: &str) -> Result<FeatureSpec> {
    match builtin_spec(spec) {
        Some(s) => Ok(s),
        None => Ok(FeatureSpec::load(spec)?),
    }
}

fn load_features(path: &Path) -> Result<FeatureTable> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_prefix("features_").unwrap_or(&name).to_string();
    FeatureTable::read_csv(open(path)?, &name).with_context(|| format!("reading {}", path.display()))
}

fn trend_path(targets: &Path) -> PathBuf {
    targets.with_extension("trend.json")
}

fn load_targets(path: &Path) -> Result<TargetTable> {
    let trend: QuadraticTrend = serde_json::from_str(&read_text(&trend_path(path))?).map_err(Error::from)?;
    TargetTable::read_csv(open(path)?, trend).with_context(|| format!("reading {}", path.display()))
}

fn load_plan(path: &Path) -> Result<SplitPlan> {
    SplitPlan::from_json(&read_text(path)?).with_context(|| format!("reading {}", path.display()))
}

fn grid_from_config(cli: &Cli) -> Result<HyperGrid> {
    match &cli.config {
        Some(p) => Ok(ExperimentConfig::load(p)?.grid),
        None => Ok(HyperGrid::default()),
    }
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => SynthConfig::from_toml(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    cfg.seed = cli.seed();
    if let Some(n) = a.regions {
        cfg.n_regions = n;
    }
    if let Some(y) = &a.years {
        let r = YearRange::parse(y)?;
        cfg.first_year = r.first;
        cfg.last_year = r.last;
    }
    let out = synth_generate(&cfg)?;
    let dir = out_dir(cli)?;
    let mut buf = Vec::new();
    write_weather_csv(&out.weather, &mut buf)?;
    write_file(&dir.join("weather.csv"), &buf)?;
    buf.clear();
    write_yield_csv(&out.yields, &mut buf)?;
    write_file(&dir.join("yield.csv"), &buf)?;
    write_file(&dir.join("truth.json"), serde_json::to_string_pretty(&out.truth)?)?;
    println!(
        "wrote {} regions x {} years to {}",
        cfg.n_regions,
        cfg.years().len(),
        dir.display()
    );
    Ok(())
}

fn cmd_validate(a: &PanelArgs) -> Result<()> {
    let weather = load_weather_csv(&a.weather)?;
    let yields = load_yield_csv(&a.yields)?;
    let rep = validate_panels(&weather, &yields);
    println!("{}", serde_json::to_string_pretty(&rep)?);
    if !rep.is_clean() {
        return Err(Error::InvariantViolation {
            line: 0,
            message: format!(
                "{} region mismatches, {} yield years without weather",
                rep.mismatches.len(),
                rep.uncovered_years.len()
            ),
        }
        .into());
    }
    Ok(())
}

fn cmd_features(cli: &Cli, a: &FeaturesArgs) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let weather = load_weather_csv(&a.panels.weather)?;
    let yields = load_yield_csv(&a.panels.yields)?;
    let reference = match &a.reference {
        Some(r) => YearRange::parse(r)?,
        None => weather.years(),
    };
    let train: Option<BTreeSet<Cell>> = match &a.split {
        Some(p) => Some(load_plan(p)?.train_cells),
        None => None,
    };
    let table = build_feature_table(&weather, &yields, &spec, reference, train.as_ref())?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    let path = out_dir(cli)?.join(format!("features_{}.csv", spec.name));
    write_file(&path, buf)?;
    println!(
        "{}: {} rows x {} features ({} dropped)",
        path.display(),
        table.n_rows(),
        table.n_features(),
        table.dropped
    );
    Ok(())
}

fn cmd_targets(cli: &Cli, a: &TargetsArgs) -> Result<()> {
    let kind: TargetKind = a.kind.parse().map_err(|e: Error| usage(e.to_string()))?;
    let yields = load_yield_csv(&a.yields)?;
    let mut cfg = TargetConfig::default();
    if let Some(w) = &a.window {
        cfg.window = Some(YearRange::parse(w)?);
    }
    if let Some(l) = a.lag {
        cfg.lag = l;
    }
    if let Some(w) = a.anomaly_window {
        cfg.anomaly_window = w;
    }
    let table = build_target_table(&yields, kind, &cfg)?;
    let path = out_dir(cli)?.join(format!("targets_{kind}.csv"));
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_file(&path, buf)?;
    write_file(&trend_path(&path), serde_json::to_string_pretty(&table.trend)?)?;
    println!("{}: {} rows ({} dropped)", path.display(), table.len(), table.dropped);
    Ok(())
}

fn cmd_split(cli: &Cli, a: &SplitArgs) -> Result<()> {
    let yields = load_yield_csv(&a.yields)?;
    let mode = ValidationMode::parse(&a.validation)?;
    let pool = a.pool.as_deref().map(YearRange::parse).transpose()?;
    let mut cells = yields.cells();
    if let Some(f) = &a.features {
        let rows: BTreeSet<Cell> = load_features(f)?.rows.into_iter().collect();
        cells.retain(|c| rows.contains(c));
    }
    if let Some(t) = &a.targets {
        let t = load_targets(t)?;
        cells.retain(|c| t.get(c).is_some());
    }
    let validation = select_validation_years(&yields, &mode, pool)?;
    let pool = match pool {
        Some(p) => p,
        None => yields.year_range().ok_or(Error::EmptyPool)?,
    };
    let plan = make_split_plan(&cells, &validation, pool, a.test_frac, cli.seed())?;
    let path = out_dir(cli)?.join("split.json");
    write_file(&path, plan.to_json()?)?;
    println!(
        "{}: validation years {:?}, {} train, {} test",
        path.display(),
        plan.validation_years,
        plan.train_cells.len(),
        plan.test_cells.len()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let kind: ModelKind = a.model.parse().map_err(|e: Error| usage(e.to_string()))?;
    let features = load_features(&a.features)?;
    let targets = load_targets(&a.targets)?;
    let plan = load_plan(&a.split)?;
    let grid = grid_from_config(cli)?;
    let trained = train_on_plan(kind, &features, &targets, &plan, &grid, a.n_folds, cli.seed())?;
    let dir = out_dir(cli)?;
    let model_path = dir.join(format!("{}.json", a.name));
    write_file(&model_path, trained.model.to_json()?)?;
    write_file(
        &dir.join(format!("{}.cv.json", a.name)),
        serde_json::to_string_pretty(&trained.grid)?,
    )?;
    println!(
        "{}: best {} (mean CV RMSE {:.4})",
        model_path.display(),
        serde_json::to_string(&trained.grid.best)?,
        trained.grid.table[trained.grid.best_index].mean_rmse
    );
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let baseline: Baseline = a.baseline.parse().map_err(|e: Error| usage(e.to_string()))?;
    let model = TreeEnsemble::load(&a.model)?;
    let features = load_features(&a.features)?;
    let targets = load_targets(&a.targets)?;
    let plan = load_plan(&a.split)?;
    let eval = evaluate_experiment(&model, &features, &targets, &plan, &plan.train_cells, baseline)?;
    let label = eval.classify(a.gap_threshold);
    let json = serde_json::json!({ "eval": eval, "label": label, "gap_threshold": a.gap_threshold });
    let text = serde_json::to_string_pretty(&json)?;
    write_file(&out_dir(cli)?.join("eval.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn cmd_explain(cli: &Cli, a: &ExplainArgs) -> Result<()> {
    let split: ShapSplit = serde_json::from_value(serde_json::Value::String(a.rows.clone()))
        .map_err(|_| usage(format!("--rows must be test, validation or all, got `{}`", a.rows)))?;
    let model = TreeEnsemble::load(&a.model)?;
    let features = load_features(&a.features)?;
    model.check_features(&features.names())?;
    let id = a.id.clone().unwrap_or_else(|| {
        a.model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
    });
    let cells: Vec<Cell> = match (&a.split, split) {
        (_, ShapSplit::All) => features.rows.clone(),
        (Some(p), s) => shap_cells(s, &features, &load_plan(p)?),
        (None, _) => return Err(usage("--split is required unless --rows all")),
    };
    let index = features.index();
    let rows: Vec<Vec<f64>> = cells.iter().map(|c| features.values[index[c]].clone()).collect();
    let shap = shap_rows(&model, &rows)?;
    let names = features.names();
    let summary = summarize(&id, &names, &shap)?;
    let dir = out_dir(cli)?;
    let mut buf = Vec::new();
    write_shap_csv(&mut buf, &id, &names, &cells, &shap)?;
    write_file(&dir.join("shap").join(format!("{id}.csv")), &buf)?;
    buf.clear();
    write_summary_csv(&mut buf, [&summary])?;
    write_file(&dir.join("shap").join(format!("{id}.summary.csv")), &buf)?;
    let worst = shap.iter().map(|v| v.local_accuracy_error()).fold(0.0, f64::max);
    match shap_concentration(&summary) {
        Ok(c) => println!(
            "{id}: {} rows, hhi {:.4}, top1 share {:.4}, max local accuracy error {worst:.2e}",
            summary.n_rows, c.hhi, c.top1_share
        ),
        Err(_) => println!("{id}: {} rows, all attributions zero", summary.n_rows),
    }
    Ok(())
}

fn cmd_run(cli: &Cli, a: &RunArgs) -> Result<()> {
    let path = cli.config.as_ref().ok_or_else(|| usage("run needs --config"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = match &cli.out {
        Some(p) => p.clone(),
        None => cfg.output_dir(),
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let (weather, yields, truth) = load_panels(&cfg)?;
    if let Some(t) = truth {
        write_file(&out.join("ground_truth.json"), serde_json::to_string_pretty(&t)?)?;
    }
    let outcome = run_matrix(
        &cfg,
        &weather,
        &yields,
        &out,
        RunOptions {
            resume: a.resume,
            jobs: a.jobs,
        },
    )?;
    let bundle = report(&outcome.records)?;
    write_report(&bundle, &out)?;
    println!("{} new points", outcome.new_points);
    print!("{}", bundle.summary);
    Ok(())
}

fn cmd_report(cli: &Cli) -> Result<()> {
    let out = cli.out.clone().ok_or_else(|| usage("report needs --out (or AGROVAL_OUT)"))?;
    let records = load_records(&out)?;
    let bundle = report(&records)?;
    write_report(&bundle, &out)?;
    print!("{}", bundle.summary);
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Validate(a) => cmd_validate(a),
        Command::Features(a) => cmd_features(cli, a),
        Command::Targets(a) => cmd_targets(cli, a),
        Command::Split(a) => cmd_split(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Explain(a) => cmd_explain(cli, a),
        Command::Run(a) => cmd_run(cli, a),
        Command::Report => cmd_report(cli),
    }
}

/// 1 for usage errors, 2 for data errors, 3 for run errors.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return (1, "usage");
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.category() {
                ErrorCategory::Data => (2, "data"),
                ErrorCategory::Run => (3, "run"),
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return (2, "data");
        }
    }
    (3, "run")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, name) = classify(&err);
            eprintln!("error[{name}]: {err:#}");
            ExitCode::from(code)
        }
    }
}
