//! The run matrix: every (model, feature spec, target) combination plus the
//! region-mean reference runs, each persisted as its own record.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calendar::YearRange;
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_experiment, EvalResult, ModelClass};
use crate::explain::{
    shap_concentration, shap_rows, summarize, write_shap_csv, ConcentrationScore, ShapSummary, ShapVector,
};
use crate::indicators::{build_feature_table, FeatureSpec, FeatureTable};
use crate::ingest::{Cell, WeatherPanel, YieldPanel};
use crate::models::{fit_model, grid_search, CvRow, GridResult, HyperGrid, ModelKind, ModelParams, TreeEnsemble};
use crate::par;
use crate::splits::{expanding_window_folds, make_split_plan, select_validation_years, SplitPlan};
use crate::targets::{build_target_table, TargetKind, TargetTable};

pub use config::{load_panels, DataSource, ExperimentConfig, ShapSplit, SplitConfig};
pub use report::{load_records, pearson, report, write_report, write_results_csv, ReportBundle, ReportStats};

pub const RECORDS_DIR: &str = "records";
pub const MODELS_DIR: &str = "models";
pub const SHAP_DIR: &str = "shap";
pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixPoint {
    pub id: String,
    pub model: ModelKind,
    pub spec: String,
    pub target: TargetKind,
    pub is_reference: bool,
}

/// Matrix points in run order: specs, then targets, then models, followed by
/// the two reference runs on `reference_target`.
pub fn matrix_points(cfg: &ExperimentConfig) -> Vec<MatrixPoint> {
    let mut out = Vec::new();
    for spec in &cfg.feature_specs {
        let spec = config::spec_label(spec);
        for &target in &cfg.targets {
            for &model in &cfg.models {
                out.push(MatrixPoint {
                    id: format!("{model}__{spec}__{target}"),
                    model,
                    spec: spec.clone(),
                    target,
                    is_reference: false,
                });
            }
        }
    }
    let target = cfg.reference_target();
    for model in [ModelKind::Rf, ModelKind::Gbt] {
        out.push(MatrixPoint {
            id: format!("ref__{model}__{target}"),
            model,
            spec: "reference".into(),
            target,
            is_reference: true,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub experiment: String,
    pub model_kind: ModelKind,
    pub feature_spec: String,
    pub target_kind: TargetKind,
    pub is_reference: bool,
    pub seed: u64,
    pub status: PointStatus,
    /// Why a failed point failed.
    pub reason: Option<String>,
    pub validation_years: Vec<i32>,
    pub n_train: usize,
    pub features: Vec<String>,
    pub eval: Option<EvalResult>,
    pub label: Option<ModelClass>,
    pub gap_threshold: f64,
    pub best_params: Option<ModelParams>,
    pub cv_table: Vec<CvRow>,
    pub shap_split: ShapSplit,
    /// Relative to the output root.
    pub shap_file: Option<String>,
    pub model_file: Option<String>,
    pub shap_summary: Option<ShapSummary>,
    /// Absent when every attribution is zero (constant model).
    pub concentration: Option<ConcentrationScore>,
    /// Largest |base + Σ phi − prediction| over every feature row.
    pub max_local_accuracy_error: Option<f64>,
    pub wall_time_s: f64,
}

impl ExperimentRecord {
    /// Equality ignoring the wall-time field.
    pub fn same_outcome(&self, other: &ExperimentRecord) -> bool {
        let mut a = self.clone();
        a.wall_time_s = other.wall_time_s;
        &a == other
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Skip points whose record already exists instead of refusing to run.
    pub resume: bool,
    /// Worker threads; 0 uses the default pool.
    pub jobs: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    /// Every record of the matrix, in point order.
    pub records: Vec<ExperimentRecord>,
    pub new_points: usize,
}

/// Fitted model and bookkeeping from [`train_on_plan`].
pub struct Trained {
    pub model: TreeEnsemble,
    pub grid: GridResult,
    pub trained_cells: BTreeSet<Cell>,
}

/// Grid-searches on expanding-window folds over the plan's training years,
/// then refits the best point on every training cell.
#[allow(clippy::too_many_arguments)]
pub fn train_on_plan(
    kind: ModelKind,
    features: &FeatureTable,
    targets: &TargetTable,
    plan: &SplitPlan,
    grid: &HyperGrid,
    n_folds: usize,
    seed: u64,
) -> Result<Trained> {
    let index = features.index();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut years = Vec::new();
    let mut trained_cells = BTreeSet::new();
    for cell in &plan.train_cells {
        if let (Some(&i), Some(v)) = (index.get(cell), targets.get(cell)) {
            x.push(features.values[i].clone());
            y.push(v);
            years.push(cell.1);
            trained_cells.insert(cell.clone());
        }
    }
    if x.is_empty() {
        return Err(Error::DegenerateData("no training cells with features and targets".into()));
    }
    let names = features.names();
    let folds = expanding_window_folds(&years, n_folds)?;
    let grid = grid_search(kind, &x, &y, &years, &names, grid, &folds, seed)?;
    let model = fit_model(kind, &x, &y, &names, &grid.best, seed)?;
    Ok(Trained {
        model,
        grid,
        trained_cells,
    })
}

/// Cells evaluated for SHAP under `split`.
pub fn shap_cells(split: ShapSplit, features: &FeatureTable, plan: &SplitPlan) -> Vec<Cell> {
    features
        .rows
        .iter()
        .filter(|c| match split {
            ShapSplit::Test => plan.test_cells.contains(*c),
            ShapSplit::Validation => plan.is_validation(c),
            ShapSplit::All => true,
        })
        .cloned()
        .collect()
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    weather: &'a WeatherPanel,
    yields: &'a YieldPanel,
    specs: BTreeMap<String, FeatureSpec>,
    reference: YearRange,
    validation_years: BTreeSet<i32>,
    features: BTreeMap<String, std::result::Result<FeatureTable, String>>,
    targets: BTreeMap<TargetKind, std::result::Result<TargetTable, String>>,
}

struct PointOutput {
    record: ExperimentRecord,
    model: TreeEnsemble,
    shap_csv: Vec<u8>,
}

fn describe(e: &Error) -> String {
    format!("{} error: {e}", e.category().name())
}

impl Context<'_> {
    fn run_point(&self, p: &MatrixPoint) -> (ExperimentRecord, Option<(TreeEnsemble, Vec<u8>)>) {
        let start = Instant::now();
        let mut skeleton = ExperimentRecord {
            id: p.id.clone(),
            experiment: self.cfg.name.clone(),
            model_kind: p.model,
            feature_spec: p.spec.clone(),
            target_kind: p.target,
            is_reference: p.is_reference,
            seed: self.cfg.seed,
            status: PointStatus::Failed,
            reason: None,
            validation_years: self.validation_years.iter().copied().collect(),
            n_train: 0,
            features: Vec::new(),
            eval: None,
            label: None,
            gap_threshold: self.cfg.gap_threshold,
            best_params: None,
            cv_table: Vec::new(),
            shap_split: self.cfg.shap_split,
            shap_file: None,
            model_file: None,
            shap_summary: None,
            concentration: None,
            max_local_accuracy_error: None,
            wall_time_s: 0.0,
        };
        let result = self.fit_point(p, skeleton.clone());
        let elapsed = start.elapsed().as_secs_f64();
        match result {
            Ok(Ok(mut out)) => {
                out.record.wall_time_s = elapsed;
                (out.record, Some((out.model, out.shap_csv)))
            }
            Ok(Err(reason)) | Err(reason) => {
                skeleton.reason = Some(reason);
                skeleton.wall_time_s = elapsed;
                (skeleton, None)
            }
        }
    }

    /// Outer error: a cached input failed to build. Inner error: this point failed.
    fn fit_point(
        &self,
        p: &MatrixPoint,
        rec: ExperimentRecord,
    ) -> std::result::Result<std::result::Result<PointOutput, String>, String> {
        let full = self.features[&p.spec].as_ref().map_err(Clone::clone)?;
        let targets = self.targets[&p.target].as_ref().map_err(Clone::clone)?;
        Ok(self.fit_point_inner(p, rec, full, targets).map_err(|e| describe(&e)))
    }

    fn fit_point_inner(
        &self,
        p: &MatrixPoint,
        mut rec: ExperimentRecord,
        full: &FeatureTable,
        targets: &TargetTable,
    ) -> Result<PointOutput> {
        let cfg = self.cfg;
        let spec = &self.specs[&p.spec];
        let cells: BTreeSet<Cell> = full.rows.iter().filter(|c| targets.get(c).is_some()).cloned().collect();
        let pool = match cfg.split.pool {
            Some(p) => p,
            None => {
                let first = cells.iter().map(|c| c.1).min().ok_or(Error::EmptyPool)?;
                let last = cells.iter().map(|c| c.1).max().ok_or(Error::EmptyPool)?;
                YearRange::new(first, last)
            }
        };
        let plan = make_split_plan(&cells, &self.validation_years, pool, cfg.split.test_frac, cfg.seed)?;
        let rebuilt;
        let features = if spec.uses_region_mean() {
            rebuilt = build_feature_table(self.weather, self.yields, spec, self.reference, Some(&plan.train_cells))?;
            &rebuilt
        } else {
            full
        };
        let trained = train_on_plan(p.model, features, targets, &plan, &cfg.grid, cfg.split.n_folds, cfg.seed)?;
        let eval = evaluate_experiment(
            &trained.model,
            features,
            targets,
            &plan,
            &trained.trained_cells,
            cfg.baseline,
        )?;

        let shap_all = shap_rows(&trained.model, &features.values)?;
        let max_err = shap_all.iter().map(ShapVector::local_accuracy_error).fold(0.0, f64::max);
        let wanted: BTreeSet<Cell> = shap_cells(cfg.shap_split, features, &plan).into_iter().collect();
        let (cells, shap): (Vec<Cell>, Vec<ShapVector>) = features
            .rows
            .iter()
            .zip(shap_all)
            .filter(|(c, _)| wanted.contains(*c))
            .map(|(c, v)| (c.clone(), v))
            .unzip();
        let names = features.names();
        let summary = summarize(&p.id, &names, &shap)?;
        let mut shap_csv = Vec::new();
        write_shap_csv(&mut shap_csv, &p.id, &names, &cells, &shap)?;

        rec.status = PointStatus::Ok;
        rec.n_train = trained.trained_cells.len();
        rec.features = names;
        rec.label = Some(eval.classify(cfg.gap_threshold));
        rec.eval = Some(eval);
        rec.best_params = Some(trained.grid.best);
        rec.cv_table = trained.grid.table;
        rec.shap_file = Some(format!("{SHAP_DIR}/{}.csv", p.id));
        rec.model_file = Some(format!("{MODELS_DIR}/{}.json", p.id));
        rec.concentration = shap_concentration(&summary).ok();
        rec.shap_summary = Some(summary);
        rec.max_local_accuracy_error = Some(max_err);
        Ok(PointOutput {
            record: rec,
            model: trained.model,
            shap_csv,
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn append_index(root: &Path, rec: &ExperimentRecord) -> Result<()> {
    let path = root.join(INDEX_FILE);
    let io = |e| Error::io(&path, e);
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
    f.lock().map_err(io)?;
    let line = serde_json::json!({
        "id": rec.id,
        "status": rec.status,
        "label": rec.label,
    });
    let res = writeln!(f, "{line}").map_err(io);
    f.unlock().map_err(io)?;
    res
}

fn persist(root: &Path, rec: &ExperimentRecord, artifacts: Option<(TreeEnsemble, Vec<u8>)>) -> Result<()> {
    if let Some((model, shap)) = artifacts {
        write_atomic(&root.join(MODELS_DIR).join(format!("{}.json", rec.id)), model.to_json()?.as_bytes())?;
        write_atomic(&root.join(SHAP_DIR).join(format!("{}.csv", rec.id)), &shap)?;
    }
    // The record goes last: its presence marks the point as complete.
    write_atomic(&root.join(RECORDS_DIR).join(format!("{}.json", rec.id)), rec.to_json()?.as_bytes())?;
    append_index(root, rec)
}

fn record_path(root: &Path, id: &str) -> PathBuf {
    root.join(RECORDS_DIR).join(format!("{id}.json"))
}

/// Runs every matrix point not yet recorded under `out`. Without
/// `opts.resume`, existing records are an error rather than being touched.
pub fn run_matrix(
    cfg: &ExperimentConfig,
    weather: &WeatherPanel,
    yields: &YieldPanel,
    out: &Path,
    opts: RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    for dir in [RECORDS_DIR, MODELS_DIR, SHAP_DIR] {
        fs::create_dir_all(out.join(dir)).map_err(|e| Error::io(out.join(dir), e))?;
    }
    let points = matrix_points(cfg);
    let done: Vec<bool> = points.iter().map(|p| record_path(out, &p.id).exists()).collect();
    if !opts.resume && done.iter().any(|d| *d) {
        return Err(Error::ConfigInvalid(format!(
            "{} already holds records; rerun with --resume to continue",
            out.display()
        )));
    }
    let pending: Vec<&MatrixPoint> = points.iter().zip(&done).filter(|(_, d)| !**d).map(|(p, _)| p).collect();

    if !pending.is_empty() {
        par::with_jobs(opts.jobs, || -> Result<()> {
            let ctx = build_context(cfg, weather, yields, &pending)?;
            let results = par::map(&pending, |p| {
                let (rec, artifacts) = ctx.run_point(p);
                persist(out, &rec, artifacts)
            });
            results.into_iter().collect()
        })?;
    }

    let records = points
        .iter()
        .map(|p| {
            let path = record_path(out, &p.id);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            ExperimentRecord::from_json(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutcome {
        records,
        new_points: pending.len(),
    })
}

fn build_context<'a>(
    cfg: &'a ExperimentConfig,
    weather: &'a WeatherPanel,
    yields: &'a YieldPanel,
    pending: &[&MatrixPoint],
) -> Result<Context<'a>> {
    let mut specs = cfg.resolve_specs()?;
    if !specs.contains_key("reference") {
        let spec = crate::indicators::builtin_spec("reference").expect("builtin");
        specs.insert("reference".into(), spec);
    }
    let reference = cfg.indicator_reference.unwrap_or_else(|| weather.years());
    let validation_years = select_validation_years(yields, &cfg.split.validation, cfg.split.pool)?;

    let spec_names: Vec<String> = pending
        .iter()
        .map(|p| p.spec.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let features = spec_names
        .into_iter()
        .map(|name| {
            let table = build_feature_table(weather, yields, &specs[&name], reference, None).map_err(|e| describe(&e));
            (name, table)
        })
        .collect();
    let targets = pending
        .iter()
        .map(|p| p.target)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|k| (k, build_target_table(yields, k, &cfg.target).map_err(|e| describe(&e))))
        .collect();
    Ok(Context {
        cfg,
        weather,
        yields,
        specs,
        reference,
        validation_years,
        features,
        targets,
    })
}
