use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ExperimentRecord, PointStatus, RECORDS_DIR};
use crate::error::{Error, Result};
use crate::evaluate::ModelClass;
use crate::models::ModelKind;

/// Pearson correlation; `None` with fewer than two points or zero spread.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportStats {
    pub n_records: usize,
    pub n_failed: usize,
    pub counts: BTreeMap<ModelClass, usize>,
    /// Per model kind: number of scored records and the r2_test/r2_validation correlation.
    pub correlation: BTreeMap<ModelKind, (usize, Option<f64>)>,
    /// Per class: number of records with a concentration score and their mean HHI.
    pub mean_hhi: BTreeMap<ModelClass, (usize, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub stats: ReportStats,
    pub summary: String,
    pub scatter_csv: String,
    pub shap_by_class_csv: String,
    pub results_csv: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn stats(records: &[ExperimentRecord]) -> ReportStats {
    let mut counts: BTreeMap<ModelClass, usize> = ModelClass::ALL.iter().map(|c| (*c, 0)).collect();
    let mut hhi: BTreeMap<ModelClass, Vec<f64>> = ModelClass::ALL.iter().map(|c| (*c, Vec::new())).collect();
    let mut pairs: BTreeMap<ModelKind, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut n_failed = 0;
    for r in records {
        let (Some(label), Some(eval)) = (r.label, &r.eval) else {
            n_failed += 1;
            continue;
        };
        *counts.entry(label).or_default() += 1;
        if let Some(c) = r.concentration {
            hhi.entry(label).or_default().push(c.hhi);
        }
        let e = pairs.entry(r.model_kind).or_default();
        e.0.push(eval.r2_test);
        e.1.push(eval.r2_validation);
    }
    ReportStats {
        n_records: records.len(),
        n_failed,
        counts,
        correlation: pairs
            .into_iter()
            .map(|(k, (a, b))| (k, (a.len(), pearson(&a, &b))))
            .collect(),
        mean_hhi: hhi
            .into_iter()
            .map(|(c, v)| {
                let mean = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
                (c, (v.len(), mean))
            })
            .collect(),
    }
}

fn summary_text(records: &[ExperimentRecord], s: &ReportStats) -> String {
    let mut out = String::new();
    let name = records.first().map(|r| r.experiment.as_str()).unwrap_or("");
    let _ = writeln!(out, "experiment: {name}");
    let _ = writeln!(
        out,
        "records: {} ({} scored, {} failed)",
        s.n_records,
        s.n_records - s.n_failed,
        s.n_failed
    );
    if let Some(r) = records.iter().find(|r| r.eval.is_some()) {
        let _ = writeln!(out, "gap_threshold: {}", r.gap_threshold);
        let _ = writeln!(out, "r2 baseline: {}", r.eval.as_ref().map(|e| e.baseline.name()).unwrap_or(""));
        let _ = writeln!(out, "validation years: {:?}", r.validation_years);
    }
    let _ = writeln!(out, "\nclass counts:");
    for (c, n) in &s.counts {
        let _ = writeln!(out, "  {:<16} {n}", c.name());
    }
    let _ = writeln!(out, "\ncorrelation of r2_test and r2_validation by model kind:");
    for (k, (n, r)) in &s.correlation {
        let _ = writeln!(out, "  {:<16} {} (n={n})", k.name(), fmt_opt(*r));
    }
    let _ = writeln!(out, "\nmean SHAP concentration (HHI) by class:");
    for (c, (n, h)) in &s.mean_hhi {
        let _ = writeln!(out, "  {:<16} {} (n={n})", c.name(), fmt_opt(*h));
    }
    let failed: Vec<_> = records.iter().filter(|r| r.status == PointStatus::Failed).collect();
    if !failed.is_empty() {
        let _ = writeln!(out, "\nfailed points:");
        for r in failed {
            let _ = writeln!(out, "  {}: {}", r.id, r.reason.as_deref().unwrap_or("unknown"));
        }
    }
    out
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn num(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// The per-record results table.
pub fn write_results_csv(records: &[ExperimentRecord]) -> Result<String> {
    let rows = records
        .iter()
        .map(|r| {
            let e = r.eval.as_ref();
            Ok(vec![
                r.id.clone(),
                r.model_kind.to_string(),
                r.feature_spec.clone(),
                r.target_kind.to_string(),
                num(e.map(|e| e.r2_test)),
                num(e.map(|e| e.r2_validation)),
                num(e.map(|e| e.rmse_test)),
                num(e.map(|e| e.rmse_validation)),
                r.label.map_or_else(|| "failed".to_string(), |l| l.to_string()),
                num(r.concentration.map(|c| c.hhi)),
                num(r.concentration.map(|c| c.top1_share)),
                match &r.best_params {
                    Some(p) => serde_json::to_string(p)?,
                    None => String::new(),
                },
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    csv_string(
        &[
            "experiment_id",
            "model_kind",
            "feature_spec",
            "target_kind",
            "r2_test",
            "r2_validation",
            "rmse_test",
            "rmse_validation",
            "label",
            "hhi",
            "top1_share",
            "params_json",
        ],
        rows,
    )
}

/// Summary text plus the scatter, SHAP-by-class and results tables.
pub fn report(records: &[ExperimentRecord]) -> Result<ReportBundle> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let stats = stats(records);
    let summary = summary_text(records, &stats);

    let scored = records.iter().filter_map(|r| Some((r, r.eval.as_ref()?, r.label?)));
    let scatter_rows = scored
        .clone()
        .map(|(r, e, l)| {
            vec![
                r.id.clone(),
                r.model_kind.to_string(),
                r.feature_spec.clone(),
                r.target_kind.to_string(),
                r.is_reference.to_string(),
                e.r2_test.to_string(),
                e.r2_validation.to_string(),
                l.to_string(),
            ]
        })
        .collect();
    let scatter_csv = csv_string(
        &[
            "experiment_id",
            "model_kind",
            "feature_spec",
            "target_kind",
            "is_reference",
            "r2_test",
            "r2_validation",
            "label",
        ],
        scatter_rows,
    )?;

    let mut shap_rows = Vec::new();
    for (r, _, l) in scored {
        let Some(s) = &r.shap_summary else { continue };
        let total: f64 = s.mean_abs_phi.iter().sum();
        for (f, v) in s.features.iter().zip(&s.mean_abs_phi) {
            let share = if total > 0.0 { v / total } else { 0.0 };
            shap_rows.push(vec![
                r.id.clone(),
                l.to_string(),
                r.model_kind.to_string(),
                r.feature_spec.clone(),
                r.target_kind.to_string(),
                f.clone(),
                v.to_string(),
                share.to_string(),
                num(r.concentration.map(|c| c.hhi)),
            ]);
        }
    }
    let shap_by_class_csv = csv_string(
        &[
            "experiment_id",
            "label",
            "model_kind",
            "feature_spec",
            "target_kind",
            "feature",
            "mean_abs_phi",
            "share",
            "hhi",
        ],
        shap_rows,
    )?;

    Ok(ReportBundle {
        stats,
        summary,
        scatter_csv,
        shap_by_class_csv,
        results_csv: write_results_csv(records)?,
    })
}

/// Writes the bundle under `<out>/report/`.
pub fn write_report(bundle: &ReportBundle, out: &Path) -> Result<()> {
    let dir = out.join("report");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (name, text) in [
        ("summary.txt", &bundle.summary),
        ("scatter.csv", &bundle.scatter_csv),
        ("shap_by_class.csv", &bundle.shap_by_class_csv),
        ("results.csv", &bundle.results_csv),
    ] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Every record under `<out>/records/`, sorted by id.
pub fn load_records(out: &Path) -> Result<Vec<ExperimentRecord>> {
    let dir = out.join(RECORDS_DIR);
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(&dir, e))?.path();
        if p.extension().is_some_and(|x| x == "json") {
            paths.push(p);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ExperimentRecord::from_json(&text)
        })
        .collect()
}
