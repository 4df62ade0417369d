//! Skill metrics and the test-versus-validation diagnosis.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::FeatureTable;
use crate::ingest::Cell;
use crate::models::{predict, TreeEnsemble};
use crate::splits::SplitPlan;
use crate::targets::TargetTable;

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Empty);
    }
    Ok(())
}

fn sum_sq_err(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok((sum_sq_err(y, yhat) / y.len() as f64).sqrt())
}

/// Reference level for the denominator of R².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Mean of the observed values being scored.
    #[default]
    EvalMean,
    /// Mean of the training targets.
    TrainMean,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::EvalMean => "eval_mean",
            Baseline::TrainMean => "train_mean",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eval_mean" => Ok(Baseline::EvalMean),
            "train_mean" => Ok(Baseline::TrainMean),
            other => Err(Error::ConfigInvalid(format!(
                "unknown baseline `{other}` (expected eval_mean or train_mean)"
            ))),
        }
    }
}

/// Coefficient of determination against the mean of `y`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    r2_against(y, yhat, mean)
}

/// R² with an explicit reference level. The variance condition is always
/// checked around the mean of `y`, so a constant `y` is rejected even when
/// `reference` differs from it.
pub fn r2_against(y: &[f64], yhat: &[f64], reference: f64) -> Result<f64> {
    check_pair(y, yhat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if y.len() < 2 || ss_var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_tot: f64 = y.iter().map(|v| (v - reference) * (v - reference)).sum();
    Ok(1.0 - sum_sq_err(y, yhat) / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelClass {
    Effective,
    Degrading,
    Underperforming,
}

impl ModelClass {
    pub const ALL: [ModelClass; 3] = [ModelClass::Effective, ModelClass::Degrading, ModelClass::Underperforming];

    pub fn name(self) -> &'static str {
        match self {
            ModelClass::Effective => "effective",
            ModelClass::Degrading => "degrading",
            ModelClass::Underperforming => "underperforming",
        }
    }
}

impl fmt::Display for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_GAP_THRESHOLD: f64 = 0.2;

/// Negative validation skill means underperforming; otherwise a test lead
/// larger than `gap_threshold` means degrading.
pub fn classify_model(r2_test: f64, r2_validation: f64, gap_threshold: f64) -> ModelClass {
    if r2_validation < 0.0 {
        ModelClass::Underperforming
    } else if r2_test - r2_validation > gap_threshold {
        ModelClass::Degrading
    } else {
        ModelClass::Effective
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub r2_test: f64,
    pub r2_validation: f64,
    pub rmse_test: f64,
    pub rmse_validation: f64,
    pub n_test: usize,
    pub n_validation: usize,
    pub baseline: Baseline,
}

impl EvalResult {
    pub fn classify(&self, gap_threshold: f64) -> ModelClass {
        classify_model(self.r2_test, self.r2_validation, gap_threshold)
    }
}

fn gather(
    cells: &BTreeSet<Cell>,
    features: &FeatureTable,
    targets: &TargetTable,
    what: &str,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let index = features.index();
    let mut x = Vec::with_capacity(cells.len());
    let mut y = Vec::with_capacity(cells.len());
    let mut missing = Vec::new();
    for cell in cells {
        match (index.get(cell), targets.get(cell)) {
            (Some(&i), Some(v)) => {
                x.push(features.values[i].clone());
                y.push(v);
            }
            _ => missing.push(format!("({}, {})", cell.0, cell.1)),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(5).cloned().collect();
        return Err(Error::MissingCells(format!(
            "{} {what} cells lack features or targets: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 5 { ", ..." } else { "" }
        )));
    }
    if x.is_empty() {
        return Err(Error::MissingCells(format!("no {what} cells to evaluate")));
    }
    Ok((x, y))
}

/// Scores `model` on the plan's test cells and on every cell with both
/// features and targets in a validation year. `trained_cells` are the cells
/// the model was fitted on; any overlap with an evaluated cell is rejected.
pub fn evaluate_experiment(
    model: &TreeEnsemble,
    features: &FeatureTable,
    targets: &TargetTable,
    plan: &SplitPlan,
    trained_cells: &BTreeSet<Cell>,
    baseline: Baseline,
) -> Result<EvalResult> {
    plan.check_leakage()?;
    let index = features.index();
    let validation: BTreeSet<Cell> = features
        .rows
        .iter()
        .filter(|c| plan.is_validation(c) && targets.get(c).is_some())
        .cloned()
        .collect();
    for (set, what) in [(&plan.test_cells, "test"), (&validation, "validation")] {
        if let Some(c) = set.intersection(trained_cells).next() {
            return Err(Error::LeakageDetected(format!(
                "{what} cell ({}, {}) was used for training",
                c.0, c.1
            )));
        }
    }
    let names = features.names();
    let (x_test, y_test) = gather(&plan.test_cells, features, targets, "test")?;
    let (x_val, y_val) = gather(&validation, features, targets, "validation")?;
    let p_test = predict(model, &names, &x_test)?;
    let p_val = predict(model, &names, &x_val)?;

    let score = |y: &[f64], p: &[f64]| -> Result<f64> {
        match baseline {
            Baseline::EvalMean => r2(y, p),
            Baseline::TrainMean => {
                let train: Vec<f64> = trained_cells
                    .iter()
                    .filter(|c| index.contains_key(c))
                    .filter_map(|c| targets.get(c))
                    .collect();
                if train.is_empty() {
                    return Err(Error::MissingCells("no training targets for the baseline".into()));
                }
                r2_against(y, p, train.iter().sum::<f64>() / train.len() as f64)
            }
        }
    };
    Ok(EvalResult {
        r2_test: score(&y_test, &p_test)?,
        r2_validation: score(&y_val, &p_val)?,
        rmse_test: rmse(&y_test, &p_test)?,
        rmse_validation: rmse(&y_val, &p_val)?,
        n_test: y_test.len(),
        n_validation: y_val.len(),
        baseline,
    })
}
