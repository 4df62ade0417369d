//! Exact SHAP attributions for the tree ensembles in [`crate::models`].
//!
//! The conditioning distribution is each tree's own training cover: when a
//! feature is "missing" from a coalition, the expectation follows both
//! children weighted by the share of training rows that went each way.

mod brute;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Cell;
use crate::models::{EnsembleKind, TreeEnsemble, TreeNode};
use crate::par;

pub use brute::{brute_force_shap, BRUTE_FORCE_MAX_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapVector {
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub prediction: f64,
}

impl ShapVector {
    /// |base + Σ phi − prediction|.
    pub fn local_accuracy_error(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.prediction).abs()
    }
}

pub(crate) fn check_cover(node: &TreeNode) -> Result<()> {
    if !(node.cover() > 0.0) {
        return Err(Error::MissingCover);
    }
    if let TreeNode::Split { left, right, .. } = node {
        check_cover(left)?;
        check_cover(right)?;
    }
    Ok(())
}

/// Cover-weighted mean of the leaf values.
pub fn expected_value(node: &TreeNode) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split {
            left, right, cover, ..
        } => (left.cover() * expected_value(left) + right.cover() * expected_value(right)) / cover,
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

const ROOT: usize = usize::MAX;

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let denom = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let PathElem { zero, one, .. } = path[i];
    let denom = (l + 1) as f64;
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = next * denom / ((j + 1) as f64 * one);
            next = t - path[j].weight * zero * (l - j) as f64 / denom;
        } else {
            path[j].weight = path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let PathElem { zero, one, .. } = path[i];
    let denom = (l + 1) as f64;
    let mut total = 0.0;
    if one != 0.0 {
        let mut next = path[l].weight;
        for j in (0..l).rev() {
            let t = next * denom / ((j + 1) as f64 * one);
            total += t;
            next = path[j].weight - t * zero * (l - j) as f64 / denom;
        }
    } else {
        for j in (0..l).rev() {
            total += path[j].weight / (zero * (l - j) as f64 / denom);
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    node: &TreeNode,
    x: &[f64],
    phi: &mut [f64],
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: usize,
    scale: f64,
) {
    extend(&mut path, zero, one, feature);
    match node {
        TreeNode::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let e = path[i];
                phi[e.feature] += scale * w * (e.one - e.zero) * value;
            }
        }
        TreeNode::Split {
            feature: f,
            threshold,
            left,
            right,
            cover,
            ..
        } => {
            let (hot, cold) = if x[*f] <= *threshold {
                (left, right)
            } else {
                (right, left)
            };
            let (mut iz, mut io) = (1.0, 1.0);
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == *f) {
                iz = path[k].zero;
                io = path[k].one;
                unwind(&mut path, k);
            }
            recurse(hot, x, phi, path.clone(), iz * hot.cover() / cover, io, *f, scale);
            recurse(cold, x, phi, path, iz * cold.cover() / cover, 0.0, *f, scale);
        }
    }
}

/// Adds `scale` times the tree's SHAP values for `x` into `phi`.
fn accumulate(tree: &TreeNode, x: &[f64], phi: &mut [f64], scale: f64) {
    recurse(tree, x, phi, Vec::with_capacity(tree.depth() + 2), 1.0, 1.0, ROOT, scale);
}

fn check_row(tree: &TreeNode, x: &[f64]) -> Result<()> {
    if let Some(m) = tree.max_feature() {
        if m >= x.len() {
            return Err(Error::FeatureMismatch(format!(
                "tree splits on feature {m} but the row has {} values",
                x.len()
            )));
        }
    }
    Ok(())
}

/// SHAP values of a single tree.
pub fn tree_shap_single(tree: &TreeNode, x: &[f64]) -> Result<ShapVector> {
    check_cover(tree)?;
    check_row(tree, x)?;
    let mut phi = vec![0.0; x.len()];
    accumulate(tree, x, &mut phi, 1.0);
    Ok(ShapVector {
        phi,
        base_value: expected_value(tree),
        prediction: tree.predict(x),
    })
}

/// SHAP values of an ensemble: averaged over trees for a random forest,
/// learning-rate-scaled sum plus the constant base score for boosting.
pub fn tree_shap(model: &TreeEnsemble, x: &[f64]) -> Result<ShapVector> {
    if x.len() != model.feature_names.len() {
        return Err(Error::FeatureMismatch(format!(
            "row has {} values, model expects {}",
            x.len(),
            model.feature_names.len()
        )));
    }
    let mut phi = vec![0.0; x.len()];
    let (scale, mut base) = match model.kind {
        EnsembleKind::RandomForest if model.trees.is_empty() => (0.0, model.base_score),
        EnsembleKind::RandomForest => (1.0 / model.trees.len() as f64, 0.0),
        EnsembleKind::Gbt => (model.learning_rate, model.base_score),
    };
    for tree in &model.trees {
        check_cover(tree)?;
        check_row(tree, x)?;
        accumulate(tree, x, &mut phi, scale);
        base += scale * expected_value(tree);
    }
    Ok(ShapVector {
        phi,
        base_value: base,
        prediction: model.predict_row(x),
    })
}

/// SHAP vectors for many rows, computed in parallel; order matches `rows`.
pub fn shap_rows(model: &TreeEnsemble, rows: &[Vec<f64>]) -> Result<Vec<ShapVector>> {
    for tree in &model.trees {
        check_cover(tree)?;
    }
    par::map(rows, |r| tree_shap(model, r)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub model_id: String,
    pub features: Vec<String>,
    pub mean_abs_phi: Vec<f64>,
    pub n_rows: usize,
}

pub fn summarize(model_id: &str, features: &[String], shap: &[ShapVector]) -> Result<ShapSummary> {
    if shap.is_empty() {
        return Err(Error::EmptyRows);
    }
    let mut acc = vec![0.0; features.len()];
    for v in shap {
        if v.phi.len() != features.len() {
            return Err(Error::FeatureMismatch(format!(
                "SHAP vector has {} entries for {} features",
                v.phi.len(),
                features.len()
            )));
        }
        for (a, p) in acc.iter_mut().zip(&v.phi) {
            *a += p.abs();
        }
    }
    let n = shap.len() as f64;
    Ok(ShapSummary {
        model_id: model_id.to_string(),
        features: features.to_vec(),
        mean_abs_phi: acc.into_iter().map(|a| a / n).collect(),
        n_rows: shap.len(),
    })
}

/// Mean |phi| per feature of `model` over `rows`.
pub fn shap_summary(model_id: &str, model: &TreeEnsemble, rows: &[Vec<f64>]) -> Result<ShapSummary> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    summarize(model_id, &model.feature_names, &shap_rows(model, rows)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationScore {
    pub hhi: f64,
    pub top1_share: f64,
}

/// Herfindahl index and largest share of the normalized importances.
pub fn shap_concentration(summary: &ShapSummary) -> Result<ConcentrationScore> {
    let total: f64 = summary.mean_abs_phi.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroImportance);
    }
    let mut hhi = 0.0;
    let mut top = 0.0f64;
    for v in &summary.mean_abs_phi {
        let s = v / total;
        hhi += s * s;
        top = top.max(s);
    }
    Ok(ConcentrationScore { hhi, top1_share: top })
}

/// One line per (row, feature): `model_id,region,year,feature,phi,base_value`.
pub fn write_shap_csv(
    out: impl Write,
    model_id: &str,
    features: &[String],
    cells: &[Cell],
    shap: &[ShapVector],
) -> Result<()> {
    if cells.len() != shap.len() {
        return Err(Error::LengthMismatch {
            left: cells.len(),
            right: shap.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model_id", "region", "year", "feature", "phi", "base_value"])?;
    for ((region, year), v) in cells.iter().zip(shap) {
        for (name, phi) in features.iter().zip(&v.phi) {
            w.write_record([
                model_id,
                region.as_str(),
                &year.to_string(),
                name,
                &phi.to_string(),
                &v.base_value.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<shap csv>", e))
}

/// `model_id,feature,mean_abs_phi` for each summary in turn.
pub fn write_summary_csv<'a>(out: impl Write, summaries: impl IntoIterator<Item = &'a ShapSummary>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model_id", "feature", "mean_abs_phi"])?;
    for s in summaries {
        for (name, v) in s.features.iter().zip(&s.mean_abs_phi) {
            w.write_record([s.model_id.as_str(), name, &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<summary csv>", e))
}
