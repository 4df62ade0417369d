//! Tree ensembles: random forests and squared-loss gradient boosting over the
//! CART substrate in [`tree`], plus grid search on expanding-window folds.

mod grid;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub use grid::{grid_search, CvRow, GridResult, HyperGrid};
pub use tree::{fit_cart, fit_cart_indexed, CartParams, TreeNode};

/// Model families named in experiment configs. `lstm` and `tcn` are accepted
/// so result files keep a stable schema, but cannot be trained here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Gbt,
    Lstm,
    Tcn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Gbt => "gbt",
            ModelKind::Lstm => "lstm",
            ModelKind::Tcn => "tcn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" | "random_forest" => Ok(ModelKind::Rf),
            "gbt" => Ok(ModelKind::Gbt),
            "lstm" => Ok(ModelKind::Lstm),
            "tcn" => Ok(ModelKind::Tcn),
            other => Err(Error::ConfigInvalid(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    RandomForest,
    Gbt,
}

/// Hyperparameters for either ensemble. Fields that do not apply to a kind
/// are ignored by its fitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_trees: usize,
    /// 0 means unlimited depth.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Per-split feature fraction (random forest).
    pub feature_subsample: f64,
    /// Shrinkage (boosting).
    pub learning_rate: f64,
    /// Row fraction drawn without replacement per stage (boosting).
    pub subsample: f64,
    /// Bootstrap rows per tree (random forest).
    pub bootstrap: bool,
}

impl ModelParams {
    pub fn rf(n_trees: usize, max_depth: usize, min_samples_leaf: usize) -> Self {
        ModelParams {
            n_trees,
            max_depth,
            min_samples_leaf,
            feature_subsample: 0.5,
            learning_rate: 1.0,
            subsample: 1.0,
            bootstrap: true,
        }
    }

    pub fn gbt(n_trees: usize, max_depth: usize, min_samples_leaf: usize, learning_rate: f64) -> Self {
        ModelParams {
            n_trees,
            max_depth,
            min_samples_leaf,
            feature_subsample: 1.0,
            learning_rate,
            subsample: 1.0,
            bootstrap: false,
        }
    }

    fn cart(&self) -> CartParams {
        CartParams {
            max_depth: (self.max_depth > 0).then_some(self.max_depth),
            min_samples_leaf: self.min_samples_leaf.max(1),
            feature_subsample: self.feature_subsample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub kind: EnsembleKind,
    pub params: ModelParams,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeNode>,
}

impl TreeEnsemble {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self.kind {
            EnsembleKind::RandomForest => {
                if self.trees.is_empty() {
                    return self.base_score;
                }
                self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
            }
            EnsembleKind::Gbt => {
                self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
            }
        }
    }

    /// Checks that `names` matches the training columns exactly.
    pub fn check_features(&self, names: &[String]) -> Result<()> {
        if names != self.feature_names.as_slice() {
            return Err(Error::FeatureMismatch(format!(
                "model expects [{}], got [{}]",
                self.feature_names.join(", "),
                names.join(", ")
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<TreeEnsemble> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<TreeEnsemble> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Predicts every row after checking the column names.
pub fn predict(model: &TreeEnsemble, names: &[String], rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.check_features(names)?;
    if let Some(r) = rows.iter().find(|r| r.len() != names.len()) {
        return Err(Error::FeatureMismatch(format!(
            "row has {} values, expected {}",
            r.len(),
            names.len()
        )));
    }
    Ok(par::map(rows, |r| model.predict_row(r)))
}

fn check_training(x: &[Vec<f64>], y: &[f64], names: &[String]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::DegenerateData("no training rows".into()));
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x[0].len() != names.len() {
        return Err(Error::FeatureMismatch(format!(
            "{} feature names for {} columns",
            names.len(),
            x[0].len()
        )));
    }
    Ok(())
}

/// Random forest: tree `t` uses the generator seeded with `seed ^ t` for its
/// bootstrap draw and split-feature sampling, so trees train independently.
pub fn fit_random_forest(
    x: &[Vec<f64>],
    y: &[f64],
    names: &[String],
    params: &ModelParams,
    seed: u64,
) -> Result<TreeEnsemble> {
    check_training(x, y, names)?;
    if params.n_trees == 0 {
        return Err(Error::ConfigInvalid("random forest needs n_trees >= 1".into()));
    }
    let n = x.len();
    let cart = params.cart();
    let trees = par::map_range(params.n_trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t as u64);
        let mut idx: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        fit_cart_indexed(x, y, &mut idx, cart, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let base_score = y.iter().sum::<f64>() / n as f64;
    Ok(TreeEnsemble {
        kind: EnsembleKind::RandomForest,
        params: *params,
        feature_names: names.to_vec(),
        base_score,
        learning_rate: 1.0,
        trees,
    })
}

/// Gradient boosting with squared loss: F_0 = mean(y), each stage fits a
/// tree to the current residuals and adds it scaled by the learning rate.
pub fn fit_gbt(
    x: &[Vec<f64>],
    y: &[f64],
    names: &[String],
    params: &ModelParams,
    seed: u64,
) -> Result<TreeEnsemble> {
    check_training(x, y, names)?;
    if !(params.learning_rate > 0.0) {
        return Err(Error::ConfigInvalid("learning_rate must be > 0".into()));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(Error::ConfigInvalid("subsample must lie in (0, 1]".into()));
    }
    let n = x.len();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![base_score; n];
    let mut residual = vec![0.0; n];
    let cart = params.cart();
    let n_rows = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(params.n_trees);
    for stage in 0..params.n_trees {
        for i in 0..n {
            residual[i] = y[i] - fitted[i];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stage as u64);
        let mut idx: Vec<usize> = if n_rows < n {
            let mut s = rand::seq::index::sample(&mut rng, n, n_rows).into_vec();
            s.sort_unstable();
            s
        } else {
            (0..n).collect()
        };
        let tree = fit_cart_indexed(x, &residual, &mut idx, cart, &mut rng)?;
        for i in 0..n {
            fitted[i] += params.learning_rate * tree.predict(&x[i]);
        }
        trees.push(tree);
    }
    Ok(TreeEnsemble {
        kind: EnsembleKind::Gbt,
        params: *params,
        feature_names: names.to_vec(),
        base_score,
        learning_rate: params.learning_rate,
        trees,
    })
}

pub fn fit_model(
    kind: ModelKind,
    x: &[Vec<f64>],
    y: &[f64],
    names: &[String],
    params: &ModelParams,
    seed: u64,
) -> Result<TreeEnsemble> {
    match kind {
        ModelKind::Rf => fit_random_forest(x, y, names, params, seed),
        ModelKind::Gbt => fit_gbt(x, y, names, params, seed),
        other => Err(Error::UnsupportedModel(other.to_string())),
    }
}
