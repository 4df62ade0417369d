use serde::{Deserialize, Serialize};

use super::{fit_model, ModelKind, ModelParams};
use crate::error::{Error, Result};
use crate::evaluate::rmse;
use crate::par;
use crate::splits::CvFolds;

/// Candidate values per hyperparameter. Points are enumerated in nested
/// order n_trees, max_depth, min_samples_leaf, feature_subsample,
/// learning_rate, subsample; that order also breaks ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub n_trees: Vec<usize>,
    /// 0 means unlimited.
    pub max_depth: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    /// Random forest only.
    pub feature_subsample: Vec<f64>,
    /// Boosting only.
    pub learning_rate: Vec<f64>,
    /// Boosting only.
    pub subsample: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            n_trees: vec![100, 300],
            max_depth: vec![3, 6, 10],
            min_samples_leaf: vec![1, 5],
            feature_subsample: vec![0.5],
            learning_rate: vec![0.05, 0.1],
            subsample: vec![1.0],
        }
    }
}

impl HyperGrid {
    pub fn points(&self, kind: ModelKind) -> Result<Vec<ModelParams>> {
        let (fsub, lr, sub): (&[f64], &[f64], &[f64]) = match kind {
            ModelKind::Rf => (&self.feature_subsample, &[1.0], &[1.0]),
            ModelKind::Gbt => (&[1.0], &self.learning_rate, &self.subsample),
            other => return Err(Error::UnsupportedModel(other.to_string())),
        };
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &max_depth in &self.max_depth {
                for &min_samples_leaf in &self.min_samples_leaf {
                    for &feature_subsample in fsub {
                        for &learning_rate in lr {
                            for &subsample in sub {
                                out.push(ModelParams {
                                    n_trees,
                                    max_depth,
                                    min_samples_leaf,
                                    feature_subsample,
                                    learning_rate,
                                    subsample,
                                    bootstrap: kind == ModelKind::Rf,
                                });
                            }
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::ConfigInvalid(format!("hyperparameter grid for {kind} is empty")));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub params: ModelParams,
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ModelParams,
    pub best_index: usize,
    pub table: Vec<CvRow>,
}

/// Scores every grid point by mean RMSE over the folds. `row_years[i]` is the
/// year of row `i`; a fold trains on rows whose year is in its train years and
/// scores rows in its test years.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    kind: ModelKind,
    x: &[Vec<f64>],
    y: &[f64],
    row_years: &[i32],
    names: &[String],
    grid: &HyperGrid,
    folds: &CvFolds,
    seed: u64,
) -> Result<GridResult> {
    if x.len() != y.len() || x.len() != row_years.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len().min(row_years.len()),
        });
    }
    if folds.folds.is_empty() {
        return Err(Error::ConfigInvalid("no cross-validation folds".into()));
    }
    let points = grid.points(kind)?;
    let fold_rows: Vec<(Vec<usize>, Vec<usize>)> = folds
        .folds
        .iter()
        .map(|f| {
            let pick = |years: &[i32]| -> Vec<usize> {
                (0..x.len()).filter(|&i| years.contains(&row_years[i])).collect()
            };
            (pick(&f.train_years), pick(&f.test_years))
        })
        .collect();
    if let Some(f) = fold_rows.iter().position(|(tr, te)| tr.is_empty() || te.is_empty()) {
        return Err(Error::DegenerateData(format!("fold {f} has no train or test rows")));
    }

    let table = par::map(&points, |params| -> Result<CvRow> {
        let mut fold_rmse = Vec::with_capacity(fold_rows.len());
        for (train, test) in &fold_rows {
            let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = fit_model(kind, &xt, &yt, names, params, seed)?;
            let obs: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let pred: Vec<f64> = test.iter().map(|&i| model.predict_row(&x[i])).collect();
            fold_rmse.push(rmse(&obs, &pred)?);
        }
        let mean_rmse = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
        Ok(CvRow {
            params: *params,
            fold_rmse,
            mean_rmse,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut best_index = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean_rmse < table[best_index].mean_rmse {
            best_index = i;
        }
    }
    Ok(GridResult {
        best: table[best_index].params,
        best_index,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splits::expanding_window_folds;

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn data() -> (Vec<Vec<f64>>, Vec<f64>, Vec<i32>) {
        data_with(|a, b| 3.0 * a - b)
    }

    fn data_with(f: impl Fn(f64, f64) -> f64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<i32>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut years = Vec::new();
        for year in 2000..2010 {
            for r in 0..8 {
                let a = ((year * 13 + r * 7) % 11) as f64 / 11.0;
                let b = ((year * 5 + r * 3) % 7) as f64 / 7.0;
                x.push(vec![a, b]);
                y.push(f(a, b));
                years.push(year);
            }
        }
        (x, y, years)
    }

    #[test]
    fn one_point_grid() {
        let (x, y, years) = data();
        let grid = HyperGrid {
            n_trees: vec![5],
            max_depth: vec![2],
            min_samples_leaf: vec![1],
            learning_rate: vec![0.1],
            ..HyperGrid::default()
        };
        let folds = expanding_window_folds(&(2000..2010).collect::<Vec<_>>(), 3).unwrap();
        let r = grid_search(ModelKind::Gbt, &x, &y, &years, &names(), &grid, &folds, 0).unwrap();
        assert_eq!(r.table.len(), 1);
        assert_eq!(r.best_index, 0);
        assert_eq!(r.table[0].fold_rmse.len(), 3);
    }

    #[test]
    fn strictly_better_point_wins() {
        // A sign-agreement target is a pure interaction, which additive
        // stumps cannot represent.
        let (x, y, years) = data_with(|a, b| if (a > 0.5) == (b > 0.5) { 1.0 } else { -1.0 });
        let grid = HyperGrid {
            n_trees: vec![60],
            max_depth: vec![1, 4],
            min_samples_leaf: vec![1],
            learning_rate: vec![0.3],
            ..HyperGrid::default()
        };
        let folds = expanding_window_folds(&(2000..2010).collect::<Vec<_>>(), 2).unwrap();
        let r = grid_search(ModelKind::Gbt, &x, &y, &years, &names(), &grid, &folds, 0).unwrap();
        assert!(r.table[1].fold_rmse.iter().zip(&r.table[0].fold_rmse).all(|(b, a)| b < a));
        assert_eq!(r.best.max_depth, 4);
    }

    #[test]
    fn exact_tie_takes_first_point() {
        let (x, _, years) = data();
        let y = vec![1.0; x.len()];
        let grid = HyperGrid {
            n_trees: vec![3, 4],
            max_depth: vec![2],
            min_samples_leaf: vec![1],
            feature_subsample: vec![1.0],
            ..HyperGrid::default()
        };
        let folds = expanding_window_folds(&(2000..2010).collect::<Vec<_>>(), 2).unwrap();
        let r = grid_search(ModelKind::Rf, &x, &y, &years, &names(), &grid, &folds, 0).unwrap();
        assert_eq!(r.table[0].mean_rmse, r.table[1].mean_rmse);
        assert_eq!(r.best_index, 0);
        assert_eq!(r.best.n_trees, 3);
    }

    #[test]
    fn default_grid_sizes() {
        let g = HyperGrid::default();
        assert_eq!(g.points(ModelKind::Gbt).unwrap().len(), 24);
        assert_eq!(g.points(ModelKind::Rf).unwrap().len(), 12);
        assert!(g.points(ModelKind::Tcn).is_err());
    }
}
