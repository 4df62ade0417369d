//! CART regression trees: greedy variance-reduction splits on midpoints
//! between consecutive distinct feature values, `x <= threshold` goes left.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        n_samples: usize,
        /// Training weight reaching the node; zero means unrecorded.
        #[serde(default)]
        cover: f64,
    },
    Leaf {
        value: f64,
        n_samples: usize,
        #[serde(default)]
        cover: f64,
    },
}

impl TreeNode {
    pub fn leaf(value: f64, n_samples: usize) -> TreeNode {
        TreeNode::Leaf {
            value,
            n_samples,
            cover: n_samples as f64,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            TreeNode::Split { n_samples, .. } | TreeNode::Leaf { n_samples, .. } => *n_samples,
        }
    }

    pub fn cover(&self) -> f64 {
        match self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => *cover,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Largest feature index used by any split, if any.
    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                left,
                right,
                ..
            } => Some(
                (*feature)
                    .max(left.max_feature().unwrap_or(0))
                    .max(right.max_feature().unwrap_or(0)),
            ),
        }
    }

    pub fn leaves(&self) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        self.visit_leaves(&mut |v, n| out.push((v, n)));
        out
    }

    fn visit_leaves(&self, f: &mut impl FnMut(f64, usize)) {
        match self {
            TreeNode::Leaf {
                value, n_samples, ..
            } => f(*value, *n_samples),
            TreeNode::Split { left, right, .. } => {
                left.visit_leaves(f);
                right.visit_leaves(f);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Fraction of features drawn (without replacement) at each split.
    pub feature_subsample: f64,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: None,
            min_samples_leaf: 1,
            feature_subsample: 1.0,
        }
    }
}

struct Builder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: CartParams,
    n_features: usize,
    k_features: usize,
    rng: &'a mut R,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    n_left: usize,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> TreeNode {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n as f64;
        let leaf = TreeNode::leaf(mean, n);

        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        let leaf_min = self.params.min_samples_leaf.max(1);
        if !depth_ok || n < 2 * leaf_min {
            return leaf;
        }
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(self.y[i]), hi.max(self.y[i]))
        });
        if lo == hi {
            return leaf;
        }
        let sse: f64 = idx.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();

        let Some(best) = self.best_split(idx, sum, leaf_min) else {
            return leaf;
        };
        if !(best.gain > 1e-12 * sse) {
            return leaf;
        }
        let f = best.feature;
        idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
        let (l, r) = idx.split_at_mut(best.n_left);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        TreeNode::Split {
            feature: f,
            threshold: best.threshold,
            left: Box::new(left),
            right: Box::new(right),
            n_samples: n,
            cover: n as f64,
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        if self.k_features >= self.n_features {
            return (0..self.n_features).collect();
        }
        let mut f = sample(self.rng, self.n_features, self.k_features).into_vec();
        f.sort_unstable();
        f
    }

    fn best_split(&mut self, idx: &[usize], total: f64, leaf_min: usize) -> Option<BestSplit> {
        let n = idx.len();
        let parent = total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        let mut order = idx.to_vec();
        for f in self.candidate_features() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for i in 1..n {
                left_sum += self.y[order[i - 1]];
                let (xa, xb) = (self.x[order[i - 1]][f], self.x[order[i]][f]);
                if i < leaf_min || n - i < leaf_min || xa == xb {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / i as f64
                    + right_sum * right_sum / (n - i) as f64
                    - parent;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = xa + (xb - xa) / 2.0;
                    let threshold = if mid < xb { mid } else { xa };
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                        n_left: i,
                    });
                }
            }
        }
        best
    }
}

/// Fits one regression tree on the rows `idx` of `x` (duplicates allowed, as
/// produced by bootstrapping).
pub fn fit_cart_indexed<R: Rng>(
    x: &[Vec<f64>],
    y: &[f64],
    idx: &mut [usize],
    params: CartParams,
    rng: &mut R,
) -> Result<TreeNode> {
    if idx.is_empty() {
        return Err(Error::DegenerateData("no training rows".into()));
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n_features = x[idx[0]].len();
    if n_features == 0 {
        return Err(Error::DegenerateData("no feature columns".into()));
    }
    if idx.iter().any(|&i| x[i].len() != n_features) {
        return Err(Error::DegenerateData("ragged feature rows".into()));
    }
    if idx
        .iter()
        .any(|&i| !y[i].is_finite() || x[i].iter().any(|v| !v.is_finite()))
    {
        return Err(Error::DegenerateData("non-finite training values".into()));
    }
    if !(params.feature_subsample > 0.0 && params.feature_subsample <= 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "feature_subsample must lie in (0, 1], got {}",
            params.feature_subsample
        )));
    }
    let k_features = ((params.feature_subsample * n_features as f64).round() as usize).clamp(1, n_features);
    let mut b = Builder {
        x,
        y,
        params,
        n_features,
        k_features,
        rng,
    };
    Ok(b.build(idx, 0))
}

/// Fits one regression tree on all rows.
pub fn fit_cart<R: Rng>(x: &[Vec<f64>], y: &[f64], params: CartParams, rng: &mut R) -> Result<TreeNode> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    fit_cart_indexed(x, y, &mut idx, params, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y = vec![3.5; 10];
        let t = fit_cart(&x, &y, CartParams::default(), &mut rng()).unwrap();
        assert_eq!(t, TreeNode::leaf(3.5, 10));
    }

    #[test]
    fn step_function_depth_one() {
        let xs = [-3.0, -2.0, -0.5, 0.0, 1.0, 2.5];
        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v < 0.0 { 1.0 } else { 2.0 }).collect();
        let p = CartParams {
            max_depth: Some(1),
            ..CartParams::default()
        };
        let t = fit_cart(&x, &y, p, &mut rng()).unwrap();
        match t {
            TreeNode::Split {
                threshold,
                left,
                right,
                ..
            } => {
                assert_eq!(threshold, -0.25);
                assert_eq!(left.predict(&[-1.0]), 1.0);
                assert_eq!(right.predict(&[1.0]), 2.0);
            }
            _ => panic!("expected a split"),
        }
    }

    fn sse(t: &TreeNode, x: &[Vec<f64>], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(r, v)| (t.predict(r) - v).powi(2)).sum()
    }

    /// Brute force over every (feature, threshold) for a single split.
    fn best_single_split_sse(x: &[Vec<f64>], y: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                let (mut l, mut r) = (Vec::new(), Vec::new());
                for (row, v) in x.iter().zip(y) {
                    if row[f] <= thr {
                        l.push(*v)
                    } else {
                        r.push(*v)
                    }
                }
                let part = |s: &[f64]| {
                    let m = s.iter().sum::<f64>() / s.len() as f64;
                    s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
                };
                best = best.min(part(&l) + part(&r));
            }
        }
        best
    }

    #[test]
    fn depth_one_matches_exhaustive_search() {
        let mut r = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let x: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
                .collect();
            let y: Vec<f64> = x.iter().map(|v| v[0] * 2.0 + v[1].powi(2) + r.random_range(-0.1..0.1)).collect();
            let p = CartParams {
                max_depth: Some(1),
                ..CartParams::default()
            };
            let t = fit_cart(&x, &y, p, &mut rng()).unwrap();
            assert!((sse(&t, &x, &y) - best_single_split_sse(&x, &y)).abs() < 1e-9);
        }
    }

    #[test]
    fn invariants_hold_on_random_trees() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..4).map(|_| r.random_range(0.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|v| v[0] - v[2] + r.random_range(0.0..0.2)).collect();
        let p = CartParams {
            max_depth: Some(4),
            min_samples_leaf: 3,
            feature_subsample: 0.5,
        };
        let t = fit_cart(&x, &y, p, &mut rng()).unwrap();
        fn check(n: &TreeNode, min_leaf: usize) {
            match n {
                TreeNode::Leaf { n_samples, .. } => assert!(*n_samples >= min_leaf),
                TreeNode::Split {
                    left,
                    right,
                    n_samples,
                    ..
                } => {
                    assert_eq!(*n_samples, left.n_samples() + right.n_samples());
                    check(left, min_leaf);
                    check(right, min_leaf);
                }
            }
        }
        check(&t, 3);
        assert!(t.depth() <= 4);
        assert_eq!(t.leaves().iter().map(|l| l.1).sum::<usize>(), 60);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let root_sse: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        assert!(sse(&t, &x, &y) <= root_sse);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..6).map(|_| r.random_range(0.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|v| v.iter().sum()).collect();
        let p = CartParams {
            feature_subsample: 0.5,
            ..CartParams::default()
        };
        let a = fit_cart(&x, &y, p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = fit_cart(&x, &y, p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_rows_error() {
        assert!(matches!(
            fit_cart(&[], &[], CartParams::default(), &mut rng()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn node_json_round_trip() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), i as f64 / 7.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0] * 1.3 + v[1]).collect();
        let t = fit_cart(&x, &y, CartParams::default(), &mut rng()).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: TreeNode = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
