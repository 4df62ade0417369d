use super::{check_cover, expected_value, ShapVector};
use crate::error::{Error, Result};
use crate::models::TreeNode;

/// Subset enumeration costs 2^d tree walks per feature.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 15;

/// Expected output when the features in `mask` are fixed to `x` and the
/// others are integrated out along cover-weighted branches.
fn coalition_value(node: &TreeNode, x: &[f64], mask: u32) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            cover,
            ..
        } => {
            if mask & (1 << feature) != 0 {
                if x[*feature] <= *threshold {
                    coalition_value(left, x, mask)
                } else {
                    coalition_value(right, x, mask)
                }
            } else {
                (left.cover() * coalition_value(left, x, mask) + right.cover() * coalition_value(right, x, mask))
                    / cover
            }
        }
    }
}

/// Shapley values by direct enumeration of all feature subsets. The
/// background is the tree's own training cover, as in the fast algorithm.
pub fn brute_force_shap(tree: &TreeNode, x: &[f64]) -> Result<ShapVector> {
    let d = x.len();
    if d > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::TooManyFeatures {
            max: BRUTE_FORCE_MAX_FEATURES,
            got: d,
        });
    }
    check_cover(tree)?;
    if tree.max_feature().is_some_and(|m| m >= d) {
        return Err(Error::FeatureMismatch(format!("tree uses features beyond the {d} given")));
    }
    let values: Vec<f64> = (0..1u32 << d).map(|m| coalition_value(tree, x, m)).collect();
    let mut fact = vec![1.0f64; d + 1];
    for k in 1..=d {
        fact[k] = fact[k - 1] * k as f64;
    }
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in 0..1u32 << d {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[d - s - 1] / fact[d];
            *p += w * (values[(mask | bit) as usize] - values[mask as usize]);
        }
    }
    Ok(ShapVector {
        phi,
        base_value: expected_value(tree),
        prediction: tree.predict(x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(value: f64, cover: f64) -> TreeNode {
        TreeNode::Leaf {
            value,
            n_samples: cover as usize,
            cover,
        }
    }

    fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> TreeNode {
        let cover = left.cover() + right.cover();
        TreeNode::Split {
            feature,
            threshold,
            n_samples: cover as usize,
            cover,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    #[test]
    fn single_player() {
        let t = split(0, 0.5, leaf(2.0, 1.0), leaf(8.0, 3.0));
        let v = brute_force_shap(&t, &[1.0]).unwrap();
        assert_eq!(v.phi[0], 8.0 - v.base_value);
    }

    #[test]
    fn symmetric_features_share_equally() {
        // f = 1 when both features exceed 0, built symmetrically.
        let t = split(
            0,
            0.0,
            split(1, 0.0, leaf(0.0, 1.0), leaf(0.0, 1.0)),
            split(1, 0.0, leaf(0.0, 1.0), leaf(1.0, 1.0)),
        );
        let v = brute_force_shap(&t, &[0.5, 0.5]).unwrap();
        assert!((v.phi[0] - v.phi[1]).abs() < 1e-15);
        assert!((v.phi[0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn efficiency_on_depth_two_trees() {
        let mut state = 0x1234_5678u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let mut f = || (next() * 3.0) as usize;
            let (a, b, c) = (f(), f(), f());
            let t = split(
                a,
                0.5,
                split(b, 0.3, leaf(next(), 1.0 + next()), leaf(next(), 1.0 + next())),
                split(c, 0.7, leaf(next(), 1.0 + next()), leaf(next(), 1.0 + next())),
            );
            let x = [next(), next(), next()];
            let v = brute_force_shap(&t, &x).unwrap();
            assert!(v.local_accuracy_error() < 1e-12);
        }
    }

    #[test]
    fn too_many_features() {
        let x = vec![0.0; 16];
        assert!(matches!(
            brute_force_shap(&leaf(1.0, 1.0), &x),
            Err(Error::TooManyFeatures { max: 15, got: 16 })
        ));
    }
}
