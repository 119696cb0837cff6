//! Gradient boosting and shallow random forests over [`super::tree`].

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::tree::{grow_tree, BinnedMatrix, Tree, TreeParams};
use super::{ForestParams, GbtParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logistic,
}

/// Additive tree model: `link(base + scale * sum_t tree_t(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub scale: f64,
    pub link: Link,
    pub trees: Vec<Tree>,
    /// Split-gain importance per feature, normalized to sum to one when any
    /// split was made.
    pub importance: Vec<f64>,
}

impl TreeEnsemble {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score + self.scale * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let s = self.raw_score(x);
        match self.link {
            Link::Identity => s,
            Link::Logistic => sigmoid(s),
        }
    }
}

fn normalize_importance(mut gains: Vec<f64>) -> Vec<f64> {
    let total: f64 = gains.iter().sum();
    if total > 0.0 {
        for g in &mut gains {
            *g /= total;
        }
    }
    gains
}

/// Scaled-down min child weight for samples smaller than the reference size.
pub(crate) fn effective_min_child_weight(params: &GbtParams, n: usize) -> f64 {
    let frac = (n as f64 / params.reference_n as f64).min(1.0);
    (params.min_child_weight * frac).max(1.0)
}

fn loss(link: Link, y: f64, score: f64) -> f64 {
    match link {
        Link::Identity => (y - score).powi(2),
        Link::Logistic => {
            let p = sigmoid(score).clamp(1e-15, 1.0 - 1e-15);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
    }
}

/// Boosted trees on squared error (`Identity`) or log-loss (`Logistic`).
/// Weights are assumed normalized to mean one.
pub(crate) fn fit_gbt(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    params: &GbtParams,
    link: Link,
) -> TreeEnsemble {
    let n = x.nrows();
    let d = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut order: Vec<usize> = (0..n).collect();
    let n_val = if params.validation_fraction > 0.0 && n >= 20 {
        ((n as f64) * params.validation_fraction).round() as usize
    } else {
        0
    };
    if n_val > 0 {
        order.shuffle(&mut rng);
    }
    let (val_rows, train_rows) = order.split_at(n_val);
    let mut train_rows = train_rows.to_vec();
    train_rows.sort_unstable();
    let val_rows = val_rows.to_vec();

    let sw_train: f64 = train_rows.iter().map(|&i| w[i]).sum();
    let ybar = train_rows.iter().map(|&i| w[i] * y[i]).sum::<f64>() / sw_train;
    let base_score = match link {
        Link::Identity => ybar,
        Link::Logistic => {
            let p = ybar.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    };

    let binned = BinnedMatrix::new(x, params.max_bins);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_child_weight: effective_min_child_weight(params, train_rows.len()),
        min_leaf: 1,
        reg_lambda: params.reg_lambda,
        gamma: params.gamma,
    };
    let features: Vec<usize> = (0..d).collect();
    let mut score = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::new();
    let mut gains = vec![0.0; d];
    let mut best_val = f64::INFINITY;
    let mut best_len = 0;
    let mut best_gains = gains.clone();
    let mut since_best = 0;

    for _ in 0..params.n_estimators {
        for &i in &train_rows {
            match link {
                Link::Identity => {
                    grad[i] = w[i] * (score[i] - y[i]);
                    hess[i] = w[i];
                }
                Link::Logistic => {
                    let p = sigmoid(score[i]);
                    grad[i] = w[i] * (p - y[i]);
                    hess[i] = w[i] * (p * (1.0 - p)).max(1e-16);
                }
            }
        }
        let res = grow_tree(&binned, &grad, &hess, train_rows.clone(), &features, &tree_params);
        let tree = res.tree;
        for (g, r) in gains.iter_mut().zip(&res.gains) {
            *g += r;
        }
        for (i, s) in score.iter_mut().enumerate() {
            *s += params.learning_rate * tree.predict_in(x, i);
        }
        trees.push(tree);
        if val_rows.is_empty() {
            best_len = trees.len();
            best_gains.clone_from(&gains);
            continue;
        }
        let sw_val: f64 = val_rows.iter().map(|&i| w[i]).sum();
        let val_loss = val_rows
            .iter()
            .map(|&i| w[i] * loss(link, y[i], score[i]))
            .sum::<f64>()
            / sw_val;
        if val_loss < best_val - 1e-12 {
            best_val = val_loss;
            best_len = trees.len();
            best_gains.clone_from(&gains);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= params.early_stopping_rounds {
                break;
            }
        }
    }
    trees.truncate(best_len);
    TreeEnsemble {
        base_score,
        scale: params.learning_rate,
        link,
        trees,
        importance: normalize_importance(best_gains),
    }
}

/// Bagged shallow regression trees on weighted targets.
pub(crate) fn fit_forest(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    params: &ForestParams,
) -> TreeEnsemble {
    let n = x.nrows();
    let d = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let min_leaf = params.min_leaf.unwrap_or_else(|| (n / 50).max(50));
    let n_features = ((d as f64 * params.max_features).ceil() as usize).clamp(1, d.max(1));
    let binned = BinnedMatrix::new(x, params.max_bins);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_child_weight: 0.0,
        min_leaf,
        reg_lambda: 0.0,
        gamma: 0.0,
    };
    let grad: Vec<f64> = y.iter().zip(w).map(|(yi, wi)| -wi * yi).collect();
    let all_features: Vec<usize> = (0..d).collect();
    let mut gains = vec![0.0; d];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let features: Vec<usize> = all_features
            .choose_multiple(&mut rng, n_features)
            .copied()
            .collect();
        let res = grow_tree(&binned, &grad, w, rows, &features, &tree_params);
        for (g, r) in gains.iter_mut().zip(&res.gains) {
            *g += r;
        }
        trees.push(res.tree);
    }
    let scale = if trees.is_empty() { 0.0 } else { 1.0 / trees.len() as f64 };
    TreeEnsemble {
        base_score: 0.0,
        scale,
        link: Link::Identity,
        trees,
        importance: normalize_importance(gains),
    }
}
