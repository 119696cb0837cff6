//! Histogram-based regression trees grown on gradient/hessian statistics.
//!
//! Both boosting and the shallow forest reuse [`grow_tree`]: boosting passes
//! loss gradients, the forest passes `g = -w y`, `h = w` so that leaf values
//! are weighted means and split gains are half the weighted SSE reduction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A binary tree stored as a node list rooted at index 0. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Prediction for row `i` of `x` without copying the row.
    pub(crate) fn predict_in(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[(row, *feature)] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Features discretized into at most `max_bins` ordered bins.
pub(crate) struct BinnedMatrix {
    /// `bins[feature][row]`
    bins: Vec<Vec<u16>>,
    /// Split thresholds per feature; bin `b` holds values `<= thresholds[b]`.
    thresholds: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub(crate) fn new(x: &DMatrix<f64>, max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(2, u16::MAX as usize);
        let mut bins = Vec::with_capacity(x.ncols());
        let mut thresholds = Vec::with_capacity(x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            let mut sorted: Vec<f64> = col.iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            let cuts: Vec<f64> = if sorted.len() <= max_bins {
                sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut cuts: Vec<f64> = (1..max_bins)
                    .map(|k| {
                        let pos = k * (sorted.len() - 1) / max_bins;
                        0.5 * (sorted[pos] + sorted[pos + 1])
                    })
                    .collect();
                cuts.dedup();
                cuts
            };
            bins.push(
                col.iter()
                    .map(|&v| cuts.partition_point(|&t| t < v) as u16)
                    .collect(),
            );
            thresholds.push(cuts);
        }
        Self { bins, thresholds }
    }

    fn n_bins(&self, feature: usize) -> usize {
        self.thresholds[feature].len() + 1
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub min_leaf: usize,
    pub reg_lambda: f64,
    /// Minimum loss reduction to keep a split.
    pub gamma: f64,
}

pub(crate) struct GrowResult {
    pub tree: Tree,
    /// Total split gain per feature.
    pub gains: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    bin: usize,
    gain: f64,
}

fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    if h + lambda > 0.0 {
        -g / (h + lambda)
    } else {
        0.0
    }
}

/// Grow one tree on `rows`, restricted to `features`.
pub(crate) fn grow_tree(
    data: &BinnedMatrix,
    grad: &[f64],
    hess: &[f64],
    rows: Vec<usize>,
    features: &[usize],
    params: &TreeParams,
) -> GrowResult {
    let mut nodes = Vec::new();
    let mut gains = vec![0.0; data.bins.len()];
    grow_node(data, grad, hess, rows, features, params, 0, &mut nodes, &mut gains);
    GrowResult {
        tree: Tree { nodes },
        gains,
    }
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    data: &BinnedMatrix,
    grad: &[f64],
    hess: &[f64],
    rows: Vec<usize>,
    features: &[usize],
    params: &TreeParams,
    depth: usize,
    nodes: &mut Vec<Node>,
    gains: &mut [f64],
) -> usize {
    let g: f64 = rows.iter().map(|&i| grad[i]).sum();
    let h: f64 = rows.iter().map(|&i| hess[i]).sum();
    let id = nodes.len();
    nodes.push(Node::Leaf {
        value: leaf_value(g, h, params.reg_lambda),
    });
    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf.max(1) {
        return id;
    }
    let Some(best) = best_split(data, grad, hess, &rows, features, params, g, h) else {
        return id;
    };
    gains[best.feature] += best.gain;
    let fb = &data.bins[best.feature];
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.into_iter().partition(|&i| (fb[i] as usize) <= best.bin);
    let threshold = data.thresholds[best.feature][best.bin];
    let left = grow_node(data, grad, hess, left_rows, features, params, depth + 1, nodes, gains);
    let right = grow_node(data, grad, hess, right_rows, features, params, depth + 1, nodes, gains);
    nodes[id] = Node::Split {
        feature: best.feature,
        threshold,
        left,
        right,
    };
    id
}

#[allow(clippy::too_many_arguments)]
fn best_split(
    data: &BinnedMatrix,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    features: &[usize],
    params: &TreeParams,
    g_total: f64,
    h_total: f64,
) -> Option<BestSplit> {
    let lambda = params.reg_lambda;
    let parent = g_total * g_total / (h_total + lambda);
    let mut best: Option<BestSplit> = None;
    for &f in features {
        let nb = data.n_bins(f);
        if nb < 2 {
            continue;
        }
        let mut hg = vec![0.0; nb];
        let mut hh = vec![0.0; nb];
        let mut hc = vec![0usize; nb];
        let fb = &data.bins[f];
        for &i in rows {
            let b = fb[i] as usize;
            hg[b] += grad[i];
            hh[b] += hess[i];
            hc[b] += 1;
        }
        let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
        for b in 0..nb - 1 {
            gl += hg[b];
            hl += hh[b];
            cl += hc[b];
            let cr = rows.len() - cl;
            if cl < params.min_leaf.max(1) || cr < params.min_leaf.max(1) {
                continue;
            }
            let (gr, hr) = (g_total - gl, h_total - hl);
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent) - params.gamma;
            if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(BestSplit {
                    feature: f,
                    bin: b,
                    gain,
                });
            }
        }
    }
    best
}
