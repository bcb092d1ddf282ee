//! Small gradient-boosted regression trees, used only to score candidate
//! features by split gain.

use ndarray::{ArrayView1, ArrayView2};

#[derive(Debug, Clone, Copy)]
pub struct BoostConfig {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub bins: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            trees: 50,
            depth: 3,
            learning_rate: 0.1,
            min_leaf: 20,
            bins: 32,
        }
    }
}

enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

fn candidate_thresholds(x: ArrayView2<f64>, bins: usize) -> Vec<Vec<f64>> {
    (0..x.ncols())
        .map(|j| {
            let mut col: Vec<f64> = x.column(j).to_vec();
            col.sort_by(|a, b| a.total_cmp(b));
            col.dedup();
            if col.len() <= 1 {
                return Vec::new();
            }
            let mut th: Vec<f64> = (1..bins)
                .map(|b| {
                    let i = (b * (col.len() - 1)) / bins;
                    0.5 * (col[i] + col[(i + 1).min(col.len() - 1)])
                })
                .collect();
            th.dedup();
            th
        })
        .collect()
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    thresholds: &'a [Vec<f64>],
    cfg: &'a BoostConfig,
    gains: &'a mut [f64],
}

impl Builder<'_> {
    fn build(&mut self, idx: &[usize], residual: &[f64], depth: usize) -> Node {
        let n = idx.len() as f64;
        let sum: f64 = idx.iter().map(|&i| residual[i]).sum();
        let mean = sum / n;
        if depth == 0 || idx.len() < 2 * self.cfg.min_leaf {
            return Node::Leaf(mean);
        }
        let parent = sum * sum / n;
        let mut best: Option<(f64, usize, f64)> = None;
        for (j, ths) in self.thresholds.iter().enumerate() {
            for &t in ths {
                let (mut sl, mut nl) = (0.0, 0usize);
                for &i in idx {
                    if self.x[[i, j]] <= t {
                        sl += residual[i];
                        nl += 1;
                    }
                }
                let nr = idx.len() - nl;
                if nl < self.cfg.min_leaf || nr < self.cfg.min_leaf {
                    continue;
                }
                let sr = sum - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, j, t));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return Node::Leaf(mean);
        };
        if gain <= 0.0 {
            return Node::Leaf(mean);
        }
        self.gains[feature] += gain;
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[[i, feature]] <= threshold);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.build(&l, residual, depth - 1)),
            right: Box::new(self.build(&r, residual, depth - 1)),
        }
    }
}

/// Fits a boosted ensemble on squared loss and returns, per column, the
/// share of the total sum of squares of `y` removed by splits on it. A tree
/// with split gain `g` added with shrinkage `η` lowers the SSE by
/// `(2η - η²) g`, so the shares sum to the fraction of variance explained.
pub fn gain_importance(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &BoostConfig) -> Vec<f64> {
    let n = y.len();
    let mean = y.mean().unwrap_or(0.0);
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let mut gains = vec![0.0; x.ncols()];
    if n == 0 || sst <= 0.0 {
        return gains;
    }
    let thresholds = candidate_thresholds(x, cfg.bins);
    let mut pred = vec![mean; n];
    let idx: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.trees {
        let residual: Vec<f64> = (0..n).map(|i| y[i] - pred[i]).collect();
        let mut tree_gains = vec![0.0; x.ncols()];
        let tree = Builder {
            x,
            thresholds: &thresholds,
            cfg,
            gains: &mut tree_gains,
        }
        .build(&idx, &residual, cfg.depth);
        let eta = cfg.learning_rate;
        for (g, t) in gains.iter_mut().zip(&tree_gains) {
            *g += (2.0 * eta - eta * eta) * t;
        }
        for (i, p) in pred.iter_mut().enumerate() {
            *p += cfg.learning_rate * tree.predict(x.row(i));
        }
    }
    gains.iter().map(|g| g / sst).collect()
}
