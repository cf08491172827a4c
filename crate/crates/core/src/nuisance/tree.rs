use super::{Predictor, TrainingSet};

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// CART regression tree with variance-reduction splits.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

impl Predictor for RegressionTree {
    #[inline]
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

struct Builder<'a> {
    data: &'a TrainingSet<'a>,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
    scratch: Vec<(f64, usize)>,
}

impl Builder<'_> {
    fn mean(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&r| self.data.target[r]).sum::<f64>() / rows.len() as f64
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.mean(&rows)));
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&row| self.data.x.get(row, feature) <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let m = rows.len();
        let total: f64 = rows.iter().map(|&r| self.data.target[r]).sum();
        let base = total * total / m as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for feature in 0..self.data.d() {
            self.scratch.clear();
            self.scratch.extend(rows.iter().map(|&r| (self.data.x.get(r, feature), r)));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut left_sum = 0.0;
            for i in 1..m {
                left_sum += self.data.target[self.scratch[i - 1].1];
                if i < self.min_leaf || m - i < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.scratch[i - 1].0, self.scratch[i].0);
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / i as f64 + right_sum * right_sum / (m - i) as f64 - base;
                if gain > 1e-12 * base.abs().max(1e-12) && best.is_none_or(|b| gain > b.0) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi && mid.is_finite() { mid } else { lo };
                    best = Some((gain, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Fits a CART tree. Thresholds are midpoints between consecutive distinct
/// values; a node becomes a leaf at `max_depth`, when a split would leave
/// fewer than `min_leaf` rows on one side, or when no split reduces the error.
pub fn fit_tree(data: &TrainingSet<'_>, max_depth: usize, min_leaf: usize) -> RegressionTree {
    let mut builder = Builder {
        data,
        max_depth,
        min_leaf: min_leaf.max(1),
        nodes: Vec::new(),
        scratch: Vec::with_capacity(data.len()),
    };
    builder.build(data.rows.to_vec(), 0);
    RegressionTree { nodes: builder.nodes }
}
