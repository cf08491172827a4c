use rand::seq::index;

use super::tree::{fit_tree, RegressionTree};
use super::{Predictor, TrainingSet};
use crate::rng::Seed;

/// Average of CART trees, each grown on a subsample drawn without replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    trees: Vec<RegressionTree>,
}

impl Forest {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }
}

impl Predictor for Forest {
    fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn fit_forest(
    data: &TrainingSet<'_>,
    n_trees: usize,
    subsample_fraction: f64,
    max_depth: usize,
    min_leaf: usize,
    seed: Seed,
) -> Forest {
    let m = data.len();
    let size = ((subsample_fraction * m as f64).round() as usize).clamp(1, m);
    let trees = (0..n_trees)
        .map(|t| {
            let mut rng = seed.derive(t as u64).rng();
            let mut picked = index::sample(&mut rng, m, size).into_vec();
            picked.sort_unstable();
            let rows: Vec<usize> = picked.into_iter().map(|j| data.rows[j]).collect();
            let sub = TrainingSet { x: data.x, rows: &rows, target: data.target };
            fit_tree(&sub, max_depth, min_leaf)
        })
        .collect();
    Forest { trees }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Matrix;

    fn toy() -> (Matrix, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let y = rows.iter().map(|r| r[0] * 2.0 - r[1]).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn single_full_tree_equals_cart() {
        let (x, y) = toy();
        let ids: Vec<usize> = (0..60).collect();
        let data = TrainingSet::new(&x, &ids, &y).unwrap();
        let forest = fit_forest(&data, 1, 1.0, 8, 5, Seed(3));
        let tree = fit_tree(&data, 8, 5);
        for i in 0..60 {
            assert_eq!(forest.predict(x.row(i)).to_bits(), tree.predict(x.row(i)).to_bits());
        }
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let (x, y) = toy();
        let ids: Vec<usize> = (0..60).collect();
        let data = TrainingSet::new(&x, &ids, &y).unwrap();
        let a = fit_forest(&data, 10, 0.4, 8, 2, Seed(1));
        assert_eq!(a, fit_forest(&data, 10, 0.4, 8, 2, Seed(1)));
        assert_ne!(a, fit_forest(&data, 10, 0.4, 8, 2, Seed(2)));
        assert_eq!(a.trees().len(), 10);
    }
}
