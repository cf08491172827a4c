use nalgebra::{DMatrix, DVector};

use super::{Predictor, TrainingSet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl Predictor for LinearModel {
    #[inline]
    fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Least squares on centered covariates with a ridge penalty on the slopes.
pub fn fit_linear(data: &TrainingSet<'_>, ridge: f64) -> Result<LinearModel> {
    let d = data.d();
    let m = data.len() as f64;
    let mut x_mean = vec![0.0; d];
    for &r in data.rows {
        for (acc, v) in x_mean.iter_mut().zip(data.x.row(r)) {
            *acc += v;
        }
    }
    x_mean.iter_mut().for_each(|v| *v /= m);
    let y_mean = data.target_mean();
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut centered = vec![0.0; d];
    for &r in data.rows {
        for ((c, v), mu) in centered.iter_mut().zip(data.x.row(r)).zip(&x_mean) {
            *c = v - mu;
        }
        let ty = data.target[r] - y_mean;
        for i in 0..d {
            rhs[i] += centered[i] * ty;
            for j in 0..=i {
                gram[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
        gram[(i, i)] += ridge;
    }
    let coef = solve_spd(gram, &rhs)?;
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(b, v)| b * v).sum::<f64>();
    Ok(LinearModel { intercept, coef: coef.iter().copied().collect() })
}

/// Solves a symmetric positive semi-definite system, falling back to the
/// pseudo-inverse when Cholesky fails.
pub(crate) fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    a.svd(true, true)
        .solve(b, 1e-12)
        .map_err(|e| Error::Numerical(format!("least squares solve failed: {e}")))
}
