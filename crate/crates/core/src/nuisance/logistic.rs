use nalgebra::{DMatrix, DVector};

use super::linear::solve_spd;
use super::{Predictor, TrainingSet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl Predictor for LogisticModel {
    #[inline]
    fn predict(&self, x: &[f64]) -> f64 {
        expit(self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
    }
}

#[derive(Clone, Debug)]
pub struct LogisticFit {
    pub model: LogisticModel,
    /// Mean negative log-likelihood before each iteration and after the last.
    pub loss_history: Vec<f64>,
    pub converged: bool,
    /// Set when the target has a single class; the fit is then this constant.
    pub constant: Option<f64>,
}

#[inline]
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Design<'a> {
    data: &'a TrainingSet<'a>,
}

impl Design<'_> {
    fn linear(&self, w: &DVector<f64>, r: usize) -> f64 {
        w[0] + self.data.x.row(r).iter().zip(w.iter().skip(1)).map(|(v, b)| v * b).sum::<f64>()
    }

    fn loss(&self, w: &DVector<f64>) -> f64 {
        let m = self.data.len() as f64;
        self.data
            .rows
            .iter()
            .map(|&r| {
                let z = self.linear(w, r);
                softplus(z) - self.data.target[r] * z
            })
            .sum::<f64>()
            / m
    }
}

/// Maximum-likelihood logistic regression by damped Newton iterations with
/// backtracking, stopped when the gradient norm drops below `tolerance` or the loss can
/// no longer decrease in floating point.
pub fn fit_logistic(data: &TrainingSet<'_>, max_iter: usize, tolerance: f64) -> Result<LogisticFit> {
    let d = data.d();
    let p = d + 1;
    if let Some(&r) = data.rows.iter().find(|&&r| !(0.0..=1.0).contains(&data.target[r])) {
        return Err(Error::param(format!("logistic target must lie in [0, 1], got {}", data.target[r])));
    }
    let rate = data.target_mean();
    let single_class = data.rows.iter().all(|&r| data.target[r] == data.target[data.rows[0]]);
    if single_class {
        return Ok(LogisticFit {
            model: LogisticModel { intercept: 0.0, coef: vec![0.0; d] },
            loss_history: Vec::new(),
            converged: true,
            constant: Some(rate),
        });
    }
    let m = data.len() as f64;
    let design = Design { data };
    let mut w = DVector::<f64>::zeros(p);
    w[0] = (rate / (1.0 - rate)).ln();
    let mut loss = design.loss(&w);
    let mut history = vec![loss];
    let mut converged = false;
    let mut feat = vec![0.0; p];
    feat[0] = 1.0;
    for _ in 0..max_iter {
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for &r in data.rows {
            feat[1..].copy_from_slice(data.x.row(r));
            let mu = expit(design.linear(&w, r));
            let g = (mu - data.target[r]) / m;
            let h = mu * (1.0 - mu) / m;
            for i in 0..p {
                grad[i] += g * feat[i];
                for j in 0..=i {
                    hess[(i, j)] += h * feat[i] * feat[j];
                }
            }
        }
        if grad.norm() < tolerance {
            converged = true;
            break;
        }
        for i in 0..p {
            for j in 0..i {
                hess[(j, i)] = hess[(i, j)];
            }
            hess[(i, i)] += 1e-10;
        }
        let step = solve_spd(hess, &grad)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &w - &step * t;
            let cand_loss = design.loss(&cand);
            if cand_loss.is_finite() && cand_loss <= loss {
                w = cand;
                loss = cand_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        history.push(loss);
        // Damped steps with a negligible Newton decrement: stationary up to rounding of the loss.
        let stalled = grad.dot(&step) <= 1e-12 * loss.max(1.0);
        if !accepted || (t < 1.0 && stalled) {
            converged = stalled;
            break;
        }
    }
    Ok(LogisticFit {
        model: LogisticModel { intercept: w[0], coef: w.iter().skip(1).copied().collect() },
        loss_history: history,
        converged,
        constant: None,
    })
}
