//! Linear support-vector regression trained by subgradient descent on the
//! epsilon-insensitive loss with an L2 penalty on the weights (not the bias).

use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::vans::TrainOptions;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvr {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearSvr {
    /// A model that predicts `value` for any input of dimension `n`.
    pub fn constant(n: usize, value: f64) -> Self {
        LinearSvr {
            w: vec![0.0; n],
            b: value,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(EngineError::Contract(format!(
                "svr expects {} features, got {}",
                self.w.len(),
                x.len()
            )));
        }
        Ok(self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b)
    }

    /// Subgradient descent on sum_i max(0, |r_i| - epsilon) + l2 * |w|^2.
    /// Early stopping mirrors the polynomial trainer: the validation
    /// objective (epsilon-insensitive error, no penalty) is checked every
    /// `check_every` epochs and the best-so-far parameters are kept.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[f64],
        epsilon: f64,
        opts: &TrainOptions,
        validation: Option<(&[Vec<f64>], &[f64])>,
    ) -> Result<Self> {
        if x.is_empty() {
            return Err(EngineError::Training(
                "svr requires at least one row".into(),
            ));
        }
        if x.len() != y.len() {
            return Err(EngineError::Contract(format!(
                "svr rows/labels mismatch: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        let n = x[0].len();
        if x.iter().any(|r| r.len() != n) {
            return Err(EngineError::Contract(
                "svr rows have inconsistent dimensions".into(),
            ));
        }

        let mut model = LinearSvr::constant(n, 0.0);
        let mut best = model.clone();
        let mut best_objective = f64::INFINITY;
        let mut checks_without_improvement = 0usize;
        let mut have_checked = false;

        let check = |model: &LinearSvr,
                     best: &mut LinearSvr,
                     best_objective: &mut f64,
                     stale: &mut usize|
         -> bool {
            let (vx, vy) = validation.expect("checked by caller");
            let objective: f64 = vx
                .iter()
                .zip(vy)
                .map(|(row, label)| {
                    let r =
                        model.w.iter().zip(row).map(|(w, v)| w * v).sum::<f64>() + model.b - label;
                    (r.abs() - epsilon).max(0.0)
                })
                .sum();
            if objective < *best_objective {
                *best_objective = objective;
                *best = model.clone();
                *stale = 0;
            } else {
                *stale += 1;
            }
            *stale >= opts.patience
        };

        for epoch in 1..=opts.max_epochs {
            let mut grad_w = vec![0.0; n];
            let mut grad_b = 0.0;
            for (row, label) in x.iter().zip(y) {
                let r = model.w.iter().zip(row).map(|(w, v)| w * v).sum::<f64>() + model.b - label;
                if r.abs() > epsilon {
                    let s = r.signum();
                    for (g, v) in grad_w.iter_mut().zip(row) {
                        *g += s * v;
                    }
                    grad_b += s;
                }
            }
            for (g, w) in grad_w.iter_mut().zip(&model.w) {
                *g += 2.0 * opts.l2 * w;
            }
            for (w, g) in model.w.iter_mut().zip(&grad_w) {
                *w -= opts.learning_rate * g;
            }
            model.b -= opts.learning_rate * grad_b;
            if model.w.iter().any(|v| !v.is_finite()) || !model.b.is_finite() {
                return Err(EngineError::Training(format!(
                    "svr training diverged at epoch {epoch}; try a smaller learning rate \
                     (current {})",
                    opts.learning_rate
                )));
            }
            if validation.is_some() && epoch % opts.check_every == 0 {
                have_checked = epoch == opts.max_epochs;
                if check(
                    &model,
                    &mut best,
                    &mut best_objective,
                    &mut checks_without_improvement,
                ) {
                    have_checked = true;
                    break;
                }
            }
        }

        if validation.is_some() {
            if !have_checked {
                check(
                    &model,
                    &mut best,
                    &mut best_objective,
                    &mut checks_without_improvement,
                );
            }
            Ok(best)
        } else {
            Ok(model)
        }
    }
}
