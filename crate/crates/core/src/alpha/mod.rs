//! Smooth signed distance to the constrained set.
//!
//! `alpha_bar` is the minimum predicate value, positive exactly when every
//! constraint holds. `alpha` is its log-sum-exp under-approximation with
//! sharpness `nu`, smooth in `(t, x)` and within `ln(m + p) / nu` of
//! `alpha_bar`.

pub mod checks;
mod optimize;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::constraints::{ConstraintKind, PredicateSet};
use crate::expr::{Env, EvalError};

pub use optimize::{time_grid, OptError, OptPoint, OptProfile, OptimizerConfig, ProfileRow, RowStatus, SearchBox};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricError {
    #[error("sharpness must be positive and finite, got {0}")]
    Sharpness(f64),
}

/// Shifted log-sum-exp soft minimum: `-(1/nu) ln sum exp(-nu v_k)`.
pub fn soft_min(values: &[f64], nu: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = values.iter().map(|v| (-nu * (v - lo)).exp()).sum();
    lo - sum.ln() / nu
}

/// Normalised soft-min weights `exp(-nu v_k) / sum exp(-nu v_j)`, written to
/// `out`. Returns the soft minimum.
pub fn soft_min_weights(values: &[f64], nu: f64, out: &mut [f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (w, v) in out.iter_mut().zip(values) {
        *w = (-nu * (v - lo)).exp();
        sum += *w;
    }
    for w in out.iter_mut() {
        *w /= sum;
    }
    lo - sum.ln() / nu
}

/// Values of the metric at one point, sharing a single predicate pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub psi: Vec<f64>,
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub alpha_bar: f64,
}

#[derive(Debug, Clone)]
pub struct SmoothMetric {
    set: Arc<PredicateSet>,
    nu: f64,
}

impl SmoothMetric {
    pub fn new(set: Arc<PredicateSet>, nu: f64) -> Result<Self, MetricError> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(MetricError::Sharpness(nu));
        }
        Ok(SmoothMetric { set, nu })
    }

    /// Same predicates, different sharpness.
    pub fn with_nu(&self, nu: f64) -> Result<Self, MetricError> {
        SmoothMetric::new(self.set.clone(), nu)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn predicates(&self) -> &PredicateSet {
        &self.set
    }

    pub fn predicate_set(&self) -> &Arc<PredicateSet> {
        &self.set
    }

    /// Largest possible gap `alpha_bar - alpha`.
    pub fn sandwich_width(&self) -> f64 {
        (self.set.len() as f64).ln() / self.nu
    }

    pub fn sample(&self, t: f64, x: &[f64]) -> Result<MetricSample, EvalError> {
        let psi = self.set.psi_values(t, x)?;
        let mut weights = vec![0.0; psi.len()];
        let alpha = soft_min_weights(&psi, self.nu, &mut weights);
        let alpha_bar = psi.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(MetricSample {
            psi,
            weights,
            alpha,
            alpha_bar,
        })
    }

    pub fn alpha_bar(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        let psi = self.set.psi_values(t, x)?;
        Ok(psi.into_iter().fold(f64::INFINITY, f64::min))
    }

    pub fn alpha(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        Ok(soft_min(&self.set.psi_values(t, x)?, self.nu))
    }

    /// `alpha` and its state gradient from one predicate pass.
    pub fn alpha_and_gradient(&self, t: f64, x: &[f64]) -> Result<(f64, Vec<f64>), EvalError> {
        let s = self.sample(t, x)?;
        let grad = self.output_gradient(t, x, &s.weights)?;
        Ok((s.alpha, grad))
    }

    /// State gradient assembled from the output Jacobian: `J^T gamma` where
    /// each constraint contributes the weight of its lower predicate minus
    /// the weight of its upper predicate.
    pub fn grad_alpha_x(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let s = self.sample(t, x)?;
        self.output_gradient(t, x, &s.weights)
    }

    fn output_gradient(&self, t: f64, x: &[f64], weights: &[f64]) -> Result<Vec<f64>, EvalError> {
        let env = Env::new(t, x);
        let mut grad = vec![0.0; x.len()];
        let mut k = 0;
        for c in self.set.constraints() {
            let gamma = match c.kind {
                ConstraintKind::Funnel => {
                    k += 2;
                    weights[k - 2] - weights[k - 1]
                }
                ConstraintKind::LowerBounded => {
                    k += 1;
                    weights[k - 1]
                }
                ConstraintKind::UpperBounded => {
                    k += 1;
                    -weights[k - 1]
                }
            };
            if gamma == 0.0 {
                continue;
            }
            for (g, dh) in grad.iter_mut().zip(&c.jacobian) {
                *g += gamma * dh.eval(&env)?;
            }
        }
        Ok(grad)
    }

    /// State gradient as the weighted sum of predicate gradients.
    pub fn grad_alpha_x_predicates(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let s = self.sample(t, x)?;
        let env = Env::new(t, x);
        let mut grad = vec![0.0; x.len()];
        for (p, w) in self.set.predicates().iter().zip(&s.weights) {
            for (g, dp) in grad.iter_mut().zip(&p.gradient) {
                *g += w * dp.eval(&env)?;
            }
        }
        Ok(grad)
    }

    /// Partial derivative of `alpha` in `t` at fixed `x`.
    pub fn dalpha_dt(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        let s = self.sample(t, x)?;
        let env = Env::new(t, x);
        let mut d = 0.0;
        for (p, w) in self.set.predicates().iter().zip(&s.weights) {
            d += w * p.time_derivative.eval(&env)?;
        }
        Ok(d)
    }

    /// Hessian of `alpha` in `x`:
    /// `sum w_k H_k - nu sum w_k g_k g_k^T + nu g g^T` with `g` the gradient.
    pub fn hessian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let n = x.len();
        let s = self.sample(t, x)?;
        let env = Env::new(t, x);
        let mut h = DMatrix::zeros(n, n);
        let mut grad = DVector::zeros(n);
        for (p, &w) in self.set.predicates().iter().zip(&s.weights) {
            let gk = DVector::from_iterator(
                n,
                p.gradient.iter().map(|e| e.eval(&env)).collect::<Result<Vec<_>, _>>()?,
            );
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] += w * p.hessian[i][j].eval(&env)?;
                }
            }
            h -= (self.nu * w) * &gk * gk.transpose();
            grad += w * gk;
        }
        h += self.nu * &grad * grad.transpose();
        Ok(h)
    }
}
