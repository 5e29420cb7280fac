//! Output-feedback law keeping the metric inside its funnel.
//!
//! The metric is normalised to `(-1, 1)` across the funnel, mapped to the
//! whole real line, and fed back along the metric gradient with a gain that
//! grows near the funnel walls. Only `(t, x)` is used; the plant model is
//! never consulted.

use serde::Serialize;
use thiserror::Error;

use crate::alpha::SmoothMetric;
use crate::expr::EvalError;
use crate::funnel::FunnelSpec;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ControllerError {
    #[error("control gain must be positive and finite, got {0}")]
    Gain(f64),
    #[error("clamp margin must lie in (0, 1e-6], got {0}")]
    ClampMargin(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerConfig {
    pub gain: f64,
    /// Normalised values are clamped to `±(1 - clamp_margin)`.
    pub clamp_margin: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            gain: 1.0,
            clamp_margin: 1e-12,
        }
    }
}

impl ControllerConfig {
    pub fn new(gain: f64, clamp_margin: f64) -> Result<Self, ControllerError> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(ControllerError::Gain(gain));
        }
        if !(clamp_margin > 0.0 && clamp_margin <= 1e-6) {
            return Err(ControllerError::ClampMargin(clamp_margin));
        }
        Ok(ControllerConfig { gain, clamp_margin })
    }
}

/// `ln((1 + a) / (1 - a))`, an odd increasing bijection of `(-1, 1)` onto
/// the real line.
pub fn transformed_error(alpha_hat: f64) -> f64 {
    // evaluated on |a| so that the result is exactly odd
    2.0 * alpha_hat.abs().atanh().copysign(alpha_hat)
}

/// `eps^2 / 2`; logged, never fed back.
pub fn barrier(epsilon: f64) -> f64 {
    0.5 * epsilon * epsilon
}

/// Clamps into `[-1 + margin, 1 - margin]`, reporting whether it had to.
pub fn clamp_normalized(alpha_hat: f64, margin: f64) -> (f64, bool) {
    let edge = 1.0 - margin;
    if alpha_hat.is_nan() {
        return (alpha_hat, true);
    }
    if alpha_hat > edge {
        (edge, true)
    } else if alpha_hat < -edge {
        (-edge, true)
    } else {
        (alpha_hat, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlEvaluation {
    pub u: Vec<f64>,
    pub alpha: f64,
    /// Normalised metric after clamping.
    pub alpha_hat: f64,
    pub epsilon: f64,
    pub xi: f64,
    pub barrier: f64,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct Controller {
    metric: SmoothMetric,
    funnel: FunnelSpec,
    config: ControllerConfig,
}

impl Controller {
    pub fn new(metric: SmoothMetric, funnel: FunnelSpec, config: ControllerConfig) -> Self {
        Controller { metric, funnel, config }
    }

    pub fn metric(&self) -> &SmoothMetric {
        &self.metric
    }

    pub fn funnel(&self) -> &FunnelSpec {
        &self.funnel
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn with_gain(&self, gain: f64) -> Result<Self, ControllerError> {
        let config = ControllerConfig::new(gain, self.config.clamp_margin)?;
        Ok(Controller { config, ..self.clone() })
    }

    /// Position of `alpha` across the funnel: -1 at the lower wall, +1 at
    /// the upper wall.
    pub fn alpha_hat(&self, t: f64, alpha: f64) -> f64 {
        (alpha - 0.5 * self.funnel.rho_sum(t)) / (0.5 * self.funnel.rho_diff(t))
    }

    /// `4 / (rho_diff (1 - alpha_hat^2))`
    pub fn xi(&self, t: f64, alpha_hat: f64) -> f64 {
        4.0 / (self.funnel.rho_diff(t) * (1.0 - alpha_hat * alpha_hat))
    }

    pub fn control(&self, t: f64, x: &[f64]) -> Result<ControlEvaluation, EvalError> {
        let (alpha, grad) = self.metric.alpha_and_gradient(t, x)?;
        let (alpha_hat, clamped) = clamp_normalized(self.alpha_hat(t, alpha), self.config.clamp_margin);
        let epsilon = transformed_error(alpha_hat);
        let xi = self.xi(t, alpha_hat);
        let scale = -self.config.gain * xi * epsilon;
        Ok(ControlEvaluation {
            u: grad.iter().map(|g| scale * g).collect(),
            alpha,
            alpha_hat,
            epsilon,
            xi,
            barrier: barrier(epsilon),
            rho_lower: self.funnel.rho_lower(t),
            rho_upper: self.funnel.rho_upper(t),
            clamped,
        })
    }
}
