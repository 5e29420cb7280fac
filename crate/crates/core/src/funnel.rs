//! The single performance funnel `rho_lower(t) < alpha < rho_max` imposed on
//! the smooth metric.
//!
//! The lower bound rises from `rho_0` to `rho_inf` and reaches it exactly at
//! the settling time; the upper bound is constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alpha::checks::Verdict;
use crate::alpha::OptProfile;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FunnelError {
    #[error("settling time must be positive and finite, got {0}")]
    SettleTime(f64),
    #[error("shape exponent must lie in (0, 1), got {0}")]
    Shape(f64),
    #[error("terminal lower bound must be non-negative, got {0}")]
    NegativeTerminal(f64),
    #[error("funnel parameter {name} is not finite")]
    NotFinite { name: &'static str },
    #[error("initial lower bound {rho_0} must lie below the initial metric value {alpha0}")]
    StartsInside { rho_0: f64, alpha0: f64 },
    #[error("upper bound {rho_max} must lie above the initial metric value {alpha0}")]
    UpperBelowStart { rho_max: f64, alpha0: f64 },
    #[error("funnel width rho_max - rho_lower reaches {width}, it must stay positive")]
    Width { width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelSpec {
    pub rho_0: f64,
    pub rho_inf: f64,
    /// Time at which the lower bound reaches `rho_inf`.
    pub settle_time: f64,
    /// Shape exponent in (0, 1); the lower bound approaches `rho_inf` like
    /// `(T - t)^(1 / (1 - shape))`.
    pub shape: f64,
    pub rho_max: f64,
}

/// User-requested funnel parameters; absent fields are designed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelRequest {
    pub rho_0: Option<f64>,
    pub rho_inf: f64,
    pub settle_time: f64,
    pub shape: f64,
    pub rho_max: Option<f64>,
}

impl Default for FunnelRequest {
    fn default() -> Self {
        FunnelRequest {
            rho_0: None,
            rho_inf: 0.1,
            settle_time: 6.0,
            shape: 0.5,
            rho_max: None,
        }
    }
}

pub const DEFAULT_RHO_MAX: f64 = 50.0;

impl FunnelSpec {
    pub fn new(rho_0: f64, rho_inf: f64, settle_time: f64, shape: f64, rho_max: f64) -> Result<Self, FunnelError> {
        for (name, v) in [("rho_0", rho_0), ("rho_inf", rho_inf), ("rho_max", rho_max)] {
            if !v.is_finite() {
                return Err(FunnelError::NotFinite { name });
            }
        }
        if !(settle_time > 0.0 && settle_time.is_finite()) {
            return Err(FunnelError::SettleTime(settle_time));
        }
        if !(shape > 0.0 && shape < 1.0) {
            return Err(FunnelError::Shape(shape));
        }
        if rho_inf < 0.0 {
            return Err(FunnelError::NegativeTerminal(rho_inf));
        }
        Ok(FunnelSpec {
            rho_0,
            rho_inf,
            settle_time,
            shape,
            rho_max,
        })
    }

    /// Chooses the initial lower bound from the initial metric value.
    ///
    /// Starting above `rho_inf` the bound is held constant at `rho_inf`.
    /// Otherwise it starts `max(0.5, 0.1 |alpha0|)` below `alpha0` and rises.
    pub fn design(alpha0: f64, request: &FunnelRequest) -> Result<Self, FunnelError> {
        if !alpha0.is_finite() {
            return Err(FunnelError::NotFinite { name: "alpha0" });
        }
        let rho_0 = match request.rho_0 {
            Some(r) if r >= alpha0 => return Err(FunnelError::StartsInside { rho_0: r, alpha0 }),
            Some(r) => r,
            None if alpha0 > request.rho_inf => request.rho_inf,
            None => alpha0 - (0.1 * alpha0.abs()).max(0.5),
        };
        let rho_max = request.rho_max.unwrap_or(DEFAULT_RHO_MAX);
        if rho_max <= alpha0 {
            return Err(FunnelError::UpperBelowStart { rho_max, alpha0 });
        }
        let spec = FunnelSpec::new(rho_0, request.rho_inf, request.settle_time, request.shape, rho_max)?;
        let width = spec.min_width();
        if !(width > 0.0) {
            return Err(FunnelError::Width { width });
        }
        Ok(spec)
    }

    pub fn rho_lower(&self, t: f64) -> f64 {
        if t >= self.settle_time {
            return self.rho_inf;
        }
        let s = (self.settle_time - t) / self.settle_time;
        // blended so that both endpoints come out exact
        let w = s.powf(1.0 / (1.0 - self.shape));
        w * self.rho_0 + (1.0 - w) * self.rho_inf
    }

    pub fn rho_lower_dot(&self, t: f64) -> f64 {
        if t >= self.settle_time {
            return 0.0;
        }
        let s = (self.settle_time - t) / self.settle_time;
        -s.powf(self.shape / (1.0 - self.shape)) * (self.rho_0 - self.rho_inf) / (self.settle_time * (1.0 - self.shape))
    }

    pub fn rho_upper(&self, _t: f64) -> f64 {
        self.rho_max
    }

    /// `rho_upper + rho_lower`
    pub fn rho_sum(&self, t: f64) -> f64 {
        self.rho_max + self.rho_lower(t)
    }

    /// `rho_upper - rho_lower`
    pub fn rho_diff(&self, t: f64) -> f64 {
        self.rho_max - self.rho_lower(t)
    }

    /// Smallest width over all time. The lower bound moves monotonically
    /// between its endpoints, so this is attained at one of them.
    pub fn min_width(&self) -> f64 {
        self.rho_max - self.rho_0.max(self.rho_inf)
    }

    /// Compares the funnel against a sampled `alpha_opt` profile.
    pub fn validate_feasibility(&self, profile: &OptProfile) -> FeasibilityReport {
        let mut width = f64::INFINITY;
        let mut lower = f64::INFINITY;
        let mut upper = f64::INFINITY;
        let mut undefined = 0;
        for row in &profile.rows {
            let t = row.point.t;
            width = width.min(self.rho_diff(t));
            let v = row.point.value;
            if v.is_nan() {
                undefined += 1;
                continue;
            }
            lower = lower.min(v - self.rho_lower(t));
            upper = upper.min(self.rho_max - v);
        }
        let width_ok = width > 0.0;
        let reachable = lower > 0.0;
        let verdict = if !(width_ok && reachable && upper > 0.0) {
            Verdict::Fail
        } else if undefined > 0 || profile.warnings() > 0 {
            Verdict::Warn
        } else {
            Verdict::Pass
        };
        FeasibilityReport {
            verdict,
            width_margin: width,
            lower_margin: lower,
            upper_margin: upper,
            width_ok,
            reachable,
            times: profile.rows.len(),
            unconverged: profile.warnings(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub verdict: Verdict,
    /// Smallest `rho_max - rho_lower(t)`.
    pub width_margin: f64,
    /// Smallest `alpha_opt(t) - rho_lower(t)`.
    pub lower_margin: f64,
    /// Smallest `rho_max - alpha_opt(t)`.
    pub upper_margin: f64,
    /// The funnel never closes.
    pub width_ok: bool,
    /// The lower bound stays below the best achievable metric value.
    pub reachable: bool,
    pub times: usize,
    pub unconverged: usize,
}
