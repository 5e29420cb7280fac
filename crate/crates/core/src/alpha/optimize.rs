//! Pointwise maximisation of `alpha` over the state.

use std::cmp::Ordering;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::SmoothMetric;
use crate::constraints::ConstraintKind;
use crate::expr::{Env, Expr, Symbol};
use crate::format::sig17;

/// Axis-aligned box, one `(lo, hi)` pair per state coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchBox(pub Vec<(f64, f64)>);

impl SearchBox {
    /// Coordinates that are themselves the output of a funnel constraint
    /// take that funnel's bounds at `t`; all others get `±free_half_width`.
    pub fn infer(metric: &SmoothMetric, t: f64, free_half_width: f64) -> SearchBox {
        let mut sides = vec![(-free_half_width, free_half_width); metric.dim()];
        let mut pinned = vec![false; metric.dim()];
        let env = Env::time(t);
        for c in metric.predicates().constraints() {
            let (ConstraintKind::Funnel, Expr::Var(Symbol::State(j))) = (c.kind, &c.output) else {
                continue;
            };
            let eval = |e: &Option<Expr>| e.as_ref().and_then(|e| e.eval(&env).ok());
            let (Some(lo), Some(hi)) = (eval(&c.lower), eval(&c.upper)) else {
                continue;
            };
            let side = &mut sides[*j];
            if pinned[*j] {
                *side = (side.0.max(lo), side.1.min(hi));
            } else {
                *side = (lo, hi);
                pinned[*j] = true;
            }
        }
        SearchBox(sides)
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.0.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub starts: usize,
    pub seed: u64,
    /// Sufficient-increase constant of the backtracking line search.
    pub armijo: f64,
    pub shrink: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Explicit search box; inferred from the constraints when absent.
    pub search_box: Option<SearchBox>,
    pub free_half_width: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            starts: 32,
            seed: 0x5eed_a1fa,
            armijo: 1e-4,
            shrink: 0.5,
            grad_tol: 1e-8,
            max_iter: 500,
            search_box: None,
            free_half_width: 10.0,
        }
    }
}

/// Best point found by the optimiser at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptPoint {
    pub t: f64,
    pub value: f64,
    /// `alpha_bar` at the maximiser.
    pub alpha_bar: f64,
    pub maximizer: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub starts: usize,
    pub converged: usize,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OptError {
    #[error("no start converged at t = {t} ({starts} starts)")]
    NoConvergence {
        t: f64,
        starts: usize,
        best: Option<Box<OptPoint>>,
    },
    #[error("search box has {got} sides but the state has dimension {dim}")]
    BoxDimension { got: usize, dim: usize },
}

impl OptError {
    /// Best unconverged point, when any start could be evaluated.
    pub fn best(&self) -> Option<&OptPoint> {
        match self {
            OptError::NoConvergence { best, .. } => best.as_deref(),
            OptError::BoxDimension { .. } => None,
        }
    }
}

struct Run {
    x: Vec<f64>,
    value: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Newton direction `-H^{-1} g` when `-H` is positive definite.
fn newton_direction(hessian: DMatrix<f64>, grad: &[f64]) -> Option<Vec<f64>> {
    let chol = (-hessian).cholesky()?;
    let d = chol.solve(&DVector::from_column_slice(grad));
    d.iter().all(|v| v.is_finite()).then(|| d.as_slice().to_vec())
}

fn ascend(metric: &SmoothMetric, t: f64, start: Vec<f64>, cfg: &OptimizerConfig) -> Option<Run> {
    let (mut value, mut grad) = metric.alpha_and_gradient(t, &start).ok()?;
    if !value.is_finite() {
        return None;
    }
    let mut x = start;
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let run = |x: &Vec<f64>, value: f64, grad_norm: f64, iterations: usize, converged: bool| Run {
        x: x.clone(),
        value,
        grad_norm,
        iterations,
        converged,
    };
    for iter in 0..cfg.max_iter {
        let grad_norm = norm(&grad);
        if grad_norm < cfg.grad_tol {
            return Some(run(&x, value, grad_norm, iter, true));
        }
        let (dir, mut step) = match metric.hessian(t, &x).ok().and_then(|h| newton_direction(h, &grad)) {
            Some(d) => (d, 1.0),
            None => {
                let bb = previous.as_ref().map(|(px, pg)| {
                    let dx: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
                    let dg: Vec<f64> = grad.iter().zip(pg).map(|(a, b)| a - b).collect();
                    dot(&dx, &dx) / dot(&dx, &dg).abs()
                });
                let step = bb.filter(|s| s.is_finite() && *s > 0.0).unwrap_or(1.0);
                (grad.clone(), step)
            }
        };
        let slope = dot(&grad, &dir);
        let dir_norm = norm(&dir);
        let floor = f64::EPSILON * norm(&x).max(1.0);
        let accepted = loop {
            if step * dir_norm < floor {
                break None;
            }
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Ok((v, g)) = metric.alpha_and_gradient(t, &trial) {
                let sufficient = v >= value + cfg.armijo * step * slope;
                // below the resolution of alpha, progress is judged by the gradient
                let flat = (v - value).abs() <= 4.0 * f64::EPSILON * value.abs().max(1.0) && norm(&g) < grad_norm;
                if v.is_finite() && (sufficient || flat) {
                    break Some((trial, v, g));
                }
            }
            step *= cfg.shrink;
        };
        let Some((nx, nv, ng)) = accepted else {
            return Some(run(&x, value, grad_norm, iter, false));
        };
        previous = Some((std::mem::replace(&mut x, nx), std::mem::replace(&mut grad, ng)));
        value = nv;
    }
    let grad_norm = norm(&grad);
    Some(run(&x, value, grad_norm, cfg.max_iter, grad_norm < cfg.grad_tol))
}

/// Higher value first; near-equal values fall back to the lexicographically
/// smaller point.
fn better(a: &Run, b: &Run) -> Ordering {
    let tie = 1e-12 * a.value.abs().max(b.value.abs()).max(1.0);
    if (a.value - b.value).abs() > tie {
        return b.value.partial_cmp(&a.value).unwrap_or(Ordering::Equal);
    }
    for (u, v) in a.x.iter().zip(&b.x) {
        match u.partial_cmp(v) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

impl SmoothMetric {
    /// Multi-start ascent for the largest value of `alpha(t, .)`.
    pub fn alpha_opt(&self, t: f64, cfg: &OptimizerConfig) -> Result<OptPoint, OptError> {
        let bx = match &cfg.search_box {
            Some(b) if b.0.len() != self.dim() => {
                return Err(OptError::BoxDimension {
                    got: b.0.len(),
                    dim: self.dim(),
                })
            }
            Some(b) => b.clone(),
            None => SearchBox::infer(self, t, cfg.free_half_width),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let starts: Vec<Vec<f64>> = (0..cfg.starts.max(1)).map(|_| bx.sample(&mut rng)).collect();
        self.best_of(t, starts, cfg)
    }

    /// Single ascent from `start`.
    pub fn ascend_from(&self, t: f64, start: &[f64], cfg: &OptimizerConfig) -> Result<OptPoint, OptError> {
        self.best_of(t, vec![start.to_vec()], cfg)
    }

    fn best_of(&self, t: f64, starts: Vec<Vec<f64>>, cfg: &OptimizerConfig) -> Result<OptPoint, OptError> {
        let count = starts.len();
        let runs: Vec<Run> = starts.into_par_iter().filter_map(|s| ascend(self, t, s, cfg)).collect();
        let converged = runs.iter().filter(|r| r.converged).count();
        let best = runs
            .iter()
            .filter(|r| r.converged)
            .min_by(|a, b| better(a, b))
            .or_else(|| runs.iter().min_by(|a, b| better(a, b)));
        let point = best.map(|r| OptPoint {
            t,
            value: r.value,
            alpha_bar: self.alpha_bar(t, &r.x).unwrap_or(f64::NAN),
            maximizer: r.x.clone(),
            grad_norm: r.grad_norm,
            iterations: r.iterations,
            starts: count,
            converged,
        });
        match point {
            Some(p) if converged > 0 => Ok(p),
            best => Err(OptError::NoConvergence {
                t,
                starts: count,
                best: best.map(Box::new),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub point: OptPoint,
    pub status: RowStatus,
}

/// `alpha_opt` over a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptProfile {
    pub dim: usize,
    pub rows: Vec<ProfileRow>,
}

/// `t0, t0 + dt, ...` up to and including `t1` (to rounding).
pub fn time_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    if !(dt > 0.0) || t1 < t0 {
        return vec![t0];
    }
    let steps = ((t1 - t0) / dt + 1e-9).floor() as usize;
    (0..=steps).map(|k| t0 + k as f64 * dt).collect()
}

fn row_from(metric: &SmoothMetric, t: f64, result: Result<OptPoint, OptError>) -> ProfileRow {
    match result {
        Ok(point) => ProfileRow {
            point,
            status: RowStatus::Ok,
        },
        Err(e) => {
            log::warn!("alpha_opt: {e}");
            let point = e.best().cloned().unwrap_or_else(|| OptPoint {
                t,
                value: f64::NAN,
                alpha_bar: f64::NAN,
                maximizer: vec![f64::NAN; metric.dim()],
                grad_norm: f64::NAN,
                iterations: 0,
                starts: 0,
                converged: 0,
            });
            ProfileRow {
                point,
                status: RowStatus::Warn,
            }
        }
    }
}

impl OptProfile {
    /// Independent multi-start at every grid time, run in parallel.
    pub fn cold(metric: &SmoothMetric, times: &[f64], cfg: &OptimizerConfig) -> OptProfile {
        let rows = times
            .par_iter()
            .map(|&t| row_from(metric, t, metric.alpha_opt(t, cfg)))
            .collect();
        OptProfile { dim: metric.dim(), rows }
    }

    /// Starts each time from the previous maximiser and falls back to a full
    /// multi-start when that ascent does not converge.
    pub fn warm(metric: &SmoothMetric, times: &[f64], cfg: &OptimizerConfig) -> OptProfile {
        let mut rows: Vec<ProfileRow> = Vec::with_capacity(times.len());
        for &t in times {
            let seeded = rows
                .last()
                .filter(|r| r.status == RowStatus::Ok)
                .and_then(|r| metric.ascend_from(t, &r.point.maximizer, cfg).ok());
            let result = match seeded {
                Some(p) => Ok(p),
                None => metric.alpha_opt(t, cfg),
            };
            rows.push(row_from(metric, t, result));
        }
        OptProfile { dim: metric.dim(), rows }
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.point.t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.point.value).collect()
    }

    /// Smallest value on the grid, the sampled feasibility margin.
    pub fn infimum(&self) -> f64 {
        self.values().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn supremum(&self) -> f64 {
        self.values().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn warnings(&self) -> usize {
        self.rows.iter().filter(|r| r.status == RowStatus::Warn).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let xs: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(out, "t,alpha_opt,{},alpha_bar_opt,status", xs.join(","))?;
        for r in &self.rows {
            let p = &r.point;
            let xs: Vec<String> = p.maximizer.iter().map(|&v| sig17(v)).collect();
            let status = match r.status {
                RowStatus::Ok => "ok",
                RowStatus::Warn => "warn",
            };
            writeln!(
                out,
                "{},{},{},{},{status}",
                sig17(p.t),
                sig17(p.value),
                xs.join(","),
                sig17(p.alpha_bar)
            )?;
        }
        Ok(())
    }
}
