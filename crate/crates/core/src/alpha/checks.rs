//! Sampling-based falsifiers for the structural properties the controller
//! relies on: bounded constrained sets, concave predicates, regular square
//! output maps and non-degenerate maximisers. A PASS means no counterexample
//! was found, not a proof.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use super::SmoothMetric;
use crate::constraints::{ConstraintKind, PredicateSet};
use crate::expr::{Env, EvalError, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Verdict::Pass => "PASS",
            Verdict::Warn => "WARN",
            Verdict::Fail => "FAIL",
        })
    }
}

/// Random state samples for pointwise checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub samples: usize,
    pub seed: u64,
    pub half_width: f64,
    pub tolerance: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            samples: 500,
            seed: 0x5a3_91e5,
            half_width: 10.0,
            tolerance: 1e-9,
        }
    }
}

impl SamplingConfig {
    fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.random_range(-self.half_width..=self.half_width))
                    .collect()
            })
            .collect()
    }
}

/// Rays `r * d` probed at increasing radii.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialConfig {
    pub radii: Vec<f64>,
    /// Total directions; the first `2n` are the signed coordinate axes.
    pub directions: usize,
    pub times: Vec<f64>,
    /// Growth is only required from this radius outwards.
    pub threshold_radius: f64,
    /// Minimum rise between the threshold and largest radius for a PASS.
    pub growth_floor: f64,
    pub seed: u64,
}

impl Default for RadialConfig {
    fn default() -> Self {
        RadialConfig {
            radii: vec![1.0, 10.0, 100.0, 1000.0],
            directions: 64,
            times: vec![0.0],
            threshold_radius: 10.0,
            growth_floor: 1.0,
            seed: 0xd12_ec75,
        }
    }
}

/// Signed coordinate axes followed by Gaussian-sampled unit vectors.
pub fn probe_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(count.max(2 * dim));
    for j in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; dim];
            d[j] = sign;
            dirs.push(d);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while dirs.len() < count {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if len > 1e-6 {
            dirs.push(v.into_iter().map(|a| a / len).collect());
        }
    }
    dirs
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayOutcome {
    pub direction: Vec<f64>,
    pub t: f64,
    /// Probed value at each radius; `None` where evaluation failed.
    pub values: Vec<Option<f64>>,
    pub growth: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialReport {
    pub verdict: Verdict,
    pub rays: usize,
    pub failing: usize,
    pub warning: usize,
    pub worst: Option<RayOutcome>,
}

fn ray_outcome(
    direction: &[f64],
    t: f64,
    cfg: &RadialConfig,
    probe: &impl Fn(f64, &[f64]) -> Result<f64, EvalError>,
) -> RayOutcome {
    let values: Vec<Option<f64>> = cfg
        .radii
        .iter()
        .map(|&r| {
            let x: Vec<f64> = direction.iter().map(|d| r * d).collect();
            probe(t, &x).ok().filter(|v| v.is_finite())
        })
        .collect();
    let known: Option<Vec<f64>> = values
        .iter()
        .zip(&cfg.radii)
        .filter(|(_, r)| **r >= cfg.threshold_radius)
        .map(|(v, _)| *v)
        .collect();
    let (verdict, growth) = match known {
        None => (Verdict::Warn, f64::NAN),
        Some(v) => {
            let growth = v.last().copied().unwrap_or(0.0) - v.first().copied().unwrap_or(0.0);
            if v.windows(2).any(|w| w[1] <= w[0]) {
                (Verdict::Fail, growth)
            } else if growth < cfg.growth_floor {
                (Verdict::Warn, growth)
            } else {
                (Verdict::Pass, growth)
            }
        }
    };
    RayOutcome {
        direction: direction.to_vec(),
        t,
        values,
        growth,
        verdict,
    }
}

/// Worst ray first: most severe verdict, then least growth.
fn worse(a: &RayOutcome, b: &RayOutcome) -> bool {
    let key = |r: &RayOutcome| if r.growth.is_nan() { f64::NEG_INFINITY } else { r.growth };
    a.verdict > b.verdict || (a.verdict == b.verdict && key(a) < key(b))
}

/// Probes `probe(t, r * d)` for strictly increasing, unbounded-looking growth.
pub fn radial_growth(
    dim: usize,
    cfg: &RadialConfig,
    probe: impl Fn(f64, &[f64]) -> Result<f64, EvalError>,
) -> RadialReport {
    let dirs = probe_directions(dim, cfg.directions, cfg.seed);
    let times: &[f64] = if cfg.times.is_empty() { &[0.0] } else { &cfg.times };
    let mut report = RadialReport {
        verdict: Verdict::Pass,
        rays: 0,
        failing: 0,
        warning: 0,
        worst: None,
    };
    for &t in times {
        for d in &dirs {
            let ray = ray_outcome(d, t, cfg, &probe);
            report.rays += 1;
            match ray.verdict {
                Verdict::Fail => report.failing += 1,
                Verdict::Warn => report.warning += 1,
                Verdict::Pass => {}
            }
            report.verdict = report.verdict.max(ray.verdict);
            if report.worst.as_ref().is_none_or(|w| worse(&ray, w)) {
                report.worst = Some(ray);
            }
        }
    }
    report
}

/// `-alpha_bar` must grow without bound along every ray, so that the
/// constrained set is bounded.
pub fn check_coercivity(metric: &SmoothMetric, cfg: &RadialConfig) -> RadialReport {
    radial_growth(metric.dim(), cfg, |t, x| metric.alpha_bar(t, x).map(|v| -v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Affine,
    Concave,
    Convex,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureOutcome {
    /// Index in the caller's constraint list.
    pub constraint: usize,
    pub kind: ConstraintKind,
    pub required: Curvature,
    pub verdict: Verdict,
    /// Most offending Hessian eigenvalue seen.
    pub worst_eigenvalue: f64,
    pub at: Option<Vec<f64>>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcavityReport {
    pub verdict: Verdict,
    pub constraints: Vec<CurvatureOutcome>,
}

fn eval_matrix(m: &[Vec<Expr>], env: &Env<'_>) -> Result<DMatrix<f64>, EvalError> {
    let n = m.len();
    let mut out = DMatrix::zeros(n, n);
    for (i, row) in m.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            out[(i, j)] = e.eval(env)?;
        }
    }
    Ok(out)
}

/// Every predicate is concave: outputs under two-sided bounds are affine,
/// lower-bounded outputs concave and upper-bounded outputs convex. Checked
/// through the eigenvalues of each output Hessian at random states.
pub fn check_concavity(set: &PredicateSet, cfg: &SamplingConfig) -> ConcavityReport {
    let points = cfg.points(set.dim());
    let mut outcomes = Vec::new();
    for c in set.constraints() {
        let required = match c.kind {
            ConstraintKind::Funnel => Curvature::Affine,
            ConstraintKind::LowerBounded => Curvature::Concave,
            ConstraintKind::UpperBounded => Curvature::Convex,
        };
        // signed distance from the admissible eigenvalue range, positive when violated
        let violation = |eig: f64| match required {
            Curvature::Affine => eig.abs(),
            Curvature::Concave => eig,
            Curvature::Convex => -eig,
        };
        let mut worst: Option<(f64, f64, Vec<f64>)> = None;
        let mut samples = 0;
        for x in &points {
            let Ok(h) = eval_matrix(&c.hessian, &Env::state(x)) else { continue };
            if h.iter().any(|v| !v.is_finite()) {
                continue;
            }
            samples += 1;
            let eigs = SymmetricEigen::new(h).eigenvalues;
            for &e in eigs.iter() {
                if worst.as_ref().is_none_or(|(v, _, _)| violation(e) > *v) {
                    worst = Some((violation(e), e, x.clone()));
                }
            }
        }
        let (verdict, worst_eigenvalue, at) = match worst {
            None => (Verdict::Warn, f64::NAN, None),
            Some((v, e, x)) => (
                if v > cfg.tolerance { Verdict::Fail } else { Verdict::Pass },
                e,
                Some(x),
            ),
        };
        outcomes.push(CurvatureOutcome {
            constraint: c.source,
            kind: c.kind,
            required,
            verdict,
            worst_eigenvalue,
            at,
            samples,
        });
    }
    ConcavityReport {
        verdict: outcomes.iter().map(|o| o.verdict).max().unwrap_or(Verdict::Pass),
        constraints: outcomes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub verdict: Verdict,
    /// Why the structural precondition failed, if it did.
    pub structure: Option<String>,
    pub norm_growth: Option<RadialReport>,
    pub min_singular_value: Option<f64>,
    pub min_abs_determinant: Option<f64>,
    pub at: Option<Vec<f64>>,
}

/// Square, all-funnel output map that is norm-coercive with a full-rank
/// Jacobian everywhere sampled.
pub fn check_output_regularity(set: &PredicateSet, sampling: &SamplingConfig, radial: &RadialConfig) -> RegularityReport {
    let n = set.dim();
    let counts = set.counts();
    let structure = if counts.m != n {
        Some(format!("{} constraints for a state of dimension {n}", counts.m))
    } else if counts.p != counts.m {
        Some(format!("only {} of {} constraints are two-sided", counts.p, counts.m))
    } else {
        None
    };
    if structure.is_some() {
        return RegularityReport {
            verdict: Verdict::Fail,
            structure,
            norm_growth: None,
            min_singular_value: None,
            min_abs_determinant: None,
            at: None,
        };
    }
    let outputs = set.constraints();
    let norm_growth = radial_growth(n, radial, |t, x| {
        let env = Env::new(t, x);
        let mut sq = 0.0;
        for c in outputs {
            sq += c.output.eval(&env)?.powi(2);
        }
        Ok(sq.sqrt())
    });
    let jacobians: Vec<Vec<Expr>> = outputs.iter().map(|c| c.jacobian.clone()).collect();
    let mut min_sv: Option<(f64, Vec<f64>)> = None;
    let mut min_det = f64::INFINITY;
    for x in sampling.points(n) {
        let Ok(j) = eval_matrix(&jacobians, &Env::state(&x)) else { continue };
        if j.iter().any(|v| !v.is_finite()) {
            continue;
        }
        min_det = min_det.min(j.determinant().abs());
        let sv = j.singular_values().min();
        if min_sv.as_ref().is_none_or(|(s, _)| sv < *s) {
            min_sv = Some((sv, x));
        }
    }
    let rank = match &min_sv {
        None => Verdict::Warn,
        Some((s, _)) if *s < sampling.tolerance => Verdict::Fail,
        Some(_) => Verdict::Pass,
    };
    RegularityReport {
        verdict: rank.max(norm_growth.verdict),
        structure: None,
        norm_growth: Some(norm_growth),
        min_singular_value: min_sv.as_ref().map(|(s, _)| *s),
        min_abs_determinant: min_det.is_finite().then_some(min_det),
        at: min_sv.map(|(_, x)| x),
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CriticalPointError {
    #[error("gradient norm {grad_norm:e} exceeds {tolerance:e}; not a critical point")]
    NotCritical { grad_norm: f64, tolerance: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPointReport {
    pub t: f64,
    pub x: Vec<f64>,
    pub grad_norm: f64,
    /// Hessian eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    pub negative_definite: bool,
    /// For square all-funnel sets, the largest distance of an output from its
    /// funnel centre.
    pub midpoint_residual: Option<f64>,
}

pub fn critical_point_diagnostics(
    metric: &SmoothMetric,
    t: f64,
    x: &[f64],
    tolerance: f64,
) -> Result<CriticalPointReport, CriticalPointError> {
    let grad = metric.grad_alpha_x(t, x)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !(grad_norm <= tolerance) {
        return Err(CriticalPointError::NotCritical { grad_norm, tolerance });
    }
    let h = metric.hessian(t, x)?;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let set = metric.predicates();
    let counts = set.counts();
    let midpoint_residual = if counts.m == set.dim() && counts.p == counts.m {
        let env = Env::new(t, x);
        let mut worst: f64 = 0.0;
        for c in set.constraints() {
            let (Some(lo), Some(hi)) = (&c.lower, &c.upper) else { continue };
            let centre = 0.5 * (lo.eval(&env)? + hi.eval(&env)?);
            worst = worst.max((c.output.eval(&env)? - centre).abs());
        }
        Some(worst)
    } else {
        None
    };
    Ok(CriticalPointReport {
        t,
        x: x.to_vec(),
        grad_norm,
        negative_definite: eigenvalues.iter().all(|&e| e < -1e-12),
        eigenvalues,
        midpoint_residual,
    })
}
