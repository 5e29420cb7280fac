//! Closed-loop simulation of an input-affine plant
//! `dx/dt = f(x) + g(x) u + w(t)` under the funnel controller.

use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::alpha::checks::{SamplingConfig, Verdict};
use crate::constraints::Horizon;
use crate::controller::{ControlEvaluation, Controller};
use crate::expr::{self, Env, EvalError, Expr, ParseError, Scope, Symbol};
use crate::format::sig17;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PlantError {
    #[error("{what} has {got} entries, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cannot parse {field}: {source}")]
    Parse { field: String, source: ParseError },
    #[error("{field} may only depend on {allowed}")]
    Scope { field: String, allowed: &'static str },
    #[error("initial state component {index} is not finite")]
    InitialState { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    dim: usize,
    drift: Vec<Expr>,
    /// Row-major input gain.
    gain: Vec<Vec<Expr>>,
    disturbance: Vec<Expr>,
    x0: Vec<f64>,
}

fn state_only(e: &Expr) -> bool {
    !e.depends_on(Symbol::Time)
}

fn time_only(e: &Expr) -> bool {
    e.symbols().iter().all(|s| *s == Symbol::Time)
}

impl Plant {
    pub fn new(drift: Vec<Expr>, gain: Vec<Vec<Expr>>, disturbance: Vec<Expr>, x0: Vec<f64>) -> Result<Self, PlantError> {
        let n = x0.len();
        let dim = |what, got| {
            if got == n {
                Ok(())
            } else {
                Err(PlantError::Dimension { what, expected: n, got })
            }
        };
        dim("drift", drift.len())?;
        dim("input gain", gain.len())?;
        for row in &gain {
            dim("input gain row", row.len())?;
        }
        dim("disturbance", disturbance.len())?;
        if let Some(index) = x0.iter().position(|v| !v.is_finite()) {
            return Err(PlantError::InitialState { index });
        }
        let in_range = |e: &Expr| e.symbols().iter().all(|s| !matches!(s, Symbol::State(i) if *i >= n));
        for (i, e) in drift.iter().enumerate() {
            if !state_only(e) || !in_range(e) {
                return Err(PlantError::Scope {
                    field: format!("f[{}]", i + 1),
                    allowed: "the state",
                });
            }
        }
        for (i, row) in gain.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                if !state_only(e) || !in_range(e) {
                    return Err(PlantError::Scope {
                        field: format!("g[{}][{}]", i + 1, j + 1),
                        allowed: "the state",
                    });
                }
            }
        }
        for (i, e) in disturbance.iter().enumerate() {
            if !time_only(e) {
                return Err(PlantError::Scope {
                    field: format!("w[{}]", i + 1),
                    allowed: "time",
                });
            }
        }
        Ok(Plant {
            dim: n,
            drift,
            gain,
            disturbance,
            x0,
        })
    }

    pub fn parse<S: AsRef<str>>(drift: &[S], gain: &[Vec<S>], disturbance: &[S], x0: Vec<f64>) -> Result<Self, PlantError> {
        let n = x0.len();
        let parse = |field: String, text: &str, scope: Scope| {
            expr::parse(text, scope).map_err(|source| PlantError::Parse { field, source })
        };
        let drift = drift
            .iter()
            .enumerate()
            .map(|(i, s)| parse(format!("f[{}]", i + 1), s.as_ref(), Scope::state(n)))
            .collect::<Result<_, _>>()?;
        let gain = gain
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, s)| parse(format!("g[{}][{}]", i + 1, j + 1), s.as_ref(), Scope::state(n)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        let disturbance = disturbance
            .iter()
            .enumerate()
            .map(|(i, s)| parse(format!("w[{}]", i + 1), s.as_ref(), Scope::time()))
            .collect::<Result<_, _>>()?;
        Plant::new(drift, gain, disturbance, x0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn drift(&self) -> &[Expr] {
        &self.drift
    }

    pub fn gain(&self) -> &[Vec<Expr>] {
        &self.gain
    }

    pub fn disturbance(&self) -> &[Expr] {
        &self.disturbance
    }

    pub fn with_x0(&self, x0: Vec<f64>) -> Result<Self, PlantError> {
        Plant::new(self.drift.clone(), self.gain.clone(), self.disturbance.clone(), x0)
    }

    pub fn with_drift(&self, drift: Vec<Expr>) -> Result<Self, PlantError> {
        Plant::new(drift, self.gain.clone(), self.disturbance.clone(), self.x0.clone())
    }

    /// Same plant with every disturbance component multiplied by `factor`.
    pub fn with_disturbance_scaled(&self, factor: f64) -> Plant {
        let disturbance = self
            .disturbance
            .iter()
            .map(|w| expr::simplify(&Expr::Binary(expr::BinaryOp::Mul, Box::new(Expr::Const(factor)), Box::new(w.clone()))))
            .collect();
        Plant {
            disturbance,
            ..self.clone()
        }
    }

    pub fn gain_at(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let env = Env::state(x);
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for (i, row) in self.gain.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                g[(i, j)] = e.eval(&env)?;
            }
        }
        Ok(g)
    }

    pub fn disturbance_at(&self, t: f64) -> Result<Vec<f64>, EvalError> {
        let env = Env::time(t);
        self.disturbance.iter().map(|w| w.eval(&env)).collect()
    }

    /// `f(x) + g(x) u + w(t)`
    pub fn rhs(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        let env = Env::new(t, x);
        let mut out = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let mut v = self.drift[i].eval(&env)? + self.disturbance[i].eval(&env)?;
            for (g, uj) in self.gain[i].iter().zip(u) {
                v += g.eval(&env)? * uj;
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Largest sampled `|w(t)|` on the horizon.
    pub fn disturbance_bound(&self, horizon: &Horizon) -> Result<f64, EvalError> {
        let mut bound: f64 = 0.0;
        for t in horizon.times() {
            let w = self.disturbance_at(t)?;
            bound = bound.max(w.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        Ok(bound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputGainReport {
    pub verdict: Verdict,
    /// Smallest eigenvalue of the symmetric part of `g` seen.
    pub min_eigenvalue: f64,
    pub at: Option<Vec<f64>>,
    pub samples: usize,
}

/// The symmetric part of the input gain must stay positive definite.
pub fn check_input_gain(plant: &Plant, cfg: &SamplingConfig) -> InputGainReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: Option<(f64, Vec<f64>)> = None;
    let mut samples = 0;
    for k in 0..cfg.samples.max(1) {
        let x: Vec<f64> = if k == 0 {
            plant.x0.clone()
        } else {
            (0..plant.dim)
                .map(|_| rng.random_range(-cfg.half_width..=cfg.half_width))
                .collect()
        };
        let Ok(g) = plant.gain_at(&x) else { continue };
        if g.iter().any(|v| !v.is_finite()) {
            continue;
        }
        samples += 1;
        let sym = 0.5 * (&g + g.transpose());
        let lo = SymmetricEigen::new(sym).eigenvalues.min();
        if worst.as_ref().is_none_or(|(w, _)| lo < *w) {
            worst = Some((lo, x));
        }
    }
    match worst {
        None => InputGainReport {
            verdict: Verdict::Warn,
            min_eigenvalue: f64::NAN,
            at: None,
            samples,
        },
        Some((lo, x)) => InputGainReport {
            verdict: if lo >= cfg.tolerance { Verdict::Pass } else { Verdict::Fail },
            min_eigenvalue: lo,
            at: Some(x),
            samples,
        },
    }
}

/// Classical fourth-order Runge-Kutta step given the slope at the start.
pub fn rk4_step_from<E>(
    f: &mut impl FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    t: f64,
    x: &[f64],
    k1: &[f64],
    dt: f64,
) -> Result<Vec<f64>, E> {
    let shifted = |k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let k2 = f(t + 0.5 * dt, &shifted(k1, 0.5 * dt))?;
    let k3 = f(t + 0.5 * dt, &shifted(&k2, 0.5 * dt))?;
    let k4 = f(t + dt, &shifted(&k3, dt))?;
    Ok((0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

pub fn rk4_step<E>(
    f: &mut impl FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    t: f64,
    x: &[f64],
    dt: f64,
) -> Result<Vec<f64>, E> {
    let k1 = f(t, x)?;
    rk4_step_from(f, t, x, &k1, dt)
}

/// `steps` fixed RK4 steps from `(t0, x0)`; returns the final state.
pub fn integrate_fixed<E>(
    mut f: impl FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    t0: f64,
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Vec<f64>, E> {
    let mut x = x0.to_vec();
    for k in 0..steps {
        x = rk4_step(&mut f, t0 + k as f64 * dt, &x, dt)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Keep every `record_every`-th step in the trajectory.
    pub record_every: usize,
    /// Fraction of the funnel width by which the metric may leave the
    /// funnel before the run is aborted.
    pub breach_guard: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_end: 20.0,
            dt: 1e-3,
            record_every: 10,
            breach_guard: 0.01,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("step size must be positive and finite, got {0}")]
    Step(f64),
    #[error("end time {t_end} must be at least one step ({dt})")]
    Horizon { t_end: f64, dt: f64 },
    #[error("record_every must be at least 1")]
    RecordEvery,
    #[error("plant has dimension {plant} but the constraints use {metric}")]
    Dimension { plant: usize, metric: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Abort {
    NonFinite { t: f64 },
    Breach { t: f64, alpha: f64, lower: f64, upper: f64 },
    Eval { t: f64, message: String },
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Abort::NonFinite { t } => write!(f, "state or metric became non-finite at t = {t}"),
            Abort::Breach { t, alpha, lower, upper } => {
                write!(f, "metric {alpha} left the funnel ({lower}, {upper}) at t = {t}")
            }
            Abort::Eval { t, message } => write!(f, "evaluation failed at t = {t}: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub control: ControlEvaluation,
    pub alpha_bar: f64,
    pub psi: Vec<f64>,
}

/// Counters over every integration step, recorded or not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Events {
    pub first_positive_alpha_bar: Option<f64>,
    pub last_nonpositive_alpha_bar: Option<f64>,
    /// Steps where the metric touched or left the funnel.
    pub breaches: usize,
    pub clamps: usize,
    pub steps: usize,
    pub abort: Option<Abort>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    /// Smallest `alpha - rho_lower`.
    pub min_lower_margin: f64,
    /// Smallest `rho_upper - alpha`.
    pub min_upper_margin: f64,
    /// Smallest `alpha_bar` strictly after the settling time.
    pub min_alpha_bar_after_settle: Option<f64>,
    /// Smallest `alpha` from the settling time on.
    pub min_alpha_after_settle: Option<f64>,
    pub max_input_norm: f64,
    pub final_t: f64,
    pub final_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub dim: usize,
    pub predicates: usize,
    pub records: Vec<StepRecord>,
    pub events: Events,
    pub summary: RunSummary,
}

impl Trajectory {
    pub fn completed(&self) -> bool {
        self.events.abort.is_none()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        header.extend((1..=self.dim).map(|i| format!("u{i}")));
        header.extend(
            ["alpha", "alpha_bar", "alpha_hat", "eps", "xi", "V", "rho_lo", "rho_hi"]
                .iter()
                .map(|s| s.to_string()),
        );
        header.extend((1..=self.predicates).map(|i| format!("psi_{i}")));
        header.push("clamped".into());
        writeln!(out, "{}", header.join(","))?;
        let mut line = Vec::with_capacity(header.len());
        for r in &self.records {
            line.clear();
            let c = &r.control;
            line.push(sig17(r.t));
            line.extend(r.x.iter().map(|&v| sig17(v)));
            line.extend(c.u.iter().map(|&v| sig17(v)));
            for v in [c.alpha, r.alpha_bar, c.alpha_hat, c.epsilon, c.xi, c.barrier, c.rho_lower, c.rho_upper] {
                line.push(sig17(v));
            }
            line.extend(r.psi.iter().map(|&v| sig17(v)));
            line.push(u8::from(c.clamped).to_string());
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Closed-loop vector field. The controller sees only `(t, x)`.
pub fn closed_loop_rhs(plant: &Plant, controller: &Controller, t: f64, x: &[f64]) -> Result<(Vec<f64>, ControlEvaluation), EvalError> {
    let eval = controller.control(t, x)?;
    let dx = plant.rhs(t, x, &eval.u)?;
    Ok((dx, eval))
}

/// Fixed-step RK4 from `t = 0` to `cfg.t_end`. Runs that diverge or leave
/// the funnel by more than the guard stop early; the returned trajectory
/// then ends at the last evaluated step and carries the reason.
pub fn integrate(plant: &Plant, controller: &Controller, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(SimError::Step(cfg.dt));
    }
    if !(cfg.t_end >= cfg.dt) {
        return Err(SimError::Horizon {
            t_end: cfg.t_end,
            dt: cfg.dt,
        });
    }
    if cfg.record_every == 0 {
        return Err(SimError::RecordEvery);
    }
    let metric = controller.metric();
    if metric.dim() != plant.dim() {
        return Err(SimError::Dimension {
            plant: plant.dim(),
            metric: metric.dim(),
        });
    }
    let settle = controller.funnel().settle_time;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut records = Vec::with_capacity(steps / cfg.record_every + 2);
    let mut events = Events {
        first_positive_alpha_bar: None,
        last_nonpositive_alpha_bar: None,
        breaches: 0,
        clamps: 0,
        steps: 0,
        abort: None,
    };
    let mut summary = RunSummary {
        min_lower_margin: f64::INFINITY,
        min_upper_margin: f64::INFINITY,
        min_alpha_bar_after_settle: None,
        min_alpha_after_settle: None,
        max_input_norm: 0.0,
        final_t: 0.0,
        final_state: plant.x0().to_vec(),
    };
    let mut field = |t: f64, x: &[f64]| closed_loop_rhs(plant, controller, t, x).map(|(dx, _)| dx);
    let mut x = plant.x0().to_vec();
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if x.iter().any(|v| !v.is_finite()) {
            events.abort = Some(Abort::NonFinite { t });
            break;
        }
        let evaluated = closed_loop_rhs(plant, controller, t, &x).and_then(|(dx, eval)| {
            let psi = metric.predicates().psi_values(t, &x)?;
            Ok((dx, eval, psi))
        });
        let (k1, eval, psi) = match evaluated {
            Ok(v) => v,
            Err(e) => {
                events.abort = Some(Abort::Eval {
                    t,
                    message: e.to_string(),
                });
                break;
            }
        };
        events.steps = k + 1;
        summary.final_t = t;
        summary.final_state = x.clone();
        let alpha_bar = psi.iter().copied().fold(f64::INFINITY, f64::min);
        let (alpha, lower, upper) = (eval.alpha, eval.rho_lower, eval.rho_upper);
        let guard = cfg.breach_guard * (upper - lower);
        if !(alpha > lower && alpha < upper) {
            events.breaches += 1;
        }
        events.clamps += usize::from(eval.clamped);
        if alpha_bar > 0.0 {
            events.first_positive_alpha_bar.get_or_insert(t);
        } else {
            events.last_nonpositive_alpha_bar = Some(t);
        }
        summary.min_lower_margin = summary.min_lower_margin.min(alpha - lower);
        summary.min_upper_margin = summary.min_upper_margin.min(upper - alpha);
        summary.max_input_norm = summary.max_input_norm.max(eval.u.iter().map(|v| v * v).sum::<f64>().sqrt());
        if t > settle {
            let m = summary.min_alpha_bar_after_settle.get_or_insert(alpha_bar);
            *m = m.min(alpha_bar);
        }
        if t >= settle {
            let m = summary.min_alpha_after_settle.get_or_insert(alpha);
            *m = m.min(alpha);
        }
        let breached = !(alpha >= lower - guard && alpha <= upper + guard);
        if k % cfg.record_every == 0 || k == steps || breached {
            records.push(StepRecord {
                t,
                x: x.clone(),
                control: eval,
                alpha_bar,
                psi,
            });
        }
        if breached {
            events.abort = Some(if alpha.is_finite() {
                Abort::Breach { t, alpha, lower, upper }
            } else {
                Abort::NonFinite { t }
            });
            break;
        }
        if k == steps {
            break;
        }
        match rk4_step_from(&mut field, t, &x, &k1, cfg.dt) {
            Ok(next) => x = next,
            Err(e) => {
                events.abort = Some(Abort::Eval {
                    t,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(Trajectory {
        dim: plant.dim(),
        predicates: metric.predicates().len(),
        records,
        events,
        summary,
    })
}
