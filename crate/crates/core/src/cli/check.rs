//! Aggregated structural checks for a scenario.

use std::fmt;

use serde::Serialize;

use super::scenario::Scenario;
use crate::alpha::checks::{
    check_concavity, check_output_regularity, critical_point_diagnostics, ConcavityReport, CriticalPointReport,
    RadialReport, RegularityReport, Verdict,
};
use crate::alpha::time_grid;
use crate::alpha::OptProfile;
use crate::funnel::{FeasibilityReport, FunnelSpec};
use crate::sim::{check_input_gain, InputGainReport};

/// Spacing of the `alpha_opt` sweep used for the feasibility check.
pub const SWEEP_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSummary {
    pub times: usize,
    pub min: f64,
    pub max: f64,
    pub unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub verdict: Verdict,
    pub alpha0: f64,
    pub funnel: FunnelSpec,
    pub input_gain: InputGainReport,
    pub coercivity: RadialReport,
    pub concavity: ConcavityReport,
    pub regularity: RegularityReport,
    /// PASS when either sufficient condition for a unique maximizer holds.
    pub unique_maximizer: Verdict,
    pub critical_point: Option<CriticalPointReport>,
    pub profile: ProfileSummary,
    pub feasibility: FeasibilityReport,
}

pub fn run_checks(scenario: &Scenario) -> CheckReport {
    let metric = scenario.metric();
    let sampling = scenario.sampling();
    let input_gain = check_input_gain(&scenario.plant, &sampling);
    let concavity = check_concavity(metric.predicates(), &sampling);
    let regularity = check_output_regularity(metric.predicates(), &sampling, &scenario.radial());
    let unique_maximizer = concavity.verdict.min(regularity.verdict);
    let cfg = scenario.optimizer();
    let profile = OptProfile::warm(metric, &time_grid(0.0, scenario.sim.t_end, SWEEP_STEP), &cfg);
    let critical_point = profile
        .rows
        .first()
        .and_then(|r| critical_point_diagnostics(metric, r.point.t, &r.point.maximizer, 1e-6).ok());
    let feasibility = scenario.funnel().validate_feasibility(&profile);
    let verdict = [input_gain.verdict, scenario.coercivity.verdict, unique_maximizer, feasibility.verdict]
        .into_iter()
        .max()
        .unwrap_or(Verdict::Pass);
    CheckReport {
        verdict,
        alpha0: scenario.alpha0,
        funnel: *scenario.funnel(),
        input_gain,
        coercivity: scenario.coercivity.clone(),
        concavity,
        regularity,
        unique_maximizer,
        critical_point,
        profile: ProfileSummary {
            times: profile.rows.len(),
            min: profile.infimum(),
            max: profile.supremum(),
            unconverged: profile.warnings(),
        },
        feasibility,
    }
}

fn row(f: &mut fmt::Formatter<'_>, name: &str, verdict: Verdict, detail: impl fmt::Display) -> fmt::Result {
    writeln!(f, "{name:<22}{verdict:<6}{detail}")
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "alpha(0, x0) = {:.6}", self.alpha0)?;
        let fs = &self.funnel;
        writeln!(
            f,
            "funnel: rho_0 = {:.6}, rho_inf = {}, rho_max = {}, settle_time = {}, beta = {}",
            fs.rho_0, fs.rho_inf, fs.rho_max, fs.settle_time, fs.shape
        )?;
        let g = &self.input_gain;
        row(f, "input gain", g.verdict, format_args!("min eig of symmetric part {:.6e}", g.min_eigenvalue))?;
        let c = &self.coercivity;
        match &c.worst {
            Some(w) => row(
                f,
                "bounded set",
                c.verdict,
                format_args!(
                    "{} rays, {} failing, {} weak; worst direction {:?} at t = {}",
                    c.rays, c.failing, c.warning, w.direction, w.t
                ),
            )?,
            None => row(f, "bounded set", c.verdict, "no rays")?,
        }
        let bad: Vec<String> = self
            .concavity
            .constraints
            .iter()
            .filter(|o| o.verdict != Verdict::Pass)
            .map(|o| format!("constraint {} needs {:?} output (eigenvalue {:.3e})", o.constraint + 1, o.required, o.worst_eigenvalue))
            .collect();
        row(
            f,
            "  concave predicates",
            self.concavity.verdict,
            if bad.is_empty() { "all outputs curve the right way".to_string() } else { bad.join("; ") },
        )?;
        let r = &self.regularity;
        let detail = match (&r.structure, r.min_singular_value) {
            (Some(s), _) => s.clone(),
            (None, Some(sv)) => format!(
                "min singular value {sv:.6e}, min |det J| {:.6e}",
                r.min_abs_determinant.unwrap_or(f64::NAN)
            ),
            (None, None) => "no evaluable samples".into(),
        };
        row(f, "  regular outputs", r.verdict, detail)?;
        row(f, "unique maximizer", self.unique_maximizer, "either condition above suffices")?;
        if let Some(cp) = &self.critical_point {
            let mut detail = format!("Hessian eigenvalues {:?} at t = {}", cp.eigenvalues, cp.t);
            if let Some(res) = cp.midpoint_residual {
                detail.push_str(&format!(", centre residual {res:.3e}"));
            }
            let v = if cp.negative_definite { Verdict::Pass } else { Verdict::Warn };
            row(f, "  maximizer curvature", v, detail)?;
        }
        let p = &self.profile;
        let fe = &self.feasibility;
        row(
            f,
            "feasibility",
            fe.verdict,
            format_args!(
                "alpha_opt in [{:.6}, {:.6}] over {} times ({} unconverged); margins: width {:.6}, lower {:.6}, upper {:.6}",
                p.min, p.max, p.times, p.unconverged, fe.width_margin, fe.lower_margin, fe.upper_margin
            ),
        )?;
        row(f, "overall", self.verdict, "")
    }
}
