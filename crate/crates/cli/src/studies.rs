//! Reports that are not a single time series: tableau certification,
//! convergence tables and the multisymplectic conservation law check.

use std::fmt::Write as _;

use hodge_ldgh::assembly::MixedOperator;
use hodge_ldgh::diagnostics::{self, FluxData, StagePairing, StepRecord};
use hodge_ldgh::timeloop::{composition_order_defects, tableaux, yoshida6_weights, HarmonicOscillator, PrkEngine};
use num_rational::Rational64;

use crate::config::{Integrator, MeshSpec, Method, RunConfig};
use crate::run::{nonlinearity, Simulation};
use crate::CliError;

/// One line of a check report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Whether failure is the expected outcome.
    pub expect_fail: bool,
    pub value: f64,
}

impl Check {
    pub fn as_expected(&self) -> bool {
        self.passed != self.expect_fail
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed { "pass" } else { "fail" };
        let note = if self.expect_fail { " (expected fail)" } else { "" };
        format!("{:<34} {verdict}{note}  max violation {:.3e}", self.name, self.value)
    }
}

fn r64(x: Rational64) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// Observed order of the Yoshida composition on `q̈ = -q`.
pub fn yoshida_empirical_order() -> Result<f64, CliError> {
    let sys = HarmonicOscillator::new(vec![1.0]);
    let w = yoshida6_weights();
    let tab = tableaux::midpoint().to_real::<f64>();
    let mut engine = PrkEngine::default();
    let mut err = |n: usize| -> Result<f64, CliError> {
        let dt = 1.0 / n as f64;
        let (mut q, mut p) = (vec![1.0], vec![0.0]);
        for _ in 0..n {
            let s = engine.step_composition(&sys, &tab, &w, &q, &p, dt)?;
            q = s.q;
            p = s.p;
        }
        Ok(((q[0] - 1f64.cos()).powi(2) + (p[0] + 1f64.sin()).powi(2)).sqrt())
    };
    let (a, b) = (err(4)?, err(8)?);
    Ok((a / b).log2())
}

pub fn check_tableaux() -> Result<Vec<Check>, CliError> {
    let zero = Rational64::from_integer(0);
    let mut out = Vec::new();
    let rk = |name: &str, t: hodge_ldgh::timeloop::ButcherTableau<Rational64>, expect_fail: bool| {
        let c = t.check_symplectic_rk(zero);
        Check { name: format!("{name} (symplectic RK)"), passed: c.passed, expect_fail, value: r64(c.violation) }
    };
    out.push(rk("midpoint", tableaux::midpoint(), false));
    out.push(rk("forward_euler", tableaux::forward_euler(), true));
    let g = tableaux::gauss2::<f64>().check_symplectic_rk(1e-15);
    out.push(Check { name: "gauss2 (symplectic RK)".into(), passed: g.passed, expect_fail: false, value: g.violation });
    for (name, t, expect_fail) in [("verlet", tableaux::verlet(), false), ("verlet c̄ = 1/2", tableaux::verlet_half_nodes(), true)] {
        let c = t.check_symplectic_prk(zero);
        let v = r64(c.violation).max(r64(c.weight_defect)).max(r64(c.node_defect));
        out.push(Check { name: format!("{name} (symplectic PRK)"), passed: c.passed, expect_fail, value: v });
    }
    let d = composition_order_defects(&yoshida6_weights());
    for (i, label) in ["yoshida6 sum w = 1", "yoshida6 sum w^3 = 0", "yoshida6 sum w^5 = 0"].iter().enumerate() {
        out.push(Check { name: (*label).into(), passed: d[i].abs() <= 1e-12, expect_fail: false, value: d[i].abs() });
    }
    let order = yoshida_empirical_order()?;
    out.push(Check { name: format!("yoshida6 empirical order {order:.3}"), passed: (order - 6.0).abs() <= 0.3, expect_fail: false, value: (order - 6.0).abs() });
    Ok(out)
}

/// One level of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub h: f64,
    pub dt: f64,
    pub errors: [f64; 4],
    /// Observed order of the `u` error against the previous level.
    pub order_u: Option<f64>,
}

/// Runs `refinements + 1` levels, halving the cell size and `Δt` each time.
pub fn converge(cfg: &RunConfig, refinements: usize) -> Result<Vec<Level>, CliError> {
    let MeshSpec::Rect { nx, ny, .. } = cfg.mesh else {
        return Err(CliError::config("file: convergence studies need a rectangle mesh"));
    };
    if !cfg.errors {
        return Err(CliError::config("errors: a convergence study needs an exact solution"));
    }
    let mut out: Vec<Level> = Vec::new();
    for k in 0..=refinements {
        let f = 1usize << k;
        let mut c = cfg.clone();
        if let MeshSpec::Rect { nx: x, ny: y, .. } = &mut c.mesh {
            *x = nx * f;
            *y = ny * f;
        }
        c.dt = cfg.dt / f as f64;
        c.steps = cfg.steps * f;
        c.every = c.steps.max(1);
        c.mscl = false;
        c.energy_identity = false;
        let mut sim = Simulation::new(c.clone())?;
        let rows = sim.run()?;
        let errors = rows.last().and_then(|r| r.l2err).expect("errors enabled");
        let h = sim.space.mesh().h();
        let order_u = out.last().map(|p: &Level| (p.errors[0] / errors[0]).ln() / (p.h / h).ln());
        out.push(Level { h, dt: c.dt, errors, order_u });
    }
    Ok(out)
}

pub fn converge_csv(levels: &[Level]) -> String {
    let mut s = String::from("level,h,dt,l2err_u,l2err_p,l2err_sigma,l2err_rho,order_u\n");
    for (k, l) in levels.iter().enumerate() {
        let o = l.order_u.map(|o| format!("{o:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{k},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{o}", l.h, l.dt, l.errors[0], l.errors[1], l.errors[2], l.errors[3]);
    }
    s
}

/// Outcome of `mscl-check`.
#[derive(Debug, Clone, PartialEq)]
pub enum MsclReport {
    /// Per-step worst element residual for each pairing, and the global residual.
    Multisymplectic { stated: Vec<f64>, reversed: Vec<f64>, global: Vec<f64> },
    /// Per-element flux-difference bracket of the witness variations.
    Mixed { bracket: Vec<f64> },
}

impl MsclReport {
    pub fn max(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Two random linear trajectories for the multisymplectic method, or the
/// non-conservation witness for the mixed method.
pub fn mscl_check(cfg: &RunConfig) -> Result<MsclReport, CliError> {
    if !cfg.is_linear() {
        return Err(CliError::config("problem: the conservation law check needs a linear problem"));
    }
    let mut c = cfg.clone();
    c.errors = false;
    c.mscl = false;
    c.problem = crate::config::Problem::Custom;
    let sim = Simulation::new(c.clone())?;
    match cfg.method {
        Method::Mixed => {
            let op = MixedOperator::build(sim.space.clone(), sim.penalties.clone(), nonlinearity(cfg))?;
            let r1 = diagnostics::random_state(&sim.space, cfg.seed, 1.0, false).p;
            let (w1, w2) = FluxData::mixed_witness(&op, &r1)?;
            Ok(MsclReport::Mixed { bracket: diagnostics::flux_difference_bracket(&sim.space, &w1, &w2) })
        }
        Method::Multisymplectic => {
            let mut it = hodge_ldgh::timeloop::MsIntegrator::new(sim.constraints.clone()).keep_stages(true);
            it.leapfrog = false;
            let (mut x, _, _) = it.complete(diagnostics::random_state(&sim.space, cfg.seed, 1.0, false))?;
            let (mut y, _, _) = it.complete(diagnostics::random_state(&sim.space, cfg.seed.wrapping_add(1), 1.0, false))?;
            let (mut stated, mut reversed, mut global) = (Vec::new(), Vec::new(), Vec::new());
            let all: Vec<usize> = (0..sim.space.mesh().num_elements()).collect();
            for _ in 0..cfg.steps {
                let step = |it: &mut hodge_ldgh::timeloop::MsIntegrator<f64>, s: &hodge_ldgh::calculus::FieldState<f64>| match &cfg.integrator {
                    Integrator::Midpoint => it.step_midpoint(s, cfg.dt),
                    Integrator::Yoshida6 => it.step_yoshida6(s, cfg.dt),
                    Integrator::Verlet => it.step_verlet(s, cfg.dt),
                    Integrator::Rk(n) => it.step_rk(&tableaux::by_name(n).expect("validated"), s, cfg.dt),
                };
                let sx = step(&mut it, &x)?;
                let sy = step(&mut it, &y)?;
                let a = StepRecord { before: &x, after: &sx.state, report: &sx.report };
                let b = StepRecord { before: &y, after: &sy.state, report: &sy.report };
                let cs = &sim.constraints;
                stated.push(MsclReport::max(&diagnostics::mscl_element_residuals(cs, a, b, StagePairing::Stated)?));
                reversed.push(MsclReport::max(&diagnostics::mscl_element_residuals(cs, a, b, StagePairing::Reversed)?));
                global.push(diagnostics::mscl_region_residual(cs, a, b, &all, StagePairing::Stated)?.abs());
                x = sx.state;
                y = sy.state;
            }
            Ok(MsclReport::Multisymplectic { stated, reversed, global })
        }
    }
}

pub fn mscl_csv(report: &MsclReport) -> String {
    match report {
        MsclReport::Multisymplectic { stated, reversed, global } => {
            let mut s = String::from("step,max_element_residual,max_element_residual_reversed,global_residual\n");
            for (k, ((a, b), g)) in stated.iter().zip(reversed).zip(global).enumerate() {
                let _ = writeln!(s, "{},{a:.16e},{b:.16e},{g:.16e}", k + 1);
            }
            s
        }
        MsclReport::Mixed { bracket } => {
            let mut s = String::from("element,flux_difference_bracket\n");
            for (e, b) in bracket.iter().enumerate() {
                let _ = writeln!(s, "{e},{b:.16e}");
            }
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tableau_report_matches_expectations() {
        let checks = check_tableaux().unwrap();
        assert!(checks.iter().all(Check::as_expected), "{checks:#?}");
        let mid = &checks[0];
        assert!(mid.passed && mid.value == 0.0);
        let half = checks.iter().find(|c| c.name.starts_with("verlet c̄")).unwrap();
        assert!(!half.passed);
    }

    #[test]
    fn zero_refinements_has_no_order() {
        let cfg = RunConfig::parse("[mesh]\nnx = 4\nny = 1\n[time]\nsteps = 2\n").unwrap();
        let levels = converge(&cfg, 0).unwrap();
        assert_eq!(levels.len(), 1);
        assert!(levels[0].order_u.is_none());
        assert_eq!(converge_csv(&levels).lines().count(), 2);
    }

    #[test]
    fn mscl_check_reports() {
        let cfg = RunConfig::parse("[mesh]\nnx = 4\nny = 2\nly = 1\n[method]\nintegrator = midpoint\n[time]\nsteps = 3\n").unwrap();
        match mscl_check(&cfg).unwrap() {
            MsclReport::Multisymplectic { stated, global, .. } => {
                assert_eq!(stated.len(), 3);
                assert!(MsclReport::max(&stated) < 1e-11 && MsclReport::max(&global) < 1e-11);
            }
            other => panic!("{other:?}"),
        }
        let mut mixed = cfg.clone();
        mixed.method = Method::Mixed;
        match mscl_check(&mixed).unwrap() {
            MsclReport::Mixed { bracket } => assert!(MsclReport::max(&bracket) > 1e-6),
            other => panic!("{other:?}"),
        }
    }
}
