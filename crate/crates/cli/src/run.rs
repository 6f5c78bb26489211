//! Time stepping driven by a [`RunConfig`], with per-row diagnostics.

use std::sync::Arc;

use hodge_ldgh::assembly::{ConstraintSystems, MixedOperator};
use hodge_ldgh::calculus::{FieldState, Nonlinearity, Penalties, TraceState};
use hodge_ldgh::diagnostics::{self, StagePairing, StepRecord};
use hodge_ldgh::exact::ExactSolution;
use hodge_ldgh::fespace::FeSpace;
use hodge_ldgh::linalg::SolverOptions;
use hodge_ldgh::mesh::{build_periodic_rect_mesh, load_mesh, Mesh};
use hodge_ldgh::timeloop::{tableaux, ButcherTableau, MixedIntegrator, MsIntegrator, MsStep, NewtonConfig};

use crate::config::{HamiltonianFields, Integrator, MeshSpec, Method, Problem, RunConfig};
use crate::CliError;

pub const CSV_HEADER: &str = "t,H_global,H_discrete,l2err_u,l2err_p,l2err_sigma,l2err_rho,mscl_max_element_residual,energy_identity_residual,newton_iters_max,linsolve_residual_max";

/// One line of the time series. `None` is written as an empty field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    pub t: f64,
    pub h_global: f64,
    pub h_discrete: Option<f64>,
    pub l2err: Option<[f64; 4]>,
    pub mscl: Option<f64>,
    pub energy_identity: Option<f64>,
    pub newton_iters: Option<usize>,
    pub linsolve_residual: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

impl Row {
    pub fn to_csv(&self) -> String {
        let e = |i: usize| opt(self.l2err.map(|e| e[i]));
        [
            format!("{:.16e}", self.t),
            format!("{:.16e}", self.h_global),
            opt(self.h_discrete),
            e(0),
            e(1),
            e(2),
            e(3),
            opt(self.mscl),
            opt(self.energy_identity),
            self.newton_iters.map(|n| n.to_string()).unwrap_or_default(),
            opt(self.linsolve_residual),
        ]
        .join(",")
    }
}

pub fn build_mesh(cfg: &RunConfig) -> Result<Mesh<f64>, CliError> {
    match &cfg.mesh {
        MeshSpec::Rect { nx, ny, lx, ly, periodic_x, periodic_y } => Ok(build_periodic_rect_mesh(*nx, *ny, *lx, *ly, *periodic_x, *periodic_y)?),
        MeshSpec::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("file: cannot read {}: {e}", path.display())))?;
            load_mesh(&text).map_err(|e| CliError::config(format!("file: {e}")))
        }
    }
}

pub fn exact_solution(cfg: &RunConfig) -> Option<ExactSolution<f64>> {
    match cfg.problem {
        Problem::LinearPlaneWave => Some(ExactSolution::linear_plane_wave()),
        Problem::CubicKleinGordon => Some(ExactSolution::cubic_klein_gordon()),
        Problem::Custom => None,
    }
}

pub fn nonlinearity(cfg: &RunConfig) -> Nonlinearity {
    if cfg.is_linear() {
        Nonlinearity::Linear
    } else {
        Nonlinearity::CubicKleinGordon
    }
}

fn tableau(name: &str) -> ButcherTableau<f64> {
    tableaux::by_name(name).expect("validated tableau name")
}

enum Stepper {
    Ms(Box<MsIntegrator<f64>>),
    Mixed(Box<MixedIntegrator<f64>>),
}

/// A simulation in progress.
pub struct Simulation {
    pub cfg: RunConfig,
    pub space: Arc<FeSpace<f64>>,
    pub penalties: Penalties<f64>,
    pub constraints: ConstraintSystems<f64>,
    pub exact: Option<ExactSolution<f64>>,
    pub state: FieldState<f64>,
    /// Multisymplectic traces of `state` (multisymplectic method only).
    pub traces: Option<TraceState<f64>>,
    stepper: Stepper,
    /// Second trajectory for the multisymplectic conservation law.
    partner: Option<FieldState<f64>>,
    steps_taken: usize,
}

/// Solver statistics of one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    pub newton_iters: usize,
    pub linsolve_residual: f64,
    pub mscl: Option<f64>,
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let mesh = build_mesh(&cfg)?;
        let space = Arc::new(FeSpace::new(mesh, cfg.degree)?);
        let nf = space.mesh().num_facets();
        let penalties = Penalties::constant(nf, cfg.alpha0, cfg.alpha1)?;
        let nl = nonlinearity(&cfg);
        let constraints = ConstraintSystems::build(space.clone(), penalties.clone(), nl)?.with_solver_options(SolverOptions::with_tol(cfg.linear_tol));
        let newton = NewtonConfig { tol: cfg.newton_tol, linear: SolverOptions::with_tol(cfg.linear_tol), ..NewtonConfig::default() };
        let exact = exact_solution(&cfg);
        let start = match &exact {
            Some(ex) => {
                let mut s = FieldState::zeros(space.layout());
                s.u = space.project_vector(|x| ex.u(0.0, x));
                s.p = space.project_vector(|x| ex.p(0.0, x));
                s
            }
            None => diagnostics::random_state(&space, cfg.seed, 1.0, false),
        };
        let track_mscl = cfg.mscl && cfg.method == Method::Multisymplectic && cfg.is_linear();
        let (stepper, state, traces, partner) = match cfg.method {
            Method::Multisymplectic => {
                let it = MsIntegrator::new(constraints.clone()).with_newton(newton).keep_stages(track_mscl);
                let (state, tr, _) = it.complete(start)?;
                let partner = if track_mscl { Some(it.complete(diagnostics::random_state(&space, cfg.seed.wrapping_add(1), 1.0, false))?.0) } else { None };
                (Stepper::Ms(Box::new(it)), state, Some(tr), partner)
            }
            Method::Mixed => {
                let op = MixedOperator::build(space.clone(), penalties.clone(), nl)?;
                let state = op.initial_state(&constraints, start.u, start.p, 0.0)?;
                let mut it = MixedIntegrator::new(op);
                it.newton = newton;
                (Stepper::Mixed(Box::new(it)), state, None, None)
            }
        };
        Ok(Self { cfg, space, penalties, constraints, exact, state, traces, stepper, partner, steps_taken: 0 })
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    fn ms_step(it: &mut MsIntegrator<f64>, integrator: &Integrator, x: &FieldState<f64>, dt: f64) -> hodge_ldgh::Result<MsStep<f64>> {
        match integrator {
            Integrator::Midpoint => it.step_midpoint(x, dt),
            Integrator::Yoshida6 => it.step_yoshida6(x, dt),
            Integrator::Verlet => it.step_verlet(x, dt),
            Integrator::Rk(name) => it.step_rk(&tableau(name), x, dt),
        }
    }

    pub fn step(&mut self) -> Result<StepInfo, CliError> {
        let dt = self.cfg.dt;
        let info = match &mut self.stepper {
            Stepper::Ms(it) => {
                let s = Self::ms_step(it, &self.cfg.integrator, &self.state, dt)?;
                let mut info = StepInfo { newton_iters: s.report.newton_iterations, linsolve_residual: s.report.linear_residual, mscl: None };
                if let Some(y) = &self.partner {
                    let sy = Self::ms_step(it, &self.cfg.integrator, y, dt)?;
                    let a = StepRecord { before: &self.state, after: &s.state, report: &s.report };
                    let b = StepRecord { before: y, after: &sy.state, report: &sy.report };
                    let res = diagnostics::mscl_element_residuals(&self.constraints, a, b, StagePairing::Stated)?;
                    info.mscl = Some(res.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                    self.partner = Some(sy.state);
                }
                self.state = s.state;
                self.traces = Some(s.traces);
                info
            }
            Stepper::Mixed(it) => {
                let s = match &self.cfg.integrator {
                    Integrator::Midpoint => it.step_midpoint(&self.state, dt)?,
                    Integrator::Yoshida6 => it.step_yoshida6(&self.state, dt)?,
                    Integrator::Rk(name) => it.step_rk(&tableau(name), &self.state, dt)?,
                    Integrator::Verlet => unreachable!("rejected by validation"),
                };
                self.state = s.state;
                StepInfo { newton_iters: s.report.newton_iterations, linsolve_residual: s.report.linear_residual, mscl: None }
            }
        };
        self.steps_taken += 1;
        // avoid drift in t from repeated addition
        self.state.t = dt * self.steps_taken as f64;
        Ok(info)
    }

    /// `ℋ` with the configured choice of σ, ρ.
    pub fn global_hamiltonian(&self) -> f64 {
        let nl = nonlinearity(&self.cfg);
        match self.cfg.hamiltonian {
            HamiltonianFields::Own => diagnostics::global_hamiltonian(&self.space, nl, &self.state),
            HamiltonianFields::Broken => {
                let (sigma, rho) = diagnostics::broken_fields(&self.space, &self.state.u);
                let s = FieldState { sigma, rho, ..self.state.clone() };
                diagnostics::global_hamiltonian(&self.space, nl, &s)
            }
        }
    }

    pub fn discrete_hamiltonian(&self) -> Result<Option<f64>, CliError> {
        match &self.traces {
            Some(tr) => Ok(Some(diagnostics::discrete_hamiltonian(&self.space, &self.penalties, nonlinearity(&self.cfg), &self.state, tr)?)),
            None => Ok(None),
        }
    }

    pub fn row(&self, info: Option<StepInfo>) -> Result<Row, CliError> {
        let l2err = match (&self.exact, self.cfg.errors) {
            (Some(ex), true) => {
                let e = diagnostics::l2_error(&self.space, &self.state, ex, self.state.t)?;
                Some([e.u, e.p, e.sigma, e.rho])
            }
            _ => None,
        };
        let energy_identity = match &self.stepper {
            Stepper::Mixed(it) if self.cfg.energy_identity && self.cfg.is_linear() => Some(diagnostics::energy_identity(it.operator(), &self.state)?.residual()),
            _ => None,
        };
        Ok(Row {
            t: self.state.t,
            h_global: self.global_hamiltonian(),
            h_discrete: self.discrete_hamiltonian()?,
            l2err,
            mscl: info.and_then(|i| i.mscl),
            energy_identity,
            newton_iters: info.map(|i| i.newton_iters),
            linsolve_residual: info.map(|i| i.linsolve_residual),
        })
    }

    /// Runs to the final time, returning one row at `t = 0`, every
    /// `every` steps and at the end.
    pub fn run(&mut self) -> Result<Vec<Row>, CliError> {
        let mut rows = vec![self.row(None)?];
        let mut acc: Option<StepInfo> = None;
        for n in 1..=self.cfg.steps {
            let info = self.step()?;
            acc = Some(match acc {
                None => info,
                Some(a) => StepInfo {
                    newton_iters: a.newton_iters.max(info.newton_iters),
                    linsolve_residual: a.linsolve_residual.max(info.linsolve_residual),
                    mscl: match (a.mscl, info.mscl) {
                        (Some(x), Some(y)) => Some(x.max(y)),
                        (x, y) => x.or(y),
                    },
                },
            });
            if n % self.cfg.every == 0 || n == self.cfg.steps {
                rows.push(self.row(acc.take())?);
            }
        }
        Ok(rows)
    }
}
