//! Run configuration: a flat `key = value` file with `[mesh]`, `[method]`,
//! `[time]` and `[output]` sections.
//!
//! Every key has a default chosen from the problem preset, so an empty
//! `[method]` section with just `problem = ...` reproduces the reference runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    LinearPlaneWave,
    CubicKleinGordon,
    /// Random initial data; no exact solution.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Multisymplectic,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Integrator {
    Midpoint,
    Yoshida6,
    Verlet,
    Rk(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamiltonianFields {
    /// The method's own σ, ρ.
    Own,
    /// Elementwise -rot u, -div u.
    Broken,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    Rect { nx: usize, ny: usize, lx: f64, ly: f64, periodic_x: bool, periodic_y: bool },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub method: Method,
    pub integrator: Integrator,
    pub degree: usize,
    pub mesh: MeshSpec,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Only used by `custom`.
    pub cubic: bool,
    pub dt: f64,
    pub steps: usize,
    pub every: usize,
    pub mscl: bool,
    pub energy_identity: bool,
    pub errors: bool,
    pub hamiltonian: HamiltonianFields,
    pub newton_tol: f64,
    pub linear_tol: f64,
    pub seed: u64,
    pub vtk: bool,
    pub cross_section: bool,
    pub cross_section_y: Option<f64>,
    pub cross_section_points: usize,
}

const KEYS: &[(&str, &[&str])] = &[
    ("mesh", &["nx", "ny", "lx", "ly", "periodic_x", "periodic_y", "file"]),
    ("method", &["problem", "method", "integrator", "degree", "alpha0", "alpha1", "nonlinearity", "hamiltonian", "newton_tol", "linear_tol", "seed"]),
    ("time", &["dt", "t_final", "steps"]),
    ("output", &["every", "mscl", "energy_identity", "errors", "vtk", "cross_section", "cross_section_y", "cross_section_points"]),
];

/// Raw `section.key -> value` pairs, with the line each came from.
#[derive(Debug, Default)]
struct Raw {
    values: BTreeMap<String, (usize, String)>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = Raw::default();
        let mut section: Option<&str> = None;
        for (n, line) in text.lines().enumerate() {
            let n = n + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                section = Some(KEYS.iter().find(|(s, _)| *s == name).map(|(s, _)| *s).ok_or_else(|| CliError::config(format!("line {n}: unknown section [{name}]")))?);
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::config(format!("line {n}: expected `key = value`")))?;
            let sec = section.ok_or_else(|| CliError::config(format!("line {n}: key outside of a section")))?;
            let k = k.trim();
            let known = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, ks)| ks.contains(&k)).unwrap_or(false);
            if !known {
                return Err(CliError::config(format!("line {n}: unknown key `{k}` in [{sec}]")));
            }
            let full = format!("{sec}.{k}");
            if raw.values.insert(full.clone(), (n, v.trim().to_string())).is_some() {
                return Err(CliError::config(format!("line {n}: duplicate key `{k}`")));
            }
        }
        Ok(raw)
    }

    fn get<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some((n, v)) => v.parse().map(Some).map_err(|_| CliError::config(format!("line {n}: invalid value `{v}` for {}", field(key)))),
        }
    }

    fn flag(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.values.get(key).map(|(n, v)| (n, v.as_str())) {
            None => Ok(None),
            Some((_, "true" | "yes" | "on" | "1")) => Ok(Some(true)),
            Some((_, "false" | "no" | "off" | "0")) => Ok(Some(false)),
            Some((n, v)) => Err(CliError::config(format!("line {n}: invalid boolean `{v}` for {}", field(key)))),
        }
    }

    fn text(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }
}

fn field(key: &str) -> &str {
    key.rsplit('.').next().unwrap_or(key)
}

fn invalid(name: &str, why: &str) -> CliError {
    CliError::config(format!("{name}: {why}"))
}

impl RunConfig {
    /// Reference parameters of a problem.
    pub fn preset(problem: Problem) -> Self {
        match problem {
            Problem::LinearPlaneWave | Problem::Custom => Self {
                problem,
                method: Method::Multisymplectic,
                integrator: Integrator::Yoshida6,
                degree: 1,
                mesh: MeshSpec::Rect { nx: 40, ny: 4, lx: 1.0, ly: 0.1, periodic_x: true, periodic_y: true },
                alpha0: -0.05,
                alpha1: 0.05,
                cubic: false,
                dt: 0.025,
                steps: 200,
                every: 1,
                mscl: false,
                energy_identity: false,
                errors: problem != Problem::Custom,
                hamiltonian: HamiltonianFields::Own,
                newton_tol: 1e-12,
                linear_tol: 1e-13,
                seed: 0,
                vtk: false,
                cross_section: false,
                cross_section_y: None,
                cross_section_points: 201,
            },
            Problem::CubicKleinGordon => Self {
                integrator: Integrator::Verlet,
                degree: 3,
                mesh: MeshSpec::Rect { nx: 10, ny: 10, lx: 1.0, ly: 1.0, periodic_x: true, periodic_y: true },
                alpha0: -1.0,
                alpha1: 1.0,
                dt: 0.001,
                steps: 2000,
                every: 10,
                errors: true,
                ..Self::preset(Problem::LinearPlaneWave)
            }
            .with_problem(problem),
        }
    }

    fn with_problem(mut self, problem: Problem) -> Self {
        self.problem = problem;
        self
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw = Raw::parse(text)?;
        let problem = match raw.text("method.problem").unwrap_or("linear_plane_wave") {
            "linear_plane_wave" => Problem::LinearPlaneWave,
            "cubic_klein_gordon" => Problem::CubicKleinGordon,
            "custom" => Problem::Custom,
            other => return Err(invalid("problem", &format!("unknown problem `{other}`"))),
        };
        let mut c = Self::preset(problem);
        if let Some(m) = raw.text("method.method") {
            c.method = match m {
                "ms_ldgh" => Method::Multisymplectic,
                "mixed_ldgh" => Method::Mixed,
                other => return Err(invalid("method", &format!("unknown method `{other}`"))),
            };
        }
        if let Some(i) = raw.text("method.integrator") {
            c.integrator = match i {
                "midpoint" => Integrator::Midpoint,
                "yoshida6" => Integrator::Yoshida6,
                "verlet" => Integrator::Verlet,
                other => match other.strip_prefix("rk:") {
                    Some(name) if hodge_ldgh::timeloop::tableaux::by_name(name).is_some() => Integrator::Rk(name.to_string()),
                    _ => return Err(invalid("integrator", &format!("unknown integrator `{other}`"))),
                },
            };
        }
        if let Some(n) = raw.text("method.nonlinearity") {
            c.cubic = match n {
                "linear" => false,
                "cubic" => true,
                other => return Err(invalid("nonlinearity", &format!("unknown nonlinearity `{other}`"))),
            };
            if problem != Problem::Custom && c.cubic != (problem == Problem::CubicKleinGordon) {
                return Err(invalid("nonlinearity", "fixed by the problem"));
            }
        }
        if let Some(h) = raw.text("method.hamiltonian") {
            c.hamiltonian = match h {
                "own" => HamiltonianFields::Own,
                "broken" => HamiltonianFields::Broken,
                other => return Err(invalid("hamiltonian", &format!("expected `own` or `broken`, got `{other}`"))),
            };
        }
        macro_rules! set {
            ($key:literal, $dst:expr) => {
                if let Some(v) = raw.get($key)? {
                    $dst = v;
                }
            };
        }
        set!("method.degree", c.degree);
        set!("method.alpha0", c.alpha0);
        set!("method.alpha1", c.alpha1);
        set!("method.newton_tol", c.newton_tol);
        set!("method.linear_tol", c.linear_tol);
        set!("method.seed", c.seed);
        if let Some(path) = raw.text("mesh.file") {
            if ["nx", "ny", "lx", "ly", "periodic_x", "periodic_y"].iter().any(|k| raw.values.contains_key(&format!("mesh.{k}"))) {
                return Err(invalid("file", "cannot be combined with a rectangle specification"));
            }
            c.mesh = MeshSpec::File(PathBuf::from(path));
        } else if let MeshSpec::Rect { nx, ny, lx, ly, periodic_x, periodic_y } = &mut c.mesh {
            set!("mesh.nx", *nx);
            set!("mesh.ny", *ny);
            set!("mesh.lx", *lx);
            set!("mesh.ly", *ly);
            if let Some(v) = raw.flag("mesh.periodic_x")? {
                *periodic_x = v;
            }
            if let Some(v) = raw.flag("mesh.periodic_y")? {
                *periodic_y = v;
            }
        }
        set!("time.dt", c.dt);
        let t_final: Option<f64> = raw.get("time.t_final")?;
        let steps: Option<usize> = raw.get("time.steps")?;
        if !(c.dt > 0.0 && c.dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        match (t_final, steps) {
            (Some(_), Some(_)) => return Err(invalid("steps", "give either steps or t_final, not both")),
            (Some(t), None) => {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(invalid("t_final", "must be positive"));
                }
                let n = (t / c.dt).round();
                if (n * c.dt - t).abs() > 1e-9 * t {
                    return Err(invalid("t_final", "must be a whole number of steps"));
                }
                c.steps = n as usize;
            }
            (None, Some(n)) => c.steps = n,
            (None, None) => {
                // keep the preset's final time
                let t = Self::preset(problem).final_time();
                c.steps = (t / c.dt).round().max(1.0) as usize;
            }
        }
        set!("output.every", c.every);
        set!("output.cross_section_points", c.cross_section_points);
        c.cross_section_y = raw.get("output.cross_section_y")?;
        for (key, dst) in [
            ("output.mscl", &mut c.mscl),
            ("output.energy_identity", &mut c.energy_identity),
            ("output.errors", &mut c.errors),
            ("output.vtk", &mut c.vtk),
            ("output.cross_section", &mut c.cross_section),
        ] {
            if let Some(v) = raw.flag(key)? {
                *dst = v;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.alpha0 < 0.0) {
            return Err(invalid("alpha0", "must be negative"));
        }
        if !(self.alpha1 > 0.0) {
            return Err(invalid("alpha1", "must be positive"));
        }
        if self.degree > 6 {
            return Err(invalid("degree", "at most 6 is supported"));
        }
        if let MeshSpec::Rect { nx, ny, lx, ly, .. } = self.mesh {
            if nx == 0 {
                return Err(invalid("nx", "must be at least 1"));
            }
            if ny == 0 {
                return Err(invalid("ny", "must be at least 1"));
            }
            if !(lx > 0.0) {
                return Err(invalid("lx", "must be positive"));
            }
            if !(ly > 0.0) {
                return Err(invalid("ly", "must be positive"));
            }
        }
        if self.integrator == Integrator::Verlet && self.method != Method::Multisymplectic {
            return Err(invalid("integrator", "verlet requires method = ms_ldgh"));
        }
        if let (Method::Mixed, Integrator::Rk(name)) = (self.method, &self.integrator) {
            if hodge_ldgh::timeloop::tableaux::by_name(name).is_some_and(|t| t.is_partitioned()) {
                return Err(invalid("integrator", "partitioned tableaux require method = ms_ldgh"));
            }
        }
        if self.every == 0 {
            return Err(invalid("every", "must be at least 1"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(invalid("newton_tol", "must be positive"));
        }
        if !(self.linear_tol > 0.0) {
            return Err(invalid("linear_tol", "must be positive"));
        }
        if self.errors && self.problem == Problem::Custom {
            return Err(invalid("errors", "the custom problem has no exact solution"));
        }
        if self.cross_section_points < 2 {
            return Err(invalid("cross_section_points", "must be at least 2"));
        }
        Ok(())
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn is_linear(&self) -> bool {
        match self.problem {
            Problem::LinearPlaneWave => true,
            Problem::CubicKleinGordon => false,
            Problem::Custom => !self.cubic,
        }
    }
}
