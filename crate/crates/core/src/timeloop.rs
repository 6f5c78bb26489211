//! Time integration of both semidiscrete systems.
//!
//! The multisymplectic method is a second-order system `u̇ = p`, `M ṗ = L(u)`
//! and is advanced by partitioned Runge–Kutta pairs ([`PrkEngine`]): `u` uses
//! the main tableau `a` and `p` the partner `ā`. Implicit stages of linear
//! problems reduce to one dense solve against `δ M + Δt² C (S + DF)` where
//! `C = a ā` and `S` is the reduced stiffness. The mixed method is a
//! first-order system `M ẏ = A y - F(y)` advanced by ordinary RK with
//! Newton–GMRES on the stacked stage equations.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive};

use crate::assembly::{nonlinear_jacobian, nonlinear_load, ConstraintSolution, ConstraintSystems, MixedOperator};
use crate::calculus::{FieldState, TraceState};
use crate::error::{Error, Result};
use crate::fespace::FeSpace;
use crate::linalg::{solve_general, BlockJacobi, CooBuilder, CsrMatrix, DenseLu, DenseMatrix, LinearOperator, SolverOptions};
use crate::scalar::Real;

// ---------------------------------------------------------------- tableaux

/// Coefficients `(a, b, c)` of one Runge–Kutta method.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients<T> {
    pub a: Vec<Vec<T>>,
    pub b: Vec<T>,
    pub c: Vec<T>,
}

impl<T> Coefficients<T> {
    pub fn stages(&self) -> usize {
        self.b.len()
    }

    fn check_shape(&self) -> Result<()> {
        let s = self.b.len();
        if s == 0 || self.c.len() != s || self.a.len() != s || self.a.iter().any(|r| r.len() != s) {
            return Err(Error::InvalidArgument(format!("tableau is not {s}x{s}")));
        }
        Ok(())
    }

    fn strictly_lower(&self) -> bool
    where
        T: num_traits::Zero,
    {
        self.a.iter().enumerate().all(|(i, r)| r[i..].iter().all(|x| x.is_zero()))
    }
}

impl<T: Clone + Signed + PartialOrd> Coefficients<T> {
    /// `max_i |c_i - Σ_j a_ij|`
    pub fn row_sum_defect(&self) -> T {
        let mut m = T::zero();
        for (row, ci) in self.a.iter().zip(&self.c) {
            let s = row.iter().cloned().fold(T::zero(), |acc, x| acc + x);
            m = max(m, (ci.clone() - s).abs());
        }
        m
    }
}

fn max<T: PartialOrd>(a: T, b: T) -> T {
    if b > a {
        b
    } else {
        a
    }
}

/// A Runge–Kutta tableau, optionally with a partner for partitioned methods.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau<T> {
    pub name: String,
    pub main: Coefficients<T>,
    pub partner: Option<Coefficients<T>>,
}

/// Outcome of a symplecticity check.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticCheck<T> {
    pub passed: bool,
    /// Largest defect of the bilinear condition.
    pub violation: T,
    /// `max |b_i - b̄_i|` (zero for plain RK).
    pub weight_defect: T,
    /// `max |c_i - c̄_i|` (zero for plain RK).
    pub node_defect: T,
}

impl<T> ButcherTableau<T> {
    pub fn rk(name: &str, a: Vec<Vec<T>>, b: Vec<T>, c: Vec<T>) -> Result<Self> {
        let main = Coefficients { a, b, c };
        main.check_shape()?;
        Ok(Self { name: name.into(), main, partner: None })
    }

    pub fn prk(name: &str, main: Coefficients<T>, partner: Coefficients<T>) -> Result<Self> {
        main.check_shape()?;
        partner.check_shape()?;
        if main.stages() != partner.stages() {
            return Err(Error::InvalidArgument("partitioned tableaux differ in stage count".into()));
        }
        Ok(Self { name: name.into(), main, partner: Some(partner) })
    }

    pub fn stages(&self) -> usize {
        self.main.stages()
    }

    /// The coefficients used for the momentum variable.
    pub fn bar(&self) -> &Coefficients<T> {
        self.partner.as_ref().unwrap_or(&self.main)
    }

    pub fn is_partitioned(&self) -> bool {
        self.partner.is_some()
    }
}

impl<T: Clone + Signed + PartialOrd> ButcherTableau<T> {
    /// `max_ij |b_i b_j - b_i a_ij - b_j a_ji|`, tested against `tol`.
    pub fn check_symplectic_rk(&self, tol: T) -> SymplecticCheck<T> {
        let Coefficients { a, b, .. } = &self.main;
        let s = b.len();
        let mut v = T::zero();
        for i in 0..s {
            for j in 0..s {
                let d = b[i].clone() * b[j].clone() - b[i].clone() * a[i][j].clone() - b[j].clone() * a[j][i].clone();
                v = max(v, d.abs());
            }
        }
        SymplecticCheck { passed: v <= tol, violation: v, weight_defect: T::zero(), node_defect: T::zero() }
    }

    /// `b_i b̄_j - b_i ā_ij - b̄_j a_ji = 0`, `b = b̄`, `c = c̄`. Without a
    /// partner this is the RK condition.
    pub fn check_symplectic_prk(&self, tol: T) -> SymplecticCheck<T> {
        let (m, p) = (&self.main, self.bar());
        let s = m.b.len();
        let mut v = T::zero();
        let (mut wd, mut nd) = (T::zero(), T::zero());
        for i in 0..s {
            for j in 0..s {
                let d = m.b[i].clone() * p.b[j].clone() - m.b[i].clone() * p.a[i][j].clone() - p.b[j].clone() * m.a[j][i].clone();
                v = max(v, d.abs());
            }
            wd = max(wd, (m.b[i].clone() - p.b[i].clone()).abs());
            nd = max(nd, (m.c[i].clone() - p.c[i].clone()).abs());
        }
        let passed = v <= tol && wd <= tol && nd <= tol;
        SymplecticCheck { passed, violation: v, weight_defect: wd, node_defect: nd }
    }
}

impl<T: Clone + ToPrimitive> ButcherTableau<T> {
    /// Converts the coefficients to a floating-point type.
    pub fn to_real<R: Real>(&self) -> ButcherTableau<R> {
        let conv = |x: &T| R::lit(x.to_f64().expect("coefficient not representable"));
        let map = |c: &Coefficients<T>| Coefficients {
            a: c.a.iter().map(|r| r.iter().map(conv).collect()).collect(),
            b: c.b.iter().map(conv).collect(),
            c: c.c.iter().map(conv).collect(),
        };
        ButcherTableau { name: self.name.clone(), main: map(&self.main), partner: self.partner.as_ref().map(map) }
    }
}

fn q(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

pub mod tableaux {
    //! Shipped tableaux. Rational ones are exact.

    use super::*;

    pub fn midpoint() -> ButcherTableau<Rational64> {
        ButcherTableau::rk("midpoint", vec![vec![q(1, 2)]], vec![q(1, 1)], vec![q(1, 2)]).unwrap()
    }

    pub fn forward_euler() -> ButcherTableau<Rational64> {
        ButcherTableau::rk("forward_euler", vec![vec![q(0, 1)]], vec![q(1, 1)], vec![q(0, 1)]).unwrap()
    }

    /// Störmer/Verlet as a Lobatto IIIA–IIIB pair: `a` advances `u`, `ā` advances `p`.
    pub fn verlet() -> ButcherTableau<Rational64> {
        let h = q(1, 2);
        let z = q(0, 1);
        ButcherTableau::prk(
            "verlet",
            Coefficients { a: vec![vec![z, z], vec![h, h]], b: vec![h, h], c: vec![z, q(1, 1)] },
            Coefficients { a: vec![vec![h, z], vec![h, z]], b: vec![h, h], c: vec![z, q(1, 1)] },
        )
        .unwrap()
    }

    /// The Verlet pair with `c̄ = (1/2, 1/2)`, which is not symplectic.
    pub fn verlet_half_nodes() -> ButcherTableau<Rational64> {
        let mut t = verlet();
        t.name = "verlet_half_nodes".into();
        t.partner.as_mut().unwrap().c = vec![q(1, 2), q(1, 2)];
        t
    }

    /// Two-stage Gauss–Legendre collocation.
    pub fn gauss2<T: Real>() -> ButcherTableau<T> {
        let s = T::lit(3.0).sqrt() / T::lit(6.0);
        let qt = T::lit(0.25);
        let h = T::lit(0.5);
        ButcherTableau::rk("gauss2", vec![vec![qt, qt - s], vec![qt + s, qt]], vec![h, h], vec![h - s, h + s]).unwrap()
    }

    pub fn by_name(name: &str) -> Option<ButcherTableau<f64>> {
        Some(match name {
            "midpoint" => midpoint().to_real(),
            "forward_euler" | "euler" => forward_euler().to_real(),
            "verlet" => verlet().to_real(),
            "gauss2" => gauss2(),
            _ => return None,
        })
    }
}

/// Yoshida's order-6 palindromic composition of midpoint steps.
pub fn yoshida6_weights() -> [f64; 7] {
    let (w1, w2, w3) = (-1.177_679_984_178_87, 0.235_573_213_359_357, 0.784_513_610_477_560);
    let w0 = 1.0 - 2.0 * (w1 + w2 + w3);
    [w3, w2, w1, w0, w1, w2, w3]
}

/// `(Σw - 1, Σw³, Σw⁵)`
pub fn composition_order_defects(w: &[f64]) -> [f64; 3] {
    [w.iter().sum::<f64>() - 1.0, w.iter().map(|x| x.powi(3)).sum(), w.iter().map(|x| x.powi(5)).sum()]
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig<T> {
    /// Relative residual target of the stage equations.
    pub tol: T,
    pub max_iter: usize,
    pub linear: SolverOptions<T>,
}

impl<T: Real> Default for NewtonConfig<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-12), max_iter: 25, linear: SolverOptions::default() }
    }
}

/// Per-step bookkeeping. Stage data is kept only when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport<T, St> {
    /// Stage positions `Q_i` (second-order systems) or stage states `Y_i`.
    pub stage_states: Vec<Vec<T>>,
    /// Stage momenta `P_i`; empty for first-order systems.
    pub stage_momenta: Vec<Vec<T>>,
    pub stage_data: Vec<St>,
    /// `Δt b_i` of each retained stage; composition substeps are flattened.
    pub stage_dt: Vec<T>,
    pub newton_iterations: usize,
    /// Number of stage solves that needed Newton iteration.
    pub nonlinear_solves: usize,
    pub linear_residual: f64,
}

impl<T, St> Default for StepReport<T, St> {
    fn default() -> Self {
        Self {
            stage_states: Vec::new(),
            stage_momenta: Vec::new(),
            stage_data: Vec::new(),
            stage_dt: Vec::new(),
            newton_iterations: 0,
            nonlinear_solves: 0,
            linear_residual: 0.0,
        }
    }
}

impl<T, St> StepReport<T, St> {
    fn absorb(&mut self, other: StepReport<T, St>) {
        self.stage_states.extend(other.stage_states);
        self.stage_momenta.extend(other.stage_momenta);
        self.stage_data.extend(other.stage_data);
        self.stage_dt.extend(other.stage_dt);
        self.newton_iterations = self.newton_iterations.max(other.newton_iterations);
        self.nonlinear_solves += other.nonlinear_solves;
        self.linear_residual = self.linear_residual.max(other.linear_residual);
    }
}

// ---------------------------------------------------------------- second-order systems

/// `q̇ = p`, `M ṗ = L(q) = -S q - F(q)` with diagonal `M`.
pub trait SecondOrderSystem<T: Real> {
    /// Data produced by one load evaluation (for example constraint traces).
    type Stage: Clone;

    fn dim(&self) -> usize;
    fn mass(&self) -> &[T];
    fn is_linear(&self) -> bool;
    /// `L(q)` and the stage data behind it.
    fn load(&self, q: &[T]) -> Result<(Vec<T>, Self::Stage)>;
    /// Stage data alone.
    fn stage_data(&self, q: &[T]) -> Result<Self::Stage> {
        Ok(self.load(q)?.1)
    }
    /// Linear-solver residual behind a stage evaluation.
    fn stage_residual(_stage: &Self::Stage) -> f64 {
        0.0
    }
    /// Dense symmetric `S`.
    fn stiffness(&self) -> Result<&DenseMatrix<T>>;
    /// `F(q)`.
    fn nonlinear_force(&self, q: &[T]) -> Vec<T>;
    fn nonlinear_jacobian(&self, q: &[T]) -> CsrMatrix<T>;
}

/// Independent oscillators `q̈_i = -ω_i² q_i`.
#[derive(Debug, Clone)]
pub struct HarmonicOscillator<T> {
    omega2: Vec<T>,
    mass: Vec<T>,
    stiffness: DenseMatrix<T>,
}

impl<T: Real> HarmonicOscillator<T> {
    pub fn new(omega2: Vec<T>) -> Self {
        let n = omega2.len();
        let mut s = DenseMatrix::zeros(n, n);
        for (i, w) in omega2.iter().enumerate() {
            s[(i, i)] = *w;
        }
        Self { mass: vec![T::one(); n], omega2, stiffness: s }
    }

    pub fn energy(&self, q: &[T], p: &[T]) -> T {
        let h = T::lit(0.5);
        q.iter().zip(p).zip(&self.omega2).map(|((q, p), w)| h * (*p * *p + *w * *q * *q)).sum()
    }
}

impl<T: Real> SecondOrderSystem<T> for HarmonicOscillator<T> {
    type Stage = ();

    fn dim(&self) -> usize {
        self.omega2.len()
    }

    fn mass(&self) -> &[T] {
        &self.mass
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn load(&self, q: &[T]) -> Result<(Vec<T>, ())> {
        Ok((q.iter().zip(&self.omega2).map(|(q, w)| -*w * *q).collect(), ()))
    }

    fn stiffness(&self) -> Result<&DenseMatrix<T>> {
        Ok(&self.stiffness)
    }

    fn nonlinear_force(&self, q: &[T]) -> Vec<T> {
        vec![T::zero(); q.len()]
    }

    fn nonlinear_jacobian(&self, q: &[T]) -> CsrMatrix<T> {
        CsrMatrix::zeros(q.len(), q.len())
    }
}

/// The multisymplectic LDG-H method in second-order form.
#[derive(Debug)]
pub struct MsSystem<T> {
    cs: ConstraintSystems<T>,
    mass: Vec<T>,
    stiffness: OnceLock<(DenseMatrix<T>, T)>,
}

impl<T: Real> MsSystem<T> {
    pub fn new(cs: ConstraintSystems<T>) -> Self {
        let mass = cs.space().mass_diagonal(crate::fespace::FormDegree::One);
        Self { cs, mass, stiffness: OnceLock::new() }
    }

    pub fn constraints(&self) -> &ConstraintSystems<T> {
        &self.cs
    }

    pub fn space(&self) -> &Arc<FeSpace<T>> {
        self.cs.space()
    }

    /// Largest asymmetry of the assembled `S` before symmetrization, if built.
    pub fn stiffness_asymmetry(&self) -> Option<T> {
        self.stiffness.get().map(|s| s.1)
    }

    fn build_stiffness(&self) -> Result<(DenseMatrix<T>, T)> {
        let mut s = self.cs.stiffness_matrix()?;
        let asym = s.symmetrize();
        Ok((s, asym))
    }
}

impl<T: Real> SecondOrderSystem<T> for MsSystem<T> {
    type Stage = ConstraintSolution<T>;

    fn dim(&self) -> usize {
        self.mass.len()
    }

    fn mass(&self) -> &[T] {
        &self.mass
    }

    fn is_linear(&self) -> bool {
        self.cs.nonlinearity().is_linear()
    }

    fn load(&self, q: &[T]) -> Result<(Vec<T>, ConstraintSolution<T>)> {
        self.cs.load_at(q)
    }

    fn stage_data(&self, q: &[T]) -> Result<ConstraintSolution<T>> {
        self.cs.solve_constraints(q)
    }

    fn stage_residual(stage: &ConstraintSolution<T>) -> f64 {
        stage.residual()
    }

    fn stiffness(&self) -> Result<&DenseMatrix<T>> {
        if self.stiffness.get().is_none() {
            let built = self.build_stiffness()?;
            let _ = self.stiffness.set(built);
        }
        Ok(&self.stiffness.get().expect("stiffness initialized").0)
    }

    fn nonlinear_force(&self, q: &[T]) -> Vec<T> {
        nonlinear_load(self.cs.space(), self.cs.nonlinearity(), q)
    }

    fn nonlinear_jacobian(&self, q: &[T]) -> CsrMatrix<T> {
        nonlinear_jacobian(self.cs.space(), self.cs.nonlinearity(), q)
    }
}

/// `(δ_ik M + Δt² C_ik (S + DF_k)) x` over stacked stages.
struct StageJacobian<'a, T> {
    n: usize,
    mass: &'a [T],
    dt2c: &'a [Vec<T>],
    s: &'a DenseMatrix<T>,
    df: &'a [CsrMatrix<T>],
}

impl<T: Real> LinearOperator<T> for StageJacobian<'_, T> {
    fn nrows(&self) -> usize {
        self.n * self.dt2c.len()
    }

    fn ncols(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        let n = self.n;
        let st = self.dt2c.len();
        let mut kx = vec![T::zero(); n * st];
        for k in 0..st {
            let xk = &x[k * n..(k + 1) * n];
            let out = &mut kx[k * n..(k + 1) * n];
            self.s.mul_vec(xk, out);
            self.df[k].spmv_add(T::one(), xk, out);
        }
        for i in 0..st {
            for a in 0..n {
                y[i * n + a] = self.mass[a] * x[i * n + a];
            }
            for k in 0..st {
                let c = self.dt2c[i][k];
                if c != T::zero() {
                    for a in 0..n {
                        y[i * n + a] = y[i * n + a] + c * kx[k * n + a];
                    }
                }
            }
        }
    }
}

fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Result of one PRK step on a second-order system.
#[derive(Debug, Clone)]
pub struct PrkStep<T, St> {
    pub q: Vec<T>,
    pub p: Vec<T>,
    pub report: StepReport<T, St>,
}

/// Partitioned RK stepping with a cache of factored implicit-stage matrices.
#[derive(Debug)]
pub struct PrkEngine<T> {
    pub newton: NewtonConfig<T>,
    /// Retain stage positions, momenta and stage data in reports.
    pub keep_stages: bool,
    lu_cache: HashMap<Vec<u64>, Arc<DenseLu<T>>>,
}

impl<T: Real> Default for PrkEngine<T> {
    fn default() -> Self {
        Self::new(NewtonConfig::default(), false)
    }
}

impl<T: Real> PrkEngine<T> {
    pub fn new(newton: NewtonConfig<T>, keep_stages: bool) -> Self {
        Self { newton, keep_stages, lu_cache: HashMap::new() }
    }

    pub fn cached_factorizations(&self) -> usize {
        self.lu_cache.len()
    }

    fn linear_lu<S: SecondOrderSystem<T>>(&mut self, sys: &S, dt2c: &[Vec<T>]) -> Result<Arc<DenseLu<T>>> {
        let key: Vec<u64> = dt2c.iter().flatten().map(|x| x.as_f64().to_bits()).collect();
        if let Some(lu) = self.lu_cache.get(&key) {
            return Ok(lu.clone());
        }
        let s = sys.stiffness()?;
        let n = sys.dim();
        let st = dt2c.len();
        let mut j = DenseMatrix::zeros(n * st, n * st);
        for i in 0..st {
            for k in 0..st {
                let c = dt2c[i][k];
                for a in 0..n {
                    let row = i * n + a;
                    if c != T::zero() {
                        for b in 0..n {
                            j[(row, k * n + b)] = c * s[(a, b)];
                        }
                    }
                    if i == k {
                        j[(row, k * n + a)] = j[(row, k * n + a)] + sys.mass()[a];
                    }
                }
            }
        }
        let lu = Arc::new(DenseLu::factor(&j)?);
        self.lu_cache.insert(key, lu.clone());
        Ok(lu)
    }

    /// One step of size `dt` from `(q0, p0)`.
    pub fn step<S: SecondOrderSystem<T>>(&mut self, sys: &S, tab: &ButcherTableau<T>, q0: &[T], p0: &[T], dt: T) -> Result<PrkStep<T, S::Stage>> {
        let n = sys.dim();
        if q0.len() != n || p0.len() != n {
            return Err(Error::DimensionMismatch(format!("state of length {}/{} for system of size {n}", q0.len(), p0.len())));
        }
        let (a, ab) = (&tab.main, tab.bar());
        let st = tab.stages();
        let m = sys.mass();
        // C = a ā and the position weights bᵀā
        let mut c = vec![vec![T::zero(); st]; st];
        for i in 0..st {
            for k in 0..st {
                c[i][k] = (0..st).map(|j| a.a[i][j] * ab.a[j][k]).fold(T::zero(), |x, y| x + y);
            }
        }
        let ctil: Vec<T> = a.a.iter().map(|r| r.iter().fold(T::zero(), |x, y| x + *y)).collect();
        let base: Vec<Vec<T>> = (0..st).map(|i| q0.iter().zip(p0).map(|(q, p)| *q + dt * ctil[i] * *p).collect()).collect();
        let explicit = c.iter().enumerate().all(|(i, r)| r[i..].iter().all(|x| *x == T::zero()));

        let mut report = StepReport::default();
        let mut qs: Vec<Vec<T>> = Vec::with_capacity(st);
        let mut gs: Vec<Vec<T>> = Vec::with_capacity(st);
        let mut data: Vec<S::Stage> = Vec::new();
        let dt2 = dt * dt;

        if explicit {
            for i in 0..st {
                let mut qi = base[i].clone();
                for k in 0..i {
                    if c[i][k] != T::zero() {
                        for (x, g) in qi.iter_mut().zip(&gs[k]) {
                            *x = *x + dt2 * c[i][k] * *g;
                        }
                    }
                }
                let (load, stage) = sys.load(&qi)?;
                report.linear_residual = report.linear_residual.max(S::stage_residual(&stage));
                gs.push(load.iter().zip(m).map(|(l, mm)| *l / *mm).collect());
                if self.keep_stages {
                    data.push(stage);
                }
                qs.push(qi);
            }
        } else {
            let dt2c: Vec<Vec<T>> = c.iter().map(|r| r.iter().map(|x| dt2 * *x).collect()).collect();
            let lu = self.linear_lu(sys, &dt2c)?;
            let s = sys.stiffness()?;
            let mut rhs: Vec<T> = Vec::with_capacity(n * st);
            for b in &base {
                rhs.extend(b.iter().zip(m).map(|(x, mm)| *x * *mm));
            }
            let mut x = lu.solve(&rhs);
            if !sys.is_linear() {
                report.nonlinear_solves += 1;
                let scale = inf_norm(&rhs).max(T::min_positive_value());
                let mut it = 0;
                loop {
                    // R_i = M Q_i + Δt² Σ_k C_ik (S Q_k + F(Q_k)) - M base_i
                    let mut sq = vec![T::zero(); n * st];
                    for k in 0..st {
                        let xk = &x[k * n..(k + 1) * n];
                        let out = &mut sq[k * n..(k + 1) * n];
                        s.mul_vec(xk, out);
                        let f = sys.nonlinear_force(xk);
                        for (o, fi) in out.iter_mut().zip(&f) {
                            *o = *o + *fi;
                        }
                    }
                    let mut r = vec![T::zero(); n * st];
                    for i in 0..st {
                        for a_ in 0..n {
                            let mut v = m[a_] * x[i * n + a_] - rhs[i * n + a_];
                            for k in 0..st {
                                v = v + dt2c[i][k] * sq[k * n + a_];
                            }
                            r[i * n + a_] = v;
                        }
                    }
                    let res = inf_norm(&r) / scale;
                    if res <= self.newton.tol {
                        break;
                    }
                    if it >= self.newton.max_iter {
                        return Err(Error::NewtonDiverged { iterations: it, residual: res.as_f64() });
                    }
                    let df: Vec<CsrMatrix<T>> = (0..st).map(|k| sys.nonlinear_jacobian(&x[k * n..(k + 1) * n])).collect();
                    let jac = StageJacobian { n, mass: m, dt2c: &dt2c, s, df: &df };
                    r.iter_mut().for_each(|v| *v = -*v);
                    let mut d = vec![T::zero(); n * st];
                    let stats = solve_general(&jac, &r, &mut d, lu.as_ref(), &self.newton.linear)?;
                    report.linear_residual = report.linear_residual.max(stats.residual);
                    for (xi, di) in x.iter_mut().zip(&d) {
                        *xi = *xi + *di;
                    }
                    it += 1;
                }
                report.newton_iterations = it;
            }
            for k in 0..st {
                let qk = x[k * n..(k + 1) * n].to_vec();
                let mut l = vec![T::zero(); n];
                s.mul_vec(&qk, &mut l);
                let f = sys.nonlinear_force(&qk);
                gs.push(l.iter().zip(&f).zip(m).map(|((l, f), mm)| -(*l + *f) / *mm).collect());
                if self.keep_stages {
                    let stage = sys.stage_data(&qk)?;
                    report.linear_residual = report.linear_residual.max(S::stage_residual(&stage));
                    data.push(stage);
                }
                qs.push(qk);
            }
        }

        let bsum = a.b.iter().fold(T::zero(), |x, y| x + *y);
        let mut q1: Vec<T> = q0.iter().zip(p0).map(|(q, p)| *q + dt * bsum * *p).collect();
        let mut p1 = p0.to_vec();
        for k in 0..st {
            let wq = dt2 * (0..st).map(|i| a.b[i] * ab.a[i][k]).fold(T::zero(), |x, y| x + y);
            let wp = dt * ab.b[k];
            for ((qq, pp), g) in q1.iter_mut().zip(p1.iter_mut()).zip(&gs[k]) {
                *qq = *qq + wq * *g;
                *pp = *pp + wp * *g;
            }
        }
        if self.keep_stages {
            // P_i = p0 + Δt Σ_k ā_ik G_k
            report.stage_momenta = (0..st)
                .map(|i| {
                    let mut pi = p0.to_vec();
                    for k in 0..st {
                        let w = dt * ab.a[i][k];
                        for (x, g) in pi.iter_mut().zip(&gs[k]) {
                            *x = *x + w * *g;
                        }
                    }
                    pi
                })
                .collect();
            report.stage_states = qs;
            report.stage_data = data;
            report.stage_dt = ab.b.iter().map(|b| dt * *b).collect();
        }
        Ok(PrkStep { q: q1, p: p1, report })
    }

    /// Composition of steps of `tab` with substep weights `w`.
    pub fn step_composition<S: SecondOrderSystem<T>>(
        &mut self,
        sys: &S,
        tab: &ButcherTableau<T>,
        weights: &[T],
        q0: &[T],
        p0: &[T],
        dt: T,
    ) -> Result<PrkStep<T, S::Stage>> {
        let (mut q, mut p) = (q0.to_vec(), p0.to_vec());
        let mut report = StepReport::default();
        for w in weights {
            let s = self.step(sys, tab, &q, &p, *w * dt)?;
            q = s.q;
            p = s.p;
            report.absorb(s.report);
        }
        Ok(PrkStep { q, p, report })
    }
}

// ---------------------------------------------------------------- multisymplectic stepping

/// A completed step of the multisymplectic method: `σ`, `ρ` and the traces
/// are the constraint solution at the new `u`.
#[derive(Debug, Clone)]
pub struct MsStep<T> {
    pub state: FieldState<T>,
    pub traces: TraceState<T>,
    pub solution: ConstraintSolution<T>,
    pub report: StepReport<T, ConstraintSolution<T>>,
}

/// Time stepper for the multisymplectic method.
#[derive(Debug)]
pub struct MsIntegrator<T> {
    system: MsSystem<T>,
    engine: PrkEngine<T>,
    /// Merge Step 3 of one Verlet step with Step 1 of the next.
    pub leapfrog: bool,
    verlet_cache: Option<(Vec<T>, Vec<T>, ConstraintSolution<T>)>,
}

impl<T: Real> MsIntegrator<T> {
    pub fn new(cs: ConstraintSystems<T>) -> Self {
        Self { system: MsSystem::new(cs), engine: PrkEngine::default(), leapfrog: true, verlet_cache: None }
    }

    pub fn with_newton(mut self, newton: NewtonConfig<T>) -> Self {
        self.engine.newton = newton;
        self
    }

    pub fn keep_stages(mut self, keep: bool) -> Self {
        self.engine.keep_stages = keep;
        self
    }

    pub fn system(&self) -> &MsSystem<T> {
        &self.system
    }

    pub fn engine(&self) -> &PrkEngine<T> {
        &self.engine
    }

    /// `σ`, `ρ` and traces for a state with given `u`, `p`.
    pub fn complete(&self, mut state: FieldState<T>) -> Result<(FieldState<T>, TraceState<T>, ConstraintSolution<T>)> {
        let (tr, sol) = self.system.cs.complete_state(&mut state)?;
        Ok((state, tr, sol))
    }

    fn finish(&self, state: &FieldState<T>, q: Vec<T>, p: Vec<T>, dt: T, report: StepReport<T, ConstraintSolution<T>>, sol: Option<ConstraintSolution<T>>) -> Result<MsStep<T>> {
        let sol = match sol {
            Some(s) => s,
            None => self.system.cs.solve_constraints(&q)?,
        };
        let next = FieldState { sigma: sol.sigma.clone(), u: q, rho: sol.rho.clone(), p, t: state.t + dt };
        Ok(MsStep { state: next, traces: sol.traces(), solution: sol, report })
    }

    /// Generic (partitioned) Runge–Kutta step.
    pub fn step_rk(&mut self, tab: &ButcherTableau<T>, state: &FieldState<T>, dt: T) -> Result<MsStep<T>> {
        let s = self.engine.step(&self.system, tab, &state.u, &state.p, dt)?;
        self.finish(state, s.q, s.p, dt, s.report, None)
    }

    pub fn step_midpoint(&mut self, state: &FieldState<T>, dt: T) -> Result<MsStep<T>> {
        self.step_rk(&tableaux::midpoint().to_real(), state, dt)
    }

    pub fn step_yoshida6(&mut self, state: &FieldState<T>, dt: T) -> Result<MsStep<T>> {
        let w: Vec<T> = yoshida6_weights().iter().map(|x| T::lit(*x)).collect();
        let s = self.engine.step_composition(&self.system, &tableaux::midpoint().to_real(), &w, &state.u, &state.p, dt)?;
        self.finish(state, s.q, s.p, dt, s.report, None)
    }

    fn load_cached(&mut self, u: &[T]) -> Result<(Vec<T>, ConstraintSolution<T>)> {
        if self.leapfrog {
            if let Some((cu, l, sol)) = &self.verlet_cache {
                if cu.as_slice() == u {
                    return Ok((l.clone(), sol.clone()));
                }
            }
        }
        self.system.load(u)
    }

    /// Störmer/Verlet: half kick, drift, half kick. Only linear solves.
    pub fn step_verlet(&mut self, state: &FieldState<T>, dt: T) -> Result<MsStep<T>> {
        let m = self.system.mass.clone();
        let half = T::lit(0.5) * dt;
        let (l0, sol0) = self.load_cached(&state.u)?;
        let ph: Vec<T> = state.p.iter().zip(&l0).zip(&m).map(|((p, l), mm)| *p + half * *l / *mm).collect();
        let u1: Vec<T> = state.u.iter().zip(&ph).map(|(u, p)| *u + dt * *p).collect();
        let (l1, sol1) = self.system.load(&u1)?;
        let p1: Vec<T> = ph.iter().zip(&l1).zip(&m).map(|((p, l), mm)| *p + half * *l / *mm).collect();
        let mut report = StepReport { linear_residual: sol0.residual().max(sol1.residual()), ..StepReport::default() };
        if self.engine.keep_stages {
            report.stage_states = vec![state.u.clone(), u1.clone()];
            report.stage_momenta = vec![ph.clone(), ph];
            report.stage_data = vec![sol0, sol1.clone()];
            report.stage_dt = vec![half, half];
        }
        self.verlet_cache = if self.leapfrog { Some((u1.clone(), l1, sol1.clone())) } else { None };
        self.finish(state, u1, p1, dt, report, Some(sol1))
    }
}

// ---------------------------------------------------------------- mixed stepping

/// A step of the mixed method.
#[derive(Debug, Clone)]
pub struct MixedStep<T> {
    pub state: FieldState<T>,
    pub report: StepReport<T, TraceState<T>>,
}

/// Stacked stage matrix `δ_ij M - Δt a_ij J_j`.
fn stage_matrix<T: Real>(mass: &[T], a: &[Vec<T>], dt: T, jac: &[CsrMatrix<T>]) -> CsrMatrix<T> {
    let n = mass.len();
    let s = a.len();
    let nnz: usize = jac.iter().map(|j| j.nnz()).sum::<usize>() * s + n * s;
    let mut b = CooBuilder::with_capacity(n * s, n * s, nnz);
    for i in 0..s {
        for (r, mm) in mass.iter().enumerate() {
            b.push(i * n + r, i * n + r, *mm);
        }
        for j in 0..s {
            let c = -dt * a[i][j];
            if c == T::zero() {
                continue;
            }
            for r in 0..n {
                let (cols, vals) = jac[j].row(r);
                for (col, v) in cols.iter().zip(vals) {
                    b.push(i * n + r, j * n + col, c * *v);
                }
            }
        }
    }
    b.build()
}

/// Time stepper for the mixed method.
#[derive(Debug)]
pub struct MixedIntegrator<T> {
    op: MixedOperator<T>,
    pub newton: NewtonConfig<T>,
    pub keep_stages: bool,
    cache: HashMap<(String, u64), Arc<(CsrMatrix<T>, BlockJacobi<T>)>>,
}

impl<T: Real> MixedIntegrator<T> {
    pub fn new(op: MixedOperator<T>) -> Self {
        Self { op, newton: NewtonConfig::default(), keep_stages: false, cache: HashMap::new() }
    }

    pub fn operator(&self) -> &MixedOperator<T> {
        &self.op
    }

    fn linear_stage_matrix(&mut self, tab: &ButcherTableau<T>, dt: T) -> Result<Arc<(CsrMatrix<T>, BlockJacobi<T>)>> {
        let key = (tab.name.clone(), dt.as_f64().to_bits());
        if let Some(m) = self.cache.get(&key) {
            return Ok(m.clone());
        }
        let jac = vec![self.op.matrix().clone(); tab.stages()];
        let mat = stage_matrix(self.op.mass(), &tab.main.a, dt, &jac);
        let pc = BlockJacobi::uniform(&mat, self.op.space().d0())?;
        let entry = Arc::new((mat, pc));
        self.cache.insert(key, entry.clone());
        Ok(entry)
    }

    /// Generic Runge–Kutta step; `tab` must not be partitioned.
    pub fn step_rk(&mut self, tab: &ButcherTableau<T>, state: &FieldState<T>, dt: T) -> Result<MixedStep<T>> {
        if tab.is_partitioned() {
            return Err(Error::Unsupported("the mixed method is integrated with non-partitioned tableaux".into()));
        }
        let layout = *self.op.space().layout();
        state.check(&layout)?;
        let y0 = state.stacked();
        let n = y0.len();
        let st = tab.stages();
        let a = &tab.main.a;
        let mass = self.op.mass().to_vec();
        let linear = self.op.nonlinearity().is_linear();
        let stage_y = |k: &[T], i: usize| -> Vec<T> {
            let mut y = y0.clone();
            for j in 0..st {
                let c = dt * a[i][j];
                if c != T::zero() {
                    for (yy, kk) in y.iter_mut().zip(&k[j * n..(j + 1) * n]) {
                        *yy = *yy + c * *kk;
                    }
                }
            }
            y
        };
        let mut report = StepReport::default();
        let mut k = vec![T::zero(); n * st];
        if tab.main.strictly_lower() {
            for i in 0..st {
                let y = stage_y(&k, i);
                let r = self.op.rhs(&y);
                for (kk, (rr, mm)) in k[i * n..(i + 1) * n].iter_mut().zip(r.iter().zip(&mass)) {
                    *kk = *rr / *mm;
                }
            }
        } else {
            let mut it = 0;
            let mut scale = T::zero();
            loop {
                let ys: Vec<Vec<T>> = (0..st).map(|i| stage_y(&k, i)).collect();
                let mut r = vec![T::zero(); n * st];
                for i in 0..st {
                    let f = self.op.rhs(&ys[i]);
                    for c in 0..n {
                        r[i * n + c] = mass[c] * k[i * n + c] - f[c];
                    }
                }
                if it == 0 {
                    scale = inf_norm(&r).max(T::min_positive_value());
                }
                let res = inf_norm(&r) / scale;
                if res <= self.newton.tol {
                    break;
                }
                if it >= self.newton.max_iter {
                    return Err(Error::NewtonDiverged { iterations: it, residual: res.as_f64() });
                }
                r.iter_mut().for_each(|v| *v = -*v);
                let mut d = vec![T::zero(); n * st];
                let stats = if linear {
                    let m = self.linear_stage_matrix(tab, dt)?;
                    solve_general(&m.0, &r, &mut d, &m.1, &self.newton.linear)?
                } else {
                    let jac: Vec<CsrMatrix<T>> = ys.iter().map(|y| self.op.rhs_jacobian(y)).collect();
                    let m = stage_matrix(&mass, a, dt, &jac);
                    let pc = BlockJacobi::uniform(&m, self.op.space().d0())?;
                    solve_general(&m, &r, &mut d, &pc, &self.newton.linear)?
                };
                report.linear_residual = report.linear_residual.max(stats.residual);
                for (ki, di) in k.iter_mut().zip(&d) {
                    *ki = *ki + *di;
                }
                it += 1;
            }
            report.newton_iterations = it;
            if !linear {
                report.nonlinear_solves += 1;
            }
        }
        let mut y1 = y0.clone();
        for i in 0..st {
            let w = dt * tab.main.b[i];
            for (y, kk) in y1.iter_mut().zip(&k[i * n..(i + 1) * n]) {
                *y = *y + w * *kk;
            }
        }
        if self.keep_stages {
            for i in 0..st {
                let y = stage_y(&k, i);
                let fs = FieldState::from_stacked(&layout, &y, state.t + dt * tab.main.c[i]);
                report.stage_data.push(self.op.eliminate_traces(&fs)?);
                report.stage_states.push(y);
            }
            report.stage_dt = tab.main.b.iter().map(|b| dt * *b).collect();
        }
        Ok(MixedStep { state: FieldState::from_stacked(&layout, &y1, state.t + dt), report })
    }

    pub fn step_midpoint(&mut self, state: &FieldState<T>, dt: T) -> Result<MixedStep<T>> {
        self.step_rk(&tableaux::midpoint().to_real(), state, dt)
    }

    pub fn step_yoshida6(&mut self, state: &FieldState<T>, dt: T) -> Result<MixedStep<T>> {
        let tab = tableaux::midpoint().to_real();
        let mut cur = state.clone();
        let mut report = StepReport::default();
        for w in yoshida6_weights() {
            let s = self.step_rk(&tab, &cur, T::lit(w) * dt)?;
            cur = s.state;
            report.absorb(s.report);
        }
        cur.t = state.t + dt;
        Ok(MixedStep { state: cur, report })
    }
}
