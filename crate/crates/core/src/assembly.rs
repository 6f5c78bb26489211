//! Sparse operators of both LDG-H variants.
//!
//! Multisymplectic method: given `u`, the pair `(σ, σ̂)` solves the symmetric
//! negative-definite system
//!
//! ```text
//!     -(σ, τ) + ⟨α⁰(σ̂ - σ), τ̂ - τ⟩ = (rot u, τ) + ⟨u×n, τ̂⟩
//! ```
//!
//! and `(ρ, λ)`, with `λ = û·n⁺`, solves the positive-definite system
//!
//! ```text
//!     (ρ, η) + ⟨α¹ λ, μ⟩ + ⟨λ, η⟩ - ⟨ρ, μ⟩ = (u, grad η) + ⟨α¹ u·n, μ⟩,
//! ```
//!
//! where facet pairings carry the side orientation. The momentum equation
//! then reads `M ṗ = L(u)` with
//!
//! ```text
//!     L[v] = (σ, rot v) - (grad ρ, v) + ⟨σ̂, v×n⟩ + ⟨α¹(û - u)·n, v·n⟩ - (f(u), v).
//! ```
//!
//! Mixed method: the traces are eliminated facet by facet and the whole
//! semidiscrete system becomes `M ẏ = A y - F(y)` on `y = (σ, u, ρ, p)`.
//!
//! On one-sided (boundary) facets the traces are pinned to zero.

use std::ops::Range;
use std::sync::Arc;

use crate::calculus::{cross, dotn, side_vector, FieldState, Nonlinearity, Penalties, TraceKind, TraceState};
use crate::error::{Error, Result};
use crate::fespace::{FeSpace, SpaceLayout};
use crate::linalg::{solve_general, solve_spd, BlockJacobi, CooBuilder, CsrMatrix, DenseLu, DenseMatrix, LinearOperator, SolveStats, SolverOptions};
use crate::scalar::{axpy, dot, Real};

/// Element blocks of `d0` dofs followed by facet blocks of `r+1` dofs.
pub fn volume_trace_blocks(layout: &SpaceLayout) -> Vec<Range<usize>> {
    let mut b: Vec<_> = (0..layout.n_elements).map(|e| layout.scalar_block(e)).collect();
    let ns = layout.scalar_len();
    b.extend((0..layout.n_facets).map(|f| {
        let r = layout.trace_block(f);
        ns + r.start..ns + r.end
    }));
    b
}

fn check_penalties<T: Real>(space: &FeSpace<T>, pen: &Penalties<T>) -> Result<()> {
    if pen.len() != space.mesh().num_facets() {
        return Err(Error::DimensionMismatch(format!("{} penalties for {} facets", pen.len(), space.mesh().num_facets())));
    }
    Ok(())
}

/// Solution of both constraint systems for one `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSolution<T> {
    pub sigma: Vec<T>,
    pub sigma_hat: Vec<T>,
    pub rho: Vec<T>,
    /// `û·n⁺` per facet dof.
    pub u_hat: Vec<T>,
    pub stats: [SolveStats; 2],
}

impl<T: Real> ConstraintSolution<T> {
    pub fn traces(&self) -> TraceState<T> {
        TraceState { sigma_hat: self.sigma_hat.clone(), normal_hat: self.u_hat.clone(), kind: TraceKind::Multisymplectic }
    }

    /// Largest relative residual of the two solves.
    pub fn residual(&self) -> f64 {
        self.stats[0].residual.max(self.stats[1].residual)
    }
}

/// The two constraint systems and the momentum operator of the
/// multisymplectic method.
#[derive(Debug, Clone)]
pub struct ConstraintSystems<T> {
    space: Arc<FeSpace<T>>,
    pen: Penalties<T>,
    nonlinearity: Nonlinearity,
    a_sigma: CsrMatrix<T>,
    neg_a_sigma: CsrMatrix<T>,
    b_sigma: CsrMatrix<T>,
    a_rho: CsrMatrix<T>,
    b_rho: CsrMatrix<T>,
    pc_sigma: BlockJacobi<T>,
    pc_rho: BlockJacobi<T>,
    mom_sigma: CsrMatrix<T>,
    mom_rho: CsrMatrix<T>,
    mom_u: CsrMatrix<T>,
    opts: SolverOptions<T>,
}

impl<T: Real> ConstraintSystems<T> {
    pub fn build(space: Arc<FeSpace<T>>, pen: Penalties<T>, nonlinearity: Nonlinearity) -> Result<Self> {
        check_penalties(&space, &pen)?;
        let l = *space.layout();
        let (d0, nt) = (l.d0, l.nt());
        let (ns, nv, ntr) = (l.scalar_len(), l.vector_len(), l.trace_len());
        let n = ns + ntr;
        let mut a_s = CooBuilder::new(n, n);
        let mut b_s = CooBuilder::new(n, nv);
        let mut a_r = CooBuilder::new(n, n);
        let mut b_r = CooBuilder::new(n, nv);
        let mut m_s = CooBuilder::new(nv, n);
        let mut m_r = CooBuilder::new(nv, n);
        let mut m_u = CooBuilder::new(nv, nv);

        for e in 0..l.n_elements {
            let det = space.mass_scale(e);
            let (dx, dy) = (space.deriv_matrix(e, 0), space.deriv_matrix(e, 1));
            let s0 = e * d0;
            let (vx, vy) = (l.component_block(e, 0).start, l.component_block(e, 1).start);
            for i in 0..d0 {
                a_s.push(s0 + i, s0 + i, -det);
                a_r.push(s0 + i, s0 + i, det);
                for j in 0..d0 {
                    // (rot u, τ_i) = Dx[i][j] u_y - Dy[i][j] u_x
                    b_s.push(s0 + i, vy + j, dx[i * d0 + j]);
                    b_s.push(s0 + i, vx + j, -dy[i * d0 + j]);
                    // (u, grad η_i) = Dx[j][i] u_x + Dy[j][i] u_y
                    b_r.push(s0 + i, vx + j, dx[j * d0 + i]);
                    b_r.push(s0 + i, vy + j, dy[j * d0 + i]);
                    // (σ, rot v): v = φ_i e_x gives -Dy[j][i], v = φ_i e_y gives Dx[j][i]
                    m_s.push(vx + i, s0 + j, -dy[j * d0 + i]);
                    m_s.push(vy + i, s0 + j, dx[j * d0 + i]);
                    // -(grad ρ, v)
                    m_r.push(vx + i, s0 + j, -dx[i * d0 + j]);
                    m_r.push(vy + i, s0 + j, -dy[i * d0 + j]);
                }
            }
        }

        for (f, fc) in space.facet_caches().iter().enumerate() {
            let boundary = fc.minus.is_none();
            let (a0, a1) = (pen.alpha0(f), pen.alpha1(f));
            let t0 = ns + f * nt;
            for (kind, sc) in fc.sides() {
                let sg = kind.sign::<T>();
                let nrm = sc.normal;
                let s0 = sc.element * d0;
                let (vx, vy) = (l.component_block(sc.element, 0).start, l.component_block(sc.element, 1).start);
                for q in 0..fc.len() {
                    let w = fc.weights[q];
                    let phi = &sc.phi[q * d0..(q + 1) * d0];
                    let ell = &fc.trace[q * nt..(q + 1) * nt];
                    for i in 0..d0 {
                        for j in i..d0 {
                            let c = a0 * w * phi[i] * phi[j];
                            a_s.push(s0 + i, s0 + j, c);
                            if j != i {
                                a_s.push(s0 + j, s0 + i, c);
                            }
                        }
                        for j in 0..d0 {
                            let c = a1 * w * phi[i] * phi[j];
                            m_u.push(vx + i, vx + j, -c * nrm[0] * nrm[0]);
                            m_u.push(vx + i, vy + j, -c * nrm[0] * nrm[1]);
                            m_u.push(vy + i, vx + j, -c * nrm[1] * nrm[0]);
                            m_u.push(vy + i, vy + j, -c * nrm[1] * nrm[1]);
                        }
                    }
                    if boundary {
                        continue;
                    }
                    for a in 0..nt {
                        for b in 0..nt {
                            let ll = w * ell[a.min(b)] * ell[a.max(b)];
                            a_s.push(t0 + a, t0 + b, a0 * ll);
                            a_r.push(t0 + a, t0 + b, a1 * ll);
                        }
                        for j in 0..d0 {
                            let lp = w * ell[a] * phi[j];
                            let c = -a0 * lp;
                            a_s.push(t0 + a, s0 + j, c);
                            a_s.push(s0 + j, t0 + a, c);
                            a_r.push(s0 + j, t0 + a, sg * lp);
                            a_r.push(t0 + a, s0 + j, -sg * lp);
                            // ⟨u×n, τ̂⟩
                            b_s.push(t0 + a, vx + j, lp * nrm[1]);
                            b_s.push(t0 + a, vy + j, -lp * nrm[0]);
                            // ⟨α¹ u·n, sμ⟩
                            b_r.push(t0 + a, vx + j, a1 * sg * lp * nrm[0]);
                            b_r.push(t0 + a, vy + j, a1 * sg * lp * nrm[1]);
                            // ⟨σ̂, v×n⟩
                            m_s.push(vx + j, t0 + a, lp * nrm[1]);
                            m_s.push(vy + j, t0 + a, -lp * nrm[0]);
                            // ⟨α¹ sλ, v·n⟩
                            m_r.push(vx + j, t0 + a, a1 * sg * lp * nrm[0]);
                            m_r.push(vy + j, t0 + a, a1 * sg * lp * nrm[1]);
                        }
                    }
                }
            }
            if boundary {
                for a in 0..nt {
                    a_s.push(t0 + a, t0 + a, -T::one());
                    a_r.push(t0 + a, t0 + a, T::one());
                }
            }
        }

        let a_sigma = a_s.build();
        let neg_a_sigma = a_sigma.scaled(-T::one());
        let a_rho = a_r.build();
        let blocks = volume_trace_blocks(&l);
        let pc_sigma = BlockJacobi::new(&neg_a_sigma, &blocks)?;
        let pc_rho = BlockJacobi::new(&a_rho, &blocks)?;
        Ok(Self {
            space,
            pen,
            nonlinearity,
            a_sigma,
            neg_a_sigma,
            b_sigma: b_s.build(),
            a_rho,
            b_rho: b_r.build(),
            pc_sigma,
            pc_rho,
            mom_sigma: m_s.build(),
            mom_rho: m_r.build(),
            mom_u: m_u.build(),
            opts: SolverOptions::default(),
        })
    }

    pub fn with_solver_options(mut self, opts: SolverOptions<T>) -> Self {
        self.opts = opts;
        self
    }

    pub fn space(&self) -> &Arc<FeSpace<T>> {
        &self.space
    }

    pub fn penalties(&self) -> &Penalties<T> {
        &self.pen
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn a_sigma(&self) -> &CsrMatrix<T> {
        &self.a_sigma
    }

    pub fn b_sigma(&self) -> &CsrMatrix<T> {
        &self.b_sigma
    }

    pub fn a_rho(&self) -> &CsrMatrix<T> {
        &self.a_rho
    }

    pub fn b_rho(&self) -> &CsrMatrix<T> {
        &self.b_rho
    }

    /// Solves both constraint systems. The initial guess is always zero, so
    /// the result is a deterministic function of `u`.
    pub fn solve_constraints(&self, u: &[T]) -> Result<ConstraintSolution<T>> {
        let l = self.space.layout();
        if u.len() != l.vector_len() {
            return Err(Error::DimensionMismatch(format!("u has length {}, expected {}", u.len(), l.vector_len())));
        }
        let ns = l.scalar_len();
        let n = ns + l.trace_len();
        let mut rhs = self.b_sigma.mul_vec(u);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let mut xs = vec![T::zero(); n];
        let st_s = solve_spd(&self.neg_a_sigma, &rhs, &mut xs, &self.pc_sigma, &self.opts)?;
        let rhs = self.b_rho.mul_vec(u);
        let mut xr = vec![T::zero(); n];
        let st_r = solve_general(&self.a_rho, &rhs, &mut xr, &self.pc_rho, &self.opts)?;
        let u_hat = xr.split_off(ns);
        let sigma_hat = xs.split_off(ns);
        Ok(ConstraintSolution { sigma: xs, sigma_hat, rho: xr, u_hat, stats: [st_s, st_r] })
    }

    /// Fills `σ`, `ρ` of `state` from its `u` and returns the traces.
    pub fn complete_state(&self, state: &mut FieldState<T>) -> Result<(TraceState<T>, ConstraintSolution<T>)> {
        let sol = self.solve_constraints(&state.u)?;
        state.sigma.clone_from(&sol.sigma);
        state.rho.clone_from(&sol.rho);
        Ok((sol.traces(), sol))
    }

    /// Residuals `A x - B u` of both systems, as Euclidean norms.
    pub fn constraint_residual(&self, state: &FieldState<T>, traces: &TraceState<T>) -> Result<T> {
        traces.expect(TraceKind::Multisymplectic)?;
        let xs: Vec<T> = state.sigma.iter().chain(&traces.sigma_hat).copied().collect();
        let xr: Vec<T> = state.rho.iter().chain(&traces.normal_hat).copied().collect();
        let r1 = residual_norm(&self.a_sigma, &xs, &self.b_sigma, &state.u);
        let r2 = residual_norm(&self.a_rho, &xr, &self.b_rho, &state.u);
        Ok(r1.max(r2))
    }

    /// Linear part of the momentum load: everything except `-(f(u), v)`.
    pub fn linear_load(&self, u: &[T], sol: &ConstraintSolution<T>) -> Vec<T> {
        let xs: Vec<T> = sol.sigma.iter().chain(&sol.sigma_hat).copied().collect();
        let xr: Vec<T> = sol.rho.iter().chain(&sol.u_hat).copied().collect();
        let mut out = self.mom_sigma.mul_vec(&xs);
        self.mom_rho.spmv_add(T::one(), &xr, &mut out);
        self.mom_u.spmv_add(T::one(), u, &mut out);
        out
    }

    /// The load `L` with `M ṗ = L` for the given state and traces.
    pub fn momentum_rhs(&self, state: &FieldState<T>, traces: &TraceState<T>) -> Result<Vec<T>> {
        traces.expect(TraceKind::Multisymplectic)?;
        state.check(self.space.layout())?;
        let xs: Vec<T> = state.sigma.iter().chain(&traces.sigma_hat).copied().collect();
        let xr: Vec<T> = state.rho.iter().chain(&traces.normal_hat).copied().collect();
        let mut out = self.mom_sigma.mul_vec(&xs);
        self.mom_rho.spmv_add(T::one(), &xr, &mut out);
        self.mom_u.spmv_add(T::one(), &state.u, &mut out);
        if !self.nonlinearity.is_linear() {
            let f = nonlinear_load(&self.space, self.nonlinearity, &state.u);
            for (o, fi) in out.iter_mut().zip(&f) {
                *o = *o - *fi;
            }
        }
        Ok(out)
    }

    /// Constraint solve followed by the load; returns both.
    pub fn load_at(&self, u: &[T]) -> Result<(Vec<T>, ConstraintSolution<T>)> {
        let sol = self.solve_constraints(u)?;
        let mut out = self.linear_load(u, &sol);
        if !self.nonlinearity.is_linear() {
            let f = nonlinear_load(&self.space, self.nonlinearity, u);
            for (o, fi) in out.iter_mut().zip(&f) {
                *o = *o - *fi;
            }
        }
        Ok((out, sol))
    }

    /// The reduced stiffness `S` as a dense matrix, from direct
    /// factorizations of both constraint systems. Not symmetrized.
    pub fn stiffness_matrix(&self) -> Result<DenseMatrix<T>> {
        let nu = self.space.layout().vector_len();
        let solve = |a: &CsrMatrix<T>, b: &CsrMatrix<T>| -> Result<DenseMatrix<T>> {
            let lu = DenseLu::factor(&DenseMatrix { nrows: a.nrows(), ncols: a.ncols(), data: a.to_dense() })?;
            let mut x = DenseMatrix { nrows: b.nrows(), ncols: b.ncols(), data: b.to_dense() };
            lu.solve_many_in_place(&mut x);
            Ok(x)
        };
        let xs = solve(&self.a_sigma, &self.b_sigma)?;
        let xr = solve(&self.a_rho, &self.b_rho)?;
        let mut s = DenseMatrix::zeros(nu, nu);
        for r in 0..nu {
            let out = &mut s.data[r * nu..(r + 1) * nu];
            for (m, x) in [(&self.mom_sigma, &xs), (&self.mom_rho, &xr)] {
                let (cols, vals) = m.row(r);
                for (c, v) in cols.iter().zip(vals) {
                    axpy(-*v, x.row(*c), out);
                }
            }
            let (cols, vals) = self.mom_u.row(r);
            for (c, v) in cols.iter().zip(vals) {
                out[*c] = out[*c] - *v;
            }
        }
        Ok(s)
    }

    /// `S u`, the reduced stiffness: `M ṗ = -S u - F(u)`.
    pub fn stiffness_apply(&self, u: &[T]) -> Result<Vec<T>> {
        let sol = self.solve_constraints(u)?;
        let mut v = self.linear_load(u, &sol);
        v.iter_mut().for_each(|x| *x = -*x);
        Ok(v)
    }
}

fn residual_norm<T: Real>(a: &CsrMatrix<T>, x: &[T], b: &CsrMatrix<T>, u: &[T]) -> T {
    let ax = a.mul_vec(x);
    let bu = b.mul_vec(u);
    ax.iter().zip(&bu).map(|(p, q)| (*p - *q) * (*p - *q)).sum::<T>().sqrt()
}

/// `(f(u), v)` over the vector space, integrated with the nonlinear rule.
pub fn nonlinear_load<T: Real>(space: &FeSpace<T>, nl: Nonlinearity, u: &[T]) -> Vec<T> {
    let l = space.layout();
    let d0 = l.d0;
    let cache = space.nonlinear_cache();
    let mut out = vec![T::zero(); l.vector_len()];
    if nl.is_linear() {
        return out;
    }
    for e in 0..l.n_elements {
        let det = space.mass_scale(e);
        let (bx, by) = (l.component_block(e, 0), l.component_block(e, 1));
        for q in 0..cache.len() {
            let phi = cache.phi_at(q, d0);
            let uq = [dot(phi, &u[bx.clone()]), dot(phi, &u[by.clone()])];
            let f = nl.force(uq);
            let w = det * cache.rule.weights[q];
            for i in 0..d0 {
                out[bx.start + i] = out[bx.start + i] + w * f[0] * phi[i];
                out[by.start + i] = out[by.start + i] + w * f[1] * phi[i];
            }
        }
    }
    out
}

/// `∂/∂u (f(u), v)` as a block-diagonal sparse matrix.
pub fn nonlinear_jacobian<T: Real>(space: &FeSpace<T>, nl: Nonlinearity, u: &[T]) -> CsrMatrix<T> {
    let l = space.layout();
    let d0 = l.d0;
    let cache = space.nonlinear_cache();
    let mut b = CooBuilder::new(l.vector_len(), l.vector_len());
    if nl.is_linear() {
        return b.build();
    }
    let mut blk = vec![T::zero(); 4 * d0 * d0];
    for e in 0..l.n_elements {
        blk.iter_mut().for_each(|v| *v = T::zero());
        let det = space.mass_scale(e);
        let (bx, by) = (l.component_block(e, 0), l.component_block(e, 1));
        for q in 0..cache.len() {
            let phi = cache.phi_at(q, d0);
            let uq = [dot(phi, &u[bx.clone()]), dot(phi, &u[by.clone()])];
            let jac = nl.jacobian(uq);
            let w = det * cache.rule.weights[q];
            for c in 0..2 {
                for d in 0..2 {
                    let wj = w * jac[c][d];
                    for i in 0..d0 {
                        for j in 0..d0 {
                            let k = (c * d0 + i) * 2 * d0 + d * d0 + j;
                            blk[k] = blk[k] + wj * phi[i] * phi[j];
                        }
                    }
                }
            }
        }
        let start = bx.start;
        for r in 0..2 * d0 {
            for c in 0..2 * d0 {
                b.push(start + r, start + c, blk[r * 2 * d0 + c]);
            }
        }
    }
    b.build()
}

/// Integral of the potential `∫ F(u)`.
pub fn potential_energy<T: Real>(space: &FeSpace<T>, nl: Nonlinearity, u: &[T]) -> T {
    if nl.is_linear() {
        return T::zero();
    }
    let l = space.layout();
    let d0 = l.d0;
    let cache = space.nonlinear_cache();
    let mut s = T::zero();
    for e in 0..l.n_elements {
        let det = space.mass_scale(e);
        let (bx, by) = (l.component_block(e, 0), l.component_block(e, 1));
        for q in 0..cache.len() {
            let phi = cache.phi_at(q, d0);
            let uq = [dot(phi, &u[bx.clone()]), dot(phi, &u[by.clone()])];
            s = s + det * cache.rule.weights[q] * nl.potential(uq);
        }
    }
    s
}

/// Offsets of the stacked mixed unknowns `(σ, u, ρ, p)` followed by `(σ̂, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixedLayout {
    pub sigma: usize,
    pub u: usize,
    pub rho: usize,
    pub p: usize,
    /// Number of volume unknowns.
    pub n: usize,
    pub sigma_hat: usize,
    pub lambda: usize,
    pub n_full: usize,
}

impl MixedLayout {
    pub fn new(l: &SpaceLayout) -> Self {
        let (ns, nv, ntr) = (l.scalar_len(), l.vector_len(), l.trace_len());
        let n = 2 * ns + 2 * nv;
        Self { sigma: 0, u: ns, rho: ns + nv, p: 2 * ns + nv, n, sigma_hat: n, lambda: n + ntr, n_full: n + 2 * ntr }
    }
}

/// Semidiscrete operator of the mixed method after trace elimination.
#[derive(Debug, Clone)]
pub struct MixedOperator<T> {
    space: Arc<FeSpace<T>>,
    pen: Penalties<T>,
    nonlinearity: Nonlinearity,
    ml: MixedLayout,
    /// Rows `(Mσ̇, Mu̇, Mρ̇, Mṗ)`, columns `(σ, u, ρ, p, σ̂, λ)`.
    full: CsrMatrix<T>,
    /// Conservativity residual rows over the same columns.
    conservativity: CsrMatrix<T>,
    /// `(σ, u, ρ, p) ↦ (σ, u, ρ, p, σ̂, λ)`.
    elimination: CsrMatrix<T>,
    /// `full · elimination`
    reduced: CsrMatrix<T>,
    mass: Vec<T>,
}

impl<T: Real> MixedOperator<T> {
    pub fn build(space: Arc<FeSpace<T>>, pen: Penalties<T>, nonlinearity: Nonlinearity) -> Result<Self> {
        check_penalties(&space, &pen)?;
        let l = *space.layout();
        let ml = MixedLayout::new(&l);
        let (d0, nt) = (l.d0, l.nt());
        let mut g = CooBuilder::new(ml.n, ml.n_full);
        let mut cons = CooBuilder::new(2 * l.trace_len(), ml.n_full);
        let mut el = CooBuilder::new(ml.n_full, ml.n);
        for i in 0..ml.n {
            el.push(i, i, T::one());
        }
        let mut mass = vec![T::zero(); ml.n];

        for e in 0..l.n_elements {
            let det = space.mass_scale(e);
            let (dx, dy) = (space.deriv_matrix(e, 0), space.deriv_matrix(e, 1));
            let s0 = e * d0;
            let (cx, cy) = (l.component_block(e, 0).start, l.component_block(e, 1).start);
            for i in 0..d0 {
                for off in [ml.sigma + s0, ml.rho + s0, ml.u + cx, ml.u + cy, ml.p + cx, ml.p + cy] {
                    mass[off + i] = det;
                }
                // M u̇ = M p
                g.push(ml.u + cx + i, ml.p + cx + i, det);
                g.push(ml.u + cy + i, ml.p + cy + i, det);
                for j in 0..d0 {
                    // -(rot p, τ_i)
                    g.push(ml.sigma + s0 + i, ml.p + cy + j, -dx[i * d0 + j]);
                    g.push(ml.sigma + s0 + i, ml.p + cx + j, dy[i * d0 + j]);
                    // (p, grad η_i)
                    g.push(ml.rho + s0 + i, ml.p + cx + j, dx[j * d0 + i]);
                    g.push(ml.rho + s0 + i, ml.p + cy + j, dy[j * d0 + i]);
                    // (σ, rot v)
                    g.push(ml.p + cx + i, ml.sigma + s0 + j, -dy[j * d0 + i]);
                    g.push(ml.p + cy + i, ml.sigma + s0 + j, dx[j * d0 + i]);
                    // -(grad ρ, v)
                    g.push(ml.p + cx + i, ml.rho + s0 + j, -dx[i * d0 + j]);
                    g.push(ml.p + cy + i, ml.rho + s0 + j, -dy[i * d0 + j]);
                }
            }
        }

        let ntr = l.trace_len();
        for (f, fc) in space.facet_caches().iter().enumerate() {
            let boundary = fc.minus.is_none();
            let (a0, a1) = (pen.alpha0(f), pen.alpha1(f));
            let tb = f * nt;
            let two = T::lit(2.0);
            let half = T::lit(0.5);
            for (kind, sc) in fc.sides() {
                let sg = kind.sign::<T>();
                let nrm = sc.normal;
                let s0 = sc.element * d0;
                let (cx, cy) = (l.component_block(sc.element, 0).start, l.component_block(sc.element, 1).start);
                for q in 0..fc.len() {
                    let w = fc.weights[q];
                    let phi = &sc.phi[q * d0..(q + 1) * d0];
                    let ell = &fc.trace[q * nt..(q + 1) * nt];
                    for i in 0..d0 {
                        for j in 0..d0 {
                            let pp = w * phi[i] * phi[j];
                            // -⟨α⁰(σ̂ - σ), τ⟩: the σ part
                            g.push(ml.sigma + s0 + i, ml.sigma + s0 + j, a0 * pp);
                            // -⟨α¹ p·n, v·n⟩
                            let c = -a1 * pp;
                            g.push(ml.p + cx + i, ml.p + cx + j, c * nrm[0] * nrm[0]);
                            g.push(ml.p + cx + i, ml.p + cy + j, c * nrm[0] * nrm[1]);
                            g.push(ml.p + cy + i, ml.p + cx + j, c * nrm[1] * nrm[0]);
                            g.push(ml.p + cy + i, ml.p + cy + j, c * nrm[1] * nrm[1]);
                        }
                    }
                    if boundary {
                        continue;
                    }
                    for a in 0..nt {
                        let sh = ml.sigma_hat + tb + a;
                        let lam = ml.lambda + tb + a;
                        let (ch, cl) = (tb + a, ntr + tb + a);
                        for b in 0..nt {
                            let ll = w * ell[a] * ell[b];
                            cons.push(ch, ml.sigma_hat + tb + b, -a0 * ll);
                            cons.push(cl, ml.lambda + tb + b, -a1 * ll);
                        }
                        for j in 0..d0 {
                            let lp = w * ell[a] * phi[j];
                            // volume rows
                            g.push(ml.sigma + s0 + j, sh, -a0 * lp);
                            g.push(ml.rho + s0 + j, lam, -sg * lp);
                            g.push(ml.p + cx + j, sh, lp * nrm[1]);
                            g.push(ml.p + cy + j, sh, -lp * nrm[0]);
                            g.push(ml.p + cx + j, lam, a1 * sg * lp * nrm[0]);
                            g.push(ml.p + cy + j, lam, a1 * sg * lp * nrm[1]);
                            // ⟨p×n - α⁰(σ̂ - σ), τ̂⟩
                            cons.push(ch, ml.p + cx + j, lp * nrm[1]);
                            cons.push(ch, ml.p + cy + j, -lp * nrm[0]);
                            cons.push(ch, ml.sigma + s0 + j, a0 * lp);
                            // ⟨ρ - α¹(sλ - p·n), sμ⟩
                            cons.push(cl, ml.rho + s0 + j, sg * lp);
                            cons.push(cl, ml.p + cx + j, a1 * sg * lp * nrm[0]);
                            cons.push(cl, ml.p + cy + j, a1 * sg * lp * nrm[1]);
                            // facet-local elimination, projected with the facet mass length·I
                            let pl = lp / fc.length;
                            el.push(sh, ml.sigma + s0 + j, half * pl);
                            el.push(sh, ml.p + cx + j, pl * nrm[1] / (two * a0));
                            el.push(sh, ml.p + cy + j, -pl * nrm[0] / (two * a0));
                            el.push(lam, ml.p + cx + j, half * sg * pl * nrm[0]);
                            el.push(lam, ml.p + cy + j, half * sg * pl * nrm[1]);
                            el.push(lam, ml.rho + s0 + j, sg * pl / (two * a1));
                        }
                    }
                }
            }
        }
        let full = g.build();
        let elimination = el.build();
        let reduced = full.matmul(&elimination);
        Ok(Self { space, pen, nonlinearity, ml, full, conservativity: cons.build(), elimination, reduced, mass })
    }

    pub fn space(&self) -> &Arc<FeSpace<T>> {
        &self.space
    }

    pub fn penalties(&self) -> &Penalties<T> {
        &self.pen
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn layout(&self) -> &MixedLayout {
        &self.ml
    }

    /// Diagonal mass matrix of the stacked unknowns.
    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    /// The eliminated linear operator `A` (`M ẏ = A y - F`).
    pub fn matrix(&self) -> &CsrMatrix<T> {
        &self.reduced
    }

    pub fn elimination(&self) -> &CsrMatrix<T> {
        &self.elimination
    }

    /// `M ẏ` for the stacked state `y`.
    pub fn rhs(&self, y: &[T]) -> Vec<T> {
        let mut out = self.reduced.mul_vec(y);
        if !self.nonlinearity.is_linear() {
            let u = &y[self.ml.u..self.ml.rho];
            let f = nonlinear_load(&self.space, self.nonlinearity, u);
            for (o, fi) in out[self.ml.p..].iter_mut().zip(&f) {
                *o = *o - *fi;
            }
        }
        out
    }

    /// Jacobian of [`MixedOperator::rhs`].
    pub fn rhs_jacobian(&self, y: &[T]) -> CsrMatrix<T> {
        if self.nonlinearity.is_linear() {
            return self.reduced.clone();
        }
        let u = &y[self.ml.u..self.ml.rho];
        let jf = nonlinear_jacobian(&self.space, self.nonlinearity, u);
        let mut b = CooBuilder::new(self.ml.n, self.ml.n);
        for i in 0..jf.nrows_() {
            let (cols, vals) = jf.row(i);
            for (c, v) in cols.iter().zip(vals) {
                b.push(self.ml.p + i, self.ml.u + c, -*v);
            }
        }
        self.reduced.add(T::one(), &b.build(), T::one())
    }

    /// `σ̂` and `p̂·n⁺` from the facet-local conservativity conditions.
    pub fn eliminate_traces(&self, state: &FieldState<T>) -> Result<TraceState<T>> {
        state.check(self.space.layout())?;
        let y = state.stacked();
        let z = self.elimination.mul_vec(&y);
        Ok(TraceState {
            sigma_hat: z[self.ml.sigma_hat..self.ml.lambda].to_vec(),
            normal_hat: z[self.ml.lambda..].to_vec(),
            kind: TraceKind::Mixed,
        })
    }

    /// Un-eliminated action: `(M ẏ, conservativity residual)` for given
    /// traces, without the nonlinear term.
    pub fn full_residual(&self, state: &FieldState<T>, traces: &TraceState<T>) -> Result<(Vec<T>, Vec<T>)> {
        traces.expect(TraceKind::Mixed)?;
        state.check(self.space.layout())?;
        let mut z = state.stacked();
        z.extend_from_slice(&traces.sigma_hat);
        z.extend_from_slice(&traces.normal_hat);
        Ok((self.full.mul_vec(&z), self.conservativity.mul_vec(&z)))
    }

    /// Initial mixed state: `σ`, `ρ` from the multisymplectic constraint
    /// solve at `u`.
    pub fn initial_state(&self, constraints: &ConstraintSystems<T>, u: Vec<T>, p: Vec<T>, t: T) -> Result<FieldState<T>> {
        let sol = constraints.solve_constraints(&u)?;
        Ok(FieldState { sigma: sol.sigma, u, rho: sol.rho, p, t })
    }
}

impl<T: Real> CsrMatrix<T> {
    fn nrows_(&self) -> usize {
        crate::linalg::LinearOperator::nrows(self)
    }
}

/// Evaluates `(v×n, v·n)` of a vector field on each side of facet `f` at its
/// quadrature points; used by diagnostics.
pub fn side_vector_traces<T: Real>(space: &FeSpace<T>, f: usize, coeffs: &[T]) -> Vec<(crate::mesh::SideKind, Vec<[T; 2]>)> {
    let fc = space.facet_cache(f);
    fc.sides()
        .map(|(k, sc)| {
            let v = (0..fc.len())
                .map(|q| {
                    let vv = side_vector(space, sc, q, coeffs);
                    [cross(vv, sc.normal), dotn(vv, sc.normal)]
                })
                .collect();
            (k, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{numerical_normal_traces, side_scalar, trace_value};
    use crate::exact::ExactSolution;
    use crate::mesh::{build_periodic_rect_mesh, SideKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(nx: usize, ny: usize, lx: f64, ly: f64, r: usize, a: f64, periodic: bool) -> (Arc<FeSpace<f64>>, Penalties<f64>) {
        let mesh = build_periodic_rect_mesh(nx, ny, lx, ly, periodic, periodic).unwrap();
        let sp = Arc::new(FeSpace::new(mesh, r).unwrap());
        let pen = Penalties::constant(sp.mesh().num_facets(), -a, a).unwrap();
        (sp, pen)
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn direct_stiffness_matches_iterative_columns() {
        for periodic in [true, false] {
            let (sp, pen) = setup(3, 2, 1.0, 1.0, 1, 0.6, periodic);
            let cs = ConstraintSystems::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
            let s = cs.stiffness_matrix().unwrap();
            let n = sp.layout().vector_len();
            let mut e = vec![0.0; n];
            for j in 0..n {
                e[j] = 1.0;
                let col = cs.stiffness_apply(&e).unwrap();
                e[j] = 0.0;
                for i in 0..n {
                    assert!((col[i] - s[(i, j)]).abs() < 1e-10, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn a_sigma_is_exactly_symmetric() {
        let (sp, pen) = setup(3, 2, 1.0, 0.5, 2, 0.3, true);
        let cs = ConstraintSystems::build(sp, pen, Nonlinearity::Linear).unwrap();
        assert_eq!(cs.a_sigma().asymmetry(), 0.0);
        assert_eq!(cs.a_sigma().transpose(), *cs.a_sigma());
    }

    #[test]
    fn a_rho_quadratic_form_is_positive() {
        let (sp, pen) = setup(3, 2, 1.0, 0.5, 2, 0.3, true);
        let cs = ConstraintSystems::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ns = sp.layout().scalar_len();
        for _ in 0..10 {
            let x = random(cs.a_rho().nrows_(), &mut rng);
            let ax = cs.a_rho().mul_vec(&x);
            let q: f64 = dot(&x, &ax);
            // the coupling terms cancel: xᵀAx = Σ|det|ρ² + 2α¹ Σ len λ²
            let mut expect = 0.0;
            for e in 0..sp.layout().n_elements {
                for i in sp.layout().scalar_block(e) {
                    expect += sp.mass_scale(e) * x[i] * x[i];
                }
            }
            for f in 0..sp.mesh().num_facets() {
                for a in sp.layout().trace_block(f) {
                    expect += 2.0 * 0.3 * sp.mesh().facet(f).length * x[ns + a] * x[ns + a];
                }
            }
            assert!((q - expect).abs() < 1e-12 * expect);
            assert!(q > 0.0);
        }
    }

    #[test]
    fn zero_u_gives_zero_solution() {
        let (sp, pen) = setup(2, 2, 1.0, 1.0, 1, 1.0, true);
        let cs = ConstraintSystems::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
        let sol = cs.solve_constraints(&vec![0.0; sp.layout().vector_len()]).unwrap();
        assert!(sol.sigma.iter().chain(&sol.rho).chain(&sol.sigma_hat).chain(&sol.u_hat).all(|v| *v == 0.0));
    }

    #[test]
    fn constant_field_is_in_the_kernel() {
        let (sp, pen) = setup(4, 3, 1.0, 1.0, 2, 0.5, true);
        let cs = ConstraintSystems::build(sp.clone(), pen.clone(), Nonlinearity::Linear).unwrap();
        let c = [0.7, -0.4];
        let u = sp.project_vector(|_| c);
        let sol = cs.solve_constraints(&u).unwrap();
        assert!(sol.sigma.iter().chain(&sol.rho).all(|v| v.abs() < 1e-11));
        for f in 0..sp.mesh().num_facets() {
            let n = sp.mesh().facet(f).normal;
            for q in 0..sp.facet_cache(f).len() {
                assert!((trace_value(&sp, f, q, &sol.u_hat) - (c[0] * n[0] + c[1] * n[1])).abs() < 1e-11);
            }
        }
        // the momentum load vanishes too
        let (load, _) = cs.load_at(&u).unwrap();
        assert!(load.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn solves_are_bitwise_repeatable() {
        let (sp, pen) = setup(3, 3, 1.0, 1.0, 1, 0.5, true);
        let cs = ConstraintSystems::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random(sp.layout().vector_len(), &mut rng);
        assert_eq!(cs.solve_constraints(&u).unwrap(), cs.solve_constraints(&u).unwrap());
    }

    #[test]
    fn two_element_mesh_residual() {
        let (sp, pen) = setup(1, 1, 1.0, 1.0, 1, 0.5, true);
        let cs = ConstraintSystems::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = random(cs.a_sigma().nrows_(), &mut rng);
        let mut x = vec![0.0; b.len()];
        let st = solve_spd(&cs.neg_a_sigma, &b, &mut x, &cs.pc_sigma, &SolverOptions::default()).unwrap();
        assert!(st.residual <= 1e-13);
    }

    #[test]
    fn wrong_penalty_sign_is_detected_by_cg() {
        // build with the sign flipped by hand: α⁰ > 0 makes -A_sigma indefinite
        let (sp, _) = setup(3, 2, 1.0, 1.0, 1, 1.0, true);
        let mut cs = ConstraintSystems::build(sp.clone(), Penalties::constant(sp.mesh().num_facets(), -50.0, 1.0).unwrap(), Nonlinearity::Linear).unwrap();
        // flip: -A with α⁰ → -α⁰ equals the mass part minus the facet part
        let mass = CsrMatrix::from_diagonal(&(0..cs.a_sigma.nrows_()).map(|i| if i < sp.layout().scalar_len() { sp.mass_scale(i / sp.d0()) } else { 0.0 }).collect::<Vec<_>>());
        let facet_part = cs.neg_a_sigma.add(1.0, &mass, -1.0);
        cs.neg_a_sigma = mass.add(1.0, &facet_part, -1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random(sp.layout().vector_len(), &mut rng);
        let cs = cs.with_solver_options(SolverOptions::default());
        match cs.solve_constraints(&u) {
            Err(Error::NotPositiveDefinite { .. }) => {}
            other => panic!("expected indefiniteness, got {other:?}"),
        }
    }

    #[test]
    fn sigma_converges_to_minus_rot_u() {
        let ex = ExactSolution::<f64>::linear_plane_wave();
        let mut errs = Vec::new();
        for k in 1..4 {
            let nx = 8 << k;
            let (sp, pen) = setup(nx, (nx / 8).max(1), 1.0, 0.125, 1, 0.05, true);
            let cs = ConstraintSystems::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
            let u = sp.project_vector(|x| ex.u(0.0, x));
            let sol = cs.solve_constraints(&u).unwrap();
            let exact = sp.project_scalar(|x| ex.sigma(0.0, x));
            let mut e2 = 0.0;
            for e in 0..sp.layout().n_elements {
                for i in sp.layout().scalar_block(e) {
                    e2 += sp.mass_scale(e) * (sol.sigma[i] - exact[i]).powi(2);
                }
            }
            errs.push(e2.sqrt());
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.6, "rate {rate} from {errs:?}");
        }
    }

    #[test]
    fn momentum_is_consistent() {
        let ex = ExactSolution::<f64>::linear_plane_wave();
        let mut errs = Vec::new();
        for k in 0..3 {
            let nx = 8 << k;
            let (sp, pen) = setup(nx, (nx / 8).max(1), 1.0, 0.125, 1, 0.05, true);
            let cs = ConstraintSystems::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
            let mut st = FieldState::zeros(sp.layout());
            st.u = sp.project_vector(|x| ex.u(0.0, x));
            let (tr, _) = cs.complete_state(&mut st).unwrap();
            let load = cs.momentum_rhs(&st, &tr).unwrap();
            let exact = sp.project_vector(|x| ex.p_dot(0.0, x));
            let mut e2 = 0.0;
            for e in 0..sp.layout().n_elements {
                let m = sp.mass_scale(e);
                for i in sp.layout().vector_block(e) {
                    e2 += m * (load[i] / m - exact[i]).powi(2);
                }
            }
            errs.push(e2.sqrt());
        }
        assert!(errs[2] < errs[0] / 2.0, "{errs:?}");
    }

    #[test]
    fn zero_state_zero_load() {
        let (sp, pen) = setup(2, 2, 1.0, 1.0, 1, 1.0, true);
        let cs = ConstraintSystems::build(sp.clone(), pen, Nonlinearity::CubicKleinGordon).unwrap();
        let st = FieldState::zeros(sp.layout());
        let tr = TraceState::zeros(sp.layout(), TraceKind::Multisymplectic);
        assert!(cs.momentum_rhs(&st, &tr).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cubic_load_for_constant_field() {
        let (sp, _) = setup(2, 2, 1.0, 1.0, 2, 1.0, true);
        let (a, b) = (0.3, -0.6);
        let u = sp.project_vector(|_| [a, b]);
        let f = nonlinear_load(&sp, Nonlinearity::CubicKleinGordon, &u);
        let g = 1.0 - a * a - b * b;
        // (f, φ_i) = g·(a,b)·∫φ_i and ∫φ_i = |det|·δ_{i0}/√2
        for e in 0..sp.layout().n_elements {
            let m = sp.mass_scale(e);
            let bx = sp.layout().component_block(e, 0);
            let by = sp.layout().component_block(e, 1);
            assert!((f[bx.start] - g * a * m / 2f64.sqrt()).abs() < 1e-14);
            assert!((f[by.start] - g * b * m / 2f64.sqrt()).abs() < 1e-14);
            for i in 1..sp.d0() {
                assert!(f[bx.start + i].abs() < 1e-14 && f[by.start + i].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn nonlinear_jacobian_matches_finite_difference() {
        let (sp, _) = setup(2, 1, 1.0, 1.0, 2, 1.0, true);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random(sp.layout().vector_len(), &mut rng);
        let du = random(u.len(), &mut rng);
        let j = nonlinear_jacobian(&sp, Nonlinearity::CubicKleinGordon, &u);
        let h = 1e-6;
        let up: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + h * b).collect();
        let um: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a - h * b).collect();
        let fp = nonlinear_load(&sp, Nonlinearity::CubicKleinGordon, &up);
        let fm = nonlinear_load(&sp, Nonlinearity::CubicKleinGordon, &um);
        let jd = j.mul_vec(&du);
        for i in 0..u.len() {
            assert!(((fp[i] - fm[i]) / (2.0 * h) - jd[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn numerical_normal_trace_is_single_valued() {
        let (sp, pen) = setup(4, 3, 1.0, 1.0, 2, 0.4, true);
        let cs = ConstraintSystems::build(sp.clone(), pen.clone(), Nonlinearity::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut st = FieldState::zeros(sp.layout());
        st.u = random(sp.layout().vector_len(), &mut rng);
        let (tr, _) = cs.complete_state(&mut st).unwrap();
        let mut worst: f64 = 0.0;
        for f in 0..sp.mesh().num_facets() {
            // conservativity holds in the trace space, so compare projections onto it
            let nt = sp.layout().nt();
            let fc = sp.facet_cache(f);
            let p = numerical_normal_traces(&sp, &st, &tr, &pen, f, SideKind::Plus).unwrap();
            let m = numerical_normal_traces(&sp, &st, &tr, &pen, f, SideKind::Minus).unwrap();
            for a in 0..nt {
                let (mut su, mut sr) = (0.0, 0.0);
                for q in 0..fc.len() {
                    let l = fc.weights[q] * fc.trace[q * nt + a];
                    su += l * (p[q].v_hat_nor + m[q].v_hat_nor);
                    sr += l * (p[q].rho_hat_nor - m[q].rho_hat_nor);
                }
                worst = worst.max(su.abs()).max(sr.abs());
            }
        }
        assert!(worst < 1e-11, "{worst}");
    }

    #[test]
    fn single_facet_elimination_reproduces_continuous_data() {
        let (sp, pen) = setup(2, 2, 1.0, 1.0, 1, 1.0, true);
        let op = MixedOperator::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
        let mut st = FieldState::zeros(sp.layout());
        st.sigma = sp.project_scalar(|_| 1.0);
        let tr = op.eliminate_traces(&st).unwrap();
        for f in 0..sp.mesh().num_facets() {
            for q in 0..sp.facet_cache(f).len() {
                assert!((trace_value(&sp, f, q, &tr.sigma_hat) - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn eliminated_matches_full_system() {
        for periodic in [true, false] {
            let (sp, pen) = setup(3, 2, 1.0, 0.6, 2, 0.7, periodic);
            let op = MixedOperator::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let l = sp.layout();
            let st = FieldState { sigma: random(l.scalar_len(), &mut rng), u: random(l.vector_len(), &mut rng), rho: random(l.scalar_len(), &mut rng), p: random(l.vector_len(), &mut rng), t: 0.0 };
            let tr = op.eliminate_traces(&st).unwrap();
            let (vol, cons) = op.full_residual(&st, &tr).unwrap();
            assert!(cons.iter().all(|v| v.abs() < 1e-12), "conservativity {:?}", cons.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let red = op.rhs(&st.stacked());
            for (a, b) in vol.iter().zip(&red) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pointwise_elimination_formula() {
        let (sp, pen) = setup(3, 3, 1.0, 1.0, 1, 0.5, true);
        let op = MixedOperator::build(sp.clone(), pen, Nonlinearity::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = sp.layout();
        let st = FieldState { sigma: random(l.scalar_len(), &mut rng), u: vec![0.0; l.vector_len()], rho: random(l.scalar_len(), &mut rng), p: random(l.vector_len(), &mut rng), t: 0.0 };
        let tr = op.eliminate_traces(&st).unwrap();
        let a0 = -0.5;
        let a1 = 0.5;
        for f in 0..sp.mesh().num_facets() {
            let fc = sp.facet_cache(f);
            let (p, m) = (&fc.plus, fc.minus.as_ref().unwrap());
            for q in 0..fc.len() {
                let (sp_, sm) = (side_scalar(&sp, p, q, &st.sigma), side_scalar(&sp, m, q, &st.sigma));
                let (rp, rm) = (side_scalar(&sp, p, q, &st.rho), side_scalar(&sp, m, q, &st.rho));
                let (pp, pm) = (side_vector(&sp, p, q, &st.p), side_vector(&sp, m, q, &st.p));
                let sh = 0.5 * (sp_ + sm) + (cross(pp, p.normal) + cross(pm, m.normal)) / (2.0 * a0);
                let lam = 0.5 * (dotn(pp, p.normal) - dotn(pm, m.normal)) + (rp - rm) / (2.0 * a1);
                assert!((trace_value(&sp, f, q, &tr.sigma_hat) - sh).abs() < 1e-12);
                assert!((trace_value(&sp, f, q, &tr.normal_hat) - lam).abs() < 1e-12);
            }
        }
    }
}
