//! Monitored quantities: Hamiltonians, multisymplectic residuals, the mixed
//! energy identity, constraint residuals and errors against exact solutions.

use crate::assembly::{potential_energy, ConstraintSolution, ConstraintSystems, MixedOperator};
use crate::calculus::{cross, dotn, side_scalar, side_vector, trace_value, FieldState, Nonlinearity, Penalties, TraceKind, TraceState};
use crate::error::{Error, Result};
use crate::exact::ExactSolution;
use crate::fespace::{triangle_quadrature, FeSpace, FormDegree};
use crate::mesh::{Point, SideKind};
use crate::scalar::{dot, Real};
use crate::timeloop::StepReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weighted_sq<T: Real>(m: &[T], v: &[T]) -> T {
    m.iter().zip(v).map(|(a, b)| *a * *b * *b).sum()
}

/// `½(‖σ‖² + ‖p‖² + ‖ρ‖²) + ∫F(u)` with the method's own `σ`, `ρ`.
pub fn global_hamiltonian<T: Real>(space: &FeSpace<T>, nl: Nonlinearity, state: &FieldState<T>) -> T {
    let ms = space.mass_diagonal(FormDegree::Zero);
    let mv = space.mass_diagonal(FormDegree::One);
    let h = T::lit(0.5);
    h * (weighted_sq(&ms, &state.sigma) + weighted_sq(&mv, &state.p) + weighted_sq(&ms, &state.rho)) + potential_energy(space, nl, &state.u)
}

/// Sum over both sides of every facet of `∫ g(side, q)`.
fn side_sum<T: Real>(space: &FeSpace<T>, mut g: impl FnMut(usize, SideKind, &crate::fespace::SideCache<T>, usize) -> T) -> T {
    let mut s = T::zero();
    for (f, fc) in space.facet_caches().iter().enumerate() {
        for (kind, sc) in fc.sides() {
            for q in 0..fc.len() {
                s = s + fc.weights[q] * g(f, kind, sc, q);
            }
        }
    }
    s
}

/// Elementwise `σ = -rot u`, `ρ = -div u`, projected onto the scalar space.
/// An alternative to the method's own `σ`, `ρ` for monitoring `ℋ`.
pub fn broken_fields<T: Real>(space: &FeSpace<T>, u: &[T]) -> (Vec<T>, Vec<T>) {
    let l = space.layout();
    let d0 = l.d0;
    let m = space.mass_diagonal(FormDegree::Zero);
    let mut sigma = vec![T::zero(); l.scalar_len()];
    let mut rho = vec![T::zero(); l.scalar_len()];
    for e in 0..l.n_elements {
        let (dx, dy) = (space.deriv_matrix(e, 0), space.deriv_matrix(e, 1));
        let (bx, by) = (l.component_block(e, 0).start, l.component_block(e, 1).start);
        for i in 0..d0 {
            let (mut rot, mut div) = (T::zero(), T::zero());
            for j in 0..d0 {
                let (a, b) = (dx[i * d0 + j], dy[i * d0 + j]);
                rot = rot + a * u[by + j] - b * u[bx + j];
                div = div + a * u[bx + j] + b * u[by + j];
            }
            let k = e * d0 + i;
            sigma[k] = -rot / m[k];
            rho[k] = -div / m[k];
        }
    }
    (sigma, rho)
}

/// Discrete Hamiltonian of the multisymplectic method.
pub fn discrete_hamiltonian<T: Real>(space: &FeSpace<T>, pen: &Penalties<T>, nl: Nonlinearity, state: &FieldState<T>, traces: &TraceState<T>) -> Result<T> {
    traces.expect(TraceKind::Multisymplectic)?;
    state.check(space.layout())?;
    let h = T::lit(0.5);
    let pen_terms = side_sum(space, |f, kind, sc, q| {
        let ds = trace_value(space, f, q, &traces.sigma_hat) - side_scalar(space, sc, q, &state.sigma);
        let du = kind.sign::<T>() * trace_value(space, f, q, &traces.normal_hat) - dotn(side_vector(space, sc, q, &state.u), sc.normal);
        -h * pen.alpha0(f) * ds * ds + h * pen.alpha1(f) * du * du
    });
    Ok(global_hamiltonian(space, nl, state) + pen_terms)
}

/// Multisymplectic traces on one side at one quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HatTraces<T> {
    sigma_hat: T,
    /// `û·n` on this side
    u_hat_tan: T,
    u_hat_nor: T,
    rho_hat_nor: T,
}

fn ms_hat<T: Real>(space: &FeSpace<T>, pen: &Penalties<T>, u: &[T], sol: &ConstraintSolution<T>, f: usize, kind: SideKind, q: usize) -> HatTraces<T> {
    let fc = space.facet_cache(f);
    let sc = fc.side(kind).expect("side exists");
    let s = side_scalar(space, sc, q, &sol.sigma);
    let r = side_scalar(space, sc, q, &sol.rho);
    let v = side_vector(space, sc, q, u);
    let sh = trace_value(space, f, q, &sol.sigma_hat);
    let lam = kind.sign::<T>() * trace_value(space, f, q, &sol.u_hat);
    HatTraces {
        sigma_hat: sh,
        u_hat_tan: lam,
        u_hat_nor: cross(v, sc.normal) - pen.alpha0(f) * (sh - s),
        rho_hat_nor: r - pen.alpha1(f) * (lam - dotn(v, sc.normal)),
    }
}

/// `(J w₁, w₂)_K = (u₁, p₂)_K - (u₂, p₁)_K` for every element.
pub fn symplectic_density<T: Real>(space: &FeSpace<T>, a: &FieldState<T>, b: &FieldState<T>) -> Vec<T> {
    let l = space.layout();
    (0..l.n_elements)
        .map(|e| {
            let m = space.mass_scale(e);
            let blk = l.vector_block(e);
            m * (dot(&a.u[blk.clone()], &b.p[blk.clone()]) - dot(&b.u[blk.clone()], &a.p[blk]))
        })
        .collect()
}

/// Which stage of the second trajectory is paired with stage `i` of the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StagePairing {
    /// Stage `i` with stage `i`.
    Stated,
    /// Stage `i` with stage `s - 1 - i`.
    Reversed,
}

/// One trajectory's step: the state before, after, and the retained stages.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<'a, T> {
    pub before: &'a FieldState<T>,
    pub after: &'a FieldState<T>,
    pub report: &'a StepReport<T, ConstraintSolution<T>>,
}

fn check_stages<T>(r: &StepReport<T, ConstraintSolution<T>>) -> Result<()> {
    if r.stage_data.is_empty() || r.stage_data.len() != r.stage_states.len() || r.stage_dt.len() != r.stage_data.len() {
        return Err(Error::MissingStageTraces);
    }
    Ok(())
}

/// Hatted bracket `[ŵ₁, ŵ₂]` on one element side, integrated.
fn side_bracket<T: Real>(space: &FeSpace<T>, pen: &Penalties<T>, s1: (&[T], &ConstraintSolution<T>), s2: (&[T], &ConstraintSolution<T>), f: usize, kind: SideKind) -> T {
    let fc = space.facet_cache(f);
    let mut acc = T::zero();
    for q in 0..fc.len() {
        let a = ms_hat(space, pen, s1.0, s1.1, f, kind, q);
        let b = ms_hat(space, pen, s2.0, s2.1, f, kind, q);
        let v = a.sigma_hat * b.u_hat_nor - b.sigma_hat * a.u_hat_nor + a.u_hat_tan * b.rho_hat_nor - b.u_hat_tan * a.rho_hat_nor;
        acc = acc + fc.weights[q] * v;
    }
    acc
}

fn stage_pairs<T: Real>(a: &StepReport<T, ConstraintSolution<T>>, b: &StepReport<T, ConstraintSolution<T>>, pairing: StagePairing) -> Result<Vec<(usize, usize, T)>> {
    check_stages(a)?;
    check_stages(b)?;
    let s = a.stage_data.len();
    if b.stage_data.len() != s {
        return Err(Error::DimensionMismatch("trajectories have different stage counts".into()));
    }
    Ok((0..s)
        .map(|i| {
            let j = match pairing {
                StagePairing::Stated => i,
                StagePairing::Reversed => s - 1 - i,
            };
            (i, j, a.stage_dt[i])
        })
        .collect())
}

/// Discrete multisymplectic residual
/// `(Jw₁¹, w₂¹)_K - (Jw₁⁰, w₂⁰)_K + Σ Δt b_i [Ŵ₁ⁱ, Ŵ₂ⁱ]_∂K` for every element.
pub fn mscl_element_residuals<T: Real>(cs: &ConstraintSystems<T>, w1: StepRecord<'_, T>, w2: StepRecord<'_, T>, pairing: StagePairing) -> Result<Vec<T>> {
    let space = cs.space();
    let pen = cs.penalties();
    let pairs = stage_pairs(w1.report, w2.report, pairing)?;
    let j1 = symplectic_density(space, w1.after, w2.after);
    let j0 = symplectic_density(space, w1.before, w2.before);
    let mesh = space.mesh();
    let mut out: Vec<T> = j1.iter().zip(&j0).map(|(a, b)| *a - *b).collect();
    for (e, res) in out.iter_mut().enumerate() {
        let facets = mesh.element_facets(e);
        for (i, &f) in facets.iter().enumerate() {
            let kind = mesh.side_kind(e, i);
            for &(si, sj, w) in &pairs {
                let b = side_bracket(
                    space,
                    pen,
                    (&w1.report.stage_states[si], &w1.report.stage_data[si]),
                    (&w2.report.stage_states[sj], &w2.report.stage_data[sj]),
                    f,
                    kind,
                );
                *res = *res + w * b;
            }
        }
    }
    Ok(out)
}

/// The same residual for a collection of elements: brackets only on facets
/// separating the region from its complement.
pub fn mscl_region_residual<T: Real>(cs: &ConstraintSystems<T>, w1: StepRecord<'_, T>, w2: StepRecord<'_, T>, region: &[usize], pairing: StagePairing) -> Result<T> {
    let space = cs.space();
    let mesh = space.mesh();
    let ne = mesh.num_elements();
    let mut inside = vec![false; ne];
    for &e in region {
        if e >= ne {
            return Err(Error::IndexOutOfRange { index: e, len: ne });
        }
        inside[e] = true;
    }
    let pairs = stage_pairs(w1.report, w2.report, pairing)?;
    let j1 = symplectic_density(space, w1.after, w2.after);
    let j0 = symplectic_density(space, w1.before, w2.before);
    let mut res = T::zero();
    for e in (0..ne).filter(|e| inside[*e]) {
        res = res + j1[e] - j0[e];
    }
    for (f, facet) in mesh.facets().iter().enumerate() {
        for (kind, side) in facet.sides() {
            let other = match kind {
                SideKind::Plus => facet.minus.map(|s| s.element),
                SideKind::Minus => Some(facet.plus.element),
            };
            if !inside[side.element] || other.is_some_and(|o| inside[o]) {
                continue;
            }
            for &(si, sj, w) in &pairs {
                res = res
                    + w * side_bracket(
                        space,
                        cs.penalties(),
                        (&w1.report.stage_states[si], &w1.report.stage_data[si]),
                        (&w2.report.stage_states[sj], &w2.report.stage_data[sj]),
                        f,
                        kind,
                    );
            }
        }
    }
    Ok(res)
}

/// Volume fields, traces and numerical normal traces of one variation, as
/// needed by the bracket of flux differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxData<T> {
    pub tau: Vec<T>,
    pub v: Vec<T>,
    pub eta: Vec<T>,
    pub tau_hat: Vec<T>,
    /// `v̂·n⁺` per trace dof.
    pub v_hat_tan: Vec<T>,
    /// `v̂^nor` per facet, side (plus, minus) and quadrature point.
    pub v_hat_nor: Vec<[Vec<T>; 2]>,
    /// `η̂^nor` per facet, side and quadrature point.
    pub eta_hat: Vec<[Vec<T>; 2]>,
}

fn side_index(kind: SideKind) -> usize {
    match kind {
        SideKind::Plus => 0,
        SideKind::Minus => 1,
    }
}

impl<T: Real> FluxData<T> {
    /// Multisymplectic fluxes of a constraint-solved state.
    pub fn multisymplectic(space: &FeSpace<T>, pen: &Penalties<T>, u: &[T], sol: &ConstraintSolution<T>) -> Self {
        let mut vn = Vec::with_capacity(space.mesh().num_facets());
        let mut en = Vec::with_capacity(space.mesh().num_facets());
        for (f, fc) in space.facet_caches().iter().enumerate() {
            let mut a = [Vec::new(), Vec::new()];
            let mut b = [Vec::new(), Vec::new()];
            for (kind, _) in fc.sides() {
                for q in 0..fc.len() {
                    let h = ms_hat(space, pen, u, sol, f, kind, q);
                    a[side_index(kind)].push(h.u_hat_nor);
                    b[side_index(kind)].push(h.rho_hat_nor);
                }
            }
            vn.push(a);
            en.push(b);
        }
        Self { tau: sol.sigma.clone(), v: u.to_vec(), eta: sol.rho.clone(), tau_hat: sol.sigma_hat.clone(), v_hat_tan: sol.u_hat.clone(), v_hat_nor: vn, eta_hat: en }
    }

    /// The two variations used to show that the mixed method is not
    /// multisymplectic. `w₁` has only a discontinuous `r₁`; `w₂` has
    /// `v₂ = -r₁` with traces chosen so that every term except the penalty
    /// quadratics cancels.
    pub fn mixed_witness(op: &MixedOperator<T>, r1: &[T]) -> Result<(Self, Self)> {
        let space = op.space();
        let pen = op.penalties();
        let l = space.layout();
        if r1.len() != l.vector_len() {
            return Err(Error::DimensionMismatch("r1 must be a vector field".into()));
        }
        let mut st = FieldState::zeros(l);
        st.p = r1.to_vec();
        let tr = op.eliminate_traces(&st)?;
        let zs = vec![T::zero(); l.scalar_len()];
        let zv = vec![T::zero(); l.vector_len()];
        let zt = vec![T::zero(); l.trace_len()];
        let (mut vn1, mut en1, mut vn2, mut en2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (f, fc) in space.facet_caches().iter().enumerate() {
            let (mut a1, mut b1, mut a2, mut b2) = ([Vec::new(), Vec::new()], [Vec::new(), Vec::new()], [Vec::new(), Vec::new()], [Vec::new(), Vec::new()]);
            for (kind, sc) in fc.sides() {
                let k = side_index(kind);
                for q in 0..fc.len() {
                    let r = side_vector(space, sc, q, r1);
                    let th = trace_value(space, f, q, &tr.sigma_hat);
                    let lam = kind.sign::<T>() * trace_value(space, f, q, &tr.normal_hat);
                    // r̂₁^nor - r₁^nor = -α⁰(τ̂₁ - τ₁), η̂₁ - η₁ = -α¹(r̂₁ - r₁)·n
                    let r_hat_nor = cross(r, sc.normal) - pen.alpha0(f) * th;
                    a1[k].push(T::zero());
                    b1[k].push(-pen.alpha1(f) * (lam - dotn(r, sc.normal)));
                    a2[k].push(-r_hat_nor);
                    b2[k].push(T::zero());
                }
            }
            vn1.push(a1);
            en1.push(b1);
            vn2.push(a2);
            en2.push(b2);
        }
        let w1 = Self { tau: zs.clone(), v: zv, eta: zs.clone(), tau_hat: tr.sigma_hat.clone(), v_hat_tan: zt.clone(), v_hat_nor: vn1, eta_hat: en1 };
        let neg = |v: &[T]| v.iter().map(|x| -*x).collect::<Vec<T>>();
        let w2 = Self { tau: zs.clone(), v: neg(r1), eta: zs, tau_hat: zt, v_hat_tan: neg(&tr.normal_hat), v_hat_nor: vn2, eta_hat: en2 };
        Ok((w1, w2))
    }
}

/// Per-element bracket of flux differences
/// `⟨τ̂₁-τ₁, v̂₂-v₂⟩ - ⟨τ̂₂-τ₂, v̂₁-v₁⟩ + ⟨v̂₁-v₁, η̂₂-η₂⟩ - ⟨v̂₂-v₂, η̂₁-η₁⟩`
/// (normal components in the first two pairings, tangential in the last two).
pub fn flux_difference_bracket<T: Real>(space: &FeSpace<T>, a: &FluxData<T>, b: &FluxData<T>) -> Vec<T> {
    let mesh = space.mesh();
    let mut out = vec![T::zero(); mesh.num_elements()];
    for (e, acc) in out.iter_mut().enumerate() {
        for (i, &f) in mesh.element_facets(e).iter().enumerate() {
            let kind = mesh.side_kind(e, i);
            let k = side_index(kind);
            let fc = space.facet_cache(f);
            let sc = fc.side(kind).expect("side exists");
            let sg = kind.sign::<T>();
            for q in 0..fc.len() {
                let dtau = |d: &FluxData<T>| trace_value(space, f, q, &d.tau_hat) - side_scalar(space, sc, q, &d.tau);
                let dvn = |d: &FluxData<T>| d.v_hat_nor[f][k][q] - cross(side_vector(space, sc, q, &d.v), sc.normal);
                let dvt = |d: &FluxData<T>| sg * trace_value(space, f, q, &d.v_hat_tan) - dotn(side_vector(space, sc, q, &d.v), sc.normal);
                let deta = |d: &FluxData<T>| d.eta_hat[f][k][q] - side_scalar(space, sc, q, &d.eta);
                let v = dtau(a) * dvn(b) - dtau(b) * dvn(a) + dvt(a) * deta(b) - dvt(b) * deta(a);
                *acc = *acc + fc.weights[q] * v;
            }
        }
    }
    out
}

/// Both sides of the mixed energy identity for the linear homogeneous
/// problem: `(σ,σ̇) + (p,ṗ) + (ρ,ρ̇)` and
/// `⟨α⁰(σ̂-σ), σ̂-σ⟩ - ⟨α¹(p̂-p)·n, (p̂-p)·n⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyIdentity<T> {
    pub lhs: T,
    pub rhs: T,
}

impl<T: Real> EnergyIdentity<T> {
    pub fn residual(&self) -> T {
        (self.lhs - self.rhs).abs()
    }
}

pub fn energy_identity<T: Real>(op: &MixedOperator<T>, state: &FieldState<T>) -> Result<EnergyIdentity<T>> {
    let space = op.space();
    let pen = op.penalties();
    let tr = op.eliminate_traces(state)?;
    let y = state.stacked();
    let my = op.matrix().mul_vec(&y);
    let ml = op.layout();
    let lhs = dot(&y[ml.sigma..ml.u], &my[ml.sigma..ml.u]) + dot(&y[ml.rho..], &my[ml.rho..]);
    let rhs = side_sum(space, |f, kind, sc, q| {
        let ds = trace_value(space, f, q, &tr.sigma_hat) - side_scalar(space, sc, q, &state.sigma);
        let dp = kind.sign::<T>() * trace_value(space, f, q, &tr.normal_hat) - dotn(side_vector(space, sc, q, &state.p), sc.normal);
        pen.alpha0(f) * ds * ds - pen.alpha1(f) * dp * dp
    });
    Ok(EnergyIdentity { lhs, rhs })
}

/// Broken L² errors against an exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Errors<T> {
    pub u: T,
    pub p: T,
    pub sigma: T,
    pub rho: T,
}

pub fn l2_error<T: Real>(space: &FeSpace<T>, state: &FieldState<T>, exact: &ExactSolution<T>, t: T) -> Result<L2Errors<T>> {
    state.check(space.layout())?;
    let rule = triangle_quadrature::<T>(2 * space.degree() + 4)?;
    let l = space.layout();
    let d0 = l.d0;
    let mut phi = vec![T::zero(); d0];
    let mut acc = [T::zero(); 4];
    for e in 0..l.n_elements {
        let rm = space.refmap(e);
        let det = space.mass_scale(e);
        let sb = l.scalar_block(e);
        let (bx, by) = (l.component_block(e, 0), l.component_block(e, 1));
        for (xr, w) in rule.points.iter().zip(&rule.weights) {
            space.basis().eval_into(*xr, &mut phi);
            let x = rm.map(*xr);
            let ww = *w * det;
            let du = [dot(&phi, &state.u[bx.clone()]), dot(&phi, &state.u[by.clone()])];
            let dp = [dot(&phi, &state.p[bx.clone()]), dot(&phi, &state.p[by.clone()])];
            let (eu, ep) = (exact.u(t, x), exact.p(t, x));
            let es = dot(&phi, &state.sigma[sb.clone()]) - exact.sigma(t, x);
            let er = dot(&phi, &state.rho[sb.clone()]) - exact.rho(t, x);
            acc[0] = acc[0] + ww * ((du[0] - eu[0]).powi(2) + (du[1] - eu[1]).powi(2));
            acc[1] = acc[1] + ww * ((dp[0] - ep[0]).powi(2) + (dp[1] - ep[1]).powi(2));
            acc[2] = acc[2] + ww * es * es;
            acc[3] = acc[3] + ww * er * er;
        }
    }
    Ok(L2Errors { u: acc[0].sqrt(), p: acc[1].sqrt(), sigma: acc[2].sqrt(), rho: acc[3].sqrt() })
}

/// Amplitude of a sinusoid with the same root-mean-square value:
/// `√2 ‖f‖ / √|Ω|`. `coeffs` may be a scalar or a vector field.
pub fn rms_amplitude<T: Real>(space: &FeSpace<T>, coeffs: &[T]) -> T {
    let l = space.layout();
    let form = if coeffs.len() == l.vector_len() { FormDegree::One } else { FormDegree::Zero };
    let m = space.mass_diagonal(form);
    (T::lit(2.0) * weighted_sq(&m, coeffs) / space.mesh().total_area()).sqrt()
}

/// Largest absolute value of a field component sampled at `n` points per
/// element edge direction (a barycentric lattice).
pub fn sampled_max<T: Real>(space: &FeSpace<T>, coeffs: &[T], component: usize, n: usize) -> T {
    let l = space.layout();
    let vector = coeffs.len() == l.vector_len();
    let d = T::from_usize_lossy(n.max(1));
    let mut m = T::zero();
    for e in 0..l.n_elements {
        for i in 0..=n {
            for j in 0..=(n - i) {
                let xr = [T::from_usize_lossy(i) / d, T::from_usize_lossy(j) / d];
                let v = if vector { space.eval_vector(coeffs, e, xr)[component] } else { space.eval_scalar(coeffs, e, xr) };
                m = m.max(v.abs());
            }
        }
    }
    m
}

/// Samples a vector field along the horizontal line `y = y0`.
pub fn sample_line<T: Real>(space: &FeSpace<T>, u: &[T], y0: T, x0: T, x1: T, n: usize) -> Vec<(Point<T>, [T; 2])> {
    (0..n)
        .filter_map(|i| {
            let s = if n > 1 { T::from_usize_lossy(i) / T::from_usize_lossy(n - 1) } else { T::zero() };
            let x = [x0 + (x1 - x0) * s, y0];
            space.locate(x).map(|(e, xr)| (x, space.eval_vector(u, e, xr)))
        })
        .collect()
}

/// Norm of the constraint residuals of a multisymplectic state.
pub fn constraint_residual<T: Real>(cs: &ConstraintSystems<T>, state: &FieldState<T>, traces: &TraceState<T>) -> Result<T> {
    cs.constraint_residual(state, traces)
}

/// A state with uniformly random `u`, `p` (and `σ`, `ρ` if `all_fields`).
pub fn random_state<T: Real>(space: &FeSpace<T>, seed: u64, amplitude: T, all_fields: bool) -> FieldState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = FieldState::zeros(space.layout());
    let mut fill = |v: &mut Vec<T>| v.iter_mut().for_each(|x| *x = amplitude * T::lit(rng.gen_range(-1.0..1.0)));
    fill(&mut s.u);
    fill(&mut s.p);
    if all_fields {
        fill(&mut s.sigma);
        fill(&mut s.rho);
    }
    s
}

/// Tracks the multisymplectic constraints along a mixed trajectory.
///
/// The mixed method never forms `û`, but integrating the velocity traces in
/// time gives traces `Û` for which
///
/// ```text
///     (σ, τ) + (u, curl τ) - ⟨Û^nor, τ⟩ = 0,   (ρ, η) - (u, grad η) + ⟨Û·n, η⟩ = 0
/// ```
///
/// hold for all time. RK methods preserve these linear invariants exactly.
#[derive(Debug, Clone)]
pub struct ConstraintTracker<T> {
    /// `Û^nor` per facet, side and quadrature point.
    u_hat_nor: Vec<[Vec<T>; 2]>,
    /// `Û·n⁺` per trace dof.
    u_hat_tan: Vec<T>,
}

impl<T: Real> ConstraintTracker<T> {
    /// Starts from the multisymplectic traces of `u`.
    pub fn new(space: &FeSpace<T>, pen: &Penalties<T>, u: &[T], sol: &ConstraintSolution<T>) -> Self {
        let fd = FluxData::multisymplectic(space, pen, u, sol);
        Self { u_hat_nor: fd.v_hat_nor, u_hat_tan: sol.u_hat.clone() }
    }

    /// Adds `Δt b_i p̂(Y_i)` for every retained stage of a mixed step.
    pub fn advance(&mut self, op: &MixedOperator<T>, report: &StepReport<T, TraceState<T>>) -> Result<()> {
        if report.stage_data.is_empty() {
            return Err(Error::MissingStageTraces);
        }
        let space = op.space();
        let pen = op.penalties();
        let l = space.layout();
        for ((y, tr), w) in report.stage_states.iter().zip(&report.stage_data).zip(&report.stage_dt) {
            let st = FieldState::from_stacked(l, y, T::zero());
            for (f, fc) in space.facet_caches().iter().enumerate() {
                for (kind, sc) in fc.sides() {
                    let k = side_index(kind);
                    for q in 0..fc.len() {
                        let s = side_scalar(space, sc, q, &st.sigma);
                        let p = side_vector(space, sc, q, &st.p);
                        let sh = trace_value(space, f, q, &tr.sigma_hat);
                        let v = cross(p, sc.normal) - pen.alpha0(f) * (sh - s);
                        self.u_hat_nor[f][k][q] = self.u_hat_nor[f][k][q] + *w * v;
                    }
                }
            }
            for (a, b) in self.u_hat_tan.iter_mut().zip(&tr.normal_hat) {
                *a = *a + *w * *b;
            }
        }
        Ok(())
    }

    /// Largest absolute residual over all volume test functions.
    pub fn residual(&self, space: &FeSpace<T>, state: &FieldState<T>) -> T {
        let l = space.layout();
        let d0 = l.d0;
        let mut rs = vec![T::zero(); l.scalar_len()];
        let mut rr = vec![T::zero(); l.scalar_len()];
        for e in 0..l.n_elements {
            let det = space.mass_scale(e);
            let (dx, dy) = (space.deriv_matrix(e, 0), space.deriv_matrix(e, 1));
            let (bx, by) = (l.component_block(e, 0).start, l.component_block(e, 1).start);
            let s0 = e * d0;
            for i in 0..d0 {
                let mut a = det * state.sigma[s0 + i];
                let mut b = det * state.rho[s0 + i];
                for j in 0..d0 {
                    // (u, curl φ_i) and (u, grad φ_i)
                    a = a + dy[j * d0 + i] * state.u[bx + j] - dx[j * d0 + i] * state.u[by + j];
                    b = b - dx[j * d0 + i] * state.u[bx + j] - dy[j * d0 + i] * state.u[by + j];
                }
                rs[s0 + i] = a;
                rr[s0 + i] = b;
            }
        }
        for (f, fc) in space.facet_caches().iter().enumerate() {
            for (kind, sc) in fc.sides() {
                let k = side_index(kind);
                let sg = kind.sign::<T>();
                let s0 = sc.element * d0;
                for q in 0..fc.len() {
                    let w = fc.weights[q];
                    let un = self.u_hat_nor[f][k][q];
                    let ut = sg * trace_value(space, f, q, &self.u_hat_tan);
                    for i in 0..d0 {
                        let ph = sc.phi[q * d0 + i];
                        rs[s0 + i] = rs[s0 + i] - w * un * ph;
                        rr[s0 + i] = rr[s0 + i] + w * ut * ph;
                    }
                }
            }
        }
        rs.iter().chain(&rr).fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
