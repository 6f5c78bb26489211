//! Proxy calculus for `k = 1`, `n = 2`.
//!
//! 0-forms and 2-forms are scalars, 1-forms are vectors, and
//!
//! ```text
//!     curl τ = (∂_y τ, -∂_x τ),   rot v = ∂_x v_y - ∂_y v_x,
//!     v×n = v_x n_y - v_y n_x.
//! ```
//!
//! The tangential trace of a 1-form is stored as the scalar `v·n⁺` against the
//! plus-side normal of each facet.

use crate::error::{Error, Result};
use crate::fespace::{FeSpace, FormDegree, SideCache, SpaceLayout};
use crate::mesh::{Point, SideKind};
use crate::scalar::{dot, Real};

/// Volume unknowns of either method.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState<T> {
    pub sigma: Vec<T>,
    pub u: Vec<T>,
    pub rho: Vec<T>,
    pub p: Vec<T>,
    pub t: T,
}

impl<T: Real> FieldState<T> {
    pub fn zeros(layout: &SpaceLayout) -> Self {
        Self {
            sigma: vec![T::zero(); layout.scalar_len()],
            u: vec![T::zero(); layout.vector_len()],
            rho: vec![T::zero(); layout.scalar_len()],
            p: vec![T::zero(); layout.vector_len()],
            t: T::zero(),
        }
    }

    pub fn check(&self, layout: &SpaceLayout) -> Result<()> {
        let ok = self.sigma.len() == layout.scalar_len()
            && self.rho.len() == layout.scalar_len()
            && self.u.len() == layout.vector_len()
            && self.p.len() == layout.vector_len();
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "field state lengths ({}, {}, {}, {}) do not match layout ({}, {})",
                self.sigma.len(),
                self.u.len(),
                self.rho.len(),
                self.p.len(),
                layout.scalar_len(),
                layout.vector_len()
            )))
        }
    }

    /// Concatenation `(σ, u, ρ, p)`.
    pub fn stacked(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.sigma.len() * 2 + self.u.len() * 2);
        v.extend_from_slice(&self.sigma);
        v.extend_from_slice(&self.u);
        v.extend_from_slice(&self.rho);
        v.extend_from_slice(&self.p);
        v
    }

    pub fn from_stacked(layout: &SpaceLayout, y: &[T], t: T) -> Self {
        let (ns, nv) = (layout.scalar_len(), layout.vector_len());
        Self {
            sigma: y[..ns].to_vec(),
            u: y[ns..ns + nv].to_vec(),
            rho: y[ns + nv..2 * ns + nv].to_vec(),
            p: y[2 * ns + nv..].to_vec(),
            t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    /// Holds `û^tan`: multisymplectic method.
    Multisymplectic,
    /// Holds `p̂^tan`: mixed method.
    Mixed,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Multisymplectic => "multisymplectic (u-hat)",
            TraceKind::Mixed => "mixed (p-hat)",
        }
    }
}

/// Single-valued facet unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceState<T> {
    pub sigma_hat: Vec<T>,
    /// Normal component of the 1-form trace against the plus-side normal.
    pub normal_hat: Vec<T>,
    pub kind: TraceKind,
}

impl<T: Real> TraceState<T> {
    pub fn zeros(layout: &SpaceLayout, kind: TraceKind) -> Self {
        Self { sigma_hat: vec![T::zero(); layout.trace_len()], normal_hat: vec![T::zero(); layout.trace_len()], kind }
    }

    pub fn expect(&self, kind: TraceKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::WrongTraceKind { expected: kind.name(), found: self.kind.name() })
        }
    }
}

/// Piecewise-constant facet penalties with `alpha0 < 0 < alpha1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalties<T> {
    alpha0: Vec<T>,
    alpha1: Vec<T>,
}

impl<T: Real> Penalties<T> {
    pub fn constant(n_facets: usize, alpha0: T, alpha1: T) -> Result<Self> {
        Self::per_facet(vec![alpha0; n_facets], vec![alpha1; n_facets])
    }

    pub fn per_facet(alpha0: Vec<T>, alpha1: Vec<T>) -> Result<Self> {
        if alpha0.len() != alpha1.len() {
            return Err(Error::DimensionMismatch("penalty vectors differ in length".into()));
        }
        if let Some(a) = alpha0.iter().find(|a| !(**a < T::zero())) {
            return Err(Error::Penalty(format!("alpha0 must be negative, got {a}")));
        }
        if let Some(a) = alpha1.iter().find(|a| !(**a > T::zero())) {
            return Err(Error::Penalty(format!("alpha1 must be positive, got {a}")));
        }
        Ok(Self { alpha0, alpha1 })
    }

    #[inline]
    pub fn alpha0(&self, f: usize) -> T {
        self.alpha0[f]
    }

    #[inline]
    pub fn alpha1(&self, f: usize) -> T {
        self.alpha1[f]
    }

    pub fn len(&self) -> usize {
        self.alpha0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha0.is_empty()
    }
}

/// Pointwise nonlinearity `f = ∂F/∂u` of the semilinear equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Nonlinearity {
    /// `F = 0`
    #[default]
    Linear,
    /// `F = |u|²/2 - |u|⁴/4`, `f = (1 - |u|²) u`
    CubicKleinGordon,
}

impl Nonlinearity {
    pub fn is_linear(self) -> bool {
        self == Nonlinearity::Linear
    }

    pub fn potential<T: Real>(self, u: [T; 2]) -> T {
        match self {
            Nonlinearity::Linear => T::zero(),
            Nonlinearity::CubicKleinGordon => {
                let m = u[0] * u[0] + u[1] * u[1];
                T::lit(0.5) * m - T::lit(0.25) * m * m
            }
        }
    }

    pub fn force<T: Real>(self, u: [T; 2]) -> [T; 2] {
        match self {
            Nonlinearity::Linear => [T::zero(); 2],
            Nonlinearity::CubicKleinGordon => {
                let g = T::one() - (u[0] * u[0] + u[1] * u[1]);
                [g * u[0], g * u[1]]
            }
        }
    }

    /// `∂f_i/∂u_j`
    pub fn jacobian<T: Real>(self, u: [T; 2]) -> [[T; 2]; 2] {
        match self {
            Nonlinearity::Linear => [[T::zero(); 2]; 2],
            Nonlinearity::CubicKleinGordon => {
                let g = T::one() - (u[0] * u[0] + u[1] * u[1]);
                let two = T::lit(2.0);
                [[g - two * u[0] * u[0], -two * u[0] * u[1]], [-two * u[1] * u[0], g - two * u[1] * u[1]]]
            }
        }
    }
}

/// Proxy values of a field and its broken differential at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffValues<T> {
    Zero { value: T, curl: [T; 2] },
    One { value: [T; 2], rot: T, div: T },
    Two { value: T, grad: [T; 2] },
}

/// Proxy traces of a field at one facet point, using that side's outward normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceValues<T> {
    /// `τ^tan = τ|`
    Zero { tau_tan: T },
    /// `v^nor = v×n`, and `v^tan` as the scalar `v·n`.
    One { v_nor: T, v_tan: T },
    /// `η^nor` as the scalar paired with `w·n`.
    Two { eta_nor: T },
}

#[inline]
pub fn cross<T: Real>(v: [T; 2], n: Point<T>) -> T {
    v[0] * n[1] - v[1] * n[0]
}

#[inline]
pub fn dotn<T: Real>(v: [T; 2], n: Point<T>) -> T {
    v[0] * n[0] + v[1] * n[1]
}

fn check_len<T: Real>(space: &FeSpace<T>, coeffs: &[T], form: FormDegree) -> Result<()> {
    let n = space.layout().len(form);
    if coeffs.len() != n {
        return Err(Error::DimensionMismatch(format!("{form:?}-form coefficients have length {}, expected {n}", coeffs.len())));
    }
    Ok(())
}

/// Evaluates a field and its broken differential proxy at reference points of element `e`.
pub fn eval_diff<T: Real>(space: &FeSpace<T>, coeffs: &[T], form: FormDegree, e: usize, points: &[Point<T>]) -> Result<Vec<DiffValues<T>>> {
    check_len(space, coeffs, form)?;
    let ne = space.layout().n_elements;
    if e >= ne {
        return Err(Error::IndexOutOfRange { index: e, len: ne });
    }
    let d0 = space.d0();
    let map = space.refmap(e);
    let l = space.layout();
    let mut phi = vec![T::zero(); d0];
    let (mut gx, mut gy) = (vec![T::zero(); d0], vec![T::zero(); d0]);
    let mut out = Vec::with_capacity(points.len());
    for &xr in points {
        space.basis().eval_into(xr, &mut phi);
        space.basis().grad_into(xr, &mut gx, &mut gy);
        let grad_of = |c: &[T]| map.grad([dot(c, &gx), dot(c, &gy)]);
        out.push(match form {
            FormDegree::Zero | FormDegree::Two => {
                let c = &coeffs[l.scalar_block(e)];
                let g = grad_of(c);
                let value = dot(c, &phi);
                if form == FormDegree::Zero {
                    DiffValues::Zero { value, curl: [g[1], -g[0]] }
                } else {
                    DiffValues::Two { value, grad: g }
                }
            }
            FormDegree::One => {
                let cx = &coeffs[l.component_block(e, 0)];
                let cy = &coeffs[l.component_block(e, 1)];
                let (gvx, gvy) = (grad_of(cx), grad_of(cy));
                DiffValues::One { value: [dot(cx, &phi), dot(cy, &phi)], rot: gvy[0] - gvx[1], div: gvx[0] + gvy[1] }
            }
        });
    }
    Ok(out)
}

/// Traces of a field on one side of a facet at arclength fractions `s`.
pub fn facet_trace<T: Real>(space: &FeSpace<T>, coeffs: &[T], form: FormDegree, facet: usize, side: SideKind, s: &[T]) -> Result<Vec<TraceValues<T>>> {
    check_len(space, coeffs, form)?;
    let mesh = space.mesh();
    let nf = mesh.num_facets();
    if facet >= nf {
        return Err(Error::IndexOutOfRange { index: facet, len: nf });
    }
    let f = mesh.facet(facet);
    let sd = f.side(side).ok_or_else(|| Error::InvalidArgument(format!("facet {facet} has no minus side")))?;
    let n = f.normal_on(side);
    let map = space.refmap(sd.element);
    let l = space.layout();
    let mut phi = vec![T::zero(); space.d0()];
    Ok(s.iter()
        .map(|&si| {
            let xr = map.inverse(mesh.facet_point(facet, si, side));
            space.basis().eval_into(xr, &mut phi);
            match form {
                FormDegree::Zero => TraceValues::Zero { tau_tan: dot(&coeffs[l.scalar_block(sd.element)], &phi) },
                FormDegree::Two => TraceValues::Two { eta_nor: dot(&coeffs[l.scalar_block(sd.element)], &phi) },
                FormDegree::One => {
                    let v = [dot(&coeffs[l.component_block(sd.element, 0)], &phi), dot(&coeffs[l.component_block(sd.element, 1)], &phi)];
                    TraceValues::One { v_nor: cross(v, n), v_tan: dotn(v, n) }
                }
            }
        })
        .collect())
}

/// Scalar field on one facet side at the cached quadrature point `q`.
#[inline]
pub(crate) fn side_scalar<T: Real>(space: &FeSpace<T>, sc: &SideCache<T>, q: usize, coeffs: &[T]) -> T {
    let d0 = space.d0();
    dot(&sc.phi[q * d0..(q + 1) * d0], &coeffs[space.layout().scalar_block(sc.element)])
}

#[inline]
pub(crate) fn side_vector<T: Real>(space: &FeSpace<T>, sc: &SideCache<T>, q: usize, coeffs: &[T]) -> [T; 2] {
    let d0 = space.d0();
    let l = space.layout();
    let phi = &sc.phi[q * d0..(q + 1) * d0];
    [dot(phi, &coeffs[l.component_block(sc.element, 0)]), dot(phi, &coeffs[l.component_block(sc.element, 1)])]
}

/// Facet trace function at the cached quadrature point `q`.
#[inline]
pub(crate) fn trace_value<T: Real>(space: &FeSpace<T>, f: usize, q: usize, coeffs: &[T]) -> T {
    let nt = space.layout().nt();
    let fc = space.facet_cache(f);
    dot(&fc.trace[q * nt..(q + 1) * nt], &coeffs[space.layout().trace_block(f)])
}

/// Numerical normal traces at the facet quadrature points of one side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalTraces<T> {
    /// `v̂^nor = v×n - α⁰(σ̂ - σ)`
    pub v_hat_nor: T,
    /// `ρ̂^nor = ρ - α¹(v̂ - v)·n`
    pub rho_hat_nor: T,
}

fn normal_traces_with<T: Real>(
    space: &FeSpace<T>,
    sigma: &[T],
    vel: &[T],
    rho: &[T],
    traces: &TraceState<T>,
    pen: &Penalties<T>,
    facet: usize,
    side: SideKind,
) -> Result<Vec<NormalTraces<T>>> {
    let nf = space.mesh().num_facets();
    if facet >= nf {
        return Err(Error::IndexOutOfRange { index: facet, len: nf });
    }
    let fc = space.facet_cache(facet);
    let sc = fc.side(side).ok_or_else(|| Error::InvalidArgument(format!("facet {facet} has no minus side")))?;
    let sgn = side.sign::<T>();
    let (a0, a1) = (pen.alpha0(facet), pen.alpha1(facet));
    Ok((0..fc.len())
        .map(|q| {
            let s = side_scalar(space, sc, q, sigma);
            let r = side_scalar(space, sc, q, rho);
            let v = side_vector(space, sc, q, vel);
            let sh = trace_value(space, facet, q, &traces.sigma_hat);
            let lam = sgn * trace_value(space, facet, q, &traces.normal_hat);
            NormalTraces { v_hat_nor: cross(v, sc.normal) - a0 * (sh - s), rho_hat_nor: r - a1 * (lam - dotn(v, sc.normal)) }
        })
        .collect())
}

/// `û^nor` and `ρ̂^nor` of the multisymplectic method at the facet quadrature points.
pub fn numerical_normal_traces<T: Real>(
    space: &FeSpace<T>,
    state: &FieldState<T>,
    traces: &TraceState<T>,
    pen: &Penalties<T>,
    facet: usize,
    side: SideKind,
) -> Result<Vec<NormalTraces<T>>> {
    traces.expect(TraceKind::Multisymplectic)?;
    normal_traces_with(space, &state.sigma, &state.u, &state.rho, traces, pen, facet, side)
}

/// `p̂^nor` and `ρ̂^nor` of the mixed method at the facet quadrature points.
pub fn mixed_normal_traces<T: Real>(
    space: &FeSpace<T>,
    state: &FieldState<T>,
    traces: &TraceState<T>,
    pen: &Penalties<T>,
    facet: usize,
    side: SideKind,
) -> Result<Vec<NormalTraces<T>>> {
    traces.expect(TraceKind::Mixed)?;
    normal_traces_with(space, &state.sigma, &state.p, &state.rho, traces, pen, facet, side)
}
