//! Broken polynomial spaces on triangles, facet trace spaces and quadrature.
//!
//! Volume fields use an L²-orthonormal basis on the reference triangle, so
//! every element mass matrix is `|det J|` times the identity. Vector fields
//! are two scalar copies. Facet traces use orthonormal Legendre polynomials
//! in the arclength fraction `s ∈ [0,1]` measured from the lower-index
//! endpoint; the facet mass matrix is `length` times the identity.

use std::ops::Range;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, RefMap, SideKind};
use crate::scalar::Real;

pub const MAX_DEGREE: usize = 5;
pub const MAX_TRIANGLE_ORDER: usize = 40;

/// Form degree of a proxy field: 0 and 2 are scalar, 1 is a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormDegree {
    Zero,
    One,
    Two,
}

impl FormDegree {
    pub fn components(self) -> usize {
        match self {
            FormDegree::One => 2,
            _ => 1,
        }
    }
}

/// Graded-lexicographic exponents `(a, b)` of `x^a y^b` up to total degree `r`.
pub fn monomials(r: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity((r + 1) * (r + 2) / 2);
    for d in 0..=r as u32 {
        for a in (0..=d).rev() {
            out.push((a, d - a));
        }
    }
    out
}

fn factorial(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// `∫_T̂ x^a y^b = a! b! / (a+b+2)!` on the reference triangle.
pub fn reference_moment(a: u32, b: u32) -> BigRational {
    BigRational::new(factorial(a) * factorial(b), factorial(a + b + 2))
}

/// Exact Gram–Schmidt of the monomials in graded-lex order.
///
/// Returns the unit lower-triangular coefficient rows `ψ_k = Σ_j L[k][j] m_j`
/// of the orthogonal (not yet normalized) polynomials and their squared
/// norms `(ψ_k, ψ_k)`.
pub fn exact_orthogonal_basis(r: usize) -> (Vec<Vec<BigRational>>, Vec<BigRational>) {
    let exps = monomials(r);
    let n = exps.len();
    let gram: Vec<Vec<BigRational>> = exps
        .iter()
        .map(|&(a, b)| exps.iter().map(|&(c, d)| reference_moment(a + c, b + d)).collect())
        .collect();
    let inner = |x: &[BigRational], y: &[BigRational]| -> BigRational {
        let mut s = BigRational::zero();
        for i in 0..n {
            if x[i].is_zero() {
                continue;
            }
            for j in 0..n {
                if !y[j].is_zero() {
                    s += &x[i] * &gram[i][j] * &y[j];
                }
            }
        }
        s
    };
    let mut rows: Vec<Vec<BigRational>> = Vec::with_capacity(n);
    let mut norms: Vec<BigRational> = Vec::with_capacity(n);
    for k in 0..n {
        let mut psi = vec![BigRational::zero(); n];
        psi[k] = BigRational::one();
        let mk = psi.clone();
        for j in 0..k {
            let c = inner(&mk, &rows[j]) / &norms[j];
            for (p, q) in psi.iter_mut().zip(&rows[j]) {
                *p -= &c * q;
            }
        }
        norms.push(inner(&psi, &psi));
        rows.push(psi);
    }
    (rows, norms)
}

/// Orthonormal basis of `𝒫_r` on the reference triangle.
#[derive(Debug, Clone)]
pub struct ReferenceBasis<T> {
    r: usize,
    exps: Vec<(u32, u32)>,
    /// Row `k` holds the monomial coefficients of `φ_k`.
    coeffs: Vec<T>,
}

impl<T: Real> ReferenceBasis<T> {
    pub fn new(r: usize) -> Result<Self> {
        if r > MAX_DEGREE {
            return Err(Error::UnsupportedDegree(r));
        }
        let (rows, norms) = exact_orthogonal_basis(r);
        let n = rows.len();
        let mut coeffs = vec![T::zero(); n * n];
        for k in 0..n {
            let s = norms[k].to_f64().expect("finite norm").sqrt();
            for j in 0..n {
                coeffs[k * n + j] = T::lit(rows[k][j].to_f64().expect("finite coefficient") / s);
            }
        }
        Ok(Self { r, exps: monomials(r), coeffs })
    }

    pub fn degree(&self) -> usize {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.exps.len()
    }

    fn powers(&self, t: T) -> Vec<T> {
        let mut p = Vec::with_capacity(self.r + 1);
        let mut acc = T::one();
        for _ in 0..=self.r {
            p.push(acc);
            acc = acc * t;
        }
        p
    }

    pub fn eval_into(&self, x: Point<T>, out: &mut [T]) {
        let n = self.dim();
        let (px, py) = (self.powers(x[0]), self.powers(x[1]));
        let m: Vec<T> = self.exps.iter().map(|&(a, b)| px[a as usize] * py[b as usize]).collect();
        for k in 0..n {
            out[k] = crate::scalar::dot(&self.coeffs[k * n..(k + 1) * n], &m);
        }
    }

    pub fn eval(&self, x: Point<T>) -> Vec<T> {
        let mut v = vec![T::zero(); self.dim()];
        self.eval_into(x, &mut v);
        v
    }

    /// Reference gradients `(∂_x̂ φ_k, ∂_ŷ φ_k)`.
    pub fn grad_into(&self, x: Point<T>, gx: &mut [T], gy: &mut [T]) {
        let n = self.dim();
        let (px, py) = (self.powers(x[0]), self.powers(x[1]));
        let mut mx = vec![T::zero(); n];
        let mut my = vec![T::zero(); n];
        for (j, &(a, b)) in self.exps.iter().enumerate() {
            if a > 0 {
                mx[j] = T::from_usize_lossy(a as usize) * px[a as usize - 1] * py[b as usize];
            }
            if b > 0 {
                my[j] = T::from_usize_lossy(b as usize) * px[a as usize] * py[b as usize - 1];
            }
        }
        for k in 0..n {
            let row = &self.coeffs[k * n..(k + 1) * n];
            gx[k] = crate::scalar::dot(row, &mx);
            gy[k] = crate::scalar::dot(row, &my);
        }
    }
}

/// Orthonormal Legendre values `√(2j+1) P_j(2s-1)` on `[0,1]`, `j = 0..=r`.
pub fn legendre_unit_into<T: Real>(r: usize, s: T, out: &mut [T]) {
    let x = T::lit(2.0) * s - T::one();
    let mut p0 = T::one();
    let mut p1 = x;
    for j in 0..=r {
        let pj = match j {
            0 => T::one(),
            1 => x,
            _ => {
                let jj = T::from_usize_lossy(j);
                let p2 = ((T::lit(2.0) * jj - T::one()) * x * p1 - (jj - T::one()) * p0) / jj;
                p0 = p1;
                p1 = p2;
                p2
            }
        };
        out[j] = (T::from_usize_lossy(2 * j + 1)).sqrt() * pj;
    }
}

/// Gauss–Legendre nodes and weights on `[0,1]`, nodes ascending.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    // P_n(z) and P_n'(z) by the three-term recurrence
    let legendre = |z: f64| -> (f64, f64) {
        let (mut p0, mut p1) = (0.0, 1.0);
        for j in 1..=n {
            let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
            p0 = p1;
            p1 = p2;
        }
        (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(z);
        let wi = 1.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.5;
    }
    (x, w)
}

/// Quadrature rule in `D` reference coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule<T, const D: usize> {
    pub points: Vec<[T; D]>,
    pub weights: Vec<T>,
    pub order: usize,
}

pub type TriangleRule<T> = QuadRule<T, 2>;
pub type EdgeRule<T> = QuadRule<T, 1>;

impl<T: Real, const D: usize> QuadRule<T, D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Collapsed Gauss–Legendre rule on the reference triangle, exact for total
/// degree `order`.
pub fn triangle_quadrature<T: Real>(order: usize) -> Result<TriangleRule<T>> {
    if order > MAX_TRIANGLE_ORDER {
        return Err(Error::UnsupportedOrder(order));
    }
    let (xu, wu) = gauss_legendre_unit((order + 2).div_ceil(2));
    let (xv, wv) = gauss_legendre_unit((order + 1).div_ceil(2).max(1));
    let mut points = Vec::with_capacity(xu.len() * xv.len());
    let mut weights = Vec::with_capacity(xu.len() * xv.len());
    for (u, a) in xu.iter().zip(&wu) {
        for (v, b) in xv.iter().zip(&wv) {
            points.push([T::lit(*u), T::lit(v * (1.0 - u))]);
            weights.push(T::lit(a * b * (1.0 - u)));
        }
    }
    Ok(QuadRule { points, weights, order })
}

/// Gauss–Legendre rule on `[0,1]` with `⌈(order+1)/2⌉` points.
pub fn edge_quadrature<T: Real>(order: usize) -> EdgeRule<T> {
    let (x, w) = gauss_legendre_unit((order + 1).div_ceil(2).max(1));
    QuadRule { points: x.into_iter().map(|v| [T::lit(v)]).collect(), weights: w.into_iter().map(T::lit).collect(), order }
}

/// Global index layout. Scalar spaces hold `d0` dofs per element, the vector
/// space stores the x-component block followed by the y-component block of
/// each element, and each trace space holds `r+1` dofs per facet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceLayout {
    pub r: usize,
    pub d0: usize,
    pub n_elements: usize,
    pub n_facets: usize,
}

impl SpaceLayout {
    pub fn new(r: usize, n_elements: usize, n_facets: usize) -> Result<Self> {
        if r > MAX_DEGREE {
            return Err(Error::UnsupportedDegree(r));
        }
        Ok(Self { r, d0: (r + 1) * (r + 2) / 2, n_elements, n_facets })
    }

    pub fn nt(&self) -> usize {
        self.r + 1
    }

    pub fn scalar_len(&self) -> usize {
        self.n_elements * self.d0
    }

    pub fn vector_len(&self) -> usize {
        2 * self.n_elements * self.d0
    }

    pub fn trace_len(&self) -> usize {
        self.n_facets * self.nt()
    }

    pub fn len(&self, form: FormDegree) -> usize {
        match form {
            FormDegree::One => self.vector_len(),
            _ => self.scalar_len(),
        }
    }

    pub fn scalar_block(&self, e: usize) -> Range<usize> {
        e * self.d0..(e + 1) * self.d0
    }

    pub fn vector_block(&self, e: usize) -> Range<usize> {
        2 * e * self.d0..2 * (e + 1) * self.d0
    }

    pub fn component_block(&self, e: usize, c: usize) -> Range<usize> {
        let s = 2 * e * self.d0 + c * self.d0;
        s..s + self.d0
    }

    pub fn trace_block(&self, f: usize) -> Range<usize> {
        f * self.nt()..(f + 1) * self.nt()
    }
}

/// Basis values at the quadrature points of a reference-triangle rule.
#[derive(Debug, Clone)]
pub struct VolumeCache<T> {
    pub rule: TriangleRule<T>,
    /// `phi[q*d0 + i]`
    pub phi: Vec<T>,
    pub dphi: [Vec<T>; 2],
}

impl<T: Real> VolumeCache<T> {
    pub fn new(basis: &ReferenceBasis<T>, order: usize) -> Result<Self> {
        let rule = triangle_quadrature(order)?;
        let d0 = basis.dim();
        let mut phi = vec![T::zero(); rule.len() * d0];
        let mut dx = vec![T::zero(); rule.len() * d0];
        let mut dy = vec![T::zero(); rule.len() * d0];
        for (q, p) in rule.points.iter().enumerate() {
            basis.eval_into(*p, &mut phi[q * d0..(q + 1) * d0]);
            basis.grad_into(*p, &mut dx[q * d0..(q + 1) * d0], &mut dy[q * d0..(q + 1) * d0]);
        }
        Ok(Self { rule, phi, dphi: [dx, dy] })
    }

    pub fn len(&self) -> usize {
        self.rule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.is_empty()
    }

    pub fn phi_at(&self, q: usize, d0: usize) -> &[T] {
        &self.phi[q * d0..(q + 1) * d0]
    }
}

/// One side of a facet as seen by the quadrature cache.
#[derive(Debug, Clone)]
pub struct SideCache<T> {
    pub element: usize,
    pub local_edge: usize,
    pub normal: Point<T>,
    /// Element basis values at the facet points, `phi[q*d0 + i]`.
    pub phi: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct FacetCache<T> {
    pub length: T,
    /// Physical weights (reference weight times length).
    pub weights: Vec<T>,
    /// Trace basis values, `trace[q*(r+1) + j]`.
    pub trace: Vec<T>,
    pub plus: SideCache<T>,
    pub minus: Option<SideCache<T>>,
}

impl<T: Real> FacetCache<T> {
    pub fn side(&self, kind: SideKind) -> Option<&SideCache<T>> {
        match kind {
            SideKind::Plus => Some(&self.plus),
            SideKind::Minus => self.minus.as_ref(),
        }
    }

    pub fn sides(&self) -> impl Iterator<Item = (SideKind, &SideCache<T>)> {
        std::iter::once((SideKind::Plus, &self.plus)).chain(self.minus.iter().map(|m| (SideKind::Minus, m)))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Mesh, layout, basis and every precomputed quadrature table.
#[derive(Debug, Clone)]
pub struct FeSpace<T> {
    mesh: Mesh<T>,
    layout: SpaceLayout,
    basis: ReferenceBasis<T>,
    maps: Vec<RefMap<T>>,
    volume: VolumeCache<T>,
    nonlinear: VolumeCache<T>,
    facets: Vec<FacetCache<T>>,
    /// Physical `(φ_i, ∂_x φ_j)` and `(φ_i, ∂_y φ_j)` per element, row-major.
    deriv: Vec<[Vec<T>; 2]>,
}

impl<T: Real> FeSpace<T> {
    /// Default rules: order `2r+3` on elements and facets, `4r+1` for the
    /// nonlinear load.
    pub fn new(mesh: Mesh<T>, r: usize) -> Result<Self> {
        Self::with_orders(mesh, r, 2 * r + 3, 2 * r + 3, 4 * r + 1)
    }

    pub fn with_orders(mesh: Mesh<T>, r: usize, volume_order: usize, edge_order: usize, nonlinear_order: usize) -> Result<Self> {
        let layout = SpaceLayout::new(r, mesh.num_elements(), mesh.num_facets())?;
        let basis = ReferenceBasis::new(r)?;
        let d0 = layout.d0;
        let maps: Vec<_> = (0..mesh.num_elements()).map(|e| mesh.refmap(e)).collect();
        let volume = VolumeCache::new(&basis, volume_order)?;
        let nonlinear = VolumeCache::new(&basis, nonlinear_order)?;

        // reference (φ̂_i, ∂_a φ̂_j)
        let mut rref = [vec![T::zero(); d0 * d0], vec![T::zero(); d0 * d0]];
        for q in 0..volume.len() {
            let w = volume.rule.weights[q];
            let phi = volume.phi_at(q, d0);
            for (a, ra) in rref.iter_mut().enumerate() {
                let dp = &volume.dphi[a][q * d0..(q + 1) * d0];
                for i in 0..d0 {
                    for j in 0..d0 {
                        ra[i * d0 + j] = ra[i * d0 + j] + w * phi[i] * dp[j];
                    }
                }
            }
        }
        let deriv = maps
            .iter()
            .map(|m| {
                let det = m.det.abs();
                let mk = |row: usize| -> Vec<T> {
                    (0..d0 * d0).map(|k| det * (m.inv_t[row][0] * rref[0][k] + m.inv_t[row][1] * rref[1][k])).collect()
                };
                [mk(0), mk(1)]
            })
            .collect();

        let erule = edge_quadrature::<T>(edge_order);
        let nt = layout.nt();
        let mut facets = Vec::with_capacity(mesh.num_facets());
        for (fi, f) in mesh.facets().iter().enumerate() {
            let nq = erule.len();
            let mut trace = vec![T::zero(); nq * nt];
            for q in 0..nq {
                legendre_unit_into(r, erule.points[q][0], &mut trace[q * nt..(q + 1) * nt]);
            }
            let side_cache = |kind: SideKind| -> Option<SideCache<T>> {
                let s = f.side(kind)?;
                let map = &maps[s.element];
                let mut phi = vec![T::zero(); nq * d0];
                for q in 0..nq {
                    let x = mesh.facet_point(fi, erule.points[q][0], kind);
                    let xr = map.inverse(x);
                    basis.eval_into(xr, &mut phi[q * d0..(q + 1) * d0]);
                }
                Some(SideCache { element: s.element, local_edge: s.local_edge, normal: f.normal_on(kind), phi })
            };
            facets.push(FacetCache {
                length: f.length,
                weights: erule.weights.iter().map(|w| *w * f.length).collect(),
                trace,
                plus: side_cache(SideKind::Plus).expect("plus side"),
                minus: side_cache(SideKind::Minus),
            });
        }
        Ok(Self { mesh, layout, basis, maps, volume, nonlinear, facets, deriv })
    }

    pub fn mesh(&self) -> &Mesh<T> {
        &self.mesh
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn basis(&self) -> &ReferenceBasis<T> {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.layout.r
    }

    pub fn d0(&self) -> usize {
        self.layout.d0
    }

    pub fn refmap(&self, e: usize) -> &RefMap<T> {
        &self.maps[e]
    }

    /// `|det J|`: the element mass matrix is this times the identity.
    pub fn mass_scale(&self, e: usize) -> T {
        self.maps[e].det.abs()
    }

    pub fn volume_cache(&self) -> &VolumeCache<T> {
        &self.volume
    }

    pub fn nonlinear_cache(&self) -> &VolumeCache<T> {
        &self.nonlinear
    }

    pub fn facet_cache(&self, f: usize) -> &FacetCache<T> {
        &self.facets[f]
    }

    pub fn facet_caches(&self) -> &[FacetCache<T>] {
        &self.facets
    }

    /// Physical `(φ_i, ∂_a φ_j)_K`, row-major `d0 × d0`.
    pub fn deriv_matrix(&self, e: usize, axis: usize) -> &[T] {
        &self.deriv[e][axis]
    }

    /// Diagonal of the mass matrix of the given space.
    pub fn mass_diagonal(&self, form: FormDegree) -> Vec<T> {
        let c = form.components();
        let mut m = Vec::with_capacity(self.layout.len(form));
        for e in 0..self.layout.n_elements {
            let s = self.mass_scale(e);
            m.extend(std::iter::repeat(s).take(c * self.d0()));
        }
        m
    }

    /// L² projection of a scalar function onto a scalar space.
    pub fn project_scalar(&self, f: impl Fn(Point<T>) -> T) -> Vec<T> {
        let cache = self.projection_cache();
        let d0 = self.d0();
        let mut out = vec![T::zero(); self.layout.scalar_len()];
        for e in 0..self.layout.n_elements {
            let map = &self.maps[e];
            let block = &mut out[self.layout.scalar_block(e)];
            for q in 0..cache.len() {
                let v = f(map.map(cache.rule.points[q])) * cache.rule.weights[q];
                for (b, p) in block.iter_mut().zip(cache.phi_at(q, d0)) {
                    *b = *b + v * *p;
                }
            }
        }
        out
    }

    /// L² projection of a vector function onto the vector space.
    pub fn project_vector(&self, f: impl Fn(Point<T>) -> [T; 2]) -> Vec<T> {
        let cache = self.projection_cache();
        let d0 = self.d0();
        let mut out = vec![T::zero(); self.layout.vector_len()];
        for e in 0..self.layout.n_elements {
            let map = &self.maps[e];
            let start = self.layout.vector_block(e).start;
            for q in 0..cache.len() {
                let v = f(map.map(cache.rule.points[q]));
                let w = cache.rule.weights[q];
                for (i, p) in cache.phi_at(q, d0).iter().enumerate() {
                    out[start + i] = out[start + i] + w * v[0] * *p;
                    out[start + d0 + i] = out[start + d0 + i] + w * v[1] * *p;
                }
            }
        }
        out
    }

    /// Projection of a field given as one closure per component, selected by form degree.
    pub fn l2_project(&self, form: FormDegree, f: impl Fn(Point<T>) -> [T; 2]) -> Vec<T> {
        match form {
            FormDegree::One => self.project_vector(f),
            _ => self.project_scalar(|x| f(x)[0]),
        }
    }

    fn projection_cache(&self) -> VolumeCache<T> {
        VolumeCache::new(&self.basis, (2 * self.degree() + 8).min(MAX_TRIANGLE_ORDER)).expect("projection rule")
    }

    /// Value of a scalar field at a reference point of element `e`.
    pub fn eval_scalar(&self, coeffs: &[T], e: usize, xr: Point<T>) -> T {
        let phi = self.basis.eval(xr);
        crate::scalar::dot(&coeffs[self.layout.scalar_block(e)], &phi)
    }

    pub fn eval_vector(&self, coeffs: &[T], e: usize, xr: Point<T>) -> [T; 2] {
        let phi = self.basis.eval(xr);
        [
            crate::scalar::dot(&coeffs[self.layout.component_block(e, 0)], &phi),
            crate::scalar::dot(&coeffs[self.layout.component_block(e, 1)], &phi),
        ]
    }

    /// Element containing physical point `x` (first hit), with its reference coordinates.
    pub fn locate(&self, x: Point<T>) -> Option<(usize, Point<T>)> {
        let tol = T::lit(1e-12);
        for (e, m) in self.maps.iter().enumerate() {
            let xr = m.inverse(x);
            if xr[0] >= -tol && xr[1] >= -tol && xr[0] + xr[1] <= T::one() + tol {
                return Some((e, xr));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_periodic_rect_mesh;
    use proptest::prelude::*;

    fn moment_f64(a: u32, b: u32) -> f64 {
        reference_moment(a, b).to_f64().unwrap()
    }

    #[test]
    fn exact_basis_is_orthogonal() {
        for r in 0..=MAX_DEGREE {
            let (rows, norms) = exact_orthogonal_basis(r);
            let exps = monomials(r);
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    let mut s = BigRational::zero();
                    for (a, ea) in exps.iter().enumerate() {
                        for (b, eb) in exps.iter().enumerate() {
                            s += &rows[i][a] * &rows[j][b] * reference_moment(ea.0 + eb.0, ea.1 + eb.1);
                        }
                    }
                    if i == j {
                        assert_eq!(s, norms[i]);
                    } else {
                        assert!(s.is_zero());
                    }
                }
            }
        }
    }

    #[test]
    fn degree_zero_is_sqrt_two() {
        let b = ReferenceBasis::<f64>::new(0).unwrap();
        assert_eq!(b.dim(), 1);
        assert!((b.eval([0.3, 0.2])[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn unsupported_degree() {
        assert!(matches!(ReferenceBasis::<f64>::new(6), Err(Error::UnsupportedDegree(6))));
    }

    #[test]
    fn gram_is_identity() {
        for r in 0..=MAX_DEGREE {
            let b = ReferenceBasis::<f64>::new(r).unwrap();
            let c = VolumeCache::new(&b, 2 * r).unwrap();
            let n = b.dim();
            for i in 0..n {
                for j in 0..n {
                    let s: f64 = (0..c.len()).map(|q| c.rule.weights[q] * c.phi[q * n + i] * c.phi[q * n + j]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((s - expect).abs() < 1e-12, "r={r} ({i},{j}) {s}");
                }
            }
        }
    }

    #[test]
    fn cubic_monomials_reproduced() {
        let r = 3;
        let b = ReferenceBasis::<f64>::new(r).unwrap();
        let c = VolumeCache::new(&b, 2 * r + 2).unwrap();
        let n = b.dim();
        for (a, e) in monomials(r) {
            let f = |p: [f64; 2]| p[0].powi(a as i32) * p[1].powi(e as i32);
            let coef: Vec<f64> = (0..n)
                .map(|i| (0..c.len()).map(|q| c.rule.weights[q] * f(c.rule.points[q]) * c.phi[q * n + i]).sum())
                .collect();
            for x in [[0.1, 0.2], [0.5, 0.4], [0.0, 0.9]] {
                let v: f64 = b.eval(x).iter().zip(&coef).map(|(p, c)| p * c).sum();
                assert!((v - f(x)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = ReferenceBasis::<f64>::new(4).unwrap();
        let n = b.dim();
        let x = [0.23, 0.41];
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        b.grad_into(x, &mut gx, &mut gy);
        let h = 1e-6;
        let fx: Vec<f64> = b.eval([x[0] + h, x[1]]).iter().zip(b.eval([x[0] - h, x[1]])).map(|(a, c)| (a - c) / (2.0 * h)).collect();
        let fy: Vec<f64> = b.eval([x[0], x[1] + h]).iter().zip(b.eval([x[0], x[1] - h])).map(|(a, c)| (a - c) / (2.0 * h)).collect();
        for k in 0..n {
            assert!((gx[k] - fx[k]).abs() < 1e-6 * (1.0 + gx[k].abs()));
            assert!((gy[k] - fy[k]).abs() < 1e-6 * (1.0 + gy[k].abs()));
        }
    }

    #[test]
    fn triangle_rules_integrate_moments() {
        for order in 0..=20 {
            let rule = triangle_quadrature::<f64>(order).unwrap();
            for d in 0..=order as u32 {
                for a in 0..=d {
                    let b = d - a;
                    let s: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32)).sum();
                    assert!((s - moment_f64(a, b)).abs() < 1e-14, "order {order}, x^{a} y^{b}");
                }
            }
        }
        assert!(matches!(triangle_quadrature::<f64>(MAX_TRIANGLE_ORDER + 1), Err(Error::UnsupportedOrder(_))));
    }

    #[test]
    fn order_two_weights_sum_to_half() {
        let rule = triangle_quadrature::<f64>(2).unwrap();
        assert!((rule.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn edge_rule_fifth_power() {
        let rule = edge_quadrature::<f64>(5);
        assert_eq!(rule.len(), 3);
        let s: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * p[0].powi(5)).sum();
        assert!((s - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn edge_rules_are_symmetric() {
        for order in 0..30 {
            let rule = edge_quadrature::<f64>(order);
            let n = rule.len();
            for i in 0..n {
                assert!((rule.points[i][0] + rule.points[n - 1 - i][0] - 1.0).abs() < 1e-15);
                assert_eq!(rule.weights[i], rule.weights[n - 1 - i]);
            }
            for k in 0..=order as i32 {
                let s: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * p[0].powi(k)).sum();
                assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn legendre_orthonormal() {
        let r = 5;
        let rule = edge_quadrature::<f64>(2 * r);
        let mut v = vec![0.0; r + 1];
        let mut g = vec![0.0; (r + 1) * (r + 1)];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            legendre_unit_into(r, p[0], &mut v);
            for i in 0..=r {
                for j in 0..=r {
                    g[i * (r + 1) + j] += w * v[i] * v[j];
                }
            }
        }
        for i in 0..=r {
            for j in 0..=r {
                assert!((g[i * (r + 1) + j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn layout_counts() {
        let mesh = build_periodic_rect_mesh::<f64>(3, 2, 1.0, 1.0, true, true).unwrap();
        let sp = FeSpace::new(mesh, 2).unwrap();
        let l = sp.layout();
        assert_eq!(l.d0, 6);
        assert_eq!(l.scalar_len(), 12 * 6);
        assert_eq!(l.vector_len(), 2 * 12 * 6);
        assert_eq!(l.trace_len(), 18 * 3);
        assert_eq!(l.component_block(1, 1), 18..24);
    }

    #[test]
    fn constant_vector_projection() {
        let mesh = build_periodic_rect_mesh::<f64>(4, 3, 1.0, 1.0, true, true).unwrap();
        let sp = FeSpace::new(mesh, 2).unwrap();
        let c = sp.project_vector(|_| [1.0, 0.0]);
        for e in 0..sp.layout().n_elements {
            for x in [[0.1, 0.1], [0.3, 0.6]] {
                let v = sp.eval_vector(&c, e, x);
                assert!((v[0] - 1.0).abs() < 1e-13 && v[1].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn xy_reproduced_for_r2() {
        let mesh = build_periodic_rect_mesh::<f64>(3, 3, 1.0, 1.0, false, false).unwrap();
        for r in 2..=3 {
            let sp = FeSpace::new(mesh.clone(), r).unwrap();
            let c = sp.project_scalar(|p| p[0] * p[1]);
            for e in 0..sp.layout().n_elements {
                let xr = [0.2, 0.3];
                let x = sp.refmap(e).map(xr);
                assert!((sp.eval_scalar(&c, e, xr) - x[0] * x[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn plane_wave_projection_converges_at_second_order() {
        let mut errs = Vec::new();
        for k in 0..3 {
            let nx = 10 << k;
            let mesh = build_periodic_rect_mesh::<f64>(nx, (nx / 10).max(1), 1.0, 0.1, true, true).unwrap();
            let sp = FeSpace::new(mesh, 1).unwrap();
            let u = |p: [f64; 2]| [0.0, (4.0 * std::f64::consts::PI * p[0]).sin()];
            let c = sp.project_vector(u);
            let cache = VolumeCache::new(sp.basis(), 8).unwrap();
            let mut err = 0.0;
            for e in 0..sp.layout().n_elements {
                let m = sp.refmap(e);
                for q in 0..cache.len() {
                    let xr = cache.rule.points[q];
                    let v = sp.eval_vector(&c, e, xr);
                    let ex = u(m.map(xr));
                    err += cache.rule.weights[q] * m.det * ((v[0] - ex[0]).powi(2) + (v[1] - ex[1]).powi(2));
                }
            }
            errs.push(err.sqrt());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
        }
    }

    #[test]
    fn mass_diagonal_condition() {
        let mesh = build_periodic_rect_mesh::<f64>(2, 2, 1.0, 2.0, true, true).unwrap();
        let sp = FeSpace::new(mesh, 3).unwrap();
        let m = sp.mass_diagonal(FormDegree::One);
        let (lo, hi) = m.iter().fold((f64::MAX, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(hi / lo <= 10.0);
        assert!((m[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn f32_basis() {
        let b = ReferenceBasis::<f32>::new(2).unwrap();
        assert!((b.eval([0.2, 0.2])[0] - std::f32::consts::SQRT_2).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn projection_of_space_member_is_exact(seed in 0u64..1000, r in 0usize..4) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mesh = build_periodic_rect_mesh::<f64>(2, 2, 1.0, 1.0, true, true).unwrap();
            let sp = FeSpace::new(mesh, r).unwrap();
            let exps = monomials(r);
            let coef: Vec<f64> = exps.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let poly = |p: [f64; 2]| exps.iter().zip(&coef).map(|(&(a, b), c)| c * p[0].powi(a as i32) * p[1].powi(b as i32)).sum::<f64>();
            let c = sp.project_scalar(poly);
            for e in 0..sp.layout().n_elements {
                let xr = [0.31, 0.27];
                let x = sp.refmap(e).map(xr);
                prop_assert!((sp.eval_scalar(&c, e, xr) - poly(x)).abs() < 1e-12);
            }
        }
    }
}
