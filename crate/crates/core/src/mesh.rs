//! Triangulations with oriented facets and optional periodic identification.
//!
//! Facets are enumerated canonically by their sorted endpoint vertex
//! indices. Periodic twins are merged into one facet record; the lower
//! element index becomes the plus side, and the minus side is reached by a
//! translation `shift` (zero for ordinary interior facets).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Point<T> = [T; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Side {
    pub element: usize,
    pub local_edge: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SideKind {
    Plus,
    Minus,
}

impl SideKind {
    /// +1 on the plus side, -1 on the minus side.
    pub fn sign<T: Real>(self) -> T {
        match self {
            SideKind::Plus => T::one(),
            SideKind::Minus => -T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Facet<T> {
    /// Vertices of the plus-side edge, sorted by index.
    pub endpoints: [usize; 2],
    pub plus: Side,
    pub minus: Option<Side>,
    /// Unit normal pointing out of the plus element.
    pub normal: Point<T>,
    pub length: T,
    /// Minus-side coordinates equal plus-side coordinates plus `shift`.
    pub shift: Point<T>,
}

impl<T: Real> Facet<T> {
    pub fn side(&self, kind: SideKind) -> Option<Side> {
        match kind {
            SideKind::Plus => Some(self.plus),
            SideKind::Minus => self.minus,
        }
    }

    pub fn is_boundary(&self) -> bool {
        self.minus.is_none()
    }

    /// Outward normal as seen from the given side.
    pub fn normal_on(&self, kind: SideKind) -> Point<T> {
        let s = kind.sign::<T>();
        [s * self.normal[0], s * self.normal[1]]
    }

    pub fn sides(&self) -> impl Iterator<Item = (SideKind, Side)> + '_ {
        std::iter::once((SideKind::Plus, self.plus)).chain(self.minus.map(|m| (SideKind::Minus, m)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetGeometry<T> {
    pub normal: Point<T>,
    pub length: T,
    pub midpoint: Point<T>,
}

/// Affine map from the reference triangle `(0,0), (1,0), (0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefMap<T> {
    pub element: usize,
    pub origin: Point<T>,
    /// Columns are the images of the reference edge vectors.
    pub jacobian: [[T; 2]; 2],
    pub det: T,
    /// Inverse transpose of the Jacobian; maps reference gradients to physical ones.
    pub inv_t: [[T; 2]; 2],
}

impl<T: Real> RefMap<T> {
    fn new(element: usize, v: [Point<T>; 3]) -> Self {
        let j = [[v[1][0] - v[0][0], v[2][0] - v[0][0]], [v[1][1] - v[0][1], v[2][1] - v[0][1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv_t = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
        Self { element, origin: v[0], jacobian: j, det, inv_t }
    }

    pub fn map(&self, xr: Point<T>) -> Point<T> {
        let j = &self.jacobian;
        [
            self.origin[0] + j[0][0] * xr[0] + j[0][1] * xr[1],
            self.origin[1] + j[1][0] * xr[0] + j[1][1] * xr[1],
        ]
    }

    pub fn inverse(&self, x: Point<T>) -> Point<T> {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        // J⁻¹ = (J⁻ᵀ)ᵀ
        let it = &self.inv_t;
        [it[0][0] * d[0] + it[1][0] * d[1], it[0][1] * d[0] + it[1][1] * d[1]]
    }

    /// Physical gradient from a reference gradient.
    #[inline]
    pub fn grad(&self, g: Point<T>) -> Point<T> {
        let it = &self.inv_t;
        [it[0][0] * g[0] + it[0][1] * g[1], it[1][0] * g[0] + it[1][1] * g[1]]
    }
}

#[derive(Debug, Clone)]
struct RawEdge {
    key: (usize, usize),
    sides: Vec<Side>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    vertices: Vec<Point<T>>,
    triangles: Vec<[usize; 3]>,
    facets: Vec<Facet<T>>,
    element_facets: Vec<[usize; 3]>,
    /// Periodic pairs in the canonical (pre-merge) facet enumeration.
    periodic_pairs: Vec<(usize, usize)>,
}

fn edge_vertices(tri: &[usize; 3], i: usize) -> (usize, usize) {
    (tri[i], tri[(i + 1) % 3])
}

fn canonical_edges(triangles: &[[usize; 3]]) -> Result<Vec<RawEdge>> {
    let mut map: BTreeMap<(usize, usize), Vec<Side>> = BTreeMap::new();
    for (e, tri) in triangles.iter().enumerate() {
        for i in 0..3 {
            let (a, b) = edge_vertices(tri, i);
            map.entry((a.min(b), a.max(b))).or_default().push(Side { element: e, local_edge: i });
        }
    }
    let mut out = Vec::with_capacity(map.len());
    for (key, sides) in map {
        if sides.len() > 2 {
            return Err(Error::Topology(format!("non-manifold edge ({}, {}) shared by {} triangles", key.0, key.1, sides.len())));
        }
        if sides.len() == 2 {
            let a = edge_vertices(&triangles[sides[0].element], sides[0].local_edge);
            let b = edge_vertices(&triangles[sides[1].element], sides[1].local_edge);
            if a == b {
                return Err(Error::Topology(format!("edge ({}, {}) has inconsistent orientation", key.0, key.1)));
            }
        }
        out.push(RawEdge { key, sides });
    }
    Ok(out)
}

impl<T: Real> Mesh<T> {
    /// Builds a mesh from vertices, counterclockwise triangles and periodic
    /// facet pairs given in canonical enumeration order.
    pub fn from_parts(vertices: Vec<Point<T>>, triangles: Vec<[usize; 3]>, periodic_pairs: Vec<(usize, usize)>) -> Result<Self> {
        let nv = vertices.len();
        for tri in &triangles {
            for &v in tri {
                if v >= nv {
                    return Err(Error::IndexOutOfRange { index: v, len: nv });
                }
            }
        }
        for (e, tri) in triangles.iter().enumerate() {
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(a > T::zero()) {
                return Err(Error::Topology(format!("triangle {e} is inverted or degenerate (signed area {a})")));
            }
        }
        let raw = canonical_edges(&triangles)?;
        let scale = vertices.iter().fold(T::one(), |m, p| m.max(p[0].abs()).max(p[1].abs()));
        let tol = scale * T::lit(1e-10);

        let mut twin: Vec<Option<usize>> = vec![None; raw.len()];
        for &(a, b) in &periodic_pairs {
            for &x in &[a, b] {
                if x >= raw.len() {
                    return Err(Error::IndexOutOfRange { index: x, len: raw.len() });
                }
                if raw[x].sides.len() != 1 {
                    return Err(Error::Topology(format!("periodic facet {x} is not a boundary facet")));
                }
                if twin[x].is_some() {
                    return Err(Error::Topology(format!("facet {x} appears in more than one periodic pair")));
                }
            }
            if a == b {
                return Err(Error::Topology(format!("facet {a} paired with itself")));
            }
            twin[a] = Some(b);
            twin[b] = Some(a);
        }

        let mut facets = Vec::with_capacity(raw.len());
        let mut raw_to_facet = vec![usize::MAX; raw.len()];
        for (ri, edge) in raw.iter().enumerate() {
            let mut sides = edge.sides.clone();
            let mut shift = [T::zero(), T::zero()];
            if let Some(t) = twin[ri] {
                if t < ri {
                    continue;
                }
                sides.push(raw[t].sides[0]);
            }
            sides.sort_by_key(|s| (s.element, s.local_edge));
            let plus = sides[0];
            let minus = sides.get(1).copied();
            let (a, b) = edge_vertices(&triangles[plus.element], plus.local_edge);
            let (pa, pb) = (vertices[a], vertices[b]);
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let length = d[0].hypot(d[1]);
            let normal = [d[1] / length, -d[0] / length];
            if let (Some(m), Some(_)) = (minus, twin[ri]) {
                let (c, e) = edge_vertices(&triangles[m.element], m.local_edge);
                let (qc, qe) = (vertices[c], vertices[e]);
                // opposite orientation: c matches b, e matches a
                let s = [qe[0] - pa[0], qe[1] - pa[1]];
                let s2 = [qc[0] - pb[0], qc[1] - pb[1]];
                if (s[0] - s2[0]).abs() > tol || (s[1] - s2[1]).abs() > tol {
                    return Err(Error::Topology(format!(
                        "periodic facets {} and {} are not translates of each other",
                        ri,
                        twin[ri].unwrap_or(ri)
                    )));
                }
                shift = s;
            }
            raw_to_facet[ri] = facets.len();
            facets.push(Facet { endpoints: [a.min(b), a.max(b)], plus, minus, normal, length, shift });
        }
        for (ri, t) in twin.iter().enumerate() {
            if let Some(t) = t {
                if raw_to_facet[ri] == usize::MAX {
                    raw_to_facet[ri] = raw_to_facet[*t];
                }
            }
        }
        let mut element_facets = vec![[usize::MAX; 3]; triangles.len()];
        for (ri, edge) in raw.iter().enumerate() {
            for s in &edge.sides {
                element_facets[s.element][s.local_edge] = raw_to_facet[ri];
            }
        }
        Ok(Self { vertices, triangles, facets, element_facets, periodic_pairs })
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn facets(&self) -> &[Facet<T>] {
        &self.facets
    }

    pub fn facet(&self, f: usize) -> &Facet<T> {
        &self.facets[f]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn periodic_pairs(&self) -> &[(usize, usize)] {
        &self.periodic_pairs
    }

    /// Facet index of each local edge of element `e`.
    pub fn element_facets(&self, e: usize) -> [usize; 3] {
        self.element_facets[e]
    }

    /// Which side of facet `f` element `e` sits on through local edge `i`.
    pub fn side_kind(&self, e: usize, i: usize) -> SideKind {
        let f = &self.facets[self.element_facets[e][i]];
        if f.plus == (Side { element: e, local_edge: i }) {
            SideKind::Plus
        } else {
            SideKind::Minus
        }
    }

    pub fn element_vertices(&self, e: usize) -> [Point<T>; 3] {
        let t = self.triangles[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn refmap(&self, e: usize) -> RefMap<T> {
        RefMap::new(e, self.element_vertices(e))
    }

    pub fn area(&self, e: usize) -> T {
        let v = self.element_vertices(e);
        signed_area(v[0], v[1], v[2])
    }

    pub fn total_area(&self) -> T {
        (0..self.num_elements()).map(|e| self.area(e)).sum()
    }

    /// Longest edge in the mesh.
    pub fn h(&self) -> T {
        self.facets.iter().fold(T::zero(), |m, f| m.max(f.length))
    }

    pub fn is_fully_periodic(&self) -> bool {
        self.facets.iter().all(|f| f.minus.is_some())
    }

    pub fn facet_geometry(&self, f: usize) -> Result<FacetGeometry<T>> {
        let facet = self.facets.get(f).ok_or(Error::IndexOutOfRange { index: f, len: self.facets.len() })?;
        let a = self.vertices[facet.endpoints[0]];
        let b = self.vertices[facet.endpoints[1]];
        let half = T::lit(0.5);
        Ok(FacetGeometry {
            normal: facet.normal,
            length: facet.length,
            midpoint: [half * (a[0] + b[0]), half * (a[1] + b[1])],
        })
    }

    /// Point at arclength fraction `s` along the facet, measured from the
    /// lower-index endpoint, in the coordinates of the given side.
    pub fn facet_point(&self, f: usize, s: T, kind: SideKind) -> Point<T> {
        let facet = &self.facets[f];
        let a = self.vertices[facet.endpoints[0]];
        let b = self.vertices[facet.endpoints[1]];
        let mut p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        if kind == SideKind::Minus {
            p[0] = p[0] + facet.shift[0];
            p[1] = p[1] + facet.shift[1];
        }
        p
    }

    /// Serializes to the ASCII mesh format read by [`load_mesh`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.vertices.len(), self.triangles.len(), self.periodic_pairs.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{} {}", v[0].as_f64(), v[1].as_f64());
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for (a, b) in &self.periodic_pairs {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }
}

fn signed_area<T: Real>(a: Point<T>, b: Point<T>, c: Point<T>) -> T {
    T::lit(0.5) * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Structured mesh of `[0,lx]×[0,ly]`: every cell is split along its
/// lower-left to upper-right diagonal.
pub fn build_periodic_rect_mesh<T: Real>(nx: usize, ny: usize, lx: T, ly: T, periodic_x: bool, periodic_y: bool) -> Result<Mesh<T>> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!("cell counts must be positive (nx = {nx}, ny = {ny})")));
    }
    if !(lx > T::zero()) || !(ly > T::zero()) {
        return Err(Error::InvalidArgument(format!("domain lengths must be positive (Lx = {lx}, Ly = {ly})")));
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = lx * T::from_usize_lossy(i) / T::from_usize_lossy(nx);
            let y = ly * T::from_usize_lossy(j) / T::from_usize_lossy(ny);
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let raw = canonical_edges(&triangles)?;
    let index_of = |a: usize, b: usize| -> usize {
        let key = (a.min(b), a.max(b));
        raw.binary_search_by(|e| e.key.cmp(&key)).expect("structured edge missing")
    };
    let mut pairs = Vec::new();
    if periodic_x {
        for j in 0..ny {
            pairs.push((index_of(vid(0, j), vid(0, j + 1)), index_of(vid(nx, j), vid(nx, j + 1))));
        }
    }
    if periodic_y {
        for i in 0..nx {
            pairs.push((index_of(vid(i, 0), vid(i + 1, 0)), index_of(vid(i, ny), vid(i + 1, ny))));
        }
    }
    Mesh::from_parts(vertices, triangles, pairs)
}

/// Parses the ASCII mesh format: a header `NV NT NP`, then `NV` vertex
/// lines `x y`, `NT` triangle lines `v0 v1 v2` and `NP` periodic pair lines
/// `facetA facetB`. Text after `#` is ignored.
pub fn load_mesh<T: Real>(text: &str) -> Result<Mesh<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    fn fields<'a>(line: usize, l: &'a str, n: usize) -> Result<Vec<&'a str>> {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != n {
            return Err(Error::Parse { line, message: format!("expected {n} fields, found {}", f.len()) });
        }
        Ok(f)
    }
    fn int(line: usize, s: &str) -> Result<usize> {
        s.parse().map_err(|_| Error::Parse { line, message: format!("invalid integer '{s}'") })
    }
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse { line: 0, message: format!("unexpected end of input while reading {what}") });

    let (ln, header) = next("header")?;
    let h = fields(ln, header, 3)?;
    let (nv, nt, np) = (int(ln, h[0])?, int(ln, h[1])?, int(ln, h[2])?);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = next("vertices")?;
        let f = fields(ln, l, 2)?;
        let mut p = [T::zero(); 2];
        for k in 0..2 {
            let x: f64 = f[k].parse().map_err(|_| Error::Parse { line: ln, message: format!("invalid coordinate '{}'", f[k]) })?;
            if !x.is_finite() {
                return Err(Error::Parse { line: ln, message: "non-finite coordinate".into() });
            }
            p[k] = T::lit(x);
        }
        vertices.push(p);
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, l) = next("triangles")?;
        let f = fields(ln, l, 3)?;
        let t = [int(ln, f[0])?, int(ln, f[1])?, int(ln, f[2])?];
        if let Some(&bad) = t.iter().find(|&&v| v >= nv) {
            return Err(Error::Parse { line: ln, message: format!("vertex index {bad} out of range") });
        }
        triangles.push(t);
    }
    let mut pairs = Vec::with_capacity(np);
    for _ in 0..np {
        let (ln, l) = next("periodic pairs")?;
        let f = fields(ln, l, 2)?;
        pairs.push((int(ln, f[0])?, int(ln, f[1])?));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::Parse { line: ln, message: "trailing content after periodic pairs".into() });
    }
    Mesh::from_parts(vertices, triangles, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_square_two_triangles() {
        let m = build_periodic_rect_mesh::<f64>(1, 1, 1.0, 1.0, false, false).unwrap();
        assert_eq!(m.num_elements(), 2);
        assert_eq!(m.num_facets(), 5);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn paper_linear_mesh_counts() {
        let m = build_periodic_rect_mesh::<f64>(40, 4, 1.0, 0.1, true, true).unwrap();
        assert_eq!(m.num_elements(), 320);
        assert!(m.is_fully_periodic());
        assert_eq!(m.num_facets(), 3 * 320 / 2);
        assert!((m.h() - 0.025f64.hypot(0.025)).abs() < 1e-15);
        assert!((m.total_area() - 0.1).abs() < 1e-14);
    }

    #[test]
    fn periodic_in_x_only() {
        let m = build_periodic_rect_mesh::<f64>(2, 1, 2.0, 1.0, true, false).unwrap();
        for f in m.facets() {
            let a = m.vertices()[f.endpoints[0]];
            let b = m.vertices()[f.endpoints[1]];
            let horizontal_boundary = a[1] == b[1] && (a[1] == 0.0 || a[1] == 1.0);
            assert_eq!(f.minus.is_none(), horizontal_boundary);
            if a[0] == 0.0 && b[0] == 0.0 {
                assert_eq!(f.shift, [2.0, 0.0]);
            }
        }
        assert_eq!(m.facets().iter().filter(|f| f.shift[0] != 0.0).count(), 1);
    }

    #[test]
    fn horizontal_facet_normal() {
        // plus element above the edge (0,0)-(1,0)
        let m: Mesh<f64> = load_mesh("3 1 0\n0 0\n1 0\n0 1\n0 1 2\n").unwrap();
        let f = m.facets().iter().position(|f| f.endpoints == [0, 1]).unwrap();
        let g = m.facet_geometry(f).unwrap();
        assert_eq!(g.normal, [0.0, -1.0]);
        assert_eq!(g.length, 1.0);
        assert_eq!(g.midpoint, [0.5, 0.0]);
        assert!(matches!(m.facet_geometry(3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn diagonal_facet() {
        let m = build_periodic_rect_mesh::<f64>(1, 1, 1.0, 1.0, false, false).unwrap();
        let f = m.facets().iter().position(|f| f.endpoints == [0, 3]).unwrap();
        let g = m.facet_geometry(f).unwrap();
        assert!((g.length - 2f64.sqrt()).abs() < 1e-15);
        // plus side is element 0, which lies below the diagonal
        let s = 1.0 / 2f64.sqrt();
        assert!((g.normal[0] + s).abs() < 1e-15 && (g.normal[1] - s).abs() < 1e-15);
    }

    #[test]
    fn single_triangle_from_text() {
        let m: Mesh<f64> = load_mesh("# one element\n3 1 0\n0 0\n1 0\n0 1\n0 1 2 # ccw\n").unwrap();
        assert_eq!(m.area(0), 0.5);
        assert_eq!(m.facets().iter().filter(|f| f.is_boundary()).count(), 3);
    }

    #[test]
    fn clockwise_triangle_rejected() {
        let err = load_mesh::<f64>("3 1 0\n0 0\n0 1\n1 0\n0 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
    }

    #[test]
    fn non_manifold_edge_rejected() {
        let text = "5 3 0\n0 0\n1 0\n0 1\n0 -1\n1 1\n0 1 2\n1 0 3\n0 1 4\n";
        assert!(matches!(load_mesh::<f64>(text), Err(Error::Topology(_))));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match load_mesh::<f64>("3 1 0\n0 0\n1 x\n0 1\n0 1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load_mesh::<f64>("3 1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn round_trip_preserves_adjacency() {
        let m = build_periodic_rect_mesh::<f64>(5, 3, 1.0, 0.6, true, true).unwrap();
        let m2: Mesh<f64> = load_mesh(&m.to_text()).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(build_periodic_rect_mesh::<f64>(0, 1, 1.0, 1.0, false, false).is_err());
        assert!(build_periodic_rect_mesh::<f64>(1, 1, -1.0, 1.0, false, false).is_err());
    }

    #[test]
    fn refmap_inverse() {
        let m = build_periodic_rect_mesh::<f64>(3, 2, 1.5, 1.0, true, true).unwrap();
        for e in 0..m.num_elements() {
            let r = m.refmap(e);
            assert!(r.det > 0.0);
            for p in [[0.2, 0.3], [0.0, 1.0], [0.7, 0.1]] {
                let q = r.inverse(r.map(p));
                assert!((q[0] - p[0]).abs() < 1e-13 && (q[1] - p[1]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn twin_points_match_by_translation() {
        let m = build_periodic_rect_mesh::<f64>(4, 2, 1.0, 0.5, true, true).unwrap();
        for (fi, f) in m.facets().iter().enumerate() {
            let m_side = f.minus.unwrap();
            let xm = m.facet_point(fi, 0.3, SideKind::Minus);
            // the minus point must lie on the minus element's edge
            let (a, b) = edge_vertices(&m.triangles()[m_side.element], m_side.local_edge);
            let (pa, pb) = (m.vertices()[a], m.vertices()[b]);
            let cross = (pb[0] - pa[0]) * (xm[1] - pa[1]) - (pb[1] - pa[1]) * (xm[0] - pa[0]);
            assert!(cross.abs() < 1e-14);
            // minus outward normal is the negation of the plus normal
            let (c, d) = (pa, pb);
            let len = (d[0] - c[0]).hypot(d[1] - c[1]);
            let nm = [(d[1] - c[1]) / len, -(d[0] - c[0]) / len];
            assert!((nm[0] + f.normal[0]).abs() < 1e-14 && (nm[1] + f.normal[1]).abs() < 1e-14);
            assert!((len - f.length).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn structured_invariants(nx in 1usize..7, ny in 1usize..7, lx in 0.1f64..3.0, ly in 0.1f64..3.0, px: bool, py: bool) {
            let m = build_periodic_rect_mesh::<f64>(nx, ny, lx, ly, px, py).unwrap();
            prop_assert_eq!(m.num_elements(), 2 * nx * ny);
            prop_assert!((m.total_area() - lx * ly).abs() <= 1e-12 * lx * ly);
            let mut count = vec![0usize; m.num_elements()];
            for f in m.facets() {
                prop_assert!((f.normal[0].hypot(f.normal[1]) - 1.0).abs() < 1e-14);
                for (_, s) in f.sides() {
                    count[s.element] += 1;
                }
            }
            prop_assert!(count.iter().all(|&c| c == 3));
            if px && py {
                prop_assert_eq!(m.num_facets() * 2, 3 * m.num_elements());
                prop_assert!(m.is_fully_periodic());
            }
            for e in 0..m.num_elements() {
                for i in 0..3 {
                    let f = m.facet(m.element_facets(e)[i]);
                    prop_assert_eq!(f.side(m.side_kind(e, i)).unwrap(), Side { element: e, local_edge: i });
                }
            }
        }
    }
}
