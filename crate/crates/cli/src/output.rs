//! File writers: time-series CSV, line cross-sections and legacy VTK.

use std::fmt::Write as _;

use hodge_ldgh::calculus::FieldState;
use hodge_ldgh::diagnostics::sample_line;
use hodge_ldgh::exact::ExactSolution;
use hodge_ldgh::fespace::FeSpace;

use crate::run::{Row, CSV_HEADER};

pub fn timeseries_csv(rows: &[Row]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Columns `x, u_y_numeric, u_y_exact` along `y = y0`.
pub fn cross_section_csv(space: &FeSpace<f64>, state: &FieldState<f64>, exact: Option<&ExactSolution<f64>>, y0: f64, n: usize) -> String {
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in space.mesh().vertices() {
        x0 = x0.min(v[0]);
        x1 = x1.max(v[0]);
    }
    let mut s = String::from("x,u_y_numeric,u_y_exact\n");
    for (x, u) in sample_line(space, &state.u, y0, x0, x1, n) {
        let ex = exact.map(|e| format!("{:.16e}", e.u(state.t, x)[1])).unwrap_or_default();
        let _ = writeln!(s, "{:.16e},{:.16e},{}", x[0], u[1], ex);
    }
    s
}

/// Legacy ASCII VTK unstructured grid. Every triangle gets its own three
/// points so that the discontinuous fields are represented exactly at the
/// vertices.
pub fn vtk(space: &FeSpace<f64>, state: &FieldState<f64>, title: &str) -> String {
    let mesh = space.mesh();
    let ne = mesh.num_elements();
    let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", 3 * ne);
    for e in 0..ne {
        let rm = space.refmap(e);
        for c in corners {
            let x = rm.map(c);
            let _ = writeln!(s, "{:.16e} {:.16e} 0", x[0], x[1]);
        }
    }
    let _ = writeln!(s, "CELLS {} {}", ne, 4 * ne);
    for e in 0..ne {
        let _ = writeln!(s, "3 {} {} {}", 3 * e, 3 * e + 1, 3 * e + 2);
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "POINT_DATA {}", 3 * ne);
    for (name, coeffs) in [("u", &state.u), ("p", &state.p)] {
        let _ = writeln!(s, "VECTORS {name} double");
        for e in 0..ne {
            for c in corners {
                let v = space.eval_vector(coeffs, e, c);
                let _ = writeln!(s, "{:.16e} {:.16e} 0", v[0], v[1]);
            }
        }
    }
    for (name, coeffs) in [("sigma", &state.sigma), ("rho", &state.rho)] {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for e in 0..ne {
            for c in corners {
                let _ = writeln!(s, "{:.16e}", space.eval_scalar(coeffs, e, c));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use hodge_ldgh::mesh::build_periodic_rect_mesh;

    #[test]
    fn vtk_counts() {
        let sp = FeSpace::new(build_periodic_rect_mesh(2, 1, 1.0, 1.0, true, true).unwrap(), 1).unwrap();
        let st = FieldState::zeros(sp.layout());
        let v = vtk(&sp, &st, "t");
        assert!(v.contains("POINTS 12 double"));
        assert!(v.contains("CELLS 4 16"));
        assert!(v.contains("CELL_TYPES 4"));
        assert!(v.contains("POINT_DATA 12"));
        assert_eq!(v.lines().filter(|l| *l == "5").count(), 4);
    }

    #[test]
    fn cross_section_matches_projection() {
        let sp = FeSpace::new(build_periodic_rect_mesh(16, 1, 1.0, 0.1, true, true).unwrap(), 2).unwrap();
        let ex = ExactSolution::linear_plane_wave();
        let mut st = FieldState::zeros(sp.layout());
        st.u = sp.project_vector(|x| ex.u(0.0, x));
        let csv = cross_section_csv(&sp, &st, Some(&ex), 0.05, 11);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 12);
        for l in &lines[1..] {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            assert!((v[1] - v[2]).abs() < 0.05, "{l}");
        }
    }
}
