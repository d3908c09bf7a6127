//! Mapped structured generators: a row of vertical fibers between a top and
//! a bottom profile, each fiber split into the same number of layers, each
//! quad split along its rising diagonal.

use super::{BoundaryClassifier, EdgeSource, MeshError, Point, TriMesh};

/// Piecewise linear profile `(x, z)` with strictly increasing `x`.
pub type Polyline = Vec<Point>;

/// Uniform structured triangulation of `[0, width] x [0, height]`.
pub fn build_rectangle_mesh(width: f64, height: f64, h: f64) -> Result<TriMesh, MeshError> {
    for (name, v) in [("width", width), ("height", height), ("h", h)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(MeshError::Config(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    if h > width.min(height) * (1.0 + 1e-12) {
        return Err(MeshError::Config(format!(
            "mesh size {h} exceeds the smaller domain dimension {}",
            width.min(height)
        )));
    }
    let nx = divisions(width, h);
    let nz = divisions(height, h);
    let stations: Vec<(f64, f64, f64)> = (0..=nx)
        .map(|i| (width * i as f64 / nx as f64, height, 0.0))
        .collect();
    let (nodes, tris) = mapped_grid(&stations, &vec![1.0; nz]);
    let classifier = BoundaryClassifier::rectangle(0.0, width, 0.0, height);
    TriMesh::new(nodes, tris, EdgeSource::Classify(&classifier))
}

/// Graded triangulation of the region between two profiles.
///
/// Fibers are placed at every vertex of both profiles and along the top
/// profile at arc-length spacing at most `h_top`. Layer thickness grades
/// linearly from `h_top` at the surface to `h_bot` at the base of the deepest
/// fiber; shallower fibers use the same layer count.
pub fn build_profile_mesh(
    top: &[Point],
    bottom: &[Point],
    h_top: f64,
    h_bot: f64,
) -> Result<TriMesh, MeshError> {
    for (name, v) in [("h_top", h_top), ("h_bot", h_bot)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(MeshError::Config(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    check_polyline("top", top)?;
    check_polyline("bottom", bottom)?;
    let x0 = top[0][0];
    let x1 = top[top.len() - 1][0];
    let span = x1 - x0;
    let tol = 1e-9 * span.max(1.0);
    if (bottom[0][0] - x0).abs() > tol || (bottom[bottom.len() - 1][0] - x1).abs() > tol {
        return Err(MeshError::Geometry(
            "top and bottom profiles must cover the same x interval".into(),
        ));
    }
    for p in top {
        if p[1] <= interpolate(bottom, p[0]) {
            return Err(MeshError::Geometry(format!(
                "profiles intersect at x = {}",
                p[0]
            )));
        }
    }
    for p in bottom {
        if interpolate(top, p[0]) <= p[1] {
            return Err(MeshError::Geometry(format!(
                "profiles intersect at x = {}",
                p[0]
            )));
        }
    }

    let mut xs = Vec::new();
    for w in top.windows(2) {
        let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        let n = divisions(len, h_top);
        for k in 0..n {
            xs.push(w[0][0] + (w[1][0] - w[0][0]) * k as f64 / n as f64);
        }
    }
    xs.push(x1);
    xs.extend(bottom.iter().map(|p| p[0]));
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() <= tol);
    // pin the ends exactly
    xs[0] = x0;
    *xs.last_mut().unwrap() = x1;

    let stations: Vec<(f64, f64, f64)> = xs
        .iter()
        .map(|&x| (x, interpolate(top, x), interpolate(bottom, x)))
        .collect();
    let depth = stations.iter().map(|s| s.1 - s.2).fold(0.0, f64::max);
    let layers = divisions(2.0 * depth, h_top + h_bot);
    let weights: Vec<f64> = (0..layers)
        .map(|k| h_top + (h_bot - h_top) * (k as f64 + 0.5) / layers as f64)
        .collect();
    let (nodes, tris) = mapped_grid(&stations, &weights);

    let top_owned = top.to_vec();
    let bottom_owned = bottom.to_vec();
    let ztol = 1e-9 * span.max(depth).max(1.0);
    let classifier = BoundaryClassifier::new(
        move |m, n| n[1] > 0.0 && (m[1] - interpolate(&top_owned, m[0])).abs() <= ztol,
        move |m, n| n[1] < 0.0 && (m[1] - interpolate(&bottom_owned, m[0])).abs() <= ztol,
        move |m, n| n[0].abs() > 0.5 && ((m[0] - x0).abs() <= tol || (m[0] - x1).abs() <= tol),
    );
    TriMesh::new(nodes, tris, EdgeSource::Classify(&classifier))
}

fn divisions(length: f64, h: f64) -> usize {
    ((length / h) - 1e-9).ceil().max(1.0) as usize
}

fn check_polyline(name: &str, line: &[Point]) -> Result<(), MeshError> {
    if line.len() < 2 {
        return Err(MeshError::Geometry(format!(
            "{name} profile needs at least two points"
        )));
    }
    if line.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(MeshError::Geometry(format!(
            "{name} profile has non-finite points"
        )));
    }
    if line.windows(2).any(|w| w[1][0] <= w[0][0]) {
        return Err(MeshError::Geometry(format!(
            "{name} profile must be strictly increasing in x"
        )));
    }
    Ok(())
}

/// Linear interpolation of a polyline, clamped at its ends.
pub(crate) fn interpolate(line: &[Point], x: f64) -> f64 {
    if x <= line[0][0] {
        return line[0][1];
    }
    for w in line.windows(2) {
        if x <= w[1][0] {
            let s = (x - w[0][0]) / (w[1][0] - w[0][0]);
            return w[0][1] + s * (w[1][1] - w[0][1]);
        }
    }
    line[line.len() - 1][1]
}

/// Nodes column by column, bottom to top; layer `weights` listed from the
/// surface downwards and rescaled to each fiber's depth.
fn mapped_grid(stations: &[(f64, f64, f64)], weights: &[f64]) -> (Vec<Point>, Vec<[usize; 3]>) {
    let layers = weights.len();
    let total: f64 = weights.iter().sum();
    let mut nodes = Vec::with_capacity(stations.len() * (layers + 1));
    for &(x, zt, zb) in stations {
        let d = zt - zb;
        let mut column = vec![0.0; layers + 1];
        column[layers] = zt;
        let mut z = zt;
        for (k, w) in weights.iter().enumerate() {
            z -= w / total * d;
            column[layers - 1 - k] = z;
        }
        column[0] = zb;
        nodes.extend(column.into_iter().map(|z| [x, z]));
    }
    let id = |i: usize, j: usize| i * (layers + 1) + j;
    let mut tris = Vec::with_capacity(2 * layers * (stations.len() - 1));
    for i in 0..stations.len() - 1 {
        for j in 0..layers {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    (nodes, tris)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::EdgeTag;

    #[test]
    fn rectangle_counts() {
        let m = build_rectangle_mesh(0.1, 5.0, 0.05).unwrap();
        assert_eq!(m.n_cells(), 400);
        let m = build_rectangle_mesh(1.0, 1.0, 1.0).unwrap();
        assert_eq!(m.n_cells(), 2);
        assert_eq!(m.n_edges(), 5);
    }

    #[test]
    fn rectangle_top_is_flat() {
        let m = build_rectangle_mesh(0.1, 5.0, 0.05).unwrap();
        assert_eq!(m.top_edges().len(), 2);
        for &e in m.top_edges() {
            assert_eq!(m.edge_geometry(e).normal, [0.0, 1.0]);
        }
    }

    #[test]
    fn rectangle_rejects_bad_sizes() {
        assert!(build_rectangle_mesh(0.1, 5.0, 0.2).is_err());
        assert!(build_rectangle_mesh(0.0, 5.0, 0.05).is_err());
        assert!(build_rectangle_mesh(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn flat_profile_equals_rectangle() {
        let p = build_profile_mesh(
            &[[0.0, 1.0], [1.0, 1.0]],
            &[[0.0, 0.0], [1.0, 0.0]],
            0.5,
            0.5,
        )
        .unwrap();
        let r = build_rectangle_mesh(1.0, 1.0, 0.5).unwrap();
        assert_eq!(p, r);
    }

    #[test]
    fn crossing_profiles_rejected() {
        let err = build_profile_mesh(
            &[[0.0, 1.0], [1.0, 1.0]],
            &[[0.0, 0.0], [0.5, 2.0], [1.0, 0.0]],
            0.1,
            0.1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("profiles intersect"));
    }

    #[test]
    fn sloped_profile_tags() {
        let top = vec![[0.0, 2.0], [2.0, 2.0], [4.0, 3.0], [6.0, 3.0]];
        let bottom = vec![[0.0, 0.0], [6.0, 0.0]];
        let m = build_profile_mesh(&top, &bottom, 0.2, 0.5).unwrap();
        for &e in m.top_edges() {
            assert!(m.edge_geometry(e).normal[1] > 0.0);
        }
        let lateral = m.tags().iter().filter(|&&t| t == EdgeTag::Lateral).count();
        assert!(lateral > 0);
        let top_len: f64 = m.top_edges().iter().map(|&e| m.edge_length(e)).sum();
        let exact = 2.0 + 5f64.sqrt() + 2.0;
        assert!((top_len - exact).abs() < 1e-12);
        assert!(m.max_edge_length() < 1.0);
    }
}
