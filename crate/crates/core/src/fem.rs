//! Lowest-order Raviart-Thomas fluxes and piecewise-constant heads.
//!
//! The flux unknown of edge `e` is the constant normal component `q . n_e`
//! in the global edge orientation. On a triangle `T` the basis function of
//! its local edge `i` (opposite vertex `p_i`) is
//!
//! ```text
//! phi_i(x) = s_i |e_i| / (2 |T|) (x - p_i),    div phi_i = s_i |e_i| / |T|
//! ```
//!
//! with `s_i = cell_signs(T)[i]`.

use thiserror::Error;

use crate::constitutive::{self, ConstitutiveError, MaterialParams};
use crate::linalg::SparseMatrix;
use crate::mesh::{Point, TriMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
}

/// How the retention and permeability nonlinearities are linearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Linearization {
    LScheme,
    Newton,
}

/// Unknown numbering: fluxes, then heads, then top traces.
#[derive(Debug, Clone, PartialEq)]
pub struct DofLayout {
    pub n_flux: usize,
    pub n_head: usize,
    pub n_trace: usize,
    top_edges: Vec<usize>,
    trace_of_edge: Vec<Option<usize>>,
}

impl DofLayout {
    /// Traces are allocated on every TOP edge when `hybrid` is set.
    pub fn new(mesh: &TriMesh, hybrid: bool) -> Self {
        let top_edges = mesh.top_edges().to_vec();
        let mut trace_of_edge = vec![None; mesh.n_edges()];
        if hybrid {
            for (i, &e) in top_edges.iter().enumerate() {
                trace_of_edge[e] = Some(i);
            }
        }
        Self {
            n_flux: mesh.n_edges(),
            n_head: mesh.n_cells(),
            n_trace: if hybrid { top_edges.len() } else { 0 },
            top_edges,
            trace_of_edge,
        }
    }

    pub fn flux_dof(&self, edge: usize) -> usize {
        edge
    }

    pub fn head_dof(&self, cell: usize) -> usize {
        self.n_flux + cell
    }

    /// Global index of the trace on the `i`-th TOP edge.
    pub fn trace_dof(&self, i: usize) -> usize {
        self.n_flux + self.n_head + i
    }

    /// Position of edge `e` in the trace numbering, if it carries one.
    pub fn trace_of_edge(&self, e: usize) -> Option<usize> {
        self.trace_of_edge[e]
    }

    pub fn top_edges(&self) -> &[usize] {
        &self.top_edges
    }

    pub fn total(&self) -> usize {
        self.n_flux + self.n_head + self.n_trace
    }
}

/// Restriction of the three RT0 basis functions to one triangle.
#[derive(Debug, Clone, Copy)]
pub struct LocalRt0 {
    pub vertices: [Point; 3],
    pub area: f64,
    pub signs: [f64; 3],
    pub lengths: [f64; 3],
}

impl LocalRt0 {
    pub fn new(mesh: &TriMesh, t: usize) -> Self {
        let edges = mesh.cell_edges(t);
        Self {
            vertices: mesh.cell_vertices(t),
            area: mesh.cell_area(t),
            signs: mesh.cell_signs(t),
            lengths: edges.map(|e| mesh.edge_length(e)),
        }
    }

    pub fn eval(&self, i: usize, x: Point) -> Point {
        let c = self.signs[i] * self.lengths[i] / (2.0 * self.area);
        let p = self.vertices[i];
        [c * (x[0] - p[0]), c * (x[1] - p[1])]
    }

    pub fn divergence(&self, i: usize) -> f64 {
        self.signs[i] * self.lengths[i] / self.area
    }

    pub fn centroid(&self) -> Point {
        let [a, b, c] = self.vertices;
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Edge midpoints, the nodes of the degree-2 rule.
    pub fn midpoints(&self) -> [Point; 3] {
        let v = self.vertices;
        [0, 1, 2].map(|i| {
            let a = v[(i + 1) % 3];
            let b = v[(i + 2) % 3];
            [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
        })
    }

    /// `M_ij = integral of phi_i . phi_j` by the edge-midpoint rule.
    pub fn mass(&self) -> [[f64; 3]; 3] {
        let mids = self.midpoints();
        let vals: Vec<[Point; 3]> = mids
            .iter()
            .map(|&m| [0, 1, 2].map(|i| self.eval(i, m)))
            .collect();
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = vals
                    .iter()
                    .map(|v| v[i][0] * v[j][0] + v[i][1] * v[j][1])
                    .sum();
                out[i][j] = self.area / 3.0 * s;
            }
        }
        out
    }

    /// Flux field at `x` from the three local coefficients.
    pub fn field(&self, coeffs: [f64; 3], x: Point) -> Point {
        let mut out = [0.0; 2];
        for (i, c) in coeffs.iter().enumerate() {
            let p = self.eval(i, x);
            out[0] += c * p[0];
            out[1] += c * p[1];
        }
        out
    }
}

/// Local RT0 mass matrices of every cell.
pub fn local_masses(mesh: &TriMesh) -> Vec<[[f64; 3]; 3]> {
    (0..mesh.n_cells())
        .map(|t| LocalRt0::new(mesh, t).mass())
        .collect()
}

fn check_len(name: &str, got: usize, want: usize) -> Result<(), FemError> {
    if got != want {
        return Err(FemError::Assembly(format!(
            "{name} has length {got}, expected {want}"
        )));
    }
    Ok(())
}

/// Weighted RT0 mass matrix `(inv_k phi_i, phi_j)`.
pub fn assemble_a(mesh: &TriMesh, inv_k: &[f64]) -> Result<SparseMatrix, FemError> {
    assemble_a_cached(mesh, &local_masses(mesh), inv_k)
}

/// As [`assemble_a`] with precomputed local mass matrices.
pub fn assemble_a_cached(
    mesh: &TriMesh,
    masses: &[[[f64; 3]; 3]],
    inv_k: &[f64],
) -> Result<SparseMatrix, FemError> {
    check_len("inv_k", inv_k.len(), mesh.n_cells())?;
    let mut t = Vec::with_capacity(9 * mesh.n_cells());
    for (c, (m, &w)) in masses.iter().zip(inv_k).enumerate() {
        if !(w > 0.0 && w.is_finite()) {
            return Err(FemError::Assembly(format!(
                "inverse permeability must be positive and finite, cell {c} has {w}"
            )));
        }
        let edges = mesh.cell_edges(c);
        for i in 0..3 {
            for j in 0..3 {
                t.push((edges[i], edges[j], w * m[i][j]));
            }
        }
    }
    Ok(
        SparseMatrix::from_triplets(mesh.n_edges(), mesh.n_edges(), &t)
            .expect("edge indices in range"),
    )
}

/// `B[T, e] = -(1, div phi_e)_T = -s |e|`.
pub fn assemble_b(mesh: &TriMesh) -> SparseMatrix {
    let mut t = Vec::with_capacity(3 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let edges = mesh.cell_edges(c);
        let signs = mesh.cell_signs(c);
        for i in 0..3 {
            t.push((c, edges[i], -signs[i] * mesh.edge_length(edges[i])));
        }
    }
    SparseMatrix::from_triplets(mesh.n_cells(), mesh.n_edges(), &t).expect("indices in range")
}

/// Trace coupling on TOP edges: `E[i, e_i] = |e_i|`.
pub fn assemble_e(mesh: &TriMesh, layout: &DofLayout) -> SparseMatrix {
    let t: Vec<_> = layout
        .top_edges()
        .iter()
        .enumerate()
        .map(|(i, &e)| (i, e, mesh.edge_length(e)))
        .collect();
    SparseMatrix::from_triplets(layout.top_edges().len(), mesh.n_edges(), &t)
        .expect("indices in range")
}

/// Gravity load `D_e = -(e_z, phi_e)`.
pub fn assemble_d(mesh: &TriMesh) -> Vec<f64> {
    let mut d = vec![0.0; mesh.n_edges()];
    for c in 0..mesh.n_cells() {
        let loc = LocalRt0::new(mesh, c);
        let zc = loc.centroid()[1];
        for (i, &e) in mesh.cell_edges(c).iter().enumerate() {
            // |T| * phi_i(centroid) . e_z
            d[e] -= loc.signs[i] * loc.lengths[i] * (zc - loc.vertices[i][1]) / 2.0;
        }
    }
    d
}

/// Storage residual `|T| (theta_old - theta_k) / dt`.
pub fn assemble_c(
    mesh: &TriMesh,
    theta_old: &[f64],
    theta_k: &[f64],
    dt: f64,
) -> Result<Vec<f64>, FemError> {
    check_len("theta_old", theta_old.len(), mesh.n_cells())?;
    check_len("theta_k", theta_k.len(), mesh.n_cells())?;
    if !(dt > 0.0) {
        return Err(FemError::Assembly(format!(
            "time step must be positive, got {dt}"
        )));
    }
    Ok((0..mesh.n_cells())
        .map(|t| mesh.cell_area(t) * (theta_old[t] - theta_k[t]) / dt)
        .collect())
}

/// Diagonal `|T| l_T / dt`.
pub fn assemble_nl(mesh: &TriMesh, l: &[f64], dt: f64) -> Result<SparseMatrix, FemError> {
    check_len("l", l.len(), mesh.n_cells())?;
    if !(dt > 0.0) {
        return Err(FemError::Assembly(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if let Some(t) = l.iter().position(|&v| !(v >= 0.0)) {
        return Err(FemError::Assembly(format!(
            "negative storage coefficient on cell {t}"
        )));
    }
    let d: Vec<f64> = (0..mesh.n_cells())
        .map(|t| mesh.cell_area(t) * l[t] / dt)
        .collect();
    Ok(SparseMatrix::diagonal(&d))
}

/// Head coupling of the flux equation. `B^T` for the L-scheme; Newton adds
/// `d(1/K)/dpsi (psi_k) (q_k, phi_e)_T` in column `T`.
pub fn assemble_bl(
    mode: Linearization,
    mesh: &TriMesh,
    psi_k: &[f64],
    q_k: &[f64],
    material: &MaterialParams,
) -> Result<SparseMatrix, FemError> {
    assemble_bl_cached(
        mode,
        mesh,
        &local_masses(mesh),
        &assemble_b(mesh),
        psi_k,
        q_k,
        material,
    )
}

pub fn assemble_bl_cached(
    mode: Linearization,
    mesh: &TriMesh,
    masses: &[[[f64; 3]; 3]],
    b: &SparseMatrix,
    psi_k: &[f64],
    q_k: &[f64],
    material: &MaterialParams,
) -> Result<SparseMatrix, FemError> {
    let bt = b.transpose();
    if mode == Linearization::LScheme {
        return Ok(bt);
    }
    check_len("psi_k", psi_k.len(), mesh.n_cells())?;
    check_len("q_k", q_k.len(), mesh.n_edges())?;
    let mut t: Vec<_> = bt.triplets().collect();
    for c in 0..mesh.n_cells() {
        let dk = constitutive::d_inv_permeability(psi_k[c], material)?;
        if dk == 0.0 {
            continue;
        }
        let edges = mesh.cell_edges(c);
        let m = &masses[c];
        for i in 0..3 {
            let mq: f64 = (0..3).map(|j| m[i][j] * q_k[edges[j]]).sum();
            t.push((edges[i], c, dk * mq));
        }
    }
    Ok(SparseMatrix::from_triplets(mesh.n_edges(), mesh.n_cells(), &t).expect("indices in range"))
}

/// `p . n` on every TOP edge for a uniform rain vector.
pub fn rain_normal(mesh: &TriMesh, rain: Point) -> Vec<f64> {
    mesh.top_edges()
        .iter()
        .map(|&e| {
            let n = mesh.edge_geometry(e).normal;
            rain[0] * n[0] + rain[1] * n[1]
        })
        .collect()
}

/// Flux disparity `Q = (p - q) . n` on every TOP edge.
pub fn boundary_flux_q(mesh: &TriMesh, q: &[f64], rain_n: &[f64]) -> Vec<f64> {
    assert_eq!(
        rain_n.len(),
        mesh.top_edges().len(),
        "one rain value per TOP edge"
    );
    mesh.top_edges()
        .iter()
        .zip(rain_n)
        .map(|(&e, p)| p - q[e])
        .collect()
}

/// Right-hand side of the weak head condition `-(psi_D, phi_e . n)` on the
/// listed boundary edges.
pub fn dirichlet_rhs(mesh: &TriMesh, edges: &[usize], values: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; mesh.n_edges()];
    for (&e, &v) in edges.iter().zip(values) {
        r[e] -= mesh.edge_length(e) * v;
    }
    r
}

/// Flux vector at the centroid of cell `t`.
pub fn centroid_flux(mesh: &TriMesh, q: &[f64], t: usize) -> Point {
    let loc = LocalRt0::new(mesh, t);
    let coeffs = mesh.cell_edges(t).map(|e| q[e]);
    loc.field(coeffs, loc.centroid())
}
