//! Field output, vertical profiles and run reports.
//!
//! Every writer is deterministic: floats are printed in their shortest
//! round-trip form and nothing time- or host-dependent is written.
//!
//! The run report is a JSON object:
//!
//! ```text
//! {
//!   "n_steps": 10,
//!   "converged": true,
//!   "steps": [ { "step": 1, "time": 36000.0, "iterations": 7,
//!                "eta_history": [...], "active_set_history": [...],
//!                "converged": true, "newton_from": null,
//!                "mass_row_residual": 1e-20 }, ... ]
//! }
//! ```
//!
//! `converged` is false as soon as one step failed. Wall time is left out so
//! that reports of identical runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem;
use crate::mesh::TriMesh;
use crate::scenario::{OutputKind, OutputRequest};
use crate::seepage::{self, FieldState, StepReport};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("x = {x} is not strictly inside the domain [{lo}, {hi}]")]
    ProfileOutside { x: f64, lo: f64, hi: f64 },
    #[error("malformed report: {0}")]
    Report(#[from] serde_json::Error),
    #[error("state does not match the mesh")]
    State,
}

fn write_file(path: &Path, text: &str) -> Result<(), OutputError> {
    fs::write(path, text).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn check_state(mesh: &TriMesh, state: &FieldState) -> Result<(), OutputError> {
    if state.psi.len() != mesh.n_cells() || state.q.len() != mesh.n_edges() {
        return Err(OutputError::State);
    }
    Ok(())
}

/// Legacy ASCII VTK text of one state. Points are written as `(x, z, 0)`.
pub fn vtk_string(mesh: &TriMesh, state: &FieldState) -> Result<String, OutputError> {
    check_state(mesh, state)?;
    let nt = mesh.n_cells();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 2.0\n");
    writeln!(out, "seepage t={}", state.time).unwrap();
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(out, "POINTS {} double", mesh.n_nodes()).unwrap();
    for p in mesh.nodes() {
        writeln!(out, "{} {} 0", p[0], p[1]).unwrap();
    }
    writeln!(out, "CELLS {} {}", nt, 4 * nt).unwrap();
    for t in mesh.triangles() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    writeln!(out, "CELL_TYPES {nt}").unwrap();
    for _ in 0..nt {
        out.push_str("5\n");
    }
    writeln!(out, "CELL_DATA {nt}").unwrap();
    out.push_str("SCALARS psi double 1\nLOOKUP_TABLE default\n");
    for p in &state.psi {
        writeln!(out, "{p}").unwrap();
    }
    out.push_str("VECTORS q double\n");
    for t in 0..nt {
        let q = fem::centroid_flux(mesh, &state.q, t);
        writeln!(out, "{} {} 0", q[0], q[1]).unwrap();
    }
    out.push_str("SCALARS saturated int 1\nLOOKUP_TABLE default\n");
    for &p in &state.psi {
        out.push_str(if p > 0.0 { "1\n" } else { "0\n" });
    }
    Ok(out)
}

pub fn write_vtk(mesh: &TriMesh, state: &FieldState, path: &Path) -> Result<(), OutputError> {
    write_file(path, &vtk_string(mesh, state)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRow {
    pub z: f64,
    pub psi: f64,
    pub q_z: f64,
}

/// Cells crossed by the vertical line at `x`, sorted by centroid height.
/// A cell is crossed when `x` lies in the half-open range `[x_min, x_max)`
/// of its vertices, so a line through mesh nodes picks one column.
pub fn extract_profile(
    mesh: &TriMesh,
    state: &FieldState,
    x: f64,
) -> Result<Vec<ProfileRow>, OutputError> {
    check_state(mesh, state)?;
    let (lo, hi) = mesh.bounding_box();
    if !(x > lo[0] && x < hi[0]) {
        return Err(OutputError::ProfileOutside {
            x,
            lo: lo[0],
            hi: hi[0],
        });
    }
    let mut rows: Vec<(usize, ProfileRow)> = Vec::new();
    for t in 0..mesh.n_cells() {
        let v = mesh.cell_vertices(t);
        let xmin = v.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let xmax = v.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        if x >= xmin && x < xmax {
            let c = mesh.cell_centroid(t);
            rows.push((
                t,
                ProfileRow {
                    z: c[1],
                    psi: state.psi[t],
                    q_z: fem::centroid_flux(mesh, &state.q, t)[1],
                },
            ));
        }
    }
    rows.sort_by(|a, b| a.1.z.total_cmp(&b.1.z).then(a.0.cmp(&b.0)));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from("z,psi,q_z\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.z, r.psi, r.q_z).unwrap();
    }
    out
}

/// Per TOP edge: midpoint, boundary head (cell trace or `lambda`), flux
/// disparity `Q` and outward normal flux.
pub fn boundary_csv(
    mesh: &TriMesh,
    state: &FieldState,
    rain_n: &[f64],
) -> Result<String, OutputError> {
    check_state(mesh, state)?;
    if rain_n.len() != mesh.top_edges().len() {
        return Err(OutputError::State);
    }
    let heads = seepage::boundary_head(mesh, state);
    let q_disp = fem::boundary_flux_q(mesh, &state.q, rain_n);
    let mut out = String::from("edge,x,z,head,Q,q_n\n");
    for (i, &e) in mesh.top_edges().iter().enumerate() {
        let m = mesh.edge_geometry(e).midpoint;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e, m[0], m[1], heads[i], q_disp[i], state.q[e]
        )
        .unwrap();
    }
    Ok(out)
}

pub fn write_boundary_csv(
    mesh: &TriMesh,
    state: &FieldState,
    rain_n: &[f64],
    path: &Path,
) -> Result<(), OutputError> {
    write_file(path, &boundary_csv(mesh, state, rain_n)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_steps: usize,
    pub converged: bool,
    pub steps: Vec<StepReport>,
}

impl Report {
    pub fn new(steps: &[StepReport]) -> Self {
        Self {
            n_steps: steps.len(),
            converged: steps.iter().all(|r| r.converged),
            steps: steps.to_vec(),
        }
    }
}

pub fn report_string(reports: &[StepReport]) -> Result<String, OutputError> {
    let mut s = serde_json::to_string_pretty(&Report::new(reports))?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(reports: &[StepReport], path: &Path) -> Result<(), OutputError> {
    write_file(path, &report_string(reports)?)
}

pub fn read_report(path: &Path) -> Result<Report, OutputError> {
    let text = fs::read_to_string(path).map_err(|source| OutputError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the files of a list of output requests into one directory.
/// Step files are named `{prefix}_{step:04}.{ext}`, the report
/// `{prefix}_report.json`.
pub struct OutputWriter<'a> {
    dir: PathBuf,
    requests: &'a [OutputRequest],
    written: Vec<PathBuf>,
}

impl<'a> OutputWriter<'a> {
    pub fn new(dir: &Path, requests: &'a [OutputRequest]) -> Result<Self, OutputError> {
        fs::create_dir_all(dir).map_err(|source| OutputError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            requests,
            written: Vec::new(),
        })
    }

    fn step_path(&self, prefix: &str, step: usize, ext: &str) -> PathBuf {
        self.dir.join(format!("{prefix}_{step:04}.{ext}"))
    }

    /// Called for every accepted step `step >= 1`.
    pub fn step(
        &mut self,
        mesh: &TriMesh,
        step: usize,
        state: &FieldState,
        rain_n: &[f64],
    ) -> Result<(), OutputError> {
        for req in self.requests {
            if step % req.every.max(1) != 0 {
                continue;
            }
            let path = match req.kind {
                OutputKind::VtkSeries => {
                    let p = self.step_path(&req.prefix, step, "vtk");
                    write_vtk(mesh, state, &p)?;
                    p
                }
                OutputKind::ProfileCsv => {
                    let x = req.x.unwrap_or(f64::NAN);
                    let p = self.step_path(&format!("{}_profile", req.prefix), step, "csv");
                    write_file(&p, &profile_csv(&extract_profile(mesh, state, x)?))?;
                    p
                }
                OutputKind::BoundaryCsv => {
                    let p = self.step_path(&format!("{}_boundary", req.prefix), step, "csv");
                    write_boundary_csv(mesh, state, rain_n, &p)?;
                    p
                }
                OutputKind::ReportJson => continue,
            };
            self.written.push(path);
        }
        Ok(())
    }

    /// Writes the report requests; also used after a failed step.
    pub fn finish(&mut self, reports: &[StepReport]) -> Result<(), OutputError> {
        for req in self.requests {
            if req.kind == OutputKind::ReportJson {
                let p = self.dir.join(format!("{}_report.json", req.prefix));
                write_report(reports, &p)?;
                self.written.push(p);
            }
        }
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
