//! Implicit Euler time step of the mixed Richards problem with seepage
//! conditions on the TOP boundary.
//!
//! Three schemes share the same interior discretization:
//!
//! * `NonHybridized`: the boundary head in the weak head term is replaced by
//!   `eps - [Q - gamma (psi - eps)]_+ / gamma`, `gamma = gamma0 h_e`, and the
//!   max-bracket is resolved by an active set. Active edges carry the
//!   penalized flux condition, inactive edges the weak head `psi = eps`.
//! * `Hybridized`: a head trace `lambda` lives on every TOP edge with the
//!   edge equation `q.n - [(lambda - eps) - gamma_hyb Q]_+ / gamma_hyb = p.n`,
//!   `gamma_hyb = gamma0_hyb / h_e`. Active edges give `lambda = eps`,
//!   inactive edges `q.n = p.n`.
//! * `NeumannReference`: `q.n = p.n` imposed strongly on every TOP edge.
//!
//! Retention and permeability are linearized by the L-scheme, Newton's
//! method, or L-scheme iterations followed by Newton.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{self, ConstitutiveError, MaterialParams};
use crate::fem::{self, DofLayout, FemError, Linearization};
use crate::linalg::{self, assemble_blocks, BlockSystem, LinalgError, SparseMatrix};
use crate::mesh::{EdgeTag, TriMesh};

#[derive(Debug, Error)]
pub enum SeepageError {
    #[error("invalid solver settings: {0}")]
    Settings(String),
    #[error("inconsistent state: {0}")]
    State(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
    #[error("no convergence after {} iterations (last eta {:e})", .report.iterations, .report.eta_history.last().copied().unwrap_or(f64::NAN))]
    NotConverged {
        report: Box<StepReport>,
        state: Box<FieldState>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    NonHybridized,
    Hybridized,
    NeumannReference,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::NonHybridized => "non_hybridized",
            Scheme::Hybridized => "hybridized",
            Scheme::NeumannReference => "neumann_reference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearizationStrategy {
    Lscheme,
    Newton,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub scheme: Scheme,
    pub gamma0: f64,
    pub gamma0_hyb: f64,
    /// Largest admissible surface head, m.
    pub epsilon_relax: f64,
    pub linearization: LinearizationStrategy,
    /// L-scheme constant in 1/m; the sup of the moisture capacity when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_override: Option<f64>,
    pub eps_a: f64,
    pub max_iter: usize,
    pub combined_switch_eta: f64,
    pub combined_switch_iter: usize,
    /// Width in m of the permeability chord below saturation, see
    /// [`MaterialParams::k_smoothing`]. Overrides the material's value.
    pub k_smoothing: f64,
}

/// Default permeability smoothing band, m.
pub const DEFAULT_K_SMOOTHING: f64 = 1e-2;

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            scheme: Scheme::NonHybridized,
            gamma0: 1e-10,
            gamma0_hyb: 1.0,
            epsilon_relax: 0.0,
            linearization: LinearizationStrategy::Lscheme,
            l_override: None,
            eps_a: 1e-7,
            max_iter: 200,
            combined_switch_eta: 1e-3,
            combined_switch_iter: 100,
            k_smoothing: DEFAULT_K_SMOOTHING,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SeepageError> {
        let bad = |m: String| Err(SeepageError::Settings(m));
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return bad(format!("gamma0 must be positive, got {}", self.gamma0));
        }
        if !(self.gamma0_hyb > 0.0 && self.gamma0_hyb.is_finite()) {
            return bad(format!(
                "gamma0_hyb must be positive, got {}",
                self.gamma0_hyb
            ));
        }
        if !(self.epsilon_relax >= 0.0 && self.epsilon_relax.is_finite()) {
            return bad(format!(
                "epsilon_relax must be >= 0, got {}",
                self.epsilon_relax
            ));
        }
        if !(self.eps_a > 0.0) {
            return bad(format!("eps_a must be positive, got {}", self.eps_a));
        }
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1".into());
        }
        if let Some(l) = self.l_override {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("l_override must be positive, got {l}"));
            }
        }
        if !(self.k_smoothing >= 0.0 && self.k_smoothing.is_finite()) {
            return bad(format!(
                "k_smoothing must be >= 0, got {}",
                self.k_smoothing
            ));
        }
        if !(self.combined_switch_eta >= 0.0) {
            return bad("combined_switch_eta must be >= 0".into());
        }
        Ok(())
    }
}

/// One time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    /// Normal flux per edge, m/s.
    pub q: Vec<f64>,
    /// Head per cell, m.
    pub psi: Vec<f64>,
    /// Head per TOP edge, m; hybridized scheme only.
    pub lambda: Option<Vec<f64>>,
    /// s
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    /// End of the step, s.
    pub time: f64,
    pub iterations: usize,
    pub eta_history: Vec<f64>,
    pub active_set_history: Vec<usize>,
    pub converged: bool,
    /// Iteration index of the first Newton iteration in combined mode.
    pub newton_from: Option<usize>,
    /// Largest residual of the mass rows of the final linear system.
    pub mass_row_residual: f64,
    /// s; not part of the deterministic report.
    #[serde(default, skip_serializing)]
    pub wall_time: f64,
}

/// Condition on the BOTTOM edges.
#[derive(Debug, Clone, PartialEq)]
pub enum BottomCondition {
    NoFlux,
    /// Head per BOTTOM edge, listed in increasing edge index.
    Head(Vec<f64>),
}

/// Mesh-dependent data shared by every step of a run.
pub struct StepContext<'a> {
    pub mesh: &'a TriMesh,
    pub material: MaterialParams,
    pub settings: SolverSettings,
    pub layout: DofLayout,
    masses: Vec<[[f64; 3]; 3]>,
    b: SparseMatrix,
    neg_b: SparseMatrix,
    e: SparseMatrix,
    d: Vec<f64>,
    /// Weak head contributions of BOTTOM edges.
    head_rhs: Vec<f64>,
    /// Flux dofs held at zero (LATERAL and no-flux BOTTOM edges).
    no_flux: Vec<usize>,
    /// Penalty per TOP edge in the scheme's convention.
    gamma: Vec<f64>,
    /// L-scheme constant.
    pub l_const: f64,
    /// Largest moisture capacity of the material.
    pub capacity_sup: f64,
}

impl<'a> StepContext<'a> {
    pub fn new(
        mesh: &'a TriMesh,
        material: MaterialParams,
        settings: SolverSettings,
        bottom: &BottomCondition,
    ) -> Result<Self, SeepageError> {
        settings.validate()?;
        let mut material = material;
        material.k_smoothing = settings.k_smoothing;
        material.validate().map_err(SeepageError::Constitutive)?;
        if mesh.top_edges().is_empty() {
            return Err(SeepageError::State("mesh has no TOP edges".into()));
        }
        let layout = DofLayout::new(mesh, settings.scheme == Scheme::Hybridized);
        let bottom_edges: Vec<usize> = (0..mesh.n_edges())
            .filter(|&e| mesh.tag(e) == EdgeTag::Bottom)
            .collect();
        let mut no_flux: Vec<usize> = (0..mesh.n_edges())
            .filter(|&e| mesh.tag(e) == EdgeTag::Lateral)
            .collect();
        let head_rhs = match bottom {
            BottomCondition::NoFlux => {
                no_flux.extend(&bottom_edges);
                no_flux.sort_unstable();
                vec![0.0; mesh.n_edges()]
            }
            BottomCondition::Head(values) => {
                if values.len() != bottom_edges.len() {
                    return Err(SeepageError::State(format!(
                        "{} bottom heads given for {} BOTTOM edges",
                        values.len(),
                        bottom_edges.len()
                    )));
                }
                fem::dirichlet_rhs(mesh, &bottom_edges, values)
            }
        };
        let gamma = mesh
            .top_edges()
            .iter()
            .map(|&e| {
                let h = mesh.edge_length(e);
                match settings.scheme {
                    Scheme::Hybridized => settings.gamma0_hyb / h,
                    _ => settings.gamma0 * h,
                }
            })
            .collect();
        let capacity_sup = constitutive::lscheme_bound(&material);
        let l_const = settings.l_override.unwrap_or(capacity_sup);
        let b = fem::assemble_b(mesh);
        Ok(Self {
            mesh,
            material,
            layout: layout.clone(),
            masses: fem::local_masses(mesh),
            neg_b: b.scaled(-1.0),
            e: fem::assemble_e(mesh, &layout),
            b,
            d: fem::assemble_d(mesh),
            head_rhs,
            no_flux,
            gamma,
            settings,
            l_const,
            capacity_sup,
        })
    }

    pub fn masses(&self) -> &[[[f64; 3]; 3]] {
        &self.masses
    }

    /// Penalty parameter per TOP edge.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Head trace used for TOP edges: `lambda` when present, else the head of
    /// the adjacent cell.
    pub fn boundary_head(&self, state: &FieldState) -> Vec<f64> {
        boundary_head(self.mesh, state)
    }
}

/// Boundary head per TOP edge: `lambda` if present, else the adjacent cell
/// head.
pub fn boundary_head(mesh: &TriMesh, state: &FieldState) -> Vec<f64> {
    match &state.lambda {
        Some(l) => l.clone(),
        None => trace_of_cells(mesh, &state.psi),
    }
}

/// Cell head adjacent to each TOP edge.
pub fn trace_of_cells(mesh: &TriMesh, psi: &[f64]) -> Vec<f64> {
    mesh.top_edges()
        .iter()
        .map(|&e| psi[mesh.edge_cells(e).0])
        .collect()
}

/// `Q - gamma (psi - eps) >= 0`.
pub fn active_set_nohyb(q_disp: &[f64], psi_trace: &[f64], gamma: &[f64], eps: f64) -> Vec<bool> {
    q_disp
        .iter()
        .zip(psi_trace)
        .zip(gamma)
        .map(|((&q, &p), &g)| q - g * (p - eps) >= 0.0)
        .collect()
}

/// `(lambda - eps) - gamma_hyb Q >= 0`.
pub fn active_set_hyb(lambda: &[f64], q_disp: &[f64], gamma_hyb: &[f64], eps: f64) -> Vec<bool> {
    lambda
        .iter()
        .zip(q_disp)
        .zip(gamma_hyb)
        .map(|((&l, &q), &g)| (l - eps) - g * q >= 0.0)
        .collect()
}

/// Penalty blocks of the non-hybridized iteration.
pub struct NonHybBlocks {
    /// n_flux x n_flux
    pub h_q: SparseMatrix,
    /// n_flux x n_head
    pub h_psi: SparseMatrix,
    /// n_flux
    pub h_vec: Vec<f64>,
}

/// Penalty blocks of the hybridized iteration.
pub struct HybBlocks {
    /// n_trace x n_flux
    pub h_q: SparseMatrix,
    /// n_trace x n_trace
    pub h_lambda: SparseMatrix,
    /// n_trace
    pub h_vec: Vec<f64>,
}

/// `H_q`, `H_psi` and the constant part for the given active set (the
/// positive part is taken over `active`, not recomputed). The
/// right-hand side of the flux rows gains `H_q q_k + H_psi psi_k + h_vec`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_h_nohyb(
    mesh: &TriMesh,
    active: &[bool],
    gamma: &[f64],
    q_disp: &[f64],
    psi_trace: &[f64],
    eps: f64,
) -> NonHybBlocks {
    let top = mesh.top_edges();
    let mut hq = Vec::new();
    let mut hp = Vec::new();
    let mut h_vec = vec![0.0; mesh.n_edges()];
    for (i, &e) in top.iter().enumerate() {
        let len = mesh.edge_length(e);
        let cell = mesh.edge_cells(e).0;
        let raw = q_disp[i] - gamma[i] * (psi_trace[i] - eps);
        let bracket = if active[i] { raw } else { 0.0 };
        h_vec[e] = len * (bracket / gamma[i] - eps);
        if active[i] {
            hq.push((e, e, len / gamma[i]));
            hp.push((e, cell, len));
        }
    }
    NonHybBlocks {
        h_q: SparseMatrix::from_triplets(mesh.n_edges(), mesh.n_edges(), &hq).expect("in range"),
        h_psi: SparseMatrix::from_triplets(mesh.n_edges(), mesh.n_cells(), &hp).expect("in range"),
        h_vec,
    }
}

/// Hybridized counterparts. The trace rows read
/// `(E + H_q) q + H_lambda lambda = E p + H_q q_k + H_lambda lambda_k + h_vec`.
pub fn assemble_h_hyb(
    mesh: &TriMesh,
    active: &[bool],
    gamma_hyb: &[f64],
    q_disp: &[f64],
    lambda: &[f64],
    eps: f64,
) -> HybBlocks {
    let top = mesh.top_edges();
    let n = top.len();
    let mut hq = Vec::new();
    let mut hl = Vec::new();
    let mut h_vec = vec![0.0; n];
    for (i, &e) in top.iter().enumerate() {
        let len = mesh.edge_length(e);
        let raw = (lambda[i] - eps) - gamma_hyb[i] * q_disp[i];
        let bracket = if active[i] { raw } else { 0.0 };
        h_vec[i] = len * bracket / gamma_hyb[i];
        if active[i] {
            hq.push((i, e, -len));
            hl.push((i, i, -len / gamma_hyb[i]));
        }
    }
    HybBlocks {
        h_q: SparseMatrix::from_triplets(n, mesh.n_edges(), &hq).expect("in range"),
        h_lambda: SparseMatrix::from_triplets(n, n, &hl).expect("in range"),
        h_vec,
    }
}

/// Linearization error norm between two iterates:
///
/// ```text
/// eta^2 = sum_T l_T |T| dpsi_T^2 + dt K(psi_k)_T w^T M_T w,
/// w = K^-1(psi_k1) q_k1 - K^-1(psi_k) q_k   (local coefficients)
/// ```
pub fn eta_lin(
    mesh: &TriMesh,
    state_k: &FieldState,
    state_k1: &FieldState,
    l_per_cell: &[f64],
    dt: f64,
    material: &MaterialParams,
) -> Result<f64, SeepageError> {
    eta_lin_cached(
        mesh,
        &fem::local_masses(mesh),
        state_k,
        state_k1,
        l_per_cell,
        dt,
        material,
    )
}

pub fn eta_lin_cached(
    mesh: &TriMesh,
    masses: &[[[f64; 3]; 3]],
    state_k: &FieldState,
    state_k1: &FieldState,
    l_per_cell: &[f64],
    dt: f64,
    material: &MaterialParams,
) -> Result<f64, SeepageError> {
    let n = mesh.n_cells();
    if state_k.psi.len() != n || state_k1.psi.len() != n || l_per_cell.len() != n {
        return Err(SeepageError::State(
            "cell arrays do not match the mesh".into(),
        ));
    }
    if state_k.q.len() != mesh.n_edges() || state_k1.q.len() != mesh.n_edges() {
        return Err(SeepageError::State(
            "flux arrays do not match the mesh".into(),
        ));
    }
    let mut sum = 0.0;
    for t in 0..n {
        let dpsi = state_k1.psi[t] - state_k.psi[t];
        sum += l_per_cell[t] * mesh.cell_area(t) * dpsi * dpsi;
        let k0 = constitutive::permeability(state_k.psi[t], material)?;
        let k1 = constitutive::permeability(state_k1.psi[t], material)?;
        let edges = mesh.cell_edges(t);
        let w = edges.map(|e| state_k1.q[e] / k1 - state_k.q[e] / k0);
        let m = &masses[t];
        let mut quad = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                quad += w[i] * m[i][j] * w[j];
            }
        }
        sum += dt * k0 * quad;
    }
    Ok(sum.max(0.0).sqrt())
}

/// Linearization to use at iteration `k` given the previous `eta`.
/// Combined mode switches to Newton once `k >= switch_iter` or
/// `eta < switch_eta`.
pub fn choose_linearization(settings: &SolverSettings, k: usize, eta: f64) -> Linearization {
    match settings.linearization {
        LinearizationStrategy::Lscheme => Linearization::LScheme,
        LinearizationStrategy::Newton => Linearization::Newton,
        LinearizationStrategy::Combined => {
            if k >= settings.combined_switch_iter || eta < settings.combined_switch_eta {
                Linearization::Newton
            } else {
                Linearization::LScheme
            }
        }
    }
}

/// Per TOP edge `(max(0, psi_e - eps), max(0, Q_e), |Q_e (psi_e - eps)|)`
/// with `psi_e` the scheme's boundary head.
pub fn complementarity_residual(
    state: &FieldState,
    rain_n: &[f64],
    mesh: &TriMesh,
    epsilon_relax: f64,
) -> Vec<(f64, f64, f64)> {
    let heads = boundary_head(mesh, state);
    let q = fem::boundary_flux_q(mesh, &state.q, rain_n);
    heads
        .iter()
        .zip(&q)
        .map(|(&h, &qd)| {
            let d = h - epsilon_relax;
            (d.max(0.0), qd.max(0.0), (qd * d).abs())
        })
        .collect()
}

/// Both sides of `a, b <= 0, ab = 0  <=>  a = -[b - gamma a]_+ / gamma`,
/// evaluated exactly.
///
/// With `s = b - gamma a`: for `s > 0` the right side reads
/// `gamma a = gamma a - b`, i.e. `b = 0`, and then `s > 0` means `a < 0`;
/// for `s <= 0` it reads `a = 0`, and then `s <= 0` means `b <= 0`.
pub fn scalar_kkt_equivalence(a: f64, b: f64, gamma: f64) -> (bool, bool) {
    debug_assert!(gamma > 0.0);
    let lhs = a <= 0.0 && b <= 0.0 && (a == 0.0 || b == 0.0);
    let rhs = (b == 0.0 && a < 0.0) || (a == 0.0 && b <= 0.0);
    (lhs, rhs)
}

/// `(theta(psi_new) - theta(psi_old)) |T| / dt + sum_e s |e| q_e` per cell.
pub fn mass_residuals(
    mesh: &TriMesh,
    psi_old: &[f64],
    state_new: &FieldState,
    dt: f64,
    material: &MaterialParams,
) -> Result<Vec<f64>, SeepageError> {
    let mut r = Vec::with_capacity(mesh.n_cells());
    for t in 0..mesh.n_cells() {
        let th1 = constitutive::water_content(state_new.psi[t], material)?;
        let th0 = constitutive::water_content(psi_old[t], material)?;
        let edges = mesh.cell_edges(t);
        let signs = mesh.cell_signs(t);
        let div: f64 = (0..3)
            .map(|i| signs[i] * mesh.edge_length(edges[i]) * state_new.q[edges[i]])
            .sum();
        r.push((th1 - th0) * mesh.cell_area(t) / dt + div);
    }
    Ok(r)
}

/// Upper bound on the cell mass residual after convergence with final
/// `eta`:
///
/// ```text
/// |T| / dt (S + l_T) eta / sqrt(l_min |T|_min) + solver_residual
/// ```
///
/// where `S` is the sup of the moisture capacity.
pub fn mass_residual_bound(
    mesh: &TriMesh,
    l_per_cell: &[f64],
    capacity_sup: f64,
    eta: f64,
    dt: f64,
    solver_residual: f64,
) -> Vec<f64> {
    let l_min = l_per_cell.iter().cloned().fold(f64::INFINITY, f64::min);
    let a_min = (0..mesh.n_cells())
        .map(|t| mesh.cell_area(t))
        .fold(f64::INFINITY, f64::min);
    let scale = if l_min > 0.0 {
        eta / (l_min * a_min).sqrt()
    } else {
        f64::INFINITY
    };
    (0..mesh.n_cells())
        .map(|t| mesh.cell_area(t) / dt * (capacity_sup + l_per_cell[t]) * scale + solver_residual)
        .collect()
}

fn newton_step_advisory(ctx: &StepContext<'_>, psi: &[f64], dt: f64) {
    let mut theta_m = f64::INFINITY;
    for &p in psi {
        if let Ok(v) = constitutive::d_water_content(p, &ctx.material) {
            theta_m = theta_m.min(v);
        }
    }
    let h = ctx.mesh.max_edge_length();
    let limit = h * h * theta_m.powi(3);
    if dt > limit {
        log::warn!(
            "newton time step {dt} s exceeds the heuristic bound {limit:e} (min capacity {theta_m:e}, h {h})"
        );
    }
}

/// Tolerance reduction applied each time the converged iterate selects a
/// different active set, and its lower limit relative to `eps_a`.
const POLISH_FACTOR: f64 = 1e-2;
const POLISH_FLOOR: f64 = 1e-6;

/// Detects active-set cycling: the current set was seen before in this step
/// while eta has stagnated over the last five iterations.
struct CycleGuard {
    seen: Vec<Vec<bool>>,
    frozen: Option<Vec<bool>>,
}

impl CycleGuard {
    const WINDOW: usize = 5;
    const RATIO: f64 = 0.99;

    fn stagnating(eta: &[f64]) -> bool {
        let n = eta.len();
        n > Self::WINDOW && eta[n - 1] > Self::RATIO * eta[n - 1 - Self::WINDOW]
    }
}

/// Anderson mixing of the fixed-point map `x_k -> x_{k+1}` over the last
/// [`Accelerator::DEPTH`] iterates. Fluxes are scaled by `1/K_S`.
struct Accelerator {
    q_scale: f64,
    nf: usize,
    nh: usize,
    on: bool,
    inputs: VecDeque<Vec<f64>>,
    outputs: VecDeque<Vec<f64>>,
}

impl Accelerator {
    const DEPTH: usize = 5;

    fn new(k_s: f64, nf: usize, nh: usize) -> Self {
        Self {
            q_scale: 1.0 / k_s,
            nf,
            nh,
            on: false,
            inputs: VecDeque::new(),
            outputs: VecDeque::new(),
        }
    }

    fn pack(&self, s: &FieldState) -> Vec<f64> {
        let mut x: Vec<f64> = s.q.iter().map(|v| v * self.q_scale).collect();
        x.extend_from_slice(&s.psi);
        if let Some(l) = &s.lambda {
            x.extend_from_slice(l);
        }
        x
    }

    fn unpack(&self, x: &[f64], like: &FieldState) -> FieldState {
        let (nf, nh) = (self.nf, self.nh);
        FieldState {
            q: x[..nf].iter().map(|v| v / self.q_scale).collect(),
            psi: x[nf..nf + nh].to_vec(),
            lambda: like.lambda.as_ref().map(|_| x[nf + nh..].to_vec()),
            time: like.time,
        }
    }

    fn record(&mut self, x: Vec<f64>, g: Vec<f64>) {
        self.inputs.push_back(x);
        self.outputs.push_back(g);
        if self.inputs.len() > Self::DEPTH + 1 {
            self.inputs.pop_front();
            self.outputs.pop_front();
        }
    }

    fn extrapolate(&self) -> Option<Vec<f64>> {
        let m = self.inputs.len();
        if m < 2 {
            return None;
        }
        let f: Vec<Vec<f64>> = self
            .inputs
            .iter()
            .zip(&self.outputs)
            .map(|(x, g)| g.iter().zip(x).map(|(a, b)| a - b).collect())
            .collect();
        let diff =
            |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
        let df: Vec<Vec<f64>> = (0..m - 1).map(|j| diff(&f[j + 1], &f[j])).collect();
        let c = linalg::least_squares(&df, &f[m - 1])?;
        let mut x = self.outputs[m - 1].clone();
        for (j, cj) in c.iter().enumerate() {
            let dg = diff(&self.outputs[j + 1], &self.outputs[j]);
            for (xi, d) in x.iter_mut().zip(dg) {
                *xi -= cj * d;
            }
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Advances `state_n` by one step of length `dt` with normal rain `rain_n`
/// (per TOP edge, evaluated at the end of the step).
pub fn step(
    ctx: &StepContext<'_>,
    state_n: &FieldState,
    rain_n: &[f64],
    dt: f64,
) -> Result<(FieldState, StepReport), SeepageError> {
    let start = Instant::now();
    let mesh = ctx.mesh;
    let s = &ctx.settings;
    let lay = &ctx.layout;
    let (nf, nh, nt) = (lay.n_flux, lay.n_head, lay.n_trace);
    let ntop = mesh.top_edges().len();
    if !(dt > 0.0) {
        return Err(SeepageError::State(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if state_n.q.len() != nf || state_n.psi.len() != nh {
        return Err(SeepageError::State("state does not match the mesh".into()));
    }
    if rain_n.len() != ntop {
        return Err(SeepageError::State(format!(
            "{} rain values for {ntop} TOP edges",
            rain_n.len()
        )));
    }
    let hybrid = s.scheme == Scheme::Hybridized;
    let lambda_n = if hybrid {
        match &state_n.lambda {
            Some(l) if l.len() == nt => l.clone(),
            Some(_) => return Err(SeepageError::State("trace length mismatch".into())),
            None => trace_of_cells(mesh, &state_n.psi),
        }
    } else {
        Vec::new()
    };

    let theta_old: Vec<f64> = state_n
        .psi
        .iter()
        .map(|&p| constitutive::water_content(p, &ctx.material))
        .collect::<Result<_, _>>()?;

    let mut cur = FieldState {
        q: state_n.q.clone(),
        psi: state_n.psi.clone(),
        lambda: hybrid.then(|| lambda_n.clone()),
        time: state_n.time + dt,
    };
    let mut report = StepReport {
        step: 0,
        time: cur.time,
        iterations: 0,
        eta_history: Vec::new(),
        active_set_history: Vec::new(),
        converged: false,
        newton_from: None,
        mass_row_residual: 0.0,
        wall_time: 0.0,
    };
    let mut guard = CycleGuard {
        seen: Vec::new(),
        frozen: None,
    };
    let mut accel = Accelerator::new(ctx.material.k_s, nf, nh);
    let mut newton_sticky = false;
    let mut tol = s.eps_a;
    let mut fallback: Option<(FieldState, f64, usize)> = None;
    let mut advised = false;
    let e_p: Vec<f64> = mesh
        .top_edges()
        .iter()
        .zip(rain_n)
        .map(|(&e, p)| mesh.edge_length(e) * p)
        .collect();

    let mut fixed: Vec<(usize, f64)> = ctx.no_flux.iter().map(|&e| (e, 0.0)).collect();
    if s.scheme == Scheme::NeumannReference {
        fixed.extend(mesh.top_edges().iter().zip(rain_n).map(|(&e, &p)| (e, p)));
    }

    for k in 0..s.max_iter {
        let last_eta = report.eta_history.last().copied().unwrap_or(f64::INFINITY);
        let mut mode = choose_linearization(s, k, last_eta);
        if newton_sticky {
            mode = Linearization::Newton;
        }
        if mode == Linearization::Newton
            && s.linearization == LinearizationStrategy::Combined
            && !newton_sticky
        {
            newton_sticky = true;
            report.newton_from = Some(k);
        }
        if mode == Linearization::Newton && !advised {
            newton_step_advisory(ctx, &state_n.psi, dt);
            advised = true;
        }

        let mut inv_k = Vec::with_capacity(nh);
        let mut theta_k = Vec::with_capacity(nh);
        let mut l_cell = Vec::with_capacity(nh);
        for &p in &cur.psi {
            inv_k.push(1.0 / constitutive::permeability(p, &ctx.material)?);
            theta_k.push(constitutive::water_content(p, &ctx.material)?);
            l_cell.push(match mode {
                Linearization::LScheme => ctx.l_const,
                Linearization::Newton => constitutive::d_water_content(p, &ctx.material)?,
            });
        }
        let a = fem::assemble_a_cached(mesh, &ctx.masses, &inv_k)?;
        let bl = fem::assemble_bl_cached(
            mode,
            mesh,
            &ctx.masses,
            &ctx.b,
            &cur.psi,
            &cur.q,
            &ctx.material,
        )?;
        let nl = fem::assemble_nl(mesh, &l_cell, dt)?;
        let c = fem::assemble_c(mesh, &theta_old, &theta_k, dt)?;

        let sizes: Vec<usize> = if hybrid {
            vec![nf, nh, nt]
        } else {
            vec![nf, nh]
        };
        let mut sys = BlockSystem::new(&sizes);
        let mut rhs0: Vec<f64> = ctx
            .d
            .iter()
            .zip(&ctx.head_rhs)
            .map(|(d, h)| d + h)
            .collect();
        if mode == Linearization::Newton {
            // Jacobian part of B_L applied to psi_k
            let jac = bl.add(&ctx.b.transpose().scaled(-1.0))?;
            for (r, v) in rhs0.iter_mut().zip(jac.mul_vec(&cur.psi)) {
                *r += v;
            }
        }
        let mut rhs1 = c.clone();
        for (r, v) in rhs1.iter_mut().zip(nl.mul_vec(&cur.psi)) {
            *r += v;
        }

        let q_disp = fem::boundary_flux_q(mesh, &cur.q, rain_n);
        let mut active = match s.scheme {
            Scheme::NonHybridized => {
                let tr = trace_of_cells(mesh, &cur.psi);
                active_set_nohyb(&q_disp, &tr, &ctx.gamma, s.epsilon_relax)
            }
            Scheme::Hybridized => active_set_hyb(
                cur.lambda.as_ref().expect("hybrid state"),
                &q_disp,
                &ctx.gamma,
                s.epsilon_relax,
            ),
            Scheme::NeumannReference => vec![false; ntop],
        };
        if let Some(f) = &guard.frozen {
            active = f.clone();
        } else if s.scheme != Scheme::NeumannReference {
            if guard.seen.contains(&active) && CycleGuard::stagnating(&report.eta_history) {
                log::debug!("active set cycling detected at iteration {k}; freezing");
                guard.frozen = Some(active.clone());
            }
            guard.seen.push(active.clone());
        }

        sys.add_block(0, 0, a)?;
        sys.add_block(0, 1, bl)?;
        sys.add_block(1, 0, ctx.neg_b.clone())?;
        sys.add_block(1, 1, nl)?;
        match s.scheme {
            Scheme::NonHybridized => {
                let tr = trace_of_cells(mesh, &cur.psi);
                let h = assemble_h_nohyb(mesh, &active, &ctx.gamma, &q_disp, &tr, s.epsilon_relax);
                let hq_q = h.h_q.mul_vec(&cur.q);
                let hp_p = h.h_psi.mul_vec(&cur.psi);
                for i in 0..nf {
                    rhs0[i] += hq_q[i] + hp_p[i] + h.h_vec[i];
                }
                sys.add_block(0, 0, h.h_q)?;
                sys.add_block(0, 1, h.h_psi)?;
            }
            Scheme::Hybridized => {
                let lam = cur.lambda.as_ref().expect("hybrid state");
                let h = assemble_h_hyb(mesh, &active, &ctx.gamma, &q_disp, lam, s.epsilon_relax);
                let hq_q = h.h_q.mul_vec(&cur.q);
                let hl_l = h.h_lambda.mul_vec(lam);
                let rhs2: Vec<f64> = (0..nt)
                    .map(|i| e_p[i] + hq_q[i] + hl_l[i] + h.h_vec[i])
                    .collect();
                sys.add_block_transposed(0, 2, ctx.e.clone())?;
                sys.add_block(2, 0, ctx.e.clone())?;
                sys.add_block(2, 0, h.h_q)?;
                sys.add_block(2, 2, h.h_lambda)?;
                sys.add_rhs(2, &rhs2)?;
            }
            Scheme::NeumannReference => {}
        }
        sys.add_rhs(0, &rhs0)?;
        sys.add_rhs(1, &rhs1)?;

        let (mat, mut rhs) = assemble_blocks(&sys)?;
        let mat = mat.eliminate(&fixed, &mut rhs);
        let mut x = linalg::solve(&mat, &rhs)?;
        for &(i, v) in &fixed {
            x[i] = v;
        }
        let ax = mat.mul_vec(&x);
        report.mass_row_residual = (nf..nf + nh)
            .map(|i| (rhs[i] - ax[i]).abs())
            .fold(0.0, f64::max);

        let next = FieldState {
            q: x[..nf].to_vec(),
            psi: x[nf..nf + nh].to_vec(),
            lambda: hybrid.then(|| x[nf + nh..].to_vec()),
            time: cur.time,
        };
        let eta = eta_lin_cached(mesh, &ctx.masses, &cur, &next, &l_cell, dt, &ctx.material)?;
        report.iterations = k + 1;
        report.eta_history.push(eta);
        report
            .active_set_history
            .push(active.iter().filter(|&&a| a).count());
        let x_in = accel.pack(&cur);
        let x_out = accel.pack(&next);
        accel.record(x_in, x_out.clone());
        if !accel.on
            && mode == Linearization::LScheme
            && CycleGuard::stagnating(&report.eta_history)
        {
            log::debug!("iteration stagnates at {k}; enabling acceleration");
            accel.on = true;
        }
        cur = if accel.on && mode == Linearization::LScheme && eta > tol {
            match accel.extrapolate() {
                Some(x) => accel.unpack(&x, &next),
                None => next,
            }
        } else {
            next
        };

        if eta <= tol {
            if s.scheme == Scheme::NeumannReference {
                report.converged = true;
                break;
            }
            // the final iterate must reproduce the set it was computed with
            let q_disp = fem::boundary_flux_q(mesh, &cur.q, rain_n);
            let now = match s.scheme {
                Scheme::NonHybridized => active_set_nohyb(
                    &q_disp,
                    &trace_of_cells(mesh, &cur.psi),
                    &ctx.gamma,
                    s.epsilon_relax,
                ),
                _ => active_set_hyb(
                    cur.lambda.as_ref().expect("hybrid state"),
                    &q_disp,
                    &ctx.gamma,
                    s.epsilon_relax,
                ),
            };
            if now == active {
                report.converged = true;
                break;
            }
            log::debug!("set changed at convergence (iteration {k}); polishing");
            if fallback.is_none() {
                fallback = Some((cur.clone(), report.mass_row_residual, k + 1));
            }
            guard.frozen = Some(now);
            guard.seen.clear();
            tol = (tol * POLISH_FACTOR).max(s.eps_a * POLISH_FLOOR);
        }
    }
    if !report.converged {
        // polishing ran out of iterations: keep the first iterate within eps_a
        if let Some((state, res, its)) = fallback {
            cur = state;
            report.mass_row_residual = res;
            report.iterations = its;
            report.eta_history.truncate(its);
            report.active_set_history.truncate(its);
            report.converged = true;
        }
    }
    report.wall_time = start.elapsed().as_secs_f64();
    if !report.converged {
        return Err(SeepageError::NotConverged {
            report: Box::new(report),
            state: Box::new(cur),
        });
    }
    Ok((cur, report))
}
