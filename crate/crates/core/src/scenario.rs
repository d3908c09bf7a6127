//! Experiment descriptions, the named presets and the time loop.
//!
//! # Config format
//!
//! A scenario is a TOML document. Times carry their unit in the key:
//! exactly one of `dt_hours` / `dt_seconds` and one of `t_final_hours` /
//! `t_final_seconds` must be present.
//!
//! ```toml
//! name = "rect_01"
//! soil = "clay"                 # or a table theta_r, theta_s, alpha, m, k_s
//! rain_ratio = 0.1              # p / K_S, rain p = -(rain_ratio K_S) e_z
//! dt_hours = 10.0
//! t_final_hours = 100.0
//!
//! [geometry]
//! kind = "rectangle"            # or "profile" (top, bottom, h_top, h_bot)
//! width = 0.1                   # or "mesh_file" (path)
//! height = 5.0
//! h = 0.05
//!
//! [bottom_bc]
//! kind = "head"                 # "no_flux", "head" (value), "compatible"
//! value = 0.0
//!
//! [initial_condition]
//! kind = "hydrostatic"          # psi = z_ref - z
//! z_ref = 0.0                   # "uniform" (psi0), "linear_in_depth" (a, b)
//!
//! [solver]
//! scheme = "non_hybridized"     # "hybridized", "neumann_reference"
//! gamma0 = 1e-10
//! gamma0_hyb = 1.0
//! epsilon_relax = 0.0
//! linearization = "lscheme"     # "newton", "combined"
//! eps_a = 1e-5
//! max_iter = 200
//! combined_switch_eta = 1e-3
//! combined_switch_iter = 100
//! # l_override = 0.5
//!
//! [[outputs]]
//! kind = "vtk_series"           # "profile_csv" (needs x), "report_json", "boundary_csv"
//! every = 1
//! prefix = "rect_01"
//! ```
//!
//! `linear_in_depth` sets `psi = a + b (z - z_bot(x))`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{self, ConstitutiveError, MaterialParams};
use crate::fem::{self, DofLayout};
use crate::mesh::{self, EdgeTag, MeshError, Point, TriMesh};
use crate::seepage::{self, BottomCondition, FieldState, SeepageError, SolverSettings, StepReport};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("cannot read mesh file {path}: {message}")]
    MeshFile { path: PathBuf, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
    #[error(transparent)]
    Seepage(#[from] SeepageError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Rectangle {
        width: f64,
        height: f64,
        h: f64,
    },
    Profile {
        top: Vec<Point>,
        bottom: Vec<Point>,
        h_top: f64,
        h_bot: f64,
    },
    MeshFile {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Soil {
    Preset(String),
    Custom(MaterialParams),
}

impl Soil {
    pub fn material(&self) -> Result<MaterialParams, ConstitutiveError> {
        match self {
            Soil::Preset(name) => MaterialParams::preset(name),
            Soil::Custom(p) => {
                p.validate()?;
                Ok(*p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BottomBc {
    NoFlux,
    Head {
        value: f64,
    },
    /// Head equal to the initial condition on the bottom boundary.
    Compatible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Uniform {
        psi0: f64,
    },
    /// `psi = z_ref - z`
    Hydrostatic {
        z_ref: f64,
    },
    /// `psi = a + b (z - z_bot(x))`
    LinearInDepth {
        a: f64,
        b: f64,
    },
}

impl InitialCondition {
    pub fn eval(&self, x: Point, z_bot: f64) -> f64 {
        match *self {
            InitialCondition::Uniform { psi0 } => psi0,
            InitialCondition::Hydrostatic { z_ref } => z_ref - x[1],
            InitialCondition::LinearInDepth { a, b } => a + b * (x[1] - z_bot),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    VtkSeries,
    /// Needs `x`.
    ProfileCsv,
    ReportJson,
    BoundaryCsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRequest {
    pub kind: OutputKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default = "one")]
    pub every: usize,
    pub prefix: String,
}

fn one() -> usize {
    1
}

/// A complete experiment. Times are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct ScenarioConfig {
    pub name: String,
    pub geometry: Geometry,
    pub soil: Soil,
    pub rain_ratio: f64,
    pub bottom_bc: BottomBc,
    pub initial_condition: InitialCondition,
    pub t_final: f64,
    pub dt: f64,
    pub solver: SolverSettings,
    pub outputs: Vec<OutputRequest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    soil: Soil,
    rain_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt_hours: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_final_hours: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_final_seconds: Option<f64>,
    geometry: Geometry,
    bottom_bc: BottomBc,
    initial_condition: InitialCondition,
    #[serde(default)]
    solver: SolverSettings,
    #[serde(default)]
    outputs: Vec<OutputRequest>,
}

fn pick_time(name: &str, hours: Option<f64>, seconds: Option<f64>) -> Result<f64, String> {
    match (hours, seconds) {
        (Some(h), None) => Ok(h * 3600.0),
        (None, Some(s)) => Ok(s),
        (None, None) => Err(format!("one of {name}_hours or {name}_seconds is required")),
        (Some(_), Some(_)) => Err(format!("give only one of {name}_hours and {name}_seconds")),
    }
}

/// Hours when the conversion is exact, seconds otherwise.
fn split_time(seconds: f64) -> (Option<f64>, Option<f64>) {
    let h = seconds / 3600.0;
    if h * 3600.0 == seconds {
        (Some(h), None)
    } else {
        (None, Some(seconds))
    }
}

impl TryFrom<RawConfig> for ScenarioConfig {
    type Error = String;

    fn try_from(r: RawConfig) -> Result<Self, String> {
        let dt = pick_time("dt", r.dt_hours, r.dt_seconds)?;
        let t_final = pick_time("t_final", r.t_final_hours, r.t_final_seconds)?;
        let c = ScenarioConfig {
            name: r.name,
            geometry: r.geometry,
            soil: r.soil,
            rain_ratio: r.rain_ratio,
            bottom_bc: r.bottom_bc,
            initial_condition: r.initial_condition,
            t_final,
            dt,
            solver: r.solver,
            outputs: r.outputs,
        };
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

impl From<ScenarioConfig> for RawConfig {
    fn from(c: ScenarioConfig) -> Self {
        let (dt_hours, dt_seconds) = split_time(c.dt);
        let (t_final_hours, t_final_seconds) = split_time(c.t_final);
        RawConfig {
            name: c.name,
            soil: c.soil,
            rain_ratio: c.rain_ratio,
            dt_hours,
            dt_seconds,
            t_final_hours,
            t_final_seconds,
            geometry: c.geometry,
            bottom_bc: c.bottom_bc,
            initial_condition: c.initial_condition,
            solver: c.solver,
            outputs: c.outputs,
        }
    }
}

pub const PRESET_NAMES: [&str; 9] = [
    "rect_01",
    "rect_1",
    "rect_10",
    "rect_silt_relaxed",
    "rect_sand",
    "slope_wetting",
    "slope_exitpoint",
    "natural_slope_1",
    "natural_slope_2",
];

/// Mesh coarsening of the natural-slope presets relative to the surface
/// and base sizes 0.25 m / 0.5 m of the full-resolution run.
pub const NATURAL_SLOPE_COARSENING: f64 = 10.0;

const HOUR: f64 = 3600.0;

/// Two plateaus (z = 2 m on x in [0, 2], z = 3.5 m on x in [5, 7]) joined
/// by a straight slope, over a flat base at z = 0.
pub fn artificial_slope_profiles() -> (Vec<Point>, Vec<Point>) {
    (
        vec![[0.0, 2.0], [2.0, 2.0], [5.0, 3.5], [7.0, 3.5]],
        vec![[0.0, 0.0], [7.0, 0.0]],
    )
}

/// Synthetic hillside about 600 m long with a bedrock 6 to 16 m deep.
pub fn natural_slope_profiles() -> (Vec<Point>, Vec<Point>) {
    let xs = [
        0.0, 60.0, 120.0, 180.0, 240.0, 300.0, 360.0, 420.0, 480.0, 540.0, 600.0,
    ];
    let top = [
        520.0, 512.0, 500.0, 490.0, 476.0, 468.0, 452.0, 440.0, 425.0, 410.0, 400.0,
    ];
    let depth = [
        8.0, 10.0, 14.0, 12.0, 15.0, 11.0, 13.0, 16.0, 12.0, 9.0, 6.0,
    ];
    let t = xs.iter().zip(top).map(|(&x, z)| [x, z]).collect();
    let b = xs
        .iter()
        .zip(top)
        .zip(depth)
        .map(|((&x, z), d)| [x, z - d])
        .collect();
    (t, b)
}

fn rect(name: &str, soil: &str, ratio: f64, h: f64, dt: f64, t_final: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        geometry: Geometry::Rectangle {
            width: 0.1,
            height: 5.0,
            h,
        },
        soil: Soil::Preset(soil.into()),
        rain_ratio: ratio,
        bottom_bc: BottomBc::Head { value: 0.0 },
        initial_condition: InitialCondition::Hydrostatic { z_ref: 0.0 },
        t_final,
        dt,
        solver: SolverSettings {
            eps_a: 1e-5,
            ..SolverSettings::default()
        },
        outputs: vec![
            OutputRequest {
                kind: OutputKind::VtkSeries,
                x: None,
                every: 1,
                prefix: name.into(),
            },
            OutputRequest {
                kind: OutputKind::ProfileCsv,
                x: Some(0.05),
                every: 1,
                prefix: name.into(),
            },
            OutputRequest {
                kind: OutputKind::ReportJson,
                x: None,
                every: 1,
                prefix: name.into(),
            },
        ],
    }
}

fn slope_outputs(name: &str) -> Vec<OutputRequest> {
    vec![
        OutputRequest {
            kind: OutputKind::VtkSeries,
            x: None,
            every: 1,
            prefix: name.into(),
        },
        OutputRequest {
            kind: OutputKind::BoundaryCsv,
            x: None,
            every: 1,
            prefix: name.into(),
        },
        OutputRequest {
            kind: OutputKind::ReportJson,
            x: None,
            every: 1,
            prefix: name.into(),
        },
    ]
}

pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let c = match name {
        "rect_01" => rect(name, "clay", 0.1, 0.05, 10.0 * HOUR, 100.0 * HOUR),
        "rect_1" => rect(name, "clay", 1.0, 0.05, 5.0 * HOUR, 50.0 * HOUR),
        "rect_10" => rect(name, "clay", 10.0, 0.05, 5.0 * HOUR, 50.0 * HOUR),
        "rect_silt_relaxed" => {
            let mut c = rect(name, "silt", 1.0, 0.1, HOUR, 1000.0 * HOUR);
            c.solver.epsilon_relax = 1e-2;
            c.solver.max_iter = 20;
            for o in &mut c.outputs {
                o.every = 100;
            }
            c
        }
        "rect_sand" => {
            let mut c = rect(name, "sand", 10.0, 0.01, 1800.0, 6.0 * HOUR);
            c.solver.linearization = seepage::LinearizationStrategy::Newton;
            c
        }
        "slope_wetting" | "slope_exitpoint" => {
            let (top, bottom) = artificial_slope_profiles();
            ScenarioConfig {
                name: name.into(),
                geometry: Geometry::Profile {
                    top,
                    bottom,
                    h_top: 0.05,
                    h_bot: 0.3,
                },
                soil: Soil::Preset("clay".into()),
                rain_ratio: 10.0,
                bottom_bc: BottomBc::Compatible,
                initial_condition: if name == "slope_wetting" {
                    InitialCondition::Uniform { psi0: -20.0 }
                } else {
                    InitialCondition::Hydrostatic { z_ref: 2.0 }
                },
                t_final: 20.0 * HOUR,
                dt: 5.0 * HOUR,
                solver: SolverSettings {
                    eps_a: 1e-5,
                    ..SolverSettings::default()
                },
                outputs: slope_outputs(name),
            }
        }
        "natural_slope_1" | "natural_slope_2" => {
            let (top, bottom) = natural_slope_profiles();
            let first = name == "natural_slope_1";
            ScenarioConfig {
                name: name.into(),
                geometry: Geometry::Profile {
                    top,
                    bottom,
                    h_top: 0.25 * NATURAL_SLOPE_COARSENING,
                    h_bot: 0.5 * NATURAL_SLOPE_COARSENING,
                },
                soil: Soil::Preset("clay".into()),
                rain_ratio: 10.0,
                bottom_bc: if first {
                    BottomBc::Compatible
                } else {
                    BottomBc::NoFlux
                },
                initial_condition: if first {
                    InitialCondition::Uniform { psi0: -20.0 }
                } else {
                    InitialCondition::LinearInDepth { a: 1.0, b: -0.2 }
                },
                t_final: if first { 50.0 * HOUR } else { 40.0 * HOUR },
                dt: if first { 5.0 * HOUR } else { 20.0 * HOUR },
                solver: SolverSettings {
                    scheme: seepage::Scheme::Hybridized,
                    eps_a: 1e-5,
                    linearization: if first {
                        seepage::LinearizationStrategy::Lscheme
                    } else {
                        seepage::LinearizationStrategy::Combined
                    },
                    ..SolverSettings::default()
                },
                outputs: slope_outputs(name),
            }
        }
        other => return Err(ScenarioError::UnknownPreset(other.into())),
    };
    Ok(c)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {} s", self.dt));
        }
        if !(self.t_final >= self.dt && self.t_final.is_finite()) {
            return bad(format!(
                "t_final ({} s) must be at least dt ({} s)",
                self.t_final, self.dt
            ));
        }
        let n = (self.t_final / self.dt).round();
        if (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return bad(format!(
                "t_final ({} s) is not a whole number of steps of {} s",
                self.t_final, self.dt
            ));
        }
        if !(self.rain_ratio >= 0.0 && self.rain_ratio.is_finite()) {
            return bad(format!("rain_ratio must be >= 0, got {}", self.rain_ratio));
        }
        self.soil.material()?;
        self.solver.validate()?;
        for o in &self.outputs {
            if o.every < 1 {
                return bad(format!("output `{}` needs every >= 1", o.prefix));
            }
            match (o.kind, o.x) {
                (OutputKind::ProfileCsv, Some(x)) if x.is_finite() => {}
                (OutputKind::ProfileCsv, _) => {
                    return bad(format!("profile output `{}` needs a finite x", o.prefix))
                }
                (_, Some(_)) => return bad(format!("output `{}` takes no x", o.prefix)),
                _ => {}
            }
        }
        let finite = match self.initial_condition {
            InitialCondition::Uniform { psi0 } => psi0.is_finite(),
            InitialCondition::Hydrostatic { z_ref } => z_ref.is_finite(),
            InitialCondition::LinearInDepth { a, b } => a.is_finite() && b.is_finite(),
        };
        if !finite {
            return bad("initial condition parameters must be finite".into());
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn material(&self) -> Result<MaterialParams, ScenarioError> {
        Ok(self.soil.material()?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Applies a dotted `key=value` override, e.g. `solver.max_iter=1`.
    /// The value is read as a TOML value, falling back to a plain string.
    /// Setting one unit variant of a time removes the other.
    pub fn with_override(&self, assignment: &str) -> Result<Self, ScenarioError> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            ScenarioError::Config(format!("override `{assignment}` is not key=value"))
        })?;
        let key = key.trim();
        let value = value.trim();
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut doc: toml::Table =
            toml::from_str(&self.to_toml()).expect("serialized scenario parses");
        let parts: Vec<&str> = key.split('.').collect();
        let (leaf, path) = parts.split_last().expect("split yields one part");
        let mut table = &mut doc;
        for p in path {
            let next = table.get_mut(*p).ok_or_else(|| {
                ScenarioError::Config(format!("override `{key}`: no section `{p}`"))
            })?;
            table = match next {
                toml::Value::Table(t) => t,
                _ => {
                    return Err(ScenarioError::Config(format!(
                        "override `{key}`: `{p}` is not a section"
                    )))
                }
            };
        }
        for (unit, other) in [("_hours", "_seconds"), ("_seconds", "_hours")] {
            if let Some(stem) = leaf.strip_suffix(unit) {
                table.remove(&format!("{stem}{other}"));
            }
        }
        table.insert(leaf.to_string(), parsed);
        let text = toml::to_string(&doc).expect("table serializes");
        Self::from_toml(&text).map_err(|e| ScenarioError::Config(format!("override `{key}`: {e}")))
    }

    /// Builds the mesh described by the geometry section.
    pub fn build_mesh(&self) -> Result<TriMesh, ScenarioError> {
        Ok(match &self.geometry {
            Geometry::Rectangle { width, height, h } => {
                mesh::build_rectangle_mesh(*width, *height, *h)?
            }
            Geometry::Profile {
                top,
                bottom,
                h_top,
                h_bot,
            } => mesh::build_profile_mesh(top, bottom, *h_top, *h_bot)?,
            Geometry::MeshFile { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::MeshFile {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                mesh::import_mesh(&text)?
            }
        })
    }

    /// Normal rain `p . n` per TOP edge.
    pub fn rain_normal(&self, mesh: &TriMesh) -> Result<Vec<f64>, ScenarioError> {
        let k_s = self.material()?.k_s;
        Ok(fem::rain_normal(mesh, [0.0, -self.rain_ratio * k_s]))
    }

    pub fn bottom_condition(&self, mesh: &TriMesh) -> BottomCondition {
        let bottom: Vec<usize> = (0..mesh.n_edges())
            .filter(|&e| mesh.tag(e) == EdgeTag::Bottom)
            .collect();
        match self.bottom_bc {
            BottomBc::NoFlux => BottomCondition::NoFlux,
            BottomBc::Head { value } => BottomCondition::Head(vec![value; bottom.len()]),
            BottomBc::Compatible => BottomCondition::Head(
                bottom
                    .iter()
                    .map(|&e| {
                        let m = mesh.edge_geometry(e).midpoint;
                        self.initial_condition.eval(m, m[1])
                    })
                    .collect(),
            ),
        }
    }
}

/// Initial field: the condition at cell centroids, zero flux, traces equal
/// to the adjacent cell head.
pub fn initial_state(config: &ScenarioConfig, mesh: &TriMesh, layout: &DofLayout) -> FieldState {
    let (lo, _) = mesh.bounding_box();
    let psi: Vec<f64> = (0..mesh.n_cells())
        .map(|t| {
            let c = mesh.cell_centroid(t);
            let zb = mesh.bottom_elevation(c[0]).unwrap_or(lo[1]);
            config.initial_condition.eval(c, zb)
        })
        .collect();
    let lambda = (layout.n_trace > 0).then(|| seepage::trace_of_cells(mesh, &psi));
    FieldState {
        q: vec![0.0; mesh.n_edges()],
        psi,
        lambda,
        time: 0.0,
    }
}

/// Result of a time loop. `states[0]` is the initial state; a failed step
/// leaves its last iterate out of `states`.
#[derive(Debug)]
pub struct RunOutcome {
    pub states: Vec<FieldState>,
    pub reports: Vec<StepReport>,
    pub rain_n: Vec<f64>,
    pub failure: Option<SeepageError>,
}

impl RunOutcome {
    pub fn final_state(&self) -> &FieldState {
        self.states.last().expect("initial state present")
    }
}

/// Runs the time loop on `mesh`. `observer` sees every accepted step.
pub fn run(
    config: &ScenarioConfig,
    mesh: &TriMesh,
    mut observer: impl FnMut(usize, &FieldState, &StepReport),
) -> Result<RunOutcome, ScenarioError> {
    config.validate()?;
    let material = config.material()?;
    let bottom = config.bottom_condition(mesh);
    let ctx = seepage::StepContext::new(mesh, material, config.solver.clone(), &bottom)?;
    let rain_n = config.rain_normal(mesh)?;
    let mut states = vec![initial_state(config, mesh, &ctx.layout)];
    let mut reports = Vec::new();
    let mut failure = None;
    for n in 0..config.n_steps() {
        let prev = states.last().expect("state present");
        match seepage::step(&ctx, prev, &rain_n, config.dt) {
            Ok((mut next, mut report)) => {
                next.time = (n + 1) as f64 * config.dt;
                report.step = n + 1;
                report.time = next.time;
                observer(n + 1, &next, &report);
                states.push(next);
                reports.push(report);
            }
            Err(SeepageError::NotConverged { mut report, state }) => {
                report.step = n + 1;
                reports.push((*report).clone());
                failure = Some(SeepageError::NotConverged { report, state });
                break;
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    Ok(RunOutcome {
        states,
        reports,
        rain_n,
        failure,
    })
}

/// Water content per cell; helper for post-processing.
pub fn water_contents(
    psi: &[f64],
    material: &MaterialParams,
) -> Result<Vec<f64>, ConstitutiveError> {
    psi.iter()
        .map(|&p| constitutive::water_content(p, material))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_valid() {
        for name in PRESET_NAMES {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.name, name);
        }
        assert!(matches!(
            preset("rect_2"),
            Err(ScenarioError::UnknownPreset(_))
        ));
    }

    #[test]
    fn rect_01_values() {
        let c = preset("rect_01").unwrap();
        assert_eq!(c.dt, 36000.0);
        assert_eq!(c.t_final, 360000.0);
        assert_eq!(c.n_steps(), 10);
        assert_eq!(c.bottom_bc, BottomBc::Head { value: 0.0 });
    }

    #[test]
    fn unit_keys_exclusive() {
        let text = preset("rect_01").unwrap().to_toml();
        let both = text.replace("dt_hours = 10.0", "dt_hours = 10.0\ndt_seconds = 36000.0");
        assert!(ScenarioConfig::from_toml(&both).is_err());
        let none = text.replace("dt_hours = 10.0\n", "");
        assert!(ScenarioConfig::from_toml(&none).is_err());
    }

    #[test]
    fn overrides() {
        let c = preset("rect_01").unwrap();
        let d = c.with_override("solver.max_iter=1").unwrap();
        assert_eq!(d.solver.max_iter, 1);
        let d = c.with_override("dt_seconds=18000").unwrap();
        assert_eq!(d.dt, 18000.0);
        let d = c.with_override("solver.scheme=hybridized").unwrap();
        assert_eq!(d.solver.scheme, seepage::Scheme::Hybridized);
        assert!(c.with_override("solver.max_iterations=3").is_err());
        assert!(c.with_override("nosection.x=3").is_err());
        assert!(c.with_override("dt_hours=-1").is_err());
    }
}
