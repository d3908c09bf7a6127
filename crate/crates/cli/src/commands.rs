use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use seepage_core::io_output::{self, OutputWriter};
use seepage_core::mesh::{export_mesh, TriMesh};
use seepage_core::scenario::{self, RunOutcome, ScenarioConfig};
use seepage_core::seepage::{Scheme, SeepageError, StepReport};

use crate::{Baseline, Source, SweepParam};

type Result<T> = std::result::Result<T, Box<dyn Error + Send + Sync>>;

const HOUR: f64 = 3600.0;

pub fn load(source: &Source) -> Result<ScenarioConfig> {
    let mut cfg = match (&source.preset, &source.config) {
        (Some(name), _) => scenario::preset(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            ScenarioConfig::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        (None, None) => return Err("one of --preset or --config is required".into()),
    };
    for o in &source.overrides {
        cfg = cfg.with_override(o)?;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()).into())
}

fn summary(r: &StepReport) -> String {
    format!(
        "step {:4}  t = {:8.3} h  iterations {:3}  eta {:.3e}  active {}",
        r.step,
        r.time / HOUR,
        r.iterations,
        r.eta_history.last().copied().unwrap_or(f64::NAN),
        r.active_set_history.last().copied().unwrap_or(0),
    )
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Exit code of a finished time loop; prints the failure if any.
fn failure_code(name: &str, failure: &Option<SeepageError>) -> u8 {
    match failure {
        None => 0,
        Some(e) => {
            eprintln!("{name}: {e}");
            2
        }
    }
}

pub fn run(source: &Source) -> Result<u8> {
    let cfg = load(source)?;
    let mesh = cfg.build_mesh()?;
    let rain_n = cfg.rain_normal(&mesh)?;
    let mut writer = OutputWriter::new(&source.out, &cfg.outputs)?;
    let mut write_err = None;
    let outcome = scenario::run(&cfg, &mesh, |n, state, report| {
        if !source.quiet {
            println!("{}", summary(report));
        }
        if write_err.is_none() {
            write_err = writer.step(&mesh, n, state, &rain_n).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    if let Some(r) = outcome.reports.last().filter(|r| !r.converged) {
        if !source.quiet {
            println!("{} (not converged)", summary(r));
        }
    }
    writer.finish(&outcome.reports)?;
    if !source.quiet {
        println!(
            "wrote {} files to {}",
            writer.written().len(),
            source.out.display()
        );
    }
    Ok(failure_code(&cfg.name, &outcome.failure))
}

fn with_scheme(cfg: &ScenarioConfig, scheme: Scheme) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.solver.scheme = scheme;
    c
}

/// Runs the configurations on their own threads.
fn run_all(configs: &[ScenarioConfig], mesh: &TriMesh) -> Vec<Result<RunOutcome>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| s.spawn(move || scenario::run(c, mesh, |_, _, _| {}).map_err(Into::into)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("worker panicked".into())))
            .collect()
    })
}

pub fn compare(source: &Source) -> Result<u8> {
    let cfg = load(source)?;
    if cfg.rain_ratio > 1.0 {
        log::warn!(
            "rain_ratio {} > 1: the Neumann reference ponds and is not a physical reference",
            cfg.rain_ratio
        );
    }
    let mesh = cfg.build_mesh()?;
    let schemes = [
        Scheme::NeumannReference,
        Scheme::NonHybridized,
        Scheme::Hybridized,
    ];
    let configs: Vec<_> = schemes.iter().map(|&s| with_scheme(&cfg, s)).collect();
    let mut outcomes = Vec::new();
    for r in run_all(&configs, &mesh) {
        outcomes.push(r?);
    }
    let mut code = 0;
    for (s, o) in schemes.iter().zip(&outcomes) {
        code = code.max(failure_code(s.name(), &o.failure));
    }
    let steps = outcomes.iter().map(|o| o.states.len()).min().unwrap_or(0);
    let mut csv = String::from("step,time_h,non_hybridized,hybridized\n");
    for n in 1..steps {
        let r = &outcomes[0].states[n].psi;
        writeln!(
            csv,
            "{},{},{},{}",
            n,
            outcomes[0].states[n].time / HOUR,
            max_diff(&outcomes[1].states[n].psi, r),
            max_diff(&outcomes[2].states[n].psi, r),
        )
        .unwrap();
    }
    create_dir(&source.out)?;
    let path = source.out.join(format!("{}_compare.csv", cfg.name));
    fs::write(&path, &csv).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    if !source.quiet {
        println!(
            "{:>6} {:>10} {:>16} {:>16}",
            "step", "time [h]", "non_hybridized", "hybridized"
        );
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let num = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
            println!(
                "{:>6} {:>10.3} {:>16.6e} {:>16.6e}",
                f[0],
                num(f[1]),
                num(f[2]),
                num(f[3])
            );
        }
        println!("wrote {}", path.display());
    }
    Ok(code)
}

pub fn sweep(source: &Source, param: SweepParam, values: &[f64], baseline: Baseline) -> Result<u8> {
    if values.is_empty() {
        return Err("sweep needs at least one value".into());
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(format!("sweep values must be positive, got {v}").into());
    }
    let cfg = load(source)?;
    let mesh = cfg.build_mesh()?;
    let (key, scheme) = match param {
        SweepParam::Gamma0 => ("gamma0", Scheme::NonHybridized),
        SweepParam::Gamma0Hyb => ("gamma0_hyb", Scheme::Hybridized),
    };
    let mut configs: Vec<_> = values
        .iter()
        .map(|&v| {
            let mut c = with_scheme(&cfg, scheme);
            match param {
                SweepParam::Gamma0 => c.solver.gamma0 = v,
                SweepParam::Gamma0Hyb => c.solver.gamma0_hyb = v,
            }
            c
        })
        .collect();
    if baseline == Baseline::NeumannReference {
        configs.push(with_scheme(&cfg, Scheme::NeumannReference));
    }
    let mut results = run_all(&configs, &mesh);
    let base = match baseline {
        Baseline::NeumannReference => results.pop().expect("baseline run present")?,
        Baseline::First => match &results[0] {
            Ok(o) => RunOutcome {
                states: o.states.clone(),
                reports: Vec::new(),
                rain_n: Vec::new(),
                failure: o
                    .failure
                    .as_ref()
                    .map(|e| SeepageError::State(e.to_string())),
            },
            Err(e) => return Err(format!("baseline run failed: {e}").into()),
        },
    };
    if base.failure.is_some() {
        failure_code("baseline", &base.failure);
        return Ok(2);
    }
    create_dir(&source.out)?;
    let mut code = 0;
    let mut csv = format!("{key},converged,linf_diff\n");
    for (v, r) in values.iter().zip(&results) {
        match r {
            Ok(o) if o.failure.is_none() => {
                let d = max_diff(&o.final_state().psi, &base.final_state().psi);
                writeln!(csv, "{v},true,{d}").unwrap();
                let p = source
                    .out
                    .join(format!("{}_{key}_{v:e}_report.json", cfg.name));
                io_output::write_report(&o.reports, &p)?;
            }
            Ok(o) => {
                code = failure_code(&format!("{key}={v}"), &o.failure);
                writeln!(csv, "{v},false,").unwrap();
                let p = source
                    .out
                    .join(format!("{}_{key}_{v:e}_report.json", cfg.name));
                io_output::write_report(&o.reports, &p)?;
            }
            Err(e) => {
                eprintln!("{key}={v}: {e}");
                code = 2;
                writeln!(csv, "{v},false,").unwrap();
            }
        }
    }
    let path = source.out.join(format!("{}_sweep_{key}.csv", cfg.name));
    fs::write(&path, &csv).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    if !source.quiet {
        print!("{csv}");
        println!("wrote {}", path.display());
    }
    Ok(code)
}

pub fn meshgen(source: &Source) -> Result<u8> {
    let cfg = load(source)?;
    let mesh = cfg.build_mesh()?;
    create_dir(&source.out)?;
    let path = source.out.join(format!("{}.mesh", cfg.name));
    fs::write(&path, export_mesh(&mesh))
        .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    println!(
        "{} nodes, {} edges, {} triangles, {} top edges",
        mesh.n_nodes(),
        mesh.n_edges(),
        mesh.n_cells(),
        mesh.top_edges().len()
    );
    if !source.quiet {
        println!("wrote {}", path.display());
    }
    Ok(0)
}

pub fn presets(show: Option<&str>) -> Result<u8> {
    match show {
        Some(name) => print!("{}", scenario::preset(name)?.to_toml()),
        None => {
            for name in scenario::PRESET_NAMES {
                println!("{name}");
            }
        }
    }
    Ok(0)
}
