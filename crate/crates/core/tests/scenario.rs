use seepage_core::mesh::EdgeTag;
use seepage_core::scenario::*;
use seepage_core::seepage::{self, BottomCondition, LinearizationStrategy, Scheme};

#[test]
fn presets_round_trip_through_toml() {
    for name in PRESET_NAMES {
        let c = preset(name).unwrap();
        let text = c.to_toml();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(back, c, "{name}");
        assert_eq!(back.to_toml(), text, "{name}");
        c.validate().unwrap();
    }
}

#[test]
fn unknown_preset() {
    assert!(matches!(
        preset("rect_2"),
        Err(ScenarioError::UnknownPreset(_))
    ));
}

#[test]
fn overrides() {
    let c = preset("rect_01").unwrap();
    let d = c.with_override("solver.max_iter=1").unwrap();
    assert_eq!(d.solver.max_iter, 1);
    let d = d.with_override("solver.scheme=hybridized").unwrap();
    assert_eq!(d.solver.scheme, Scheme::Hybridized);
    let d = d
        .with_override("solver.linearization=\"combined\"")
        .unwrap();
    assert_eq!(d.solver.linearization, LinearizationStrategy::Combined);
    let d = d.with_override("dt_seconds=1800").unwrap();
    assert_eq!(d.dt, 1800.0);
    let d = d.with_override("t_final_hours=2").unwrap();
    assert_eq!((d.t_final, d.n_steps()), (7200.0, 4));
    let d = d.with_override("rain_ratio=0.5").unwrap();
    assert_eq!(d.rain_ratio, 0.5);
    assert_eq!(ScenarioConfig::from_toml(&d.to_toml()).unwrap(), d);

    for bad in [
        "solver.max_iterations=3",
        "solver.gamma0=-1",
        "nosection.x=1",
        "dt_hours=0",
        "max_iter",
        "soil=\"loam\"",
    ] {
        let r = c.with_override(bad).and_then(|c| c.material().map(|_| c));
        assert!(r.is_err(), "{bad}");
    }
}

#[test]
fn rejects_bad_files() {
    let c = preset("rect_1").unwrap();
    let text = c
        .to_toml()
        .replace("rain_ratio = 1.0", "rain_ratio = 1.0\nrainfall = 2.0");
    assert!(ScenarioConfig::from_toml(&text).is_err());
    let text = c
        .to_toml()
        .replace("dt_hours = 5.0", "dt_hours = 5.0\ndt_seconds = 18000.0");
    assert!(ScenarioConfig::from_toml(&text).is_err());
    assert!(ScenarioConfig::from_toml("name = 3").is_err());
}

#[test]
fn initial_conditions() {
    let h = InitialCondition::Hydrostatic { z_ref: 2.0 };
    assert_eq!(h.eval([1.0, 0.5], 0.0), 1.5);
    let u = InitialCondition::Uniform { psi0: -20.0 };
    assert_eq!(u.eval([3.0, 7.0], 1.0), -20.0);
    let l = InitialCondition::LinearInDepth { a: 1.0, b: -0.2 };
    assert!((l.eval([0.0, 6.0], 1.0) - 0.0).abs() < 1e-15);
}

#[test]
fn initial_state_and_bottom_condition() {
    let c = preset("slope_exitpoint").unwrap();
    let m = c.build_mesh().unwrap();
    let lay = seepage_core::fem::DofLayout::new(&m, c.solver.scheme == Scheme::Hybridized);
    let s = initial_state(&c, &m, &lay);
    assert_eq!(s.psi.len(), m.n_cells());
    assert!(s.q.iter().all(|&q| q == 0.0));
    for t in 0..m.n_cells() {
        assert_eq!(s.psi[t], 2.0 - m.cell_centroid(t)[1]);
    }
    match c.bottom_condition(&m) {
        BottomCondition::Head(v) => {
            let n = (0..m.n_edges())
                .filter(|&e| m.tag(e) == EdgeTag::Bottom)
                .count();
            assert_eq!(v.len(), n);
            // flat base at z = 0
            assert!(v.iter().all(|&h| h == 2.0));
        }
        BottomCondition::NoFlux => panic!("compatible head expected"),
    }
    let n2 = preset("natural_slope_2").unwrap();
    let m2 = n2.build_mesh().unwrap();
    assert_eq!(n2.bottom_condition(&m2), BottomCondition::NoFlux);
    let lay2 = seepage_core::fem::DofLayout::new(&m2, true);
    assert_eq!(
        initial_state(&n2, &m2, &lay2).lambda.unwrap().len(),
        m2.top_edges().len()
    );
}

#[test]
fn rain_points_down() {
    let c = preset("rect_10").unwrap();
    let m = c.build_mesh().unwrap();
    let r = c.rain_normal(&m).unwrap();
    assert!(r.iter().all(|&p| (p + 1e-5).abs() < 1e-20));
}

#[test]
fn run_is_deterministic() {
    let c = preset("rect_01")
        .unwrap()
        .with_override("t_final_hours=20")
        .unwrap();
    let m = c.build_mesh().unwrap();
    let mut seen = 0;
    let a = run(&c, &m, |_, _, _| seen += 1).unwrap();
    let b = run(&c, &m, |_, _, _| {}).unwrap();
    assert_eq!(seen, 2);
    assert!(a.failure.is_none());
    assert_eq!(a.states, b.states);
    assert_eq!(a.states.len(), 3);
    assert_eq!(a.final_state().time, 72_000.0);
}

#[test]
fn failed_step_is_reported() {
    let c = preset("rect_10")
        .unwrap()
        .with_override("solver.max_iter=1")
        .unwrap();
    let m = c.build_mesh().unwrap();
    let o = run(&c, &m, |_, _, _| {}).unwrap();
    assert!(o.failure.is_some());
    assert!(!o.reports.last().unwrap().converged);
    assert_eq!(o.states.len(), o.reports.len());
}

fn run_with(
    name: &str,
    sets: &[String],
) -> (ScenarioConfig, seepage_core::mesh::TriMesh, RunOutcome) {
    let mut c = preset(name).unwrap();
    for s in sets {
        c = c.with_override(s).unwrap();
    }
    let m = c.build_mesh().unwrap();
    let o = run(&c, &m, |_, _, _| {}).unwrap();
    assert!(o.failure.is_none(), "{name} {sets:?}");
    (c, m, o)
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn hybrid_penalty_independence_in_eta_norm() {
    let outs: Vec<_> = ["1e-10", "1", "1e10"]
        .iter()
        .map(|g| {
            run_with(
                "rect_10",
                &[
                    "solver.scheme=hybridized".into(),
                    format!("solver.gamma0_hyb={g}"),
                ],
            )
        })
        .collect();
    let (c, m, _) = &outs[0];
    let mat = c.material().unwrap();
    let ctx = seepage::StepContext::new(m, mat.clone(), c.solver.clone(), &c.bottom_condition(m))
        .unwrap();
    let l = vec![ctx.l_const; m.n_cells()];
    for i in 0..3 {
        for j in i + 1..3 {
            let (a, b) = (outs[i].2.final_state(), outs[j].2.final_state());
            let eta = seepage::eta_lin(m, a, b, &l, c.dt, &mat).unwrap();
            assert!(eta <= 5.0 * c.solver.eps_a, "{i} vs {j}: {eta:e}");
        }
    }
}

#[test]
fn penalty_consistency_is_monotone() {
    let (_, _, reference) = run_with("rect_01", &["solver.scheme=neumann_reference".into()]);
    let mut last = f64::INFINITY;
    for g in ["1", "1e-2", "1e-5", "1e-10"] {
        let (_, _, o) = run_with(
            "rect_01",
            &[
                "solver.scheme=non_hybridized".into(),
                format!("solver.gamma0={g}"),
            ],
        );
        let d = linf(&o.final_state().psi, &reference.final_state().psi);
        assert!(d <= last, "gamma0 {g}: {d:e} > {last:e}");
        last = d;
    }
}

#[test]
fn hybrid_edges_are_dirichlet_or_neumann() {
    for name in ["rect_1", "rect_10"] {
        let (c, m, o) = run_with(name, &["solver.scheme=hybridized".into()]);
        let eps = c.solver.epsilon_relax;
        for s in &o.states[1..] {
            let lam = s.lambda.as_ref().unwrap();
            let head_scale = s.psi.iter().fold(1.0f64, |a, p| a.max(p.abs()));
            let flux_scale = o.rain_n.iter().fold(0.0f64, |a, p| a.max(p.abs()));
            let q = seepage_core::fem::boundary_flux_q(&m, &s.q, &o.rain_n);
            for (i, &e) in m.top_edges().iter().enumerate() {
                let dirichlet = (lam[i] - eps).abs() <= 1e-8 * head_scale;
                let neumann = (s.q[e] - o.rain_n[i]).abs() <= 1e-8 * flux_scale;
                assert!(
                    dirichlet != neumann,
                    "{name} t {} edge {e}: lambda {} q {}",
                    s.time,
                    lam[i],
                    s.q[e]
                );
                if dirichlet {
                    // inflow never exceeds the rain
                    assert!(q[i] <= 1e-8 * flux_scale);
                }
            }
        }
    }
}

#[test]
fn converged_reports_end_below_tolerance() {
    let (c, _, o) = run_with("rect_silt_relaxed", &["solver.scheme=hybridized".into()]);
    assert_eq!(o.reports.len(), c.n_steps());
    for r in &o.reports {
        assert!(r.converged);
        assert_eq!(r.eta_history.len(), r.iterations);
        assert_eq!(r.active_set_history.len(), r.iterations);
        assert!(
            *r.eta_history.last().unwrap() <= c.solver.eps_a,
            "step {}",
            r.step
        );
        assert!(r.iterations <= c.solver.max_iter);
    }
}
