use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{rngs::StdRng, Rng, SeedableRng};
use seepage_core::constitutive::{self, MaterialParams};
use seepage_core::fem::{self, DofLayout, Linearization};
use seepage_core::mesh::{build_rectangle_mesh, EdgeTag, TriMesh};
use seepage_core::seepage::*;

fn rect() -> TriMesh {
    build_rectangle_mesh(0.1, 5.0, 0.05).unwrap()
}

fn settings(scheme: Scheme) -> SolverSettings {
    SolverSettings {
        scheme,
        ..SolverSettings::default()
    }
}

#[test]
fn kkt_equivalence_random() {
    let mut rng = StdRng::seed_from_u64(21);
    let mut feasible = 0;
    for i in 0..100_000 {
        let mut a: f64 = rng.gen_range(-10.0..10.0);
        let mut b = rng.gen_range(-10.0..10.0);
        match i % 4 {
            0 => a = 0.0,
            1 => b = 0.0,
            2 => {
                a = -a.abs();
                b = 0.0
            }
            _ => {}
        }
        let gamma = 10f64.powf(rng.gen_range(-12.0..3.0));
        let (lhs, rhs) = scalar_kkt_equivalence(a, b, gamma);
        assert_eq!(lhs, rhs, "a={a} b={b} gamma={gamma}");
        feasible += lhs as usize;
    }
    assert!(feasible > 30_000);
}

#[test]
fn kkt_exact_on_dyadic_values() {
    // small integers and powers of two keep every operation exact
    let mut rng = StdRng::seed_from_u64(22);
    for _ in 0..100_000 {
        let a = rng.gen_range(-4i32..=4) as f64;
        let b = rng.gen_range(-4i32..=4) as f64;
        let gamma = 2f64.powi(rng.gen_range(-20..=20));
        let rhs = a == -(b - gamma * a).max(0.0) / gamma;
        assert_eq!(
            scalar_kkt_equivalence(a, b, gamma),
            (rhs, rhs),
            "a={a} b={b} gamma={gamma}"
        );
    }
}

#[test]
fn kkt_examples() {
    assert_eq!(scalar_kkt_equivalence(0.0, -1.0, 1.0), (true, true));
    assert_eq!(scalar_kkt_equivalence(-2.0, 0.0, 1e-10), (true, true));
    assert_eq!(scalar_kkt_equivalence(1.0, 0.0, 1.0), (false, false));
    assert_eq!(scalar_kkt_equivalence(-1.0, -1.0, 1.0), (false, false));
}

#[test]
fn eta_zero_for_equal_iterates() {
    let m = rect();
    let clay = MaterialParams::clay();
    let s = FieldState {
        q: (0..m.n_edges()).map(|e| 1e-7 * (e as f64).cos()).collect(),
        psi: (0..m.n_cells()).map(|t| -1.0 - t as f64 * 0.01).collect(),
        lambda: None,
        time: 0.0,
    };
    let l = vec![0.1; m.n_cells()];
    assert_eq!(eta_lin(&m, &s, &s, &l, 3600.0, &clay).unwrap(), 0.0);
}

#[test]
fn eta_head_part() {
    let m = rect();
    let clay = MaterialParams::clay();
    let zero = FieldState {
        q: vec![0.0; m.n_edges()],
        psi: vec![-1.0; m.n_cells()],
        lambda: None,
        time: 0.0,
    };
    let mut other = zero.clone();
    other.psi = vec![-1.5; m.n_cells()];
    // sum l |T| dpsi^2 = 0.2 * 0.5 * 0.25
    let eta = eta_lin(&m, &zero, &other, &vec![0.2; m.n_cells()], 100.0, &clay).unwrap();
    assert_relative_eq!(eta, (0.2 * 0.5 * 0.25f64).sqrt(), max_relative = 1e-12);
}

#[test]
fn eta_flux_part_uniform_field() {
    // saturated, q_k = 0, q_k1 the dofs of a constant field c:
    // eta^2 = dt K_S int |c / K_S|^2 = dt |Omega| |c|^2 / K_S
    let m = rect();
    let clay = MaterialParams::clay();
    let c = [3e-7, -4e-7];
    let k = FieldState {
        q: vec![0.0; m.n_edges()],
        psi: vec![0.5; m.n_cells()],
        lambda: None,
        time: 0.0,
    };
    let mut k1 = k.clone();
    k1.q = (0..m.n_edges())
        .map(|e| {
            let n = m.edge_geometry(e).normal;
            c[0] * n[0] + c[1] * n[1]
        })
        .collect();
    let dt = 7200.0;
    let eta = eta_lin(&m, &k, &k1, &vec![0.1; m.n_cells()], dt, &clay).unwrap();
    let want = (dt * 0.5 * (c[0] * c[0] + c[1] * c[1]) / clay.k_s).sqrt();
    assert_relative_eq!(eta, want, max_relative = 1e-12);
}

#[test]
fn eta_rejects_wrong_lengths() {
    let m = rect();
    let s = FieldState {
        q: vec![0.0; 3],
        psi: vec![0.0; m.n_cells()],
        lambda: None,
        time: 0.0,
    };
    assert!(eta_lin(
        &m,
        &s,
        &s,
        &vec![1.0; m.n_cells()],
        1.0,
        &MaterialParams::clay()
    )
    .is_err());
}

#[test]
fn penalty_scaling_per_scheme() {
    let m = rect();
    let clay = MaterialParams::clay();
    let ctx = StepContext::new(
        &m,
        clay,
        settings(Scheme::NonHybridized),
        &BottomCondition::NoFlux,
    )
    .unwrap();
    for (i, &e) in m.top_edges().iter().enumerate() {
        assert_relative_eq!(
            ctx.gamma()[i],
            1e-10 * m.edge_length(e),
            max_relative = 1e-14
        );
    }
    let ctx = StepContext::new(
        &m,
        clay,
        settings(Scheme::Hybridized),
        &BottomCondition::NoFlux,
    )
    .unwrap();
    for (i, &e) in m.top_edges().iter().enumerate() {
        assert_relative_eq!(ctx.gamma()[i], 1.0 / m.edge_length(e), max_relative = 1e-14);
    }
}

#[test]
fn h_blocks_nonhybridized() {
    let m = rect();
    let top = m.top_edges();
    let gamma0 = 1e-10;
    let gamma: Vec<f64> = top.iter().map(|&e| gamma0 * m.edge_length(e)).collect();
    let q_disp = [2e-7, 0.0];
    let trace = [-0.3, 0.4];
    let act = active_set_nohyb(&q_disp, &trace, &gamma, 0.0);
    assert_eq!(act, vec![true, false]);

    let h = assemble_h_nohyb(&m, &act, &gamma, &q_disp, &trace, 0.0);
    let e0 = top[0];
    assert_relative_eq!(h.h_q.get(e0, e0), 1.0 / gamma0, max_relative = 1e-14);
    assert_eq!(h.h_q.nnz(), 1);
    assert_eq!(h.h_psi.get(e0, m.edge_cells(e0).0), m.edge_length(e0));
    let raw = q_disp[0] - gamma[0] * trace[0];
    assert_relative_eq!(
        h.h_vec[e0],
        m.edge_length(e0) * raw / gamma[0],
        max_relative = 1e-14
    );
    // inactive edge carries only the weak head term
    assert_eq!(h.h_vec[top[1]], 0.0);
    let h = assemble_h_nohyb(&m, &act, &gamma, &q_disp, &trace, 0.01);
    assert_relative_eq!(
        h.h_vec[top[1]],
        -m.edge_length(top[1]) * 0.01,
        max_relative = 1e-14
    );
}

#[test]
fn h_blocks_hybridized_cancel_trace_rows() {
    let m = rect();
    let lay = DofLayout::new(&m, true);
    let top = m.top_edges();
    let g: Vec<f64> = top.iter().map(|&e| 1.0 / m.edge_length(e)).collect();
    let lambda = [0.2, -0.5];
    let q_disp = [0.0, 1e-7];
    let act = active_set_hyb(&lambda, &q_disp, &g, 0.0);
    assert_eq!(act, vec![true, false]);
    let h = assemble_h_hyb(&m, &act, &g, &q_disp, &lambda, 0.0);
    let e = fem::assemble_e(&m, &lay);
    let sum = e.add(&h.h_q).unwrap();
    assert_eq!(sum.get(0, top[0]), 0.0);
    assert_eq!(sum.get(1, top[1]), m.edge_length(top[1]));
    assert_relative_eq!(
        h.h_lambda.get(0, 0),
        -m.edge_length(top[0]) / g[0],
        max_relative = 1e-14
    );
    assert_eq!(h.h_lambda.get(1, 1), 0.0);
    assert_relative_eq!(
        h.h_vec[0],
        m.edge_length(top[0]) * lambda[0] / g[0],
        max_relative = 1e-14
    );
    assert_eq!(h.h_vec[1], 0.0);
}

#[test]
fn active_set_examples() {
    let g = [1.0, 1.0, 1.0];
    // dry with infiltration, ponding, saturated with outflow
    assert_eq!(
        active_set_nohyb(&[0.0, -1.0, 0.0], &[-1.0, 0.0, 0.5], &g, 0.0),
        vec![true, false, false]
    );
    assert_eq!(
        active_set_hyb(&[0.5, -1.0, 0.0], &[0.0, 0.0, -1.0], &g, 0.0),
        vec![true, false, true]
    );
    assert_eq!(active_set_hyb(&[0.5], &[0.0], &g, 1.0), vec![false]);
}

#[test]
fn switching_rule() {
    let mut s = SolverSettings {
        linearization: LinearizationStrategy::Combined,
        combined_switch_eta: 1e-3,
        combined_switch_iter: 10,
        ..SolverSettings::default()
    };
    assert_eq!(choose_linearization(&s, 0, 1.0), Linearization::LScheme);
    assert_eq!(choose_linearization(&s, 3, 1e-4), Linearization::Newton);
    assert_eq!(choose_linearization(&s, 10, 1.0), Linearization::Newton);
    s.linearization = LinearizationStrategy::Lscheme;
    assert_eq!(choose_linearization(&s, 100, 0.0), Linearization::LScheme);
    s.linearization = LinearizationStrategy::Newton;
    assert_eq!(choose_linearization(&s, 0, 1.0), Linearization::Newton);
}

#[test]
fn settings_validation() {
    for bad in [
        SolverSettings {
            gamma0: 0.0,
            ..Default::default()
        },
        SolverSettings {
            gamma0_hyb: -1.0,
            ..Default::default()
        },
        SolverSettings {
            epsilon_relax: -1e-3,
            ..Default::default()
        },
        SolverSettings {
            max_iter: 0,
            ..Default::default()
        },
        SolverSettings {
            l_override: Some(0.0),
            ..Default::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
    assert!(SolverSettings::default().validate().is_ok());
}

fn hydrostatic(m: &TriMesh, lay: &DofLayout, z_ref: f64) -> FieldState {
    let psi: Vec<f64> = (0..m.n_cells())
        .map(|t| z_ref - m.cell_centroid(t)[1])
        .collect();
    FieldState {
        q: vec![0.0; m.n_edges()],
        lambda: (lay.n_trace > 0).then(|| trace_of_cells(m, &psi)),
        psi,
        time: 0.0,
    }
}

fn hydrostatic_step(scheme: Scheme, gamma0: f64) -> (FieldState, FieldState, StepReport) {
    let m = rect();
    let n_bottom = (0..m.n_edges())
        .filter(|&e| m.tag(e) == EdgeTag::Bottom)
        .count();
    let bottom = BottomCondition::Head(vec![0.0; n_bottom]);
    let set = SolverSettings {
        gamma0,
        ..settings(scheme)
    };
    let ctx = StepContext::new(&m, MaterialParams::clay(), set, &bottom).unwrap();
    let s0 = hydrostatic(&m, &ctx.layout, 0.0);
    let (s1, rep) = step(&ctx, &s0, &[0.0, 0.0], 3600.0).unwrap();
    (s0, s1, rep)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn hydrostatic_state_is_steady() {
    for scheme in [Scheme::Hybridized, Scheme::NeumannReference] {
        let (s0, s1, rep) = hydrostatic_step(scheme, 1e-10);
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1, "{scheme:?}");
        assert!(max_diff(&s1.psi, &s0.psi) <= 1e-10, "{scheme:?}");
        assert!(s1.q.iter().all(|q| q.abs() < 1e-18), "{scheme:?}");
    }
}

#[test]
fn hydrostatic_nonhybridized_penalty_leak() {
    // The penalty reads the cell head, h/3 m wetter than the surface head,
    // so an inflow gamma0 h_e (h / 3) crosses each top edge.
    let m = rect();
    let (s0, s1, rep) = hydrostatic_step(Scheme::NonHybridized, 1e-10);
    assert!(rep.converged);
    assert_eq!(rep.iterations, 1);
    for &e in m.top_edges() {
        let want = -1e-10 * 0.05 * (0.05 / 3.0);
        assert!(
            (s1.q[e] - want).abs() <= 1e-3 * want.abs(),
            "{} vs {want}",
            s1.q[e]
        );
    }
    let coarse = max_diff(&s1.psi, &s0.psi);
    let (s0, s1, _) = hydrostatic_step(Scheme::NonHybridized, 1e-16);
    let fine = max_diff(&s1.psi, &s0.psi);
    assert!(fine <= 1e-10, "{fine:e}");
    assert!(fine < coarse * 1e-5);
}

#[test]
fn mass_residual_small_after_step() {
    let m = rect();
    let clay = MaterialParams::clay();
    let ctx = StepContext::new(
        &m,
        clay,
        settings(Scheme::Hybridized),
        &BottomCondition::NoFlux,
    )
    .unwrap();
    let s0 = hydrostatic(&m, &ctx.layout, 1.0);
    let rain = vec![-3e-6; 2];
    let dt = 36_000.0;
    let (s1, rep) = step(&ctx, &s0, &rain, dt).unwrap();
    let r = mass_residuals(&m, &s0.psi, &s1, dt, &ctx.material).unwrap();
    let eta = *rep.eta_history.last().unwrap();
    let bound = mass_residual_bound(
        &m,
        &vec![ctx.l_const; m.n_cells()],
        ctx.capacity_sup,
        eta,
        dt,
        rep.mass_row_residual,
    );
    for (ri, bi) in r.iter().zip(&bound) {
        assert!(ri.abs() <= *bi, "{ri} > {bi}");
    }
    // rain entered the column
    let th = |p: &[f64]| -> f64 {
        p.iter()
            .enumerate()
            .map(|(t, &x)| constitutive::water_content(x, &ctx.material).unwrap() * m.cell_area(t))
            .sum()
    };
    assert!(th(&s1.psi) > th(&s0.psi));
}

#[test]
fn complementarity_examples() {
    let m = rect();
    let psi = vec![-1.0; m.n_cells()];
    let s = FieldState {
        q: vec![0.0; m.n_edges()],
        psi,
        lambda: Some(vec![0.0, -0.5]),
        time: 0.0,
    };
    let r = complementarity_residual(&s, &[-1e-7, 0.0], &m, 0.0);
    assert_eq!(r[0], (0.0, 0.0, 0.0));
    assert_eq!(r[1], (0.0, 0.0, 0.0));
    let r = complementarity_residual(&s, &[1e-7, 0.0], &m, 0.0);
    assert_eq!(r[0].1, 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn nohyb_activity_matches_bracket(q in -1e-5f64..1e-5, p in -5.0f64..5.0, g0 in 1e-12f64..1e-6, eps in 0.0f64..0.1) {
        let act = active_set_nohyb(&[q], &[p], &[g0], eps)[0];
        prop_assert_eq!(act, q - g0 * (p - eps) >= 0.0);
    }

    #[test]
    fn kkt_sides_agree(a in -1e3f64..1e3, b in -1e3f64..1e3, lg in -12.0f64..3.0, which in 0usize..3) {
        let (a, b) = match which { 0 => (a, b), 1 => (0.0, b), _ => (a, 0.0) };
        let (l, r) = scalar_kkt_equivalence(a, b, 10f64.powf(lg));
        prop_assert_eq!(l, r);
    }
}
