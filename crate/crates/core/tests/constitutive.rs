use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{rngs::StdRng, Rng, SeedableRng};
use seepage_core::constitutive::*;

fn soils() -> [MaterialParams; 3] {
    [
        MaterialParams::clay(),
        MaterialParams::silt(),
        MaterialParams::sand(),
    ]
}

// closed forms written out independently of the library
fn oracle_theta_hat(psi: f64, p: &MaterialParams) -> f64 {
    if psi >= 0.0 {
        1.0
    } else {
        (1.0 + (-p.alpha * psi).powf(p.m)).powf(-(p.m - 1.0) / p.m)
    }
}

fn oracle_k(psi: f64, p: &MaterialParams) -> f64 {
    let th = oracle_theta_hat(psi, p);
    let inner = 1.0 - (1.0 - th.powf(p.m / (p.m - 1.0))).powf((p.m - 1.0) / p.m);
    p.k_s * th.sqrt() * inner * inner
}

#[test]
fn theta_hat_examples() {
    let clay = MaterialParams::clay();
    assert_eq!(theta_hat(0.0, &clay).unwrap(), 1.0);
    assert_relative_eq!(
        theta_hat(-5.0, &clay).unwrap(),
        2f64.powf(-1.0 / 3.0),
        max_relative = 1e-14
    );
    assert_relative_eq!(
        theta_hat(-5.0, &clay).unwrap(),
        0.793701,
        max_relative = 1e-6
    );
    assert_eq!(theta_hat(3.0, &MaterialParams::sand()).unwrap(), 1.0);
    assert!(theta_hat(f64::NAN, &clay).is_err());
    assert!(theta_hat(f64::NEG_INFINITY, &clay).is_err());
}

#[test]
fn water_content_examples() {
    let clay = MaterialParams::clay();
    assert_eq!(water_content(0.0, &clay).unwrap(), 0.4);
    assert_relative_eq!(
        water_content(-5.0, &clay).unwrap(),
        0.04 + 2f64.powf(-1.0 / 3.0) * 0.36,
        max_relative = 1e-14
    );
    assert_relative_eq!(
        water_content(-5.0, &clay).unwrap(),
        0.325732,
        max_relative = 1e-6
    );
    assert_relative_eq!(
        water_content(-1e40, &clay).unwrap(),
        0.04,
        max_relative = 1e-6
    );
}

#[test]
fn permeability_examples() {
    assert_eq!(permeability(0.0, &MaterialParams::sand()).unwrap(), 1e-4);
    let clay = MaterialParams::clay();
    // theta_hat^3 = 1/2
    let th = 2f64.powf(-1.0 / 3.0);
    let want = 1e-6 * th.sqrt() * (1.0 - 0.5f64.powf(1.0 / 3.0)).powi(2);
    assert_relative_eq!(
        permeability(-5.0, &clay).unwrap(),
        want,
        max_relative = 1e-12
    );
    assert_relative_eq!(
        permeability(-5.0, &clay).unwrap(),
        3.792e-8,
        max_relative = 1e-3
    );
    assert_eq!(permeability(1.0, &MaterialParams::silt()).unwrap(), 1e-8);
}

#[test]
fn derivative_examples() {
    let clay = MaterialParams::clay();
    assert_eq!(d_water_content(2.0, &clay).unwrap(), 0.0);
    assert!(d_water_content(-1e-14, &clay).unwrap().abs() < 1e-6);
    let h = 1e-6;
    let fd = (water_content(-5.0 + h, &clay).unwrap() - water_content(-5.0 - h, &clay).unwrap())
        / (2.0 * h);
    assert_relative_eq!(
        d_water_content(-5.0, &clay).unwrap(),
        fd,
        max_relative = 1e-6
    );

    assert_eq!(
        d_inv_permeability(1.0, &MaterialParams::sand()).unwrap(),
        0.0
    );
    let inv = |p: f64| 1.0 / permeability(p, &clay).unwrap();
    let fd = (inv(-5.0 + h) - inv(-5.0 - h)) / (2.0 * h);
    assert_relative_eq!(
        d_inv_permeability(-5.0, &clay).unwrap(),
        fd,
        max_relative = 1e-5
    );
    let near = d_inv_permeability(-1e-9, &clay).unwrap();
    assert!(near.is_finite() && near <= 0.0);
}

#[test]
fn lscheme_bound_against_dense_sampling() {
    for p in soils() {
        let l = lscheme_bound(&p);
        assert!(l > 0.0);
        // 1e6 samples on a log suction grid over [-1e4, -1e-10]
        let n = 1_000_000;
        let mut best = 0.0f64;
        for i in 0..=n {
            let e = -10.0 + 14.0 * i as f64 / n as f64;
            best = best.max(d_water_content(-(10f64.powf(e)), &p).unwrap());
        }
        assert!(l >= best * (1.0 - 1e-6), "{l} < {best}");
        assert_relative_eq!(l, best, max_relative = 1e-6);
    }
}

#[test]
fn lscheme_bound_dominates_random_heads() {
    let mut rng = StdRng::seed_from_u64(7);
    for p in soils() {
        let l = lscheme_bound(&p);
        for _ in 0..10_000 {
            let psi = -(10f64.powf(rng.gen_range(-6.0..4.0)));
            assert!(d_water_content(psi, &p).unwrap() <= l * (1.0 + 1e-12));
        }
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let mut rng = StdRng::seed_from_u64(11);
    for p in soils() {
        for _ in 0..1000 {
            let psi = -(10f64.powf(rng.gen_range(-3.0..2.0)));
            let h = 1e-6 * psi.abs().max(1.0);
            let th = |x: f64| water_content(x, &p).unwrap();
            let fd = (th(psi + h) - th(psi - h)) / (2.0 * h);
            let an = d_water_content(psi, &p).unwrap();
            assert!(
                (an - fd).abs() <= 1e-5 * an.abs().max(1e-12),
                "theta' at {psi}: {an} vs {fd}"
            );

            let ik = |x: f64| 1.0 / permeability(x, &p).unwrap();
            let fd = (ik(psi + h) - ik(psi - h)) / (2.0 * h);
            let an = d_inv_permeability(psi, &p).unwrap();
            assert!(
                (an - fd).abs() <= 1e-5 * an.abs(),
                "(1/K)' at {psi}: {an} vs {fd}"
            );
        }
    }
}

#[test]
fn closed_forms_agree_with_oracle() {
    let mut rng = StdRng::seed_from_u64(3);
    for p in soils() {
        for _ in 0..1000 {
            let psi = rng.gen_range(-50.0..1.0);
            assert_relative_eq!(
                theta_hat(psi, &p).unwrap(),
                oracle_theta_hat(psi, &p),
                max_relative = 1e-13
            );
            let k = oracle_k(psi, &p);
            assert!((permeability(psi, &p).unwrap() - k).abs() <= 1e-10 * p.k_s.max(k));
        }
    }
}

#[test]
fn smoothing_chord() {
    let mut clay = MaterialParams::clay();
    clay.k_smoothing = 0.01;
    let kd = oracle_k(-0.01, &clay);
    assert_relative_eq!(
        permeability(-0.01, &clay).unwrap(),
        kd,
        max_relative = 1e-13
    );
    assert_relative_eq!(
        permeability(-0.005, &clay).unwrap(),
        0.5 * (kd + 1e-6),
        max_relative = 1e-13
    );
    assert_eq!(permeability(0.0, &clay).unwrap(), 1e-6);
    let slope = (1e-6 - kd) / 0.01;
    let k = permeability(-0.003, &clay).unwrap();
    assert_relative_eq!(
        d_inv_permeability(-0.003, &clay).unwrap(),
        -slope / (k * k),
        max_relative = 1e-13
    );
    // outside the band the exact law is untouched
    assert_eq!(
        permeability(-0.5, &clay).unwrap(),
        permeability(-0.5, &MaterialParams::clay()).unwrap()
    );
    clay.k_smoothing = -1.0;
    assert!(clay.validate().is_err());
}

fn soil() -> impl Strategy<Value = MaterialParams> {
    prop_oneof![
        Just(MaterialParams::clay()),
        Just(MaterialParams::silt()),
        Just(MaterialParams::sand())
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn monotone_in_head(p in soil(), a in -200.0f64..0.0, b in -200.0f64..0.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(water_content(lo, &p).unwrap() <= water_content(hi, &p).unwrap());
        prop_assert!(permeability(lo, &p).unwrap() <= permeability(hi, &p).unwrap());
    }

    #[test]
    fn bounds_hold(p in soil(), psi in -1e6f64..1e3) {
        let th = water_content(psi, &p).unwrap();
        prop_assert!(th > p.theta_r || (p.theta_r == 0.0 && th >= 0.0));
        prop_assert!(th <= p.theta_s);
        let k = permeability(psi, &p).unwrap();
        prop_assert!(k > 0.0 && k <= p.k_s);
        prop_assert!(d_water_content(psi, &p).unwrap() >= 0.0);
        prop_assert!(d_inv_permeability(psi, &p).unwrap() <= 0.0);
    }

    #[test]
    fn constant_when_saturated(p in soil(), psi in 0.0f64..1e3) {
        prop_assert_eq!(theta_hat(psi, &p).unwrap(), 1.0);
        prop_assert_eq!(water_content(psi, &p).unwrap(), p.theta_s);
        prop_assert_eq!(permeability(psi, &p).unwrap(), p.k_s);
        prop_assert_eq!(d_water_content(psi, &p).unwrap(), 0.0);
        prop_assert_eq!(d_inv_permeability(psi, &p).unwrap(), 0.0);
    }
}
