mod common;

use common::plan;
use mfsmp_core::presets::{control_only_sigma, smp_reference};
use mfsmp_core::variation::{
    second_order_quadratic_sources, solve_first_variation, solve_first_variation_with, solve_second_variation,
    taylor_orders, SpikeFamily, VariationOptions, VariationState,
};
use mfsmp_core::{
    picard_forward, theta_functional, ControlPolicy, ForwardState, MfError, NoisePlan, PicardOptions, SpikeSpec,
};

fn binary() -> Vec<f64> {
    vec![0.0, 1.0]
}

fn tight() -> PicardOptions {
    PicardOptions {
        tol: 1e-10,
        max_iter: 60,
        ..Default::default()
    }
}

fn reference(
    m: usize,
    n: usize,
    steps: usize,
) -> (
    mfsmp_core::presets::ParamCoefficients,
    ControlPolicy,
    NoisePlan,
    ForwardState,
) {
    let c = smp_reference(1.0);
    let p = plan(7, m, n, 1.0, steps);
    let ctl = ControlPolicy::blocks(vec![1.0, 0.0, 1.0, 0.0], 1.0, binary());
    let fwd = picard_forward(&c, &ctl, &p, &tight()).unwrap();
    (c, ctl, p, fwd)
}

fn all_zero(v: &VariationState) -> bool {
    [&v.y1, &v.k1, &v.v1, &v.y2, &v.k2, &v.v2]
        .iter()
        .all(|f| f.raw().iter().all(|&x| x == 0.0))
}

#[test]
fn no_forcing_no_variation() {
    let (c, ctl, p, fwd) = reference(8, 16, 32);
    let same = SpikeSpec::new(0.25, 0.1, ControlPolicy::constant(0.0, binary()));
    let v = solve_first_variation(&c, &fwd, &ctl, &same, &p).unwrap();
    let v = solve_second_variation(&c, &fwd, &ctl, &same, &p, v).unwrap();
    assert!(all_zero(&v));
    let empty = SpikeSpec::new(0.25, 0.0, ControlPolicy::constant(1.0, binary()));
    let v = solve_first_variation(&c, &fwd, &ctl, &empty, &p).unwrap();
    let v = solve_second_variation(&c, &fwd, &ctl, &empty, &p, v).unwrap();
    assert!(all_zero(&v));
}

#[test]
fn decoupled_first_variation_is_a_stochastic_integral() {
    let c = control_only_sigma(1.0);
    let p = plan(3, 4, 8, 1.0, 32);
    let ctl = ControlPolicy::constant(0.0, binary());
    let fwd = picard_forward(&c, &ctl, &p, &tight()).unwrap();
    let spike = SpikeSpec::new(0.25, 0.25, ControlPolicy::constant(1.0, binary()));
    let v = solve_first_variation(&c, &fwd, &ctl, &spike, &p).unwrap();
    // delta sigma = s1 (1 - 0) = 0.5 on the window.
    let win = spike.window(&p.grid);
    for s in 0..p.samples() {
        let (j, i) = (s / 8, s % 8);
        let mut y = 0.0;
        for k in 0..32 {
            assert!((v.y1.get(k, s) - y).abs() <= 1e-14);
            if win[k] {
                y += 0.5 * p.db1(j, i, k);
            }
        }
        assert!((v.y1.get(32, s) - y).abs() <= 1e-14);
    }
    assert!(v.k1.raw().iter().all(|&k| k == 0.0));
    let v = solve_second_variation(&c, &fwd, &ctl, &spike, &p, v).unwrap();
    assert!(v.y2.raw().iter().all(|&x| x == 0.0));
    assert!(v.k2.raw().iter().all(|&x| x == 0.0));
}

#[test]
fn first_variation_is_linear_in_forcing() {
    let (c, ctl, p, fwd) = reference(8, 16, 32);
    let spike = SpikeSpec::new(0.25, 0.1, ControlPolicy::constant(1.0, binary()));
    let one = solve_first_variation(&c, &fwd, &ctl, &spike, &p).unwrap();
    let two = solve_first_variation_with(&c, &fwd, &ctl, &spike, &p, &VariationOptions { forcing_scale: 2.0 }).unwrap();
    for (a, b) in [(&one.y1, &two.y1), (&one.k1, &two.k1), (&one.v1, &two.v1)] {
        for (x, y) in a.raw().iter().zip(b.raw()) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
    assert!(one.y1.max_abs() > 0.0 && one.k1.max_abs() > 0.0);
}

#[test]
fn stored_v1_is_theta_of_y1_k1() {
    let (c, ctl, p, fwd) = reference(8, 16, 32);
    let spike = SpikeSpec::new(0.25, 0.1, ControlPolicy::constant(1.0, binary()));
    let v = solve_first_variation(&c, &fwd, &ctl, &spike, &p).unwrap();
    assert!(v.v1.max_abs() > 0.0);
    for k in 0..=32 {
        let th = theta_functional(v.y1.at(k), v.k1.at(k), fwd.x.at(k), fwd.l.at(k), 16).unwrap();
        for j in 0..8 {
            assert_eq!(v.v1_outer(j, k), th[j]);
        }
    }
}

#[test]
fn quadratic_sources_scale_quadratically() {
    let (c, ctl, p, fwd) = reference(8, 16, 32);
    let spike = SpikeSpec::new(0.25, 0.1, ControlPolicy::constant(1.0, binary()));
    let v = solve_first_variation(&c, &fwd, &ctl, &spike, &p).unwrap();
    let k = 12;
    let (y1, k1, v1) = (v.y1.at(k), v.k1.at(k), v.v1.at(k));
    let (a, b) = second_order_quadratic_sources(&c, &fwd, &v.alt_controls, k, y1, k1, v1);
    let lam = 3.0;
    let sc = |x: &[f64]| x.iter().map(|v| lam * v).collect::<Vec<f64>>();
    let (a3, b3) = second_order_quadratic_sources(&c, &fwd, &v.alt_controls, k, &sc(y1), &sc(k1), &sc(v1));
    assert!(a.iter().chain(&b).any(|x| *x != 0.0));
    for (x, y) in a.iter().zip(&a3).chain(b.iter().zip(&b3)) {
        assert!((lam * lam * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
    }
}

#[test]
fn smallness_and_composite_estimates() {
    let (c, ctl, p, _) = reference(64, 128, 64);
    let fam = SpikeFamily {
        t0: 0.25,
        alt_policy: ControlPolicy::constant(1.0, binary()),
        eps: vec![0.2, 0.1, 0.05, 0.025],
    };
    let r = taylor_orders(&c, &ctl, &fam, &p, &tight()).unwrap();
    // |E[Y1] + E[K1 / L]| <= C sqrt(eps) with C shrinking; one inversion allowed.
    let cs: Vec<f64> = r.points.iter().map(|q| q.smallness / q.eff_eps.sqrt()).collect();
    let inversions = cs.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(inversions <= 1, "{cs:?}");
    // Composite U residual within C eps^1.4, C fixed by the widest spike.
    let c0 = r.points[0].composite / r.points[0].eff_eps.powf(1.4);
    for q in &r.points {
        assert!(q.composite <= c0 * q.eff_eps.powf(1.4) * (1.0 + 1e-12), "{q:?}");
    }
}

#[test]
fn ladder_validation() {
    let (c, ctl, p, _) = reference(4, 4, 16);
    let alt = ControlPolicy::constant(0.0, binary());
    for eps in [
        vec![0.2, 0.1, 0.05],
        vec![0.2, 0.1, 0.1, 0.05],
        vec![0.2, 0.1, 0.05, -0.01],
    ] {
        let fam = SpikeFamily {
            t0: 0.25,
            alt_policy: alt.clone(),
            eps,
        };
        assert!(matches!(
            taylor_orders(&c, &ctl, &fam, &p, &tight()),
            Err(MfError::Config { .. })
        ));
    }
}
