mod common;

use common::{plan, Wrapped};
use mfsmp_core::adjoint::{solve_first_adjoint, solve_second_adjoint, AdjointState};
use mfsmp_core::presets::{linear_filtering, smp_reference, ParamCoefficients, Shape};
use mfsmp_core::{
    brute_force_control, compute_mr, h_window, hamiltonian, picard_forward, smp_scan, CoefficientSet, ControlPolicy,
    EmpiricalMeasure, ForwardState, MeasureView, MfError, Mode, NoisePlan, PicardOptions,
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

fn solve(c: &dyn CoefficientSet, ctl: &ControlPolicy, p: &NoisePlan) -> (ForwardState, AdjointState) {
    let fwd = picard_forward(c, ctl, p, &tight()).unwrap();
    let first = solve_first_adjoint(c, &fwd, ctl, p).unwrap();
    let adj = solve_second_adjoint(c, &fwd, ctl, first, p).unwrap();
    (fwd, adj)
}

fn ctl() -> ControlPolicy {
    ControlPolicy::blocks(vec![1.0, 0.0, 1.0, 0.0], 1.0, binary())
}

#[test]
fn hamiltonian_examples() {
    let law = EmpiricalMeasure::dirac(0.3);
    let zero = ParamCoefficients {
        s0: 0.0,
        ..ParamCoefficients::blank("zero", 1.0)
    };
    let stats = zero.measure_stats(&law);
    let mu = MeasureView {
        law: &law,
        stats: &stats,
    };
    assert_eq!(hamiltonian(0.1, 0.4, 1.3, &mu, 1.0, 2.0, -1.0, &zero), 0.0);
    // sigma = 1, h = x, f = 0: H = q1 + x l q2.
    let lin = ParamCoefficients {
        s0: 1.0,
        hx: 1.0,
        hx_shape: Shape::Linear,
        ..ParamCoefficients::blank("lin", 1.0)
    };
    let stats = lin.measure_stats(&law);
    let mu = MeasureView {
        law: &law,
        stats: &stats,
    };
    assert!((hamiltonian(0.1, 0.4, 1.5, &mu, 0.0, 2.0, -1.0, &lin) - (2.0 - 0.6)).abs() < 1e-15);
}

#[test]
fn observation_windows() {
    let p = plan(7, 4, 8, 1.0, 16);
    let flat = ParamCoefficients {
        hc: 0.5,
        phi_h: Shape::One,
        hu: 0.3,
        ..ParamCoefficients::blank("flat", 1.0)
    };
    let fwd = picard_forward(&flat, &ctl(), &p, &tight()).unwrap();
    assert!(h_window(&fwd, &flat, &p, 0, 16).unwrap().iter().all(|&v| v == 0.0));
    let c = linear_filtering(1.0);
    let fwd = picard_forward(&c, &ctl(), &p, &tight()).unwrap();
    assert!(h_window(&fwd, &c, &p, 5, 5).unwrap().iter().all(|&v| v == 0.0));
    let one = h_window(&fwd, &c, &p, 5, 6).unwrap();
    let dt = p.grid.dt();
    for (s, v) in one.iter().enumerate() {
        assert!((v - (p.dy(s / 8, 5) - fwd.x.get(5, s) * dt)).abs() <= 1e-15);
    }
    assert!(matches!(h_window(&fwd, &c, &p, 6, 5), Err(MfError::Config { .. })));
}

#[test]
fn correction_degeneracies() {
    let p = plan(7, 16, 32, 1.0, 16);
    // No measure dependence, h_x = 0, f_x = 0: M vanishes.
    let flat = ParamCoefficients {
        s0: 0.5,
        s1: 0.5,
        hc: 0.2,
        phi_h: Shape::One,
        hu: 0.3,
        gx: -1.0,
        gx_shape: Shape::LogCosh,
        u_cost: vec![0.1, 0.4],
        ..ParamCoefficients::blank("flat", 1.0)
    };
    let (fwd, adj) = solve(&flat, &ctl(), &p);
    let mr = compute_mr(&flat, &fwd, &adj, &p).unwrap();
    assert!(mr.m.raw().iter().all(|&v| v == 0.0));
    // No measure derivatives anywhere: R vanishes.
    assert!(mr.r.raw().iter().all(|&v| v == 0.0));
    // phi_h = 0 with measure dependence elsewhere: R vanishes.
    let no_channel = ParamCoefficients {
        phi_h: Shape::Zero,
        hu: 0.0,
        ..smp_reference(1.0)
    };
    let (fwd, adj) = solve(&no_channel, &ctl(), &p);
    let mr = compute_mr(&no_channel, &fwd, &adj, &p).unwrap();
    assert!(mr.r.raw().iter().all(|&v| v == 0.0));
    // The reference preset has both corrections.
    let c = smp_reference(1.0);
    let (fwd, adj) = solve(&c, &ctl(), &p);
    let mr = compute_mr(&c, &fwd, &adj, &p).unwrap();
    assert!(mr.m.max_abs() > 0.0 && mr.r.max_abs() > 0.0);
    assert!(mr.m.raw().iter().chain(mr.r.raw()).all(|v| v.is_finite()));
    assert!(mr.m_r2.iter().chain(&mr.r_r2).all(|r| (-1e-9..=1.0 + 1e-9).contains(r)));
}

#[test]
fn corrections_need_the_split_assumption() {
    let p = plan(7, 8, 16, 1.0, 8);
    let sf = smp_reference(1.0).with_mode(Mode::StateFunctional);
    let (fwd, adj) = solve(&sf, &ctl(), &p);
    assert!(matches!(
        compute_mr(&sf, &fwd, &adj, &p),
        Err(MfError::UnsupportedMode { .. })
    ));
    let sx = ParamCoefficients {
        sx: 0.2,
        sx_shape: Shape::Tanh,
        ..smp_reference(1.0)
    };
    let (fwd, adj) = solve(&sx, &ctl(), &p);
    assert!(matches!(
        compute_mr(&sx, &fwd, &adj, &p),
        Err(MfError::UnsupportedMode { .. })
    ));
    assert!(matches!(
        smp_scan(&sx, &fwd, &adj, &p, &binary()),
        Err(MfError::UnsupportedMode { .. })
    ));
}

#[test]
fn gaps_vanish_at_the_current_control() {
    let p = plan(7, 16, 32, 1.0, 16);
    let c = smp_reference(1.0);
    let ones = ControlPolicy::constant(1.0, binary());
    let (fwd, adj) = solve(&c, &ones, &p);
    let r = smp_scan(&c, &fwd, &adj, &p, &[1.0]).unwrap();
    assert!(r
        .gap
        .iter()
        .flatten()
        .chain(r.gap_max.iter().flatten())
        .all(|&g| g == 0.0));
    assert_eq!(r.verdict, 0.0);
    let g1 = r.gamma1.as_ref().unwrap();
    assert!(g1.raw().iter().all(|&v| v > 0.0));
    let (fwd, adj) = solve(&c, &ctl(), &p);
    let r = smp_scan(&c, &fwd, &adj, &p, &binary()).unwrap();
    for k in 0..16 {
        let u = fwd.control(0, k);
        let vi = binary().iter().position(|&v| v == u).unwrap();
        assert_eq!(r.gap[vi][k], 0.0);
    }
}

#[test]
fn quadratic_control_cost_gap() {
    // f = (v - 0)^2, sigma and h free of the control.
    let base = ParamCoefficients {
        s0: 0.7,
        hc: 0.1,
        hx: 0.4,
        hx_shape: Shape::Tanh,
        gx: -1.0,
        gx_shape: Shape::LogCosh,
        ..ParamCoefficients::blank("quad", 1.0)
    };
    let c = Wrapped {
        quad_cost: Some(0.0),
        ..Wrapped::new(base)
    };
    let p = plan(7, 16, 32, 1.0, 16);
    let zero = ControlPolicy::constant(0.0, binary());
    let (fwd, adj) = solve(&c, &zero, &p);
    let r = smp_scan(&c, &fwd, &adj, &p, &binary()).unwrap();
    for k in 0..16 {
        assert_eq!(r.gap[0][k], 0.0);
        assert!((r.gap[1][k] + 1.0).abs() <= 1e-12, "k {k}: {}", r.gap[1][k]);
    }
    assert_eq!(r.verdict, 0.0);
}

#[test]
fn brute_force_examples() {
    let base = ParamCoefficients {
        s0: 0.7,
        gx: -1.0,
        gx_shape: Shape::LogCosh,
        ..ParamCoefficients::blank("quad", 1.0)
    };
    let c = Wrapped {
        quad_cost: Some(1.0),
        ..Wrapped::new(base)
    };
    let p = plan(7, 8, 16, 1.0, 16);
    let bf = brute_force_control(&c, &p, &[1.0, 2.0], 3, &tight()).unwrap();
    assert_eq!(bf.costs.len(), 8);
    assert_eq!(bf.best_policy(), &[1.0, 1.0, 1.0]);
    let one = brute_force_control(&smp_reference(1.0), &p, &binary(), 1, &tight()).unwrap();
    assert_eq!(one.best_cost(), one.costs[0].min(one.costs[1]));
    assert!(matches!(
        brute_force_control(&c, &p, &binary(), 13, &tight()),
        Err(MfError::Config { .. })
    ));
}

#[test]
fn brute_force_minimizer_is_stable_across_seeds() {
    let c = smp_reference(1.0);
    let runs: Vec<_> = [7, 8]
        .iter()
        .map(|&seed| brute_force_control(&c, &plan(seed, 64, 128, 1.0, 64), &binary(), 4, &tight()).unwrap())
        .collect();
    assert!(runs.iter().all(|r| r.costs.len() == 16));
    for (a, b) in [(&runs[0], &runs[1]), (&runs[1], &runs[0])] {
        // The other seed's minimizer, priced on this seed's noise.
        let theirs = b.best;
        let gap = a.costs[theirs] - a.best_cost();
        assert!(gap <= 2.0 * a.stderr[theirs], "gap {gap} vs {}", a.stderr[theirs]);
    }
}

#[test]
fn scan_rejects_first_order_only_adjoints() {
    let c = smp_reference(1.0);
    let p = plan(7, 8, 16, 1.0, 8);
    let fwd = picard_forward(&c, &ctl(), &p, &tight()).unwrap();
    let first = solve_first_adjoint(&c, &fwd, &ctl(), &p).unwrap();
    assert!(matches!(
        smp_scan(&c, &fwd, &first, &p, &binary()),
        Err(MfError::Config { .. })
    ));
}
