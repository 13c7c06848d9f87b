//! Shared fixtures for the solver benchmarks in `benches/`.

use mfsmp_core::presets::{smp_reference, ParamCoefficients};
use mfsmp_core::{make_plan, ControlPolicy, NoisePlan, PicardOptions, TimeGrid};

pub struct Fixture {
    pub coeffs: ParamCoefficients,
    pub control: ControlPolicy,
    pub plan: NoisePlan,
    pub picard: PicardOptions,
}

/// The reference problem on a `steps x m_outer x n_inner` ensemble, seed 7.
pub fn reference(steps: usize, m_outer: usize, n_inner: usize) -> Fixture {
    let grid = TimeGrid::new(1.0, steps).expect("positive grid");
    Fixture {
        coeffs: smp_reference(1.0),
        control: ControlPolicy::blocks(vec![1.0, 0.0, 1.0, 0.0], 1.0, vec![0.0, 1.0]),
        plan: make_plan(7, m_outer, n_inner, grid).expect("valid plan"),
        picard: PicardOptions {
            tol: 1e-10,
            max_iter: 100,
            ..Default::default()
        },
    }
}
