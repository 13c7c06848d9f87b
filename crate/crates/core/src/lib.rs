//! Simulation and verification toolkit for partially observed mean-field
//! stochastic control.
//!
//! Everything runs under the reference measure Q, where the signal noise
//! `B^1` and the observation `Y` are independent Brownian motions. The
//! physical measure is `P = L_T Q`.

pub mod adjoint;
pub mod coeffs;
pub mod control;
pub mod error;
pub mod field;
pub mod filter;
pub mod forward;
pub mod grid;
pub mod measure;
pub mod noise;
pub mod presets;
pub mod regression;
pub mod smp;
pub mod variation;
pub mod ygrid;

pub use coeffs::{Coef, CoefficientSet, MeasureView, Mode};
pub use control::{spike_control, ControlPolicy, SpikeSpec};
pub use error::{MfError, Result};
pub use field::Field;
pub use forward::{
    contraction_diagnostic, euler_forward_given_mu, picard_forward, DensityScheme, ForwardState, PicardOptions,
};
pub use grid::TimeGrid;
pub use measure::{conditional_ratio, theta_functional, wasserstein1, weighted_law, EmpiricalMeasure};
pub use noise::{antithetic_extend, make_plan, NoisePlan};
pub use smp::{brute_force_control, compute_mr, h_window, hamiltonian, smp_scan, BruteForce, MrReport, SmpReport};
