//! Problem data: diffusion `sigma`, observation drift `h`, running cost `f`,
//! terminal cost `Phi`, their x-derivatives and their Lions derivatives.
//!
//! Measure derivatives are supplied by the user; nothing here differentiates
//! with respect to a measure automatically.

use serde::{Deserialize, Serialize};

use crate::measure::EmpiricalMeasure;

/// How the measure argument is formed from the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `mu_t` is the P-law of `U_t = E^P[X_t | F_t^Y]`.
    ConditionalLaw,
    /// `mu_t` is the P-law of `phi(X_t, Y_t)`.
    StateFunctional,
}

/// Which of the three running coefficients a callback refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coef {
    Sigma,
    Obs,
    Running,
}

/// A measure together with the summary statistics the coefficient set asked
/// for via [`CoefficientSet::measure_stats`].
#[derive(Debug, Clone, Copy)]
pub struct MeasureView<'a> {
    pub law: &'a EmpiricalMeasure,
    pub stats: &'a [f64],
}

/// Problem data with all derivatives the solvers need.
///
/// Measure derivatives default to zero, so a measure-free problem only has
/// to implement the plain callbacks.
pub trait CoefficientSet: Send + Sync {
    fn name(&self) -> &str;
    fn mode(&self) -> Mode;
    fn x0(&self) -> f64;
    /// Declared sup-norm bound on `sigma`, `h`, `f` and their derivatives.
    fn bound(&self) -> f64;

    /// Summary statistics of a measure, computed once per time node and
    /// handed back to every callback through [`MeasureView::stats`].
    fn measure_stats(&self, _law: &EmpiricalMeasure) -> Vec<f64> {
        Vec::new()
    }

    fn value(&self, c: Coef, t: f64, x: f64, mu: &MeasureView, u: f64) -> f64;
    fn dx(&self, c: Coef, t: f64, x: f64, mu: &MeasureView, u: f64) -> f64;
    fn dxx(&self, c: Coef, t: f64, x: f64, mu: &MeasureView, u: f64) -> f64;
    fn dmu(&self, _c: Coef, _t: f64, _x: f64, _mu: &MeasureView, _u: f64, _y: f64) -> f64 {
        0.0
    }
    fn dzmu(&self, _c: Coef, _t: f64, _x: f64, _mu: &MeasureView, _u: f64, _y: f64) -> f64 {
        0.0
    }
    fn dmumu(&self, _c: Coef, _t: f64, _x: f64, _mu: &MeasureView, _u: f64, _y: f64, _z: f64) -> f64 {
        0.0
    }

    fn terminal(&self, x: f64, mu: &MeasureView) -> f64;
    fn terminal_x(&self, x: f64, mu: &MeasureView) -> f64;
    fn terminal_xx(&self, x: f64, mu: &MeasureView) -> f64;
    fn terminal_mu(&self, _x: f64, _mu: &MeasureView, _y: f64) -> f64 {
        0.0
    }
    fn terminal_zmu(&self, _x: f64, _mu: &MeasureView, _y: f64) -> f64 {
        0.0
    }
    fn terminal_mumu(&self, _x: f64, _mu: &MeasureView, _y: f64, _z: f64) -> f64 {
        0.0
    }

    /// True when `dmu`/`dzmu` and `terminal_mu`/`terminal_zmu` do not depend
    /// on `x`. Solvers then evaluate them once per control value.
    fn measure_derivatives_state_free(&self) -> bool {
        false
    }

    /// `sigma` does not depend on `x`.
    fn sigma_x_is_zero(&self) -> bool {
        false
    }

    /// The split `h = h0(t,x,mu) + phi_h(x) h1(t,mu,u)` is available.
    fn has_h3_split(&self) -> bool {
        false
    }
    fn h0(&self, _t: f64, _x: f64, _mu: &MeasureView) -> f64 {
        0.0
    }
    fn phi_h(&self, _x: f64) -> f64 {
        0.0
    }
    fn phi_h_x(&self, _x: f64) -> f64 {
        0.0
    }
    fn h1(&self, _t: f64, _mu: &MeasureView, _u: f64) -> f64 {
        0.0
    }

    /// Observation map `phi(x, y)` for [`Mode::StateFunctional`], with `y`
    /// the current observation value.
    fn obs_map(&self, _t: f64, x: f64, _y: f64) -> f64 {
        x
    }
    fn obs_map_x(&self, _t: f64, _x: f64, _y: f64) -> f64 {
        1.0
    }
}

/// Outcome of [`check_coefficients`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCheck {
    pub max_abs_seen: f64,
    pub bound_violations: usize,
    pub h3_max_error: f64,
    pub sigma_x_max: f64,
    pub warnings: Vec<String>,
}

/// Samples the callbacks on `[-xr, xr]` x `u_set` x a few time points and
/// measures. Violations are reported, never clamped.
pub fn check_coefficients(c: &dyn CoefficientSet, horizon: f64, u_set: &[f64], xr: f64) -> CoefficientCheck {
    let laws = [
        EmpiricalMeasure::dirac(c.x0()),
        EmpiricalMeasure::new(vec![-1.0, 0.0, 1.5], vec![0.25, 0.5, 0.25]).expect("valid"),
    ];
    let mut out = CoefficientCheck::default();
    let b = c.bound();
    for law in &laws {
        let stats = c.measure_stats(law);
        let mu = MeasureView { law, stats: &stats };
        for ti in 0..=4 {
            let t = horizon * ti as f64 / 4.0;
            for xi in 0..=40 {
                let x = -xr + 2.0 * xr * xi as f64 / 40.0;
                for &u in u_set {
                    let mut vals = Vec::with_capacity(12);
                    for cf in [Coef::Sigma, Coef::Obs, Coef::Running] {
                        vals.push(c.value(cf, t, x, &mu, u));
                        vals.push(c.dx(cf, t, x, &mu, u));
                        vals.push(c.dxx(cf, t, x, &mu, u));
                    }
                    for v in vals {
                        let a = v.abs();
                        out.max_abs_seen = out.max_abs_seen.max(a);
                        if !(a <= b) {
                            out.bound_violations += 1;
                        }
                    }
                    if c.has_h3_split() {
                        let split = c.h0(t, x, &mu) + c.phi_h(x) * c.h1(t, &mu, u);
                        let e = (split - c.value(Coef::Obs, t, x, &mu, u)).abs();
                        out.h3_max_error = out.h3_max_error.max(e);
                    }
                    if c.sigma_x_is_zero() {
                        let s = c.dx(Coef::Sigma, t, x, &mu, u).abs();
                        let d = (c.value(Coef::Sigma, t, x + 1e-3, &mu, u) - c.value(Coef::Sigma, t, x - 1e-3, &mu, u))
                            .abs();
                        out.sigma_x_max = out.sigma_x_max.max(s).max(d);
                    }
                }
            }
        }
    }
    if out.bound_violations > 0 {
        out.warnings.push(format!(
            "{} sampled values exceed the declared bound {b} (max {:.3e})",
            out.bound_violations, out.max_abs_seen
        ));
    }
    if out.h3_max_error > 1e-12 {
        out.warnings.push(format!(
            "h does not match its declared split (error {:.3e})",
            out.h3_max_error
        ));
    }
    if out.sigma_x_max > 1e-12 {
        out.warnings.push(format!(
            "sigma declared x-free but varies in x ({:.3e})",
            out.sigma_x_max
        ));
    }
    out
}
