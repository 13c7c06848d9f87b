//! Built-in coefficient sets.
//!
//! Every preset is an instance of [`ParamCoefficients`], a small family with
//! closed-form derivatives:
//!
//! ```text
//! m(mu)  = integral psi(y) mu(dy)
//! sigma  = s0 + s1 u + sm m + sx S(x)
//! h      = hc + hx H(x) + hm m + phi_h(x) hu u        (h0 + phi_h h1)
//! f      = c(t) u + fx F(x) + fm m                    (c piecewise constant)
//! Phi    = gx G(x) + gm m
//! ```

use serde::{Deserialize, Serialize};

use crate::coeffs::{Coef, CoefficientSet, MeasureView, Mode};
use crate::measure::EmpiricalMeasure;

/// Scalar shape functions with two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Zero,
    One,
    Linear,
    Tanh,
    LogCosh,
    TanhSq,
    HalfSquare,
}

impl Shape {
    pub fn eval(self, x: f64) -> [f64; 3] {
        match self {
            Shape::Zero => [0.0, 0.0, 0.0],
            Shape::One => [1.0, 0.0, 0.0],
            Shape::Linear => [x, 1.0, 0.0],
            Shape::Tanh => {
                let th = x.tanh();
                let s2 = 1.0 - th * th;
                [th, s2, -2.0 * s2 * th]
            }
            Shape::LogCosh => {
                let th = x.tanh();
                let ax = x.abs();
                let lc = ax + (-2.0 * ax).exp().ln_1p() - std::f64::consts::LN_2;
                [lc, th, 1.0 - th * th]
            }
            Shape::TanhSq => {
                let th = x.tanh();
                let s2 = 1.0 - th * th;
                [th * th, 2.0 * th * s2, 2.0 * s2 * (s2 - 2.0 * th * th)]
            }
            Shape::HalfSquare => [0.5 * x * x, x, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCoefficients {
    pub name: String,
    pub mode: Mode,
    pub x0: f64,
    pub bound: f64,
    pub horizon: f64,
    pub psi: Shape,
    pub s0: f64,
    pub s1: f64,
    pub sm: f64,
    pub sx: f64,
    pub sx_shape: Shape,
    pub hc: f64,
    pub hx: f64,
    pub hx_shape: Shape,
    pub hm: f64,
    pub phi_h: Shape,
    pub hu: f64,
    pub u_cost: Vec<f64>,
    pub fx: f64,
    pub fx_shape: Shape,
    pub fm: f64,
    pub gx: f64,
    pub gx_shape: Shape,
    pub gm: f64,
}

impl ParamCoefficients {
    /// Everything zero except `sigma = 1`, `x0 = 0`.
    pub fn blank(name: &str, horizon: f64) -> Self {
        Self {
            name: name.to_string(),
            mode: Mode::ConditionalLaw,
            x0: 0.0,
            bound: 10.0,
            horizon,
            psi: Shape::Linear,
            s0: 1.0,
            s1: 0.0,
            sm: 0.0,
            sx: 0.0,
            sx_shape: Shape::Zero,
            hc: 0.0,
            hx: 0.0,
            hx_shape: Shape::Zero,
            hm: 0.0,
            phi_h: Shape::Zero,
            hu: 0.0,
            u_cost: vec![0.0],
            fx: 0.0,
            fx_shape: Shape::Zero,
            fm: 0.0,
            gx: 0.0,
            gx_shape: Shape::Zero,
            gm: 0.0,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    fn m(&self, mu: &MeasureView) -> f64 {
        mu.stats[0]
    }

    fn cost_rate(&self, t: f64) -> f64 {
        let nb = self.u_cost.len();
        let b = ((t / self.horizon) * nb as f64).floor() as usize;
        self.u_cost[b.min(nb - 1)]
    }
}

impl CoefficientSet for ParamCoefficients {
    fn name(&self) -> &str {
        &self.name
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn x0(&self) -> f64 {
        self.x0
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn measure_stats(&self, law: &EmpiricalMeasure) -> Vec<f64> {
        match self.psi {
            Shape::Linear => vec![law.mean()],
            s => vec![law.expect(|y| s.eval(y)[0])],
        }
    }

    fn value(&self, c: Coef, t: f64, x: f64, mu: &MeasureView, u: f64) -> f64 {
        let m = self.m(mu);
        match c {
            Coef::Sigma => self.s0 + self.s1 * u + self.sm * m + self.sx * self.sx_shape.eval(x)[0],
            Coef::Obs => {
                self.hc + self.hx * self.hx_shape.eval(x)[0] + self.hm * m + self.phi_h.eval(x)[0] * self.hu * u
            }
            Coef::Running => self.cost_rate(t) * u + self.fx * self.fx_shape.eval(x)[0] + self.fm * m,
        }
    }

    fn dx(&self, c: Coef, _t: f64, x: f64, _mu: &MeasureView, u: f64) -> f64 {
        match c {
            Coef::Sigma => self.sx * self.sx_shape.eval(x)[1],
            Coef::Obs => self.hx * self.hx_shape.eval(x)[1] + self.phi_h.eval(x)[1] * self.hu * u,
            Coef::Running => self.fx * self.fx_shape.eval(x)[1],
        }
    }

    fn dxx(&self, c: Coef, _t: f64, x: f64, _mu: &MeasureView, u: f64) -> f64 {
        match c {
            Coef::Sigma => self.sx * self.sx_shape.eval(x)[2],
            Coef::Obs => self.hx * self.hx_shape.eval(x)[2] + self.phi_h.eval(x)[2] * self.hu * u,
            Coef::Running => self.fx * self.fx_shape.eval(x)[2],
        }
    }

    fn dmu(&self, c: Coef, _t: f64, _x: f64, _mu: &MeasureView, _u: f64, y: f64) -> f64 {
        let a = match c {
            Coef::Sigma => self.sm,
            Coef::Obs => self.hm,
            Coef::Running => self.fm,
        };
        if a == 0.0 {
            0.0
        } else {
            a * self.psi.eval(y)[1]
        }
    }

    fn dzmu(&self, c: Coef, _t: f64, _x: f64, _mu: &MeasureView, _u: f64, y: f64) -> f64 {
        let a = match c {
            Coef::Sigma => self.sm,
            Coef::Obs => self.hm,
            Coef::Running => self.fm,
        };
        if a == 0.0 {
            0.0
        } else {
            a * self.psi.eval(y)[2]
        }
    }

    fn terminal(&self, x: f64, mu: &MeasureView) -> f64 {
        self.gx * self.gx_shape.eval(x)[0] + self.gm * self.m(mu)
    }

    fn terminal_x(&self, x: f64, _mu: &MeasureView) -> f64 {
        self.gx * self.gx_shape.eval(x)[1]
    }

    fn terminal_xx(&self, x: f64, _mu: &MeasureView) -> f64 {
        self.gx * self.gx_shape.eval(x)[2]
    }

    fn terminal_mu(&self, _x: f64, _mu: &MeasureView, y: f64) -> f64 {
        if self.gm == 0.0 {
            0.0
        } else {
            self.gm * self.psi.eval(y)[1]
        }
    }

    fn terminal_zmu(&self, _x: f64, _mu: &MeasureView, y: f64) -> f64 {
        if self.gm == 0.0 {
            0.0
        } else {
            self.gm * self.psi.eval(y)[2]
        }
    }

    fn measure_derivatives_state_free(&self) -> bool {
        true
    }

    fn sigma_x_is_zero(&self) -> bool {
        self.sx == 0.0 || self.sx_shape == Shape::Zero
    }

    fn has_h3_split(&self) -> bool {
        true
    }

    fn h0(&self, _t: f64, x: f64, mu: &MeasureView) -> f64 {
        self.hc + self.hx * self.hx_shape.eval(x)[0] + self.hm * self.m(mu)
    }

    fn phi_h(&self, x: f64) -> f64 {
        self.phi_h.eval(x)[0]
    }

    fn phi_h_x(&self, x: f64) -> f64 {
        self.phi_h.eval(x)[1]
    }

    fn h1(&self, _t: f64, _mu: &MeasureView, u: f64) -> f64 {
        self.hu * u
    }
}

pub const PRESET_NAMES: [&str; 6] = [
    "zero-h",
    "control-only-sigma",
    "mean-feedback",
    "linear-filtering",
    "smp-reference",
    "obs-map-reference",
];

/// `h = 0` with a measure-dependent diffusion: the density is identically one.
pub fn zero_h(horizon: f64) -> ParamCoefficients {
    ParamCoefficients {
        x0: 0.5,
        psi: Shape::Tanh,
        s0: 0.6,
        s1: 0.3,
        sm: 0.3,
        u_cost: vec![0.2],
        fx: 0.1,
        fx_shape: Shape::TanhSq,
        gx: -0.5,
        gx_shape: Shape::LogCosh,
        gm: 0.2,
        ..ParamCoefficients::blank("zero-h", horizon)
    }
}

/// `sigma = sigma(u)`, `h = 0`, no measure dependence.
pub fn control_only_sigma(horizon: f64) -> ParamCoefficients {
    ParamCoefficients {
        s0: 0.5,
        s1: 0.5,
        u_cost: vec![0.25],
        gx: -1.0,
        gx_shape: Shape::LogCosh,
        ..ParamCoefficients::blank("control-only-sigma", horizon)
    }
}

/// `sigma = 1 + mean(mu) / 4`, `h = 0`, `x0 = 1`.
pub fn mean_feedback(horizon: f64) -> ParamCoefficients {
    ParamCoefficients {
        x0: 1.0,
        psi: Shape::Linear,
        s0: 1.0,
        sm: 0.25,
        ..ParamCoefficients::blank("mean-feedback", horizon)
    }
}

/// `sigma = 1`, `h(x) = x`: the Kalman-Bucy setting.
pub fn linear_filtering(horizon: f64) -> ParamCoefficients {
    ParamCoefficients {
        hx: 1.0,
        hx_shape: Shape::Linear,
        bound: f64::INFINITY,
        ..ParamCoefficients::blank("linear-filtering", horizon)
    }
}

/// Bounded preset satisfying the split assumption: `sigma = sigma(t, mu, u)`
/// and `h = h0(t, x, mu) + tanh(x) h1(u)`. Used by the acceptance suite.
pub fn smp_reference(horizon: f64) -> ParamCoefficients {
    ParamCoefficients {
        x0: 0.0,
        psi: Shape::Tanh,
        s0: 0.5,
        s1: 0.5,
        sm: 0.1,
        hx: 0.3,
        hx_shape: Shape::Tanh,
        hm: 0.1,
        phi_h: Shape::Tanh,
        hu: 0.3,
        u_cost: vec![0.05, 0.5, 0.05, 0.5],
        fx: 0.1,
        fx_shape: Shape::TanhSq,
        fm: 0.05,
        gx: -1.0,
        gx_shape: Shape::LogCosh,
        gm: 0.2,
        ..ParamCoefficients::blank("smp-reference", horizon)
    }
}

/// `phi(x) = x`, `sigma` and `h` free of `x` and `mu`: both maximum
/// principles apply and must agree.
pub fn obs_map_reference(horizon: f64) -> ParamCoefficients {
    ParamCoefficients {
        s0: 0.5,
        s1: 0.5,
        phi_h: Shape::One,
        hu: 0.3,
        u_cost: vec![0.05, 0.5, 0.05, 0.5],
        gx: -1.0,
        gx_shape: Shape::LogCosh,
        ..ParamCoefficients::blank("obs-map-reference", horizon)
    }
}

pub fn preset(name: &str, horizon: f64) -> Option<ParamCoefficients> {
    Some(match name {
        "zero-h" => zero_h(horizon),
        "control-only-sigma" => control_only_sigma(horizon),
        "mean-feedback" => mean_feedback(horizon),
        "linear-filtering" => linear_filtering(horizon),
        "smp-reference" => smp_reference(horizon),
        "obs-map-reference" => obs_map_reference(horizon),
        _ => return None,
    })
}
