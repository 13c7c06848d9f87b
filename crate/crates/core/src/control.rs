//! Admissible controls: F^Y-adapted maps from the observation prefix to a
//! finite control set, and spike variations of them.

use std::fmt;
use std::sync::Arc;

use crate::error::{config, Result};
use crate::grid::TimeGrid;

const TIME_TOL: f64 = 1e-12;

/// Feedback on `(t, Y_0..Y_k)`.
pub type FeedbackFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Rule {
    Constant(f64),
    /// Equal-length blocks covering `[0, horizon]`.
    Blocks {
        values: Vec<f64>,
        horizon: f64,
    },
    /// `above` when the current observation exceeds `level`, else `below`.
    Threshold {
        level: f64,
        below: f64,
        above: f64,
    },
    Feedback(FeedbackFn),
    Nested(Box<ControlPolicy>),
}

impl fmt::Debug for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Constant(v) => write!(f, "Constant({v})"),
            Rule::Blocks { values, .. } => write!(f, "Blocks({values:?})"),
            Rule::Threshold { level, below, above } => {
                write!(f, "Threshold({level}, {below}, {above})")
            }
            Rule::Feedback(_) => write!(f, "Feedback(..)"),
            Rule::Nested(p) => write!(f, "Nested({p:?})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpikeSpec {
    pub t0: f64,
    pub eps: f64,
    pub alt_policy: ControlPolicy,
}

impl SpikeSpec {
    pub fn new(t0: f64, eps: f64, alt_policy: ControlPolicy) -> Self {
        Self { t0, eps, alt_policy }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(self.t0 >= 0.0 && self.t0 < horizon) {
            return Err(config("mfcore", format!("spike t0 = {} outside [0, T)", self.t0)));
        }
        if !(self.eps >= 0.0 && self.eps <= horizon) {
            return Err(config("mfcore", format!("spike eps = {} outside [0, T]", self.eps)));
        }
        if self.t0 + self.eps > horizon + TIME_TOL {
            return Err(config("mfcore", "spike window exceeds the horizon"));
        }
        Ok(())
    }

    /// `t` lies in `[t0, t0 + eps)`.
    pub fn contains(&self, t: f64) -> bool {
        self.eps > 0.0 && t >= self.t0 - TIME_TOL && t < self.t0 + self.eps - TIME_TOL
    }

    /// Indicator of the window on the grid nodes `0..K-1`.
    pub fn window(&self, grid: &TimeGrid) -> Vec<bool> {
        (0..grid.steps()).map(|k| self.contains(grid.t(k))).collect()
    }

    /// Lebesgue measure of the window as seen by the Euler scheme.
    pub fn effective_eps(&self, grid: &TimeGrid) -> f64 {
        self.window(grid).iter().filter(|b| **b).count() as f64 * grid.dt()
    }
}

/// An F^Y-adapted control with values in `u_set`.
#[derive(Debug, Clone)]
pub struct ControlPolicy {
    pub rule: Rule,
    pub u_set: Vec<f64>,
    pub spike: Option<Box<SpikeSpec>>,
}

impl ControlPolicy {
    pub fn constant(v: f64, u_set: Vec<f64>) -> Self {
        Self {
            rule: Rule::Constant(v),
            u_set,
            spike: None,
        }
    }

    pub fn blocks(values: Vec<f64>, horizon: f64, u_set: Vec<f64>) -> Self {
        Self {
            rule: Rule::Blocks { values, horizon },
            u_set,
            spike: None,
        }
    }

    /// Control at time `t` given the observation prefix `Y_0..Y_k`. Only the
    /// prefix is visible, which is what makes the policy adapted.
    pub fn eval(&self, t: f64, y_prefix: &[f64]) -> f64 {
        if let Some(s) = &self.spike {
            if s.contains(t) {
                return s.alt_policy.eval(t, y_prefix);
            }
        }
        match &self.rule {
            Rule::Constant(v) => *v,
            Rule::Blocks { values, horizon } => {
                let nb = values.len();
                let b = ((t / horizon) * nb as f64 + TIME_TOL).floor() as usize;
                values[b.min(nb - 1)]
            }
            Rule::Threshold { level, below, above } => {
                let y = y_prefix.last().copied().unwrap_or(0.0);
                if y > *level {
                    *above
                } else {
                    *below
                }
            }
            Rule::Feedback(g) => g(t, y_prefix),
            Rule::Nested(p) => p.eval(t, y_prefix),
        }
    }
}

/// `u^eps`: `alt_policy` on `[t0, t0 + eps)`, `base` elsewhere.
pub fn spike_control(base: &ControlPolicy, spike: &SpikeSpec) -> ControlPolicy {
    let rule = if base.spike.is_none() {
        base.rule.clone()
    } else {
        Rule::Nested(Box::new(base.clone()))
    };
    ControlPolicy {
        rule,
        u_set: base.u_set.clone(),
        spike: Some(Box::new(spike.clone())),
    }
}
