#![allow(dead_code)]

use mfsmp_core::{make_plan, EmpiricalMeasure, NoisePlan, TimeGrid};
use minilp::{ComparisonOp, OptimizationDirection, Problem};

pub fn plan(seed: u64, m: usize, n: usize, horizon: f64, steps: usize) -> NoisePlan {
    make_plan(seed, m, n, TimeGrid::new(horizon, steps).unwrap()).unwrap()
}

/// Optimal transport cost `min sum_ab pi_ab |x_a - y_b|` as a linear program.
pub fn w1_lp(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let (xs, wa) = (mu.samples(), mu.weights());
    let (ys, wb) = (nu.samples(), nu.weights());
    let mut vars = vec![vec![]; xs.len()];
    for (a, x) in xs.iter().enumerate() {
        for y in ys {
            vars[a].push(p.add_var((x - y).abs(), (0.0, f64::INFINITY)));
        }
    }
    for (a, w) in wa.iter().enumerate() {
        let row: Vec<_> = vars[a].iter().map(|&v| (v, 1.0)).collect();
        p.add_constraint(&row, ComparisonOp::Eq, *w);
    }
    for (b, w) in wb.iter().enumerate() {
        let col: Vec<_> = vars.iter().map(|r| (r[b], 1.0)).collect();
        p.add_constraint(&col, ComparisonOp::Eq, *w);
    }
    p.solve().unwrap().objective()
}

/// Sorted atoms with normalized weights from raw pairs.
pub fn measure(mut pairs: Vec<(f64, f64)>) -> EmpiricalMeasure {
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let xs = pairs.iter().map(|p| p.0).collect();
    let mut ws: Vec<f64> = pairs.iter().map(|p| p.1 / total).collect();
    let s: f64 = ws[..ws.len() - 1].iter().sum();
    *ws.last_mut().unwrap() = 1.0 - s;
    EmpiricalMeasure::new(xs, ws).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use mfsmp_core::presets::ParamCoefficients;
use mfsmp_core::{Coef, CoefficientSet, MeasureView, Mode};

/// Delegates to a parametric set, with an optional state-functional
/// observation map `phi(x, y) = y` and an optional extra running cost
/// `(u - v_star)^2`.
#[derive(Debug, Clone)]
pub struct Wrapped {
    pub inner: ParamCoefficients,
    pub obs_is_y: bool,
    pub quad_cost: Option<f64>,
}

impl Wrapped {
    pub fn new(inner: ParamCoefficients) -> Self {
        Self {
            inner,
            obs_is_y: false,
            quad_cost: None,
        }
    }
}

impl CoefficientSet for Wrapped {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn mode(&self) -> Mode {
        self.inner.mode()
    }
    fn x0(&self) -> f64 {
        self.inner.x0()
    }
    fn bound(&self) -> f64 {
        self.inner.bound()
    }
    fn measure_stats(&self, law: &EmpiricalMeasure) -> Vec<f64> {
        self.inner.measure_stats(law)
    }
    fn value(&self, c: Coef, t: f64, x: f64, mu: &MeasureView, u: f64) -> f64 {
        let extra = match (c, self.quad_cost) {
            (Coef::Running, Some(v)) => (u - v) * (u - v),
            _ => 0.0,
        };
        self.inner.value(c, t, x, mu, u) + extra
    }
    fn dx(&self, c: Coef, t: f64, x: f64, mu: &MeasureView, u: f64) -> f64 {
        self.inner.dx(c, t, x, mu, u)
    }
    fn dxx(&self, c: Coef, t: f64, x: f64, mu: &MeasureView, u: f64) -> f64 {
        self.inner.dxx(c, t, x, mu, u)
    }
    fn dmu(&self, c: Coef, t: f64, x: f64, mu: &MeasureView, u: f64, y: f64) -> f64 {
        self.inner.dmu(c, t, x, mu, u, y)
    }
    fn dzmu(&self, c: Coef, t: f64, x: f64, mu: &MeasureView, u: f64, y: f64) -> f64 {
        self.inner.dzmu(c, t, x, mu, u, y)
    }
    fn terminal(&self, x: f64, mu: &MeasureView) -> f64 {
        self.inner.terminal(x, mu)
    }
    fn terminal_x(&self, x: f64, mu: &MeasureView) -> f64 {
        self.inner.terminal_x(x, mu)
    }
    fn terminal_xx(&self, x: f64, mu: &MeasureView) -> f64 {
        self.inner.terminal_xx(x, mu)
    }
    fn terminal_mu(&self, x: f64, mu: &MeasureView, y: f64) -> f64 {
        self.inner.terminal_mu(x, mu, y)
    }
    fn terminal_zmu(&self, x: f64, mu: &MeasureView, y: f64) -> f64 {
        self.inner.terminal_zmu(x, mu, y)
    }
    fn measure_derivatives_state_free(&self) -> bool {
        true
    }
    fn sigma_x_is_zero(&self) -> bool {
        self.inner.sigma_x_is_zero()
    }
    fn has_h3_split(&self) -> bool {
        true
    }
    fn h0(&self, t: f64, x: f64, mu: &MeasureView) -> f64 {
        self.inner.h0(t, x, mu)
    }
    fn phi_h(&self, x: f64) -> f64 {
        self.inner.phi_h(x)
    }
    fn phi_h_x(&self, x: f64) -> f64 {
        self.inner.phi_h_x(x)
    }
    fn h1(&self, t: f64, mu: &MeasureView, u: f64) -> f64 {
        self.inner.h1(t, mu, u)
    }
    fn obs_map(&self, t: f64, x: f64, y: f64) -> f64 {
        if self.obs_is_y {
            y
        } else {
            self.inner.obs_map(t, x, y)
        }
    }
    fn obs_map_x(&self, t: f64, x: f64, y: f64) -> f64 {
        if self.obs_is_y {
            0.0
        } else {
            self.inner.obs_map_x(t, x, y)
        }
    }
}

/// Mean and standard error over outer paths of a per-sample row.
pub fn outer_mean(row: &[f64], n: usize) -> (f64, f64) {
    mfsmp_core::field::mean_stderr(&mfsmp_core::field::inner_means(row, n))
}

use mfsmp_core::{wasserstein1, weighted_law, ControlPolicy, Field};

/// Picard iteration for the uncontrolled-density McKean-Vlasov system, written
/// without any density: `U_j` is the plain inner mean and `mu` its uniform law.
pub fn plain_mckean_vlasov(
    c: &dyn CoefficientSet,
    ctl: &ControlPolicy,
    p: &NoisePlan,
    tol: f64,
) -> (Field, Vec<EmpiricalMeasure>) {
    let g = p.grid;
    let (m, n, kk) = (p.m_outer, p.n_inner, g.steps());
    let mut laws: Vec<EmpiricalMeasure> = vec![EmpiricalMeasure::dirac(c.x0()); kk + 1];
    loop {
        let stats: Vec<Vec<f64>> = laws.iter().map(|l| c.measure_stats(l)).collect();
        let mut x = Field::zeros(kk + 1, m * n);
        x.at_mut(0).fill(c.x0());
        for k in 0..kk {
            let mu = MeasureView {
                law: &laws[k],
                stats: &stats[k],
            };
            for j in 0..m {
                let u = ctl.eval(g.t(k), &p.y_path(j)[..=k]);
                for i in 0..n {
                    let s = j * n + i;
                    let xv = x.get(k, s);
                    let next = xv + c.value(Coef::Sigma, g.t(k), xv, &mu, u) * p.db1(j, i, k);
                    x.set(k + 1, s, next);
                }
            }
        }
        let next: Vec<EmpiricalMeasure> = (0..=kk)
            .map(|k| {
                let u: Vec<f64> = (0..m)
                    .map(|j| x.at(k)[j * n..(j + 1) * n].iter().sum::<f64>() / n as f64)
                    .collect();
                weighted_law(&u, &vec![1.0; m]).unwrap()
            })
            .collect();
        let gap = next
            .iter()
            .zip(&laws)
            .map(|(a, b)| wasserstein1(a, b).unwrap())
            .fold(0.0, f64::max);
        laws = next;
        if gap <= tol {
            return (x, laws);
        }
    }
}
