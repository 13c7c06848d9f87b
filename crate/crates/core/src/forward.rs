//! Forward system under the reference measure Q:
//!
//! ```text
//! dX = sigma(t, X, mu, u) dB^1,   dL = L h(t, X, mu, u) dY,   P = L_T Q,
//! ```
//!
//! with `mu_t` the P-law of the filtered state. Conditional expectations
//! given F^Y are averages over the inner particles that share one observation
//! path; the measure argument is found by Picard iteration on `mu`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{Coef, CoefficientSet, MeasureView, Mode};
use crate::control::ControlPolicy;
use crate::error::{MfError, Result};
use crate::field::{inner_means, mean_stderr, Field};
use crate::grid::TimeGrid;
use crate::measure::{conditional_ratio, wasserstein1, weighted_law, EmpiricalMeasure};
use crate::noise::NoisePlan;

/// How the density `L` is advanced over one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityScheme {
    /// `L_{k+1} = L_k exp(h dY - h^2 dt / 2)`: exact for constant `h`, always positive.
    #[default]
    LogSpace,
    /// `L_{k+1} = L_k (1 + h dY)`.
    LiteralEuler,
}

/// Measures per node with the statistics the coefficient set derives from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Laws {
    pub mu: Vec<EmpiricalMeasure>,
    pub stats: Vec<Vec<f64>>,
}

impl Laws {
    pub fn new(coeffs: &dyn CoefficientSet, mu: Vec<EmpiricalMeasure>) -> Self {
        let stats = mu.iter().map(|m| coeffs.measure_stats(m)).collect();
        Self { mu, stats }
    }

    pub fn dirac(coeffs: &dyn CoefficientSet, x: f64, nodes: usize) -> Self {
        Self::new(coeffs, vec![EmpiricalMeasure::dirac(x); nodes])
    }

    pub fn view(&self, k: usize) -> MeasureView<'_> {
        MeasureView {
            law: &self.mu[k],
            stats: &self.stats[k],
        }
    }
}

/// Paths of `(X, L)` produced by one Euler pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub x: Field,
    pub l: Field,
    /// Control value per `(k, j)`, `k < K`.
    pub controls: Field,
}

/// Evaluates the policy on every outer path's observation prefix.
pub fn control_table(control: &ControlPolicy, plan: &NoisePlan) -> Field {
    let grid = plan.grid;
    let mut c = Field::zeros(grid.steps(), plan.m_outer);
    for k in 0..grid.steps() {
        for j in 0..plan.m_outer {
            c.set(k, j, control.eval(grid.t(k), &plan.y_path(j)[..=k]));
        }
    }
    c
}

/// One explicit Euler-Maruyama pass with the measure sequence held fixed.
pub fn euler_forward_given_mu(
    coeffs: &dyn CoefficientSet,
    control: &ControlPolicy,
    plan: &NoisePlan,
    laws: &Laws,
    scheme: DensityScheme,
) -> Result<Paths> {
    let grid = plan.grid;
    let kk = grid.steps();
    if laws.mu.len() != kk + 1 {
        return Err(crate::error::config(
            "mfforward",
            format!("need {} measures, got {}", kk + 1, laws.mu.len()),
        ));
    }
    let n = plan.n_inner;
    let s = plan.samples();
    let dt = grid.dt();
    let controls = control_table(control, plan);
    let mut x = Field::zeros(kk + 1, s);
    let mut l = Field::zeros(kk + 1, s);
    x.at_mut(0).fill(coeffs.x0());
    l.at_mut(0).fill(1.0);
    let mut logl = vec![0.0; s];
    for k in 0..kk {
        let t = grid.t(k);
        let mu = laws.view(k);
        let db = plan.db1_step(k);
        let dy = plan.dy_step(k);
        let u = controls.at(k);
        let (x0, x1) = x.step_mut(k);
        let (l0, l1) = l.step_mut(k);
        x1.par_chunks_mut(n)
            .zip(l1.par_chunks_mut(n))
            .zip(logl.par_chunks_mut(n))
            .enumerate()
            .try_for_each(|(j, ((xo, lo), lg))| -> Result<()> {
                for i in 0..n {
                    let si = j * n + i;
                    let xv = x0[si];
                    let sig = coeffs.value(Coef::Sigma, t, xv, &mu, u[j]);
                    let h = coeffs.value(Coef::Obs, t, xv, &mu, u[j]);
                    xo[i] = xv + sig * db[si];
                    match scheme {
                        DensityScheme::LogSpace => {
                            lg[i] += h * dy[j] - 0.5 * h * h * dt;
                            lo[i] = lg[i].exp();
                        }
                        DensityScheme::LiteralEuler => {
                            lo[i] = l0[si] * (1.0 + h * dy[j]);
                        }
                    }
                    if !xo[i].is_finite() {
                        return Err(blowup("X", j, i, k + 1));
                    }
                    if !lo[i].is_finite() {
                        return Err(blowup("L", j, i, k + 1));
                    }
                }
                Ok(())
            })?;
    }
    Ok(Paths { x, l, controls })
}

fn blowup(quantity: &'static str, j: usize, i: usize, k: usize) -> MfError {
    MfError::Blowup {
        module: "mfforward",
        quantity,
        j,
        i,
        k,
    }
}

/// Filtered state per sample and the P-law of it per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    /// `U` per sample, constant across the inner index in conditional-law mode.
    pub u: Field,
    /// Inner mean of `L` per `(k, j)`: `dP/dQ` restricted to F^Y.
    pub lbar: Field,
    pub mu: Vec<EmpiricalMeasure>,
}

pub fn filter_and_laws(coeffs: &dyn CoefficientSet, plan: &NoisePlan, paths: &Paths) -> Result<Filtered> {
    let grid = plan.grid;
    let n = plan.n_inner;
    let m = plan.m_outer;
    let s = plan.samples();
    let mut u = Field::zeros(grid.steps() + 1, s);
    let mut lbar = Field::zeros(grid.steps() + 1, m);
    let mut mu = Vec::with_capacity(grid.steps() + 1);
    for k in 0..=grid.steps() {
        let xk = paths.x.at(k);
        let lk = paths.l.at(k);
        let lb = inner_means(lk, n);
        lbar.at_mut(k).copy_from_slice(&lb);
        match coeffs.mode() {
            Mode::ConditionalLaw => {
                let mut uo = Vec::with_capacity(m);
                for j in 0..m {
                    let r = j * n..(j + 1) * n;
                    let v = conditional_ratio(&xk[r.clone()], &lk[r.clone()])?;
                    u.at_mut(k)[r].fill(v);
                    uo.push(v);
                }
                mu.push(weighted_law(&uo, &lb)?);
            }
            Mode::StateFunctional => {
                let t = grid.t(k);
                let uk = u.at_mut(k);
                for j in 0..m {
                    let y = plan.y_path(j)[k];
                    for i in 0..n {
                        uk[j * n + i] = coeffs.obs_map(t, xk[j * n + i], y);
                    }
                }
                mu.push(weighted_law(u.at(k), lk)?);
            }
        }
    }
    Ok(Filtered { u, lbar, mu })
}

/// Solution of the forward system at the Picard fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    pub grid: TimeGrid,
    pub m_outer: usize,
    pub n_inner: usize,
    pub mode: Mode,
    pub x: Field,
    pub l: Field,
    pub u: Field,
    pub lbar: Field,
    pub controls: Field,
    /// The measures that drove `(X, L)`: the last Picard input.
    pub laws: Laws,
    /// P-law of `U` computed from the stored paths.
    pub mu: Vec<EmpiricalMeasure>,
    pub cost: f64,
    pub cost_stderr: f64,
    /// `d_m = max_k W1(mu^(m), mu^(m-1))`, `m = 1, 2, ...`.
    pub gaps: Vec<f64>,
}

impl ForwardState {
    pub fn samples(&self) -> usize {
        self.m_outer * self.n_inner
    }

    /// `U[j][k]`.
    pub fn u_outer(&self, j: usize, k: usize) -> f64 {
        self.u.get(k, j * self.n_inner)
    }

    /// Control value applied on outer path `j` over step `k`.
    pub fn control(&self, j: usize, k: usize) -> f64 {
        self.controls.get(k.min(self.grid.steps() - 1), j)
    }

    /// `mu_k` as seen by the coefficients.
    pub fn view(&self, k: usize) -> MeasureView<'_> {
        self.laws.view(k)
    }
}

/// Picard settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: DensityScheme,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 25,
            scheme: DensityScheme::LogSpace,
        }
    }
}

fn max_w1(a: &[EmpiricalMeasure], b: &[EmpiricalMeasure]) -> Result<f64> {
    let mut d = 0.0f64;
    for (p, q) in a.iter().zip(b) {
        d = d.max(wasserstein1(p, q)?);
    }
    Ok(d)
}

struct Iterate {
    paths: Paths,
    input: Laws,
    filtered: Filtered,
    gaps: Vec<f64>,
    converged: bool,
}

fn iterate(
    coeffs: &dyn CoefficientSet,
    control: &ControlPolicy,
    plan: &NoisePlan,
    opts: &PicardOptions,
    fixed_count: Option<usize>,
) -> Result<Iterate> {
    let nodes = plan.grid.steps() + 1;
    let mut input = Laws::dirac(coeffs, coeffs.x0(), nodes);
    let mut gaps = Vec::new();
    let rounds = fixed_count.unwrap_or(opts.max_iter).max(1);
    for _ in 0..rounds {
        let paths = euler_forward_given_mu(coeffs, control, plan, &input, opts.scheme)?;
        let filtered = filter_and_laws(coeffs, plan, &paths)?;
        let d = max_w1(&filtered.mu, &input.mu)?;
        gaps.push(d);
        let done = fixed_count.is_none() && d <= opts.tol;
        if done || gaps.len() == rounds {
            return Ok(Iterate {
                paths,
                input,
                filtered,
                gaps,
                converged: d <= opts.tol,
            });
        }
        input = Laws::new(coeffs, filtered.mu);
    }
    unreachable!("loop returns on its last round")
}

/// Forward solve with Picard iteration on the measure flow, starting from
/// `mu^(0) = delta_{x0}` and stopping once `max_k W1` between successive
/// iterates is at most `tol`.
pub fn picard_forward(
    coeffs: &dyn CoefficientSet,
    control: &ControlPolicy,
    plan: &NoisePlan,
    opts: &PicardOptions,
) -> Result<ForwardState> {
    if !(opts.tol > 0.0) {
        return Err(crate::error::config("mfforward", "Picard tolerance must be positive"));
    }
    let it = iterate(coeffs, control, plan, opts, None)?;
    if !it.converged {
        return Err(MfError::ContractionFailure {
            max_iter: opts.max_iter,
            gaps: it.gaps,
        });
    }
    assemble(coeffs, plan, it)
}

fn assemble(coeffs: &dyn CoefficientSet, plan: &NoisePlan, it: Iterate) -> Result<ForwardState> {
    let grid = plan.grid;
    let n = plan.n_inner;
    let s = plan.samples();
    let dt = grid.dt();
    let kk = grid.steps();
    let mut per_sample = vec![0.0; s];
    for k in 0..kk {
        let mu = it.input.view(k);
        let t = grid.t(k);
        let xk = it.paths.x.at(k);
        let uk = it.paths.controls.at(k);
        for (si, acc) in per_sample.iter_mut().enumerate() {
            *acc += coeffs.value(Coef::Running, t, xk[si], &mu, uk[si / n]) * dt;
        }
    }
    let mu_t = it.input.view(kk);
    let xt = it.paths.x.at(kk);
    for (si, acc) in per_sample.iter_mut().enumerate() {
        *acc += coeffs.terminal(xt[si], &mu_t);
    }
    let (cost, cost_stderr) = mean_stderr(&inner_means(&per_sample, n));
    Ok(ForwardState {
        grid,
        m_outer: plan.m_outer,
        n_inner: n,
        mode: coeffs.mode(),
        x: it.paths.x,
        l: it.paths.l,
        u: it.filtered.u,
        lbar: it.filtered.lbar,
        controls: it.paths.controls,
        laws: it.input,
        mu: it.filtered.mu,
        cost,
        cost_stderr,
        gaps: it.gaps,
    })
}

/// Runs exactly `iterations` Picard rounds and returns `d_1, ..., d_iterations`.
pub fn contraction_diagnostic(
    coeffs: &dyn CoefficientSet,
    control: &ControlPolicy,
    plan: &NoisePlan,
    iterations: usize,
) -> Result<Vec<f64>> {
    if iterations < 3 {
        return Err(crate::error::config("mfforward", "need at least 3 iterations"));
    }
    let opts = PicardOptions::default();
    Ok(iterate(coeffs, control, plan, &opts, Some(iterations))?.gaps)
}
