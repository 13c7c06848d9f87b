//! First- and second-order adjoint BSDEs by backward Euler with least-squares
//! conditional expectations, and the duality check against the variational
//! system.
//!
//! Step `k` regresses on `{1, X, L, U, X^2, X L, U^2}` at `t_k`, fitted across
//! all samples:
//!
//! ```text
//! p_k = E[p_{k+1} | F_k] + alpha_k dt
//! q_k = E[(p_{k+1} - c_k) dB_k | F_k] / dt
//! ```
//!
//! with `c_k = 0`. The generator reads the integrands of the same step. With
//! [`AdjointOptions::control_variate`] set, later sweeps use the previous
//! sweep's `p_k` as `c_k`: lower variance, but the sample-level duality then
//! picks up the noise of `mean(c_k dB_k)`.

use serde::{Deserialize, Serialize};

use crate::coeffs::{Coef, CoefficientSet, Mode};
use crate::error::{config, MfError, Result};
use crate::field::{inner_means, mean_stderr, Field};
use crate::forward::ForwardState;
use crate::noise::NoisePlan;
use crate::regression::{Design, RIDGE};
use crate::variation::VariationState;
use crate::ygrid::{Deriv, Profiles, YGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointOptions {
    /// Fixed-point sweeps per backward step, at least 1. Without the control
    /// variate the first sweep is already the fixed point.
    pub sweeps: usize,
    pub control_variate: bool,
    pub ridge: f64,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            sweeps: 2,
            control_variate: false,
            ridge: RIDGE,
        }
    }
}

impl AdjointOptions {
    fn effective_sweeps(&self) -> usize {
        if self.control_variate {
            self.sweeps
        } else {
            1
        }
    }
}

/// Adjoint processes per `(k, sample)`. Integrands and generators live on
/// nodes `k < K`; their slot at `K` stays zero.
#[derive(Debug, Clone)]
pub struct AdjointState {
    pub mode: Mode,
    pub p1: Field,
    /// `dB^1` integrand of `p^1`.
    pub q1: Field,
    /// `dY` integrand of `p^1`.
    pub qc1: Field,
    pub p2: Field,
    /// `dB^1` integrand of `p^2`.
    pub qc2: Field,
    /// `dY` integrand of `p^2`.
    pub q2: Field,
    pub alpha: Field,
    pub beta: Field,
    /// `E~[H~*_mu](U)` per sample: the generator's measure term before the
    /// `L` or `(X - U)` factor.
    pub h_mu: Field,
    /// `E~[Phi~*_mu](U_T)` per sample.
    pub phi_mu: Vec<f64>,
    pub big_p1: Field,
    pub big_q11: Field,
    pub big_q12: Field,
    /// State-functional mode only.
    pub big_p2: Field,
    pub big_q21: Field,
    pub big_q22: Field,
    /// `phi_x` per sample, ones in the conditional-law mode.
    pub obs_slope: Field,
    pub gen_p1: Field,
    pub gen_p2: Field,
    /// R^2 per step for `p1, p2, q1, qc1, qc2, q2`.
    pub first_r2: Vec<[f64; 6]>,
    /// R^2 per step for `P1, Q11, Q12`.
    pub second_r2: Vec<[f64; 3]>,
    /// Steps where the design needed the ridge fallback.
    pub ridge_steps: usize,
    pub has_second: bool,
    n_inner: usize,
}

impl AdjointState {
    pub fn n_inner(&self) -> usize {
        self.n_inner
    }
}

fn blowup(quantity: &'static str, v: &[f64], n: usize, k: usize) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(s) => Err(MfError::Blowup {
            module: "mfadjoint",
            quantity,
            j: s / n,
            i: s % n,
            k,
        }),
    }
}

fn check_plan(fwd: &ForwardState, plan: &NoisePlan) -> Result<()> {
    if plan.grid != fwd.grid || plan.m_outer != fwd.m_outer || plan.n_inner != fwd.n_inner {
        return Err(config("mfadjoint", "noise plan does not match the forward state"));
    }
    Ok(())
}

pub(crate) fn basis(fwd: &ForwardState, k: usize, ridge: f64) -> Result<Design> {
    let (x, l, u) = (fwd.x.at(k), fwd.l.at(k), fwd.u.at(k));
    let s = x.len();
    let cols = vec![
        vec![1.0; s],
        x.to_vec(),
        l.to_vec(),
        u.to_vec(),
        x.iter().map(|v| v * v).collect(),
        x.iter().zip(l).map(|(a, b)| a * b).collect(),
        u.iter().map(|v| v * v).collect(),
    ];
    Design::new(cols, ridge)
}

/// Lions-derivative profiles of `sigma`, `h`, `f` at one node.
pub(crate) struct MeasureTerms {
    pub grid: YGrid,
    samples: usize,
    sig: Profiles,
    h: Profiles,
    f: Profiles,
}

impl MeasureTerms {
    /// `None` when every profile vanishes.
    pub fn build(coeffs: &dyn CoefficientSet, fwd: &ForwardState, k: usize, second: bool) -> Option<Self> {
        let n = fwd.n_inner;
        let grid = YGrid::spanning(fwd.u.at(k));
        let t = fwd.grid.t(k);
        let mu = fwd.view(k);
        let uc = fwd.controls.at(k.min(fwd.grid.steps() - 1));
        let x = fwd.x.at(k);
        let prof = |c: Coef| {
            let d = if second { Deriv::ZMu(c) } else { Deriv::Mu(c) };
            Profiles::build(coeffs, d, &grid, t, x, |s| uc[s / n], &mu)
        };
        let (sig, h, f) = (prof(Coef::Sigma), prof(Coef::Obs), prof(Coef::Running));
        if sig.is_zero() && h.is_zero() && f.is_zero() {
            return None;
        }
        Some(Self {
            grid,
            samples: x.len(),
            sig,
            h,
            f,
        })
    }

    /// `y -> E~[q~1 sigma~_mu + q~2 L~ h~_mu - f~_mu](y)` on the grid.
    pub fn total(&self, q1: &[f64], q2l: &[f64]) -> Vec<f64> {
        let ones = vec![1.0; q1.len()];
        let (a, b, c) = (
            self.sig.weighted_mean(q1),
            self.h.weighted_mean(q2l),
            self.f.weighted_mean(&ones),
        );
        (0..a.len()).map(|g| a[g] + b[g] - c[g]).collect()
    }

    /// `y -> E~[f~_mu](y)` on the grid.
    pub fn running(&self) -> Vec<f64> {
        self.f.weighted_mean(&vec![1.0; self.samples])
    }
}

/// Terminal Lions-derivative profile averaged over the ensemble.
pub(crate) fn terminal_profile(
    coeffs: &dyn CoefficientSet,
    fwd: &ForwardState,
    second: bool,
) -> Option<(YGrid, Vec<f64>)> {
    let kk = fwd.grid.steps();
    let grid = YGrid::spanning(fwd.u.at(kk));
    let mu = fwd.view(kk);
    let d = if second { Deriv::TerminalZMu } else { Deriv::TerminalMu };
    let p = Profiles::build(coeffs, d, &grid, fwd.grid.horizon(), fwd.x.at(kk), |_| 0.0, &mu);
    if p.is_zero() {
        return None;
    }
    let w = vec![1.0; fwd.samples()];
    let table = p.weighted_mean(&w);
    Some((grid, table))
}

/// Values of a grid function and of its antiderivative at every `U`.
fn at_u(grid: &YGrid, table: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = grid.antiderivative(table);
    u.iter().map(|&y| (grid.interp(table, y), grid.interp(&a, y))).unzip()
}

/// `phi_x` per sample, or ones in the conditional-law mode.
fn obs_slope(coeffs: &dyn CoefficientSet, fwd: &ForwardState, plan: &NoisePlan, k: usize) -> Vec<f64> {
    let n = fwd.n_inner;
    match fwd.mode {
        Mode::ConditionalLaw => vec![1.0; fwd.samples()],
        Mode::StateFunctional => {
            let t = fwd.grid.t(k);
            fwd.x
                .at(k)
                .iter()
                .enumerate()
                .map(|(s, &x)| coeffs.obs_map_x(t, x, plan.y_path(s / n)[k]))
                .collect()
        }
    }
}

/// Pointwise coefficient values along the base trajectory at node `k`.
struct Local {
    sx: Vec<f64>,
    sxx: Vec<f64>,
    h: Vec<f64>,
    hx: Vec<f64>,
    hxx: Vec<f64>,
    fx: Vec<f64>,
    fxx: Vec<f64>,
}

fn local(coeffs: &dyn CoefficientSet, fwd: &ForwardState, k: usize) -> Local {
    let n = fwd.n_inner;
    let t = fwd.grid.t(k);
    let mu = fwd.view(k);
    let x = fwd.x.at(k);
    let uc = fwd.controls.at(k.min(fwd.grid.steps() - 1));
    let ev = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { (0..x.len()).map(|s| f(x[s], uc[s / n])).collect() };
    Local {
        sx: ev(&|x, u| coeffs.dx(Coef::Sigma, t, x, &mu, u)),
        sxx: ev(&|x, u| coeffs.dxx(Coef::Sigma, t, x, &mu, u)),
        h: ev(&|x, u| coeffs.value(Coef::Obs, t, x, &mu, u)),
        hx: ev(&|x, u| coeffs.dx(Coef::Obs, t, x, &mu, u)),
        hxx: ev(&|x, u| coeffs.dxx(Coef::Obs, t, x, &mu, u)),
        fx: ev(&|x, u| coeffs.dx(Coef::Running, t, x, &mu, u)),
        fxx: ev(&|x, u| coeffs.dxx(Coef::Running, t, x, &mu, u)),
    }
}

/// Regression targets `(v - c) dB / dt` and `(v - c) dY / dt`.
fn increments(v: &[f64], c: &[f64], db: &[f64], dy: &[f64], n: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
    (0..v.len())
        .map(|s| {
            let d = v[s] - c[s];
            (d * db[s] / dt, d * dy[s / n] / dt)
        })
        .unzip()
}

pub fn solve_first_adjoint(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    control: &crate::control::ControlPolicy,
    plan: &NoisePlan,
) -> Result<AdjointState> {
    solve_first_adjoint_with(coeffs, forward, control, plan, &AdjointOptions::default())
}

pub fn solve_first_adjoint_with(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    _control: &crate::control::ControlPolicy,
    plan: &NoisePlan,
    opts: &AdjointOptions,
) -> Result<AdjointState> {
    check_plan(forward, plan)?;
    if opts.sweeps == 0 {
        return Err(config("mfadjoint", "need at least one sweep"));
    }
    let fwd = forward;
    let kk = fwd.grid.steps();
    let (s, n) = (fwd.samples(), fwd.n_inner);
    let dt = fwd.grid.dt();
    let cl = fwd.mode == Mode::ConditionalLaw;
    let z = || Field::zeros(kk + 1, s);
    let mut st = AdjointState {
        mode: fwd.mode,
        p1: z(),
        q1: z(),
        qc1: z(),
        p2: z(),
        qc2: z(),
        q2: z(),
        alpha: z(),
        beta: z(),
        h_mu: z(),
        phi_mu: vec![0.0; s],
        big_p1: z(),
        big_q11: z(),
        big_q12: z(),
        big_p2: z(),
        big_q21: z(),
        big_q22: z(),
        obs_slope: z(),
        gen_p1: z(),
        gen_p2: z(),
        first_r2: vec![[0.0; 6]; kk],
        second_r2: vec![[0.0; 3]; kk],
        ridge_steps: 0,
        has_second: false,
        n_inner: n,
    };

    let mu_t = fwd.view(kk);
    let (xt, lt, ut) = (fwd.x.at(kk), fwd.l.at(kk), fwd.u.at(kk));
    let (dphi, aphi) = match terminal_profile(coeffs, fwd, false) {
        Some((grid, table)) => at_u(&grid, &table, ut),
        None => (vec![0.0; s], vec![0.0; s]),
    };
    let slope_t = obs_slope(coeffs, fwd, plan, kk);
    for i in 0..s {
        let gx = coeffs.terminal_x(xt[i], &mu_t);
        st.p1.set(kk, i, -gx - lt[i] * slope_t[i] * dphi[i]);
        let p2 = if cl {
            -(xt[i] - ut[i]) * dphi[i] - aphi[i]
        } else {
            -aphi[i]
        };
        st.p2.set(kk, i, p2);
    }
    st.phi_mu = dphi;
    st.obs_slope.at_mut(kk).copy_from_slice(&slope_t);

    for k in (0..kk).rev() {
        let design = basis(fwd, k, opts.ridge)?;
        if design.ridge() {
            st.ridge_steps += 1;
        }
        let next1 = st.p1.at(k + 1).to_vec();
        let next2 = st.p2.at(k + 1).to_vec();
        let f1 = design.fit(&next1)?;
        let f2 = design.fit(&next2)?;
        let loc = local(coeffs, fwd, k);
        let terms = MeasureTerms::build(coeffs, fwd, k, false);
        let slope = obs_slope(coeffs, fwd, plan, k);
        st.obs_slope.at_mut(k).copy_from_slice(&slope);
        let (x, l, u) = (fwd.x.at(k), fwd.l.at(k), fwd.u.at(k));
        let (db, dy) = (plan.db1_step(k), plan.dy_step(k));
        let mut c1 = vec![0.0; s];
        let mut c2 = vec![0.0; s];
        let mut r2 = [f1.r2, f2.r2, 0.0, 0.0, 0.0, 0.0];
        let zero = vec![0.0; s];
        for sweep in 0..opts.effective_sweeps() {
            let (b1, b2) = if sweep == 0 { (&zero, &zero) } else { (&c1, &c2) };
            let (t1b, t1y) = increments(&next1, b1, db, dy, n, dt);
            let (t2b, t2y) = increments(&next2, b2, db, dy, n, dt);
            let (q1, qc1, qc2, q2) = (
                design.fit(&t1b)?,
                design.fit(&t1y)?,
                design.fit(&t2b)?,
                design.fit(&t2y)?,
            );
            r2[2..].copy_from_slice(&[q1.r2, qc1.r2, qc2.r2, q2.r2]);
            let (dtot, atot) = match &terms {
                Some(mt) => {
                    let q2l: Vec<f64> = (0..s).map(|i| q2.fitted[i] * l[i]).collect();
                    at_u(&mt.grid, &mt.total(&q1.fitted, &q2l), u)
                }
                None => (vec![0.0; s], vec![0.0; s]),
            };
            for i in 0..s {
                let a =
                    loc.sx[i] * q1.fitted[i] + loc.hx[i] * l[i] * q2.fitted[i] - loc.fx[i] + l[i] * slope[i] * dtot[i];
                let b = loc.h[i] * q2.fitted[i] + if cl { (x[i] - u[i]) * dtot[i] } else { 0.0 } + atot[i];
                st.alpha.set(k, i, a);
                st.beta.set(k, i, b);
                c1[i] = f1.fitted[i] + a * dt;
                c2[i] = f2.fitted[i] + b * dt;
            }
            st.q1.at_mut(k).copy_from_slice(&q1.fitted);
            st.qc1.at_mut(k).copy_from_slice(&qc1.fitted);
            st.qc2.at_mut(k).copy_from_slice(&qc2.fitted);
            st.q2.at_mut(k).copy_from_slice(&q2.fitted);
            st.h_mu.at_mut(k).copy_from_slice(&dtot);
        }
        st.p1.at_mut(k).copy_from_slice(&c1);
        st.p2.at_mut(k).copy_from_slice(&c2);
        st.first_r2[k] = r2;
        blowup("p1", st.p1.at(k), n, k)?;
        blowup("p2", st.p2.at(k), n, k)?;
    }
    Ok(st)
}

/// Fills the second-order processes of `first`.
///
/// Conditional-law mode: `dP^1 = -H_xx dt + Q^11 dB^1 + Q^12 dY`,
/// `P^1_T = -Phi_xx`. State-functional mode: the coupled pair `(P^1, P^2)`
/// with its `Q`-coupling terms.
pub fn solve_second_adjoint(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    control: &crate::control::ControlPolicy,
    first: AdjointState,
    plan: &NoisePlan,
) -> Result<AdjointState> {
    solve_second_adjoint_with(coeffs, forward, control, first, plan, &AdjointOptions::default())
}

pub fn solve_second_adjoint_with(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    _control: &crate::control::ControlPolicy,
    first: AdjointState,
    plan: &NoisePlan,
    opts: &AdjointOptions,
) -> Result<AdjointState> {
    check_plan(forward, plan)?;
    if first.p1.width() != forward.samples() || first.p1.nodes() != forward.grid.steps() + 1 {
        return Err(config("mfadjoint", "first adjoint does not match the forward state"));
    }
    if opts.sweeps == 0 {
        return Err(config("mfadjoint", "need at least one sweep"));
    }
    let fwd = forward;
    let mut st = first;
    let kk = fwd.grid.steps();
    let (s, n) = (fwd.samples(), fwd.n_inner);
    let dt = fwd.grid.dt();
    let sf = fwd.mode == Mode::StateFunctional;

    let mu_t = fwd.view(kk);
    let (xt, lt, ut) = (fwd.x.at(kk), fwd.l.at(kk), fwd.u.at(kk));
    let zphi = match (sf, terminal_profile(coeffs, fwd, true)) {
        (true, Some((grid, table))) => at_u(&grid, &table, ut).0,
        _ => vec![0.0; s],
    };
    let slope_t = st.obs_slope.at(kk).to_vec();
    for i in 0..s {
        let mut v = -coeffs.terminal_xx(xt[i], &mu_t);
        if sf {
            v -= lt[i] * slope_t[i] * slope_t[i] * zphi[i];
            st.big_p2.set(kk, i, -slope_t[i] * st.phi_mu[i]);
        }
        st.big_p1.set(kk, i, v);
    }

    for k in (0..kk).rev() {
        let design = basis(fwd, k, opts.ridge)?;
        let next1 = st.big_p1.at(k + 1).to_vec();
        let next2 = st.big_p2.at(k + 1).to_vec();
        let f1 = design.fit(&next1)?;
        let f2 = if sf { Some(design.fit(&next2)?) } else { None };
        let loc = local(coeffs, fwd, k);
        let l = fwd.l.at(k);
        let (q1, q2) = (st.q1.at(k).to_vec(), st.q2.at(k).to_vec());
        let hxx: Vec<f64> = (0..s)
            .map(|i| loc.sxx[i] * q1[i] + loc.hxx[i] * l[i] * q2[i] - loc.fxx[i])
            .collect();
        let ztot = match (sf, MeasureTerms::build(coeffs, fwd, k, true)) {
            (true, Some(mt)) => {
                let q2l: Vec<f64> = (0..s).map(|i| q2[i] * l[i]).collect();
                at_u(&mt.grid, &mt.total(&q1, &q2l), fwd.u.at(k)).0
            }
            _ => vec![0.0; s],
        };
        let slope = st.obs_slope.at(k).to_vec();
        let (db, dy) = (plan.db1_step(k), plan.dy_step(k));
        let mut c1 = vec![0.0; s];
        let mut c2 = vec![0.0; s];
        let mut r2 = [f1.r2, 0.0, 0.0];
        let zero = vec![0.0; s];
        for sweep in 0..opts.effective_sweeps() {
            let (b1, b2) = if sweep == 0 { (&zero, &zero) } else { (&c1, &c2) };
            let (t1b, t1y) = increments(&next1, b1, db, dy, n, dt);
            let (q11, q12) = (design.fit(&t1b)?, design.fit(&t1y)?);
            r2[1] = q11.r2;
            r2[2] = q12.r2;
            let (q21, q22) = match &f2 {
                Some(_) => {
                    let (t2b, t2y) = increments(&next2, b2, db, dy, n, dt);
                    (design.fit(&t2b)?.fitted, design.fit(&t2y)?.fitted)
                }
                None => (vec![0.0; s], vec![0.0; s]),
            };
            for i in 0..s {
                let g1 = if sf {
                    hxx[i]
                        + l[i] * slope[i] * slope[i] * ztot[i]
                        + loc.sx[i] * loc.sx[i] * f1.fitted[i]
                        + 2.0 * loc.sx[i] * q11.fitted[i]
                        + 2.0 * l[i] * loc.hx[i] * q22[i]
                } else {
                    hxx[i]
                };
                st.gen_p1.set(k, i, g1);
                c1[i] = f1.fitted[i] + g1 * dt;
                if let Some(f2) = &f2 {
                    let g2 = loc.hx[i] * q2[i] + slope[i] * st.h_mu.get(k, i) + loc.sx[i] * q21[i] + loc.h[i] * q22[i];
                    st.gen_p2.set(k, i, g2);
                    c2[i] = f2.fitted[i] + g2 * dt;
                }
            }
            st.big_q11.at_mut(k).copy_from_slice(&q11.fitted);
            st.big_q12.at_mut(k).copy_from_slice(&q12.fitted);
            st.big_q21.at_mut(k).copy_from_slice(&q21);
            st.big_q22.at_mut(k).copy_from_slice(&q22);
        }
        st.big_p1.at_mut(k).copy_from_slice(&c1);
        st.big_p2.at_mut(k).copy_from_slice(&c2);
        st.second_r2[k] = r2;
        blowup("P1", st.big_p1.at(k), n, k)?;
        blowup("P2", st.big_p2.at(k), n, k)?;
    }
    st.has_second = true;
    Ok(st)
}

/// Which backward equation [`martingale_residuals`] checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    P1,
    P2,
    BigP1,
    BigP2,
}

/// Per step `k`: mean over samples of
/// `p_{k+1} - p_k + gen_k dt - q_k dB_k - qc_k dY_k` and its standard error.
///
/// The regression intercept makes this mean equal to `-mean(q dB + qc dY)`,
/// so the error combines the spread of the residual with that of the
/// stochastic-integral term.
pub fn martingale_residuals(adj: &AdjointState, plan: &NoisePlan, which: Component) -> Result<Vec<(f64, f64)>> {
    if adj.p1.width() != plan.samples() || adj.p1.nodes() != plan.grid.steps() + 1 {
        return Err(config("mfadjoint", "noise plan does not match the adjoint state"));
    }
    let (p, g, qb, qy) = match which {
        Component::P1 => (&adj.p1, &adj.alpha, &adj.q1, &adj.qc1),
        Component::P2 => (&adj.p2, &adj.beta, &adj.qc2, &adj.q2),
        Component::BigP1 => (&adj.big_p1, &adj.gen_p1, &adj.big_q11, &adj.big_q12),
        Component::BigP2 => (&adj.big_p2, &adj.gen_p2, &adj.big_q21, &adj.big_q22),
    };
    let n = plan.n_inner;
    let dt = plan.grid.dt();
    Ok((0..plan.grid.steps())
        .map(|k| {
            let (db, dy) = (plan.db1_step(k), plan.dy_step(k));
            let mart: Vec<f64> = (0..plan.samples())
                .map(|s| qb.get(k, s) * db[s] + qy.get(k, s) * dy[s / n])
                .collect();
            let r: Vec<f64> = (0..plan.samples())
                .map(|s| p.get(k + 1, s) - p.get(k, s) + g.get(k, s) * dt - mart[s])
                .collect();
            let (mean, se_r) = mean_stderr(&inner_means(&r, n));
            let (_, se_m) = mean_stderr(&inner_means(&mart, n));
            (mean, se_r.hypot(se_m))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub eps: f64,
    pub eff_eps: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_residual: f64,
    /// `|lhs - rhs| / max(|lhs|, |rhs|, eps^2)`.
    pub rel_residual: f64,
    /// `|lhs - rhs| / eff_eps`, zero for an empty window.
    pub per_eps: f64,
}

/// Compares `E[p1_T Y1_T + p2_T K1_T]` with the time integral of the running
/// cost derivatives plus the spike term `(q1 dsigma + q2 L dh) 1_E`.
pub fn duality_check(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    variation: &VariationState,
    adjoint: &AdjointState,
) -> Result<DualityReport> {
    let fwd = forward;
    let kk = fwd.grid.steps();
    let s = fwd.samples();
    let shape_ok = |f: &Field| f.width() == s && f.nodes() == kk + 1;
    if !(shape_ok(&variation.y1) && shape_ok(&adjoint.p1) && variation.window.len() == kk) {
        return Err(config(
            "mfadjoint",
            "variation, adjoint and forward state come from different plans",
        ));
    }
    let n = fwd.n_inner;
    let dt = fwd.grid.dt();
    let cl = fwd.mode == Mode::ConditionalLaw;
    let sm = s as f64;
    let lhs = (0..s)
        .map(|i| adjoint.p1.get(kk, i) * variation.y1.get(kk, i) + adjoint.p2.get(kk, i) * variation.k1.get(kk, i))
        .sum::<f64>()
        / sm;
    let mut rhs = 0.0;
    for k in 0..kk {
        let t = fwd.grid.t(k);
        let mu = fwd.view(k);
        let (x, l, u) = (fwd.x.at(k), fwd.l.at(k), fwd.u.at(k));
        let (y1, k1) = (variation.y1.at(k), variation.k1.at(k));
        let (df, af) = match MeasureTerms::build(coeffs, fwd, k, false) {
            Some(mt) => at_u(&mt.grid, &mt.running(), u),
            None => (vec![0.0; s], vec![0.0; s]),
        };
        let slope = adjoint.obs_slope.at(k);
        let mut acc = 0.0;
        for i in 0..s {
            let uc = fwd.control(i / n, k);
            let fx = coeffs.dx(Coef::Running, t, x[i], &mu, uc);
            let mut v = y1[i] * (fx + l[i] * slope[i] * df[i]) + k1[i] * af[i];
            if cl {
                v += k1[i] * (x[i] - u[i]) * df[i];
            }
            if variation.window[k] {
                let va = variation.alt_controls.get(k, i / n);
                let ds = coeffs.value(Coef::Sigma, t, x[i], &mu, va) - coeffs.value(Coef::Sigma, t, x[i], &mu, uc);
                let dh = coeffs.value(Coef::Obs, t, x[i], &mu, va) - coeffs.value(Coef::Obs, t, x[i], &mu, uc);
                v += adjoint.q1.get(k, i) * ds + adjoint.q2.get(k, i) * l[i] * dh;
            }
            acc += v;
        }
        rhs += acc / sm * dt;
    }
    let eps = variation.eps;
    let eff_eps = variation.window.iter().filter(|b| **b).count() as f64 * dt;
    let abs_residual = (lhs - rhs).abs();
    let scale = lhs.abs().max(rhs.abs()).max(eps * eps);
    Ok(DualityReport {
        eps,
        eff_eps,
        lhs,
        rhs,
        abs_residual,
        rel_residual: if scale > 0.0 { abs_residual / scale } else { 0.0 },
        per_eps: if eff_eps > 0.0 { abs_residual / eff_eps } else { 0.0 },
    })
}
