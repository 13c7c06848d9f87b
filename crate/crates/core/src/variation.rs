//! First- and second-order variational systems along a spike variation and
//! the Taylor-order diagnostics built on them.
//!
//! `Y` equations are stepped by Euler-Maruyama. The `K` equations are the
//! exact linearization of the exponential density step used by the forward
//! solver, so the discrete residuals `X^eps - X - Y^1 - ...` inherit the
//! orders of the continuous expansion.

use serde::{Deserialize, Serialize};

use crate::coeffs::{Coef, CoefficientSet, Mode};
use crate::control::{spike_control, ControlPolicy, SpikeSpec};
use crate::error::{config, MfError, Result};
use crate::field::Field;
use crate::forward::{control_table, picard_forward, ForwardState, PicardOptions};
use crate::measure::theta_path;
use crate::noise::NoisePlan;
use crate::ygrid::{Deriv, Profiles, YGrid};

/// Sensitivities of `(X, L, U)` to the spike, per sample and node.
#[derive(Debug, Clone)]
pub struct VariationState {
    pub spike: SpikeSpec,
    pub eps: f64,
    /// Grid nodes `k < K` inside the spike window.
    pub window: Vec<bool>,
    /// Alternative control `v` per `(k, j)`.
    pub alt_controls: Field,
    pub y1: Field,
    pub k1: Field,
    /// Per sample; constant across inner particles in conditional-law mode.
    pub v1: Field,
    pub y2: Field,
    pub k2: Field,
    pub v2: Field,
    pub has_second: bool,
    n_inner: usize,
}

impl VariationState {
    pub fn v1_outer(&self, j: usize, k: usize) -> f64 {
        self.v1.get(k, j * self.n_inner)
    }

    pub fn v2_outer(&self, j: usize, k: usize) -> f64 {
        self.v2.get(k, j * self.n_inner)
    }

    pub fn n_inner(&self) -> usize {
        self.n_inner
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationOptions {
    /// Multiplies every `delta phi` forcing. `1` is the actual system.
    pub forcing_scale: f64,
}

impl Default for VariationOptions {
    fn default() -> Self {
        Self { forcing_scale: 1.0 }
    }
}

/// Coefficient values along the base trajectory at one node.
struct Step {
    in_window: bool,
    sx: Vec<f64>,
    sxx: Vec<f64>,
    h: Vec<f64>,
    hx: Vec<f64>,
    hxx: Vec<f64>,
    dsig: Vec<f64>,
    dh: Vec<f64>,
    dsx: Vec<f64>,
    dhx: Vec<f64>,
    grid: YGrid,
    mf: Option<MeanField>,
}

struct MeanField {
    a_sig: Profiles,
    g_sig: Profiles,
    a_h: Profiles,
    g_h: Profiles,
    second: Option<MeanFieldSecond>,
}

struct MeanFieldSecond {
    z_sig: Profiles,
    z_h: Profiles,
    da_sig: Profiles,
    dg_sig: Profiles,
    da_h: Profiles,
    dg_h: Profiles,
}

/// Spread weights of the independent copy: `c_g = E~[lambda_g(U~) w~]`.
fn spread(grid: &YGrid, u: &[f64], w: &[f64]) -> Vec<f64> {
    grid.spread(u, w, u.len() as f64)
}

#[allow(clippy::too_many_arguments)]
fn build_step(
    coeffs: &dyn CoefficientSet,
    fwd: &ForwardState,
    alt: &Field,
    in_window: bool,
    k: usize,
    second: bool,
    scale: f64,
) -> Step {
    let n = fwd.n_inner;
    let s = fwd.samples();
    let t = fwd.grid.t(k);
    let mu = fwd.view(k);
    let x = fwd.x.at(k);
    let uc = fwd.controls.at(k.min(fwd.grid.steps() - 1));
    let va = alt.at(k.min(fwd.grid.steps() - 1));
    let mut st = Step {
        in_window,
        sx: vec![0.0; s],
        sxx: vec![0.0; s],
        h: vec![0.0; s],
        hx: vec![0.0; s],
        hxx: vec![0.0; s],
        dsig: vec![0.0; s],
        dh: vec![0.0; s],
        dsx: vec![0.0; s],
        dhx: vec![0.0; s],
        grid: YGrid::spanning(fwd.u.at(k)),
        mf: None,
    };
    for si in 0..s {
        let (xv, u, v) = (x[si], uc[si / n], va[si / n]);
        st.sx[si] = coeffs.dx(Coef::Sigma, t, xv, &mu, u);
        st.sxx[si] = coeffs.dxx(Coef::Sigma, t, xv, &mu, u);
        st.h[si] = coeffs.value(Coef::Obs, t, xv, &mu, u);
        st.hx[si] = coeffs.dx(Coef::Obs, t, xv, &mu, u);
        st.hxx[si] = coeffs.dxx(Coef::Obs, t, xv, &mu, u);
        if in_window {
            st.dsig[si] = scale * (coeffs.value(Coef::Sigma, t, xv, &mu, v) - coeffs.value(Coef::Sigma, t, xv, &mu, u));
            st.dh[si] = scale * (coeffs.value(Coef::Obs, t, xv, &mu, v) - st.h[si]);
            st.dsx[si] = scale * (coeffs.dx(Coef::Sigma, t, xv, &mu, v) - st.sx[si]);
            st.dhx[si] = scale * (coeffs.dx(Coef::Obs, t, xv, &mu, v) - st.hx[si]);
        }
    }
    let prof = |d: Deriv, ctrl: &[f64]| Profiles::build(coeffs, d, &st.grid, t, x, |si| ctrl[si / n], &mu);
    let g_sig = prof(Deriv::Mu(Coef::Sigma), uc);
    let g_h = prof(Deriv::Mu(Coef::Obs), uc);
    let z_sig = prof(Deriv::ZMu(Coef::Sigma), uc);
    let z_h = prof(Deriv::ZMu(Coef::Obs), uc);
    let (gv_sig, gv_h) = if in_window {
        (prof(Deriv::Mu(Coef::Sigma), va), prof(Deriv::Mu(Coef::Obs), va))
    } else {
        (g_sig.clone(), g_h.clone())
    };
    if [&g_sig, &g_h, &z_sig, &z_h, &gv_sig, &gv_h].iter().all(|p| p.is_zero()) {
        return st;
    }
    let scaled = |p: Profiles| if scale == 1.0 { p } else { p.scaled(scale) };
    let sec = second.then(|| {
        let dg_sig = scaled(gv_sig.minus(&g_sig));
        let dg_h = scaled(gv_h.minus(&g_h));
        MeanFieldSecond {
            da_sig: dg_sig.integrated(&st.grid),
            da_h: dg_h.integrated(&st.grid),
            dg_sig,
            dg_h,
            z_sig,
            z_h,
        }
    });
    st.mf = Some(MeanField {
        a_sig: g_sig.integrated(&st.grid),
        a_h: g_h.integrated(&st.grid),
        g_sig,
        g_h,
        second: sec,
    });
    st
}

/// `V` at one node from `(Y, K)`.
fn v_field(
    coeffs: &dyn CoefficientSet,
    fwd: &ForwardState,
    plan: &NoisePlan,
    k: usize,
    y: &[f64],
    kk: &[f64],
) -> Result<Vec<f64>> {
    let n = fwd.n_inner;
    let x = fwd.x.at(k);
    let l = fwd.l.at(k);
    let mut out = vec![0.0; y.len()];
    match fwd.mode {
        Mode::ConditionalLaw => {
            for j in 0..fwd.m_outer {
                let r = j * n..(j + 1) * n;
                let v = theta_path(&y[r.clone()], &kk[r.clone()], &x[r.clone()], &l[r.clone()])?;
                out[r].fill(v);
            }
        }
        Mode::StateFunctional => {
            let t = fwd.grid.t(k);
            for (si, o) in out.iter_mut().enumerate() {
                *o = coeffs.obs_map_x(t, x[si], plan.y_path(si / n)[k]) * y[si];
            }
        }
    }
    Ok(out)
}

/// First-order forcing of the `Y` equation and of `log L` at one node.
fn first_forcing(st: &Step, l: &[f64], u: &[f64], y1: &[f64], k1: &[f64], v1: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut fs: Vec<f64> = (0..y1.len()).map(|s| st.sx[s] * y1[s] + st.dsig[s]).collect();
    let mut fh: Vec<f64> = (0..y1.len()).map(|s| st.hx[s] * y1[s] + st.dh[s]).collect();
    if let Some(mf) = &st.mf {
        let ck = spread(&st.grid, u, k1);
        let lv: Vec<f64> = l.iter().zip(v1).map(|(a, b)| a * b).collect();
        let clv = spread(&st.grid, u, &lv);
        for (f, (a, g)) in [(&mut fs, (&mf.a_sig, &mf.g_sig)), (&mut fh, (&mf.a_h, &mf.g_h))] {
            let ta = a.apply(&ck);
            let tg = g.apply(&clv);
            for s in 0..f.len() {
                f[s] += ta[s] + tg[s];
            }
        }
    }
    (fs, fh)
}

struct SecondInputs<'a> {
    y1: &'a [f64],
    k1: &'a [f64],
    v1: &'a [f64],
    y2: &'a [f64],
    k2: &'a [f64],
    v2: &'a [f64],
}

/// Quadratic sources in `(Y^1, K^1, V^1)` of the second-order system: the
/// `dB^1` part and the `dY` part (already multiplied through by `L` where the
/// equation has it).
fn quadratic(st: &Step, l: &[f64], u: &[f64], y1: &[f64], k1: &[f64], v1: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let s = y1.len();
    let mut qs: Vec<f64> = (0..s).map(|i| 0.5 * st.sxx[i] * y1[i] * y1[i]).collect();
    let mut qh: Vec<f64> = (0..s).map(|i| 0.5 * st.hxx[i] * y1[i] * y1[i]).collect();
    if let Some(MeanField {
        g_sig,
        g_h,
        second: Some(sec),
        ..
    }) = &st.mf
    {
        let vk: Vec<f64> = v1.iter().zip(k1).map(|(a, b)| a * b).collect();
        let lvv: Vec<f64> = (0..s).map(|i| l[i] * v1[i] * v1[i]).collect();
        let cvk = spread(&st.grid, u, &vk);
        let clvv = spread(&st.grid, u, &lvv);
        let (a, b) = (g_sig.apply(&cvk), sec.z_sig.apply(&clvv));
        let (c, d) = (g_h.apply(&cvk), sec.z_h.apply(&clvv));
        for i in 0..s {
            qs[i] += a[i] + 0.5 * b[i];
            qh[i] += c[i] + 0.5 * d[i];
        }
    }
    let kdy: Vec<f64> = (0..s).map(|i| st.hx[i] * y1[i] * k1[i] + l[i] * qh[i]).collect();
    (qs, kdy)
}

/// Second-order forcing of the `Y` equation and the `h`-perturbation `H2`.
fn second_forcing(st: &Step, l: &[f64], u: &[f64], inp: &SecondInputs) -> (Vec<f64>, Vec<f64>) {
    let s = inp.y1.len();
    let (qs, _) = quadratic(st, l, u, inp.y1, inp.k1, inp.v1);
    let mut fs: Vec<f64> = (0..s)
        .map(|i| st.sx[i] * inp.y2[i] + qs[i] + st.dsx[i] * inp.y1[i])
        .collect();
    let mut fh: Vec<f64> = (0..s)
        .map(|i| st.hx[i] * inp.y2[i] + 0.5 * st.hxx[i] * inp.y1[i] * inp.y1[i] + st.dhx[i] * inp.y1[i])
        .collect();
    if let Some(mf) = &st.mf {
        let ck2 = spread(&st.grid, u, inp.k2);
        let lv2: Vec<f64> = l.iter().zip(inp.v2).map(|(a, b)| a * b).collect();
        let clv2 = spread(&st.grid, u, &lv2);
        let terms = |a: &Profiles, g: &Profiles| {
            let (x, y) = (a.apply(&ck2), g.apply(&clv2));
            x.iter().zip(&y).map(|(p, q)| p + q).collect::<Vec<f64>>()
        };
        let lin_s = terms(&mf.a_sig, &mf.g_sig);
        let lin_h = terms(&mf.a_h, &mf.g_h);
        for i in 0..s {
            fs[i] += lin_s[i];
            fh[i] += lin_h[i];
        }
        if let Some(sec) = &mf.second {
            let vk: Vec<f64> = inp.v1.iter().zip(inp.k1).map(|(a, b)| a * b).collect();
            let lvv: Vec<f64> = (0..s).map(|i| l[i] * inp.v1[i] * inp.v1[i]).collect();
            let (cvk, clvv) = (spread(&st.grid, u, &vk), spread(&st.grid, u, &lvv));
            let (g, z) = (mf.g_h.apply(&cvk), sec.z_h.apply(&clvv));
            for i in 0..s {
                fh[i] += g[i] + 0.5 * z[i];
            }
            if st.in_window {
                let ck1 = spread(&st.grid, u, inp.k1);
                let lv1: Vec<f64> = l.iter().zip(inp.v1).map(|(a, b)| a * b).collect();
                let clv1 = spread(&st.grid, u, &lv1);
                let (a, b) = (sec.da_sig.apply(&ck1), sec.dg_sig.apply(&clv1));
                let (c, d) = (sec.da_h.apply(&ck1), sec.dg_h.apply(&clv1));
                for i in 0..s {
                    fs[i] += a[i] + b[i];
                    fh[i] += c[i] + d[i];
                }
            }
        }
    }
    (fs, fh)
}

fn check(v: &[f64], quantity: &'static str, n: usize, k: usize) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(s) => Err(MfError::Blowup {
            module: "mfvariation",
            quantity,
            j: s / n,
            i: s % n,
            k,
        }),
    }
}

fn check_inputs(fwd: &ForwardState, plan: &NoisePlan, spike: &SpikeSpec) -> Result<()> {
    if plan.grid != fwd.grid || plan.m_outer != fwd.m_outer || plan.n_inner != fwd.n_inner {
        return Err(config("mfvariation", "noise plan does not match the forward state"));
    }
    spike.validate(fwd.grid.horizon())
}

/// First-order system along `u^eps`, with the forward state solved under `u`.
pub fn solve_first_variation(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    control: &ControlPolicy,
    spike: &SpikeSpec,
    plan: &NoisePlan,
) -> Result<VariationState> {
    solve_first_variation_with(coeffs, forward, control, spike, plan, &VariationOptions::default())
}

pub fn solve_first_variation_with(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    _control: &ControlPolicy,
    spike: &SpikeSpec,
    plan: &NoisePlan,
    opts: &VariationOptions,
) -> Result<VariationState> {
    check_inputs(forward, plan, spike)?;
    let grid = forward.grid;
    let kk = grid.steps();
    let (s, n) = (forward.samples(), forward.n_inner);
    let dt = grid.dt();
    let window = spike.window(&grid);
    let alt_controls = control_table(&spike.alt_policy, plan);
    let mut y1 = Field::zeros(kk + 1, s);
    let mut k1 = Field::zeros(kk + 1, s);
    let mut v1 = Field::zeros(kk + 1, s);
    for k in 0..kk {
        let st = build_step(coeffs, forward, &alt_controls, window[k], k, false, opts.forcing_scale);
        let l = forward.l.at(k);
        let u = forward.u.at(k);
        let (fs, fh) = first_forcing(&st, l, u, y1.at(k), k1.at(k), v1.at(k));
        let db = plan.db1_step(k);
        let dy = plan.dy_step(k);
        let (ya, yb) = y1.step_mut(k);
        for i in 0..s {
            yb[i] = ya[i] + fs[i] * db[i];
        }
        let (ka, kb) = k1.step_mut(k);
        for i in 0..s {
            let inc = dy[i / n] - st.h[i] * dt;
            let e = (st.h[i] * dy[i / n] - 0.5 * st.h[i] * st.h[i] * dt).exp();
            kb[i] = e * (ka[i] + l[i] * inc * fh[i]);
        }
        check(y1.at(k + 1), "Y1", n, k + 1)?;
        check(k1.at(k + 1), "K1", n, k + 1)?;
        let v = v_field(coeffs, forward, plan, k + 1, y1.at(k + 1), k1.at(k + 1))?;
        v1.at_mut(k + 1).copy_from_slice(&v);
    }
    Ok(VariationState {
        spike: spike.clone(),
        eps: spike.eps,
        window,
        alt_controls,
        y1,
        k1,
        v1,
        y2: Field::zeros(kk + 1, s),
        k2: Field::zeros(kk + 1, s),
        v2: Field::zeros(kk + 1, s),
        has_second: false,
        n_inner: n,
    })
}

/// Completes `first` with the second-order system.
pub fn solve_second_variation(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    control: &ControlPolicy,
    spike: &SpikeSpec,
    plan: &NoisePlan,
    first: VariationState,
) -> Result<VariationState> {
    solve_second_variation_with(
        coeffs,
        forward,
        control,
        spike,
        plan,
        first,
        &VariationOptions::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn solve_second_variation_with(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    _control: &ControlPolicy,
    spike: &SpikeSpec,
    plan: &NoisePlan,
    first: VariationState,
    opts: &VariationOptions,
) -> Result<VariationState> {
    check_inputs(forward, plan, spike)?;
    let mut st_out = first;
    let grid = forward.grid;
    let kk = grid.steps();
    let (s, n) = (forward.samples(), forward.n_inner);
    let dt = grid.dt();
    for k in 0..kk {
        let st = build_step(
            coeffs,
            forward,
            &st_out.alt_controls,
            st_out.window[k],
            k,
            true,
            opts.forcing_scale,
        );
        let l = forward.l.at(k);
        let u = forward.u.at(k);
        let (y1, k1, v1) = (st_out.y1.at(k), st_out.k1.at(k), st_out.v1.at(k));
        let (_, fh1) = first_forcing(&st, l, u, y1, k1, v1);
        let inp = SecondInputs {
            y1,
            k1,
            v1,
            y2: st_out.y2.at(k),
            k2: st_out.k2.at(k),
            v2: st_out.v2.at(k),
        };
        let (fs, fh) = second_forcing(&st, l, u, &inp);
        let k1v = k1.to_vec();
        let y1v = y1.to_vec();
        let db = plan.db1_step(k);
        let dy = plan.dy_step(k);
        let (ya, yb) = st_out.y2.step_mut(k);
        for i in 0..s {
            yb[i] = ya[i] + fs[i] * db[i];
        }
        let (ka, kb) = st_out.k2.step_mut(k);
        for i in 0..s {
            let inc = dy[i / n] - st.h[i] * dt;
            let e = (st.h[i] * dy[i / n] - 0.5 * st.h[i] * st.h[i] * dt).exp();
            let g1 = inc * fh1[i];
            let g2 = inc * fh[i] - 0.5 * fh1[i] * fh1[i] * dt;
            let cross = k1v[i] * (st.hx[i] * y1v[i] + st.dh[i]) * inc;
            kb[i] = e * (ka[i] + cross + l[i] * (g2 + 0.5 * g1 * g1));
        }
        check(st_out.y2.at(k + 1), "Y2", n, k + 1)?;
        check(st_out.k2.at(k + 1), "K2", n, k + 1)?;
        let v = v2_field(coeffs, forward, plan, k + 1, &st_out)?;
        st_out.v2.at_mut(k + 1).copy_from_slice(&v);
    }
    st_out.has_second = true;
    Ok(st_out)
}

/// `V^2 = theta(Y^2, K^2) + E[K^1 Y^1]/E[L] - (E[K^1]/E[L]) theta(Y^1, K^1)`,
/// or `phi_x Y^2` in the state-functional mode.
fn v2_field(
    coeffs: &dyn CoefficientSet,
    fwd: &ForwardState,
    plan: &NoisePlan,
    k: usize,
    var: &VariationState,
) -> Result<Vec<f64>> {
    let base = v_field(coeffs, fwd, plan, k, var.y2.at(k), var.k2.at(k))?;
    if fwd.mode == Mode::StateFunctional {
        return Ok(base);
    }
    let n = fwd.n_inner;
    let (l, y1, k1, v1) = (fwd.l.at(k), var.y1.at(k), var.k1.at(k), var.v1.at(k));
    let mut out = base;
    for j in 0..fwd.m_outer {
        let r = j * n..(j + 1) * n;
        let el: f64 = l[r.clone()].iter().sum();
        let ek: f64 = k1[r.clone()].iter().sum();
        let eky: f64 = r.clone().map(|i| k1[i] * y1[i]).sum();
        let add = eky / el - ek / el * v1[j * n];
        out[r].iter_mut().for_each(|v| *v += add);
    }
    Ok(out)
}

/// Quadratic source terms of the second-order system at node `k` for given
/// first-order values: `(dB^1 coefficient, dY coefficient)` per sample.
pub fn second_order_quadratic_sources(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    alt_controls: &Field,
    k: usize,
    y1: &[f64],
    k1: &[f64],
    v1: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let st = build_step(coeffs, forward, alt_controls, false, k, true, 1.0);
    quadratic(&st, forward.l.at(k), forward.u.at(k), y1, k1, v1)
}

/// A spike location and alternative control swept over several widths.
#[derive(Debug, Clone)]
pub struct SpikeFamily {
    pub t0: f64,
    pub alt_policy: ControlPolicy,
    /// Strictly decreasing widths.
    pub eps: Vec<f64>,
}

/// Residual sizes at one spike width, each as `[X, L, U]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorPoint {
    pub eps: f64,
    /// Window length seen by the grid.
    pub eff_eps: f64,
    /// `RMS sup_k |Z^eps - Z|`.
    pub e0: [f64; 3],
    /// `RMS sup_k |Z^eps - Z - Z^1|`.
    pub e1: [f64; 3],
    /// `RMS sup_k |Z^eps - Z - Z^1 - Z^2|`.
    pub e2: [f64; 3],
    /// `max_k |mean(Y^1_k) + mean(K^1_k / L_k)|`.
    pub smallness: f64,
    /// `RMS sup_k |(U^eps - U - V^1 - V^2) - theta(X residual, L residual)|`.
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    pub points: Vec<TaylorPoint>,
    /// Log-log slopes against `eff_eps`, each `[X, L, U]`.
    pub slope_e0: [f64; 3],
    pub slope_e1: [f64; 3],
    pub slope_e2: [f64; 3],
}

pub const QUANTITIES: [&str; 3] = ["X", "L", "U"];

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn rms_sup(nodes: usize, width: usize, res: impl Fn(usize, usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for s in 0..width {
        let sup = (0..nodes).map(|k| res(k, s).abs()).fold(0.0, f64::max);
        acc += sup * sup;
    }
    (acc / width as f64).sqrt()
}

/// Runs the perturbed system for every width with common noise and fits the
/// residual orders.
pub fn taylor_orders(
    coeffs: &dyn CoefficientSet,
    control: &ControlPolicy,
    family: &SpikeFamily,
    plan: &NoisePlan,
    picard: &PicardOptions,
) -> Result<TaylorReport> {
    let grid = plan.grid;
    if family.eps.len() < 4 {
        return Err(config("mfvariation", "the eps ladder needs at least 4 points"));
    }
    if family.eps.windows(2).any(|w| !(w[1] < w[0])) || family.eps.iter().any(|e| !(*e > 0.0)) {
        return Err(config(
            "mfvariation",
            "the eps ladder must be positive and strictly decreasing",
        ));
    }
    let base = picard_forward(coeffs, control, plan, picard)?;
    let nodes = grid.steps() + 1;
    let s = plan.samples();
    let n = plan.n_inner;
    let mut points = Vec::with_capacity(family.eps.len());
    for &eps in &family.eps {
        let spike = SpikeSpec::new(family.t0, eps, family.alt_policy.clone());
        spike.validate(grid.horizon())?;
        let eff_eps = spike.effective_eps(&grid);
        if eff_eps == 0.0 {
            return Err(config("mfvariation", format!("eps = {eps} covers no grid node")));
        }
        let pert = picard_forward(coeffs, &spike_control(control, &spike), plan, picard)?;
        let first = solve_first_variation(coeffs, &base, control, &spike, plan)?;
        let var = solve_second_variation(coeffs, &base, control, &spike, plan, first)?;
        let dx = |k: usize, i: usize| pert.x.get(k, i) - base.x.get(k, i);
        let dl = |k: usize, i: usize| pert.l.get(k, i) - base.l.get(k, i);
        let du = |k: usize, i: usize| pert.u.get(k, i) - base.u.get(k, i);
        let e0 = [rms_sup(nodes, s, dx), rms_sup(nodes, s, dl), rms_sup(nodes, s, du)];
        let e1 = [
            rms_sup(nodes, s, |k, i| dx(k, i) - var.y1.get(k, i)),
            rms_sup(nodes, s, |k, i| dl(k, i) - var.k1.get(k, i)),
            rms_sup(nodes, s, |k, i| du(k, i) - var.v1.get(k, i)),
        ];
        let rx = |k: usize, i: usize| dx(k, i) - var.y1.get(k, i) - var.y2.get(k, i);
        let rl = |k: usize, i: usize| dl(k, i) - var.k1.get(k, i) - var.k2.get(k, i);
        let ru = |k: usize, i: usize| du(k, i) - var.v1.get(k, i) - var.v2.get(k, i);
        let e2 = [rms_sup(nodes, s, rx), rms_sup(nodes, s, rl), rms_sup(nodes, s, ru)];
        let mut smallness = 0.0f64;
        for k in 0..nodes {
            let (y1, k1, l) = (var.y1.at(k), var.k1.at(k), base.l.at(k));
            let m: f64 = (0..s).map(|i| y1[i] + k1[i] / l[i]).sum::<f64>() / s as f64;
            smallness = smallness.max(m.abs());
        }
        let composite = if base.mode == Mode::ConditionalLaw {
            let mut theta = Field::zeros(nodes, plan.m_outer);
            for k in 0..nodes {
                let zx: Vec<f64> = (0..s).map(|i| rx(k, i)).collect();
                let zl: Vec<f64> = (0..s).map(|i| rl(k, i)).collect();
                for j in 0..plan.m_outer {
                    let r = j * n..(j + 1) * n;
                    let th = theta_path(
                        &zx[r.clone()],
                        &zl[r.clone()],
                        &base.x.at(k)[r.clone()],
                        &base.l.at(k)[r],
                    )?;
                    theta.set(k, j, th);
                }
            }
            rms_sup(nodes, plan.m_outer, |k, j| ru(k, j * n) - theta.get(k, j))
        } else {
            0.0
        };
        points.push(TaylorPoint {
            eps,
            eff_eps,
            e0,
            e1,
            e2,
            smallness,
            composite,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.eff_eps).collect();
    let slope = |f: &dyn Fn(&TaylorPoint) -> [f64; 3]| {
        let mut out = [0.0; 3];
        for (q, o) in out.iter_mut().enumerate() {
            let ys: Vec<f64> = points.iter().map(|p| f(p)[q]).collect();
            *o = loglog_slope(&xs, &ys);
        }
        out
    };
    Ok(TaylorReport {
        slope_e0: slope(&|p| p.e0),
        slope_e1: slope(&|p| p.e1),
        slope_e2: slope(&|p| p.e2),
        points,
    })
}
