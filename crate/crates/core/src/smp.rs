//! Maximum-principle verdict: Hamiltonian gaps with the second-order
//! corrections `P^1`, `M` and `R`, and a brute-force oracle for the optimal
//! control over block policies.

use serde::{Deserialize, Serialize};

use crate::adjoint::{terminal_profile, AdjointState, MeasureTerms};
use crate::coeffs::{Coef, CoefficientSet, MeasureView, Mode};
use crate::control::ControlPolicy;
use crate::error::{config, MfError, Result};
use crate::field::Field;
use crate::forward::{picard_forward, ForwardState, PicardOptions};
use crate::noise::NoisePlan;
use crate::regression::{Design, RIDGE};

/// `H = sigma q1 + h l q2 - f` at control value `v`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(
    t: f64,
    x: f64,
    l: f64,
    mu: &MeasureView,
    v: f64,
    q1: f64,
    q2: f64,
    coeffs: &dyn CoefficientSet,
) -> f64 {
    coeffs.value(Coef::Sigma, t, x, mu, v) * q1 + coeffs.value(Coef::Obs, t, x, mu, v) * l * q2
        - coeffs.value(Coef::Running, t, x, mu, v)
}

/// `h(s, t) = sum_{s <= r < t} h_x (dY_r - h dt)` per sample.
pub fn h_window(
    forward: &ForwardState,
    coeffs: &dyn CoefficientSet,
    plan: &NoisePlan,
    s_index: usize,
    t_index: usize,
) -> Result<Vec<f64>> {
    if s_index > t_index || t_index > forward.grid.steps() {
        return Err(config("mfsmp", format!("bad window [{s_index}, {t_index}]")));
    }
    let c = running_h(forward, coeffs, plan);
    Ok((0..forward.samples())
        .map(|i| c.get(t_index, i) - c.get(s_index, i))
        .collect())
}

/// `C_k = h(0, t_k)` for every node.
fn running_h(fwd: &ForwardState, coeffs: &dyn CoefficientSet, plan: &NoisePlan) -> Field {
    let kk = fwd.grid.steps();
    let (s, n) = (fwd.samples(), fwd.n_inner);
    let dt = fwd.grid.dt();
    let mut c = Field::zeros(kk + 1, s);
    for k in 0..kk {
        let t = fwd.grid.t(k);
        let mu = fwd.view(k);
        let x = fwd.x.at(k);
        let dy = plan.dy_step(k);
        let (a, b) = c.step_mut(k);
        for i in 0..s {
            let u = fwd.control(i / n, k);
            let h = coeffs.value(Coef::Obs, t, x[i], &mu, u);
            let hx = coeffs.dx(Coef::Obs, t, x[i], &mu, u);
            b[i] = a[i] + hx * (dy[i / n] - h * dt);
        }
    }
    c
}

/// F^Y features of outer path `j` at node `k`: `{1, Y, Y^2, max Y}`.
fn y_features(plan: &NoisePlan, k: usize) -> Vec<Vec<f64>> {
    let rows: Vec<[f64; 3]> = (0..plan.m_outer)
        .map(|j| {
            let y = plan.y_path(j);
            let m = y[..=k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            [y[k], y[k] * y[k], m]
        })
        .collect();
    let mut cols = vec![vec![1.0; plan.m_outer]];
    for f in 0..3 {
        cols.push(rows.iter().map(|r| r[f]).collect());
    }
    cols
}

/// The correction processes per `(k, j)` after projection on F_t^Y, with
/// the unprojected values and the projection R^2.
#[derive(Debug, Clone)]
pub struct MrReport {
    pub m: Field,
    pub r: Field,
    pub m_raw: Field,
    pub r_raw: Field,
    pub m_r2: Vec<f64>,
    pub r_r2: Vec<f64>,
}

/// `M_t` and `R_t` for the conditional-law mode under the split assumption.
pub fn compute_mr(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    first_adjoint: &AdjointState,
    plan: &NoisePlan,
) -> Result<MrReport> {
    let fwd = forward;
    if fwd.mode != Mode::ConditionalLaw {
        return Err(MfError::UnsupportedMode {
            module: "mfsmp",
            msg: "M and R are defined for the conditional-law mode".into(),
        });
    }
    if !(coeffs.has_h3_split() && coeffs.sigma_x_is_zero()) {
        return Err(MfError::UnsupportedMode {
            module: "mfsmp",
            msg: "M and R need sigma free of x and the split h = h0 + phi h1".into(),
        });
    }
    if plan.grid != fwd.grid || plan.m_outer != fwd.m_outer || plan.n_inner != fwd.n_inner {
        return Err(config("mfsmp", "noise plan does not match the forward state"));
    }
    let adj = first_adjoint;
    let kk = fwd.grid.steps();
    let (m, n) = (fwd.m_outer, fwd.n_inner);
    let s = fwd.samples();
    let dt = fwd.grid.dt();
    let nf = n as f64;
    let c = running_h(fwd, coeffs, plan);

    // Per-node F^Y quantities: generator measure term, the x-derivative part,
    // the z-derivative term, all per outer path.
    let mut hmu = Field::zeros(kk + 1, m);
    let mut hx_part = Field::zeros(kk + 1, m);
    let mut zmu = Field::zeros(kk + 1, m);
    for k in 0..kk {
        let t = fwd.grid.t(k);
        let mu = fwd.view(k);
        let (x, l) = (fwd.x.at(k), fwd.l.at(k));
        let (q1, q2) = (adj.q1.at(k), adj.q2.at(k));
        let z = match MeasureTerms::build(coeffs, fwd, k, true) {
            Some(mt) => {
                let q2l: Vec<f64> = (0..s).map(|i| q2[i] * l[i]).collect();
                let tab = mt.total(q1, &q2l);
                (0..m).map(|j| mt.grid.interp(&tab, fwd.u_outer(j, k))).collect()
            }
            None => vec![0.0; m],
        };
        for j in 0..m {
            hmu.set(k, j, adj.h_mu.get(k, j * n));
            zmu.set(k, j, z[j]);
            let u = fwd.control(j, k);
            let mut acc = 0.0;
            for i in j * n..(j + 1) * n {
                let sx = coeffs.dx(Coef::Sigma, t, x[i], &mu, u);
                let hx = coeffs.dx(Coef::Obs, t, x[i], &mu, u);
                acc += sx * q1[i] / l[i] + hx * q2[i];
            }
            hx_part.set(k, j, acc / nf);
        }
    }
    let zphi: Vec<f64> = match terminal_profile(coeffs, fwd, true) {
        Some((grid, tab)) => (0..m).map(|j| grid.interp(&tab, fwd.u_outer(j, kk))).collect(),
        None => vec![0.0; m],
    };

    let mut m_raw = Field::zeros(kk + 1, m);
    let mut r_raw = Field::zeros(kk + 1, m);
    for j in 0..m {
        let r = j * n..(j + 1) * n;
        for t in 0..=kk {
            let ct = &c.at(t)[r.clone()];
            let phi_t: Vec<f64> = fwd.x.at(t)[r.clone()].iter().map(|&x| coeffs.phi_h(x)).collect();
            // E^Q[L_s h(t, s) | F^Y] and the blocks of R at node s.
            let node = |s: usize, d: &dyn Fn(usize) -> f64, z: f64| -> (f64, f64) {
                let (xs, ls, us) = (
                    &fwd.x.at(s)[r.clone()],
                    &fwd.l.at(s)[r.clone()],
                    &fwd.u.at(s)[r.clone()],
                );
                let cs = &c.at(s)[r.clone()];
                let lbar = fwd.lbar.get(s, j);
                let mut g = 0.0;
                let (mut a, mut b, mut cc) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    g += ls[i] * (cs[i] - ct[i]);
                    a += ls[i] * (xs[i] - us[i]) * phi_t[i];
                    b += d(j * n + i) * ls[i] * phi_t[i];
                    cc += ls[i] * phi_t[i];
                }
                let (g, a, b) = (g / nf, a / nf / lbar, b / nf);
                let c_term = d(j * n) * cc / nf;
                (g, a * (b - c_term) + 0.5 * a * a * z * lbar)
            };
            let dphi = |i: usize| adj.phi_mu[i];
            let (g_t, r_t) = node(kk, &dphi, zphi[j]);
            let mut mv = -adj.phi_mu[j * n] * g_t;
            let mut rv = -r_t;
            for sn in t..kk {
                let dh = |i: usize| adj.h_mu.get(sn, i);
                let (g, rr) = node(sn, &dh, zmu.get(sn, j));
                mv += (hmu.get(sn, j) + hx_part.get(sn, j)) * g * dt;
                rv += rr * dt;
            }
            m_raw.set(t, j, mv);
            r_raw.set(t, j, rv);
        }
    }

    let mut mf = Field::zeros(kk + 1, m);
    let mut rf = Field::zeros(kk + 1, m);
    let mut m_r2 = vec![0.0; kk + 1];
    let mut r_r2 = vec![0.0; kk + 1];
    for t in 0..=kk {
        let design = Design::new(y_features(plan, t), RIDGE)?;
        let fm = design.fit(m_raw.at(t))?;
        let fr = design.fit(r_raw.at(t))?;
        mf.at_mut(t).copy_from_slice(&fm.fitted);
        rf.at_mut(t).copy_from_slice(&fr.fitted);
        m_r2[t] = fm.r2;
        r_r2[t] = fr.r2;
    }
    Ok(MrReport {
        m: mf,
        r: rf,
        m_raw,
        r_raw,
        m_r2,
        r_r2,
    })
}

/// Hamiltonian-gap table and its verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmpReport {
    pub mode: Mode,
    pub candidates: Vec<f64>,
    /// P-weighted mean over outer paths, `[v][k]`.
    pub gap: Vec<Vec<f64>>,
    /// Spread over outer paths combined with the regression error of `q`.
    pub gap_stderr: Vec<Vec<f64>>,
    /// Largest per-path gap, `[v][k]`.
    pub gap_max: Vec<Vec<f64>>,
    /// `M[j][k]`, `R[j][k]`; zero in the state-functional mode.
    pub m: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// `L / E^Q[L | F^Y]` and `1 / E^Q[L | F^Y]` at every node, `[k][sample]`.
    #[serde(skip)]
    pub gamma1: Option<Field>,
    #[serde(skip)]
    pub gamma: Option<Field>,
    /// Max over `(v, k)` of `gap`.
    pub verdict: f64,
    /// Standard error of the gap that attains the verdict.
    pub verdict_stderr: f64,
    pub verdict_at: (usize, usize),
}

impl SmpReport {
    /// Number of `(v, k)` with `gap > base + z stderr`.
    pub fn violations(&self, base: f64, z: f64) -> usize {
        let mut count = 0;
        for (g, e) in self.gap.iter().zip(&self.gap_stderr) {
            count += g.iter().zip(e).filter(|(g, e)| **g > base + z * **e).count();
        }
        count
    }

    /// Largest `gap - (base + z stderr)` over `(v, k)`.
    pub fn max_excess(&self, base: f64, z: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (g, e) in self.gap.iter().zip(&self.gap_stderr) {
            for (g, e) in g.iter().zip(e) {
                worst = worst.max(g - base - z * e);
            }
        }
        worst
    }
}

/// Scans every node and candidate. The conditional-law mode adds the `M` and
/// `R` corrections; the state-functional mode uses its own second adjoint
/// and no corrections.
pub fn smp_scan(
    coeffs: &dyn CoefficientSet,
    forward: &ForwardState,
    adjoint: &AdjointState,
    plan: &NoisePlan,
    candidates: &[f64],
) -> Result<SmpReport> {
    let fwd = forward;
    if !adjoint.has_second {
        return Err(config("mfsmp", "the scan needs the second adjoint"));
    }
    if adjoint.mode != fwd.mode || adjoint.p1.width() != fwd.samples() {
        return Err(config("mfsmp", "adjoint and forward state come from different runs"));
    }
    if candidates.is_empty() {
        return Err(config("mfsmp", "no candidate controls"));
    }
    let kk = fwd.grid.steps();
    let (m, n) = (fwd.m_outer, fwd.n_inner);
    let mr = match fwd.mode {
        Mode::ConditionalLaw => Some(compute_mr(coeffs, fwd, adjoint, plan)?),
        Mode::StateFunctional => None,
    };
    let nv = candidates.len();
    let mut gap = vec![vec![0.0; kk]; nv];
    let mut gap_se = vec![vec![0.0; kk]; nv];
    let mut gap_max = vec![vec![0.0; kk]; nv];
    for k in 0..kk {
        let t = fwd.grid.t(k);
        let mu = fwd.view(k);
        let (x, l) = (fwd.x.at(k), fwd.l.at(k));
        let lb = fwd.lbar.at(k);
        let wsum: f64 = lb.iter().sum();
        let (db, dy) = (plan.db1_step(k), plan.dy_step(k));
        let dt = fwd.grid.dt();
        // Residuals of the regression targets behind q1 and q2.
        let r1: Vec<f64> = (0..fwd.samples())
            .map(|i| adjoint.p1.get(k + 1, i) * db[i] / dt - adjoint.q1.get(k, i))
            .collect();
        let r2: Vec<f64> = (0..fwd.samples())
            .map(|i| adjoint.p2.get(k + 1, i) * dy[i / n] / dt - adjoint.q2.get(k, i))
            .collect();
        for (vi, &v) in candidates.iter().enumerate() {
            let mut per = vec![0.0; m];
            let mut inner_var = 0.0;
            for (j, g) in per.iter_mut().enumerate() {
                let u = fwd.control(j, k);
                let mut acc = 0.0;
                let mut ds2 = 0.0;
                let w = lb[j] / (wsum * n as f64);
                for i in j * n..(j + 1) * n {
                    let (q1, q2) = (adjoint.q1.get(k, i), adjoint.q2.get(k, i));
                    let dham = hamiltonian(t, x[i], l[i], &mu, v, q1, q2, coeffs)
                        - hamiltonian(t, x[i], l[i], &mu, u, q1, q2, coeffs);
                    let ds = coeffs.value(Coef::Sigma, t, x[i], &mu, v) - coeffs.value(Coef::Sigma, t, x[i], &mu, u);
                    let dh = coeffs.value(Coef::Obs, t, x[i], &mu, v) - coeffs.value(Coef::Obs, t, x[i], &mu, u);
                    acc += dham + 0.5 * adjoint.big_p1.get(k, i) * ds * ds;
                    ds2 += ds * ds;
                    inner_var += (w * (ds * r1[i] + dh * l[i] * r2[i])).powi(2);
                }
                *g = acc / n as f64;
                if let Some(mr) = &mr {
                    let dh1 = coeffs.h1(t, &mu, v) - coeffs.h1(t, &mu, u);
                    *g += mr.m.get(k, j) * ds2 / n as f64 + mr.r.get(k, j) * dh1 * dh1;
                }
            }
            let mean: f64 = per.iter().zip(lb).map(|(g, w)| g * w).sum::<f64>() / wsum;
            let var: f64 = per
                .iter()
                .zip(lb)
                .map(|(g, w)| (w / wsum).powi(2) * (g - mean).powi(2))
                .sum();
            gap[vi][k] = mean;
            gap_se[vi][k] = (var + inner_var).sqrt();
            gap_max[vi][k] = per.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let mut verdict = f64::NEG_INFINITY;
    let mut at = (0, 0);
    for (vi, row) in gap.iter().enumerate() {
        for (k, &g) in row.iter().enumerate() {
            if g > verdict {
                verdict = g;
                at = (vi, k);
            }
        }
    }
    let mut g1 = Field::zeros(kk + 1, fwd.samples());
    let mut g0 = Field::zeros(kk + 1, fwd.samples());
    for k in 0..=kk {
        for i in 0..fwd.samples() {
            let lbar = fwd.lbar.get(k, i / n);
            g1.set(k, i, fwd.l.get(k, i) / lbar);
            g0.set(k, i, 1.0 / lbar);
        }
    }
    let per_path = |f: Option<&Field>| -> Vec<Vec<f64>> {
        (0..m)
            .map(|j| (0..=kk).map(|k| f.map_or(0.0, |f| f.get(k, j))).collect())
            .collect()
    };
    Ok(SmpReport {
        mode: fwd.mode,
        candidates: candidates.to_vec(),
        m: per_path(mr.as_ref().map(|r| &r.m)),
        r: per_path(mr.as_ref().map(|r| &r.r)),
        gap_stderr: gap_se.clone(),
        verdict_stderr: gap_se[at.0][at.1],
        gap,
        gap_max,
        gamma1: Some(g1),
        gamma: Some(g0),
        verdict,
        verdict_at: at,
    })
}

/// Exhaustive search over constant-per-block policies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BruteForce {
    /// Every policy in lexicographic order of candidate indices.
    pub policies: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub stderr: Vec<f64>,
    pub best: usize,
}

impl BruteForce {
    pub fn best_policy(&self) -> &[f64] {
        &self.policies[self.best]
    }

    pub fn best_cost(&self) -> f64 {
        self.costs[self.best]
    }
}

pub const MAX_POLICIES: usize = 4096;

/// Evaluates `J` for all `|u_set|^blocks` block policies on common noise and
/// returns the argmin, earliest policy first on ties.
pub fn brute_force_control(
    coeffs: &dyn CoefficientSet,
    plan: &NoisePlan,
    u_set: &[f64],
    blocks: usize,
    picard: &PicardOptions,
) -> Result<BruteForce> {
    if u_set.is_empty() || blocks == 0 {
        return Err(config("mfsmp", "need a non-empty control set and at least one block"));
    }
    let total = (u_set.len() as u128).checked_pow(blocks as u32).unwrap_or(u128::MAX);
    if total > MAX_POLICIES as u128 {
        return Err(config(
            "mfsmp",
            format!("{} policies exceed the cap of {MAX_POLICIES}", total),
        ));
    }
    let horizon = plan.grid.horizon();
    let mut policies = Vec::with_capacity(total as usize);
    let mut costs = Vec::with_capacity(total as usize);
    let mut stderr = Vec::with_capacity(total as usize);
    let mut best = 0;
    for idx in 0..total as usize {
        let mut rest = idx;
        let mut values = vec![0.0; blocks];
        for b in (0..blocks).rev() {
            values[b] = u_set[rest % u_set.len()];
            rest /= u_set.len();
        }
        let policy = ControlPolicy::blocks(values.clone(), horizon, u_set.to_vec());
        let fwd = picard_forward(coeffs, &policy, plan, picard)?;
        if fwd.cost < costs.get(best).copied().unwrap_or(f64::INFINITY) {
            best = idx;
        }
        policies.push(values);
        costs.push(fwd.cost);
        stderr.push(fwd.cost_stderr);
    }
    Ok(BruteForce {
        policies,
        costs,
        stderr,
        best,
    })
}
