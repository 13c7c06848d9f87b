//! Filter equations for the conditional mean `U_t = E^P[X_t | F_t^Y]`.

use crate::coeffs::{Coef, CoefficientSet, Mode};
use crate::control::ControlPolicy;
use crate::error::{MfError, Result};
use crate::field::Field;
use crate::forward::ForwardState;
use crate::noise::NoisePlan;

/// Euler scheme for the FKK equation
///
/// ```text
/// dU = (E^P[X h] - E^P[X] E^P[h]) (dY - E^P[h] dt)
/// ```
///
/// with the P-conditional moments taken as L-weighted inner averages of the
/// forward particles. Returns a `(K+1) x M_outer` field.
pub fn fkk_filter(
    coeffs: &dyn CoefficientSet,
    _control: &ControlPolicy,
    forward: &ForwardState,
    plan: &NoisePlan,
) -> Result<Field> {
    if coeffs.mode() != Mode::ConditionalLaw {
        return Err(MfError::UnsupportedMode {
            module: "mfforward",
            msg: "the FKK filter is defined for the conditional-law mode".into(),
        });
    }
    let grid = forward.grid;
    let (m, n) = (forward.m_outer, forward.n_inner);
    let dt = grid.dt();
    let mut out = Field::zeros(grid.steps() + 1, m);
    out.at_mut(0).fill(coeffs.x0());
    for k in 0..grid.steps() {
        let t = grid.t(k);
        let mu = forward.view(k);
        let xk = forward.x.at(k);
        let lk = forward.l.at(k);
        for j in 0..m {
            let u = forward.control(j, k);
            let r = j * n..(j + 1) * n;
            let h: Vec<f64> = xk[r.clone()]
                .iter()
                .map(|&x| coeffs.value(Coef::Obs, t, x, &mu, u))
                .collect();
            let (xs, ls) = (&xk[r.clone()], &lk[r]);
            let sl: f64 = ls.iter().sum();
            if sl / (n as f64) < 1e-300 {
                return Err(MfError::Underflow(sl / n as f64));
            }
            let ex = xs.iter().zip(ls).map(|(x, l)| x * l).sum::<f64>() / sl;
            let eh = h.iter().zip(ls).map(|(h, l)| h * l).sum::<f64>() / sl;
            // E^P[X h] - E^P[X] E^P[h], centred.
            let cov = (0..n).map(|i| ls[i] * (xs[i] - ex) * h[i]).sum::<f64>() / sl;
            let prev = out.get(k, j);
            let next = prev + cov * (plan.dy(j, k) - eh * dt);
            if !next.is_finite() {
                return Err(MfError::Blowup {
                    module: "mfforward",
                    quantity: "U_fkk",
                    j,
                    i: 0,
                    k: k + 1,
                });
            }
            out.set(k + 1, j, next);
        }
    }
    Ok(out)
}

/// Kalman-Bucy filter for `dX = dB^1`, `dY = X dt + dW`, `X_0 = x0` known:
/// `dm = P (dY - m dt)` with `P_t = tanh t` solving `P' = 1 - P^2`, `P_0 = 0`.
pub fn kalman_bucy(x0: f64, plan: &NoisePlan) -> Field {
    let grid = plan.grid;
    let dt = grid.dt();
    let mut out = Field::zeros(grid.steps() + 1, plan.m_outer);
    out.at_mut(0).fill(x0);
    for k in 0..grid.steps() {
        let p = grid.t(k).tanh();
        for j in 0..plan.m_outer {
            let m = out.get(k, j);
            out.set(k + 1, j, m + p * (plan.dy(j, k) - m * dt));
        }
    }
    out
}
