//! Quadrature in the measure variable `y`.
//!
//! Lions-derivative cross terms such as `E~[int_0^{U~} sigma_mu(t, y) dy K~]`
//! are double sums over the ensemble. Sampling `y -> sigma_mu(t, x, mu, u; y)`
//! on a fixed grid and replacing each atom by its hat-function weights turns
//! the double sum into `O(S G)` work.

use crate::coeffs::{Coef, CoefficientSet, MeasureView};

pub const GRID_POINTS: usize = 33;

/// Chebyshev-Lobatto nodes on `[min(0, lo), max(0, hi)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct YGrid {
    nodes: Vec<f64>,
}

impl YGrid {
    pub fn spanning(values: &[f64]) -> Self {
        let lo = values.iter().copied().fold(0.0f64, f64::min);
        let hi = values.iter().copied().fold(0.0f64, f64::max);
        let (lo, hi) = if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        };
        let g = GRID_POINTS - 1;
        let mut nodes: Vec<f64> = (0..=g)
            .map(|i| 0.5 * (lo + hi) - 0.5 * (hi - lo) * (std::f64::consts::PI * i as f64 / g as f64).cos())
            .collect();
        nodes[0] = lo;
        nodes[g] = hi;
        Self { nodes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Interval index `g` and weight on node `g + 1` for linear interpolation.
    pub fn locate(&self, y: f64) -> (usize, f64) {
        let n = &self.nodes;
        let last = n.len() - 2;
        let g = match n.partition_point(|&v| v <= y) {
            0 => 0,
            p => (p - 1).min(last),
        };
        let w = ((y - n[g]) / (n[g + 1] - n[g])).clamp(0.0, 1.0);
        (g, w)
    }

    pub fn interp(&self, table: &[f64], y: f64) -> f64 {
        let (g, w) = self.locate(y);
        (1.0 - w) * table[g] + w * table[g + 1]
    }

    /// `c_g = sum_s lambda_g(at_s) weight_s / count`.
    pub fn spread(&self, at: &[f64], weight: &[f64], count: f64) -> Vec<f64> {
        let mut c = vec![0.0; self.len()];
        for (&y, &m) in at.iter().zip(weight) {
            let (g, w) = self.locate(y);
            c[g] += (1.0 - w) * m;
            c[g + 1] += w * m;
        }
        c.iter_mut().for_each(|v| *v /= count);
        c
    }

    /// `A(y_g) = int_0^{y_g} g(y) dy` from node values, trapezoid rule.
    pub fn antiderivative(&self, values: &[f64]) -> Vec<f64> {
        let n = &self.nodes;
        let mut a = vec![0.0; n.len()];
        for g in 1..n.len() {
            a[g] = a[g - 1] + 0.5 * (values[g] + values[g - 1]) * (n[g] - n[g - 1]);
        }
        let (g, w) = self.locate(0.0);
        let at0 = a[g] + w * (n[g + 1] - n[g]) * (values[g] + 0.5 * w * (values[g + 1] - values[g]));
        a.iter_mut().for_each(|v| *v -= at0);
        a
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which Lions derivative to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    Mu(Coef),
    ZMu(Coef),
    TerminalMu,
    TerminalZMu,
}

/// `y -> d(t, x_s, mu, u_s; y)` on the grid for every sample, stored once per
/// distinct control value when the derivative does not read `x`.
#[derive(Debug, Clone)]
pub struct Profiles {
    table: Vec<Vec<f64>>,
    index: Vec<usize>,
}

impl Profiles {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        coeffs: &dyn CoefficientSet,
        d: Deriv,
        grid: &YGrid,
        t: f64,
        x: &[f64],
        u: impl Fn(usize) -> f64,
        mu: &MeasureView,
    ) -> Self {
        let eval = |xv: f64, uv: f64| -> Vec<f64> {
            grid.nodes()
                .iter()
                .map(|&y| match d {
                    Deriv::Mu(c) => coeffs.dmu(c, t, xv, mu, uv, y),
                    Deriv::ZMu(c) => coeffs.dzmu(c, t, xv, mu, uv, y),
                    Deriv::TerminalMu => coeffs.terminal_mu(xv, mu, y),
                    Deriv::TerminalZMu => coeffs.terminal_zmu(xv, mu, y),
                })
                .collect()
        };
        if coeffs.measure_derivatives_state_free() {
            let mut keys: Vec<u64> = Vec::new();
            let mut table = Vec::new();
            let index = (0..x.len())
                .map(|s| {
                    let uv = u(s);
                    let key = uv.to_bits();
                    match keys.iter().position(|&k| k == key) {
                        Some(p) => p,
                        None => {
                            keys.push(key);
                            table.push(eval(x[s], uv));
                            table.len() - 1
                        }
                    }
                })
                .collect();
            Self { table, index }
        } else {
            let table = (0..x.len()).map(|s| eval(x[s], u(s))).collect();
            Self {
                table,
                index: (0..x.len()).collect(),
            }
        }
    }

    pub fn of(&self, s: usize) -> &[f64] {
        &self.table[self.index[s]]
    }

    /// `sum_g d_s(y_g) c_g` for every sample.
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        let rows: Vec<f64> = self.table.iter().map(|r| dot(r, c)).collect();
        self.index.iter().map(|&i| rows[i]).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.table.iter().all(|r| r.iter().all(|&v| v == 0.0))
    }

    /// Replaces every profile by its antiderivative from 0.
    pub fn integrated(&self, grid: &YGrid) -> Self {
        Self {
            table: self.table.iter().map(|r| grid.antiderivative(r)).collect(),
            index: self.index.clone(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            table: self.table.iter().map(|r| r.iter().map(|v| a * v).collect()).collect(),
            index: self.index.clone(),
        }
    }

    pub fn minus(&self, other: &Self) -> Self {
        let n = self.index.len();
        let table = (0..n)
            .map(|s| self.of(s).iter().zip(other.of(s)).map(|(a, b)| a - b).collect())
            .collect();
        Self {
            table,
            index: (0..n).collect(),
        }
    }

    /// `(1/S) sum_s w_s d(x_s, u_s; y_g)` for every node.
    pub fn weighted_mean(&self, w: &[f64]) -> Vec<f64> {
        let g = self.table.first().map_or(0, Vec::len);
        let mut tot = vec![0.0; self.table.len()];
        for (s, &ws) in w.iter().enumerate() {
            tot[self.index[s]] += ws;
        }
        let mut out = vec![0.0; g];
        for (row, &m) in self.table.iter().zip(&tot) {
            for (o, d) in out.iter_mut().zip(row) {
                *o += d * m;
            }
        }
        out.iter_mut().for_each(|v| *v /= w.len() as f64);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_span_zero_and_values() {
        let g = YGrid::spanning(&[0.5, 2.0]);
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.nodes()[GRID_POINTS - 1], 2.0);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn antiderivative_of_linear_is_exact() {
        let g = YGrid::spanning(&[-1.0, 3.0]);
        let vals: Vec<f64> = g.nodes().iter().map(|&y| 2.0 * y + 1.0).collect();
        let a = g.antiderivative(&vals);
        for (&y, &ay) in g.nodes().iter().zip(&a) {
            assert!((ay - (y * y + y)).abs() < 1e-12);
        }
        let exact: Vec<f64> = g.nodes().iter().map(|&y| y * y + y).collect();
        assert!((g.interp(&a, 0.0) - g.interp(&exact, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn spread_reproduces_linear_functions() {
        let g = YGrid::spanning(&[-1.0, 2.0]);
        let at = [0.3, -0.7, 1.9];
        let w = [1.0, 2.0, 0.5];
        let c = g.spread(&at, &w, 3.0);
        let lin: Vec<f64> = g.nodes().iter().map(|&y| 3.0 * y - 1.0).collect();
        let direct: f64 = at.iter().zip(&w).map(|(y, m)| (3.0 * y - 1.0) * m).sum::<f64>() / 3.0;
        assert!((dot(&lin, &c) - direct).abs() < 1e-12);
    }
}
