//! Weighted empirical measures on the real line.
//!
//! The conditional law `mu_t` is the P-law of the filtered state. Atoms are
//! stored sorted with explicit weights, which makes the 1-D Wasserstein-1
//! distance exact: it is the integral of `|F - G|` over the merged breakpoints
//! of the two distribution functions.

use serde::{Deserialize, Serialize};

use crate::error::{MfError, Result};

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
    weights: Vec<f64>,
    mean: f64,
}

impl EmpiricalMeasure {
    /// Builds a measure from atoms that are already sorted and weights that
    /// already sum to one.
    pub fn new(samples: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(MfError::InvalidMeasure("empty sample set".into()));
        }
        if samples.len() != weights.len() {
            return Err(MfError::InvalidMeasure(format!(
                "{} atoms but {} weights",
                samples.len(),
                weights.len()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(MfError::InvalidMeasure("non-finite atom".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(MfError::InvalidMeasure("negative or non-finite weight".into()));
        }
        if samples.windows(2).any(|w| w[0] > w[1]) {
            return Err(MfError::InvalidMeasure("atoms not sorted".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(MfError::InvalidMeasure(format!("weights sum to {total}")));
        }
        let mean = samples.iter().zip(&weights).map(|(s, w)| s * w).sum();
        Ok(Self { samples, weights, mean })
    }

    pub fn dirac(x: f64) -> Self {
        Self {
            samples: vec![x],
            weights: vec![1.0],
            mean: x,
        }
    }

    /// Equal-weight law of `values`.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        weighted_law(values, &vec![1.0; values.len()])
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `integral g d(mu)`.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.samples.iter().zip(&self.weights).map(|(s, w)| w * g(*s)).sum()
    }

    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }
}

/// Exact Wasserstein-1 distance between two weighted discrete measures on R.
pub fn wasserstein1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.is_empty() || nu.is_empty() {
        return Err(MfError::InvalidMeasure("empty sample set".into()));
    }
    let (a, wa) = (mu.samples(), mu.weights());
    let (b, wb) = (nu.samples(), nu.weights());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut prev: Option<f64> = None;
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            total += (fa - fb).abs() * (x - p);
        }
        while i < a.len() && a[i] == x {
            fa += wa[i];
            i += 1;
        }
        while j < b.len() && b[j] == x {
            fb += wb[j];
            j += 1;
        }
        prev = Some(x);
    }
    Ok(total)
}

/// Normalised, sorted law of `values` under `weights`. Zero-weight atoms are
/// dropped.
pub fn weighted_law(values: &[f64], weights: &[f64]) -> Result<EmpiricalMeasure> {
    if values.is_empty() {
        return Err(MfError::InvalidMeasure("empty sample set".into()));
    }
    if values.len() != weights.len() {
        return Err(MfError::InvalidMeasure(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MfError::InvalidMeasure("non-finite value".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(MfError::InvalidMeasure("negative or non-finite weight".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(MfError::DegenerateDensity);
    }
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| (*v, *w / total))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let samples: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mean = samples.iter().zip(&weights).map(|(s, w)| s * w).sum();
    Ok(EmpiricalMeasure { samples, weights, mean })
}

/// `mean(numerator * density) / mean(density)` for one observation path.
pub fn conditional_ratio(numerator: &[f64], density: &[f64]) -> Result<f64> {
    let n = density.len() as f64;
    let den: f64 = density.iter().sum();
    if !(den / n >= 1e-300) {
        return Err(MfError::Underflow(den / n));
    }
    // A degenerate conditional law is returned as is, not rounded through the ratio.
    if numerator.iter().all(|x| *x == numerator[0]) {
        return Ok(numerator[0]);
    }
    let num: f64 = numerator.iter().zip(density).map(|(x, l)| x * l).sum();
    Ok(num / den)
}

/// `theta(zeta, eta)` per observation path, with the F^Y-conditional means
/// taken over the `n_inner` particles of each path:
///
/// `E[L zeta + X eta] / E[L] - E[L X] E[eta] / E[L]^2`.
pub fn theta_functional(zeta: &[f64], eta: &[f64], x: &[f64], l: &[f64], n_inner: usize) -> Result<Vec<f64>> {
    let s = x.len();
    if n_inner == 0 || s % n_inner != 0 || zeta.len() != s || eta.len() != s || l.len() != s {
        return Err(MfError::InvalidMeasure("misaligned theta inputs".into()));
    }
    (0..s / n_inner)
        .map(|j| {
            let r = j * n_inner..(j + 1) * n_inner;
            theta_path(&zeta[r.clone()], &eta[r.clone()], &x[r.clone()], &l[r])
        })
        .collect()
}

pub(crate) fn theta_path(zeta: &[f64], eta: &[f64], x: &[f64], l: &[f64]) -> Result<f64> {
    let n = l.len() as f64;
    let (mut el, mut elz, mut elx, mut eeta) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..l.len() {
        el += l[i];
        elz += l[i] * zeta[i] + x[i] * eta[i];
        elx += l[i] * x[i];
        eeta += eta[i];
    }
    let (el, elz, elx, eeta) = (el / n, elz / n, elx / n, eeta / n);
    if !(el >= 1e-300) {
        return Err(MfError::Underflow(el));
    }
    Ok(elz / el - elx * eeta / (el * el))
}
