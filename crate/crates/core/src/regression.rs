//! Least-squares conditional expectations.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{config, MfError, Result};

pub const RIDGE: f64 = 1e-8;
const RANK_TOL: f64 = 1e-10;

/// A factored least-squares problem, reusable for many targets.
#[derive(Debug, Clone)]
pub struct Design {
    columns: Vec<Vec<f64>>,
    scale: Vec<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    ridge: bool,
}

/// Fitted values and diagnostics for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub fitted: Vec<f64>,
    pub coef: Vec<f64>,
    pub r2: f64,
    pub ridge: bool,
}

impl Design {
    /// `columns[f][s]` is feature `f` of sample `s`.
    pub fn new(columns: Vec<Vec<f64>>, ridge: f64) -> Result<Self> {
        let p = columns.len();
        if p == 0 {
            return Err(config("mfadjoint", "need at least one feature"));
        }
        let s = columns[0].len();
        if columns.iter().any(|c| c.len() != s) {
            return Err(config("mfadjoint", "feature columns differ in length"));
        }
        if s <= p {
            return Err(config("mfadjoint", format!("{s} samples for {p} features")));
        }
        let scale: Vec<f64> = columns
            .iter()
            .map(|c| {
                let rms = (c.iter().map(|v| v * v).sum::<f64>() / s as f64).sqrt();
                if rms > 0.0 && rms.is_finite() {
                    1.0 / rms
                } else {
                    1.0
                }
            })
            .collect();
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let v: f64 = columns[a].iter().zip(&columns[b]).map(|(x, y)| x * y).sum::<f64>() * scale[a] * scale[b]
                    / s as f64;
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(MfError::Regression("non-finite feature".into()));
        }
        let exact = Cholesky::new(gram.clone()).filter(|c| {
            let l = c.l_dirty();
            (0..p).all(|i| l[(i, i)] * l[(i, i)] > RANK_TOL * gram[(i, i)].max(f64::MIN_POSITIVE))
        });
        let (chol, used_ridge) = match exact {
            Some(c) => (c, false),
            None => {
                // The first constant column acts as the intercept and is not penalised.
                let intercept = columns.iter().position(|c| c.iter().all(|v| *v == c[0]) && c[0] != 0.0);
                let mut shifted = gram;
                for i in (0..p).filter(|i| Some(*i) != intercept) {
                    shifted[(i, i)] += ridge;
                }
                let c = Cholesky::new(shifted)
                    .ok_or_else(|| MfError::Regression("singular design even with ridge".into()))?;
                (c, true)
            }
        };
        Ok(Self {
            columns,
            scale,
            chol,
            ridge: used_ridge,
        })
    }

    /// True when the Gram matrix needed the ridge shift.
    pub fn ridge(&self) -> bool {
        self.ridge
    }

    pub fn samples(&self) -> usize {
        self.columns[0].len()
    }

    pub fn fit(&self, target: &[f64]) -> Result<Fit> {
        let s = self.samples();
        if target.len() != s {
            return Err(config("mfadjoint", "target length differs from the design"));
        }
        let p = self.columns.len();
        let rhs = DVector::from_iterator(
            p,
            self.columns
                .iter()
                .zip(&self.scale)
                .map(|(c, sc)| c.iter().zip(target).map(|(x, y)| x * y).sum::<f64>() * sc / s as f64),
        );
        let beta = self.chol.solve(&rhs);
        let coef: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, sc)| b * sc).collect();
        let mut fitted = vec![0.0; s];
        for (c, b) in self.columns.iter().zip(&coef) {
            for (f, x) in fitted.iter_mut().zip(c) {
                *f += b * x;
            }
        }
        if fitted.iter().any(|v| !v.is_finite()) {
            return Err(MfError::Regression("non-finite fitted values".into()));
        }
        let mean = target.iter().sum::<f64>() / s as f64;
        let tot: f64 = target.iter().map(|y| (y - mean) * (y - mean)).sum();
        let res: f64 = target.iter().zip(&fitted).map(|(y, f)| (y - f) * (y - f)).sum();
        let r2 = if tot > 0.0 { 1.0 - res / tot } else { 1.0 };
        Ok(Fit {
            fitted,
            coef,
            r2,
            ridge: self.ridge,
        })
    }
}

/// Projects `target` on the span of `features` (per-sample feature vectors).
pub fn regress_conditional(target: &[f64], features: &[Vec<f64>]) -> Result<Fit> {
    let s = features.len();
    let p = features.first().map_or(0, Vec::len);
    if s <= p {
        return Err(config("mfadjoint", format!("{s} samples for {p} features")));
    }
    let columns = (0..p).map(|f| features.iter().map(|row| row[f]).collect()).collect();
    Design::new(columns, RIDGE)?.fit(target)
}
