//! Pre-generated Brownian increments with one independent stream per
//! `(seed, role, j, i)`.
//!
//! Each stream is a ChaCha8 generator keyed by the seed and positioned on its
//! own stream id, so a value depends only on its index tuple and never on the
//! order or thread in which streams are filled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{config, Result};
use crate::grid::TimeGrid;

const ROLE_B1: u64 = 0;
const ROLE_Y: u64 = 1;

/// Increments of `(B^1, Y)` under the reference measure.
///
/// Storage is time-major: `dB1` at step `k` is a contiguous slice over the
/// samples `s = j * N + i`, `dY` at step `k` a slice over outer paths.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlan {
    pub seed: u64,
    pub m_outer: usize,
    pub n_inner: usize,
    pub grid: TimeGrid,
    db1: Vec<f64>,
    dy: Vec<f64>,
    y: Vec<f64>,
}

fn stream_id(role: u64, j: usize, i: usize) -> u64 {
    (role << 62) | ((j as u64) << 31) | i as u64
}

fn normals(seed: u64, id: u64, count: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect()
}

pub fn make_plan(seed: u64, m_outer: usize, n_inner: usize, grid: TimeGrid) -> Result<NoisePlan> {
    if m_outer == 0 || n_inner == 0 {
        return Err(config("mfnoise", "M_outer and N_inner must be positive"));
    }
    if m_outer >= 1 << 31 || n_inner >= 1 << 31 {
        return Err(config("mfnoise", "ensemble too large for stream indexing"));
    }
    let k = grid.steps();
    let sq = grid.dt().sqrt();
    let s = m_outer * n_inner;
    let b_streams: Vec<Vec<f64>> = (0..s)
        .into_par_iter()
        .map(|idx| normals(seed, stream_id(ROLE_B1, idx / n_inner, idx % n_inner), k, sq))
        .collect();
    let y_streams: Vec<Vec<f64>> = (0..m_outer)
        .into_par_iter()
        .map(|j| normals(seed, stream_id(ROLE_Y, j, 0), k, sq))
        .collect();
    let mut db1 = vec![0.0; k * s];
    for (idx, st) in b_streams.iter().enumerate() {
        for (kk, v) in st.iter().enumerate() {
            db1[kk * s + idx] = *v;
        }
    }
    let mut dy = vec![0.0; k * m_outer];
    for (j, st) in y_streams.iter().enumerate() {
        for (kk, v) in st.iter().enumerate() {
            dy[kk * m_outer + j] = *v;
        }
    }
    Ok(NoisePlan::from_parts(seed, m_outer, n_inner, grid, db1, dy))
}

impl NoisePlan {
    fn from_parts(seed: u64, m_outer: usize, n_inner: usize, grid: TimeGrid, db1: Vec<f64>, dy: Vec<f64>) -> Self {
        let k = grid.steps();
        let mut y = vec![0.0; m_outer * (k + 1)];
        for j in 0..m_outer {
            for kk in 0..k {
                y[j * (k + 1) + kk + 1] = y[j * (k + 1) + kk] + dy[kk * m_outer + j];
            }
        }
        Self {
            seed,
            m_outer,
            n_inner,
            grid,
            db1,
            dy,
            y,
        }
    }

    pub fn samples(&self) -> usize {
        self.m_outer * self.n_inner
    }

    pub fn db1(&self, j: usize, i: usize, k: usize) -> f64 {
        self.db1[k * self.samples() + j * self.n_inner + i]
    }

    pub fn dy(&self, j: usize, k: usize) -> f64 {
        self.dy[k * self.m_outer + j]
    }

    /// `dB1` at step `k` over all samples.
    pub fn db1_step(&self, k: usize) -> &[f64] {
        let s = self.samples();
        &self.db1[k * s..(k + 1) * s]
    }

    /// `dY` at step `k` over all outer paths.
    pub fn dy_step(&self, k: usize) -> &[f64] {
        &self.dy[k * self.m_outer..(k + 1) * self.m_outer]
    }

    /// `Y_0..Y_K` of outer path `j`.
    pub fn y_path(&self, j: usize) -> &[f64] {
        let k1 = self.grid.steps() + 1;
        &self.y[j * k1..(j + 1) * k1]
    }

    pub fn raw_db1(&self) -> &[f64] {
        &self.db1
    }

    pub fn raw_dy(&self) -> &[f64] {
        &self.dy
    }

    /// Sums blocks of `factor` consecutive increments: the same Brownian paths
    /// on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePlan> {
        let k = self.grid.steps();
        if factor == 0 || k % factor != 0 {
            return Err(config("mfnoise", format!("cannot coarsen {k} steps by {factor}")));
        }
        let kc = k / factor;
        let grid = TimeGrid::new(self.grid.horizon(), kc)?;
        let s = self.samples();
        let mut db1 = vec![0.0; kc * s];
        let mut dy = vec![0.0; kc * self.m_outer];
        for kk in 0..k {
            let c = kk / factor;
            for idx in 0..s {
                db1[c * s + idx] += self.db1[kk * s + idx];
            }
            for j in 0..self.m_outer {
                dy[c * self.m_outer + j] += self.dy[kk * self.m_outer + j];
            }
        }
        Ok(NoisePlan::from_parts(
            self.seed,
            self.m_outer,
            self.n_inner,
            grid,
            db1,
            dy,
        ))
    }

    /// Keeps the first `n` inner particles of every outer path.
    pub fn restrict_inner(&self, n: usize) -> Result<NoisePlan> {
        if n == 0 || n > self.n_inner {
            return Err(config(
                "mfnoise",
                format!("cannot keep {n} of {} particles", self.n_inner),
            ));
        }
        let k = self.grid.steps();
        let s_new = self.m_outer * n;
        let mut db1 = vec![0.0; k * s_new];
        for kk in 0..k {
            for j in 0..self.m_outer {
                for i in 0..n {
                    db1[kk * s_new + j * n + i] = self.db1(j, i, kk);
                }
            }
        }
        Ok(NoisePlan::from_parts(
            self.seed,
            self.m_outer,
            n,
            self.grid,
            db1,
            self.dy.clone(),
        ))
    }
}

/// Doubles `N_inner` by appending the sign-flipped `dB1` streams of every
/// outer path; `dY` is untouched.
pub fn antithetic_extend(plan: &NoisePlan) -> NoisePlan {
    let n = plan.n_inner;
    let n2 = 2 * n;
    let k = plan.grid.steps();
    let s2 = plan.m_outer * n2;
    let mut db1 = vec![0.0; k * s2];
    for kk in 0..k {
        for j in 0..plan.m_outer {
            for i in 0..n {
                let v = plan.db1(j, i, kk);
                db1[kk * s2 + j * n2 + i] = v;
                db1[kk * s2 + j * n2 + n + i] = -v;
            }
        }
    }
    NoisePlan::from_parts(plan.seed, plan.m_outer, n2, plan.grid, db1, plan.dy.clone())
}
