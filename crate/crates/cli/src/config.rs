//! Experiment configuration: TOML-style `key = value` lines under `[section]`
//! headers. Every key except `problem.preset` has a default.

use anyhow::{bail, Context, Result};
use mfsmp_core::presets::{preset, ParamCoefficients, PRESET_NAMES};
use mfsmp_core::{ControlPolicy, Mode, PicardOptions, TimeGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub ensemble: Ensemble,
    #[serde(default)]
    pub spike: Spike,
    #[serde(default)]
    pub control: Control,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub preset: String,
    #[serde(default = "default_mode")]
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "K")]
    pub steps: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ensemble {
    #[serde(rename = "M_outer")]
    pub m_outer: i64,
    #[serde(rename = "N_inner")]
    pub n_inner: i64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Spike {
    pub t0: f64,
    /// The constant alternative control `v`.
    pub alt: f64,
    pub eps_ladder: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Control {
    pub u_set: Vec<f64>,
    pub blocks: i64,
    /// Block values of the base control. Without it the scan runs at the
    /// brute-force optimum and the other pipelines alternate the last and
    /// first points of `u_set`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub picard_tol: f64,
    pub picard_max_iter: i64,
    pub tol_smp: f64,
    pub ridge: f64,
    /// Standard errors allowed on statistical checks.
    pub z: f64,
    pub duality_eps: f64,
    pub duality_rel: f64,
    pub filter_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: String,
}

fn default_mode() -> String {
    "conditional-law".into()
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 64,
        }
    }
}

impl Default for Ensemble {
    fn default() -> Self {
        Self {
            m_outer: 64,
            n_inner: 128,
            seed: 7,
        }
    }
}

impl Default for Spike {
    fn default() -> Self {
        Self {
            t0: 0.25,
            alt: 1.0,
            eps_ladder: vec![0.2, 0.1, 0.05, 0.025],
        }
    }
}

impl Default for Control {
    fn default() -> Self {
        Self {
            u_set: vec![0.0, 1.0],
            blocks: 4,
            policy: None,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            picard_tol: 1e-10,
            picard_max_iter: 100,
            tol_smp: 0.02,
            ridge: 1e-8,
            z: 3.0,
            duality_eps: 0.05,
            duality_rel: 0.1,
            filter_sup: 0.1,
        }
    }
}

impl Default for Output {
    fn default() -> Self {
        Self {
            dir: "mfsmp-out".into(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).context("invalid config")?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if preset(&self.problem.preset, 1.0).is_none() {
            bail!(
                "problem.preset: unknown preset {:?}, expected one of {PRESET_NAMES:?}",
                self.problem.preset
            );
        }
        self.mode()?;
        positive("grid.T", self.grid.horizon)?;
        for (key, v) in [
            ("grid.K", self.grid.steps),
            ("ensemble.M_outer", self.ensemble.m_outer),
            ("ensemble.N_inner", self.ensemble.n_inner),
            ("control.blocks", self.control.blocks),
            ("tolerances.picard_max_iter", self.tolerances.picard_max_iter),
        ] {
            if v <= 0 {
                bail!("{key} must be positive, got {v}");
            }
        }
        let t = &self.tolerances;
        for (key, v) in [
            ("tolerances.picard_tol", t.picard_tol),
            ("tolerances.ridge", t.ridge),
            ("tolerances.z", t.z),
        ] {
            positive(key, v)?;
        }
        for (key, v) in [
            ("tolerances.tol_smp", t.tol_smp),
            ("tolerances.duality_rel", t.duality_rel),
            ("tolerances.filter_sup", t.filter_sup),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!("{key} must be a nonnegative number, got {v}");
            }
        }
        let ladder = &self.spike.eps_ladder;
        if ladder.is_empty() {
            bail!("spike.eps_ladder must not be empty");
        }
        if ladder.iter().any(|e| !(*e > 0.0)) || ladder.windows(2).any(|w| w[1] >= w[0]) {
            bail!("spike.eps_ladder must be positive and strictly decreasing, got {ladder:?}");
        }
        if !(self.spike.t0 >= 0.0 && self.spike.t0 + ladder[0] <= self.grid.horizon) {
            bail!("spike.t0 + eps must lie in [0, T] for every eps on the ladder");
        }
        let u = &self.control.u_set;
        if u.is_empty() || u.iter().any(|v| !v.is_finite()) {
            bail!("control.u_set must hold at least one finite point");
        }
        if !u.contains(&self.spike.alt) {
            bail!("spike.alt = {} is not in control.u_set", self.spike.alt);
        }
        if let Some(p) = &self.control.policy {
            if p.len() as i64 != self.control.blocks {
                bail!(
                    "control.policy has {} values for {} blocks",
                    p.len(),
                    self.control.blocks
                );
            }
            if let Some(v) = p.iter().find(|v| !u.contains(v)) {
                bail!("control.policy value {v} is not in control.u_set");
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> Result<Mode> {
        match self.problem.mode.as_str() {
            "conditional-law" => Ok(Mode::ConditionalLaw),
            "state-functional" => Ok(Mode::StateFunctional),
            other => bail!("problem.mode must be conditional-law or state-functional, got {other:?}"),
        }
    }

    pub fn coefficients(&self) -> Result<ParamCoefficients> {
        let c = preset(&self.problem.preset, self.grid.horizon).expect("validated preset");
        Ok(c.with_mode(self.mode()?))
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.grid.horizon, self.grid.steps as usize)?)
    }

    pub fn picard(&self) -> PicardOptions {
        PicardOptions {
            tol: self.tolerances.picard_tol,
            max_iter: self.tolerances.picard_max_iter as usize,
            ..Default::default()
        }
    }

    /// The configured base policy, or last/first points of `u_set` alternating.
    pub fn base_policy(&self) -> Vec<f64> {
        self.control.policy.clone().unwrap_or_else(|| {
            let u = &self.control.u_set;
            (0..self.control.blocks)
                .map(|b| if b % 2 == 0 { u[u.len() - 1] } else { u[0] })
                .collect()
        })
    }

    pub fn blocks(&self, policy: &[f64]) -> ControlPolicy {
        ControlPolicy::blocks(policy.to_vec(), self.grid.horizon, self.control.u_set.clone())
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{key} must be positive, got {v}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config("[problem]\npreset = \"zero-h\"\n").unwrap();
        assert_eq!(c.grid, Grid::default());
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.mode().unwrap(), Mode::ConditionalLaw);
        assert_eq!(c.base_policy(), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn negative_steps() {
        let e = parse_config("[problem]\npreset = \"zero-h\"\n[grid]\nK = -4\n").unwrap_err();
        assert!(format!("{e:#}").contains("grid.K must be positive"), "{e:#}");
    }
}
