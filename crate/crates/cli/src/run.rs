//! Experiment pipelines. Each one returns CSV rows, pass/fail checks and a
//! JSON section; `all` concatenates them in a fixed order.

use anyhow::{Context, Result};
use mfsmp_core::adjoint::{
    duality_check, solve_first_adjoint_with, solve_second_adjoint_with, AdjointOptions, AdjointState,
};
use mfsmp_core::field::{inner_means, mean_stderr};
use mfsmp_core::filter::{fkk_filter, kalman_bucy};
use mfsmp_core::presets::ParamCoefficients;
use mfsmp_core::variation::{solve_first_variation, taylor_orders, SpikeFamily, QUANTITIES};
use mfsmp_core::{
    brute_force_control, compute_mr, make_plan, picard_forward, smp_scan, BruteForce, CoefficientSet, ControlPolicy,
    ForwardState, Mode, NoisePlan, SmpReport, SpikeSpec,
};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Forward,
    FilterCheck,
    Taylor,
    Duality,
    SmpScan,
    BruteForce,
    All,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Self::Forward => "forward",
            Self::FilterCheck => "filter-check",
            Self::Taylor => "taylor",
            Self::Duality => "duality",
            Self::SmpScan => "smp-scan",
            Self::BruteForce => "brute-force",
            Self::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment_id: String,
    pub quantity: String,
    pub index: usize,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Results {
    /// Base name of the report files.
    pub experiment: String,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    pub summary: Map<String, Value>,
}

impl Results {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Content hash of the noise plan, git style: `sha256("plan <bytes>\0" ++ data)`.
pub fn plan_hash(plan: &NoisePlan) -> String {
    let db = plan.raw_db1();
    let dy = plan.raw_dy();
    let mut h = Sha256::new();
    h.update(format!("plan {}\0", 8 * (db.len() + dy.len())).as_bytes());
    for v in db.iter().chain(dy) {
        h.update(v.to_le_bytes());
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    coeffs: ParamCoefficients,
    plan: NoisePlan,
    brute: Option<BruteForce>,
    results: Results,
    prefix: String,
}

pub fn run_experiment(cfg: &ExperimentConfig, sub: Subcommand) -> Result<Results> {
    cfg.validate()?;
    let plan = make_plan(
        cfg.ensemble.seed,
        cfg.ensemble.m_outer as usize,
        cfg.ensemble.n_inner as usize,
        cfg.time_grid()?,
    )?;
    let mut ctx = Ctx {
        cfg,
        coeffs: cfg.coefficients()?,
        plan,
        brute: None,
        results: Results {
            experiment: sub.name().into(),
            ..Default::default()
        },
        prefix: cfg.problem.preset.clone(),
    };
    let steps: Vec<Subcommand> = match sub {
        Subcommand::All => {
            let mut all = vec![Subcommand::Forward];
            if ctx.coeffs.mode() == Mode::ConditionalLaw {
                all.push(Subcommand::FilterCheck);
            }
            all.extend([
                Subcommand::Taylor,
                Subcommand::Duality,
                Subcommand::BruteForce,
                Subcommand::SmpScan,
            ]);
            all
        }
        one => vec![one],
    };
    for step in steps {
        let section = match step {
            Subcommand::Forward => ctx.forward(),
            Subcommand::FilterCheck => ctx.filter_check(),
            Subcommand::Taylor => ctx.taylor(),
            Subcommand::Duality => ctx.duality(),
            Subcommand::BruteForce => ctx.brute_force(),
            Subcommand::SmpScan => ctx.smp_scan(),
            Subcommand::All => unreachable!(),
        }
        .with_context(|| format!("{} pipeline", step.name()))?;
        ctx.results.summary.insert(step.name().into(), section);
    }
    let mut r = ctx.results;
    let mut head = Map::new();
    head.insert("experiment".into(), json!(r.experiment));
    head.insert("passed".into(), json!(r.passed()));
    head.insert("checks".into(), serde_json::to_value(&r.checks)?);
    head.insert("config".into(), serde_json::to_value(cfg)?);
    head.insert("plan_hash".into(), json!(plan_hash(&ctx.plan)));
    head.insert("results".into(), Value::Object(std::mem::take(&mut r.summary)));
    r.summary = head;
    Ok(r)
}

impl Ctx<'_> {
    fn id(&self, step: &str) -> String {
        format!("{}/{step}", self.prefix)
    }

    fn row(&mut self, step: &str, quantity: impl Into<String>, index: usize, value: f64, stderr: f64) {
        let experiment_id = self.id(step);
        self.results.rows.push(Row {
            experiment_id,
            quantity: quantity.into(),
            index,
            value,
            stderr,
        });
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: String) {
        self.results.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }

    fn z(&self) -> f64 {
        self.cfg.tolerances.z
    }

    fn adjoint_options(&self) -> AdjointOptions {
        AdjointOptions {
            ridge: self.cfg.tolerances.ridge,
            ..Default::default()
        }
    }

    fn solve_forward(&self, ctl: &ControlPolicy) -> Result<ForwardState> {
        Ok(picard_forward(&self.coeffs, ctl, &self.plan, &self.cfg.picard())?)
    }

    fn solve_adjoints(&self, fwd: &ForwardState, ctl: &ControlPolicy, second: bool) -> Result<AdjointState> {
        let opts = self.adjoint_options();
        let first = solve_first_adjoint_with(&self.coeffs, fwd, ctl, &self.plan, &opts)?;
        if !second {
            return Ok(first);
        }
        Ok(solve_second_adjoint_with(
            &self.coeffs,
            fwd,
            ctl,
            first,
            &self.plan,
            &opts,
        )?)
    }

    fn forward(&mut self) -> Result<Value> {
        let step = "forward";
        let policy = self.cfg.base_policy();
        let fwd = self.solve_forward(&self.cfg.blocks(&policy))?;
        let n = fwd.n_inner;
        for k in 0..=fwd.grid.steps() {
            let (l, l_se) = mean_stderr(&inner_means(fwd.l.at(k), n));
            self.row(step, "L_martingale", k, l, l_se);
            let (x, x_se) = mean_stderr(&inner_means(fwd.x.at(k), n));
            self.row(step, "X_mean_Q", k, x, x_se);
            let u: Vec<f64> = (0..fwd.m_outer).map(|j| fwd.u_outer(j, k)).collect();
            let (u, u_se) = mean_stderr(&u);
            self.row(step, "U_mean_Q", k, u, u_se);
        }
        for (m, g) in fwd.gaps.iter().enumerate() {
            self.row(step, "picard_gap", m + 1, *g, 0.0);
        }
        self.row(step, "cost", 0, fwd.cost, fwd.cost_stderr);
        let kk = fwd.grid.steps();
        let (l, se) = mean_stderr(&inner_means(fwd.l.at(kk), n));
        let ok = (l - 1.0).abs() <= self.z() * se + 1e-12;
        self.check("forward: E^Q[L_T] = 1", ok, format!("{l} (stderr {se})"));
        Ok(json!({
            "policy": policy,
            "cost": fwd.cost,
            "cost_stderr": fwd.cost_stderr,
            "picard_gaps": fwd.gaps,
            "l_terminal_mean": l,
            "l_terminal_stderr": se,
        }))
    }

    fn filter_check(&mut self) -> Result<Value> {
        let step = "filter-check";
        let ctl = self.cfg.blocks(&self.cfg.base_policy());
        let fwd = self.solve_forward(&ctl)?;
        let fkk = fkk_filter(&self.coeffs, &ctl, &fwd, &self.plan)?;
        let kb = (self.cfg.problem.preset == "linear-filtering").then(|| kalman_bucy(self.coeffs.x0(), &self.plan));
        let (mut sup_ratio, mut sup_kb) = (0.0_f64, 0.0_f64);
        for k in 0..=fwd.grid.steps() {
            let d = (0..fwd.m_outer)
                .map(|j| (fkk.get(k, j) - fwd.u_outer(j, k)).abs())
                .fold(0.0, f64::max);
            sup_ratio = sup_ratio.max(d);
            self.row(step, "fkk_minus_ratio", k, d, 0.0);
            if let Some(kb) = &kb {
                let d = (0..fwd.m_outer)
                    .map(|j| (fkk.get(k, j) - kb.get(k, j)).abs())
                    .fold(0.0, f64::max);
                sup_kb = sup_kb.max(d);
                self.row(step, "fkk_minus_kalman_bucy", k, d, 0.0);
            }
        }
        let mut out = json!({ "sup_fkk_minus_ratio": sup_ratio });
        if kb.is_some() {
            let tol = self.cfg.tolerances.filter_sup;
            self.check(
                "filter: sup |U_fkk - Kalman-Bucy|",
                sup_kb <= tol,
                format!("{sup_kb} (limit {tol})"),
            );
            out["sup_fkk_minus_kalman_bucy"] = json!(sup_kb);
        }
        Ok(out)
    }

    fn taylor(&mut self) -> Result<Value> {
        let step = "taylor";
        let cfg = self.cfg;
        let family = SpikeFamily {
            t0: cfg.spike.t0,
            alt_policy: ControlPolicy::constant(cfg.spike.alt, cfg.control.u_set.clone()),
            eps: cfg.spike.eps_ladder.clone(),
        };
        let ctl = cfg.blocks(&cfg.base_policy());
        let r = taylor_orders(&self.coeffs, &ctl, &family, &self.plan, &cfg.picard())?;
        for (i, p) in r.points.iter().enumerate() {
            self.row(step, "eff_eps", i, p.eff_eps, 0.0);
            for (q, name) in QUANTITIES.iter().enumerate() {
                self.row(step, format!("e0_{name}"), i, p.e0[q], 0.0);
                self.row(step, format!("e1_{name}"), i, p.e1[q], 0.0);
                self.row(step, format!("e2_{name}"), i, p.e2[q], 0.0);
            }
            self.row(step, "smallness", i, p.smallness, 0.0);
            self.row(step, "composite", i, p.composite, 0.0);
        }
        for (q, name) in QUANTITIES.iter().enumerate() {
            let (s0, s1, s2) = (r.slope_e0[q], r.slope_e1[q], r.slope_e2[q]);
            let ok = s0 >= 0.4 && s1 >= 0.85 && s2 >= s1 + 0.1;
            self.check(
                format!("taylor: {name} residual orders"),
                ok,
                format!("slopes {s0:.3}, {s1:.3}, {s2:.3}"),
            );
        }
        Ok(serde_json::to_value(&r)?)
    }

    fn duality(&mut self) -> Result<Value> {
        let step = "duality";
        let cfg = self.cfg;
        let ctl = cfg.blocks(&cfg.base_policy());
        let fwd = self.solve_forward(&ctl)?;
        let adj = self.solve_adjoints(&fwd, &ctl, false)?;
        let mut reports = Vec::new();
        for (i, &eps) in cfg.spike.eps_ladder.iter().enumerate() {
            let spike = SpikeSpec::new(
                cfg.spike.t0,
                eps,
                ControlPolicy::constant(cfg.spike.alt, cfg.control.u_set.clone()),
            );
            let var = solve_first_variation(&self.coeffs, &fwd, &ctl, &spike, &self.plan)?;
            let r = duality_check(&self.coeffs, &fwd, &var, &adj)?;
            for (q, v) in [
                ("lhs", r.lhs),
                ("rhs", r.rhs),
                ("abs_residual", r.abs_residual),
                ("rel_residual", r.rel_residual),
                ("residual_per_eps", r.per_eps),
            ] {
                self.row(step, q, i, v, 0.0);
            }
            reports.push(r);
        }
        let target = cfg.tolerances.duality_eps;
        let at = reports
            .iter()
            .min_by(|a, b| (a.eps - target).abs().total_cmp(&(b.eps - target).abs()))
            .expect("nonempty ladder");
        let limit = cfg.tolerances.duality_rel;
        self.check(
            "duality: relative residual",
            at.rel_residual <= limit,
            format!("{} at eps = {} (limit {limit})", at.rel_residual, at.eps),
        );
        let per_eps: Vec<f64> = reports.iter().map(|r| r.per_eps).collect();
        let inversions = per_eps.windows(2).filter(|w| w[1] >= w[0]).count();
        self.check(
            "duality: residual/eps decreasing",
            inversions <= 1,
            format!("{per_eps:?}, {inversions} inversions"),
        );
        Ok(serde_json::to_value(&reports)?)
    }

    fn brute(&mut self) -> Result<&BruteForce> {
        if self.brute.is_none() {
            let cfg = self.cfg;
            let bf = brute_force_control(
                &self.coeffs,
                &self.plan,
                &cfg.control.u_set,
                cfg.control.blocks as usize,
                &cfg.picard(),
            )?;
            self.brute = Some(bf);
        }
        Ok(self.brute.as_ref().unwrap())
    }

    fn brute_force(&mut self) -> Result<Value> {
        let step = "brute-force";
        let bf = self.brute()?.clone();
        for (i, (c, se)) in bf.costs.iter().zip(&bf.stderr).enumerate() {
            self.row(step, "cost", i, *c, *se);
        }
        Ok(json!({
            "policies": bf.policies,
            "best": bf.best,
            "best_policy": bf.best_policy(),
            "best_cost": bf.best_cost(),
        }))
    }

    fn scan_at(&self, policy: &[f64]) -> Result<(ForwardState, AdjointState, SmpReport)> {
        let ctl = self.cfg.blocks(policy);
        let fwd = self.solve_forward(&ctl)?;
        let adj = self.solve_adjoints(&fwd, &ctl, true)?;
        let scan = smp_scan(&self.coeffs, &fwd, &adj, &self.plan, &self.cfg.control.u_set)?;
        Ok((fwd, adj, scan))
    }

    fn smp_scan(&mut self) -> Result<Value> {
        let step = "smp-scan";
        let (tol, z) = (self.cfg.tolerances.tol_smp, self.z());
        let at_optimum = self.cfg.control.policy.is_none();
        let policy = match &self.cfg.control.policy {
            Some(p) => p.clone(),
            None => self.brute()?.best_policy().to_vec(),
        };
        let (fwd, adj, scan) = self.scan_at(&policy)?;
        for (v, cand) in scan.candidates.iter().enumerate() {
            for k in 0..scan.gap[v].len() {
                self.row(step, format!("gap[v={cand}]"), k, scan.gap[v][k], scan.gap_stderr[v][k]);
            }
            for k in 0..scan.gap_max[v].len() {
                self.row(step, format!("gap_max[v={cand}]"), k, scan.gap_max[v][k], 0.0);
            }
        }
        let mut out = json!({
            "policy": policy,
            "at_brute_force_optimum": at_optimum,
            "verdict": scan.verdict,
            "verdict_stderr": scan.verdict_stderr,
            "verdict_at": scan.verdict_at,
        });
        // M and R need the split assumption; other presets scan without them.
        if let Ok(mr) = compute_mr(&self.coeffs, &fwd, &adj, &self.plan) {
            for k in 0..mr.m.nodes() {
                let (m, m_se) = mean_stderr(mr.m.at(k));
                self.row(step, "M_mean", k, m, m_se);
                let (r, r_se) = mean_stderr(mr.r.at(k));
                self.row(step, "R_mean", k, r, r_se);
            }
            out["m_max_abs"] = json!(mr.m.max_abs());
            out["r_max_abs"] = json!(mr.r.max_abs());
        }
        let violations = scan.violations(tol, z);
        self.check(
            "smp: no gap above tol_smp + z stderr",
            violations == 0,
            format!("{violations} violations, worst excess {}", scan.max_excess(tol, z)),
        );
        out["violations"] = json!(violations);
        if at_optimum {
            let mut swaps = Vec::new();
            for b in 0..policy.len() {
                for &v in self.cfg.control.u_set.iter().filter(|&&v| v != policy[b]) {
                    let mut other = policy.clone();
                    other[b] = v;
                    let (_, _, s) = self.scan_at(&other)?;
                    swaps.push(json!({ "block": b, "value": v, "violations": s.violations(tol, z) }));
                }
            }
            let all_flagged = swaps.iter().all(|s| s["violations"].as_u64() > Some(0));
            self.check(
                "smp: every single-block swap is flagged",
                all_flagged,
                format!("{} swaps", swaps.len()),
            );
            out["swaps"] = Value::Array(swaps);
        }
        out["scan"] = serde_json::to_value(&scan)?;
        Ok(out)
    }
}
