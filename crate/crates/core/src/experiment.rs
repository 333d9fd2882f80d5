//! Experiment orchestration: per-point setup, scheme evaluation, sweeps and
//! result tables.
//!
//! Every simulated scheme at every sweep point is evaluated on the same test
//! trajectory seeds, so differences between rows are paired comparisons.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{lbnck_simulate, lbnck_table, lbuc_elapsed_rate, lbuc_elapsed_table, lbuc_rate, lbuc_table};
use crate::channel::{CostDistribution, CostLevels, CostModel};
use crate::config::{ExperimentConfig, SweepVar};
use crate::dynamics::{Capacity, GenParams};
use crate::error::{Error, Result};
use crate::fdm::{train_with, LisoObjective, TrainOutcome};
use crate::mdp::{build_mdp, relative_value_iteration, MdpInstance, RviOptions, SolveResult};
use crate::policy::{PolicyKind, Scheme, ThresholdTable};
use crate::rollout::{evaluate, Environment};
use crate::seed::{derive_seed, name_tag};

pub const CSV_HEADER: &str = "scheme,sweep_var,sweep_value,mean_cost_mw,ci95_mw,n_traj,horizon,seed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub mean_cost_mw: f64,
    /// Half-width of the 95% interval; 0 for analytic rows.
    pub ci95_mw: f64,
    /// 0 for analytic rows.
    pub n_traj: usize,
    pub horizon: usize,
    pub seed: u64,
}

/// Everything derived from one configuration point.
#[derive(Clone, Debug)]
pub struct Setup {
    pub gen: GenParams,
    /// Cost distribution behind the bounds and the LISO initialization.
    pub dist: Arc<CostDistribution>,
    pub levels: CostLevels,
    pub env: Environment,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let gen = cfg.gen.params()?;
        let sampled = CostDistribution::from_channel(
            &cfg.chan,
            cfg.dist_samples,
            derive_seed(cfg.seed, &[name_tag("cost-distribution")]),
        )?;
        let levels = sampled.quantile_levels(cfg.exact_levels)?;
        let (dist, model) = if cfg.discrete_channel {
            let dist = Arc::new(levels_distribution(&levels, cfg.dist_samples)?);
            (dist, CostModel::Levels(levels.clone()))
        } else {
            (Arc::new(sampled), CostModel::Channel(cfg.chan.sampler()?))
        };
        let env = Environment::new(gen.clone(), model)?;
        Ok(Self { gen, dist, levels, env })
    }

    pub fn c_max(&self) -> f64 {
        self.env.cost.c_max()
    }

    /// Constant table at the median cost.
    pub fn liso_init(&self) -> ThresholdTable {
        ThresholdTable::constant(self.gen.k_max(), self.c_max(), self.dist.median())
    }
}

/// A sample of `n` costs reproducing the level probabilities.
pub fn levels_distribution(levels: &CostLevels, n: usize) -> Result<CostDistribution> {
    let mut samples = Vec::with_capacity(n);
    for (&v, &p) in levels.values().iter().zip(levels.probs()) {
        let count = (p * n as f64).round().max(1.0) as usize;
        samples.extend(std::iter::repeat_n(v, count));
    }
    CostDistribution::from_samples(samples)
}

/// Seed shared by all evaluations of a configuration.
pub fn evaluation_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.seed, &[name_tag("evaluation")])
}

pub fn train_liso(
    cfg: &ExperimentConfig,
    setup: &Setup,
    on_update: impl FnMut(usize, &ThresholdTable),
) -> Result<TrainOutcome> {
    let mut fdm = cfg.fdm.clone();
    fdm.base_seed = derive_seed(cfg.seed, &[name_tag("fdm")]);
    let objective = LisoObjective {
        env: &setup.env,
        horizon: fdm.horizon,
    };
    train_with(&setup.liso_init(), &fdm, &objective, on_update)
}

pub fn solve_exact(cfg: &ExperimentConfig, setup: &Setup) -> Result<(MdpInstance, SolveResult)> {
    let mdp = build_mdp(&setup.gen, setup.levels.clone(), cfg.exact_max_states)?;
    let result = relative_value_iteration(&mdp, RviOptions::default())?;
    Ok((mdp, result))
}

/// Current value of the swept variable.
pub fn sweep_point(cfg: &ExperimentConfig) -> f64 {
    match cfg.sweep.var {
        SweepVar::CacheCapacity => match cfg.gen.capacity {
            Capacity::Finite(b) => b as f64,
            Capacity::Unlimited => f64::INFINITY,
        },
        SweepVar::KMax => cfg.gen.k_max as f64,
        SweepVar::Q => cfg.random_q,
        SweepVar::PA => cfg.gen.p_a,
    }
}

/// Evaluates one scheme at one configuration point. `liso` supplies a
/// trained table; without it LISO is trained first.
pub fn run_scheme(
    cfg: &ExperimentConfig,
    setup: &Setup,
    scheme: Scheme,
    liso: Option<&ThresholdTable>,
) -> Result<ResultRow> {
    let seed = evaluation_seed(cfg);
    let simulated = |policy: PolicyKind| -> Result<(f64, f64, usize, usize)> {
        let ev = evaluate(&policy, &setup.env, cfg.n_test, cfg.test_horizon, seed)?;
        Ok((ev.mean, ev.ci95, cfg.n_test, cfg.test_horizon))
    };
    let (mean, ci, n_traj, horizon) = match scheme {
        Scheme::Liso => {
            let table = match liso {
                Some(t) => t.clone(),
                None => train_liso(cfg, setup, |_, _| {})?.table,
            };
            simulated(PolicyKind::Liso(table))?
        }
        Scheme::Reactive => simulated(PolicyKind::Reactive)?,
        Scheme::Random => simulated(PolicyKind::random(cfg.random_q)?)?,
        Scheme::LbUc => {
            let rate = if setup.gen.truncate_access && cfg.lbuc_truncated {
                lbuc_elapsed_rate(&setup.gen, &lbuc_elapsed_table(&setup.gen, &setup.dist)?)
            } else {
                let table = lbuc_table(setup.gen.p_a, &setup.dist, setup.gen.k_max())?;
                lbuc_rate(&setup.gen, &table)?
            };
            (rate, 0.0, 0, 0)
        }
        Scheme::LbNck => {
            let table = lbnck_table(&setup.dist, setup.gen.d_max.max(setup.gen.k_max()))?;
            let ev = lbnck_simulate(&setup.env, &table, cfg.n_test, cfg.test_horizon, seed)?;
            (ev.mean, ev.ci95, cfg.n_test, cfg.test_horizon)
        }
        Scheme::Exact => (solve_exact(cfg, setup)?.1.rho_star, 0.0, 0, 0),
    };
    Ok(ResultRow {
        scheme,
        sweep_var: cfg.sweep.var.name().to_string(),
        sweep_value: sweep_point(cfg),
        mean_cost_mw: mean,
        ci95_mw: ci,
        n_traj,
        horizon,
        seed: cfg.seed,
    })
}

/// One row per (sweep value, scheme), in sweep order then scheme order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment_with(cfg, |_| {})
}

/// [`run_experiment`] reporting each row as soon as it is computed.
pub fn run_experiment_with(cfg: &ExperimentConfig, mut on_row: impl FnMut(&ResultRow)) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.sweep.values.len() * cfg.schemes.len());
    // the caching probability does not affect LISO, so one table serves a q sweep
    let mut shared_table: Option<ThresholdTable> = None;
    for &x in &cfg.sweep.values {
        let point = cfg.at(x)?;
        let setup = Setup::new(&point)?;
        let mut table = None;
        if point.schemes.contains(&Scheme::Liso) {
            table = match (&shared_table, cfg.sweep.var) {
                (Some(t), SweepVar::Q) => Some(t.clone()),
                _ => Some(train_liso(&point, &setup, |_, _| {})?.table),
            };
            shared_table = table.clone();
        }
        for &scheme in &point.schemes {
            let row = run_scheme(&point, &setup, scheme, table.as_ref())?;
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_rows_csv<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::InvalidParam(format!(
            "unexpected result header `{}`",
            header.join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn acts_as_bound(scheme: Scheme) -> bool {
    scheme.is_lower_bound() || scheme == Scheme::Exact
}

/// Aligned table of the rows plus warnings for any policy whose mean lies
/// more than two combined 95% half-widths below a lower bound at the same
/// sweep value. `capacity_scale = E[M] E[K]` adds the normalized capacity
/// column for cache-capacity sweeps.
pub fn summarize(rows: &[ResultRow], capacity_scale: Option<f64>) -> String {
    let mut out = String::new();
    if rows.is_empty() {
        return out;
    }
    let with_norm = capacity_scale.is_some() && rows.iter().all(|r| r.sweep_var == SweepVar::CacheCapacity.name());
    let _ = write!(out, "{:<10} {:>14} {:>12}", "scheme", rows[0].sweep_var, "mean_mw");
    let _ = write!(out, " {:>10}", "ci95_mw");
    if with_norm {
        let _ = write!(out, " {:>10}", "B/(EM*EK)");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{:<10} {:>14} {:>12.4} {:>10.4}",
            r.scheme.name(),
            r.sweep_value,
            r.mean_cost_mw,
            r.ci95_mw
        );
        if let (true, Some(scale)) = (with_norm, capacity_scale) {
            let _ = write!(out, " {:>10.3}", r.sweep_value / scale);
        }
        out.push('\n');
    }
    for r in rows.iter().filter(|r| !acts_as_bound(r.scheme)) {
        for b in rows.iter().filter(|b| acts_as_bound(b.scheme)) {
            if b.sweep_var != r.sweep_var || b.sweep_value != r.sweep_value {
                continue;
            }
            let slack = 2.0 * r.ci95_mw.hypot(b.ci95_mw);
            if r.mean_cost_mw < b.mean_cost_mw - slack {
                let _ = writeln!(
                    out,
                    "warning: {} ({:.4}) below {} ({:.4}) at {}={}",
                    r.scheme.name(),
                    r.mean_cost_mw,
                    b.scheme.name(),
                    b.mean_cost_mw,
                    r.sweep_var,
                    r.sweep_value
                );
            }
        }
    }
    out
}
