//! Finite-difference policy search over LISO threshold tables.
//!
//! Each gradient estimate draws `N` uniform perturbations, evaluates the
//! perturbed and unperturbed tables on the same exogenous path (common random
//! numbers) and regresses the cost differences on the pre-projection
//! perturbations with a ridge term. An update averages several estimates,
//! steps against the mean gradient and projects back onto the feasible set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::{project_monotone, PolicyKind, ThresholdTable};
use crate::rollout::{run_path, Environment, Evaluation};
use crate::seed::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct FdmConfig {
    /// Perturbations are uniform on `(-r, r)`.
    pub r: f64,
    pub step: f64,
    pub n_perturbations: usize,
    pub n_estimates: usize,
    pub horizon: usize,
    pub n_updates: usize,
    /// `None`: `1e-6 * trace(ΔΘᵀΔΘ) / n_params`.
    pub ridge: Option<f64>,
    pub base_seed: u64,
}

impl Default for FdmConfig {
    fn default() -> Self {
        Self {
            r: 0.08,
            step: 0.01,
            n_perturbations: 100,
            n_estimates: 5,
            horizon: 300,
            n_updates: 200,
            ridge: None,
            base_seed: 0,
        }
    }
}

impl FdmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.to_string()));
        if !(self.r > 0.0) {
            return bad("perturbation range r must be positive");
        }
        if !(self.step >= 0.0) {
            return bad("step size must be non-negative");
        }
        if self.n_perturbations == 0 || self.n_estimates == 0 {
            return bad("need at least one perturbation and one estimate");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if let Some(ridge) = self.ridge {
            if !(ridge >= 0.0) {
                return bad("ridge must be non-negative");
            }
        }
        Ok(())
    }
}

/// Cost of a threshold table on the trajectory identified by `seed`,
/// evaluated in pairs so both tables see identical randomness.
pub trait Objective: Sync {
    fn paired_costs(&self, base: &ThresholdTable, perturbed: &ThresholdTable, seed: u64) -> Result<(f64, f64)>;
}

/// LISO average cost over one `horizon`-slot trajectory of `env`.
pub struct LisoObjective<'a> {
    pub env: &'a Environment,
    pub horizon: usize,
}

impl Objective for LisoObjective<'_> {
    fn paired_costs(&self, base: &ThresholdTable, perturbed: &ThresholdTable, seed: u64) -> Result<(f64, f64)> {
        let path = self.env.sample_path(seed, self.horizon)?;
        let policy_seed = derive_seed(seed, &[1]);
        let a = run_path(&PolicyKind::Liso(base.clone()), self.env, &path, policy_seed)?;
        let b = run_path(&PolicyKind::Liso(perturbed.clone()), self.env, &path, policy_seed)?;
        Ok((a.avg_cost, b.avg_cost))
    }
}

/// Adds i.i.d. Uniform(-r, r) noise to every entry and projects. Returns the
/// projected table and the raw perturbation vector.
pub fn perturb<R: Rng + ?Sized>(table: &ThresholdTable, r: f64, rng: &mut R) -> (ThresholdTable, Vec<f64>) {
    let delta: Vec<f64> = (0..table.len())
        .map(|_| if r > 0.0 { rng.random_range(-r..r) } else { 0.0 })
        .collect();
    let mut out = table.clone();
    for (v, d) in out.values_mut().iter_mut().zip(&delta) {
        *v += d;
    }
    (project_monotone(out), delta)
}

/// Ridge-regularized least squares `(XᵀX + ridge I)⁻¹ Xᵀ y`, with `x` given
/// row by row. `ridge = None` selects the trace-scaled default.
pub fn regress_gradient(x: &[Vec<f64>], y: &[f64], ridge: Option<f64>) -> Result<Vec<f64>> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    if n == 0 || p == 0 || n != y.len() {
        return Err(Error::InvalidParam("regression needs matching non-empty data".into()));
    }
    let design = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let target = DVector::from_column_slice(y);
    let mut gram = design.transpose() * &design;
    let lambda = ridge.unwrap_or_else(|| 1e-6 * gram.trace() / p as f64);
    if lambda == 0.0 && n < p {
        return Err(Error::SingularSystem(format!(
            "{n} perturbations cannot identify {p} parameters without ridge"
        )));
    }
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    let rhs = design.transpose() * target;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("normal equations are not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    /// Unperturbed costs, one per perturbation.
    pub baseline_costs: Vec<f64>,
}

/// One regression gradient estimate. `key` selects the random streams.
pub fn estimate_gradient<O: Objective>(
    table: &ThresholdTable,
    cfg: &FdmConfig,
    objective: &O,
    key: &[u64],
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let stream_seed = derive_seed(cfg.base_seed, key);
    let mut rng = stream(stream_seed);
    let perturbations: Vec<(ThresholdTable, Vec<f64>)> = (0..cfg.n_perturbations)
        .map(|_| perturb(table, cfg.r, &mut rng))
        .collect();
    let pairs = perturbations
        .par_iter()
        .enumerate()
        .map(|(i, (perturbed, _))| {
            objective.paired_costs(table, perturbed, derive_seed(stream_seed, &[i as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let deltas: Vec<Vec<f64>> = perturbations.into_iter().map(|(_, d)| d).collect();
    let diffs: Vec<f64> = pairs.iter().map(|(base, pert)| pert - base).collect();
    let gradient = regress_gradient(&deltas, &diffs, cfg.ridge)?;
    Ok(GradientEstimate {
        gradient,
        baseline_costs: pairs.iter().map(|(base, _)| *base).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub update: usize,
    pub mean_cost_mw: f64,
    pub ci95_mw: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub table: ThresholdTable,
    /// Cost of the table in force at each update, measured on that update's
    /// unperturbed rollouts.
    pub curve: Vec<CurvePoint>,
}

pub fn train<O: Objective>(init: &ThresholdTable, cfg: &FdmConfig, objective: &O) -> Result<TrainOutcome> {
    train_with(init, cfg, objective, |_, _| {})
}

/// [`train`] with a hook called after every update with the new table.
pub fn train_with<O: Objective>(
    init: &ThresholdTable,
    cfg: &FdmConfig,
    objective: &O,
    mut on_update: impl FnMut(usize, &ThresholdTable),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut table = project_monotone(init.clone());
    let mut curve = Vec::with_capacity(cfg.n_updates);
    for j in 0..cfg.n_updates {
        let mut mean_grad = vec![0.0; table.len()];
        let mut baseline = Vec::with_capacity(cfg.n_estimates * cfg.n_perturbations);
        for e in 0..cfg.n_estimates {
            let est = estimate_gradient(&table, cfg, objective, &[j as u64, e as u64])?;
            for (m, g) in mean_grad.iter_mut().zip(&est.gradient) {
                *m += g / cfg.n_estimates as f64;
            }
            baseline.extend(est.baseline_costs);
        }
        let (mean, ci) = match Evaluation::from_samples(&baseline) {
            Ok(ev) => (ev.mean, ev.ci95),
            Err(_) => (baseline[0], 0.0),
        };
        curve.push(CurvePoint {
            update: j,
            mean_cost_mw: mean,
            ci95_mw: ci,
        });
        for (v, g) in table.values_mut().iter_mut().zip(&mean_grad) {
            *v -= cfg.step * g;
        }
        table = project_monotone(table);
        on_update(j, &table);
    }
    Ok(TrainOutcome { table, curve })
}

/// Writes a learning curve as CSV `update,mean_cost_mw,ci95_mw`.
pub fn write_curve_csv<W: std::io::Write>(curve: &[CurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["update", "mean_cost_mw", "ci95_mw"])?;
    for p in curve {
        w.write_record([p.update.to_string(), p.mean_cost_mw.to_string(), p.ci95_mw.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
