//! Monte Carlo rollouts and policy evaluation.
//!
//! Exogenous randomness (batches, channel costs, accesses) comes from one
//! stream per trajectory and never depends on the policy, so every policy run
//! with the same trajectory seed faces the same sample path. Policy-internal
//! randomness (random caching) uses a separate stream.

use rayon::prelude::*;

use crate::channel::CostModel;
use crate::dynamics::{
    advance_slot, apply_action, generate_batch, sample_access, slot_cost, GenParams, SystemState,
};
use crate::error::{Error, Result};
use crate::multiset::LifetimeMultiset;
use crate::policy::PolicyKind;
use crate::seed::{derive_seed, stream};

const EXOGENOUS_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;

#[derive(Clone, Debug)]
pub struct Environment {
    pub gen: GenParams,
    pub cost: CostModel,
}

/// Exogenous draws for one slot.
#[derive(Clone, Debug)]
pub struct SlotDraw {
    /// Batch generated at the start of the slot.
    pub fresh: LifetimeMultiset,
    pub cost: f64,
    pub accessed: bool,
}

#[derive(Clone, Debug)]
pub struct ExogenousPath {
    pub slots: Vec<SlotDraw>,
}

impl ExogenousPath {
    pub fn horizon(&self) -> usize {
        self.slots.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutResult {
    /// Average cost per slot, mW.
    pub avg_cost: f64,
    pub n_downloads: u64,
    pub n_accesses: u64,
}

/// Sample mean with a normal-approximation 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
    pub n: usize,
}

impl Evaluation {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InvalidParam(format!(
                "a confidence interval needs at least 2 samples, got {n}"
            )));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        Ok(Self {
            mean,
            std,
            ci95: 1.96 * std / (n as f64).sqrt(),
            n,
        })
    }

    pub fn std_error(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

impl Environment {
    pub fn new(gen: GenParams, cost: CostModel) -> Result<Self> {
        gen.validate()?;
        Ok(Self { gen, cost })
    }

    /// Draws the exogenous path of one trajectory. Per slot the order is:
    /// batch size, lifetimes, channel cost, access.
    pub fn sample_path(&self, seed: u64, horizon: usize) -> Result<ExogenousPath> {
        let mut rng = stream(derive_seed(seed, &[EXOGENOUS_STREAM]));
        let mut slots = Vec::with_capacity(horizon);
        let mut elapsed = 0u32;
        for _ in 0..horizon {
            let fresh = generate_batch(&mut rng, &self.gen);
            let cost = self.cost.sample(&mut rng);
            let accessed = sample_access(&mut rng, &self.gen, elapsed)?;
            elapsed = if accessed { 0 } else { elapsed + 1 };
            slots.push(SlotDraw {
                fresh,
                cost,
                accessed,
            });
        }
        Ok(ExogenousPath { slots })
    }
}

/// Plays `policy` along a fixed exogenous path from the empty initial state.
pub fn run_path(
    policy: &PolicyKind,
    env: &Environment,
    path: &ExogenousPath,
    policy_seed: u64,
) -> Result<RolloutResult> {
    let horizon = path.horizon();
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be at least 1".into()));
    }
    if let PolicyKind::Liso(t) = policy {
        if t.k_max() < env.gen.k_max() {
            return Err(Error::InvalidParam(format!(
                "threshold table covers lifetimes up to {}, environment has {}",
                t.k_max(),
                env.gen.k_max()
            )));
        }
    }
    let capacity = env.gen.capacity;
    let mut rng = stream(policy_seed);
    let empty = LifetimeMultiset::new();
    let mut state = SystemState::start(&path.slots[0].fresh);
    let (mut total, mut downloads, mut accesses) = (0.0, 0u64, 0u64);
    for (t, draw) in path.slots.iter().enumerate() {
        let action = policy.act(&state, draw.cost, draw.accessed, capacity, &mut rng);
        total += slot_cost(&action, draw.cost);
        downloads += action.downloads.len() as u64;
        accesses += draw.accessed as u64;
        state = apply_action(state, &action, draw.accessed, capacity)?;
        let next_fresh = path.slots.get(t + 1).map_or(&empty, |d| &d.fresh);
        state = advance_slot(state, next_fresh, draw.accessed);
        if env.gen.truncate_access && state.elapsed >= env.gen.d_max {
            return Err(Error::Invariant(format!(
                "elapsed {} reached d_max at slot {}",
                state.elapsed, state.slot
            )));
        }
    }
    Ok(RolloutResult {
        avg_cost: total / horizon as f64,
        n_downloads: downloads,
        n_accesses: accesses,
    })
}

pub fn rollout(policy: &PolicyKind, env: &Environment, horizon: usize, seed: u64) -> Result<RolloutResult> {
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be at least 1".into()));
    }
    let path = env.sample_path(seed, horizon)?;
    run_path(policy, env, &path, derive_seed(seed, &[POLICY_STREAM]))
}

/// Seed of test trajectory `i`; shared by every policy evaluated with the
/// same base seed.
pub fn trajectory_seed(base_seed: u64, i: usize) -> u64 {
    derive_seed(base_seed, &[i as u64])
}

/// Runs `n_test` independent rollouts and reports the mean cost.
pub fn evaluate(
    policy: &PolicyKind,
    env: &Environment,
    n_test: usize,
    horizon: usize,
    base_seed: u64,
) -> Result<Evaluation> {
    if n_test < 2 {
        return Err(Error::InvalidParam(format!(
            "evaluation needs at least 2 trajectories, got {n_test}"
        )));
    }
    let costs = (0..n_test)
        .into_par_iter()
        .map(|i| rollout(policy, env, horizon, trajectory_seed(base_seed, i)).map(|r| r.avg_cost))
        .collect::<Result<Vec<_>>>()?;
    Evaluation::from_samples(&costs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, CostDistribution, CostLevels};
    use crate::dynamics::Capacity;
    use crate::policy::ThresholdTable;
    use std::sync::Arc;

    fn env(p_a: f64, b: usize) -> Environment {
        let gen = GenParams::new(8, 15, p_a, 15, Capacity::Finite(b)).unwrap();
        Environment::new(gen, CostModel::Channel(ChannelParams::default().sampler().unwrap())).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let e = env(0.25, 10);
        for p in [PolicyKind::Reactive, PolicyKind::Random { q: 0.3 }] {
            let a = rollout(&p, &e, 500, 42).unwrap();
            let b = rollout(&p, &e, 500, 42).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn random_zero_and_zero_thresholds_match_reactive() {
        let e = env(0.25, 10);
        let zero = PolicyKind::Liso(ThresholdTable::constant(15, 100.0, 0.0));
        for seed in 0..20 {
            let r = rollout(&PolicyKind::Reactive, &e, 400, seed).unwrap();
            assert_eq!(rollout(&PolicyKind::Random { q: 0.0 }, &e, 400, seed).unwrap(), r);
            assert_eq!(rollout(&zero, &e, 400, seed).unwrap(), r);
        }
    }

    #[test]
    fn reactive_always_access_is_product_of_means() {
        // every slot is an access and only that slot's batch is relevant, so
        // the average cost is E[M] E[C]
        let gen = GenParams::new(8, 15, 1.0, 15, Capacity::Finite(10)).unwrap();
        let dist = Arc::new(CostDistribution::from_channel(&ChannelParams::default(), 100_000, 3).unwrap());
        let e = Environment::new(gen, CostModel::Empirical(dist.clone())).unwrap();
        let ev = evaluate(&PolicyKind::Reactive, &e, 200, 2000, 5).unwrap();
        let expected = 4.5 * dist.mean();
        assert!((ev.mean - expected).abs() < ev.ci95.max(1e-9) * 1.5, "{ev:?} vs {expected}");
    }

    #[test]
    fn rare_access_without_truncation_costs_nothing() {
        let mut gen = GenParams::new(8, 15, 1e-12, 15, Capacity::Finite(10)).unwrap();
        gen.truncate_access = false;
        let e = Environment::new(gen, CostModel::Channel(ChannelParams::default().sampler().unwrap())).unwrap();
        let r = rollout(&PolicyKind::Reactive, &e, 1000, 9).unwrap();
        assert_eq!(r.avg_cost, 0.0);
        assert_eq!(r.n_accesses, 0);
    }

    #[test]
    fn constant_cost_gives_zero_width_interval() {
        let gen = GenParams::with_support(2, 2, vec![1], 1.0, 1, Capacity::Finite(0)).unwrap();
        let levels = CostLevels::new(vec![0.5], vec![1.0]).unwrap();
        let e = Environment::new(gen, CostModel::Levels(levels)).unwrap();
        let ev = evaluate(&PolicyKind::Reactive, &e, 10, 50, 1).unwrap();
        assert_eq!(ev.mean, 1.0);
        assert_eq!(ev.ci95, 0.0);
    }

    #[test]
    fn evaluation_needs_two_trajectories() {
        assert!(evaluate(&PolicyKind::Reactive, &env(0.25, 1), 1, 10, 0).is_err());
    }

    #[test]
    fn disjoint_seed_blocks_agree() {
        let e = env(0.25, 10);
        let a = evaluate(&PolicyKind::Reactive, &e, 100, 1000, 100).unwrap();
        let b = evaluate(&PolicyKind::Reactive, &e, 100, 1000, 200).unwrap();
        let pooled = (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 3.0 * pooled, "{a:?} {b:?}");
    }

    #[test]
    fn state_invariants_hold_along_trajectories() {
        // Capacity, lifetime bound, expiry and elapsed bound along random
        // caching trajectories, replayed slot by slot.
        let e = env(0.25, 7);
        let path = e.sample_path(77, 2000).unwrap();
        let policy = PolicyKind::Random { q: 0.6 };
        let mut rng = stream(5);
        let mut state = SystemState::start(&path.slots[0].fresh);
        let mut gap = 0u32;
        for (t, d) in path.slots.iter().enumerate() {
            let a = policy.act(&state, d.cost, d.accessed, e.gen.capacity, &mut rng);
            let mut before = state.out_contents.clone();
            before.union_with(&state.cache);
            state = apply_action(state, &a, d.accessed, e.gen.capacity).unwrap();
            if !d.accessed {
                let mut after = state.out_contents.clone();
                after.union_with(&state.cache);
                assert_eq!(before, after);
                assert!(state.cache.len() <= 7);
            }
            gap = if d.accessed { 0 } else { gap + 1 };
            assert!(gap < 15);
            let empty = LifetimeMultiset::new();
            state = advance_slot(state, path.slots.get(t + 1).map_or(&empty, |x| &x.fresh), d.accessed);
            assert!(state.out_contents.max().unwrap_or(0) <= 15);
            assert!(state.cache.max().unwrap_or(0) <= 14);
            assert!(state.elapsed < 15);
        }
    }
}
