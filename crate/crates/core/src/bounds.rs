//! Lower bounds on the optimal average cost.
//!
//! LB-UC drops the capacity constraint: every content is then handled on its
//! own, and with memoryless accesses its optimal download threshold depends
//! only on its remaining lifetime. LB-NCK reveals access times in advance:
//! only contents alive at the next access are queued, and the queue is served
//! with per-time-to-access thresholds.

use std::io::Write;

use rayon::prelude::*;

use crate::channel::CostDistribution;
use crate::dynamics::{Capacity, GenParams};
use crate::error::{Error, Result};
use crate::policy::ThresholdTable;
use crate::rollout::{trajectory_seed, Environment, Evaluation, ExogenousPath};

/// `W(k)`: optimal expected cost of one out-of-cache content with `k` slots
/// of relevance left, unlimited cache, Bernoulli accesses.
#[derive(Clone, Debug, PartialEq)]
pub struct LbucTable {
    w: Vec<f64>,
}

impl LbucTable {
    pub fn k_max(&self) -> u32 {
        (self.w.len() - 1) as u32
    }

    pub fn w(&self, k: u32) -> f64 {
        self.w[k as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    /// Download threshold for lifetime `k >= 1`: `W(k - 1)`.
    pub fn threshold(&self, k: u32) -> f64 {
        self.w[k as usize - 1]
    }

    /// LISO table that realizes the per-lifetime threshold policy when the
    /// cache is unlimited (only the free-slot entries `T(0|L)` matter).
    pub fn threshold_table(&self, c_max: f64) -> ThresholdTable {
        ThresholdTable::from_fn(self.k_max(), c_max, |l, big| {
            if l == 0 {
                self.threshold(big).min(c_max)
            } else {
                0.0
            }
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "W_mw"])?;
        for (k, v) in self.w.iter().enumerate() {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `W(0) = 0`, `W(k) = p_a E[C] + (1 - p_a) E[min(C, W(k - 1))]`.
pub fn lbuc_table(p_a: f64, dist: &CostDistribution, k_max: u32) -> Result<LbucTable> {
    if !(p_a > 0.0 && p_a <= 1.0) {
        return Err(Error::InvalidParam(format!("p_a must lie in (0, 1], got {p_a}")));
    }
    if dist.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mean = dist.mean();
    let mut w = Vec::with_capacity(k_max as usize + 1);
    w.push(0.0);
    for k in 1..=k_max as usize {
        let prev = w[k - 1];
        let wait = if prev == 0.0 { 0.0 } else { dist.expected_min(prev) };
        w.push(p_a * mean + (1.0 - p_a) * wait);
    }
    Ok(LbucTable { w })
}

/// LB-UC cost per slot: `E[M] * E_K[W(K)]`.
pub fn lbuc_rate(gen: &GenParams, table: &LbucTable) -> Result<f64> {
    if table.k_max() != gen.k_max() {
        return Err(Error::InvalidParam(format!(
            "LB-UC table built for k_max={}, generation uses {}",
            table.k_max(),
            gen.k_max()
        )));
    }
    let per_content =
        gen.lifetimes.iter().map(|&k| table.w(k)).sum::<f64>() / gen.lifetimes.len() as f64;
    Ok(gen.mean_batch() * per_content)
}

/// LB-UC variant for accesses forced after `d_max` quiet slots: thresholds
/// then also depend on the elapsed time `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct LbucElapsedTable {
    /// `w[e][k]`
    w: Vec<Vec<f64>>,
}

impl LbucElapsedTable {
    pub fn w(&self, k: u32, elapsed: u32) -> f64 {
        self.w[elapsed as usize][k as usize]
    }
}

/// `W(k, e) = p(e) E[C] + (1 - p(e)) E[min(C, W(k - 1, e + 1))]`, where
/// `p(e)` is the access probability after `e` quiet slots.
pub fn lbuc_elapsed_table(gen: &GenParams, dist: &CostDistribution) -> Result<LbucElapsedTable> {
    if !gen.truncate_access {
        return Err(Error::InvalidParam("elapsed-indexed LB-UC needs truncated accesses".into()));
    }
    let k_max = gen.k_max() as usize;
    let d = gen.d_max as usize;
    let mean = dist.mean();
    let mut w = vec![vec![0.0; k_max + 1]; d];
    for k in 1..=k_max {
        for e in (0..d).rev() {
            let p = gen.access_probability(e as u32);
            let wait = if p < 1.0 {
                dist.expected_min(w[e + 1][k - 1])
            } else {
                0.0
            };
            w[e][k] = p * mean + (1.0 - p) * wait;
        }
    }
    Ok(LbucElapsedTable { w })
}

/// Rate of the elapsed-indexed bound: arrivals see the elapsed time with the
/// renewal distribution `P(D > e) / E[D]`.
pub fn lbuc_elapsed_rate(gen: &GenParams, table: &LbucElapsedTable) -> f64 {
    let mean_d = gen.mean_inter_access();
    let mut survive = 1.0;
    let mut rate = 0.0;
    for e in 0..gen.d_max {
        let per_content = gen
            .lifetimes
            .iter()
            .map(|&k| table.w(k, e))
            .sum::<f64>()
            / gen.lifetimes.len() as f64;
        rate += survive / mean_d * per_content;
        survive *= 1.0 - gen.access_probability(e);
    }
    gen.mean_batch() * rate
}

/// `V(s)`: expected cost of delivering one item due in `s` slots.
#[derive(Clone, Debug, PartialEq)]
pub struct LbnckTable {
    v: Vec<f64>,
}

impl LbnckTable {
    pub fn d_max(&self) -> u32 {
        (self.v.len() - 1) as u32
    }

    pub fn v(&self, s: u32) -> f64 {
        self.v[s as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    /// Download threshold with `s >= 1` slots to the access: `V(s - 1)`.
    /// Beyond the table the last threshold is reused.
    pub fn threshold(&self, s: u32) -> f64 {
        self.v[(s as usize - 1).min(self.v.len() - 1)]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s", "V_mw"])?;
        for (s, v) in self.v.iter().enumerate() {
            w.write_record([s.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `V(0) = E[C]`, `V(s) = E[min(C, V(s - 1))]`.
pub fn lbnck_table(dist: &CostDistribution, d_max: u32) -> Result<LbnckTable> {
    if d_max < 1 {
        return Err(Error::InvalidParam("d_max must be at least 1".into()));
    }
    if dist.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut v = Vec::with_capacity(d_max as usize + 1);
    v.push(dist.mean());
    for s in 1..=d_max as usize {
        v.push(dist.expected_min(v[s - 1]));
    }
    Ok(LbnckTable { v })
}

/// Plays the LB-NCK construction along one exogenous path and returns the
/// average cost per slot.
pub fn lbnck_run_path(path: &ExogenousPath, table: &LbnckTable, capacity: Capacity) -> f64 {
    let horizon = path.horizon();
    let mut next_access = vec![None; horizon];
    let mut upcoming = None;
    for t in (0..horizon).rev() {
        if path.slots[t].accessed {
            upcoming = Some(t);
        }
        next_access[t] = upcoming;
    }
    let (mut pending, mut cached, mut total) = (0usize, 0usize, 0.0);
    for (t, draw) in path.slots.iter().enumerate() {
        // contents never consumed within the horizon cost nothing anywhere
        let Some(a) = next_access[t] else { break };
        let s = (a - t) as u32;
        // a content with lifetime k is relevant for slots t..t+k-1
        pending += draw
            .fresh
            .counts()
            .filter(|&(k, _)| s < k)
            .map(|(_, n)| n as usize)
            .sum::<usize>();
        if s == 0 {
            total += pending as f64 * draw.cost;
            pending = 0;
            cached = 0;
        } else if draw.cost <= table.threshold(s) {
            let room = capacity.finite().map_or(usize::MAX, |b| b.saturating_sub(cached));
            let n = pending.min(room);
            total += n as f64 * draw.cost;
            pending -= n;
            cached += n;
        }
    }
    total / horizon as f64
}

/// LB-NCK evaluated on the same trajectories as
/// [`crate::rollout::evaluate`] with the same base seed.
pub fn lbnck_simulate(
    env: &Environment,
    table: &LbnckTable,
    n_traj: usize,
    horizon: usize,
    base_seed: u64,
) -> Result<Evaluation> {
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be at least 1".into()));
    }
    let costs = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let path = env.sample_path(trajectory_seed(base_seed, i), horizon)?;
            Ok(lbnck_run_path(&path, table, env.gen.capacity))
        })
        .collect::<Result<Vec<_>>>()?;
    Evaluation::from_samples(&costs)
}
