//! Cache management policies.
//!
//! LISO keeps one threshold per lifetime pair `(l|L)`, `0 <= l < L <= K_max`,
//! where `l = 0` stands for a free cache slot. In every non-access slot it
//! repeatedly pairs the longest-lived content outside the cache with the
//! shortest-lived content inside it (or a free slot) and performs the swap
//! while the current channel cost is at most the pair's threshold.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CacheAction, Capacity, SystemState};
use crate::error::{Error, Result};
const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdTable {
    k_max: u32,
    c_max: f64,
    /// Row-major in `(l, L)`: the same order as the CSV rows.
    values: Vec<f64>,
}

impl ThresholdTable {
    pub fn constant(k_max: u32, c_max: f64, value: f64) -> Self {
        let n = Self::size_for(k_max);
        let mut t = Self {
            k_max,
            c_max,
            values: vec![value; n],
        };
        t.clamp();
        t
    }

    /// Builds a table from entries in `(l, L)` order; no projection applied.
    pub fn from_values(k_max: u32, c_max: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != Self::size_for(k_max) {
            return Err(Error::InvalidParam(format!(
                "table for k_max={k_max} needs {} entries, got {}",
                Self::size_for(k_max),
                values.len()
            )));
        }
        Ok(Self {
            k_max,
            c_max,
            values,
        })
    }

    /// Builds a table from a function of `(l, L)`.
    pub fn from_fn(k_max: u32, c_max: f64, f: impl Fn(u32, u32) -> f64) -> Self {
        let values = Self::pairs_for(k_max).map(|(l, big)| f(l, big)).collect();
        Self {
            k_max,
            c_max,
            values,
        }
    }

    pub fn size_for(k_max: u32) -> usize {
        (k_max as usize * (k_max as usize + 1)) / 2
    }

    fn pairs_for(k_max: u32) -> impl Iterator<Item = (u32, u32)> {
        (0..k_max).flat_map(move |l| (l + 1..=k_max).map(move |big| (l, big)))
    }

    /// All `(l, L)` pairs in storage order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> {
        Self::pairs_for(self.k_max)
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn index(&self, l: u32, big: u32) -> usize {
        debug_assert!(l < big && big <= self.k_max);
        let (l, big, k) = (l as usize, big as usize, self.k_max as usize);
        l * k - l * l.saturating_sub(1) / 2 + (big - l - 1)
    }

    /// `T(l|L)`; panics unless `0 <= l < L <= k_max`.
    pub fn get(&self, l: u32, big: u32) -> f64 {
        assert!(l < big && big <= self.k_max, "no threshold for ({l}|{big})");
        self.values[self.index(l, big)]
    }

    pub fn set(&mut self, l: u32, big: u32, value: f64) {
        assert!(l < big && big <= self.k_max, "no threshold for ({l}|{big})");
        let i = self.index(l, big);
        self.values[i] = value;
    }

    fn clamp(&mut self) {
        let c_max = self.c_max;
        for v in &mut self.values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, c_max) };
        }
    }

    /// Checks bounds and both monotonicity constraints:
    /// `T(l|L) <= T(l|L')` for `L' > L` and `T(l|L) >= T(l'|L)` for `l' > l`.
    pub fn is_feasible(&self) -> bool {
        let tol = FEASIBILITY_TOL;
        if self
            .values
            .iter()
            .any(|&v| !(v >= -tol && v <= self.c_max + tol))
        {
            return false;
        }
        for l in 0..self.k_max {
            for big in l + 2..=self.k_max {
                if self.get(l, big - 1) > self.get(l, big) + tol {
                    return false;
                }
            }
        }
        for big in 2..=self.k_max {
            for l in 1..big {
                if self.get(l, big) > self.get(l - 1, big) + tol {
                    return false;
                }
            }
        }
        true
    }

    /// Serializes as CSV with header `l,L,threshold_mw`, rows sorted by
    /// `(l, L)`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["l", "L", "threshold_mw"])?;
        for ((l, big), v) in self.pairs().zip(&self.values) {
            w.write_record([l.to_string(), big.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, c_max: f64) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            l: u32,
            #[serde(rename = "L")]
            big: u32,
            threshold_mw: f64,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let rows: Vec<Row> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        let k_max = rows.iter().map(|r| r.big).max().unwrap_or(0);
        let mut table = Self::constant(k_max, c_max, 0.0);
        if rows.len() != table.len() {
            return Err(Error::InvalidParam(format!(
                "threshold CSV has {} rows, expected {} for k_max={k_max}",
                rows.len(),
                table.len()
            )));
        }
        let mut seen = vec![false; table.len()];
        for r in rows {
            if r.l >= r.big {
                return Err(Error::InvalidParam(format!("invalid pair ({}|{})", r.l, r.big)));
            }
            let i = table.index(r.l, r.big);
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidParam(format!("duplicate pair ({}|{})", r.l, r.big)));
            }
            table.values[i] = r.threshold_mw;
        }
        Ok(table)
    }
}

/// Projects a table onto the feasible set: clamp to `[0, C_max]`, then for
/// each `l` take a running max over ascending `L`, then for each `L` a
/// running min over ascending `l`. The pair of sweeps runs twice.
pub fn project_monotone(mut table: ThresholdTable) -> ThresholdTable {
    table.clamp();
    let k = table.k_max;
    for _ in 0..2 {
        for l in 0..k {
            let mut run = f64::NEG_INFINITY;
            for big in l + 1..=k {
                let i = table.index(l, big);
                run = run.max(table.values[i]);
                table.values[i] = run;
            }
        }
        for big in 1..=k {
            let mut run = f64::INFINITY;
            for l in 0..big {
                let i = table.index(l, big);
                run = run.min(table.values[i]);
                table.values[i] = run;
            }
        }
    }
    assert!(table.is_feasible(), "projection produced an infeasible table");
    table
}

/// LISO swap loop for a non-access slot.
pub fn select_action_liso(
    table: &ThresholdTable,
    state: &SystemState,
    cost: f64,
    capacity: Capacity,
) -> CacheAction {
    let mut action = CacheAction::empty();
    if capacity == Capacity::Finite(0) {
        return action;
    }
    let mut out = state.out_contents.clone();
    let mut cache = state.cache.clone();
    let bound = capacity
        .finite()
        .map_or(usize::MAX, |b| b.saturating_mul(table.k_max as usize));
    let mut steps = 0usize;
    while let Some(big) = out.max() {
        let small = if capacity.is_full(cache.len()) {
            cache.min().unwrap_or(0)
        } else {
            0
        };
        if big <= small || big > table.k_max || cost > table.get(small, big) {
            break;
        }
        out.remove(big);
        cache.insert(big);
        action.downloads.insert(big);
        if small > 0 {
            cache.remove(small);
            action.evictions.insert(small);
        }
        steps += 1;
        assert!(steps <= bound, "swap loop exceeded {bound} simple actions");
    }
    action
}

pub fn select_action_reactive(state: &SystemState, accessed: bool) -> CacheAction {
    if accessed {
        CacheAction::forced(state)
    } else {
        CacheAction::empty()
    }
}

/// Visits the out-of-cache contents in uniformly random order and caches
/// each with probability `q` until the cache is full. Never evicts.
pub fn select_action_random<R: Rng + ?Sized>(
    q: f64,
    state: &SystemState,
    rng: &mut R,
    capacity: Capacity,
) -> CacheAction {
    let mut action = CacheAction::empty();
    if state.out_contents.is_empty() || capacity.is_full(state.cache.len()) {
        return action;
    }
    let mut order: Vec<u32> = state.out_contents.iter().collect();
    order.shuffle(rng);
    let mut size = state.cache.len();
    for k in order {
        if capacity.is_full(size) {
            break;
        }
        if rng.random::<f64>() < q {
            action.downloads.insert(k);
            size += 1;
        }
    }
    action
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyKind {
    Liso(ThresholdTable),
    Reactive,
    Random { q: f64 },
}

impl PolicyKind {
    pub fn random(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidParam(format!("caching probability {q} outside [0, 1]")));
        }
        Ok(PolicyKind::Random { q })
    }

    /// Action for the slot; on access every policy takes the forced action.
    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &SystemState,
        cost: f64,
        accessed: bool,
        capacity: Capacity,
        rng: &mut R,
    ) -> CacheAction {
        if accessed {
            return CacheAction::forced(state);
        }
        match self {
            PolicyKind::Liso(table) => select_action_liso(table, state, cost, capacity),
            PolicyKind::Reactive => CacheAction::empty(),
            PolicyKind::Random { q } => select_action_random(*q, state, rng, capacity),
        }
    }
}

/// Serializable scheme names used by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Liso,
    Reactive,
    Random,
    LbUc,
    LbNck,
    Exact,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Liso,
        Scheme::Reactive,
        Scheme::Random,
        Scheme::LbUc,
        Scheme::LbNck,
        Scheme::Exact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Liso => "liso",
            Scheme::Reactive => "reactive",
            Scheme::Random => "random",
            Scheme::LbUc => "lb_uc",
            Scheme::LbNck => "lb_nck",
            Scheme::Exact => "exact",
        }
    }

    pub fn is_lower_bound(self) -> bool {
        matches!(self, Scheme::LbUc | Scheme::LbNck)
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

/// Number of simple actions LISO would take; exposed for property checks.
pub fn simple_action_count(action: &CacheAction) -> usize {
    action.downloads.len()
}
