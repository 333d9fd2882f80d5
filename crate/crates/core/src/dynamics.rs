//! Slotted content, access and cache dynamics.
//!
//! Per-slot event order used throughout the crate:
//! 1. the fresh batch `N_t` joins the out-of-cache contents,
//! 2. the channel cost `C_t` is drawn,
//! 3. the access indicator `U_t` is drawn,
//! 4. the forced action (on access) or the policy action is applied,
//! 5. all lifetimes are decremented and expired contents dropped,
//! 6. the elapsed-time counter is updated.

use rand::Rng;

use crate::error::{Error, Result};
use crate::multiset::LifetimeMultiset;

/// Cache capacity `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Capacity {
    Finite(usize),
    Unlimited,
}

impl Capacity {
    pub fn admits(self, n: usize) -> bool {
        match self {
            Capacity::Finite(b) => n <= b,
            Capacity::Unlimited => true,
        }
    }

    pub fn is_full(self, n: usize) -> bool {
        match self {
            Capacity::Finite(b) => n >= b,
            Capacity::Unlimited => false,
        }
    }

    pub fn finite(self) -> Option<usize> {
        match self {
            Capacity::Finite(b) => Some(b),
            Capacity::Unlimited => None,
        }
    }
}

impl std::fmt::Display for Capacity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Capacity::Finite(b) => write!(f, "{b}"),
            Capacity::Unlimited => write!(f, "inf"),
        }
    }
}

/// Content generation, user access and cache parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    /// Batch sizes are uniform on `m_min..=m_max`.
    pub m_min: u32,
    pub m_max: u32,
    /// Lifetimes are uniform over this support (sorted, distinct, positive).
    pub lifetimes: Vec<u32>,
    pub p_a: f64,
    pub d_max: u32,
    pub capacity: Capacity,
    /// Force an access once `d_max` slots have passed without one. When
    /// false, accesses are plain Bernoulli(`p_a`) and `d_max` is ignored.
    pub truncate_access: bool,
}

impl GenParams {
    /// Batch sizes uniform on `1..=m_max`, lifetimes uniform on
    /// `{5, 10, ..., k_max}`.
    pub fn new(m_max: u32, k_max: u32, p_a: f64, d_max: u32, capacity: Capacity) -> Result<Self> {
        if k_max < 5 || k_max % 5 != 0 {
            return Err(Error::InvalidParam(format!(
                "k_max must be a positive multiple of 5, got {k_max}"
            )));
        }
        Self::with_support(1, m_max, (1..=k_max / 5).map(|i| 5 * i).collect(), p_a, d_max, capacity)
    }

    pub fn with_support(
        m_min: u32,
        m_max: u32,
        mut lifetimes: Vec<u32>,
        p_a: f64,
        d_max: u32,
        capacity: Capacity,
    ) -> Result<Self> {
        lifetimes.sort_unstable();
        lifetimes.dedup();
        let params = Self {
            m_min,
            m_max,
            lifetimes,
            p_a,
            d_max,
            capacity,
            truncate_access: true,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.m_max < 1 || self.m_min > self.m_max {
            return bad(format!("batch size range {}..={} is empty", self.m_min, self.m_max));
        }
        if self.lifetimes.is_empty() || self.lifetimes[0] == 0 {
            return bad("lifetime support must be non-empty and positive".into());
        }
        if !(self.p_a > 0.0 && self.p_a <= 1.0) {
            return bad(format!("p_a must lie in (0, 1], got {}", self.p_a));
        }
        if self.d_max < 1 {
            return bad("d_max must be at least 1".into());
        }
        Ok(())
    }

    pub fn k_max(&self) -> u32 {
        *self.lifetimes.last().expect("validated support")
    }

    pub fn mean_batch(&self) -> f64 {
        0.5 * (self.m_min + self.m_max) as f64
    }

    pub fn mean_lifetime(&self) -> f64 {
        self.lifetimes.iter().map(|&k| k as f64).sum::<f64>() / self.lifetimes.len() as f64
    }

    /// Probability of an access in the next slot given `elapsed` slots since
    /// the last one.
    pub fn access_probability(&self, elapsed: u32) -> f64 {
        if self.truncate_access && elapsed + 1 >= self.d_max {
            1.0
        } else {
            self.p_a
        }
    }

    /// Mean inter-access time under the configured access process.
    pub fn mean_inter_access(&self) -> f64 {
        if self.truncate_access {
            (1.0 - (1.0 - self.p_a).powi(self.d_max as i32)) / self.p_a
        } else {
            1.0 / self.p_a
        }
    }
}

/// Controlled state `(O, I, E)` plus the slot index.
///
/// During a slot, `elapsed` holds the number of slots since the last access
/// as of the end of the previous slot.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub out_contents: LifetimeMultiset,
    pub cache: LifetimeMultiset,
    pub elapsed: u32,
    pub slot: u64,
}

impl SystemState {
    /// Slot-0 state: an access has just happened and nothing is relevant.
    pub fn initial() -> Self {
        Self::default()
    }

    /// Opens slot 1 with its fresh batch.
    pub fn start(fresh: &LifetimeMultiset) -> Self {
        let mut s = Self::initial();
        s.out_contents.union_with(fresh);
        s.slot = 1;
        s
    }
}

/// Downloads `A1 ⊆ O` and evictions `A2 ⊆ I` taken in one slot.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CacheAction {
    pub downloads: LifetimeMultiset,
    pub evictions: LifetimeMultiset,
}

impl CacheAction {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The action every policy takes on access: download everything out of
    /// the cache and hand over everything in it.
    pub fn forced(state: &SystemState) -> Self {
        Self {
            downloads: state.out_contents.clone(),
            evictions: state.cache.clone(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.downloads.is_empty() && self.evictions.is_empty()
    }
}

/// Draws a fresh batch `N_t`.
pub fn generate_batch<R: Rng + ?Sized>(rng: &mut R, params: &GenParams) -> LifetimeMultiset {
    let m = rng.random_range(params.m_min..=params.m_max);
    let mut batch = LifetimeMultiset::new();
    for _ in 0..m {
        let k = params.lifetimes[rng.random_range(0..params.lifetimes.len())];
        batch.insert(k);
    }
    batch
}

/// Draws the access indicator for the next slot. Always consumes exactly one
/// uniform draw, forced or not.
pub fn sample_access<R: Rng + ?Sized>(rng: &mut R, params: &GenParams, elapsed: u32) -> Result<bool> {
    if params.truncate_access && elapsed >= params.d_max {
        return Err(Error::Invariant(format!(
            "elapsed {elapsed} reached d_max {}",
            params.d_max
        )));
    }
    let u: f64 = rng.random();
    Ok(u < params.access_probability(elapsed))
}

/// Applies the slot's action, returning the intermediate (pre-decrement)
/// state. On access the action must be the forced one and both sets are
/// emptied: cached contents move to the application layer.
pub fn apply_action(
    mut state: SystemState,
    action: &CacheAction,
    accessed: bool,
    capacity: Capacity,
) -> Result<SystemState> {
    if accessed {
        if action.downloads != state.out_contents || action.evictions != state.cache {
            return Err(Error::Invariant(
                "access slot requires the forced action".into(),
            ));
        }
        state.out_contents = LifetimeMultiset::new();
        state.cache = LifetimeMultiset::new();
        return Ok(state);
    }
    let new_len = (state.cache.len() + action.downloads.len())
        .checked_sub(action.evictions.len())
        .ok_or_else(|| Error::Invariant("evictions exceed cache contents".into()))?;
    if !capacity.admits(new_len) {
        return Err(Error::Invariant(format!(
            "action leaves {new_len} contents in a cache of capacity {capacity}"
        )));
    }
    if !state.out_contents.subtract(&action.downloads) {
        return Err(Error::Invariant(format!(
            "downloads {} not contained in {}",
            action.downloads, state.out_contents
        )));
    }
    if !state.cache.subtract(&action.evictions) {
        return Err(Error::Invariant(format!(
            "evictions {} not contained in {}",
            action.evictions, state.cache
        )));
    }
    state.out_contents.union_with(&action.evictions);
    state.cache.union_with(&action.downloads);
    Ok(state)
}

/// Ends the slot: decrements lifetimes, expires, adds the next slot's batch
/// and updates the elapsed counter.
pub fn advance_slot(mut state: SystemState, fresh: &LifetimeMultiset, accessed: bool) -> SystemState {
    state.out_contents.decrement();
    state.cache.decrement();
    state.out_contents.union_with(fresh);
    state.slot += 1;
    state.elapsed = if accessed { 0 } else { state.elapsed + 1 };
    state
}

pub fn slot_cost(action: &CacheAction, cost: f64) -> f64 {
    action.downloads.len() as f64 * cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    fn ms(v: &[u32]) -> LifetimeMultiset {
        LifetimeMultiset::from_lifetimes(v)
    }

    fn state(o: &[u32], i: &[u32], elapsed: u32) -> SystemState {
        SystemState {
            out_contents: ms(o),
            cache: ms(i),
            elapsed,
            slot: 1,
        }
    }

    #[test]
    fn degenerate_batch() {
        let p = GenParams::with_support(1, 1, vec![5], 0.5, 3, Capacity::Finite(1)).unwrap();
        let mut rng = stream(1);
        for _ in 0..100 {
            assert_eq!(generate_batch(&mut rng, &p), ms(&[5]));
        }
    }

    #[test]
    fn batch_support() {
        let p = GenParams::new(8, 15, 0.25, 15, Capacity::Finite(30)).unwrap();
        let mut rng = stream(2);
        for _ in 0..1000 {
            let b = generate_batch(&mut rng, &p);
            assert!((1..=8).contains(&b.len()));
            assert!(b.iter().all(|k| [5, 10, 15].contains(&k)));
        }
    }

    #[test]
    fn batch_mean() {
        let p = GenParams::new(8, 15, 0.25, 15, Capacity::Finite(30)).unwrap();
        let mut rng = stream(3);
        let n = 1_000_000;
        let total: usize = (0..n).map(|_| generate_batch(&mut rng, &p).len()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 4.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn rejects_k_max_not_multiple_of_five() {
        assert!(GenParams::new(8, 12, 0.25, 15, Capacity::Finite(30)).is_err());
    }

    #[test]
    fn access_forced_at_truncation() {
        let p = GenParams::new(8, 15, 0.01, 15, Capacity::Finite(30)).unwrap();
        let mut rng = stream(4);
        for _ in 0..100 {
            assert!(sample_access(&mut rng, &p, 14).unwrap());
        }
        assert!(sample_access(&mut rng, &p, 15).is_err());
    }

    #[test]
    fn access_always_with_unit_probability() {
        let p = GenParams::new(8, 15, 1.0, 15, Capacity::Finite(30)).unwrap();
        let mut rng = stream(5);
        assert!((0..14).all(|e| sample_access(&mut rng, &p, e).unwrap()));
    }

    #[test]
    fn access_frequency_matches_truncated_geometric() {
        let p = GenParams::new(8, 15, 0.25, 15, Capacity::Finite(30)).unwrap();
        // oracle: E[D] = sum_{k=1}^{15} k P(D = k)
        let q: f64 = 0.75;
        let mean_d: f64 = (1..15).map(|k| k as f64 * q.powi(k - 1) * 0.25).sum::<f64>()
            + 15.0 * q.powi(14);
        let mut rng = stream(6);
        let n = 1_000_000;
        let mut elapsed = 0;
        let mut hits = 0usize;
        for _ in 0..n {
            if sample_access(&mut rng, &p, elapsed).unwrap() {
                hits += 1;
                elapsed = 0;
            } else {
                elapsed += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 1.0 / mean_d).abs() < 3e-3, "{freq} vs {}", 1.0 / mean_d);
        assert!((p.mean_inter_access() - mean_d).abs() < 1e-12);
    }

    #[test]
    fn swap_action() {
        let s = state(&[5, 3], &[1], 2);
        let a = CacheAction {
            downloads: ms(&[5, 3]),
            evictions: ms(&[1]),
        };
        let next = apply_action(s, &a, false, Capacity::Finite(2)).unwrap();
        assert_eq!(next.out_contents, ms(&[1]));
        assert_eq!(next.cache, ms(&[5, 3]));
    }

    #[test]
    fn forced_access_action() {
        let s = state(&[5, 3], &[1], 2);
        let a = CacheAction::forced(&s);
        assert_eq!(slot_cost(&a, 1.5), 3.0);
        let next = apply_action(s, &a, true, Capacity::Finite(2)).unwrap();
        assert!(next.out_contents.is_empty() && next.cache.is_empty());
    }

    #[test]
    fn access_rejects_partial_action() {
        let s = state(&[5, 3], &[1], 2);
        assert!(apply_action(s, &CacheAction::empty(), true, Capacity::Finite(2)).is_err());
    }

    #[test]
    fn empty_action_is_identity() {
        let s = state(&[5, 3], &[1], 2);
        let next = apply_action(s.clone(), &CacheAction::empty(), false, Capacity::Finite(1)).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn capacity_and_inclusion_violations_are_errors() {
        let s = state(&[5, 3], &[1], 2);
        let over = CacheAction {
            downloads: ms(&[5]),
            evictions: LifetimeMultiset::new(),
        };
        assert!(apply_action(s.clone(), &over, false, Capacity::Finite(1)).is_err());
        let missing = CacheAction {
            downloads: ms(&[7]),
            evictions: LifetimeMultiset::new(),
        };
        assert!(apply_action(s, &missing, false, Capacity::Finite(4)).is_err());
    }

    #[test]
    fn advance_decrements_and_adds_fresh() {
        let s = state(&[1, 3], &[2], 4);
        let next = advance_slot(s, &ms(&[5]), false);
        assert_eq!(next.out_contents, ms(&[2, 5]));
        assert_eq!(next.cache, ms(&[1]));
        assert_eq!(next.elapsed, 5);
        assert_eq!(next.slot, 2);
        let reset = advance_slot(next, &LifetimeMultiset::new(), true);
        assert_eq!(reset.elapsed, 0);
    }

    #[test]
    fn slot_cost_arithmetic() {
        assert_eq!(slot_cost(&CacheAction::empty(), 3.0), 0.0);
        let a = CacheAction {
            downloads: ms(&[2, 4]),
            evictions: LifetimeMultiset::new(),
        };
        assert_eq!(slot_cost(&a, 0.5), 1.0);
    }

    /// Hand-stepped three-slot trace with B = 2.
    ///
    /// slot 1: O={5,3} I={} no access, download {5}        -> O={3} I={5} -> dec O={2} I={4}, +N2={2}
    /// slot 2: O={2,2} I={4} no access, download {2} evict {} -> O={2} I={4,2} -> dec O={1} I={3,1}, +N3={5}
    /// slot 3: O={1,5} I={3,1} no access, download {5} evict {1} -> O={1,1} I={3,5} -> dec O={} I={2,4}
    #[test]
    fn three_slot_golden_trace() {
        let cap = Capacity::Finite(2);
        let mut s = SystemState::start(&ms(&[5, 3]));
        let script = [
            (ms(&[5]), ms(&[]), ms(&[2])),
            (ms(&[2]), ms(&[]), ms(&[5])),
            (ms(&[5]), ms(&[1]), ms(&[])),
        ];
        for (down, ev, fresh) in script {
            let a = CacheAction {
                downloads: down,
                evictions: ev,
            };
            s = apply_action(s, &a, false, cap).unwrap();
            assert!(s.cache.len() <= 2);
            s = advance_slot(s, &fresh, false);
        }
        assert_eq!(s.out_contents, ms(&[]));
        assert_eq!(s.cache, ms(&[2, 4]));
        assert_eq!(s.elapsed, 3);
        assert_eq!(s.slot, 4);
    }
}
