//! Exact solution of small instances of the average-cost caching MDP.
//!
//! The controlled state is `(O, I, E)` where `E = 0` marks a slot in which the
//! user accesses. The channel cost is side information drawn from a finite
//! set of levels. In a non-access state the actions are restricted to the
//! nested family `A_0, ..., A_B`: `A_b` performs the `b` best swaps, pairing
//! the `b` longest-lived out-of-cache contents with the `b` shortest-lived
//! cached contents (free slots count as lifetime 0).

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use crate::channel::CostLevels;
use crate::dynamics::{advance_slot, apply_action, CacheAction, Capacity, GenParams, SystemState};
use crate::error::{Error, Result};
use crate::multiset::LifetimeMultiset;

pub const DEFAULT_MAX_STATES: usize = 1_000_000;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ControlledState {
    pub out_contents: LifetimeMultiset,
    pub cache: LifetimeMultiset,
    /// Slots since the last access, counting the current slot: zero exactly
    /// when the user accesses now.
    pub elapsed: u32,
}

impl ControlledState {
    pub fn is_access(&self) -> bool {
        self.elapsed == 0
    }

    fn as_system(&self) -> SystemState {
        SystemState {
            out_contents: self.out_contents.clone(),
            cache: self.cache.clone(),
            elapsed: self.elapsed,
            slot: 0,
        }
    }
}

/// Pairs `(l_i, L_i)` in the order the nested family uses them, keeping only
/// pairs with `L_i > l_i`.
fn swap_pairs(state: &ControlledState, capacity: Capacity) -> Vec<(u32, u32)> {
    let outs: Vec<u32> = state.out_contents.iter().rev().collect();
    let free = match capacity {
        Capacity::Finite(b) => b.saturating_sub(state.cache.len()),
        Capacity::Unlimited => outs.len(),
    };
    let smalls = std::iter::repeat_n(0, free).chain(state.cache.iter());
    let slots = capacity.finite().unwrap_or(usize::MAX);
    smalls
        .zip(outs)
        .take(slots)
        .take_while(|&(l, big)| big > l)
        .collect()
}

/// Largest `b` for which `A_b` is a sensible action in a non-access state.
pub fn max_swaps(state: &ControlledState, capacity: Capacity) -> usize {
    swap_pairs(state, capacity).len()
}

/// The action `A_b`.
pub fn structured_action(state: &ControlledState, capacity: Capacity, b: usize) -> CacheAction {
    let mut action = CacheAction::empty();
    for (l, big) in swap_pairs(state, capacity).into_iter().take(b) {
        action.downloads.insert(big);
        if l > 0 {
            action.evictions.insert(l);
        }
    }
    action
}

/// Exact distribution of one fresh batch.
pub fn batch_distribution(gen: &GenParams) -> Vec<(LifetimeMultiset, f64)> {
    fn compositions(m: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if parts == 1 {
            prefix.push(m);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=m {
            prefix.push(c);
            compositions(m - c, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let support = &gen.lifetimes;
    let n_sizes = (gen.m_max - gen.m_min + 1) as f64;
    let mut result = Vec::new();
    for m in gen.m_min..=gen.m_max {
        let mut comps = Vec::new();
        compositions(m, support.len(), &mut Vec::new(), &mut comps);
        for comp in comps {
            // multinomial m! / prod(c!) * |S|^-m
            let mut log_p = ln_factorial(m) - m as f64 * (support.len() as f64).ln();
            for &c in &comp {
                log_p -= ln_factorial(c);
            }
            let batch = LifetimeMultiset::from_counts(support.iter().copied().zip(comp));
            result.push((batch, log_p.exp() / n_sizes));
        }
    }
    result
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

#[derive(Clone, Debug)]
pub struct ActionRow {
    /// Number of downloads; the per-level cost is `downloads * c`.
    pub downloads: usize,
    /// Sparse successor distribution `(state index, probability)`.
    pub transitions: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct MdpInstance {
    pub gen: GenParams,
    pub levels: CostLevels,
    pub states: Vec<ControlledState>,
    /// `actions[x][b]` is `A_b` in state `x`; access states have the single
    /// forced action.
    pub actions: Vec<Vec<ActionRow>>,
    index: HashMap<ControlledState, usize>,
}

impl MdpInstance {
    /// Index of the slot-0 state (access with nothing relevant). Values are
    /// normalized to zero there.
    pub const REFERENCE: usize = 0;

    pub fn index_of(&self, state: &ControlledState) -> Option<usize> {
        self.index.get(state).copied()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn cost(&self, x: usize, action: usize, level: usize) -> f64 {
        self.actions[x][action].downloads as f64 * self.levels.values()[level]
    }
}

fn check_instance(gen: &GenParams) -> Result<()> {
    gen.validate()?;
    if !gen.truncate_access {
        return Err(Error::InvalidParam(
            "exact solution needs accesses truncated at d_max".into(),
        ));
    }
    Ok(())
}

/// Successor distribution of `state` under `action`.
fn successors(
    gen: &GenParams,
    batches: &[(LifetimeMultiset, f64)],
    state: &ControlledState,
    action: &CacheAction,
) -> Result<Vec<(ControlledState, f64)>> {
    let accessed = state.is_access();
    let post = apply_action(state.as_system(), action, accessed, gen.capacity)?;
    let p_access = gen.access_probability(state.elapsed);
    let mut out: Vec<(ControlledState, f64)> = Vec::new();
    for (batch, pb) in batches {
        let next = advance_slot(post.clone(), batch, accessed);
        for (elapsed, pe) in [(0, p_access), (state.elapsed + 1, 1.0 - p_access)] {
            if pe <= 0.0 {
                continue;
            }
            let s = ControlledState {
                out_contents: next.out_contents.clone(),
                cache: next.cache.clone(),
                elapsed,
            };
            match out.iter_mut().find(|(t, _)| *t == s) {
                Some((_, p)) => *p += pb * pe,
                None => out.push((s, pb * pe)),
            }
        }
    }
    Ok(out)
}

fn actions_of(gen: &GenParams, state: &ControlledState) -> Vec<CacheAction> {
    if state.is_access() {
        vec![CacheAction::forced(&state.as_system())]
    } else {
        (0..=max_swaps(state, gen.capacity))
            .map(|b| structured_action(state, gen.capacity, b))
            .collect()
    }
}

fn explore(gen: &GenParams, max_states: usize) -> Result<(Vec<ControlledState>, Vec<Vec<ActionRow>>, HashMap<ControlledState, usize>)> {
    check_instance(gen)?;
    let batches = batch_distribution(gen);
    let mut states = vec![ControlledState::default()];
    let mut index = HashMap::from([(ControlledState::default(), 0usize)]);
    let mut rows: Vec<Vec<ActionRow>> = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    let mut pending: Vec<Option<Vec<ActionRow>>> = vec![None];
    while let Some(x) = queue.pop_front() {
        let state = states[x].clone();
        let mut state_rows = Vec::new();
        for action in actions_of(gen, &state) {
            let mut transitions = Vec::new();
            for (next, p) in successors(gen, &batches, &state, &action)? {
                let j = match index.get(&next) {
                    Some(&j) => j,
                    None => {
                        if states.len() >= max_states {
                            return Err(Error::StateSpaceTooLarge(max_states));
                        }
                        let j = states.len();
                        index.insert(next.clone(), j);
                        states.push(next);
                        pending.push(None);
                        queue.push_back(j);
                        j
                    }
                };
                transitions.push((j, p));
            }
            transitions.sort_by_key(|&(j, _)| j);
            state_rows.push(ActionRow {
                downloads: action.downloads.len(),
                transitions,
            });
        }
        pending[x] = Some(state_rows);
    }
    rows.extend(pending.into_iter().map(|r| r.expect("every state explored")));
    Ok((states, rows, index))
}

/// All states reachable from the slot-0 state under the nested action family.
pub fn enumerate_states(gen: &GenParams, max_states: usize) -> Result<Vec<ControlledState>> {
    Ok(explore(gen, max_states)?.0)
}

pub fn build_mdp(gen: &GenParams, levels: CostLevels, max_states: usize) -> Result<MdpInstance> {
    let (states, actions, index) = explore(gen, max_states)?;
    for (x, rows) in actions.iter().enumerate() {
        for row in rows {
            let total: f64 = row.transitions.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Invariant(format!(
                    "transition mass {total} from state {x}"
                )));
            }
        }
    }
    Ok(MdpInstance {
        gen: gen.clone(),
        levels,
        states,
        actions,
        index,
    })
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub rho_star: f64,
    /// Differential values, zero at [`MdpInstance::REFERENCE`].
    pub values: Vec<f64>,
    /// `policy[x][j]`: chosen action index (number of swaps) in state `x` at
    /// channel level `j`.
    pub policy: Vec<Vec<usize>>,
    pub iterations: usize,
    /// `max_x |T h(x) - h(x) - rho|` at the returned values.
    pub bellman_residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct RviOptions {
    pub tol: f64,
    pub max_iterations: usize,
    /// Aperiodicity transform weight in `(0, 1]`; 1 disables it.
    pub damping: f64,
}

impl Default for RviOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iterations: 1_000_000,
            damping: 1.0,
        }
    }
}

/// One Bellman backup; returns `T h` and the greedy policy.
fn backup(mdp: &MdpInstance, h: &[f64], q: &mut Vec<f64>) -> (Vec<f64>, Vec<Vec<usize>>) {
    let levels = mdp.levels.values();
    let probs = mdp.levels.probs();
    let mut th = vec![0.0; mdp.len()];
    let mut policy = Vec::with_capacity(mdp.len());
    for (x, rows) in mdp.actions.iter().enumerate() {
        q.clear();
        q.extend(
            rows.iter()
                .map(|r| r.transitions.iter().map(|&(j, p)| p * h[j]).sum::<f64>()),
        );
        let mut choice = Vec::with_capacity(levels.len());
        let mut acc = 0.0;
        for (&c, &p) in levels.iter().zip(probs) {
            let mut best = 0;
            let mut best_val = rows[0].downloads as f64 * c + q[0];
            for (a, row) in rows.iter().enumerate().skip(1) {
                let v = row.downloads as f64 * c + q[a];
                if v < best_val {
                    best = a;
                    best_val = v;
                }
            }
            acc += p * best_val;
            choice.push(best);
        }
        th[x] = acc;
        policy.push(choice);
    }
    (th, policy)
}

/// Relative value iteration with span-seminorm stopping.
pub fn relative_value_iteration(mdp: &MdpInstance, opts: RviOptions) -> Result<SolveResult> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidParam("damping must lie in (0, 1]".into()));
    }
    let tau = opts.damping;
    let reference = MdpInstance::REFERENCE;
    let mut h = vec![0.0; mdp.len()];
    let mut q = Vec::new();
    for it in 1..=opts.max_iterations {
        let (th, _) = backup(mdp, &h, &mut q);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (t, v) in th.iter().zip(&h) {
            let d = t - v;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let next: Vec<f64> = th.iter().zip(&h).map(|(t, v)| (1.0 - tau) * v + tau * t).collect();
        let shift = next[reference];
        h = next.into_iter().map(|v| v - shift).collect();
        if hi - lo <= opts.tol {
            let (th, policy) = backup(mdp, &h, &mut q);
            let diffs: Vec<f64> = th.iter().zip(&h).map(|(t, v)| t - v).collect();
            let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let rho = 0.5 * (lo + hi);
            return Ok(SolveResult {
                rho_star: rho.max(0.0),
                values: h,
                policy,
                iterations: it,
                bellman_residual: 0.5 * (hi - lo),
            });
        }
    }
    Err(Error::NoConvergence(opts.max_iterations))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestingViolation {
    pub state: usize,
    /// Adjacent levels `(j, j + 1)` where the swap count increased.
    pub levels: (usize, usize),
    pub swaps: (usize, usize),
}

#[derive(Clone, Debug, Default)]
pub struct StructureReport {
    pub checked_states: usize,
    pub violations: Vec<NestingViolation>,
}

impl StructureReport {
    pub fn is_nested(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that in every non-access state the number of swaps chosen is
/// non-increasing in the channel cost level.
pub fn check_threshold_structure(result: &SolveResult, mdp: &MdpInstance) -> StructureReport {
    let mut report = StructureReport::default();
    let values = mdp.levels.values();
    for (x, state) in mdp.states.iter().enumerate() {
        if state.is_access() {
            continue;
        }
        report.checked_states += 1;
        let choice = &result.policy[x];
        for j in 0..choice.len().saturating_sub(1) {
            let strictly_costlier = values[j + 1] > values[j];
            if strictly_costlier && choice[j + 1] > choice[j] {
                report.violations.push(NestingViolation {
                    state: x,
                    levels: (j, j + 1),
                    swaps: (choice[j], choice[j + 1]),
                });
            }
        }
    }
    report
}

/// Pairs `(x, y)` where `y` swaps a cached `l` (or a free slot, `l = 0`) of
/// `x` for an out-of-cache `L > l` and both are enumerated states.
pub fn swap_comparable_pairs(mdp: &MdpInstance) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (x, s) in mdp.states.iter().enumerate() {
        let mut smalls: Vec<u32> = s.cache.counts().map(|(k, _)| k).collect();
        if !mdp.gen.capacity.is_full(s.cache.len()) {
            smalls.push(0);
        }
        for &l in &smalls {
            for (big, _) in s.out_contents.counts() {
                if big <= l {
                    continue;
                }
                let mut y = s.clone();
                y.out_contents.remove(big);
                y.cache.insert(big);
                if l > 0 {
                    y.cache.remove(l);
                    y.out_contents.insert(l);
                }
                if let Some(j) = mdp.index_of(&y) {
                    pairs.push((x, j));
                }
            }
        }
    }
    pairs
}

/// Writes one row per state with its value and per-level swap counts.
pub fn write_solution_csv<W: Write>(mdp: &MdpInstance, result: &SolveResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "state".to_string(),
        "out".into(),
        "cache".into(),
        "elapsed".into(),
        "value_mw".into(),
    ];
    header.extend((0..mdp.levels.len()).map(|j| format!("level_{j}")));
    w.write_record(&header)?;
    for (x, s) in mdp.states.iter().enumerate() {
        let mut row = vec![
            x.to_string(),
            s.out_contents.to_string(),
            s.cache.to_string(),
            s.elapsed.to_string(),
            result.values[x].to_string(),
        ];
        row.extend(result.policy[x].iter().map(|a| a.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
