//! Brute-force reference model for small instances, written independently of
//! the crate's dynamics and solver.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct St {
    pub out: Vec<u32>,
    pub cache: Vec<u32>,
    pub e: u32,
}

pub struct Instance {
    pub lifetimes: Vec<u32>,
    /// Batch sizes, uniform.
    pub sizes: Vec<u32>,
    pub p_a: f64,
    pub d_max: u32,
    pub capacity: usize,
    pub levels: Vec<f64>,
    pub level_probs: Vec<f64>,
}

/// `(downloads, evictions)` as sorted lifetime lists.
pub type Act = (Vec<u32>, Vec<u32>);

fn sub_multisets(items: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for &x in items {
        let mut more = Vec::new();
        for s in &out {
            let mut t = s.clone();
            t.push(x);
            t.sort();
            more.push(t);
        }
        out.extend(more);
    }
    out.sort();
    out.dedup();
    out
}

fn remove_all(from: &[u32], what: &[u32]) -> Vec<u32> {
    let mut v = from.to_vec();
    for w in what {
        let i = v.iter().position(|x| x == w).unwrap();
        v.remove(i);
    }
    v
}

fn age(v: &[u32]) -> Vec<u32> {
    v.iter().filter(|&&x| x > 1).map(|x| x - 1).collect()
}

impl Instance {
    fn batches(&self) -> Vec<(Vec<u32>, f64)> {
        let mut out: HashMap<Vec<u32>, f64> = HashMap::new();
        let k = self.lifetimes.len();
        for &m in &self.sizes {
            // all ordered draws of m lifetimes
            let total = k.pow(m);
            for code in 0..total {
                let mut c = code;
                let mut b = Vec::new();
                for _ in 0..m {
                    b.push(self.lifetimes[c % k]);
                    c /= k;
                }
                b.sort();
                *out.entry(b).or_default() += 1.0 / (total as f64 * self.sizes.len() as f64);
            }
        }
        let mut v: Vec<_> = out.into_iter().collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    fn p_access(&self, e: u32) -> f64 {
        if e + 1 >= self.d_max {
            1.0
        } else {
            self.p_a
        }
    }

    /// Every action: on access the forced download of everything out of
    /// cache, otherwise any downloads and evictions that fit.
    pub fn actions(&self, s: &St) -> Vec<Act> {
        if s.e == 0 {
            return vec![(s.out.clone(), vec![])];
        }
        let mut acts = Vec::new();
        for d in sub_multisets(&s.out) {
            for ev in sub_multisets(&s.cache) {
                if s.cache.len() - ev.len() + d.len() <= self.capacity {
                    acts.push((d.clone(), ev));
                }
            }
        }
        acts
    }

    pub fn step(&self, s: &St, a: &Act) -> Vec<(St, f64)> {
        let (out, cache) = if s.e == 0 {
            (vec![], vec![])
        } else {
            let mut out = remove_all(&s.out, &a.0);
            out.extend(&a.1);
            let mut cache = remove_all(&s.cache, &a.1);
            cache.extend(&a.0);
            (age(&out), age(&cache))
        };
        let pa = self.p_access(s.e);
        let mut next = Vec::new();
        for (b, pb) in self.batches() {
            let mut o = out.clone();
            o.extend(&b);
            o.sort();
            let mut c = cache.clone();
            c.sort();
            for (e, pe) in [(0, pa), (s.e + 1, 1.0 - pa)] {
                if pe > 0.0 {
                    next.push((St { out: o.clone(), cache: c.clone(), e }, pb * pe));
                }
            }
        }
        next
    }

    /// Reachable states under all actions, starting from the empty access
    /// state, which comes first.
    pub fn reachable(&self) -> Vec<St> {
        let start = St { out: vec![], cache: vec![], e: 0 };
        let mut seen = vec![start.clone()];
        let mut i = 0;
        while i < seen.len() {
            let s = seen[i].clone();
            for a in self.actions(&s) {
                for (t, _) in self.step(&s, &a) {
                    if !seen.contains(&t) {
                        seen.push(t);
                    }
                }
            }
            i += 1;
        }
        seen
    }

    /// Long-run average cost and differential values (zero at the first
    /// state) of a stationary policy choosing `choice[x][j]` among
    /// `actions(x)` at level `j`.
    pub fn evaluate_policy(&self, states: &[St], choice: &[Vec<usize>]) -> (f64, Vec<f64>) {
        let n = states.len();
        let idx: HashMap<&St, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut c = DVector::<f64>::zeros(n);
        for (x, s) in states.iter().enumerate() {
            let acts = self.actions(s);
            for (j, (&level, &pj)) in self.levels.iter().zip(&self.level_probs).enumerate() {
                let act = &acts[choice[x][j]];
                c[x] += pj * act.0.len() as f64 * level;
                for (t, p) in self.step(s, act) {
                    a[(x, idx[&t])] -= pj * p;
                }
            }
        }
        // h(0) = 0; its column carries the average cost instead
        for x in 0..n {
            a[(x, 0)] = 1.0;
        }
        let z = a.lu().solve(&c).expect("unichain policy");
        let mut h: Vec<f64> = z.iter().copied().collect();
        let rho = h[0];
        h[0] = 0.0;
        (rho, h)
    }

    pub fn average_cost(&self, states: &[St], choice: &[Vec<usize>]) -> f64 {
        self.evaluate_policy(states, choice).0
    }

    /// Optimal average cost by policy iteration over the full action space.
    pub fn policy_iteration_optimum(&self) -> f64 {
        let states = self.reachable();
        let idx: HashMap<&St, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let mut choice = vec![vec![0usize; self.levels.len()]; states.len()];
        for _ in 0..1000 {
            let (rho, h) = self.evaluate_policy(&states, &choice);
            let mut changed = false;
            for (x, s) in states.iter().enumerate() {
                let acts = self.actions(s);
                let q: Vec<f64> = acts
                    .iter()
                    .map(|a| self.step(s, a).iter().map(|(t, p)| p * h[idx[t]]).sum())
                    .collect();
                for (j, &level) in self.levels.iter().enumerate() {
                    let val = |k: usize| acts[k].0.len() as f64 * level + q[k];
                    let current = val(choice[x][j]);
                    let (best, best_val) = (0..acts.len())
                        .map(|k| (k, val(k)))
                        .fold((choice[x][j], current), |acc, (k, v)| if v < acc.1 - 1e-12 { (k, v) } else { acc });
                    if best_val < current - 1e-12 {
                        choice[x][j] = best;
                        changed = true;
                    }
                }
            }
            if !changed {
                return rho;
            }
        }
        panic!("policy iteration did not settle");
    }

    /// Minimum average cost over all deterministic stationary policies.
    pub fn brute_force_optimum(&self) -> f64 {
        let states = self.reachable();
        let n_levels = self.levels.len();
        let radices: Vec<usize> = states.iter().map(|s| self.actions(s).len()).collect();
        let slots: Vec<(usize, usize)> = (0..states.len())
            .filter(|&x| radices[x] > 1)
            .flat_map(|x| (0..n_levels).map(move |j| (x, j)))
            .collect();
        let total: f64 = slots.iter().map(|&(x, _)| radices[x] as f64).product();
        assert!(total <= 2e6, "{total} policies is too many to enumerate");
        let mut choice = vec![vec![0usize; n_levels]; states.len()];
        let mut best = f64::INFINITY;
        loop {
            best = best.min(self.average_cost(&states, &choice));
            // odometer increment
            let mut k = 0;
            loop {
                if k == slots.len() {
                    return best;
                }
                let (x, j) = slots[k];
                choice[x][j] += 1;
                if choice[x][j] < radices[x] {
                    break;
                }
                choice[x][j] = 0;
                k += 1;
            }
        }
    }
}
