//! Multisets of remaining lifetimes.
//!
//! Contents are homogeneous in size, so a set of contents is fully described
//! by how many of them have each remaining lifetime. The representation is a
//! dense count vector indexed by `lifetime - 1`, trimmed of trailing zeros so
//! that equal multisets compare and hash equal.

use std::fmt;

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct LifetimeMultiset {
    counts: Vec<u32>,
    len: usize,
}

impl LifetimeMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_lifetimes(lifetimes: &[u32]) -> Self {
        let mut set = Self::new();
        for &k in lifetimes {
            set.insert(k);
        }
        set
    }

    /// Builds a multiset from `(lifetime, multiplicity)` pairs.
    pub fn from_counts<I: IntoIterator<Item = (u32, u32)>>(pairs: I) -> Self {
        let mut set = Self::new();
        for (k, n) in pairs {
            set.insert_n(k, n);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count(&self, lifetime: u32) -> u32 {
        if lifetime == 0 {
            return 0;
        }
        self.counts.get(lifetime as usize - 1).copied().unwrap_or(0)
    }

    pub fn insert(&mut self, lifetime: u32) {
        self.insert_n(lifetime, 1);
    }

    /// Inserts `n` copies of `lifetime`.
    ///
    /// Panics if `lifetime` is zero: a content with no remaining lifetime is
    /// expired and can never be part of a state.
    pub fn insert_n(&mut self, lifetime: u32, n: u32) {
        assert!(lifetime > 0, "lifetime must be positive");
        if n == 0 {
            return;
        }
        let idx = lifetime as usize - 1;
        if self.counts.len() <= idx {
            self.counts.resize(idx + 1, 0);
        }
        self.counts[idx] += n;
        self.len += n as usize;
    }

    /// Removes one copy of `lifetime`; returns false if none was present.
    pub fn remove(&mut self, lifetime: u32) -> bool {
        if self.count(lifetime) == 0 {
            return false;
        }
        self.counts[lifetime as usize - 1] -= 1;
        self.len -= 1;
        self.trim();
        true
    }

    pub fn max(&self) -> Option<u32> {
        // trailing entry is always non-zero
        if self.counts.is_empty() {
            None
        } else {
            Some(self.counts.len() as u32)
        }
    }

    pub fn min(&self) -> Option<u32> {
        self.counts
            .iter()
            .position(|&c| c > 0)
            .map(|i| i as u32 + 1)
    }

    /// Multiset inclusion `other ⊆ self`.
    pub fn contains(&self, other: &LifetimeMultiset) -> bool {
        other
            .counts
            .iter()
            .enumerate()
            .all(|(i, &c)| c <= self.counts.get(i).copied().unwrap_or(0))
    }

    pub fn union_with(&mut self, other: &LifetimeMultiset) {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (dst, &c) in self.counts.iter_mut().zip(&other.counts) {
            *dst += c;
        }
        self.len += other.len;
    }

    /// Multiset difference; fails (leaving `self` untouched) unless
    /// `other ⊆ self`.
    pub fn subtract(&mut self, other: &LifetimeMultiset) -> bool {
        if !self.contains(other) {
            return false;
        }
        for (dst, &c) in self.counts.iter_mut().zip(&other.counts) {
            *dst -= c;
        }
        self.len -= other.len;
        self.trim();
        true
    }

    /// Decrements every lifetime by one, dropping the elements that reach
    /// zero. Returns the number of expired elements.
    pub fn decrement(&mut self) -> usize {
        if self.counts.is_empty() {
            return 0;
        }
        let expired = self.counts.remove(0) as usize;
        self.len -= expired;
        self.trim();
        expired
    }

    /// Elements in ascending order, repeated by multiplicity.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = u32> + '_ {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i as u32 + 1, c as usize))
    }

    /// `(lifetime, multiplicity)` pairs with non-zero multiplicity, ascending.
    pub fn counts(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as u32 + 1, c))
    }

    fn trim(&mut self) {
        while self.counts.last() == Some(&0) {
            self.counts.pop();
        }
    }
}

impl fmt::Debug for LifetimeMultiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for LifetimeMultiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, k) in self.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, "}}")
    }
}
