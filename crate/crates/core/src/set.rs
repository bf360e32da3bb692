use std::cmp::Ordering;
use std::fmt;

/// Largest agent population an [`AgentSet`] can address.
pub const MAX_AGENTS: usize = 128;

/// A subset of agents `{0, .., n-1}` stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct AgentSet(u128);

impl AgentSet {
    pub const EMPTY: AgentSet = AgentSet(0);

    pub fn from_bits(bits: u128) -> Self {
        AgentSet(bits)
    }

    pub fn bits(self) -> u128 {
        self.0
    }

    /// All agents `0..n`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_AGENTS);
        if n == MAX_AGENTS {
            AgentSet(u128::MAX)
        } else {
            AgentSet((1u128 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        AgentSet(1u128 << i)
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_AGENTS && self.0 >> i & 1 == 1
    }

    #[must_use]
    pub fn with(self, i: usize) -> Self {
        AgentSet(self.0 | 1u128 << i)
    }

    #[must_use]
    pub fn without(self, i: usize) -> Self {
        AgentSet(self.0 & !(1u128 << i))
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1u128 << i;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[must_use]
    pub fn union(self, other: AgentSet) -> Self {
        AgentSet(self.0 | other.0)
    }

    #[must_use]
    pub fn intersection(self, other: AgentSet) -> Self {
        AgentSet(self.0 & other.0)
    }

    #[must_use]
    pub fn difference(self, other: AgentSet) -> Self {
        AgentSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: AgentSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Highest agent index plus one (0 for the empty set).
    pub fn span(self) -> usize {
        128 - self.0.leading_zeros() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }

    /// Every subset of `self`, in increasing bitmask order.
    pub fn subsets(self) -> impl Iterator<Item = AgentSet> {
        let mask = self.0;
        let mut next = Some(0u128);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == mask {
                None
            } else {
                Some((cur.wrapping_sub(mask)) & mask)
            };
            Some(AgentSet(cur))
        })
    }

    /// Lexicographic comparison of the sorted element lists.
    pub fn lex_cmp(self, other: AgentSet) -> Ordering {
        self.iter().cmp(other.iter())
    }

    /// Ordering by `(|S|, S)` with `S` compared lexicographically.
    pub fn size_lex_cmp(self, other: AgentSet) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.lex_cmp(other))
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl FromIterator<usize> for AgentSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = AgentSet::EMPTY;
        for i in iter {
            s.insert(i);
        }
        s
    }
}

impl fmt::Debug for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

/// Serialized as the sorted list of member indices.
impl serde::Serialize for AgentSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> serde::Deserialize<'de> for AgentSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let members = Vec::<usize>::deserialize(d)?;
        if let Some(&bad) = members.iter().find(|&&i| i >= MAX_AGENTS) {
            return Err(serde::de::Error::custom(format!(
                "agent index {bad} out of range"
            )));
        }
        Ok(members.into_iter().collect())
    }
}

/// All subsets of `{0..n}` sorted by `(|S|, S)`.
pub fn subsets_by_size_lex(n: usize) -> Vec<AgentSet> {
    let mut all: Vec<AgentSet> = AgentSet::full(n).subsets().collect();
    all.sort_by(|a, b| a.size_lex_cmp(*b));
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_enumeration_covers_power_set() {
        let s: AgentSet = [1, 3, 4].into_iter().collect();
        let subs: Vec<_> = s.subsets().collect();
        assert_eq!(subs.len(), 8);
        assert!(subs.iter().all(|x| x.is_subset(s)));
        assert_eq!(AgentSet::EMPTY.subsets().count(), 1);
    }

    #[test]
    fn size_lex_order() {
        let order = subsets_by_size_lex(3);
        let shown: Vec<String> = order.iter().map(|s| s.to_string()).collect();
        assert_eq!(
            shown,
            ["{}", "{0}", "{1}", "{2}", "{0,1}", "{0,2}", "{1,2}", "{0,1,2}"]
        );
        let a: AgentSet = [0, 2].into_iter().collect();
        let b: AgentSet = [1].into_iter().collect();
        assert_eq!(a.lex_cmp(b), Ordering::Less);
    }

    #[test]
    fn full_set_at_capacity() {
        assert_eq!(AgentSet::full(MAX_AGENTS).len(), MAX_AGENTS);
        assert_eq!(AgentSet::full(5).span(), 5);
    }
}
