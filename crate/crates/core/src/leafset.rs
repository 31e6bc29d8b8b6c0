//! Fixed-width bit sets over unit ids.

use std::fmt;

const WORD: usize = 64;

/// A set of unit ids backed by a fixed-width bit vector.
///
/// The width is the size of the original universe and never changes, so a
/// unit keeps its bit position after it has been removed from a forest.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeafSet {
    words: Vec<u64>,
    width: usize,
}

impl LeafSet {
    pub fn empty(width: usize) -> Self {
        LeafSet { words: vec![0; width.div_ceil(WORD)], width }
    }

    pub fn full(width: usize) -> Self {
        let mut s = Self::empty(width);
        for i in 0..width {
            s.insert(i);
        }
        s
    }

    pub fn singleton(width: usize, unit: usize) -> Self {
        let mut s = Self::empty(width);
        s.insert(unit);
        s
    }

    pub fn from_units(width: usize, units: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(width);
        for u in units {
            s.insert(u);
        }
        s
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn insert(&mut self, unit: usize) {
        assert!(unit < self.width, "unit {unit} outside width {}", self.width);
        self.words[unit / WORD] |= 1 << (unit % WORD);
    }

    #[inline]
    pub fn remove(&mut self, unit: usize) {
        if unit < self.width {
            self.words[unit / WORD] &= !(1 << (unit % WORD));
        }
    }

    #[inline]
    pub fn contains(&self, unit: usize) -> bool {
        unit < self.width && self.words[unit / WORD] & (1 << (unit % WORD)) != 0
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// `self ⊆ other`.
    pub fn is_subset(&self, other: &LeafSet) -> bool {
        debug_assert_eq!(self.width, other.width);
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == *a)
    }

    pub fn is_superset(&self, other: &LeafSet) -> bool {
        other.is_subset(self)
    }

    pub fn is_disjoint(&self, other: &LeafSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    pub fn union_with(&mut self, other: &LeafSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn difference_with(&mut self, other: &LeafSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    pub fn union(&self, other: &LeafSet) -> LeafSet {
        let mut s = self.clone();
        s.union_with(other);
        s
    }

    pub fn difference(&self, other: &LeafSet) -> LeafSet {
        let mut s = self.clone();
        s.difference_with(other);
        s
    }

    /// Smallest member.
    pub fn first(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, w)| i * WORD + w.trailing_zeros() as usize)
    }

    /// Members in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * WORD + bit)
            })
        })
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl fmt::Debug for LeafSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
