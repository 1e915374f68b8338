use std::collections::BTreeSet;
use std::fmt;

use crate::error::{bail, Result};

/// A set of `(j, i)` links between source position `j` and target position
/// `i`, together with the sentence lengths that bound them.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AlignmentSet {
    src_len: usize,
    tgt_len: usize,
    links: BTreeSet<(usize, usize)>,
}

impl AlignmentSet {
    pub fn new(src_len: usize, tgt_len: usize) -> Self {
        Self { src_len, tgt_len, links: BTreeSet::new() }
    }

    pub fn from_pairs(
        src_len: usize,
        tgt_len: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut set = Self::new(src_len, tgt_len);
        for (j, i) in pairs {
            set.insert(j, i)?;
        }
        Ok(set)
    }

    /// Builds a set whose bounds are just large enough for its links.
    pub fn from_links(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let links: BTreeSet<_> = pairs.into_iter().collect();
        let src_len = links.iter().map(|&(j, _)| j + 1).max().unwrap_or(0);
        let tgt_len = links.iter().map(|&(_, i)| i + 1).max().unwrap_or(0);
        Self { src_len, tgt_len, links }
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt_len
    }

    pub fn insert(&mut self, j: usize, i: usize) -> Result<bool> {
        if j >= self.src_len || i >= self.tgt_len {
            bail!(
                Data,
                "link {j}-{i} outside a {}x{} sentence pair",
                self.src_len,
                self.tgt_len
            );
        }
        Ok(self.links.insert((j, i)))
    }

    pub fn contains(&self, j: usize, i: usize) -> bool {
        self.links.contains(&(j, i))
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Links in ascending `(j, i)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().copied()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.iter().collect()
    }

    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }

    pub fn intersection(&self, other: &Self) -> Self {
        Self {
            src_len: self.src_len,
            tgt_len: self.tgt_len,
            links: self.links.intersection(&other.links).copied().collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            src_len: self.src_len.max(other.src_len),
            tgt_len: self.tgt_len.max(other.tgt_len),
            links: self.links.union(&other.links).copied().collect(),
        }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.links.is_subset(&other.links)
    }

    /// Swaps the roles of source and target.
    pub fn transposed(&self) -> Self {
        Self {
            src_len: self.tgt_len,
            tgt_len: self.src_len,
            links: self.links.iter().map(|&(j, i)| (i, j)).collect(),
        }
    }

    /// Widens the bounds; links are unchanged.
    pub fn with_lengths(mut self, src_len: usize, tgt_len: usize) -> Result<Self> {
        if let Some(&(j, i)) = self.links.iter().find(|&&(j, i)| j >= src_len || i >= tgt_len) {
            bail!(Data, "link {j}-{i} outside a {src_len}x{tgt_len} sentence pair");
        }
        self.src_len = src_len;
        self.tgt_len = tgt_len;
        Ok(self)
    }
}

/// Pharaoh rendering: `j-i` pairs separated by single spaces.
impl fmt::Display for AlignmentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (j, i) in self.iter() {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{j}-{i}")?;
            first = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_are_enforced() {
        let mut a = AlignmentSet::new(2, 3);
        assert!(a.insert(1, 2).unwrap());
        assert!(!a.insert(1, 2).unwrap());
        assert!(a.insert(2, 0).is_err());
        assert!(AlignmentSet::from_pairs(1, 1, [(0, 1)]).is_err());
        assert!(a.clone().with_lengths(1, 3).is_err());
    }

    #[test]
    fn transpose_and_render() {
        let a = AlignmentSet::from_pairs(3, 2, [(2, 0), (0, 1)]).unwrap();
        assert_eq!(a.to_string(), "0-1 2-0");
        let t = a.transposed();
        assert_eq!((t.src_len(), t.tgt_len()), (2, 3));
        assert_eq!(t.to_string(), "0-2 1-0");
        assert_eq!(t.transposed(), a);
    }
}
