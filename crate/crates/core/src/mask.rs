use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary keep/drop decision over the tokens of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<bool>", into = "Vec<bool>")]
pub struct RetentionMask {
    bits: Vec<bool>,
    kept: usize,
}

impl From<Vec<bool>> for RetentionMask {
    fn from(bits: Vec<bool>) -> Self {
        let kept = bits.iter().filter(|&&b| b).count();
        Self { bits, kept }
    }
}

impl From<RetentionMask> for Vec<bool> {
    fn from(mask: RetentionMask) -> Self {
        mask.bits
    }
}

impl RetentionMask {
    pub fn all(n: usize) -> Self {
        Self {
            bits: vec![true; n],
            kept: n,
        }
    }

    pub fn none(n: usize) -> Self {
        Self {
            bits: vec![false; n],
            kept: 0,
        }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!("token index {i} out of range for {n} tokens")));
            }
            bits[i] = true;
        }
        Ok(bits.into())
    }

    /// Bit `i` is set iff bit `i` of `word` is set.
    pub fn from_word(n: usize, word: u64) -> Self {
        (0..n).map(|i| word >> i & 1 == 1).collect::<Vec<_>>().into()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn kept(&self) -> usize {
        self.kept
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn is_kept(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, keep: bool) {
        if self.bits[i] != keep {
            self.bits[i] = keep;
            if keep {
                self.kept += 1;
            } else {
                self.kept -= 1;
            }
        }
    }

    /// Copy with the given tokens dropped.
    pub fn without(&self, drop: &[usize]) -> Self {
        let mut m = self.clone();
        for &i in drop {
            m.set(i, false);
        }
        m
    }

    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// True if every token kept here is also kept in `other`.
    pub fn is_subset_of(&self, other: &RetentionMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Keep the `k` highest-scoring tokens. Ties go to the lower index.
    pub fn top_k(scores: &[f64], k: usize) -> Result<Self> {
        let n = scores.len();
        if k > n {
            return Err(Error::InvalidArgument(format!("cannot keep {k} of {n} tokens")));
        }
        let order = rank_descending(scores);
        let mut bits = vec![false; n];
        for &i in &order[..k] {
            bits[i] = true;
        }
        Ok(bits.into())
    }

    /// Lexicographic order on the bit sequence (dropped < kept, index 0 first).
    pub fn lex_cmp(&self, other: &RetentionMask) -> std::cmp::Ordering {
        self.bits.cmp(&other.bits)
    }
}

/// Number of tokens kept at `ratio` of `n`: `round(ratio * n)` clamped to `[1, n]`.
pub fn keep_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Token indices sorted by score, highest first; ties keep index order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kept_tracks_popcount() {
        let mut m = RetentionMask::none(5);
        m.set(1, true);
        m.set(3, true);
        m.set(3, true);
        assert_eq!(m.kept(), 2);
        m.set(1, false);
        assert_eq!(m.kept(), 1);
        let w = RetentionMask::from_word(4, 0b1011);
        assert_eq!(w.bits(), &[true, true, false, true]);
        assert_eq!(w.kept(), 3);
    }

    #[test]
    fn serde_round_trip_recomputes_kept() {
        let m = RetentionMask::from_indices(4, &[0, 2]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[true,false,true,false]");
        let back: RetentionMask = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.kept(), 2);
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        let m = RetentionMask::top_k(&[0.5, 0.9, 0.5, 0.1], 2).unwrap();
        assert_eq!(m.bits(), &[true, true, false, false]);
        assert!(RetentionMask::top_k(&[1.0], 2).is_err());
    }

    #[test]
    fn lexicographic_order_prefers_early_drops() {
        let a = RetentionMask::from_indices(3, &[1, 2]).unwrap();
        let b = RetentionMask::from_indices(3, &[0]).unwrap();
        assert_eq!(a.lex_cmp(&b), std::cmp::Ordering::Less);
    }
}
