//! Lyndon basis of the truncated free Lie algebra and log-signature
//! coordinates.
//!
//! Each Lyndon word `w` carries the Lie polynomial `P_w` obtained from its
//! standard factorisation `w = uv` (with `v` the longest proper Lyndon suffix)
//! as `P_w = [P_u, P_v]`. `P_w` has coefficient 1 on `w` and is otherwise
//! supported on lexicographically larger anagrams of `w`, which makes the
//! change of coordinates triangular.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{TensorShape, TruncatedTensor};

/// Residual above which [`LyndonBasis::project`] rejects its input.
pub const LIE_RESIDUAL_TOL: f64 = 1e-8;

fn mobius(mut n: u64) -> i64 {
    let mut result = 1;
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            n /= p;
            if n.is_multiple_of(p) {
                return 0;
            }
            result = -result;
        }
        p += 1;
    }
    if n > 1 {
        result = -result;
    }
    result
}

/// Number of Lyndon words of length `k` over `d` letters (Witt's formula).
pub fn witt_number(d: usize, k: usize) -> usize {
    assert!(k >= 1, "Lyndon words have positive length");
    let total: i128 = (1..=k)
        .filter(|m| k.is_multiple_of(*m))
        .map(|m| mobius(m as u64) as i128 * (d as i128).pow((k / m) as u32))
        .sum();
    (total / k as i128) as usize
}

/// Dimension of the degree-`M` truncated free Lie algebra over `R^d`.
pub fn logsig_dim(d: usize, depth: usize) -> usize {
    (1..=depth).map(|k| witt_number(d, k)).sum()
}

/// Dimension of the degree-`M` truncated tensor algebra, scalar term included.
pub fn sig_dim(d: usize, depth: usize) -> usize {
    (0..=depth).map(|k| d.pow(k as u32)).sum()
}

/// Lyndon words of length `1..=max_len` over `{0..d-1}` in lexicographic
/// order (Duval's generation algorithm).
fn lyndon_words_lex(d: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut w: Vec<usize> = vec![0];
    loop {
        out.push(w.clone());
        let m = w.len();
        while w.len() < max_len {
            let c = w[w.len() - m];
            w.push(c);
        }
        while let Some(&last) = w.last() {
            if last == d - 1 {
                w.pop();
            } else {
                break;
            }
        }
        match w.last_mut() {
            Some(last) => *last += 1,
            None => break,
        }
    }
    out
}

pub fn is_lyndon(word: &[usize]) -> bool {
    let n = word.len();
    if n == 0 {
        return false;
    }
    (1..n).all(|r| {
        let rotated = word[r..].iter().chain(&word[..r]);
        word.iter().lt(rotated)
    })
}

/// Standard factorisation `w = uv` with `v` the longest proper Lyndon suffix.
pub fn standard_factorization(word: &[usize]) -> (&[usize], &[usize]) {
    debug_assert!(word.len() > 1 && is_lyndon(word));
    let split = (1..word.len()).find(|&s| is_lyndon(&word[s..])).expect("Lyndon word of length > 1");
    (&word[..split], &word[split..])
}

type Poly = BTreeMap<Vec<usize>, i64>;

fn poly_concat(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (wa, ca) in a {
        for (wb, cb) in b {
            let mut w = wa.clone();
            w.extend_from_slice(wb);
            *out.entry(w).or_insert(0) += ca * cb;
        }
    }
    out
}

fn bracket(a: &Poly, b: &Poly) -> Poly {
    let mut out = poly_concat(a, b);
    for (w, c) in poly_concat(b, a) {
        *out.entry(w).or_insert(0) -= c;
    }
    out.retain(|_, c| *c != 0);
    out
}

/// Lyndon basis of the free Lie algebra truncated at degree `M`.
#[derive(Debug, Clone)]
pub struct LyndonBasis {
    shape: TensorShape,
    /// Ordered by length, then lexicographically.
    words: Vec<Vec<usize>>,
    /// Bracket expansion of each word: (flat tensor index, integer coefficient).
    expansions: Vec<Vec<(usize, f64)>>,
    /// Flat tensor index of each word.
    leads: Vec<usize>,
    /// `level_starts[k]..level_starts[k+1]` are the words of length `k + 1`.
    level_starts: Vec<usize>,
}

impl LyndonBasis {
    pub fn new(d: usize, depth: usize) -> Result<Self> {
        let shape = TensorShape::new(d, depth)?;
        let mut words = lyndon_words_lex(d, depth);
        words.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));

        let mut memo: HashMap<Vec<usize>, Poly> = HashMap::new();
        let mut expansions = Vec::with_capacity(words.len());
        for w in &words {
            let poly = Self::expand_word(w, &mut memo);
            let mut terms: Vec<(usize, f64)> =
                poly.iter().map(|(word, c)| (shape.index_of(word), *c as f64)).collect();
            terms.sort_by_key(|t| t.0);
            expansions.push(terms);
        }
        let mut level_starts = vec![0];
        for k in 1..=depth {
            let prev = *level_starts.last().unwrap();
            level_starts.push(prev + words[prev..].iter().take_while(|w| w.len() == k).count());
        }
        let leads = words.iter().map(|w| shape.index_of(w)).collect();
        Ok(Self { shape, words, expansions, leads, level_starts })
    }

    fn expand_word(w: &[usize], memo: &mut HashMap<Vec<usize>, Poly>) -> Poly {
        if let Some(p) = memo.get(w) {
            return p.clone();
        }
        let poly = if w.len() == 1 {
            Poly::from([(w.to_vec(), 1)])
        } else {
            let (u, v) = standard_factorization(w);
            let pu = Self::expand_word(u, memo);
            let pv = Self::expand_word(v, memo);
            bracket(&pu, &pv)
        };
        memo.insert(w.to_vec(), poly.clone());
        poly
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn depth(&self) -> usize {
        self.shape.depth
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Lyndon words with 0-based letters.
    pub fn words(&self) -> &[Vec<usize>] {
        &self.words
    }

    /// Bracket expansion of word `i` as `(flat tensor index, coefficient)`.
    pub fn expansion(&self, i: usize) -> &[(usize, f64)] {
        &self.expansions[i]
    }

    /// Words rendered with 1-based letters, e.g. `"112"`.
    pub fn labels(&self) -> Vec<String> {
        self.words
            .iter()
            .map(|w| {
                let sep = if self.shape.width > 9 { "," } else { "" };
                w.iter().map(|l| (l + 1).to_string()).collect::<Vec<_>>().join(sep)
            })
            .collect()
    }

    /// Sum of `coords[i] * P_{w_i}` in the tensor algebra.
    pub fn expand(&self, coords: &[f64]) -> Result<TruncatedTensor> {
        if coords.len() != self.len() {
            return Err(Error::shape(format!("{} coordinates for a basis of size {}", coords.len(), self.len())));
        }
        let mut t = TruncatedTensor::zeros(self.shape);
        let c = t.coeffs_mut();
        for (coord, terms) in coords.iter().zip(&self.expansions) {
            for &(idx, k) in terms {
                c[idx] += coord * k;
            }
        }
        Ok(t)
    }

    /// Coordinates of a Lie element on the Lyndon basis, by forward
    /// substitution in lexicographic order within each level.
    pub fn project(&self, logtensor: &TruncatedTensor) -> Result<LogSignature> {
        if logtensor.shape() != self.shape {
            return Err(Error::shape(format!(
                "log tensor has (d={}, M={}), basis has (d={}, M={})",
                logtensor.width(),
                logtensor.depth(),
                self.shape.width,
                self.shape.depth
            )));
        }
        let coords = self.project_slice(logtensor.coeffs())?;
        Ok(LogSignature { width: self.shape.width, depth: self.shape.depth, coords })
    }

    pub(crate) fn project_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut residual = x.to_vec();
        let mut coords = vec![0.0; self.len()];
        for (i, terms) in self.expansions.iter().enumerate() {
            let c = residual[self.leads[i]];
            coords[i] = c;
            if c != 0.0 {
                for &(idx, k) in terms {
                    residual[idx] -= c * k;
                }
            }
        }
        let scale = x.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let worst = residual.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if worst > LIE_RESIDUAL_TOL * scale {
            return Err(Error::NotLie { residual: worst });
        }
        Ok(coords)
    }

    /// Range of basis indices holding the words of length `k`.
    pub fn level_range(&self, k: usize) -> std::ops::Range<usize> {
        self.level_starts[k - 1]..self.level_starts[k]
    }
}

/// Log-signature coordinates on the Lyndon basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSignature {
    pub width: usize,
    pub depth: usize,
    pub coords: Vec<f64>,
}

impl LogSignature {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_lyndon_count(d: usize, k: usize) -> usize {
        let total = d.pow(k as u32);
        (0..total)
            .filter(|&code| {
                let mut w = vec![0; k];
                let mut c = code;
                for slot in w.iter_mut().rev() {
                    *slot = c % d;
                    c /= d;
                }
                is_lyndon(&w)
            })
            .count()
    }

    #[test]
    fn witt_counts_match_enumeration() {
        for d in 1..=7 {
            for k in 1..=5 {
                assert_eq!(witt_number(d, k), brute_force_lyndon_count(d, k), "d={d} k={k}");
            }
        }
    }

    #[test]
    fn basis_for_two_letters_degree_three() {
        let b = LyndonBasis::new(2, 3).unwrap();
        assert_eq!(b.labels(), vec!["1", "2", "12", "112", "122"]);
        assert_eq!(LyndonBasis::new(3, 2).unwrap().len(), 6);
    }

    #[test]
    fn generation_matches_table_sizes() {
        assert_eq!(LyndonBasis::new(7, 5).unwrap().len(), 4088);
        assert_eq!(logsig_dim(2, 5), 14);
        assert_eq!(logsig_dim(6, 4), 406);
        for m in 1..6 {
            assert_eq!(logsig_dim(1, m), 1);
        }
    }

    #[test]
    fn generated_words_are_lyndon_and_sorted() {
        let b = LyndonBasis::new(3, 4).unwrap();
        for w in b.words() {
            assert!(is_lyndon(w));
        }
        for pair in b.words().windows(2) {
            assert!((pair[0].len(), &pair[0]) < (pair[1].len(), &pair[1]));
        }
    }

    #[test]
    fn expansion_is_unitriangular() {
        let b = LyndonBasis::new(3, 4).unwrap();
        let s = b.shape();
        for (i, w) in b.words().iter().enumerate() {
            let lead = s.index_of(w);
            for &(idx, c) in b.expansion(i) {
                if idx == lead {
                    assert_eq!(c, 1.0);
                } else {
                    let other = s.word_at(idx);
                    assert!(other > *w, "support below leading word");
                    let mut a = other.clone();
                    let mut bb = w.clone();
                    a.sort();
                    bb.sort();
                    assert_eq!(a, bb, "support must be anagrams");
                }
            }
        }
    }

    #[test]
    fn bracket_of_two_letters() {
        let b = LyndonBasis::new(2, 2).unwrap();
        let s = b.shape();
        let e = b.expansion(2);
        assert_eq!(e, &[(s.index_of(&[0, 1]), 1.0), (s.index_of(&[1, 0]), -1.0)]);
    }

    #[test]
    fn project_rejects_non_lie_input() {
        let b = LyndonBasis::new(2, 2).unwrap();
        let mut t = TruncatedTensor::zeros(b.shape());
        t.coeffs_mut()[b.shape().index_of(&[0, 1])] = 1.0;
        assert!(matches!(b.project(&t), Err(Error::NotLie { .. })));
    }

    #[test]
    fn project_of_level_one_element() {
        let b = LyndonBasis::new(3, 3).unwrap();
        let v = [0.5, -1.0, 2.0];
        let x = TruncatedTensor::from_level1(b.shape(), &v).unwrap();
        let ls = b.project(&x).unwrap();
        assert_eq!(&ls.coords[..3], &v);
        assert!(ls.coords[3..].iter().all(|&c| c == 0.0));
    }
}
