//! Truncated tensor algebra `T^(M)(R^d)`.
//!
//! A [`TruncatedTensor`] stores one coefficient per word of length `0..=M`
//! over the alphabet `{0, .., d-1}`, densely, level-major and with words of a
//! level in lexicographic (base-`d`) order. Every operation silently drops the
//! levels above `M`.
//!
//! The slice kernels in [`kernels`] are shared with the autodiff engine, which
//! runs them row-wise over batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width `d` and truncation degree `M` of a tensor algebra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub width: usize,
    pub depth: usize,
}

impl TensorShape {
    pub fn new(width: usize, depth: usize) -> Result<Self> {
        if width == 0 || depth == 0 {
            return Err(Error::domain(format!(
                "tensor algebra needs width >= 1 and depth >= 1, got ({width}, {depth})"
            )));
        }
        Ok(Self { width, depth })
    }

    /// Number of words of length exactly `k`.
    pub fn level_len(&self, k: usize) -> usize {
        self.width.pow(k as u32)
    }

    /// Offset of level `k` in the flat coefficient array.
    pub fn level_offset(&self, k: usize) -> usize {
        if self.width == 1 {
            k
        } else {
            (self.width.pow(k as u32) - 1) / (self.width - 1)
        }
    }

    pub fn level_range(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.level_offset(k);
        start..start + self.level_len(k)
    }

    /// Total number of stored coefficients, level 0 included.
    pub fn len(&self) -> usize {
        self.level_offset(self.depth + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of a word (letters are 0-based).
    pub fn index_of(&self, word: &[usize]) -> usize {
        let within = word.iter().fold(0, |acc, &l| acc * self.width + l);
        self.level_offset(word.len()) + within
    }

    /// Inverse of [`TensorShape::index_of`].
    pub fn word_at(&self, index: usize) -> Vec<usize> {
        let mut k = 0;
        while self.level_offset(k + 1) <= index {
            k += 1;
        }
        let mut rem = index - self.level_offset(k);
        let mut word = vec![0; k];
        for slot in word.iter_mut().rev() {
            *slot = rem % self.width;
            rem /= self.width;
        }
        word
    }
}

/// Element of the truncated tensor algebra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct TruncatedTensor {
    shape: TensorShape,
    coeffs: Vec<f64>,
}

/// On-disk form: header `(d, M)` followed by the flat coefficient list.
#[derive(Serialize, Deserialize)]
struct RawTensor {
    width: usize,
    depth: usize,
    coeffs: Vec<f64>,
}

impl TryFrom<RawTensor> for TruncatedTensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        TruncatedTensor::from_coeffs(TensorShape::new(raw.width, raw.depth)?, raw.coeffs)
    }
}

impl From<TruncatedTensor> for RawTensor {
    fn from(t: TruncatedTensor) -> Self {
        RawTensor { width: t.shape.width, depth: t.shape.depth, coeffs: t.coeffs }
    }
}

impl TruncatedTensor {
    pub fn zeros(shape: TensorShape) -> Self {
        Self { shape, coeffs: vec![0.0; shape.len()] }
    }

    /// The multiplicative identity `(1, 0, 0, ..)`.
    pub fn unit(shape: TensorShape) -> Self {
        let mut t = Self::zeros(shape);
        t.coeffs[0] = 1.0;
        t
    }

    pub fn from_coeffs(shape: TensorShape, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != shape.len() {
            return Err(Error::shape(format!(
                "expected {} coefficients for (d={}, M={}), got {}",
                shape.len(),
                shape.width,
                shape.depth,
                coeffs.len()
            )));
        }
        Ok(Self { shape, coeffs })
    }

    /// Embeds a vector of `R^d` at level 1.
    pub fn from_level1(shape: TensorShape, v: &[f64]) -> Result<Self> {
        if v.len() != shape.width {
            return Err(Error::shape(format!("level-1 vector of length {} for width {}", v.len(), shape.width)));
        }
        let mut t = Self::zeros(shape);
        t.coeffs[1..=shape.width].copy_from_slice(v);
        Ok(t)
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

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.coeffs[self.shape.level_range(k)]
    }

    /// Coefficient of a word given with 0-based letters.
    pub fn coeff(&self, word: &[usize]) -> f64 {
        self.coeffs[self.shape.index_of(word)]
    }

    pub fn scalar(&self) -> f64 {
        self.coeffs[0]
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "tensor shapes differ: (d={}, M={}) vs (d={}, M={})",
                self.shape.width, self.shape.depth, other.shape.width, other.shape.depth
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Self { shape: self.shape, coeffs })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(Self { shape: self.shape, coeffs })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { shape: self.shape, coeffs: self.coeffs.iter().map(|c| c * factor).collect() }
    }

    /// Truncated tensor product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = vec![0.0; self.shape.len()];
        kernels::mul_acc(self.shape, &self.coeffs, &other.coeffs, &mut out);
        Ok(Self { shape: self.shape, coeffs: out })
    }

    /// `sum_{n=0}^{M} x^n / n!`; requires a zero scalar term.
    pub fn exp(&self) -> Result<Self> {
        if self.coeffs[0].abs() > 1e-12 {
            return Err(Error::domain(format!("tensor exp needs level-0 = 0, got {}", self.coeffs[0])));
        }
        Ok(Self { shape: self.shape, coeffs: kernels::exp(self.shape, &self.coeffs) })
    }

    /// `sum_{n=1}^{M} (-1)^(n-1)/n (a-1)^n`; requires a unit scalar term.
    pub fn log(&self) -> Result<Self> {
        if (self.coeffs[0] - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("tensor log needs level-0 = 1, got {}", self.coeffs[0])));
        }
        Ok(Self { shape: self.shape, coeffs: kernels::log(self.shape, &self.coeffs) })
    }

    /// Euclidean norm over levels `1..=M`.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs[1..].iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Largest absolute coefficient difference, level 0 included.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Slice kernels over flat coefficient arrays of a fixed [`TensorShape`].
pub mod kernels {
    use super::TensorShape;

    /// `out += a ⊗ b`, truncated.
    pub fn mul_acc(shape: TensorShape, a: &[f64], b: &[f64], out: &mut [f64]) {
        for k in 0..=shape.depth {
            let out_off = shape.level_offset(k);
            for i in 0..=k {
                let j = k - i;
                let a_lvl = &a[shape.level_range(i)];
                let b_lvl = &b[shape.level_range(j)];
                let nb = b_lvl.len();
                for (wa, &av) in a_lvl.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let dst = &mut out[out_off + wa * nb..out_off + (wa + 1) * nb];
                    for (o, &bv) in dst.iter_mut().zip(b_lvl) {
                        *o += av * bv;
                    }
                }
            }
        }
    }

    /// Reverse-mode adjoint of [`mul_acc`] given the upstream gradient `g`.
    pub fn mul_backward(
        shape: TensorShape,
        a: &[f64],
        b: &[f64],
        g: &[f64],
        mut ga: Option<&mut [f64]>,
        mut gb: Option<&mut [f64]>,
    ) {
        for k in 0..=shape.depth {
            let g_off = shape.level_offset(k);
            for i in 0..=k {
                let j = k - i;
                let ra = shape.level_range(i);
                let rb = shape.level_range(j);
                let nb = rb.len();
                for wa in 0..ra.len() {
                    let g_row = &g[g_off + wa * nb..g_off + (wa + 1) * nb];
                    if let Some(ga) = ga.as_deref_mut() {
                        let s: f64 = g_row.iter().zip(&b[rb.clone()]).map(|(x, y)| x * y).sum();
                        ga[ra.start + wa] += s;
                    }
                    if let Some(gb) = gb.as_deref_mut() {
                        let av = a[ra.start + wa];
                        if av != 0.0 {
                            for (dst, &gv) in gb[rb.clone()].iter_mut().zip(g_row) {
                                *dst += av * gv;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn mul(shape: TensorShape, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; shape.len()];
        mul_acc(shape, a, b, &mut out);
        out
    }

    /// Truncated exponential by Horner's rule: `1 + x(1 + x/2(1 + ..))`.
    pub fn exp(shape: TensorShape, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; shape.len()];
        acc[0] = 1.0;
        for n in (1..=shape.depth).rev() {
            let mut next = mul(shape, x, &acc);
            let inv = 1.0 / n as f64;
            next.iter_mut().for_each(|c| *c *= inv);
            next[0] += 1.0;
            acc = next;
        }
        acc
    }

    /// Truncated logarithm of `a` with `a_0 = 1`.
    pub fn log(shape: TensorShape, a: &[f64]) -> Vec<f64> {
        let mut t = a.to_vec();
        t[0] -= 1.0;
        let coeff = |n: usize| if n % 2 == 1 { 1.0 / n as f64 } else { -1.0 / n as f64 };
        let mut acc = vec![0.0; shape.len()];
        acc[0] = coeff(shape.depth);
        for n in (1..shape.depth).rev() {
            acc = mul(shape, &t, &acc);
            acc[0] += coeff(n);
        }
        mul(shape, &t, &acc)
    }

    /// `out = s ⊗ exp(delta)` where `delta` is a level-1 vector.
    ///
    /// Level `k` of the result is `sum_j s_{k-j} ⊗ delta^j / j!`, evaluated by
    /// Horner's rule so each level costs `sum_{i<=k} d^i` multiply-adds.
    pub fn chen_exp_step(shape: TensorShape, s: &[f64], delta: &[f64], out: &mut [f64]) {
        let d = shape.width;
        let mut cur = vec![0.0; shape.level_len(shape.depth)];
        let mut nxt = vec![0.0; shape.level_len(shape.depth)];
        out[0] = s[0];
        for k in 1..=shape.depth {
            cur[0] = s[0];
            for i in 1..=k {
                let c = 1.0 / (k - i + 1) as f64;
                let s_lvl = &s[shape.level_range(i)];
                let prev_len = shape.level_len(i - 1);
                for w in 0..prev_len {
                    let rw = cur[w] * c;
                    for a in 0..d {
                        nxt[w * d + a] = s_lvl[w * d + a] + rw * delta[a];
                    }
                }
                std::mem::swap(&mut cur, &mut nxt);
            }
            out[shape.level_range(k)].copy_from_slice(&cur[..shape.level_len(k)]);
        }
    }

    /// Adjoint of [`chen_exp_step`]: accumulates into `gs` and `gdelta`.
    pub fn chen_exp_step_backward(
        shape: TensorShape,
        s: &[f64],
        delta: &[f64],
        g: &[f64],
        mut gs: Option<&mut [f64]>,
        gdelta: &mut [f64],
    ) {
        let d = shape.width;
        // r[i] holds the Horner partial at stage i for the current level.
        let mut r: Vec<Vec<f64>> = (0..=shape.depth).map(|i| vec![0.0; shape.level_len(i)]).collect();
        let mut gr = vec![0.0; shape.level_len(shape.depth)];
        let mut gprev = vec![0.0; shape.level_len(shape.depth)];
        if let Some(gs) = gs.as_deref_mut() {
            gs[0] += g[0];
        }
        for k in 1..=shape.depth {
            r[0][0] = s[0];
            for i in 1..=k {
                let c = 1.0 / (k - i + 1) as f64;
                let s_lvl = &s[shape.level_range(i)];
                let (lo, hi) = r.split_at_mut(i);
                let prev = &lo[i - 1];
                let dst = &mut hi[0];
                for (w, &pw) in prev.iter().enumerate() {
                    let rw = pw * c;
                    for a in 0..d {
                        dst[w * d + a] = s_lvl[w * d + a] + rw * delta[a];
                    }
                }
            }
            let lk = shape.level_len(k);
            gr[..lk].copy_from_slice(&g[shape.level_range(k)]);
            for i in (1..=k).rev() {
                let c = 1.0 / (k - i + 1) as f64;
                let li = shape.level_len(i);
                if let Some(gs) = gs.as_deref_mut() {
                    let start = shape.level_offset(i);
                    for (dst, &v) in gs[start..start + li].iter_mut().zip(&gr[..li]) {
                        *dst += v;
                    }
                }
                let prev = &r[i - 1];
                for (w, &pw) in prev.iter().enumerate() {
                    let row = &gr[w * d..w * d + d];
                    let mut acc = 0.0;
                    for a in 0..d {
                        acc += row[a] * delta[a];
                        gdelta[a] += c * row[a] * pw;
                    }
                    gprev[w] = c * acc;
                }
                let lp = shape.level_len(i - 1);
                gr[..lp].copy_from_slice(&gprev[..lp]);
            }
            if let Some(gs) = gs.as_deref_mut() {
                gs[0] += gr[0];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: usize, m: usize) -> TensorShape {
        TensorShape::new(d, m).unwrap()
    }

    /// Graded convolution written directly over word splits.
    fn brute_mul(s: TensorShape, a: &TruncatedTensor, b: &TruncatedTensor) -> TruncatedTensor {
        let mut out = TruncatedTensor::zeros(s);
        for idx in 0..s.len() {
            let w = s.word_at(idx);
            let mut acc = 0.0;
            for split in 0..=w.len() {
                acc += a.coeff(&w[..split]) * b.coeff(&w[split..]);
            }
            out.coeffs_mut()[idx] = acc;
        }
        out
    }

    fn pseudo_random(s: TensorShape, seed: u64, scalar: f64) -> TruncatedTensor {
        let mut state = seed;
        let coeffs = (0..s.len())
            .map(|i| {
                if i == 0 {
                    return scalar;
                }
                state = crate::rng::mix(state, i as u64);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        TruncatedTensor::from_coeffs(s, coeffs).unwrap()
    }

    #[test]
    fn storage_length() {
        assert_eq!(shape(2, 3).len(), 15);
        assert_eq!(shape(1, 4).len(), 5);
        assert_eq!(shape(3, 2).len(), 13);
        for idx in 0..shape(3, 3).len() {
            let s = shape(3, 3);
            assert_eq!(s.index_of(&s.word_at(idx)), idx);
        }
    }

    #[test]
    fn unit_is_identity() {
        let s = shape(3, 3);
        let b = pseudo_random(s, 7, 0.3);
        let u = TruncatedTensor::unit(s);
        assert_eq!(u.mul(&b).unwrap(), b);
        assert_eq!(b.mul(&u).unwrap(), b);
    }

    #[test]
    fn scalar_polynomial_product() {
        let s = shape(1, 2);
        let a = TruncatedTensor::from_coeffs(s, vec![1.0, 2.0, 0.0]).unwrap();
        let b = TruncatedTensor::from_coeffs(s, vec![1.0, 3.0, 0.0]).unwrap();
        assert_eq!(a.mul(&b).unwrap().coeffs(), &[1.0, 5.0, 6.0]);
    }

    #[test]
    fn product_matches_word_split_convolution() {
        let s = shape(2, 2);
        let a = TruncatedTensor::from_level1(s, &[1.0, 0.0]).unwrap().exp().unwrap();
        let b = TruncatedTensor::from_level1(s, &[0.0, 1.0]).unwrap().exp().unwrap();
        let ab = a.mul(&b).unwrap();
        assert_eq!(ab.coeff(&[0, 1]), 1.0);
        assert!(ab.max_abs_diff(&brute_mul(s, &a, &b)) < 1e-15);

        let s = shape(3, 3);
        let x = pseudo_random(s, 1, 0.7);
        let y = pseudo_random(s, 2, -0.2);
        assert!(x.mul(&y).unwrap().max_abs_diff(&brute_mul(s, &x, &y)) < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = TruncatedTensor::unit(shape(2, 2));
        let b = TruncatedTensor::unit(shape(2, 3));
        assert!(matches!(a.mul(&b), Err(Error::Shape(_))));
        assert!(TruncatedTensor::from_coeffs(shape(2, 2), vec![0.0; 6]).is_err());
    }

    #[test]
    fn exp_of_zero_and_scalar_series() {
        let s = shape(2, 3);
        assert_eq!(TruncatedTensor::zeros(s).exp().unwrap(), TruncatedTensor::unit(s));
        let s = shape(1, 3);
        let a = 0.7;
        let e = TruncatedTensor::from_coeffs(s, vec![0.0, a, 0.0, 0.0]).unwrap().exp().unwrap();
        let want = [1.0, a, a * a / 2.0, a * a * a / 6.0];
        for (got, w) in e.coeffs().iter().zip(want) {
            assert!((got - w).abs() < 1e-15);
        }
    }

    #[test]
    fn exp_log_domain_errors() {
        let s = shape(2, 2);
        assert!(matches!(TruncatedTensor::unit(s).exp(), Err(Error::Domain(_))));
        assert!(matches!(TruncatedTensor::zeros(s).log(), Err(Error::Domain(_))));
    }

    #[test]
    fn log_of_unit_and_scalar_exp() {
        let s = shape(3, 3);
        assert_eq!(TruncatedTensor::unit(s).log().unwrap(), TruncatedTensor::zeros(s));
        let s = shape(1, 2);
        let u = 0.4;
        let l = TruncatedTensor::from_coeffs(s, vec![1.0, u, u * u / 2.0]).unwrap().log().unwrap();
        assert!((l.coeffs()[1] - u).abs() < 1e-15);
        assert!(l.coeffs()[2].abs() < 1e-15);
    }

    #[test]
    fn norm_excludes_scalar() {
        let s = shape(1, 1);
        let t = TruncatedTensor::from_coeffs(s, vec![5.0, 3.0]).unwrap();
        assert_eq!(t.l2_norm(), 3.0);
        assert_eq!(TruncatedTensor::zeros(shape(3, 2)).l2_norm(), 0.0);
        let r = pseudo_random(shape(2, 4), 9, 1.0);
        let direct = r.coeffs()[1..].iter().fold(0.0, |acc, c| acc + c * c).sqrt();
        assert!((r.l2_norm() - direct).abs() < 1e-12);
    }

    #[test]
    fn chen_step_equals_product_with_exponential() {
        let s = shape(3, 4);
        let base = pseudo_random(s, 4, 1.0);
        let delta = [0.3, -0.8, 0.5];
        let mut out = vec![0.0; s.len()];
        kernels::chen_exp_step(s, base.coeffs(), &delta, &mut out);
        let e = TruncatedTensor::from_level1(s, &delta).unwrap().exp().unwrap();
        let want = base.mul(&e).unwrap();
        let got = TruncatedTensor::from_coeffs(s, out).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn serde_round_trip_validates_length() {
        let t = pseudo_random(shape(2, 3), 3, 1.0);
        let json = serde_json::to_string(&t).unwrap();
        let back: TruncatedTensor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let bad = r#"{"width":2,"depth":3,"coeffs":[1.0,2.0]}"#;
        assert!(serde_json::from_str::<TruncatedTensor>(bad).is_err());
    }
}
