//! Signatures of piecewise-linear paths, expected signatures and the Sig-W1
//! distance between path laws.

use std::fs;
use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{LogSignature, LyndonBasis};
use crate::path::{AugmentationPipeline, Path};
use crate::tensor::{kernels, TensorShape, TruncatedTensor};

pub const STATS_FORMAT: &str = "sigwgan-dataset-stats";
pub const STATS_FORMAT_VERSION: u32 = 1;

/// Truncated signature: the Chen product of the exponentials of the
/// segment increments, left to right.
pub fn signature(p: &Path, depth: usize) -> Result<TruncatedTensor> {
    if p.len() < 2 {
        return Err(Error::domain("signature of a path with fewer than 2 points"));
    }
    let shape = TensorShape::new(p.width(), depth)?;
    let coeffs = signature_coeffs(shape, p);
    TruncatedTensor::from_coeffs(shape, coeffs)
}

pub(crate) fn signature_coeffs(shape: TensorShape, p: &Path) -> Vec<f64> {
    let mut cur = vec![0.0; shape.len()];
    cur[0] = 1.0;
    let mut next = vec![0.0; shape.len()];
    for delta in p.increments() {
        kernels::chen_exp_step(shape, &cur, &delta, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Lyndon coordinates of `log(signature(p))`.
pub fn log_signature(p: &Path, basis: &LyndonBasis) -> Result<LogSignature> {
    if basis.width() != p.width() {
        return Err(Error::shape(format!("basis width {} for a path of width {}", basis.width(), p.width())));
    }
    let sig = signature(p, basis.depth())?;
    basis.project(&sig.log()?)
}

/// Expected truncated signature of a sample set under an augmentation
/// pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean_sig: TruncatedTensor,
    pub n: usize,
    pub pipeline: String,
}

impl DatasetStats {
    pub fn width(&self) -> usize {
        self.mean_sig.width()
    }

    pub fn depth(&self) -> usize {
        self.mean_sig.depth()
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        let doc = StatsFile { format: STATS_FORMAT.into(), version: STATS_FORMAT_VERSION, stats: self.clone() };
        fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let doc: StatsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if doc.format != STATS_FORMAT || doc.version != STATS_FORMAT_VERSION {
            return Err(Error::data(format!(
                "{}: unsupported stats file {} v{}",
                path.display(),
                doc.format,
                doc.version
            )));
        }
        if doc.stats.n == 0 || (doc.stats.mean_sig.scalar() - 1.0).abs() > 1e-12 {
            return Err(Error::data(format!("{}: malformed dataset statistics", path.display())));
        }
        Ok(doc.stats)
    }

    fn check_comparable(&self, other: &Self) -> Result<()> {
        if self.pipeline != other.pipeline {
            return Err(Error::IncomparableStats(format!(
                "pipelines differ: {:?} vs {:?}",
                self.pipeline, other.pipeline
            )));
        }
        if self.mean_sig.shape() != other.mean_sig.shape() {
            return Err(Error::IncomparableStats(format!(
                "(d, M) differ: ({}, {}) vs ({}, {})",
                self.width(),
                self.depth(),
                other.width(),
                other.depth()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    stats: DatasetStats,
}

/// Sums `f(i)` for `i` in `range` by a fixed binary tree, so the result does
/// not depend on how rayon schedules the halves.
pub(crate) fn pairwise_sum<F>(range: std::ops::Range<usize>, len: usize, f: &F) -> Vec<f64>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    if range.len() <= 4 {
        let mut acc = vec![0.0; len];
        for i in range {
            for (a, v) in acc.iter_mut().zip(f(i)) {
                *a += v;
            }
        }
        return acc;
    }
    let mid = range.start + range.len() / 2;
    let (mut left, right) =
        rayon::join(|| pairwise_sum(range.start..mid, len, f), || pairwise_sum(mid..range.end, len, f));
    for (a, b) in left.iter_mut().zip(right) {
        *a += b;
    }
    left
}

/// Mean signature of the augmented sample paths.
pub fn expected_signature(batch: &[Path], depth: usize, pipeline: &AugmentationPipeline) -> Result<DatasetStats> {
    let first = batch.first().ok_or_else(|| Error::domain("expected signature of an empty batch"))?;
    if batch.iter().any(|p| p.width() != first.width()) {
        return Err(Error::shape("batch paths have different widths"));
    }
    let augmented: Vec<Path> = batch.par_iter().map(|p| pipeline.apply(p)).collect::<Result<_>>()?;
    if augmented.iter().any(|p| p.len() < 2) {
        return Err(Error::domain("signature of a path with fewer than 2 points"));
    }
    let shape = TensorShape::new(augmented[0].width(), depth)?;
    let sum = pairwise_sum(0..augmented.len(), shape.len(), &|i| signature_coeffs(shape, &augmented[i]));
    let n = batch.len();
    let mean: Vec<f64> = sum.into_iter().map(|s| s / n as f64).collect();
    Ok(DatasetStats { mean_sig: TruncatedTensor::from_coeffs(shape, mean)?, n, pipeline: pipeline.fingerprint() })
}

/// `| E_mu[S_M] - E_nu[S_M] |`, Euclidean over levels `1..=M`.
pub fn sig_w1(a: &DatasetStats, b: &DatasetStats) -> Result<f64> {
    sig_w1_weighted(a, b, None)
}

/// Sig-W1 with an optional per-level weight `level_weights[k-1]` on level
/// `k`. `None` is the unweighted distance.
pub fn sig_w1_weighted(a: &DatasetStats, b: &DatasetStats, level_weights: Option<&[f64]>) -> Result<f64> {
    a.check_comparable(b)?;
    let diff = a.mean_sig.sub(&b.mean_sig)?;
    match level_weights {
        None => Ok(diff.l2_norm()),
        Some(w) => {
            if w.len() != a.depth() {
                return Err(Error::config(format!("{} level weights for depth {}", w.len(), a.depth())));
            }
            let s: f64 = (1..=a.depth())
                .map(|k| w[k - 1] * w[k - 1] * diff.level(k).iter().map(|c| c * c).sum::<f64>())
                .sum();
            Ok(s.sqrt())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l_path() -> Path {
        Path::new(vec![0.0, 1.0, 2.0], vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap()
    }

    /// Iterated integrals of a piecewise-linear path by direct nesting:
    /// level-2 `S^{ij} = sum_{a<b} dx_a^i dx_b^j + sum_a dx_a^i dx_a^j / 2`.
    fn brute_level2(p: &Path) -> Vec<Vec<f64>> {
        let inc: Vec<Vec<f64>> = p.increments().collect();
        let d = p.width();
        let mut s = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                for a in 0..inc.len() {
                    for b in a + 1..inc.len() {
                        s[i][j] += inc[a][i] * inc[b][j];
                    }
                    s[i][j] += inc[a][i] * inc[a][j] / 2.0;
                }
            }
        }
        s
    }

    #[test]
    fn single_segment_is_exponential() {
        let p = Path::new(vec![0.0, 1.0], vec![vec![0.0, 0.0], vec![0.5, -2.0]]).unwrap();
        let s = signature(&p, 3).unwrap();
        let e = TruncatedTensor::from_level1(s.shape(), &[0.5, -2.0]).unwrap().exp().unwrap();
        assert!(s.max_abs_diff(&e) < 1e-15);
    }

    #[test]
    fn l_shaped_path_level_two() {
        let s = signature(&l_path(), 2).unwrap();
        assert!((s.coeff(&[0, 1]) - 1.0).abs() < 1e-15);
        assert!(s.coeff(&[1, 0]).abs() < 1e-15);
        assert!((s.coeff(&[0, 0]) - 0.5).abs() < 1e-15);
        assert!((s.coeff(&[1, 1]) - 0.5).abs() < 1e-15);
        let brute = brute_level2(&l_path());
        for i in 0..2 {
            for j in 0..2 {
                assert!((s.coeff(&[i, j]) - brute[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn l_shaped_log_signature() {
        let basis = LyndonBasis::new(2, 2).unwrap();
        let ls = log_signature(&l_path(), &basis).unwrap();
        let want = [1.0, 1.0, 0.5];
        for (g, w) in ls.coords.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert_eq!(log_signature(&l_path(), &LyndonBasis::new(2, 3).unwrap()).unwrap().len(), 5);
    }

    #[test]
    fn degenerate_path_is_an_error() {
        let p = Path::new(vec![0.0], vec![vec![1.0]]).unwrap();
        assert!(matches!(signature(&p, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn expected_signature_of_single_and_duplicated() {
        let p = l_path();
        let pipe = AugmentationPipeline::identity();
        let one = expected_signature(std::slice::from_ref(&p), 3, &pipe).unwrap();
        assert_eq!(one.mean_sig, signature(&p, 3).unwrap());
        let two = expected_signature(&[p.clone(), p.clone()], 3, &pipe).unwrap();
        assert!(two.mean_sig.max_abs_diff(&one.mean_sig) < 1e-15);
        assert!(expected_signature(&[], 3, &pipe).is_err());
    }

    #[test]
    fn sig_w1_requires_same_pipeline() {
        let p = l_path();
        let a = expected_signature(std::slice::from_ref(&p), 2, &AugmentationPipeline::identity()).unwrap();
        let b = expected_signature(std::slice::from_ref(&p), 2, &"time".parse().unwrap()).unwrap();
        assert!(matches!(sig_w1(&a, &b), Err(Error::IncomparableStats(_))));
        assert_eq!(sig_w1(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn weighted_distance_with_unit_weights_is_plain() {
        let pipe = AugmentationPipeline::identity();
        let a = expected_signature(&[l_path()], 3, &pipe).unwrap();
        let b = expected_signature(&[l_path().reversed()], 3, &pipe).unwrap();
        let plain = sig_w1(&a, &b).unwrap();
        let weighted = sig_w1_weighted(&a, &b, Some(&[1.0, 1.0, 1.0])).unwrap();
        assert!((plain - weighted).abs() < 1e-15);
        assert!(sig_w1_weighted(&a, &b, Some(&[1.0])).is_err());
    }

    #[test]
    fn stats_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("stats.json");
        let s = expected_signature(&[l_path(), l_path().reversed()], 3, &"time".parse().unwrap()).unwrap();
        s.save(&f).unwrap();
        assert_eq!(DatasetStats::load(&f).unwrap(), s);
    }
}
