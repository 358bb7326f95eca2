//! Test metrics comparing a real and a generated sample set: Sig-W1, the
//! average marginal earth mover's distance, the correlation metric and the
//! covariance error grid.
//!
//! Marginals are indexed channel-major: variable `i * T + t` is channel `i`
//! at stamp `t`.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::generators::{GeneratorModel, NoiseSource};
use crate::market::{simulate_gbm, GbmSpec};
use crate::path::{AugmentationPipeline, Path};
use crate::rng::mix;
use crate::signature::{expected_signature, sig_w1};

/// Variance below which a marginal is treated as constant.
const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Samples as rows, marginals as columns (channel-major).
fn marginals(batch: &[Path]) -> Vec<Vec<f64>> {
    let (t, d) = (batch[0].len(), batch[0].width());
    let mut cols = vec![Vec::with_capacity(batch.len()); t * d];
    for p in batch {
        for (s, pt) in p.points().enumerate() {
            for (i, &v) in pt.iter().enumerate() {
                cols[i * t + s].push(v);
            }
        }
    }
    cols
}

/// Brings `fake` onto the stamps of `real`, interpolating linearly when they
/// differ, and checks both batches are non-empty and homogeneous.
/// Per-(stamp, channel) sample columns.
type Columns = Vec<Vec<f64>>;

fn align(real: &[Path], fake: &[Path]) -> Result<(Columns, Columns)> {
    let (Some(r0), Some(f0)) = (real.first(), fake.first()) else {
        return Err(Error::domain("metrics need non-empty batches"));
    };
    for (name, batch) in [("real", real), ("fake", fake)] {
        let first = &batch[0];
        if batch.iter().any(|p| p.width() != first.width() || p.times() != first.times()) {
            return Err(Error::shape(format!("{name} batch mixes widths or stamps")));
        }
    }
    if r0.width() != f0.width() {
        return Err(Error::shape(format!("real width {} vs fake width {}", r0.width(), f0.width())));
    }
    if r0.times() == f0.times() {
        return Ok((marginals(real), marginals(fake)));
    }
    let resampled = fake.iter().map(|p| p.resample(r0.times())).collect::<Result<Vec<_>>>()?;
    Ok((marginals(real), marginals(&resampled)))
}

/// Exact 1-d Wasserstein-1 distance between two empirical measures,
/// `∫ |F(x) - G(x)| dx` over the merged support.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("W1 of an empty sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        prev = x;
    }
    Ok(total)
}

/// Mean over all (channel, stamp) marginals of their 1-d W1 distance.
pub fn marginal_emd(real: &[Path], fake: &[Path]) -> Result<f64> {
    let (r, f) = align(real, fake)?;
    let mut sum = 0.0;
    for (a, b) in r.iter().zip(&f) {
        sum += wasserstein_1d(a, b)?;
    }
    Ok(sum / r.len() as f64)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample covariance matrix of the marginals (`n - 1` normalisation, `n`
/// for a single sample).
fn covariance(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols[0].len();
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let centred: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = mean(c);
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    let k = cols.len();
    let mut cov = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let s = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>() / denom;
            cov[i][j] = s;
            cov[j][i] = s;
        }
    }
    cov
}

fn correlation(cols: &[Vec<f64>], label: &str) -> Vec<Vec<f64>> {
    let cov = covariance(cols);
    let k = cols.len();
    let degenerate: Vec<bool> = (0..k).map(|i| cov[i][i] < DEGENERATE_VARIANCE).collect();
    if degenerate.iter().any(|&d| d) {
        log::warn!(
            "{label} batch: {} constant marginals, their correlations are set to 0",
            degenerate.iter().filter(|&&d| d).count()
        );
    }
    let mut rho = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if !degenerate[i] && !degenerate[j] {
                rho[i][j] = cov[i][j] / (cov[i][i] * cov[j][j]).sqrt();
            }
        }
    }
    rho
}

/// `Σ_{s,t} Σ_{i,j} |ρ(X_s^i, X_t^j) - ρ(Y_s^i, Y_t^j)|`.
pub fn correlation_metric(real: &[Path], fake: &[Path]) -> Result<f64> {
    let (r, f) = align(real, fake)?;
    let (cr, cf) = (correlation(&r, "real"), correlation(&f, "fake"));
    Ok(cr.iter().zip(&cf).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).sum())
}

/// `|cov_real - cov_fake|` cell by cell.
pub fn covariance_error_grid(real: &[Path], fake: &[Path]) -> Result<Vec<Vec<f64>>> {
    let (r, f) = align(real, fake)?;
    let (cr, cf) = (covariance(&r), covariance(&f));
    Ok(cr.iter().zip(&cf).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeta {
    pub depth: usize,
    pub pipeline: String,
    pub n_real: usize,
    pub n_fake: usize,
    pub seed: u64,
    pub n_stamps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sig_w1: f64,
    pub marginal_emd: f64,
    pub correlation_metric: f64,
    pub covariance_error: Vec<Vec<f64>>,
    pub meta: MetricMeta,
}

impl MetricReport {
    /// All three metrics and the grid; Sig-W1 under `pipeline`, the rest on
    /// the raw series.
    pub fn compare(
        real: &[Path],
        fake: &[Path],
        depth: usize,
        pipeline: &AugmentationPipeline,
        seed: u64,
    ) -> Result<Self> {
        let (rs, fs) = (expected_signature(real, depth, pipeline)?, expected_signature(fake, depth, pipeline)?);
        Ok(Self {
            sig_w1: sig_w1(&rs, &fs)?,
            marginal_emd: marginal_emd(real, fake)?,
            correlation_metric: correlation_metric(real, fake)?,
            covariance_error: covariance_error_grid(real, fake)?,
            meta: MetricMeta {
                depth,
                pipeline: pipeline.fingerprint(),
                n_real: real.len(),
                n_fake: fake.len(),
                seed,
                n_stamps: real[0].len(),
            },
        })
    }

    pub fn write_json(&self, path: &FsPath) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// The covariance error grid as a headerless CSV matrix.
    pub fn write_grid_csv(&self, path: &FsPath) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.covariance_error {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(path, &bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub depth: usize,
    pub pipeline: AugmentationPipeline,
    /// Generated sample count; defaults to the real sample count.
    #[serde(default)]
    pub n_fake: Option<usize>,
    pub seed: u64,
    /// Noise sub-steps per output interval.
    #[serde(default = "default_refine")]
    pub refine: usize,
}

fn default_refine() -> usize {
    10
}

/// Generates a fake batch on the stamps of `real` and compares. Evaluating
/// on stamps other than the training ones is how frequency robustness is
/// probed.
pub fn evaluate(model: &GeneratorModel, real: &[Path], cfg: &EvalConfig) -> Result<MetricReport> {
    let first = real.first().ok_or_else(|| Error::domain("empty real batch"))?;
    if first.width() != model.output_dim() {
        return Err(Error::shape(format!(
            "real data has {} channels, model outputs {}",
            first.width(),
            model.output_dim()
        )));
    }
    let stamps = first.times().to_vec();
    let n_fake = cfg.n_fake.unwrap_or(real.len());
    let src = NoiseSource::new(cfg.seed, model.noise_dim(), cfg.refine);
    let fake = model.sample(&src, n_fake, &stamps)?;
    MetricReport::compare(real, &fake, cfg.depth, &cfg.pipeline, cfg.seed)
}

/// Two 1-d GBM laws from `X_0 = 1` sharing volatility, one with drift
/// `theta1` and one per entry of `theta2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSweep {
    pub theta1: f64,
    pub theta2: Vec<f64>,
    pub sigma: f64,
    pub depth: usize,
    pub pipeline: AugmentationPipeline,
    pub n_samples: usize,
    pub n_stamps: usize,
    pub dt: f64,
}

impl DriftSweep {
    /// Sig-W1 between the reference law and each alternative. Every law gets
    /// its own random stream.
    pub fn run(&self, seed: u64) -> Result<Vec<f64>> {
        let law = |theta: f64, salt: u64| -> Result<crate::signature::DatasetStats> {
            let spec = GbmSpec::uniform(1, theta, self.sigma, 0.0, self.dt, self.n_stamps);
            let paths = simulate_gbm(&spec, self.n_samples, mix(seed, salt))?;
            expected_signature(&paths, self.depth, &self.pipeline)
        };
        let reference = law(self.theta1, 0)?;
        self.theta2
            .iter()
            .enumerate()
            .map(|(j, &th)| sig_w1(&reference, &law(th, j as u64 + 1)?))
            .collect()
    }
}
