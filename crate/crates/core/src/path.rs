//! Time-stamped streams and the augmentations applied before taking
//! signatures.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `d`-dimensional stream observed at strictly increasing time stamps and
/// read as its piecewise-linear interpolant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    times: Vec<f64>,
    width: usize,
    /// Row-major `(times.len(), width)`.
    values: Vec<f64>,
}

impl Path {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        let width = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != width) {
            return Err(Error::shape("path points have inconsistent widths"));
        }
        Self::from_flat(times, width, points.concat())
    }

    pub fn from_flat(times: Vec<f64>, width: usize, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::domain("a path needs at least one point"));
        }
        if width == 0 {
            return Err(Error::shape("path width must be positive"));
        }
        if values.len() != times.len() * width {
            return Err(Error::shape(format!(
                "{} values for {} stamps of width {width}",
                values.len(),
                times.len()
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::domain("path contains non-finite entries"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("path time stamps must be strictly increasing"));
        }
        Ok(Self { times, width, values })
    }

    /// Builds a path from one column of values per channel.
    pub fn from_columns(times: Vec<f64>, columns: &[Vec<f64>]) -> Result<Self> {
        let n = times.len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::shape("column lengths differ from stamp count"));
        }
        let values = (0..n).flat_map(|i| columns.iter().map(move |c| c[i])).collect();
        Self::from_flat(times, columns.len(), values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of stamps.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width)
    }

    pub fn increments(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.values
            .chunks_exact(self.width)
            .zip(self.values.chunks_exact(self.width).skip(1))
            .map(|(a, b)| b.iter().zip(a).map(|(y, x)| y - x).collect())
    }

    /// Linear interpolation; stamps outside `[t_0, t_N]` are a domain error.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        let (t0, tn) = (self.times[0], *self.times.last().unwrap());
        if t < t0 || t > tn {
            return Err(Error::domain(format!("time {t} outside path domain [{t0}, {tn}]")));
        }
        let hi = self.times.partition_point(|&s| s < t);
        if self.times[hi] == t {
            return Ok(self.point(hi).to_vec());
        }
        let lo = hi - 1;
        let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        Ok(self.point(lo).iter().zip(self.point(hi)).map(|(a, b)| a + w * (b - a)).collect())
    }

    /// The path on `[s, t]`: interior stamps kept, endpoints interpolated.
    pub fn restrict(&self, s: f64, t: f64) -> Result<Path> {
        let (t0, tn) = (self.times[0], *self.times.last().unwrap());
        if !(s < t) || s < t0 || t > tn {
            return Err(Error::domain(format!("cannot restrict [{t0}, {tn}] to [{s}, {t}]")));
        }
        let mut times = vec![s];
        let mut values = self.value_at(s)?;
        for (i, &ti) in self.times.iter().enumerate() {
            if ti > s && ti < t {
                times.push(ti);
                values.extend_from_slice(self.point(i));
            }
        }
        times.push(t);
        values.extend(self.value_at(t)?);
        Path::from_flat(times, self.width, values)
    }

    /// The same trajectory run backwards over the same time span.
    pub fn reversed(&self) -> Path {
        let (t0, tn) = (self.times[0], *self.times.last().unwrap());
        let times = self.times.iter().rev().map(|t| t0 + tn - t).collect();
        let values = self.values.chunks_exact(self.width).rev().flatten().copied().collect();
        Path { times, width: self.width, values }
    }

    /// Linear interpolation onto new stamps inside the current domain.
    pub fn resample(&self, stamps: &[f64]) -> Result<Path> {
        let mut values = Vec::with_capacity(stamps.len() * self.width);
        for &t in stamps {
            values.extend(self.value_at(t)?);
        }
        Path::from_flat(stamps.to_vec(), self.width, values)
    }

    /// Keeps the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Path> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.width) {
            return Err(Error::shape(format!("channel {bad} out of range for width {}", self.width)));
        }
        let values = self.points().flat_map(|p| channels.iter().map(move |&c| p[c])).collect();
        Path::from_flat(self.times.clone(), channels.len(), values)
    }

    /// Euclidean length of the interpolant (its 1-variation).
    pub fn length(&self) -> f64 {
        self.increments().map(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt()).sum()
    }

    /// `(sup over sub-partitions of sum |X_{t_{j+1}} - X_{t_j}|^q)^{1/q}` over
    /// the stored stamps, by dynamic programming.
    pub fn p_variation(&self, q: f64) -> Result<f64> {
        if !(q >= 1.0) {
            return Err(Error::domain(format!("p-variation needs q >= 1, got {q}")));
        }
        let n = self.len();
        let dist = |i: usize, j: usize| {
            self.point(i).iter().zip(self.point(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        // best[j]: largest sum over partitions of stamps 0..=j ending at j.
        let mut best = vec![0.0_f64; n];
        for j in 1..n {
            best[j] = (0..j).map(|i| best[i] + dist(i, j).powf(q)).fold(0.0, f64::max);
        }
        Ok(best[n - 1].powf(1.0 / q))
    }

    fn prepend(&self, point: &[f64]) -> Path {
        let step = if self.len() > 1 { self.times[1] - self.times[0] } else { 1.0 };
        let mut times = Vec::with_capacity(self.len() + 1);
        times.push(self.times[0] - step);
        times.extend_from_slice(&self.times);
        let mut values = point.to_vec();
        values.extend_from_slice(&self.values);
        Path { times, width: self.width, values }
    }
}

/// One stage of an [`AugmentationPipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Augmentation {
    /// Prepends a channel carrying the time stamp.
    Time,
    /// Prepends the origin with indicator 0 and appends an indicator channel
    /// equal to 1 on the original points.
    Visibility,
    /// Prepends the zero point at a new initial stamp.
    Basepoint,
    /// Interleaves lead and lag copies: width `2d`, length `2N+1`.
    LeadLag,
    /// Running sums, starting from a prepended 0.
    CumulativeSum,
    /// Multiplies channel `i` by `factors[i]`.
    Scale { factors: Vec<f64> },
    /// Adds `offsets[i]` to channel `i`.
    Shift { offsets: Vec<f64> },
}

impl Augmentation {
    pub fn output_width(&self, width: usize) -> Result<usize> {
        Ok(match self {
            Augmentation::Time | Augmentation::Visibility => width + 1,
            Augmentation::LeadLag => 2 * width,
            Augmentation::Basepoint | Augmentation::CumulativeSum => width,
            Augmentation::Scale { factors: c } | Augmentation::Shift { offsets: c } => {
                if c.len() != width {
                    return Err(Error::config(format!("{self} has {} entries for a path of width {width}", c.len())));
                }
                width
            }
        })
    }

    pub fn output_len(&self, len: usize) -> usize {
        match self {
            Augmentation::Time | Augmentation::Scale { .. } | Augmentation::Shift { .. } => len,
            Augmentation::Visibility | Augmentation::Basepoint | Augmentation::CumulativeSum => len + 1,
            Augmentation::LeadLag => 2 * len - 1,
        }
    }

    pub fn apply(&self, p: &Path) -> Result<Path> {
        let w = p.width;
        match self {
            Augmentation::Time => {
                let values = p
                    .times
                    .iter()
                    .zip(p.points())
                    .flat_map(|(&t, x)| std::iter::once(t).chain(x.iter().copied()))
                    .collect();
                Path::from_flat(p.times.clone(), w + 1, values)
            }
            Augmentation::Visibility => {
                let values = p.points().flat_map(|x| x.iter().copied().chain(std::iter::once(1.0))).collect();
                let flagged = Path { times: p.times.clone(), width: w + 1, values };
                Ok(flagged.prepend(&vec![0.0; w + 1]))
            }
            Augmentation::Basepoint => Ok(p.prepend(&vec![0.0; w])),
            Augmentation::CumulativeSum => {
                let mut acc = vec![0.0; w];
                let mut values = Vec::with_capacity(p.values.len());
                for x in p.points() {
                    for (a, v) in acc.iter_mut().zip(x) {
                        *a += v;
                    }
                    values.extend_from_slice(&acc);
                }
                let summed = Path { times: p.times.clone(), width: w, values };
                Ok(summed.prepend(&vec![0.0; w]))
            }
            Augmentation::LeadLag => {
                let n = p.len();
                let mut times = Vec::with_capacity(2 * n - 1);
                let mut values = Vec::with_capacity((2 * n - 1) * 2 * w);
                for i in 0..n {
                    if i > 0 {
                        times.push(0.5 * (p.times[i - 1] + p.times[i]));
                        values.extend_from_slice(p.point(i));
                        values.extend_from_slice(p.point(i - 1));
                    }
                    times.push(p.times[i]);
                    values.extend_from_slice(p.point(i));
                    values.extend_from_slice(p.point(i));
                }
                Path::from_flat(times, 2 * w, values)
            }
            Augmentation::Scale { factors } => {
                self.output_width(w)?;
                let values = p.points().flat_map(|x| x.iter().zip(factors).map(|(v, f)| v * f)).collect();
                Path::from_flat(p.times.clone(), w, values)
            }
            Augmentation::Shift { offsets } => {
                self.output_width(w)?;
                let values = p.points().flat_map(|x| x.iter().zip(offsets).map(|(v, c)| v + c)).collect();
                Path::from_flat(p.times.clone(), w, values)
            }
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::Time => f.write_str("time"),
            Augmentation::Visibility => f.write_str("visibility"),
            Augmentation::Basepoint => f.write_str("basepoint"),
            Augmentation::LeadLag => f.write_str("lead_lag"),
            Augmentation::CumulativeSum => f.write_str("cumulative_sum"),
            Augmentation::Scale { factors } => {
                let parts: Vec<String> = factors.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "scale:{}", parts.join(":"))
            }
            Augmentation::Shift { offsets } => {
                let parts: Vec<String> = offsets.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "shift:{}", parts.join(":"))
            }
        }
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut parts = s.split(':');
        let tag = parts.next().unwrap_or_default();
        let aug = match tag {
            "time" => Augmentation::Time,
            "visibility" => Augmentation::Visibility,
            "basepoint" => Augmentation::Basepoint,
            "lead_lag" | "leadlag" => Augmentation::LeadLag,
            "cumulative_sum" | "cumsum" => Augmentation::CumulativeSum,
            "scale" | "shift" => {
                let c = parts
                    .by_ref()
                    .map(|x| x.parse::<f64>().map_err(|_| Error::config(format!("bad {tag} argument {x:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                if c.is_empty() {
                    return Err(Error::config(format!("{tag} needs one number per channel, e.g. {tag}:2:0.5")));
                }
                return Ok(if tag == "scale" { Augmentation::Scale { factors: c } } else { Augmentation::Shift { offsets: c } });
            }
            other => return Err(Error::config(format!("unknown augmentation {other:?}"))),
        };
        if parts.next().is_some() {
            return Err(Error::config(format!("augmentation {tag:?} takes no arguments")));
        }
        Ok(aug)
    }
}

/// Augmentations applied left to right. In JSON either a list of stages or
/// the short text form, e.g. `"basepoint,time"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PipelineRepr", into = "Vec<Augmentation>")]
pub struct AugmentationPipeline(pub Vec<Augmentation>);

#[derive(Deserialize)]
#[serde(untagged)]
enum PipelineRepr {
    Text(String),
    Stages(Vec<Augmentation>),
}

impl TryFrom<PipelineRepr> for AugmentationPipeline {
    type Error = Error;

    fn try_from(r: PipelineRepr) -> Result<Self> {
        match r {
            PipelineRepr::Text(s) => s.parse(),
            PipelineRepr::Stages(v) => Ok(Self(v)),
        }
    }
}

impl From<AugmentationPipeline> for Vec<Augmentation> {
    fn from(p: AugmentationPipeline) -> Self {
        p.0
    }
}

impl AugmentationPipeline {
    pub fn new(stages: Vec<Augmentation>) -> Self {
        Self(stages)
    }

    pub fn identity() -> Self {
        Self(Vec::new())
    }

    pub fn stages(&self) -> &[Augmentation] {
        &self.0
    }

    pub fn apply(&self, p: &Path) -> Result<Path> {
        let mut cur = p.clone();
        for stage in &self.0 {
            cur = stage.apply(&cur)?;
        }
        Ok(cur)
    }

    pub fn output_width(&self, width: usize) -> Result<usize> {
        self.0.iter().try_fold(width, |w, s| s.output_width(w))
    }

    pub fn output_len(&self, len: usize) -> usize {
        self.0.iter().fold(len, |n, s| s.output_len(n))
    }

    /// Canonical textual form, stored alongside dataset statistics.
    pub fn fingerprint(&self) -> String {
        if self.0.is_empty() {
            return "identity".to_string();
        }
        self.to_string()
    }
}

impl fmt::Display for AugmentationPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for AugmentationPipeline {
    type Err = Error;

    /// Comma-separated stages, e.g. `scale:2:0.5,time,visibility`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "identity" || s == "none" {
            return Ok(Self::identity());
        }
        s.split(',').map(str::parse).collect::<Result<Vec<_>>>().map(Self)
    }
}

/// The action of an augmentation pipeline on values as an affine map.
///
/// Every supported augmentation is affine in the path values for fixed time
/// stamps, so the flattened augmented path equals `x · matrix + offset` where
/// `x` is the flattened input path (stamp-major). The map is recovered by
/// applying the pipeline to the zero path and to each unit path.
#[derive(Debug, Clone)]
pub struct AffineAugmentation {
    pub in_len: usize,
    pub in_width: usize,
    pub out_len: usize,
    pub out_width: usize,
    /// Row-major `(in_len * in_width, out_len * out_width)`.
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineAugmentation {
    pub fn new(pipeline: &AugmentationPipeline, times: &[f64], width: usize) -> Result<Self> {
        let n_in = times.len() * width;
        let zero = Path::from_flat(times.to_vec(), width, vec![0.0; n_in])?;
        let base = pipeline.apply(&zero)?;
        let offset = base.values().to_vec();
        let n_out = offset.len();
        let mut matrix = vec![0.0; n_in * n_out];
        for j in 0..n_in {
            let mut unit = vec![0.0; n_in];
            unit[j] = 1.0;
            let out = pipeline.apply(&Path::from_flat(times.to_vec(), width, unit)?)?;
            for (m, (o, b)) in matrix[j * n_out..(j + 1) * n_out].iter_mut().zip(out.values().iter().zip(&offset)) {
                *m = o - b;
            }
        }
        Ok(Self {
            in_len: times.len(),
            in_width: width,
            out_len: base.len(),
            out_width: base.width(),
            matrix,
            offset,
        })
    }
}
