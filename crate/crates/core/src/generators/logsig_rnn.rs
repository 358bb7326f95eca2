//! Logsig-RNN generator.
//!
//! For an output stamp `t_k` in the coarse interval `(u_{j-1}, u_j]`:
//!
//! ```text
//! h(t_k) = tanh(h(u_{j-1}) θ1 + LogSig(W on [u_{j-1}, t_k]) θ2 + b1)
//! o(t_k) = h(t_k) θ3 + b3
//! ```
//!
//! with `h(u_0) = 0` and `h(u_j)` taken as the hidden state at the output
//! stamp coinciding with `u_j`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::lie::{logsig_dim, LyndonBasis};
use crate::path::Path;
use crate::tensor::kernels;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogsigRnnConfig {
    pub noise_dim: usize,
    pub output_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_logsig_depth")]
    pub logsig_depth: usize,
    #[serde(default = "default_coarse_intervals")]
    pub coarse_intervals: usize,
}

fn default_hidden() -> usize {
    64
}

fn default_logsig_depth() -> usize {
    3
}

fn default_coarse_intervals() -> usize {
    5
}

impl LogsigRnnConfig {
    pub fn new(noise_dim: usize, output_dim: usize) -> Self {
        Self {
            noise_dim,
            output_dim,
            hidden: default_hidden(),
            logsig_depth: default_logsig_depth(),
            coarse_intervals: default_coarse_intervals(),
        }
    }

    /// Width of the log-signature input: noise channels plus time.
    pub fn logsig_width(&self) -> usize {
        logsig_dim(self.noise_dim + 1, self.logsig_depth)
    }

    pub(super) fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.output_dim == 0 || self.hidden == 0 {
            return Err(Error::config("logsig_rnn dimensions must be positive"));
        }
        if self.logsig_depth == 0 || self.coarse_intervals == 0 {
            return Err(Error::config("logsig_rnn needs logsig_depth >= 1 and coarse_intervals >= 1"));
        }
        Ok(())
    }

    /// `(name, rows, cols, init bound)` for θ1, θ2, b1, θ3, b3.
    pub(super) fn layout(&self) -> Vec<(&'static str, usize, usize, f64)> {
        let (h, l, e) = (self.hidden, self.logsig_width(), self.output_dim);
        let bh = 1.0 / (h as f64).sqrt();
        vec![
            ("theta1", h, h, bh),
            ("theta2", l, h, 1.0 / (l as f64).sqrt()),
            ("b1", 1, h, bh),
            ("theta3", h, e, bh),
            ("b3", 1, e, bh),
        ]
    }

    /// Marks the output stamps that close a coarse interval. Anchors sit at
    /// fractions `j / N_1` of the horizon, snapped to the nearest stamp so
    /// the coarse partition is a subset of the fine one.
    pub fn anchors(&self, stamps: &[f64]) -> Result<Vec<bool>> {
        let n1 = self.coarse_intervals;
        if n1 > stamps.len() {
            return Err(Error::config(format!("{n1} coarse intervals but only {} output stamps", stamps.len())));
        }
        let horizon = *stamps.last().expect("stamps checked non-empty");
        let mut resets = vec![false; stamps.len()];
        for j in 1..=n1 {
            let target = horizon * j as f64 / n1 as f64;
            let k = stamps
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
                .map(|(k, _)| k)
                .expect("non-empty");
            if resets[k] {
                return Err(Error::config(format!("coarse anchors collide at stamp {}", stamps[k])));
            }
            resets[k] = true;
        }
        Ok(resets)
    }

    /// Log-signatures of each noise path over `[u_{j-1}, t_k]`, one matrix
    /// (samples x logsig width) per output stamp.
    pub fn window_logsigs(&self, noise: &[Path], stamps: &[f64], resets: &[bool]) -> Result<Vec<Mat>> {
        let basis = LyndonBasis::new(self.noise_dim + 1, self.logsig_depth)?;
        let shape = basis.shape();
        let per_sample: Vec<Vec<f64>> = noise
            .par_iter()
            .map(|w| {
                if w.width() != self.noise_dim + 1 {
                    return Err(Error::shape(format!(
                        "noise width {} for a generator expecting {}",
                        w.width(),
                        self.noise_dim + 1
                    )));
                }
                let times = w.times();
                if times[0].abs() > 1e-12 {
                    return Err(Error::domain(format!("noise starts at {} instead of 0", times[0])));
                }
                let mut out = Vec::with_capacity(stamps.len() * basis.len());
                let mut sig = vec![0.0; shape.len()];
                sig[0] = 1.0;
                let mut next = vec![0.0; shape.len()];
                let mut delta = vec![0.0; shape.width];
                let mut pos = 0;
                for (&t, &reset) in stamps.iter().zip(resets) {
                    let idx = stamp_index(times, t, pos)?;
                    for i in pos + 1..=idx {
                        for (a, dv) in delta.iter_mut().enumerate() {
                            *dv = w.point(i)[a] - w.point(i - 1)[a];
                        }
                        kernels::chen_exp_step(shape, &sig, &delta, &mut next);
                        std::mem::swap(&mut sig, &mut next);
                    }
                    pos = idx;
                    out.extend(basis.project_slice(&kernels::log(shape, &sig))?);
                    if reset {
                        sig.iter_mut().for_each(|c| *c = 0.0);
                        sig[0] = 1.0;
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let l = basis.len();
        Ok((0..stamps.len())
            .map(|k| Mat::from_shape_fn((noise.len(), l), |(b, c)| per_sample[b][k * l + c]))
            .collect())
    }

    pub(super) fn forward(&self, tape: &mut Tape, params: &[Var], inputs: &[Mat], resets: &[bool]) -> Result<Vec<Var>> {
        let [t1, t2, b1, t3, b3] = params else {
            return Err(Error::shape(format!("logsig_rnn expects 5 parameter blocks, got {}", params.len())));
        };
        let rows = inputs.first().map_or(0, |m| m.nrows());
        let b1 = tape.repeat_rows(*b1, rows)?;
        let b3 = tape.repeat_rows(*b3, rows)?;
        let mut anchor = tape.constant(Mat::zeros((rows, self.hidden)));
        let mut outs = Vec::with_capacity(inputs.len());
        for (x, &reset) in inputs.iter().zip(resets) {
            let x = tape.constant(x.clone());
            let rec = tape.matmul(anchor, *t1)?;
            let inp = tape.matmul(x, *t2)?;
            let pre = tape.add(rec, inp)?;
            let pre = tape.add(pre, b1)?;
            let h = tape.tanh(pre);
            let o = tape.matmul(h, *t3)?;
            outs.push(tape.add(o, b3)?);
            if reset {
                anchor = h;
            }
        }
        Ok(outs)
    }
}

/// Index of `t` in `times` at or after `from`, within a small tolerance.
fn stamp_index(times: &[f64], t: f64, from: usize) -> Result<usize> {
    let last = *times.last().expect("paths are non-empty");
    if t > last + 1e-12 {
        return Err(Error::domain(format!("output stamp {t} beyond noise coverage {last}")));
    }
    let tol = 1e-12 * t.abs().max(1.0);
    times[from..]
        .iter()
        .position(|&s| (s - t).abs() <= tol)
        .map(|i| i + from)
        .ok_or_else(|| Error::domain(format!("output stamp {t} is not on the noise grid")))
}
