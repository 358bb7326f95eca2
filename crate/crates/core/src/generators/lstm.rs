//! LSTM baseline driven by the noise increments between output stamps.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmConfig {
    pub noise_dim: usize,
    pub output_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    64
}

impl LstmConfig {
    pub fn new(noise_dim: usize, output_dim: usize) -> Self {
        Self { noise_dim, output_dim, hidden: default_hidden() }
    }

    pub(super) fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.output_dim == 0 || self.hidden == 0 {
            return Err(Error::config("lstm dimensions must be positive"));
        }
        Ok(())
    }

    /// Gate blocks are ordered input, forget, cell, output.
    pub(super) fn layout(&self) -> Vec<(&'static str, usize, usize, f64)> {
        let (h, x, e) = (self.hidden, self.noise_dim + 1, self.output_dim);
        let b = 1.0 / (h as f64).sqrt();
        vec![("w_x", x, 4 * h, b), ("w_h", h, 4 * h, b), ("b", 1, 4 * h, b), ("w_out", h, e, b), ("b_out", 1, e, b)]
    }

    /// Increments of `(t, W)` over each interval `(t_{k-1}, t_k]`, `t_0 = 0`.
    pub fn increments(&self, noise: &[Path], stamps: &[f64]) -> Result<Vec<Mat>> {
        let x = self.noise_dim + 1;
        let mut out: Vec<Mat> = stamps.iter().map(|_| Mat::zeros((noise.len(), x))).collect();
        for (b, w) in noise.iter().enumerate() {
            if w.width() != x {
                return Err(Error::shape(format!("noise width {} for a generator expecting {x}", w.width())));
            }
            let mut prev = w.value_at(0.0)?;
            for (k, &t) in stamps.iter().enumerate() {
                let cur = w.value_at(t)?;
                for c in 0..x {
                    out[k][[b, c]] = cur[c] - prev[c];
                }
                prev = cur;
            }
        }
        Ok(out)
    }

    pub(super) fn forward(&self, tape: &mut Tape, params: &[Var], inputs: &[Mat]) -> Result<Vec<Var>> {
        let [wx, wh, b, wo, bo] = params else {
            return Err(Error::shape(format!("lstm expects 5 parameter blocks, got {}", params.len())));
        };
        let h = self.hidden;
        let rows = inputs.first().map_or(0, |m| m.nrows());
        let b = tape.repeat_rows(*b, rows)?;
        let bo = tape.repeat_rows(*bo, rows)?;
        let mut hid = tape.constant(Mat::zeros((rows, h)));
        let mut cell = tape.constant(Mat::zeros((rows, h)));
        let mut outs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let x = tape.constant(x.clone());
            let zx = tape.matmul(x, *wx)?;
            let zh = tape.matmul(hid, *wh)?;
            let z = tape.add(zx, zh)?;
            let z = tape.add(z, b)?;
            let i = tape.slice(z, 0, h)?;
            let i = tape.sigmoid(i);
            let f = tape.slice(z, h, 2 * h)?;
            let f = tape.sigmoid(f);
            let g = tape.slice(z, 2 * h, 3 * h)?;
            let g = tape.tanh(g);
            let o = tape.slice(z, 3 * h, 4 * h)?;
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, cell)?;
            let write = tape.mul(i, g)?;
            cell = tape.add(keep, write)?;
            let squashed = tape.tanh(cell);
            hid = tape.mul(o, squashed)?;
            let y = tape.matmul(hid, *wo)?;
            outs.push(tape.add(y, bo)?);
        }
        Ok(outs)
    }
}
