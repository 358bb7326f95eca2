use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::Path;
use crate::rng::{mix, stream_rng};

/// Seeded source of time-augmented Brownian paths `(t, W_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub seed: u64,
    pub noise_dim: usize,
    /// Sub-steps of the simulation grid per output interval.
    pub refine: usize,
}

impl NoiseSource {
    pub fn new(seed: u64, noise_dim: usize, refine: usize) -> Self {
        Self { seed, noise_dim, refine }
    }

    /// A source for a different draw (e.g. a training iteration) with the same
    /// layout.
    pub fn reseeded(&self, salt: u64) -> Self {
        Self { seed: mix(self.seed, salt), ..*self }
    }

    /// The fine simulation grid: `0` followed by `refine` equal sub-steps of
    /// every interval between consecutive `stamps`. Every stamp is on the grid.
    pub fn fine_grid(&self, stamps: &[f64]) -> Result<Vec<f64>> {
        check_stamps(stamps)?;
        let refine = self.refine.max(1);
        let mut grid = vec![0.0];
        let mut prev = 0.0;
        for &t in stamps {
            for r in 1..refine {
                grid.push(prev + (t - prev) * r as f64 / refine as f64);
            }
            grid.push(t);
            prev = t;
        }
        Ok(grid)
    }

    /// `n` independent paths on the fine grid over `stamps`. Sample `i` uses
    /// its own random stream, so the batch does not depend on thread count.
    pub fn sample(&self, n: usize, stamps: &[f64]) -> Result<Vec<Path>> {
        let grid = self.fine_grid(stamps)?;
        let d = self.noise_dim;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(self.seed, i as u64);
                let mut values = Vec::with_capacity(grid.len() * (d + 1));
                let mut w = vec![0.0; d];
                values.push(grid[0]);
                values.extend_from_slice(&w);
                for pair in grid.windows(2) {
                    let sd = (pair[1] - pair[0]).sqrt();
                    for wi in w.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *wi += sd * z;
                    }
                    values.push(pair[1]);
                    values.extend_from_slice(&w);
                }
                Path::from_flat(grid.clone(), d + 1, values)
            })
            .collect()
    }
}

/// Output stamps must be positive and strictly increasing; the generator
/// starts at time 0.
pub(crate) fn check_stamps(stamps: &[f64]) -> Result<()> {
    if stamps.is_empty() {
        return Err(Error::config("no output stamps"));
    }
    let mut prev = 0.0;
    for &t in stamps {
        if !(t > prev) || !t.is_finite() {
            return Err(Error::config(format!("output stamps must be positive and increasing, got {t} after {prev}")));
        }
        prev = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fine_grid_contains_stamps() {
        let src = NoiseSource::new(1, 2, 4);
        let g = src.fine_grid(&[0.5, 1.0]).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[4], 0.5);
        assert_eq!(g[8], 1.0);
    }

    #[test]
    fn same_seed_same_batch() {
        let src = NoiseSource::new(9, 2, 3);
        let a = src.sample(5, &[0.25, 0.5, 1.0]).unwrap();
        let b = src.sample(5, &[0.25, 0.5, 1.0]).unwrap();
        assert_eq!(a, b);
        let c = src.reseeded(1).sample(5, &[0.25, 0.5, 1.0]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn time_channel_first() {
        let p = &NoiseSource::new(0, 1, 2).sample(1, &[1.0]).unwrap()[0];
        assert_eq!(p.width(), 2);
        assert_eq!(p.point(1)[0], 0.5);
        assert_eq!(p.point(0), &[0.0, 0.0]);
    }

    #[test]
    fn bad_stamps() {
        let src = NoiseSource::new(0, 1, 2);
        assert!(src.sample(1, &[]).is_err());
        assert!(src.sample(1, &[0.0, 1.0]).is_err());
        assert!(src.sample(1, &[0.5, 0.5]).is_err());
    }
}
