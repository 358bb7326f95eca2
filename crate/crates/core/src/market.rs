//! Training-data simulators: correlated geometric Brownian motion and the
//! rough Bergomi model.
//!
//! Both emit paths observed at `k T / n_stamps`, `k = 1..=n_stamps`, and draw
//! sample `i` from its own random stream so output is independent of the
//! thread count.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::Path;
use crate::rng::stream_rng;

fn observation_stamps(horizon: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| horizon * k as f64 / n as f64).collect()
}

/// Lower-triangular `L` with `L Lᵀ = a` for a positive semidefinite `a`.
/// Zero pivots (within `1e-12`) give zero columns.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return Err(Error::config("correlation matrix is not square"));
    }
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if d < -1e-12 {
            return Err(Error::config("correlation matrix is not positive semidefinite"));
        }
        let piv = d.max(0.0).sqrt();
        l[j][j] = piv;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if piv > 1e-12 {
                l[i][j] = s / piv;
            } else if s.abs() > 1e-9 {
                return Err(Error::config("correlation matrix is not positive semidefinite"));
            }
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmSpec {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Correlation of the driving Brownian motions; identity when absent.
    #[serde(default)]
    pub rho: Option<Vec<Vec<f64>>>,
    /// Initial values; all ones when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Simulation step.
    pub dt: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    pub n_stamps: usize,
}

fn one() -> f64 {
    1.0
}

impl GbmSpec {
    /// `d` channels sharing drift, volatility and pairwise correlation.
    pub fn uniform(d: usize, mu: f64, sigma: f64, rho: f64, dt: f64, n_stamps: usize) -> Self {
        let corr = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { rho }).collect()).collect();
        Self { mu: vec![mu; d], sigma: vec![sigma; d], rho: Some(corr), x0: None, dt, horizon: 1.0, n_stamps }
    }

    pub fn width(&self) -> usize {
        self.mu.len()
    }

    pub fn stamps(&self) -> Vec<f64> {
        observation_stamps(self.horizon, self.n_stamps)
    }

    fn steps_per_stamp(&self) -> Result<usize> {
        let total = self.horizon / self.dt;
        let per = total / self.n_stamps as f64;
        if (per - per.round()).abs() > 1e-9 || per.round() < 1.0 {
            return Err(Error::config(format!(
                "horizon {} / dt {} is not a multiple of {} stamps",
                self.horizon, self.dt, self.n_stamps
            )));
        }
        Ok(per.round() as usize)
    }

    pub fn validate(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.width();
        if d == 0 || self.sigma.len() != d {
            return Err(Error::config("gbm: mu and sigma must have the same positive length"));
        }
        if self.sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::config("gbm: volatilities must be nonnegative"));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != d || x0.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::config("gbm: x0 must hold one positive value per channel"));
            }
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.n_stamps == 0 {
            return Err(Error::config("gbm: dt, horizon and n_stamps must be positive"));
        }
        self.steps_per_stamp()?;
        let rho = self.rho.clone().unwrap_or_else(|| {
            (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
        });
        if rho.len() != d {
            return Err(Error::config(format!("gbm: correlation matrix has {} rows for {d} channels", rho.len())));
        }
        for i in 0..d {
            if (rho[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::config("gbm: correlation diagonal must be 1"));
            }
            for j in 0..i {
                if (rho[i][j] - rho[j][i]).abs() > 1e-12 {
                    return Err(Error::config("gbm: correlation matrix must be symmetric"));
                }
            }
        }
        cholesky(&rho)
    }
}

/// Exact-in-law GBM via `X_n = X_{n-1} exp((μ - σ²/2) dt + σ ΔW)` with
/// Cholesky-correlated increments.
pub fn simulate_gbm(spec: &GbmSpec, n: usize, seed: u64) -> Result<Vec<Path>> {
    let chol = spec.validate()?;
    let d = spec.width();
    let per = spec.steps_per_stamp()?;
    let stamps = spec.stamps();
    let x0 = spec.x0.clone().unwrap_or_else(|| vec![1.0; d]);
    let sdt = spec.dt.sqrt();
    let drift: Vec<f64> = (0..d).map(|i| (spec.mu[i] - 0.5 * spec.sigma[i] * spec.sigma[i]) * spec.dt).collect();
    (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, s as u64);
            let mut logx: Vec<f64> = x0.iter().map(|v| v.ln()).collect();
            let mut z = vec![0.0; d];
            let mut values = Vec::with_capacity(stamps.len() * d);
            for _ in 0..stamps.len() {
                for _ in 0..per {
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(&mut rng);
                    }
                    for i in 0..d {
                        let dw: f64 = (0..=i).map(|k| chol[i][k] * z[k]).sum::<f64>() * sdt;
                        logx[i] += drift[i] + spec.sigma[i] * dw;
                    }
                }
                values.extend(logx.iter().map(|v| v.exp()));
            }
            Path::from_flat(stamps.clone(), d, values)
        })
        .collect()
}

/// Weights of the discretised Volterra integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbmScheme {
    /// `K` at the left end of each step: `K(t_k - t_j)`.
    LeftPoint,
    /// Root-mean-square of `K` over each step, so `Var(W^H_t) = t^{2H}` on
    /// the grid exactly.
    #[default]
    L2Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoughBergomiSpec {
    pub hurst: f64,
    /// Flat forward variance.
    pub xi: f64,
    pub eta: f64,
    pub rho: f64,
    #[serde(default = "one")]
    pub s0: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    pub n_stamps: usize,
    /// Fine simulation steps per output interval.
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default)]
    pub scheme: FbmScheme,
}

fn default_oversample() -> usize {
    10
}

impl RoughBergomiSpec {
    pub fn new(hurst: f64, xi: f64, eta: f64, rho: f64, n_stamps: usize) -> Self {
        Self {
            hurst,
            xi,
            eta,
            rho,
            s0: 1.0,
            horizon: 1.0,
            n_stamps,
            oversample: default_oversample(),
            scheme: FbmScheme::default(),
        }
    }

    pub fn stamps(&self) -> Vec<f64> {
        observation_stamps(self.horizon, self.n_stamps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::config(format!("rough bergomi: Hurst index {} outside (0, 1)", self.hurst)));
        }
        if !(self.xi > 0.0) || !(self.eta >= 0.0) || !(self.rho.abs() <= 1.0) || !(self.s0 > 0.0) {
            return Err(Error::config("rough bergomi: need xi > 0, eta >= 0, |rho| <= 1, s0 > 0"));
        }
        if !(self.horizon > 0.0) || self.n_stamps == 0 || self.oversample == 0 {
            return Err(Error::config("rough bergomi: horizon, n_stamps and oversample must be positive"));
        }
        Ok(())
    }

    fn fine_step(&self) -> f64 {
        self.horizon / (self.n_stamps * self.oversample) as f64
    }

    /// `w[m]` multiplies the Brownian increment `m` steps back.
    fn kernel_weights(&self) -> Vec<f64> {
        let n = self.n_stamps * self.oversample;
        let dt = self.fine_step();
        let h = self.hurst;
        let mut w = vec![0.0; n + 1];
        for (m, wm) in w.iter_mut().enumerate().skip(1) {
            *wm = match self.scheme {
                FbmScheme::LeftPoint => (2.0 * h).sqrt() * (m as f64 * dt).powf(h - 0.5),
                FbmScheme::L2Average => {
                    let hi = (m as f64 * dt).powf(2.0 * h);
                    let lo = ((m - 1) as f64 * dt).powf(2.0 * h);
                    ((hi - lo) / dt).sqrt()
                }
            };
        }
        w
    }

    /// One sample on the fine grid: `(W^H, log S)` at every fine stamp
    /// including `t = 0`.
    fn simulate_one(&self, weights: &[f64], seed: u64, stream: u64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_stamps * self.oversample;
        let dt = self.fine_step();
        let sdt = dt.sqrt();
        let mut rng = stream_rng(seed, stream);
        let mut dw = Vec::with_capacity(n);
        let mut dz = Vec::with_capacity(n);
        let rho_perp = (1.0 - self.rho * self.rho).max(0.0).sqrt();
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            dw.push(a * sdt);
            dz.push((self.rho * a + rho_perp * b) * sdt);
        }
        let mut wh = vec![0.0; n + 1];
        for k in 1..=n {
            wh[k] = (0..k).map(|j| weights[k - j] * dw[j]).sum();
        }
        let mut log_s = vec![self.s0.ln(); n + 1];
        for k in 0..n {
            let v = self.variance(k as f64 * dt, wh[k]);
            log_s[k + 1] = log_s[k] - 0.5 * v * dt + v.sqrt() * dz[k];
        }
        (wh, log_s)
    }

    fn variance(&self, t: f64, wh: f64) -> f64 {
        self.xi * (self.eta * wh - 0.5 * self.eta * self.eta * t.powf(2.0 * self.hurst)).exp()
    }
}

/// Rough Bergomi paths with channels `(log S_t, log v_t)`. The fractional
/// driver is a discretised Volterra integral on a grid `oversample` times
/// finer than the output, and `log S` follows a log-Euler scheme.
pub fn simulate_rough_bergomi(spec: &RoughBergomiSpec, n: usize, seed: u64) -> Result<Vec<Path>> {
    spec.validate()?;
    let weights = spec.kernel_weights();
    let stamps = spec.stamps();
    let dt = spec.fine_step();
    (0..n)
        .into_par_iter()
        .map(|s| {
            let (wh, log_s) = spec.simulate_one(&weights, seed, s as u64);
            let mut values = Vec::with_capacity(2 * stamps.len());
            for k in 1..=spec.n_stamps {
                let f = k * spec.oversample;
                values.push(log_s[f]);
                values.push(spec.variance(f as f64 * dt, wh[f]).ln());
            }
            Path::from_flat(stamps.clone(), 2, values)
        })
        .collect()
}

/// The fractional driver `W^H` of [`simulate_rough_bergomi`] at the output
/// stamps, from the same random streams.
pub fn simulate_volterra_fbm(spec: &RoughBergomiSpec, n: usize, seed: u64) -> Result<Vec<Path>> {
    spec.validate()?;
    let weights = spec.kernel_weights();
    let stamps = spec.stamps();
    (0..n)
        .into_par_iter()
        .map(|s| {
            let (wh, _) = spec.simulate_one(&weights, seed, s as u64);
            let values = (1..=spec.n_stamps).map(|k| wh[k * spec.oversample]).collect();
            Path::from_flat(stamps.clone(), 1, values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vol_gbm_is_deterministic_growth() {
        let spec = GbmSpec::uniform(2, 0.3, 0.0, 0.5, 0.01, 4);
        let out = simulate_gbm(&spec, 3, 1).unwrap();
        for p in &out {
            for (t, pt) in p.times().iter().zip(p.points()) {
                for &v in pt {
                    assert!((v - (0.3 * t).exp()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gbm_rejects_bad_specs() {
        let mut bad = GbmSpec::uniform(2, 0.0, 0.2, 0.5, 0.01, 4);
        bad.rho = Some(vec![vec![1.0, 1.5], vec![1.5, 1.0]]);
        assert!(matches!(simulate_gbm(&bad, 1, 0), Err(Error::Config(_))));
        let mut asym = GbmSpec::uniform(2, 0.0, 0.2, 0.5, 0.01, 4);
        asym.rho = Some(vec![vec![1.0, 0.2], vec![0.3, 1.0]]);
        assert!(simulate_gbm(&asym, 1, 0).is_err());
        let mut neg = GbmSpec::uniform(2, 0.0, 0.2, 0.5, 0.01, 4);
        neg.sigma[0] = -0.1;
        assert!(simulate_gbm(&neg, 1, 0).is_err());
        assert!(simulate_gbm(&GbmSpec::uniform(1, 0.0, 0.2, 0.0, 0.03, 4), 1, 0).is_err());
    }

    #[test]
    fn cholesky_of_singular_correlation() {
        let l = cholesky(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(l, vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn simulators_are_reproducible() {
        let g = GbmSpec::uniform(3, 0.1, 0.2, 0.5, 0.01, 5);
        assert_eq!(simulate_gbm(&g, 4, 7).unwrap(), simulate_gbm(&g, 4, 7).unwrap());
        let r = RoughBergomiSpec::new(0.25, 0.25, 0.5, 0.0, 5);
        assert_eq!(simulate_rough_bergomi(&r, 4, 7).unwrap(), simulate_rough_bergomi(&r, 4, 7).unwrap());
    }

    #[test]
    fn rough_bergomi_rejects_bad_hurst() {
        for h in [0.0, 1.0, -0.2, 1.3] {
            let spec = RoughBergomiSpec::new(h, 0.25, 0.5, 0.0, 5);
            assert!(matches!(simulate_rough_bergomi(&spec, 1, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn flat_vol_when_eta_is_zero() {
        let spec = RoughBergomiSpec::new(0.25, 0.04, 0.0, 0.0, 4);
        for p in simulate_rough_bergomi(&spec, 3, 2).unwrap() {
            for pt in p.points() {
                assert!((pt[1] - 0.04f64.ln()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn l2_weights_reproduce_the_variance_exactly() {
        let spec = RoughBergomiSpec::new(0.25, 0.25, 0.5, 0.0, 20);
        let w = spec.kernel_weights();
        let dt = spec.fine_step();
        let var: f64 = w[1..].iter().map(|x| x * x * dt).sum();
        assert!((var - 1.0).abs() < 1e-12);
        let left = RoughBergomiSpec { scheme: FbmScheme::LeftPoint, ..spec };
        let lw = left.kernel_weights();
        let lvar: f64 = lw[1..].iter().map(|x| x * x * dt).sum();
        assert!(lvar < 0.96, "left-point variance {lvar}");
    }
}
