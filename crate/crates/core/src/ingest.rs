//! Close-price tables to windowed log-return paths.
//!
//! Input CSV: a date column followed by one close-price column per
//! instrument. Each window holds `window` consecutive log returns placed at
//! stamps `k / window`, `k = 1..=window`.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub dates: Vec<String>,
    pub instruments: Vec<String>,
    /// One row per date.
    pub prices: Vec<Vec<f64>>,
}

impl PriceTable {
    /// Checks row widths and that every price is finite and positive.
    pub fn new(dates: Vec<String>, instruments: Vec<String>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if instruments.is_empty() {
            return Err(Error::data("price table needs at least one instrument column"));
        }
        if dates.len() != prices.len() {
            return Err(Error::shape("one date per price row"));
        }
        for (r, row) in prices.iter().enumerate() {
            if row.len() != instruments.len() {
                return Err(Error::data(format!("row {}: expected {} prices, found {}", r + 2, instruments.len(), row.len())));
            }
            if let Some(c) = row.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(Error::data(format!(
                    "row {} ({}), column {:?}: price {} is not positive",
                    r + 2,
                    dates[r],
                    instruments[c],
                    row[c]
                )));
            }
        }
        Ok(Self { dates, instruments, prices })
    }

    pub fn read_csv(path: &FsPath) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::data(format!("{}: need a date column and at least one price column", path.display())));
        }
        let instruments = header.iter().skip(1).map(str::to_owned).collect();
        let (mut dates, mut prices) = (Vec::new(), Vec::new());
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| Error::data(format!("row {}: cannot parse price {s:?}", r + 2))))
                .collect::<Result<Vec<_>>>()?;
            dates.push(rec.get(0).unwrap_or_default().to_owned());
            prices.push(row);
        }
        Self::new(dates, instruments, prices)
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// `log(p_{r+1} / p_r)` per instrument; one row fewer than the table.
    pub fn log_returns(&self) -> Vec<Vec<f64>> {
        self.prices
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b / a).ln()).collect())
            .collect()
    }
}

/// Rolling windows of `window` rows with the given stride.
pub fn rolling_windows(rows: &[Vec<f64>], window: usize, stride: usize) -> Result<Vec<Path>> {
    if window == 0 || stride == 0 {
        return Err(Error::config("window and stride must be positive"));
    }
    if window > rows.len() {
        return Err(Error::domain(format!("window {window} longer than the series ({} returns)", rows.len())));
    }
    let times: Vec<f64> = (1..=window).map(|k| k as f64 / window as f64).collect();
    (0..=rows.len() - window)
        .step_by(stride)
        .map(|s| Path::new(times.clone(), rows[s..s + window].to_vec()))
        .collect()
}

/// Earliest `floor(fraction * n)` items train, the rest test.
pub fn chronological_split<T: Clone>(items: &[T], fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!("split fraction {fraction} outside [0, 1]")));
    }
    let k = (fraction * items.len() as f64).floor() as usize;
    Ok((items[..k].to_vec(), items[k..].to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub window: usize,
    pub stride: usize,
    pub split: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { window: 10, stride: 1, split: 0.8 }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub train: Vec<Path>,
    pub test: Vec<Path>,
    pub n_windows: usize,
}

pub fn ingest(table: &PriceTable, cfg: &IngestConfig) -> Result<Ingested> {
    let windows = rolling_windows(&table.log_returns(), cfg.window, cfg.stride)?;
    let (train, test) = chronological_split(&windows, cfg.split)?;
    Ok(Ingested { n_windows: windows.len(), train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(prices: Vec<Vec<f64>>) -> Result<PriceTable> {
        let dates = (0..prices.len()).map(|i| format!("d{i}")).collect();
        let names = (0..prices[0].len()).map(|i| format!("p{i}")).collect();
        PriceTable::new(dates, names, prices)
    }

    #[test]
    fn exponential_prices_give_unit_returns() {
        let e = std::f64::consts::E;
        let t = table(vec![vec![1.0], vec![e], vec![e * e]]).unwrap();
        let out = ingest(&t, &IngestConfig { window: 2, stride: 1, split: 1.0 }).unwrap();
        assert_eq!(out.n_windows, 1);
        let w = &out.train[0];
        assert_eq!(w.times(), &[0.5, 1.0]);
        for v in w.values() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nonpositive_price_reports_row() {
        let err = table(vec![vec![1.0, 2.0], vec![1.0, 0.0]]).unwrap_err();
        match err {
            Error::Data(msg) => assert!(msg.contains("row 3"), "{msg}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn window_longer_than_series() {
        let t = table(vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let r = ingest(&t, &IngestConfig { window: 3, stride: 1, split: 0.8 });
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn stride_and_split() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let w = rolling_windows(&rows, 3, 2).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[1].point(0), &[2.0]);
        let (a, b) = chronological_split(&w, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (3, 1));
        assert_eq!(a[0], w[0]);
    }
}
