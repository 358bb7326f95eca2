//! Path batch files: a CSV with columns `sample_id,t,x_1..x_d` plus a JSON
//! sidecar (`<file>.json`) naming the channels.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::Path;

pub const BATCH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSidecar {
    pub version: u32,
    pub channels: Vec<String>,
    pub samples: usize,
}

pub fn sidecar_path(csv: &FsPath) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn default_channel_names(width: usize) -> Vec<String> {
    (1..=width).map(|i| format!("x_{i}")).collect()
}

/// Writes a batch and its sidecar. Channel names default to `x_1..x_d`.
pub fn write_batch(csv_path: &FsPath, batch: &[Path], channels: Option<&[String]>) -> Result<()> {
    let width = batch.first().map(Path::width).ok_or_else(|| Error::domain("cannot write an empty batch"))?;
    if batch.iter().any(|p| p.width() != width) {
        return Err(Error::shape("batch paths have different widths"));
    }
    let names = match channels {
        Some(c) if c.len() == width => c.to_vec(),
        Some(c) => return Err(Error::shape(format!("{} channel names for width {width}", c.len()))),
        None => default_channel_names(width),
    };
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header = vec!["sample_id".to_string(), "t".to_string()];
    header.extend((1..=width).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for (id, p) in batch.iter().enumerate() {
        for (t, x) in p.times().iter().zip(p.points()) {
            let mut row = vec![id.to_string(), format!("{t:?}")];
            row.extend(x.iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    let sidecar = BatchSidecar { version: BATCH_FORMAT_VERSION, channels: names, samples: batch.len() };
    let mut f = fs::File::create(sidecar_path(csv_path))?;
    f.write_all(serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(())
}

/// Reads a batch; rows of a sample must have strictly increasing `t`.
pub fn read_batch(csv_path: &FsPath) -> Result<(Vec<Path>, BatchSidecar)> {
    let mut r = csv::Reader::from_path(csv_path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "sample_id" || &headers[1] != "t" {
        return Err(Error::data(format!(
            "{}: expected header sample_id,t,x_1..x_d",
            csv_path.display()
        )));
    }
    let width = headers.len() - 2;
    let mut samples: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::data(format!("row {row}: missing column {i}")))?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::data(format!("row {row}: column {i} is not a number")))
        };
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("row {row}: bad sample_id {:?}", &rec[0])))?;
        let t = parse(1)?;
        let entry = samples.entry(id).or_default();
        if let Some(&last) = entry.0.last() {
            if t <= last {
                return Err(Error::data(format!("row {row}: time not increasing within sample {id}")));
            }
        }
        entry.0.push(t);
        for i in 0..width {
            entry.1.push(parse(i + 2)?);
        }
    }
    let batch = samples
        .into_values()
        .map(|(t, v)| Path::from_flat(t, width, v))
        .collect::<Result<Vec<_>>>()?;
    if batch.is_empty() {
        return Err(Error::data(format!("{}: no samples", csv_path.display())));
    }
    let side = sidecar_path(csv_path);
    let sidecar = if side.exists() {
        let s: BatchSidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
        if s.channels.len() != width {
            return Err(Error::data(format!("sidecar names {} channels, CSV has {width}", s.channels.len())));
        }
        s
    } else {
        BatchSidecar { version: BATCH_FORMAT_VERSION, channels: default_channel_names(width), samples: batch.len() }
    };
    Ok((batch, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("b.csv");
        let batch = vec![
            Path::from_flat(vec![0.1, 0.2], 2, vec![1.0, 2.0, 3.0, 1.0 / 3.0]).unwrap(),
            Path::from_flat(vec![0.1, 0.2], 2, vec![-1.0, 0.5, 7.25, 1e-17]).unwrap(),
        ];
        let names = vec!["price".to_string(), "vol".to_string()];
        write_batch(&file, &batch, Some(&names)).unwrap();
        let (back, side) = read_batch(&file).unwrap();
        assert_eq!(back, batch);
        assert_eq!(side.channels, names);
    }

    #[test]
    fn non_monotone_time_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bad.csv");
        fs::write(&file, "sample_id,t,x_1\n0,0.0,1\n0,0.5,2\n0,0.5,3\n").unwrap();
        let err = read_batch(&file).unwrap_err();
        assert!(matches!(err, Error::Data(m) if m.contains("row 4")));
    }
}
