use std::fs;
use std::path::{Path as FsPath, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sigwgan::batch::{default_channel_names, read_batch, write_batch};
use sigwgan::fsio::write_atomic;
use sigwgan::generators::GeneratorModel;
use sigwgan::ingest::{ingest, IngestConfig, PriceTable};
use sigwgan::market::{simulate_gbm, simulate_rough_bergomi, GbmSpec, RoughBergomiSpec};
use sigwgan::metrics::{evaluate, DriftSweep, EvalConfig};
use sigwgan::rng::mix;
use sigwgan::train::{Checkpoint, DataSource, TrainConfig, Trainer};
use sigwgan::{
    expected_signature, log_signature, sig_w1, signature, AugmentationPipeline, Error, LyndonBasis, Path, Result,
};

use crate::manifest::Recorder;
use crate::{Cli, Command, DistanceArgs, EvaluateArgs, IngestArgs, SigArgs, SimulateArgs, TrainArgs};

/// A market model spec as stored in JSON, tagged by `model`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SimSpec {
    Gbm(GbmSpec),
    RoughBergomi(RoughBergomiSpec),
}

impl SimSpec {
    fn load(path: &FsPath) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn with_stamps(mut self, n: Option<usize>) -> Self {
        if let Some(n) = n {
            match &mut self {
                SimSpec::Gbm(s) => s.n_stamps = n,
                SimSpec::RoughBergomi(s) => s.n_stamps = n,
            }
        }
        self
    }

    fn simulate(&self, n: usize, seed: u64) -> Result<Vec<Path>> {
        match self {
            SimSpec::Gbm(s) => simulate_gbm(s, n, seed),
            SimSpec::RoughBergomi(s) => simulate_rough_bergomi(s, n, seed),
        }
    }

    fn channels(&self) -> Vec<String> {
        match self {
            SimSpec::Gbm(s) => default_channel_names(s.width()),
            SimSpec::RoughBergomi(_) => vec!["log_s".into(), "log_v".into()],
        }
    }
}

fn argv() -> Vec<String> {
    std::env::args().skip(1).collect()
}

fn config_path<'a>(own: Option<&'a PathBuf>, cli: &'a Cli, what: &str) -> Result<&'a PathBuf> {
    own.or(cli.config.as_ref()).ok_or_else(|| Error::Config(format!("{what} needs a JSON file (--config)")))
}

pub fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Sig(a) => cmd_sig(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Distance(a) => cmd_distance(cli, a),
    }
}

/// Runs `body` unless an identical earlier run left its outputs intact.
fn recorded(rec: Recorder, body: impl FnOnce(&mut Recorder) -> Result<()>) -> Result<()> {
    if rec.up_to_date() {
        log::info!("outputs are up to date; nothing to do");
        return Ok(());
    }
    let mut rec = rec;
    body(&mut rec)?;
    rec.finish()?;
    Ok(())
}

fn cmd_ingest(cli: &Cli, a: &IngestArgs) -> Result<()> {
    let mut rec = Recorder::new(&cli.out_dir, "ingest", argv(), None);
    rec.input(&a.prices)?;
    recorded(rec, |rec| {
        let table = PriceTable::read_csv(&a.prices)?;
        let cfg = IngestConfig { window: a.window, stride: a.stride, split: a.split };
        let out = ingest(&table, &cfg)?;
        for (name, part) in [("train.csv", &out.train), ("test.csv", &out.test)] {
            if part.is_empty() {
                log::warn!("{name} is empty at split {}", a.split);
                continue;
            }
            write_batch(&rec.path(name), part, Some(&table.instruments))?;
            rec.output(name)?;
            rec.output(&format!("{name}.json"))?;
        }
        println!(
            "{} price rows -> {} windows of {} returns: {} train / {} test",
            table.len(),
            out.n_windows,
            a.window,
            out.train.len(),
            out.test.len()
        );
        Ok(())
    })
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let spec_path = config_path(a.spec.as_ref(), cli, "simulate")?;
    if a.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let seed = cli.seed.unwrap_or(0);
    let mut rec = Recorder::new(&cli.out_dir, "simulate", argv(), Some(seed));
    rec.config(spec_path)?;
    recorded(rec, |rec| {
        let spec = SimSpec::load(spec_path)?.with_stamps(a.stamps);
        let paths = spec.simulate(a.n, seed)?;
        write_batch(&rec.path("paths.csv"), &paths, Some(&spec.channels()))?;
        rec.output("paths.csv")?;
        rec.output("paths.csv.json")?;
        write_atomic(&rec.path("spec.json"), serde_json::to_string_pretty(&spec)?.as_bytes())?;
        rec.output("spec.json")?;
        println!("simulated {} paths of {} stamps", paths.len(), paths[0].len());
        Ok(())
    })
}

fn tensor_labels(width: usize, depth: usize) -> Result<Vec<String>> {
    let shape = sigwgan::TensorShape::new(width, depth)?;
    let sep = if width > 9 { "," } else { "" };
    Ok((0..shape.len())
        .map(|i| {
            let w = shape.word_at(i);
            if w.is_empty() {
                "()".to_owned()
            } else {
                w.iter().map(|l| (l + 1).to_string()).collect::<Vec<_>>().join(sep)
            }
        })
        .collect())
}

fn cmd_sig(cli: &Cli, a: &SigArgs) -> Result<()> {
    let mut rec = Recorder::new(&cli.out_dir, "sig", argv(), None);
    rec.input(&a.paths)?;
    recorded(rec, |rec| {
        let (batch, _) = read_batch(&a.paths)?;
        let pipe: AugmentationPipeline = a.pipeline.parse()?;
        let width = pipe.output_width(batch[0].width())?;
        let (name, labels, rows) = if a.log {
            let basis = LyndonBasis::new(width, a.depth)?;
            let rows = batch
                .par_iter()
                .map(|p| Ok(log_signature(&pipe.apply(p)?, &basis)?.coords))
                .collect::<Result<Vec<_>>>()?;
            ("logsignatures.csv", basis.labels(), rows)
        } else {
            let rows = batch
                .par_iter()
                .map(|p| Ok(signature(&pipe.apply(p)?, a.depth)?.into_coeffs()))
                .collect::<Result<Vec<_>>>()?;
            ("signatures.csv", tensor_labels(width, a.depth)?, rows)
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("sample_id".to_owned()).chain(labels))?;
        for (i, r) in rows.iter().enumerate() {
            w.write_record(std::iter::once(i.to_string()).chain(r.iter().map(|x| x.to_string())))?;
        }
        write_atomic(&rec.path(name), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        rec.output(name)?;
        if a.expected {
            expected_signature(&batch, a.depth, &pipe)?.save(&rec.path("stats.json"))?;
            rec.output("stats.json")?;
        }
        println!("{} samples, {} coordinates each -> {name}", rows.len(), rows[0].len());
        Ok(())
    })
}

/// Relative batch paths in a training config are taken from the config's
/// directory.
fn resolve_data(cfg: &mut TrainConfig, config_path: &FsPath) -> Option<PathBuf> {
    if let DataSource::Batch { path } = &mut cfg.data {
        if path.is_relative() {
            if let Some(dir) = config_path.parent() {
                *path = dir.join(&*path);
            }
        }
        return Some(path.clone());
    }
    None
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg_path = config_path(None, cli, "train")?;
    let mut cfg = TrainConfig::from_json_file(cfg_path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    let data_file = resolve_data(&mut cfg, cfg_path);
    let mut rec = Recorder::new(&cli.out_dir, "train", argv(), Some(cfg.seed));
    rec.config(cfg_path)?;
    if let Some(p) = &data_file {
        rec.input(p)?;
    }
    recorded(rec, |rec| {
        let mut trainer = Trainer::new(cfg.clone(), Some(&cli.out_dir))?;
        if a.resume && cli.out_dir.join(Checkpoint::FILE).exists() {
            trainer.resume(&cli.out_dir)?;
            log::info!("resuming after iteration {}", trainer.iteration());
        }
        let out = trainer.run()?;
        out.model.save(&rec.path("model.bin"))?;
        out.target.save(&rec.path("target_stats.json"))?;
        write_atomic(&rec.path("train_config.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())?;
        let ck = Checkpoint::load(&cli.out_dir)?;
        for name in ["model.bin", "target_stats.json", "train_config.json", Checkpoint::FILE, "loss_trace.csv"] {
            rec.output(name)?;
        }
        rec.output(&ck.model_file)?;
        for (it, _) in &out.reports {
            rec.output(&format!("eval_{it:06}.json"))?;
        }
        if let (Some(first), Some(last)) = (out.losses.first(), out.losses.last()) {
            println!("{} iterations, loss {first:.4e} -> {last:.4e}", out.losses.len());
        }
        Ok(())
    })
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut rec = Recorder::new(&cli.out_dir, "evaluate", argv(), Some(seed));
    rec.input(&a.model)?;
    if let Some(c) = &cli.config {
        rec.config(c)?;
    }
    match (&a.data, &a.spec) {
        (Some(d), None) => rec.input(d)?,
        (None, Some(s)) => rec.input(s)?,
        _ => return Err(Error::Config("evaluate needs exactly one of --data and --spec".into())),
    }
    recorded(rec, |rec| {
        let mut cfg = match &cli.config {
            Some(c) => serde_json::from_str::<EvalConfig>(&fs::read_to_string(c)?)
                .map_err(|e| Error::Config(format!("{}: {e}", c.display())))?,
            None => EvalConfig { depth: 4, pipeline: AugmentationPipeline::identity(), n_fake: None, seed, refine: 10 },
        };
        if let Some(d) = a.depth {
            cfg.depth = d;
        }
        if let Some(p) = &a.pipeline {
            cfg.pipeline = p.parse()?;
        }
        if a.n_fake.is_some() {
            cfg.n_fake = a.n_fake;
        }
        if cli.seed.is_some() {
            cfg.seed = seed;
        }
        let model = GeneratorModel::load(&a.model)?;
        let real = match (&a.data, &a.spec) {
            (Some(d), _) => read_batch(d)?.0,
            (_, Some(s)) => SimSpec::load(s)?.with_stamps(a.stamps).simulate(a.n, mix(cfg.seed, 0x5EA1))?,
            _ => unreachable!(),
        };
        let report = evaluate(&model, &real, &cfg)?;
        report.write_json(&rec.path("metrics.json"))?;
        report.write_grid_csv(&rec.path("covariance_error.csv"))?;
        rec.output("metrics.json")?;
        rec.output("covariance_error.csv")?;
        println!(
            "{} stamps: sig_w1 {:.4e}, marginal_emd {:.4e}, correlation {:.4e}",
            report.meta.n_stamps, report.sig_w1, report.marginal_emd, report.correlation_metric
        );
        Ok(())
    })
}

#[derive(Serialize)]
struct DistanceReport {
    sig_w1: f64,
    depth: usize,
    pipeline: String,
    n_a: usize,
    n_b: usize,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    sweep: &'a DriftSweep,
    seed: u64,
    sig_w1: Vec<f64>,
    strictly_increasing: bool,
}

fn cmd_distance(cli: &Cli, a: &DistanceArgs) -> Result<()> {
    let pipe: AugmentationPipeline = a.pipeline.parse()?;
    if a.sweep {
        let seed = cli.seed.unwrap_or(0);
        let rec = Recorder::new(&cli.out_dir, "distance-sweep", argv(), Some(seed));
        return recorded(rec, |rec| {
            let sweep = DriftSweep {
                theta1: a.theta1,
                theta2: a.theta2.clone(),
                sigma: a.sigma,
                depth: a.depth,
                pipeline: pipe.clone(),
                n_samples: a.n,
                n_stamps: a.stamps,
                dt: a.dt,
            };
            let d = sweep.run(seed)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["theta2", "sig_w1"])?;
            for (t, x) in sweep.theta2.iter().zip(&d) {
                w.write_record([t.to_string(), x.to_string()])?;
                println!("theta2 {t}: sig_w1 {x:.6e}");
            }
            write_atomic(&rec.path("sweep.csv"), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
            let report = SweepReport {
                sweep: &sweep,
                seed,
                strictly_increasing: d.windows(2).all(|w| w[0] < w[1]),
                sig_w1: d,
            };
            write_atomic(&rec.path("sweep.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
            rec.output("sweep.csv")?;
            rec.output("sweep.json")
        });
    }
    let (pa, pb) = (a.a.as_ref().expect("clap requires --a"), a.b.as_ref().expect("clap requires --b"));
    let mut rec = Recorder::new(&cli.out_dir, "distance", argv(), None);
    rec.input(pa)?;
    rec.input(pb)?;
    recorded(rec, |rec| {
        let (x, _) = read_batch(pa)?;
        let (y, _) = read_batch(pb)?;
        let d = sig_w1(&expected_signature(&x, a.depth, &pipe)?, &expected_signature(&y, a.depth, &pipe)?)?;
        let report = DistanceReport { sig_w1: d, depth: a.depth, pipeline: pipe.fingerprint(), n_a: x.len(), n_b: y.len() };
        write_atomic(&rec.path("distance.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
        rec.output("distance.json")?;
        println!("sig_w1 {d:.6e}");
        Ok(())
    })
}
