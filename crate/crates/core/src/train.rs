//! Training generators by minimising the squared Sig-W1 distance between the
//! expected signature of generated paths and that of the data.
//!
//! The data statistic is computed once. Each iteration draws fresh noise
//! from a stream keyed by `(seed, iteration)`, so a run resumed from a
//! checkpoint replays the uninterrupted run exactly.

use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Mat, Tape, Var};
use crate::batch::read_batch;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::generators::{Architecture, GeneratorModel, NoiseSource, PreparedNoise};
use crate::market::{simulate_gbm, simulate_rough_bergomi, GbmSpec, RoughBergomiSpec};
use crate::metrics::MetricReport;
use crate::path::{AffineAugmentation, AugmentationPipeline, Path};
use crate::rng::mix;
use crate::signature::{expected_signature, DatasetStats};
use crate::tensor::TensorShape;

const DATA_SALT: u64 = 0xDA7A;
const INIT_SALT: u64 = 0x1417;
const NOISE_SALT: u64 = 0x0015E;
const EVAL_SALT: u64 = 0xE7A1;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape("adam: parameter, gradient and state lengths differ"));
    }
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Where the real paths come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Gbm {
        spec: GbmSpec,
        n_samples: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    RoughBergomi {
        spec: RoughBergomiSpec,
        n_samples: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A path batch CSV with its JSON sidecar.
    Batch { path: PathBuf },
}

impl DataSource {
    /// Loads or simulates the paths. Simulated data use `seed` unless the
    /// source pins its own.
    pub fn load(&self, seed: u64) -> Result<Vec<Path>> {
        match self {
            DataSource::Gbm { spec, n_samples, seed: s } => simulate_gbm(spec, *n_samples, s.unwrap_or(seed)),
            DataSource::RoughBergomi { spec, n_samples, seed: s } => {
                simulate_rough_bergomi(spec, *n_samples, s.unwrap_or(seed))
            }
            DataSource::Batch { path } => Ok(read_batch(path)?.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DataSource::Gbm { spec, n_samples, .. } => {
                spec.validate()?;
                nonzero(*n_samples)
            }
            DataSource::RoughBergomi { spec, n_samples, .. } => {
                spec.validate()?;
                nonzero(*n_samples)
            }
            DataSource::Batch { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::config("empty data path"));
                }
                Ok(())
            }
        }
    }
}

fn nonzero(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("n_samples must be positive"));
    }
    Ok(())
}

fn default_depth() -> usize {
    4
}
fn default_iterations() -> usize {
    2500
}
fn default_batch() -> usize {
    256
}
fn default_refine() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub generator: Architecture,
    #[serde(default)]
    pub pipeline: AugmentationPipeline,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
    pub data: DataSource,
    /// Noise sub-steps per output interval.
    #[serde(default = "default_refine")]
    pub refine: usize,
    /// Metric report cadence in iterations; off when absent.
    #[serde(default)]
    pub eval_every: Option<usize>,
    /// Generated samples per metric report; the data size when absent.
    #[serde(default)]
    pub eval_samples: Option<usize>,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Debug mode: fixed noise and backtracking so the loss never increases.
    #[serde(default)]
    pub line_search: bool,
    #[serde(default)]
    pub estimator: Estimator,
}

/// What the optimiser differentiates. The reported loss is always the
/// batch-mean form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `‖mean_b S_b - target‖²`. Its expectation over the batch exceeds the
    /// population distance by `tr Cov(S) / B`, which favours low-variance
    /// generators.
    #[default]
    BatchMean,
    /// Average of `<S_a - target, S_b - target>` over pairs `a ≠ b`:
    /// unbiased for the squared population distance.
    Unbiased,
}

impl TrainConfig {
    pub fn from_json_file(path: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return Err(Error::config("adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if self.batch_size == 0 || self.depth == 0 || self.refine == 0 {
            return Err(Error::config("batch_size, depth and refine must be positive"));
        }
        if self.estimator == Estimator::Unbiased && self.batch_size < 2 {
            return Err(Error::config("the unbiased estimator needs batch_size >= 2"));
        }
        if matches!(self.eval_every, Some(0)) || matches!(self.checkpoint_every, Some(0)) {
            return Err(Error::config("cadences must be positive"));
        }
        self.generator.validate()?;
        self.data.validate()
    }

    /// Hash of everything that shapes the trajectory. Run length and
    /// reporting cadences are excluded so a run can be extended.
    pub fn fingerprint(&self) -> Result<String> {
        let mut c = self.clone();
        c.iterations = 0;
        c.eval_every = None;
        c.eval_samples = None;
        c.checkpoint_every = None;
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&c)?)))
    }

    pub fn data_seed(&self) -> u64 {
        mix(self.seed, DATA_SALT)
    }
}

/// Everything the loss needs that does not change between iterations.
#[derive(Debug, Clone)]
pub struct SigW1Objective {
    stamps: Vec<f64>,
    affine: Mat,
    offset: Mat,
    shape: TensorShape,
    points: usize,
    target: Mat,
    estimator: Estimator,
}

impl SigW1Objective {
    /// `target` must have been computed under `pipeline`; generated paths
    /// have `output_dim` channels on `stamps`.
    pub fn new(target: &DatasetStats, pipeline: &AugmentationPipeline, stamps: &[f64], output_dim: usize) -> Result<Self> {
        if target.pipeline != pipeline.fingerprint() {
            return Err(Error::IncomparableStats(format!(
                "target computed under {:?}, loss uses {:?}",
                target.pipeline,
                pipeline.fingerprint()
            )));
        }
        let aff = AffineAugmentation::new(pipeline, stamps, output_dim)?;
        if aff.out_width != target.width() {
            return Err(Error::IncomparableStats(format!(
                "augmented width {} vs target width {}",
                aff.out_width,
                target.width()
            )));
        }
        if aff.out_len < 2 {
            return Err(Error::domain("augmented paths need at least 2 points"));
        }
        let n_in = aff.in_len * aff.in_width;
        let n_out = aff.out_len * aff.out_width;
        let affine = Mat::from_shape_vec((n_in, n_out), aff.matrix).map_err(|e| Error::Internal(e.to_string()))?;
        let offset = Mat::from_shape_vec((1, n_out), aff.offset).map_err(|e| Error::Internal(e.to_string()))?;
        let coeffs = target.mean_sig.coeffs().to_vec();
        Ok(Self {
            stamps: stamps.to_vec(),
            affine,
            offset,
            shape: target.mean_sig.shape(),
            points: aff.out_len,
            target: Mat::from_shape_vec((1, coeffs.len()), coeffs).map_err(|e| Error::Internal(e.to_string()))?,
            estimator: Estimator::BatchMean,
        })
    }

    pub fn with_estimator(mut self, estimator: Estimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    /// `‖mean_b S(augment(o_b)) - target‖²` as a tape node, from the
    /// per-stamp generator outputs.
    pub fn loss(&self, tape: &mut Tape, outputs: &[Var]) -> Result<Var> {
        Ok(self.nodes(tape, outputs)?.0)
    }

    /// The reported batch-mean loss and the node to differentiate.
    fn nodes(&self, tape: &mut Tape, outputs: &[Var]) -> Result<(Var, Var)> {
        let x = tape.concat(outputs)?;
        let rows = tape.shape(x).0;
        let a = tape.constant(self.affine.clone());
        let off = tape.constant(self.offset.clone());
        let off = tape.repeat_rows(off, rows)?;
        let lin = tape.matmul(x, a)?;
        let aug = tape.add(lin, off)?;
        let sig = tape.path_signature(aug, self.shape, self.points)?;
        let target = tape.constant(self.target.clone());
        match self.estimator {
            Estimator::BatchMean => {
                let mean = tape.mean_rows(sig);
                let diff = tape.sub(mean, target)?;
                let sq = tape.mul(diff, diff)?;
                let loss = tape.sum(sq);
                Ok((loss, loss))
            }
            Estimator::Unbiased => {
                if rows < 2 {
                    return Err(Error::domain("the unbiased estimator needs at least 2 samples"));
                }
                let target = tape.repeat_rows(target, rows)?;
                let diffs = tape.sub(sig, target)?;
                let mean = tape.mean_rows(diffs);
                let sq = tape.mul(mean, mean)?;
                let loss = tape.sum(sq);
                let each = tape.mul(diffs, diffs)?;
                let diag = tape.sum(each);
                // (B² ‖mean‖² - Σ_b ‖d_b‖²) / (B (B - 1))
                let b = rows as f64;
                let full = tape.scale(loss, b / (b - 1.0));
                let diag = tape.scale(diag, 1.0 / (b * (b - 1.0)));
                Ok((loss, tape.sub(full, diag)?))
            }
        }
    }

    /// Reported loss and the gradient of the optimised objective with
    /// respect to the flattened model parameters.
    pub fn loss_and_grad(&self, model: &GeneratorModel, prep: &PreparedNoise) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let params: Vec<Var> = model.params().iter().map(|m| tape.param(m.clone())).collect();
        let outs = model.forward_tape(&mut tape, &params, prep)?;
        let (loss, objective) = self.nodes(&mut tape, &outs)?;
        let grads = tape.backward(objective)?;
        let flat = params.iter().flat_map(|&p| grads.wrt(p).into_iter()).collect();
        Ok((tape.scalar(loss), flat))
    }

    /// Reported loss and objective values.
    pub fn values(&self, model: &GeneratorModel, prep: &PreparedNoise) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let params: Vec<Var> = model.params().iter().map(|m| tape.constant(m.clone())).collect();
        let outs = model.forward_tape(&mut tape, &params, prep)?;
        let (loss, objective) = self.nodes(&mut tape, &outs)?;
        Ok((tape.scalar(loss), tape.scalar(objective)))
    }

    pub fn loss_value(&self, model: &GeneratorModel, prep: &PreparedNoise) -> Result<f64> {
        Ok(self.values(model, prep)?.0)
    }
}

/// Common output stamps of a batch.
pub fn shared_stamps(batch: &[Path]) -> Result<Vec<f64>> {
    let first = batch.first().ok_or_else(|| Error::data("empty data set"))?;
    if batch.iter().any(|p| p.times() != first.times() || p.width() != first.width()) {
        return Err(Error::data("training data must share stamps and width"));
    }
    Ok(first.times().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Completed iterations.
    pub iteration: usize,
    pub config_fingerprint: String,
    pub model_file: String,
    pub losses: Vec<f64>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub const FILE: &'static str = "checkpoint.json";

    pub fn load(dir: &FsPath) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&fs::read_to_string(dir.join(Self::FILE))?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!("checkpoint version {} unsupported", c.version)));
        }
        Ok(c)
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GeneratorModel,
    /// Loss of the model before each update, on that iteration's noise.
    pub losses: Vec<f64>,
    pub reports: Vec<(usize, MetricReport)>,
    pub target: DatasetStats,
}

/// A training run in progress.
pub struct Trainer {
    cfg: TrainConfig,
    fingerprint: String,
    data: Vec<Path>,
    objective: SigW1Objective,
    target: DatasetStats,
    model: GeneratorModel,
    adam: AdamState,
    losses: Vec<f64>,
    wall: Vec<f64>,
    reports: Vec<(usize, MetricReport)>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    /// Validates the config, loads the data and computes the target
    /// statistic.
    pub fn new(cfg: TrainConfig, out_dir: Option<&FsPath>) -> Result<Self> {
        cfg.validate()?;
        let data = cfg.data.load(cfg.data_seed())?;
        Self::with_data(cfg, data, out_dir)
    }

    pub fn with_data(cfg: TrainConfig, data: Vec<Path>, out_dir: Option<&FsPath>) -> Result<Self> {
        cfg.validate()?;
        let stamps = shared_stamps(&data)?;
        if data[0].width() != cfg.generator.output_dim() {
            return Err(Error::config(format!(
                "data has {} channels, generator outputs {}",
                data[0].width(),
                cfg.generator.output_dim()
            )));
        }
        let target = expected_signature(&data, cfg.depth, &cfg.pipeline)?;
        let objective = SigW1Objective::new(&target, &cfg.pipeline, &stamps, cfg.generator.output_dim())?
            .with_estimator(cfg.estimator);
        let model = GeneratorModel::new(cfg.generator.clone(), mix(cfg.seed, INIT_SALT))?;
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir)?;
        }
        Ok(Self {
            fingerprint: cfg.fingerprint()?,
            adam: AdamState::new(model.n_params()),
            cfg,
            data,
            objective,
            target,
            model,
            losses: Vec::new(),
            wall: Vec::new(),
            reports: Vec::new(),
            out_dir: out_dir.map(FsPath::to_path_buf),
        })
    }

    /// Restores model, optimiser state and loss history from `dir`.
    pub fn resume(&mut self, dir: &FsPath) -> Result<()> {
        let ck = Checkpoint::load(dir)?;
        if ck.config_fingerprint != self.fingerprint {
            return Err(Error::config("checkpoint was written under a different configuration"));
        }
        self.model = GeneratorModel::load_expecting(&dir.join(&ck.model_file), &self.cfg.generator)?;
        if ck.adam.m.len() != self.model.n_params() || ck.losses.len() != ck.iteration {
            return Err(Error::data("checkpoint state does not match the model"));
        }
        self.adam = ck.adam;
        self.wall = vec![f64::NAN; ck.losses.len()];
        self.losses = ck.losses;
        Ok(())
    }

    pub fn model(&self) -> &GeneratorModel {
        &self.model
    }

    pub fn data(&self) -> &[Path] {
        &self.data
    }

    pub fn objective(&self) -> &SigW1Objective {
        &self.objective
    }

    pub fn iteration(&self) -> usize {
        self.losses.len()
    }

    pub fn noise_source(&self) -> NoiseSource {
        NoiseSource::new(mix(self.cfg.seed, NOISE_SALT), self.cfg.generator.noise_dim(), self.cfg.refine)
    }

    fn noise_for(&self, iteration: usize) -> Result<PreparedNoise> {
        let salt = if self.cfg.line_search { 0 } else { iteration as u64 };
        let noise = self.noise_source().reseeded(salt).sample(self.cfg.batch_size, self.objective.stamps())?;
        self.model.prepare(&noise, self.objective.stamps())
    }

    /// Runs until `cfg.iterations` updates have been made.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let start = Instant::now();
        while self.iteration() < self.cfg.iterations {
            let it = self.iteration();
            let prep = self.noise_for(it)?;
            let (loss, grad) = self.objective.loss_and_grad(&self.model, &prep)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss} at iteration {it}; last checkpoint kept"
                )));
            }
            self.losses.push(loss);
            self.wall.push(start.elapsed().as_secs_f64());
            let before = self.model.flat_params();
            let mut after = before.clone();
            adam_step(&mut after, &grad, &mut self.adam, &self.cfg.adam)?;
            if self.cfg.line_search {
                after = self.backtrack(&prep, &before, &after, loss)?;
            }
            self.model.set_flat_params(&after)?;
            let done = self.iteration();
            log::debug!("iteration {done}: loss {loss:.6e}");
            if self.cfg.eval_every.is_some_and(|e| done.is_multiple_of(e)) {
                self.report(done)?;
            }
            if self.cfg.checkpoint_every.is_some_and(|c| done.is_multiple_of(c)) {
                self.checkpoint()?;
            }
        }
        if self.out_dir.is_some() {
            self.checkpoint()?;
            self.write_trace()?;
        }
        Ok(TrainOutcome { model: self.model, losses: self.losses, reports: self.reports, target: self.target })
    }

    /// Halves the step along the proposed direction until the loss on the
    /// same noise does not increase; keeps `before` if nothing works.
    fn backtrack(&self, prep: &PreparedNoise, before: &[f64], after: &[f64], loss: f64) -> Result<Vec<f64>> {
        let mut trial = self.model.clone();
        let mut scale = 1.0;
        for _ in 0..30 {
            let cand: Vec<f64> = before.iter().zip(after).map(|(b, a)| b + scale * (a - b)).collect();
            trial.set_flat_params(&cand)?;
            if self.objective.loss_value(&trial, prep)? <= loss {
                return Ok(cand);
            }
            scale *= 0.5;
        }
        Ok(before.to_vec())
    }

    /// Metric report of the current model against the training data.
    pub fn report(&mut self, iteration: usize) -> Result<()> {
        let n = self.cfg.eval_samples.unwrap_or(self.data.len()).min(self.data.len());
        let real = &self.data[..n];
        let src = NoiseSource::new(mix(self.cfg.seed, EVAL_SALT), self.cfg.generator.noise_dim(), self.cfg.refine);
        let fake = self.model.sample(&src, n, self.objective.stamps())?;
        let report = MetricReport::compare(real, &fake, self.cfg.depth, &self.cfg.pipeline, src.seed)?;
        log::info!(
            "iteration {iteration}: sig_w1 {:.4e} emd {:.4e} corr {:.4e}",
            report.sig_w1,
            report.marginal_emd,
            report.correlation_metric
        );
        if let Some(dir) = &self.out_dir {
            report.write_json(&dir.join(format!("eval_{iteration:06}.json")))?;
        }
        self.reports.push((iteration, report));
        Ok(())
    }

    /// Writes the model and then the manifest, each atomically.
    pub fn checkpoint(&self) -> Result<()> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        let model_file = format!("model_{:06}.bin", self.iteration());
        self.model.save(&dir.join(&model_file))?;
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            iteration: self.iteration(),
            config_fingerprint: self.fingerprint.clone(),
            model_file,
            losses: self.losses.clone(),
            adam: self.adam.clone(),
        };
        write_atomic(&dir.join(Checkpoint::FILE), serde_json::to_string(&ck)?.as_bytes())
    }

    fn write_trace(&self) -> Result<()> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "loss", "wall_time"])?;
        for (i, (l, t)) in self.losses.iter().zip(&self.wall).enumerate() {
            w.write_record([i.to_string(), l.to_string(), format!("{t:.3}")])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(&dir.join("loss_trace.csv"), &bytes)
    }
}

/// Trains from scratch.
pub fn train(cfg: &TrainConfig, out_dir: Option<&FsPath>) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone(), out_dir)?.run()
}
