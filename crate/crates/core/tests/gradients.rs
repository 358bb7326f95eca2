use sigwgan::generators::{Architecture, GeneratorModel, LogsigRnnConfig, LstmConfig, NoiseSource};
use sigwgan::market::{simulate_gbm, GbmSpec};
use sigwgan::train::{Estimator, SigW1Objective};
use sigwgan::{expected_signature, sig_w1, AugmentationPipeline};

const STAMPS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

fn toy(arch: Architecture, pipeline: &str) -> (GeneratorModel, SigW1Objective, sigwgan::generators::PreparedNoise) {
    toy_with(arch, pipeline, Estimator::BatchMean)
}

fn toy_with(
    arch: Architecture,
    pipeline: &str,
    estimator: Estimator,
) -> (GeneratorModel, SigW1Objective, sigwgan::generators::PreparedNoise) {
    let pipe: AugmentationPipeline = pipeline.parse().unwrap();
    let data = simulate_gbm(&GbmSpec::uniform(2, 0.1, 0.3, 0.2, 0.05, 4), 64, 3).unwrap();
    let target = expected_signature(&data, 2, &pipe).unwrap();
    let obj = SigW1Objective::new(&target, &pipe, &STAMPS, 2).unwrap().with_estimator(estimator);
    let model = GeneratorModel::new(arch, 8).unwrap();
    let noise = NoiseSource::new(5, model.noise_dim(), 3).sample(16, &STAMPS).unwrap();
    let prep = model.prepare(&noise, &STAMPS).unwrap();
    (model, obj, prep)
}

fn logsig_arch() -> Architecture {
    Architecture::LogsigRnn(LogsigRnnConfig { noise_dim: 1, output_dim: 2, hidden: 4, logsig_depth: 2, coarse_intervals: 2 })
}

fn lstm_arch() -> Architecture {
    Architecture::Lstm(LstmConfig { noise_dim: 1, output_dim: 2, hidden: 3 })
}

fn check_finite_differences(arch: Architecture, pipeline: &str) {
    check_with(arch, pipeline, Estimator::BatchMean);
}

fn check_with(arch: Architecture, pipeline: &str, estimator: Estimator) {
    let (mut model, obj, prep) = toy_with(arch, pipeline, estimator);
    assert!(model.n_params() <= 200);
    let (_, grad) = obj.loss_and_grad(&model, &prep).unwrap();
    let base = model.flat_params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        model.set_flat_params(&p).unwrap();
        let up = obj.values(&model, &prep).unwrap().1;
        p[i] = base[i] - h;
        model.set_flat_params(&p).unwrap();
        let down = obj.values(&model, &prep).unwrap().1;
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-5, "{pipeline}: worst relative error {worst:e}");
}

#[test]
fn logsig_rnn_chain_matches_finite_differences() {
    check_finite_differences(logsig_arch(), "time,visibility");
    check_finite_differences(logsig_arch(), "basepoint,lead_lag,time");
}

#[test]
fn unbiased_objective_matches_finite_differences() {
    check_with(logsig_arch(), "time,visibility", Estimator::Unbiased);
}

#[test]
fn lstm_chain_matches_finite_differences() {
    check_finite_differences(lstm_arch(), "basepoint,time");
}

#[test]
fn loss_is_the_squared_distance_of_generated_statistics() {
    let pipe: AugmentationPipeline = "time,visibility".parse().unwrap();
    let (model, obj, prep) = toy(logsig_arch(), "time,visibility");
    let noise = NoiseSource::new(5, model.noise_dim(), 3).sample(16, &STAMPS).unwrap();
    let fake = model.generate(&noise, &STAMPS).unwrap();
    let data = simulate_gbm(&GbmSpec::uniform(2, 0.1, 0.3, 0.2, 0.05, 4), 64, 3).unwrap();
    let d = sig_w1(&expected_signature(&fake, 2, &pipe).unwrap(), &expected_signature(&data, 2, &pipe).unwrap()).unwrap();
    let loss = obj.loss_value(&model, &prep).unwrap();
    assert!((loss - d * d).abs() < 1e-10, "{loss} vs {}", d * d);

    // Against its own statistics the loss vanishes.
    let own = SigW1Objective::new(&expected_signature(&fake, 2, &pipe).unwrap(), &pipe, &STAMPS, 2).unwrap();
    assert!(own.loss_value(&model, &prep).unwrap() < 1e-24);
}
