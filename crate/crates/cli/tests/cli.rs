use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sigwgan(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigwgan"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = sigwgan(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const GBM: &str = r#"{"model":"gbm","mu":[0.1,0.05],"sigma":[0.2,0.3],"rho":[[1,0.5],[0.5,1]],"dt":0.01,"n_stamps":10}"#;
const RBERGOMI: &str = r#"{"model":"rough_bergomi","hurst":0.25,"xi":0.04,"eta":1.0,"rho":-0.7,"n_stamps":20,"oversample":4}"#;

fn simulated(dir: &Path, seed: &str, n: &str) -> PathBuf {
    let spec = write(dir, "gbm.json", GBM);
    let out = dir.join(format!("sim{seed}"));
    ok(&out, &["--seed", seed, "simulate", "--spec", spec.to_str().unwrap(), "--n", n]);
    out.join("paths.csv")
}

#[test]
fn distance_of_a_batch_to_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), "1", "200");
    let b = simulated(dir.path(), "2", "200");
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    ok(&dir.path().join("self"), &["distance", "--a", a, "--b", a]);
    assert_eq!(json(dir.path().join("self/distance.json"))["sig_w1"].as_f64(), Some(0.0));
    ok(&dir.path().join("pair"), &["distance", "--a", a, "--b", b]);
    assert!(json(dir.path().join("pair/distance.json"))["sig_w1"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulation_is_reproducible_and_manifested() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "gbm.json", GBM);
    for run in ["a", "b"] {
        ok(&dir.path().join(run), &["--seed", "5", "simulate", "--spec", spec.to_str().unwrap(), "--n", "50"]);
    }
    let (a, b) = (json(dir.path().join("a/manifest.json")), json(dir.path().join("b/manifest.json")));
    assert_eq!(a["outputs"], b["outputs"]);
    assert_eq!(a["seed"], 5);
    let first = a["outputs"][0]["sha256"].as_str().unwrap();
    assert_eq!(first.len(), 64);
    assert_eq!(
        fs::read(dir.path().join("a/paths.csv")).unwrap(),
        fs::read(dir.path().join("b/paths.csv")).unwrap()
    );
}

#[test]
fn sweep_distances_increase_with_drift() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&out, &["--seed", "3", "distance", "--sweep", "--n", "2000", "--theta2", "0.02,0.2,0.5,1.0"]);
    let r = json(out.join("sweep.json"));
    assert_eq!(r["strictly_increasing"], true, "{r}");
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 5);
}

fn prices(rows: usize) -> String {
    let mut s = String::from("date,AAA,BBB\n");
    for i in 0..rows {
        let t = i as f64;
        s.push_str(&format!("d{i:04},{},{}\n", 100.0 + (t * 0.3).sin() + 0.01 * t, 50.0 + (t * 0.7).cos()));
    }
    s
}

#[test]
fn ingest_splits_chronologically_with_stable_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "prices.csv", &prices(61));
    let stdout = ok(&dir.path().join("a"), &["ingest", "--prices", p.to_str().unwrap(), "--window", "10"]);
    assert!(stdout.contains("51 windows"), "{stdout}");
    ok(&dir.path().join("b"), &["ingest", "--prices", p.to_str().unwrap(), "--window", "10"]);
    let (a, b) = (json(dir.path().join("a/manifest.json")), json(dir.path().join("b/manifest.json")));
    assert_eq!(a["outputs"], b["outputs"]);
    assert_eq!(a["inputs"][0]["sha256"], b["inputs"][0]["sha256"]);
    // 40 training windows, header included.
    assert!(fs::read_to_string(dir.path().join("a/train.csv")).unwrap().lines().count() > 40);
}

#[test]
fn rerun_with_unchanged_inputs_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), "1", "50");
    let out = dir.path().join("sig");
    let args = ["sig", "--paths", a.to_str().unwrap(), "--depth", "2", "--pipeline", "time", "--expected"];
    assert!(ok(&out, &args).contains("coordinates"));
    assert_eq!(ok(&out, &args), "");
    fs::remove_file(out.join("stats.json")).unwrap();
    assert!(ok(&out, &args).contains("coordinates"));
}

#[test]
fn sig_writes_labelled_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), "1", "20");
    let out = dir.path().join("sig");
    ok(&out, &["sig", "--paths", a.to_str().unwrap(), "--depth", "2"]);
    let text = fs::read_to_string(out.join("signatures.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "sample_id,(),1,2,11,12,21,22");
    assert_eq!(text.lines().count(), 21);
    ok(&out, &["sig", "--paths", a.to_str().unwrap(), "--depth", "3", "--log"]);
    let text = fs::read_to_string(out.join("logsignatures.csv")).unwrap();
    // Lyndon words of length at most 3 on two letters.
    assert_eq!(text.lines().next().unwrap().split(',').count(), 1 + 5);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), "1", "20");
    let a = a.to_str().unwrap();
    let out = dir.path().join("x");

    let bad_pipeline = sigwgan(&out, &["distance", "--a", a, "--b", a, "--pipeline", "warp"]);
    assert_eq!(bad_pipeline.status.code(), Some(2));
    let zero_depth = sigwgan(&out, &["sig", "--paths", a, "--depth", "0"]);
    assert_eq!(zero_depth.status.code(), Some(2));

    let missing = sigwgan(&out, &["sig", "--paths", dir.path().join("nope.csv").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(3));
    let p = write(dir.path(), "bad.csv", "date,A\nd1,1.0\nd2,-3.0\nd3,2.0\n");
    let bad_prices = sigwgan(&out, &["ingest", "--prices", p.to_str().unwrap(), "--window", "1"]);
    assert_eq!(bad_prices.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad_prices.stderr).contains("row 3"));

    let cfg = write(
        dir.path(),
        "blowup.json",
        r#"{"generator":{"kind":"lstm","noise_dim":1,"output_dim":2,"hidden":4},"pipeline":"time","depth":2,
            "iterations":20,"batch_size":8,"adam":{"lr":1e300,"beta1":0.9,"beta2":0.999,"eps":1e-8},"seed":1,
            "data":{"kind":"batch","path":"sim1/paths.csv"}}"#,
    );
    let blowup = sigwgan(&out, &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(blowup.status.code(), Some(4), "{}", String::from_utf8_lossy(&blowup.stderr));
}

#[test]
fn train_then_evaluate_on_a_finer_grid() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "rb.json", RBERGOMI);
    let data = dir.path().join("data");
    ok(&data, &["--seed", "1", "simulate", "--spec", spec.to_str().unwrap(), "--n", "100"]);
    let cfg = write(
        dir.path(),
        "train.json",
        r#"{"generator":{"kind":"logsig_rnn","noise_dim":2,"output_dim":2,"hidden":8},"pipeline":"time,visibility",
            "depth":2,"iterations":6,"batch_size":16,"seed":4,"checkpoint_every":3,
            "data":{"kind":"batch","path":"data/paths.csv"}}"#,
    );
    let run = dir.path().join("run");
    let stdout = ok(&run, &["--config", cfg.to_str().unwrap(), "train"]);
    assert!(stdout.contains("6 iterations"), "{stdout}");
    assert_eq!(fs::read_to_string(run.join("loss_trace.csv")).unwrap().lines().count(), 7);
    let trained = fs::read(run.join("model.bin")).unwrap();

    // Resuming for more iterations continues the same run.
    let more = dir.path().join("more");
    fs::create_dir_all(&more).unwrap();
    for f in ["checkpoint.json", "model_000006.bin"] {
        fs::copy(run.join(f), more.join(f)).unwrap();
    }
    let stdout = ok(&more, &["--config", cfg.to_str().unwrap(), "train", "--resume", "--iterations", "8"]);
    assert!(stdout.contains("8 iterations"), "{stdout}");
    assert_ne!(fs::read(more.join("model.bin")).unwrap(), trained);

    let model = run.join("model.bin");
    let eval = dir.path().join("eval");
    ok(
        &eval,
        &[
            "--seed", "9", "evaluate", "--model", model.to_str().unwrap(), "--spec", spec.to_str().unwrap(),
            "--n", "60", "--stamps", "30", "--depth", "2", "--pipeline", "time",
        ],
    );
    let m = json(eval.join("metrics.json"));
    for key in ["sig_w1", "marginal_emd", "correlation_metric"] {
        assert!(m[key].as_f64().unwrap().is_finite(), "{key}: {m}");
    }
    assert_eq!(m["meta"]["n_stamps"], 30);
    assert!(fs::read_to_string(eval.join("covariance_error.csv")).unwrap().lines().count() > 1);
}
