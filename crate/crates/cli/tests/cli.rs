use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5

[synthetic]
n_stations = 4
days = 12
crash_rate = 0.05

[model]
input_len = 12
horizon = 3
patch_len = 4
d_model = 8
heads = 2
temporal_depth = 1
spatial_depth = 1

[training]
max_epochs = 2
patience = 2
lr = 0.003

[route]
runs = 50
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hourcast"));
    c.env_remove("HOURCAST_OUT");
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    let o = bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    o
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn full_pipeline_on_small_synthetic_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    for sub in [&["build-graphs"][..], &["train"], &["calibrate"], &["predict"], &["evaluate"], &["delta", "--hours", "8,17"], &["route-mc"]] {
        ok(&run(&cfg, &out, sub));
    }
    for f in [
        "data/stations.csv",
        "data/counts.csv",
        "graphs/t_mean.csv",
        "graphs/bank_h23.csv",
        "graphs/rho.csv",
        "graphs/a_adaptive_h00.csv",
        "graphs/meta.json",
        "model-full/model.ckpt",
        "model-full/model.json",
        "model-full/history.json",
        "model-full/radii.csv",
        "model-full/forecasts.csv",
        "model-full/report.json",
        "delta/delta_h08.csv",
        "delta/delta_h17.csv",
        "route/trip_samples.csv",
        "route/ks.json",
        "manifests/build-graphs.json",
        "manifests/train.json",
        "manifests/evaluate.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(!out.join("delta/delta_h09.csv").exists());

    // Every width equals twice the matching radius.
    let radii = std::fs::read_to_string(out.join("model-full/radii.csv")).unwrap();
    assert!(radii.starts_with("# alpha=0.1 n_cal="));
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(out.join("model-full/radii.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let mut f = csv::Reader::from_path(out.join("model-full/forecasts.csv")).unwrap();
    let fh = f.headers().unwrap().clone();
    let col = |name: &str| fh.iter().position(|h| h == name).unwrap();
    let (hz, st, w, lo, up) = (col("horizon"), col("station"), col("width"), col("lower"), col("upper"));
    let mut n = 0;
    for rec in f.records() {
        let rec = rec.unwrap();
        let k: usize = rec[hz].parse().unwrap();
        let j = header.iter().position(|h| h == &rec[st]).unwrap();
        let q: f64 = rows[k - 1][j].parse().unwrap();
        let width: f64 = rec[w].parse().unwrap();
        assert_eq!(width, 2.0 * q);
        let (l, u): (f64, f64) = (rec[lo].parse().unwrap(), rec[up].parse().unwrap());
        assert!((u - l - width).abs() < 1e-9 * (1.0 + width));
        n += 1;
    }
    assert!(n > 0);

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("model-full/report.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["horizons"], 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifests/train.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 5);
    assert_eq!(manifest["config"]["model"]["d_model"], 8);
    assert!(manifest["seeds"]["train"].is_u64());
}

#[test]
fn predict_rejects_mismatched_alpha_until_recalibrated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    ok(&run(&cfg, &out, &["build-graphs"]));
    ok(&run(&cfg, &out, &["train"]));
    let o = run(&cfg, &out, &["predict", "--alpha", "0.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("calibrate"));
    ok(&run(&cfg, &out, &["calibrate", "--alpha", "0.2"]));
    ok(&run(&cfg, &out, &["predict", "--alpha", "0.2"]));
}

#[test]
fn no_crash_builds_base_graphs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    ok(&run(&cfg, &out, &["build-graphs", "--no-crash"]));
    assert!(!out.join("data/crashes.csv").exists());
    let rho = std::fs::read_to_string(out.join("graphs/rho.csv")).unwrap();
    for line in rho.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
    }
    let m = std::fs::read_to_string(out.join("manifests/build-graphs.json")).unwrap();
    assert!(m.contains("\"mode\": \"base\""));
}

#[test]
fn build_graphs_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&run(&cfg, &a, &["build-graphs"]));
    ok(&run(&cfg, &b, &["build-graphs"]));
    let ma: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifests/build-graphs.json")).unwrap()).unwrap();
    let mb: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(b.join("manifests/build-graphs.json")).unwrap()).unwrap();
    assert_eq!(ma["outputs"], mb["outputs"]);
}

#[test]
fn invalid_sigma_is_a_config_error_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}\n[graph]\nsigma_sq = 0.0\n"));
    let out = tmp.path().join("run");
    let o = run(&cfg, &out, &["build-graphs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 1\nsigma = 3\n");
    let o = run(&cfg, &tmp.path().join("run"), &["build-graphs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma"));
}

#[test]
fn train_without_graphs_names_the_producer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = run(&cfg, &tmp.path().join("run"), &["train"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("build-graphs"));
}

#[test]
fn predict_without_checkpoint_names_train() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    ok(&run(&cfg, &out, &["build-graphs"]));
    let o = run(&cfg, &out, &["predict", "--ablation", "NoPatch"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`train`"));
}

#[test]
fn missing_input_file_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[data]\nstations = \"nope/stations.csv\"\ncounts = \"nope/counts.csv\"\n",
    );
    let o = run(&cfg, &tmp.path().join("run"), &["build-graphs"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stations.csv"));
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("from-env");
    let o = bin()
        .args(["build-graphs", "--config"])
        .arg(&cfg)
        .env("HOURCAST_OUT", &out)
        .output()
        .unwrap();
    ok(&o);
    assert!(out.join("graphs/meta.json").exists());
}

#[test]
fn bad_flag_values_are_rejected() {
    let o = bin().args(["train", "--ablation", "Bogus"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["train", "--hours", "30"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
