use hourcast::data_io::SyntheticConfig;
use hourcast::error::{Error, ErrorClass};
use hourcast::model::{Ablation, ModelConfig};
use hourcast::pipeline::{
    build_graphs, delta_stage, evaluate_stage, predict_stage, run_benchmark, train_stage, RunConfig,
};

fn small(out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 9,
        out_dir: out.to_path_buf(),
        synthetic: Some(SyntheticConfig {
            n_stations: 4,
            days: 12,
            crash_rate: 0.05,
            ..SyntheticConfig::default()
        }),
        ..Default::default()
    };
    cfg.model = ModelConfig {
        input_len: 12,
        horizon: 3,
        patch_len: 4,
        d_model: 8,
        heads: 2,
        temporal_depth: 1,
        spatial_depth: 1,
        ..ModelConfig::default()
    };
    cfg.training.options.max_epochs = 3;
    cfg.training.options.patience = 3;
    cfg.output.plot = false;
    cfg
}

#[test]
fn staged_run_matches_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    build_graphs(&cfg).unwrap();
    let s = train_stage(&cfg).unwrap();
    let on_disk = evaluate_stage(&cfg).unwrap();
    let mem = run_benchmark(&cfg).unwrap();
    assert_eq!(s.best_epoch, mem.best_epoch);
    assert_eq!(s.epochs_run, mem.epochs_run);
    assert_eq!(
        serde_json::to_string(&on_disk).unwrap(),
        serde_json::to_string(&mem.report).unwrap()
    );
}

#[test]
fn rebuilt_graphs_invalidate_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    build_graphs(&cfg).unwrap();
    train_stage(&cfg).unwrap();
    predict_stage(&cfg).unwrap();
    cfg.graph.sigma_sq *= 2.0;
    build_graphs(&cfg).unwrap();
    let e = predict_stage(&cfg).unwrap_err();
    assert_eq!(e.class(), ErrorClass::Data, "{e}");
    assert!(e.to_string().contains("build-graphs") || e.to_string().contains("train"), "{e}");
}

#[test]
fn delta_needs_crashes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.no_crash = true;
    build_graphs(&cfg).unwrap();
    let e = delta_stage(&cfg).unwrap_err();
    assert!(matches!(e, Error::Config(_)), "{e}");
}

#[test]
fn ablations_use_separate_model_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.training.options.max_epochs = 1;
    build_graphs(&cfg).unwrap();
    for a in [Ablation::Full, Ablation::NoPatch, Ablation::NoCrossAttn] {
        cfg.model.ablation = a;
        train_stage(&cfg).unwrap();
    }
    for d in ["model-full", "model-nopatch", "model-nocrossattn"] {
        assert!(tmp.path().join(d).join("model.ckpt").exists(), "{d}");
    }
}
