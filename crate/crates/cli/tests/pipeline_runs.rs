mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use common::{small_config, small_setup};
use loopguard::config::parse_config;
use loopguard::pipeline::{self, ReportSummary, ScoreRow, StageManifest};
use loopguard::store::{self, SvddFile};
use loopguard::{run, CliError, Stage};
use loopguard_core::evaluation::ThresholdReport;
use loopguard_core::{EmbeddingMatrix, SampleManifest};

const EXPECTED: &[&str] = &[
    "config.json",
    "embeddings.emb1",
    "embeddings.manifest.json",
    "split.json",
    "pretrained.model.json",
    "pretrained.model.bin",
    "pretrain_history.csv",
    "svdd.model.json",
    "svdd.model.bin",
    "svdd.svdd.json",
    "finetune_history.csv",
    "scores.csv",
    "thresholds.json",
    "iforest.json",
    "pca.json",
    "pca.bin",
    "baseline_scores.csv",
    "baseline_thresholds.json",
    "projection.csv",
    "histograms.csv",
    "latent_report.csv",
    "latent_heatmap.csv",
    "box_stats.json",
    "report.json",
];

fn stage_manifest(dir: &Path, stage: Stage) -> StageManifest {
    store::read_json(&dir.join(stage.manifest_name())).unwrap()
}

#[test]
fn all_writes_every_artifact_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let dir = run(&Stage::ALL, &config).unwrap();
    assert_eq!(dir, config.run_dir());
    for name in EXPECTED {
        assert!(dir.join(name).is_file(), "missing {name}");
    }
    for stage in Stage::ALL {
        let m = stage_manifest(&dir, stage);
        assert_eq!(m.stage, stage.name());
        assert_eq!(m.config_hash, config.hash());
        for (name, hash) in &m.outputs {
            assert_eq!(&store::sha256_file(&dir.join(name)).unwrap(), hash, "{name}");
        }
    }
    assert!(!dir.join(pipeline::LOCK_FILE).exists());

    let report: ReportSummary = store::read_json(&dir.join("report.json")).unwrap();
    assert_eq!(report.rows, 100);
    assert_eq!(report.train_rows, 80);
    assert_eq!(report.latent_dim, 4);
    for method in ["svdd", "iforest", "pca"] {
        let auc = report.auc[method];
        assert!((0.0..=1.0).contains(&auc), "{method}: {auc}");
        assert!(report.thresholds.contains_key(method));
    }
    assert!(report.projection_evr[0] >= report.projection_evr[1]);

    // the echoed config reproduces the same run directory
    let echoed = parse_config(&dir.join("config.json")).unwrap();
    assert_eq!(echoed, config);
}

#[test]
fn no_stage_rewrites_an_upstream_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run(&Stage::ALL, &small_config(tmp.path())).unwrap();
    let mut produced: BTreeMap<String, String> = BTreeMap::new();
    for stage in Stage::ALL {
        let m = stage_manifest(&dir, stage);
        for (name, hash) in &m.inputs {
            if let Some(expected) = produced.get(name) {
                assert_eq!(hash, expected, "{} read a modified {name}", stage.name());
            }
        }
        for (name, hash) in m.outputs {
            assert!(produced.insert(name.clone(), hash).is_none(), "{name} written twice");
        }
    }
}

#[test]
fn threshold_comes_from_the_saved_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run(&Stage::ALL, &small_config(tmp.path())).unwrap();
    let svdd: SvddFile = store::read_json(&dir.join("svdd.svdd.json")).unwrap();
    let thresholds: BTreeMap<String, ThresholdReport> = store::read_json(&dir.join("thresholds.json")).unwrap();
    assert_eq!(svdd.training_threshold, Some(thresholds["svdd"].threshold));

    let rows: Vec<ScoreRow> = store::read_csv(&dir.join("scores.csv")).unwrap();
    let t = thresholds["svdd"].threshold;
    assert!(rows.iter().all(|r| r.flagged == (r.score > t)));
    let train: Vec<&ScoreRow> = rows.iter().filter(|r| r.split == "train").collect();
    let flagged = train.iter().filter(|r| r.flagged).count() as f64 / train.len() as f64;
    assert_eq!(flagged, thresholds["svdd"].train_flagged_fraction);
    assert!(flagged <= 0.05 + 1.0 / train.len() as f64);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config(tmp.path());
    let a = run(&Stage::ALL, &config).unwrap();
    config.output_dir = tmp.path().join("second");
    let b = run(&Stage::ALL, &config).unwrap();
    assert_ne!(a, b);
    for name in ["scores.csv", "thresholds.json", "baseline_scores.csv", "report.json", "svdd.model.bin"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn stages_can_run_one_at_a_time() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let err = run(&[Stage::Score], &config).unwrap_err();
    assert!(matches!(err, CliError::Prerequisite { .. }), "{err:?}");
    assert_eq!(err.exit_code(), 3);

    run(&[Stage::Ingest, Stage::Pretrain], &config).unwrap();
    let err = run(&[Stage::Score], &config).unwrap_err();
    match &err {
        CliError::Prerequisite { artifact, hint } => {
            assert!(artifact.ends_with("svdd.model.json"), "{artifact:?}");
            assert!(hint.contains("finetune"));
        }
        other => panic!("{other:?}"),
    }
    for stage in [Stage::Finetune, Stage::Score, Stage::Baseline, Stage::Report] {
        run(&[stage], &config).unwrap();
    }
    let first = std::fs::read(config.run_dir().join("scores.csv")).unwrap();
    run(&[Stage::Score], &config).unwrap();
    assert_eq!(std::fs::read(config.run_dir().join("scores.csv")).unwrap(), first);
}

#[test]
fn report_without_baselines_covers_svdd_only() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let dir = run(
        &[Stage::Ingest, Stage::Pretrain, Stage::Finetune, Stage::Score, Stage::Report],
        &config,
    )
    .unwrap();
    let report: ReportSummary = store::read_json(&dir.join("report.json")).unwrap();
    assert_eq!(report.auc.keys().collect::<Vec<_>>(), vec!["svdd"]);
}

#[test]
fn unlabeled_data_skips_auc() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = small_setup(tmp.path(), "");
    let (m, _) = store::load_embeddings(&tmp.path().join("data.emb1")).unwrap();
    store::save_embeddings(&tmp.path().join("data.emb1"), &m, &SampleManifest::numbered(m.rows())).unwrap();
    let dir = run(&Stage::ALL, &parse_config(&config_path).unwrap()).unwrap();
    let report: ReportSummary = store::read_json(&dir.join("report.json")).unwrap();
    assert!(report.auc.is_empty());
    assert_eq!(report.notes.len(), 1);
}

#[test]
fn held_lock_blocks_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let dir = config.run_dir();
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join(pipeline::LOCK_FILE), "1").unwrap();
    let err = run(&[Stage::Ingest], &config).unwrap_err();
    assert!(matches!(err, CliError::Locked { .. }));
    assert!(!dir.join("embeddings.emb1").exists());
    // the foreign lock is left in place
    assert!(dir.join(pipeline::LOCK_FILE).exists());
}

#[test]
fn dataset_width_must_match_encoder() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = small_setup(tmp.path(), "");
    let m = EmbeddingMatrix::new(10, 8, vec![0.5; 80]).unwrap();
    store::save_embeddings(&tmp.path().join("data.emb1"), &m, &SampleManifest::numbered(10)).unwrap();
    match run(&[Stage::Ingest], &parse_config(&config_path).unwrap()).unwrap_err() {
        CliError::Config { path, .. } => assert_eq!(path, "encoder.dims"),
        other => panic!("{other:?}"),
    }
}

fn binary() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_loopguard"));
    c.env_remove("LOOPGUARD_SEED").env("RUST_LOG", "error");
    c
}

fn stderr_error(out: &std::process::Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str::<serde_json::Value>(line).unwrap()["error"].clone()
}

#[test]
fn binary_exit_codes_and_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_setup(tmp.path(), "");

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"hyperparameters":{"batch_size":0}}"#).unwrap();
    let out = binary().args(["all", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_error(&out);
    assert_eq!(err["kind"], "config");
    assert_eq!(err["path"], "hyperparameters.batch_size");

    let out = binary().args(["score", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["kind"], "prerequisite");

    let out = binary().args(["all", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = String::from_utf8(out.stdout).unwrap();
    assert!(Path::new(dir.trim()).join("report.json").is_file());

    let out = binary()
        .args(["ingest", "--config"])
        .arg(&config)
        .env("LOOPGUARD_SEED", "nope")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["path"], "LOOPGUARD_SEED");

    let diverge = small_setup(tmp.path(), r#", "output_dir": "div""#);
    let text = std::fs::read_to_string(&diverge)
        .unwrap()
        .replace(r#""max_epochs": 4"#, r#""max_epochs": 50, "lr0": 1000, "lr_min": 1000, "weight_decay": 10"#);
    std::fs::write(&diverge, text).unwrap();
    let out = binary().args(["all", "--config"]).arg(&diverge).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_error(&out)["kind"], "numeric");
}

#[test]
fn seed_variable_selects_a_different_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_setup(tmp.path(), "");
    let run_with = |seed: &str| {
        let out = binary()
            .args(["ingest", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(tmp.path().join("runs"))
            .env("LOOPGUARD_SEED", seed)
            .output()
            .unwrap();
        assert!(out.status.success());
        std::path::PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
    };
    let a = run_with("11");
    let b = run_with("12");
    assert_ne!(a, b);
    assert!(a.starts_with(tmp.path().join("runs")));
    let echoed = parse_config(&a.join("config.json")).unwrap();
    assert_eq!(echoed.split.seed, 11);
    assert_eq!(echoed.hyperparameters.seed, 11);
}

#[test]
fn synth_subcommand_writes_labelled_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx.json");
    std::fs::write(&fx, r#"{"n_normal": 20, "n_anomaly": 3, "dim": 16, "shifted_coords": 2}"#).unwrap();
    let out_path = tmp.path().join("d.emb1");
    let out = binary()
        .args(["synth", "--fixture"])
        .arg(&fx)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let (m, manifest) = store::load_embeddings(&out_path).unwrap();
    assert_eq!((m.rows(), m.dim()), (23, 16));
    let labels = pipeline::manifest_labels(&manifest).unwrap();
    assert_eq!(labels.iter().filter(|&&a| a).count(), 3);
    assert_eq!(manifest.entries[20].id, "anomaly-00000");

    std::fs::write(&fx, r#"{"n_normal": 20, "wrong": 1}"#).unwrap();
    let out = binary().args(["synth", "--fixture"]).arg(&fx).arg("--out").arg(&out_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
