//! Stage orchestration. Every stage reads its inputs from the run directory
//! and writes its own artifacts plus a `<stage>.stage.json` manifest holding
//! content hashes of everything it read and wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use loopguard_core::baselines::{IsolationForest, PcaModel};
use loopguard_core::evaluation::{box_stats, latent_report, project_2d, roc_auc, score_histogram, BoxStats, ThresholdReport};
use loopguard_core::training::latent_variance;
use loopguard_core::{
    finetune_svdd, pretrain_autoencoder, split_dataset, DatasetSplit, EmbeddingMatrix, SampleManifest, TrainHistory,
};
use loopguard_core::embedding::EMB1_VERSION;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::store::{self, StoreError};

pub const LOCK_FILE: &str = ".lock";
pub const CONFIG_ECHO: &str = "config.json";

pub const EMBEDDINGS: &str = "embeddings.emb1";
pub const MANIFEST: &str = "embeddings.manifest.json";
pub const SPLIT: &str = "split.json";
pub const PRETRAINED: &str = "pretrained";
pub const PRETRAIN_HISTORY: &str = "pretrain_history.csv";
pub const SVDD: &str = "svdd";
pub const FINETUNE_HISTORY: &str = "finetune_history.csv";
pub const SCORES: &str = "scores.csv";
pub const THRESHOLDS: &str = "thresholds.json";
pub const IFOREST: &str = "iforest.json";
pub const PCA_JSON: &str = "pca.json";
pub const PCA_BIN: &str = "pca.bin";
pub const BASELINE_SCORES: &str = "baseline_scores.csv";
pub const BASELINE_THRESHOLDS: &str = "baseline_thresholds.json";
pub const PROJECTION: &str = "projection.csv";
pub const HISTOGRAMS: &str = "histograms.csv";
pub const LATENT_REPORT: &str = "latent_report.csv";
pub const LATENT_HEATMAP: &str = "latent_heatmap.csv";
pub const BOX_STATS: &str = "box_stats.json";
pub const REPORT: &str = "report.json";

/// Manifest tag holding ground-truth labels (`normal` / `anomaly`).
pub const LABEL_TAG: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Pretrain,
    Finetune,
    Score,
    Baseline,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Pretrain,
        Stage::Finetune,
        Stage::Score,
        Stage::Baseline,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Score => "score",
            Stage::Baseline => "baseline",
            Stage::Report => "report",
        }
    }

    pub fn manifest_name(self) -> String {
        format!("{}.stage.json", self.name())
    }
}

/// Which stage writes a given run-directory artifact.
fn producer(artifact: &str) -> Stage {
    match artifact {
        EMBEDDINGS | MANIFEST | SPLIT => Stage::Ingest,
        a if a.starts_with(PRETRAINED) => Stage::Pretrain,
        a if a.starts_with(SVDD) => Stage::Finetune,
        SCORES | THRESHOLDS => Stage::Score,
        IFOREST | PCA_JSON | PCA_BIN | BASELINE_SCORES | BASELINE_THRESHOLDS => Stage::Baseline,
        _ => Stage::Report,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub loopguard_version: String,
    pub config_hash: String,
    pub rng: String,
    pub seeds: BTreeMap<String, u64>,
    /// File name (or absolute path for external inputs) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

/// Exclusive claim on a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                // the pid only helps a human clear a stale lock
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked {
                dir: dir.to_path_buf(),
            }),
            Err(e) => Err(CliError::io(format!("cannot create {}", path.display()), e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Runs `stages` in order inside the config's run directory and returns
/// that directory.
pub fn run(stages: &[Stage], config: &RunConfig) -> Result<PathBuf> {
    let dir = config.run_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))?;
    let _lock = RunLock::acquire(&dir)?;
    let echo = dir.join(CONFIG_ECHO);
    let text = config.to_json_pretty() + "\n";
    store::write_atomic(&echo, text.as_bytes()).map_err(|e| write_error(&echo, e))?;
    for &stage in stages {
        log::info!("{}: starting in {}", stage.name(), dir.display());
        let mut ctx = StageCtx::new(stage, config, &dir);
        match stage {
            Stage::Ingest => ingest(&mut ctx)?,
            Stage::Pretrain => pretrain(&mut ctx)?,
            Stage::Finetune => finetune(&mut ctx)?,
            Stage::Score => score(&mut ctx)?,
            Stage::Baseline => baseline(&mut ctx)?,
            Stage::Report => report(&mut ctx)?,
        }
        log::info!("{}: done", stage.name());
    }
    Ok(dir)
}

fn write_error(path: &Path, e: StoreError) -> CliError {
    match e {
        StoreError::Io(io) => CliError::io(format!("cannot write {}", path.display()), io),
        other => CliError::artifact(path, other),
    }
}

struct StageCtx<'a> {
    stage: Stage,
    config: &'a RunConfig,
    dir: &'a Path,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    seeds: BTreeMap<String, u64>,
}

impl<'a> StageCtx<'a> {
    fn new(stage: Stage, config: &'a RunConfig, dir: &'a Path) -> Self {
        Self {
            stage,
            config,
            dir,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }

    /// Path of a required run-directory artifact, hashed into the manifest.
    fn input(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if !path.is_file() {
            return Err(CliError::Prerequisite {
                artifact: path,
                hint: format!("run `loopguard {}` first", producer(name).name()),
            });
        }
        let hash = store::sha256_file(&path).map_err(|e| CliError::artifact(&path, e))?;
        self.inputs.insert(name.to_string(), hash);
        Ok(path)
    }

    fn optional_input(&mut self, name: &str) -> Result<Option<PathBuf>> {
        if self.dir.join(name).is_file() {
            self.input(name).map(Some)
        } else {
            Ok(None)
        }
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn load<T>(&self, path: &Path, f: impl FnOnce(&Path) -> Result<T, StoreError>) -> Result<T> {
        f(path).map_err(|e| CliError::artifact(path, e))
    }

    fn save(&self, path: &Path, f: impl FnOnce(&Path) -> Result<(), StoreError>) -> Result<()> {
        f(path).map_err(|e| write_error(path, e))
    }

    fn core<T>(&self, r: loopguard_core::Result<T>) -> Result<T> {
        r.map_err(|e| CliError::from_core(self.stage.name(), e))
    }

    fn embeddings(&mut self) -> Result<(EmbeddingMatrix, SampleManifest)> {
        let path = self.input(EMBEDDINGS)?;
        self.input(MANIFEST)?;
        self.load(&path, store::load_embeddings)
    }

    fn split(&mut self, rows: usize) -> Result<DatasetSplit> {
        let path = self.input(SPLIT)?;
        let split: DatasetSplit = self.load(&path, store::read_json)?;
        split.validate(rows).map_err(|e| CliError::artifact(&path, e))?;
        Ok(split)
    }

    fn finish(&mut self, summary: serde_json::Value) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            let path = self.dir.join(name);
            let hash = store::sha256_file(&path).map_err(|e| CliError::artifact(&path, e))?;
            outputs.insert(name.clone(), hash);
        }
        let manifest = StageManifest {
            stage: self.stage.name().to_string(),
            loopguard_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config.hash(),
            rng: "chacha8".to_string(),
            seeds: std::mem::take(&mut self.seeds),
            inputs: std::mem::take(&mut self.inputs),
            outputs,
            summary,
        };
        let path = self.dir.join(self.stage.manifest_name());
        store::write_json(&path, &manifest).map_err(|e| write_error(&path, e))
    }
}

fn ingest(ctx: &mut StageCtx) -> Result<()> {
    let config = ctx.config;
    let dataset = config
        .dataset
        .clone()
        .ok_or_else(|| CliError::config("dataset", "ingest needs a dataset path"))?;
    let (data, manifest) =
        store::load_embeddings(&dataset).map_err(|e| CliError::config("dataset", format!("{}: {e}", dataset.display())))?;
    if data.dim() != config.encoder.input_dim() {
        return Err(CliError::config(
            "encoder.dims",
            format!("dataset width {} differs from encoder input {}", data.dim(), config.encoder.input_dim()),
        ));
    }
    for path in [dataset.clone(), store::manifest_path(&dataset)] {
        let hash = store::sha256_file(&path).map_err(|e| CliError::config("dataset", e.to_string()))?;
        ctx.inputs.insert(path.display().to_string(), hash);
    }
    let split = split_dataset(data.rows(), config.split.ratio, config.split.seed)
        .map_err(|e| CliError::config("split", e.to_string()))?;
    ctx.seeds.insert("split".into(), config.split.seed);

    let emb = ctx.output(EMBEDDINGS);
    ctx.outputs.push(MANIFEST.to_string());
    ctx.save(&emb, |p| store::save_embeddings(p, &data, &manifest))?;
    let split_path = ctx.output(SPLIT);
    ctx.save(&split_path, |p| store::write_json(p, &split))?;
    ctx.finish(serde_json::json!({
        "rows": data.rows(),
        "dim": data.dim(),
        "train_rows": split.train_indices.len(),
        "val_rows": split.val_indices.len(),
        "emb1_version": EMB1_VERSION,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryRow {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    lr: f64,
}

fn history_rows(h: &TrainHistory) -> impl Iterator<Item = HistoryRow> + '_ {
    (0..h.epochs()).map(|epoch| HistoryRow {
        epoch,
        train_loss: h.train_loss[epoch],
        val_loss: h.val_loss[epoch],
        lr: h.lr[epoch],
    })
}

fn history_summary(h: &TrainHistory) -> serde_json::Value {
    serde_json::json!({
        "epochs": h.epochs(),
        "best_epoch": h.best_epoch,
        "best_val_loss": h.best_val_loss(),
        "stopped_early": h.stopped_early,
        "notes": h.notes,
    })
}

/// Saves whatever history a diverged run produced before reporting it.
fn training_failure(ctx: &mut StageCtx, history_name: &str, e: loopguard_core::Error) -> CliError {
    if let loopguard_core::Error::Diverged { history, .. } = &e {
        let path = ctx.output(history_name);
        if let Err(w) = store::write_csv(&path, history_rows(history)) {
            log::warn!("could not save partial history: {w}");
        }
    }
    CliError::from_core(ctx.stage.name(), e)
}

fn pretrain(ctx: &mut StageCtx) -> Result<()> {
    let (data, _) = ctx.embeddings()?;
    let split = ctx.split(data.rows())?;
    let hp = ctx.config.hyperparameters;
    ctx.seeds.insert("init".into(), hp.seed);
    let (model, history) = match pretrain_autoencoder(&data, &split, &ctx.config.encoder, &hp) {
        Ok(r) => r,
        Err(e) => return Err(training_failure(ctx, PRETRAIN_HISTORY, e)),
    };
    log::info!(
        "pretrain: {} epochs, best epoch {} (val {:?})",
        history.epochs(),
        history.best_epoch,
        history.best_val_loss()
    );
    let stem = ctx.dir.join(PRETRAINED);
    ctx.output(&format!("{PRETRAINED}.model.json"));
    ctx.output(&format!("{PRETRAINED}.model.bin"));
    ctx.save(&stem, |p| store::save_autoencoder(p, &model, hp.seed))?;
    let hist = ctx.output(PRETRAIN_HISTORY);
    ctx.save(&hist, |p| store::write_csv(p, history_rows(&history)))?;
    ctx.finish(history_summary(&history))
}

fn finetune(ctx: &mut StageCtx) -> Result<()> {
    let (data, _) = ctx.embeddings()?;
    let split = ctx.split(data.rows())?;
    ctx.input(&format!("{PRETRAINED}.model.json"))?;
    ctx.input(&format!("{PRETRAINED}.model.bin"))?;
    let stem = ctx.dir.join(PRETRAINED);
    let ae = ctx.load(&stem, store::load_autoencoder)?;
    let hp = ctx.config.hyperparameters;
    let options = ctx.config.svdd_options();
    ctx.seeds.insert("init".into(), hp.seed);
    let (mut model, history) = match finetune_svdd(ae, &data, &split, &hp, &options) {
        Ok(r) => r,
        Err(e) => return Err(training_failure(ctx, FINETUNE_HISTORY, e)),
    };
    for note in &history.notes {
        log::warn!("finetune: {note}");
    }
    // scores and the threshold must come from the weights as saved
    model.quantize_f32();
    let train = data.select(&split.train_indices);
    let threshold = ctx.core(model.refresh_threshold(&train, options.q))?;
    log::info!(
        "finetune: {} epochs, best epoch {}, threshold {threshold}",
        history.epochs(),
        history.best_epoch
    );
    let stem = ctx.dir.join(SVDD);
    ctx.output(&format!("{SVDD}.model.json"));
    ctx.output(&format!("{SVDD}.model.bin"));
    ctx.output(&format!("{SVDD}.svdd.json"));
    ctx.save(&stem, |p| store::save_svdd(p, &model, hp.seed, &options, &hp))?;
    let hist = ctx.output(FINETUNE_HISTORY);
    ctx.save(&hist, |p| store::write_csv(p, history_rows(&history)))?;
    let mut summary = history_summary(&history);
    summary["training_threshold"] = threshold.into();
    ctx.finish(summary)
}

fn split_names(split: &DatasetSplit, rows: usize) -> Vec<&'static str> {
    let mut names = vec!["train"; rows];
    for &i in &split.val_indices {
        names[i] = "val";
    }
    names
}

fn by_split(values: &[f64], split: &DatasetSplit) -> (Vec<f64>, Vec<f64>) {
    let pick = |idx: &[usize]| idx.iter().map(|&i| values[i]).collect();
    (pick(&split.train_indices), pick(&split.val_indices))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub index: usize,
    pub id: String,
    pub split: String,
    pub score: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScoreRow {
    pub index: usize,
    pub id: String,
    pub split: String,
    pub iforest: f64,
    pub iforest_flagged: bool,
    pub pca: f64,
    pub pca_flagged: bool,
}

fn load_svdd_model(ctx: &mut StageCtx) -> Result<(loopguard_core::SvddModel, store::SvddFile)> {
    for ext in [".model.json", ".model.bin", ".svdd.json"] {
        ctx.input(&format!("{SVDD}{ext}"))?;
    }
    let stem = ctx.dir.join(SVDD);
    ctx.load(&stem, store::load_svdd)
}

fn score(ctx: &mut StageCtx) -> Result<()> {
    let (data, manifest) = ctx.embeddings()?;
    let split = ctx.split(data.rows())?;
    let (model, _) = load_svdd_model(ctx)?;
    let scores = ctx.core(model.score_embeddings(&data))?;
    let (train, val) = by_split(&scores, &split);
    let report = ctx.core(ThresholdReport::new(&train, &val, ctx.config.evaluation.q))?;
    let names = split_names(&split, data.rows());
    let rows = scores.iter().enumerate().map(|(i, &s)| ScoreRow {
        index: i,
        id: manifest.entries[i].id.clone(),
        split: names[i].to_string(),
        score: s,
        flagged: s > report.threshold,
    });
    let path = ctx.output(SCORES);
    ctx.save(&path, |p| store::write_csv(p, rows))?;
    let mut thresholds = BTreeMap::new();
    thresholds.insert("svdd", &report);
    let path = ctx.output(THRESHOLDS);
    ctx.save(&path, |p| store::write_json(p, &thresholds))?;
    ctx.finish(serde_json::json!({
        "threshold": report.threshold,
        "train_flagged_fraction": report.train_flagged_fraction,
        "val_flagged_fraction": report.val_flagged_fraction,
    }))
}

fn baseline(ctx: &mut StageCtx) -> Result<()> {
    let (data, manifest) = ctx.embeddings()?;
    let split = ctx.split(data.rows())?;
    let cfg = ctx.config.baselines;
    let q = ctx.config.evaluation.q;
    let all = data.to_matrix();
    let train = data.select(&split.train_indices);
    ctx.seeds.insert("iforest".into(), cfg.iforest.seed);

    let forest = ctx.core(IsolationForest::fit(&train, &cfg.iforest))?;
    let pca = ctx.core(PcaModel::fit(&train, &cfg.pca))?;
    for w in &pca.warnings {
        log::warn!("baseline: {w}");
    }
    let iforest_scores = ctx.core(forest.score_rows(&all))?;
    let pca_scores = ctx.core(pca.reconstruction_error(&all))?;
    let report_for = |scores: &[f64]| {
        let (t, v) = by_split(scores, &split);
        ThresholdReport::new(&t, &v, q)
    };
    let if_report = ctx.core(report_for(&iforest_scores))?;
    let pca_report = ctx.core(report_for(&pca_scores))?;

    let path = ctx.output(IFOREST);
    ctx.save(&path, |p| store::save_iforest(p, &forest))?;
    let json = ctx.output(PCA_JSON);
    let bin = ctx.output(PCA_BIN);
    ctx.save(&json, |p| store::save_pca(p, &bin, &pca))?;

    let names = split_names(&split, data.rows());
    let rows = (0..data.rows()).map(|i| BaselineScoreRow {
        index: i,
        id: manifest.entries[i].id.clone(),
        split: names[i].to_string(),
        iforest: iforest_scores[i],
        iforest_flagged: iforest_scores[i] > if_report.threshold,
        pca: pca_scores[i],
        pca_flagged: pca_scores[i] > pca_report.threshold,
    });
    let path = ctx.output(BASELINE_SCORES);
    ctx.save(&path, |p| store::write_csv(p, rows))?;
    let mut thresholds = BTreeMap::new();
    thresholds.insert("iforest", &if_report);
    thresholds.insert("pca", &pca_report);
    let path = ctx.output(BASELINE_THRESHOLDS);
    ctx.save(&path, |p| store::write_json(p, &thresholds))?;
    ctx.finish(serde_json::json!({
        "iforest_sample_size": forest.sample_size,
        "iforest_max_depth": forest.max_depth,
        "pca_n_selected": pca.n_selected,
        "pca_warnings": pca.warnings,
    }))
}

#[derive(Debug, Serialize)]
struct ProjectionRow<'a> {
    index: usize,
    id: &'a str,
    split: &'a str,
    pc1: f64,
    pc2: f64,
    score: f64,
}

#[derive(Debug, Serialize)]
struct HistogramRow<'a> {
    method: &'a str,
    bin: usize,
    bin_lo: f64,
    bin_hi: f64,
    train_count: u64,
    val_count: u64,
}

#[derive(Debug, Serialize)]
struct LatentRow {
    dim: usize,
    bin: usize,
    bin_lo: f64,
    bin_hi: f64,
    count: u64,
    density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBoxStats {
    pub train: BoxStats,
    pub val: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub config_hash: String,
    pub rows: usize,
    pub train_rows: usize,
    pub val_rows: usize,
    pub latent_dim: usize,
    pub latent_variance: f64,
    pub projection_evr: [f64; 2],
    pub thresholds: BTreeMap<String, ThresholdReport>,
    pub log_y_hint: BTreeMap<String, bool>,
    pub label_tag: String,
    /// ROC-AUC over all rows against the label tag, per method; empty
    /// unless every row carries `normal` or `anomaly`.
    pub auc: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

/// Ground-truth labels from the manifest tags, when every row has one.
pub fn manifest_labels(manifest: &SampleManifest) -> Option<Vec<bool>> {
    manifest
        .entries
        .iter()
        .map(|e| match e.tags.get(LABEL_TAG).map(String::as_str) {
            Some("anomaly") => Some(true),
            Some("normal") => Some(false),
            _ => None,
        })
        .collect()
}

fn report(ctx: &mut StageCtx) -> Result<()> {
    let (data, manifest) = ctx.embeddings()?;
    let split = ctx.split(data.rows())?;
    let (model, _) = load_svdd_model(ctx)?;
    let n = data.rows();
    let n_bins = ctx.config.evaluation.n_bins;

    let scores_path = ctx.input(SCORES)?;
    let score_rows: Vec<ScoreRow> = ctx.load(&scores_path, store::read_csv)?;
    let thresholds_path = ctx.input(THRESHOLDS)?;
    let mut thresholds: BTreeMap<String, ThresholdReport> = ctx.load(&thresholds_path, store::read_json)?;
    if score_rows.len() != n || score_rows.iter().enumerate().any(|(i, r)| r.index != i) {
        return Err(CliError::artifact(&scores_path, "rows do not match the embeddings"));
    }
    let mut methods: Vec<(&str, Vec<f64>)> = vec![("svdd", score_rows.iter().map(|r| r.score).collect())];
    if let Some(path) = ctx.optional_input(BASELINE_SCORES)? {
        let rows: Vec<BaselineScoreRow> = ctx.load(&path, store::read_csv)?;
        if rows.len() != n {
            return Err(CliError::artifact(&path, "rows do not match the embeddings"));
        }
        methods.push(("iforest", rows.iter().map(|r| r.iforest).collect()));
        methods.push(("pca", rows.iter().map(|r| r.pca).collect()));
        if let Some(path) = ctx.optional_input(BASELINE_THRESHOLDS)? {
            let extra: BTreeMap<String, ThresholdReport> = ctx.load(&path, store::read_json)?;
            thresholds.extend(extra);
        }
    }

    let latents = ctx.core(model.latents(&data.to_matrix()))?;
    let mut notes = Vec::new();
    let variance = latent_variance(&latents);
    let projection = project_2d(&latents).map_err(|e| CliError::Numeric {
        stage: "report",
        source: loopguard_core::Error::NonFinite(format!("latent projection undefined: {e}")),
    })?;
    let names = split_names(&split, n);
    let rows = (0..n).map(|i| ProjectionRow {
        index: i,
        id: &manifest.entries[i].id,
        split: names[i],
        pc1: projection.coords[(i, 0)],
        pc2: projection.coords[(i, 1)],
        score: methods[0].1[i],
    });
    let path = ctx.output(PROJECTION);
    ctx.save(&path, |p| store::write_csv(p, rows))?;

    let mut hist_rows = Vec::new();
    let mut log_y_hint = BTreeMap::new();
    let mut boxes = BTreeMap::new();
    for (method, values) in &methods {
        let (train, val) = by_split(values, &split);
        let h = ctx.core(score_histogram(&train, &val, n_bins))?;
        log_y_hint.insert(method.to_string(), h.log_y_hint);
        for b in 0..h.train_counts.len() {
            hist_rows.push(HistogramRow {
                method,
                bin: b,
                bin_lo: h.bin_edges[b],
                bin_hi: h.bin_edges[b + 1],
                train_count: h.train_counts[b],
                val_count: h.val_counts[b],
            });
        }
        let stats = SplitBoxStats {
            train: ctx.core(box_stats(&train))?,
            val: ctx.core(box_stats(&val))?,
        };
        boxes.insert(method.to_string(), stats);
    }
    let path = ctx.output(HISTOGRAMS);
    ctx.save(&path, |p| store::write_csv(p, hist_rows))?;
    let path = ctx.output(BOX_STATS);
    ctx.save(&path, |p| store::write_json(p, &boxes))?;

    let latent = ctx.core(latent_report(&latents, model.latent_dim(), n_bins))?;
    let mut latent_rows = Vec::new();
    for (dim, h) in latent.per_dimension_histograms.iter().enumerate() {
        for (bin, (&count, density)) in h.counts.iter().zip(h.density()).enumerate() {
            latent_rows.push(LatentRow {
                dim,
                bin,
                bin_lo: h.bin_edges[bin],
                bin_hi: h.bin_edges[bin + 1],
                count,
                density,
            });
        }
    }
    let path = ctx.output(LATENT_REPORT);
    ctx.save(&path, |p| store::write_csv(p, latent_rows))?;
    let path = ctx.output(LATENT_HEATMAP);
    ctx.save(&path, |p| write_heatmap(p, &manifest, &latent.heatmap))?;

    let mut auc = BTreeMap::new();
    match manifest_labels(&manifest) {
        Some(labels) => {
            for (method, values) in &methods {
                if let Some(a) = roc_auc(values, &labels) {
                    auc.insert(method.to_string(), a);
                }
            }
        }
        None => notes.push(format!("no complete `{LABEL_TAG}` tags; AUC not computed")),
    }
    if variance < loopguard_core::training::COLLAPSE_VARIANCE {
        notes.push(format!("latent variance {variance:e} suggests collapse"));
    }
    let summary = ReportSummary {
        config_hash: ctx.config.hash(),
        rows: n,
        train_rows: split.train_indices.len(),
        val_rows: split.val_indices.len(),
        latent_dim: model.latent_dim(),
        latent_variance: variance,
        projection_evr: projection.evr,
        thresholds,
        log_y_hint,
        label_tag: LABEL_TAG.to_string(),
        auc,
        notes,
    };
    let path = ctx.output(REPORT);
    ctx.save(&path, |p| store::write_json(p, &summary))?;
    ctx.finish(serde_json::json!({ "auc": summary.auc, "projection_evr": summary.projection_evr }))
}

/// Wide table: one row per sample, one column per latent coordinate.
fn write_heatmap(path: &Path, manifest: &SampleManifest, z: &loopguard_core::Matrix) -> Result<(), StoreError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string(), "id".to_string()];
    header.extend((0..z.cols()).map(|j| format!("z{j}")));
    w.write_record(&header)?;
    for (i, row) in z.iter_rows().enumerate() {
        let mut record = vec![i.to_string(), manifest.entries[i].id.clone()];
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    let bytes = w.into_inner().map_err(|e| StoreError::Io(e.into_error()))?;
    store::write_atomic(path, &bytes)
}
