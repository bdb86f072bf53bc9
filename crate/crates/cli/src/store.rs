//! On-disk formats: EMB1 embeddings with their manifest sidecar, model
//! topology descriptors with binary32 payloads, SVDD center files, fitted
//! baselines and CSV tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use loopguard_core::baselines::{IsolationForest, PcaConfig, PcaModel};
use loopguard_core::nn::{LayerBlock, Sequential};
use loopguard_core::{
    decode_emb1, encode_emb1, AutoencoderModel, EmbeddingMatrix, EncoderSpec, Hyperparameters, Matrix,
    SampleManifest, SvddModel, SvddOptions,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MODEL_FORMAT: &str = "loopguard-model";
pub const PCA_FORMAT: &str = "loopguard-pca";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] loopguard_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type StoreResult<T> = Result<T, StoreError>;

/// `<dir>/<name>.manifest.json` for `<dir>/<name>.emb1`.
pub fn manifest_path(emb1: &Path) -> PathBuf {
    emb1.with_extension("manifest.json")
}

/// Writes through a sibling temporary file so readers never observe a
/// half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> StoreResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> StoreResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> StoreResult<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> StoreResult<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes the EMB1 container and its manifest sidecar after checking that
/// the manifest describes every row.
pub fn save_embeddings(path: &Path, matrix: &EmbeddingMatrix, manifest: &SampleManifest) -> StoreResult<()> {
    manifest.validate_against(matrix)?;
    write_atomic(path, &encode_emb1(matrix))?;
    write_json(&manifest_path(path), manifest)
}

pub fn load_embeddings(path: &Path) -> StoreResult<(EmbeddingMatrix, SampleManifest)> {
    let matrix = decode_emb1(&fs::read(path)?)?;
    let sidecar = manifest_path(path);
    let manifest: SampleManifest = read_json(&sidecar).map_err(|e| match e {
        StoreError::Io(io) => StoreError::Invalid(format!("manifest {}: {io}", sidecar.display())),
        other => other,
    })?;
    manifest.validate_against(&matrix)?;
    Ok((matrix, manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Encoder and decoder.
    Autoencoder,
    /// Encoder only, as kept after fine-tuning.
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDescriptor {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub batch_norm: bool,
    pub elu: bool,
    pub elu_alpha: f64,
    pub dropout_rate: f64,
    /// Tensor names and lengths in payload order.
    pub tensors: Vec<(String, usize)>,
}

impl LayerDescriptor {
    fn of(name: String, block: &LayerBlock) -> Self {
        const NAMES: [&str; 6] = ["weight", "bias", "gamma", "beta", "running_mean", "running_var"];
        Self {
            name,
            in_dim: block.in_dim(),
            out_dim: block.out_dim(),
            batch_norm: block.norm.is_some(),
            elu: block.activate,
            elu_alpha: block.elu_alpha,
            dropout_rate: block.dropout_rate,
            tensors: NAMES
                .iter()
                .zip(block.state())
                .filter(|(_, t)| !t.is_empty())
                .map(|(n, t)| (n.to_string(), t.len()))
                .collect(),
        }
    }
}

/// `<name>.model.json`: topology and payload description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub spec: EncoderSpec,
    pub init_seed: u64,
    pub layers: Vec<LayerDescriptor>,
    pub value_count: usize,
    pub payload_dtype: String,
    pub payload_sha256: String,
}

fn describe(prefix: &str, net: &Sequential) -> Vec<LayerDescriptor> {
    net.blocks
        .iter()
        .enumerate()
        .map(|(i, b)| LayerDescriptor::of(format!("{prefix}.{i}"), b))
        .collect()
}

/// Little-endian binary32 encoding of `values`.
pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> StoreResult<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(StoreError::Invalid(format!(
            "binary32 payload length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64(bytes: &[u8]) -> StoreResult<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(StoreError::Invalid(format!(
            "binary64 payload length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// `(<stem>.model.json, <stem>.model.bin)`.
pub fn model_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".model.json"), with(".model.bin"))
}

fn save_model(stem: &Path, kind: ModelKind, spec: &EncoderSpec, init_seed: u64, layers: Vec<LayerDescriptor>, state: &[f64]) -> StoreResult<()> {
    let (json, bin) = model_paths(stem);
    let payload = encode_f32(state);
    let descriptor = ModelDescriptor {
        format: MODEL_FORMAT.into(),
        version: FORMAT_VERSION,
        kind,
        spec: spec.clone(),
        init_seed,
        layers,
        value_count: state.len(),
        payload_dtype: "f32le".into(),
        payload_sha256: sha256_hex(&payload),
    };
    write_atomic(&bin, &payload)?;
    write_json(&json, &descriptor)
}

/// Reads the descriptor and payload, checking format, kind, checksum and
/// value count.
fn load_model(stem: &Path, kind: ModelKind) -> StoreResult<(ModelDescriptor, Vec<f64>)> {
    let (json, bin) = model_paths(stem);
    let descriptor: ModelDescriptor = read_json(&json)?;
    if descriptor.format != MODEL_FORMAT || descriptor.version != FORMAT_VERSION {
        return Err(StoreError::Invalid(format!(
            "unsupported model format {:?} version {}",
            descriptor.format, descriptor.version
        )));
    }
    if descriptor.kind != kind {
        return Err(StoreError::Invalid(format!(
            "expected a {kind:?} model, found {:?}",
            descriptor.kind
        )));
    }
    let payload = fs::read(&bin)?;
    if sha256_hex(&payload) != descriptor.payload_sha256 {
        return Err(StoreError::Invalid("payload checksum mismatch".into()));
    }
    let state = decode_f32(&payload)?;
    if state.len() != descriptor.value_count {
        return Err(StoreError::Invalid(format!(
            "payload holds {} values, descriptor declares {}",
            state.len(),
            descriptor.value_count
        )));
    }
    Ok((descriptor, state))
}

fn check_layers(stored: &[LayerDescriptor], rebuilt: &[LayerDescriptor]) -> StoreResult<()> {
    if stored != rebuilt {
        return Err(StoreError::Invalid(
            "layer table disagrees with the topology implied by the encoder dims".into(),
        ));
    }
    Ok(())
}

pub fn save_autoencoder(stem: &Path, model: &AutoencoderModel, init_seed: u64) -> StoreResult<()> {
    let mut layers = describe("encoder", &model.encoder);
    layers.extend(describe("decoder", &model.decoder));
    save_model(stem, ModelKind::Autoencoder, &model.spec, init_seed, layers, &model.export_state())
}

pub fn load_autoencoder(stem: &Path) -> StoreResult<AutoencoderModel> {
    let (descriptor, state) = load_model(stem, ModelKind::Autoencoder)?;
    let model = AutoencoderModel::from_state(&descriptor.spec, &state)?;
    let mut layers = describe("encoder", &model.encoder);
    layers.extend(describe("decoder", &model.decoder));
    check_layers(&descriptor.layers, &layers)?;
    Ok(model)
}

/// `<stem>.svdd.json`: everything about a fine-tuned model besides the
/// encoder weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvddFile {
    pub latent_dim: usize,
    /// Full-precision decimal coordinates.
    pub center: Vec<f64>,
    pub training_threshold: Option<f64>,
    pub options: SvddOptions,
    pub hyperparameters: Hyperparameters,
}

pub fn svdd_path(stem: &Path) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".svdd.json");
    PathBuf::from(s)
}

pub fn save_svdd(
    stem: &Path,
    model: &SvddModel,
    init_seed: u64,
    options: &SvddOptions,
    hyperparameters: &Hyperparameters,
) -> StoreResult<()> {
    let layers = describe("encoder", &model.encoder);
    save_model(stem, ModelKind::Encoder, &model.spec, init_seed, layers, &model.encoder.export_state())?;
    write_json(
        &svdd_path(stem),
        &SvddFile {
            latent_dim: model.latent_dim(),
            center: model.center.clone(),
            training_threshold: model.training_threshold,
            options: *options,
            hyperparameters: *hyperparameters,
        },
    )
}

pub fn load_svdd(stem: &Path) -> StoreResult<(SvddModel, SvddFile)> {
    let (descriptor, state) = load_model(stem, ModelKind::Encoder)?;
    let file: SvddFile = read_json(&svdd_path(stem))?;
    if file.latent_dim != file.center.len() {
        return Err(StoreError::Invalid(format!(
            "latent_dim {} but the center has {} coordinates",
            file.latent_dim,
            file.center.len()
        )));
    }
    let model = SvddModel::from_state(&descriptor.spec, file.center.clone(), &state, file.training_threshold)?;
    check_layers(&descriptor.layers, &describe("encoder", &model.encoder))?;
    Ok((model, file))
}

/// `pca.json` header; the arrays live in the binary64 payload in the order
/// mean, std (when standardizing), center, components (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub n_selected: usize,
    pub standardized: bool,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub config: PcaConfig,
    pub warnings: Vec<String>,
    pub payload_sha256: String,
}

pub fn save_pca(json: &Path, bin: &Path, model: &PcaModel) -> StoreResult<()> {
    let mut values = model.mean.clone();
    if let Some(std) = &model.std {
        values.extend(std);
    }
    values.extend(&model.center);
    values.extend(model.components.as_slice());
    let payload = encode_f64(&values);
    let header = PcaHeader {
        format: PCA_FORMAT.into(),
        version: FORMAT_VERSION,
        dim: model.dim(),
        n_selected: model.n_selected,
        standardized: model.std.is_some(),
        explained_variance: model.explained_variance.clone(),
        explained_variance_ratio: model.explained_variance_ratio.clone(),
        config: model.config,
        warnings: model.warnings.clone(),
        payload_sha256: sha256_hex(&payload),
    };
    write_atomic(bin, &payload)?;
    write_json(json, &header)
}

pub fn load_pca(json: &Path, bin: &Path) -> StoreResult<PcaModel> {
    let header: PcaHeader = read_json(json)?;
    if header.format != PCA_FORMAT || header.version != FORMAT_VERSION {
        return Err(StoreError::Invalid("unsupported PCA format".into()));
    }
    let payload = fs::read(bin)?;
    if sha256_hex(&payload) != header.payload_sha256 {
        return Err(StoreError::Invalid("payload checksum mismatch".into()));
    }
    let values = decode_f64(&payload)?;
    let (d, k) = (header.dim, header.n_selected);
    let vectors = if header.standardized { 3 } else { 2 };
    if values.len() != vectors * d + k * d {
        return Err(StoreError::Invalid(format!(
            "payload holds {} values, header implies {}",
            values.len(),
            vectors * d + k * d
        )));
    }
    let mut rest = values.as_slice();
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head.to_vec()
    };
    let mean = take(d);
    let std = header.standardized.then(|| take(d));
    let center = take(d);
    let components = Matrix::from_vec(k, d, take(k * d))?;
    Ok(PcaModel {
        mean,
        std,
        center,
        components,
        explained_variance: header.explained_variance,
        explained_variance_ratio: header.explained_variance_ratio,
        n_selected: k,
        config: header.config,
        warnings: header.warnings,
    })
}

pub fn save_iforest(path: &Path, forest: &IsolationForest) -> StoreResult<()> {
    write_json(path, forest)
}

pub fn load_iforest(path: &Path) -> StoreResult<IsolationForest> {
    read_json(path)
}

/// Serializes `rows` as CSV with a header taken from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> StoreResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| StoreError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> StoreResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(StoreError::from)).collect()
}
