//! Two-phase training: autoencoder pretraining on reconstruction error, then
//! one-class fine-tuning of the encoder toward a fixed hypersphere center.
//! Also the score itself, the squared latent distance to that center.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::{DatasetSplit, EmbeddingMatrix};
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::evaluation::percentile_threshold;
use crate::matrix::Matrix;
use crate::models::{build_encoder, AutoencoderModel, EncoderSpec};
use crate::nn::{Loss, Mode, Sequential, Trainable};
use crate::optim::{adamw_step, cosine_lr, AdamWState, Hyperparameters};
use crate::rng::Rng;

/// Below this total latent variance the fine-tuned encoder is reported as
/// collapsed.
pub const COLLAPSE_VARIANCE: f64 = 1e-8;

/// Rows per chunk for Eval-mode passes.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub notes: Vec<String>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.val_loss.get(self.best_epoch).copied()
    }
}

/// Fine-tuning switches guarding against hypersphere collapse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvddOptions {
    /// Near-zero center coordinates are pushed out to `±eps_c`.
    pub center_guard: bool,
    pub eps_c: f64,
    /// Zero and freeze linear biases and batch-norm shifts before fine-tuning.
    pub no_bias: bool,
    /// Quantile of training scores stored as the model threshold.
    pub q: f64,
}

impl Default for SvddOptions {
    fn default() -> Self {
        Self {
            center_guard: true,
            eps_c: 0.1,
            no_bias: false,
            q: 0.95,
        }
    }
}

/// Fine-tuned encoder plus its fixed center.
#[derive(Debug, Clone, PartialEq)]
pub struct SvddModel {
    pub spec: EncoderSpec,
    pub encoder: Sequential,
    pub center: Vec<f64>,
    pub training_threshold: Option<f64>,
}

impl SvddModel {
    /// Rebuilds a fine-tuned encoder from its exported state.
    pub fn from_state(
        spec: &EncoderSpec,
        center: Vec<f64>,
        state: &[f64],
        training_threshold: Option<f64>,
    ) -> Result<Self> {
        spec.validate()?;
        if center.len() != spec.latent_dim() {
            return Err(shape_err!(
                "center has {} coordinates, latent width is {}",
                center.len(),
                spec.latent_dim()
            ));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("center".into()));
        }
        let mut encoder = build_encoder(spec, &mut Rng::new(0));
        encoder.import_state(state)?;
        Ok(Self {
            spec: spec.clone(),
            encoder,
            center,
            training_threshold,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.center.len()
    }

    /// Eval-mode latents, row for row.
    pub fn latents(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.spec.input_dim() {
            return Err(shape_err!(
                "model expects width {}, got {}",
                self.spec.input_dim(),
                x.cols()
            ));
        }
        eval_chunks(x, |chunk| self.encoder.infer(chunk))
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let row = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.score_rows(&row)?[0])
    }

    /// `‖φ(x) − c‖²` per row.
    pub fn score_rows(&self, x: &Matrix) -> Result<Vec<f64>> {
        let z = self.latents(x)?;
        Ok(z.iter_rows().map(|r| squared_distance(r, &self.center)).collect())
    }

    pub fn score_embeddings(&self, data: &EmbeddingMatrix) -> Result<Vec<f64>> {
        self.score_rows(&data.to_matrix())
    }

    /// Recomputes the stored threshold from training rows.
    pub fn refresh_threshold(&mut self, train: &Matrix, q: f64) -> Result<f64> {
        let t = percentile_threshold(&self.score_rows(train)?, q)?;
        self.training_threshold = Some(t);
        Ok(t)
    }

    /// Rounds every parameter and buffer to binary32 precision, matching
    /// what a save/load cycle produces.
    pub fn quantize_f32(&mut self) {
        for block in &mut self.encoder.blocks {
            for t in block.state_mut() {
                t.iter_mut().for_each(|v| *v = f64::from(*v as f32));
            }
        }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn eval_chunks(x: &Matrix, f: impl Fn(&Matrix) -> Result<Matrix>) -> Result<Matrix> {
    if x.rows() <= EVAL_CHUNK {
        return f(x);
    }
    let mut data = Vec::new();
    let mut width = 0;
    let indices: Vec<usize> = (0..x.rows()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let out = f(&x.select_rows(chunk))?;
        width = out.cols();
        data.extend_from_slice(out.as_slice());
    }
    Matrix::from_vec(x.rows(), width, data)
}

/// Shuffled mini-batches over `indices`. A trailing batch of one row is
/// merged into its predecessor, since batch normalization needs two.
pub fn epoch_batches(indices: &[usize], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    rng.shuffle(&mut order);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(2)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

/// Tracks the best validation loss and the patience counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records an epoch's validation loss; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Runs epochs under the cosine schedule with early stopping, returning the
/// snapshot from the best validation epoch.
///
/// `train_epoch(model, epoch, lr)` returns the epoch's mean training loss and
/// `validate(model)` the monitored validation loss.
pub fn run_epochs<M: Clone>(
    mut model: M,
    hp: &Hyperparameters,
    mut train_epoch: impl FnMut(&mut M, usize, f64) -> Result<f64>,
    mut validate: impl FnMut(&M) -> Result<f64>,
) -> Result<(M, TrainHistory)> {
    let mut history = TrainHistory::default();
    let mut stopper = EarlyStopping::new(hp.patience);
    let mut best = model.clone();
    for epoch in 0..hp.max_epochs {
        let lr = cosine_lr(epoch, hp.max_epochs, hp.lr0, hp.lr_min);
        let outcome = train_epoch(&mut model, epoch, lr).and_then(|train| Ok((train, validate(&model)?)));
        let (train, val) = match outcome {
            Ok(pair) if pair.0.is_finite() && pair.1.is_finite() => pair,
            Ok((train, val)) => {
                return Err(diverged(epoch, alloc::format!("train loss {train:e}, validation loss {val:e}"), history));
            }
            Err(Error::NonFinite(what)) => return Err(diverged(epoch, what, history)),
            Err(e) => return Err(e),
        };
        history.train_loss.push(train);
        history.val_loss.push(val);
        history.lr.push(lr);
        if stopper.observe(epoch, val) {
            best = model.clone();
        }
        if stopper.should_stop() {
            history.stopped_early = epoch + 1 < hp.max_epochs;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}

fn diverged(epoch: usize, reason: String, history: TrainHistory) -> Error {
    Error::Diverged {
        epoch,
        reason,
        history: alloc::boxed::Box::new(history),
    }
}

/// One pass of mini-batch AdamW over `train`.
fn train_one_epoch<N: Trainable>(
    net: &mut N,
    optimizer: &mut AdamWState,
    train: &Matrix,
    loss: &Loss,
    lr: f64,
    hp: &Hyperparameters,
    rng: &mut Rng,
) -> Result<f64> {
    let indices: Vec<usize> = (0..train.rows()).collect();
    let mut total = 0.0;
    for batch_rows in epoch_batches(&indices, hp.batch_size, rng) {
        let batch = train.select_rows(&batch_rows);
        let (value, grads) = net.loss_and_grads(&batch, loss, Mode::Train, rng)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(alloc::format!("batch loss {value}")));
        }
        adamw_step(&mut net.params_mut(), &grads, optimizer, lr, hp)?;
        total += value * batch_rows.len() as f64;
    }
    Ok(total / train.rows() as f64)
}

fn check_split(data: &EmbeddingMatrix, split: &DatasetSplit, spec: &EncoderSpec) -> Result<()> {
    split.validate(data.rows())?;
    if split.train_indices.len() < 2 {
        return Err(invalid_arg!("training needs at least 2 training rows"));
    }
    if split.val_indices.is_empty() {
        return Err(invalid_arg!("early stopping needs validation rows"));
    }
    if data.dim() != spec.input_dim() {
        return Err(shape_err!(
            "embeddings have width {}, model expects {}",
            data.dim(),
            spec.input_dim()
        ));
    }
    Ok(())
}

/// Reconstruction pretraining of a freshly initialized autoencoder.
pub fn pretrain_autoencoder(
    data: &EmbeddingMatrix,
    split: &DatasetSplit,
    spec: &EncoderSpec,
    hp: &Hyperparameters,
) -> Result<(AutoencoderModel, TrainHistory)> {
    hp.validate()?;
    let model = AutoencoderModel::build(spec, hp.seed)?;
    check_split(data, split, spec)?;
    let train = data.select(&split.train_indices);
    let val = data.select(&split.val_indices);
    let mut optimizer = AdamWState::for_params(&model.params());
    let mut rng = Rng::derive(hp.seed, 1);
    run_epochs(
        model,
        hp,
        |m, _, lr| train_one_epoch(m, &mut optimizer, &train, &Loss::Reconstruction, lr, hp, &mut rng),
        |m| reconstruction_loss(m, &val),
    )
}

/// Eval-mode mean squared reconstruction error over `x`.
pub fn reconstruction_loss(model: &AutoencoderModel, x: &Matrix) -> Result<f64> {
    let mut eval = model.clone();
    let mut sum = 0.0;
    let indices: Vec<usize> = (0..x.rows()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let part = x.select_rows(chunk);
        let recon = eval.reconstruct(&part, Mode::Eval, &mut Rng::new(0))?;
        sum += part
            .as_slice()
            .iter()
            .zip(recon.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(sum / x.as_slice().len() as f64)
}

/// Mean Eval-mode latent of `train`, with near-zero coordinates pushed to
/// `±eps_c` when `eps_c` is given.
pub fn init_center(encoder: &Sequential, train: &Matrix, eps_c: Option<f64>) -> Result<Vec<f64>> {
    if train.rows() == 0 {
        return Err(invalid_arg!("center initialization needs training rows"));
    }
    let latents = eval_chunks(train, |chunk| encoder.infer(chunk))?;
    if !latents.is_finite() {
        return Err(Error::NonFinite("latent during center initialization".into()));
    }
    let mut center = latents.column_means();
    if let Some(eps) = eps_c {
        for c in &mut center {
            if c.abs() < eps {
                *c = if *c < 0.0 { -eps } else { eps };
            }
        }
    }
    Ok(center)
}

/// Total variance of the latents of `x` (sum of per-dimension variances).
pub fn latent_variance(latents: &Matrix) -> f64 {
    let mean = latents.column_means();
    let n = latents.rows().max(1) as f64;
    latents
        .iter_rows()
        .map(|r| squared_distance(r, &mean))
        .sum::<f64>()
        / n
}

/// One-class fine-tuning of the pretrained encoder; the decoder is dropped.
pub fn finetune_svdd(
    pretrained: AutoencoderModel,
    data: &EmbeddingMatrix,
    split: &DatasetSplit,
    hp: &Hyperparameters,
    options: &SvddOptions,
) -> Result<(SvddModel, TrainHistory)> {
    hp.validate()?;
    if options.center_guard && (options.eps_c.is_nan() || options.eps_c <= 0.0) {
        return Err(invalid_arg!("eps_c must be positive"));
    }
    let spec = pretrained.spec.clone();
    check_split(data, split, &spec)?;
    let mut encoder = pretrained.into_encoder();
    if options.no_bias {
        for block in &mut encoder.blocks {
            block.linear.bias.iter_mut().for_each(|v| *v = 0.0);
            block.params_mut()[3].iter_mut().for_each(|v| *v = 0.0);
            block.shift_frozen = true;
        }
    }
    let train = data.select(&split.train_indices);
    let val = data.select(&split.val_indices);
    let center = init_center(&encoder, &train, options.center_guard.then_some(options.eps_c))?;

    let loss = Loss::CenterDistance(center.clone());
    let mut optimizer = AdamWState::for_params(&encoder.params());
    let mut rng = Rng::derive(hp.seed, 2);
    let (encoder, mut history) = run_epochs(
        encoder,
        hp,
        |e, _, lr| train_one_epoch(e, &mut optimizer, &train, &loss, lr, hp, &mut rng),
        |e| {
            let z = eval_chunks(&val, |chunk| e.infer(chunk))?;
            Ok(z.iter_rows().map(|r| squared_distance(r, &center)).sum::<f64>() / z.rows() as f64)
        },
    )?;

    let mut model = SvddModel {
        spec,
        encoder,
        center,
        training_threshold: None,
    };
    let train_latents = model.latents(&train)?;
    let variance = latent_variance(&train_latents);
    if variance < COLLAPSE_VARIANCE {
        history.notes.push(alloc::format!(
            "collapse warning: total latent variance {variance:e} on training rows is below {COLLAPSE_VARIANCE:e}; \
             best epoch {}, validation loss {:?}",
            history.best_epoch,
            history.best_val_loss()
        ));
    }
    model.refresh_threshold(&train, options.q)?;
    Ok((model, history))
}
