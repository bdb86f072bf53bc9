//! The symmetric AE / AEwRES autoencoders over 1024-dim embeddings.
//!
//! Encoder layer `i` maps `dims[i] → dims[i+1]`; decoder layer `j` maps
//! `dims[L−j] → dims[L−j−1]` for `L = dims.len() − 1` layers. With residual
//! skips, the output of encoder layer `i` (width `dims[i+1]`) is added to the
//! input of the decoder layer consuming that width, `j = L−1−i`. The latent
//! itself is never skipped.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::EMBEDDING_DIM;
use crate::error::{invalid_arg, shape_err, Result};
use crate::matrix::Matrix;
use crate::nn::{
    flatten_grads, mse_with_grad, BlockOptions, ForwardCache, LayerBlock, Loss, Mode, Sequential,
    Trainable,
};
use crate::rng::Rng;

pub const LATENT_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ae,
    Aewres,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ae => "ae",
            Variant::Aewres => "aewres",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    pub dims: Vec<usize>,
    pub variant: Variant,
    /// Permits a latent width other than 32.
    pub allow_custom_latent: bool,
    /// Final decoder block is a plain Linear layer (no normalization, ELU or
    /// dropout).
    pub linear_output: bool,
    /// Apply dropout after the latent block.
    pub latent_dropout: bool,
    pub block: BlockOptions,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            dims: vec![EMBEDDING_DIM, 512, 256, 128, 64, LATENT_DIM],
            variant: Variant::Aewres,
            allow_custom_latent: false,
            linear_output: true,
            latent_dropout: false,
            block: BlockOptions::default(),
        }
    }
}

impl EncoderSpec {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.dims.last().expect("validated spec has dims")
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(invalid_arg!("encoder needs at least an input and a latent width"));
        }
        if self.dims.contains(&0) {
            return Err(invalid_arg!("layer widths must be positive"));
        }
        if self.dims.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid_arg!(
                "encoder widths {:?} are not strictly decreasing",
                self.dims
            ));
        }
        if self.latent_dim() != LATENT_DIM && !self.allow_custom_latent {
            return Err(invalid_arg!(
                "latent width {} differs from {LATENT_DIM}; set allow_custom_latent to override",
                self.latent_dim()
            ));
        }
        self.block.validate()
    }

    /// Residual pairs implied by the dims, empty for plain AE.
    pub fn skip_pairs(&self) -> Vec<SkipPair> {
        if self.variant == Variant::Ae {
            return Vec::new();
        }
        let layers = self.layers();
        (0..layers - 1)
            .map(|i| SkipPair {
                encoder_layer: i,
                decoder_layer: layers - 1 - i,
                width: self.dims[i + 1],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipPair {
    pub encoder_layer: usize,
    pub decoder_layer: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub spec: EncoderSpec,
    pub encoder: Sequential,
    pub decoder: Sequential,
    pub skips: Vec<SkipPair>,
}

/// Forward state for [`AutoencoderModel::backward`].
#[derive(Debug, Clone)]
pub struct AutoencoderCache {
    encoder: Vec<ForwardCache>,
    decoder: Vec<ForwardCache>,
}

/// Encoder blocks for `spec`, in order.
pub(crate) fn build_encoder(spec: &EncoderSpec, rng: &mut Rng) -> Sequential {
    let layers = spec.layers();
    let blocks = (0..layers)
        .map(|i| {
            let mut b = LayerBlock::new(spec.dims[i], spec.dims[i + 1], &spec.block, rng);
            if i == layers - 1 && !spec.latent_dropout {
                b.dropout_rate = 0.0;
            }
            b
        })
        .collect();
    Sequential::new(blocks)
}

impl AutoencoderModel {
    /// Deterministic Glorot initialization from `seed`.
    pub fn build(spec: &EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(seed);
        let layers = spec.layers();
        let encoder = build_encoder(spec, &mut rng);
        let decoder = Sequential::new(
            (0..layers)
                .map(|j| {
                    let (in_dim, out_dim) = (spec.dims[layers - j], spec.dims[layers - j - 1]);
                    if j == layers - 1 && spec.linear_output {
                        LayerBlock::linear_head(in_dim, out_dim, &mut rng)
                    } else {
                        LayerBlock::new(in_dim, out_dim, &spec.block, &mut rng)
                    }
                })
                .collect(),
        );
        let skips = spec.skip_pairs();
        for s in &skips {
            let enc_out = encoder.blocks[s.encoder_layer].out_dim();
            let dec_in = decoder.blocks[s.decoder_layer].in_dim();
            assert_eq!(enc_out, dec_in, "skip joins unequal widths");
        }
        Ok(Self {
            spec: spec.clone(),
            encoder,
            decoder,
            skips,
        })
    }

    fn check_width(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.spec.input_dim() {
            return Err(shape_err!(
                "model expects width {}, got {}",
                self.spec.input_dim(),
                batch.cols()
            ));
        }
        Ok(())
    }

    fn skip_into(&self, decoder_layer: usize) -> Option<usize> {
        self.skips
            .iter()
            .find(|s| s.decoder_layer == decoder_layer)
            .map(|s| s.encoder_layer)
    }

    pub fn encode(&mut self, batch: &Matrix, mode: Mode, rng: &mut Rng) -> Result<Matrix> {
        self.check_width(batch)?;
        Ok(self.encoder.forward(batch, mode, rng)?.0)
    }

    pub fn reconstruct(&mut self, batch: &Matrix, mode: Mode, rng: &mut Rng) -> Result<Matrix> {
        Ok(self.forward(batch, mode, rng)?.0)
    }

    pub fn forward(
        &mut self,
        batch: &Matrix,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Matrix, AutoencoderCache)> {
        self.check_width(batch)?;
        let mut enc_caches = Vec::with_capacity(self.encoder.blocks.len());
        let mut enc_outputs = Vec::with_capacity(self.encoder.blocks.len());
        let mut h = batch.clone();
        for block in &mut self.encoder.blocks {
            let (out, cache) = block.forward(&h, mode, rng)?;
            enc_caches.push(cache);
            enc_outputs.push(out.clone());
            h = out;
        }
        let mut dec_caches = Vec::with_capacity(self.decoder.blocks.len());
        for j in 0..self.decoder.blocks.len() {
            if let Some(i) = self.skip_into(j) {
                h.add_assign(&enc_outputs[i])?;
            }
            let (out, cache) = self.decoder.blocks[j].forward(&h, mode, rng)?;
            dec_caches.push(cache);
            h = out;
        }
        Ok((
            h,
            AutoencoderCache {
                encoder: enc_caches,
                decoder: dec_caches,
            },
        ))
    }

    /// Gradients for encoder then decoder tensors, given dL/d(reconstruction).
    pub fn backward(&self, cache: &AutoencoderCache, grad_out: &Matrix) -> Result<Vec<Vec<f64>>> {
        let layers = self.encoder.blocks.len();
        let mut skip_grads: Vec<Option<Matrix>> = vec![None; layers];
        let mut dec_grads = Vec::with_capacity(layers);
        let mut g = grad_out.clone();
        for j in (0..self.decoder.blocks.len()).rev() {
            let (gin, pg) = self.decoder.blocks[j].backward(&cache.decoder[j], &g)?;
            dec_grads.push(pg);
            if let Some(i) = self.skip_into(j) {
                skip_grads[i] = Some(gin.clone());
            }
            g = gin;
        }
        dec_grads.reverse();

        let mut enc_grads = Vec::with_capacity(layers);
        for i in (0..layers).rev() {
            if let Some(extra) = &skip_grads[i] {
                g.add_assign(extra)?;
            }
            let (gin, pg) = self.encoder.blocks[i].backward_with(&cache.encoder[i], &g, i > 0)?;
            enc_grads.push(pg);
            if let Some(gin) = gin {
                g = gin;
            }
        }
        enc_grads.reverse();
        enc_grads.extend(dec_grads);
        Ok(flatten_grads(enc_grads))
    }

    /// Rebuilds a model of topology `spec` holding the exported `state`.
    pub fn from_state(spec: &EncoderSpec, state: &[f64]) -> Result<Self> {
        let mut model = Self::build(spec, 0)?;
        model.import_state(state)?;
        Ok(model)
    }

    /// Drops the decoder, keeping the trained encoder blocks.
    pub fn into_encoder(self) -> Sequential {
        self.encoder
    }

    pub fn export_state(&self) -> Vec<f64> {
        let mut v = self.encoder.export_state();
        v.extend(self.decoder.export_state());
        v
    }

    pub fn import_state(&mut self, values: &[f64]) -> Result<()> {
        let split = self.encoder.state_len();
        if values.len() != split + self.decoder.state_len() {
            return Err(shape_err!(
                "state payload has {} values, topology needs {}",
                values.len(),
                split + self.decoder.state_len()
            ));
        }
        self.encoder.import_state(&values[..split])?;
        self.decoder.import_state(&values[split..])
    }
}

impl Trainable for AutoencoderModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    fn loss_and_grads(
        &mut self,
        batch: &Matrix,
        loss: &Loss,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let (out, cache) = self.forward(batch, mode, rng)?;
        let (value, grad) = loss.value_and_grad(&out, batch)?;
        Ok((value, self.backward(&cache, &grad)?))
    }

    fn loss(&mut self, batch: &Matrix, loss: &Loss, mode: Mode, rng: &mut Rng) -> Result<f64> {
        let (out, _) = self.forward(batch, mode, rng)?;
        Ok(loss.value_and_grad(&out, batch)?.0)
    }
}

/// Mean over all elements of the squared difference.
pub fn mse_loss(recon: &Matrix, target: &Matrix) -> Result<f64> {
    Ok(mse_with_grad(recon, target)?.0)
}
