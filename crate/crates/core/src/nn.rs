//! Dense network substrate: the Linear → BatchNorm → ELU → Dropout block with
//! hand-written forward and backward passes, and a central-difference
//! gradient checker.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

pub const DEFAULT_ELU_ALPHA: f64 = 0.1;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[inline]
pub fn elu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * libm::expm1(x)
    }
}

#[inline]
fn elu_derivative(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha * libm::exp(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out_dim × in_dim`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let limit = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        let data = (0..in_dim * out_dim)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        Self {
            weights: Matrix::from_vec(out_dim, in_dim, data).expect("sized above"),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(dim: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum,
            eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockOptions {
    pub elu_alpha: f64,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            elu_alpha: DEFAULT_ELU_ALPHA,
            dropout_rate: DEFAULT_DROPOUT,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            bn_eps: DEFAULT_BN_EPS,
        }
    }
}

impl BlockOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.elu_alpha > 0.0 && self.elu_alpha.is_finite()) {
            return Err(invalid_arg!("elu alpha must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid_arg!("dropout rate must be in [0, 1)"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(invalid_arg!("batch-norm momentum must be in (0, 1]"));
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return Err(invalid_arg!("batch-norm eps must be positive"));
        }
        Ok(())
    }
}

/// Linear → BatchNorm → ELU → inverted dropout.
///
/// `norm = None` skips batch normalization and `activate = false` drops the
/// ELU; with both off and no dropout the block is a plain linear layer, as
/// used for reconstruction heads. `shift_frozen`
/// pins the linear bias and batch-norm beta at their current values by
/// reporting zero gradients for them.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub linear: DenseLayer,
    pub norm: Option<BatchNormState>,
    pub elu_alpha: f64,
    pub dropout_rate: f64,
    pub activate: bool,
    pub shift_frozen: bool,
}

/// Everything `LayerBlock::backward` needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    input: Matrix,
    normalized: Matrix,
    pre_activation: Matrix,
    inv_std: Vec<f64>,
    mask: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ParamGrads {
    pub fn into_tensors(self) -> [Vec<f64>; 4] {
        [self.weights.into_vec(), self.bias, self.gamma, self.beta]
    }
}

impl LayerBlock {
    pub fn new(in_dim: usize, out_dim: usize, options: &BlockOptions, rng: &mut Rng) -> Self {
        Self {
            linear: DenseLayer::glorot(in_dim, out_dim, rng),
            norm: Some(BatchNormState::new(out_dim, options.bn_momentum, options.bn_eps)),
            elu_alpha: options.elu_alpha,
            dropout_rate: options.dropout_rate,
            activate: true,
            shift_frozen: false,
        }
    }

    /// A bare `Linear` layer: no normalization, activation or dropout.
    pub fn linear_head(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Self {
            linear: DenseLayer::glorot(in_dim, out_dim, rng),
            norm: None,
            elu_alpha: DEFAULT_ELU_ALPHA,
            dropout_rate: 0.0,
            activate: false,
            shift_frozen: false,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.linear.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.linear.out_dim()
    }

    /// Parameter tensors in declaration order: weights, bias, gamma, beta.
    /// Without normalization gamma and beta are empty.
    pub fn params(&self) -> [&[f64]; 4] {
        let [w, b, g, be, _, _] = self.state();
        [w, b, g, be]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        let [w, b, g, be, _, _] = self.state_mut();
        [w, b, g, be]
    }

    /// Non-trainable state: running mean, running variance.
    pub fn buffers(&self) -> [&[f64]; 2] {
        let [_, _, _, _, rm, rv] = self.state();
        [rm, rv]
    }

    pub fn buffers_mut(&mut self) -> [&mut [f64]; 2] {
        let [_, _, _, _, rm, rv] = self.state_mut();
        [rm, rv]
    }

    /// Parameters followed by buffers; the on-disk payload order.
    pub fn state(&self) -> [&[f64]; 6] {
        let w = self.linear.weights.as_slice();
        let b = &self.linear.bias[..];
        match &self.norm {
            Some(n) => [w, b, &n.gamma, &n.beta, &n.running_mean, &n.running_var],
            None => [w, b, &[], &[], &[], &[]],
        }
    }

    pub fn state_mut(&mut self) -> [&mut [f64]; 6] {
        let w = self.linear.weights.as_mut_slice();
        let b = &mut self.linear.bias[..];
        match &mut self.norm {
            Some(n) => [
                w,
                b,
                &mut n.gamma,
                &mut n.beta,
                &mut n.running_mean,
                &mut n.running_var,
            ],
            None => [w, b, &mut [], &mut [], &mut [], &mut []],
        }
    }

    /// Eval-mode forward without a cache; needs no mutable access.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(shape_err!(
                "block expects width {}, got {}",
                self.in_dim(),
                x.cols()
            ));
        }
        let width = self.out_dim();
        let mut out = x.matmul_nt(&self.linear.weights)?;
        for row in out.as_mut_slice().chunks_exact_mut(width) {
            for (j, v) in row.iter_mut().enumerate() {
                let z = *v + self.linear.bias[j];
                let y = match &self.norm {
                    Some(n) => {
                        let inv_std = 1.0 / libm::sqrt(n.running_var[j] + n.eps);
                        n.gamma[j] * (z - n.running_mean[j]) * inv_std + n.beta[j]
                    }
                    None => z,
                };
                *v = if self.activate { elu(y, self.elu_alpha) } else { y };
            }
        }
        Ok(out)
    }

    pub fn forward(
        &mut self,
        x: &Matrix,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Matrix, ForwardCache)> {
        let batch = x.rows();
        if batch == 0 {
            return Err(invalid_arg!("empty batch"));
        }
        if x.cols() != self.in_dim() {
            return Err(shape_err!(
                "block expects width {}, got {}",
                self.in_dim(),
                x.cols()
            ));
        }
        if mode == Mode::Train && batch < 2 && self.norm.is_some() {
            return Err(invalid_arg!(
                "train-mode batch normalization needs at least 2 rows, got {batch}"
            ));
        }
        let width = self.out_dim();
        let mut z = x.matmul_nt(&self.linear.weights)?;
        for row in z.as_mut_slice().chunks_exact_mut(width) {
            for (v, b) in row.iter_mut().zip(&self.linear.bias) {
                *v += b;
            }
        }

        let Some(norm) = &mut self.norm else {
            let out = self.finish_forward(z.clone(), mode, rng);
            let (out, mask) = out;
            let cache = ForwardCache {
                mode,
                input: x.clone(),
                normalized: Matrix::zeros(0, 0),
                pre_activation: z,
                inv_std: Vec::new(),
                mask,
            };
            return Ok((out, cache));
        };
        let (mean, inv_std) = match mode {
            Mode::Train => {
                let mean = z.column_means();
                let mut var = vec![0.0; width];
                for row in z.iter_rows() {
                    for j in 0..width {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                let n = batch as f64;
                let m = norm.momentum;
                let inv_std: Vec<f64> = var
                    .iter()
                    .map(|&s| 1.0 / libm::sqrt(s / n + norm.eps))
                    .collect();
                for j in 0..width {
                    norm.running_mean[j] = (1.0 - m) * norm.running_mean[j] + m * mean[j];
                    norm.running_var[j] = (1.0 - m) * norm.running_var[j] + m * var[j] / (n - 1.0);
                }
                (mean, inv_std)
            }
            Mode::Eval => (
                norm.running_mean.clone(),
                norm.running_var
                    .iter()
                    .map(|&v| 1.0 / libm::sqrt(v + norm.eps))
                    .collect(),
            ),
        };

        let mut normalized = z;
        let mut pre_activation = Matrix::zeros(batch, width);
        for (xh, y) in normalized
            .as_mut_slice()
            .chunks_exact_mut(width)
            .zip(pre_activation.as_mut_slice().chunks_exact_mut(width))
        {
            for j in 0..width {
                xh[j] = (xh[j] - mean[j]) * inv_std[j];
                y[j] = norm.gamma[j] * xh[j] + norm.beta[j];
            }
        }

        let (out, mask) = self.finish_forward(pre_activation.clone(), mode, rng);
        let cache = ForwardCache {
            mode,
            input: x.clone(),
            normalized,
            pre_activation,
            inv_std,
            mask,
        };
        Ok((out, cache))
    }

    /// ELU and dropout applied to the pre-activation.
    fn finish_forward(&self, pre_activation: Matrix, mode: Mode, rng: &mut Rng) -> (Matrix, Option<Matrix>) {
        let batch = pre_activation.rows();
        let width = pre_activation.cols();
        let mut out = if self.activate {
            pre_activation.map(|v| elu(v, self.elu_alpha))
        } else {
            pre_activation
        };

        let mask = if mode == Mode::Train && self.dropout_rate > 0.0 {
            let keep = 1.0 / (1.0 - self.dropout_rate);
            let mut mask = Matrix::zeros(batch, width);
            for (m, o) in mask.as_mut_slice().iter_mut().zip(out.as_mut_slice()) {
                *m = if rng.next_f64() >= self.dropout_rate {
                    keep
                } else {
                    0.0
                };
                *o *= *m;
            }
            Some(mask)
        } else {
            None
        };
        (out, mask)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<(Matrix, ParamGrads)> {
        let (grad_in, grads) = self.backward_with(cache, grad_out, true)?;
        Ok((grad_in.expect("input gradient requested"), grads))
    }

    /// Backward pass that skips the input gradient when `want_input` is false.
    pub(crate) fn backward_with(
        &self,
        cache: &ForwardCache,
        grad_out: &Matrix,
        want_input: bool,
    ) -> Result<(Option<Matrix>, ParamGrads)> {
        let (batch, width) = cache.pre_activation.shape();
        if grad_out.shape() != (batch, width) || width != self.out_dim() {
            return Err(shape_err!(
                "gradient {:?} does not match cached output {:?}",
                grad_out.shape(),
                (batch, width)
            ));
        }

        // dL/dy, y being the batch-norm output
        let mut grad_y = grad_out.clone();
        if let Some(mask) = &cache.mask {
            for (g, m) in grad_y.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *g *= m;
            }
        }
        if self.activate {
            for (g, &y) in grad_y
                .as_mut_slice()
                .iter_mut()
                .zip(cache.pre_activation.as_slice())
            {
                *g *= elu_derivative(y, self.elu_alpha);
            }
        }

        let width_norm = if self.norm.is_some() { width } else { 0 };
        let mut grad_gamma = vec![0.0; width_norm];
        let mut grad_beta = vec![0.0; width_norm];
        // dL/dz, z being the linear output
        let mut grad_z = grad_y;
        if let Some(norm) = &self.norm {
            for (g, xh) in grad_z.iter_rows().zip(cache.normalized.iter_rows()) {
                for j in 0..width {
                    grad_gamma[j] += g[j] * xh[j];
                    grad_beta[j] += g[j];
                }
            }
            norm_backward(norm, cache, &mut grad_z, &grad_gamma, &grad_beta);
        }

        let grad_weights = grad_z.matmul_tn(&cache.input)?;
        let mut grad_bias = vec![0.0; width];
        for g in grad_z.iter_rows() {
            for (b, v) in grad_bias.iter_mut().zip(g) {
                *b += v;
            }
        }
        let grad_in = if want_input {
            Some(grad_z.matmul(&self.linear.weights)?)
        } else {
            None
        };

        if self.shift_frozen {
            grad_bias.iter_mut().for_each(|v| *v = 0.0);
            grad_beta.iter_mut().for_each(|v| *v = 0.0);
        }

        Ok((
            grad_in,
            ParamGrads {
                weights: grad_weights,
                bias: grad_bias,
                gamma: grad_gamma,
                beta: grad_beta,
            },
        ))
    }
}


/// Back-propagates through batch normalization in place: `grad` holds dL/dy
/// on entry and dL/dz on exit.
fn norm_backward(
    norm: &BatchNormState,
    cache: &ForwardCache,
    grad: &mut Matrix,
    grad_gamma: &[f64],
    grad_beta: &[f64],
) {
    let (batch, width) = grad.shape();
    match cache.mode {
        Mode::Train => {
            // sum_i dxhat = gamma·grad_beta, sum_i dxhat·xhat = gamma·grad_gamma
            let n = batch as f64;
            for (g, xh) in grad
                .as_mut_slice()
                .chunks_exact_mut(width)
                .zip(cache.normalized.iter_rows())
            {
                for j in 0..width {
                    g[j] = norm.gamma[j] * cache.inv_std[j] / n
                        * (n * g[j] - grad_beta[j] - xh[j] * grad_gamma[j]);
                }
            }
        }
        Mode::Eval => {
            for g in grad.as_mut_slice().chunks_exact_mut(width) {
                for ((v, gamma), inv_std) in g.iter_mut().zip(&norm.gamma).zip(&cache.inv_std) {
                    *v *= gamma * inv_std;
                }
            }
        }
    }
}

/// Scalar objective evaluated on a network's output.
#[derive(Debug, Clone, PartialEq)]
pub enum Loss {
    /// Mean squared error against the network's own input.
    Reconstruction,
    /// Mean squared error against a fixed target.
    Mse(Matrix),
    /// Mean over rows of the squared distance to `center`.
    CenterDistance(Vec<f64>),
}

impl Loss {
    pub fn value_and_grad(&self, output: &Matrix, input: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            Loss::Reconstruction => mse_with_grad(output, input),
            Loss::Mse(target) => mse_with_grad(output, target),
            Loss::CenterDistance(center) => center_distance_with_grad(output, center),
        }
    }
}

pub(crate) fn mse_with_grad(output: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if output.shape() != target.shape() {
        return Err(shape_err!(
            "MSE between {:?} and {:?}",
            output.shape(),
            target.shape()
        ));
    }
    let count = output.as_slice().len() as f64;
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    let mut sum = 0.0;
    for ((g, o), t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(output.as_slice())
        .zip(target.as_slice())
    {
        let d = o - t;
        sum += d * d;
        *g = 2.0 * d / count;
    }
    Ok((sum / count, grad))
}

pub(crate) fn center_distance_with_grad(output: &Matrix, center: &[f64]) -> Result<(f64, Matrix)> {
    if output.cols() != center.len() {
        return Err(shape_err!(
            "latent width {} vs center width {}",
            output.cols(),
            center.len()
        ));
    }
    let n = output.rows() as f64;
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    let mut sum = 0.0;
    for (g, row) in grad
        .as_mut_slice()
        .chunks_exact_mut(center.len())
        .zip(output.iter_rows())
    {
        for j in 0..center.len() {
            let d = row[j] - center[j];
            sum += d * d;
            g[j] = 2.0 * d / n;
        }
    }
    Ok((sum / n, grad))
}

/// A network with trainable parameter tensors and an analytic gradient.
pub trait Trainable {
    /// Parameter tensors in declaration order.
    fn params(&self) -> Vec<&[f64]>;

    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    /// Loss of one batch and the gradient of every parameter tensor, in
    /// the order of [`Trainable::params`].
    fn loss_and_grads(
        &mut self,
        batch: &Matrix,
        loss: &Loss,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(f64, Vec<Vec<f64>>)>;

    /// Forward-only loss.
    fn loss(&mut self, batch: &Matrix, loss: &Loss, mode: Mode, rng: &mut Rng) -> Result<f64>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

/// Blocks applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub blocks: Vec<LayerBlock>,
}

impl Sequential {
    pub fn new(blocks: Vec<LayerBlock>) -> Self {
        Self { blocks }
    }

    pub fn forward(
        &mut self,
        x: &Matrix,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Matrix, Vec<ForwardCache>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for block in &mut self.blocks {
            let (out, cache) = block.forward(&h, mode, rng)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, caches))
    }

    /// Eval-mode forward through every block.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.infer(&h)?;
        }
        Ok(h)
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.blocks.first().map(LayerBlock::in_dim)
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.blocks.last().map(LayerBlock::out_dim)
    }

    /// Every block's [`LayerBlock::state`], concatenated.
    pub fn export_state(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.state())
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    pub fn state_len(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| b.state())
            .map(<[f64]>::len)
            .sum()
    }

    /// Inverse of [`Sequential::export_state`]; `values` must match the
    /// topology exactly.
    pub fn import_state(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.state_len() {
            return Err(shape_err!(
                "state payload has {} values, topology needs {}",
                values.len(),
                self.state_len()
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("parameter {pos}")));
        }
        let mut offset = 0;
        for block in &mut self.blocks {
            for t in block.state_mut() {
                t.copy_from_slice(&values[offset..offset + t.len()]);
                offset += t.len();
            }
        }
        if self
            .blocks
            .iter()
            .any(|b| b.buffers()[1].iter().any(|&v| v < 0.0))
        {
            return Err(invalid_arg!("negative running variance in state payload"));
        }
        Ok(())
    }

    pub fn backward(
        &self,
        caches: &[ForwardCache],
        grad_out: &Matrix,
    ) -> Result<(Matrix, Vec<ParamGrads>)> {
        if caches.len() != self.blocks.len() {
            return Err(shape_err!(
                "{} caches for {} blocks",
                caches.len(),
                self.blocks.len()
            ));
        }
        let mut grads = Vec::with_capacity(self.blocks.len());
        let mut g = grad_out.clone();
        for (block, cache) in self.blocks.iter().zip(caches).rev() {
            let (gin, pg) = block.backward(cache, &g)?;
            grads.push(pg);
            g = gin;
        }
        grads.reverse();
        Ok((g, grads))
    }
}

pub(crate) fn flatten_grads(grads: Vec<ParamGrads>) -> Vec<Vec<f64>> {
    grads.into_iter().flat_map(ParamGrads::into_tensors).collect()
}

impl Trainable for Sequential {
    fn params(&self) -> Vec<&[f64]> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect()
    }

    fn loss_and_grads(
        &mut self,
        batch: &Matrix,
        loss: &Loss,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let (out, caches) = self.forward(batch, mode, rng)?;
        let (value, grad) = loss.value_and_grad(&out, batch)?;
        if caches.len() != self.blocks.len() {
            return Err(shape_err!("{} caches for {} blocks", caches.len(), self.blocks.len()));
        }
        let mut grads = Vec::with_capacity(self.blocks.len());
        let mut g = grad;
        for (i, (block, cache)) in self.blocks.iter().zip(&caches).enumerate().rev() {
            let (gin, pg) = block.backward_with(cache, &g, i > 0)?;
            grads.push(pg);
            if let Some(gin) = gin {
                g = gin;
            }
        }
        grads.reverse();
        Ok((value, flatten_grads(grads)))
    }

    fn loss(&mut self, batch: &Matrix, loss: &Loss, mode: Mode, rng: &mut Rng) -> Result<f64> {
        let (out, _) = self.forward(batch, mode, rng)?;
        Ok(loss.value_and_grad(&out, batch)?.0)
    }
}

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Central-difference step, within `[1e-6, 1e-3]`.
    pub eps: f64,
    pub mode: Mode,
    /// Seed of the stream replayed for every evaluation, so dropout masks
    /// stay frozen across perturbations.
    pub seed: u64,
    /// Upper bound on checked coordinates; `None` checks all of them.
    pub max_params: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            mode: Mode::Train,
            seed: 0,
            max_params: Some(2000),
        }
    }
}

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Worst relative error `|analytic − numeric| / max(|numeric|, floor)` over a
/// seeded subset of parameter coordinates. A network with no parameters
/// checks to 0.
pub fn grad_check<N: Trainable + Clone>(
    network: &N,
    loss: &Loss,
    batch: &Matrix,
    cfg: &GradCheck,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&cfg.eps) {
        return Err(invalid_arg!("grad-check eps {} outside [1e-6, 1e-3]", cfg.eps));
    }
    let mut net = network.clone();
    let (value, analytic) = net.loss_and_grads(batch, loss, cfg.mode, &mut Rng::new(cfg.seed))?;
    if !value.is_finite() {
        return Err(Error::NonFinite(alloc::format!("loss {value}")));
    }

    let mut coords: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(t, g)| (0..g.len()).map(move |i| (t, i)))
        .collect();
    if coords.is_empty() {
        return Ok(0.0);
    }
    if let Some(limit) = cfg.max_params {
        if coords.len() > limit {
            let mut rng = Rng::new(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
            rng.shuffle(&mut coords);
            coords.truncate(limit);
        }
    }

    let mut worst: f64 = 0.0;
    for (t, i) in coords {
        let original = net.params()[t][i];
        net.params_mut()[t][i] = original + cfg.eps;
        let plus = net.loss(batch, loss, cfg.mode, &mut Rng::new(cfg.seed))?;
        net.params_mut()[t][i] = original - cfg.eps;
        let minus = net.loss(batch, loss, cfg.mode, &mut Rng::new(cfg.seed))?;
        net.params_mut()[t][i] = original;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite(alloc::format!(
                "loss while perturbing tensor {t} index {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let err = (analytic[t][i] - numeric).abs() / numeric.abs().max(GRAD_CHECK_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
