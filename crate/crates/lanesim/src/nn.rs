//! Minimal dense feed-forward Q-network: forward pass, exact
//! backpropagation under a masked Huber loss, Adam-style updates, a
//! finite-difference verification harness, and binary checkpoints.
//!
//! Parameters are 32-bit; reductions accumulate in 64-bit, and the gradient
//! check runs on a full 64-bit shadow copy.

#![allow(clippy::needless_range_loop)]

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

const CHECKPOINT_MAGIC: &[u8; 4] = b"LCSQ";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
    #[error("input length mismatch: expected {expected}, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("action index {action} out of range for {outputs} outputs")]
    BadAction { action: usize, outputs: usize },
    #[error("networks have different architectures")]
    ArchitectureMismatch,
    #[error("finite-difference epsilon must lie in [1e-7, 1e-3]")]
    BadEpsilon,
    #[error("checkpoint has wrong magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint file is truncated")]
    Truncated,
    #[error("checkpoint layer dimensions are inconsistent")]
    DimensionMismatch,
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerAlgo {
    /// Adaptive moments with bias correction.
    Adam,
    /// Plain gradient descent, kept for ablation.
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub algo: OptimizerAlgo,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algo: OptimizerAlgo::Adam,
            learning_rate: 0.00025,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Default Q-network topology: 40 inputs, four hidden layers, 5 outputs.
pub fn default_layer_sizes() -> Vec<usize> {
    vec![40, 32, 64, 64, 512, 5]
}

/// One affine layer; weights are row-major with `rows` outputs and `cols`
/// inputs.
#[derive(Debug, Clone, PartialEq)]
struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f32>,
    biases: Vec<f32>,
}

/// One training sample: gradient flows only through the q-entry selected by
/// `action`.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub input: &'a [f32],
    pub action: usize,
    pub target: f64,
}

/// Dense rectifier network with a linear output layer and per-parameter
/// optimizer state.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    opt: OptimizerConfig,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    train_steps: u64,
}

/// Huber loss and its derivative with respect to the prediction,
/// e = pred - target: quadratic inside the unit band, linear outside.
pub fn huber_loss_and_grad(pred: f64, target: f64) -> (f64, f64) {
    let e = pred - target;
    if e.abs() <= 1.0 {
        (0.5 * e * e, e)
    } else {
        (e.abs() - 0.5, e.signum())
    }
}

impl DenseNet {
    /// Glorot-uniform initialization: weights drawn from
    /// [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))), biases zero.
    pub fn init<R: Rng>(
        layer_sizes: &[usize],
        opt: OptimizerConfig,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::BadArchitecture("need at least two layers".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(NnError::BadArchitecture("layer sizes must be >= 1".into()));
        }
        let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (cols, rows) = (pair[0], pair[1]);
            let bound = (6.0 / (cols + rows) as f64).sqrt();
            let weights = (0..rows * cols)
                .map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * bound) as f32)
                .collect();
            layers.push(Layer {
                rows,
                cols,
                weights,
                biases: vec![0.0; rows],
            });
        }
        let param_count: usize = layers.iter().map(|l| l.rows * l.cols + l.rows).sum();
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            opt,
            moment1: vec![0.0; param_count],
            moment2: vec![0.0; param_count],
            train_steps: 0,
        })
    }

    /// Build a network from explicit parameters; weight matrices are
    /// row-major `[outputs x inputs]`, one per consecutive size pair.
    pub fn from_params(
        layer_sizes: &[usize],
        weights: &[Vec<f32>],
        biases: &[Vec<f32>],
        opt: OptimizerConfig,
    ) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(NnError::BadArchitecture(
                "need at least two nonzero layers".into(),
            ));
        }
        if weights.len() != layer_sizes.len() - 1 || biases.len() != weights.len() {
            return Err(NnError::BadArchitecture(
                "parameter count does not match sizes".into(),
            ));
        }
        let mut layers = Vec::with_capacity(weights.len());
        for (i, pair) in layer_sizes.windows(2).enumerate() {
            let (cols, rows) = (pair[0], pair[1]);
            if weights[i].len() != rows * cols || biases[i].len() != rows {
                return Err(NnError::BadArchitecture(format!(
                    "layer {i} expects a {rows}x{cols} matrix"
                )));
            }
            layers.push(Layer {
                rows,
                cols,
                weights: weights[i].clone(),
                biases: biases[i].clone(),
            });
        }
        let param_count: usize = layers.iter().map(|l| l.rows * l.cols + l.rows).sum();
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            opt,
            moment1: vec![0.0; param_count],
            moment2: vec![0.0; param_count],
            train_steps: 0,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn optimizer(&self) -> &OptimizerConfig {
        &self.opt
    }

    /// Forward pass: affine + rectifier per hidden layer, affine output.
    pub fn forward(&self, input: &[f32]) -> Result<Vec<f32>, NnError> {
        if input.len() != self.input_len() {
            return Err(NnError::InputLength {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        let mut activation = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0f32; layer.rows];
            for r in 0..layer.rows {
                let mut acc = layer.biases[r] as f64;
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (w, a) in row.iter().zip(&activation) {
                    acc += *w as f64 * *a as f64;
                }
                next[r] = if li == last {
                    acc as f32
                } else {
                    (acc.max(0.0)) as f32
                };
            }
            activation = next;
        }
        Ok(activation)
    }

    /// Forward with every layer's activation kept, input first.
    fn forward_cached(&self, input: &[f32]) -> Vec<Vec<f32>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let mut next = vec![0.0f32; layer.rows];
            for r in 0..layer.rows {
                let mut acc = layer.biases[r] as f64;
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (w, a) in row.iter().zip(prev) {
                    acc += *w as f64 * *a as f64;
                }
                next[r] = if li == last {
                    acc as f32
                } else {
                    (acc.max(0.0)) as f32
                };
            }
            acts.push(next);
        }
        acts
    }

    /// One optimizer step over a minibatch. Gradients are averaged across
    /// samples and flow only through each sample's taken action. Returns the
    /// mean Huber loss.
    pub fn backward_and_apply(&mut self, batch: &[TrainSample<'_>]) -> Result<f64, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        for s in batch {
            if s.input.len() != self.input_len() {
                return Err(NnError::InputLength {
                    expected: self.input_len(),
                    got: s.input.len(),
                });
            }
            if s.action >= self.output_len() {
                return Err(NnError::BadAction {
                    action: s.action,
                    outputs: self.output_len(),
                });
            }
        }

        let mut grad_w: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.rows * l.cols])
            .collect();
        let mut grad_b: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.rows]).collect();
        let mut loss_sum = 0.0f64;

        for sample in batch {
            let acts = self.forward_cached(sample.input);
            let output = acts.last().unwrap();
            let pred = output[sample.action] as f64;
            let (loss, dloss) = huber_loss_and_grad(pred, sample.target);
            loss_sum += loss;

            // residual only on the taken action's output
            let mut delta = vec![0.0f64; self.output_len()];
            delta[sample.action] = dloss;

            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let prev_act = &acts[li];
                for r in 0..layer.rows {
                    let d = delta[r];
                    if d != 0.0 {
                        grad_b[li][r] += d;
                        let row = &mut grad_w[li][r * layer.cols..(r + 1) * layer.cols];
                        for (g, a) in row.iter_mut().zip(prev_act) {
                            *g += d * *a as f64;
                        }
                    }
                }
                if li == 0 {
                    break;
                }
                // delta for the previous layer, gated by its rectifier
                let mut prev_delta = vec![0.0f64; layer.cols];
                for r in 0..layer.rows {
                    let d = delta[r];
                    if d != 0.0 {
                        let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                        for (pd, w) in prev_delta.iter_mut().zip(row) {
                            *pd += d * *w as f64;
                        }
                    }
                }
                for (pd, a) in prev_delta.iter_mut().zip(prev_act) {
                    if *a <= 0.0 {
                        *pd = 0.0;
                    }
                }
                delta = prev_delta;
            }
        }

        let scale = 1.0 / batch.len() as f64;
        self.train_steps += 1;
        let t = self.train_steps;
        let opt = self.opt.clone();
        let mut flat = 0usize;
        for li in 0..self.layers.len() {
            let layer = &mut self.layers[li];
            for (i, w) in layer.weights.iter_mut().enumerate() {
                let g = grad_w[li][i] * scale;
                *w = apply_update(*w, g, flat, t, &opt, &mut self.moment1, &mut self.moment2);
                flat += 1;
            }
            for (i, b) in layer.biases.iter_mut().enumerate() {
                let g = grad_b[li][i] * scale;
                *b = apply_update(*b, g, flat, t, &opt, &mut self.moment1, &mut self.moment2);
                flat += 1;
            }
        }

        Ok(loss_sum * scale)
    }

    /// Hard copy of all parameters from another network of identical shape.
    /// Optimizer state and the step counter stay local.
    pub fn copy_params_from(&mut self, other: &DenseNet) -> Result<(), NnError> {
        if self.layer_sizes != other.layer_sizes {
            return Err(NnError::ArchitectureMismatch);
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.copy_from_slice(&src.weights);
            dst.biases.copy_from_slice(&src.biases);
        }
        Ok(())
    }

    /// Serialized parameter image; equal bytes mean equal parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    /// Little-endian image of the parameters alone, excluding the header and
    /// step counter. Useful for staleness checks between networks.
    pub fn params_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.biases) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NnError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.rows as u32).to_le_bytes())?;
            w.write_all(&(layer.cols as u32).to_le_bytes())?;
        }
        for layer in &self.layers {
            for v in &layer.weights {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for layer in &self.layers {
            for v in &layer.biases {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&self.train_steps.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, opt: OptimizerConfig) -> Result<Self, NnError> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::BadVersion(version));
        }
        let layer_count = read_u32(r)? as usize;
        if layer_count == 0 || layer_count > 1024 {
            return Err(NnError::DimensionMismatch);
        }
        let mut dims = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            if rows == 0 || cols == 0 {
                return Err(NnError::DimensionMismatch);
            }
            dims.push((rows, cols));
        }
        for pair in dims.windows(2) {
            if pair[1].1 != pair[0].0 {
                return Err(NnError::DimensionMismatch);
            }
        }

        let mut layers: Vec<Layer> = dims
            .iter()
            .map(|&(rows, cols)| Layer {
                rows,
                cols,
                weights: vec![0.0; rows * cols],
                biases: vec![0.0; rows],
            })
            .collect();
        for layer in layers.iter_mut() {
            for v in layer.weights.iter_mut() {
                *v = read_f32(r)?;
            }
        }
        for layer in layers.iter_mut() {
            for v in layer.biases.iter_mut() {
                *v = read_f32(r)?;
            }
        }
        let train_steps = read_u64(r)?;

        let mut layer_sizes = vec![dims[0].1];
        layer_sizes.extend(dims.iter().map(|&(rows, _)| rows));
        let param_count: usize = layers.iter().map(|l| l.rows * l.cols + l.rows).sum();
        Ok(DenseNet {
            layer_sizes,
            layers,
            opt,
            moment1: vec![0.0; param_count],
            moment2: vec![0.0; param_count],
            train_steps,
        })
    }

    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<(), NnError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint<P: AsRef<Path>>(path: P, opt: OptimizerConfig) -> Result<Self, NnError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r, opt)
    }

    /// Central finite differences against backprop on a 64-bit shadow copy.
    /// Reports the maximum relative error over parameters whose analytic
    /// gradient exceeds 1e-8 in magnitude.
    pub fn finite_diff_check(
        &self,
        batch: &[TrainSample<'_>],
        epsilon: f64,
    ) -> Result<f64, NnError> {
        self.finite_diff_check_inner(batch, epsilon, None)
    }

    /// Same check with one analytic gradient entry deliberately inflated by
    /// ten percent, to demonstrate that the check catches a wrong gradient.
    pub fn finite_diff_check_corrupted(
        &self,
        batch: &[TrainSample<'_>],
        epsilon: f64,
    ) -> Result<f64, NnError> {
        self.finite_diff_check_inner(batch, epsilon, Some(1.1))
    }

    fn finite_diff_check_inner(
        &self,
        batch: &[TrainSample<'_>],
        epsilon: f64,
        corrupt_factor: Option<f64>,
    ) -> Result<f64, NnError> {
        if !(1e-7..=1e-3).contains(&epsilon) {
            return Err(NnError::BadEpsilon);
        }
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut shadow = Shadow::from_net(self);
        let mut analytic = shadow.gradients(batch);
        if let Some(factor) = corrupt_factor {
            // inflate the first sufficiently-large entry
            if let Some(g) = analytic.iter_mut().find(|g| g.abs() > 1e-8) {
                *g *= factor;
            }
        }

        let mut max_rel = 0.0f64;
        for p in 0..shadow.param_count() {
            let g = analytic[p];
            if g.abs() <= 1e-8 {
                continue;
            }
            let orig = shadow.get_param(p);
            shadow.set_param(p, orig + epsilon);
            let plus = shadow.mean_loss(batch);
            shadow.set_param(p, orig - epsilon);
            let minus = shadow.mean_loss(batch);
            shadow.set_param(p, orig);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (numeric - g).abs() / numeric.abs().max(g.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
        Ok(max_rel)
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_update(
    param: f32,
    grad: f64,
    flat: usize,
    t: u64,
    opt: &OptimizerConfig,
    moment1: &mut [f64],
    moment2: &mut [f64],
) -> f32 {
    let step = match opt.algo {
        OptimizerAlgo::Sgd => opt.learning_rate * grad,
        OptimizerAlgo::Adam => {
            let m = opt.beta1 * moment1[flat] + (1.0 - opt.beta1) * grad;
            let v = opt.beta2 * moment2[flat] + (1.0 - opt.beta2) * grad * grad;
            moment1[flat] = m;
            moment2[flat] = v;
            let m_hat = m / (1.0 - opt.beta1.powi(t as i32));
            let v_hat = v / (1.0 - opt.beta2.powi(t as i32));
            opt.learning_rate * m_hat / (v_hat.sqrt() + opt.epsilon)
        }
    };
    (param as f64 - step) as f32
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), NnError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            NnError::Truncated
        } else {
            NnError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32, NnError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Full-precision copy of a network used by the gradient check: same
/// topology and the same backprop algorithm, all arithmetic in f64.
struct Shadow {
    dims: Vec<(usize, usize)>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Shadow {
    fn from_net(net: &DenseNet) -> Self {
        Shadow {
            dims: net.layers.iter().map(|l| (l.rows, l.cols)).collect(),
            weights: net
                .layers
                .iter()
                .map(|l| l.weights.iter().map(|&w| w as f64).collect())
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| l.biases.iter().map(|&b| b as f64).collect())
                .collect(),
        }
    }

    fn param_count(&self) -> usize {
        self.dims.iter().map(|&(r, c)| r * c + r).sum()
    }

    fn locate(&self, mut p: usize) -> (usize, bool, usize) {
        for (li, &(r, c)) in self.dims.iter().enumerate() {
            if p < r * c {
                return (li, true, p);
            }
            p -= r * c;
            if p < r {
                return (li, false, p);
            }
            p -= r;
        }
        unreachable!("parameter index out of range")
    }

    fn get_param(&self, p: usize) -> f64 {
        let (li, is_weight, idx) = self.locate(p);
        if is_weight {
            self.weights[li][idx]
        } else {
            self.biases[li][idx]
        }
    }

    fn set_param(&mut self, p: usize, value: f64) {
        let (li, is_weight, idx) = self.locate(p);
        if is_weight {
            self.weights[li][idx] = value;
        } else {
            self.biases[li][idx] = value;
        }
    }

    fn forward_cached(&self, input: &[f32]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.dims.len() + 1);
        acts.push(input.iter().map(|&x| x as f64).collect());
        let last = self.dims.len() - 1;
        for (li, &(rows, cols)) in self.dims.iter().enumerate() {
            let prev = acts.last().unwrap();
            let mut next = vec![0.0f64; rows];
            for r in 0..rows {
                let mut acc = self.biases[li][r];
                let row = &self.weights[li][r * cols..(r + 1) * cols];
                for (w, a) in row.iter().zip(prev) {
                    acc += w * a;
                }
                next[r] = if li == last { acc } else { acc.max(0.0) };
            }
            acts.push(next);
        }
        acts
    }

    fn mean_loss(&self, batch: &[TrainSample<'_>]) -> f64 {
        let mut sum = 0.0;
        for s in batch {
            let acts = self.forward_cached(s.input);
            let pred = acts.last().unwrap()[s.action];
            sum += huber_loss_and_grad(pred, s.target).0;
        }
        sum / batch.len() as f64
    }

    /// Mean-loss gradient for every parameter, flattened in the same order
    /// the optimizer walks them.
    fn gradients(&self, batch: &[TrainSample<'_>]) -> Vec<f64> {
        let layer_count = self.dims.len();
        let mut grad_w: Vec<Vec<f64>> = self.dims.iter().map(|&(r, c)| vec![0.0; r * c]).collect();
        let mut grad_b: Vec<Vec<f64>> = self.dims.iter().map(|&(r, _)| vec![0.0; r]).collect();

        for s in batch {
            let acts = self.forward_cached(s.input);
            let pred = acts.last().unwrap()[s.action];
            let (_, dloss) = huber_loss_and_grad(pred, s.target);
            let mut delta = vec![0.0f64; self.dims[layer_count - 1].0];
            delta[s.action] = dloss;

            for li in (0..layer_count).rev() {
                let (rows, cols) = self.dims[li];
                let prev = &acts[li];
                for r in 0..rows {
                    let d = delta[r];
                    if d != 0.0 {
                        grad_b[li][r] += d;
                        for c in 0..cols {
                            grad_w[li][r * cols + c] += d * prev[c];
                        }
                    }
                }
                if li == 0 {
                    break;
                }
                let mut prev_delta = vec![0.0f64; cols];
                for r in 0..rows {
                    let d = delta[r];
                    if d != 0.0 {
                        for c in 0..cols {
                            prev_delta[c] += d * self.weights[li][r * cols + c];
                        }
                    }
                }
                for (pd, a) in prev_delta.iter_mut().zip(prev) {
                    if *a <= 0.0 {
                        *pd = 0.0;
                    }
                }
                delta = prev_delta;
            }
        }

        let scale = 1.0 / batch.len() as f64;
        let mut flat = Vec::with_capacity(self.param_count());
        for li in 0..layer_count {
            flat.extend(grad_w[li].iter().map(|g| g * scale));
            flat.extend(grad_b[li].iter().map(|g| g * scale));
        }
        flat
    }
}
