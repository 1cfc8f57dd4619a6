//! The toy network: `input → hidden (ReLU) → target layer → two linear heads`.
//!
//! The target layer `(W2, b2)` is the only part unlearning may change. Its
//! post-nonlinearity output is the representation `H(x)` that every loss in
//! [`crate::unlearn`] is written against.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{EntangledDataset, LabeledSet};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_transpose_a, matmul_transpose_b, Matrix, SeededRng};
use crate::unlearn::{AdamW, AdamWConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Forget,
    Retain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: usize,
    pub hidden: usize,
    /// Width `d` of the target layer.
    pub target: usize,
    pub forget_classes: usize,
    pub retain_classes: usize,
    pub target_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input: 256,
            hidden: 128,
            target: 64,
            forget_classes: 4,
            retain_classes: 4,
            target_activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub forget_w: Matrix,
    pub forget_b: Matrix,
    pub retain_w: Matrix,
    pub retain_b: Matrix,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub hidden1: Matrix,
    pub target_pre: Matrix,
    /// `H(x)`, one row per sample, `d` columns.
    pub target_activation: Matrix,
    pub forget_logits: Matrix,
    pub retain_logits: Matrix,
}

/// Gradients for every parameter, in [`ToyModel::PARAM_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub [Matrix; 8]);

fn glorot(rows: usize, cols: usize, rng: &mut SeededRng) -> Result<Matrix> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul(x, w)?.add_row_broadcast(b)
}

impl ToyModel {
    pub const PARAM_NAMES: [&'static str; 8] = [
        "w1", "b1", "w2", "b2", "forget_w", "forget_b", "retain_w", "retain_b",
    ];

    /// Scaled-uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let c = &config;
        if [
            c.input,
            c.hidden,
            c.target,
            c.forget_classes,
            c.retain_classes,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidArgument(format!(
                "all model widths must be positive: {c:?}"
            )));
        }
        let root = SeededRng::new(seed);
        Ok(ToyModel {
            w1: glorot(c.input, c.hidden, &mut root.split("init/w1"))?,
            b1: Matrix::zeros(1, c.hidden),
            w2: glorot(c.hidden, c.target, &mut root.split("init/w2"))?,
            b2: Matrix::zeros(1, c.target),
            forget_w: glorot(c.target, c.forget_classes, &mut root.split("init/forget"))?,
            forget_b: Matrix::zeros(1, c.forget_classes),
            retain_w: glorot(c.target, c.retain_classes, &mut root.split("init/retain"))?,
            retain_b: Matrix::zeros(1, c.retain_classes),
            config,
            seed,
        })
    }

    pub fn zeros(config: ModelConfig) -> Self {
        let c = &config;
        ToyModel {
            w1: Matrix::zeros(c.input, c.hidden),
            b1: Matrix::zeros(1, c.hidden),
            w2: Matrix::zeros(c.hidden, c.target),
            b2: Matrix::zeros(1, c.target),
            forget_w: Matrix::zeros(c.target, c.forget_classes),
            forget_b: Matrix::zeros(1, c.forget_classes),
            retain_w: Matrix::zeros(c.target, c.retain_classes),
            retain_b: Matrix::zeros(1, c.retain_classes),
            config,
            seed: 0,
        }
    }

    pub fn params(&self) -> [&Matrix; 8] {
        [
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.forget_w,
            &self.forget_b,
            &self.retain_w,
            &self.retain_b,
        ]
    }

    fn params_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.forget_w,
            &mut self.forget_b,
            &mut self.retain_w,
            &mut self.retain_b,
        ]
    }

    /// Name of the first parameter outside the target layer that differs
    /// from `other`, if any.
    pub fn first_frozen_difference(&self, other: &ToyModel) -> Option<&'static str> {
        self.params()
            .iter()
            .zip(other.params())
            .zip(Self::PARAM_NAMES)
            .filter(|(_, name)| !matches!(*name, "w2" | "b2"))
            .find(|((a, b), _)| a.data() != b.data() || a.shape() != b.shape())
            .map(|(_, name)| name)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: x.shape(),
                right: (self.config.input, self.config.hidden),
            });
        }
        Ok(())
    }

    pub fn hidden(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = affine(x, &self.w1, &self.b1)?;
        h.update_in_place("relu", |_, v| v.max(0.0))?;
        Ok(h)
    }

    fn target_from_hidden(&self, hidden1: &Matrix) -> Result<(Matrix, Matrix)> {
        let pre = affine(hidden1, &self.w2, &self.b2)?;
        let mut act = pre.clone();
        let f = self.config.target_activation;
        act.update_in_place("target activation", |_, v| f.apply(v))?;
        Ok((pre, act))
    }

    /// `H(x)` only; stops at the target layer.
    pub fn target_activations(&self, x: &Matrix) -> Result<Matrix> {
        let h = self.hidden(x)?;
        Ok(self.target_from_hidden(&h)?.1)
    }

    pub fn head_logits(&self, activation: &Matrix, task: Task) -> Result<Matrix> {
        match task {
            Task::Forget => affine(activation, &self.forget_w, &self.forget_b),
            Task::Retain => affine(activation, &self.retain_w, &self.retain_b),
        }
    }

    pub fn forward_capture(&self, x: &Matrix) -> Result<ForwardTrace> {
        let hidden1 = self.hidden(x)?;
        let (target_pre, target_activation) = self.target_from_hidden(&hidden1)?;
        Ok(ForwardTrace {
            forget_logits: self.head_logits(&target_activation, Task::Forget)?,
            retain_logits: self.head_logits(&target_activation, Task::Retain)?,
            input: x.clone(),
            hidden1,
            target_pre,
            target_activation,
        })
    }

    pub fn predict(&self, x: &Matrix, task: Task) -> Result<Vec<usize>> {
        let logits = self.head_logits(&self.target_activations(x)?, task)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    pub fn accuracy(&self, set: &LabeledSet, task: Task) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::Empty("accuracy on an empty split"));
        }
        let pred = self.predict(&set.features, task)?;
        let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / set.len() as f64)
    }

    /// Full backward pass of a head's logit gradient through every layer.
    pub fn backprop_full(
        &self,
        trace: &ForwardTrace,
        task: Task,
        grad_logits: &Matrix,
    ) -> Result<Gradients> {
        let (head_w, logits) = match task {
            Task::Forget => (&self.forget_w, &trace.forget_logits),
            Task::Retain => (&self.retain_w, &trace.retain_logits),
        };
        if grad_logits.shape() != logits.shape() {
            return Err(Error::ShapeMismatch {
                op: "backprop_full",
                left: grad_logits.shape(),
                right: logits.shape(),
            });
        }
        let g_head_w = matmul_transpose_a(&trace.target_activation, grad_logits)?;
        let g_head_b = grad_logits.sum_rows();
        let grad_act = matmul_transpose_b(grad_logits, head_w)?;
        let (g_w2, g_b2, grad_hidden) = self.target_layer_backward(trace, &grad_act)?;
        let mut grad_pre1 = grad_hidden;
        let h1 = trace.hidden1.data();
        grad_pre1.update_in_place("relu backward", |i, g| if h1[i] > 0.0 { g } else { 0.0 })?;
        let g_w1 = matmul_transpose_a(&trace.input, &grad_pre1)?;
        let g_b1 = grad_pre1.sum_rows();

        let c = &self.config;
        let (fw, fb, rw, rb) = match task {
            Task::Forget => (
                g_head_w,
                g_head_b,
                Matrix::zeros(c.target, c.retain_classes),
                Matrix::zeros(1, c.retain_classes),
            ),
            Task::Retain => (
                Matrix::zeros(c.target, c.forget_classes),
                Matrix::zeros(1, c.forget_classes),
                g_head_w,
                g_head_b,
            ),
        };
        Ok(Gradients([g_w1, g_b1, g_w2, g_b2, fw, fb, rw, rb]))
    }

    fn target_layer_backward(
        &self,
        trace: &ForwardTrace,
        grad_act: &Matrix,
    ) -> Result<(Matrix, Matrix, Matrix)> {
        let mut grad_pre = grad_act.clone();
        let pre = trace.target_pre.data();
        let f = self.config.target_activation;
        grad_pre.update_in_place("target backward", |i, g| g * f.derivative(pre[i]))?;
        let g_w2 = matmul_transpose_a(&trace.hidden1, &grad_pre)?;
        let g_b2 = grad_pre.sum_rows();
        let grad_hidden = matmul_transpose_b(&grad_pre, &self.w2)?;
        Ok((g_w2, g_b2, grad_hidden))
    }

    /// Writes one CSV per parameter plus `model.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, p) in Self::PARAM_NAMES.iter().zip(self.params()) {
            let path = dir.join(format!("{name}.csv"));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            p.write_csv(std::io::BufWriter::new(file))
                .map_err(|e| Error::io(&path, e))?;
        }
        let manifest = CheckpointManifest {
            config: self.config.clone(),
            seed: self.seed,
            parameters: Self::PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        let path = dir.join("model.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<ToyModel> {
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let mut model = ToyModel::zeros(manifest.config);
        model.seed = manifest.seed;
        for (name, slot) in Self::PARAM_NAMES.iter().zip(model.params_mut()) {
            let path = dir.join(format!("{name}.csv"));
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let m = Matrix::read_csv(BufReader::new(file))?;
            if m.shape() != slot.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint load",
                    left: m.shape(),
                    right: slot.shape(),
                });
            }
            *slot = m;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    config: ModelConfig,
    seed: u64,
    parameters: Vec<String>,
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Gradient of the target layer's parameters for an upstream gradient on
/// `H(x)`. Every other parameter's gradient is zero by construction, so only
/// `(dW2, db2)` is returned.
pub fn backprop_target_layer(
    model: &ToyModel,
    trace: &ForwardTrace,
    grad_wrt_activation: &Matrix,
) -> Result<(Matrix, Matrix)> {
    if grad_wrt_activation.shape() != trace.target_activation.shape() {
        return Err(Error::ShapeMismatch {
            op: "backprop_target_layer",
            left: grad_wrt_activation.shape(),
            right: trace.target_activation.shape(),
        });
    }
    let (g_w2, g_b2, _) = model.target_layer_backward(trace, grad_wrt_activation)?;
    Ok((g_w2, g_b2))
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() || logits.rows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let n = logits.rows() as f64;
    let k = logits.cols();
    let mut grad = Vec::with_capacity(logits.len());
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        loss += z.ln() + max - row[label];
        for (j, e) in exp.iter().enumerate() {
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push((e / z - target) / n);
        }
    }
    Ok((loss / n, Matrix::from_vec(logits.rows(), k, grad)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 4,
            lr: 2e-3,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: PretrainConfig,
    /// Mean of `CE_forget + CE_retain` over each epoch's batches.
    pub epoch_losses: Vec<f64>,
    pub forget_accuracy: f64,
    pub retain_accuracy: f64,
}

/// Joint cross-entropy training of every parameter on both tasks.
///
/// Each step pairs one forget batch with one retain batch; the two head
/// losses are summed.
pub fn pretrain(
    model: &mut ToyModel,
    data: &EntangledDataset,
    cfg: &PretrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainingReport> {
    let (forget, retain) = (&data.forget.train, &data.retain.train);
    if forget.is_empty() || retain.is_empty() {
        return Err(Error::Empty("pretraining needs both training splits"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut opt = AdamW::new(AdamWConfig::with_lr(cfg.lr))?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut forget_order: Vec<usize> = (0..forget.len()).collect();
    let mut retain_order: Vec<usize> = (0..retain.len()).collect();
    let steps = forget.len().max(retain.len()).div_ceil(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut forget_order);
        rng.shuffle(&mut retain_order);
        let mut total = 0.0;
        for s in 0..steps {
            let pick = |order: &[usize]| -> Vec<usize> {
                (0..cfg.batch_size)
                    .map(|j| order[(s * cfg.batch_size + j) % order.len()])
                    .collect()
            };
            let (xf, yf) = forget.batch(&pick(&forget_order))?;
            let (xr, yr) = retain.batch(&pick(&retain_order))?;
            let tf = model.forward_capture(&xf)?;
            let tr = model.forward_capture(&xr)?;
            let (lf, gf) = softmax_cross_entropy(&tf.forget_logits, &yf)?;
            let (lr, gr) = softmax_cross_entropy(&tr.retain_logits, &yr)?;
            if !(lf + lr).is_finite() {
                return Err(Error::Diverged {
                    phase: "pretraining epoch",
                    step: epoch,
                });
            }
            total += lf + lr;
            let Gradients(mut g) = model.backprop_full(&tf, Task::Forget, &gf)?;
            let Gradients(g2) = model.backprop_full(&tr, Task::Retain, &gr)?;
            for (a, b) in g.iter_mut().zip(&g2) {
                let b = b.data();
                a.update_in_place("gradient sum", |i, v| v + b[i])?;
            }
            let grads: Vec<&Matrix> = g.iter().collect();
            opt.step(&mut model.params_mut(), &grads)
                .map_err(|_| Error::Diverged {
                    phase: "pretraining epoch",
                    step: epoch,
                })?;
        }
        let mean = total / steps as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                phase: "pretraining epoch",
                step: epoch,
            });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainingReport {
        config: cfg.clone(),
        epoch_losses,
        forget_accuracy: model.accuracy(&data.forget.test, Task::Forget)?,
        retain_accuracy: model.accuracy(&data.retain.test, Task::Retain)?,
    })
}
