//! MAP training: mini-batch SGD with momentum, cross-entropy loss, and step
//! learning-rate decay.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{DropoutMask, Network, WeightSet};
use crate::rng::{derive_seed, seeded_rng};
use crate::synth::LabeledImage;
use crate::tensor::Tensor;

/// Hyperparameters for [`train`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch interval after which the learning rate is multiplied by
    /// `lr_gamma`.
    pub lr_step: usize,
    pub lr_gamma: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 20,
            lr_step: 7,
            lr_gamma: 0.1,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self, train_len: usize) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} outside [1, {train_len}]",
                self.batch_size
            )));
        }
        if self.lr_step == 0 {
            return Err(Error::InvalidConfig("lr_step must be positive".to_string()));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_gamma {} outside (0, 1]",
                self.lr_gamma
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight_decay {} must be non-negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Per-epoch loss and accuracy on the train and held-out splits.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f32>,
    pub train_accuracy: Vec<f32>,
    pub held_out_loss: Vec<f32>,
    pub held_out_accuracy: Vec<f32>,
}

/// Numerically stable softmax (max subtraction, f64 internally).
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits
        .data()
        .iter()
        .map(|&v| (f64::from(v) - max).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    Tensor::new(
        logits.shape().to_vec(),
        exps.iter().map(|e| (e / sum) as f32).collect(),
    )
    .expect("softmax shape")
}

/// Categorical cross-entropy `-log softmax(logits)[label]`, computed with the
/// max-subtraction stabilization.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f32> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-entropy needs at least 2 classes, got {k}"
        )));
    }
    if label >= k {
        return Err(Error::ClassIndex {
            index: label,
            classes: k,
        });
    }
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, f32::max) as f64;
    let log_sum: f64 = logits
        .data()
        .iter()
        .map(|&v| (f64::from(v) - max).exp())
        .sum::<f64>()
        .ln();
    Ok((log_sum - (f64::from(logits.data()[label]) - max)) as f32)
}

/// Loss value and its gradient with respect to the logits
/// (`softmax - onehot`).
pub fn cross_entropy_grad(logits: &Tensor, label: usize) -> Result<(f32, Tensor)> {
    let loss = cross_entropy(logits, label)?;
    let mut grad = softmax(logits);
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}

/// Predicted class: argmax over logits, first index on ties.
pub fn predicted_class(logits: &Tensor) -> usize {
    let mut best = 0;
    let mut best_v = logits.data()[0];
    for (i, &v) in logits.data().iter().enumerate().skip(1) {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Learning rate used during `epoch` (0-based) under step decay.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f32 {
    cfg.learning_rate * cfg.lr_gamma.powi((epoch / cfg.lr_step) as i32)
}

/// Mean loss and accuracy of `weights` over `data`, in inference mode.
pub fn evaluate_split(net: &Network, weights: &WeightSet, data: &[LabeledImage]) -> Result<(f32, f32)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_image: Vec<(f64, bool)> = data
        .par_iter()
        .map(|item| {
            let logits = net.forward(weights, &item.image, None)?;
            let loss = cross_entropy(&logits, item.label)?;
            Ok((f64::from(loss), predicted_class(&logits) == item.label))
        })
        .collect::<Result<_>>()?;
    let loss: f64 = per_image.iter().map(|(l, _)| l).sum::<f64>() / data.len() as f64;
    let correct = per_image.iter().filter(|(_, ok)| *ok).count();
    Ok((loss as f32, correct as f32 / data.len() as f32))
}

/// f64 gradient accumulator matching a [`WeightSet`] layout.
struct GradAccum {
    layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl GradAccum {
    fn zeros(template: &WeightSet) -> Self {
        let layers = (0..template.num_slots())
            .map(|i| {
                template
                    .layer(i)
                    .map(|p| (vec![0.0; p.weight.len()], vec![0.0; p.bias.len()]))
            })
            .collect();
        Self { layers }
    }

    fn add(&mut self, grads: &WeightSet) {
        for (i, p) in grads.iter() {
            let (w, b) = self.layers[i].as_mut().expect("matching layer");
            for (a, v) in w.iter_mut().zip(p.weight.data()) {
                *a += f64::from(*v);
            }
            for (a, v) in b.iter_mut().zip(p.bias.data()) {
                *a += f64::from(*v);
            }
        }
    }

    /// Mean gradient over `count` samples, truncated to f32.
    fn mean(&self, template: &WeightSet, count: usize) -> WeightSet {
        let mut out = template.clone();
        let n = count as f64;
        for (i, p) in out.iter_mut() {
            let (w, b) = self.layers[i].as_ref().expect("matching layer");
            for (o, a) in p.weight.data_mut().iter_mut().zip(w) {
                *o = (a / n) as f32;
            }
            for (o, a) in p.bias.data_mut().iter_mut().zip(b) {
                *o = (a / n) as f32;
            }
        }
        out
    }
}

/// Trains `net` starting from `init` and returns the final weights plus the
/// per-epoch history.
///
/// Deterministic given `cfg.seed`: the shuffle order and the per-step dropout
/// masks all derive from it, and batch gradients are reduced in sample order.
/// The last tenth of `data` is held out for monitoring and never trained on
/// (with fewer than ten samples everything is trained on and the held-out
/// metrics mirror the train split). If training somehow ends below the
/// initial train accuracy, the initial weights are returned instead.
pub fn train(
    net: &Network,
    init: WeightSet,
    data: &[LabeledImage],
    cfg: &TrainConfig,
) -> Result<(WeightSet, TrainHistory)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    init.check_against(net)?;
    let held = data.len() / 10;
    let (train_data, held_data) = data.split_at(data.len() - held);
    let held_data = if held_data.is_empty() { train_data } else { held_data };
    cfg.validate(train_data.len())?;

    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((init, history));
    }

    let has_dropout = net.has_dropout();
    let mut weights = init.clone();
    let mut velocity = WeightSet::zeros(net);
    // Counts sample occurrences across the whole run; each occurrence gets
    // its own dropout mask seed.
    let mut sample_counter: u64 = 0;

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = seeded_rng(derive_seed(cfg.seed, "shuffle", epoch as u64));
            order.shuffle(&mut rng);
        }

        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let base = sample_counter;
            sample_counter += batch.len() as u64;

            let per_sample: Vec<(f64, WeightSet)> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let item = &train_data[idx];
                    let mask = has_dropout
                        .then(|| DropoutMask::sample(net, derive_seed(cfg.seed, "dropout-mask", base + j as u64)));
                    let logits = net.forward(&weights, &item.image, mask.as_ref())?;
                    let (loss, dlogits) = cross_entropy_grad(&logits, item.label)?;
                    let grads = net.grad_weights(&weights, &item.image, &dlogits, mask.as_ref())?;
                    Ok((f64::from(loss), grads))
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    // A blown-up forward pass is a divergence; report where.
                    Error::NonFinite(_) => Error::Diverged {
                        epoch,
                        step,
                        loss: f64::INFINITY,
                    },
                    other => other,
                })?;

            let batch_loss: f64 =
                per_sample.iter().map(|(l, _)| l).sum::<f64>() / batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }

            let mut accum = GradAccum::zeros(&weights);
            for (_, g) in &per_sample {
                accum.add(g);
            }
            let mean_grad = accum.mean(&weights, batch.len());

            for (i, vp) in velocity.iter_mut() {
                let wp = weights.layer_mut(i).expect("weights layer");
                let gp = mean_grad.layer(i).expect("gradient layer");
                let pairs = [
                    (vp.weight.data_mut(), wp.weight.data_mut(), gp.weight.data()),
                    (vp.bias.data_mut(), wp.bias.data_mut(), gp.bias.data()),
                ];
                for (v, w, g) in pairs {
                    for ((vv, wv), gv) in v.iter_mut().zip(w.iter_mut()).zip(g) {
                        let grad = gv + cfg.weight_decay * *wv;
                        *vv = cfg.momentum * *vv + grad;
                        *wv -= lr * *vv;
                    }
                }
            }
        }

        let (train_loss, train_acc) = evaluate_split(net, &weights, train_data)?;
        let (held_loss, held_acc) = evaluate_split(net, &weights, held_data)?;
        history.train_loss.push(train_loss);
        history.train_accuracy.push(train_acc);
        history.held_out_loss.push(held_loss);
        history.held_out_accuracy.push(held_acc);
    }

    let (_, final_acc) = evaluate_split(net, &weights, train_data)?;
    let (_, init_acc) = evaluate_split(net, &init, train_data)?;
    if final_acc < init_acc {
        return Ok((init, history));
    }
    Ok((weights, history))
}
