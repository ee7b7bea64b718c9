use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arch::ModelArch;
use super::model::{argmax_rows, loss_grad_logits};
use super::params::ParamSet;
use super::NnError;
use crate::dataset::Dataset;
use crate::seed;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 0.01,
            batch_size: 32,
        }
    }
}

/// Per-epoch statistics of one local training call.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainReport {
    /// Sample-weighted mean loss of each epoch, measured before each step.
    pub epoch_loss: Vec<f64>,
    /// Fraction of samples classified correctly during each epoch.
    pub epoch_accuracy: Vec<f64>,
    /// Gradient steps taken.
    pub steps: usize,
}

fn check_lr(lr: f64) -> Result<(), NnError> {
    if lr.is_finite() && lr >= 0.0 {
        Ok(())
    } else {
        Err(NnError::InvalidLearningRate(lr))
    }
}

/// `params - lr * grads`.
pub fn sgd_step<T: Scalar>(params: &ParamSet<T>, grads: &ParamSet<T>, lr: f64) -> Result<ParamSet<T>, NnError> {
    let mut out = params.clone();
    sgd_update(&mut out, grads, lr)?;
    Ok(out)
}

pub(crate) fn sgd_update<T: Scalar>(params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) -> Result<(), NnError> {
    check_lr(lr)?;
    if !params.same_structure(grads) {
        return Err(NnError::StructureMismatch);
    }
    if lr == 0.0 {
        return Ok(());
    }
    params.axpy(T::of_f64(-lr), grads)
}

/// Gathers images and labels for `indices` into one batch.
pub fn gather_batch(data: &Dataset, indices: &[usize]) -> (Tensor<f32>, Vec<u8>) {
    let n = data.image_len();
    let mut pixels = Vec::with_capacity(indices.len() * n);
    for &i in indices {
        pixels.extend_from_slice(data.image(i));
    }
    let mut shape = data.images.shape().to_vec();
    shape[0] = indices.len();
    let labels = indices.iter().map(|&i| data.labels[i]).collect();
    (Tensor::from_vec(&shape, pixels).unwrap(), labels)
}

/// Mini-batch SGD over `indices` of `data`, reshuffled every epoch.
pub fn train_local(
    arch: &ModelArch,
    params: &ParamSet<f32>,
    data: &Dataset,
    indices: &[usize],
    opts: &TrainOptions,
    seed: u64,
) -> Result<(ParamSet<f32>, TrainReport), NnError> {
    if indices.is_empty() {
        return Err(NnError::EmptyShard);
    }
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(NnError::InvalidOptions(format!(
            "epochs ({}) and batch_size ({}) must be at least 1",
            opts.epochs, opts.batch_size
        )));
    }
    check_lr(opts.lr)?;
    let mut rng = seed::rng(seed, &[seed::LOCAL_TRAIN]);
    let mut params = params.clone();
    let mut order = indices.to_vec();
    let mut report = TrainReport::default();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(opts.batch_size) {
            let (batch, labels) = gather_batch(data, chunk);
            let (loss, grads, logits) = loss_grad_logits(arch, &params, &batch, &labels)?;
            if !loss.is_finite() {
                return Err(NnError::NonFinite);
            }
            loss_sum += loss * chunk.len() as f64;
            let logits = Tensor::from_vec(&[chunk.len(), logits.len() / chunk.len()], logits).unwrap();
            correct += argmax_rows(&logits).iter().zip(&labels).filter(|(p, l)| p == l).count();
            sgd_update(&mut params, &grads, opts.lr)?;
            report.steps += 1;
        }
        report.epoch_loss.push(loss_sum / order.len() as f64);
        report.epoch_accuracy.push(correct as f64 / order.len() as f64);
    }
    if !params.all_finite() {
        return Err(NnError::NonFinite);
    }
    Ok((params, report))
}
