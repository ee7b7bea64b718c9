use super::arch::{ActShape, Layer, ModelArch};
use super::layers::{self, ConvGeom};
use super::params::{ParamEntry, ParamSet};
use super::NnError;
use crate::dataset::NUM_CLASSES;
use crate::tensor::{Scalar, Tensor};

/// What a layer keeps from the forward pass for its backward pass.
enum Saved<T> {
    Conv { cols: Vec<T>, geom: ConvGeom },
    Pool { argmax: Vec<u32>, input_len: usize },
    Relu { input: Vec<T> },
    Dense { input: Vec<T>, n: usize },
    Pass,
}

fn check_inputs<T: Scalar>(arch: &ModelArch, params: &ParamSet<T>, batch: &Tensor<T>) -> Result<usize, NnError> {
    if !params.matches_arch(arch) {
        return Err(NnError::StructureMismatch);
    }
    let b = batch.shape().first().copied().unwrap_or(0);
    let expected = arch.input().batched(b);
    if batch.shape() != expected.as_slice() {
        return Err(NnError::ShapeMismatch {
            expected,
            found: batch.shape().to_vec(),
        });
    }
    Ok(b)
}

/// Applies layer `i` to a batch activation.
fn apply<T: Scalar>(
    arch: &ModelArch,
    i: usize,
    entry: Option<&ParamEntry<T>>,
    x: Vec<T>,
    batch: usize,
    keep: bool,
) -> (Vec<T>, Saved<T>) {
    match (arch.layers()[i], arch.input_shape(i)) {
        (Layer::Conv { filters }, ActShape::Spatial { h, w, c }) => {
            let p = entry.expect("conv has parameters");
            let geom = ConvGeom { batch, h, w, c, filters };
            let (out, cols) = layers::conv_forward(&x, p.weight.data(), p.bias.data(), &geom);
            let saved = if keep { Saved::Conv { cols, geom } } else { Saved::Pass };
            (out, saved)
        }
        (Layer::MaxPool, ActShape::Spatial { h, w, c }) => {
            let (out, argmax) = layers::maxpool_forward(&x, batch, h, w, c);
            let saved = if keep {
                Saved::Pool {
                    argmax,
                    input_len: x.len(),
                }
            } else {
                Saved::Pass
            };
            (out, saved)
        }
        (Layer::Relu, _) => {
            let out = x.iter().map(|&v| layers::relu(v)).collect();
            (out, if keep { Saved::Relu { input: x } } else { Saved::Pass })
        }
        (Layer::Dense { units }, ActShape::Flat(n)) => {
            let p = entry.expect("dense has parameters");
            let out = layers::dense_forward(&x, p.weight.data(), p.bias.data(), batch, n, units);
            (out, if keep { Saved::Dense { input: x, n } } else { Saved::Pass })
        }
        (Layer::Flatten | Layer::SoftmaxOutput, _) => (x, Saved::Pass),
        (layer, shape) => unreachable!("validated arch cannot apply {layer:?} to {shape:?}"),
    }
}

/// Parameter entry index of each layer, if it has one.
fn param_slots(arch: &ModelArch) -> Vec<Option<usize>> {
    let mut slots = vec![None; arch.layers().len()];
    for (k, spec) in arch.param_specs().iter().enumerate() {
        slots[spec.layer] = Some(k);
    }
    slots
}

fn run<T: Scalar>(
    arch: &ModelArch,
    params: &ParamSet<T>,
    start: usize,
    x: Vec<T>,
    batch: usize,
    keep: bool,
) -> (Vec<T>, Vec<Saved<T>>) {
    let slots = param_slots(arch);
    let mut saved = Vec::new();
    let mut act = x;
    for (i, slot) in slots.iter().enumerate().skip(start) {
        let entry = slot.map(|k| &params.entries()[k]);
        let (out, s) = apply(arch, i, entry, act, batch, keep);
        act = out;
        if keep {
            saved.push(s);
        }
    }
    (act, saved)
}

/// Logits of shape `(B, 10)` for a batch of shape `(B, 28, 28, 1)`.
pub fn forward<T: Scalar>(arch: &ModelArch, params: &ParamSet<T>, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let b = check_inputs(arch, params, batch)?;
    let (logits, _) = run(arch, params, 0, batch.data().to_vec(), b, false);
    Ok(Tensor::from_vec(&[b, NUM_CLASSES], logits).expect("arch ends in 10 units"))
}

/// The input followed by every layer's output, each shaped `(B, ...)`.
pub fn activations<T: Scalar>(arch: &ModelArch, params: &ParamSet<T>, batch: &Tensor<T>) -> Result<Vec<Tensor<T>>, NnError> {
    let b = check_inputs(arch, params, batch)?;
    let slots = param_slots(arch);
    let mut acts = vec![batch.clone()];
    for (i, slot) in slots.iter().enumerate() {
        let entry = slot.map(|k| &params.entries()[k]);
        let (out, _) = apply(arch, i, entry, acts[i].data().to_vec(), b, false);
        acts.push(Tensor::from_vec(&arch.shapes()[i].batched(b), out).unwrap());
    }
    Ok(acts)
}

/// Resumes the forward pass at layer `start` from that layer's input.
pub fn forward_from<T: Scalar>(
    arch: &ModelArch,
    params: &ParamSet<T>,
    start: usize,
    input: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if !params.matches_arch(arch) {
        return Err(NnError::StructureMismatch);
    }
    let b = input.shape().first().copied().unwrap_or(0);
    let expected = arch.input_shape(start).batched(b);
    if input.shape() != expected.as_slice() {
        return Err(NnError::ShapeMismatch {
            expected,
            found: input.shape().to_vec(),
        });
    }
    let (logits, _) = run(arch, params, start, input.data().to_vec(), b, false);
    Ok(Tensor::from_vec(&[b, NUM_CLASSES], logits).unwrap())
}

/// Row-wise softmax of `(B, K)` logits.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        out.extend(softmax_row(row).into_iter().map(T::of_f64));
    }
    Tensor::from_vec(logits.shape(), out).unwrap()
}

fn softmax_row<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
fn cross_entropy<T: Scalar>(logits: &[T], labels: &[u8]) -> (f64, Vec<T>) {
    let b = labels.len();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.chunks_exact(NUM_CLASSES).zip(labels) {
        let probs = softmax_row(row);
        loss -= probs[label as usize].max(f64::MIN_POSITIVE).ln();
        for (k, p) in probs.into_iter().enumerate() {
            let target = if k == label as usize { 1.0 } else { 0.0 };
            grad.push(T::of_f64((p - target) / b as f64));
        }
    }
    (loss / b as f64, grad)
}

/// Mean cross-entropy loss, parameter gradients, and the batch logits.
pub(crate) fn loss_grad_logits<T: Scalar>(
    arch: &ModelArch,
    params: &ParamSet<T>,
    batch: &Tensor<T>,
    labels: &[u8],
) -> Result<(f64, ParamSet<T>, Vec<T>), NnError> {
    let b = check_inputs(arch, params, batch)?;
    if labels.len() != b {
        return Err(NnError::ShapeMismatch {
            expected: vec![b],
            found: vec![labels.len()],
        });
    }
    if b == 0 {
        return Err(NnError::EmptyBatch);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(NnError::LabelOutOfRange(bad));
    }
    let (logits, saved) = run(arch, params, 0, batch.data().to_vec(), b, true);
    let (loss, mut grad) = cross_entropy(&logits, labels);

    let slots = param_slots(arch);
    let mut grads = ParamSet::zeros(arch);
    for (i, saved) in saved.iter().enumerate().rev() {
        // the first layer's input gradient is never needed
        let need_input = i > 0;
        grad = match saved {
            Saved::Conv { cols, geom } => {
                let k = slots[i].unwrap();
                let w = params.entries()[k].weight.data();
                let (dw, db, dx) = layers::conv_backward(&grad, cols, w, geom, need_input);
                let e = &mut grads.entries_mut()[k];
                e.weight.data_mut().copy_from_slice(&dw);
                e.bias.data_mut().copy_from_slice(&db);
                match dx {
                    Some(dx) => dx,
                    None => break,
                }
            }
            Saved::Dense { input, n } => {
                let k = slots[i].unwrap();
                let w = params.entries()[k].weight.data();
                let units = w.len() / n;
                let (dw, db, dx) = layers::dense_backward(&grad, input, w, b, *n, units, need_input);
                let e = &mut grads.entries_mut()[k];
                e.weight.data_mut().copy_from_slice(&dw);
                e.bias.data_mut().copy_from_slice(&db);
                match dx {
                    Some(dx) => dx,
                    None => break,
                }
            }
            Saved::Pool { argmax, input_len } => layers::maxpool_backward(&grad, argmax, *input_len),
            Saved::Relu { input } => layers::relu_backward(&grad, input),
            Saved::Pass => grad,
        };
    }
    Ok((loss, grads, logits))
}

/// Mean softmax cross-entropy over the batch and its parameter gradients.
pub fn loss_and_grad<T: Scalar>(
    arch: &ModelArch,
    params: &ParamSet<T>,
    batch: &Tensor<T>,
    labels: &[u8],
) -> Result<(f64, ParamSet<T>), NnError> {
    loss_grad_logits(arch, params, batch, labels).map(|(loss, grads, _)| (loss, grads))
}

/// Mean cross-entropy of logits against labels (no gradient).
pub fn mean_loss<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> f64 {
    cross_entropy(logits.data(), labels).0
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Class predictions for each row of `(B, 10)` logits.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<u8> {
    logits
        .data()
        .chunks_exact(NUM_CLASSES)
        .map(|row| argmax(row) as u8)
        .collect()
}

const PREDICT_CHUNK: usize = 256;

/// Predicted class for every image in `(N, 28, 28, 1)`.
pub fn predict<T: Scalar>(arch: &ModelArch, params: &ParamSet<T>, images: &Tensor<T>) -> Result<Vec<u8>, NnError> {
    let n = check_inputs(arch, params, images)?;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let chunk = images.slice_rows(start, (start + PREDICT_CHUNK).min(n));
        out.extend(argmax_rows(&forward(arch, params, &chunk)?));
    }
    Ok(out)
}
