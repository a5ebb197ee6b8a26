use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::model_backward;
use super::forward::{check_schema, forward_trace};
use super::view::GraphView;
use super::{Batch, HgtError, ModelConfig, ModelParams};
use crate::graph::NodeRef;
use crate::math::{abs, pow, sqrt};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
const FD_STEP: f64 = 1e-5;

/// Mean squared error over unmasked (node, component) pairs.
pub fn mse_loss(pred: &BTreeMap<NodeRef, Vec<f64>>, batch: &Batch) -> Result<f64, HgtError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, t) in batch.active_targets() {
        let p = pred.get(v).ok_or(HgtError::MissingPrediction(*v))?;
        if p.len() != t.len() {
            return Err(HgtError::ShapeMismatch { what: "prediction", expected: t.len(), got: p.len() });
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += t.len();
    }
    if count == 0 {
        return Err(HgtError::EmptyTargets);
    }
    Ok(sum / count as f64)
}

/// Forward and backward on one batch. Adds `weight · ∂(Σ squared error)/∂θ`
/// to `grad` and returns `(Σ squared error, component count)`.
fn accumulate(model: &ModelParams, batch: &Batch, weight: f64, grad: &mut [f64]) -> Result<(f64, usize), HgtError> {
    check_schema(model, &batch.graph)?;
    let view = GraphView::new(&batch.graph);
    let tr = forward_trace(model, &view)?;
    let od = model.config.output_dim;
    let row_of: BTreeMap<NodeRef, usize> =
        tr.readout.iter().enumerate().map(|(r, &v)| (view.refs[v], r)).collect();
    let mut d_pred = vec![0.0; tr.preds.len()];
    let mut sum = 0.0;
    let mut count = 0;
    for (v, t) in batch.active_targets() {
        let r = *row_of.get(v).ok_or(HgtError::InvalidTarget(*v))?;
        if t.len() != od {
            return Err(HgtError::ShapeMismatch { what: "target", expected: od, got: t.len() });
        }
        for j in 0..od {
            let diff = tr.preds[r * od + j] - t[j];
            sum += diff * diff;
            d_pred[r * od + j] = 2.0 * diff * weight;
        }
        count += od;
    }
    if count > 0 && weight != 0.0 {
        model_backward(model, &view, &tr, &d_pred, grad);
    }
    Ok((sum, count))
}

/// MSE of one batch and the gradient of `scale · MSE` in layout order.
pub fn loss_and_grad(model: &ModelParams, batch: &Batch, scale: f64) -> Result<(f64, Vec<f64>), HgtError> {
    let count = batch.active_count();
    if count == 0 {
        return Err(HgtError::EmptyTargets);
    }
    let mut grad = vec![0.0; model.len()];
    let (sum, _) = accumulate(model, batch, scale / count as f64, &mut grad)?;
    Ok((sum / count as f64, grad))
}

/// Loss over the whole dataset (global mean) and its gradient.
fn dataset_loss_and_grad(model: &ModelParams, data: &[Batch], total: usize, grad: &mut [f64]) -> Result<f64, HgtError> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let w = 1.0 / total as f64;
    let mut sum = 0.0;
    for b in data {
        sum += accumulate(model, b, w, grad)?.0;
    }
    let loss = sum * w;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(HgtError::NonFinite("loss"));
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// dataset loss before each epoch's update
    pub losses: Vec<f64>,
}

/// Trains fresh parameters with full-batch Adam.
pub fn train(dataset: &[Batch], config: ModelConfig) -> Result<TrainOutput, HgtError> {
    let first = dataset.first().ok_or(HgtError::EmptyDataset)?;
    let schema = Arc::clone(first.graph.schema_arc());
    let epochs = config.epochs;
    let mut params = ModelParams::new(config, schema)?;
    let losses = fine_tune(&mut params, dataset, epochs)?;
    Ok(TrainOutput { params, losses })
}

/// Continues training existing parameters for `epochs` full-batch Adam
/// steps with fresh optimizer state, returning the loss curve.
pub fn fine_tune(params: &mut ModelParams, dataset: &[Batch], epochs: usize) -> Result<Vec<f64>, HgtError> {
    let total: usize = dataset.iter().map(Batch::active_count).sum();
    if total == 0 {
        return Err(HgtError::EmptyDataset);
    }
    let lr = params.config.learning_rate;
    let n = params.len();
    let mut grad = vec![0.0; n];
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        losses.push(dataset_loss_and_grad(params, dataset, total, &mut grad)?);
        if lr == 0.0 {
            continue;
        }
        let c1 = 1.0 - pow(BETA1, epoch as f64);
        let c2 = 1.0 - pow(BETA2, epoch as f64);
        for i in 0..n {
            let g = grad[i];
            m1[i] = BETA1 * m1[i] + (1.0 - BETA1) * g;
            m2[i] = BETA2 * m2[i] + (1.0 - BETA2) * g * g;
            let step = lr * (m1[i] / c1) / (sqrt(m2[i] / c2) + EPS);
            params.values[i] -= step;
        }
    }
    Ok(losses)
}

/// Largest relative disagreement between the analytic gradient and a
/// central finite difference over `n_probes` random parameters, drawn from
/// the model's config seed. Magnitudes below 1e-6 are compared absolutely,
/// since the difference quotient is dominated by rounding there.
pub fn grad_check(model: &ModelParams, batch: &Batch, n_probes: usize) -> Result<f64, HgtError> {
    let (_, grad) = loss_and_grad(model, batch, 1.0)?;
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x9e37_79b9);
    let mut worst: f64 = 0.0;
    for _ in 0..n_probes.max(1) {
        let i = rng.gen_range(0..model.len());
        let x = model.values[i];
        probe.values[i] = x + FD_STEP;
        let up = mse_at(&probe, batch)?;
        probe.values[i] = x - FD_STEP;
        let down = mse_at(&probe, batch)?;
        probe.values[i] = x;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grad[i];
        let denom = abs(analytic).max(abs(numeric)).max(1e-6);
        worst = worst.max(abs(analytic - numeric) / denom);
    }
    Ok(worst)
}

fn mse_at(model: &ModelParams, batch: &Batch) -> Result<f64, HgtError> {
    let count = batch.active_count();
    let mut sink = [0.0; 0];
    let (sum, _) = accumulate(model, batch, 0.0, &mut sink)?;
    Ok(sum / count as f64)
}
