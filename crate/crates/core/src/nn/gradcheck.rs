//! Central finite-difference gradient checks against a softmax cross-entropy head.
//!
//! Analytic gradients come from the `f32` backward pass. Perturbed losses are
//! evaluated by running the same kernels in `f64`: with `f32` forward passes
//! the rounding noise of the loss (around 1e-7) divided by the 2e-3 step
//! swamps gradients below roughly 1e-3.

use super::error::{NnError, Result};
use super::loss::softmax_cross_entropy;
use super::params::ParameterStore;
use super::sequential::Sequential;
use super::element::Element;
use super::tensor::Tensor;

pub const GRAD_CHECK_EPSILON: f32 = 1e-3;
pub const MAX_CHECKED_PARAMS: usize = 10_000;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn loss_of<T: Element>(model: &Sequential, params: &ParameterStore<T>, input: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let logits = model.infer(params, input)?;
    logits.check_finite("logits")?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

fn analytic(model: &Sequential, params: &ParameterStore, input: &Tensor, labels: &[usize]) -> Result<(ParameterStore, Tensor)> {
    let mut store = params.clone();
    store.zero_grad();
    let (logits, cache) = model.forward(&store, input)?;
    logits.check_finite("logits")?;
    let (_, grad) = softmax_cross_entropy(&logits, labels)?;
    let grad_input = model.backward(&mut store, &cache, &grad)?;
    for p in store.iter() {
        p.grad.check_finite(&format!("gradient of {}", p.name))?;
    }
    Ok((store, grad_input))
}

fn central_difference(orig: f64, mut eval: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let eps = GRAD_CHECK_EPSILON as f64;
    let (up, down) = (orig + eps, orig - eps);
    let loss_up = eval(up)?;
    let loss_down = eval(down)?;
    if !(loss_up.is_finite() && loss_down.is_finite()) {
        return Err(NnError::NonFinite("perturbed loss".into()));
    }
    Ok((loss_up - loss_down) / (up - down))
}

/// Maximum relative error between analytic and numeric parameter gradients of
/// `softmax_cross_entropy(model(input), labels)`. A model without parameters
/// yields 0.
pub fn grad_check(model: &Sequential, params: &ParameterStore, input: &Tensor, labels: &[usize]) -> Result<f64> {
    if params.scalar_count() > MAX_CHECKED_PARAMS {
        return Err(NnError::InvalidConfig(format!(
            "grad_check limited to {MAX_CHECKED_PARAMS} parameters, model has {}",
            params.scalar_count()
        )));
    }
    let (with_grads, _) = analytic(model, params, input, labels)?;
    let mut probe: ParameterStore<f64> = params.cast();
    let input64: Tensor<f64> = input.cast();
    let mut worst = 0.0f64;
    for pi in 0..probe.len() {
        for i in 0..probe.params()[pi].value.len() {
            let a = with_grads.params()[pi].grad.data()[i] as f64;
            let orig = params.params()[pi].value.data()[i] as f64;
            let n = central_difference(orig, |v| {
                probe.params_mut()[pi].value.data_mut()[i] = v;
                loss_of(model, &probe, &input64, labels)
            })?;
            probe.params_mut()[pi].value.data_mut()[i] = orig;
            worst = worst.max(relative_error(a, n));
        }
    }
    Ok(worst)
}

/// Same check against the gradient with respect to the model input.
pub fn grad_check_input(model: &Sequential, params: &ParameterStore, input: &Tensor, labels: &[usize]) -> Result<f64> {
    if input.len() > MAX_CHECKED_PARAMS {
        return Err(NnError::InvalidConfig(format!(
            "grad_check_input limited to {MAX_CHECKED_PARAMS} inputs, got {}",
            input.len()
        )));
    }
    let (_, grad_input) = analytic(model, params, input, labels)?;
    let params64: ParameterStore<f64> = params.cast();
    let input64: Tensor<f64> = input.cast();
    let mut probe = input64.clone();
    let mut worst = 0.0f64;
    for i in 0..input.len() {
        let a = grad_input.data()[i] as f64;
        let n = central_difference(input64.data()[i], |v| {
            probe.data_mut()[i] = v;
            loss_of(model, &params64, &probe, labels)
        })?;
        probe.data_mut()[i] = input64.data()[i];
        worst = worst.max(relative_error(a, n));
    }
    Ok(worst)
}
