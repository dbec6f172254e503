//! Central finite-difference checks of the analytic backward pass.

use super::graph::{backward, forward_train, NetworkSpec};
use super::layers::{mse_backward, mse_loss};
use super::params::ParamStore;
use super::Tensor;
use crate::error::Result;
use crate::rng;

pub const STEP: f64 = 1e-5;
/// Gradient scale below which differences are compared absolutely.
pub const FLOOR: f64 = 1e-6;

/// Worst disagreement found between analytic and numeric derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Name of the entry with the largest error, e.g. `"3.weight[17]"`.
    pub worst: String,
    pub checked: usize,
    /// Entries left out because the difference stencil changed a ReLU or
    /// max-pool branch, where the loss has a kink and central differences do
    /// not estimate the derivative.
    pub skipped_kinks: usize,
}

impl GradReport {
    fn new() -> Self {
        GradReport { max_rel_error: 0.0, worst: String::new(), checked: 0, skipped_kinks: 0 }
    }

    /// `scale` is the largest analytic magnitude in the checked tensor, so
    /// errors are normwise relative per tensor.
    fn record(&mut self, name: &dyn Fn() -> String, analytic: f64, numeric: f64, scale: f64) {
        let err = (analytic - numeric).abs() / scale.max(analytic.abs()).max(numeric.abs()).max(FLOOR);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = err.max(self.max_rel_error);
            self.worst = name();
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Check every parameter and input derivative of `L = <net(x), r>` for a
/// seeded random projection `r`, running batch norm in training mode.
pub fn check_network(net: &NetworkSpec, params: &ParamStore<f64>, x: &Tensor<f64>, seed: u64) -> Result<GradReport> {
    let cache = forward_train(net, &mut params.clone(), x)?;
    let pattern = cache.switch_pattern(net);
    // loss at a perturbed point, or None when a branch flipped
    let loss = |p: &ParamStore<f64>, x: &Tensor<f64>, r: &Tensor<f64>| -> Result<Option<f64>> {
        let mut p = p.clone();
        let c = forward_train(net, &mut p, x)?;
        Ok((c.switch_pattern(net) == pattern).then(|| dot(c.output(), r)))
    };
    let r = random_tensor(cache.output().shape(), seed);
    let (grads, dx) = backward(net, params, cache, &r, true)?;
    let dx = dx.expect("input gradient requested");

    let mut report = GradReport::new();
    let mut compare = |name: &dyn Fn() -> String, analytic: f64, scale: f64, plus: Option<f64>, minus: Option<f64>| match (plus, minus) {
        (Some(lp), Some(lm)) => report.record(name, analytic, (lp - lm) / (2.0 * STEP), scale),
        _ => report.skipped_kinks += 1,
    };
    for (name, p) in &params.params {
        let analytic = grads.get(name).cloned().unwrap_or_else(|| vec![0.0; p.data.len()]);
        let scale = max_abs(&analytic);
        for (k, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.params.get_mut(name).expect("present").data[k] += STEP;
            let mut minus = params.clone();
            minus.params.get_mut(name).expect("present").data[k] -= STEP;
            compare(&|| format!("{name}[{k}]"), a, scale, loss(&plus, x, &r)?, loss(&minus, x, &r)?);
        }
    }
    let scale = max_abs(dx.data());
    for k in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[k] += STEP;
        let mut minus = x.clone();
        minus.data_mut()[k] -= STEP;
        compare(&|| format!("input[{k}]"), dx.data()[k], scale, loss(params, &plus, &r)?, loss(params, &minus, &r)?);
    }
    Ok(report)
}

/// Check the mean-squared-error gradient with respect to the prediction.
/// The loss is quadratic, so central differences are exact up to rounding
/// for any step; a larger step keeps the rounding error small.
pub fn check_mse(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<GradReport> {
    const STEP: f64 = 1e-2;
    let analytic = mse_backward(pred, target);
    let scale = max_abs(analytic.data());
    let mut report = GradReport::new();
    for k in 0..pred.len() {
        let mut plus = pred.clone();
        plus.data_mut()[k] += STEP;
        let mut minus = pred.clone();
        minus.data_mut()[k] -= STEP;
        let numeric = (mse_loss(&plus, target)? - mse_loss(&minus, target)?) / (2.0 * STEP);
        report.record(&|| format!("pred[{k}]"), analytic.data()[k], numeric, scale);
    }
    Ok(report)
}

/// Seeded standard-normal tensor.
pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut g = rng::seeded(seed);
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng::normal(&mut g)).collect()).expect("length matches shape")
}
