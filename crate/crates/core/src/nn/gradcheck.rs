//! Central finite-difference gradient checking in 64-bit.

use super::{Network, ParamSet, Part};
use crate::error::Result;
use crate::par::Exec;

/// Denominator floor for the relative error, so parameters whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_layer: String,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients of the mean cross-entropy against central
/// differences with step `h`, for every entry of every trainable tensor.
pub fn check_network(
    net: &Network,
    params: &ParamSet<f64>,
    part: Part,
    inputs: &[Vec<f64>],
    labels: &[usize],
    h: f64,
) -> Result<GradCheckReport> {
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let (_, grads) = net.loss_and_grads(params, part, &refs, labels, Exec::Sequential)?;
    let loss = |p: &ParamSet<f64>| -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in refs.iter().zip(labels) {
            let logits = net.forward_sample(p, part, x)?;
            let probs = super::softmax(&logits);
            total -= probs[y].ln();
        }
        Ok(total / refs.len() as f64)
    };
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for i in 0..params.len() {
        let Some(g) = grads.get(i) else { continue };
        for j in 0..g.len() {
            let orig = probe.layer(i).tensor.data()[j];
            probe.layer_mut(i).tensor.data_mut()[j] = orig + h;
            let lp = loss(&probe)?;
            probe.layer_mut(i).tensor.data_mut()[j] = orig - h;
            let lm = loss(&probe)?;
            probe.layer_mut(i).tensor.data_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let err = relative_error(g[j], numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_layer = params.layer(i).name.clone();
            }
        }
    }
    Ok(report)
}

/// Same check for the gradient with respect to the input of `part`, using a
/// random linear read-out `Σ r·y` of the outputs as the scalar objective.
pub fn check_input_gradient(
    net: &Network,
    params: &ParamSet<f64>,
    part: Part,
    input: &[f64],
    readout: &[f64],
    h: f64,
) -> Result<f64> {
    use super::graph::{backprop, run, Act};
    let (c, hh, w) = net.input_shape(part);
    let nodes = net.nodes(part);
    let mut tr = Vec::new();
    let y = run(nodes, params, Act::new(c, hh, w, input.to_vec())?, Some(&mut tr))?;
    let mut grads = super::Grads::zeros_for(params);
    let gy = Act::new(y.c, y.h, y.w, readout.to_vec())?;
    let gx = backprop(nodes, params, &tr, gy, &mut grads, true)?.expect("input gradient requested");
    let objective = |x: &[f64]| -> Result<f64> {
        let y = net.forward_sample(params, part, x)?;
        Ok(y.iter().zip(readout).map(|(a, b)| a * b).sum())
    };
    let mut worst = 0.0f64;
    let mut x = input.to_vec();
    for j in 0..x.len() {
        let orig = x[j];
        x[j] = orig + h;
        let lp = objective(&x)?;
        x[j] = orig - h;
        let lm = objective(&x)?;
        x[j] = orig;
        worst = worst.max(relative_error(gx.data[j], (lp - lm) / (2.0 * h)));
    }
    Ok(worst)
}
