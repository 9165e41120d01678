//! Inference latency, memory footprint and the two-stage screening cascade.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::models::{predict_clip, ClipPrediction, FrameClassifier, Model};
use crate::nn::{Network, Node, ParamSet, Part, Scalar};
use crate::par::Exec;

/// Bytes per stored value.
pub const VALUE_BYTES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub model: String,
    pub frames: usize,
    pub reps: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub param_bytes: usize,
    pub peak_activation_bytes: usize,
    /// Frames per second at the mean latency (energy proxy).
    pub throughput_fps: f64,
}

/// Peak number of activation values alive during one single-sample forward
/// pass of `nodes`, together with the output shape.
fn walk<S: Scalar>(nodes: &[Node], params: &ParamSet<S>, shape: (usize, usize, usize)) -> Result<((usize, usize, usize), usize)> {
    let size = |s: (usize, usize, usize)| s.0 * s.1 * s.2;
    let mut cur = shape;
    let mut peak = size(cur);
    for node in nodes {
        let (next, node_peak) = match node {
            Node::Conv { weight, stride, pad, .. } => {
                let d = params.layer(*weight).tensor.dims();
                let (k, s) = (d[2], (*stride).max(1));
                if cur.1 + 2 * pad < k || cur.2 + 2 * pad < k {
                    return Err(Error::Shape(format!("kernel {k} larger than padded {}x{} input", cur.1, cur.2)));
                }
                let out = (d[0], (cur.1 + 2 * pad - k) / s + 1, (cur.2 + 2 * pad - k) / s + 1);
                (out, size(cur) + size(out))
            }
            Node::Dense { weight, .. } => {
                let out = (params.layer(*weight).tensor.dims()[0], 1, 1);
                (out, size(cur) + size(out))
            }
            Node::Affine { .. } | Node::Relu => (cur, 2 * size(cur)),
            Node::AvgPool { size: k } => {
                let out = (cur.0, cur.1 / k, cur.2 / k);
                (out, size(cur) + size(out))
            }
            Node::GlobalAvgPool => ((cur.0, 1, 1), size(cur) + cur.0),
            Node::Residual { body, shortcut } => {
                // The input stays alive for the shortcut while the body runs.
                let (a, pb) = walk(body, params, cur)?;
                let (_, ps) = walk(shortcut, params, cur)?;
                (a, (pb + size(cur)).max(size(a) + ps).max(3 * size(a)))
            }
            Node::Concat { branches } => {
                let mut held = 0;
                let mut p = 0;
                let (mut c, mut hw) = (0, (0, 0));
                for br in branches {
                    let (o, pb) = walk(br, params, cur)?;
                    p = p.max(held + size(cur) + pb);
                    held += size(o);
                    c += o.0;
                    hw = (o.1, o.2);
                }
                let out = (c, hw.0, hw.1);
                (out, p.max(held + size(out) + size(cur)))
            }
        };
        peak = peak.max(node_peak);
        cur = next;
    }
    Ok((cur, peak))
}

/// Analytic peak activation memory (bytes) of one inference pass.
pub fn peak_activation_bytes<S: Scalar>(net: &Network, params: &ParamSet<S>) -> Result<usize> {
    Ok(walk(net.nodes(Part::Full), params, net.input_shape)?.1 * VALUE_BYTES)
}

/// Value at quantile `q` of sorted data (nearest rank).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times single-frame forward passes on the calling thread: `warmup`
/// untimed passes, then every frame `reps` times.
pub fn bench_inference(model: &Model, frames: &[FeatureFrame], warmup: usize, reps: usize) -> Result<BenchResult> {
    if frames.is_empty() || warmup == 0 || reps == 0 {
        return Err(Error::Contract(format!("bench needs frames, warmup and reps ≥ 1 (got {}, {warmup}, {reps})", frames.len())));
    }
    for i in 0..warmup {
        model.net.forward_sample(&model.params, Part::Full, &frames[i % frames.len()].pixels)?;
    }
    let mut ms = Vec::with_capacity(frames.len() * reps);
    for _ in 0..reps {
        for f in frames {
            let t = Instant::now();
            let out = model.net.forward_sample(&model.params, Part::Full, &f.pixels)?;
            ms.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
    }
    let mean_ms = ms.iter().sum::<f64>() / ms.len() as f64;
    ms.sort_by(f64::total_cmp);
    Ok(BenchResult {
        model: model.spec.name.as_str().into(),
        frames: frames.len(),
        reps,
        mean_ms,
        median_ms: quantile(&ms, 0.5),
        p95_ms: quantile(&ms, 0.95),
        param_bytes: model.params.param_bytes(),
        peak_activation_bytes: peak_activation_bytes(&model.net, &model.params)?,
        throughput_fps: 1e3 / mean_ms,
    })
}

/// Wall time (s) of a batch-of-one loop over the first `n` frames (cycled).
pub fn loop_time(model: &Model, frames: &[FeatureFrame], n: usize) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Contract("no frames to time".into()));
    }
    let t = Instant::now();
    for i in 0..n {
        std::hint::black_box(model.net.forward_sample(&model.params, Part::Full, &frames[i % frames.len()].pixels)?);
    }
    Ok(t.elapsed().as_secs_f64())
}

/// Least-squares line through `(x, y)` points; returns (slope, intercept, R²).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    High,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeDecision {
    pub depression: bool,
    /// Present exactly when `depression` is true.
    pub severity: Option<Severity>,
    pub combined_vote: ClipPrediction,
    pub gender_vote: ClipPrediction,
    pub severity_vote: Option<ClipPrediction>,
}

/// Two-stage screening of one clip. Depression is flagged only when both the
/// combined and the gender-specific model vote positive; the severity model
/// then runs on the same frames, and only then.
pub fn cascade_infer(
    combined: &dyn FrameClassifier,
    gender: &dyn FrameClassifier,
    severity: &dyn FrameClassifier,
    frames: &[FeatureFrame],
    exec: Exec,
) -> Result<CascadeDecision> {
    if frames.is_empty() {
        return Err(Error::Contract("cascade needs at least one frame".into()));
    }
    let combined_vote = predict_clip(combined, frames, exec)?;
    let gender_vote = predict_clip(gender, frames, exec)?;
    let depression = combined_vote.label == 1 && gender_vote.label == 1;
    let severity_vote = if depression { Some(predict_clip(severity, frames, exec)?) } else { None };
    Ok(CascadeDecision {
        depression,
        severity: severity_vote.as_ref().map(|v| if v.label == 1 { Severity::High } else { Severity::Low }),
        combined_vote,
        gender_vote,
        severity_vote,
    })
}
