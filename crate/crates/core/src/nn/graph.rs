use serde::{Deserialize, Serialize};

use super::loss::sample_cross_entropy;
use super::{Grads, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Single-sample activation, channels × height × width, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Act<S> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Act<S> {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<S>) -> Result<Self> {
        if c * h * w != data.len() {
            return Err(Error::Shape(format!("activation {c}x{h}x{w} needs {} values, got {}", c * h * w, data.len())));
        }
        Ok(Self { c, h, w, data })
    }

    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![S::zero(); c * h * w] }
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// One operation in a network. Parameter fields index into the model's
/// [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Weight `[out, in/groups, kh, kw]`.
    Conv { weight: usize, bias: Option<usize>, stride: usize, pad: usize, groups: usize },
    /// Per-channel `scale · x + shift` (batch norm folded to inference form).
    Affine { scale: usize, shift: usize },
    Relu,
    /// Non-overlapping `size × size` average pooling (floor on the borders).
    AvgPool { size: usize },
    GlobalAvgPool,
    /// Weight `[out, in]` over the flattened input.
    Dense { weight: usize, bias: Option<usize> },
    /// `body(x) + shortcut(x)`; an empty shortcut is the identity.
    Residual { body: Vec<Node>, shortcut: Vec<Node> },
    /// Channel concatenation of branch outputs (equal spatial size).
    Concat { branches: Vec<Vec<Node>> },
}

impl Node {
    fn param_indices(&self, out: &mut Vec<usize>) {
        match self {
            Node::Conv { weight, bias, .. } | Node::Dense { weight, bias } => {
                out.push(*weight);
                out.extend(bias);
            }
            Node::Affine { scale, shift } => out.extend([*scale, *shift]),
            Node::Residual { body, shortcut } => body.iter().chain(shortcut).for_each(|n| n.param_indices(out)),
            Node::Concat { branches } => branches.iter().flatten().for_each(|n| n.param_indices(out)),
            Node::Relu | Node::AvgPool { .. } | Node::GlobalAvgPool => {}
        }
    }

    /// Weighted layers (conv/dense) along the longest path through this node.
    pub fn depth(&self) -> usize {
        match self {
            Node::Conv { .. } | Node::Dense { .. } => 1,
            Node::Residual { body, shortcut } => path_depth(body).max(path_depth(shortcut)),
            Node::Concat { branches } => branches.iter().map(|b| path_depth(b)).max().unwrap_or(0),
            _ => 0,
        }
    }
}

pub(crate) fn path_depth(nodes: &[Node]) -> usize {
    nodes.iter().map(Node::depth).sum()
}

fn any_trainable<S: Scalar>(nodes: &[Node], params: &ParamSet<S>) -> bool {
    let mut idx = Vec::new();
    nodes.iter().for_each(|n| n.param_indices(&mut idx));
    idx.into_iter().any(|i| params.layer(i).trainable)
}

/// Saved state needed by the backward pass of one node.
#[derive(Clone, Debug)]
pub(crate) enum Trace<S> {
    Input(Act<S>),
    Output(Act<S>),
    Shape(usize, usize, usize),
    Residual(Vec<Trace<S>>, Vec<Trace<S>>),
    Concat(Vec<Vec<Trace<S>>>, Vec<usize>),
}

fn tensor<'a, S: Scalar>(params: &'a ParamSet<S>, i: usize) -> &'a Tensor<S> {
    &params.layer(i).tensor
}

fn shape_err<S: Scalar>(params: &ParamSet<S>, i: usize, msg: String) -> Error {
    Error::Shape(format!("layer '{}': {msg}", params.layer(i).name))
}

/// Range of output positions `o` with `o·stride + k − pad` inside `[0, len)`.
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let (k, s, p, len) = (k as i64, stride as i64, pad as i64, len as i64);
    let lo = if p > k { (p - k + s - 1) / s } else { 0 };
    let hi = if len - 1 + p - k < 0 { -1 } else { (len - 1 + p - k) / s };
    let lo = lo.max(0) as usize;
    let hi = ((hi + 1).max(0) as usize).min(out_len);
    (lo, hi.max(lo))
}

fn conv_forward<S: Scalar>(
    params: &ParamSet<S>,
    x: &Act<S>,
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Act<S>> {
    let w = tensor(params, weight);
    let d = w.dims();
    if d.len() != 4 {
        return Err(shape_err(params, weight, format!("conv weight must be 4-d, got {d:?}")));
    }
    let (oc, icg, kh, kw) = (d[0], d[1], d[2], d[3]);
    if groups == 0 || oc % groups != 0 || icg * groups != x.c {
        return Err(shape_err(params, weight, format!("expects {} input channels, got {}", icg * groups, x.c)));
    }
    if x.h + 2 * pad < kh || x.w + 2 * pad < kw || stride == 0 {
        return Err(shape_err(params, weight, format!("input {}x{} too small for kernel {kh}x{kw}", x.h, x.w)));
    }
    let oh = (x.h + 2 * pad - kh) / stride + 1;
    let ow = (x.w + 2 * pad - kw) / stride + 1;
    let ocg = oc / groups;
    let mut out = Act::zeros(oc, oh, ow);
    let wd = w.data();
    let bd = bias.map(|b| tensor(params, b).data());
    if let Some(b) = bd {
        if b.len() != oc {
            return Err(shape_err(params, bias.unwrap(), format!("bias length {} != {oc}", b.len())));
        }
    }
    for o in 0..oc {
        let g = o / ocg;
        let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        if let Some(b) = bd {
            plane.iter_mut().for_each(|v| *v = b[o]);
        }
        for ci in 0..icg {
            let ic = g * icg + ci;
            let inp = &x.data[ic * x.h * x.w..(ic + 1) * x.h * x.w];
            for ky in 0..kh {
                let (oy0, oy1) = valid_range(oh, x.h, ky, stride, pad);
                for kx in 0..kw {
                    let (ox0, ox1) = valid_range(ow, x.w, kx, stride, pad);
                    let wv = wd[((o * icg + ci) * kh + ky) * kw + kx];
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - pad;
                        let row_in = &inp[iy * x.w..(iy + 1) * x.w];
                        let row_out = &mut plane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let off = ox0 + kx - pad;
                            for (o_v, &i_v) in row_out[ox0..ox1].iter_mut().zip(&row_in[off..off + (ox1 - ox0)]) {
                                *o_v += wv * i_v;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                row_out[ox] += wv * row_in[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<S: Scalar>(
    params: &ParamSet<S>,
    x: &Act<S>,
    go: &Act<S>,
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    pad: usize,
    groups: usize,
    grads: &mut Grads<S>,
    need_input: bool,
) -> Option<Act<S>> {
    let w = tensor(params, weight);
    let d = w.dims();
    let (oc, icg, kh, kw) = (d[0], d[1], d[2], d[3]);
    let ocg = oc / groups;
    let (oh, ow) = (go.h, go.w);
    let wd = w.data();
    if let Some(b) = bias {
        if let Some(gb) = grads.get_mut(b) {
            for o in 0..oc {
                gb[o] += go.data[o * oh * ow..(o + 1) * oh * ow].iter().copied().sum::<S>();
            }
        }
    }
    if let Some(gw) = grads.get_mut(weight) {
        for o in 0..oc {
            let g = o / ocg;
            let gplane = &go.data[o * oh * ow..(o + 1) * oh * ow];
            for ci in 0..icg {
                let ic = g * icg + ci;
                let inp = &x.data[ic * x.h * x.w..(ic + 1) * x.h * x.w];
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(oh, x.h, ky, stride, pad);
                    for kx in 0..kw {
                        let (ox0, ox1) = valid_range(ow, x.w, kx, stride, pad);
                        let mut acc = S::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let row_in = &inp[iy * x.w..(iy + 1) * x.w];
                            let row_g = &gplane[oy * ow..(oy + 1) * ow];
                            for ox in ox0..ox1 {
                                acc += row_g[ox] * row_in[ox * stride + kx - pad];
                            }
                        }
                        gw[((o * icg + ci) * kh + ky) * kw + kx] += acc;
                    }
                }
            }
        }
    }
    if !need_input {
        return None;
    }
    let mut gx = Act::zeros(x.c, x.h, x.w);
    for o in 0..oc {
        let g = o / ocg;
        let gplane = &go.data[o * oh * ow..(o + 1) * oh * ow];
        for ci in 0..icg {
            let ic = g * icg + ci;
            let gin = &mut gx.data[ic * x.h * x.w..(ic + 1) * x.h * x.w];
            for ky in 0..kh {
                let (oy0, oy1) = valid_range(oh, x.h, ky, stride, pad);
                for kx in 0..kw {
                    let (ox0, ox1) = valid_range(ow, x.w, kx, stride, pad);
                    let wv = wd[((o * icg + ci) * kh + ky) * kw + kx];
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - pad;
                        let row_g = &gplane[oy * ow..(oy + 1) * ow];
                        let row_in = &mut gin[iy * x.w..(iy + 1) * x.w];
                        for ox in ox0..ox1 {
                            row_in[ox * stride + kx - pad] += wv * row_g[ox];
                        }
                    }
                }
            }
        }
    }
    Some(gx)
}

fn dense_forward<S: Scalar>(params: &ParamSet<S>, x: &Act<S>, weight: usize, bias: Option<usize>) -> Result<Act<S>> {
    let w = tensor(params, weight);
    let d = w.dims();
    if d.len() != 2 || d[1] != x.data.len() {
        return Err(shape_err(params, weight, format!("expects {:?} inputs, got {}", d.get(1), x.data.len())));
    }
    let (out_n, in_n) = (d[0], d[1]);
    let mut y = vec![S::zero(); out_n];
    for (o, yv) in y.iter_mut().enumerate() {
        let row = &w.data()[o * in_n..(o + 1) * in_n];
        *yv = row.iter().zip(&x.data).map(|(&a, &b)| a * b).sum::<S>();
    }
    if let Some(b) = bias {
        let bd = tensor(params, b).data();
        if bd.len() != out_n {
            return Err(shape_err(params, b, format!("bias length {} != {out_n}", bd.len())));
        }
        y.iter_mut().zip(bd).for_each(|(v, &b)| *v += b);
    }
    Ok(Act { c: out_n, h: 1, w: 1, data: y })
}

fn affine_check<S: Scalar>(params: &ParamSet<S>, x: &Act<S>, scale: usize, shift: usize) -> Result<()> {
    for i in [scale, shift] {
        if tensor(params, i).len() != x.c {
            return Err(shape_err(params, i, format!("has {} channels, input has {}", tensor(params, i).len(), x.c)));
        }
    }
    Ok(())
}

/// Runs `nodes` on one sample. When `trace` is given, the state needed for
/// backward is appended to it, one entry per node.
pub(crate) fn run<S: Scalar>(
    nodes: &[Node],
    params: &ParamSet<S>,
    mut x: Act<S>,
    mut trace: Option<&mut Vec<Trace<S>>>,
) -> Result<Act<S>> {
    for node in nodes {
        let keep = trace.is_some();
        let (y, t) = match node {
            Node::Conv { weight, bias, stride, pad, groups } => {
                let y = conv_forward(params, &x, *weight, *bias, *stride, *pad, *groups)?;
                (y, keep.then(|| Trace::Input(x)))
            }
            Node::Dense { weight, bias } => {
                let y = dense_forward(params, &x, *weight, *bias)?;
                (y, keep.then(|| Trace::Input(x)))
            }
            Node::Affine { scale, shift } => {
                affine_check(params, &x, *scale, *shift)?;
                let (sc, sh) = (tensor(params, *scale).data(), tensor(params, *shift).data());
                let plane = x.plane();
                let mut y = x.clone();
                for c in 0..x.c {
                    y.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = *v * sc[c] + sh[c]);
                }
                (y, keep.then(|| Trace::Input(x)))
            }
            Node::Relu => {
                let mut y = x;
                y.data.iter_mut().for_each(|v| *v = v.max(S::zero()));
                let t = keep.then(|| Trace::Output(y.clone()));
                (y, t)
            }
            Node::AvgPool { size } => {
                let k = *size;
                if k == 0 || x.h < k || x.w < k {
                    return Err(Error::Shape(format!("avg pool {k} on {}x{} input", x.h, x.w)));
                }
                let (oh, ow) = (x.h / k, x.w / k);
                let inv = S::of(1.0 / (k * k) as f64);
                let mut y = Act::zeros(x.c, oh, ow);
                for c in 0..x.c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = S::zero();
                            for dy in 0..k {
                                let row = (c * x.h + oy * k + dy) * x.w + ox * k;
                                acc += x.data[row..row + k].iter().copied().sum::<S>();
                            }
                            y.data[(c * oh + oy) * ow + ox] = acc * inv;
                        }
                    }
                }
                (y, keep.then(|| Trace::Shape(x.c, x.h, x.w)))
            }
            Node::GlobalAvgPool => {
                let plane = x.plane();
                let inv = S::of(1.0 / plane as f64);
                let data = (0..x.c).map(|c| x.data[c * plane..(c + 1) * plane].iter().copied().sum::<S>() * inv).collect();
                (Act { c: x.c, h: 1, w: 1, data }, keep.then(|| Trace::Shape(x.c, x.h, x.w)))
            }
            Node::Residual { body, shortcut } => {
                let mut tb = Vec::new();
                let mut ts = Vec::new();
                let a = run(body, params, x.clone(), keep.then_some(&mut tb))?;
                let b = run(shortcut, params, x, keep.then_some(&mut ts))?;
                if (a.c, a.h, a.w) != (b.c, b.h, b.w) {
                    return Err(Error::Shape(format!(
                        "residual branches disagree: {}x{}x{} vs {}x{}x{}",
                        a.c, a.h, a.w, b.c, b.h, b.w
                    )));
                }
                let mut y = a;
                y.data.iter_mut().zip(&b.data).for_each(|(u, &v)| *u += v);
                (y, keep.then(|| Trace::Residual(tb, ts)))
            }
            Node::Concat { branches } => {
                let mut traces = Vec::new();
                let mut outs = Vec::with_capacity(branches.len());
                for br in branches {
                    let mut t = Vec::new();
                    outs.push(run(br, params, x.clone(), keep.then_some(&mut t))?);
                    traces.push(t);
                }
                let (h, w) = (outs[0].h, outs[0].w);
                if outs.iter().any(|o| (o.h, o.w) != (h, w)) {
                    return Err(Error::Shape("concat branches disagree on spatial size".into()));
                }
                let widths: Vec<usize> = outs.iter().map(|o| o.c).collect();
                let c = widths.iter().sum();
                let mut data = Vec::with_capacity(c * h * w);
                outs.into_iter().for_each(|o| data.extend(o.data));
                (Act { c, h, w, data }, keep.then(|| Trace::Concat(traces, widths)))
            }
        };
        if let (Some(tr), Some(t)) = (trace.as_deref_mut(), t) {
            tr.push(t);
        }
        x = y;
    }
    Ok(x)
}

/// Backpropagates `grad` through `nodes`, accumulating parameter gradients
/// for trainable layers. Returns the input gradient when `need_input`.
pub(crate) fn backprop<S: Scalar>(
    nodes: &[Node],
    params: &ParamSet<S>,
    traces: &[Trace<S>],
    mut grad: Act<S>,
    grads: &mut Grads<S>,
    need_input: bool,
) -> Result<Option<Act<S>>> {
    if traces.len() != nodes.len() {
        return Err(Error::Contract(format!("trace has {} entries for {} nodes", traces.len(), nodes.len())));
    }
    for i in (0..nodes.len()).rev() {
        let upstream_needed = need_input || any_trainable(&nodes[..i], params);
        let own_trainable = any_trainable(&nodes[i..=i], params);
        if !upstream_needed && !own_trainable {
            return Ok(None);
        }
        let next = match (&nodes[i], &traces[i]) {
            (Node::Conv { weight, bias, stride, pad, groups }, Trace::Input(x)) => conv_backward(
                params,
                x,
                &grad,
                *weight,
                *bias,
                *stride,
                *pad,
                *groups,
                grads,
                upstream_needed,
            ),
            (Node::Dense { weight, bias }, Trace::Input(x)) => {
                let w = tensor(params, *weight);
                let in_n = w.dims()[1];
                if let Some(b) = bias {
                    if let Some(gb) = grads.get_mut(*b) {
                        gb.iter_mut().zip(&grad.data).for_each(|(g, &v)| *g += v);
                    }
                }
                if let Some(gw) = grads.get_mut(*weight) {
                    for (o, &g) in grad.data.iter().enumerate() {
                        gw[o * in_n..(o + 1) * in_n].iter_mut().zip(&x.data).for_each(|(a, &xv)| *a += g * xv);
                    }
                }
                upstream_needed.then(|| {
                    let mut gx = vec![S::zero(); in_n];
                    for (o, &g) in grad.data.iter().enumerate() {
                        gx.iter_mut().zip(w.row(o)).for_each(|(a, &wv)| *a += g * wv);
                    }
                    Act { c: x.c, h: x.h, w: x.w, data: gx }
                })
            }
            (Node::Affine { scale, shift }, Trace::Input(x)) => {
                let plane = x.plane();
                let sc = tensor(params, *scale).data();
                if let Some(gs) = grads.get_mut(*scale) {
                    for c in 0..x.c {
                        let r = c * plane..(c + 1) * plane;
                        gs[c] += grad.data[r.clone()].iter().zip(&x.data[r]).map(|(&g, &v)| g * v).sum::<S>();
                    }
                }
                if let Some(gh) = grads.get_mut(*shift) {
                    for c in 0..x.c {
                        gh[c] += grad.data[c * plane..(c + 1) * plane].iter().copied().sum::<S>();
                    }
                }
                upstream_needed.then(|| {
                    let mut gx = grad.clone();
                    for c in 0..x.c {
                        gx.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v *= sc[c]);
                    }
                    gx
                })
            }
            (Node::Relu, Trace::Output(y)) => {
                let mut gx = grad.clone();
                gx.data.iter_mut().zip(&y.data).for_each(|(g, &v)| {
                    if v <= S::zero() {
                        *g = S::zero()
                    }
                });
                Some(gx)
            }
            (Node::AvgPool { size }, Trace::Shape(c, h, w)) => {
                let k = *size;
                let (oh, ow) = (h / k, w / k);
                let inv = S::of(1.0 / (k * k) as f64);
                let mut gx = Act::zeros(*c, *h, *w);
                for ch in 0..*c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = grad.data[(ch * oh + oy) * ow + ox] * inv;
                            for dy in 0..k {
                                let row = (ch * h + oy * k + dy) * w + ox * k;
                                gx.data[row..row + k].iter_mut().for_each(|v| *v += g);
                            }
                        }
                    }
                }
                Some(gx)
            }
            (Node::GlobalAvgPool, Trace::Shape(c, h, w)) => {
                let plane = h * w;
                let inv = S::of(1.0 / plane as f64);
                let mut gx = Act::zeros(*c, *h, *w);
                for ch in 0..*c {
                    let g = grad.data[ch] * inv;
                    gx.data[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v = g);
                }
                Some(gx)
            }
            (Node::Residual { body, shortcut }, Trace::Residual(tb, ts)) => {
                let gb = backprop(body, params, tb, grad.clone(), grads, upstream_needed)?;
                let gs = if shortcut.is_empty() {
                    Some(grad.clone())
                } else {
                    backprop(shortcut, params, ts, grad.clone(), grads, upstream_needed)?
                };
                match (gb, gs) {
                    (Some(mut a), Some(b)) => {
                        a.data.iter_mut().zip(&b.data).for_each(|(u, &v)| *u += v);
                        Some(a)
                    }
                    (a, b) => a.or(b),
                }
            }
            (Node::Concat { branches }, Trace::Concat(traces, widths)) => {
                let plane = grad.plane();
                let mut total: Option<Act<S>> = None;
                let mut offset = 0;
                for ((br, tr), &wc) in branches.iter().zip(traces).zip(widths) {
                    let part = Act {
                        c: wc,
                        h: grad.h,
                        w: grad.w,
                        data: grad.data[offset * plane..(offset + wc) * plane].to_vec(),
                    };
                    offset += wc;
                    if let Some(g) = backprop(br, params, tr, part, grads, upstream_needed)? {
                        match &mut total {
                            Some(t) => t.data.iter_mut().zip(&g.data).for_each(|(u, &v)| *u += v),
                            None => total = Some(g),
                        }
                    }
                }
                total
            }
            _ => return Err(Error::Contract("trace does not match node".into())),
        };
        match next {
            Some(g) => grad = g,
            None => return Ok(None),
        }
    }
    Ok(need_input.then_some(grad))
}

/// Which slice of the network to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Full,
    Backbone,
    Head,
}

/// Network topology: a node sequence split into a feature-extracting backbone
/// and a classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub head_start: usize,
    pub input_shape: (usize, usize, usize),
    pub embed_dim: usize,
    pub num_classes: usize,
}

/// Logits of a batch plus, optionally, the per-sample traces for backward.
pub struct ForwardPass<S> {
    pub logits: Tensor<S>,
    part: Part,
    traces: Option<Vec<Vec<Trace<S>>>>,
}

/// Samples per gradient chunk. Fixed so the reduction order, and therefore
/// the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

impl Network {
    pub fn nodes(&self, part: Part) -> &[Node] {
        match part {
            Part::Full => &self.nodes,
            Part::Backbone => &self.nodes[..self.head_start],
            Part::Head => &self.nodes[self.head_start..],
        }
    }

    /// Shape of one input sample for `part`.
    pub fn input_shape(&self, part: Part) -> (usize, usize, usize) {
        match part {
            Part::Full | Part::Backbone => self.input_shape,
            Part::Head => (self.embed_dim, 1, 1),
        }
    }

    pub fn depth(&self) -> usize {
        path_depth(&self.nodes)
    }

    fn sample_act<S: Scalar>(&self, part: Part, data: &[S]) -> Result<Act<S>> {
        let (c, h, w) = self.input_shape(part);
        Act::new(c, h, w, data.to_vec())
            .map_err(|_| Error::Shape(format!("sample has {} values, {part:?} input is {c}x{h}x{w}", data.len())))
    }

    /// Output of `part` for one flattened sample.
    pub fn forward_sample<S: Scalar>(&self, params: &ParamSet<S>, part: Part, sample: &[S]) -> Result<Vec<S>> {
        let x = self.sample_act(part, sample)?;
        Ok(run(self.nodes(part), params, x, None)?.data)
    }

    fn batch_rows<'a, S: Scalar>(&self, part: Part, batch: &'a Tensor<S>) -> Result<Vec<&'a [S]>> {
        let (c, h, w) = self.input_shape(part);
        let per = c * h * w;
        let d = batch.dims();
        if d.is_empty() || batch.row_len() != per {
            return Err(Error::Shape(format!("batch dims {d:?} do not match input {c}x{h}x{w}")));
        }
        Ok((0..d[0]).map(|i| &batch.data()[i * per..(i + 1) * per]).collect())
    }

    /// Logits `[B, C]` for a batch `[B, 1, 224, 224]`.
    pub fn forward<S: Scalar>(&self, params: &ParamSet<S>, batch: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward_pass(params, Part::Full, batch, false, Exec::Parallel)?.logits)
    }

    /// Batch forward over `part`; `keep_cache` retains what backward needs.
    pub fn forward_pass<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        part: Part,
        batch: &Tensor<S>,
        keep_cache: bool,
        exec: Exec,
    ) -> Result<ForwardPass<S>> {
        let rows = self.batch_rows(part, batch)?;
        let outs: Vec<Result<(Vec<S>, Vec<Trace<S>>)>> = par::map(exec, &rows, |row| {
            let mut tr = Vec::new();
            let x = self.sample_act(part, row)?;
            let y = run(self.nodes(part), params, x, keep_cache.then_some(&mut tr))?;
            Ok((y.data, tr))
        });
        let mut data = Vec::new();
        let mut traces = Vec::new();
        let mut width = 0;
        for o in outs {
            let (y, tr) = o?;
            width = y.len();
            data.extend(y);
            traces.push(tr);
        }
        Ok(ForwardPass {
            logits: Tensor::new(vec![rows.len(), width], data)?,
            part,
            traces: keep_cache.then_some(traces),
        })
    }

    /// Parameter gradients for an upstream gradient w.r.t. the pass outputs.
    pub fn backward<S: Scalar>(&self, params: &ParamSet<S>, pass: &ForwardPass<S>, upstream: &Tensor<S>) -> Result<Grads<S>> {
        let traces = pass
            .traces
            .as_ref()
            .ok_or_else(|| Error::Contract("backward called on a forward pass without cached activations".into()))?;
        if upstream.dims() != pass.logits.dims() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match outputs {:?}",
                upstream.dims(),
                pass.logits.dims()
            )));
        }
        let mut grads = Grads::zeros_for(params);
        let width = upstream.row_len();
        for (i, tr) in traces.iter().enumerate() {
            let g = Act { c: width, h: 1, w: 1, data: upstream.row(i).to_vec() };
            backprop(self.nodes(pass.part), params, tr, g, &mut grads, false)?;
        }
        Ok(grads)
    }

    /// Mean cross-entropy over the samples and its parameter gradients,
    /// computed sample by sample in fixed-size chunks.
    pub fn loss_and_grads<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        part: Part,
        samples: &[&[S]],
        labels: &[usize],
        exec: Exec,
    ) -> Result<(f64, Grads<S>)> {
        if samples.len() != labels.len() || samples.is_empty() {
            return Err(Error::Shape(format!("{} samples vs {} labels", samples.len(), labels.len())));
        }
        let inv_b = 1.0 / samples.len() as f64;
        let n_chunks = samples.len().div_ceil(GRAD_CHUNK);
        let nodes = self.nodes(part);
        let chunks: Vec<Result<(f64, Grads<S>)>> = par::map_range(exec, n_chunks, |ci| {
            let mut grads = Grads::zeros_for(params);
            let mut loss = 0.0;
            for i in ci * GRAD_CHUNK..((ci + 1) * GRAD_CHUNK).min(samples.len()) {
                let mut tr = Vec::new();
                let x = self.sample_act(part, samples[i])?;
                let y = run(nodes, params, x, Some(&mut tr))?;
                let (l, mut g) = sample_cross_entropy(&y.data, labels[i])?;
                loss += l;
                g.iter_mut().for_each(|v| *v *= S::of(inv_b));
                backprop(nodes, params, &tr, Act { c: g.len(), h: 1, w: 1, data: g }, &mut grads, false)?;
            }
            Ok((loss, grads))
        });
        let mut total = 0.0;
        let mut grads = Grads::zeros_for(params);
        for c in chunks {
            let (l, g) = c?;
            total += l;
            grads.add_assign(&g);
        }
        Ok((total * inv_b, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerKind;

    #[test]
    fn valid_range_matches_brute_force() {
        for len in 1..9 {
            for k in 0..4 {
                for s in 1..4 {
                    for p in 0..3 {
                        if len + 2 * p < k + 1 {
                            continue;
                        }
                        let out = (len + 2 * p - (k + 1)) / s + 1;
                        let brute: Vec<usize> = (0..out)
                            .filter(|&o| {
                                let i = (o * s + k) as i64 - p as i64;
                                i >= 0 && i < len as i64
                            })
                            .collect();
                        let (lo, hi) = valid_range(out, len, k, s, p);
                        assert_eq!((lo..hi).collect::<Vec<_>>(), brute, "len {len} k {k} s {s} p {p}");
                    }
                }
            }
        }
    }

    fn dense_net(w: Vec<f64>, bias: Option<Vec<f64>>) -> (Network, ParamSet<f64>) {
        let mut p = ParamSet::new();
        let wi = p.push("fc.w", LayerKind::Dense, Tensor::new(vec![2, 2], w).unwrap(), true).unwrap();
        let bi = bias.map(|b| p.push("fc.b", LayerKind::Bias, Tensor::new(vec![2], b).unwrap(), true).unwrap());
        let net = Network {
            nodes: vec![Node::Dense { weight: wi, bias: bi }],
            head_start: 0,
            input_shape: (2, 1, 1),
            embed_dim: 2,
            num_classes: 2,
        };
        (net, p)
    }

    #[test]
    fn hand_matrix_vector() {
        let (net, p) = dense_net(vec![1.0, 2.0, 3.0, 4.0], None);
        let out = net.forward(&p, &Tensor::new(vec![1, 2, 1, 1], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn zero_input_relu_net_gives_zero_logits() {
        let mut p = ParamSet::<f32>::new();
        let c = p.push("c.w", LayerKind::Conv, Tensor::new(vec![3, 1, 3, 3], vec![0.3; 27]).unwrap(), true).unwrap();
        let d = p.push("d.w", LayerKind::Dense, Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap(), true).unwrap();
        let net = Network {
            nodes: vec![
                Node::Conv { weight: c, bias: None, stride: 1, pad: 1, groups: 1 },
                Node::Relu,
                Node::GlobalAvgPool,
                Node::Dense { weight: d, bias: None },
            ],
            head_start: 3,
            input_shape: (1, 8, 8),
            embed_dim: 3,
            num_classes: 2,
        };
        let out = net.forward(&p, &Tensor::zeros(vec![2, 1, 8, 8])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let x: Vec<f32> = (0..64).map(|i| (i as f32 * 0.7).sin()).collect();
        let batch = Tensor::new(vec![3, 1, 8, 8], [x.clone(), x.clone(), x].concat()).unwrap();
        let out = net.forward(&p, &batch).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(1), out.row(2));
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let (net, p) = dense_net(vec![1.0; 4], None);
        let net = Network { input_shape: (3, 1, 1), ..net };
        let err = net.forward(&p, &Tensor::zeros(vec![1, 3, 1, 1])).unwrap_err().to_string();
        assert!(err.contains("fc.w"), "{err}");
    }

    #[test]
    fn backward_requires_cache() {
        let (net, p) = dense_net(vec![1.0; 4], Some(vec![0.0; 2]));
        let batch = Tensor::new(vec![1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let pass = net.forward_pass(&p, Part::Full, &batch, false, Exec::Sequential).unwrap();
        let up = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(net.backward(&p, &pass, &up), Err(Error::Contract(_))));

        let pass = net.forward_pass(&p, Part::Full, &batch, true, Exec::Sequential).unwrap();
        let g = net.backward(&p, &pass, &up).unwrap();
        assert_eq!(g.get(0).unwrap(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(g.get(1).unwrap(), &[1.0, 0.0]);

        let zero = net.backward(&p, &pass, &Tensor::zeros(vec![1, 2])).unwrap();
        assert!(zero.is_all_zero());
    }

    #[test]
    fn frozen_layers_get_no_gradient() {
        let (net, mut p) = dense_net(vec![1.0; 4], Some(vec![0.0; 2]));
        p.layer_mut(0).trainable = false;
        let batch = Tensor::new(vec![1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let pass = net.forward_pass(&p, Part::Full, &batch, true, Exec::Sequential).unwrap();
        let g = net.backward(&p, &pass, &Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert!(g.get(0).is_none());
        assert!(g.get(1).is_some());
    }
}
