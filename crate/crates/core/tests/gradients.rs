use fedvox::nn::gradcheck::{check_input_gradient, check_network};
use fedvox::nn::{sgd_step, LayerKind, Network, Node, OptState, ParamSet, Part, SgdConfig, Tensor};
use fedvox::par::Exec;
use fedvox::seed;
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

struct Net {
    params: ParamSet<f64>,
    rng: rand_chacha::ChaCha8Rng,
}

impl Net {
    fn new(seed: u64) -> Self {
        Net { params: ParamSet::new(), rng: seed::rng(seed) }
    }

    fn tensor(&mut self, name: &str, kind: LayerKind, dims: Vec<usize>) -> usize {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-0.8..0.8)).collect();
        self.params.push(name, kind, Tensor::new(dims, data).unwrap(), true).unwrap()
    }

    fn conv(&mut self, name: &str, ic: usize, oc: usize, k: usize, stride: usize, pad: usize, groups: usize, bias: bool) -> Node {
        let weight = self.tensor(name, LayerKind::Conv, vec![oc, ic / groups, k, k]);
        let bias = bias.then(|| self.tensor(&format!("{name}.b"), LayerKind::Bias, vec![oc]));
        Node::Conv { weight, bias, stride, pad, groups }
    }

    fn dense(&mut self, name: &str, i: usize, o: usize) -> Node {
        let weight = self.tensor(name, LayerKind::Dense, vec![o, i]);
        let bias = Some(self.tensor(&format!("{name}.b"), LayerKind::Bias, vec![o]));
        Node::Dense { weight, bias }
    }

    fn affine(&mut self, name: &str, c: usize) -> Node {
        let scale = self.tensor(&format!("{name}.s"), LayerKind::BnScale, vec![c]);
        let shift = self.tensor(&format!("{name}.t"), LayerKind::BnShift, vec![c]);
        Node::Affine { scale, shift }
    }

    /// Appends a 2-class dense read-out sized from a probe forward pass.
    fn finish(mut self, mut nodes: Vec<Node>, input: (usize, usize, usize)) -> (Network, ParamSet<f64>) {
        let probe = Network { nodes: nodes.clone(), head_start: nodes.len(), input_shape: input, embed_dim: 0, num_classes: 0 };
        let x = vec![0.0; input.0 * input.1 * input.2];
        let width = probe.forward_sample(&self.params, Part::Full, &x).unwrap().len();
        nodes.push(self.dense("readout", width, 2));
        let n = nodes.len();
        (Network { nodes, head_start: n - 1, input_shape: input, embed_dim: width, num_classes: 2 }, self.params)
    }
}

fn inputs(seed: u64, n: usize, len: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let xs = (0..n).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    (xs, (0..n).map(|i| i % 2).collect())
}

fn assert_gradients(net: &Network, params: &ParamSet<f64>) {
    let (c, h, w) = net.input_shape;
    let (xs, ys) = inputs(77, 3, c * h * w);
    let report = check_network(net, params, Part::Full, &xs, &ys, H).unwrap();
    assert!(report.entries_checked > 0);
    assert!(report.max_rel_error < TOL, "params: {report:?}");
    let readout: Vec<f64> = (0..2).map(|i| 0.3 + i as f64).collect();
    let input_err = check_input_gradient(net, params, Part::Full, &xs[0], &readout, H).unwrap();
    assert!(input_err < TOL, "input: {input_err}");
}

#[test]
fn conv_same_padding() {
    let mut b = Net::new(1);
    let nodes = vec![b.conv("c", 2, 3, 3, 1, 1, 1, true)];
    let (net, p) = b.finish(nodes, (2, 5, 5));
    assert_gradients(&net, &p);
}

#[test]
fn conv_strided_padded() {
    let mut b = Net::new(2);
    let nodes = vec![b.conv("c", 1, 2, 3, 2, 1, 1, true)];
    let (net, p) = b.finish(nodes, (1, 7, 6));
    assert_gradients(&net, &p);
}

#[test]
fn conv_pointwise_strided() {
    let mut b = Net::new(3);
    let nodes = vec![b.conv("c", 3, 2, 1, 2, 0, 1, false)];
    let (net, p) = b.finish(nodes, (3, 5, 5));
    assert_gradients(&net, &p);
}

#[test]
fn conv_grouped_and_depthwise() {
    let mut b = Net::new(4);
    let nodes = vec![b.conv("g", 4, 4, 3, 1, 1, 2, false), b.conv("dw", 4, 4, 3, 2, 1, 4, true)];
    let (net, p) = b.finish(nodes, (4, 5, 5));
    assert_gradients(&net, &p);
}

#[test]
fn dense_stack() {
    let mut b = Net::new(5);
    let nodes = vec![b.dense("d1", 6, 4), b.dense("d2", 4, 3)];
    let (net, p) = b.finish(nodes, (6, 1, 1));
    assert_gradients(&net, &p);
}

#[test]
fn affine_and_relu() {
    let mut b = Net::new(6);
    let nodes = vec![b.conv("c", 1, 3, 3, 1, 1, 1, false), b.affine("bn", 3), Node::Relu];
    let (net, p) = b.finish(nodes, (1, 4, 4));
    assert_gradients(&net, &p);
}

#[test]
fn avg_pool_with_ragged_border() {
    let mut b = Net::new(7);
    let nodes = vec![b.conv("c", 1, 2, 3, 1, 1, 1, true), Node::AvgPool { size: 2 }];
    let (net, p) = b.finish(nodes, (1, 5, 7));
    assert_gradients(&net, &p);
}

#[test]
fn global_avg_pool() {
    let mut b = Net::new(8);
    let nodes = vec![b.conv("c", 2, 3, 3, 1, 1, 1, true), Node::GlobalAvgPool];
    let (net, p) = b.finish(nodes, (2, 4, 3));
    assert_gradients(&net, &p);
}

#[test]
fn residual_projected_and_identity() {
    let mut b = Net::new(9);
    let body = vec![b.conv("b1", 2, 3, 3, 2, 1, 1, false), b.affine("bn1", 3), Node::Relu, b.conv("b2", 3, 3, 3, 1, 1, 1, false)];
    let shortcut = vec![b.conv("sc", 2, 3, 1, 2, 0, 1, false)];
    let body2 = vec![b.conv("b3", 3, 3, 3, 1, 1, 1, true)];
    let nodes = vec![Node::Residual { body, shortcut }, Node::Relu, Node::Residual { body: body2, shortcut: vec![] }];
    let (net, p) = b.finish(nodes, (2, 6, 6));
    assert_gradients(&net, &p);
}

#[test]
fn concat_branches() {
    let mut b = Net::new(10);
    let br1 = vec![b.conv("a", 2, 2, 1, 1, 0, 1, true)];
    let br2 = vec![b.conv("b1", 2, 1, 1, 1, 0, 1, false), Node::Relu, b.conv("b2", 1, 3, 3, 1, 1, 1, true)];
    let nodes = vec![Node::Concat { branches: vec![br1, br2] }, Node::GlobalAvgPool];
    let (net, p) = b.finish(nodes, (2, 4, 4));
    assert_gradients(&net, &p);
}

#[test]
fn frozen_layers_are_skipped() {
    let mut b = Net::new(11);
    let nodes = vec![b.conv("c", 1, 2, 3, 1, 1, 1, true), Node::GlobalAvgPool];
    let (net, mut p) = b.finish(nodes, (1, 4, 4));
    p.layer_mut(0).trainable = false;
    p.layer_mut(1).trainable = false;
    let (xs, ys) = inputs(3, 2, 16);
    let report = check_network(&net, &p, Part::Full, &xs, &ys, H).unwrap();
    assert_eq!(report.entries_checked, 2 * 2 + 2);
    assert!(report.max_rel_error < TOL);
}

fn small_net(seed: u64) -> (Network, ParamSet<f64>) {
    let mut b = Net::new(seed);
    let nodes = vec![b.conv("c", 1, 3, 3, 1, 1, 1, true), Node::Relu, Node::GlobalAvgPool, b.dense("d", 3, 4), Node::Relu];
    b.finish(nodes, (1, 4, 4))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A small enough plain gradient step never increases the batch loss.
    #[test]
    fn small_step_decreases_loss(seed in 0u64..1000) {
        let (net, params) = small_net(seed);
        let (xs, ys) = inputs(seed + 1, 4, 16);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (before, grads) = net.loss_and_grads(&params, Part::Full, &refs, &ys, Exec::Sequential).unwrap();
        prop_assume!(!grads.is_all_zero());
        let cfg = SgdConfig { base_lr: 1e-3, momentum: 0.0, ..SgdConfig::default() };
        let mut opt = OptState::new(cfg, &params);
        let mut p = params.clone();
        sgd_step(&mut p, &grads, &mut opt).unwrap();
        let (after, _) = net.loss_and_grads(&p, Part::Full, &refs, &ys, Exec::Sequential).unwrap();
        prop_assert!(after <= before + 1e-12, "{before} -> {after}");
    }

    /// Parallel and sequential gradient paths agree bit for bit.
    #[test]
    fn exec_modes_agree(seed in 0u64..1000) {
        let (net, params) = small_net(seed);
        let (xs, ys) = inputs(seed + 2, 9, 16);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (l1, g1) = net.loss_and_grads(&params, Part::Full, &refs, &ys, Exec::Sequential).unwrap();
        let (l2, g2) = net.loss_and_grads(&params, Part::Full, &refs, &ys, Exec::Parallel).unwrap();
        prop_assert_eq!(l1.to_bits(), l2.to_bits());
        for i in 0..params.len() {
            prop_assert_eq!(g1.get(i), g2.get(i));
        }
    }
}
