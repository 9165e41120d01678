use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::{Axis, MatchGroup, MatchPlan, Member};
use crate::error::{Error, Result};
use crate::nn::{LayerKind, Network, Node, ParamSet, Tensor};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchName {
    Rn18Lite,
    GnLite,
    Mnv2Lite,
}

impl ArchName {
    pub const ALL: [ArchName; 3] = [ArchName::Rn18Lite, ArchName::GnLite, ArchName::Mnv2Lite];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchName::Rn18Lite => "rn18-lite",
            ArchName::GnLite => "gn-lite",
            ArchName::Mnv2Lite => "mnv2-lite",
        }
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchName::ALL
            .into_iter()
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown architecture '{s}' (expected rn18-lite, gn-lite or mnv2-lite)")))
    }
}

/// Width/depth description of one architecture. Loadable from TOML; any
/// field left out takes the family default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: ArchName,
    /// Square input side.
    pub input_size: usize,
    /// Average-pool factor applied to the raw input before the first conv.
    pub input_pool: usize,
    pub stem_widths: Vec<usize>,
    /// Stage widths (rn18), module base widths (gn) or block output widths (mnv2).
    pub widths: Vec<usize>,
    /// Residual blocks per stage (rn18 only).
    pub blocks: Vec<usize>,
    /// Inverted-residual expansion factor (mnv2 only).
    pub expansion: usize,
    pub head_hidden: usize,
    pub num_classes: usize,
    /// Target trainable parameter count; the realized count must be within 20%.
    pub param_budget: usize,
}

/// Name prefix of the classifier's output layer.
const OUTPUT_LAYER: &str = "head.fc2";

pub const BUDGET_TOLERANCE: f64 = 0.2;

impl ArchSpec {
    pub fn default_for(name: ArchName) -> Self {
        let base = ArchSpec {
            name,
            input_size: 224,
            input_pool: 4,
            stem_widths: vec![],
            widths: vec![],
            blocks: vec![],
            expansion: 1,
            head_hidden: 32,
            num_classes: 2,
            param_budget: 0,
        };
        match name {
            ArchName::Rn18Lite => ArchSpec {
                stem_widths: vec![8, 16],
                widths: vec![16, 32, 56, 72],
                blocks: vec![2, 2, 2, 1],
                param_budget: 234_000,
                ..base
            },
            ArchName::GnLite => ArchSpec {
                stem_widths: vec![8, 24],
                widths: vec![24, 32, 40, 44, 52, 60],
                param_budget: 140_000,
                ..base
            },
            ArchName::Mnv2Lite => ArchSpec {
                stem_widths: vec![16],
                widths: vec![16, 24, 24, 48, 48, 80],
                expansion: 4,
                param_budget: 68_000,
                ..base
            },
        }
    }

    /// Parses a TOML table with at least `name`; missing keys default.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("arch spec: {e}")))?;
        let name: ArchName = table
            .get("name")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Config("arch spec needs a string 'name'".into()))?
            .parse()?;
        let mut merged = toml::Table::try_from(ArchSpec::default_for(name)).map_err(|e| Error::Config(e.to_string()))?;
        merged.extend(table);
        let spec: ArchSpec = merged.try_into().map_err(|e| Error::Config(format!("arch spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("arch spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.name)));
        let (stem, widths) = match self.name {
            ArchName::Rn18Lite => (2, 4),
            ArchName::GnLite => (2, 6),
            ArchName::Mnv2Lite => (1, 6),
        };
        if self.stem_widths.len() != stem || self.widths.len() != widths {
            return bad(format!("expected {stem} stem widths and {widths} widths"));
        }
        if self.name == ArchName::Rn18Lite && (self.blocks.len() != 4 || self.blocks.iter().any(|&b| b == 0)) {
            return bad("expected 4 non-zero block counts".into());
        }
        if self.name == ArchName::GnLite && self.widths.iter().any(|w| w % 4 != 0) {
            return bad("inception widths must be multiples of 4".into());
        }
        if self.stem_widths.iter().chain(&self.widths).any(|&w| w == 0) || self.head_hidden == 0 {
            return bad("widths must be positive".into());
        }
        if self.num_classes < 2 || self.expansion == 0 || self.input_pool == 0 {
            return bad("need at least 2 classes and positive expansion/pool".into());
        }
        if self.input_size / self.input_pool < 16 {
            return bad(format!("input {} pooled by {} is too small", self.input_size, self.input_pool));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    /// Only the classifier head is trainable.
    FreezeBackbone,
    FullFinetune,
}

/// A built network with its parameters and permutation plan.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ArchSpec,
    pub net: Network,
    pub params: ParamSet<f32>,
    pub plan: MatchPlan,
    /// Index of the first parameter layer belonging to the head.
    pub head_params_start: usize,
}

impl Model {
    pub fn set_transfer_mode(&mut self, mode: TransferMode) {
        let start = self.head_params_start;
        for i in 0..self.params.len() {
            self.params.layer_mut(i).trainable = mode == TransferMode::FullFinetune || i >= start;
        }
    }

    pub fn transfer_mode(&self) -> TransferMode {
        if (0..self.head_params_start).all(|i| !self.params.layer(i).trainable) {
            TransferMode::FreezeBackbone
        } else {
            TransferMode::FullFinetune
        }
    }

    pub fn depth(&self) -> usize {
        self.net.depth()
    }

    /// Re-draws the head parameters (fresh task head on a pretrained backbone).
    /// The output layer gets the plain ±1/sqrt(fan_in) range, without the
    /// ReLU gain used everywhere else.
    pub fn reset_head(&mut self, seed: u64) {
        let mut rng = seed::rng(seed::derive(seed, "head-reset", 0));
        for i in self.head_params_start..self.params.len() {
            let layer = self.params.layer_mut(i);
            let fan_in = layer.tensor.row_len();
            init_tensor(layer.kind, &mut layer.tensor, fan_in, &mut rng);
            if layer.name.starts_with(OUTPUT_LAYER) && layer.kind == LayerKind::Dense {
                shrink_output(&mut layer.tensor);
            }
        }
    }

    /// Copies every backbone layer whose name and shape match in `source`.
    /// Returns how many layers were copied.
    pub fn load_backbone(&mut self, source: &ParamSet<f32>) -> usize {
        let mut copied = 0;
        for i in 0..self.head_params_start {
            let name = self.params.layer(i).name.clone();
            if let Some(j) = source.index_of(&name) {
                let src = &source.layer(j).tensor;
                let dst = &mut self.params.layer_mut(i).tensor;
                if src.dims() == dst.dims() {
                    dst.data_mut().copy_from_slice(src.data());
                    copied += 1;
                }
            }
        }
        copied
    }
}

fn init_tensor(kind: LayerKind, t: &mut Tensor<f32>, fan_in: usize, rng: &mut ChaCha8Rng) {
    match kind {
        LayerKind::Conv | LayerKind::Dense => {
            let bound = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        LayerKind::BnScale => t.data_mut().fill(1.0),
        LayerKind::Bias | LayerKind::BnShift => t.data_mut().fill(0.0),
    }
}

fn shrink_output(t: &mut Tensor<f32>) {
    let k = (1.0 / 6.0f32).sqrt();
    t.data_mut().iter_mut().for_each(|v| *v *= k);
}

/// Channel layout of an activation: consecutive runs belonging to groups
/// (`None` for the raw input).
type Stream = Vec<(Option<usize>, usize)>;

const INPUT: [(Option<usize>, usize); 1] = [(None, 1)];

fn width(s: &Stream) -> usize {
    s.iter().map(|&(_, n)| n).sum()
}

struct Builder {
    params: ParamSet<f32>,
    groups: Vec<MatchGroup>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn tensor(&mut self, name: &str, kind: LayerKind, dims: Vec<usize>, fan_in: usize) -> Result<usize> {
        let mut t = Tensor::zeros(dims);
        init_tensor(kind, &mut t, fan_in, &mut self.rng);
        self.params.push(name, kind, t, true)
    }

    fn group(&mut self, name: &str, size: usize) -> usize {
        self.groups.push(MatchGroup { name: name.into(), size, producers: vec![], consumers: vec![] });
        self.groups.len() - 1
    }

    fn produce(&mut self, group: usize, layer: usize, inputs: Vec<usize>) {
        self.groups[group].producers.push(Member { layer, axis: Axis::Out, offset: 0, inputs });
    }

    fn consume(&mut self, input: &Stream, layer: usize) {
        let mut offset = 0;
        for &(g, n) in input {
            if let Some(g) = g {
                self.groups[g].consumers.push(Member { layer, axis: Axis::In, offset, inputs: vec![] });
            }
            offset += n;
        }
    }

    /// Conv (no bias) + affine + optional relu writing into `target` (new group if None).
    fn conv_block(
        &mut self,
        out: &mut Vec<Node>,
        name: &str,
        input: &Stream,
        oc: usize,
        k: usize,
        stride: usize,
        relu: bool,
        target: Option<usize>,
    ) -> Result<Stream> {
        let ic = width(input);
        let w = self.tensor(&format!("{name}.weight"), LayerKind::Conv, vec![oc, ic, k, k], ic * k * k)?;
        let g = target.unwrap_or_else(|| self.group(name, oc));
        self.consume(input, w);
        self.produce(g, w, input.iter().filter_map(|&(g, _)| g).collect());
        out.push(Node::Conv { weight: w, bias: None, stride, pad: k / 2, groups: 1 });
        out.push(self.affine(name, g, oc)?);
        if relu {
            out.push(Node::Relu);
        }
        Ok(vec![(Some(g), oc)])
    }

    fn affine(&mut self, name: &str, g: usize, c: usize) -> Result<Node> {
        let scale = self.tensor(&format!("{name}.bn.scale"), LayerKind::BnScale, vec![c], 1)?;
        let shift = self.tensor(&format!("{name}.bn.shift"), LayerKind::BnShift, vec![c], 1)?;
        self.produce(g, scale, vec![]);
        self.produce(g, shift, vec![]);
        Ok(Node::Affine { scale, shift })
    }

    /// Depthwise 3x3 conv + affine + relu, staying in the input's group.
    fn depthwise(&mut self, out: &mut Vec<Node>, name: &str, input: &Stream, stride: usize) -> Result<()> {
        let &[(Some(g), c)] = input.as_slice() else {
            return Err(Error::Shape(format!("{name}: depthwise input must be one group")));
        };
        let w = self.tensor(&format!("{name}.weight"), LayerKind::Conv, vec![c, 1, 3, 3], 9)?;
        self.produce(g, w, vec![]);
        out.push(Node::Conv { weight: w, bias: None, stride, pad: 1, groups: c });
        out.push(self.affine(name, g, c)?);
        out.push(Node::Relu);
        Ok(())
    }

    /// Per-channel affine on the pooled embedding, one producer slice per segment.
    fn embed_norm(&mut self, out: &mut Vec<Node>, input: &Stream) -> Result<()> {
        let c = width(input);
        let scale = self.tensor("embed.norm.scale", LayerKind::BnScale, vec![c], 1)?;
        let shift = self.tensor("embed.norm.shift", LayerKind::BnShift, vec![c], 1)?;
        let mut offset = 0;
        for &(g, n) in input {
            if let Some(g) = g {
                for layer in [scale, shift] {
                    self.groups[g].producers.push(Member { layer, axis: Axis::Out, offset, inputs: vec![] });
                }
            }
            offset += n;
        }
        out.push(Node::Affine { scale, shift });
        Ok(())
    }

    fn dense(&mut self, out: &mut Vec<Node>, name: &str, input: &Stream, units: usize, hidden: bool) -> Result<Stream> {
        let fan_in = width(input);
        let w = self.tensor(&format!("{name}.weight"), LayerKind::Dense, vec![units, fan_in], fan_in)?;
        let b = self.tensor(&format!("{name}.bias"), LayerKind::Bias, vec![units], 1)?;
        self.consume(input, w);
        out.push(Node::Dense { weight: w, bias: Some(b) });
        if !hidden {
            return Ok(vec![]);
        }
        let g = self.group(name, units);
        self.produce(g, w, input.iter().filter_map(|&(g, _)| g).collect());
        self.produce(g, b, vec![]);
        out.push(Node::Relu);
        Ok(vec![(Some(g), units)])
    }
}

/// Builds `spec` with He-uniform weights drawn from `seed`. The backbone
/// starts frozen.
pub fn build_model(spec: &ArchSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut b = Builder {
        params: ParamSet::new(),
        groups: vec![],
        rng: seed::rng(seed::derive(seed, spec.name.as_str(), 0)),
    };
    let mut nodes = vec![Node::AvgPool { size: spec.input_pool }];
    let stream = match spec.name {
        ArchName::Rn18Lite => build_rn18(&mut b, spec, &mut nodes)?,
        ArchName::GnLite => build_gn(&mut b, spec, &mut nodes)?,
        ArchName::Mnv2Lite => build_mnv2(&mut b, spec, &mut nodes)?,
    };
    nodes.push(Node::GlobalAvgPool);
    // The embedding normalization runs as the first head node but its
    // statistics are frozen along with the backbone.
    let head_start = nodes.len();
    b.embed_norm(&mut nodes, &stream)?;
    let head_params_start = b.params.len();
    let hidden = b.dense(&mut nodes, "head.fc1", &stream, spec.head_hidden, true)?;
    b.dense(&mut nodes, OUTPUT_LAYER, &hidden, spec.num_classes, false)?;

    let net = Network {
        nodes,
        head_start,
        input_shape: (1, spec.input_size, spec.input_size),
        embed_dim: width(&stream),
        num_classes: spec.num_classes,
    };
    let mut model = Model { spec: spec.clone(), net, params: b.params, plan: MatchPlan { groups: b.groups }, head_params_start };
    let n = model.params.num_params();
    let budget = spec.param_budget as f64;
    if spec.param_budget > 0 && ((n as f64 - budget).abs() > BUDGET_TOLERANCE * budget) {
        return Err(Error::Config(format!("{}: {n} parameters, outside 20% of budget {}", spec.name, spec.param_budget)));
    }
    model.set_transfer_mode(TransferMode::FreezeBackbone);
    Ok(model)
}

fn build_rn18(b: &mut Builder, spec: &ArchSpec, nodes: &mut Vec<Node>) -> Result<Stream> {
    let s1 = b.conv_block(nodes, "stem.conv1", &INPUT.to_vec(), spec.stem_widths[0], 3, 2, true, None)?;
    let mut x = b.conv_block(nodes, "stem.conv2", &s1, spec.stem_widths[1], 3, 2, true, None)?;
    for (si, (&w, &nb)) in spec.widths.iter().zip(&spec.blocks).enumerate() {
        for bi in 0..nb {
            let name = format!("layer{}.{}", si + 1, bi);
            let stride = if si > 0 && bi == 0 { 2 } else { 1 };
            let project = stride != 1 || width(&x) != w;
            let stream_group = match (project, x[0].0) {
                (false, Some(g)) => g,
                _ => b.group(&format!("{name}.out"), w),
            };
            let mut body = vec![];
            let h = b.conv_block(&mut body, &format!("{name}.conv1"), &x, w, 3, stride, true, None)?;
            b.conv_block(&mut body, &format!("{name}.conv2"), &h, w, 3, 1, false, Some(stream_group))?;
            let mut shortcut = vec![];
            if project {
                b.conv_block(&mut shortcut, &format!("{name}.down"), &x, w, 1, stride, false, Some(stream_group))?;
            }
            nodes.push(Node::Residual { body, shortcut });
            nodes.push(Node::Relu);
            x = vec![(Some(stream_group), w)];
        }
    }
    Ok(x)
}

fn build_gn(b: &mut Builder, spec: &ArchSpec, nodes: &mut Vec<Node>) -> Result<Stream> {
    let s1 = b.conv_block(nodes, "stem.conv1", &INPUT.to_vec(), spec.stem_widths[0], 3, 2, true, None)?;
    let mut x = b.conv_block(nodes, "stem.conv2", &s1, spec.stem_widths[1], 3, 2, true, None)?;
    for (mi, &u) in spec.widths.iter().enumerate() {
        let name = format!("mixed{}", mi + 1);
        let mut b1 = vec![];
        let o1 = b.conv_block(&mut b1, &format!("{name}.b1"), &x, u, 1, 1, true, None)?;
        let mut b2 = vec![];
        let r2 = b.conv_block(&mut b2, &format!("{name}.b2.reduce"), &x, u / 2, 1, 1, true, None)?;
        let o2 = b.conv_block(&mut b2, &format!("{name}.b2.conv"), &r2, u, 3, 1, true, None)?;
        let mut b3 = vec![];
        let r3 = b.conv_block(&mut b3, &format!("{name}.b3.reduce"), &x, u / 4, 1, 1, true, None)?;
        let m3 = b.conv_block(&mut b3, &format!("{name}.b3.conv1"), &r3, u / 2, 3, 1, true, None)?;
        let o3 = b.conv_block(&mut b3, &format!("{name}.b3.conv2"), &m3, u / 2, 3, 1, true, None)?;
        nodes.push(Node::Concat { branches: vec![b1, b2, b3] });
        x = [o1, o2, o3].concat();
        if mi == 1 || mi == 3 {
            nodes.push(Node::AvgPool { size: 2 });
        }
    }
    Ok(x)
}

fn build_mnv2(b: &mut Builder, spec: &ArchSpec, nodes: &mut Vec<Node>) -> Result<Stream> {
    let mut x = b.conv_block(nodes, "stem.conv", &INPUT.to_vec(), spec.stem_widths[0], 3, 2, true, None)?;
    // First block has no expansion: depthwise then project.
    b.depthwise(nodes, "block0.dw", &x, 2)?;
    x = b.conv_block(nodes, "block0.project", &x, spec.widths[0], 1, 1, false, None)?;
    const STRIDES: [usize; 5] = [2, 1, 2, 1, 1];
    for (i, (&w, &stride)) in spec.widths[1..].iter().zip(&STRIDES).enumerate() {
        let name = format!("block{}", i + 1);
        let residual = stride == 1 && width(&x) == w;
        let target = if residual { x[0].0 } else { None };
        let mut body = vec![];
        let e = b.conv_block(&mut body, &format!("{name}.expand"), &x, width(&x) * spec.expansion, 1, 1, true, None)?;
        b.depthwise(&mut body, &format!("{name}.dw"), &e, stride)?;
        let y = b.conv_block(&mut body, &format!("{name}.project"), &e, w, 1, 1, false, target)?;
        if residual {
            nodes.push(Node::Residual { body, shortcut: vec![] });
        } else {
            nodes.extend(body);
            x = y;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::plan::permute_group;
    use crate::nn::Part;
    use rand::seq::SliceRandom;

    fn small(name: ArchName) -> ArchSpec {
        // Same topology on a 32x32 input with no pooling and no budget check.
        ArchSpec { input_size: 32, input_pool: 1, param_budget: 0, ..ArchSpec::default_for(name) }
    }

    #[test]
    fn budgets_depths_and_ordering() {
        let mut counts = vec![];
        for (name, depth) in [(ArchName::Rn18Lite, 18), (ArchName::GnLite, 22), (ArchName::Mnv2Lite, 20)] {
            let m = build_model(&ArchSpec::default_for(name), 1).unwrap();
            let n = m.params.num_params() as f64;
            let budget = m.spec.param_budget as f64;
            assert!((n - budget).abs() <= 0.2 * budget, "{name}: {n} vs {budget}");
            assert_eq!(m.depth(), depth, "{name}");
            counts.push(n);
        }
        assert!(counts[2] < counts[1] && counts[1] < counts[0]);
    }

    #[test]
    fn forward_shapes_full_and_split() {
        for name in ArchName::ALL {
            let m = build_model(&small(name), 2).unwrap();
            let x: Vec<f32> = (0..32 * 32).map(|i| ((i % 17) as f32 - 8.0) / 8.0).collect();
            let logits = m.net.forward_sample(&m.params, Part::Full, &x).unwrap();
            assert_eq!(logits.len(), 2);
            let emb = m.net.forward_sample(&m.params, Part::Backbone, &x).unwrap();
            assert_eq!(emb.len(), m.net.embed_dim);
            let via_head = m.net.forward_sample(&m.params, Part::Head, &emb).unwrap();
            assert_eq!(via_head, logits);
        }
    }

    #[test]
    fn group_permutations_preserve_outputs() {
        for name in ArchName::ALL {
            let mut m = build_model(&small(name), 3).unwrap();
            // Non-trivial affine parameters so a wrong permutation shows up.
            let mut rng = seed::rng(9);
            for i in 0..m.params.len() {
                if matches!(m.params.layer(i).kind, LayerKind::BnShift | LayerKind::BnScale | LayerKind::Bias) {
                    m.params.layer_mut(i).tensor.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
                }
            }
            let x: Vec<f32> = (0..32 * 32).map(|i| ((i * 7 % 23) as f32 - 11.0) / 11.0).collect();
            let before = m.net.forward_sample(&m.params, Part::Full, &x).unwrap();
            let mut p = m.params.clone();
            for g in &m.plan.groups {
                let mut perm: Vec<usize> = (0..g.size).collect();
                perm.shuffle(&mut rng);
                permute_group(&mut p, g, &perm).unwrap();
            }
            assert_ne!(p.layers()[1].tensor, m.params.layers()[1].tensor);
            let after = m.net.forward_sample(&p, Part::Full, &x).unwrap();
            for (a, b) in before.iter().zip(&after) {
                assert!((a - b).abs() < 1e-4 * (1.0 + a.abs()), "{name}: {before:?} vs {after:?}");
            }
        }
    }

    #[test]
    fn plan_covers_every_hidden_tensor() {
        for name in ArchName::ALL {
            let m = build_model(&small(name), 4).unwrap();
            let mut covered = vec![false; m.params.len()];
            for g in &m.plan.groups {
                for mem in &g.producers {
                    covered[mem.layer] = true;
                }
            }
            let fc2 = m.params.index_of("head.fc2.weight").unwrap();
            for (i, c) in covered.iter().enumerate() {
                assert_eq!(*c, i < fc2, "{name}: layer {}", m.params.layer(i).name);
            }
        }
    }

    #[test]
    fn transfer_mode_toggles_backbone() {
        let mut m = build_model(&small(ArchName::Mnv2Lite), 5).unwrap();
        assert_eq!(m.transfer_mode(), TransferMode::FreezeBackbone);
        let head: usize = (m.head_params_start..m.params.len()).map(|i| m.params.layer(i).tensor.len()).sum();
        assert_eq!(m.params.num_trainable_params(), head);
        m.set_transfer_mode(TransferMode::FullFinetune);
        assert_eq!(m.params.num_trainable_params(), m.params.num_params());
    }

    #[test]
    fn backbone_transfer_by_name() {
        let a = build_model(&small(ArchName::GnLite), 6).unwrap();
        let mut b = build_model(&small(ArchName::GnLite), 7).unwrap();
        assert_eq!(b.load_backbone(&a.params), b.head_params_start);
        for i in 0..b.head_params_start {
            assert_eq!(a.params.layer(i).tensor, b.params.layer(i).tensor);
        }
        let before = b.params.layer(b.head_params_start).tensor.clone();
        b.reset_head(11);
        assert_ne!(before, b.params.layer(b.head_params_start).tensor);
    }

    #[test]
    fn init_is_seeded() {
        let a = build_model(&small(ArchName::Rn18Lite), 8).unwrap();
        let b = build_model(&small(ArchName::Rn18Lite), 8).unwrap();
        let c = build_model(&small(ArchName::Rn18Lite), 9).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn spec_toml_round_trip_and_defaults() {
        let spec = ArchSpec::from_toml("name = \"gn-lite\"\nhead_hidden = 16\n").unwrap();
        assert_eq!(spec.head_hidden, 16);
        assert_eq!(spec.widths, ArchSpec::default_for(ArchName::GnLite).widths);
        assert_eq!(ArchSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        assert!(ArchSpec::from_toml("name = \"vgg\"").is_err());
        assert!(ArchSpec::from_toml("name = \"rn18-lite\"\nwidths = [8]").is_err());
        assert!(ArchSpec::from_toml("name = \"rn18-lite\"\nbogus = 1").is_err());
    }

    #[test]
    fn over_budget_rejected() {
        let spec = ArchSpec { widths: vec![64, 64, 128, 128], ..ArchSpec::default_for(ArchName::Rn18Lite) };
        assert!(matches!(build_model(&spec, 0), Err(Error::Config(_))));
    }
}
