use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "conv")]
    Conv,
    #[serde(rename = "dense")]
    Dense,
    #[serde(rename = "bias")]
    Bias,
    #[serde(rename = "bn-scale")]
    BnScale,
    #[serde(rename = "bn-shift")]
    BnShift,
}

impl LayerKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::Dense => 1,
            LayerKind::Bias => 2,
            LayerKind::BnScale => 3,
            LayerKind::BnShift => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::Conv,
            1 => LayerKind::Dense,
            2 => LayerKind::Bias,
            3 => LayerKind::BnScale,
            4 => LayerKind::BnShift,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S = f32> {
    pub name: String,
    pub kind: LayerKind,
    pub tensor: Tensor<S>,
    pub trainable: bool,
}

/// Ordered, uniquely named parameter tensors of a model. This is the unit
/// that federated clients and the server exchange.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<S = f32> {
    layers: Vec<Layer<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self { layers: Vec::new(), index: HashMap::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: LayerKind, tensor: Tensor<S>, trainable: bool) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate layer name '{name}'")));
        }
        let i = self.layers.len();
        self.index.insert(name.clone(), i);
        self.layers.push(Layer { name, kind, tensor, trainable });
        Ok(i)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer<S> {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer<S> {
        &mut self.layers[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.tensor.len()).sum()
    }

    pub fn num_trainable_params(&self) -> usize {
        self.layers.iter().filter(|l| l.trainable).map(|l| l.tensor.len()).sum()
    }

    /// Bytes occupied by the parameter values at this element width.
    pub fn param_bytes(&self) -> usize {
        self.num_params() * std::mem::size_of::<S>()
    }

    pub fn trainable_count(&self) -> usize {
        self.layers.iter().filter(|l| l.trainable).count()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { name: l.name.clone(), kind: l.kind, tensor: l.tensor.cast(), trainable: l.trainable })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Checks that `other` has the same layer names, kinds and shapes, in order.
    /// The error names the first mismatch.
    pub fn check_compatible(&self, other: &ParamSet<S>) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (i, (a, b)) in self.layers.iter().zip(&other.layers).enumerate() {
            if a.name != b.name || a.kind != b.kind || a.tensor.dims() != b.tensor.dims() {
                return Err(Error::Shape(format!(
                    "layer {i}: expected '{}' {:?} {:?}, found '{}' {:?} {:?}",
                    a.name,
                    a.kind,
                    a.tensor.dims(),
                    b.name,
                    b.kind,
                    b.tensor.dims()
                )));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.tensor.all_finite())
    }
}

/// Gradients aligned with a [`ParamSet`]; frozen layers carry `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<S = f32> {
    per_layer: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_for(params: &ParamSet<S>) -> Self {
        Self {
            per_layer: params
                .layers()
                .iter()
                .map(|l| l.trainable.then(|| vec![S::zero(); l.tensor.len()]))
                .collect(),
        }
    }

    pub fn get(&self, i: usize) -> Option<&[S]> {
        self.per_layer.get(i).and_then(|g| g.as_deref())
    }

    pub fn get_mut(&mut self, i: usize) -> Option<&mut [S]> {
        self.per_layer.get_mut(i).and_then(|g| g.as_deref_mut())
    }

    pub fn len(&self) -> usize {
        self.per_layer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer.is_empty()
    }

    pub fn add_assign(&mut self, other: &Grads<S>) {
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += *y;
                }
            }
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.per_layer.iter().flatten().all(|g| g.iter().all(|v| *v == S::zero()))
    }

    /// Euclidean norm over every trainable entry.
    pub fn l2_norm(&self) -> f64 {
        self.per_layer.iter().flatten().flatten().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns whether it clipped.
    pub fn clip_norm(&mut self, max_norm: f64) -> bool {
        let norm = self.l2_norm();
        if !(norm > max_norm) {
            return false;
        }
        let k = S::of(max_norm / norm);
        self.per_layer.iter_mut().flatten().flatten().for_each(|v| *v *= k);
        true
    }

    /// First layer index and value of a non-finite gradient entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, S)> {
        self.per_layer
            .iter()
            .enumerate()
            .find_map(|(i, g)| g.as_ref().and_then(|g| g.iter().find(|v| !v.is_finite()).map(|v| (i, *v))))
    }
}
