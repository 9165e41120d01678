//! Permutation symmetry of a network.
//!
//! A [`MatchGroup`] is a set of hidden units (conv channels or dense neurons)
//! that can be reordered without changing the function the network computes,
//! provided every tensor touching them is reordered consistently: producers
//! along their output axis, consumers along their input axis. Residual
//! streams form one group with several producers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    /// Leading axis (rows of a dense weight, output channels of a conv,
    /// entries of a bias or affine vector).
    Out,
    /// Second axis (input features / input channels).
    In,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub layer: usize,
    pub axis: Axis,
    pub offset: usize,
    /// Groups feeding the other axis of this tensor. A producer row is only
    /// comparable across clients once all of these have been aligned.
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchGroup {
    pub name: String,
    pub size: usize,
    pub producers: Vec<Member>,
    pub consumers: Vec<Member>,
}

impl MatchGroup {
    pub fn members(&self) -> impl Iterator<Item = &Member> {
        self.producers.iter().chain(&self.consumers)
    }

    /// Whether every tensor in the group is trainable in `params`.
    pub fn is_trainable<S: Scalar>(&self, params: &ParamSet<S>) -> bool {
        self.members().all(|m| params.layer(m.layer).trainable)
    }
}

/// Groups in forward (input → output) order of their first producer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchPlan {
    pub groups: Vec<MatchGroup>,
}

/// Reorders `len = perm.len()` slots starting at `offset` along `axis`:
/// new slot `i` takes old slot `perm[i]`.
pub fn permute_axis<S: Scalar>(params: &mut ParamSet<S>, member: &Member, perm: &[usize]) -> Result<()> {
    let layer = params.layer_mut(member.layer);
    let dims = layer.tensor.dims().to_vec();
    let name = layer.name.clone();
    let data = layer.tensor.data_mut();
    let n = perm.len();
    match member.axis {
        Axis::Out => {
            let row = dims.iter().skip(1).product::<usize>();
            if member.offset + n > dims[0] {
                return Err(Error::Shape(format!("permutation of {n} rows at {} exceeds '{name}' {dims:?}", member.offset)));
            }
            let old: Vec<S> = data[member.offset * row..(member.offset + n) * row].to_vec();
            for (i, &p) in perm.iter().enumerate() {
                data[(member.offset + i) * row..(member.offset + i + 1) * row].copy_from_slice(&old[p * row..(p + 1) * row]);
            }
        }
        Axis::In => {
            if dims.len() < 2 || member.offset + n > dims[1] {
                return Err(Error::Shape(format!("permutation of {n} columns at {} exceeds '{name}' {dims:?}", member.offset)));
            }
            let inner = dims.iter().skip(2).product::<usize>();
            let stride = dims[1] * inner;
            for o in 0..dims[0] {
                let base = o * stride + member.offset * inner;
                let old: Vec<S> = data[base..base + n * inner].to_vec();
                for (i, &p) in perm.iter().enumerate() {
                    data[base + i * inner..base + (i + 1) * inner].copy_from_slice(&old[p * inner..(p + 1) * inner]);
                }
            }
        }
    }
    Ok(())
}

/// Applies `perm` to every member of `group`.
pub fn permute_group<S: Scalar>(params: &mut ParamSet<S>, group: &MatchGroup, perm: &[usize]) -> Result<()> {
    if perm.len() != group.size {
        return Err(Error::Shape(format!("group '{}' has {} units, permutation has {}", group.name, group.size, perm.len())));
    }
    for m in group.members() {
        permute_axis(params, m, perm)?;
    }
    Ok(())
}

/// Per-unit feature vectors of a group: the concatenated producer rows of
/// members whose input groups all satisfy `aligned`.
pub fn unit_vectors<S: Scalar>(params: &ParamSet<S>, group: &MatchGroup, aligned: impl Fn(usize) -> bool) -> Vec<Vec<f64>> {
    let usable: Vec<&Member> = group.producers.iter().filter(|m| m.inputs.iter().all(|&g| aligned(g))).collect();
    (0..group.size)
        .map(|i| {
            let mut v = Vec::new();
            for m in &usable {
                let t = &params.layer(m.layer).tensor;
                v.extend(t.row(m.offset + i).iter().map(|x| x.f64()));
            }
            v
        })
        .collect()
}
