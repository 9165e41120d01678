//! Minimal CNN engine: a fixed set of layer kinds evaluated per sample,
//! hand-written backward passes, cross-entropy, momentum SGD with step decay,
//! and a versioned checkpoint format.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod loss;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Act, ForwardPass, Network, Node, Part};
pub use loss::{cross_entropy, softmax, LossValue};
pub use optim::{lr_at_epoch, sgd_step, OptState, SgdConfig};
pub use params::{Grads, Layer, LayerKind, ParamSet};
pub use tensor::Tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

/// Floating-point element type: `f32` for training and inference, `f64` for
/// gradient checking.
pub trait Scalar:
    num_traits::Float + Default + Debug + Send + Sync + Sum + AddAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}
