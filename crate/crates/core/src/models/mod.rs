//! The three architecture analogs, transfer (frozen backbone) handling, and
//! frame/clip prediction.

mod arch;
mod plan;
mod predict;

pub use arch::{build_model, ArchName, ArchSpec, Model, TransferMode};
pub use plan::{permute_axis, permute_group, unit_vectors, Axis, MatchGroup, MatchPlan, Member};
pub use predict::{majority_vote, predict_clip, ClipPrediction, FrameClassifier};
pub(crate) use predict::argmax as argmax_logits;
