use serde::{Deserialize, Serialize};

use super::arch::Model;
use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::nn::{Part, Tensor};
use crate::par::{self, Exec};

/// Anything that assigns a class to each flattened input frame.
pub trait FrameClassifier {
    fn num_classes(&self) -> usize;
    fn classify_frames(&self, frames: &[&[f32]], exec: Exec) -> Result<Vec<usize>>;
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

impl FrameClassifier for Model {
    fn num_classes(&self) -> usize {
        self.net.num_classes
    }

    fn classify_frames(&self, frames: &[&[f32]], exec: Exec) -> Result<Vec<usize>> {
        let out = par::map(exec, frames, |f| {
            let logits = self.net.forward_sample(&self.params, Part::Full, f)?;
            Ok(argmax(&logits))
        });
        out.into_iter().collect()
    }
}

impl Model {
    /// Logits `[B, C]` for a batch of frames.
    pub fn logits(&self, frames: &[&[f32]], exec: Exec) -> Result<Tensor<f32>> {
        let per = self.net.input_shape.0 * self.net.input_shape.1 * self.net.input_shape.2;
        let mut data = Vec::with_capacity(frames.len() * per);
        frames.iter().for_each(|f| data.extend_from_slice(f));
        let batch = Tensor::new(vec![frames.len(), per], data)
            .map_err(|_| Error::Shape(format!("frames do not all have {per} values")))?;
        Ok(self.net.forward_pass(&self.params, Part::Full, &batch, false, exec)?.logits)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub label: usize,
    /// Frame count per class.
    pub votes: Vec<usize>,
    pub frame_labels: Vec<usize>,
}

/// Majority vote over frame labels; ties go to the lowest class index.
pub fn majority_vote(frame_labels: Vec<usize>, num_classes: usize) -> Result<ClipPrediction> {
    if frame_labels.is_empty() {
        return Err(Error::Contract("cannot vote on a clip with no frames".into()));
    }
    let mut votes = vec![0usize; num_classes];
    for &l in &frame_labels {
        *votes.get_mut(l).ok_or_else(|| Error::Contract(format!("frame label {l} out of {num_classes} classes")))? += 1;
    }
    let mut label = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[label] {
            label = c;
        }
    }
    Ok(ClipPrediction { label, votes, frame_labels })
}

/// Classifies every frame of one clip and takes the majority vote.
pub fn predict_clip<C: FrameClassifier + ?Sized>(classifier: &C, frames: &[FeatureFrame], exec: Exec) -> Result<ClipPrediction> {
    let views: Vec<&[f32]> = frames.iter().map(|f| f.pixels.as_slice()).collect();
    let labels = classifier.classify_frames(&views, exec)?;
    majority_vote(labels, classifier.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_majority_and_tie() {
        assert_eq!(majority_vote(vec![1, 1, 0], 2).unwrap().label, 1);
        assert_eq!(majority_vote(vec![1, 0, 1, 0], 2).unwrap().label, 0);
        assert_eq!(majority_vote(vec![1, 0, 1, 0], 2).unwrap().votes, vec![2, 2]);
        assert!(majority_vote(vec![], 2).is_err());
        assert!(majority_vote(vec![3], 2).is_err());
    }

    #[test]
    fn argmax_lowest_on_tie() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
