use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureFrame, SplitTag};
use crate::error::{Error, Result};

/// Train-time augmentation: a random horizontal (time) shift of up to
/// `max_shift_frac · width` columns with edge replication, then additive
/// Gaussian pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub max_shift_frac: f64,
    pub noise_sd: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { max_shift_frac: 0.1, noise_sd: 0.05 }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self { max_shift_frac: 0.0, noise_sd: 0.0 }
    }
}

pub fn augment<R: Rng + ?Sized>(frame: &FeatureFrame, rng: &mut R, policy: &AugmentPolicy) -> Result<FeatureFrame> {
    if frame.split != SplitTag::Train {
        return Err(Error::Contract(format!(
            "augmentation requested for a {:?} frame from subject {}",
            frame.split, frame.origin.subject_id
        )));
    }
    if !(0.0..=1.0).contains(&policy.max_shift_frac) || !(policy.noise_sd >= 0.0) {
        return Err(Error::Config(format!("invalid augmentation policy {policy:?}")));
    }
    let (h, w) = (frame.height, frame.width);
    let max_shift = (policy.max_shift_frac * w as f64).floor() as i64;
    let shift = if max_shift > 0 { rng.random_range(-max_shift..=max_shift) } else { 0 };
    let mut pixels = Vec::with_capacity(h * w);
    for r in 0..h {
        let row = &frame.pixels[r * w..(r + 1) * w];
        for c in 0..w as i64 {
            let src = (c - shift).clamp(0, w as i64 - 1) as usize;
            pixels.push(row[src]);
        }
    }
    if policy.noise_sd > 0.0 {
        let normal = Normal::new(0.0, policy.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
        for p in &mut pixels {
            *p += normal.sample(rng) as f32;
        }
    }
    Ok(FeatureFrame { pixels, ..frame.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::WindowOrigin;
    use crate::features::Matrix;

    fn sample_frame(split: SplitTag) -> FeatureFrame {
        let px: Vec<f32> = (0..20 * 30).map(|i| (i as f32 * 0.1).sin()).collect();
        FeatureFrame::new(Matrix::new(20, 30, px).unwrap(), WindowOrigin::default(), 1, split).unwrap()
    }

    #[test]
    fn identity_policy_is_identity() {
        let f = sample_frame(SplitTag::Train);
        let out = augment(&f, &mut crate::seed::rng(1), &AugmentPolicy::identity()).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn deterministic_under_seed() {
        let f = sample_frame(SplitTag::Train);
        let p = AugmentPolicy::default();
        let a = augment(&f, &mut crate::seed::rng(42), &p).unwrap();
        let b = augment(&f, &mut crate::seed::rng(42), &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, f);
    }

    #[test]
    fn val_frames_rejected_and_untouched() {
        let f = sample_frame(SplitTag::Val);
        let before = f.clone();
        assert!(matches!(augment(&f, &mut crate::seed::rng(1), &AugmentPolicy::default()), Err(Error::Contract(_))));
        assert_eq!(f, before);
    }

    #[test]
    fn shift_moves_columns() {
        let f = sample_frame(SplitTag::Train);
        let p = AugmentPolicy { max_shift_frac: 0.1, noise_sd: 0.0 };
        for seed in 0..20 {
            let out = augment(&f, &mut crate::seed::rng(seed), &p).unwrap();
            // every output row is a shifted copy of the input row, shift ≤ 3 columns
            let row_in = &f.pixels[0..30];
            let row_out = &out.pixels[0..30];
            let ok = (-3i64..=3).any(|s| {
                (0..30i64).all(|c| row_out[c as usize] == row_in[(c - s).clamp(0, 29) as usize])
            });
            assert!(ok, "seed {seed}");
        }
    }
}
