//! Log-spectrogram image features.
//!
//! Pipeline per window: one-sided Hann power spectrogram, natural log with an
//! epsilon floor, corner-aligned bilinear resize to 224×224, then per-frame
//! standardization. Train-split frames can additionally be augmented.

mod augment;
mod cache;
mod image;
mod stft;

pub use augment::{augment, AugmentPolicy};
pub use cache::{read_feature_cache, write_feature_cache, FEATURE_CACHE_MAGIC, FEATURE_CACHE_VERSION};
pub use image::{log_scale, normalize, resize_bilinear};
pub use stft::{compute_spectrogram, StftConfig, WindowFn};

use serde::{Deserialize, Serialize};

use crate::audio::{AudioWindow, WindowOrigin};
use crate::error::{Error, Result};

/// Dense row-major real matrix. For spectrograms rows are frequency bins and
/// columns are time frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
}

/// One model input: a log-spectrogram image with provenance and label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFrame {
    pub pixels: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub origin: WindowOrigin,
    pub label: u32,
    pub split: SplitTag,
}

impl FeatureFrame {
    pub fn new(pixels: Matrix, origin: WindowOrigin, label: u32, split: SplitTag) -> Result<Self> {
        if let Some(i) = pixels.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite pixel at index {i}")));
        }
        Ok(Self { height: pixels.rows, width: pixels.cols, pixels: pixels.data, origin, label, split })
    }
}

/// Full window → frame pipeline configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub stft: StftConfig,
    pub out_height: usize,
    pub out_width: usize,
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { stft: StftConfig::default(), out_height: 224, out_width: 224, normalize: true }
    }
}

/// Runs spectrogram → log → resize (→ standardize) on one window.
pub fn featurize_window(window: &AudioWindow, cfg: &FeatureConfig, label: u32, split: SplitTag) -> Result<FeatureFrame> {
    let spec = compute_spectrogram(&window.samples, &cfg.stft)?;
    let logged = log_scale(&spec, cfg.stft.epsilon)?;
    let resized = resize_bilinear(&logged, cfg.out_height, cfg.out_width)?;
    let frame = FeatureFrame::new(resized, window.origin.clone(), label, split)?;
    Ok(if cfg.normalize { normalize(&frame) } else { frame })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_one_second_window_becomes_224_square() {
        let samples: Vec<f32> = (0..16000).map(|i| ((i as f32) * 0.05).sin() * 0.3).collect();
        let window = AudioWindow {
            samples,
            sample_rate: 16000,
            origin: WindowOrigin { subject_id: "x".into(), segment: 0, window: 0 },
            length_s: 1.0,
            hop_s: 0.1,
        };
        let frame = featurize_window(&window, &FeatureConfig::default(), 1, SplitTag::Train).unwrap();
        assert_eq!((frame.height, frame.width), (224, 224));
        assert_eq!(frame.pixels.len(), 224 * 224);
        assert!(frame.pixels.iter().all(|v| v.is_finite()));
    }
}
