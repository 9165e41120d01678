//! Audio ingestion: WAV decoding, transcript-driven participant segmentation
//! and fixed-length overlapping analysis windows.

mod manifest;
mod segment;
mod transcript;
mod wav;

pub use manifest::{read_manifest, write_manifest, Gender, ManifestEntry};
pub use segment::{extract_participant_segments, slice_windows, SegmentExtraction, WindowConfig};
pub use transcript::{normalize_transcript, parse_transcript, Speaker, TranscriptEntry};
pub use wav::{decode_wav, encode_wav_pcm16};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono PCM audio normalized to [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
    pub subject_id: String,
    label_phq8: Option<u8>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Format("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Format(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate, subject_id: String::new(), label_phq8: None })
    }

    pub fn with_subject(mut self, subject_id: impl Into<String>) -> Self {
        self.subject_id = subject_id.into();
        self
    }

    pub fn with_phq8(mut self, score: u8) -> Result<Self> {
        if score > 24 {
            return Err(Error::Domain(format!("PHQ-8 score {score} outside 0..=24")));
        }
        self.label_phq8 = Some(score);
        Ok(self)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn label_phq8(&self) -> Option<u8> {
        self.label_phq8
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Provenance of a window: which subject, which participant segment, which slot.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub subject_id: String,
    pub segment: u32,
    pub window: u32,
}

/// A fixed-length slice of a participant segment.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioWindow {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub origin: WindowOrigin,
    pub length_s: f64,
    pub hop_s: f64,
}

/// Counters accumulated while ingesting a corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub clips: usize,
    pub segments: usize,
    pub short_segments_skipped: usize,
    pub windows: usize,
    pub warnings: Vec<String>,
}

/// Converts seconds to a sample index, flooring, with a small guard against
/// products like `0.29 * 16000` landing just under an integer.
pub(crate) fn seconds_to_index(seconds: f64, rate: u32) -> usize {
    let x = seconds * f64::from(rate);
    if x <= 0.0 {
        0
    } else {
        (x + 1e-9).floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_invariants() {
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        assert!(AudioClip::new(vec![f32::NAN], 16000).is_err());
        let clip = AudioClip::new(vec![0.0; 16000], 16000).unwrap();
        assert!(clip.clone().with_phq8(25).is_err());
        assert_eq!(clip.with_phq8(24).unwrap().label_phq8(), Some(24));
    }

    #[test]
    fn index_rounding_guard() {
        assert_eq!(seconds_to_index(0.29, 16000), 4640);
        assert_eq!(seconds_to_index(1.0, 16000), 16000);
        assert_eq!(seconds_to_index(9.5, 16000), 152000);
    }
}
