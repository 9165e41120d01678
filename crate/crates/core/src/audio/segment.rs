use super::{seconds_to_index, AudioClip, AudioWindow, Speaker, TranscriptEntry, WindowOrigin};

/// Participant segments cut from a clip, plus any clipping/skip warnings.
#[derive(Clone, Debug, Default)]
pub struct SegmentExtraction {
    pub segments: Vec<AudioClip>,
    pub warnings: Vec<String>,
}

/// Cuts one clip per participant entry, `[floor(start·rate), floor(stop·rate))`.
/// Entries running past the end of the clip are clipped to it; entries that
/// start at or after the end are skipped. Both cases emit a warning.
pub fn extract_participant_segments(clip: &AudioClip, transcript: &[TranscriptEntry]) -> SegmentExtraction {
    let rate = clip.sample_rate();
    let n = clip.samples().len();
    let duration = clip.duration_s();
    let mut out = SegmentExtraction::default();
    for entry in transcript.iter().filter(|e| e.speaker == Speaker::Participant) {
        if entry.start_s >= duration {
            let msg = format!(
                "{}: participant entry [{}, {}) starts at or after clip end {duration:.3}s; skipped",
                clip.subject_id, entry.start_s, entry.stop_s
            );
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        if entry.stop_s > duration {
            let msg = format!(
                "{}: participant entry [{}, {}) clipped to clip end {duration:.3}s",
                clip.subject_id, entry.start_s, entry.stop_s
            );
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
        let start = seconds_to_index(entry.start_s, rate).min(n);
        let stop = seconds_to_index(entry.stop_s, rate).min(n);
        if stop <= start {
            continue;
        }
        let mut seg = AudioClip::new(clip.samples()[start..stop].to_vec(), rate)
            .expect("slice of a valid clip is valid")
            .with_subject(clip.subject_id.clone());
        if let Some(score) = clip.label_phq8() {
            seg = seg.with_phq8(score).expect("score already validated");
        }
        out.segments.push(seg);
    }
    out
}

/// Window geometry in seconds.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowConfig {
    pub length_s: f64,
    pub hop_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { length_s: 1.0, hop_s: 0.1 }
    }
}

impl WindowConfig {
    pub fn length_samples(&self, rate: u32) -> usize {
        (self.length_s * f64::from(rate)).round() as usize
    }

    pub fn hop_samples(&self, rate: u32) -> usize {
        ((self.hop_s * f64::from(rate)).round() as usize).max(1)
    }

    /// Number of windows a segment of `n` samples yields.
    pub fn count(&self, n: usize, rate: u32) -> usize {
        let (w, h) = (self.length_samples(rate), self.hop_samples(rate));
        if w == 0 || n < w {
            0
        } else {
            (n - w) / h + 1
        }
    }
}

/// Slices a segment into overlapping windows: window `i` covers
/// `[i·H, i·H + W)`. Segments shorter than one window yield nothing.
pub fn slice_windows(segment: &AudioClip, segment_index: usize, cfg: WindowConfig) -> Vec<AudioWindow> {
    let rate = segment.sample_rate();
    let (w, h) = (cfg.length_samples(rate), cfg.hop_samples(rate));
    (0..cfg.count(segment.samples().len(), rate))
        .map(|i| AudioWindow {
            samples: segment.samples()[i * h..i * h + w].to_vec(),
            sample_rate: rate,
            origin: WindowOrigin {
                subject_id: segment.subject_id.clone(),
                segment: segment_index as u32,
                window: i as u32,
            },
            length_s: cfg.length_s,
            hop_s: cfg.hop_s,
        })
        .collect()
}
