//! Corpus → labelled spectrogram frames: manifest ingest, window selection
//! and featurization, plus the on-disk dataset artifact.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{
    decode_wav, extract_participant_segments, normalize_transcript, parse_transcript, read_manifest, slice_windows, AudioWindow, Gender,
    IngestStats, ManifestEntry, WindowConfig, WindowOrigin,
};
use crate::error::{Error, Result};
use crate::features::{featurize_window, read_feature_cache, write_feature_cache, FeatureConfig, FeatureFrame, SplitTag};
use crate::par::{self, Exec};

/// PHQ-8 cut-off for the depression label.
pub const DEPRESSION_CUTOFF: u8 = 5;
/// PHQ-8 cut-off for the high-severity label.
pub const SEVERITY_CUTOFF: u8 = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    pub phq8: u8,
    pub gender: Gender,
}

impl Subject {
    pub fn depressed(&self) -> bool {
        self.phq8 >= DEPRESSION_CUTOFF
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub window_s: f64,
    pub hop_s: f64,
    /// Windows kept per subject, evenly spaced over all of its windows.
    pub frames_per_subject: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { window_s: 1.0, hop_s: 0.1, frames_per_subject: 16 }
    }
}

impl IngestConfig {
    fn window(&self) -> Result<WindowConfig> {
        if !(self.window_s > 0.0 && self.hop_s > 0.0) || self.frames_per_subject == 0 {
            return Err(Error::Config(format!("invalid ingest settings {self:?}")));
        }
        Ok(WindowConfig { length_s: self.window_s, hop_s: self.hop_s })
    }
}

/// `k` evenly spaced indices out of `n` (all of them when `n ≤ k`).
pub fn evenly_spaced(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

pub struct IngestedSubject {
    pub subject: Subject,
    pub windows: Vec<AudioWindow>,
}

fn ingest_entry(entry: &ManifestEntry, window: WindowConfig, keep: usize) -> Result<(IngestedSubject, IngestStats)> {
    let bytes = fs::read(&entry.wav_path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", entry.wav_path.display())))?;
    let clip = decode_wav(&bytes)?.with_subject(entry.subject_id.clone()).with_phq8(entry.phq8)?;
    let text = fs::read_to_string(&entry.transcript_path)
        .map_err(|e| Error::MissingArtifact(format!("{}: {e}", entry.transcript_path.display())))?;
    let (rows, mut warnings) = parse_transcript(&text)?;
    let extraction = extract_participant_segments(&clip, &normalize_transcript(rows));
    warnings.extend(extraction.warnings);
    let mut stats = IngestStats { clips: 1, segments: extraction.segments.len(), warnings, ..Default::default() };
    let mut all = Vec::new();
    for (i, seg) in extraction.segments.iter().enumerate() {
        let w = slice_windows(seg, i, window);
        if w.is_empty() {
            stats.short_segments_skipped += 1;
        }
        all.extend(w);
    }
    stats.windows = all.len();
    let picked = evenly_spaced(all.len(), keep);
    let mut slots: Vec<Option<AudioWindow>> = all.into_iter().map(Some).collect();
    let windows = picked.into_iter().map(|i| slots[i].take().expect("distinct indices")).collect();
    let subject = Subject { subject_id: entry.subject_id.clone(), phq8: entry.phq8, gender: entry.gender };
    Ok((IngestedSubject { subject, windows }, stats))
}

/// Reads every manifest entry and keeps `frames_per_subject` windows each.
pub fn ingest_manifest(manifest: &Path, cfg: &IngestConfig, exec: Exec) -> Result<(Vec<IngestedSubject>, IngestStats)> {
    let window = cfg.window()?;
    let entries = read_manifest(manifest)?;
    let results = par::map(exec, &entries, |e| ingest_entry(e, window, cfg.frames_per_subject));
    let mut total = IngestStats::default();
    let mut out = Vec::with_capacity(entries.len());
    for r in results {
        let (s, st) = r?;
        if s.windows.is_empty() {
            let msg = format!("{}: no participant window of {} s", s.subject.subject_id, cfg.window_s);
            log::warn!("{msg}");
            total.warnings.push(msg);
        }
        total.clips += st.clips;
        total.segments += st.segments;
        total.short_segments_skipped += st.short_segments_skipped;
        total.windows += st.windows;
        total.warnings.extend(st.warnings);
        out.push(s);
    }
    Ok((out, total))
}

/// Subjects and their frames, frames grouped by subject in subject order.
/// Frame labels hold the depression label; tasks relabel from [`Subject`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    pub frames: Vec<FeatureFrame>,
}

impl Dataset {
    pub fn featurize(ingested: &[IngestedSubject], cfg: &FeatureConfig, exec: Exec) -> Result<Self> {
        let jobs: Vec<(&Subject, &AudioWindow)> = ingested.iter().flat_map(|s| s.windows.iter().map(move |w| (&s.subject, w))).collect();
        let frames = par::map(exec, &jobs, |(s, w)| featurize_window(w, cfg, s.depressed() as u32, SplitTag::Train));
        let ds = Dataset {
            subjects: ingested.iter().map(|s| s.subject.clone()).collect(),
            frames: frames.into_iter().collect::<Result<_>>()?,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let index = self.subject_index();
        if index.len() != self.subjects.len() {
            return Err(Error::Corrupt { offset: 0, message: "duplicate subject ids".into() });
        }
        for f in &self.frames {
            if !index.contains_key(f.origin.subject_id.as_str()) {
                return Err(Error::Corrupt { offset: 0, message: format!("frame of unknown subject '{}'", f.origin.subject_id) });
            }
        }
        Ok(())
    }

    pub fn subject_index(&self) -> HashMap<&str, usize> {
        self.subjects.iter().enumerate().map(|(i, s)| (s.subject_id.as_str(), i)).collect()
    }

    /// Subject position of every frame.
    pub fn frame_subjects(&self) -> Vec<usize> {
        let index = self.subject_index();
        self.frames.iter().map(|f| index[f.origin.subject_id.as_str()]).collect()
    }

    pub fn origins(&self) -> Vec<&WindowOrigin> {
        self.frames.iter().map(|f| &f.origin).collect()
    }

    pub const FRAMES_FILE: &'static str = "frames.fvfc";
    pub const SUBJECTS_FILE: &'static str = "subjects.json";

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(Self::FRAMES_FILE), write_feature_cache(&self.frames)?)?;
        fs::write(dir.join(Self::SUBJECTS_FILE), serde_json::to_string_pretty(&self.subjects)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| fs::read(dir.join(name)).map_err(|e| Error::MissingArtifact(format!("{}: {e}", dir.join(name).display())));
        let frames = read_feature_cache(&read(Self::FRAMES_FILE)?)?;
        let subjects = serde_json::from_slice(&read(Self::SUBJECTS_FILE)?)?;
        let ds = Dataset { subjects, frames };
        ds.validate()?;
        Ok(ds)
    }
}

/// Manifest → dataset in one call.
pub fn build_dataset(manifest: &Path, ingest: &IngestConfig, features: &FeatureConfig, exec: Exec) -> Result<(Dataset, IngestStats)> {
    let (subjects, stats) = ingest_manifest(manifest, ingest, exec)?;
    Ok((Dataset::featurize(&subjects, features, exec)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evenly_spaced_picks() {
        assert_eq!(evenly_spaced(3, 5), vec![0, 1, 2]);
        assert_eq!(evenly_spaced(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(evenly_spaced(7, 3), vec![0, 2, 4]);
    }
}
