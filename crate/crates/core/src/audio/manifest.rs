use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" | "1" => Ok(Gender::Male),
            "female" | "f" | "0" => Ok(Gender::Female),
            other => Err(Error::Format(format!("unknown gender '{other}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

/// One row of the ingest manifest. Paths are resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub wav_path: PathBuf,
    pub transcript_path: PathBuf,
    pub phq8: u8,
    pub gender: Gender,
}

#[derive(Deserialize)]
struct Row {
    subject_id: String,
    wav_path: String,
    transcript_path: String,
    phq8: u8,
    gender: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        if row.phq8 > 24 {
            return Err(Error::Domain(format!("{}: PHQ-8 {} outside 0..=24", row.subject_id, row.phq8)));
        }
        out.push(ManifestEntry {
            wav_path: base.join(row.wav_path),
            transcript_path: base.join(row.transcript_path),
            phq8: row.phq8,
            gender: Gender::parse(&row.gender)?,
            subject_id: row.subject_id,
        });
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = out.iter().find(|e| !seen.insert(e.subject_id.clone())) {
        return Err(Error::Format(format!("duplicate subject id '{}' in manifest", dup.subject_id)));
    }
    Ok(out)
}

/// Writes a manifest with paths relative to `dir` (the manifest's directory).
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject_id", "wav_path", "transcript_path", "phq8", "gender"])?;
    for e in entries {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/");
        w.write_record([
            e.subject_id.clone(),
            rel(&e.wav_path),
            rel(&e.transcript_path),
            e.phq8.to_string(),
            e.gender.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
