use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    Participant,
    Interviewer,
}

impl Speaker {
    /// "Participant" (any case) is the participant; every other label is the interviewer.
    pub fn from_label(label: &str) -> Self {
        if label.trim().eq_ignore_ascii_case("participant") {
            Speaker::Participant
        } else {
            Speaker::Interviewer
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub start_s: f64,
    pub stop_s: f64,
    pub speaker: Speaker,
}

impl TranscriptEntry {
    pub fn new(start_s: f64, stop_s: f64, speaker: Speaker) -> Result<Self> {
        if !(start_s.is_finite() && stop_s.is_finite()) || start_s < 0.0 || stop_s <= start_s {
            return Err(Error::Format(format!("invalid transcript interval [{start_s}, {stop_s})")));
        }
        Ok(Self { start_s, stop_s, speaker })
    }
}

/// Parses a transcript with columns `start_time, stop_time, speaker, value`.
/// Comma and tab delimiters are both accepted. Rows with an invalid interval
/// are skipped with a warning. The result is normalized.
pub fn parse_transcript(text: &str) -> Result<(Vec<TranscriptEntry>, Vec<String>)> {
    let first_line = text.lines().next().unwrap_or_default();
    let delimiter = if first_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Format(format!("transcript missing column '{name}'")))
    };
    let (c_start, c_stop, c_speaker) = (col("start_time")?, col("stop_time")?, col("speaker")?);
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or_default();
        let parse = |c: usize| {
            field(c)
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: bad number '{}'", row + 1, field(c))))
        };
        let (start, stop) = (parse(c_start)?, parse(c_stop)?);
        match TranscriptEntry::new(start, stop, Speaker::from_label(field(c_speaker))) {
            Ok(e) => entries.push(e),
            Err(e) => {
                let msg = format!("row {}: {e}; skipped", row + 1);
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    Ok((normalize_transcript(entries), warnings))
}

/// Sorts entries by start time and merges overlapping or touching entries of
/// the same speaker.
pub fn normalize_transcript(mut entries: Vec<TranscriptEntry>) -> Vec<TranscriptEntry> {
    entries.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.stop_s.total_cmp(&b.stop_s)));
    let mut out: Vec<TranscriptEntry> = Vec::with_capacity(entries.len());
    for e in entries {
        if let Some(prev) = out.iter_mut().rev().find(|p| p.speaker == e.speaker) {
            if e.start_s < prev.stop_s {
                prev.stop_s = prev.stop_s.max(e.stop_s);
                continue;
            }
        }
        out.push(e);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comma_and_tab() {
        let csv = "start_time,stop_time,speaker,value\n1.0,3.0,Participant,hello\n3.0,5.0,Ellie,how are you\n";
        let (e, w) = parse_transcript(csv).unwrap();
        assert!(w.is_empty());
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].speaker, Speaker::Participant);
        assert_eq!(e[1].speaker, Speaker::Interviewer);

        let tsv = "start_time\tstop_time\tspeaker\tvalue\n2.5\t4.0\tPARTICIPANT\tyes\n";
        let (e, _) = parse_transcript(tsv).unwrap();
        assert_eq!(e, vec![TranscriptEntry::new(2.5, 4.0, Speaker::Participant).unwrap()]);
    }

    #[test]
    fn invalid_rows_are_skipped_with_warning() {
        let csv = "start_time,stop_time,speaker,value\n3.0,3.0,Participant,x\n4.0,5.0,Participant,y\n";
        let (e, w) = parse_transcript(csv).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn missing_column_is_error() {
        assert!(parse_transcript("start_time,speaker\n1,Participant\n").is_err());
    }

    #[test]
    fn overlapping_same_speaker_entries_merge() {
        let p = Speaker::Participant;
        let merged = normalize_transcript(vec![
            TranscriptEntry::new(2.0, 4.0, p).unwrap(),
            TranscriptEntry::new(1.0, 2.5, p).unwrap(),
            TranscriptEntry::new(5.0, 6.0, p).unwrap(),
        ]);
        assert_eq!(merged.len(), 2);
        assert_eq!((merged[0].start_s, merged[0].stop_s), (1.0, 4.0));
    }
}
