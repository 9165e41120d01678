//! Synthetic interview corpus in the on-disk layout the ingest stage reads.
//!
//! Each subject is a harmonic voice whose spectral roll-off steepens and whose
//! breath noise fades as the PHQ-8 score rises; pitch depends on gender.
//! Interviewer turns use a fixed, different voice and are dropped by ingest.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{
    decode_wav, encode_wav_pcm16, extract_participant_segments, normalize_transcript, parse_transcript, read_manifest, write_manifest,
    Gender, ManifestEntry,
};
use crate::error::{Error, Result};
use crate::features::{compute_spectrogram, StftConfig};
use crate::par::{self, Exec};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub sample_rate: u32,
    /// Participant turns per interview.
    pub turns: usize,
    pub turn_s: (f64, f64),
    pub question_s: (f64, f64),
    /// Share of depressed subjects with a mild (5..=9) score.
    pub mild_fraction: f64,
    pub male_f0: f64,
    pub female_f0: f64,
    /// Spectral roll-off above 500 Hz in dB/octave: `base + slope · PHQ`.
    pub rolloff_base: f64,
    pub rolloff_per_phq: f64,
    /// Per-subject random effects (standard deviations).
    pub rolloff_sd: f64,
    pub f0_sd: f64,
    pub breath_level: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 50,
            sample_rate: 16_000,
            turns: 5,
            turn_s: (1.8, 2.8),
            question_s: (0.8, 1.4),
            mild_fraction: 0.12,
            male_f0: 115.0,
            female_f0: 205.0,
            rolloff_base: 5.0,
            rolloff_per_phq: 0.5,
            rolloff_sd: 0.5,
            f0_sd: 0.08,
            breath_level: 0.06,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_subjects >= 4
            && self.sample_rate >= 8_000
            && self.turns >= 1
            && self.turn_s.0 >= 1.0
            && self.turn_s.1 >= self.turn_s.0
            && self.question_s.0 > 0.0
            && self.question_s.1 >= self.question_s.0
            && (0.0..=1.0).contains(&self.mild_fraction)
            && self.male_f0 > 40.0
            && self.female_f0 > 40.0
            && self.rolloff_sd >= 0.0
            && self.f0_sd >= 0.0
            && self.breath_level >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid synth spec {self:?}")));
        }
        Ok(())
    }
}

/// Demographics and score of one synthetic subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectPlan {
    pub subject_id: String,
    pub gender: Gender,
    pub phq8: u8,
}

/// Class and gender balanced subject list: half depressed, half male, with
/// the odd subject of each depressed/non-depressed class split across genders.
pub fn plan_subjects(spec: &SynthSpec, master: u64) -> Result<Vec<SubjectPlan>> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(master, "synth-plan", 0));
    let n = spec.n_subjects;
    let n_dep = n / 2;
    let males = n / 2;
    let male_dep = n_dep.div_ceil(2);
    let n_mild = (n_dep as f64 * spec.mild_fraction).round() as usize;
    let mut dep_scores: Vec<u8> = (0..n_dep).map(|i| if i < n_mild { rng.random_range(5..=9) } else { rng.random_range(10..=24) }).collect();
    dep_scores.shuffle(&mut rng);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let depressed = i < n_dep;
        let male = if depressed { i < male_dep } else { i - n_dep < males - male_dep };
        let phq8 = if depressed { dep_scores[i] } else { rng.random_range(0..=4) };
        out.push((male, phq8));
    }
    out.shuffle(&mut rng);
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(i, (male, phq8))| SubjectPlan {
            subject_id: format!("S{i:03}"),
            gender: if male { Gender::Male } else { Gender::Female },
            phq8,
        })
        .collect())
}

struct Voice {
    f0: f64,
    rolloff: f64,
    breath: f64,
}

impl Voice {
    fn for_subject(spec: &SynthSpec, plan: &SubjectPlan, rng: &mut ChaCha8Rng) -> Voice {
        let base = if plan.gender == Gender::Male { spec.male_f0 } else { spec.female_f0 };
        let z = Normal::new(0.0, 1.0).expect("unit normal");
        Voice {
            f0: base * (spec.f0_sd * z.sample(rng)).exp(),
            rolloff: (spec.rolloff_base + spec.rolloff_per_phq * plan.phq8 as f64 + spec.rolloff_sd * z.sample(rng)).max(0.5),
            breath: spec.breath_level * (-(plan.phq8 as f64) / 8.0).exp() * (0.25 * z.sample(rng)).exp(),
        }
    }

    fn interviewer() -> Voice {
        Voice { f0: 165.0, rolloff: 9.0, breath: 0.02 }
    }

    /// Envelope gain at `f` Hz: flat to 500 Hz, then `rolloff` dB/octave.
    fn gain(&self, f: f64) -> f64 {
        if f <= 500.0 {
            1.0
        } else {
            10f64.powf(-self.rolloff * (f / 500.0).log2() / 20.0)
        }
    }

    fn render(&self, seconds: f64, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let n = (seconds * rate as f64) as usize;
        let nyquist = rate as f64 / 2.0;
        let n_harm = ((0.95 * nyquist) / (self.f0 * 1.1)).floor().max(1.0) as usize;
        let gains: Vec<f64> = (1..=n_harm).map(|k| self.gain(k as f64 * self.f0)).collect();
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let (vib_phase, syl_phase): (f64, f64) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
        let syl_rate = rng.random_range(3.5..5.0);
        let mut phase = rng.random_range(0.0..TAU);
        let mut drift = 0.0f64;
        let mut prev_noise = 0.0f64;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / rate as f64;
            drift = 0.999 * drift + 0.002 * unit.sample(rng);
            let f0 = self.f0 * (1.0 + 0.03 * (TAU * 0.7 * t + vib_phase).sin() + drift);
            phase = (phase + TAU * f0 / rate as f64) % TAU;
            let (s1, c1) = phase.sin_cos();
            let (mut s, mut c) = (s1, c1);
            let mut voiced = 0.0;
            for (k, g) in gains.iter().enumerate() {
                if (k + 1) as f64 * f0 >= nyquist {
                    break;
                }
                voiced += g * s;
                (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
            }
            let white = unit.sample(rng);
            let breath = white - 0.9 * prev_noise;
            prev_noise = white;
            let env = (0.55 + 0.45 * (TAU * syl_rate * t + syl_phase).sin()).max(0.1);
            out.push(env * (0.25 * voiced + self.breath * breath));
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
        out.iter().map(|v| (0.5 * v / peak) as f32).collect()
    }
}

/// Audio samples and tab-separated transcript for one subject.
pub fn render_subject(spec: &SynthSpec, plan: &SubjectPlan, master: u64, index: u64) -> (Vec<f32>, String) {
    let mut rng = seed::rng(seed::derive(master, "synth-subject", index));
    let rate = spec.sample_rate;
    let voice = Voice::for_subject(spec, plan, &mut rng);
    let interviewer = Voice::interviewer();
    let mut audio: Vec<f64> = Vec::new();
    let mut transcript = String::from("start_time\tstop_time\tspeaker\tvalue\n");
    let silence = |audio: &mut Vec<f64>, s: f64, rng: &mut ChaCha8Rng| {
        let n = (s * rate as f64) as usize;
        audio.extend((0..n).map(|_| rng.random_range(-1e-3..1e-3)));
    };
    let cursor = |audio: &Vec<f64>| audio.len() as f64 / rate as f64;
    silence(&mut audio, 0.3, &mut rng);
    for turn in 0..spec.turns {
        let q = rng.random_range(spec.question_s.0..=spec.question_s.1);
        let start = cursor(&audio);
        audio.extend(interviewer.render(q, rate, &mut rng).into_iter().map(f64::from));
        transcript.push_str(&format!("{start:.3}\t{:.3}\tEllie\tquestion {turn}\n", cursor(&audio)));
        silence(&mut audio, 0.25, &mut rng);
        let a = rng.random_range(spec.turn_s.0..=spec.turn_s.1);
        let start = cursor(&audio);
        audio.extend(voice.render(a, rate, &mut rng).into_iter().map(|v| f64::from(v) * 0.8));
        transcript.push_str(&format!("{start:.3}\t{:.3}\tParticipant\tanswer {turn}\n", cursor(&audio)));
        silence(&mut audio, 0.3, &mut rng);
    }
    let noise = |rng: &mut ChaCha8Rng| rng.random_range(-2e-3..2e-3);
    let samples = audio.iter().map(|v| (v + noise(&mut rng)).clamp(-1.0, 1.0) as f32).collect();
    (samples, transcript)
}

/// Writes `manifest.csv`, `audio/<id>_AUDIO.wav` and
/// `transcripts/<id>_TRANSCRIPT.csv` under `out_dir`.
pub fn synth_corpus(spec: &SynthSpec, master: u64, out_dir: &Path, exec: Exec) -> Result<Vec<ManifestEntry>> {
    let plans = plan_subjects(spec, master)?;
    fs::create_dir_all(out_dir.join("audio"))?;
    fs::create_dir_all(out_dir.join("transcripts"))?;
    let written: Vec<Result<ManifestEntry>> = par::map_range(exec, plans.len(), |i| {
        let plan = &plans[i];
        let (samples, transcript) = render_subject(spec, plan, master, i as u64);
        let wav = PathBuf::from("audio").join(format!("{}_AUDIO.wav", plan.subject_id));
        let txt = PathBuf::from("transcripts").join(format!("{}_TRANSCRIPT.csv", plan.subject_id));
        fs::write(out_dir.join(&wav), encode_wav_pcm16(&samples, spec.sample_rate))?;
        fs::write(out_dir.join(&txt), transcript)?;
        Ok(ManifestEntry { subject_id: plan.subject_id.clone(), wav_path: wav, transcript_path: txt, phq8: plan.phq8, gender: plan.gender })
    });
    let entries = written.into_iter().collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}

/// Share of participant-speech power above `split_hz`, per subject.
pub fn high_band_ratio(entry: &ManifestEntry, split_hz: f64) -> Result<f64> {
    let clip = decode_wav(&fs::read(&entry.wav_path)?)?;
    let (rows, _) = parse_transcript(&fs::read_to_string(&entry.transcript_path)?)?;
    let segments = extract_participant_segments(&clip, &normalize_transcript(rows)).segments;
    let cfg = StftConfig::default();
    let split_bin = (split_hz / clip.sample_rate() as f64 * cfg.segment_len as f64).round() as usize;
    let (mut high, mut total) = (0.0f64, 0.0f64);
    for seg in &segments {
        if seg.samples().len() < cfg.segment_len {
            continue;
        }
        let spec = compute_spectrogram(seg.samples(), &cfg)?;
        for r in 0..spec.rows {
            let e: f64 = (0..spec.cols).map(|c| spec.get(r, c) as f64).sum();
            total += e;
            if r >= split_bin {
                high += e;
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::Domain(format!("subject {} has no participant speech", entry.subject_id)));
    }
    Ok(high / total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub accuracy: f64,
    pub threshold: f64,
    pub ratios: Vec<(String, f64, bool)>,
}

/// Best single-threshold rule "high-band ratio below t ⇒ depressed" over the
/// corpus (PHQ-8 ≥ 5). A separability check, so it is fit and scored in-sample.
pub fn spectral_oracle(manifest: &Path, exec: Exec) -> Result<OracleReport> {
    let entries = read_manifest(manifest)?;
    let ratios = par::map(exec, &entries, |e| high_band_ratio(e, 2000.0));
    let mut rows = Vec::with_capacity(entries.len());
    for (e, r) in entries.iter().zip(ratios) {
        rows.push((e.subject_id.clone(), r?, e.phq8 >= 5));
    }
    let mut cuts: Vec<f64> = rows.iter().map(|r| r.1).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.push(f64::INFINITY);
    let mut best = (0usize, 0.0);
    for &t in &cuts {
        let correct = rows.iter().filter(|(_, r, dep)| (*r < t) == *dep).count();
        if correct > best.0 {
            best = (correct, t);
        }
    }
    Ok(OracleReport { accuracy: best.0 as f64 / rows.len() as f64, threshold: best.1, ratios: rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_is_balanced() {
        let plans = plan_subjects(&SynthSpec::default(), 7).unwrap();
        assert_eq!(plans.len(), 50);
        let dep = |p: &&SubjectPlan| p.phq8 >= 5;
        assert_eq!(plans.iter().filter(dep).count(), 25);
        assert_eq!(plans.iter().filter(|p| p.gender == Gender::Male).count(), 25);
        assert_eq!(plans.iter().filter(|p| p.gender == Gender::Male && p.phq8 >= 5).count(), 13);
        assert_eq!(plans.iter().filter(|p| p.phq8 >= 10).count(), 22);
        assert!(plans.iter().all(|p| p.phq8 <= 24));
    }

    #[test]
    fn rendering_is_seeded() {
        let spec = SynthSpec { turns: 1, ..SynthSpec::default() };
        let plans = plan_subjects(&spec, 1).unwrap();
        let a = render_subject(&spec, &plans[0], 1, 0);
        assert_eq!(a, render_subject(&spec, &plans[0], 1, 0));
        assert_ne!(a.0, render_subject(&spec, &plans[0], 2, 0).0);
        assert!(a.0.iter().all(|v| v.abs() <= 1.0));
        assert_eq!(a.1.lines().count(), 3);
    }

    #[test]
    fn rolloff_lowers_high_band() {
        let mut rng = seed::rng(0);
        let ratio = |rolloff: f64, rng: &mut ChaCha8Rng| {
            let v = Voice { f0: 150.0, rolloff, breath: 0.0 };
            let x = v.render(1.0, 16_000, rng);
            let s = compute_spectrogram(&x, &StftConfig::default()).unwrap();
            let e = |lo: usize, hi: usize| (lo..hi).flat_map(|r| (0..s.cols).map(move |c| (r, c))).map(|(r, c)| s.get(r, c) as f64).sum::<f64>();
            e(128, 513) / e(0, 513)
        };
        assert!(ratio(4.0, &mut rng) > 2.0 * ratio(10.0, &mut rng));
    }

    #[test]
    fn too_few_subjects_rejected() {
        assert!(plan_subjects(&SynthSpec { n_subjects: 2, ..SynthSpec::default() }, 0).is_err());
    }
}
