use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    #[default]
    Hann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub segment_len: usize,
    pub overlap: usize,
    pub window_fn: WindowFn,
    pub epsilon: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { segment_len: 1024, overlap: 512, window_fn: WindowFn::Hann, epsilon: 1e-10 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 2 || !self.segment_len.is_power_of_two() {
            return Err(Error::Config(format!("segment_len {} must be a power of two ≥ 2", self.segment_len)));
        }
        if self.overlap >= self.segment_len {
            return Err(Error::Config(format!("overlap {} must be < segment_len {}", self.overlap, self.segment_len)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.segment_len / 2 + 1
    }

    pub fn time_frames(&self, n: usize) -> usize {
        if n < self.segment_len {
            0
        } else {
            (n - self.overlap) / (self.segment_len - self.overlap)
        }
    }

    fn window(&self) -> Vec<f64> {
        let n = self.segment_len as f64;
        match self.window_fn {
            // periodic Hann, the usual choice for spectral analysis
            WindowFn::Hann => (0..self.segment_len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos()).collect(),
        }
    }
}

/// One-sided power spectrogram: `|FFT(hann · frame)|²`, with non-DC,
/// non-Nyquist bins doubled. Shape is `(segment_len/2 + 1) × frames`.
pub fn compute_spectrogram(samples: &[f32], cfg: &StftConfig) -> Result<Matrix> {
    cfg.validate()?;
    if samples.len() < cfg.segment_len {
        return Err(Error::Domain(format!(
            "window of {} samples shorter than segment_len {}",
            samples.len(),
            cfg.segment_len
        )));
    }
    let l = cfg.segment_len;
    let hop = l - cfg.overlap;
    let bins = cfg.freq_bins();
    let frames = cfg.time_frames(samples.len());
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(l);
    let mut buf = vec![Complex::new(0.0, 0.0); l];
    let mut out = Matrix::filled(bins, frames, 0.0);
    for t in 0..frames {
        let frame = &samples[t * hop..t * hop + l];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(f64::from(x) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(bins).enumerate() {
            let mut p = c.norm_sqr();
            if k != 0 && k != l / 2 {
                p *= 2.0;
            }
            out.data[k * frames + t] = p as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize, rate: f64) -> Vec<f32> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin() as f32 * 0.5).collect()
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let cfg = StftConfig::default();
        let spec = compute_spectrogram(&tone(1000.0, 16000, 16000.0), &cfg).unwrap();
        // bin = f · segment_len / rate = 1000 · 1024 / 16000
        let expected = (1000.0 * 1024.0 / 16000.0) as usize;
        assert_eq!(expected, 64);
        for t in 0..spec.cols {
            let argmax = (0..spec.rows).max_by(|&a, &b| spec.get(a, t).total_cmp(&spec.get(b, t))).unwrap();
            assert_eq!(argmax, expected, "frame {t}");
        }
    }

    #[test]
    fn zero_window_zero_spectrogram() {
        let spec = compute_spectrogram(&vec![0.0; 4096], &StftConfig::default()).unwrap();
        assert!(spec.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_for_one_second() {
        let cfg = StftConfig::default();
        // enumerate frame starts 0, 512, ... while start + 1024 <= 16000
        let starts = (0..).map(|t| t * 512).take_while(|s| s + 1024 <= 16000).count();
        assert_eq!(starts, 30);
        let spec = compute_spectrogram(&vec![0.1; 16000], &cfg).unwrap();
        assert_eq!((spec.rows, spec.cols), (513, 30));
    }

    #[test]
    fn non_power_of_two_rejected() {
        let cfg = StftConfig { segment_len: 1000, ..StftConfig::default() };
        assert!(matches!(compute_spectrogram(&vec![0.0; 16000], &cfg), Err(Error::Config(_))));
        let cfg = StftConfig { overlap: 1024, ..StftConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parseval_with_doubling() {
        // a bin-centred cosine: total one-sided power equals the two-sided sum
        let l = 64;
        let cfg = StftConfig { segment_len: l, overlap: 0, ..StftConfig::default() };
        let x: Vec<f32> = (0..l).map(|i| (2.0 * PI * 8.0 * i as f64 / l as f64).cos() as f32).collect();
        let spec = compute_spectrogram(&x, &cfg).unwrap();
        let w = cfg.window();
        let energy: f64 = x.iter().zip(&w).map(|(&a, &b)| (f64::from(a) * b).powi(2)).sum();
        let total: f64 = spec.data.iter().map(|&v| f64::from(v)).sum();
        // the doubled one-sided sum equals the two-sided sum: L·Σ|x·w|²
        assert!((total / l as f64 - energy).abs() < 1e-4 * energy);
    }
}
