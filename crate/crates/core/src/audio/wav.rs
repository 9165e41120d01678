use super::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a RIFF/WAVE PCM16 little-endian stream. Multi-channel input keeps
/// channel 0 only. Samples are divided by 32768.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u32, u16)> = None; // channels, rate, block_align
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + size > bytes.len() {
                    return Err(Error::Format("truncated fmt chunk".into()));
                }
                let mut format = le_u16(bytes, body);
                let channels = le_u16(bytes, body + 2);
                let rate = le_u32(bytes, body + 4);
                let block_align = le_u16(bytes, body + 12);
                let bits = le_u16(bytes, body + 14);
                if format == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(Error::Format("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk".into()));
                    }
                    // first two bytes of the sub-format GUID carry the format tag
                    format = le_u16(bytes, body + 24);
                }
                if format != FORMAT_PCM {
                    return Err(Error::Unsupported(format!("WAV encoding tag {format}, only PCM is supported")));
                }
                if bits != 16 {
                    return Err(Error::Unsupported(format!("{bits}-bit PCM, only 16-bit is supported")));
                }
                if channels == 0 || rate == 0 {
                    return Err(Error::Format("zero channels or sample rate".into()));
                }
                if usize::from(block_align) != usize::from(channels) * 2 {
                    return Err(Error::Format(format!("block align {block_align} inconsistent with {channels} channels")));
                }
                fmt = Some((channels, rate, block_align));
            }
            b"data" => {
                let (_, rate, block_align) =
                    fmt.ok_or_else(|| Error::Format("data chunk before fmt chunk".into()))?;
                if body + size > bytes.len() {
                    return Err(Error::Format(format!(
                        "data chunk claims {size} bytes, only {} present",
                        bytes.len() - body
                    )));
                }
                let frame = usize::from(block_align);
                let samples = bytes[body..body + size]
                    .chunks_exact(frame)
                    .map(|f| f32::from(i16::from_le_bytes([f[0], f[1]])) / 32768.0)
                    .collect();
                return AudioClip::new(samples, rate);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(Error::Format(if fmt.is_some() { "missing data chunk" } else { "missing fmt chunk" }.into()))
}

/// Encodes mono samples as PCM16 WAV. Values are scaled by 32768, rounded and
/// clamped to the i16 range.
pub fn encode_wav_pcm16(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_from_i16(values: &[i16], rate: u32, channels: u16, format: u16) -> Vec<u8> {
        let data: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2 * u32::from(channels)).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(&data);
        out
    }

    #[test]
    fn decodes_four_samples() {
        let clip = decode_wav(&wav_from_i16(&[0, 32767, -32768, 0], 16000, 1, 1)).unwrap();
        assert_eq!(clip.sample_rate(), 16000);
        assert_eq!(clip.samples(), &[0.0, 32767.0 / 32768.0, -1.0, 0.0]);
        assert!((clip.samples()[1] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn empty_data_chunk_is_valid() {
        let clip = decode_wav(&wav_from_i16(&[], 16000, 1, 1)).unwrap();
        assert!(clip.samples().is_empty());
    }

    #[test]
    fn float_encoding_is_unsupported() {
        let err = decode_wav(&wav_from_i16(&[0, 0], 16000, 1, 3)).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)), "{err}");
    }

    #[test]
    fn malformed_header_is_format_error() {
        assert!(matches!(decode_wav(b"RIFX....WAVE"), Err(Error::Format(_))));
        let mut truncated = wav_from_i16(&[1, 2, 3, 4], 8000, 1, 1);
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(decode_wav(&truncated), Err(Error::Format(_))));
    }

    #[test]
    fn stereo_keeps_channel_zero() {
        let clip = decode_wav(&wav_from_i16(&[100, -5, 200, -6], 16000, 2, 1)).unwrap();
        assert_eq!(clip.samples(), &[100.0 / 32768.0, 200.0 / 32768.0]);
    }

    #[test]
    fn encode_then_decode_matches_quantized_input() {
        let samples: Vec<f32> = (0..64).map(|i| ((i as f32) * 0.37).sin() * 0.8).collect();
        let clip = decode_wav(&encode_wav_pcm16(&samples, 22050)).unwrap();
        assert_eq!(clip.sample_rate(), 22050);
        for (a, b) in clip.samples().iter().zip(&samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
