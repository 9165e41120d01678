//! Feature cache file.
//!
//! ```text
//! magic   "FVFC"
//! version u32
//! height  u32
//! width   u32
//! count   u32
//! per frame:
//!   label       u32
//!   split       u8   (0 train, 1 val)
//!   segment     u32
//!   window      u32
//!   subject_id  u16 length + utf-8 bytes
//!   pixels      height·width × f32, row-major
//! ```
//! All integers and floats little-endian.

use super::{FeatureFrame, SplitTag};
use crate::audio::WindowOrigin;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const FEATURE_CACHE_MAGIC: &[u8; 4] = b"FVFC";
pub const FEATURE_CACHE_VERSION: u32 = 1;

pub fn write_feature_cache(frames: &[FeatureFrame]) -> Result<Vec<u8>> {
    let (h, w) = frames.first().map(|f| (f.height, f.width)).unwrap_or((224, 224));
    let mut out = Writer::default();
    out.buf.extend_from_slice(FEATURE_CACHE_MAGIC);
    out.u32(FEATURE_CACHE_VERSION);
    out.u32(h as u32);
    out.u32(w as u32);
    out.u32(frames.len() as u32);
    for (i, f) in frames.iter().enumerate() {
        if (f.height, f.width) != (h, w) || f.pixels.len() != h * w {
            return Err(Error::Shape(format!("frame {i} is {}x{}, cache holds {h}x{w}", f.height, f.width)));
        }
        out.u32(f.label);
        out.u8(match f.split {
            SplitTag::Train => 0,
            SplitTag::Val => 1,
        });
        out.u32(f.origin.segment);
        out.u32(f.origin.window);
        out.string(&f.origin.subject_id)?;
        out.f32_slice(&f.pixels);
    }
    Ok(out.buf)
}

pub fn read_feature_cache(bytes: &[u8]) -> Result<Vec<FeatureFrame>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != FEATURE_CACHE_MAGIC {
        return Err(Error::Corrupt { offset: 0, message: "bad feature cache magic".into() });
    }
    let version = r.u32()?;
    if version != FEATURE_CACHE_VERSION {
        return Err(Error::Corrupt { offset: 4, message: format!("unsupported feature cache version {version}") });
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let label = r.u32()?;
        let split = match r.u8()? {
            0 => SplitTag::Train,
            1 => SplitTag::Val,
            other => return Err(r.corrupt(format!("bad split tag {other}"))),
        };
        let segment = r.u32()?;
        let window = r.u32()?;
        let subject_id = r.string()?;
        let pixels = r.f32_vec(h * w)?;
        frames.push(FeatureFrame {
            pixels,
            height: h,
            width: w,
            origin: WindowOrigin { subject_id, segment, window },
            label,
            split,
        });
    }
    r.finish()?;
    Ok(frames)
}
