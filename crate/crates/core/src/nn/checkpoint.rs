//! Checkpoint file.
//!
//! ```text
//! magic     "FVX1"
//! version   u32
//! layers    u32
//! per layer (name table):
//!   name      u16 length + utf-8 bytes
//!   kind      u8   (0 conv, 1 dense, 2 bias, 3 bn-scale, 4 bn-shift)
//!   trainable u8
//!   ndims     u8
//!   dims      u32 × ndims
//! has_opt   u8
//! if has_opt:
//!   epoch u32, base_lr f64, momentum f64, gamma f64, step_size u32
//!   velocity flags: u8 per layer
//! tensor data: f32 × numel, per layer in table order
//! velocity data: f32 × numel, for each layer whose flag is set
//! ```
//! Little-endian throughout.

use super::{LayerKind, OptState, ParamSet, SgdConfig, Tensor};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FVX1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet<f32>,
    pub opt: Option<OptState<f32>>,
}

pub fn save_checkpoint(params: &ParamSet<f32>, opt: Option<&OptState<f32>>) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(params.len() as u32);
    for l in params.layers() {
        w.string(&l.name)?;
        w.u8(l.kind.code());
        w.u8(u8::from(l.trainable));
        w.u8(l.tensor.dims().len() as u8);
        for &d in l.tensor.dims() {
            w.u32(d as u32);
        }
    }
    if let Some(opt) = opt {
        if opt.velocity.len() != params.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        w.u8(1);
        w.u32(opt.epoch as u32);
        w.f64(opt.cfg.base_lr);
        w.f64(opt.cfg.momentum);
        w.f64(opt.cfg.gamma);
        w.u32(opt.cfg.step_size as u32);
        for v in &opt.velocity {
            w.u8(u8::from(v.is_some()));
        }
    } else {
        w.u8(0);
    }
    for l in params.layers() {
        w.f32_slice(l.tensor.data());
    }
    if let Some(opt) = opt {
        for v in opt.velocity.iter().flatten() {
            w.f32_slice(v);
        }
    }
    Ok(w.buf)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt { offset: 0, message: "bad checkpoint magic".into() });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Corrupt { offset: 4, message: format!("unsupported checkpoint version {version}") });
    }
    let n = r.u32()? as usize;
    let mut table = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let name = r.string()?;
        let at = r.offset();
        let kind = LayerKind::from_code(r.u8()?).ok_or_else(|| Error::Corrupt { offset: at, message: "bad layer kind".into() })?;
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(r.corrupt(format!("bad trainable flag {v}"))),
        };
        let nd = r.u8()? as usize;
        let dims = (0..nd).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        table.push((name, kind, trainable, dims));
    }
    let opt_header = match r.u8()? {
        0 => None,
        1 => {
            let epoch = r.u32()? as usize;
            let cfg = SgdConfig { base_lr: r.f64()?, momentum: r.f64()?, gamma: r.f64()?, step_size: r.u32()? as usize };
            let flags = (0..n).map(|_| r.u8().map(|f| f == 1)).collect::<Result<Vec<_>>>()?;
            Some((epoch, cfg, flags))
        }
        v => return Err(r.corrupt(format!("bad optimizer flag {v}"))),
    };
    let mut params = ParamSet::new();
    for (name, kind, trainable, dims) in &table {
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.corrupt("dims overflow"))?;
        let data = r.f32_vec(numel)?;
        params.push(name.clone(), *kind, Tensor::new(dims.clone(), data)?, *trainable).map_err(|e| r.corrupt(e.to_string()))?;
    }
    let opt = match opt_header {
        None => None,
        Some((epoch, cfg, flags)) => {
            let mut velocity = Vec::with_capacity(n);
            for (i, has) in flags.into_iter().enumerate() {
                velocity.push(if has { Some(r.f32_vec(params.layer(i).tensor.len())?) } else { None });
            }
            Some(OptState { cfg, epoch, velocity })
        }
    };
    r.finish()?;
    Ok(Checkpoint { params, opt })
}

/// Loads a checkpoint and checks it against an expected architecture.
pub fn load_checkpoint_into(bytes: &[u8], expected: &ParamSet<f32>) -> Result<Checkpoint> {
    let ck = load_checkpoint(bytes)?;
    expected.check_compatible(&ck.params)?;
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Grads;
    use proptest::prelude::*;

    fn params(seed: u64) -> ParamSet<f32> {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed);
        let mut p = ParamSet::new();
        let mut t = |dims: Vec<usize>| {
            let n = dims.iter().product();
            Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
        };
        p.push("conv1.w", LayerKind::Conv, t(vec![4, 1, 3, 3]), false).unwrap();
        p.push("bn1.scale", LayerKind::BnScale, t(vec![4]), false).unwrap();
        p.push("bn1.shift", LayerKind::BnShift, t(vec![4]), false).unwrap();
        p.push("fc.w", LayerKind::Dense, t(vec![2, 4]), true).unwrap();
        p.push("fc.b", LayerKind::Bias, t(vec![2]), true).unwrap();
        p
    }

    proptest! {
        #[test]
        fn save_load_save_is_identical(seed in any::<u64>(), with_opt in any::<bool>()) {
            let p = params(seed);
            let mut opt = OptState::new(SgdConfig::default(), &p);
            if with_opt {
                let mut g = Grads::zeros_for(&p);
                g.get_mut(3).unwrap()[1] = 0.25;
                let mut q = p.clone();
                crate::nn::sgd_step(&mut q, &g, &mut opt).unwrap();
                opt.epoch = 9;
            }
            let bytes = save_checkpoint(&p, with_opt.then_some(&opt)).unwrap();
            let ck = load_checkpoint(&bytes).unwrap();
            prop_assert_eq!(&ck.params, &p);
            if with_opt {
                prop_assert_eq!(ck.opt.as_ref(), Some(&opt));
            }
            prop_assert_eq!(save_checkpoint(&ck.params, ck.opt.as_ref()).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_magic_version_and_truncation() {
        let bytes = save_checkpoint(&params(1), None).unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'Y';
        assert!(matches!(load_checkpoint(&bad), Err(Error::Corrupt { offset: 0, .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(load_checkpoint(&v2), Err(Error::Corrupt { offset: 4, .. })));
        let err = load_checkpoint(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, Error::Corrupt { offset, .. } if offset > 0), "{err}");
    }

    #[test]
    fn mismatched_architecture_lists_first_mismatch() {
        let bytes = save_checkpoint(&params(1), None).unwrap();
        let mut other = ParamSet::new();
        other.push("conv1.w", LayerKind::Conv, Tensor::zeros(vec![8, 1, 3, 3]), false).unwrap();
        let err = load_checkpoint_into(&bytes, &other).unwrap_err().to_string();
        assert!(err.contains("layers") || err.contains("conv1.w"), "{err}");

        let mut shape = params(2);
        *shape.layer_mut(3) = crate::nn::Layer {
            name: "fc.w".into(),
            kind: LayerKind::Dense,
            tensor: Tensor::zeros(vec![3, 4]),
            trainable: true,
        };
        let err = load_checkpoint_into(&bytes, &shape).unwrap_err().to_string();
        assert!(err.contains("layer 3") && err.contains("fc.w"), "{err}");
        assert!(load_checkpoint_into(&bytes, &params(5)).is_ok());
    }
}
