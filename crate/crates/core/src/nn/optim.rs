use serde::{Deserialize, Serialize};

use super::{Grads, ParamSet, Scalar};
use crate::error::{Error, Result};

/// Momentum SGD with step decay: `lr = base_lr · gamma^floor(epoch / step_size)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub step_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { base_lr: 0.001, momentum: 0.9, gamma: 0.1, step_size: 7 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.gamma > 0.0) || self.step_size == 0 {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Step decay. Dividing by `1/gamma` keeps decimal factors exact
/// (0.001 → 1e-4 → 1e-5) where repeated multiplication by 0.1 drifts.
pub fn lr_at_epoch(cfg: &SgdConfig, epoch: usize) -> f64 {
    cfg.base_lr / cfg.gamma.recip().powi((epoch / cfg.step_size) as i32)
}

/// Optimizer state: one velocity buffer per trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState<S = f32> {
    pub cfg: SgdConfig,
    pub epoch: usize,
    pub(crate) velocity: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> OptState<S> {
    pub fn new(cfg: SgdConfig, params: &ParamSet<S>) -> Self {
        Self {
            cfg,
            epoch: 0,
            velocity: params.layers().iter().map(|l| l.trainable.then(|| vec![S::zero(); l.tensor.len()])).collect(),
        }
    }

    pub fn lr(&self) -> f64 {
        lr_at_epoch(&self.cfg, self.epoch)
    }

    pub fn velocity(&self, i: usize) -> Option<&[S]> {
        self.velocity.get(i).and_then(|v| v.as_deref())
    }
}

/// `v ← momentum·v + g; p ← p − lr(epoch)·v` for every trainable tensor.
/// Frozen tensors never move. A non-finite gradient aborts before any update.
pub fn sgd_step<S: Scalar>(params: &mut ParamSet<S>, grads: &Grads<S>, opt: &mut OptState<S>) -> Result<()> {
    if grads.len() != params.len() || opt.velocity.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} velocity slots",
            params.len(),
            grads.len(),
            opt.velocity.len()
        )));
    }
    if let Some((i, v)) = grads.first_non_finite() {
        return Err(Error::Divergence(format!(
            "non-finite gradient {v:?} in layer '{}' at epoch {}",
            params.layer(i).name,
            opt.epoch
        )));
    }
    let lr = S::of(opt.lr());
    let mom = S::of(opt.cfg.momentum);
    for i in 0..params.len() {
        let layer = params.layer_mut(i);
        if !layer.trainable {
            continue;
        }
        let Some(g) = grads.get(i) else { continue };
        let v = opt.velocity[i].get_or_insert_with(|| vec![S::zero(); g.len()]);
        if v.len() != g.len() || layer.tensor.len() != g.len() {
            return Err(Error::Shape(format!("layer '{}' gradient length {}", layer.name, g.len())));
        }
        for ((p, vel), &gv) in layer.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            *vel = mom * *vel + gv;
            *p = *p - lr * *vel;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerKind, Tensor};

    fn one_param(trainable: bool) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("p", LayerKind::Bias, Tensor::new(vec![1], vec![1.0]).unwrap(), trainable).unwrap();
        p
    }

    fn unit_grad(p: &ParamSet<f64>) -> Grads<f64> {
        let mut g = Grads::zeros_for(p);
        if let Some(s) = g.get_mut(0) {
            s[0] = 1.0;
        }
        g
    }

    #[test]
    fn schedule_values() {
        let cfg = SgdConfig::default();
        for e in 0..7 {
            assert_eq!(lr_at_epoch(&cfg, e), 0.001);
        }
        assert_eq!(lr_at_epoch(&cfg, 7), 0.0001);
        assert_eq!(lr_at_epoch(&cfg, 14), 0.00001);
        let mut prev = f64::INFINITY;
        for e in 0..50 {
            let lr = lr_at_epoch(&cfg, e);
            assert!(lr <= prev);
            if e % 7 != 0 {
                assert_eq!(lr, prev);
            }
            prev = lr;
        }
    }

    #[test]
    fn two_step_momentum_trace() {
        let mut p = one_param(true);
        let g = unit_grad(&p);
        let mut opt = OptState::new(SgdConfig::default(), &p);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        assert!((opt.velocity(0).unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((p.layer(0).tensor.data()[0] - 0.999).abs() < 1e-12);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        assert!((opt.velocity(0).unwrap()[0] - 1.9).abs() < 1e-12);
        assert!((p.layer(0).tensor.data()[0] - 0.9971).abs() < 1e-12);
    }

    #[test]
    fn frozen_tensor_never_moves() {
        let mut p = one_param(false);
        let g = unit_grad(&p);
        let mut opt = OptState::new(SgdConfig::default(), &p);
        for _ in 0..10 {
            sgd_step(&mut p, &g, &mut opt).unwrap();
        }
        assert_eq!(p.layer(0).tensor.data()[0], 1.0);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = one_param(true);
        let mut g = unit_grad(&p);
        g.get_mut(0).unwrap()[0] = f64::NAN;
        let mut opt = OptState::new(SgdConfig::default(), &p);
        let err = sgd_step(&mut p, &g, &mut opt).unwrap_err();
        assert!(matches!(err, Error::Divergence(ref m) if m.contains("'p'")));
        assert_eq!(p.layer(0).tensor.data()[0], 1.0);
    }
}
