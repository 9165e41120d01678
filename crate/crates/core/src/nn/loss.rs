use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub batch_size: usize,
}

/// Max-subtracted softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<f64> {
    let m = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.f64() - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Loss and logit gradient (softmax − onehot) for a single sample.
pub(crate) fn sample_cross_entropy<S: Scalar>(logits: &[S], label: usize) -> Result<(f64, Vec<S>)> {
    if label >= logits.len() {
        return Err(Error::Domain(format!("label {label} outside [0, {})", logits.len())));
    }
    let m = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v.f64() - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[label].f64();
    let grad = softmax(logits)
        .into_iter()
        .enumerate()
        .map(|(c, p)| S::of(if c == label { p - 1.0 } else { p }))
        .collect();
    Ok((loss, grad))
}

/// Mean cross-entropy over a `[B, C]` logit batch and its gradient
/// `(softmax − onehot) / B`.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(LossValue, Tensor<S>)> {
    let d = logits.dims();
    if d.len() != 2 || d[0] != labels.len() || d[0] == 0 {
        return Err(Error::Shape(format!("logits {d:?} vs {} labels", labels.len())));
    }
    let b = d[0];
    let inv = 1.0 / b as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &label) in labels.iter().enumerate() {
        let (l, g) = sample_cross_entropy(logits.row(i), label)?;
        total += l;
        grad.extend(g.into_iter().map(|v| S::of(v.f64() * inv)));
    }
    Ok((LossValue { value: total * inv, batch_size: b }, Tensor::new(d.to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn uniform_logits_give_ln2() {
        let (l, _) = cross_entropy(&Tensor::new(vec![1, 2], vec![0.3f64, 0.3]).unwrap(), &[1]).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l.value - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let (l, g) = cross_entropy(&Tensor::new(vec![1, 2], vec![1000.0f32, 0.0]).unwrap(), &[0]).unwrap();
        assert!(l.value.abs() < 1e-12);
        assert!(g.all_finite());
    }

    #[test]
    fn label_out_of_range() {
        assert!(cross_entropy(&Tensor::new(vec![1, 2], vec![0.0f32, 0.0]).unwrap(), &[2]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = crate::seed::rng(11);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = [0, 2, 1, 2];
        let t = Tensor::new(vec![4, 3], x.clone()).unwrap();
        let (_, g) = cross_entropy(&t, &labels).unwrap();
        let h = 1e-5;
        for i in 0..12 {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[i] += h;
            minus[i] -= h;
            let lp = cross_entropy(&Tensor::new(vec![4, 3], plus).unwrap(), &labels).unwrap().0.value;
            let lm = cross_entropy(&Tensor::new(vec![4, 3], minus).unwrap(), &labels).unwrap().0.value;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (numeric - g.data()[i]).abs() / numeric.abs().max(g.data()[i].abs()).max(1e-12);
            assert!(rel < 1e-6, "index {i}: analytic {} numeric {numeric}", g.data()[i]);
        }
    }
}
