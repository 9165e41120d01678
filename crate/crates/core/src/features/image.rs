use super::{FeatureFrame, Matrix};
use crate::error::{Error, Result};

/// `ln(x + epsilon)` elementwise. Negative entries are a domain error.
pub fn log_scale(spec: &Matrix, epsilon: f64) -> Result<Matrix> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if let Some(i) = spec.data.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::Domain(format!("negative or NaN power {} at index {i}", spec.data[i])));
    }
    let data = spec.data.iter().map(|&v| (f64::from(v) + epsilon).ln() as f32).collect();
    Ok(Matrix { rows: spec.rows, cols: spec.cols, data })
}

/// Bilinear interpolation on a corner-aligned grid: output row `i` samples
/// source row `i·(H−1)/(out_h−1)`, so the four corners are copied exactly.
pub fn resize_bilinear(spec: &Matrix, out_h: usize, out_w: usize) -> Result<Matrix> {
    if spec.rows < 2 || spec.cols < 2 {
        return Err(Error::Shape(format!("resize needs at least 2x2 input, got {}x{}", spec.rows, spec.cols)));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!("cannot resize to {out_h}x{out_w}")));
    }
    let coords = |out: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let pos = if out == 1 { 0.0 } else { i as f64 * (src - 1) as f64 / (out - 1) as f64 };
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = coords(out_h, spec.rows);
    let xs = coords(out_w, spec.cols);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let v00 = f64::from(spec.get(y0, x0));
            let v01 = f64::from(spec.get(y0, x1));
            let v10 = f64::from(spec.get(y1, x0));
            let v11 = f64::from(spec.get(y1, x1));
            let top = v00 + (v01 - v00) * fx;
            let bottom = v10 + (v11 - v10) * fx;
            data.push((top + (bottom - top) * fy) as f32);
        }
    }
    Ok(Matrix { rows: out_h, cols: out_w, data })
}

pub(crate) const NORMALIZE_SD_FLOOR: f64 = 1e-6;

/// Per-frame standardization to mean 0 and (population) sd 1. Frames whose
/// sd is below the floor map to all zeros.
pub fn normalize(frame: &FeatureFrame) -> FeatureFrame {
    let n = frame.pixels.len().max(1) as f64;
    let mean = frame.pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = frame.pixels.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let pixels = if sd < NORMALIZE_SD_FLOOR {
        vec![0.0; frame.pixels.len()]
    } else {
        frame.pixels.iter().map(|&v| ((f64::from(v) - mean) / sd) as f32).collect()
    };
    FeatureFrame { pixels, ..frame.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::WindowOrigin;
    use crate::features::SplitTag;
    use proptest::prelude::*;
    use rand::Rng;

    fn frame(pixels: Vec<f32>, h: usize, w: usize) -> FeatureFrame {
        FeatureFrame::new(Matrix::new(h, w, pixels).unwrap(), WindowOrigin::default(), 0, SplitTag::Train).unwrap()
    }

    #[test]
    fn log_of_zero_and_unit() {
        let eps = 1e-10;
        let m = Matrix::new(1, 2, vec![0.0, (std::f64::consts::E - eps) as f32]).unwrap();
        let out = log_scale(&m, eps).unwrap();
        assert!((f64::from(out.data[0]) - (-23.0259)).abs() < 1e-4);
        assert!((out.data[1] - 1.0).abs() < 1e-6);
        assert!(matches!(log_scale(&Matrix::new(1, 1, vec![-1.0]).unwrap(), eps), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn log_preserves_order(values in proptest::collection::vec(0.0f32..1e6, 2..64)) {
            let m = Matrix::new(1, values.len(), values.clone()).unwrap();
            let out = log_scale(&m, 1e-10).unwrap();
            for i in 0..values.len() {
                for j in 0..values.len() {
                    if values[i] < values[j] {
                        prop_assert!(out.data[i] <= out.data[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn resize_constant_and_corners() {
        let c = Matrix::filled(513, 30, 2.5);
        let out = resize_bilinear(&c, 224, 224).unwrap();
        assert!(out.data.iter().all(|&v| (v - 2.5).abs() < 1e-6));

        let id = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let up = resize_bilinear(&id, 224, 224).unwrap();
        assert_eq!(up.get(0, 0), 1.0);
        assert_eq!(up.get(0, 223), 0.0);
        assert_eq!(up.get(223, 0), 0.0);
        assert_eq!(up.get(223, 223), 1.0);

        let raw = Matrix::filled(515, 389, 0.0);
        let out = resize_bilinear(&raw, 224, 224).unwrap();
        assert_eq!((out.rows, out.cols), (224, 224));

        assert!(resize_bilinear(&Matrix::filled(1, 5, 0.0), 224, 224).is_err());
    }

    #[test]
    fn resize_is_linear_along_axis() {
        let m = Matrix::new(2, 3, vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        let out = resize_bilinear(&m, 3, 5).unwrap();
        assert!((out.get(1, 2) - 6.0).abs() < 1e-6);
        assert!((out.get(0, 1) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn normalize_constant_and_moments() {
        let z = normalize(&frame(vec![3.0; 16], 4, 4));
        assert!(z.pixels.iter().all(|&v| v == 0.0));

        let mut rng = crate::seed::rng(5);
        for _ in 0..5 {
            let px: Vec<f32> = (0..224 * 224).map(|_| rng.random_range(-30.0..5.0)).collect();
            let n = normalize(&frame(px, 224, 224));
            let len = n.pixels.len() as f64;
            let mean = n.pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / len;
            let sd = (n.pixels.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / len).sqrt();
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((sd - 1.0).abs() < 1e-6, "sd {sd}");
            let twice = normalize(&n);
            let max_diff = n.pixels.iter().zip(&twice.pixels).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            assert!(max_diff < 1e-6, "idempotence {max_diff}");
        }
    }
}
