use super::mlp::MlpParams;
use crate::scalar::Scalar;

/// Norm at or below which [`l2_normalize`] returns the zero vector.
pub const NORMALIZE_TOLERANCE: f64 = 1e-12;

/// Clamps every weight and bias into `[-c, c]`.
pub fn clip_weights<T: Scalar>(params: &mut MlpParams<T>, c: T) {
    debug_assert!(c > T::zero());
    for t in params.tensors_mut() {
        for v in t {
            *v = v.max(-c).min(c);
        }
    }
}

/// `v / ||v||_2`, or zeros when the norm is at most [`NORMALIZE_TOLERANCE`].
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Vec<T> {
    let norm = l2_norm(v);
    if norm <= T::lit(NORMALIZE_TOLERANCE) {
        return vec![T::zero(); v.len()];
    }
    v.iter().map(|&x| x / norm).collect()
}

/// Euclidean norm, scaled to avoid overflow and underflow.
pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale == T::zero() || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|&x| (x / scale) * (x / scale)).sum::<T>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer, Matrix};

    #[test]
    fn clip_clamps_only_outside_entries() {
        let layer = Layer::new(
            Matrix::new(1, 3, vec![-0.5, 0.05, 0.5]).unwrap(),
            vec![0.02],
            Activation::Identity,
        )
        .unwrap();
        let mut p = MlpParams::new(vec![layer]).unwrap();
        clip_weights(&mut p, 0.1);
        assert_eq!(p.flat(), vec![-0.1, 0.05, 0.1, 0.02]);
        let before = p.clone();
        clip_weights(&mut p, 0.1);
        assert_eq!(p, before);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0f64; 4]), vec![0.0; 4]);
        assert_eq!(l2_normalize(&[1e-13f64, 0.0]), vec![0.0, 0.0]);
        let v = [1e200f64, -3e200];
        let n = l2_normalize(&v);
        assert!((l2_norm(&n) - 1.0).abs() < 1e-12);
    }
}
