use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

use super::Tensor;

/// Kaiming-normal tensor: entries drawn from N(0, 2 / fan_in).
pub fn kaiming_init<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kaiming_with(shape, fan_in, &mut rng)
}

pub fn kaiming_std(fan_in: usize) -> f64 {
    assert!(fan_in >= 1, "fan_in must be positive");
    (2.0 / fan_in as f64).sqrt()
}

pub fn kaiming_with<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let normal = Normal::new(0.0, kaiming_std(fan_in)).expect("finite std");
    let count = shape.iter().product();
    let data = (0..count).map(|_| T::lit(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("non-empty shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f64> = kaiming_init(&[4, 3, 3, 3], 27, 11);
        let b: Tensor<f64> = kaiming_init(&[4, 3, 3, 3], 27, 11);
        assert_eq!(a, b);
        let c: Tensor<f64> = kaiming_init(&[4, 3, 3, 3], 27, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_std_matches_fan_in() {
        let t: Tensor<f64> = kaiming_init(&[10_000], 8, 3);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.5).abs() < 0.025, "std {}", var.sqrt());
    }

    #[test]
    fn fan_in_two_has_unit_variance() {
        assert_eq!(kaiming_std(2).powi(2), 1.0);
    }
}
