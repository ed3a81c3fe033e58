use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;

/// Kaiming-normal weights: i.i.d. `N(0, 2 / fan_in)`.
pub fn kaiming_init<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor {
    assert!(fan_in >= 1, "fan_in must be positive");
    let std = kaiming_std(fan_in);
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let values = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, values).expect("finite samples")
}

pub fn kaiming_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn std_closed_forms() {
        assert_eq!(kaiming_std(2), 1.0);
        assert!((kaiming_std(512) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn empirical_std_within_two_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for fan_in in [2usize, 20, 128, 512] {
            let t = kaiming_init(vec![100_000], fan_in, &mut rng);
            let n = t.len() as f64;
            let mean = t.values().iter().sum::<f64>() / n;
            let var = t.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let target = kaiming_std(fan_in);
            assert!((var.sqrt() / target - 1.0).abs() < 0.02, "fan_in {fan_in}");
            assert!(mean.abs() < 0.02 * target * 5.0);
        }
    }
}
