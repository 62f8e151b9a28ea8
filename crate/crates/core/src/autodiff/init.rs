use super::rng::SplitMix64;
use super::tensor::Tensor;

/// Glorot/Xavier uniform initialization: samples from
/// `[-sqrt(6 / (rows + cols)), +sqrt(6 / (rows + cols))]`.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    xavier_with(rows, cols, &mut rng)
}

pub fn xavier_with(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor {
    assert!(rows >= 1 && cols >= 1, "xavier_init needs a non-empty shape");
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("uniform draws are finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_within_bound() {
        for seed in 0..100 {
            let t = xavier_init(1, 1, seed);
            assert!(t.get(0, 0).abs() <= 3f64.sqrt());
        }
    }

    #[test]
    fn mean_near_zero_and_bounded() {
        let t = xavier_init(64, 64, 42);
        let mean = t.sum() / t.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        let bound = (6.0f64 / 128.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn deterministic() {
        assert_eq!(xavier_init(5, 3, 9), xavier_init(5, 3, 9));
        assert_ne!(xavier_init(5, 3, 9), xavier_init(5, 3, 10));
    }
}
