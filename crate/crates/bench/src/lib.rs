//! Deterministic inputs for the kernel benchmarks in `benches/`.

use sgem_core::downstream::ClassId;
use sgem_core::Tensor;

/// Cheap reproducible values in [-1, 1) (an integer hash, no RNG state).
pub fn pseudo_random(i: usize, salt: u64) -> f32 {
    let mut z = (i as u64).wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 23) as f32 - 1.0
}

pub fn filled(shape: &[usize], salt: u64) -> Tensor {
    Tensor::from_fn(shape, |i| pseudo_random(i, salt))
}

/// `n` rows of `d` features whose label is the sign pattern of the first two
/// features, so trees have real splits to find.
pub fn classification_set(n: usize, d: usize, salt: u64) -> (Tensor, Vec<ClassId>) {
    let x = filled(&[n, d], salt);
    let y = (0..n)
        .map(|r| {
            let row = &x.data()[r * d..];
            (row[0] > 0.0) as ClassId * 2 + (row[1] > 0.0) as ClassId
        })
        .collect();
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_are_bounded_and_reproducible() {
        let a: Vec<f32> = (0..1000).map(|i| pseudo_random(i, 3)).collect();
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
        assert_eq!(
            a,
            (0..1000).map(|i| pseudo_random(i, 3)).collect::<Vec<_>>()
        );
        let (_, y) = classification_set(200, 4, 1);
        assert!((0..4).all(|c| y.contains(&c)));
    }
}
