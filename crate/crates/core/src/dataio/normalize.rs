use serde::{Deserialize, Serialize};

use super::{GestureWindow, KIN_DIM};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Smallest standard deviation used for scaling; constant dimensions map to 0.
pub const STD_FLOOR: f32 = 1e-6;

/// Per-dimension z-scoring of kinematics rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    /// Fits on rows of equal width using population statistics.
    pub fn fit_rows<'a>(rows: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for row in rows {
            if n == 0 {
                sum = vec![0.0; row.len()];
                sum_sq = vec![0.0; row.len()];
            } else if row.len() != sum.len() {
                return Err(Error::contract(format!(
                    "normalizer rows have widths {} and {}",
                    sum.len(),
                    row.len()
                )));
            }
            for (d, &v) in row.iter().enumerate() {
                sum[d] += v as f64;
                sum_sq[d] += (v as f64) * (v as f64);
            }
            n += 1;
        }
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "normalizer needs at least 2 kinematics rows, got {n}"
            )));
        }
        let nf = n as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / nf) as f32).collect();
        let std = sum
            .iter()
            .zip(&sum_sq)
            .map(|(s, sq)| {
                let m = s / nf;
                let var = (sq / nf - m * m).max(0.0);
                (var.sqrt() as f32).max(STD_FLOOR)
            })
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        let d = self.dim();
        if d == 0 || t.shape().last() != Some(&d) {
            return Err(Error::contract(format!(
                "normalizer of width {d} applied to tensor of shape {:?}",
                t.shape()
            )));
        }
        Ok(())
    }

    /// Standardizes every row of a tensor whose last axis is the feature axis.
    pub fn transform(&self, t: &mut Tensor) -> Result<()> {
        self.check(t)?;
        for row in t.data_mut().chunks_mut(self.dim()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }

    pub fn inverse(&self, t: &mut Tensor) -> Result<()> {
        self.check(t)?;
        for row in t.data_mut().chunks_mut(self.dim()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(())
    }

    pub fn to_tensors(&self) -> (Tensor, Tensor) {
        let d = self.dim();
        (
            Tensor::from_vec(&[d], self.mean.clone()).expect("length matches"),
            Tensor::from_vec(&[d], self.std.clone()).expect("length matches"),
        )
    }

    pub fn from_tensors(mean: &Tensor, std: &Tensor) -> Result<Self> {
        if mean.rank() != 1 || mean.shape() != std.shape() {
            return Err(Error::contract(
                "normalizer mean/std must be equal-length vectors",
            ));
        }
        Ok(Normalizer {
            mean: mean.data().to_vec(),
            std: std.data().iter().map(|s| s.max(STD_FLOOR)).collect(),
        })
    }
}

/// Fits on the kinematics rows of the given (training) windows.
pub fn fit_normalizer(windows: &[GestureWindow]) -> Result<Normalizer> {
    let rows = windows
        .iter()
        .flat_map(|w| w.kinematics.data().chunks(KIN_DIM));
    Normalizer::fit_rows(rows)
}

pub fn apply_normalizer(normalizer: &Normalizer, windows: &mut [GestureWindow]) -> Result<()> {
    windows
        .iter_mut()
        .try_for_each(|w| normalizer.transform(&mut w.kinematics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fit(t: &Tensor) -> Normalizer {
        Normalizer::fit_rows(t.data().chunks(t.shape()[1])).unwrap()
    }

    #[test]
    fn constant_dimension_maps_to_zero() {
        let mut t = Tensor::from_fn(&[4, 2], |i| if i % 2 == 0 { 5.0 } else { i as f32 });
        let n = fit(&t);
        assert_eq!(n.std[0], STD_FLOOR);
        n.transform(&mut t).unwrap();
        for r in 0..4 {
            assert_eq!(t.data()[2 * r], 0.0);
        }
    }

    #[test]
    fn standardized_data_stays_standard() {
        let mut t = Tensor::from_vec(&[4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let n = fit(&t);
        assert!(n.mean[0].abs() < 1e-7 && (n.std[0] - 1.0).abs() < 1e-7);
        let before = t.clone();
        n.transform(&mut t).unwrap();
        assert_eq!(t, before);
    }

    #[test]
    fn too_few_rows() {
        let t = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            Normalizer::fit_rows(t.data().chunks(3)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn width_mismatch_is_contract_error() {
        let n = fit(&Tensor::from_fn(&[3, 2], |i| i as f32));
        let mut t = Tensor::zeros(&[2, 3]);
        assert!(matches!(n.transform(&mut t), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn inverse_undoes_transform(values in prop::collection::vec(-50.0f32..50.0, 12..60)) {
            let rows = values.len() / 6;
            let t = Tensor::from_vec(&[rows, 6], values[..rows * 6].to_vec()).unwrap();
            let n = fit(&t);
            let mut u = t.clone();
            n.transform(&mut u).unwrap();
            n.inverse(&mut u).unwrap();
            for (a, b) in t.data().iter().zip(u.data()) {
                prop_assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn refit_on_output_is_near_identity(values in prop::collection::vec(-50.0f32..50.0, 12..60)) {
            let rows = values.len() / 6;
            let mut t = Tensor::from_vec(&[rows, 6], values[..rows * 6].to_vec()).unwrap();
            fit(&t).transform(&mut t).unwrap();
            let again = fit(&t);
            let mut u = t.clone();
            again.transform(&mut u).unwrap();
            for (a, b) in t.data().iter().zip(u.data()) {
                prop_assert!((a - b).abs() < 1e-3);
            }
        }
    }
}
