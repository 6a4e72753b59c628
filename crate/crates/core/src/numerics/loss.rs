use super::Tensor;
use crate::error::Result;

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    target.expect_shape(pred.shape(), "mse_loss target")?;
    let n = pred.len() as f32;
    let mut grad = pred.clone();
    let mut sum = 0.0f64;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - t;
        sum += (diff as f64) * (diff as f64);
        *g = 2.0 * diff / n;
    }
    Ok(((sum / n as f64) as f32, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_inputs_have_zero_loss() {
        let t = Tensor::from_fn(&[3, 4], |i| i as f32 * 0.3);
        let (loss, grad) = mse_loss(&t, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unit_offset() {
        let p = Tensor::filled(&[2], 1.0);
        let t = Tensor::zeros(&[2]);
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.data(), &[1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(mse_loss(&Tensor::zeros(&[2]), &Tensor::zeros(&[3])).is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_only_when_equal(
            a in proptest::collection::vec(-2.0f32..2.0, 1..20),
            offset in -1.0f32..1.0,
        ) {
            let p = Tensor::from_vec(&[a.len()], a.clone()).unwrap();
            let shifted: Vec<f32> = a.iter().map(|v| v + offset).collect();
            let t = Tensor::from_vec(&[a.len()], shifted).unwrap();
            let (loss, _) = mse_loss(&p, &t).unwrap();
            prop_assert!(loss >= 0.0);
            if offset.abs() > 1e-3 {
                prop_assert!(loss > 0.0);
            }
        }
    }
}
