//! Central finite-difference verification of the layer backward passes.
//!
//! The scalar objective for a layer with output `y` is `sum_i r_i * y_i` for a
//! fixed random projection `r` (the loss itself for [`LayerUnderTest::Mse`]).
//!
//! Finite differences are taken on plain-loop f64 reference forwards of each
//! layer, so the numeric side carries no f32 rounding noise and shares no code
//! with the production (sgemm-backed) path. The analytic side is the production
//! f32 backward.

use rand::Rng;

use super::{
    conv2d, conv2d_backward, fully_connected_backward, mse_loss, relu_backward, ConvSpec, Tensor,
};
use crate::error::{Error, Result};
use crate::util::seeded_rng;

/// Denominator floor of the relative error, so that vanishing gradients are
/// compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerUnderTest {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        spec: ConvSpec,
    },
    FullyConnected {
        out_features: usize,
    },
    Relu,
    Mse,
}

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Central difference of `objective` with respect to `values[i]` for every `i`.
///
/// The step actually taken in f32 is used as the denominator.
pub fn central_differences(
    values: &mut [f32],
    eps: f32,
    mut objective: impl FnMut(&[f32]) -> f64,
) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let orig = values[i];
            let plus = orig + eps;
            let minus = orig - eps;
            values[i] = plus;
            let fp = objective(values);
            values[i] = minus;
            let fm = objective(values);
            values[i] = orig;
            (fp - fm) / (plus as f64 - minus as f64)
        })
        .collect()
}

pub(crate) fn central_differences_f64(
    values: &mut [f64],
    eps: f64,
    mut objective: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let orig = values[i];
            values[i] = orig + eps;
            let fp = objective(values);
            values[i] = orig - eps;
            let fm = objective(values);
            values[i] = orig;
            (fp - fm) / (2.0 * eps)
        })
        .collect()
}

pub(crate) fn widen(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain-loop f64 convolution used as the finite-difference reference.
pub(crate) struct ConvRef {
    pub(crate) c_in: usize,
    pub(crate) h: usize,
    pub(crate) w: usize,
    pub(crate) c_out: usize,
    pub(crate) k: usize,
    pub(crate) spec: ConvSpec,
}

impl ConvRef {
    pub(crate) fn forward(&self, x: &[f64], wt: &[f64], b: &[f64]) -> Vec<f64> {
        let ho = super::conv_output_extent(self.h, self.k, self.spec);
        let wo = super::conv_output_extent(self.w, self.k, self.spec);
        let mut out = Vec::with_capacity(self.c_out * ho * wo);
        for o in 0..self.c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o];
                    for c in 0..self.c_in {
                        for ky in 0..self.k {
                            for kx in 0..self.k {
                                let iy =
                                    (oy * self.spec.stride + ky) as isize - self.spec.pad as isize;
                                let ix =
                                    (ox * self.spec.stride + kx) as isize - self.spec.pad as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= self.h as isize
                                    || ix >= self.w as isize
                                {
                                    continue;
                                }
                                acc += x[(c * self.h + iy as usize) * self.w + ix as usize]
                                    * wt[((o * self.c_in + c) * self.k + ky) * self.k + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }
}

pub(crate) fn fc_ref(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, b)| dot(row, x) + b)
        .collect()
}

fn uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Largest [`relative_error`] between paired analytic and numeric gradients.
pub fn max_relative_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a as f64, n))
        .fold(0.0, f64::max)
}

/// Exhaustively compares analytic and finite-difference gradients over every
/// input and parameter element of `layer` at a seeded random point in
/// `[-2, 2]`, returning the largest relative error.
pub fn grad_check(
    layer: LayerUnderTest,
    input_shape: &[usize],
    eps: f32,
    seed: u64,
) -> Result<f64> {
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(Error::contract(format!(
            "grad_check: eps {eps} outside [1e-4, 1e-2]"
        )));
    }
    let eps = eps as f64;
    let mut rng = seeded_rng(seed);
    match layer {
        LayerUnderTest::Conv2d {
            out_channels,
            kernel,
            spec,
        } => {
            if input_shape.len() != 3 {
                return Err(Error::contract(
                    "grad_check: conv2d input must be [c, h, w]",
                ));
            }
            let x = uniform(input_shape, -2.0, 2.0, &mut rng);
            let w = uniform(
                &[out_channels, input_shape[0], kernel, kernel],
                -1.0,
                1.0,
                &mut rng,
            );
            let b = uniform(&[out_channels], -1.0, 1.0, &mut rng);
            let out = conv2d(&x, &w, &b, spec)?;
            let proj = uniform(out.shape(), -1.0, 1.0, &mut rng);
            let grads = conv2d_backward(&x, &w, &b, spec, &proj, true)?;
            let gx = grads.input.expect("input gradient requested");

            let reference = ConvRef {
                c_in: input_shape[0],
                h: input_shape[1],
                w: input_shape[2],
                c_out: out_channels,
                k: kernel,
                spec,
            };
            let r = widen(&proj);
            let (mut xv, mut wv, mut bv) = (widen(&x), widen(&w), widen(&b));
            let (x0, w0, b0) = (xv.clone(), wv.clone(), bv.clone());
            let nx =
                central_differences_f64(&mut xv, eps, |v| dot(&reference.forward(v, &w0, &b0), &r));
            let nw =
                central_differences_f64(&mut wv, eps, |v| dot(&reference.forward(&x0, v, &b0), &r));
            let nb =
                central_differences_f64(&mut bv, eps, |v| dot(&reference.forward(&x0, &w0, v), &r));
            Ok(max_relative_error(gx.data(), &nx)
                .max(max_relative_error(grads.weights.data(), &nw))
                .max(max_relative_error(grads.bias.data(), &nb)))
        }
        LayerUnderTest::FullyConnected { out_features } => {
            let n_in: usize = input_shape.iter().product();
            let x = uniform(&[n_in], -2.0, 2.0, &mut rng);
            let w = uniform(&[out_features, n_in], -1.0, 1.0, &mut rng);
            let b = uniform(&[out_features], -1.0, 1.0, &mut rng);
            let proj = uniform(&[out_features], -1.0, 1.0, &mut rng);
            let grads = fully_connected_backward(&x, &w, &b, &proj)?;

            let r = widen(&proj);
            let (mut xv, mut wv, mut bv) = (widen(&x), widen(&w), widen(&b));
            let (x0, w0, b0) = (xv.clone(), wv.clone(), bv.clone());
            let nx = central_differences_f64(&mut xv, eps, |v| dot(&fc_ref(v, &w0, &b0), &r));
            let nw = central_differences_f64(&mut wv, eps, |v| dot(&fc_ref(&x0, v, &b0), &r));
            let nb = central_differences_f64(&mut bv, eps, |v| dot(&fc_ref(&x0, &w0, v), &r));
            Ok(max_relative_error(grads.input.data(), &nx)
                .max(max_relative_error(grads.weights.data(), &nw))
                .max(max_relative_error(grads.bias.data(), &nb)))
        }
        LayerUnderTest::Relu => {
            // Keep every coordinate clear of the kink at zero.
            let x = Tensor::from_fn(input_shape, |_| {
                let mag = rng.random_range(0.1f32..2.0);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            });
            let proj = uniform(input_shape, -1.0, 1.0, &mut rng);
            let gx = relu_backward(&x, &proj)?;
            let r = widen(&proj);
            let mut xv = widen(&x);
            let nx = central_differences_f64(&mut xv, eps, |v| {
                v.iter().zip(&r).map(|(x, r)| x.max(0.0) * r).sum()
            });
            Ok(max_relative_error(gx.data(), &nx))
        }
        LayerUnderTest::Mse => {
            let pred = uniform(input_shape, -2.0, 2.0, &mut rng);
            let target = uniform(input_shape, -2.0, 2.0, &mut rng);
            let (_, grad) = mse_loss(&pred, &target)?;
            let t = widen(&target);
            let n = t.len() as f64;
            let mut pv = widen(&pred);
            let np = central_differences_f64(&mut pv, eps, |v| {
                v.iter().zip(&t).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n
            });
            Ok(max_relative_error(grad.data(), &np))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layer_is_near_exact() {
        let err = grad_check(
            LayerUnderTest::FullyConnected { out_features: 4 },
            &[8],
            1e-3,
            1,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn conv_layer() {
        let layer = LayerUnderTest::Conv2d {
            out_channels: 3,
            kernel: 3,
            spec: ConvSpec::new(1, 1),
        };
        let err = grad_check(layer, &[2, 5, 5], 1e-3, 2).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn strided_conv_layer() {
        let layer = LayerUnderTest::Conv2d {
            out_channels: 2,
            kernel: 3,
            spec: ConvSpec::new(2, 1),
        };
        let err = grad_check(layer, &[3, 7, 6], 1e-3, 3).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let err = grad_check(LayerUnderTest::Relu, &[4, 6], 1e-3, 4).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn mse() {
        let err = grad_check(LayerUnderTest::Mse, &[3, 7], 1e-3, 5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn reference_forwards_agree_with_production() {
        let mut rng = seeded_rng(9);
        let x = uniform(&[2, 6, 5], -2.0, 2.0, &mut rng);
        let w = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = uniform(&[3], -1.0, 1.0, &mut rng);
        let spec = ConvSpec::new(2, 1);
        let fast = conv2d(&x, &w, &b, spec).unwrap();
        let reference = ConvRef {
            c_in: 2,
            h: 6,
            w: 5,
            c_out: 3,
            k: 3,
            spec,
        };
        let slow = reference.forward(&widen(&x), &widen(&w), &widen(&b));
        for (a, e) in fast.data().iter().zip(&slow) {
            assert!((*a as f64 - e).abs() < 1e-5);
        }

        let x = uniform(&[8], -2.0, 2.0, &mut rng);
        let w = uniform(&[4, 8], -1.0, 1.0, &mut rng);
        let b = uniform(&[4], -1.0, 1.0, &mut rng);
        let fast = crate::numerics::fully_connected(&x, &w, &b).unwrap();
        let slow = fc_ref(&widen(&x), &widen(&w), &widen(&b));
        for (a, e) in fast.data().iter().zip(&slow) {
            assert!((*a as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn broken_backward_is_detected() {
        // Sanity check that the comparison can fail at all.
        let numeric = [1.0, 2.0, 3.0];
        let analytic = [1.0f32, 2.0, 3.3];
        assert!(max_relative_error(&analytic, &numeric) > 0.05);
    }

    #[test]
    fn eps_out_of_range_rejected() {
        assert!(grad_check(LayerUnderTest::Relu, &[3], 0.5, 0).is_err());
    }
}
