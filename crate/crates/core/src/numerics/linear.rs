use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    input.expect_rank(1, "fully_connected input")?;
    weights.expect_rank(2, "fully_connected weights")?;
    let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n_in {
        return Err(Error::contract(format!(
            "fully_connected: input length {} but weights expect {n_in}",
            input.len()
        )));
    }
    bias.expect_shape(&[n_out], "fully_connected bias")?;
    Ok((n_out, n_in))
}

/// `out[j] = sum_i w[j, i] * x[i] + b[j]`.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_out, n_in) = check(input, weights, bias)?;
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n_in)
        .zip(bias.data())
        .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f32>() + b)
        .collect();
    Tensor::from_vec(&[n_out], out)
}

pub fn fully_connected_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<LinearGrads> {
    let (n_out, n_in) = check(input, weights, bias)?;
    grad_out.expect_shape(&[n_out], "fully_connected_backward grad_out")?;
    let x = input.data();
    let go = grad_out.data();

    let mut gw = vec![0.0f32; n_out * n_in];
    let mut gx = vec![0.0f32; n_in];
    for ((grow, wrow), &g) in gw
        .chunks_exact_mut(n_in)
        .zip(weights.data().chunks_exact(n_in))
        .zip(go)
    {
        for ((gw, gx), (&w, &x)) in grow.iter_mut().zip(gx.iter_mut()).zip(wrow.iter().zip(x)) {
            *gw = g * x;
            *gx += g * w;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(&[n_in], gx)?,
        weights: Tensor::from_vec(&[n_out, n_in], gw)?,
        bias: grad_out.clone(),
    })
}
