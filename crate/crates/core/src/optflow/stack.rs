use rayon::prelude::*;

use super::{farneback_flow, FarnebackParams, FrameGray};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `(i, i + 1)` for `i = 0, 2, ..., 2 * (count - 1)`: one flow per sampled
/// frame, aligned with the sampled kinematics rows.
pub fn standard_pairs(count: usize) -> Vec<(usize, usize)> {
    (0..count).map(|k| (2 * k, 2 * k + 1)).collect()
}

/// Stacks the flows of the given frame pairs into `[2 * P, H, W]` with channel
/// layout `[u0, v0, u1, v1, ...]`.
pub fn flow_stack(
    frames: &[FrameGray],
    pairs: &[(usize, usize)],
    params: &FarnebackParams,
) -> Result<Tensor> {
    if pairs.is_empty() {
        return Err(Error::contract("flow_stack: no frame pairs"));
    }
    if let Some(&(i, j)) = pairs
        .iter()
        .find(|&&(i, j)| i >= frames.len() || j >= frames.len())
    {
        return Err(Error::contract(format!(
            "flow_stack: pair ({i}, {j}) out of range for {} frames",
            frames.len()
        )));
    }
    let (h, w) = (frames[0].height(), frames[0].width());
    let flows = pairs
        .par_iter()
        .map(|&(i, j)| farneback_flow(&frames[i], &frames[j], params))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(2 * pairs.len() * h * w);
    for f in flows {
        data.extend_from_slice(&f.u);
        data.extend_from_slice(&f.v);
    }
    Tensor::from_vec(&[2 * pairs.len(), h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_pairing_yields_25_fields() {
        let pairs = standard_pairs(25);
        assert_eq!(pairs.len(), 25);
        assert_eq!(pairs[0], (0, 1));
        assert_eq!(pairs[24], (48, 49));
        assert!(pairs.iter().all(|&(i, j)| i % 2 == 0 && j == i + 1));
    }

    #[test]
    fn identical_frames_give_zero_stack() {
        let vals: Vec<f32> = (0..64 * 64)
            .map(|i| ((i * 37) % 101) as f32 / 100.0)
            .collect();
        let frame = FrameGray::new(64, 64, vals).unwrap();
        let frames = vec![frame; 50];
        let stack = flow_stack(&frames, &standard_pairs(25), &FarnebackParams::default()).unwrap();
        assert_eq!(stack.shape(), &[50, 64, 64]);
        assert!(stack.max_abs() < 1e-3);
    }

    #[test]
    fn out_of_range_pair_rejected() {
        let frames = vec![FrameGray::new(16, 16, vec![0.5; 256]).unwrap(); 3];
        assert!(matches!(
            flow_stack(&frames, &[(1, 3)], &FarnebackParams::default()),
            Err(Error::Contract(_))
        ));
    }
}
