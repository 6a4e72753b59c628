use serde::{Deserialize, Serialize};

use super::frame::{gaussian_kernel, gaussian_kernel_radius, resample_bilinear, separable_blur};
use super::poly::{expand_plane, PolyCoeffs};
use super::{FlowField, FrameGray};
use crate::error::{Error, Result};

/// Determinant below which the local system is treated as singular and the
/// current estimate is kept.
pub const SINGULAR_DET: f64 = 1e-9;

/// Coarsest pyramid level is never smaller than this on either axis.
const MIN_LEVEL_EXTENT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarnebackParams {
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    /// Side of the Gaussian window used to average the displacement equations.
    pub window: usize,
    pub iterations: usize,
    /// Side of the polynomial-expansion neighborhood.
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        FarnebackParams {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            window: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FarnebackParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            problems.push(format!(
                "pyramid_scale must be in (0, 1), got {}",
                self.pyramid_scale
            ));
        }
        if self.pyramid_levels == 0 {
            problems.push("pyramid_levels must be at least 1".to_string());
        }
        if self.iterations == 0 {
            problems.push("iterations must be at least 1".to_string());
        }
        for (name, v) in [("window", self.window), ("poly_n", self.poly_n)] {
            if v < 3 || v % 2 == 0 {
                problems.push(format!("{name} must be odd and >= 3, got {v}"));
            }
        }
        if !(self.poly_sigma > 0.0) {
            problems.push(format!(
                "poly_sigma must be positive, got {}",
                self.poly_sigma
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

struct Level {
    height: usize,
    width: usize,
    prev: Vec<f32>,
    next: Vec<f32>,
}

fn build_pyramid(prev: &FrameGray, next: &FrameGray, params: &FarnebackParams) -> Vec<Level> {
    let (h, w) = (prev.height(), prev.width());
    let mut levels = vec![Level {
        height: h,
        width: w,
        prev: prev.values().to_vec(),
        next: next.values().to_vec(),
    }];
    let mut scale = 1.0;
    for _ in 1..params.pyramid_levels {
        scale *= params.pyramid_scale;
        let lh = (h as f64 * scale).round() as usize;
        let lw = (w as f64 * scale).round() as usize;
        if lh < MIN_LEVEL_EXTENT || lw < MIN_LEVEL_EXTENT {
            break;
        }
        // Each level is derived from the full-resolution frames.
        let sigma = ((1.0 / scale - 1.0) * 0.5) as f32;
        let kernel = gaussian_kernel(sigma);
        let shrink = |src: &[f32]| {
            let blurred = separable_blur(src, h, w, &kernel);
            resample_bilinear(&blurred, h, w, lh, lw)
        };
        levels.push(Level {
            height: lh,
            width: lw,
            prev: shrink(prev.values()),
            next: shrink(next.values()),
        });
    }
    levels
}

/// Per-pixel normal equations `G d = h` with `G = A^T A`, `h = A^T db`,
/// stored as five planes `(g11, g12, g22, h1, h2)`.
fn update_matrices(r0: &PolyCoeffs, r1: &PolyCoeffs, flow: &FlowField) -> [Vec<f32>; 5] {
    let (h, w) = (r0.height, r0.width);
    let mut m: [Vec<f32>; 5] = std::array::from_fn(|_| vec![0.0; h * w]);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (flow.u[i], flow.v[i]);
            let (sy, sx) = (
                (y as f32 + dy).clamp(0.0, (h - 1) as f32),
                (x as f32 + dx).clamp(0.0, (w - 1) as f32),
            );
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f32, sx - x0 as f32);
            let taps = [
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ];
            let s = |plane: &[f32]| taps.iter().map(|&(j, c)| plane[j] * c).sum::<f32>();

            let a11 = 0.5 * (r0.a_xx[i] + s(&r1.a_xx));
            let a12 = 0.5 * (r0.a_xy[i] + s(&r1.a_xy));
            let a22 = 0.5 * (r0.a_yy[i] + s(&r1.a_yy));
            let db1 = -0.5 * (s(&r1.b_x) - r0.b_x[i]) + a11 * dx + a12 * dy;
            let db2 = -0.5 * (s(&r1.b_y) - r0.b_y[i]) + a12 * dx + a22 * dy;

            m[0][i] = a11 * a11 + a12 * a12;
            m[1][i] = a12 * (a11 + a22);
            m[2][i] = a12 * a12 + a22 * a22;
            m[3][i] = a11 * db1 + a12 * db2;
            m[4][i] = a12 * db1 + a22 * db2;
        }
    }
    m
}

fn solve_flow(m: &[Vec<f32>; 5], flow: &mut FlowField) {
    for i in 0..flow.u.len() {
        let (g11, g12, g22) = (m[0][i] as f64, m[1][i] as f64, m[2][i] as f64);
        let (h1, h2) = (m[3][i] as f64, m[4][i] as f64);
        let det = g11 * g22 - g12 * g12;
        if det < SINGULAR_DET {
            continue;
        }
        flow.u[i] = ((g22 * h1 - g12 * h2) / det) as f32;
        flow.v[i] = ((g11 * h2 - g12 * h1) / det) as f32;
    }
}

fn upsample_flow(flow: &FlowField, height: usize, width: usize) -> FlowField {
    let su = width as f32 / flow.width as f32;
    let sv = height as f32 / flow.height as f32;
    let mut u = resample_bilinear(&flow.u, flow.height, flow.width, height, width);
    let mut v = resample_bilinear(&flow.v, flow.height, flow.width, height, width);
    u.iter_mut().for_each(|x| *x *= su);
    v.iter_mut().for_each(|x| *x *= sv);
    FlowField {
        height,
        width,
        u,
        v,
    }
}

/// Dense flow from `prev` to `next`: a pixel at `p` in `prev` appears at
/// `p + (u, v)` in `next`.
///
/// Coarse-to-fine: at each pyramid level both frames are expanded into local
/// quadratics, then `iterations` times the displacement equations are
/// re-linearized around the current estimate (warping `next`'s expansion),
/// averaged over a Gaussian window and solved per pixel.
pub fn farneback_flow(
    prev: &FrameGray,
    next: &FrameGray,
    params: &FarnebackParams,
) -> Result<FlowField> {
    params.validate()?;
    if prev.height() != next.height() || prev.width() != next.width() {
        return Err(Error::contract(format!(
            "farneback_flow: frame extents differ ({}x{} vs {}x{})",
            prev.height(),
            prev.width(),
            next.height(),
            next.width()
        )));
    }
    let levels = build_pyramid(prev, next, params);
    let window = gaussian_kernel_radius(0.15 * params.window as f32, params.window / 2);

    let mut flow: Option<FlowField> = None;
    for level in levels.iter().rev() {
        let mut current = match flow {
            None => FlowField::zeros(level.height, level.width),
            Some(f) => upsample_flow(&f, level.height, level.width),
        };
        let r0 = expand_plane(
            &level.prev,
            level.height,
            level.width,
            params.poly_n,
            params.poly_sigma,
        );
        let r1 = expand_plane(
            &level.next,
            level.height,
            level.width,
            params.poly_n,
            params.poly_sigma,
        );
        for _ in 0..params.iterations {
            let m = update_matrices(&r0, &r1, &current);
            let blurred = m.map(|plane| separable_blur(&plane, level.height, level.width, &window));
            solve_flow(&blurred, &mut current);
        }
        flow = Some(current);
    }
    let mut flow = flow.expect("at least one pyramid level");
    let bound = flow.width as f32;
    for x in flow.u.iter_mut().chain(flow.v.iter_mut()) {
        if !x.is_finite() {
            *x = 0.0;
        }
        *x = x.clamp(-bound, bound);
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optflow::frame::gaussian_kernel;
    use crate::util::seeded_rng;
    use rand::Rng;

    const SIZE: usize = 64;
    const PAD: usize = 8;

    /// Gaussian-blurred uniform noise (sigma 2) stretched to [0, 1], and two
    /// crops of it offset by the integer translation `(tx, ty)`.
    fn translated_pair(seed: u64, tx: isize, ty: isize) -> (FrameGray, FrameGray) {
        let side = SIZE + 2 * PAD;
        let mut rng = seeded_rng(seed);
        let noise: Vec<f32> = (0..side * side).map(|_| rng.random::<f32>()).collect();
        let mut canvas = separable_blur(&noise, side, side, &gaussian_kernel(2.0));
        let (lo, hi) = canvas
            .iter()
            .fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        canvas.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        let crop = |ox: isize, oy: isize| {
            let vals = (0..SIZE * SIZE)
                .map(|i| {
                    let y = (i / SIZE) as isize + oy;
                    let x = (i % SIZE) as isize + ox;
                    canvas[y as usize * side + x as usize]
                })
                .collect();
            FrameGray::new(SIZE, SIZE, vals).unwrap()
        };
        let p = PAD as isize;
        (crop(p, p), crop(p - tx, p - ty))
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let (a, _) = translated_pair(1, 0, 0);
        let flow = farneback_flow(&a, &a, &FarnebackParams::default()).unwrap();
        assert!(flow.max_abs() < 1e-3, "{}", flow.max_abs());
    }

    #[test]
    fn recovers_horizontal_translation() {
        let (a, b) = translated_pair(2, 2, 0);
        let flow = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        let epe = flow.central_endpoint_error((2.0, 0.0), 0.6);
        assert!(epe < 0.3, "epe {epe}");
    }

    #[test]
    fn recovers_diagonal_translation() {
        let (a, b) = translated_pair(3, -1, 1);
        let flow = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        let epe = flow.central_endpoint_error((-1.0, 1.0), 0.6);
        assert!(epe < 0.3, "epe {epe}");
    }

    #[test]
    fn roughly_antisymmetric() {
        let (a, b) = translated_pair(4, 1, -2);
        let params = FarnebackParams::default();
        let fwd = farneback_flow(&a, &b, &params).unwrap();
        let bwd = farneback_flow(&b, &a, &params).unwrap();
        let mut sum = FlowField::zeros(SIZE, SIZE);
        for i in 0..SIZE * SIZE {
            sum.u[i] = fwd.u[i] + bwd.u[i];
            sum.v[i] = fwd.v[i] + bwd.v[i];
        }
        let discrepancy = sum.central_endpoint_error((0.0, 0.0), 0.6);
        assert!(discrepancy < 0.5, "{discrepancy}");
    }

    #[test]
    fn deterministic() {
        let (a, b) = translated_pair(5, 3, 1);
        let p = FarnebackParams::default();
        assert_eq!(
            farneback_flow(&a, &b, &p).unwrap(),
            farneback_flow(&a, &b, &p).unwrap()
        );
    }

    #[test]
    fn mismatched_frames_rejected() {
        let a = FrameGray::new(16, 16, vec![0.0; 256]).unwrap();
        let b = FrameGray::new(16, 20, vec![0.0; 320]).unwrap();
        assert!(farneback_flow(&a, &b, &FarnebackParams::default()).is_err());
    }

    #[test]
    fn invalid_params_listed() {
        let p = FarnebackParams {
            pyramid_scale: 1.5,
            window: 4,
            ..FarnebackParams::default()
        };
        match p.validate() {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
