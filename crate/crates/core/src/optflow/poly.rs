use super::frame::FrameGray;

/// Per-pixel quadratic model `f(p) ~ p^T A p + b^T p + c` around each pixel,
/// with `p = (x, y)` in pixels relative to the pixel (x = column, y = row).
///
/// `A` is symmetric and stored as `(a_xx, a_xy, a_yy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCoeffs {
    pub height: usize,
    pub width: usize,
    pub a_xx: Vec<f32>,
    pub a_xy: Vec<f32>,
    pub a_yy: Vec<f32>,
    pub b_x: Vec<f32>,
    pub b_y: Vec<f32>,
    pub c: Vec<f32>,
}

/// Basis order used by the projection rows.
const BASIS: usize = 6; // 1, x, y, x^2, y^2, xy

fn basis(x: f64, y: f64) -> [f64; BASIS] {
    [1.0, x, y, x * x, y * y, x * y]
}

/// Solves `m * out = rhs` for a small dense system by Gauss-Jordan with
/// partial pivoting.
fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = m.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .expect("non-empty");
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        let d = m[col][col];
        assert!(d.abs() > 1e-12, "singular polynomial-expansion Gram matrix");
        for j in 0..n {
            m[col][j] /= d;
        }
        for v in rhs[col].iter_mut() {
            *v /= d;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = m[row][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                m[row][j] -= f * m[col][j];
            }
            let (src, dst) = if row < col {
                let (lo, hi) = rhs.split_at_mut(col);
                (&hi[0], &mut lo[row])
            } else {
                let (lo, hi) = rhs.split_at_mut(row);
                (&lo[col], &mut hi[0])
            };
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d -= f * s;
            }
        }
    }
    rhs
}

/// Fits the quadratic model at every pixel over a Gaussian-weighted
/// `poly_n x poly_n` neighborhood, extending the frame by clamping at borders.
pub fn poly_expansion(frame: &FrameGray, poly_n: usize, poly_sigma: f64) -> PolyCoeffs {
    expand_plane(
        frame.values(),
        frame.height(),
        frame.width(),
        poly_n,
        poly_sigma,
    )
}

pub(crate) fn expand_plane(
    values: &[f32],
    height: usize,
    width: usize,
    poly_n: usize,
    poly_sigma: f64,
) -> PolyCoeffs {
    assert!(
        poly_n % 2 == 1 && poly_n >= 3,
        "poly_n must be odd and >= 3"
    );
    let r = poly_n / 2;
    let ri = r as isize;
    // The Gaussian weight is separable, so the six weighted moments
    // sum(w * basis * f) come from two 1-D passes; the dual Gram inverse then
    // maps moments to coefficients.
    let g: Vec<f64> = (-ri..=ri)
        .map(|d| (-((d * d) as f64) / (2.0 * poly_sigma * poly_sigma)).exp())
        .collect();
    let gx: Vec<f32> = (-ri..=ri)
        .zip(&g)
        .map(|(d, w)| (w * d as f64) as f32)
        .collect();
    let gxx: Vec<f32> = (-ri..=ri)
        .zip(&g)
        .map(|(d, w)| (w * (d * d) as f64) as f32)
        .collect();
    let g0: Vec<f32> = g.iter().map(|&w| w as f32).collect();
    let ginv = dual_inverse(poly_n, poly_sigma);

    // Row pass over a clamp-extended frame: (h + 2r) rows of width w.
    let ph = height + 2 * r;
    let mut row0 = vec![0.0f32; ph * width];
    let mut row1 = vec![0.0f32; ph * width];
    let mut row2 = vec![0.0f32; ph * width];
    let mut line = vec![0.0f32; width + 2 * r];
    for py in 0..ph {
        let y = (py as isize - ri).clamp(0, height as isize - 1) as usize;
        let src = &values[y * width..(y + 1) * width];
        for (k, v) in line.iter_mut().enumerate() {
            *v = src[(k as isize - ri).clamp(0, width as isize - 1) as usize];
        }
        let base = py * width;
        for x in 0..width {
            let win = &line[x..x + poly_n];
            let (mut a, mut b, mut c) = (0.0f32, 0.0f32, 0.0f32);
            for k in 0..poly_n {
                a += g0[k] * win[k];
                b += gx[k] * win[k];
                c += gxx[k] * win[k];
            }
            row0[base + x] = a;
            row1[base + x] = b;
            row2[base + x] = c;
        }
    }

    let n = height * width;
    let mut coeffs: [Vec<f32>; BASIS] = std::array::from_fn(|_| vec![0.0; n]);
    let mut m = [0.0f32; BASIS];
    for y in 0..height {
        for x in 0..width {
            m.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..poly_n {
                let j = (y + k) * width + x;
                let (a, b, c) = (row0[j], row1[j], row2[j]);
                m[0] += g0[k] * a;
                m[1] += g0[k] * b;
                m[2] += gx[k] * a;
                m[3] += g0[k] * c;
                m[4] += gxx[k] * a;
                m[5] += gx[k] * b;
            }
            let i = y * width + x;
            for (j, row) in ginv.iter().enumerate() {
                coeffs[j][i] = row.iter().zip(&m).map(|(a, b)| a * b).sum();
            }
        }
    }
    let [c, b_x, b_y, a_xx, a_yy, xy] = coeffs;
    PolyCoeffs {
        height,
        width,
        a_xx,
        a_xy: xy.into_iter().map(|v| 0.5 * v).collect(),
        a_yy,
        b_x,
        b_y,
        c,
    }
}

/// Inverse of the Gaussian-weighted Gram matrix of the basis.
fn dual_inverse(poly_n: usize, sigma: f64) -> [[f32; BASIS]; BASIS] {
    let r = (poly_n / 2) as isize;
    let mut gram = vec![vec![0.0; BASIS]; BASIS];
    for y in -r..=r {
        for x in -r..=r {
            let (x, y) = (x as f64, y as f64);
            let w = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            let b = basis(x, y);
            for i in 0..BASIS {
                for j in 0..BASIS {
                    gram[i][j] += w * b[i] * b[j];
                }
            }
        }
    }
    let identity = (0..BASIS)
        .map(|i| (0..BASIS).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let inv = solve_dense(gram, identity);
    std::array::from_fn(|i| std::array::from_fn(|j| inv[i][j] as f32))
}
