use rand::Rng;

use crate::dataio::{Gesture, Skill};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::selfsup::Embeddings;
use crate::util::seeded_rng;

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITERATIONS: usize = 10_000;
const START_SEED: u64 = 0x0005_eed0_f9ca;

/// Representations projected on their top two principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub coords: Vec<[f64; 2]>,
    /// Fraction of total variance along each axis.
    pub explained: [f64; 2],
    pub gestures: Vec<Gesture>,
    pub skills: Vec<Skill>,
    pub trial_ids: Vec<String>,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(c: &[f64], v: &[f64]) -> Vec<f64> {
    c.chunks_exact(v.len())
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
    }
}

/// Dominant eigenpair of a symmetric PSD matrix by power iteration.
fn power_iteration(c: &[f64], d: usize, found: &[Vec<f64>], rng: &mut impl Rng) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut v, found);
    normalize(&mut v);
    for _ in 0..PCA_MAX_ITERATIONS {
        let mut next = mat_vec(c, &v);
        orthogonalize(&mut next, found);
        if normalize(&mut next) == 0.0 {
            // Remaining spectrum is zero; any orthogonal direction will do.
            return (0.0, v);
        }
        let diff = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff < PCA_TOLERANCE {
            break;
        }
    }
    let cv = mat_vec(c, &v);
    let lambda = cv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    (lambda, v)
}

/// Top-two principal axes of the rows of `x` (n x d): returns the projected
/// coordinates and the explained-variance fractions.
pub fn pca_top2(x: &Tensor) -> Result<(Vec<[f64; 2]>, [f64; 2])> {
    if x.rank() != 2 || x.shape()[0] < 3 {
        return Err(Error::contract(format!(
            "pca needs an n x d matrix with n >= 3, got shape {:?}",
            x.shape()
        )));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0f64; d];
    for row in x.data().chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = x
        .data()
        .chunks_exact(d)
        .map(|row| row.iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect())
        .collect();
    let mut cov = vec![0.0f64; d * d];
    for row in &centered {
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for (c, &rj) in cov[i * d..(i + 1) * d].iter_mut().zip(row) {
                *c += ri * rj;
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n as f64);
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if total <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate(
            "all representations are identical".into(),
        ));
    }

    let mut rng = seeded_rng(START_SEED);
    let mut axes: Vec<Vec<f64>> = Vec::new();
    let mut values = [0.0; 2];
    let mut deflated = cov.clone();
    for k in 0..2 {
        let (lambda, mut v) = power_iteration(&deflated, d, &axes, &mut rng);
        // Sign rule: the largest-magnitude component is positive.
        let lead = v
            .iter()
            .cloned()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                deflated[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        values[k] = lambda;
        axes.push(v);
    }
    let coords = centered
        .iter()
        .map(|row| {
            let p = |a: &Vec<f64>| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect();
    let explained = values.map(|v| (v / total).clamp(0.0, 1.0));
    Ok((coords, explained))
}

pub fn pca_project(embeddings: &Embeddings) -> Result<Projection2D> {
    let (coords, explained) = pca_top2(&embeddings.matrix)?;
    Ok(Projection2D {
        coords,
        explained,
        gestures: embeddings.gestures.clone(),
        skills: embeddings.skills.clone(),
        trial_ids: embeddings.trial_ids.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, scales: &[f32], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = scales.len();
        Tensor::from_fn(&[n, d], |i| {
            scales[i % d] * rng.sample::<f32, _>(StandardNormal)
        })
    }

    /// Cyclic Jacobi eigenvalues of a symmetric matrix (test oracle).
    fn jacobi_eigenvalues(mut a: Vec<f64>, d: usize) -> Vec<f64> {
        for _ in 0..100 {
            for p in 0..d {
                for q in p + 1..d {
                    let apq = a[p * d + q];
                    if apq.abs() < 1e-15 {
                        continue;
                    }
                    let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let (akp, akq) = (a[k * d + p], a[k * d + q]);
                        a[k * d + p] = c * akp - s * akq;
                        a[k * d + q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let (apk, aqk) = (a[p * d + k], a[q * d + k]);
                        a[p * d + k] = c * apk - s * aqk;
                        a[q * d + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    fn covariance(x: &Tensor) -> Vec<f64> {
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let rows: Vec<Vec<f64>> = x
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect();
        let mean: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let mut c = vec![0.0; d * d];
        for r in &rows {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n as f64;
                }
            }
        }
        c
    }

    #[test]
    fn axis_aligned_2d_data_is_recovered() {
        let x = gaussian(400, &[3.0, 1.0], 1);
        let (coords, explained) = pca_top2(&x).unwrap();
        let mean: Vec<f64> = (0..2)
            .map(|j| {
                x.data()
                    .iter()
                    .skip(j)
                    .step_by(2)
                    .map(|&v| v as f64)
                    .sum::<f64>()
                    / 400.0
            })
            .collect();
        // The sample cloud is only approximately axis aligned; compare with
        // the eigen-decomposition rather than the generating scales.
        let cov = covariance(&x);
        let ev = jacobi_eigenvalues(cov.clone(), 2);
        let total = ev.iter().sum::<f64>();
        assert!((explained[0] - ev[0] / total).abs() < 1e-9);
        assert!((explained[1] - ev[1] / total).abs() < 1e-9);
        for (i, c) in coords.iter().enumerate() {
            let xc = x.data()[2 * i] as f64 - mean[0];
            assert!(
                (c[0].abs() - xc.abs()).abs() < 0.05 * (1.0 + xc.abs()),
                "row {i}"
            );
        }
    }

    #[test]
    fn exactly_axis_aligned_data() {
        let rows = [[2.0f32, 0.5], [-2.0, -0.5], [2.0, -0.5], [-2.0, 0.5]];
        let x = Tensor::from_vec(&[4, 2], rows.concat()).unwrap();
        let (coords, explained) = pca_top2(&x).unwrap();
        assert!((explained[0] - 4.0 / 4.25).abs() < 1e-12);
        assert!((explained[1] - 0.25 / 4.25).abs() < 1e-12);
        for (c, r) in coords.iter().zip(rows) {
            assert!((c[0].abs() - r[0].abs() as f64).abs() < 1e-9);
            assert!((c[1].abs() - r[1].abs() as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn isotropic_cloud_matches_eigendecomposition() {
        for d in [4usize, 6, 8] {
            let x = gaussian(2000, &vec![1.0; d], d as u64);
            let (_, explained) = pca_top2(&x).unwrap();
            let ev = jacobi_eigenvalues(covariance(&x), d);
            let total: f64 = ev.iter().sum();
            assert!((explained[0] - ev[0] / total).abs() < 1e-6, "d={d}");
            assert!((explained[1] - ev[1] / total).abs() < 1e-6, "d={d}");
            // Each axis carries about 1/d of the variance.
            for e in explained {
                assert!((e - 1.0 / d as f64).abs() < 0.35 / d as f64, "d={d}: {e}");
            }
            assert!(explained[0] >= explained[1]);
        }
    }

    #[test]
    fn duplicated_rows_give_duplicated_coordinates() {
        let x = gaussian(30, &[2.0, 1.0, 0.5], 3);
        let doubled = Tensor::from_vec(&[60, 3], [x.data(), x.data()].concat()).unwrap();
        let (a, ea) = pca_top2(&x).unwrap();
        let (b, eb) = pca_top2(&doubled).unwrap();
        for i in 0..30 {
            for k in 0..2 {
                assert!((a[i][k] - b[i][k]).abs() < 1e-6);
                assert!((a[i][k] - b[i + 30][k]).abs() < 1e-6);
            }
        }
        assert!((ea[0] - eb[0]).abs() < 1e-9);
    }

    #[test]
    fn rotation_preserves_explained_variance() {
        let x = gaussian(200, &[3.0, 1.5, 0.5], 4);
        let (s, c) = (0.6f32, 0.8f32);
        let rotated = Tensor::from_fn(&[200, 3], |i| {
            let (r, j) = (i / 3, i % 3);
            let v = &x.data()[3 * r..3 * r + 3];
            match j {
                0 => c * v[0] - s * v[1],
                1 => s * v[0] + c * v[1],
                _ => v[2],
            }
        });
        let (a, ea) = pca_top2(&x).unwrap();
        let (b, eb) = pca_top2(&rotated).unwrap();
        assert!((ea[0] - eb[0]).abs() < 1e-5 && (ea[1] - eb[1]).abs() < 1e-5);
        for (p, q) in a.iter().zip(&b) {
            assert!((p[0].abs() - q[0].abs()).abs() < 1e-3);
        }
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let x = Tensor::filled(&[5, 3], 1.5);
        assert!(matches!(pca_top2(&x), Err(Error::Degenerate(_))));
        assert!(matches!(
            pca_top2(&Tensor::zeros(&[2, 3])),
            Err(Error::Contract(_))
        ));
    }
}
