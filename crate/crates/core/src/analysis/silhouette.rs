use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::downstream::ClassId;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Per-sample silhouette `(b - a) / max(a, b)` over the rows whose label is
/// in `subset`; other rows get `None`.
pub fn silhouette_samples(
    points: &Tensor,
    labels: &[ClassId],
    subset: &[ClassId],
) -> Result<Vec<Option<f64>>> {
    if points.rank() != 2 || points.shape()[0] != labels.len() {
        return Err(Error::contract(format!(
            "silhouette: {} labels for points of shape {:?}",
            labels.len(),
            points.shape()
        )));
    }
    let d = points.shape()[1];
    let mut classes: Vec<ClassId> = subset.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let counts: Vec<usize> = classes
        .iter()
        .map(|c| labels.iter().filter(|&l| l == c).count())
        .collect();
    if classes.len() < 2 || counts.iter().any(|&c| c < 2) {
        return Err(Error::contract(format!(
            "silhouette needs at least 2 labels with 2 members each, got counts {counts:?} for {classes:?}"
        )));
    }
    let members: Vec<usize> = (0..labels.len())
        .filter(|&i| classes.binary_search(&labels[i]).is_ok())
        .collect();
    let row = |i: usize| &points.data()[i * d..(i + 1) * d];
    let scores: Vec<(usize, f64)> = members
        .par_iter()
        .map(|&i| {
            let own = classes.binary_search(&labels[i]).expect("member");
            let mut sums = vec![0.0f64; classes.len()];
            for &j in &members {
                if j != i {
                    let k = classes.binary_search(&labels[j]).expect("member");
                    sums[k] += distance(row(i), row(j));
                }
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..classes.len())
                .filter(|&k| k != own)
                .map(|k| sums[k] / counts[k] as f64)
                .fold(f64::INFINITY, f64::min);
            let s = if a.max(b) > 0.0 {
                (b - a) / a.max(b)
            } else {
                0.0
            };
            (i, s)
        })
        .collect();
    let mut out = vec![None; labels.len()];
    for (i, s) in scores {
        out[i] = Some(s);
    }
    Ok(out)
}

/// Mean silhouette over the rows whose label is in `subset`.
pub fn silhouette(points: &Tensor, labels: &[ClassId], subset: &[ClassId]) -> Result<f64> {
    let s: Vec<f64> = silhouette_samples(points, labels, subset)?
        .into_iter()
        .flatten()
        .collect();
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Mean silhouette of each class in `subset`.
pub fn silhouette_by_class(
    points: &Tensor,
    labels: &[ClassId],
    subset: &[ClassId],
) -> Result<BTreeMap<ClassId, f64>> {
    let samples = silhouette_samples(points, labels, subset)?;
    let mut acc: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
    for (s, &l) in samples.iter().zip(labels) {
        if let Some(s) = s {
            let e = acc.entry(l).or_default();
            e.0 += s;
            e.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn cloud(centers: &[[f32; 2]], per: usize, spread: f32, seed: u64) -> (Tensor, Vec<ClassId>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..per {
                data.push(c[0] + spread * rng.sample::<f32, _>(StandardNormal));
                data.push(c[1] + spread * rng.sample::<f32, _>(StandardNormal));
                labels.push(k as ClassId);
            }
        }
        (Tensor::from_vec(&[labels.len(), 2], data).unwrap(), labels)
    }

    #[test]
    fn separated_clusters_score_high() {
        let (x, y) = cloud(&[[0.0, 0.0], [50.0, 0.0]], 50, 1.0, 1);
        assert!(silhouette(&x, &y, &[0, 1]).unwrap() > 0.8);
    }

    #[test]
    fn shuffled_labels_score_near_zero() {
        let (x, mut y) = cloud(&[[0.0, 0.0], [6.0, 0.0]], 100, 1.0, 2);
        y.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        assert!(silhouette(&x, &y, &[0, 1]).unwrap().abs() < 0.1);
    }

    #[test]
    fn arbitrary_halves_of_one_cluster_score_low() {
        let (x, _) = cloud(&[[0.0, 0.0]], 200, 1.0, 4);
        let y: Vec<ClassId> = (0..200).map(|i| (i % 2) as ClassId).collect();
        assert!(silhouette(&x, &y, &[0, 1]).unwrap() < 0.1);
    }

    #[test]
    fn invariant_to_translation_and_scale() {
        let (x, y) = cloud(&[[0.0, 0.0], [3.0, 1.0], [0.0, 4.0]], 20, 1.0, 5);
        let moved = Tensor::from_fn(x.shape(), |i| {
            2.5 * x.data()[i] + if i % 2 == 0 { 7.0 } else { -3.0 }
        });
        let a = silhouette(&x, &y, &[0, 1, 2]).unwrap();
        let b = silhouette(&moved, &y, &[0, 1, 2]).unwrap();
        assert!((a - b).abs() < 1e-5);
    }

    #[test]
    fn subset_excludes_other_labels() {
        let (x, y) = cloud(&[[0.0, 0.0], [30.0, 0.0], [15.0, 0.0]], 20, 1.0, 6);
        let per = silhouette_samples(&x, &y, &[0, 1]).unwrap();
        assert!(per.iter().zip(&y).all(|(s, &l)| s.is_some() == (l != 2)));
        let by = silhouette_by_class(&x, &y, &[0, 1, 2]).unwrap();
        assert!(by[&2] < by[&0] && by[&2] < by[&1]);
    }

    #[test]
    fn single_class_subset_is_contract_error() {
        let (x, y) = cloud(&[[0.0, 0.0], [3.0, 0.0]], 5, 1.0, 7);
        assert!(matches!(silhouette(&x, &y, &[0]), Err(Error::Contract(_))));
        let z: Vec<ClassId> = (0..10).map(|i| if i == 0 { 1 } else { 0 }).collect();
        assert!(matches!(
            silhouette(&x, &z, &[0, 1]),
            Err(Error::Contract(_))
        ));
    }
}
