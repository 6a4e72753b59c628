//! Built-in correctness suites: gradient checks, an optical-flow oracle on
//! translated textures and a boosting oracle against exhaustive split search.
//! Each check is reported as a [`Gate`].

use rand::Rng;

use crate::analysis::Gate;
use crate::downstream::{gbt_predict, gbt_train, ClassId, GBTConfig, Node};
use crate::error::Result;
use crate::model::{composite_grad_check, Architecture};
use crate::numerics::gradcheck::{grad_check, LayerUnderTest};
use crate::numerics::{ConvSpec, Tensor};
use crate::optflow::frame::{gaussian_kernel, separable_blur};
use crate::optflow::{farneback_flow, FarnebackParams, FrameGray};
use crate::util::{derive_seed, seeded_rng};

pub const LAYER_GRADIENT_TOLERANCE: f64 = 1e-3;
pub const COMPOSITE_GRADIENT_TOLERANCE: f64 = 1e-2;
pub const FLOW_EPE_TOLERANCE: f64 = 0.3;
pub const ZERO_FLOW_TOLERANCE: f64 = 1e-3;
/// Share of each axis, centered, over which flow errors are averaged.
pub const FLOW_CENTRAL_FRACTION: f32 = 0.6;
pub const FLOW_EXTENT: usize = 64;
pub const GRADIENT_PROBES: usize = 5;
pub const FLOW_TEXTURES: usize = 10;
pub const MAX_TRANSLATION: i32 = 3;
pub const STUMP_INSTANCES: usize = 20;
const GRADCHECK_EPS: f32 = 1e-3;

/// Small architecture for the composite check; the production network is
/// covered by the same code path at reduced size.
fn composite_architecture() -> Architecture {
    Architecture {
        in_channels: 4,
        input_extent: 16,
        conv_channels: vec![3, 5, 6, 6],
        embed_dim: 8,
        hidden: 12,
        samples: 2,
    }
}

/// Worst relative error per layer over [`GRADIENT_PROBES`] seeded probes.
pub fn gradient_suite(seed: u64) -> Result<Vec<Gate>> {
    let layers: [(&str, LayerUnderTest, &[usize]); 5] = [
        (
            "conv2d",
            LayerUnderTest::Conv2d {
                out_channels: 3,
                kernel: 3,
                spec: ConvSpec { stride: 1, pad: 1 },
            },
            &[2, 6, 6],
        ),
        (
            "conv2d stride 2",
            LayerUnderTest::Conv2d {
                out_channels: 3,
                kernel: 3,
                spec: ConvSpec { stride: 2, pad: 1 },
            },
            &[2, 7, 7],
        ),
        (
            "fully_connected",
            LayerUnderTest::FullyConnected { out_features: 5 },
            &[7],
        ),
        ("relu", LayerUnderTest::Relu, &[4, 5]),
        ("mse_loss", LayerUnderTest::Mse, &[3, 4]),
    ];
    let mut gates = Vec::new();
    for (name, layer, shape) in layers {
        let mut worst = 0.0f64;
        for probe in 0..GRADIENT_PROBES {
            let s = derive_seed(seed, &format!("selftest/grad/{name}/{probe}"));
            worst = worst.max(grad_check(layer, shape, GRADCHECK_EPS, s)?);
        }
        gates.push(Gate::below(
            format!("gradient {name}"),
            worst,
            LAYER_GRADIENT_TOLERANCE,
        ));
    }
    let mut worst = 0.0f64;
    for probe in 0..GRADIENT_PROBES {
        let s = derive_seed(seed, &format!("selftest/grad/composite/{probe}"));
        worst = worst.max(composite_grad_check(&composite_architecture(), s, 2)?);
    }
    gates.push(Gate::below(
        "gradient encode-decode composite",
        worst,
        COMPOSITE_GRADIENT_TOLERANCE,
    ));
    Ok(gates)
}

/// Gaussian-blurred uniform noise stretched to [0, 1] (`prev`) and the same
/// texture shifted by the integer displacement `(tx, ty)` (`next`), so that
/// the true flow is `(tx, ty)` everywhere.
pub fn translated_texture(seed: u64, extent: usize, tx: i32, ty: i32) -> (FrameGray, FrameGray) {
    let pad = 2 * MAX_TRANSLATION.max(tx.abs()).max(ty.abs()) as usize + 2;
    let side = extent + 2 * pad;
    let mut rng = seeded_rng(seed);
    let noise: Vec<f32> = (0..side * side).map(|_| rng.random::<f32>()).collect();
    let mut canvas = separable_blur(&noise, side, side, &gaussian_kernel(2.0));
    let (lo, hi) = canvas
        .iter()
        .fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    canvas
        .iter_mut()
        .for_each(|v| *v = (*v - lo) / (hi - lo).max(f32::EPSILON));
    let crop = |ox: isize, oy: isize| {
        let vals = (0..extent * extent)
            .map(|i| {
                let y = (i / extent) as isize + oy;
                let x = (i % extent) as isize + ox;
                canvas[y as usize * side + x as usize]
            })
            .collect();
        FrameGray::new(extent, extent, vals).expect("extent is valid")
    };
    let p = pad as isize;
    (crop(p, p), crop(p - tx as isize, p - ty as isize))
}

/// Seeded non-zero integer translations with Euclidean length at most
/// [`MAX_TRANSLATION`].
pub fn oracle_translations(seed: u64, count: usize) -> Vec<(i32, i32)> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = (
            rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
            rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
        );
        let len2 = t.0 * t.0 + t.1 * t.1;
        if len2 > 0 && len2 <= MAX_TRANSLATION * MAX_TRANSLATION {
            out.push(t);
        }
    }
    out
}

/// Worst central endpoint error over [`FLOW_TEXTURES`] translated textures,
/// and the zero-motion residual.
pub fn flow_suite(seed: u64) -> Result<Vec<Gate>> {
    let params = FarnebackParams::default();
    let mut worst = 0.0f64;
    for (k, (tx, ty)) in oracle_translations(derive_seed(seed, "selftest/flow"), FLOW_TEXTURES)
        .into_iter()
        .enumerate()
    {
        let (a, b) = translated_texture(
            derive_seed(seed, &format!("selftest/flow/{k}")),
            FLOW_EXTENT,
            tx,
            ty,
        );
        let flow = farneback_flow(&a, &b, &params)?;
        worst =
            worst.max(flow.central_endpoint_error((tx as f32, ty as f32), FLOW_CENTRAL_FRACTION));
    }
    let (a, _) = translated_texture(derive_seed(seed, "selftest/flow/still"), FLOW_EXTENT, 0, 0);
    let still = farneback_flow(&a, &a, &params)?.max_abs() as f64;
    Ok(vec![
        Gate::below("flow translation endpoint error", worst, FLOW_EPE_TOLERANCE),
        Gate::below("flow zero motion", still, ZERO_FLOW_TOLERANCE),
    ])
}

/// Best depth-1 split of one boosting round for class column `c`, found by
/// trying every feature and every midpoint threshold. Ties keep the lowest
/// feature, then the lowest threshold. Returns `(feature, threshold, left
/// leaf, right leaf)`, or `None` when no split has positive gain.
pub fn exhaustive_stump(
    x: &Tensor,
    y: &[ClassId],
    c: ClassId,
    n_classes: usize,
    cfg: &GBTConfig,
) -> Option<(usize, f32, f64, f64)> {
    let (n, width) = (x.shape()[0], x.shape()[1]);
    let data = x.data();
    let p = 1.0 / n_classes as f64;
    let grad: Vec<f64> = y
        .iter()
        .map(|&l| p - if l == c { 1.0 } else { 0.0 })
        .collect();
    let hess = p * (1.0 - p);
    let score = |g: f64, h: f64| g * g / (h + cfg.l2_lambda);
    let leaf = |g: f64, h: f64| -g / (h + cfg.l2_lambda);
    let g_all: f64 = grad.iter().sum();
    let h_all = hess * n as f64;
    let mut best: Option<(f64, usize, f32, f64, f64)> = None;
    for f in 0..width {
        let mut values: Vec<f32> = (0..n).map(|i| data[i * width + f]).collect();
        values.sort_by(f32::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let m = pair[0] + (pair[1] - pair[0]) / 2.0;
            let t = if m > pair[0] { m } else { pair[1] };
            let (mut gl, mut nl) = (0.0, 0usize);
            for i in 0..n {
                if data[i * width + f] < t {
                    gl += grad[i];
                    nl += 1;
                }
            }
            if nl < cfg.min_samples_leaf || n - nl < cfg.min_samples_leaf {
                continue;
            }
            let hl = hess * nl as f64;
            let gain = 0.5 * (score(gl, hl) + score(g_all - gl, h_all - hl) - score(g_all, h_all));
            if gain > best.map_or(0.0, |b| b.0) * (1.0 + 1e-9) {
                best = Some((gain, f, t, leaf(gl, hl), leaf(g_all - gl, h_all - hl)));
            }
        }
    }
    best.map(|(_, f, t, l, r)| (f, t, l, r))
}

fn stump_matches(tree_nodes: &[Node], expected: Option<(usize, f32, f64, f64)>) -> bool {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    match (tree_nodes, expected) {
        (
            [Node::Split {
                feature,
                threshold,
                left,
                right,
            }, ..],
            Some((f, t, l, r)),
        ) => {
            let leaf = |i: usize| match tree_nodes[i] {
                Node::Leaf(v) => Some(v),
                _ => None,
            };
            *feature == f
                && *threshold == t
                && leaf(*left).is_some_and(|v| close(v, l))
                && leaf(*right).is_some_and(|v| close(v, r))
        }
        ([Node::Leaf(_)], None) => true,
        _ => false,
    }
}

/// Unequal-sized XOR clusters (no axis-aligned stump separates them).
pub fn xor_dataset() -> (Tensor, Vec<ClassId>) {
    let mut data = Vec::new();
    let mut y = Vec::new();
    for ((cx, cy), size) in [
        ((0.0f32, 0.0f32), 6),
        ((1.0, 1.0), 4),
        ((0.0, 1.0), 4),
        ((1.0, 0.0), 6),
    ] {
        for _ in 0..size {
            data.extend([cx, cy]);
            y.push(((cx > 0.5) != (cy > 0.5)) as ClassId);
        }
    }
    let n = y.len();
    (
        Tensor::from_vec(&[n, 2], data).expect("consistent shape"),
        y,
    )
}

/// Single-round stumps against [`exhaustive_stump`] on [`STUMP_INSTANCES`]
/// seeded problems (up to 200 x 8), plus XOR at depth 2.
pub fn boosting_suite(seed: u64) -> Result<Vec<Gate>> {
    let mut matched = 0;
    for k in 0..STUMP_INSTANCES {
        let mut rng = seeded_rng(derive_seed(seed, &format!("selftest/stump/{k}")));
        let n = rng.random_range(20..=200);
        let width = rng.random_range(1..=8);
        let n_classes = rng.random_range(2..=4usize);
        // Coarse grid values so that repeated values and ties occur.
        let x = Tensor::from_fn(&[n, width], |_| rng.random_range(0..40) as f32 * 0.25);
        let y: Vec<ClassId> = (0..n).map(|i| (i % n_classes) as ClassId).collect();
        let cfg = GBTConfig {
            rounds: 1,
            max_depth: 1,
            min_samples_leaf: rng.random_range(1..=5),
            l2_lambda: rng.random_range(0.0..2.0),
            ..GBTConfig::default()
        };
        let model = gbt_train(&x, &y, &cfg)?;
        let ok = (0..n_classes).all(|c| {
            let expected = exhaustive_stump(&x, &y, c as ClassId, n_classes, &cfg);
            stump_matches(&model.trees[0][c].nodes, expected)
        });
        matched += ok as usize;
    }
    let (x, y) = xor_dataset();
    let cfg = GBTConfig {
        max_depth: 2,
        ..GBTConfig::default()
    };
    let (pred, _) = gbt_predict(&gbt_train(&x, &y, &cfg)?, &x)?;
    let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
    Ok(vec![
        Gate::new(
            "boosting stump equals exhaustive search",
            matched == STUMP_INSTANCES,
            format!("{matched}/{STUMP_INSTANCES} instances"),
        ),
        Gate::at_least("boosting depth-2 XOR training accuracy", acc, 1.0),
    ])
}

/// All three suites in order.
pub fn run_selftest(seed: u64) -> Result<Vec<Gate>> {
    let mut gates = gradient_suite(seed)?;
    gates.extend(flow_suite(seed)?);
    gates.extend(boosting_suite(seed)?);
    Ok(gates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translations_are_bounded_and_nonzero() {
        let t = oracle_translations(3, 50);
        assert!(t
            .iter()
            .all(|&(x, y)| x * x + y * y <= 9 && (x, y) != (0, 0)));
        assert_eq!(t, oracle_translations(3, 50));
    }

    #[test]
    fn texture_pair_is_a_pure_shift() {
        let (a, b) = translated_texture(1, 32, 2, -1);
        // next(y, x) = prev(y - ty, x - tx).
        for y in 4..28 {
            for x in 4..28 {
                assert_eq!(b.at(y, x), a.at((y as i32 + 1) as usize, x - 2));
            }
        }
    }

    #[test]
    fn exhaustive_stump_finds_obvious_split() {
        let x = Tensor::from_vec(
            &[6, 2],
            vec![5., 0., 5., 1., 5., 2., 5., 3., 5., 4., 5., 5.],
        )
        .unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let (f, t, l, r) = exhaustive_stump(&x, &y, 1, 2, &GBTConfig::default()).unwrap();
        assert_eq!((f, t), (1, 2.5));
        assert!(l < 0.0 && r > 0.0);
    }

    #[test]
    fn boosting_suite_passes() {
        let gates = boosting_suite(7).unwrap();
        assert!(gates.iter().all(|g| g.passed), "{gates:?}");
    }

    #[test]
    fn flow_suite_passes() {
        let gates = flow_suite(7).unwrap();
        assert!(gates.iter().all(|g| g.passed), "{gates:?}");
    }

    #[test]
    fn gradient_suite_passes() {
        let gates = gradient_suite(7).unwrap();
        assert!(gates.iter().all(|g| g.passed), "{gates:?}");
    }
}
