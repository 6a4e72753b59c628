use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{fit_normalizer, GestureWindow, Normalizer};
use crate::error::{Error, Result};
use crate::model::{
    init_params_with, loss_and_grads, Architecture, DecoderParams, EncoderParams, Gradients,
};
use crate::numerics::{adam_step, AdamConfig, ParamSet, Tensor};
use crate::util::{derive_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub shuffle: bool,
    /// Where to write the `epoch,loss` CSV, if anywhere.
    pub loss_log: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            shuffle: true,
            loss_log: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            problems.push(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Mean training loss of every epoch, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub epoch_loss: Vec<f64>,
}

impl LossCurve {
    pub fn first(&self) -> Option<f64> {
        self.epoch_loss.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }

    /// Number of epochs after `skip` whose loss did not decrease.
    pub fn non_monotone_steps(&self, skip: usize) -> usize {
        self.non_monotone_steps_until(skip, f64::NEG_INFINITY)
    }

    /// Like [`Self::non_monotone_steps`], but stops at the first epoch whose
    /// loss is at or below `target`.
    pub fn non_monotone_steps_until(&self, skip: usize, target: f64) -> usize {
        let end = self
            .epoch_loss
            .iter()
            .position(|&l| l <= target)
            .map_or(self.epoch_loss.len(), |i| i + 1);
        if end <= skip {
            return 0;
        }
        self.epoch_loss[skip..end]
            .windows(2)
            .filter(|w| w[1] >= w[0])
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.epoch_loss.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, l).expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub normalizer: Normalizer,
    pub curve: LossCurve,
}

/// Trains a freshly initialized reference architecture.
pub fn train_encoder_decoder(windows: &[GestureWindow], cfg: &TrainConfig) -> Result<TrainOutput> {
    let arch = Architecture::default();
    let (enc, dec) = init_params_with(&arch, derive_seed(cfg.seed, "selfsup/init"))?;
    train_from(windows, cfg, enc, dec)
}

fn add_grads(acc: &mut Gradients, grads: Gradients) {
    if acc.is_empty() {
        *acc = grads;
        return;
    }
    for ((name, a), (other, g)) in acc.iter_mut().zip(grads) {
        debug_assert_eq!(*name, other);
        a.add_assign(&g)
            .expect("gradient shapes are fixed by the model");
    }
}

fn apply(params: &mut ParamSet, grads: &Gradients, scale: f32) -> Result<()> {
    for (name, g) in grads {
        let mut g = g.clone();
        g.scale(scale);
        params.accumulate_grad(name, &g)?;
    }
    Ok(())
}

/// Minimizes the mean per-window MSE between decoded and normalized
/// kinematics with Adam, starting from the given parameters. The normalizer
/// is fit on `windows`.
pub fn train_from(
    windows: &[GestureWindow],
    cfg: &TrainConfig,
    mut encoder: EncoderParams,
    mut decoder: DecoderParams,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    let normalizer = fit_normalizer(windows)?;
    let targets: Vec<Tensor> = windows
        .iter()
        .map(|w| {
            let mut t = w.kinematics.clone();
            normalizer.transform(&mut t).map(|_| t)
        })
        .collect::<Result<_>>()?;

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut rng = seeded_rng(derive_seed(cfg.seed, "selfsup/shuffle"));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut curve = LossCurve::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_sum = 0.0f64;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .map(|&i| loss_and_grads(&windows[i].flows, &targets[i], &encoder, &decoder))
                .collect::<Result<Vec<_>>>()?;
            let mut enc_grads = Gradients::new();
            let mut dec_grads = Gradients::new();
            let mut batch_sum = 0.0f64;
            // Reduce in sample order so results do not depend on scheduling.
            for (loss, eg, dg) in results {
                batch_sum += loss as f64;
                add_grads(&mut enc_grads, eg);
                add_grads(&mut dec_grads, dg);
            }
            if !batch_sum.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: batch_idx + 1,
                });
            }
            epoch_sum += batch_sum;
            let scale = 1.0 / batch.len() as f32;
            apply(&mut encoder.params, &enc_grads, scale)?;
            apply(&mut decoder.params, &dec_grads, scale)?;
            step += 1;
            adam_step(&mut encoder.params, &adam, step)?;
            adam_step(&mut decoder.params, &adam, step)?;
        }
        curve.epoch_loss.push(epoch_sum / windows.len() as f64);
    }
    if let Some(path) = &cfg.loss_log {
        curve.write_csv(path)?;
    }
    Ok(TrainOutput {
        encoder,
        decoder,
        normalizer,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Gesture, Skill, Task};
    use rand::{Rng, SeedableRng};

    fn window(seed: u64, extent: usize) -> GestureWindow {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GestureWindow {
            trial_id: format!("t{seed}"),
            task: Task::SynthA,
            skill: Skill::Expert,
            gesture: Gesture(1),
            frame_indices: (0..25).map(|i| 2 * i).collect(),
            flows: Tensor::from_fn(&[50, extent, extent], |_| rng.random_range(-2.0..2.0)),
            kinematics: Tensor::from_fn(&[25, 76], |_| rng.random_range(-1.0..1.0)),
        }
    }

    fn small_arch() -> Architecture {
        Architecture {
            input_extent: 16,
            conv_channels: vec![8, 8, 8, 8],
            embed_dim: 16,
            hidden: 32,
            ..Architecture::default()
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let windows: Vec<_> = (0..5).map(|s| window(s, 16)).collect();
        let (enc, dec) = init_params_with(&small_arch(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let out = train_from(&windows, &cfg, enc.clone(), dec.clone()).unwrap();
        assert_eq!(out.encoder.params.checksum(), enc.params.checksum());
        assert_eq!(out.decoder.params.checksum(), dec.params.checksum());
        let first = out.curve.epoch_loss[0];
        assert!(out
            .curve
            .epoch_loss
            .iter()
            .all(|&l| (l - first).abs() <= 1e-9 * first));
    }

    #[test]
    fn same_seed_same_curve() {
        let windows: Vec<_> = (0..6).map(|s| window(s, 16)).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let (enc, dec) = init_params_with(&small_arch(), 2).unwrap();
            train_from(&windows, &cfg, enc, dec).unwrap().curve
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn small_network_memorizes_one_window() {
        let windows = vec![window(3, 16)];
        let (enc, dec) = init_params_with(&small_arch(), 4).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            ..TrainConfig::default()
        };
        let curve = train_from(&windows, &cfg, enc, dec).unwrap().curve;
        assert!(curve.last().unwrap() < 1e-2, "{:?}", curve.last());
        assert!(curve.non_monotone_steps_until(5, 1e-2) <= 2);
    }

    #[test]
    fn bad_config_and_empty_input() {
        let windows = vec![window(1, 16)];
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 0,
            ..TrainConfig::default()
        };
        match train_encoder_decoder(&windows, &cfg) {
            Err(Error::Validation(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(train_encoder_decoder(&[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn monotonicity_counts() {
        let curve = LossCurve {
            epoch_loss: vec![5.0, 6.0, 4.0, 3.0, 3.5, 2.0, 0.5, 0.6, 0.7],
        };
        assert_eq!(curve.non_monotone_steps(0), 4);
        assert_eq!(curve.non_monotone_steps(2), 3);
        assert_eq!(curve.non_monotone_steps_until(2, 0.5), 1);
    }

    #[test]
    fn loss_csv_format() {
        let curve = LossCurve {
            epoch_loss: vec![1.5, 0.25],
        };
        assert_eq!(curve.to_csv(), "epoch,loss\n1,1.5\n2,0.25\n");
    }
}
