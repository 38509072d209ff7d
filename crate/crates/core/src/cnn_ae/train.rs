use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{derive_seed, stream_rng, NoiseSpec};
use crate::error::{Error, Result};
use crate::nngraph::{AdamState, Mode, Scalar, Tensor};
use crate::theory::db_to_linear;

use super::model::{bits_to_tensor, AeModel};

const TAG_DATA: u64 = 0x10;
const TAG_SHUFFLE: u64 = 0x11;
const TAG_NOISE: u64 = 0x12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub train_frames: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Added to the model's training SNR, e.g. `-1.0` to train 1 dB below the test point.
    pub snr_offset_db: f64,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            train_frames: 1_000_000,
            batch_size: 500,
            lr: 0.001,
            snr_offset_db: 0.0,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config(
                "batch size must be at least 2 for batch normalization",
            ));
        }
        if self.train_frames < self.batch_size {
            return Err(Error::config("fewer training frames than one batch"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train_frames / self.batch_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean BCE of every optimizer step, in order.
    pub losses: Vec<f64>,
    pub steps: usize,
    pub epochs_completed: usize,
}

/// Message `index` of the deterministic training set for `seed`.
pub fn training_message(seed: u64, k: usize, index: u64) -> Vec<u8> {
    let mut rng = stream_rng(derive_seed(seed, TAG_DATA), index);
    random_bits(&mut rng, k)
}

pub fn random_bits<R: Rng>(rng: &mut R, k: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let w: u64 = rng.random();
        out.extend((0..64).map(|i| ((w >> i) & 1) as u8).take(k - out.len()));
    }
    out
}

/// Noise of one training step; `None` on a noiseless channel.
fn step_noise<T: Scalar>(
    n0: f64,
    seed: u64,
    step: u64,
    shape: [usize; 3],
) -> Result<Option<Tensor<T>>> {
    if n0 == 0.0 {
        return Ok(None);
    }
    let spec = NoiseSpec::new(n0, derive_seed(seed, TAG_NOISE), step)?;
    let mut buf = vec![0.0; shape.iter().product()];
    spec.fill(&mut buf);
    Ok(Some(Tensor::from_vec(
        shape,
        buf.into_iter().map(T::of).collect(),
    )?))
}

/// End-to-end training with BCE loss and Adam. The channel noise enters
/// the graph as a constant, so gradients pass straight through it.
pub fn train<T: Scalar>(model: &mut AeModel<T>, tc: &TrainConfig) -> Result<TrainReport> {
    tc.validate()?;
    let cfg = model.config().clone();
    let snr_db = cfg.train_snr_db + tc.snr_offset_db;
    let n0 = if snr_db == f64::INFINITY {
        0.0
    } else {
        1.0 / db_to_linear(snr_db)
    };
    let mut adam = AdamState::new(tc.lr);
    let mut order: Vec<u64> = (0..tc.train_frames as u64).collect();
    let mut losses = Vec::new();
    let mut step = 0usize;
    let mut epochs_completed = 0;
    let max_steps = tc.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..tc.epochs {
        order.shuffle(&mut stream_rng(
            derive_seed(tc.seed, TAG_SHUFFLE),
            epoch as u64,
        ));
        for chunk in order.chunks_exact(tc.batch_size) {
            if step >= max_steps {
                break 'epochs;
            }
            let msgs: Vec<Vec<u8>> = chunk
                .iter()
                .map(|&i| training_message(tc.seed, cfg.k, i))
                .collect();
            let x = bits_to_tensor::<T>(&cfg, &msgs)?;
            let target = x.clone().reshape([msgs.len(), cfg.k, 1])?;
            let noise = step_noise::<T>(n0, tc.seed, step as u64, [msgs.len(), cfg.n, 2])?;

            model.store_mut().zero_grad();
            // Non-finite weights surface as a degenerate frame power.
            let mut fwd = match model.forward(x, noise.as_ref(), Mode::Train) {
                Err(Error::Degenerate(_)) if step > 0 => {
                    return Err(Error::Diverged {
                        step,
                        loss: f64::NAN,
                    })
                }
                other => other?,
            };
            let loss_node = fwd.graph.bce(fwd.output, &target)?;
            let loss = fwd.graph.value(loss_node).data()[0]
                .to_f64()
                .unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            fwd.graph.backward(loss_node, model.store_mut())?;
            adam.step(model.store_mut());
            model.apply_batch_stats(&fwd);
            losses.push(loss);
            step += 1;
        }
        epochs_completed += 1;
        log::info!(
            "epoch {} loss {:.5}",
            epoch + 1,
            losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(TrainReport {
        losses,
        steps: step,
        epochs_completed,
    })
}

/// Means of consecutive non-overlapping `window`-step blocks of a loss trace.
pub fn smoothed(trace: &[f64], window: usize) -> Vec<f64> {
    trace
        .chunks_exact(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Fraction of consecutive smoothed blocks where the loss does not rise by
/// more than `rel_tol` relative to the previous block. `1.0` when there are
/// fewer than two blocks.
pub fn non_increasing_fraction(trace: &[f64], window: usize, rel_tol: f64) -> f64 {
    let s = smoothed(trace, window);
    if s.len() < 2 {
        return 1.0;
    }
    let ok = s
        .windows(2)
        .filter(|w| w[1] <= w[0] * (1.0 + rel_tol))
        .count();
    ok as f64 / (s.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn_ae::config::{derive_config, CodeRate};
    use crate::cnn_ae::model::build_model;

    #[test]
    fn random_bits_are_binary_and_sized() {
        let mut rng = stream_rng(1, 0);
        for k in [1, 63, 64, 65, 200] {
            let b = random_bits(&mut rng, k);
            assert_eq!(b.len(), k);
            assert!(b.iter().all(|&x| x <= 1));
        }
        assert_eq!(training_message(4, 100, 7), training_message(4, 100, 7));
        assert_ne!(training_message(4, 100, 7), training_message(4, 100, 8));
    }

    #[test]
    fn smoothing_and_trend() {
        let trace: Vec<f64> = (0..400).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert_eq!(smoothed(&trace, 100).len(), 4);
        assert_eq!(non_increasing_fraction(&trace, 100, 0.0), 1.0);
        let rising: Vec<f64> = (0..400).map(|i| i as f64).collect();
        assert_eq!(non_increasing_fraction(&rising, 100, 0.0), 0.0);
    }

    #[test]
    fn rejects_bad_train_config() {
        let bad = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            train_frames: 10,
            batch_size: 20,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let cfg = derive_config(8, 1.0, CodeRate::new(1, 2).unwrap(), 2, 6, 4, 3).unwrap();
        let mut model = build_model::<f64>(&cfg).unwrap();
        let tc = TrainConfig {
            epochs: 1,
            train_frames: 16,
            batch_size: 16,
            seed: 2,
            ..TrainConfig::default()
        };
        train(&mut model, &tc).unwrap();
        for p in model.store().iter() {
            assert!(p.grad.norm() > 0.0, "{} has zero gradient", p.name);
        }
    }

    #[test]
    fn diverged_learning_rate_is_reported() {
        let cfg = derive_config(8, 1.0, CodeRate::new(1, 2).unwrap(), 2, 6, 4, 3).unwrap();
        let mut model = build_model::<f32>(&cfg).unwrap();
        // One huge step is taken; the second forward pass sees non-finite weights.
        let tc = TrainConfig {
            epochs: 1,
            train_frames: 16,
            batch_size: 8,
            lr: f64::MAX,
            ..TrainConfig::default()
        };
        match train(&mut model, &tc) {
            Err(Error::Diverged { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
