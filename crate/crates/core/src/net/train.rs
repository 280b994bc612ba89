use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::FeatureMap;
use super::model::{forward_tape, image_to_map, loss_and_gradients, map_to_image, Gradients, NetworkParams};
use super::Scalar;
use crate::error::{Error, Result};
use crate::metrics::snr;
use crate::numerics::Rng;
use crate::projector::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate of the first epoch.
    pub lr_start: f64,
    /// Learning rate of the last epoch; epochs in between are geometric.
    pub lr_end: f64,
    pub momentum: f64,
    /// Element-wise gradient clip.
    pub clip: f64,
    /// Random horizontal/vertical flips of each training pair.
    pub flips: bool,
    /// Drives sample order and flips.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr_start: 0.01, lr_end: 0.001, momentum: 0.99, clip: 1e-2, flips: true, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.lr_start > 0.0
            && self.lr_end > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.clip > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("training schedule {self:?}")));
        }
        Ok(())
    }

    /// `lr_start * (lr_end / lr_start)^(epoch / (epochs - 1))`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * crate::math::pow(self.lr_end / self.lr_start, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// Zero-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-step training loss over the epoch.
    pub train_loss: f64,
    /// Mean SNR (dB) of the network output against the validation
    /// targets; NaN without a validation set.
    pub val_snr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Abort {
    pub epoch: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// One row per completed epoch.
    pub history: Vec<EpochRecord>,
    /// Set when a non-finite loss stopped training; the parameters were
    /// then rolled back to the end of the last completed epoch.
    pub aborted: Option<Abort>,
}

/// Clamps every gradient element to `[-clip, clip]`.
pub fn clip_gradients<T: Scalar>(grads: &mut Gradients<T>, clip: f64) {
    let (lo, hi) = (T::from_f64(-clip), T::from_f64(clip));
    for g in &mut grads.values {
        if *g > hi {
            *g = hi;
        } else if *g < lo {
            *g = lo;
        }
    }
}

/// Mirrors a map left-right and/or top-bottom.
pub fn flip<T: Scalar>(map: &FeatureMap<T>, horizontal: bool, vertical: bool) -> FeatureMap<T> {
    let (h, w) = (map.height, map.width);
    let mut out = FeatureMap::zeros(map.channels, h, w);
    for c in 0..map.channels {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            let src = &map.data[(c * h + sy) * w..(c * h + sy + 1) * w];
            let dst = &mut out.data[(c * h + y) * w..(c * h + y + 1) * w];
            if horizontal {
                for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                    *d = *s;
                }
            } else {
                dst.copy_from_slice(src);
            }
        }
    }
    out
}

/// Draws one flip pair and applies it to input and target alike.
pub fn augment<T: Scalar>(
    input: &FeatureMap<T>,
    target: &FeatureMap<T>,
    rng: &mut Rng,
) -> (FeatureMap<T>, FeatureMap<T>) {
    let (h, v) = (rng.coin(), rng.coin());
    (flip(input, h, v), flip(target, h, v))
}

/// Mean SNR of the network output against each target.
pub fn mean_snr<T: Scalar>(params: &NetworkParams<T>, pairs: &[(Image, Image)]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for (input, target) in pairs {
        let tape = forward_tape(params, image_to_map(input))?;
        let out = map_to_image(tape.output(), input.pixel_spacing())?;
        total += snr(target, &out)?;
    }
    Ok(total / pairs.len() as f64)
}

/// SGD with momentum, batch size 1: `v <- m v - lr clip(g)`, `w <- w + v`.
pub fn train<T: Scalar>(
    params: &mut NetworkParams<T>,
    data: &[(Image, Image)],
    validation: &[(Image, Image)],
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with(params, data, validation, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar>(
    params: &mut NetworkParams<T>,
    data: &[(Image, Image)],
    validation: &[(Image, Image)],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let pairs: Vec<(FeatureMap<T>, FeatureMap<T>)> =
        data.iter().map(|(x, y)| (image_to_map(x), image_to_map(y))).collect();
    let mut rng = Rng::new(config.seed);
    let mut velocity = vec![T::ZERO; params.len()];
    let momentum = T::from_f64(config.momentum);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        let checkpoint = params.values().to_vec();
        let lr = config.learning_rate(epoch);
        let step_size = T::from_f64(lr);
        shuffle(&mut order, &mut rng);
        let mut total = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let (x, y) = &pairs[i];
            let (x, y) = if config.flips { augment(x, y, &mut rng) } else { (x.clone(), y.clone()) };
            let (loss, mut grads) = loss_and_gradients(params, x, &y)?;
            if !loss.is_finite() {
                params.values_mut().copy_from_slice(&checkpoint);
                return Ok(TrainReport { history, aborted: Some(Abort { epoch, step }) });
            }
            total += loss;
            clip_gradients(&mut grads, config.clip);
            for ((w, v), &g) in params.values_mut().iter_mut().zip(&mut velocity).zip(&grads.values) {
                *v = momentum * *v - step_size * g;
                *w += *v;
            }
        }
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: total / pairs.len() as f64,
            val_snr: mean_snr(params, validation)?,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainReport { history, aborted: None })
}

/// Fisher-Yates.
fn shuffle(v: &mut [usize], rng: &mut Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        v.swap(i, j);
    }
}
