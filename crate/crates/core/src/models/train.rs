use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arch::{build_arch, ArchSpec, WAVELET_LEVELS};
use super::data::{copy_window, prepare_sample, random_corner, DatasetManifest, Pair, Sample, Split};
use super::infer::{CheckpointMeta, Model, RngState, CHECKPOINT_FORMAT};
use crate::dwt::build_filter_bank;
use crate::error::{invalid, Error, Result};
use crate::formats::CheckpointFile;
use crate::metrics::psnr;
use crate::nn::{backward, forward_train, layers, sgd_step, ParamStore, SgdState, Tensor};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    /// Random windows drawn from every training image per epoch.
    pub patches_per_image: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Limited arc the data were simulated with (recorded in checkpoints).
    pub arc_deg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            patch_size: 64,
            patches_per_image: 1,
            lr_start: 1e-3,
            lr_end: 1e-5,
            weight_decay: 1e-4,
            momentum: 0.9,
            seed: 0,
            arc_deg: 120.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, arch: &ArchSpec) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patches_per_image == 0 {
            return Err(invalid("epochs, batch size and patches per image must be positive"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(invalid(format!("learning rates need lr_start >= lr_end > 0, got {} and {}", self.lr_start, self.lr_end)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(invalid("momentum must lie in [0, 1) and weight decay must be nonnegative"));
        }
        arch.check_patch(self.patch_size)
    }

    /// Log-linear decay: `lr_start` at the first epoch, `lr_end` at the last.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
}

pub struct TrainReport {
    /// Snapshot at the best validation PSNR (the last epoch without a
    /// validation split).
    pub checkpoint: CheckpointFile,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// CSV with columns `epoch,lr,train_loss,val_psnr`.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_psnr\n");
    for e in log {
        let v = e.val_psnr.map(|p| format!("{p:.6}")).unwrap_or_default();
        s.push_str(&format!("{},{:.6e},{:.9e},{v}\n", e.epoch, e.lr, e.train_loss));
    }
    s
}

pub fn train(arch: &ArchSpec, cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<TrainReport> {
    train_with(arch, cfg, manifest, |_| {})
}

pub fn train_with(arch: &ArchSpec, cfg: &TrainConfig, manifest: &DatasetManifest, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainReport> {
    let train_pairs = manifest.load_pairs(Split::Train)?;
    let val_pairs = manifest.load_pairs(Split::Val)?;
    train_pairs_with(arch, cfg, &train_pairs, &val_pairs, on_epoch)
}

/// Scale the inputs to unit RMS and the residual targets by `1 / rms(targets)`,
/// one factor each across all channels, so the loss keeps the
/// image-domain weighting of the channels. Returns `(input scales, target scale)`.
fn standardize(samples: &mut [Sample], channels: usize) -> Result<(Vec<f64>, f64)> {
    let sq = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>();
    let (mut input_sq, mut target_sq, mut count) = (0.0, 0.0, 0usize);
    for s in samples.iter() {
        input_sq += sq(&s.input);
        target_sq += sq(&s.target);
        count += s.target.len();
    }
    let (input_rms, target_rms) = ((input_sq / count.max(1) as f64).sqrt(), (target_sq / count.max(1) as f64).sqrt());
    if !(target_rms > 0.0 && target_rms.is_finite()) {
        return Err(invalid("training residuals are all zero: limited and full images coincide"));
    }
    let input_scale = if input_rms > 0.0 { 1.0 / input_rms } else { 1.0 };
    let target_scale = 1.0 / target_rms;
    for s in samples.iter_mut() {
        s.input.iter_mut().for_each(|v| *v = (*v as f64 * input_scale) as f32);
        s.target.iter_mut().for_each(|v| *v = (*v as f64 * target_scale) as f32);
    }
    Ok((vec![input_scale; channels], target_scale))
}

fn mean_val_psnr(model: &Model, val: &[Pair]) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let bank = model.bank(val[0].limited.n())?;
    let mut total = 0.0;
    for p in val {
        total += psnr(&model.restore(&p.limited, bank.as_ref())?, &p.full)?;
    }
    Ok(Some(total / val.len() as f64))
}

/// Train on in-memory pairs. Minimizes the squared error between the
/// predicted and the true residual (summed over channels, averaged over
/// pixels) with SGD; one epoch visits `patches_per_image` random
/// windows of every training image in a seeded shuffled order.
pub fn train_pairs_with(
    arch: &ArchSpec,
    cfg: &TrainConfig,
    train: &[Pair],
    val: &[Pair],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate(arch)?;
    if train.is_empty() {
        return Err(invalid("no training images"));
    }
    let n = train[0].limited.n();
    if cfg.patch_size > n {
        return Err(invalid(format!("patch {} exceeds the {n}x{n} images", cfg.patch_size)));
    }
    let net = build_arch(arch)?;
    let bank = if arch.kind.is_wavelet() { Some(build_filter_bank(n, WAVELET_LEVELS)?) } else { None };
    let mut samples: Vec<Sample> = train.iter().map(|p| prepare_sample(p, bank.as_ref())).collect::<Result<_>>()?;
    if let Some(s) = samples.iter().find(|s| s.n != n || s.channels != arch.in_channels) {
        return Err(crate::error::shape(format!(
            "training sample is {} channels of {}x{}, network expects {} channels of {n}x{n}",
            s.channels, s.n, s.n, arch.in_channels
        )));
    }

    let (input_scales, target_scale) = standardize(&mut samples, arch.in_channels)?;

    let mut params = ParamStore::<f32>::init(&net, rng::derive(cfg.seed, 0).gen());
    let mut state = SgdState::new(&params);
    let mut model = Model {
        arch: arch.clone(),
        net: net.clone(),
        params: params.clone(),
        wavelet_levels: WAVELET_LEVELS,
        input_scales: input_scales.clone(),
        target_scale,
    };
    let (c, patch) = (arch.in_channels, cfg.patch_size);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore<f32>, SgdState<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut g = rng::derive(cfg.seed, 1 + epoch as u64);
        let mut windows: Vec<(usize, usize, usize)> = Vec::with_capacity(samples.len() * cfg.patches_per_image);
        for (i, _) in samples.iter().enumerate() {
            for _ in 0..cfg.patches_per_image {
                let (r, col) = random_corner(&mut g, n, patch);
                windows.push((i, r, col));
            }
        }
        windows.shuffle(&mut g);

        let mut loss_sum = 0.0;
        for (step, batch) in windows.chunks(cfg.batch_size).enumerate() {
            let shape4 = [batch.len(), c, patch, patch];
            let mut x = Tensor::<f32>::zeros(shape4);
            let mut y = Tensor::<f32>::zeros(shape4);
            for (k, &(i, r, col)) in batch.iter().enumerate() {
                copy_window(&samples[i].input, c, n, r, col, patch, x.sample_mut(k));
                copy_window(&samples[i].target, c, n, r, col, patch, y.sample_mut(k));
            }
            let cache = forward_train(&net, &mut params, &x)?;
            // squared error summed over channels, averaged over pixels
            let loss = layers::mse_loss(cache.output(), &y)? as f64 * c as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, detail: format!("loss {loss} at lr {lr:.3e}") });
            }
            let dy = layers::mse_backward(cache.output(), &y).map(|v| v * c as f32);
            let (grads, _) = backward(&net, &params, cache, &dy, false)?;
            sgd_step(&mut params, &grads, &mut state, lr, cfg.momentum, cfg.weight_decay)?;
            loss_sum += loss * batch.len() as f64;
        }

        model.params = params.clone();
        let val_psnr = mean_val_psnr(&model, val)?;
        let entry = EpochLog { epoch, lr, train_loss: loss_sum / windows.len() as f64, val_psnr };
        on_epoch(&entry);
        log.push(entry);
        let score = val_psnr.unwrap_or(f64::INFINITY);
        if best.as_ref().map_or(true, |b| score > b.0 || val_psnr.is_none()) {
            best = Some((score, epoch, params.clone(), state.clone()));
        }
    }

    let (score, best_epoch, best_params, best_state) = best.expect("at least one epoch");
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.to_string(),
        arch: arch.clone(),
        wavelet_levels: WAVELET_LEVELS,
        input_scales,
        target_scale,
        epoch: best_epoch + 1,
        seed: cfg.seed,
        rng: RngState { seed: cfg.seed, epoch: best_epoch + 1 },
        train: cfg.clone(),
        val_psnr: score.is_finite().then_some(score),
    };
    let checkpoint = CheckpointFile::from_params(&best_params, Some(&best_state.velocity), serde_json::to_value(meta)?);
    Ok(TrainReport { checkpoint, log, best_epoch })
}
