use serde::{Deserialize, Serialize};

use super::arch::{build_arch, ArchKind, ArchSpec, WAVELET_LEVELS};
use super::train::TrainConfig;
use crate::dwt::{build_filter_bank, decompose, recompose, CoefficientStack, FilterBank};
use crate::error::{invalid, shape, Error, Result};
use crate::formats::CheckpointFile;
use crate::nn::{forward_eval, NetworkSpec, Param, ParamStore, Tensor};
use crate::tomo::Image;

pub const CHECKPOINT_FORMAT: &str = "lact-checkpoint";

/// Stream position of the training RNG: every epoch draws from a stream
/// derived from `(seed, epoch)`, so this pair resumes it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub arch: ArchSpec,
    pub wavelet_levels: usize,
    /// Per-channel factors applied to network inputs.
    pub input_scales: Vec<f64>,
    /// Network outputs are divided by this to return to image units.
    pub target_scale: f64,
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
    pub seed: u64,
    pub rng: RngState,
    pub train: TrainConfig,
    pub val_psnr: Option<f64>,
}

/// A network ready for inference.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: ArchSpec,
    pub net: NetworkSpec,
    pub params: ParamStore<f32>,
    pub wavelet_levels: usize,
    /// Per-channel factors applied to network inputs.
    pub input_scales: Vec<f64>,
    /// Network outputs are divided by this.
    pub target_scale: f64,
}

impl Model {
    pub fn new(arch: ArchSpec, params: ParamStore<f32>) -> Result<Self> {
        let net = build_arch(&arch)?;
        params.check_against(&net)?;
        let input_scales = vec![1.0; arch.in_channels];
        Ok(Model { arch, net, params, wavelet_levels: WAVELET_LEVELS, input_scales, target_scale: 1.0 })
    }

    pub fn from_checkpoint(ckpt: &CheckpointFile) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(ckpt.metadata.clone())?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("checkpoint format {:?} is not {CHECKPOINT_FORMAT}", meta.format)));
        }
        let mut model = Model::new(meta.arch, ckpt.params())?;
        model.wavelet_levels = meta.wavelet_levels;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if meta.input_scales.len() != model.arch.in_channels || !meta.input_scales.iter().all(|&v| positive(v)) {
            return Err(Error::Format(format!(
                "checkpoint needs {} positive input scales, found {:?}",
                model.arch.in_channels, meta.input_scales
            )));
        }
        if !positive(meta.target_scale) {
            return Err(Error::Format(format!("checkpoint target scale {} is not positive", meta.target_scale)));
        }
        model.input_scales = meta.input_scales;
        model.target_scale = meta.target_scale;
        Ok(model)
    }

    pub fn kind(&self) -> ArchKind {
        self.arch.kind
    }

    /// Filter bank matching this model for an `n x n` image.
    pub fn bank(&self, n: usize) -> Result<Option<FilterBank>> {
        if self.arch.kind.is_wavelet() {
            Ok(Some(build_filter_bank(n, self.wavelet_levels)?))
        } else {
            Ok(None)
        }
    }

    /// Predicted residual for a `(batch, channels, h, w)` input, in the
    /// input's units.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        if x.channels() != self.input_scales.len() {
            return Err(shape(format!("{} input channels, model expects {}", x.channels(), self.input_scales.len())));
        }
        let mut scaled = x.clone();
        let plane = x.plane_len();
        for b in 0..x.batch() {
            for (plane_data, &k) in scaled.sample_mut(b).chunks_mut(plane).zip(&self.input_scales) {
                plane_data.iter_mut().for_each(|v| *v = (*v as f64 * k) as f32);
            }
        }
        let s = self.target_scale;
        let y = forward_eval(&self.net, &self.params, &scaled)?;
        Ok(y.map(|v| (v as f64 / s) as f32))
    }

    /// Restore one image with the pipeline matching the architecture.
    pub fn restore(&self, limited: &Image, bank: Option<&FilterBank>) -> Result<Image> {
        match (self.arch.kind.is_wavelet(), bank) {
            (true, Some(b)) => infer_wavelet(self, limited, b),
            (true, None) => infer_wavelet(self, limited, &build_filter_bank(limited.n(), self.wavelet_levels)?),
            (false, _) => infer_image(self, limited),
        }
    }
}

fn check_size(model: &Model, n: usize) -> Result<()> {
    let m = model.arch.size_multiple();
    if n % m != 0 {
        return Err(invalid(format!("image side {n} is not divisible by {m} for a depth-{} {}", model.arch.depth, model.arch.kind)));
    }
    Ok(())
}

/// `limited - z` in the image domain.
pub fn apply_image_residual(limited: &Image, z: &[f64]) -> Result<Image> {
    if z.len() != limited.data().len() {
        return Err(shape(format!("{} residual values for a {0}x{0} image", limited.n())));
    }
    limited.with_data(limited.data().iter().zip(z).map(|(a, b)| a - b).collect())
}

/// Subtract a predicted residual stack (`channels x n x n`) from the
/// limited image's coefficients and recompose.
pub fn apply_wavelet_residual(limited: &CoefficientStack, z: &[f64], bank: &FilterBank) -> Result<Image> {
    let plane = limited.n * limited.n;
    if z.len() != limited.num_channels() * plane {
        return Err(shape(format!("{} residual values for {} subbands", z.len(), limited.num_channels())));
    }
    let mut cleaned = limited.clone();
    for (ch, zc) in cleaned.channels.iter_mut().zip(z.chunks(plane)) {
        for (v, r) in ch.iter_mut().zip(zc) {
            *v -= r;
        }
    }
    recompose(&cleaned, bank)
}

pub fn infer_image(model: &Model, limited: &Image) -> Result<Image> {
    if model.kind().is_wavelet() {
        return Err(invalid(format!("image-domain inference needs an image model, checkpoint holds {}", model.kind())));
    }
    let n = limited.n();
    check_size(model, n)?;
    let x = Tensor::from_vec([1, 1, n, n], limited.data().iter().map(|&v| v as f32).collect())?;
    let z: Vec<f64> = model.predict(&x)?.data().iter().map(|&v| v as f64).collect();
    apply_image_residual(limited, &z)
}

pub fn infer_wavelet(model: &Model, limited: &Image, bank: &FilterBank) -> Result<Image> {
    if !model.kind().is_wavelet() {
        return Err(invalid(format!("wavelet-domain inference needs wavelet_unet, checkpoint holds {}", model.kind())));
    }
    let n = limited.n();
    check_size(model, n)?;
    let stack = decompose(limited, bank)?;
    if stack.num_channels() != model.arch.in_channels {
        return Err(shape(format!("{} subbands vs {} network channels", stack.num_channels(), model.arch.in_channels)));
    }
    let data: Vec<f32> = stack.channels.iter().flatten().map(|&v| v as f32).collect();
    let x = Tensor::from_vec([1, stack.num_channels(), n, n], data)?;
    let z: Vec<f64> = model.predict(&x)?.data().iter().map(|&v| v as f64).collect();
    apply_wavelet_residual(&stack, &z, bank)
}

/// Set the final 1x1 convolution to zero so the network outputs zeros.
pub fn zero_output_layer(model: &mut Model) {
    let last = model.net.output();
    for name in [ParamStore::<f32>::weight_name(last), ParamStore::<f32>::bias_name(last)] {
        if let Some(Param { data, .. }) = model.params.params.get_mut(&name) {
            data.fill(0.0);
        }
    }
}
