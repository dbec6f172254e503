use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{NetworkSpec, NodeId};

/// Subbands produced by the default four-level filter bank (1 + 2 + 4 + 8).
pub const WAVELET_CHANNELS: usize = 15;
pub const WAVELET_LEVELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// Residual U-Net on directional wavelet coefficients.
    WaveletUnet,
    /// Residual U-Net on the image.
    ImageUnet,
    /// Single-resolution residual CNN on the image.
    ImagePlain,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::WaveletUnet => "wavelet_unet",
            ArchKind::ImageUnet => "image_unet",
            ArchKind::ImagePlain => "image_plain",
        }
    }

    pub fn is_wavelet(self) -> bool {
        self == ArchKind::WaveletUnet
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wavelet_unet" => Ok(ArchKind::WaveletUnet),
            "image_unet" => Ok(ArchKind::ImageUnet),
            "image_plain" => Ok(ArchKind::ImagePlain),
            other => Err(invalid(format!("unknown architecture {other:?} (wavelet_unet, image_unet, image_plain)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// Pooling stages for the U-Nets; sets the layer count of the plain net.
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub convs_per_stage: usize,
}

impl ArchSpec {
    pub fn new(kind: ArchKind, depth: usize, base_channels: usize) -> Self {
        let c = if kind.is_wavelet() { WAVELET_CHANNELS } else { 1 };
        ArchSpec { kind, depth, base_channels, in_channels: c, out_channels: c, convs_per_stage: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(invalid("architecture depth must be at least 1"));
        }
        if self.base_channels == 0 || self.convs_per_stage == 0 {
            return Err(invalid("base channels and convolutions per stage must be positive"));
        }
        if self.in_channels == 0 || self.in_channels != self.out_channels {
            return Err(invalid(format!("residual networks map a domain to itself: in {} vs out {}", self.in_channels, self.out_channels)));
        }
        Ok(())
    }

    /// Side lengths must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        match self.kind {
            ArchKind::ImagePlain => 1,
            _ => 1 << self.depth,
        }
    }

    pub fn check_patch(&self, patch: usize) -> Result<()> {
        if patch == 0 || patch % self.size_multiple() != 0 {
            return Err(invalid(format!(
                "patch size {patch} is not divisible by 2^{} for a depth-{} {}",
                self.depth, self.depth, self.kind
            )));
        }
        Ok(())
    }
}

/// 3x3 convolution, ReLU, batch norm.
fn basic(net: &mut NetworkSpec, x: NodeId, channels: usize) -> Result<NodeId> {
    let c = net.conv3x3(x, channels)?;
    let r = net.relu(c)?;
    net.batchnorm(r)
}

fn stage(net: &mut NetworkSpec, mut x: NodeId, channels: usize, convs: usize) -> Result<NodeId> {
    for _ in 0..convs {
        x = basic(net, x, channels)?;
    }
    Ok(x)
}

pub fn build_arch(spec: &ArchSpec) -> Result<NetworkSpec> {
    spec.validate()?;
    let mut net = NetworkSpec::new(spec.in_channels);
    let convs = spec.convs_per_stage;
    let mut x = 0;
    match spec.kind {
        ArchKind::WaveletUnet | ArchKind::ImageUnet => {
            let mut skips = Vec::with_capacity(spec.depth);
            let mut c = spec.base_channels;
            for _ in 0..spec.depth {
                x = stage(&mut net, x, c, convs)?;
                skips.push((x, c));
                x = net.maxpool2(x)?;
                c *= 2;
            }
            x = stage(&mut net, x, c, convs)?;
            for (skip, c) in skips.into_iter().rev() {
                let up = net.avgunpool2(x)?;
                let joined = net.concat(up, skip)?;
                x = stage(&mut net, joined, c, convs)?;
            }
        }
        ArchKind::ImagePlain => {
            for _ in 0..2 * spec.depth + 1 {
                x = stage(&mut net, x, spec.base_channels, convs)?;
            }
        }
    }
    net.conv1x1(x, spec.out_channels)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerKind;

    #[test]
    fn wavelet_unet_channels() {
        let spec = ArchSpec::new(ArchKind::WaveletUnet, 3, 16);
        let net = build_arch(&spec).unwrap();
        assert_eq!((net.in_channels(), net.out_channels()), (15, 15));
        let nodes = net.nodes();
        let pools: Vec<usize> =
            nodes.iter().enumerate().filter(|(_, n)| n.kind == LayerKind::MaxPool2).map(|(i, _)| nodes[i].in_channels).collect();
        assert_eq!(pools, vec![16, 32, 64]);
        let convs_after_pool: Vec<usize> = nodes
            .iter()
            .filter(|n| n.kind == LayerKind::Conv3x3 && nodes[n.inputs[0]].kind == LayerKind::MaxPool2)
            .map(|n| n.out_channels)
            .collect();
        assert_eq!(convs_after_pool, vec![32, 64, 128]);
        for n in nodes.iter().filter(|n| n.kind == LayerKind::Concat) {
            let up = &nodes[n.inputs[0]];
            let skip = &nodes[n.inputs[1]];
            assert_eq!(up.kind, LayerKind::AvgUnpool2);
            assert_eq!(n.in_channels, up.out_channels + skip.out_channels);
        }
        assert_eq!(net.pool_depth(), 3);
    }

    #[test]
    fn plain_net_has_no_pooling() {
        let net = build_arch(&ArchSpec::new(ArchKind::ImagePlain, 3, 8)).unwrap();
        assert_eq!(net.pool_depth(), 0);
        assert!(net.nodes().iter().all(|n| n.kind != LayerKind::AvgUnpool2));
        assert_eq!((net.in_channels(), net.out_channels()), (1, 1));
    }

    #[test]
    fn invalid_specs() {
        assert!(build_arch(&ArchSpec::new(ArchKind::ImageUnet, 0, 16)).is_err());
        let mut s = ArchSpec::new(ArchKind::ImageUnet, 2, 4);
        s.out_channels = 2;
        assert!(build_arch(&s).is_err());
        let s = ArchSpec::new(ArchKind::ImageUnet, 3, 4);
        assert!(s.check_patch(60).is_err());
        assert!(s.check_patch(64).is_ok());
        assert!("resnet".parse::<ArchKind>().is_err());
        assert_eq!("image_unet".parse::<ArchKind>().unwrap(), ArchKind::ImageUnet);
    }
}
