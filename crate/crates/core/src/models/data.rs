use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dwt::{decompose, FilterBank};
use crate::error::{invalid, shape, Result};
use crate::formats::{load_image, load_sinogram, save_image, save_sinogram};
use crate::nn::Tensor;
use crate::rng;
use crate::tomo::{fbp, forward_project, random_phantom, restrict_angles, Geometry, Image, Sinogram, Window};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_images: usize,
    /// Image side in pixels.
    pub n: usize,
    pub arc_deg: f64,
    pub seed: u64,
    /// The last `n_val` phantoms form the validation split.
    pub n_val: usize,
    /// Views over the full 180 degree scan.
    pub n_views: usize,
    /// Ellipses per phantom, body included.
    pub ellipses: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { n_images: 220, n: 128, arc_deg: 120.0, seed: 0, n_val: 20, n_views: 360, ellipses: 10 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.n_val > self.n_images {
            return Err(invalid(format!("{} validation images out of {}", self.n_val, self.n_images)));
        }
        if !(self.arc_deg > 0.0 && self.arc_deg <= 180.0) {
            return Err(invalid(format!("limited arc {} must lie in (0, 180]", self.arc_deg)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub phantom_seed: u64,
    /// Paths are relative to the manifest's directory.
    pub full: String,
    pub limited: String,
    pub limited_sinogram: String,
    pub arc_deg: f64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Load `manifest.json`, given either the file or its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let mut m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(&file)?)?;
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_pair(&self, e: &ManifestEntry) -> Result<Pair> {
        Ok(Pair { id: e.id.clone(), limited: load_image(self.resolve(&e.limited))?, full: load_image(self.resolve(&e.full))? })
    }

    pub fn load_pairs(&self, split: Split) -> Result<Vec<Pair>> {
        let entries: Vec<&ManifestEntry> = self.split(split).collect();
        entries.into_par_iter().map(|e| self.load_pair(e)).collect()
    }

    pub fn load_limited_sinogram(&self, e: &ManifestEntry) -> Result<Sinogram> {
        load_sinogram(self.resolve(&e.limited_sinogram))
    }
}

/// A limited-arc reconstruction and its full-arc reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub id: String,
    pub limited: Image,
    pub full: Image,
}

/// Simulated scans of one phantom.
pub struct Simulation {
    pub full: Image,
    pub limited: Image,
    pub limited_sinogram: Sinogram,
}

/// Project a phantom over 180 degrees, then reconstruct from the whole scan
/// and from the `[0, arc)` views.
pub fn simulate(phantom: &Image, n_views: usize, arc_deg: f64) -> Result<Simulation> {
    let n = phantom.n();
    let geom = Geometry::for_grid(n, phantom.pixel_size(), n_views, 0.0, 180.0)?;
    let sino = forward_project(phantom, &geom)?;
    let full = fbp(&sino, n, Window::Ramlak)?;
    let limited_sinogram = restrict_angles(&sino, 0.0, arc_deg)?;
    let limited = fbp(&limited_sinogram, n, Window::Ramlak)?;
    Ok(Simulation { full, limited, limited_sinogram })
}

pub fn phantom_seed(seed: u64, index: usize) -> u64 {
    rng::derive(seed, index as u64).gen()
}

/// Synthesize `cfg.n_images` phantom pairs into `out_dir` and write the
/// manifest. Phantoms are simulated in parallel; the output does not depend
/// on the thread count.
pub fn make_dataset(cfg: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    std::fs::create_dir_all(&root)?;
    let n_train = cfg.n_images - cfg.n_val;
    let entries = (0..cfg.n_images)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let seed = phantom_seed(cfg.seed, i);
            let phantom = random_phantom(cfg.n, seed, cfg.ellipses)?;
            let sim = simulate(&phantom, cfg.n_views, cfg.arc_deg)?;
            let id = format!("{i:04}");
            let entry = ManifestEntry {
                full: format!("full_{id}.lact"),
                limited: format!("limited_{id}.lact"),
                limited_sinogram: format!("limited_{id}.sino.lact"),
                id,
                phantom_seed: seed,
                arc_deg: cfg.arc_deg,
                split: if i < n_train { Split::Train } else { Split::Val },
            };
            save_image(root.join(&entry.full), &sim.full)?;
            save_image(root.join(&entry.limited), &sim.limited)?;
            save_sinogram(root.join(&entry.limited_sinogram), &sim.limited_sinogram)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { config: cfg.clone(), entries, root };
    manifest.save()?;
    Ok(manifest)
}

/// Network-domain view of a pair: the input and the residual target
/// `input(limited) - input(full)`, each `channels x n x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub n: usize,
    pub channels: usize,
    pub input: Vec<f32>,
    pub target: Vec<f32>,
}

fn stack_f32(img: &Image, bank: Option<&FilterBank>) -> Result<Vec<f32>> {
    Ok(match bank {
        None => img.data().iter().map(|&v| v as f32).collect(),
        Some(b) => decompose(img, b)?.channels.iter().flatten().map(|&v| v as f32).collect(),
    })
}

/// Decompose whole images (when a bank is given) before any patching so
/// every channel window stays aligned with the image grid.
pub fn prepare_sample(pair: &Pair, bank: Option<&FilterBank>) -> Result<Sample> {
    pair.limited.same_grid(&pair.full)?;
    let residual = pair.limited.sub(&pair.full)?;
    let input = stack_f32(&pair.limited, bank)?;
    let target = stack_f32(&residual, bank)?;
    let n = pair.limited.n();
    Ok(Sample { n, channels: input.len() / (n * n), input, target })
}

/// Copy the `patch x patch` window at `(row, col)` of every channel.
pub(crate) fn copy_window(src: &[f32], channels: usize, n: usize, row: usize, col: usize, patch: usize, dst: &mut [f32]) {
    for c in 0..channels {
        for r in 0..patch {
            let s = c * n * n + (row + r) * n + col;
            let d = (c * patch + r) * patch;
            dst[d..d + patch].copy_from_slice(&src[s..s + patch]);
        }
    }
}

/// Uniform top-left corner of a window inside an `n x n` image.
pub(crate) fn random_corner(g: &mut rng::SeededRng, n: usize, patch: usize) -> (usize, usize) {
    let span = n - patch + 1;
    (g.gen_range(0..span), g.gen_range(0..span))
}

/// `count` random windows of one sample: `(input batch, residual batch)`.
pub fn sample_patches(sample: &Sample, patch: usize, count: usize, seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if patch == 0 || patch > sample.n {
        return Err(invalid(format!("patch {patch} does not fit a {0}x{0} image", sample.n)));
    }
    if sample.input.len() != sample.target.len() {
        return Err(shape("sample input and target differ in size"));
    }
    let c = sample.channels;
    let shape4 = [count, c, patch, patch];
    let mut x = Tensor::zeros(shape4);
    let mut y = Tensor::zeros(shape4);
    let mut g = rng::seeded(seed);
    for k in 0..count {
        let (r, col) = random_corner(&mut g, sample.n, patch);
        copy_window(&sample.input, c, sample.n, r, col, patch, x.sample_mut(k));
        copy_window(&sample.target, c, sample.n, r, col, patch, y.sample_mut(k));
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> Pair {
        let full = random_phantom(32, 5, 4).unwrap();
        let limited = full.with_data(full.data().iter().map(|v| v * 0.8 + 0.05).collect()).unwrap();
        Pair { id: "x".into(), limited, full }
    }

    #[test]
    fn patches_have_shape_and_are_seeded() {
        let s = prepare_sample(&pair(), None).unwrap();
        let (x, y) = sample_patches(&s, 16, 4, 9).unwrap();
        assert_eq!(x.shape(), [4, 1, 16, 16]);
        assert_eq!(y.shape(), [4, 1, 16, 16]);
        assert_eq!(sample_patches(&s, 16, 4, 9).unwrap(), (x, y));
        assert!(sample_patches(&s, 33, 1, 0).is_err());
    }

    #[test]
    fn full_window_residual_is_artifact() {
        let p = pair();
        let s = prepare_sample(&p, None).unwrap();
        let (_, y) = sample_patches(&s, 32, 1, 0).unwrap();
        let residual = p.limited.sub(&p.full).unwrap();
        for (a, b) in y.data().iter().zip(residual.data()) {
            assert_eq!(*a, *b as f32);
        }
    }

    #[test]
    fn wavelet_sample_has_15_channels() {
        let bank = crate::dwt::build_filter_bank(32, 4).unwrap();
        let s = prepare_sample(&pair(), Some(&bank)).unwrap();
        assert_eq!(s.channels, 15);
        assert_eq!(s.input.len(), 15 * 32 * 32);
    }
}
