//! Non-decimated directional wavelet transform.
//!
//! The filter bank tiles the DC-centered frequency plane with nonnegative
//! windows: a lowpass disk, then dyadic radial shells, each split into
//! angular wedges. Radial and angular edges are raised-cosine ramps, and
//! the windows sum to exactly one everywhere, so analysis is a set of
//! frequency-domain products and synthesis is the plain sum of channels.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::fft::{centered_index, signed_freq, Fft2};
use crate::tomo::Image;

/// Fraction of each shell (and wedge) used by the smooth transition.
const TRANSITION: f64 = 1.0 / 3.0;
const CLIP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeta {
    /// 0 for the lowpass, then 1.. from coarse to fine.
    pub scale: usize,
    pub direction: usize,
    /// Center of the wedge's frequency direction in degrees, `None` for the lowpass.
    pub center_angle_deg: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FilterBank {
    pub n: usize,
    pub levels: usize,
    pub dirs_per_level: Vec<usize>,
    /// One DC-centered `n x n` window per channel.
    pub windows: Vec<Vec<f64>>,
    pub meta: Vec<ChannelMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientStack {
    pub n: usize,
    pub pixel_size: f64,
    pub channels: Vec<Vec<f64>>,
    pub meta: Vec<ChannelMeta>,
}

impl CoefficientStack {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn zeros_like(&self) -> CoefficientStack {
        CoefficientStack { channels: vec![vec![0.0; self.n * self.n]; self.channels.len()], ..self.clone() }
    }
}

/// 1 below `edge - w/2`, 0 above `edge + w/2`, raised-cosine in between.
fn falling_edge(x: f64, edge: f64, width: f64) -> f64 {
    let u = (x - edge) / width;
    if u <= -0.5 {
        1.0
    } else if u >= 0.5 {
        0.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * u).sin())
    }
}

/// Angular weight of wedge `d` out of `count` at direction `phi` (deg, mod 180).
fn wedge_weight(phi: f64, d: usize, count: usize) -> f64 {
    if count == 1 {
        return 1.0;
    }
    let width = 180.0 / count as f64;
    let center = d as f64 * width;
    let delta = (phi - center + 90.0).rem_euclid(180.0) - 90.0;
    falling_edge(delta.abs(), width / 2.0, width * TRANSITION)
}

/// Standard layout `[1, 2, 4, ..., 2^(levels-1)]`: 15 channels for 4 levels.
pub fn build_filter_bank(n: usize, levels: usize) -> Result<FilterBank> {
    if levels == 0 {
        return Err(invalid("the filter bank needs at least one level"));
    }
    let dirs: Vec<usize> = (0..levels).map(|s| 1usize << s).collect();
    build_filter_bank_with(n, &dirs)
}

/// Filter bank with an explicit direction count per level (coarse to fine);
/// the first level must be the single lowpass channel.
pub fn build_filter_bank_with(n: usize, dirs_per_level: &[usize]) -> Result<FilterBank> {
    let levels = dirs_per_level.len();
    if levels == 0 || dirs_per_level[0] != 1 {
        return Err(invalid("the first level must be a single lowpass channel"));
    }
    if dirs_per_level.iter().any(|&d| d == 0) {
        return Err(invalid("every level needs at least one direction"));
    }
    if levels >= usize::BITS as usize || n < (1usize << levels) {
        return Err(invalid(format!("grid side {n} is too small for {levels} levels")));
    }
    // radial edge between level s-1 and s
    let edge = |s: usize| 2f64.powi(s as i32 - levels as i32);
    let half = (n / 2) as f64;
    let total: usize = dirs_per_level.iter().sum();
    let mut windows = vec![vec![0.0; n * n]; total];
    let mut meta = Vec::with_capacity(total);
    for (s, &count) in dirs_per_level.iter().enumerate() {
        for d in 0..count {
            meta.push(ChannelMeta { scale: s, direction: d, center_angle_deg: (s > 0).then(|| d as f64 * 180.0 / count as f64) });
        }
    }
    for i in 0..n {
        for j in 0..n {
            let ky = (i as i64 - (n / 2) as i64) as f64;
            let kx = (j as i64 - (n / 2) as i64) as f64;
            let rho = (kx * kx + ky * ky).sqrt() / half;
            let phi = ky.atan2(kx).to_degrees().rem_euclid(180.0);
            let below = |s: usize| {
                if s >= levels {
                    1.0
                } else {
                    falling_edge(rho, edge(s), edge(s) * TRANSITION)
                }
            };
            let mut c = 0;
            for (s, &count) in dirs_per_level.iter().enumerate() {
                let radial = if s == 0 { below(1) } else { below(s + 1) - below(s) };
                for d in 0..count {
                    windows[c][i * n + j] = radial * wedge_weight(phi, d, count);
                    c += 1;
                }
            }
        }
    }
    // match each window with its value at -k so channel outputs stay real
    let partner = |i: usize| {
        let k = signed_freq((i + n - n / 2) % n, n);
        centered_index((-k).rem_euclid(n as i64) as usize, n)
    };
    for w in windows.iter_mut().take(total - 1) {
        let orig = w.clone();
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = 0.5 * (orig[i * n + j] + orig[partner(i) * n + partner(j)]);
            }
        }
    }
    // close the partition exactly
    let (head, last) = windows.split_at_mut(total - 1);
    for (idx, v) in last[0].iter_mut().enumerate() {
        let rest: f64 = head.iter().map(|w| w[idx]).sum();
        let mut x = 1.0 - rest;
        if x < 0.0 && x > -CLIP {
            x = 0.0;
        }
        *v = x;
    }
    Ok(FilterBank { n, levels, dirs_per_level: dirs_per_level.to_vec(), windows, meta })
}

impl FilterBank {
    pub fn num_channels(&self) -> usize {
        self.windows.len()
    }

    /// Window `c` evaluated at DFT-order index `(r, col)`.
    fn window_dft(&self, c: usize, r: usize, col: usize) -> f64 {
        self.windows[c][centered_index(r, self.n) * self.n + centered_index(col, self.n)]
    }
}

/// Channel `c` is `real(IFFT(window_c * FFT(img)))`.
pub fn decompose(img: &Image, bank: &FilterBank) -> Result<CoefficientStack> {
    let n = img.n();
    if n != bank.n {
        return Err(shape(format!("image side {n} vs filter bank side {}", bank.n)));
    }
    let fft = Fft2::new(n);
    let spectrum = fft.forward_real(img.data());
    let channels: Vec<Vec<f64>> = (0..bank.num_channels())
        .into_par_iter()
        .map(|c| {
            let mut buf: Vec<Complex64> = spectrum.iter().enumerate().map(|(idx, v)| v * bank.window_dft(c, idx / n, idx % n)).collect();
            fft.inverse(&mut buf);
            buf.iter().map(|v| v.re).collect()
        })
        .collect();
    Ok(CoefficientStack { n, pixel_size: img.pixel_size(), channels, meta: bank.meta.clone() })
}

/// Synthesis: the sum of all channels.
pub fn recompose(stack: &CoefficientStack, bank: &FilterBank) -> Result<Image> {
    if stack.num_channels() != bank.num_channels() {
        return Err(shape(format!("stack has {} channels, filter bank has {}", stack.num_channels(), bank.num_channels())));
    }
    if stack.n != bank.n || stack.channels.iter().any(|c| c.len() != stack.n * stack.n) {
        return Err(shape("stack subbands do not match the filter bank grid"));
    }
    let mut out = vec![0.0; stack.n * stack.n];
    for ch in &stack.channels {
        for (o, v) in out.iter_mut().zip(ch) {
            *o += v;
        }
    }
    Image::new(stack.n, stack.pixel_size, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_image(n: usize, seed: u64) -> Image {
        let mut g = rng::seeded(seed);
        Image::new(n, 1.0, (0..n * n).map(|_| rng::uniform(&mut g, -1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn four_levels_give_fifteen_channels() {
        let bank = build_filter_bank(64, 4).unwrap();
        assert_eq!(bank.num_channels(), 15);
        assert_eq!(bank.dirs_per_level, vec![1, 2, 4, 8]);
        assert_eq!(bank.meta[0].center_angle_deg, None);
        assert_eq!(bank.meta[14].scale, 3);
    }

    #[test]
    fn windows_partition_unity() {
        for &(n, levels) in &[(64, 4), (33, 3), (128, 4)] {
            let bank = build_filter_bank(n, levels).unwrap();
            for idx in 0..n * n {
                let s: f64 = bank.windows.iter().map(|w| w[idx]).sum();
                assert!((s - 1.0).abs() <= 1e-12);
                assert!(bank.windows.iter().all(|w| w[idx] >= 0.0));
            }
        }
    }

    #[test]
    fn one_level_is_identity() {
        let bank = build_filter_bank(16, 1).unwrap();
        assert_eq!(bank.num_channels(), 1);
        assert!(bank.windows[0].iter().all(|&v| v == 1.0));
        let img = random_image(16, 3);
        let stack = decompose(&img, &bank).unwrap();
        for (a, b) in stack.channels[0].iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_layouts() {
        assert!(build_filter_bank(8, 4).is_err());
        assert!(build_filter_bank(16, 0).is_err());
        assert!(build_filter_bank_with(64, &[2, 4]).is_err());
        let bank = build_filter_bank(32, 3).unwrap();
        assert!(decompose(&random_image(16, 1), &bank).is_err());
    }

    #[test]
    fn custom_layout_counts() {
        let bank = build_filter_bank_with(64, &[1, 4, 8, 8]).unwrap();
        assert_eq!(bank.num_channels(), 21);
    }

    #[test]
    fn zero_image_and_stack() {
        let bank = build_filter_bank(32, 4).unwrap();
        let zero = Image::zeros(32, 1.0).unwrap();
        let stack = decompose(&zero, &bank).unwrap();
        assert!(stack.channels.iter().flatten().all(|&v| v == 0.0));
        let back = recompose(&stack.zeros_like(), &bank).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recompose_checks_channels() {
        let bank = build_filter_bank(32, 4).unwrap();
        let mut stack = decompose(&random_image(32, 2), &bank).unwrap();
        stack.channels.pop();
        assert!(recompose(&stack, &bank).is_err());
    }
}
