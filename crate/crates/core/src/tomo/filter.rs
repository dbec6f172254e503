use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{backproject, Image, Sinogram};
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Plain band-limited ramp.
    #[default]
    Ramlak,
    /// Ramp apodized by a Hann window reaching zero at Nyquist.
    Hann,
}

impl std::str::FromStr for Window {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ramlak" | "ram-lak" => Ok(Window::Ramlak),
            "hann" => Ok(Window::Hann),
            other => Err(format!("unknown filter window '{other}' (expected ramlak or hann)")),
        }
    }
}

/// Frequency response of the discrete ramp on a `len`-point padded row.
///
/// Built as the DFT of the band-limited spatial ramp kernel
/// (`h[0] = 1/(4d^2)`, `h[k odd] = -1/(pi k d)^2`), which is real and even.
/// Truncating the kernel leaves a tiny DC residue; the DC bin is pinned to 0.
pub(crate) fn ramp_response(len: usize, spacing: f64, window: Window) -> Vec<f64> {
    let mut kernel = vec![Complex64::new(0.0, 0.0); len];
    let d2 = spacing * spacing;
    kernel[0].re = 1.0 / (4.0 * d2);
    for k in 1..=len / 2 {
        if k % 2 == 1 {
            let v = -1.0 / (std::f64::consts::PI * k as f64).powi(2) / d2;
            kernel[k].re = v;
            kernel[len - k].re = v;
        }
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let gain = if i == 0 { 0.0 } else { h.re * spacing };
            match window {
                Window::Ramlak => gain,
                Window::Hann => {
                    let f = crate::fft::signed_freq(i, len).unsigned_abs() as f64 / (len as f64 / 2.0);
                    gain * 0.5 * (1.0 + (std::f64::consts::PI * f).cos())
                }
            }
        })
        .collect()
}

pub(crate) fn padded_len(n_det: usize) -> usize {
    (2 * n_det).next_power_of_two()
}

/// Ramp-filter every projection row through a zero-padded FFT.
pub fn ramp_filter(sino: &Sinogram, window: Window) -> Sinogram {
    let nd = sino.geometry.n_det;
    let len = padded_len(nd);
    let response = ramp_response(len, sino.geometry.det_spacing, window);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut data = vec![0.0; sino.data.len()];
    data.par_chunks_mut(nd).zip(sino.data.par_chunks(nd)).for_each(|(out, row)| {
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (b, &v) in buf.iter_mut().zip(row) {
            b.re = v;
        }
        fwd.process(&mut buf);
        for (b, &h) in buf.iter_mut().zip(&response) {
            *b *= h;
        }
        inv.process(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re / len as f64;
        }
    });
    Sinogram { geometry: sino.geometry.clone(), angles_deg: sino.angles_deg.clone(), data }
}

/// Filtered backprojection onto an `n x n` grid.
pub fn fbp(sino: &Sinogram, n: usize, window: Window) -> Result<Image> {
    backproject(&ramp_filter(sino, window), n)
}
