//! Square 2-D FFT helpers on row-major buffers.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.apply(buf, &self.forward);
    }

    /// Inverse transform including the 1/n² normalization, in place.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.apply(buf, &self.inverse);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    fn apply(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(buf.len(), n * n);
        fft.process(buf);
        transpose(buf, n);
        fft.process(buf);
        transpose(buf, n);
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Signed frequency of DFT index `i` on an `n`-point grid.
pub(crate) fn signed_freq(i: usize, n: usize) -> i64 {
    let i = i as i64;
    let n = n as i64;
    if i < (n + 1) / 2 {
        i
    } else {
        i - n
    }
}

/// Map a DFT-order index to its position in a DC-centered layout.
pub(crate) fn centered_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Reorder a DFT-order grid so the DC sample sits at (n/2, n/2).
pub(crate) fn fftshift<T: Copy>(data: &[T], n: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for r in 0..n {
        for c in 0..n {
            out[centered_index(r, n) * n + centered_index(c, n)] = data[r * n + c];
        }
    }
    out
}
