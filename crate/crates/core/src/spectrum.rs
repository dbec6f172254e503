//! Missing-wedge analysis of limited-angle scans.
//!
//! Frequency grids are DC-centered: sample `(i, j)` of an `n x n` map holds
//! the integer frequency `(kx, ky) = (j - n/2, i - n/2)` in cycles per field
//! of view, using the same y-down axes as [`Image`].
//!
//! The per-point weight of a fan-beam arc is
//! `sigma(r, w) = 1/2 sgn(w.e) [sgn(w.alpha(l-, r)) - sgn(w.alpha(l+, r))]`
//! with `alpha(l, r) = r - R (cos l, sin l)` and `e = alpha(l-, r)`. With that
//! choice of `e` the weight is 0 or 1. `sgn(0)` is taken as +1.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::fft::{centered_index, fftshift, Fft2};
use crate::tomo::Image;

/// Largest grid accepted by the O(n^4) Katsevich evaluation.
pub const KATSEVICH_MAX_N: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqMask {
    pub n: usize,
    pub data: Vec<f64>,
    pub dc_centered: bool,
}

impl FreqMask {
    pub fn at(&self, kx: i64, ky: i64) -> f64 {
        let h = (self.n / 2) as i64;
        self.data[((ky + h) as usize) * self.n + (kx + h) as usize]
    }

    /// Fraction of non-DC samples equal to 1.
    pub fn area_fraction(&self) -> f64 {
        let ones = self.data.iter().filter(|&&v| v == 1.0).count();
        ones as f64 / (self.data.len() - 1) as f64
    }
}

/// Source arc `[lambda-, lambda+]` on a circular orbit of radius `radius` mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanArc {
    pub lambda_minus_deg: f64,
    pub lambda_plus_deg: f64,
    pub radius: f64,
}

impl ScanArc {
    pub fn new(lambda_minus_deg: f64, lambda_plus_deg: f64, radius: f64) -> Result<Self> {
        if !(lambda_plus_deg > lambda_minus_deg) {
            return Err(invalid("lambda+ must exceed lambda-"));
        }
        if !(radius > 0.0) {
            return Err(invalid("orbit radius must be positive"));
        }
        Ok(ScanArc { lambda_minus_deg, lambda_plus_deg, radius })
    }

    /// Arc of the given span for an image, with the orbit at twice the
    /// field-of-view half diagonal.
    pub fn for_image(img: &Image, lambda_minus_deg: f64, lambda_plus_deg: f64) -> Result<Self> {
        let half_diag = img.n() as f64 * img.pixel_size() * std::f64::consts::SQRT_2 / 2.0;
        ScanArc::new(lambda_minus_deg, lambda_plus_deg, 2.0 * half_diag)
    }

    fn source(&self, lambda_deg: f64) -> (f64, f64) {
        let (s, c) = lambda_deg.to_radians().sin_cos();
        (self.radius * c, self.radius * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sigma {
    pub value: i8,
    /// Set when `omega = 0`, where the sign test is undefined.
    pub degenerate: bool,
}

fn sgn(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

fn dot(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

/// The two `alpha` vectors seen from `r`, or `None` when the arc reaches the
/// source position conjugate to `a(lambda-)` through `r`: every line through
/// `r` is then measured and the weight is 1 for all nonzero frequencies.
fn arc_vectors(r: (f64, f64), arc: &ScanArc) -> Result<Option<((f64, f64), (f64, f64))>> {
    if (r.0 * r.0 + r.1 * r.1).sqrt() >= arc.radius {
        return Err(invalid("reconstruction point lies outside the source orbit"));
    }
    let a_minus = arc.source(arc.lambda_minus_deg);
    let alpha_minus = (r.0 - a_minus.0, r.1 - a_minus.1);
    // second intersection of the ray a(l-) -> r with the orbit
    let t = -2.0 * dot(a_minus, alpha_minus) / dot(alpha_minus, alpha_minus);
    let conj = (a_minus.0 + t * alpha_minus.0, a_minus.1 + t * alpha_minus.1);
    let conj_deg = conj.1.atan2(conj.0).to_degrees();
    let offset = (conj_deg - arc.lambda_minus_deg).rem_euclid(360.0);
    if arc.lambda_plus_deg - arc.lambda_minus_deg >= offset {
        return Ok(None);
    }
    let a_plus = arc.source(arc.lambda_plus_deg);
    Ok(Some((alpha_minus, (r.0 - a_plus.0, r.1 - a_plus.1))))
}

fn sigma_from(vectors: Option<((f64, f64), (f64, f64))>, omega: (f64, f64)) -> Sigma {
    if omega == (0.0, 0.0) {
        return Sigma { value: 0, degenerate: true };
    }
    let value = match vectors {
        None => 1,
        Some((am, ap)) => {
            let sm = sgn(dot(omega, am));
            let sp = sgn(dot(omega, ap));
            // e = alpha(l-, r), so sgn(w.e) = sm
            sm * (sm - sp) / 2
        }
    };
    Sigma { value, degenerate: false }
}

/// Weight of frequency `omega` in the reconstruction at point `r` (mm).
pub fn katsevich_sigma(r: (f64, f64), omega: (f64, f64), arc: &ScanArc) -> Result<Sigma> {
    Ok(sigma_from(arc_vectors(r, arc)?, omega))
}

/// `katsevich_sigma` over the centered `n x n` frequency grid.
pub fn sigma_map(r: (f64, f64), n: usize, arc: &ScanArc) -> Result<FreqMask> {
    let vectors = arc_vectors(r, arc)?;
    let h = (n / 2) as i64;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let omega = ((j as i64 - h) as f64, (i as i64 - h) as f64);
            data[i * n + j] = sigma_from(vectors, omega).value as f64;
        }
    }
    Ok(FreqMask { n, data, dc_centered: true })
}

/// Frequency direction in degrees, folded into `[0, 180)`.
pub fn direction_deg(kx: f64, ky: f64) -> f64 {
    ky.atan2(kx).to_degrees().rem_euclid(180.0)
}

/// Missing-wedge mask of a parallel-beam scan over ray angles `[lo, hi)`:
/// 1 where the frequency direction falls outside `[lo + 90, hi + 90)` mod 180.
pub fn wedge_mask(n: usize, lo_deg: f64, hi_deg: f64) -> Result<FreqMask> {
    let span = hi_deg - lo_deg;
    if !(span > 0.0 && span <= 180.0) {
        return Err(invalid(format!("coverage must satisfy 0 < hi - lo <= 180, got {span}")));
    }
    let h = (n / 2) as i64;
    let mut data = vec![0.0; n * n];
    if span < 180.0 {
        for i in 0..n {
            for j in 0..n {
                let (kx, ky) = ((j as i64 - h) as f64, (i as i64 - h) as f64);
                if kx == 0.0 && ky == 0.0 {
                    continue;
                }
                let rel = (direction_deg(kx, ky) - (lo_deg + 90.0)).rem_euclid(180.0);
                if rel >= span {
                    data[i * n + j] = 1.0;
                }
            }
        }
    }
    Ok(FreqMask { n, data, dc_centered: true })
}

/// Evaluate the sigma-weighted inverse Fourier integral at every pixel.
pub fn katsevich_reconstruct(img: &Image, arc: &ScanArc) -> Result<Image> {
    let n = img.n();
    if n > KATSEVICH_MAX_N {
        return Err(invalid(format!("katsevich_reconstruct is limited to n <= {KATSEVICH_MAX_N}, got {n}")));
    }
    let spectrum = Fft2::new(n).forward_real(img.data());
    let h = (n / 2) as i64;
    // twiddle[k_idx * n + p] = exp(2 pi i k p / n) with k = k_idx - n/2
    let twiddle: Vec<Complex64> = (0..n * n)
        .map(|idx| {
            let (ki, p) = (idx / n, idx % n);
            let k = ki as i64 - h;
            let phase = 2.0 * std::f64::consts::PI * ((k * p as i64).rem_euclid(n as i64)) as f64 / n as f64;
            Complex64::from_polar(1.0, phase)
        })
        .collect();
    // spectrum reordered to centered layout
    let centered = fftshift(&spectrum, n);
    let norm = 1.0 / (n * n) as f64;
    let mut out = vec![0.0; n * n];
    let coords: Vec<f64> = (0..n).map(|i| img.coord(i)).collect();
    let results: Vec<Result<()>> = out
        .par_chunks_mut(n)
        .enumerate()
        .map(|(row, out_row)| {
            for (col, o) in out_row.iter_mut().enumerate() {
                let vectors = arc_vectors((coords[col], coords[row]), arc)?;
                let mut acc = Complex64::new(0.0, 0.0);
                for ki in 0..n {
                    let ky = (ki as i64 - h) as f64;
                    let mut row_acc = Complex64::new(0.0, 0.0);
                    for kj in 0..n {
                        let kx = (kj as i64 - h) as f64;
                        // the mean is measured by every view
                        let weight = if kx == 0.0 && ky == 0.0 { 1 } else { sigma_from(vectors, (kx, ky)).value };
                        if weight != 0 {
                            row_acc += centered[ki * n + kj] * twiddle[kj * n + col];
                        }
                    }
                    acc += row_acc * twiddle[ki * n + row];
                }
                *o = acc.re * norm;
            }
            Ok(())
        })
        .collect();
    results.into_iter().collect::<Result<Vec<()>>>()?;
    img.with_data(out)
}

/// Centered magnitude spectrum of an image difference, plus `ln(1 + |F|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArtifactSpectrum {
    pub n: usize,
    pub magnitude: Vec<f64>,
    pub log_magnitude: Vec<f64>,
}

pub fn magnitude_spectrum(img: &Image) -> ArtifactSpectrum {
    let n = img.n();
    let f = Fft2::new(n).forward_real(img.data());
    let magnitude = fftshift(&f.iter().map(|c| c.norm()).collect::<Vec<_>>(), n);
    let log_magnitude = magnitude.iter().map(|m| m.ln_1p()).collect();
    ArtifactSpectrum { n, magnitude, log_magnitude }
}

/// `|FFT(limited - full)|`, DC-centered.
pub fn artifact_spectrum(limited: &Image, full: &Image) -> Result<ArtifactSpectrum> {
    Ok(magnitude_spectrum(&limited.sub(full)?))
}

/// Share of spectral energy (DC excluded) inside the mask.
pub fn wedge_energy_ratio(spec: &ArtifactSpectrum, mask: &FreqMask) -> Result<f64> {
    if spec.n != mask.n {
        return Err(shape(format!("spectrum side {} vs mask side {}", spec.n, mask.n)));
    }
    let dc = centered_index(0, spec.n) * spec.n + centered_index(0, spec.n);
    let mut inside = 0.0;
    let mut total = 0.0;
    for (i, (&m, &w)) in spec.magnitude.iter().zip(&mask.data).enumerate() {
        if i == dc {
            continue;
        }
        let e = m * m;
        total += e;
        if w != 0.0 {
            inside += e;
        }
    }
    if total == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(inside / total)
}

/// Spectral energy per direction bin over `[0, 180)`, DC excluded, normalized to sum 1.
pub fn angular_profile(spec: &ArtifactSpectrum, bins: usize) -> Result<Vec<f64>> {
    let n = spec.n;
    let h = (n / 2) as i64;
    let mut profile = vec![0.0; bins];
    for i in 0..n {
        for j in 0..n {
            let (kx, ky) = ((j as i64 - h) as f64, (i as i64 - h) as f64);
            if kx == 0.0 && ky == 0.0 {
                continue;
            }
            let b = ((direction_deg(kx, ky) / 180.0 * bins as f64) as usize).min(bins - 1);
            profile[b] += spec.magnitude[i * n + j].powi(2);
        }
    }
    let total: f64 = profile.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(profile.into_iter().map(|v| v / total).collect())
}

/// Pearson correlation of two equally long profiles.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
