//! Image-quality metrics: PSNR, NRMSE and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tomo::Image;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub slice_id: String,
    pub method: String,
    /// `f64::INFINITY` when the images are identical.
    pub psnr_db: f64,
    pub nrmse: f64,
    pub ssim: f64,
}

impl MetricsRow {
    pub fn compute(slice_id: &str, method: &str, x: &Image, reference: &Image) -> Result<Self> {
        Ok(MetricsRow {
            slice_id: slice_id.to_string(),
            method: method.to_string(),
            psnr_db: psnr(x, reference)?,
            nrmse: nrmse(x, reference)?,
            ssim: ssim(x, reference)?,
        })
    }
}

/// `10 log10(max(ref)^2 / MSE)`; identical images give `+inf`.
pub fn psnr(x: &Image, reference: &Image) -> Result<f64> {
    x.same_grid(reference)?;
    let peak = reference.max();
    if peak <= 0.0 {
        return Err(invalid("PSNR needs a reference with a positive peak"));
    }
    let mse = x.data().iter().zip(reference.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `||x - ref||_2 / ||ref||_2`.
pub fn nrmse(x: &Image, reference: &Image) -> Result<f64> {
    x.same_grid(reference)?;
    let den: f64 = reference.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(invalid("NRMSE reference has zero norm"));
    }
    let num: f64 = x.data().iter().zip(reference.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter keeping only fully-covered ("valid") windows.
fn filter_valid(data: &[f64], n: usize, w: &[f64]) -> Vec<f64> {
    let m = n - w.len() + 1;
    let mut rows = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            rows[r * m + c] = w.iter().enumerate().map(|(k, wk)| wk * data[r * n + c + k]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            out[r * m + c] = w.iter().enumerate().map(|(k, wk)| wk * rows[(r + k) * m + c]).sum();
        }
    }
    out
}

/// Mean SSIM over 11x11 Gaussian windows (sigma 1.5). The dynamic range is
/// taken from the joint min/max of both images, which keeps SSIM symmetric.
pub fn ssim(x: &Image, reference: &Image) -> Result<f64> {
    x.same_grid(reference)?;
    let n = x.n();
    if n < SSIM_WINDOW {
        return Err(invalid(format!("SSIM needs images of at least {SSIM_WINDOW} pixels per side")));
    }
    let hi = x.max().max(reference.max());
    let lo = x.min().min(reference.min());
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let w = gaussian_window();
    let a = x.data();
    let b = reference.data();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect() };
    let mu_a = filter_valid(a, n, &w);
    let mu_b = filter_valid(b, n, &w);
    let aa = filter_valid(&prod(&|p, _| p * p), n, &w);
    let bb = filter_valid(&prod(&|_, q| q * q), n, &w);
    let ab = filter_valid(&prod(&|p, q| p * q), n, &w);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tomo::shepp_logan;

    fn constant(n: usize, v: f64) -> Image {
        Image::new(n, 1.0, vec![v; n * n]).unwrap()
    }

    #[test]
    fn psnr_closed_form() {
        let p = psnr(&constant(16, 0.5), &constant(16, 1.0)).unwrap();
        assert!((p - 6.0206).abs() < 1e-3, "{p}");
        let r = shepp_logan(32).unwrap();
        assert_eq!(psnr(&r, &r).unwrap(), f64::INFINITY);
        assert!(psnr(&r, &constant(32, 0.0)).is_err());
    }

    #[test]
    fn psnr_is_scale_invariant_and_monotone() {
        let r = shepp_logan(32).unwrap();
        let x = r.with_data(r.data().iter().map(|v| v * 0.9 + 0.02).collect()).unwrap();
        let a = psnr(&x, &r).unwrap();
        let b = psnr(&x.scaled(2.0), &r.scaled(2.0)).unwrap();
        assert!((a - b).abs() < 1e-9);
        let mut last = f64::INFINITY;
        for k in 1..6 {
            let y = r.with_data(r.data().iter().map(|v| v + 0.01 * k as f64).collect()).unwrap();
            let p = psnr(&y, &r).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn nrmse_values() {
        let r = shepp_logan(32).unwrap();
        assert_eq!(nrmse(&r, &r).unwrap(), 0.0);
        assert_eq!(nrmse(&r.scaled(2.0), &r).unwrap(), 1.0);
        assert_eq!(nrmse(&constant(32, 0.0), &r).unwrap(), 1.0);
        assert!(nrmse(&r, &constant(32, 0.0)).is_err());
    }

    #[test]
    fn ssim_identity_and_noise() {
        let r = shepp_logan(64).unwrap();
        assert!((ssim(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&constant(16, 0.3), &constant(16, 0.3)).unwrap() - 1.0).abs() < 1e-12);
        let mut g = rng::seeded(1);
        let range = r.max() - r.min();
        let noisy = r.with_data(r.data().iter().map(|v| v + range * rng::normal(&mut g)).collect()).unwrap();
        let s = ssim(&noisy, &r).unwrap();
        assert!(s < 0.5, "{s}");
        assert!((ssim(&r, &noisy).unwrap() - s).abs() < 1e-12);
        assert!(ssim(&constant(8, 1.0), &constant(8, 1.0)).is_err());
    }
}
