use rayon::prelude::*;

use super::{Geometry, Image, Sinogram};
use crate::error::{invalid, shape, Result};

/// Visit the Joseph interpolation taps of ray `bin` at angle `theta`:
/// `visit(pixel_index, weight)`, weights in mm.
#[inline]
pub(crate) fn joseph_taps(n: usize, pixel_size: f64, geom: &Geometry, theta: f64, bin: usize, mut visit: impl FnMut(usize, f64)) {
    let (s, c) = theta.sin_cos();
    let t = geom.bin_coord(bin);
    let half = (n as f64 - 1.0) / 2.0;
    let ni = n as isize;
    if c.abs() >= s.abs() {
        // march over columns, interpolate between rows
        let w = pixel_size / c.abs();
        for col in 0..n {
            let x = (col as f64 - half) * pixel_size;
            let y = (t + x * s) / c;
            let fy = y / pixel_size + half;
            let r0 = fy.floor();
            let frac = fy - r0;
            let r0 = r0 as isize;
            if r0 >= 0 && r0 < ni {
                visit(r0 as usize * n + col, w * (1.0 - frac));
            }
            if r0 + 1 >= 0 && r0 + 1 < ni {
                visit((r0 + 1) as usize * n + col, w * frac);
            }
        }
    } else {
        // march over rows, interpolate between columns
        let w = pixel_size / s.abs();
        for row in 0..n {
            let y = (row as f64 - half) * pixel_size;
            let x = (y * c - t) / s;
            let fx = x / pixel_size + half;
            let c0 = fx.floor();
            let frac = fx - c0;
            let c0 = c0 as isize;
            if c0 >= 0 && c0 < ni {
                visit(row * n + c0 as usize, w * (1.0 - frac));
            }
            if c0 + 1 >= 0 && c0 + 1 < ni {
                visit(row * n + (c0 + 1) as usize, w * frac);
            }
        }
    }
}

fn check_coverage(n: usize, pixel_size: f64, geom: &Geometry) -> Result<()> {
    geom.validate()?;
    let needed = n as f64 * pixel_size * std::f64::consts::SQRT_2;
    let have = geom.n_det as f64 * geom.det_spacing;
    if have + 1e-9 < needed {
        return Err(shape(format!("detector extent {have:.3} mm does not cover the grid diagonal {needed:.3} mm")));
    }
    Ok(())
}

/// Line integrals of `img` (value * mm) along every ray of `geom`.
pub fn forward_project(img: &Image, geom: &Geometry) -> Result<Sinogram> {
    check_coverage(img.n(), img.pixel_size(), geom)?;
    let angles = geom.angles_deg();
    let nd = geom.n_det;
    let mut data = vec![0.0; geom.n_angles * nd];
    data.par_chunks_mut(nd).zip(angles.par_iter()).for_each(|(row, &deg)| {
        project_view(img, geom, deg.to_radians(), row);
    });
    Sinogram::new(geom.clone(), angles, data)
}

pub(crate) fn project_view(img: &Image, geom: &Geometry, theta: f64, out: &mut [f64]) {
    let pix = img.data();
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        joseph_taps(img.n(), img.pixel_size(), geom, theta, k, |i, w| acc += w * pix[i]);
        *o = acc;
    }
}

/// Exact transpose of the Joseph projector for one view, accumulated into `out`.
pub(crate) fn adjoint_view(row: &[f64], geom: &Geometry, theta: f64, n: usize, pixel_size: f64, out: &mut [f64]) {
    for (k, &v) in row.iter().enumerate() {
        if v != 0.0 {
            joseph_taps(n, pixel_size, geom, theta, k, |i, w| out[i] += w * v);
        }
    }
}

/// Exact matrix transpose of [`forward_project`] onto an `n x n` grid.
pub fn adjoint_project(sino: &Sinogram, n: usize, pixel_size: f64) -> Result<Image> {
    check_coverage(n, pixel_size, &sino.geometry)?;
    let mut out = vec![0.0; n * n];
    for (a, &deg) in sino.angles_deg.iter().enumerate() {
        adjoint_view(sino.row(a), &sino.geometry, deg.to_radians(), n, pixel_size, &mut out);
    }
    Image::new(n, pixel_size, out)
}

/// Pixel-driven backprojection with linear detector interpolation, weighted
/// by the angular step so a ramp-filtered full arc integrates over pi.
/// The grid pixel size equals the detector spacing.
pub fn backproject(sino: &Sinogram, n: usize) -> Result<Image> {
    let g = &sino.geometry;
    g.validate()?;
    if n == 0 {
        return Err(invalid("grid side must be positive"));
    }
    let pixel_size = g.det_spacing;
    let trig: Vec<(f64, f64)> = sino.angles_deg.iter().map(|d| d.to_radians().sin_cos()).collect();
    let half = (n as f64 - 1.0) / 2.0;
    let center_bin = (g.n_det as f64 - 1.0) / 2.0;
    let nd = g.n_det as isize;
    let scale = sino.angle_step_rad();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(r, out_row)| {
        let y = (r as f64 - half) * pixel_size;
        for (a, &(s, c)) in trig.iter().enumerate() {
            let proj = sino.row(a);
            // bin position is affine in the column index
            let f0 = (-(-half * pixel_size) * s + y * c) / g.det_spacing + center_bin;
            let df = -s * pixel_size / g.det_spacing;
            for (col, o) in out_row.iter_mut().enumerate() {
                let f = f0 + df * col as f64;
                let k0 = f.floor();
                let frac = f - k0;
                let k0 = k0 as isize;
                let mut v = 0.0;
                if k0 >= 0 && k0 < nd {
                    v += (1.0 - frac) * proj[k0 as usize];
                }
                if k0 + 1 >= 0 && k0 + 1 < nd {
                    v += frac * proj[(k0 + 1) as usize];
                }
                *o += v;
            }
        }
        for o in out_row.iter_mut() {
            *o *= scale;
        }
    });
    Image::new(n, pixel_size, data)
}

/// Euclidean norm of `sino - P img`.
pub fn data_residual(img: &Image, sino: &Sinogram) -> Result<f64> {
    let p = forward_project(img, &sino.geometry)?;
    Ok(p.data.iter().zip(&sino.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}
