//! POCS with total-variation descent: ordered-subset SART for data
//! consistency, a nonnegativity projection, then a few normalized
//! steepest-descent steps on smoothed isotropic TV.

use serde::{Deserialize, Serialize};

use super::project::{adjoint_view, project_view};
use super::{Image, Sinogram};
use crate::error::{invalid, Error, Result};

const TV_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvParams {
    pub n_iters: usize,
    pub sart_relax: f64,
    pub n_tv_steps: usize,
    pub tv_step_scale: f64,
    pub enforce_nonnegativity: bool,
}

impl Default for TvParams {
    fn default() -> Self {
        TvParams { n_iters: 50, sart_relax: 1.0, n_tv_steps: 10, tv_step_scale: 0.2, enforce_nonnegativity: true }
    }
}

impl TvParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_iters == 0 {
            return Err(invalid("n_iters must be at least 1"));
        }
        if !(self.sart_relax > 0.0 && self.sart_relax < 2.0) {
            return Err(invalid(format!("sart_relax must lie in (0, 2), got {}", self.sart_relax)));
        }
        if !(self.tv_step_scale > 0.0 && self.tv_step_scale < 1.0) {
            return Err(invalid(format!("tv_step_scale must lie in (0, 1), got {}", self.tv_step_scale)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TvResult {
    pub image: Image,
    /// `||y - P x||` after each outer iteration.
    pub residuals: Vec<f64>,
    /// TV of the iterate after each outer iteration.
    pub tv: Vec<f64>,
}

/// Isotropic TV with forward differences (zero flux across the border).
pub fn total_variation(img: &Image) -> f64 {
    let n = img.n();
    let d = img.data();
    let mut tv = 0.0;
    for r in 0..n {
        for c in 0..n {
            let v = d[r * n + c];
            let dx = if c + 1 < n { d[r * n + c + 1] - v } else { 0.0 };
            let dy = if r + 1 < n { d[(r + 1) * n + c] - v } else { 0.0 };
            tv += (dx * dx + dy * dy).sqrt();
        }
    }
    tv
}

/// Gradient of the eps-smoothed isotropic TV.
fn tv_gradient(x: &[f64], n: usize) -> Vec<f64> {
    let at = |r: usize, c: usize| x[r * n + c];
    let mut grad = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let v = at(r, c);
            let dx = if c + 1 < n { at(r, c + 1) - v } else { 0.0 };
            let dy = if r + 1 < n { at(r + 1, c) - v } else { 0.0 };
            let mag = (dx * dx + dy * dy + TV_EPS).sqrt();
            // d/dv of this pixel's term
            grad[r * n + c] -= (dx + dy) / mag;
            if c + 1 < n {
                grad[r * n + c + 1] += dx / mag;
            }
            if r + 1 < n {
                grad[(r + 1) * n + c] += dy / mag;
            }
        }
    }
    grad
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Visiting order that spreads consecutive views across the arc.
fn view_order(n: usize) -> Vec<usize> {
    let mut stride = ((n as f64) * 0.618_033_988_75).round().max(1.0) as usize;
    while gcd(stride, n) != 1 {
        stride += 1;
    }
    (0..n).map(|i| (i * stride) % n).collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn pocs_tv(sino: &Sinogram, n: usize, params: &TvParams) -> Result<TvResult> {
    params.validate()?;
    let geom = &sino.geometry;
    let pixel_size = geom.det_spacing;
    let nd = geom.n_det;
    let thetas: Vec<f64> = sino.angles_deg.iter().map(|d| d.to_radians()).collect();
    let mut x = Image::zeros(n, pixel_size)?;

    // per-view ray lengths and pixel weights of the Joseph system matrix
    let ones = Image::new(n, pixel_size, vec![1.0; n * n])?;
    let mut ray_len = vec![0.0; thetas.len() * nd];
    let mut pix_weight = vec![0.0; thetas.len() * n * n];
    for (a, &th) in thetas.iter().enumerate() {
        project_view(&ones, geom, th, &mut ray_len[a * nd..(a + 1) * nd]);
        adjoint_view(&vec![1.0; nd], geom, th, n, pixel_size, &mut pix_weight[a * n * n..(a + 1) * n * n]);
    }
    let order = view_order(thetas.len());

    let mut residuals = Vec::with_capacity(params.n_iters);
    let mut tvs = Vec::with_capacity(params.n_iters);
    let mut best = f64::INFINITY;
    let mut proj = vec![0.0; nd];
    let mut update = vec![0.0; n * n];
    for iteration in 0..params.n_iters {
        let before = x.data().to_vec();
        for &a in &order {
            project_view(&x, geom, thetas[a], &mut proj);
            let measured = sino.row(a);
            let lens = &ray_len[a * nd..(a + 1) * nd];
            for k in 0..nd {
                proj[k] = if lens[k] > 1e-12 { (measured[k] - proj[k]) / lens[k] } else { 0.0 };
            }
            update.iter_mut().for_each(|u| *u = 0.0);
            adjoint_view(&proj, geom, thetas[a], n, pixel_size, &mut update);
            let weights = &pix_weight[a * n * n..(a + 1) * n * n];
            for ((v, u), w) in x.data_mut().iter_mut().zip(&update).zip(weights) {
                if *w > 1e-12 {
                    *v += params.sart_relax * u / w;
                }
            }
        }
        if params.enforce_nonnegativity {
            x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let step: Vec<f64> = x.data().iter().zip(&before).map(|(a, b)| a - b).collect();
        let dp = norm(&step);
        for _ in 0..params.n_tv_steps {
            let g = tv_gradient(x.data(), n);
            let gn = norm(&g);
            if gn <= 0.0 || dp <= 0.0 {
                break;
            }
            let alpha = params.tv_step_scale * dp / gn;
            for (v, gi) in x.data_mut().iter_mut().zip(&g) {
                *v -= alpha * gi;
            }
        }
        let residual = super::data_residual(&x, sino)?;
        if !residual.is_finite() {
            return Err(Error::Diverged { iteration, residual, minimum: best });
        }
        best = best.min(residual);
        if residual > 10.0 * best {
            return Err(Error::Diverged { iteration, residual, minimum: best });
        }
        residuals.push(residual);
        tvs.push(total_variation(&x));
    }
    Ok(TvResult { image: x, residuals, tv: tvs })
}
