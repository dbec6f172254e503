//! Parallel-beam scan simulation and classical reconstruction.
//!
//! Coordinates: pixel `(row, col)` of an `n x n` image has its center at
//! `x = (col - (n-1)/2) * pixel_size`, `y = (row - (n-1)/2) * pixel_size`,
//! i.e. the y axis points down the rows. A projection at angle `theta`
//! integrates along rays travelling in direction `(cos theta, sin theta)`;
//! detector bins are laid out along `(-sin theta, cos theta)`, so by the
//! Fourier slice theorem it samples frequency direction `theta + 90 deg`.

mod filter;
mod phantom;
mod pocs;
mod project;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};

pub use filter::{fbp, ramp_filter, Window};
pub use phantom::{random_phantom, shepp_logan, Ellipse};
pub use pocs::{pocs_tv, total_variation, TvParams, TvResult};
pub use project::{adjoint_project, backproject, data_residual, forward_project};

/// Square grayscale image, row-major with rows running down the y axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    n: usize,
    pixel_size: f64,
    data: Vec<f64>,
}

pub const MIN_IMAGE_SIDE: usize = 8;

impl Image {
    pub fn new(n: usize, pixel_size: f64, data: Vec<f64>) -> Result<Self> {
        if n < MIN_IMAGE_SIDE {
            return Err(invalid(format!("image side {n} is below the minimum {MIN_IMAGE_SIDE}")));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(invalid(format!("pixel size must be positive, got {pixel_size}")));
        }
        if data.len() != n * n {
            return Err(shape(format!("{} values for a {n}x{n} image", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("image contains non-finite values"));
        }
        Ok(Image { n, pixel_size, data })
    }

    pub fn zeros(n: usize, pixel_size: f64) -> Result<Self> {
        Image::new(n, pixel_size, vec![0.0; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    /// Physical coordinate of pixel index `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n as f64 - 1.0) / 2.0) * self.pixel_size
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn same_grid(&self, other: &Image) -> Result<()> {
        if self.n != other.n {
            return Err(shape(format!("image sides differ: {} vs {}", self.n, other.n)));
        }
        Ok(())
    }

    /// Pixelwise `self - other`.
    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.same_grid(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Image { data, ..*self })
    }

    pub fn scaled(&self, a: f64) -> Image {
        let data = self.data.iter().map(|v| v * a).collect();
        Image { data, ..*self }
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Image> {
        Image::new(self.n, self.pixel_size, data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Parallel,
}

/// Parallel-beam scan description over the half-open arc `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub kind: GeometryKind,
    pub n_angles: usize,
    pub angle_start_deg: f64,
    pub angle_end_deg: f64,
    pub n_det: usize,
    pub det_spacing: f64,
}

impl Geometry {
    pub fn parallel(n_angles: usize, angle_start_deg: f64, angle_end_deg: f64, n_det: usize, det_spacing: f64) -> Result<Self> {
        let g = Geometry { kind: GeometryKind::Parallel, n_angles, angle_start_deg, angle_end_deg, n_det, det_spacing };
        g.validate()?;
        Ok(g)
    }

    /// Geometry whose detector just covers the diagonal of an `n x n` grid:
    /// the next odd bin count `>= ceil(n * sqrt 2)` at one pixel per bin.
    pub fn for_grid(n: usize, pixel_size: f64, n_angles: usize, angle_start_deg: f64, angle_end_deg: f64) -> Result<Self> {
        Geometry::parallel(n_angles, angle_start_deg, angle_end_deg, detector_bins(n), pixel_size)
    }

    pub fn validate(&self) -> Result<()> {
        let arc = self.arc_deg();
        if !(arc > 0.0 && arc <= 180.0 + 1e-9) {
            return Err(invalid(format!("parallel-beam arc must lie in (0, 180], got {arc}")));
        }
        if self.n_angles < 2 {
            return Err(invalid("at least two projection angles are required"));
        }
        if self.n_det % 2 == 0 {
            return Err(invalid(format!("detector bin count must be odd, got {}", self.n_det)));
        }
        if !(self.det_spacing > 0.0) {
            return Err(invalid("detector spacing must be positive"));
        }
        Ok(())
    }

    pub fn arc_deg(&self) -> f64 {
        self.angle_end_deg - self.angle_start_deg
    }

    /// Uniform angle samples `start + i * arc / n_angles`.
    pub fn angles_deg(&self) -> Vec<f64> {
        let step = self.arc_deg() / self.n_angles as f64;
        (0..self.n_angles).map(|i| self.angle_start_deg + i as f64 * step).collect()
    }

    /// Detector coordinate of bin `k`.
    pub fn bin_coord(&self, k: usize) -> f64 {
        (k as f64 - (self.n_det as f64 - 1.0) / 2.0) * self.det_spacing
    }
}

pub fn detector_bins(n: usize) -> usize {
    let min = (n as f64 * std::f64::consts::SQRT_2).ceil() as usize;
    if min % 2 == 0 {
        min + 1
    } else {
        min
    }
}

/// Projection data, one row per angle.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub geometry: Geometry,
    pub angles_deg: Vec<f64>,
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn new(geometry: Geometry, angles_deg: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if angles_deg.len() != geometry.n_angles {
            return Err(shape(format!("{} angles for a geometry with {} views", angles_deg.len(), geometry.n_angles)));
        }
        if data.len() != geometry.n_angles * geometry.n_det {
            return Err(shape(format!("sinogram payload has {} values, expected {}x{}", data.len(), geometry.n_angles, geometry.n_det)));
        }
        if angles_deg.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sinogram angles must be strictly increasing"));
        }
        Ok(Sinogram { geometry, angles_deg, data })
    }

    pub fn zeros(geometry: Geometry) -> Result<Self> {
        let angles = geometry.angles_deg();
        let len = geometry.n_angles * geometry.n_det;
        Sinogram::new(geometry, angles, vec![0.0; len])
    }

    pub fn row(&self, a: usize) -> &[f64] {
        let nd = self.geometry.n_det;
        &self.data[a * nd..(a + 1) * nd]
    }

    /// Angular weight of one view in the backprojection integral, radians.
    pub fn angle_step_rad(&self) -> f64 {
        self.geometry.arc_deg().to_radians() / self.geometry.n_angles as f64
    }
}

/// Keep the rows whose angle lies in `[lo_deg, hi_deg)`.
pub fn restrict_angles(sino: &Sinogram, lo_deg: f64, hi_deg: f64) -> Result<Sinogram> {
    let g = &sino.geometry;
    let eps = 1e-9;
    if lo_deg < g.angle_start_deg - eps || hi_deg > g.angle_end_deg + eps {
        return Err(invalid(format!("range [{lo_deg}, {hi_deg}) is not inside the scan arc [{}, {})", g.angle_start_deg, g.angle_end_deg)));
    }
    let keep: Vec<usize> = sino.angles_deg.iter().enumerate().filter(|(_, &a)| a >= lo_deg && a < hi_deg).map(|(i, _)| i).collect();
    if keep.is_empty() {
        return Err(Error::EmptySelection { lo: lo_deg, hi: hi_deg });
    }
    let nd = g.n_det;
    let mut data = Vec::with_capacity(keep.len() * nd);
    for &i in &keep {
        data.extend_from_slice(sino.row(i));
    }
    let geometry = Geometry { n_angles: keep.len(), angle_start_deg: lo_deg, angle_end_deg: hi_deg, ..g.clone() };
    let angles = keep.iter().map(|&i| sino.angles_deg[i]).collect();
    Sinogram::new(geometry, angles, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_sino() -> Sinogram {
        let g = Geometry::for_grid(16, 1.0, 360, 0.0, 180.0).unwrap();
        let len = g.n_angles * g.n_det;
        let angles = g.angles_deg();
        Sinogram::new(g, angles, (0..len).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn detector_covers_diagonal() {
        assert_eq!(detector_bins(128), 183);
        assert_eq!(detector_bins(8), 13);
        for n in [8, 31, 64, 100, 256] {
            let d = detector_bins(n);
            assert!(d % 2 == 1 && d as f64 >= n as f64 * 2f64.sqrt());
        }
    }

    #[test]
    fn geometry_rejects_bad_arcs() {
        assert!(Geometry::parallel(10, 0.0, 190.0, 11, 1.0).is_err());
        assert!(Geometry::parallel(10, 0.0, 0.0, 11, 1.0).is_err());
        assert!(Geometry::parallel(1, 0.0, 90.0, 11, 1.0).is_err());
        assert!(Geometry::parallel(10, 0.0, 90.0, 10, 1.0).is_err());
    }

    #[test]
    fn restrict_full_arc_is_identity() {
        let s = full_sino();
        assert_eq!(restrict_angles(&s, 0.0, 180.0).unwrap(), s);
    }

    #[test]
    fn restrict_counts_rows() {
        let s = full_sino();
        let r = restrict_angles(&s, 0.0, 120.0).unwrap();
        assert_eq!(r.geometry.n_angles, 240);
        assert_eq!(r.geometry.arc_deg(), 120.0);
        assert!((r.angle_step_rad() - s.angle_step_rad()).abs() < 1e-15);
        assert_eq!(r.row(5), s.row(5));
    }

    #[test]
    fn restrict_empty_is_error() {
        let s = full_sino();
        assert!(matches!(restrict_angles(&s, 0.0, 0.0), Err(Error::EmptySelection { .. })));
        assert!(restrict_angles(&s, -10.0, 20.0).is_err());
    }

    #[test]
    fn nested_restrictions_compose() {
        let s = full_sino();
        let once = restrict_angles(&s, 30.0, 90.0).unwrap();
        let twice = restrict_angles(&restrict_angles(&s, 10.0, 150.0).unwrap(), 30.0, 90.0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn image_rejects_small_or_nonfinite() {
        assert!(Image::zeros(7, 1.0).is_err());
        let mut d = vec![0.0; 64];
        d[3] = f64::NAN;
        assert!(Image::new(8, 1.0, d).is_err());
    }
}
