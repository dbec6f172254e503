use serde::{Deserialize, Serialize};

use super::{Image, MIN_IMAGE_SIDE};
use crate::error::{invalid, Result};
use crate::rng;

/// Filled ellipse with additive intensity, in image coordinates (mm, y down).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub rotation_deg: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let (a, b) = self.semi_axes;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }
}

fn rasterize(n: usize, pixel_size: f64, ellipses: &[Ellipse], lo: f64, hi: f64) -> Result<Image> {
    let mut img = Image::zeros(n, pixel_size)?;
    let coords: Vec<f64> = (0..n).map(|i| img.coord(i)).collect();
    for e in ellipses {
        for (r, &y) in coords.iter().enumerate() {
            for (c, &x) in coords.iter().enumerate() {
                if e.contains(x, y) {
                    img.data[r * n + c] += e.intensity;
                }
            }
        }
    }
    for v in img.data.iter_mut() {
        *v = v.clamp(lo, hi);
    }
    Ok(img)
}

// Modified (Toft) Shepp-Logan table on the unit disk, y up:
// intensity, semi-axis x, semi-axis y, center x, center y, rotation deg.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// The 10-ellipse Shepp-Logan head phantom filling the inscribed disk, 1 mm pixels.
pub fn shepp_logan(n: usize) -> Result<Image> {
    if n < MIN_IMAGE_SIDE {
        return Err(invalid(format!("phantom side {n} is below {MIN_IMAGE_SIDE}")));
    }
    let radius = n as f64 / 2.0;
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .map(|&[intensity, a, b, x, y, rot]| Ellipse {
            // flip to the y-down image frame
            center: (x * radius, -y * radius),
            semi_axes: (a * radius, b * radius),
            rotation_deg: -rot,
            intensity,
        })
        .collect();
    rasterize(n, 1.0, &ellipses, 0.0, 1.0)
}

/// Deterministic random phantom: a unit-intensity body ellipse plus `k - 1`
/// interior ellipses with intensities in [-0.4, 0.4]; clipped to [0, 1.2].
pub fn random_phantom(n: usize, seed: u64, k: usize) -> Result<Image> {
    if n < MIN_IMAGE_SIDE {
        return Err(invalid(format!("phantom side {n} is below {MIN_IMAGE_SIDE}")));
    }
    if k == 0 {
        return Err(invalid("a phantom needs at least one ellipse"));
    }
    let mut g = rng::seeded(seed);
    let radius = n as f64 / 2.0;
    let body = Ellipse {
        center: (rng::uniform(&mut g, -0.05, 0.05) * radius, rng::uniform(&mut g, -0.05, 0.05) * radius),
        semi_axes: (rng::uniform(&mut g, 0.6, 0.85) * radius, rng::uniform(&mut g, 0.45, 0.75) * radius),
        rotation_deg: rng::uniform(&mut g, 0.0, 180.0),
        intensity: 1.0,
    };
    let mut ellipses = vec![body];
    let (bs, bc) = body.rotation_deg.to_radians().sin_cos();
    for _ in 1..k {
        // center drawn uniformly inside 70% of the body
        let rho = 0.7 * rng::uniform(&mut g, 0.0, 1.0).sqrt();
        let phi = rng::uniform(&mut g, 0.0, std::f64::consts::TAU);
        let u = rho * phi.cos() * body.semi_axes.0;
        let v = rho * phi.sin() * body.semi_axes.1;
        ellipses.push(Ellipse {
            center: (body.center.0 + u * bc - v * bs, body.center.1 + u * bs + v * bc),
            semi_axes: (rng::uniform(&mut g, 0.05, 0.4) * radius, rng::uniform(&mut g, 0.05, 0.4) * radius),
            rotation_deg: rng::uniform(&mut g, 0.0, 180.0),
            intensity: rng::uniform(&mut g, -0.4, 0.4),
        });
    }
    rasterize(n, 1.0, &ellipses, 0.0, 1.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shepp_logan_range_and_support() {
        let img = shepp_logan(256).unwrap();
        assert_eq!(img.n(), 256);
        assert_eq!(img.max(), 1.0);
        assert!(img.min() >= 0.0);
        assert_eq!(img.get(0, 0), 0.0);
        // skull ring on the vertical axis near the top of the head
        assert_eq!(img.get(128 - 115, 128), 1.0);
        let tiny = shepp_logan(8).unwrap();
        assert!(tiny.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(shepp_logan(4).is_err());
    }

    #[test]
    fn random_phantom_is_deterministic() {
        assert_eq!(random_phantom(64, 3, 6).unwrap(), random_phantom(64, 3, 6).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let a = random_phantom(128, 1, 8).unwrap();
        let b = random_phantom(128, 2, 8).unwrap();
        let differing = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
        assert!(differing as f64 >= 0.01 * (128 * 128) as f64, "{differing}");
    }

    #[test]
    fn single_ellipse_has_zero_background() {
        let img = random_phantom(64, 11, 1).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(img.get(0, 0), 0.0);
        assert!(img.data().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn values_are_clipped() {
        for seed in 0..20 {
            let img = random_phantom(32, seed, 10).unwrap();
            assert!(img.data().iter().all(|&v| (0.0..=1.2).contains(&v)));
        }
    }
}
