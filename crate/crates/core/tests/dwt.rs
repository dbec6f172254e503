use lact_core::dwt::{build_filter_bank, decompose, recompose, FilterBank};
use lact_core::Image;
use proptest::prelude::*;

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn perfect_reconstruction(
        data in prop::collection::vec(-10.0f64..10.0, 32 * 32),
        levels in 1usize..=4,
    ) {
        let img = Image::new(32, 1.0, data).unwrap();
        let bank = build_filter_bank(32, levels).unwrap();
        let back = recompose(&decompose(&img, &bank).unwrap(), &bank).unwrap();
        let peak = img.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in back.data().iter().zip(img.data()) {
            prop_assert!((a - b).abs() <= 1e-8 * peak);
        }
    }

    #[test]
    fn decomposition_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 16 * 16),
        b in prop::collection::vec(-1.0f64..1.0, 16 * 16),
        s in -3.0f64..3.0,
    ) {
        let bank = build_filter_bank(16, 3).unwrap();
        let ia = Image::new(16, 1.0, a).unwrap();
        let ib = Image::new(16, 1.0, b).unwrap();
        let mix = ia.with_data(ia.data().iter().zip(ib.data()).map(|(x, y)| x + s * y).collect()).unwrap();
        let (da, db, dm) = (decompose(&ia, &bank).unwrap(), decompose(&ib, &bank).unwrap(), decompose(&mix, &bank).unwrap());
        for c in 0..bank.num_channels() {
            for k in 0..256 {
                prop_assert!((dm.channels[c][k] - (da.channels[c][k] + s * db.channels[c][k])).abs() < 1e-10);
            }
        }
    }
}

fn shift(data: &[f64], n: usize, dr: usize, dc: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[((r + dr) % n) * n + (c + dc) % n] = data[r * n + c];
        }
    }
    out
}

fn oriented_wave(n: usize, kx: f64, ky: f64) -> Image {
    let mut data = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let phase = 2.0 * std::f64::consts::PI * (kx * c as f64 + ky * r as f64) / n as f64;
            data[r * n + c] = phase.cos();
        }
    }
    Image::new(n, 1.0, data).unwrap()
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

fn nearest_channel(bank: &FilterBank, scale: usize, angle: f64) -> usize {
    (0..bank.num_channels())
        .filter(|&c| bank.meta[c].scale == scale)
        .min_by(|&a, &b| {
            let ga = angle_gap(bank.meta[a].center_angle_deg.unwrap(), angle);
            let gb = angle_gap(bank.meta[b].center_angle_deg.unwrap(), angle);
            ga.partial_cmp(&gb).unwrap()
        })
        .unwrap()
}

#[test]
fn fifteen_channels_at_four_levels() {
    let bank = build_filter_bank(128, 4).unwrap();
    assert_eq!(bank.num_channels(), 15);
    let stack = decompose(&oriented_wave(128, 3.0, 1.0), &bank).unwrap();
    assert!(stack.channels.iter().all(|c| c.len() == 128 * 128));
}

#[test]
fn impulse_energies_follow_the_windows() {
    let n = 32;
    let bank = build_filter_bank(n, 4).unwrap();
    let mut data = vec![0.0; n * n];
    data[(n / 2) * n + n / 2] = 1.0;
    let stack = decompose(&Image::new(n, 1.0, data).unwrap(), &bank).unwrap();
    // Parseval: the impulse spectrum is flat, so channel energy = mean squared window
    for (c, w) in bank.windows.iter().enumerate() {
        let expected = energy(w) / (n * n) as f64;
        assert!((energy(&stack.channels[c]) - expected).abs() < 1e-12, "channel {c}");
    }
}

#[test]
fn shift_covariance() {
    let n = 32;
    let bank = build_filter_bank(n, 4).unwrap();
    let img = lact_core::tomo::shepp_logan(n).unwrap();
    let moved = img.with_data(shift(img.data(), n, 5, 11)).unwrap();
    let (a, b) = (decompose(&img, &bank).unwrap(), decompose(&moved, &bank).unwrap());
    for c in 0..bank.num_channels() {
        for (x, y) in shift(&a.channels[c], n, 5, 11).iter().zip(&b.channels[c]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn oriented_waves_land_in_the_matching_wedge() {
    let n = 128;
    let bank = build_filter_bank(n, 4).unwrap();
    // frequency radii well inside each directional shell
    for (scale, radius) in [(1usize, 12.0f64), (2, 24.0), (3, 48.0)] {
        for deg in [5.0f64, 40.0, 77.0, 100.0, 150.0] {
            let (kx, ky) = ((radius * deg.to_radians().cos()).round(), (radius * deg.to_radians().sin()).round());
            let angle = ky.atan2(kx).to_degrees().rem_euclid(180.0);
            let stack = decompose(&oriented_wave(n, kx, ky), &bank).unwrap();
            let total: f64 = stack.channels.iter().map(|c| energy(c)).sum();
            let best = nearest_channel(&bank, scale, angle);
            let share = energy(&stack.channels[best]) / total;
            assert!(share >= 0.5, "scale {scale} angle {angle}: {share}");
        }
    }
}

#[test]
fn vertical_stripes_pick_the_horizontal_frequency_channel() {
    let n = 64;
    let bank = build_filter_bank(n, 4).unwrap();
    let stack = decompose(&oriented_wave(n, 20.0, 0.0), &bank).unwrap();
    let finest: Vec<usize> = (0..bank.num_channels()).filter(|&c| bank.meta[c].scale == 3).collect();
    let best = *finest.iter().max_by(|&&a, &&b| energy(&stack.channels[a]).partial_cmp(&energy(&stack.channels[b])).unwrap()).unwrap();
    assert_eq!(best, nearest_channel(&bank, 3, 0.0));
}
