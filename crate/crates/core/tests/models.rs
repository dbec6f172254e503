use std::collections::BTreeSet;

use lact_core::dwt::{build_filter_bank, decompose};
use lact_core::formats::CheckpointFile;
use lact_core::metrics::psnr;
use lact_core::models::*;
use lact_core::nn::ParamStore;
use lact_core::tomo::random_phantom;

fn pairs(count: usize, n: usize, seed: u64) -> Vec<Pair> {
    (0..count)
        .map(|i| {
            let sim = simulate(&random_phantom(n, phantom_seed(seed, i), 6).unwrap(), 90, 120.0).unwrap();
            Pair { id: format!("{i:04}"), limited: sim.limited, full: sim.full }
        })
        .collect()
}

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 2, patch_size: 16, ..TrainConfig::default() }
}

#[test]
fn overfits_a_single_image() {
    let data = pairs(1, 32, 1);
    let arch = ArchSpec::new(ArchKind::ImageUnet, 1, 8);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        patch_size: 32,
        lr_start: 1e-2,
        lr_end: 1e-2,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let report = train_pairs_with(&arch, &cfg, &data, &[], |_| {}).unwrap();
    let first = report.log[0].train_loss;
    let last = report.log.last().unwrap().train_loss;
    assert!(last * 10.0 <= first, "{first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let data = pairs(4, 32, 2);
    let arch = ArchSpec::new(ArchKind::WaveletUnet, 1, 2);
    let run = || {
        let r = train_pairs_with(&arch, &tiny_cfg(2), &data[..3], &data[3..], |_| {}).unwrap();
        r.checkpoint.to_bytes().unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn lr_schedule_endpoints_and_monotone() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 1e-3);
    assert!((cfg.lr_at(cfg.epochs - 1) - 1e-5).abs() < 1e-15);
    for e in 1..cfg.epochs {
        assert!(cfg.lr_at(e) <= cfg.lr_at(e - 1));
    }
}

fn zero_model(kind: ArchKind) -> Model {
    let arch = ArchSpec::new(kind, 2, 2);
    let net = build_arch(&arch).unwrap();
    let mut model = Model::new(arch, ParamStore::init(&net, 3)).unwrap();
    zero_output_layer(&mut model);
    model
}

#[test]
fn zero_output_network_is_identity() {
    let p = &pairs(1, 32, 3)[0];
    let out = infer_image(&zero_model(ArchKind::ImageUnet), &p.limited).unwrap();
    assert_eq!(out.data(), p.limited.data());
    let bank = build_filter_bank(32, WAVELET_LEVELS).unwrap();
    let out = infer_wavelet(&zero_model(ArchKind::WaveletUnet), &p.limited, &bank).unwrap();
    let peak = p.limited.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in out.data().iter().zip(p.limited.data()) {
        assert!((a - b).abs() <= 1e-8 * peak);
    }
}

#[test]
fn true_residual_recovers_ground_truth() {
    let p = &pairs(1, 32, 4)[0];
    let residual = p.limited.sub(&p.full).unwrap();
    let img = apply_image_residual(&p.limited, residual.data()).unwrap();
    for (a, b) in img.data().iter().zip(p.full.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let bank = build_filter_bank(32, WAVELET_LEVELS).unwrap();
    let z: Vec<f64> = decompose(&residual, &bank).unwrap().channels.concat();
    let img = apply_wavelet_residual(&decompose(&p.limited, &bank).unwrap(), &z, &bank).unwrap();
    let peak = p.full.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in img.data().iter().zip(p.full.data()) {
        assert!((a - b).abs() <= 1e-8 * peak);
    }
}

#[test]
fn inference_rejects_mismatched_architecture() {
    let p = &pairs(1, 32, 5)[0];
    let bank = build_filter_bank(32, WAVELET_LEVELS).unwrap();
    assert!(infer_image(&zero_model(ArchKind::WaveletUnet), &p.limited).is_err());
    assert!(infer_wavelet(&zero_model(ArchKind::ImagePlain), &p.limited, &bank).is_err());
}

#[test]
fn architectures_keep_shapes() {
    let w = ArchSpec::new(ArchKind::WaveletUnet, 3, 16);
    let net = build_arch(&w).unwrap();
    assert_eq!((net.in_channels(), net.out_channels()), (15, 15));
    assert_eq!(net.pool_depth(), 3);
    let plain = build_arch(&ArchSpec::new(ArchKind::ImagePlain, 3, 16)).unwrap();
    assert_eq!(plain.pool_depth(), 0);
    assert!(w.check_patch(60).is_err());
    assert!(w.check_patch(64).is_ok());
}

#[test]
fn dataset_is_deterministic_with_disjoint_splits() {
    let cfg = DatasetConfig { n_images: 6, n: 32, n_val: 2, n_views: 60, ..DatasetConfig::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = make_dataset(&cfg, a.path()).unwrap();
    make_dataset(&cfg, b.path()).unwrap();
    for e in &ma.entries {
        for f in [&e.full, &e.limited, &e.limited_sinogram] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }
    let train: BTreeSet<_> = ma.split(Split::Train).map(|e| e.id.clone()).collect();
    let val: BTreeSet<_> = ma.split(Split::Val).map(|e| e.id.clone()).collect();
    assert_eq!((train.len(), val.len()), (4, 2));
    assert!(train.is_disjoint(&val));
    let loaded = DatasetManifest::load(a.path()).unwrap();
    let p = loaded.load_pair(&loaded.entries[0]).unwrap();
    assert!(psnr(&p.limited, &p.full).unwrap().is_finite());
}

#[test]
fn patches_are_seeded_windows() {
    let p = &pairs(1, 32, 6)[0];
    let s = prepare_sample(p, None).unwrap();
    let (x, y) = sample_patches(&s, 16, 4, 9).unwrap();
    assert_eq!(x.shape(), [4, 1, 16, 16]);
    assert_eq!(sample_patches(&s, 16, 4, 9).unwrap().1.data(), y.data());
    let (whole_x, whole_y) = sample_patches(&s, 32, 1, 0).unwrap();
    assert_eq!(whole_x.data(), &s.input[..]);
    assert_eq!(whole_y.data(), &s.target[..]);
    assert!(sample_patches(&s, 33, 1, 0).is_err());
}

#[test]
fn method_lists_and_metrics_table() {
    assert_eq!(Method::parse_list("fbp, tv,proposed").unwrap(), vec![Method::Fbp, Method::Tv, Method::Proposed]);
    assert_eq!("wavelet_unet".parse::<Method>().unwrap(), Method::Proposed);
    assert!(Method::parse_list("fbp,fbp").is_err());
    assert!(Method::parse_list("").is_err());
    assert!("cnn".parse::<Method>().is_err());

    let data = pairs(3, 32, 7);
    let models = ModelSet { plain: None, unet: None, proposed: None, tv: Default::default() };
    let table = evaluate_pairs(&data, None, &[Method::Fbp], &models).unwrap();
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 1 + 3 + 1);
    assert_eq!(csv.lines().next().unwrap(), "slice,fbp_psnr,fbp_nrmse,fbp_ssim");
    assert!(evaluate_pairs(&data, None, &[Method::Unet], &models).is_err());
}

#[test]
fn checkpoint_round_trip_restores_the_model() {
    let data = pairs(3, 32, 8);
    let arch = ArchSpec::new(ArchKind::ImagePlain, 1, 2);
    let report = train_pairs_with(&arch, &tiny_cfg(1), &data[..2], &data[2..], |_| {}).unwrap();
    let bytes = report.checkpoint.to_bytes().unwrap();
    let model = Model::from_checkpoint(&CheckpointFile::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(model.kind(), ArchKind::ImagePlain);
    let a = model.restore(&data[2].limited, None).unwrap();
    let b = Model::from_checkpoint(&report.checkpoint).unwrap().restore(&data[2].limited, None).unwrap();
    assert_eq!(a.data(), b.data());
}
