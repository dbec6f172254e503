use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use serde_json::json;

use lact_core::formats::{export_png, load_image, load_sinogram, save_image, save_sinogram, CheckpointFile, TensorData, TensorFile};
use lact_core::models::{
    evaluate, log_csv, make_dataset, train_with, ArchKind, ArchSpec, DatasetConfig, DatasetManifest, Method, Model, ModelSet, Split,
    TrainConfig,
};
use lact_core::spectrum::{angular_profile, artifact_spectrum, wedge_energy_ratio, wedge_mask};
use lact_core::tomo::{
    detector_bins, fbp, forward_project, pocs_tv, random_phantom, restrict_angles, shepp_logan, total_variation, TvParams, Window,
};
use lact_core::{Geometry, Image, Sinogram};

use crate::config::{Config, ConfigError};
use crate::{Cli, Command};

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PhantomOptions {
    kind: String,
    n: usize,
    ellipses: usize,
}

impl Default for PhantomOptions {
    fn default() -> Self {
        PhantomOptions { kind: "random".into(), n: 128, ellipses: 10 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProjectOptions {
    /// Views per 180 degrees.
    views: usize,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        ProjectOptions { views: 360 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FbpOptions {
    window: Window,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ArchOptions {
    kind: ArchKind,
    depth: usize,
    base_channels: usize,
}

impl Default for ArchOptions {
    fn default() -> Self {
        ArchOptions { kind: ArchKind::WaveletUnet, depth: 3, base_channels: 16 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalOptions {
    methods: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SpectrumOptions {
    bins: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions { bins: 36 }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn parse_flag<T: std::str::FromStr>(flag: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| usage(format!("--{flag}: {e}")))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => cfg.top::<usize>("threads")?,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("cannot configure the thread pool")?;
    }
    match cli.command {
        Command::Phantom(a) => phantom(cfg, a),
        Command::Project(a) => project(cfg, a),
        Command::Fbp(a) => fbp_cmd(cfg, a),
        Command::Tv(a) => tv(cfg, a),
        Command::Dataset(a) => dataset(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Infer(a) => infer(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Spectrum(a) => spectrum(cfg, a),
    }
}

fn ensure_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("missing input file {}", path.display());
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

fn write_image(img: &Image, out: &Path, png: Option<&Path>) -> Result<()> {
    ensure_parent(out)?;
    save_image(out, img).with_context(|| format!("cannot write {}", out.display()))?;
    if let Some(p) = png {
        ensure_parent(p)?;
        export_png(p, img, None).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn read_image(path: &Path) -> Result<Image> {
    ensure_exists(path)?;
    load_image(path).with_context(|| format!("cannot read image {}", path.display()))
}

fn read_sinogram(path: &Path) -> Result<Sinogram> {
    ensure_exists(path)?;
    load_sinogram(path).with_context(|| format!("cannot read sinogram {}", path.display()))
}

/// Grid whose default detector matches the sinogram. Up to two sides share
/// a bin count; the even one wins.
fn grid_for(sino: &Sinogram) -> Result<usize> {
    let n_det = sino.geometry.n_det;
    let sides: Vec<usize> = (8..=n_det).filter(|&n| detector_bins(n) == n_det).collect();
    sides
        .iter()
        .find(|&&n| n % 2 == 0)
        .or(sides.first())
        .copied()
        .ok_or_else(|| usage(format!("cannot infer a grid for {n_det} detector bins; pass --grid")))
}

fn select_arc(sino: Sinogram, arc: Option<f64>) -> Result<Sinogram> {
    match arc {
        Some(a) => {
            let lo = sino.geometry.angle_start_deg;
            Ok(restrict_angles(&sino, lo, lo + a)?)
        }
        None => Ok(sino),
    }
}

fn phantom(mut cfg: Config, a: crate::PhantomArgs) -> Result<()> {
    cfg.set("phantom.kind", a.kind.clone());
    cfg.set_opt("phantom.n", a.grid.or(cfg.top("grid")?));
    cfg.set_opt("phantom.ellipses", a.ellipses);
    let opts: PhantomOptions = cfg.section("phantom")?;
    let seed = a.seed.or(cfg.top("seed")?).unwrap_or(0);
    let img = match opts.kind.as_str() {
        "random" => random_phantom(opts.n, seed, opts.ellipses)?,
        "shepp-logan" | "shepp_logan" => shepp_logan(opts.n)?,
        other => return Err(usage(format!("unknown phantom kind '{other}' (expected random or shepp-logan)"))),
    };
    write_image(&img, &a.out, a.png.as_deref())
}

fn project(mut cfg: Config, a: crate::ProjectArgs) -> Result<()> {
    cfg.set_opt("project.views", a.views);
    let opts: ProjectOptions = cfg.section("project")?;
    let arc = a.arc.or(cfg.top("arc")?).unwrap_or(180.0);
    let img = read_image(&a.input)?;
    let n_angles = ((opts.views as f64) * arc / 180.0).round() as usize;
    let geom = Geometry::for_grid(img.n(), img.pixel_size(), n_angles, 0.0, arc)?;
    let sino = forward_project(&img, &geom)?;
    ensure_parent(&a.out)?;
    save_sinogram(&a.out, &sino).with_context(|| format!("cannot write {}", a.out.display()))
}

fn fbp_cmd(mut cfg: Config, a: crate::FbpArgs) -> Result<()> {
    if let Some(w) = &a.window {
        cfg.set("fbp.window", w.to_ascii_lowercase().replace('-', ""));
    }
    let opts: FbpOptions = cfg.section("fbp")?;
    let sino = select_arc(read_sinogram(&a.input)?, a.arc.or(cfg.top("arc")?))?;
    let n = match a.grid.or(cfg.top("grid")?) {
        Some(n) => n,
        None => grid_for(&sino)?,
    };
    let img = fbp(&sino, n, opts.window)?;
    write_image(&img, &a.out, a.png.as_deref())
}

fn tv(mut cfg: Config, a: crate::TvArgs) -> Result<()> {
    cfg.set_opt("tv.n_iters", a.iters);
    let params: TvParams = cfg.section("tv")?;
    let sino = select_arc(read_sinogram(&a.input)?, a.arc.or(cfg.top("arc")?))?;
    let n = match a.grid.or(cfg.top("grid")?) {
        Some(n) => n,
        None => grid_for(&sino)?,
    };
    let res = pocs_tv(&sino, n, &params)?;
    eprintln!("tv {:.6} residual {:.6}", total_variation(&res.image), res.residuals.last().copied().unwrap_or(f64::NAN));
    write_image(&res.image, &a.out, a.png.as_deref())
}

fn dataset(mut cfg: Config, a: crate::DatasetArgs) -> Result<()> {
    cfg.set_opt("dataset.n_images", a.n_images);
    cfg.set_opt("dataset.n_val", a.val);
    cfg.set_opt("dataset.n", a.grid.or(cfg.top("grid")?));
    cfg.set_opt("dataset.arc_deg", a.arc.or(cfg.top("arc")?));
    cfg.set_opt("dataset.seed", a.seed.or(cfg.top("seed")?));
    cfg.set_opt("dataset.n_views", a.views);
    let dc: DatasetConfig = cfg.section("dataset")?;
    dc.validate().map_err(|e| usage(e.to_string()))?;
    let t = Instant::now();
    let m = make_dataset(&dc, &a.out)?;
    eprintln!("{} pairs written to {} in {:.1?}", m.entries.len(), a.out.display(), t.elapsed());
    Ok(())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    ensure_exists(path)?;
    DatasetManifest::load(path).with_context(|| format!("cannot read dataset {}", path.display()))
}

fn train(mut cfg: Config, a: crate::TrainArgs) -> Result<()> {
    if let Some(k) = &a.arch {
        cfg.set("arch.kind", parse_flag::<ArchKind>("arch", k)?.name());
    }
    cfg.set_opt("train.epochs", a.epochs);
    cfg.set_opt("train.seed", a.seed.or(cfg.top("seed")?));
    let manifest = load_manifest(&a.data)?;
    cfg.set("train.arc_deg", manifest.config.arc_deg);
    let ao: ArchOptions = cfg.section("arch")?;
    let tc: TrainConfig = cfg.section("train")?;
    let arch = ArchSpec::new(ao.kind, ao.depth, ao.base_channels);
    arch.validate().map_err(|e| usage(e.to_string()))?;
    tc.validate(&arch).map_err(|e| usage(e.to_string()))?;

    let t = Instant::now();
    let report = train_with(&arch, &tc, &manifest, |e| {
        let v = e.val_psnr.map(|p| format!("{p:.3} dB")).unwrap_or_else(|| "-".into());
        eprintln!("epoch {:>3} lr {:.2e} loss {:.6} val {v} ({:.0?})", e.epoch, e.lr, e.train_loss, t.elapsed());
    })?;
    ensure_parent(&a.out)?;
    report.checkpoint.save(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    ensure_parent(&log_path)?;
    std::fs::write(&log_path, log_csv(&report.log)).with_context(|| format!("cannot write {}", log_path.display()))?;
    eprintln!("best epoch {} saved to {}", report.best_epoch, a.out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    ensure_exists(path)?;
    let ckpt = CheckpointFile::load(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    Model::from_checkpoint(&ckpt).with_context(|| format!("invalid checkpoint {}", path.display()))
}

fn infer(_cfg: Config, a: crate::InferArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let limited = read_image(&a.input)?;
    let restored = model.restore(&limited, None)?;
    write_image(&restored, &a.out, a.png.as_deref())
}

fn eval(mut cfg: Config, a: crate::EvalArgs) -> Result<()> {
    cfg.set("eval.methods", a.methods.clone());
    let opts: EvalOptions = cfg.section("eval")?;
    let methods = Method::parse_list(opts.methods.as_deref().unwrap_or("fbp")).map_err(|e| usage(e.to_string()))?;
    let split = match a.split.as_str() {
        "val" => Split::Val,
        "train" => Split::Train,
        other => return Err(usage(format!("unknown split '{other}' (expected val or train)"))),
    };
    let need = |m: Method, path: &Option<PathBuf>, flag: &str| -> Result<Option<Model>> {
        match (methods.contains(&m), path) {
            (true, Some(p)) => Ok(Some(load_model(p)?)),
            (true, None) => Err(usage(format!("method {} needs --{flag} <checkpoint>", m.name()))),
            (false, _) => Ok(None),
        }
    };
    let models = ModelSet {
        plain: need(Method::Plain, &a.plain, "plain")?,
        unet: need(Method::Unet, &a.unet, "unet")?,
        proposed: need(Method::Proposed, &a.proposed, "proposed")?,
        tv: cfg.section("tv")?,
    };
    let manifest = load_manifest(&a.data)?;
    let table = evaluate(&manifest, split, &methods, &models)?;
    let csv = table.to_csv();
    match &a.out {
        Some(p) => {
            ensure_parent(p)?;
            std::fs::write(p, &csv).with_context(|| format!("cannot write {}", p.display()))?;
        }
        None => print!("{csv}"),
    }
    for row in table.means() {
        eprintln!("{:<9} psnr {:.3} nrmse {:.4} ssim {:.4}", row.method, row.psnr_db, row.nrmse, row.ssim);
    }
    Ok(())
}

fn spectrum(mut cfg: Config, a: crate::SpectrumArgs) -> Result<()> {
    cfg.set("spectrum.bins", a.bins);
    let opts: SpectrumOptions = cfg.section("spectrum")?;
    if opts.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let arc = a.arc.or(cfg.top("arc")?).unwrap_or(120.0);
    let limited = read_image(&a.limited)?;
    let full = read_image(&a.full)?;
    let spec = artifact_spectrum(&limited, &full)?;
    let mask = wedge_mask(spec.n, 0.0, arc)?;
    let ratio = wedge_energy_ratio(&spec, &mask)?;
    let profile = angular_profile(&spec, opts.bins)?;
    let summary = json!({
        "arc_deg": arc,
        "wedge_energy_fraction": ratio,
        "wedge_area_fraction": mask.area_fraction(),
        "angular_profile": profile,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let log_img = Image::new(spec.n, 1.0, spec.log_magnitude.clone())?;
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        TensorFile::new(vec![spec.n, spec.n], TensorData::F64(spec.log_magnitude.clone()))?
            .save(out)
            .with_context(|| format!("cannot write {}", out.display()))?;
    }
    if let Some(p) = &a.png {
        ensure_parent(p)?;
        export_png(p, &log_img, None)?;
    }
    Ok(())
}
