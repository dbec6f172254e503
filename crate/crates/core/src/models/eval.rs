use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::ArchKind;
use super::data::{DatasetManifest, Pair, Split};
use super::infer::Model;
use crate::error::{invalid, Error, Result};
use crate::metrics::MetricsRow;
use crate::tomo::{pocs_tv, Sinogram, TvParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// The limited-arc FBP image itself.
    Fbp,
    Tv,
    Plain,
    Unet,
    Proposed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::Tv => "tv",
            Method::Plain => "plain",
            Method::Unet => "unet",
            Method::Proposed => "proposed",
        }
    }

    fn arch(self) -> Option<ArchKind> {
        match self {
            Method::Plain => Some(ArchKind::ImagePlain),
            Method::Unet => Some(ArchKind::ImageUnet),
            Method::Proposed => Some(ArchKind::WaveletUnet),
            _ => None,
        }
    }

    /// Parse a comma-separated list such as `fbp,tv,proposed`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let methods: Vec<Method> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect::<Result<_>>()?;
        if methods.is_empty() {
            return Err(invalid("empty method list"));
        }
        for (i, m) in methods.iter().enumerate() {
            if methods[..i].contains(m) {
                return Err(invalid(format!("method {m} listed twice")));
            }
        }
        Ok(methods)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fbp" => Ok(Method::Fbp),
            "tv" | "pocs_tv" => Ok(Method::Tv),
            "plain" | "image_plain" => Ok(Method::Plain),
            "unet" | "image_unet" => Ok(Method::Unet),
            "proposed" | "wavelet_unet" => Ok(Method::Proposed),
            other => Err(invalid(format!("unknown method {other:?} (fbp, tv, plain, unet, proposed)"))),
        }
    }
}

/// Trained networks and TV settings available to [`evaluate`].
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub plain: Option<Model>,
    pub unet: Option<Model>,
    pub proposed: Option<Model>,
    pub tv: TvParams,
}

impl ModelSet {
    fn model(&self, m: Method) -> Result<Option<&Model>> {
        let slot = match m {
            Method::Plain => &self.plain,
            Method::Unet => &self.unet,
            Method::Proposed => &self.proposed,
            _ => return Ok(None),
        };
        let model = slot.as_ref().ok_or_else(|| invalid(format!("method {m} needs a checkpoint")))?;
        let want = m.arch().expect("network method");
        if model.kind() != want {
            return Err(invalid(format!("method {m} expects a {want} checkpoint, got {}", model.kind())));
        }
        Ok(Some(model))
    }
}

/// Per-slice metrics in method order plus a mean row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub methods: Vec<Method>,
    pub rows: Vec<Vec<MetricsRow>>,
}

impl MetricsTable {
    pub fn means(&self) -> Vec<MetricsRow> {
        let k = self.rows.len().max(1) as f64;
        self.methods
            .iter()
            .enumerate()
            .map(|(j, m)| MetricsRow {
                slice_id: "mean".into(),
                method: m.name().into(),
                psnr_db: self.rows.iter().map(|r| r[j].psnr_db).sum::<f64>() / k,
                nrmse: self.rows.iter().map(|r| r[j].nrmse).sum::<f64>() / k,
                ssim: self.rows.iter().map(|r| r[j].ssim).sum::<f64>() / k,
            })
            .collect()
    }

    pub fn mean_of(&self, m: Method) -> Option<MetricsRow> {
        let j = self.methods.iter().position(|&x| x == m)?;
        Some(self.means().swap_remove(j))
    }

    /// `slice,{method}_psnr,{method}_nrmse,{method}_ssim,...`; the last row
    /// holds the means.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("slice");
        for m in &self.methods {
            s.push_str(&format!(",{m}_psnr,{m}_nrmse,{m}_ssim"));
        }
        s.push('\n');
        let fmt_row = |id: &str, row: &[MetricsRow]| {
            let mut line = id.to_string();
            for r in row {
                line.push_str(&format!(",{:.6},{:.6},{:.6}", r.psnr_db, r.nrmse, r.ssim));
            }
            line.push('\n');
            line
        };
        for row in &self.rows {
            s.push_str(&fmt_row(&row[0].slice_id, row));
        }
        s.push_str(&fmt_row("mean", &self.means()));
        s
    }
}

/// Evaluate every image of `split` against its full-arc reference.
pub fn evaluate(manifest: &DatasetManifest, split: Split, methods: &[Method], models: &ModelSet) -> Result<MetricsTable> {
    let pairs = manifest.load_pairs(split)?;
    let sinos = if methods.contains(&Method::Tv) {
        Some(manifest.split(split).map(|e| manifest.load_limited_sinogram(e)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    evaluate_pairs(&pairs, sinos.as_deref(), methods, models)
}

pub fn evaluate_pairs(pairs: &[Pair], sinograms: Option<&[Sinogram]>, methods: &[Method], models: &ModelSet) -> Result<MetricsTable> {
    if methods.is_empty() {
        return Err(invalid("no methods to evaluate"));
    }
    for &m in methods {
        models.model(m)?;
    }
    if methods.contains(&Method::Tv) && sinograms.map_or(true, |s| s.len() != pairs.len()) {
        return Err(invalid("TV evaluation needs one limited-arc sinogram per slice"));
    }
    let banks = methods
        .iter()
        .filter_map(|&m| models.model(m).ok().flatten())
        .filter(|m| m.kind().is_wavelet())
        .map(|m| m.bank(pairs.first().map_or(0, |p| p.limited.n())))
        .next()
        .transpose()?
        .flatten();
    let rows = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            methods
                .iter()
                .map(|&m| {
                    let out = match m {
                        Method::Fbp => p.limited.clone(),
                        Method::Tv => pocs_tv(&sinograms.expect("checked")[i], p.full.n(), &models.tv)?.image,
                        _ => models.model(m)?.expect("network method").restore(&p.limited, banks.as_ref())?,
                    };
                    MetricsRow::compute(&p.id, m.name(), &out, &p.full)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable { methods: methods.to_vec(), rows })
}
