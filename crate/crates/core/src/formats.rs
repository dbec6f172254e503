//! On-disk formats: the `LACT` tensor file, the `LACK` checkpoint archive,
//! JSON sidecars for images and sinograms, and windowed 16-bit PNG export.
//! All multi-byte fields are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Param, ParamStore, Real, Tensor};
use crate::tomo::{Geometry, Image, Sinogram};

pub const TENSOR_MAGIC: &[u8; 4] = b"LACT";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LACK";
pub const TENSOR_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => format_err(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u8(r: &mut impl Read, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, what)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(format_err("trailing bytes after the end of the file")),
    }
}

/// Element payload of a tensor file.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => DTYPE_F32,
            TensorData::F64(_) => DTYPE_F64,
        }
    }

    /// Values converted to `T` (exact when `T` is the stored type or wider).
    pub fn to_vec<T: Real>(&self) -> Vec<T> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
        }
    }

    pub fn from_slice<T: Real>(v: &[T]) -> Self {
        match T::DTYPE {
            DTYPE_F32 => TensorData::F32(v.iter().map(|x| x.as_f64() as f32).collect()),
            _ => TensorData::F64(v.iter().map(|x| x.as_f64()).collect()),
        }
    }
}

/// An n-dimensional array file.
///
/// Layout: magic `LACT`, `u16` version, `u8` dtype (1 = f32, 2 = f64),
/// `u8` ndim, `ndim` x `u32` dims, then the row-major payload.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(format_err(format!("{} dimensions exceed the format limit", dims.len())));
        }
        if let Some(d) = dims.iter().find(|&&d| d > u32::MAX as usize) {
            return Err(format_err(format!("dimension {d} exceeds u32")));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(format_err(format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(TensorFile { dims, data })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        TensorFile { dims: t.shape().to_vec(), data: TensorData::from_slice(t.data()) }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let shape: [usize; 4] =
            self.dims.as_slice().try_into().map_err(|_| format_err(format!("expected a rank-4 tensor, found dims {:?}", self.dims)))?;
        Tensor::from_vec(shape, self.data.to_vec())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&TENSOR_VERSION.to_le_bytes())?;
        w.write_all(&[self.data.dtype(), self.dims.len() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match &self.data {
            TensorData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            TensorData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "tensor magic")?;
        if &magic != TENSOR_MAGIC {
            return Err(format_err(format!("bad tensor magic {magic:?}")));
        }
        let version = read_u16(r, "tensor version")?;
        if version != TENSOR_VERSION {
            return Err(format_err(format!("unsupported tensor version {version} (expected {TENSOR_VERSION})")));
        }
        let dtype = read_u8(r, "dtype")?;
        let ndim = read_u8(r, "ndim")? as usize;
        let dims = (0..ndim).map(|_| read_u32(r, "dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| format_err("dims overflow"))?;
        let data = match dtype {
            DTYPE_F32 => {
                let mut buf = vec![0u8; len.checked_mul(4).ok_or_else(|| format_err("payload overflow"))?];
                read_exact(r, &mut buf, "payload")?;
                TensorData::F32(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DTYPE_F64 => {
                let mut buf = vec![0u8; len.checked_mul(8).ok_or_else(|| format_err("payload overflow"))?];
                read_exact(r, &mut buf, "payload")?;
                TensorData::F64(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            other => return Err(format_err(format!("unknown dtype code {other}"))),
        };
        Ok(TensorFile { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let t = Self::read_from(&mut bytes)?;
        expect_eof(&mut bytes)?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let t = Self::read_from(&mut r)?;
        expect_eof(&mut r)?;
        Ok(t)
    }
}

/// Named-tensor archive with a JSON metadata trailer.
///
/// Layout: magic `LACK`, `u32` entry count, per entry a `u16` name length,
/// the UTF-8 name and an embedded tensor file; then a `u32` length and the
/// JSON metadata bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointFile {
    pub entries: Vec<(String, TensorFile)>,
    pub metadata: serde_json::Value,
}

pub const PARAM_PREFIX: &str = "param.";
pub const MOMENTUM_PREFIX: &str = "momentum.";
pub const RUNNING_PREFIX: &str = "running.";

impl CheckpointFile {
    pub fn get(&self, name: &str) -> Option<&TensorFile> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn check_names(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, _) in &self.entries {
            if name.len() > u16::MAX as usize {
                return Err(format_err("entry name too long"));
            }
            if !seen.insert(name.as_str()) {
                return Err(format_err(format!("duplicate entry name {name}")));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        self.check_names()?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            t.write_to(w)?;
        }
        let meta = serde_json::to_vec(&self.metadata)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "checkpoint magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(format_err(format!("bad checkpoint magic {magic:?}")));
        }
        let count = read_u32(r, "entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = read_u16(r, "entry name length")? as usize;
            let mut name = vec![0u8; len];
            read_exact(r, &mut name, "entry name")?;
            let name = String::from_utf8(name).map_err(|_| format_err("entry name is not UTF-8"))?;
            entries.push((name, TensorFile::read_from(r)?));
        }
        let len = read_u32(r, "metadata length")? as usize;
        let mut meta = vec![0u8; len];
        read_exact(r, &mut meta, "metadata")?;
        let file = CheckpointFile { entries, metadata: serde_json::from_slice(&meta)? };
        file.check_names()?;
        Ok(file)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let c = Self::read_from(&mut bytes)?;
        expect_eof(&mut bytes)?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let c = Self::read_from(&mut r)?;
        expect_eof(&mut r)?;
        Ok(c)
    }

    /// Pack parameters, optional momentum buffers and running statistics.
    pub fn from_params<T: Real>(
        params: &ParamStore<T>,
        velocity: Option<&std::collections::BTreeMap<String, Param<T>>>,
        metadata: serde_json::Value,
    ) -> Self {
        let pack = |prefix: &str, set: &std::collections::BTreeMap<String, Param<T>>| {
            set.iter()
                .map(|(k, p)| (format!("{prefix}{k}"), TensorFile { dims: p.shape.clone(), data: TensorData::from_slice(&p.data) }))
                .collect::<Vec<_>>()
        };
        let mut entries = pack(PARAM_PREFIX, &params.params);
        if let Some(v) = velocity {
            entries.extend(pack(MOMENTUM_PREFIX, v));
        }
        entries.extend(pack(RUNNING_PREFIX, &params.running));
        CheckpointFile { entries, metadata }
    }

    fn unpack<T: Real>(&self, prefix: &str) -> std::collections::BTreeMap<String, Param<T>> {
        self.entries
            .iter()
            .filter_map(|(k, t)| {
                k.strip_prefix(prefix).map(|name| (name.to_string(), Param { shape: t.dims.clone(), data: t.data.to_vec() }))
            })
            .collect()
    }

    pub fn params<T: Real>(&self) -> ParamStore<T> {
        ParamStore { params: self.unpack(PARAM_PREFIX), running: self.unpack(RUNNING_PREFIX) }
    }

    /// Momentum buffers, if the archive carries them.
    pub fn velocity<T: Real>(&self) -> Option<std::collections::BTreeMap<String, Param<T>>> {
        let v = self.unpack(MOMENTUM_PREFIX);
        (!v.is_empty()).then_some(v)
    }
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub kind: String,
    pub n: usize,
    pub pixel_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinogramMeta {
    pub kind: String,
    pub geometry: Geometry,
    pub angles_deg: Vec<f64>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format_err(format!("cannot read sidecar {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Image as an `n x n` f64 tensor file plus a JSON sidecar.
pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    TensorFile::new(vec![img.n(), img.n()], TensorData::F64(img.data().to_vec()))?.save(path)?;
    write_json(&sidecar_path(path), &ImageMeta { kind: "image".into(), n: img.n(), pixel_size: img.pixel_size() })
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let meta: ImageMeta = read_json(&sidecar_path(path))?;
    let t = TensorFile::load(path)?;
    if meta.kind != "image" || t.dims != [meta.n, meta.n] {
        return Err(format_err(format!("{} is not an image matching its sidecar", path.display())));
    }
    Image::new(meta.n, meta.pixel_size, t.data.to_vec())
}

/// Sinogram as an `n_angles x n_det` f64 tensor file plus a JSON sidecar.
pub fn save_sinogram(path: impl AsRef<Path>, sino: &Sinogram) -> Result<()> {
    let path = path.as_ref();
    let g = &sino.geometry;
    TensorFile::new(vec![g.n_angles, g.n_det], TensorData::F64(sino.data.clone()))?.save(path)?;
    let meta = SinogramMeta { kind: "sinogram".into(), geometry: g.clone(), angles_deg: sino.angles_deg.clone() };
    write_json(&sidecar_path(path), &meta)
}

pub fn load_sinogram(path: impl AsRef<Path>) -> Result<Sinogram> {
    let path = path.as_ref();
    let meta: SinogramMeta = read_json(&sidecar_path(path))?;
    let t = TensorFile::load(path)?;
    if meta.kind != "sinogram" || t.dims != [meta.geometry.n_angles, meta.geometry.n_det] {
        return Err(format_err(format!("{} is not a sinogram matching its sidecar", path.display())));
    }
    Sinogram::new(meta.geometry, meta.angles_deg, t.data.to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PngWindow {
    pub min: f64,
    pub max: f64,
}

/// Write a 16-bit grayscale PNG mapping `[min, max]` to `[0, 65535]`
/// (defaults to the image range). The window goes to `<path>.json`.
pub fn export_png(path: impl AsRef<Path>, img: &Image, window: Option<(f64, f64)>) -> Result<()> {
    let path = path.as_ref();
    let (lo, hi) = window.unwrap_or((img.min(), img.max()));
    if !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(crate::error::invalid(format!("bad PNG window [{lo}, {hi}]")));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u16> = img.data().iter().map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let n = img.n() as u32;
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(n, n, pixels).expect("n*n pixels");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Png(e.to_string()))?;
    write_json(&sidecar_path(path), &PngWindow { min: lo, max: hi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorFile {
        let data: Vec<f32> = (0..24).map(|i| (i as f32 * 0.37).sin() * 1e3).collect();
        TensorFile::new(vec![2, 3, 4], TensorData::F32(data)).unwrap()
    }

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let t = sample();
        assert_eq!(TensorFile::from_bytes(&t.to_bytes()).unwrap(), t);
        let d = TensorFile::new(vec![3], TensorData::F64(vec![f64::MIN_POSITIVE, -0.0, 1.0 / 3.0])).unwrap();
        let back = TensorFile::from_bytes(&d.to_bytes()).unwrap();
        assert_eq!(back.data.dtype(), DTYPE_F64);
        match (&back.data, &d.data) {
            (TensorData::F64(a), TensorData::F64(b)) => {
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"LACT");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!((b[6], b[7]), (DTYPE_F32, 3));
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(b.len(), 8 + 3 * 4 + 24 * 4);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let good = sample().to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(TensorFile::from_bytes(&bad), Err(Error::Format(_))));
        let mut ver = good.clone();
        ver[4] = 9;
        assert!(TensorFile::from_bytes(&ver).unwrap_err().to_string().contains("version"));
        assert!(TensorFile::from_bytes(&good[..good.len() - 1]).unwrap_err().to_string().contains("truncated"));
        let mut dtype = good.clone();
        dtype[6] = 7;
        assert!(TensorFile::from_bytes(&dtype).is_err());
        let mut extra = good;
        extra.push(0);
        assert!(TensorFile::from_bytes(&extra).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = CheckpointFile {
            entries: vec![("param.a".into(), sample()), ("running.b".into(), sample())],
            metadata: serde_json::json!({"epoch": 3, "seed": 7}),
        };
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LACK");
        assert_eq!(CheckpointFile::from_bytes(&bytes).unwrap(), c);
        assert!(CheckpointFile::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let dup = CheckpointFile { entries: vec![("x".into(), sample()), ("x".into(), sample())], metadata: c.metadata };
        assert!(dup.to_bytes().is_err());
    }

    #[test]
    fn image_and_sinogram_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = crate::tomo::shepp_logan(16).unwrap();
        let p = dir.path().join("img.lact");
        save_image(&p, &img).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
        let geom = Geometry::for_grid(16, img.pixel_size(), 12, 0.0, 180.0).unwrap();
        let sino = crate::tomo::forward_project(&img, &geom).unwrap();
        let s = dir.path().join("sino.lact");
        save_sinogram(&s, &sino).unwrap();
        assert_eq!(load_sinogram(&s).unwrap(), sino);
        assert!(load_image(&s).is_err());
        let png = dir.path().join("img.png");
        export_png(&png, &img, None).unwrap();
        let w: PngWindow = read_json(&sidecar_path(&png)).unwrap();
        assert_eq!((w.min, w.max), (img.min(), img.max()));
        let decoded = image::open(&png).unwrap().into_luma16();
        assert_eq!(decoded.dimensions(), (16, 16));
        assert_eq!(decoded.iter().copied().max(), Some(65535));
    }
}
