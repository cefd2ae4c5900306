//! On-disk formats: the self-describing array container and PGM previews.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::image::{DynamicImage, Image};
use crate::kinetics::FrameSchedule;

pub const MAGIC: [u8; 8] = *b"PKARR\0\0\x01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    dims: Vec<usize>,
    dtype: String,
    order: String,
    #[serde(default)]
    meta: Value,
}

/// Row-major `f32` array with a JSON metadata object.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayFile {
    pub dims: Vec<usize>,
    pub meta: Value,
    pub data: Vec<f32>,
}

impl ArrayFile {
    pub fn new(dims: Vec<usize>, data: Vec<f32>, meta: Value) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Self { dims, meta, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64], meta: Value) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect(), meta)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header { dims: self.dims.clone(), dtype: "f32le".into(), order: "row-major".into(), meta: self.meta.clone() };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + 4 + json.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 12 || bytes[..8] != MAGIC {
            return Err(bad("not an array file (bad magic)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.dtype != "f32le" || header.order != "row-major" {
            return Err(Error::Format(format!("unsupported layout {}/{}", header.dtype, header.order)));
        }
        let n = header.dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("dims overflow"))?;
        let payload = &bytes[12 + hlen..];
        if payload.len() != n * 4 {
            return Err(Error::Format(format!("payload has {} bytes, dims {:?} need {}", payload.len(), header.dims, n * 4)));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { dims: header.dims, meta: header.meta, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_image(image: &Image, meta: Value) -> Result<Self> {
        Self::from_f64(vec![image.height, image.width], &image.data, meta)
    }

    pub fn to_image(&self) -> Result<Image> {
        match self.dims[..] {
            [h, w] => Image::from_vec(w, h, self.to_f64()),
            _ => Err(Error::Shape(format!("expected a 2-D array, got dims {:?}", self.dims))),
        }
    }

    /// `[T, H, W]` with the schedule recorded under `meta.schedule`.
    pub fn from_dynamic(image: &DynamicImage, mut meta: Value) -> Result<Self> {
        if !meta.is_object() {
            meta = Value::Object(Default::default());
        }
        meta["schedule"] = serde_json::to_value(image.schedule.frames())?;
        Self::from_f64(vec![image.n_frames(), image.height, image.width], image.data(), meta)
    }

    /// Reads a `[T, H, W]` array; the schedule comes from the metadata when
    /// present, otherwise from `fallback`.
    pub fn to_dynamic(&self, fallback: Option<&FrameSchedule>) -> Result<DynamicImage> {
        let [t, h, w] = self.dims[..] else {
            return Err(Error::Shape(format!("expected a 3-D [T, H, W] array, got dims {:?}", self.dims)));
        };
        let schedule = match self.meta.get("schedule") {
            Some(v) => FrameSchedule::new(serde_json::from_value(v.clone())?)?,
            None => fallback.cloned().ok_or_else(|| Error::Format("array has no frame schedule".into()))?,
        };
        if schedule.len() != t {
            return Err(Error::Shape(format!("{t} frames but the schedule lists {}", schedule.len())));
        }
        DynamicImage::from_vec(w, h, schedule, self.to_f64())
    }
}

/// Binary 16-bit PGM; `[lo, hi]` maps linearly onto `[0, 65535]`.
pub fn write_pgm(path: impl AsRef<Path>, image: &Image, lo: f64, hi: f64) -> Result<()> {
    let mut out = Vec::with_capacity(32 + 2 * image.len());
    write!(out, "P5\n{} {}\n65535\n", image.width, image.height)?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    for &v in &image.data {
        let q = if v.is_finite() { ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16 } else { 0 };
        out.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}
