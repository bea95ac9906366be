//! MetaImage-style header + raw pair.
//!
//! The header is `Key = Value` text; the raw file holds little-endian voxels, x-fastest.
//! Unknown keys are ignored.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::Volume;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    /// 32-bit float.
    Float,
    /// 16-bit signed integer; values are rounded and saturated on write.
    Short,
}

impl ElementType {
    fn tag(self) -> &'static str {
        match self {
            ElementType::Float => "MET_FLOAT",
            ElementType::Short => "MET_SHORT",
        }
    }

    fn size(self) -> usize {
        match self {
            ElementType::Float => 4,
            ElementType::Short => 2,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "MET_FLOAT" => Ok(ElementType::Float),
            "MET_SHORT" => Ok(ElementType::Short),
            other => Err(Error::UnsupportedElementType(other.to_string())),
        }
    }
}

fn parse_triple<T: Real>(key: &str, value: &str) -> Result<[T; 3]> {
    let bad = || Error::MalformedHeader {
        key: key.to_string(),
        value: value.to_string(),
    };
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|p| p.parse::<T>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    parts.try_into().map_err(|_| bad())
}

/// Writes `<path>` (header) and a raw file next to it with the extension replaced by `.raw`.
pub fn write_volume<T: Real>(vol: &Volume<T>, path: &Path, element: ElementType) -> Result<()> {
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid("path", format!("{} has no file name", path.display())))?
        .to_string();
    let [nx, ny, nz] = vol.dims();
    let [sx, sy, sz] = vol.spacing();
    let [ox, oy, oz] = vol.origin();
    let header = format!(
        "ObjectType = Image\nNDims = 3\nDimSize = {nx} {ny} {nz}\nElementSpacing = {sx} {sy} {sz}\n\
         Offset = {ox} {oy} {oz}\nElementType = {}\nElementDataFile = {raw_name}\n",
        element.tag()
    );
    let mut bytes = Vec::with_capacity(vol.len() * element.size());
    match element {
        ElementType::Float => {
            for v in vol.voxels() {
                bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        ElementType::Short => {
            for v in vol.voxels() {
                let r = v.as_f64().round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                bytes.extend_from_slice(&r.to_le_bytes());
            }
        }
    }
    fs::write(path, header).map_err(Error::at_path(path))?;
    fs::write(&raw_path, bytes).map_err(Error::at_path(&raw_path))?;
    Ok(())
}

pub fn read_volume<T: Real>(path: &Path) -> Result<Volume<T>> {
    let text = fs::read_to_string(path).map_err(Error::at_path(path))?;
    let mut keys = HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            keys.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &'static str| keys.get(k).map(String::as_str).ok_or(Error::MissingKey(k));

    if let Some(obj) = keys.get("ObjectType") {
        if obj != "Image" {
            return Err(Error::MalformedHeader {
                key: "ObjectType".into(),
                value: obj.clone(),
            });
        }
    }
    let ndims = get("NDims")?;
    if ndims != "3" {
        return Err(Error::MalformedHeader {
            key: "NDims".into(),
            value: ndims.into(),
        });
    }
    let dim_str = get("DimSize")?;
    let dims: Vec<usize> = dim_str
        .split_whitespace()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .ok()
        .filter(|d: &Vec<usize>| d.len() == 3)
        .ok_or_else(|| Error::MalformedHeader {
            key: "DimSize".into(),
            value: dim_str.into(),
        })?;
    let dims = [dims[0], dims[1], dims[2]];
    let spacing = match keys.get("ElementSpacing") {
        Some(v) => parse_triple::<T>("ElementSpacing", v)?,
        None => [T::one(); 3],
    };
    let origin = match keys.get("Offset") {
        Some(v) => parse_triple::<T>("Offset", v)?,
        None => [T::zero(); 3],
    };
    let element = ElementType::parse(get("ElementType")?)?;
    let data_file = get("ElementDataFile")?;
    let raw_path = path.parent().unwrap_or(Path::new(".")).join(data_file);
    let bytes = fs::read(&raw_path).map_err(Error::at_path(&raw_path))?;

    let count = dims[0] * dims[1] * dims[2];
    let expected = count * element.size();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let voxels: Vec<T> = match element {
        ElementType::Float => bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect(),
        ElementType::Short => bytes
            .chunks_exact(2)
            .map(|c| T::lit(i16::from_le_bytes([c[0], c[1]]) as f64))
            .collect(),
    };
    Volume::new(dims, spacing, origin, voxels)
}
