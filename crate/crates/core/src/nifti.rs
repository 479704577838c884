//! Minimal NIfTI-1 reader/writer and a raw+JSON sidecar format.
//!
//! Supported subset: single-file `.nii`, little-endian, uncompressed, 3D,
//! datatypes uint8 / int16 / float32. Orientation matrices are not
//! interpreted; only `pixdim[1..3]` (spacing) and the `qoffset_*` fields
//! (origin) are honoured.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry, Volume};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// On-disk voxel type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Uint8,
    Int16,
    Float32,
}

impl Dtype {
    pub fn code(self) -> i16 {
        match self {
            Dtype::Uint8 => 2,
            Dtype::Int16 => 4,
            Dtype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Dtype::Uint8),
            4 => Ok(Dtype::Int16),
            16 => Ok(Dtype::Float32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Dtype::Uint8 => 1,
            Dtype::Int16 => 2,
            Dtype::Float32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::Uint8 => "uint8",
            Dtype::Int16 => "int16",
            Dtype::Float32 => "float32",
        }
    }

    fn range(self) -> (f64, f64) {
        match self {
            Dtype::Uint8 => (0.0, u8::MAX as f64),
            Dtype::Int16 => (i16::MIN as f64, i16::MAX as f64),
            Dtype::Float32 => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

fn check_not_gzip(bytes: &[u8]) -> Result<()> {
    if bytes.len() >= 2 && bytes[..2] == GZIP_MAGIC {
        return Err(Error::CompressedInput);
    }
    Ok(())
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

/// The header fields this crate reads.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub origin: [f32; 3],
    pub dtype: Dtype,
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    check_not_gzip(bytes)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than the {HEADER_SIZE}-byte header",
            bytes.len()
        )));
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(Error::MalformedHeader(
                "big-endian files are not supported".into(),
            ));
        }
        return Err(Error::MalformedHeader(format!(
            "sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}"
        )));
    }
    if &bytes[344..348] != MAGIC {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected \"n+1\\0\"",
            &bytes[344..348]
        )));
    }

    let ndim = i16_at(bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        if (a as i16) < ndim {
            let v = i16_at(bytes, 42 + 2 * a);
            if v < 1 {
                return Err(Error::MalformedHeader(format!("dim[{}] = {v}", a + 1)));
            }
            *d = v as usize;
        }
    }
    for a in 3..ndim as usize {
        let v = i16_at(bytes, 42 + 2 * a);
        if v > 1 {
            return Err(Error::MalformedHeader(format!(
                "only 3D volumes are supported, dim[{}] = {v}",
                a + 1
            )));
        }
    }

    let dtype = Dtype::from_code(i16_at(bytes, 70))?;
    let mut spacing = [0f32; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = f32_at(bytes, 80 + 4 * a);
        if !(s.is_finite() && *s > 0.0) {
            return Err(Error::MalformedHeader(format!(
                "pixdim[{}] = {s} is not a positive spacing",
                a + 1
            )));
        }
    }
    let vox_offset = f32_at(bytes, 108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let origin = [f32_at(bytes, 268), f32_at(bytes, 272), f32_at(bytes, 276)];
    if origin.iter().any(|o| !o.is_finite()) {
        return Err(Error::MalformedHeader(format!("qoffset = {origin:?}")));
    }
    Ok(Header {
        dims,
        spacing,
        origin,
        dtype,
        vox_offset: vox_offset as usize,
        scl_slope: f32_at(bytes, 112),
        scl_inter: f32_at(bytes, 116),
    })
}

fn build_header(geometry: &Geometry, dtype: Dtype) -> [u8; VOX_OFFSET] {
    let mut h = [0u8; VOX_OFFSET];
    let put_i16 =
        |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 =
        |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    put_i16(&mut h, 40, 3);
    for a in 0..3 {
        put_i16(&mut h, 42 + 2 * a, geometry.dims[a] as i16);
    }
    for a in 3..7 {
        put_i16(&mut h, 42 + 2 * a, 1);
    }
    put_i16(&mut h, 70, dtype.code());
    put_i16(&mut h, 72, (dtype.bytes() * 8) as i16);
    // pixdim[0] holds qfac
    put_f32(&mut h, 76, 1.0);
    for a in 0..3 {
        put_f32(&mut h, 80 + 4 * a, geometry.spacing[a] as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    // xyzt_units: millimetres
    h[123] = 2;
    put_i16(&mut h, 252, 1);
    for a in 0..3 {
        put_f32(&mut h, 268 + 4 * a, geometry.origin[a] as f32);
    }
    h[344..348].copy_from_slice(MAGIC);
    h
}

fn check_dims_fit(geometry: &Geometry) -> Result<()> {
    if geometry.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::InvalidVolume(format!(
            "dims {:?} exceed the NIfTI-1 limit of {}",
            geometry.dims,
            i16::MAX
        )));
    }
    Ok(())
}

fn encode_values(
    values: &[f32],
    dtype: Dtype,
    allow_rounding: bool,
    out: &mut Vec<u8>,
) -> Result<()> {
    let (lo, hi) = dtype.range();
    for (index, &v) in values.iter().enumerate() {
        if dtype == Dtype::Float32 {
            out.extend_from_slice(&v.to_le_bytes());
            continue;
        }
        let v64 = v as f64;
        let exact = v64.fract() == 0.0 && v64 >= lo && v64 <= hi;
        if !exact && !allow_rounding {
            return Err(Error::LossyDtype {
                dtype: dtype.name(),
                index,
                value: v64,
            });
        }
        let r = v64.round().clamp(lo, hi);
        match dtype {
            Dtype::Uint8 => out.push(r as u8),
            Dtype::Int16 => out.extend_from_slice(&(r as i16).to_le_bytes()),
            Dtype::Float32 => unreachable!(),
        }
    }
    Ok(())
}

fn decode_values(payload: &[u8], dtype: Dtype, n: usize) -> Result<Vec<f32>> {
    let need = n * dtype.bytes();
    if payload.len() < need {
        return Err(Error::MalformedHeader(format!(
            "payload holds {} bytes, {need} required",
            payload.len()
        )));
    }
    let payload = &payload[..need];
    Ok(match dtype {
        Dtype::Uint8 => payload.iter().map(|&b| b as f32).collect(),
        Dtype::Int16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        Dtype::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    })
}

/// Serialize a volume to NIfTI-1 bytes.
pub fn encode_volume(volume: &Volume, dtype: Dtype, allow_rounding: bool) -> Result<Vec<u8>> {
    check_dims_fit(&volume.geometry)?;
    let mut out = Vec::with_capacity(VOX_OFFSET + volume.data.len() * dtype.bytes());
    out.extend_from_slice(&build_header(&volume.geometry, dtype));
    encode_values(&volume.data, dtype, allow_rounding, &mut out)?;
    Ok(out)
}

/// Serialize a mask as uint8 NIfTI-1 bytes.
pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    check_dims_fit(&mask.geometry)?;
    let mut out = Vec::with_capacity(VOX_OFFSET + mask.data.len());
    out.extend_from_slice(&build_header(&mask.geometry, Dtype::Uint8));
    out.extend_from_slice(&mask.data);
    Ok(out)
}

/// Parse NIfTI-1 bytes; returns the volume and its on-disk dtype.
pub fn decode_volume(bytes: &[u8]) -> Result<(Volume, Dtype)> {
    let header = parse_header(bytes)?;
    let geometry = Geometry::new(
        header.dims,
        header.spacing.map(f64::from),
        header.origin.map(f64::from),
    )?;
    let n = geometry.len();
    if bytes.len() < header.vox_offset {
        return Err(Error::MalformedHeader(format!(
            "vox_offset {} is past the end of the file",
            header.vox_offset
        )));
    }
    let mut data = decode_values(&bytes[header.vox_offset..], header.dtype, n)?;
    let slope = header.scl_slope;
    let inter = header.scl_inter;
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Ok((Volume::new(geometry, data)?, header.dtype))
}

pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let (volume, dtype) = decode_volume(bytes)?;
    volume_to_mask(volume, dtype == Dtype::Uint8)
}

fn volume_to_mask(volume: Volume, round: bool) -> Result<BinaryMask> {
    let mut data = Vec::with_capacity(volume.data.len());
    for (index, &v) in volume.data.iter().enumerate() {
        let v = if round { v.round() } else { v };
        if v == 0.0 {
            data.push(0);
        } else if v == 1.0 {
            data.push(1);
        } else {
            return Err(Error::NonBinaryMask {
                index,
                value: v as f64,
            });
        }
    }
    Ok(BinaryMask {
        geometry: volume.geometry,
        data,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io_at(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io_at(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    Ok(decode_volume(&read_bytes(path.as_ref())?)?.0)
}

/// Read a mask; every voxel must be 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_mask(&read_bytes(path.as_ref())?)
}

/// Write a volume. Integer dtypes fail with `LossyDtype` on values they cannot
/// hold exactly, unless `allow_rounding` is set.
pub fn write_volume(
    path: impl AsRef<Path>,
    volume: &Volume,
    dtype: Dtype,
    allow_rounding: bool,
) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode_volume(volume, dtype, allow_rounding)?,
    )
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(mask)?)
}

/// JSON half of the raw+JSON sidecar format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: Dtype,
}

fn raw_path(json: &Path) -> PathBuf {
    json.with_extension("raw")
}

/// Writes `<stem>.json` and `<stem>.raw` next to each other.
pub fn write_sidecar(
    json_path: impl AsRef<Path>,
    volume: &Volume,
    dtype: Dtype,
    allow_rounding: bool,
) -> Result<()> {
    let json_path = json_path.as_ref();
    let g = &volume.geometry;
    let meta = Sidecar {
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        dtype,
    };
    let mut payload = Vec::with_capacity(volume.data.len() * dtype.bytes());
    encode_values(&volume.data, dtype, allow_rounding, &mut payload)?;
    write_bytes(json_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    write_bytes(&raw_path(json_path), &payload)
}

pub fn read_sidecar(json_path: impl AsRef<Path>) -> Result<Volume> {
    let json_path = json_path.as_ref();
    let meta: Sidecar = serde_json::from_slice(&read_bytes(json_path)?)?;
    let geometry = Geometry::new(meta.dims, meta.spacing, meta.origin)?;
    let payload = read_bytes(&raw_path(json_path))?;
    let expected = geometry.len() * meta.dtype.bytes();
    if payload.len() != expected {
        return Err(Error::InvalidVolume(format!(
            "raw payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let data = decode_values(&payload, meta.dtype, geometry.len())?;
    Volume::new(geometry, data)
}

pub fn read_sidecar_mask(json_path: impl AsRef<Path>) -> Result<BinaryMask> {
    volume_to_mask(read_sidecar(json_path)?, false)
}
