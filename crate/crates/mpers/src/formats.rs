//! Binary tensor (`MPT1`) and label raster (`MPL1`) files, plus atomic
//! whole-file writes.
//!
//! `MPT1`: magic, u8 rank, rank × u32 LE extents, f32 LE payload.
//! `MPL1`: magic, u32 LE height, u32 LE width, one byte per pixel.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use mpers_core::scene::LabelMap;
use mpers_core::Tensor;

use crate::error::{format_err, Context, Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"MPT1";
pub const LABEL_MAGIC: [u8; 4] = *b"MPL1";

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err(what, "truncated"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    let rank = u8::try_from(t.rank()).map_err(|_| format_err("tensor", "rank above 255"))?;
    w.write_all(&TENSOR_MAGIC)?;
    w.write_all(&[rank])?;
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| format_err("tensor", format!("extent {e} above u32")))?;
        w.write_all(&e.to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

/// Reads one tensor, leaving the reader just past its payload.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "tensor")?;
    if magic != TENSOR_MAGIC {
        return Err(format_err("tensor", format!("bad magic {magic:?}")));
    }
    let mut rank = [0u8; 1];
    read_exact(r, &mut rank, "tensor")?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        shape.push(read_u32(r, "tensor")? as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| format_err("tensor", format!("shape {shape:?} overflows")))?;
    let bytes = numel
        .checked_mul(4)
        .ok_or_else(|| format_err("tensor", "payload overflows"))?;
    let mut payload = Vec::new();
    r.take(bytes as u64).read_to_end(&mut payload)?;
    if payload.len() != bytes {
        return Err(format_err("tensor", "truncated"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::new(&shape, data)?)
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(5 + 4 * t.rank() + 4 * t.numel());
    write_tensor(&mut out, t)?;
    Ok(out)
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = bytes;
    let t = read_tensor(&mut r)?;
    if !r.is_empty() {
        return Err(format_err("tensor", format!("{} trailing bytes", r.len())));
    }
    Ok(t)
}

pub fn encode_labels(labels: &LabelMap) -> Result<Vec<u8>> {
    let h = u32::try_from(labels.height).map_err(|_| format_err("labels", "height above u32"))?;
    let w = u32::try_from(labels.width).map_err(|_| format_err("labels", "width above u32"))?;
    let mut out = Vec::with_capacity(12 + labels.data.len());
    out.extend_from_slice(&LABEL_MAGIC);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&labels.data);
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(format_err("labels", format!("bad magic {magic:?}")));
    }
    let h = read_u32(&mut r, "labels")? as usize;
    let w = read_u32(&mut r, "labels")? as usize;
    let n = h
        .checked_mul(w)
        .ok_or_else(|| format_err("labels", "size overflows"))?;
    if r.len() != n {
        return Err(format_err(
            "labels",
            format!("{h}×{w} raster with {} payload bytes", r.len()),
        ));
    }
    Ok(LabelMap::new(h, w, r.to_vec())?)
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).at(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).at(dir)?;
    tmp.write_all(bytes).at(path)?;
    tmp.as_file().sync_all().at(path)?;
    tmp.persist(path).map_err(|e| e.error).at(path)?;
    Ok(())
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(t)?)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path).at(path)?).at(path)
}

pub fn save_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_atomic(path, &encode_labels(labels)?)
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    decode_labels(&fs::read(path).at(path)?).at(path)
}
