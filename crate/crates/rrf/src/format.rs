//! Binary formats.
//!
//! RRFE (one file per image):
//!
//! | offset | size  | field                                  |
//! |--------|-------|----------------------------------------|
//! | 0      | 4     | magic `RRFE`                           |
//! | 4      | 4     | version, u32 LE (= 1)                  |
//! | 8      | 4     | K, u32 LE                              |
//! | 12     | 4     | D, u32 LE                              |
//! | 16     | 8     | layout fingerprint, u64 LE             |
//! | 24     | 4·K·D | f32 LE, row-major, row i = position i  |
//!
//! RRFI (synthetic images): magic `RRFI`, version, width, height, channels
//! as u32 LE, then width·height·channels f32 LE in HWC order.

use std::fs;
use std::path::Path;

use rrf_core::toyembed::Image;
use rrf_core::{EmbeddingSet, PatchLayout};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"RRFE";
pub const IMAGE_MAGIC: &[u8; 4] = b"RRFI";
pub const VERSION: u32 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 24;
pub const IMAGE_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub version: u32,
    pub patches: u32,
    pub dim: u32,
    pub layout_fingerprint: u64,
}

impl EmbeddingFileHeader {
    pub fn to_bytes(&self) -> [u8; EMBEDDING_HEADER_LEN] {
        let mut out = [0u8; EMBEDDING_HEADER_LEN];
        out[0..4].copy_from_slice(EMBEDDING_MAGIC);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.patches.to_le_bytes());
        out[12..16].copy_from_slice(&self.dim.to_le_bytes());
        out[16..24].copy_from_slice(&self.layout_fingerprint.to_le_bytes());
        out
    }

    /// Parses and checks magic, version and non-zero shape.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < EMBEDDING_HEADER_LEN {
            return Err(Error::format(path, "truncated header"));
        }
        if &bytes[0..4] != EMBEDDING_MAGIC {
            return Err(Error::format(path, "bad magic, not an RRFE file"));
        }
        let header = Self {
            version: u32_at(bytes, 4),
            patches: u32_at(bytes, 8),
            dim: u32_at(bytes, 12),
            layout_fingerprint: u64::from_le_bytes(bytes[16..24].try_into().unwrap()),
        };
        if header.version != VERSION {
            return Err(Error::format(path, format!("unsupported version {}", header.version)));
        }
        if header.patches == 0 || header.dim == 0 {
            return Err(Error::format(path, "K and D must be positive"));
        }
        Ok(header)
    }

    pub fn payload_len(&self) -> usize {
        self.patches as usize * self.dim as usize * 4
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn f32_payload(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Serializes a set to RRFE bytes.
pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let header = EmbeddingFileHeader {
        version: VERSION,
        patches: set.rows() as u32,
        dim: set.dim() as u32,
        layout_fingerprint: set.layout_fingerprint(),
    };
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + header.payload_len());
    out.extend_from_slice(&header.to_bytes());
    for v in set.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Decodes RRFE bytes. `expected_fingerprint` is checked when given.
pub fn decode_embeddings(
    bytes: &[u8],
    image_id: &str,
    expected_fingerprint: Option<u64>,
    path: &Path,
) -> Result<EmbeddingSet> {
    let header = EmbeddingFileHeader::parse(bytes, path)?;
    if let Some(expected) = expected_fingerprint {
        if expected != header.layout_fingerprint {
            return Err(Error::LayoutMismatch {
                path: path.into(),
                expected,
                found: header.layout_fingerprint,
            });
        }
    }
    let payload = &bytes[EMBEDDING_HEADER_LEN..];
    if payload.len() != header.payload_len() {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, header declares {}x{} floats ({} bytes)",
                payload.len(),
                header.patches,
                header.dim,
                header.payload_len()
            ),
        ));
    }
    let values = f32_payload(payload);
    Ok(EmbeddingSet::from_f32(
        image_id,
        header.patches as usize,
        header.dim as usize,
        &values,
        header.layout_fingerprint,
    )?)
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    fs::write(path, encode_embeddings(set)).map_err(|e| Error::io(path, e))
}

/// Reads an RRFE file and validates it against `expected_layout`. The image
/// id is the file stem.
pub fn read_embeddings(path: &Path, expected_layout: &PatchLayout) -> Result<EmbeddingSet> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_embeddings_as(path, &id, expected_layout)
}

pub fn read_embeddings_as(
    path: &Path,
    image_id: &str,
    expected_layout: &PatchLayout,
) -> Result<EmbeddingSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let set = decode_embeddings(&bytes, image_id, Some(expected_layout.fingerprint()), path)?;
    if set.rows() != expected_layout.len() {
        return Err(Error::format(
            path,
            format!("{} rows for a {}-position layout", set.rows(), expected_layout.len()),
        ));
    }
    Ok(set)
}

pub fn encode_image(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + image.data().len() * 4);
    out.extend_from_slice(IMAGE_MAGIC);
    for v in [VERSION, image.width(), image.height(), image.channels()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < IMAGE_HEADER_LEN || &bytes[0..4] != IMAGE_MAGIC {
        return Err(Error::format(path, "not an RRFI image"));
    }
    if u32_at(bytes, 4) != VERSION {
        return Err(Error::format(path, "unsupported image version"));
    }
    let (w, h, c) = (u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16));
    let expected = w as usize * h as usize * c as usize * 4;
    let payload = &bytes[IMAGE_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(path, "image payload length mismatch"));
    }
    Ok(Image::new(w, h, c, f32_payload(payload))?)
}

pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_image(image)).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}
