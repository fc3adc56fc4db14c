//! Layout JSON and embedding manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rrf_core::{EmbeddingSet, PatchLayout, Position};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::read_embeddings_as;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Serde mirror of the canonical layout object. Fields are declared in
/// sorted order so compact serialization is the canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub corner_exclusion: bool,
    pub image_height: u32,
    pub image_width: u32,
    pub patch_height: u32,
    pub patch_width: u32,
    pub positions: Vec<[u32; 2]>,
    pub stride: u32,
}

impl From<&PatchLayout> for LayoutSpec {
    fn from(l: &PatchLayout) -> Self {
        Self {
            corner_exclusion: l.corner_exclusion(),
            image_height: l.image_height(),
            image_width: l.image_width(),
            patch_height: l.patch_height(),
            patch_width: l.patch_width(),
            positions: l.positions().iter().map(|p| [p.x, p.y]).collect(),
            stride: l.stride(),
        }
    }
}

impl LayoutSpec {
    pub fn to_layout(&self) -> rrf_core::Result<PatchLayout> {
        PatchLayout::from_positions(
            self.image_width,
            self.image_height,
            self.patch_width,
            self.patch_height,
            self.stride,
            self.corner_exclusion,
            self.positions.iter().map(|&[x, y]| Position::new(x, y)).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipPolicy {
    None,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Free-form description of whatever produced the embeddings.
    pub embedder: serde_json::Value,
    pub flip_policy: FlipPolicy,
    /// Image id to path relative to the manifest's directory.
    pub images: BTreeMap<String, String>,
    pub layout: LayoutSpec,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

/// Pretty JSON with a trailing newline, written in one call.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_layout(path: &Path) -> Result<PatchLayout> {
    let spec: LayoutSpec = read_json(path)?;
    Ok(spec.to_layout()?)
}

/// A manifest plus the embeddings it references, all validated.
#[derive(Debug, Clone)]
pub struct LoadedStore {
    pub manifest: Manifest,
    pub layout: PatchLayout,
    pub sets: BTreeMap<String, EmbeddingSet>,
}

pub fn load_manifest(path: &Path) -> Result<(Manifest, PatchLayout)> {
    let manifest: Manifest = read_json(path)?;
    let layout = manifest.layout.to_layout()?;
    Ok((manifest, layout))
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Loads every embedding file of a manifest. Missing files, foreign
/// layouts and malformed payloads are errors.
pub fn load_store(manifest_path: &Path) -> Result<LoadedStore> {
    let (manifest, layout) = load_manifest(manifest_path)?;
    let base = base_dir(manifest_path);
    let mut sets = BTreeMap::new();
    for (id, rel) in &manifest.images {
        let set = read_embeddings_as(&base.join(rel), id, &layout)?;
        sets.insert(id.clone(), set);
    }
    Ok(LoadedStore {
        manifest,
        layout,
        sets,
    })
}
