//! Synthetic benchmark directories.
//!
//! ```text
//! <dir>/ground_truth.json      identities, splits, noise map, generator settings
//! <dir>/pairs.csv              evaluation pairs
//! <dir>/train_pairs.csv        pairs over the training identities
//! <dir>/images/<id>.rrfi
//! <dir>/embeddings/<name>/manifest.json + <id>.rrfe
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rrf_core::toyembed::{embed, Benchmark, BenchmarkConfig, Image, NoiseProfile, ToyEmbedder};
use rrf_core::PatchLayout;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_image, write_embeddings, write_image};
use crate::manifest::{read_json, write_json, FlipPolicy, LayoutSpec, Manifest, MANIFEST_FILE};
use crate::pairs::write_pairs;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const TRAIN_PAIRS_FILE: &str = "train_pairs.csv";
pub const IMAGES_DIR: &str = "images";
pub const EMBEDDINGS_DIR: &str = "embeddings";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseRecord {
    Uniform,
    Heterogeneous { spread: f64, region: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub identities: usize,
    pub images_per_identity: usize,
    pub train_identities: usize,
    pub channels: u32,
    pub cell: u32,
    pub sigma_w: f64,
    pub noise: NoiseRecord,
    pub max_shift: u32,
    pub mask_ratio: f64,
    pub folds: u32,
    pub seed: u64,
}

impl From<&BenchmarkConfig> for GeneratorRecord {
    fn from(c: &BenchmarkConfig) -> Self {
        Self {
            identities: c.identities,
            images_per_identity: c.images_per_identity,
            train_identities: c.train_identities,
            channels: c.channels,
            cell: c.cell,
            sigma_w: c.sigma_w,
            noise: match c.noise {
                NoiseProfile::Uniform => NoiseRecord::Uniform,
                NoiseProfile::Heterogeneous { spread, region } => {
                    NoiseRecord::Heterogeneous { spread, region }
                }
            },
            max_shift: c.max_shift,
            mask_ratio: c.mask_ratio,
            folds: c.folds,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub identity: String,
    pub split: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: serde_json::Value,
    pub generator: GeneratorRecord,
    /// Layout used for masking during generation.
    pub layout: LayoutSpec,
    pub images: Vec<ImageEntry>,
    /// Noise multiplier per noise region, row-major.
    pub noise_map: Vec<f64>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn image_path(id: &str) -> String {
    format!("{IMAGES_DIR}/{id}.rrfi")
}

/// Writes images, pair lists and ground truth; ground truth goes last.
pub fn write_benchmark(
    dir: &Path,
    bench: &Benchmark,
    config: &BenchmarkConfig,
    layout: &PatchLayout,
    echo: &serde_json::Value,
) -> Result<GroundTruth> {
    create_dir(&dir.join(IMAGES_DIR))?;
    for (id, image) in &bench.images {
        write_image(image, &dir.join(image_path(id)))?;
    }
    write_pairs(&bench.pairs, &dir.join(PAIRS_FILE))?;
    write_pairs(&bench.train_pairs, &dir.join(TRAIN_PAIRS_FILE))?;
    let truth = GroundTruth {
        config: echo.clone(),
        generator: GeneratorRecord::from(config),
        layout: LayoutSpec::from(layout),
        images: bench
            .records
            .iter()
            .map(|r| ImageEntry {
                image_id: r.image_id.clone(),
                identity: r.identity.clone(),
                split: r.split.to_string(),
                path: image_path(&r.image_id),
            })
            .collect(),
        noise_map: bench.noise_map.clone(),
    };
    write_json(&truth, &dir.join(GROUND_TRUTH_FILE))?;
    Ok(truth)
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    read_json(&dir.join(GROUND_TRUTH_FILE))
}

pub fn load_images(dir: &Path, truth: &GroundTruth) -> Result<BTreeMap<String, Image>> {
    truth
        .images
        .par_iter()
        .map(|e| Ok((e.image_id.clone(), read_image(&dir.join(&e.path))?)))
        .collect()
}

pub fn embeddings_dir(bench_dir: &Path, name: &str) -> PathBuf {
    bench_dir.join(EMBEDDINGS_DIR).join(name)
}

/// Embeds every image into `out`, one RRFE file each, then writes the
/// manifest. Returns the manifest path.
pub fn embed_images(
    images: &BTreeMap<String, Image>,
    layout: &PatchLayout,
    embedder: &ToyEmbedder,
    flip: bool,
    out: &Path,
) -> Result<PathBuf> {
    create_dir(out)?;
    let work: Vec<(&String, &Image)> = images.iter().collect();
    work.par_iter()
        .map(|(id, image)| {
            let set = embed(embedder, id, image, layout, flip)?;
            write_embeddings(&set, &out.join(format!("{id}.rrfe")))
        })
        .collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        embedder: serde_json::json!({
            "kind": "toy",
            "seed": embedder.seed(),
            "dim": embedder.dim(),
            "pool": embedder.pool(),
            "channels": embedder.channels(),
        }),
        flip_policy: if flip { FlipPolicy::Merged } else { FlipPolicy::None },
        images: images.keys().map(|id| (id.clone(), format!("{id}.rrfe"))).collect(),
        layout: LayoutSpec::from(layout),
    };
    let path = out.join(MANIFEST_FILE);
    write_json(&manifest, &path)?;
    Ok(path)
}
