//! Deterministic synthetic identities and a fixed random patch embedder.
//!
//! Identities live in pixel space: each identity is a coarse random
//! pattern and every image of it adds fresh noise whose strength can vary
//! across the face. The embedder average-pools a patch and applies a fixed
//! random affine map, which keeps the identity structure intact so the
//! metric, fusion and protocol layers have something real to separate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{fnv1a64, MirrorMap, PatchLayout};
use crate::metric::{flip_merge, EmbeddingSet};
use crate::protocol::{PairEntry, PairList, DEFAULT_FOLDS};

pub const DEFAULT_DIM: usize = 512;
pub const DEFAULT_POOL: u32 = 4;
pub const MAX_SHIFT: u32 = 5;

/// Independent RNG stream for `(seed, tag, index)`.
fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut bytes = Vec::with_capacity(16 + tag.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(tag.as_bytes());
    bytes.extend_from_slice(&index.to_le_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a64(&bytes))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Interleaved (HWC) single-precision image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u32,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Domain("image dimensions must be positive".into()));
        }
        let expected = (width * height * channels) as usize;
        if data.len() != expected {
            return Err(Error::Incompatible(format!(
                "{width}x{height}x{channels} image needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32, channels: u32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; (width * height * channels) as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        ((y * self.width + x) * self.channels) as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f32] {
        let o = self.offset(x, y);
        let c = self.channels as usize;
        &mut self.data[o..o + c]
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::zeros(self.width, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixel_mut(self.width - 1 - x, y)
                    .copy_from_slice(self.pixel(x, y));
            }
        }
        out
    }

    /// Translates by `(dx, dy)` pixels, replicating edge pixels into the
    /// uncovered border.
    pub fn shifted(&self, dx: i32, dy: i32) -> Image {
        let mut out = Image::zeros(self.width, self.height, self.channels);
        let clamp = |v: i64, hi: u32| v.clamp(0, i64::from(hi) - 1) as u32;
        for y in 0..self.height {
            let sy = clamp(i64::from(y) - i64::from(dy), self.height);
            for x in 0..self.width {
                let sx = clamp(i64::from(x) - i64::from(dx), self.width);
                out.pixel_mut(x, y).copy_from_slice(self.pixel(sx, sy));
            }
        }
        out
    }

    /// Zero-fills the `w x h` rectangle at `(x, y)`.
    pub fn clear_rect(&mut self, x: u32, y: u32, w: u32, h: u32) {
        for yy in y..(y + h).min(self.height) {
            for xx in x..(x + w).min(self.width) {
                self.pixel_mut(xx, yy).iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// True when the image equals its horizontal mirror.
    pub fn is_mirror_symmetric(&self) -> bool {
        (0..self.height).all(|y| {
            (0..self.width / 2).all(|x| self.pixel(x, y) == self.pixel(self.width - 1 - x, y))
        })
    }
}

/// Zeroes `floor(ratio * K)` layout patches chosen by a seeded draw.
/// Returns the masked position indices in ascending order.
pub fn mask_patches(image: &mut Image, layout: &PatchLayout, ratio: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Domain(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let count = libm::floor(ratio * layout.len() as f64) as usize;
    let mut chosen = sample(rng, layout.len(), count).into_vec();
    chosen.sort_unstable();
    for &i in &chosen {
        let p = layout.positions()[i];
        image.clear_rect(p.x, p.y, layout.patch_width(), layout.patch_height());
    }
    Ok(chosen)
}

/// Training-time style augmentation: a uniform integer shift in
/// `[-max_shift, max_shift]` on each axis with edge padding, followed by
/// patch masking.
pub fn augment(
    image: &Image,
    layout: &PatchLayout,
    max_shift: u32,
    mask_ratio: f64,
    seed: u64,
) -> Result<Image> {
    let mut rng = stream(seed, "augment", 0);
    augment_with(image, layout, max_shift, mask_ratio, &mut rng)
}

fn augment_with(
    image: &Image,
    layout: &PatchLayout,
    max_shift: u32,
    mask_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Image> {
    if max_shift > MAX_SHIFT {
        return Err(Error::Domain(format!(
            "shift range {max_shift} exceeds the supported {MAX_SHIFT} pixels"
        )));
    }
    check_image_layout(image, layout)?;
    let m = max_shift as i32;
    let (dx, dy) = (rng.random_range(-m..=m), rng.random_range(-m..=m));
    let mut out = if dx == 0 && dy == 0 {
        image.clone()
    } else {
        image.shifted(dx, dy)
    };
    mask_patches(&mut out, layout, mask_ratio, rng)?;
    Ok(out)
}

fn check_image_layout(image: &Image, layout: &PatchLayout) -> Result<()> {
    if image.width() != layout.image_width() || image.height() != layout.image_height() {
        return Err(Error::Domain(format!(
            "image is {}x{} but layout expects {}x{}",
            image.width(),
            image.height(),
            layout.image_width(),
            layout.image_height()
        )));
    }
    Ok(())
}

/// Spatial profile of within-identity noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseProfile {
    /// Same noise strength everywhere.
    Uniform,
    /// Per-region multipliers drawn log-uniformly from `[1/spread, spread]`
    /// over square regions of `region` pixels.
    Heterogeneous { spread: f64, region: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub identities: usize,
    pub images_per_identity: usize,
    /// Disjoint identities used only for fitting fusion weights.
    pub train_identities: usize,
    pub channels: u32,
    /// Side of the square cells carrying identity signal and noise.
    pub cell: u32,
    pub sigma_w: f64,
    pub noise: NoiseProfile,
    pub max_shift: u32,
    pub mask_ratio: f64,
    pub folds: u32,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            identities: 10,
            images_per_identity: 4,
            train_identities: 10,
            channels: 3,
            cell: 4,
            sigma_w: 1.0,
            noise: NoiseProfile::Uniform,
            max_shift: 0,
            mask_ratio: 0.0,
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: String,
    pub identity: String,
    /// `"train"` or `"eval"`.
    pub split: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    /// Images keyed by image id.
    pub images: BTreeMap<String, Image>,
    pub records: Vec<ImageRecord>,
    /// Evaluation pairs, balanced per fold.
    pub pairs: PairList,
    /// Pairs over the training identities.
    pub train_pairs: PairList,
    /// Noise multiplier per noise region, row-major.
    pub noise_map: Vec<f64>,
}

/// A bank of identity patterns plus the noise field shared by all images.
struct IdentityBank {
    cells_x: u32,
    cells_y: u32,
    channels: u32,
    cell: u32,
    noise_cell: Vec<f64>,
}

impl IdentityBank {
    fn cell_count(&self) -> usize {
        (self.cells_x * self.cells_y * self.channels) as usize
    }

    fn latent(&self, seed: u64, tag: &str, identity: usize) -> Vec<f64> {
        let mut rng = stream(seed, tag, identity as u64);
        (0..self.cell_count()).map(|_| normal(&mut rng)).collect()
    }

    fn render(&self, latent: &[f64], sigma: f64, rng: &mut ChaCha8Rng, layout: &PatchLayout) -> Image {
        let cells: Vec<f64> = latent
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let c = i / self.channels as usize;
                let m = self.noise_cell[c];
                s + sigma * m * normal(rng)
            })
            .collect();
        let (w, h) = (layout.image_width(), layout.image_height());
        let mut img = Image::zeros(w, h, self.channels);
        for y in 0..h {
            for x in 0..w {
                let ci = ((y / self.cell) * self.cells_x + x / self.cell) as usize;
                let base = ci * self.channels as usize;
                for (ch, v) in img.pixel_mut(x, y).iter_mut().enumerate() {
                    *v = cells[base + ch] as f32;
                }
            }
        }
        img
    }
}

/// Builds `n` genuine pairs (all within-identity combinations) and as many
/// impostor pairs, interleaved so consecutive genuine/impostor couples
/// share a fold.
fn build_pairs(
    ids: &[Vec<String>],
    folds: u32,
    rng: &mut ChaCha8Rng,
) -> Result<PairList> {
    let mut genuine = Vec::new();
    for imgs in ids {
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                genuine.push((imgs[i].clone(), imgs[j].clone()));
            }
        }
    }
    let per_id = ids[0].len();
    let mut seen = alloc::collections::BTreeSet::new();
    let mut impostor = Vec::with_capacity(genuine.len());
    let max_distinct = ids.len() * (ids.len() - 1) / 2 * per_id * per_id;
    let target = genuine.len().min(max_distinct);
    while impostor.len() < target {
        let a = rng.random_range(0..ids.len());
        let mut b = rng.random_range(0..ids.len() - 1);
        if b >= a {
            b += 1;
        }
        let (ia, ib) = (rng.random_range(0..per_id), rng.random_range(0..per_id));
        let key = if (a, ia) < (b, ib) { (a, ia, b, ib) } else { (b, ib, a, ia) };
        if seen.insert(key) {
            impostor.push((ids[a][ia].clone(), ids[b][ib].clone()));
        }
    }
    shuffle(&mut genuine, rng);
    shuffle(&mut impostor, rng);
    genuine.truncate(impostor.len());
    let mut entries = Vec::with_capacity(genuine.len() * 2);
    for (k, (g, i)) in genuine.into_iter().zip(impostor).enumerate() {
        let fold = (k as u32) % folds;
        entries.push(PairEntry { id_a: g.0, id_b: g.1, genuine: true, fold });
        entries.push(PairEntry { id_a: i.0, id_b: i.1, genuine: false, fold });
    }
    PairList::new(entries)
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Generates a synthetic benchmark over `layout`'s image size. Evaluation
/// and training identities are disjoint; every image is rendered from its
/// identity pattern plus noise, then shifted and masked when configured.
pub fn generate_benchmark(config: &BenchmarkConfig, layout: &PatchLayout) -> Result<Benchmark> {
    if config.identities < 2 || config.train_identities < 2 {
        return Err(Error::Domain("need at least two identities for impostor pairs".into()));
    }
    if config.images_per_identity < 2 {
        return Err(Error::Domain("need at least two images per identity".into()));
    }
    if config.folds < 2 {
        return Err(Error::Domain("need at least two folds".into()));
    }
    if !(config.sigma_w >= 0.0 && config.sigma_w.is_finite()) {
        return Err(Error::Domain(format!("invalid noise scale {}", config.sigma_w)));
    }
    let (w, h) = (layout.image_width(), layout.image_height());
    if config.cell == 0 || w % config.cell != 0 || h % config.cell != 0 {
        return Err(Error::Domain(format!(
            "cell size {} must divide the {w}x{h} image",
            config.cell
        )));
    }
    let (cells_x, cells_y) = (w / config.cell, h / config.cell);

    let (noise_map, region_cols, region) = match config.noise {
        NoiseProfile::Uniform => (vec![1.0], 1, w.max(h)),
        NoiseProfile::Heterogeneous { spread, region } => {
            if !(spread >= 1.0) || region == 0 {
                return Err(Error::Domain("heterogeneous noise needs spread >= 1 and region > 0".into()));
            }
            let cols = w.div_ceil(region);
            let rows = h.div_ceil(region);
            let mut rng = stream(config.seed, "noise-map", 0);
            let ln = libm::log(spread);
            let map = (0..cols * rows)
                .map(|_| libm::exp(rng.random_range(-ln..=ln)))
                .collect();
            (map, cols, region)
        }
    };
    let noise_cell = (0..cells_y)
        .flat_map(|cy| (0..cells_x).map(move |cx| (cx, cy)))
        .map(|(cx, cy)| {
            let px = cx * config.cell;
            let py = cy * config.cell;
            noise_map[((py / region) * region_cols + px / region) as usize]
        })
        .collect();
    let bank = IdentityBank {
        cells_x,
        cells_y,
        channels: config.channels,
        cell: config.cell,
        noise_cell,
    };

    let mut images = BTreeMap::new();
    let mut records = Vec::new();
    let mut lists = Vec::new();
    for (split, count) in [("eval", config.identities), ("train", config.train_identities)] {
        let mut ids = Vec::with_capacity(count);
        for ident in 0..count {
            let identity = format!("{split}{ident:04}");
            let latent = bank.latent(config.seed, split, ident);
            let mut names = Vec::with_capacity(config.images_per_identity);
            for k in 0..config.images_per_identity {
                let image_id = format!("{identity}_{k:02}");
                let index = (ident * config.images_per_identity + k) as u64;
                let mut rng = stream(config.seed, split, 1 << 32 | index);
                let mut img = bank.render(&latent, config.sigma_w, &mut rng, layout);
                if config.max_shift > 0 || config.mask_ratio > 0.0 {
                    img = augment_with(&img, layout, config.max_shift, config.mask_ratio, &mut rng)?;
                }
                images.insert(image_id.clone(), img);
                records.push(ImageRecord {
                    image_id: image_id.clone(),
                    identity: identity.clone(),
                    split,
                });
                names.push(image_id);
            }
            ids.push(names);
        }
        let mut rng = stream(config.seed, split, u64::MAX);
        lists.push(build_pairs(&ids, config.folds, &mut rng)?);
    }
    let train_pairs = lists.pop().expect("two splits");
    let pairs = lists.pop().expect("two splits");
    Ok(Benchmark {
        images,
        records,
        pairs,
        train_pairs,
        noise_map,
    })
}

/// Fixed random affine patch embedder: average pooling over `pool x pool`
/// blocks followed by a Gaussian projection to `dim` and a small bias.
/// Patches in the right half of the image are mirrored before projection
/// so a position and its mirror share weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEmbedder {
    seed: u64,
    dim: usize,
    patch_width: u32,
    patch_height: u32,
    channels: u32,
    pool: u32,
    projection: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyEmbedder {
    pub fn new(seed: u64, dim: usize, patch_width: u32, patch_height: u32, channels: u32, pool: u32) -> Result<Self> {
        if dim == 0 || channels == 0 || pool == 0 {
            return Err(Error::Domain("embedder dimensions must be positive".into()));
        }
        if patch_width % pool != 0 || patch_height % pool != 0 || patch_width == 0 || patch_height == 0 {
            return Err(Error::Domain(format!(
                "pool {pool} must divide the {patch_width}x{patch_height} patch"
            )));
        }
        let inputs = ((patch_width / pool) * (patch_height / pool) * channels) as usize;
        let mut rng = stream(seed, "projection", 0);
        let scale = 1.0 / libm::sqrt(inputs as f64);
        let projection = (0..dim * inputs).map(|_| normal(&mut rng) * scale).collect();
        let bias_scale = 1.0 / libm::sqrt(dim as f64);
        let bias = (0..dim).map(|_| normal(&mut rng) * bias_scale).collect();
        Ok(Self {
            seed,
            dim,
            patch_width,
            patch_height,
            channels,
            pool,
            projection,
            bias,
        })
    }

    /// Embedder sized for `layout`'s patches with the default pooling.
    pub fn for_layout(seed: u64, dim: usize, layout: &PatchLayout, channels: u32) -> Result<Self> {
        Self::new(seed, dim, layout.patch_width(), layout.patch_height(), channels, DEFAULT_POOL)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pool(&self) -> u32 {
        self.pool
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn patch_size(&self) -> (u32, u32) {
        (self.patch_width, self.patch_height)
    }

    fn inputs(&self) -> usize {
        ((self.patch_width / self.pool) * (self.patch_height / self.pool) * self.channels) as usize
    }

    /// Pooled features of the patch at `(x, y)`, optionally mirrored.
    fn pooled(&self, image: &Image, x0: u32, y0: u32, mirrored: bool) -> Vec<f64> {
        let (pw, ph, pool, c) = (self.patch_width, self.patch_height, self.pool, self.channels as usize);
        let bx = pw / pool;
        let mut out = vec![0.0; self.inputs()];
        let norm = 1.0 / f64::from(pool * pool);
        for dy in 0..ph {
            for dx in 0..pw {
                let sx = if mirrored { x0 + pw - 1 - dx } else { x0 + dx };
                let cell = ((dy / pool) * bx + dx / pool) as usize * c;
                for (ch, v) in image.pixel(sx, y0 + dy).iter().enumerate() {
                    out[cell + ch] += f64::from(*v) * norm;
                }
            }
        }
        out
    }

    /// Embedding of one patch; `mirrored` reads it right-to-left.
    pub fn embed_patch(&self, image: &Image, x: u32, y: u32, mirrored: bool) -> Vec<f64> {
        let pooled = self.pooled(image, x, y, mirrored);
        self.projection
            .chunks_exact(pooled.len())
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(&pooled).map(|(w, p)| w * p).sum::<f64>() + b)
            .collect()
    }

    fn embed_rows(&self, image: &Image, layout: &PatchLayout) -> Vec<Vec<f64>> {
        let span = layout.image_width() - layout.patch_width();
        layout
            .positions()
            .iter()
            .map(|p| self.embed_patch(image, p.x, p.y, 2 * p.x > span))
            .collect()
    }
}

/// Embeds every layout patch of `image`. With `flip`, the mirrored image is
/// embedded as well, re-indexed through the mirror map so row `i` covers
/// position `i`, and merged by summation.
pub fn embed(
    embedder: &ToyEmbedder,
    image_id: &str,
    image: &Image,
    layout: &PatchLayout,
    flip: bool,
) -> Result<EmbeddingSet> {
    check_image_layout(image, layout)?;
    if image.channels() != embedder.channels
        || layout.patch_width() != embedder.patch_width
        || layout.patch_height() != embedder.patch_height
    {
        return Err(Error::Domain(format!(
            "embedder expects {}x{}x{} patches, layout/image give {}x{}x{}",
            embedder.patch_width,
            embedder.patch_height,
            embedder.channels,
            layout.patch_width(),
            layout.patch_height(),
            image.channels()
        )));
    }
    let to_set = |rows: Vec<Vec<f64>>| {
        let values = rows.into_iter().flatten().collect();
        EmbeddingSet::new(image_id, layout.len(), embedder.dim, values, layout.fingerprint())
    };
    let plain = to_set(embedder.embed_rows(image, layout))?;
    if !flip {
        return Ok(plain);
    }
    let mirror: MirrorMap = layout.mirror_map()?;
    let flipped_rows = embedder.embed_rows(&image.flip_horizontal(), layout);
    let reindexed = (0..layout.len())
        .map(|i| flipped_rows[mirror.mirror(i)].clone())
        .collect();
    flip_merge(&plain, &to_set(reindexed)?)
}
