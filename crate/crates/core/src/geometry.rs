//! Patch layouts over aligned face images.
//!
//! A [`PatchLayout`] is the ordered set of restricted receptive fields
//! (top-left corners of `w x h` windows) laid over a `W x H` image. Row
//! order of every embedding matrix follows the position order of the
//! layout, so the order here is part of the on-disk contract.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

/// Side of the square removed from each image corner when corner exclusion is on.
pub const CORNER_SIZE: u32 = 28;

/// Top-left pixel coordinate of a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub x: u32,
    pub y: u32,
}

impl Position {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchLayout {
    image_width: u32,
    image_height: u32,
    patch_width: u32,
    patch_height: u32,
    stride: u32,
    corner_exclusion: bool,
    positions: Vec<Position>,
}

/// Half-open interval overlap test on one axis.
fn overlaps(start: u32, len: u32, lo: u32, hi: u32) -> bool {
    start < hi && start + len > lo
}

impl PatchLayout {
    /// Lays out the full row-major grid of patches at `stride`, optionally
    /// dropping every patch that touches one of the four corner squares.
    pub fn grid(
        image_width: u32,
        image_height: u32,
        patch_width: u32,
        patch_height: u32,
        stride: u32,
        corner_exclusion: bool,
    ) -> Result<Self> {
        check_dims(image_width, image_height, patch_width, patch_height)?;
        if stride == 0 {
            return Err(Error::Domain("stride must be positive".into()));
        }
        let (free_x, free_y) = (image_width - patch_width, image_height - patch_height);
        if free_x % stride != 0 || free_y % stride != 0 {
            return Err(Error::Layout(format!(
                "stride {stride} does not divide the free extent ({free_x}, {free_y})"
            )));
        }
        let mut positions = Vec::new();
        for y in (0..=free_y).step_by(stride as usize) {
            for x in (0..=free_x).step_by(stride as usize) {
                positions.push(Position::new(x, y));
            }
        }
        let mut layout = Self {
            image_width,
            image_height,
            patch_width,
            patch_height,
            stride,
            corner_exclusion,
            positions,
        };
        if corner_exclusion {
            let keep: Vec<Position> = layout
                .positions
                .iter()
                .copied()
                .filter(|p| !layout.touches_corner(*p))
                .collect();
            layout.positions = keep;
        }
        if layout.positions.is_empty() {
            return Err(Error::Layout("corner exclusion removed every position".into()));
        }
        Ok(layout)
    }

    /// Grid layout with the default stride of half the patch width.
    pub fn with_default_stride(
        image_width: u32,
        image_height: u32,
        patch_width: u32,
        patch_height: u32,
        corner_exclusion: bool,
    ) -> Result<Self> {
        let stride = (patch_width / 2).max(1);
        Self::grid(
            image_width,
            image_height,
            patch_width,
            patch_height,
            stride,
            corner_exclusion,
        )
    }

    /// Builds a layout from an explicit position list, validating every
    /// invariant a grid layout satisfies except grid completeness.
    pub fn from_positions(
        image_width: u32,
        image_height: u32,
        patch_width: u32,
        patch_height: u32,
        stride: u32,
        corner_exclusion: bool,
        positions: Vec<Position>,
    ) -> Result<Self> {
        check_dims(image_width, image_height, patch_width, patch_height)?;
        if stride == 0 {
            return Err(Error::Domain("stride must be positive".into()));
        }
        if positions.is_empty() {
            return Err(Error::Layout("layout has no positions".into()));
        }
        let layout = Self {
            image_width,
            image_height,
            patch_width,
            patch_height,
            stride,
            corner_exclusion,
            positions,
        };
        for (i, p) in layout.positions.iter().enumerate() {
            if p.x > image_width - patch_width || p.y > image_height - patch_height {
                return Err(Error::Layout(format!(
                    "position {i} ({}, {}) falls outside the image",
                    p.x, p.y
                )));
            }
            if corner_exclusion && layout.touches_corner(*p) {
                return Err(Error::Layout(format!(
                    "position {i} ({}, {}) intersects a corner square",
                    p.x, p.y
                )));
            }
        }
        // row-major: sort key (y, x), strictly increasing
        for (i, pair) in layout.positions.windows(2).enumerate() {
            if (pair[0].y, pair[0].x) >= (pair[1].y, pair[1].x) {
                return Err(Error::Layout(format!(
                    "positions {i} and {} are not unique and row-major sorted",
                    i + 1
                )));
            }
        }
        Ok(layout)
    }

    /// True when the patch rectangle at `p` intersects any corner square.
    pub fn touches_corner(&self, p: Position) -> bool {
        let c = CORNER_SIZE;
        let (w, h) = (self.image_width, self.image_height);
        let left = overlaps(p.x, self.patch_width, 0, c.min(w));
        let right = overlaps(p.x, self.patch_width, w.saturating_sub(c), w);
        let top = overlaps(p.y, self.patch_height, 0, c.min(h));
        let bottom = overlaps(p.y, self.patch_height, h.saturating_sub(c), h);
        (left || right) && (top || bottom)
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    pub fn patch_width(&self) -> u32 {
        self.patch_width
    }

    pub fn patch_height(&self) -> u32 {
        self.patch_height
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn corner_exclusion(&self) -> bool {
        self.corner_exclusion
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    /// Number of patches `K`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn index_of(&self, p: Position) -> Option<usize> {
        self.positions
            .binary_search_by(|q| (q.y, q.x).cmp(&(p.y, p.x)))
            .ok()
    }

    /// Canonical JSON: sorted keys, no whitespace. Input to the fingerprint.
    pub fn canonical_json(&self) -> String {
        let mut s = String::with_capacity(128 + self.positions.len() * 10);
        // write! into a String cannot fail
        let _ = write!(
            s,
            "{{\"corner_exclusion\":{},\"image_height\":{},\"image_width\":{},\"patch_height\":{},\"patch_width\":{},\"positions\":[",
            self.corner_exclusion,
            self.image_height,
            self.image_width,
            self.patch_height,
            self.patch_width
        );
        for (i, p) in self.positions.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "[{},{}]", p.x, p.y);
        }
        let _ = write!(s, "],\"stride\":{}}}", self.stride);
        s
    }

    /// 64-bit FNV-1a of [`canonical_json`](Self::canonical_json).
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.canonical_json().as_bytes())
    }

    /// Index map under horizontal reflection `x -> W - w - x`.
    pub fn mirror_map(&self) -> Result<MirrorMap> {
        let span = self.image_width - self.patch_width;
        let mut pairs = Vec::with_capacity(self.positions.len());
        let mut non_self = 0usize;
        for (i, p) in self.positions.iter().enumerate() {
            let mirrored = Position::new(span - p.x, p.y);
            let j = self.index_of(mirrored).ok_or(Error::AsymmetricLayout {
                index: i,
                x: p.x,
                y: p.y,
            })?;
            if j != i {
                non_self += 1;
            }
            pairs.push(j);
        }
        Ok(MirrorMap {
            class_count: self.positions.len() - non_self / 2,
            pairs,
        })
    }
}

fn check_dims(image_width: u32, image_height: u32, patch_width: u32, patch_height: u32) -> Result<()> {
    if patch_width == 0 || patch_height == 0 {
        return Err(Error::Domain("patch dimensions must be positive".into()));
    }
    if patch_width > image_width || patch_height > image_height {
        return Err(Error::Domain(format!(
            "patch {patch_width}x{patch_height} exceeds image {image_width}x{image_height}"
        )));
    }
    Ok(())
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Horizontal mirror equivalence over layout positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MirrorMap {
    pairs: Vec<usize>,
    class_count: usize,
}

impl MirrorMap {
    /// Index of the mirrored position of `i`.
    pub fn mirror(&self, i: usize) -> usize {
        self.pairs[i]
    }

    pub fn pairs(&self) -> &[usize] {
        &self.pairs
    }

    /// Number of mirror-equivalence classes (distinct weight-shared models).
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn is_self_mirrored(&self, i: usize) -> bool {
        self.pairs[i] == i
    }

    /// Class id per position; a class is numbered by first appearance.
    pub fn classes(&self) -> Vec<usize> {
        let mut ids = alloc::vec![usize::MAX; self.pairs.len()];
        let mut next = 0;
        for i in 0..self.pairs.len() {
            if ids[i] == usize::MAX {
                ids[i] = next;
                ids[self.pairs[i]] = next;
                next += 1;
            }
        }
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    /// Per-patch network, stride 1 in the first block.
    Rrfnet,
    /// Whole-image network, stride 2 in the first block.
    Resnet,
}

/// `(count, width, height, channels)` of a batch of feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub count: u32,
    pub width: u32,
    pub height: u32,
    pub channels: u32,
}

impl MapShape {
    pub const fn new(count: u32, width: u32, height: u32, channels: u32) -> Self {
        Self {
            count,
            width,
            height,
            channels,
        }
    }
}

/// Tensor shapes through the four residual stages of either backbone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapePlan {
    pub backbone: Backbone,
    pub input: MapShape,
    /// Patch batch fed to the network (rrfnet only).
    pub patches: Option<MapShape>,
    pub blocks: [MapShape; 4],
    /// `(rows, dim)` after the embedding layer.
    pub feature: (u32, u32),
    /// `(batch, dim)` after averaging patch features (rrfnet only).
    pub mean: Option<(u32, u32)>,
}

const BLOCK_CHANNELS: [u32; 4] = [64, 128, 256, 512];
pub const FEATURE_DIM: u32 = 512;

fn halve_ceil(v: u32, times: u32) -> u32 {
    let d = 1u32 << times;
    v.div_ceil(d)
}

/// Block-by-block shapes. `patch` and `patches` are ignored for the resnet
/// backbone.
pub fn shape_plan(
    backbone: Backbone,
    batch: u32,
    image: (u32, u32),
    channels: u32,
    patch: (u32, u32),
    patches: u32,
) -> Result<ShapePlan> {
    let (width, height) = image;
    if batch == 0 || width == 0 || height == 0 || channels == 0 {
        return Err(Error::Domain("shape dimensions must be positive".into()));
    }
    let input = MapShape::new(batch, width, height, channels);
    match backbone {
        Backbone::Rrfnet => {
            let (pw, ph) = patch;
            if pw == 0 || ph == 0 || patches == 0 {
                return Err(Error::Domain("patch dimensions and count must be positive".into()));
            }
            let n = patches * batch;
            let blocks = core::array::from_fn(|b| {
                MapShape::new(n, halve_ceil(pw, b as u32), halve_ceil(ph, b as u32), BLOCK_CHANNELS[b])
            });
            Ok(ShapePlan {
                backbone,
                input,
                patches: Some(MapShape::new(n, pw, ph, channels)),
                blocks,
                feature: (n, FEATURE_DIM),
                mean: Some((batch, FEATURE_DIM)),
            })
        }
        Backbone::Resnet => {
            let blocks = core::array::from_fn(|b| {
                let t = b as u32 + 1;
                MapShape::new(batch, halve_ceil(width, t), halve_ceil(height, t), BLOCK_CHANNELS[b])
            });
            Ok(ShapePlan {
                backbone,
                input,
                patches: None,
                blocks,
                feature: (batch, FEATURE_DIM),
                mean: None,
            })
        }
    }
}
