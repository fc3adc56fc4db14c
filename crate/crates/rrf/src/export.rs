//! Heatmap and contribution-matrix export.

use std::fmt::Write as _;
use std::path::Path;

use rrf_core::PatchLayout;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    /// `x,y,value` rows in layout order.
    Csv,
    /// 8-bit binary graymap.
    Pgm,
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Csv => "csv",
            HeatmapFormat::Pgm => "pgm",
        }
    }
}

fn check_len(values: &[f64], layout: &PatchLayout) -> Result<()> {
    if values.len() != layout.len() {
        return Err(rrf_core::Error::Incompatible(format!(
            "{} heatmap values for a {}-position layout",
            values.len(),
            layout.len()
        ))
        .into());
    }
    Ok(())
}

pub fn heatmap_csv(values: &[f64], layout: &PatchLayout) -> Result<String> {
    check_len(values, layout)?;
    let mut out = String::from("x,y,value\n");
    for (p, v) in layout.positions().iter().zip(values) {
        writeln!(out, "{},{},{}", p.x, p.y, v).unwrap();
    }
    Ok(out)
}

/// Graymap with one `stride x stride` block per grid cell. Values are
/// min-max scaled to 0..=255 over the layout; a constant map is mid-gray and
/// cells without a layout position are black.
pub fn heatmap_pgm(values: &[f64], layout: &PatchLayout) -> Result<Vec<u8>> {
    check_len(values, layout)?;
    let s = layout.stride();
    let cols = layout.positions().iter().map(|p| p.x / s).max().unwrap_or(0) + 1;
    let rows = layout.positions().iter().map(|p| p.y / s).max().unwrap_or(0) + 1;
    let (w, h) = ((cols * s) as usize, (rows * s) as usize);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pixels = vec![0u8; w * h];
    for (p, v) in layout.positions().iter().zip(values) {
        let level = if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        };
        let (cx, cy) = ((p.x / s * s) as usize, (p.y / s * s) as usize);
        for row in pixels[cy * w..(cy + s as usize) * w].chunks_exact_mut(w) {
            row[cx..cx + s as usize].fill(level);
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn export_heatmap(
    values: &[f64],
    layout: &PatchLayout,
    path: &Path,
    format: HeatmapFormat,
) -> Result<()> {
    let bytes = match format {
        HeatmapFormat::Csv => heatmap_csv(values, layout)?.into_bytes(),
        HeatmapFormat::Pgm => heatmap_pgm(values, layout)?,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `K x K` matrix, one CSV row per patch of image A, no header.
pub fn contributions_csv(matrix: &[f64], patches: usize) -> Result<String> {
    if patches == 0 || matrix.len() != patches * patches {
        return Err(rrf_core::Error::Incompatible("contribution matrix is not square".into()).into());
    }
    let mut out = String::new();
    for row in matrix.chunks_exact(patches) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_join_layout() {
        let l = PatchLayout::grid(112, 112, 28, 28, 14, true).unwrap();
        let values: Vec<f64> = (0..33).map(|i| i as f64 * 0.5).collect();
        let csv = heatmap_csv(&values, &l).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 34);
        assert_eq!(lines[0], "x,y,value");
        for (i, line) in lines[1..].iter().enumerate() {
            let p = l.positions()[i];
            assert_eq!(*line, format!("{},{},{}", p.x, p.y, values[i]));
        }
        assert!(heatmap_csv(&values[..32], &l).is_err());
    }

    #[test]
    fn pgm_five_patch_grid() {
        let l = PatchLayout::grid(112, 112, 56, 56, 28, true).unwrap();
        let pgm = heatmap_pgm(&[0.0, 1.0, 2.0, 3.0, 4.0], &l).unwrap();
        let header = b"P5\n84 84\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let px = &pgm[header.len()..];
        assert_eq!(px.len(), 84 * 84);
        let at = |x: usize, y: usize| px[y * 84 + x];
        assert_eq!(at(0, 0), 0);
        assert_eq!(at(28, 0), 0);
        assert_eq!(at(0, 28), 64);
        assert_eq!(at(83, 83), 0);
        assert_eq!(at(56, 28), 191);
        assert_eq!(at(28 + 27, 56 + 27), 255);
    }

    #[test]
    fn pgm_constant_map() {
        let l = PatchLayout::grid(56, 56, 56, 56, 28, false).unwrap();
        let pgm = heatmap_pgm(&[0.3], &l).unwrap();
        assert!(pgm.ends_with(&[128u8; 28 * 28]));
    }

    #[test]
    fn contribution_rows() {
        let csv = contributions_csv(&[1.0, 2.0, 3.0, 4.5], 2).unwrap();
        assert_eq!(csv, "1,2\n3,4.5\n");
        assert!(contributions_csv(&[1.0, 2.0, 3.0], 2).is_err());
    }
}
