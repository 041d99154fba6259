//! Plain-text file formats.
//!
//! * Grids (depth, masks): a `W H` line, then `H` rows of `W`
//!   space-separated decimals, top row first.
//! * Depth previews: binary 8-bit PGM, `[-1, 1]` mapped linearly to `[0, 255]`.
//! * Correspondences: CSV with header `xs,ys,xt,yt`.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! writing is deterministic and reading back is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, DepthField, Mask, Pixel2, ScalarGrid};

pub fn grid_to_string(grid: &ScalarGrid) -> String {
    let mut out = String::with_capacity(grid.values.len() * 8);
    let _ = writeln!(out, "{} {}", grid.width, grid.height);
    for row in grid.values.chunks(grid.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn grid_from_str(text: &str) -> Result<ScalarGrid> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty grid file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("line 1: bad dimensions: {e}")))?;
    let [width, height] = dims[..] else {
        return Err(Error::Parse("line 1: expected \"W H\"".into()));
    };
    let mut values = Vec::with_capacity(width * height);
    let mut rows = 0;
    for (lineno, line) in lines {
        rows += 1;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        if row.len() != width {
            return Err(Error::Parse(format!(
                "line {}: expected {width} values, found {}",
                lineno + 1,
                row.len()
            )));
        }
        values.extend(row);
    }
    if rows != height {
        return Err(Error::Parse(format!("expected {height} rows, found {rows}")));
    }
    ScalarGrid::new(width, height, values)
}

pub fn write_grid(path: &Path, grid: &ScalarGrid) -> Result<()> {
    fs::write(path, grid_to_string(grid))?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<ScalarGrid> {
    grid_from_str(&fs::read_to_string(path)?)
}

pub fn write_depth(path: &Path, depth: &DepthField) -> Result<()> {
    write_grid(path, depth.as_grid())
}

pub fn read_depth(path: &Path) -> Result<DepthField> {
    DepthField::from_grid(read_grid(path)?)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let grid = ScalarGrid::new(
        mask.width,
        mask.height,
        mask.bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect(),
    )?;
    write_grid(path, &grid)
}

/// Any nonzero entry selects the pixel.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let grid = read_grid(path)?;
    Mask::new(grid.width, grid.height, grid.values.iter().map(|v| *v != 0.0).collect())
}

/// Binary PGM (P5) of a depth field.
pub fn depth_to_pgm(depth: &DepthField) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", depth.width(), depth.height()).into_bytes();
    out.extend(
        depth
            .values()
            .iter()
            .map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8),
    );
    out
}

pub fn write_pgm(path: &Path, depth: &DepthField) -> Result<()> {
    fs::write(path, depth_to_pgm(depth))?;
    Ok(())
}

pub const CORRESPONDENCE_HEADER: &str = "xs,ys,xt,yt";

pub fn correspondences_to_csv(corr: &CorrespondenceSet) -> String {
    let mut out = String::from(CORRESPONDENCE_HEADER);
    out.push('\n');
    for (s, t) in corr.source().iter().zip(corr.target()) {
        let _ = writeln!(out, "{},{},{},{}", s.x, s.y, t.x, t.y);
    }
    out
}

pub fn correspondences_from_csv(text: &str) -> Result<CorrespondenceSet> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CORRESPONDENCE_HEADER => {}
        _ => {
            return Err(Error::Parse(format!(
                "line 1: expected header \"{CORRESPONDENCE_HEADER}\""
            )))
        }
    }
    let mut source = Vec::new();
    let mut target = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        if v.len() != 4 {
            return Err(Error::Parse(format!(
                "line {}: expected 4 fields, found {}",
                lineno + 1,
                v.len()
            )));
        }
        source.push(Pixel2::new(v[0], v[1]));
        target.push(Pixel2::new(v[2], v[3]));
    }
    CorrespondenceSet::new(source, target)
}

pub fn write_correspondences(path: &Path, corr: &CorrespondenceSet) -> Result<()> {
    fs::write(path, correspondences_to_csv(corr))?;
    Ok(())
}

pub fn read_correspondences(path: &Path) -> Result<CorrespondenceSet> {
    correspondences_from_csv(&fs::read_to_string(path)?)
}
