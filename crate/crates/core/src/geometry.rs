//! Geometric primitives: pixels, lifted points, affine cameras, depth grids
//! and correspondence sets, plus the lift/project operations that tie them
//! together.

use nalgebra::{Matrix2x4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2D image location in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pixel2 {
    pub x: f64,
    pub y: f64,
}

impl Pixel2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Pixel2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// A source pixel lifted to 3D with its depth, `[x, y, d, 1]`.
///
/// The homogeneous component is always exactly one and is not stored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HPoint3 {
    pub x: f64,
    pub y: f64,
    pub d: f64,
}

impl HPoint3 {
    pub const fn new(x: f64, y: f64, d: f64) -> Self {
        Self { x, y, d }
    }

    #[inline]
    pub const fn w(&self) -> f64 {
        1.0
    }

    #[inline]
    pub fn to_homogeneous(self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.d, 1.0)
    }
}

/// A 2x4 affine projection from lifted source points to target pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineCamera {
    p: Matrix2x4<f64>,
}

impl AffineCamera {
    pub fn new(p: Matrix2x4<f64>) -> Result<Self> {
        if p.iter().all(|v| v.is_finite()) {
            Ok(Self { p })
        } else {
            Err(Error::InvalidInput("camera entries must be finite".into()))
        }
    }

    pub fn from_rows(rows: [[f64; 4]; 2]) -> Result<Self> {
        Self::new(Matrix2x4::from_row_slice(&[
            rows[0][0], rows[0][1], rows[0][2], rows[0][3], rows[1][0], rows[1][1], rows[1][2], rows[1][3],
        ]))
    }

    pub fn matrix(&self) -> &Matrix2x4<f64> {
        &self.p
    }

    /// Entries in row-major order `p00 p01 p02 p03 p10 p11 p12 p13`.
    pub fn entries(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for r in 0..2 {
            for c in 0..4 {
                out[r * 4 + c] = self.p[(r, c)];
            }
        }
        out
    }

    /// Largest absolute entrywise difference to another camera.
    pub fn max_abs_diff(&self, other: &AffineCamera) -> f64 {
        (self.p - other.p).abs().max()
    }

    pub fn project(&self, pt: &HPoint3) -> Pixel2 {
        let v = self.p * pt.to_homogeneous();
        Pixel2::new(v[0], v[1])
    }
}

/// A row-major grid of unconstrained scalars. Used for gradients, aligned
/// predictions and anything else that is not bound to the depth range.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("grid dimensions must be positive".into()));
        }
        if values.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "grid of {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        (x < self.width && y < self.height).then(|| self.values[self.index(x, y)])
    }

    pub fn same_shape(&self, other: &ScalarGrid) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Boolean per-pixel selection, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask of {}x{} needs {} entries, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![true; width * height])
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Marks every source pixel referenced by the correspondence set.
    pub fn from_sources(width: usize, height: usize, corr: &CorrespondenceSet) -> Result<Self> {
        let mut bits = vec![false; width * height];
        for s in corr.source() {
            let (x, y) = pixel_index(s, width, height)?;
            bits[y * width + x] = true;
        }
        Self::new(width, height, bits)
    }
}

/// The optimization variable: one depth per pixel, bounded to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthField {
    grid: ScalarGrid,
}

impl DepthField {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_grid(ScalarGrid::new(width, height, values)?)
    }

    pub fn from_grid(grid: ScalarGrid) -> Result<Self> {
        if let Some(i) = grid.values.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!(
                "depth value {} at index {} is outside [-1, 1]",
                grid.values[i], i
            )));
        }
        Ok(Self { grid })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_grid(ScalarGrid::filled(width, height, value)?)
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn values(&self) -> &[f64] {
        &self.grid.values
    }

    pub fn as_grid(&self) -> &ScalarGrid {
        &self.grid
    }

    pub fn into_grid(self) -> ScalarGrid {
        self.grid
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.grid.get(x, y)
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) -> Result<()> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::InvalidInput(format!("depth value {value} is outside [-1, 1]")));
        }
        if x >= self.width() || y >= self.height() {
            return Err(Error::OutOfBounds {
                x: x as f64,
                y: y as f64,
                width: self.width(),
                height: self.height(),
            });
        }
        let i = self.grid.index(x, y);
        self.grid.values[i] = value;
        Ok(())
    }

    /// Rewrites every value through `f`, clipping the result into `[-1, 1]`.
    /// NaN results are rejected and leave the field unchanged.
    pub fn update_clipped(&mut self, mut f: impl FnMut(usize, f64) -> f64) -> Result<()> {
        let next: Vec<f64> = self.grid.values.iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        if next.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("depth update produced NaN".into()));
        }
        for (dst, v) in self.grid.values.iter_mut().zip(next) {
            *dst = v.clamp(-1.0, 1.0);
        }
        Ok(())
    }
}

/// Paired source/target pixel locations.
///
/// Source locations are snapped to the nearest integer pixel when the set is
/// built, since depth is read per pixel; the number of points that moved is
/// kept in [`CorrespondenceSet::snapped_count`].
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet {
    source: Vec<Pixel2>,
    target: Vec<Pixel2>,
    snapped: usize,
}

impl CorrespondenceSet {
    pub fn new(source: Vec<Pixel2>, target: Vec<Pixel2>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::InvalidInput(format!(
                "source has {} points but target has {}",
                source.len(),
                target.len()
            )));
        }
        if source.is_empty() {
            return Err(Error::InvalidInput("correspondence set is empty".into()));
        }
        if !source.iter().chain(&target).all(Pixel2::is_finite) {
            return Err(Error::InvalidInput("correspondences must be finite".into()));
        }
        let mut snapped = 0;
        let source = source
            .into_iter()
            .map(|p| {
                let q = Pixel2::new(p.x.round(), p.y.round());
                if q != p {
                    snapped += 1;
                }
                q
            })
            .collect();
        Ok(Self {
            source,
            target,
            snapped,
        })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self) -> &[Pixel2] {
        &self.source
    }

    pub fn target(&self) -> &[Pixel2] {
        &self.target
    }

    pub fn snapped_count(&self) -> usize {
        self.snapped
    }

    /// The sub-set selected by `keep`, in order.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let (source, target) = (0..self.len())
            .filter(|&i| keep(i))
            .map(|i| (self.source[i], self.target[i]))
            .unzip();
        Self::new(source, target)
    }
}

/// Integer grid location of an (already snapped) pixel.
pub(crate) fn pixel_index(pix: &Pixel2, width: usize, height: usize) -> Result<(usize, usize)> {
    let oob = || Error::OutOfBounds {
        x: pix.x,
        y: pix.y,
        width,
        height,
    };
    if pix.x.fract() != 0.0 || pix.y.fract() != 0.0 {
        return Err(Error::InvalidInput(format!(
            "pixel ({}, {}) is not at an integer location",
            pix.x, pix.y
        )));
    }
    if pix.x < 0.0 || pix.y < 0.0 || pix.x >= width as f64 || pix.y >= height as f64 {
        return Err(oob());
    }
    Ok((pix.x as usize, pix.y as usize))
}

/// Lifts a source pixel to `[x, y, d, 1]` using the depth stored there.
pub fn lift(pix: &Pixel2, depth: &DepthField) -> Result<HPoint3> {
    let (x, y) = pixel_index(pix, depth.width(), depth.height())?;
    Ok(HPoint3::new(pix.x, pix.y, depth.values()[y * depth.width() + x]))
}

pub fn project(cam: &AffineCamera, pt: &HPoint3) -> Pixel2 {
    cam.project(pt)
}

/// Euclidean distance between the projected source point and its target.
pub fn reprojection_residual(cam: &AffineCamera, src: &Pixel2, tgt: &Pixel2, depth: &DepthField) -> Result<f64> {
    Ok(project(cam, &lift(src, depth)?).distance(tgt))
}

/// Lifts every source point of `corr` and returns the lifted points together
/// with the flat pixel index each one reads its depth from.
pub fn lift_all(corr: &CorrespondenceSet, depth: &DepthField) -> Result<(Vec<HPoint3>, Vec<usize>)> {
    let mut points = Vec::with_capacity(corr.len());
    let mut cells = Vec::with_capacity(corr.len());
    for s in corr.source() {
        let (x, y) = pixel_index(s, depth.width(), depth.height())?;
        let cell = y * depth.width() + x;
        points.push(HPoint3::new(s.x, s.y, depth.values()[cell]));
        cells.push(cell);
    }
    Ok((points, cells))
}
