//! Procedural ground truth: parametric height-field surfaces seen from
//! several orthographic views.
//!
//! World coordinates are `(u, v, z)` with the surface `z = h(u, v)` over the
//! square `[-1, 1]^2`. A view rotates the world by its azimuth (about the
//! vertical `v` axis) and then its elevation (about the horizontal axis), and
//! projects orthographically along the camera `z` axis. Depth is camera `z`,
//! so larger values are nearer the camera, divided by one scene-wide scale so
//! that every view lands in `[-1, 1]`. Lifting a pixel with its depth and
//! moving it to another view is therefore an exact affine map.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineCamera, CorrespondenceSet, DepthField, HPoint3, Mask, Pixel2};

/// Fraction of the half-image the unit square occupies in a frontal view is
/// `1 / IMAGE_MARGIN`.
const IMAGE_MARGIN: f64 = 1.15;
/// Coarse samples per ray before bisection.
const RAY_STEPS: usize = 512;
const BISECTIONS: usize = 80;
/// Depth values of pixels that see no surface.
pub const BACKGROUND_DEPTH: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    /// `params = [amplitude, width, (cu, cv)...]`; bumps at each centre.
    GaussianBumps,
    /// `params = [curvature]`; `h = c (u^2 - v^2)`.
    Saddle,
    /// `params = [radius]`; a spherical cap on a flat base.
    Hemisphere,
    /// `params = [(amplitude, frequency, angle_degrees)...]`; a sum of cosine ridges.
    RidgeMix,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub azimuth: f64,
    pub elevation: f64,
}

impl ViewSpec {
    pub const fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    /// World-to-camera rotation.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        let (se, ce) = self.elevation.to_radians().sin_cos();
        let azimuth = Matrix3::new(ca, 0.0, sa, 0.0, 1.0, 0.0, -sa, 0.0, ca);
        let elevation = Matrix3::new(1.0, 0.0, 0.0, 0.0, ce, -se, 0.0, se, ce);
        elevation * azimuth
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub surface_kind: SurfaceKind,
    #[serde(default)]
    pub surface_params: Vec<f64>,
    pub resolution: (usize, usize),
    pub views: Vec<ViewSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a scene needs at least 2 views, got {}",
                self.views.len()
            )));
        }
        let (w, h) = self.resolution;
        if w < 16 || h < 16 {
            return Err(Error::InvalidInput(format!(
                "resolution must be at least 16x16, got {w}x{h}"
            )));
        }
        for (i, v) in self.views.iter().enumerate() {
            if !(0.0..360.0).contains(&v.azimuth) || !(-45.0..=45.0).contains(&v.elevation) {
                return Err(Error::InvalidInput(format!(
                    "view {i}: azimuth must be in [0, 360) and elevation in [-45, 45], got ({}, {})",
                    v.azimuth, v.elevation
                )));
            }
        }
        if !self.surface_params.iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidInput("surface parameters must be finite".into()));
        }
        Surface::from_spec(self)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub gaussian_sigma: f64,
    pub outlier_fraction: f64,
    pub outlier_magnitude: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.0,
            outlier_fraction: 0.0,
            outlier_magnitude: 0.0,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gaussian_sigma >= 0.0
            && self.outlier_magnitude >= 0.0
            && (0.0..=1.0).contains(&self.outlier_fraction)
            && self.gaussian_sigma.is_finite()
            && self.outlier_magnitude.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid corruption spec {self:?}")))
        }
    }
}

/// Analytic height function of one surface family.
#[derive(Clone, Debug)]
enum Surface {
    Bumps {
        amplitude: f64,
        width: f64,
        centres: Vec<(f64, f64)>,
    },
    Saddle {
        curvature: f64,
    },
    Hemisphere {
        radius: f64,
    },
    Ridges {
        ridges: Vec<(f64, f64, f64, f64)>,
    },
}

impl Surface {
    fn from_spec(spec: &SceneSpec) -> Result<Self> {
        let p = &spec.surface_params;
        let bad = |what: &str| Error::InvalidInput(format!("{:?}: {what}", spec.surface_kind));
        Ok(match spec.surface_kind {
            SurfaceKind::GaussianBumps => {
                let (amplitude, width, rest) = match p.as_slice() {
                    [] => (0.5, 0.3, &[0.4, 0.4, -0.4, -0.4, 0.4, -0.4, -0.4, 0.4][..]),
                    [a, w, rest @ ..] => (*a, *w, rest),
                    _ => return Err(bad("expected [amplitude, width, centres...]")),
                };
                if !(width > 0.0) || !rest.len().is_multiple_of(2) {
                    return Err(bad("width must be positive and centres come in pairs"));
                }
                let centres = if rest.is_empty() {
                    vec![(0.0, 0.0)]
                } else {
                    rest.chunks(2).map(|c| (c[0], c[1])).collect()
                };
                Surface::Bumps {
                    amplitude,
                    width,
                    centres,
                }
            }
            SurfaceKind::Saddle => Surface::Saddle {
                curvature: p.first().copied().unwrap_or(0.4),
            },
            SurfaceKind::Hemisphere => {
                let radius = p.first().copied().unwrap_or(0.75);
                if !(radius > 0.0 && radius <= 1.0) {
                    return Err(bad("radius must be in (0, 1]"));
                }
                Surface::Hemisphere { radius }
            }
            SurfaceKind::RidgeMix => {
                let triples: &[f64] = if p.is_empty() {
                    &[0.18, 3.0, 20.0, 0.12, 5.0, 110.0]
                } else {
                    p
                };
                if !triples.len().is_multiple_of(3) {
                    return Err(bad("expected (amplitude, frequency, angle) triples"));
                }
                Surface::Ridges {
                    ridges: triples
                        .chunks(3)
                        .map(|t| {
                            let (s, c) = t[2].to_radians().sin_cos();
                            (t[0], t[1], c, s)
                        })
                        .collect(),
                }
            }
        })
    }

    fn height(&self, u: f64, v: f64) -> f64 {
        match self {
            Surface::Bumps {
                amplitude,
                width,
                centres,
            } => {
                let two_w2 = 2.0 * width * width;
                centres
                    .iter()
                    .map(|(cu, cv)| {
                        let r2 = (u - cu).powi(2) + (v - cv).powi(2);
                        amplitude * (-r2 / two_w2).exp()
                    })
                    .sum()
            }
            Surface::Saddle { curvature } => curvature * (u * u - v * v),
            Surface::Hemisphere { radius } => (radius * radius - u * u - v * v).max(0.0).sqrt(),
            Surface::Ridges { ridges } => ridges
                .iter()
                .map(|(a, f, c, s)| a * (f * PI * (u * c + v * s)).cos())
                .sum(),
        }
    }

    /// Upper bound on |h| over the unit square.
    fn height_bound(&self) -> f64 {
        match self {
            Surface::Bumps { amplitude, centres, .. } => amplitude.abs() * centres.len() as f64,
            Surface::Saddle { curvature } => curvature.abs(),
            Surface::Hemisphere { radius } => *radius,
            Surface::Ridges { ridges } => ridges.iter().map(|r| r.0.abs()).sum(),
        }
    }
}

/// A validated scene with its views' camera-space geometry precomputed.
#[derive(Clone, Debug)]
pub struct Scene {
    spec: SceneSpec,
    surface: Surface,
    rotations: Vec<Matrix3<f64>>,
    /// Pixels per world unit.
    pixel_scale: f64,
    /// Camera depth that maps to normalized depth 1.
    depth_scale: f64,
    /// Raw camera depth per view (NaN where the ray misses the surface).
    raw_depth: Vec<Vec<f64>>,
}

impl Scene {
    pub fn new(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let surface = Surface::from_spec(spec)?;
        let rotations: Vec<_> = spec.views.iter().map(ViewSpec::rotation).collect();
        let (w, h) = spec.resolution;
        let pixel_scale = (w.min(h) as f64 - 1.0) / (2.0 * IMAGE_MARGIN);
        let mut scene = Scene {
            spec: spec.clone(),
            surface,
            rotations,
            pixel_scale,
            depth_scale: 1.0,
            raw_depth: Vec::new(),
        };
        scene.raw_depth = (0..spec.views.len()).map(|i| scene.cast_view(i)).collect();
        let max_abs = scene
            .raw_depth
            .iter()
            .flatten()
            .filter(|z| !z.is_nan())
            .fold(0.0f64, |m, z| m.max(z.abs()));
        // Headroom keeps ground truth strictly inside the open range.
        scene.depth_scale = (1.05 * max_abs).max(1e-3);
        Ok(scene)
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn width(&self) -> usize {
        self.spec.resolution.0
    }

    pub fn height(&self) -> usize {
        self.spec.resolution.1
    }

    pub fn view_count(&self) -> usize {
        self.spec.views.len()
    }

    pub fn depth_scale(&self) -> f64 {
        self.depth_scale
    }

    /// Surface height in world coordinates.
    pub fn surface_height(&self, u: f64, v: f64) -> f64 {
        self.surface.height(u, v)
    }

    fn centre(&self) -> (f64, f64) {
        ((self.width() as f64 - 1.0) / 2.0, (self.height() as f64 - 1.0) / 2.0)
    }

    /// Camera-plane coordinates of a pixel centre.
    pub fn pixel_to_camera(&self, px: f64, py: f64) -> (f64, f64) {
        let (cx, cy) = self.centre();
        ((px - cx) / self.pixel_scale, (py - cy) / self.pixel_scale)
    }

    fn check_view(&self, view: usize) -> Result<()> {
        if view < self.view_count() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "view index {view} out of range for {} views",
                self.view_count()
            )))
        }
    }

    fn cast_view(&self, view: usize) -> Vec<f64> {
        let (w, h) = self.spec.resolution;
        let mut out = vec![f64::NAN; w * h];
        for py in 0..h {
            for px in 0..w {
                if let Some(z) = self.cast_ray(view, px as f64, py as f64) {
                    out[py * w + px] = z;
                }
            }
        }
        out
    }

    /// First intersection of the pixel's viewing ray with the surface, as a
    /// camera depth (larger is nearer), or `None` if the ray misses.
    fn cast_ray(&self, view: usize, px: f64, py: f64) -> Option<f64> {
        let r_t = self.rotations[view].transpose();
        let (xc, yc) = self.pixel_to_camera(px, py);
        let origin = r_t * Vector3::new(xc, yc, 0.0);
        let dir = r_t * Vector3::new(0.0, 0.0, 1.0);

        // Depth interval where the ray is over the unit square.
        let reach = (2.0 + self.surface.height_bound().powi(2)).sqrt() + 1e-6;
        let (mut lo, mut hi) = (-reach, reach);
        for axis in 0..2 {
            let (o, d) = (origin[axis], dir[axis]);
            if d.abs() < 1e-15 {
                if o.abs() > 1.0 {
                    return None;
                }
            } else {
                let (a, b) = ((-1.0 - o) / d, (1.0 - o) / d);
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        if lo > hi {
            return None;
        }
        let gap = |z: f64| {
            let p = origin + dir * z;
            p[2] - self.surface.height(p[0].clamp(-1.0, 1.0), p[1].clamp(-1.0, 1.0))
        };

        // March from the camera side (high z) towards the back.
        let step = (hi - lo) / RAY_STEPS as f64;
        let mut z_prev = hi;
        let mut g_prev = gap(hi);
        if g_prev == 0.0 {
            return Some(hi);
        }
        for k in 1..=RAY_STEPS {
            let z = if k == RAY_STEPS { lo } else { hi - step * k as f64 };
            let g = gap(z);
            if g == 0.0 {
                return Some(z);
            }
            if (g < 0.0) != (g_prev < 0.0) {
                let (mut a, mut b, mut ga) = (z, z_prev, g);
                for _ in 0..BISECTIONS {
                    let m = 0.5 * (a + b);
                    if m == a || m == b {
                        break;
                    }
                    let gm = gap(m);
                    if gm == 0.0 {
                        return Some(m);
                    }
                    if (gm < 0.0) == (ga < 0.0) {
                        a = m;
                        ga = gm;
                    } else {
                        b = m;
                    }
                }
                return Some(0.5 * (a + b));
            }
            z_prev = z;
            g_prev = g;
        }
        None
    }

    /// Normalized depth of a view; background pixels hold [`BACKGROUND_DEPTH`].
    pub fn render_depth(&self, view: usize) -> Result<DepthField> {
        self.check_view(view)?;
        let values = self.raw_depth[view]
            .iter()
            .map(|z| {
                if z.is_nan() {
                    BACKGROUND_DEPTH
                } else {
                    z / self.depth_scale
                }
            })
            .collect();
        DepthField::from_values(self.width(), self.height(), values)
    }

    /// Pixels of a view whose ray hits the surface.
    pub fn surface_mask(&self, view: usize) -> Result<Mask> {
        self.check_view(view)?;
        Mask::new(
            self.width(),
            self.height(),
            self.raw_depth[view].iter().map(|z| !z.is_nan()).collect(),
        )
    }

    /// Homogeneous map from `[camera x, camera y, camera z, 1]` to the lifted
    /// pixel `[px, py, d, 1]` of any view.
    fn lift_from_camera(&self) -> Matrix4<f64> {
        let (cx, cy) = self.centre();
        let k = self.pixel_scale;
        Matrix4::new(
            k,
            0.0,
            0.0,
            cx,
            0.0,
            k,
            0.0,
            cy,
            0.0,
            0.0,
            1.0 / self.depth_scale,
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }

    /// The 4x4 map taking a lifted pixel of view `from` to the lifted pixel of
    /// the same surface point in view `to`.
    pub fn view_transform(&self, from: usize, to: usize) -> Result<Matrix4<f64>> {
        self.check_view(from)?;
        self.check_view(to)?;
        let to_lifted = self.lift_from_camera();
        let from_lifted = to_lifted.try_inverse().expect("lift map is invertible");
        let mut rel = Matrix4::identity();
        rel.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.rotations[to] * self.rotations[from].transpose()));
        Ok(to_lifted * rel * from_lifted)
    }

    /// Ground-truth affine camera from view `from` to view `to`.
    pub fn ground_truth_camera(&self, from: usize, to: usize) -> Result<AffineCamera> {
        let t = self.view_transform(from, to)?;
        AffineCamera::new(t.fixed_view::<2, 4>(0, 0).into_owned())
    }

    fn pair_rng(&self, src: usize, tgt: usize, n: usize) -> ChaCha8Rng {
        let mix = self
            .spec
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((src as u64) << 40 ^ (tgt as u64) << 20 ^ n as u64);
        ChaCha8Rng::seed_from_u64(mix)
    }

    fn pair_from_pixels(&self, src: usize, tgt: usize, pixels: &[usize]) -> Result<CorrespondenceSet> {
        let depth = self.render_depth(src)?;
        let cam = self.ground_truth_camera(src, tgt)?;
        let w = self.width();
        let source: Vec<Pixel2> = pixels
            .iter()
            .map(|&i| Pixel2::new((i % w) as f64, (i / w) as f64))
            .collect();
        let target = source
            .iter()
            .zip(pixels)
            .map(|(s, &i)| cam.project(&HPoint3::new(s.x, s.y, depth.values()[i])))
            .collect();
        CorrespondenceSet::new(source, target)
    }

    fn check_pair(&self, src: usize, tgt: usize) -> Result<()> {
        self.check_view(src)?;
        self.check_view(tgt)?;
        if src == tgt {
            return Err(Error::InvalidInput("source and target views must differ".into()));
        }
        Ok(())
    }

    /// `n_points` distinct visible source pixels, sampled uniformly (seeded),
    /// paired with their exact locations in the target view.
    pub fn generate_correspondences(&self, src: usize, tgt: usize, n_points: usize) -> Result<CorrespondenceSet> {
        self.check_pair(src, tgt)?;
        if n_points < 4 {
            return Err(Error::InvalidInput(format!("need at least 4 points, got {n_points}")));
        }
        let visible = self.visible_pixels(src)?;
        if visible.len() < n_points {
            return Err(Error::InsufficientSupport {
                requested: n_points,
                available: visible.len(),
            });
        }
        let mut rng = self.pair_rng(src, tgt, n_points);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, visible.len(), n_points)
            .into_iter()
            .map(|i| visible[i])
            .collect();
        picked.sort_unstable();
        self.pair_from_pixels(src, tgt, &picked)
    }

    /// Every visible source pixel paired with its target location.
    pub fn dense_correspondences(&self, src: usize, tgt: usize) -> Result<CorrespondenceSet> {
        self.check_pair(src, tgt)?;
        let visible = self.visible_pixels(src)?;
        if visible.len() < 4 {
            return Err(Error::InsufficientSupport {
                requested: 4,
                available: visible.len(),
            });
        }
        self.pair_from_pixels(src, tgt, &visible)
    }

    fn visible_pixels(&self, view: usize) -> Result<Vec<usize>> {
        Ok(self
            .surface_mask(view)?
            .bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| i)
            .collect())
    }
}

pub fn render_depth(spec: &SceneSpec, view_index: usize) -> Result<DepthField> {
    Scene::new(spec)?.render_depth(view_index)
}

pub fn generate_correspondences(
    spec: &SceneSpec,
    src_view: usize,
    tgt_view: usize,
    n_points: usize,
) -> Result<CorrespondenceSet> {
    Scene::new(spec)?.generate_correspondences(src_view, tgt_view, n_points)
}

/// Result of [`corrupt_tracked`]: the corrupted set and which rows were
/// turned into outliers.
#[derive(Clone, Debug)]
pub struct Corrupted {
    pub corr: CorrespondenceSet,
    pub outliers: Vec<bool>,
}

/// Adds isotropic Gaussian noise to every target and displaces a
/// `ceil(fraction * N)` subset by `outlier_magnitude` in a random direction.
pub fn corrupt(corr: &CorrespondenceSet, c: &CorruptionSpec) -> Result<CorrespondenceSet> {
    Ok(corrupt_tracked(corr, c)?.corr)
}

pub fn corrupt_tracked(corr: &CorrespondenceSet, c: &CorruptionSpec) -> Result<Corrupted> {
    c.validate()?;
    let n = corr.len();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let noise = Normal::new(0.0, c.gaussian_sigma).map_err(|e| Error::InvalidInput(format!("gaussian sigma: {e}")))?;
    let mut target: Vec<Pixel2> = corr
        .target()
        .iter()
        .map(|t| {
            if c.gaussian_sigma > 0.0 {
                Pixel2::new(t.x + noise.sample(&mut rng), t.y + noise.sample(&mut rng))
            } else {
                *t
            }
        })
        .collect();
    // Guard against 0.2 * 100 = 20.000000000000004 style round-up.
    let count = ((c.outlier_fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut outliers = vec![false; n];
    if count > 0 {
        for i in rand::seq::index::sample(&mut rng, n, count) {
            let theta = rng.random_range(0.0..2.0 * PI);
            target[i].x += c.outlier_magnitude * theta.cos();
            target[i].y += c.outlier_magnitude * theta.sin();
            outliers[i] = true;
        }
    }
    Ok(Corrupted {
        corr: CorrespondenceSet::new(corr.source().to_vec(), target)?,
        outliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::lift;

    fn spec(kind: SurfaceKind, params: Vec<f64>, views: Vec<ViewSpec>) -> SceneSpec {
        SceneSpec {
            surface_kind: kind,
            surface_params: params,
            resolution: (24, 24),
            views,
            seed: 3,
        }
    }

    fn two_views() -> Vec<ViewSpec> {
        vec![ViewSpec::new(0.0, 0.0), ViewSpec::new(20.0, 10.0)]
    }

    #[test]
    fn hemisphere_frontal_is_symmetric_and_peaks_at_centre() {
        let s = Scene::new(&spec(SurfaceKind::Hemisphere, vec![0.8], two_views())).unwrap();
        let d = s.render_depth(0).unwrap();
        let n = 24;
        for y in 0..n {
            for x in 0..n {
                let v = d.get(x, y).unwrap();
                assert!((v - d.get(n - 1 - x, y).unwrap()).abs() < 1e-6);
                assert!((v - d.get(x, n - 1 - y).unwrap()).abs() < 1e-6);
                assert!((v - d.get(y, x).unwrap()).abs() < 1e-6);
            }
        }
        let centre = d.get(11, 11).unwrap();
        let rim = d.get(0, 0).unwrap();
        assert!(centre > rim);
        assert!(d.values().iter().all(|v| *v <= centre + 1e-12));
    }

    #[test]
    fn flat_ridges_render_constant() {
        let s = Scene::new(&spec(
            SurfaceKind::RidgeMix,
            vec![0.0, 3.0, 0.0],
            vec![ViewSpec::new(0.0, 0.0); 2],
        ))
        .unwrap();
        let d = s.render_depth(0).unwrap();
        let mask = s.surface_mask(0).unwrap();
        let vals: Vec<f64> = d
            .values()
            .iter()
            .zip(&mask.bits)
            .filter(|(_, m)| **m)
            .map(|(v, _)| *v)
            .collect();
        assert!(!vals.is_empty());
        assert!(vals.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn saddle_matches_closed_form() {
        let s = Scene::new(&spec(SurfaceKind::Saddle, vec![0.4], two_views())).unwrap();
        let d = s.render_depth(0).unwrap();
        let mask = s.surface_mask(0).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                if !mask.bits[y * 24 + x] {
                    continue;
                }
                let (u, v) = s.pixel_to_camera(x as f64, y as f64);
                let expect = 0.4 * (u * u - v * v) / s.depth_scale();
                assert!((d.get(x, y).unwrap() - expect).abs() < 1e-10);
            }
        }
        // Concave along one axis, convex along the other.
        let row: Vec<f64> = (4..20).map(|x| d.get(x, 11).unwrap()).collect();
        let col: Vec<f64> = (4..20).map(|y| d.get(11, y).unwrap()).collect();
        assert!(row[0] > row[7] && row[15] > row[8]);
        assert!(col[0] < col[7] && col[15] < col[8]);
    }

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let sp = spec(SurfaceKind::GaussianBumps, vec![], two_views());
        let a = render_depth(&sp, 1).unwrap();
        let b = render_depth(&sp, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn correspondences_reproject_exactly() {
        let sp = spec(SurfaceKind::RidgeMix, vec![], two_views());
        let s = Scene::new(&sp).unwrap();
        let corr = s.generate_correspondences(0, 1, 50).unwrap();
        assert_eq!(corr.len(), 50);
        let depth = s.render_depth(0).unwrap();
        let cam = s.ground_truth_camera(0, 1).unwrap();
        for (src, tgt) in corr.source().iter().zip(corr.target()) {
            let r = cam.project(&lift(src, &depth).unwrap()).distance(tgt);
            assert!(r < 1e-10);
        }
        // Every lifted source point sits on the surface in world coordinates.
        let r_t = s.rotations[0].transpose();
        for src in corr.source() {
            let d = lift(src, &depth).unwrap().d;
            let (xc, yc) = s.pixel_to_camera(src.x, src.y);
            let world = r_t * Vector3::new(xc, yc, d * s.depth_scale());
            assert!((world[2] - s.surface_height(world[0], world[1])).abs() < 1e-9);
        }
    }

    #[test]
    fn transforms_compose() {
        let sp = spec(
            SurfaceKind::Saddle,
            vec![],
            vec![
                ViewSpec::new(0.0, 0.0),
                ViewSpec::new(30.0, -5.0),
                ViewSpec::new(350.0, 20.0),
            ],
        );
        let s = Scene::new(&sp).unwrap();
        let ab = s.view_transform(0, 1).unwrap();
        let bc = s.view_transform(1, 2).unwrap();
        let ac = s.view_transform(0, 2).unwrap();
        assert!((bc * ab - ac).abs().max() < 1e-10);
    }

    #[test]
    fn pair_preconditions() {
        let s = Scene::new(&spec(SurfaceKind::Saddle, vec![], two_views())).unwrap();
        assert!(s.generate_correspondences(0, 0, 10).is_err());
        assert!(s.generate_correspondences(0, 1, 3).is_err());
        assert!(s.generate_correspondences(0, 5, 10).is_err());
        assert!(matches!(
            s.generate_correspondences(0, 1, 100_000),
            Err(Error::InsufficientSupport { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        let mut sp = spec(SurfaceKind::Saddle, vec![], vec![ViewSpec::new(0.0, 0.0)]);
        assert!(sp.validate().is_err());
        sp.views.push(ViewSpec::new(360.0, 0.0));
        assert!(sp.validate().is_err());
        sp.views[1] = ViewSpec::new(10.0, 50.0);
        assert!(sp.validate().is_err());
        sp.views[1] = ViewSpec::new(10.0, 0.0);
        sp.resolution = (15, 40);
        assert!(sp.validate().is_err());
    }

    #[test]
    fn json_field_names() {
        let text = r#"{"surface_kind":"gaussian-bumps","surface_params":[0.5,0.3,0.0,0.0],
            "resolution":[20,18],"views":[{"azimuth":0,"elevation":0},{"azimuth":15,"elevation":-10}],"seed":4}"#;
        let sp = SceneSpec::from_json(text).unwrap();
        assert_eq!(sp.surface_kind, SurfaceKind::GaussianBumps);
        assert_eq!(sp.resolution, (20, 18));
        assert_eq!(sp.views[1], ViewSpec::new(15.0, -10.0));
        assert!(SceneSpec::from_json(r#"{"surface_kind":"cube"}"#).is_err());
    }

    #[test]
    fn corruption_identity_and_full() {
        let s = Scene::new(&spec(SurfaceKind::Hemisphere, vec![], two_views())).unwrap();
        let corr = s.generate_correspondences(0, 1, 40).unwrap();
        let same = corrupt(&corr, &CorruptionSpec::default()).unwrap();
        assert_eq!(same, corr);

        let all = corrupt_tracked(
            &corr,
            &CorruptionSpec {
                gaussian_sigma: 0.0,
                outlier_fraction: 1.0,
                outlier_magnitude: 12.0,
                seed: 5,
            },
        )
        .unwrap();
        assert!(all.outliers.iter().all(|o| *o));
        for (a, b) in all.corr.target().iter().zip(corr.target()) {
            assert!((a.distance(b) - 12.0).abs() < 1e-9);
        }
        assert_eq!(all.corr.source(), corr.source());

        let part = corrupt_tracked(
            &corr,
            &CorruptionSpec {
                gaussian_sigma: 0.5,
                outlier_fraction: 0.2,
                outlier_magnitude: 20.0,
                seed: 6,
            },
        )
        .unwrap();
        assert_eq!(part.outliers.iter().filter(|o| **o).count(), 8);
    }
}
