//! Affine camera estimation: SVD pseudo-inverse least squares and a seeded,
//! fixed-budget RANSAC around it.

use nalgebra::{DMatrix, Matrix2x4, Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineCamera, HPoint3, Pixel2};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier threshold on the reprojection distance, in pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    pub min_sample_size: usize,
    pub seed: u64,
    /// Number of refit rounds after hypothesis selection. One round solves on
    /// the winning consensus set and recomputes the mask; further rounds
    /// repeat that until the mask stops changing.
    pub refit_rounds: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 2.0,
            max_iterations: 256,
            min_sample_size: 4,
            seed: 0,
            refit_rounds: 1,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidInput(format!(
                "ransac threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("ransac needs at least one iteration".into()));
        }
        if self.min_sample_size < 4 {
            return Err(Error::InvalidInput(format!(
                "minimal sample size is 4, got {}",
                self.min_sample_size
            )));
        }
        if self.refit_rounds == 0 {
            return Err(Error::InvalidInput("refit_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacOutcome {
    pub camera: AffineCamera,
    /// Final consensus: points within the threshold under `camera`.
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    /// The points `camera` was solved from. Equal to `inlier_mask` unless the
    /// last refit moved points across the threshold.
    pub support_mask: Vec<bool>,
    /// Sampled hypotheses skipped because the sample was rank deficient.
    pub degenerate_samples: usize,
}

/// Thin SVD of the stacked K x 4 point matrix `A = U diag(sigma) V^T`
/// (one lifted point per row).
#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// K x 4, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending.
    pub sigma: Vector4<f64>,
    /// 4 x 4 orthogonal.
    pub v: Matrix4<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        let top = self.sigma[0];
        if !(top > 0.0) {
            return 0;
        }
        self.sigma.iter().filter(|s| **s > RANK_TOLERANCE * top).count()
    }

    /// Moore-Penrose pseudo-inverse `V diag(sigma)^+ U^T` (4 x K).
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let top = self.sigma[0];
        let mut scaled_v = DMatrix::from_column_slice(4, 4, self.v.as_slice());
        for j in 0..4 {
            let s = self.sigma[j];
            let inv = if s > RANK_TOLERANCE * top { 1.0 / s } else { 0.0 };
            scaled_v.column_mut(j).scale_mut(inv);
        }
        scaled_v * self.u.transpose()
    }
}

/// Stacks lifted points as rows of a K x 4 matrix.
pub fn point_matrix(points: &[HPoint3]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 4, |i, j| match j {
        0 => points[i].x,
        1 => points[i].y,
        2 => points[i].d,
        _ => 1.0,
    })
}

pub(crate) fn target_matrix(targets: &[Pixel2]) -> DMatrix<f64> {
    DMatrix::from_fn(
        targets.len(),
        2,
        |i, j| {
            if j == 0 {
                targets[i].x
            } else {
                targets[i].y
            }
        },
    )
}

/// SVD of the point matrix with singular values sorted descending.
pub fn decompose(points: &[HPoint3]) -> Result<SvdFactors> {
    if points.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    let a = point_matrix(points);
    let svd = a.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration { rank: 0 }),
    };
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let k = points.len();
    let mut u_sorted = DMatrix::zeros(k, 4);
    let mut v = Matrix4::zeros();
    let mut sigma = Vector4::zeros();
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v.set_column(dst, &v_t.row(src).transpose());
        sigma[dst] = svd.singular_values[src];
    }
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite lifted points".into()));
    }
    Ok(SvdFactors { u: u_sorted, sigma, v })
}

/// Least-squares affine camera `P` minimizing `sum |P X_i - x_i|^2`, solved as
/// `P^T = A^+ x^T` with the pseudo-inverse taken from the SVD. The factors are
/// returned for reuse by the gradient.
pub fn solve_lstsq(points: &[HPoint3], targets: &[Pixel2]) -> Result<(AffineCamera, SvdFactors)> {
    if points.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} targets",
            points.len(),
            targets.len()
        )));
    }
    let svd = decompose(points)?;
    let rank = svd.rank();
    if rank < 4 {
        return Err(Error::DegenerateConfiguration { rank });
    }
    let b = target_matrix(targets);
    // P^T = V Sigma^-1 (U^T b), avoiding the explicit K-wide pseudo-inverse.
    let mut c = svd.u.transpose() * &b;
    for j in 0..4 {
        let inv = 1.0 / svd.sigma[j];
        c.row_mut(j).scale_mut(inv);
    }
    let pt = DMatrix::from_column_slice(4, 4, svd.v.as_slice()) * c;
    let camera = AffineCamera::new(Matrix2x4::from_fn(|r, col| pt[(col, r)]))?;
    Ok((camera, svd))
}

struct Hypothesis {
    iteration: usize,
    inliers: usize,
    mean_residual: f64,
    mask: Vec<bool>,
}

fn consensus(camera: &AffineCamera, points: &[HPoint3], targets: &[Pixel2], threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut count = 0;
    let mut sum = 0.0;
    let mask = points
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let r = camera.project(p).distance(t);
            let inside = r < threshold;
            if inside {
                count += 1;
                sum += r;
            }
            inside
        })
        .collect();
    let mean = if count > 0 { sum / count as f64 } else { f64::INFINITY };
    (mask, count, mean)
}

fn subset<T: Copy>(items: &[T], mask: &[bool]) -> Vec<T> {
    items
        .iter()
        .zip(mask)
        .filter(|(_, keep)| **keep)
        .map(|(v, _)| *v)
        .collect()
}

/// Draws the minimal samples RANSAC will evaluate, one per iteration.
pub fn draw_samples(n: usize, cfg: &RansacConfig) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.max_iterations)
        .map(|_| rand::seq::index::sample(&mut rng, n, cfg.min_sample_size).into_vec())
        .collect()
}

/// RANSAC over affine cameras with a fixed iteration budget.
///
/// Hypotheses are ranked by inlier count, then by lower mean inlier residual,
/// then by earlier iteration. The winner's consensus set is refit with
/// [`solve_lstsq`] and the final mask recomputed under the refit camera.
pub fn ransac_fit(points: &[HPoint3], targets: &[Pixel2], cfg: &RansacConfig) -> Result<RansacOutcome> {
    cfg.validate()?;
    if points.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} targets",
            points.len(),
            targets.len()
        )));
    }
    if points.len() < cfg.min_sample_size {
        return Err(Error::InvalidInput(format!(
            "ransac needs at least {} correspondences, got {}",
            cfg.min_sample_size,
            points.len()
        )));
    }
    let samples = draw_samples(points.len(), cfg);
    ransac_with_samples(points, targets, cfg, &samples)
}

/// [`ransac_fit`] with caller-provided minimal samples (indices into
/// `points`). Evaluation may run in parallel; selection is order-independent
/// of scheduling.
pub fn ransac_with_samples(
    points: &[HPoint3],
    targets: &[Pixel2],
    cfg: &RansacConfig,
    samples: &[Vec<usize>],
) -> Result<RansacOutcome> {
    cfg.validate()?;
    let evaluated: Vec<std::result::Result<Hypothesis, usize>> = samples
        .par_iter()
        .enumerate()
        .map(|(iteration, sample)| {
            let sp: Vec<HPoint3> = sample.iter().map(|&i| points[i]).collect();
            let st: Vec<Pixel2> = sample.iter().map(|&i| targets[i]).collect();
            match solve_lstsq(&sp, &st) {
                Ok((cam, _)) => {
                    let (mask, inliers, mean_residual) = consensus(&cam, points, targets, cfg.threshold);
                    Ok(Hypothesis {
                        iteration,
                        inliers,
                        mean_residual,
                        mask,
                    })
                }
                Err(Error::DegenerateConfiguration { rank }) => Err(rank),
                Err(_) => Err(0),
            }
        })
        .collect();

    let mut degenerate = 0;
    let mut best_rank = 0;
    let mut best: Option<Hypothesis> = None;
    for h in evaluated {
        match h {
            Err(rank) => {
                degenerate += 1;
                best_rank = best_rank.max(rank);
            }
            Ok(h) => {
                let better = match &best {
                    None => true,
                    Some(b) => h.inliers > b.inliers || (h.inliers == b.inliers && h.mean_residual < b.mean_residual),
                };
                if better {
                    best = Some(h);
                }
            }
        }
    }
    let best = best.ok_or(Error::DegenerateConfiguration { rank: best_rank })?;
    debug_assert!(best.iteration < samples.len());
    if best.inliers < cfg.min_sample_size {
        return Err(Error::NoConsensus {
            best: best.inliers,
            required: cfg.min_sample_size,
        });
    }

    let mut support = best.mask;
    let mut round = 0;
    loop {
        round += 1;
        let (camera, _) = solve_lstsq(&subset(points, &support), &subset(targets, &support))?;
        let (mask, count, _) = consensus(&camera, points, targets, cfg.threshold);
        let settled = mask == support;
        if round >= cfg.refit_rounds || settled || count < cfg.min_sample_size {
            if count < cfg.min_sample_size {
                return Err(Error::NoConsensus {
                    best: count,
                    required: cfg.min_sample_size,
                });
            }
            return Ok(RansacOutcome {
                camera,
                inlier_mask: mask,
                inlier_count: count,
                support_mask: support,
                degenerate_samples: degenerate,
            });
        }
        support = mask;
    }
}
