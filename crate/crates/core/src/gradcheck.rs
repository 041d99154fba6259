//! Finite-difference verification of the analytic depth gradient.
//!
//! Each instance draws a random depth grid, `K` distinct source pixels, a
//! random affine camera and noisy targets with a share of gross outliers.
//! The support set comes from one RANSAC run and is then frozen, so the
//! loss is a smooth function of depth and central differences apply.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{lift_all, AffineCamera, CorrespondenceSet, DepthField, HPoint3, Pixel2};
use crate::grad::{masked_loss, masked_loss_and_grad, LossScope};
use crate::robust::RobustParams;
use crate::solver::{ransac_fit, RansacConfig};

pub const FD_STEP: f64 = 1e-5;
pub const PASS_TOLERANCE: f64 = 2e-3;
const GRID: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceResult {
    pub index: usize,
    pub k: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub instances: Vec<InstanceResult>,
    pub passed: bool,
}

/// The default suite: 50 instances, the first at the minimal size `K = 8`,
/// the rest with `K` drawn from `8..=200`.
pub fn default_sizes(seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_517e);
    std::iter::once(8)
        .chain((1..50).map(|_| rng.random_range(8..=200)))
        .collect()
}

struct Instance {
    corr: CorrespondenceSet,
    depth: DepthField,
    support: Vec<bool>,
}

fn build_instance(k: usize, rng: &mut ChaCha8Rng, robust: &RobustParams) -> Result<Instance> {
    let depth = DepthField::from_values(
        GRID,
        GRID,
        (0..GRID * GRID).map(|_| rng.random_range(-0.9..0.9)).collect(),
    )?;
    let cells = rand::seq::index::sample(rng, GRID * GRID, k).into_vec();
    let source: Vec<Pixel2> = cells
        .iter()
        .map(|c| Pixel2::new((c % GRID) as f64, (c / GRID) as f64))
        .collect();
    let mut entry = |scale: f64| rng.random_range(-scale..scale);
    let cam = AffineCamera::from_rows([
        [1.0 + entry(0.2), entry(0.2), 4.0 + entry(2.0), entry(3.0)],
        [entry(0.2), 1.0 + entry(0.2), -3.0 + entry(2.0), entry(3.0)],
    ])?;
    let noise = Normal::new(0.0, 0.5).expect("valid sigma");
    let target: Vec<Pixel2> = source
        .iter()
        .map(|s| {
            let p = cam.project(&HPoint3::new(s.x, s.y, depth.get(s.x as usize, s.y as usize).unwrap()));
            if rng.random_bool(0.15) {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                Pixel2::new(p.x + 20.0 * theta.cos(), p.y + 20.0 * theta.sin())
            } else {
                Pixel2::new(p.x + noise.sample(rng), p.y + noise.sample(rng))
            }
        })
        .collect();
    let corr = CorrespondenceSet::new(source, target)?;
    let (points, _) = lift_all(&corr, &depth)?;
    let ransac = RansacConfig {
        seed: rng.random(),
        ..RansacConfig::default()
    };
    let support = ransac_fit(&points, corr.target(), &ransac)?.support_mask;
    robust.validate()?;
    Ok(Instance { corr, depth, support })
}

/// `|a - n| / max(|a|, |n|, 1e-4 * max|n| + 1e-12)`, maximized over the
/// depth cells the correspondences read.
fn check_instance(inst: &Instance, robust: &RobustParams, corrupt: bool) -> Result<f64> {
    let scope = LossScope::All;
    let analytic = masked_loss_and_grad(&inst.corr, &inst.depth, &inst.support, robust, scope)?;
    let mut analytic = analytic.per_depth.values;
    if corrupt {
        for g in analytic.iter_mut() {
            *g *= 1.01;
        }
    }
    let (_, cells) = lift_all(&inst.corr, &inst.depth)?;
    let mut numeric = Vec::with_capacity(cells.len());
    for &c in &cells {
        let eval = |delta: f64| -> Result<f64> {
            let mut d = inst.depth.clone();
            d.update_clipped(|i, v| if i == c { v + delta } else { v })?;
            masked_loss(&inst.corr, &d, &inst.support, robust, scope)
        };
        numeric.push((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP));
    }
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-4 * scale + 1e-12;
    Ok(cells
        .iter()
        .zip(&numeric)
        .map(|(&c, &n)| {
            let a = analytic[c];
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max))
}

/// Runs one instance per entry of `sizes`. With `corrupt_gradient` the
/// analytic gradient is scaled by 1.01 before comparison, which must fail.
pub fn run_gradcheck(
    seed: u64,
    sizes: &[usize],
    robust: &RobustParams,
    corrupt_gradient: bool,
) -> Result<GradcheckReport> {
    let mut instances = Vec::with_capacity(sizes.len());
    for (index, &k) in sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
        let inst = build_instance(k, &mut rng, robust)?;
        let max_rel_error = check_instance(&inst, robust, corrupt_gradient)?;
        instances.push(InstanceResult {
            index,
            k,
            max_rel_error,
            passed: max_rel_error <= PASS_TOLERANCE,
        });
    }
    let passed = instances.iter().all(|r| r.passed);
    Ok(GradcheckReport { instances, passed })
}
