//! Analytic gradient of the correspondence loss with respect to every depth
//! value, including the path through the least-squares camera.
//!
//! With the inlier set frozen, the camera is `P^T = A^+ b` where `A` stacks
//! the lifted inlier points (K x 4) and `b` their targets (K x 2). Depth
//! `d_i` only enters row `i`, column 2 of `A`, so `dA = e_i e_2^T`. The
//! derivative of the pseudo-inverse is assembled from the SVD differentials
//!
//! ```text
//! dS      = diag(U^T dA V)
//! dU      = U Wu + (I - U U^T) dA V S^-1
//! dV      = V Wv
//! Wu[a,b] = (s_b G[a,b] + s_a G[b,a]) / (s_b^2 - s_a^2),   G = U^T dA V
//! Wv[a,b] = (s_a G[a,b] + s_b G[b,a]) / (s_b^2 - s_a^2)
//! ```
//!
//! which is singular when two singular values coincide; that case is
//! reported as [`Error::IllConditionedJacobian`].

use nalgebra::{DMatrix, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{lift_all, AffineCamera, CorrespondenceSet, DepthField, HPoint3, Pixel2, ScalarGrid};
use crate::robust::RobustParams;
use crate::solver::{ransac_fit, solve_lstsq, target_matrix, RansacConfig, SvdFactors, RANK_TOLERANCE};

/// Minimum relative gap between singular values for the SVD differential.
pub const SINGULAR_GAP_TOLERANCE: f64 = 1e-8;

/// Which correspondences contribute to the loss once the camera is fitted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossScope {
    /// Every correspondence; the robust kernel caps outlier influence.
    #[default]
    All,
    /// Only the correspondences the camera was solved from.
    Inliers,
}

#[derive(Clone, Debug)]
pub struct LossGradient {
    /// dL/dd per pixel; zero wherever no correspondence reads depth.
    pub per_depth: ScalarGrid,
    pub loss_value: f64,
    pub camera: AffineCamera,
    /// Correspondences the camera was solved from.
    pub support_mask: Vec<bool>,
}

/// dP/dd_i for every inlier, as an 8 x K matrix. Row `r * 4 + c` holds the
/// derivative of `P[r, c]`; column `k` is with respect to the depth of the
/// `k`-th inlier point.
pub fn camera_jacobian(svd: &SvdFactors, inlier_points: &[HPoint3], inlier_targets: &[Pixel2]) -> Result<DMatrix<f64>> {
    let k = inlier_points.len();
    if inlier_targets.len() != k || svd.u.nrows() != k {
        return Err(Error::InvalidInput(format!(
            "svd of {} rows does not match {} points / {} targets",
            svd.u.nrows(),
            k,
            inlier_targets.len()
        )));
    }
    let s = svd.sigma;
    if !(s[3] > RANK_TOLERANCE * s[0]) {
        return Err(Error::IllConditionedJacobian(format!(
            "point matrix is rank deficient (singular values {:?})",
            s.as_slice()
        )));
    }
    for a in 0..4 {
        for b in a + 1..4 {
            if s[a] - s[b] <= SINGULAR_GAP_TOLERANCE * s[a] {
                return Err(Error::IllConditionedJacobian(format!(
                    "repeated singular values {} and {}",
                    s[a], s[b]
                )));
            }
        }
    }

    let u = &svd.u;
    let v = svd.v;
    let b = target_matrix(inlier_targets);
    // c = U^T b, residual = b - U c (the part of b outside the column space).
    let c_dyn = u.transpose() * &b;
    let c = Matrix4x2::from_fn(|r, col| c_dyn[(r, col)]);
    let fitted = u * &c_dyn;
    let inv_s = Vector4::from_fn(|i, _| 1.0 / s[i]);
    // The depth column of dA V is row 2 of V.
    let v_depth = Vector4::from_fn(|j, _| v[(2, j)]);

    let mut jac = DMatrix::zeros(8, k);
    for i in 0..k {
        let u_i = Vector4::from_fn(|a, _| u[(i, a)]);
        // G = U^T dA V = u_i v_depth^T.
        let g = u_i * v_depth.transpose();
        let mut wu = Matrix4::zeros();
        let mut wv = Matrix4::zeros();
        for a in 0..4 {
            for bb in 0..4 {
                if a == bb {
                    continue;
                }
                let denom = s[bb] * s[bb] - s[a] * s[a];
                wu[(a, bb)] = (s[bb] * g[(a, bb)] + s[a] * g[(bb, a)]) / denom;
                wv[(a, bb)] = (s[a] * g[(a, bb)] + s[bb] * g[(bb, a)]) / denom;
            }
        }
        let r_i = Vector2::new(b[(i, 0)] - fitted[(i, 0)], b[(i, 1)] - fitted[(i, 1)]);

        // dP^T = V [ Wv S^-1 c - S^-2 dS c + S^-1 (Wu^T c + S^-1 v_depth r_i^T) ].
        let s_inv_c = Matrix4x2::from_fn(|r, col| inv_s[r] * c[(r, col)]);
        let term_v = wv * s_inv_c;
        let term_s = Matrix4x2::from_fn(|r, col| -inv_s[r] * inv_s[r] * g[(r, r)] * c[(r, col)]);
        let du_t_b = wu.transpose() * c + Matrix4x2::from_fn(|r, col| inv_s[r] * v_depth[r] * r_i[col]);
        let term_u = Matrix4x2::from_fn(|r, col| inv_s[r] * du_t_b[(r, col)]);
        let dpt = v * (term_v + term_s + term_u);

        for row in 0..2 {
            for col in 0..4 {
                jac[(row * 4 + col, i)] = dpt[(col, row)];
            }
        }
    }
    Ok(jac)
}

/// Loss and gradient with the camera solved from a fixed support set.
///
/// This is the differentiable core of [`loss_and_grad`]: RANSAC only chooses
/// `support`, after which the loss is a smooth function of the depths.
pub fn masked_loss_and_grad(
    corr: &CorrespondenceSet,
    depth: &DepthField,
    support: &[bool],
    robust: &RobustParams,
    scope: LossScope,
) -> Result<LossGradient> {
    robust.validate()?;
    if support.len() != corr.len() {
        return Err(Error::InvalidInput(format!(
            "support mask has {} entries for {} correspondences",
            support.len(),
            corr.len()
        )));
    }
    let (points, cells) = lift_all(corr, depth)?;
    let targets = corr.target();
    let inlier_idx: Vec<usize> = (0..corr.len()).filter(|&i| support[i]).collect();
    let in_points: Vec<HPoint3> = inlier_idx.iter().map(|&i| points[i]).collect();
    let in_targets: Vec<Pixel2> = inlier_idx.iter().map(|&i| targets[i]).collect();
    let (camera, svd) = solve_lstsq(&in_points, &in_targets)?;
    let p = camera.matrix();

    let counted = |i: usize| scope == LossScope::All || support[i];
    let n = (0..corr.len()).filter(|&i| counted(i)).count();
    let inv_n = 1.0 / n as f64;

    let mut grad = vec![0.0; depth.values().len()];
    let mut loss = 0.0;
    // dL/dP accumulated over every counted residual.
    let mut dl_dp = Matrix2x4::zeros();
    let depth_col = Vector2::new(p[(0, 2)], p[(1, 2)]);
    for i in 0..corr.len() {
        if !counted(i) {
            continue;
        }
        let x = points[i].to_homogeneous();
        let proj = p * x;
        let r = Vector2::new(proj[0] - targets[i].x, proj[1] - targets[i].y);
        let dist = r.norm();
        loss += robust.residual_cost(dist);
        let g = r * (robust.residual_gain(dist) * inv_n);
        grad[cells[i]] += g.dot(&depth_col);
        dl_dp += g * x.transpose();
    }
    loss *= inv_n;

    if dl_dp.iter().any(|v| *v != 0.0) {
        let jac = camera_jacobian(&svd, &in_points, &in_targets)?;
        let flat: [f64; 8] = std::array::from_fn(|e| dl_dp[(e / 4, e % 4)]);
        for (k, &i) in inlier_idx.iter().enumerate() {
            let col = jac.column(k);
            let contrib: f64 = flat.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            grad[cells[i]] += contrib;
        }
    }

    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditionedJacobian("non-finite gradient".into()));
    }
    Ok(LossGradient {
        per_depth: ScalarGrid::new(depth.width(), depth.height(), grad)?,
        loss_value: loss,
        camera,
        support_mask: support.to_vec(),
    })
}

/// Loss value only, with the camera solved from `support`. Forward pass of
/// [`masked_loss_and_grad`].
pub fn masked_loss(
    corr: &CorrespondenceSet,
    depth: &DepthField,
    support: &[bool],
    robust: &RobustParams,
    scope: LossScope,
) -> Result<f64> {
    let (points, _) = lift_all(corr, depth)?;
    let targets = corr.target();
    let in_points: Vec<HPoint3> = (0..corr.len()).filter(|&i| support[i]).map(|i| points[i]).collect();
    let in_targets: Vec<Pixel2> = (0..corr.len()).filter(|&i| support[i]).map(|i| targets[i]).collect();
    let (camera, _) = solve_lstsq(&in_points, &in_targets)?;
    let mut loss = 0.0;
    let mut n = 0;
    for i in 0..corr.len() {
        if scope == LossScope::All || support[i] {
            loss += robust.residual_cost(camera.project(&points[i]).distance(&targets[i]));
            n += 1;
        }
    }
    Ok(loss / n as f64)
}

/// Runs RANSAC on the lifted correspondences, then returns the correspondence
/// loss over all of them and its gradient with respect to every depth value.
///
/// Inlier selection is not differentiated. Every correspondence contributes
/// through its own lifted point; the correspondences the camera was solved
/// from also contribute through the camera.
pub fn loss_and_grad(
    corr: &CorrespondenceSet,
    depth: &DepthField,
    ransac_cfg: &RansacConfig,
    robust: &RobustParams,
) -> Result<LossGradient> {
    loss_and_grad_scoped(corr, depth, ransac_cfg, robust, LossScope::All)
}

pub fn loss_and_grad_scoped(
    corr: &CorrespondenceSet,
    depth: &DepthField,
    ransac_cfg: &RansacConfig,
    robust: &RobustParams,
    scope: LossScope,
) -> Result<LossGradient> {
    let (points, _) = lift_all(corr, depth)?;
    let outcome = ransac_fit(&points, corr.target(), ransac_cfg)?;
    masked_loss_and_grad(corr, depth, &outcome.support_mask, robust, scope)
}
