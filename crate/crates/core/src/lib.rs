//! Dense depth from sparse two-view correspondences.
//!
//! A depth field is lifted through pixel correspondences into homogeneous
//! points, an affine camera is fitted to them with RANSAC and a least-squares
//! solve, and the robust reprojection loss is differentiated back to every
//! depth value, including through the camera solve itself.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod grad;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod robust;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{AffineCamera, CorrespondenceSet, DepthField, HPoint3, Mask, Pixel2, ScalarGrid};
pub use grad::{loss_and_grad, LossGradient, LossScope};
pub use metrics::{align, evaluate, metrics, MetricReport};
pub use optim::{fit_depth, FitReport, InitMode, OptimConfig, StopReason};
pub use robust::{corr_loss, robust_weight, robust_weight_grad, RobustParams};
pub use scene::{Scene, SceneSpec, SurfaceKind, ViewSpec};
pub use solver::{ransac_fit, solve_lstsq, RansacConfig, RansacOutcome};
