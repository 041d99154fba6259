//! Direct first-order optimization of a depth grid against the
//! correspondence loss: SGD with momentum, per-element gradient clamping,
//! and clipping to `[-1, 1]` after every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{lift_all, CorrespondenceSet, DepthField};
use crate::grad::{loss_and_grad, masked_loss, LossScope};
use crate::robust::RobustParams;
use crate::solver::{ransac_fit, RansacConfig};

/// A training loss at or below this is treated as converged.
pub const ZERO_LOSS: f64 = 1e-20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    Zeros,
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_clamp: f64,
    pub max_iters: usize,
    /// Iterations without improvement of the monitored loss before stopping.
    pub patience: usize,
    pub init_mode: InitMode,
    pub seed: u64,
    /// Weight of the Laplacian smoothness term; 0 disables it.
    pub smoothness: f64,
    /// Amplitude of the seeded uniform noise added to a zeros init. A
    /// perfectly flat field lifts to rank-deficient points and has no
    /// well-defined camera.
    pub init_jitter: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            grad_clamp: 5.0,
            max_iters: 5000,
            patience: 50,
            init_mode: InitMode::Zeros,
            seed: 0,
            smoothness: 0.0,
            init_jitter: 1e-6,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.grad_clamp > 0.0) {
            return bad(format!("grad_clamp must be positive, got {}", self.grad_clamp));
        }
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return bad(format!("smoothness must be non-negative, got {}", self.smoothness));
        }
        if !(0.0..=1.0).contains(&self.init_jitter) {
            return bad(format!("init_jitter must lie in [0, 1], got {}", self.init_jitter));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        Ok(())
    }

    /// Starting depth field for a `width` x `height` grid.
    pub fn initial_depth(&self, width: usize, height: usize) -> Result<DepthField> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = width * height;
        let values = match self.init_mode {
            InitMode::Zeros if self.init_jitter > 0.0 => (0..n)
                .map(|_| rng.random_range(-self.init_jitter..=self.init_jitter))
                .collect(),
            InitMode::Zeros => vec![0.0; n],
            InitMode::UniformRandom => (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        };
        DepthField::from_values(width, height, values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Plateau,
    MaxIters,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// NaN (`null` in JSON) when the first evaluation already failed.
    #[serde(deserialize_with = "loss_or_nan")]
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    /// Holdout loss per iteration, when a holdout set was given.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub holdout_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

fn loss_or_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `iter,loss` CSV of the training trace.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

/// Correspondence loss of `corr` under its own RANSAC camera; no gradient.
pub fn evaluate_loss(
    corr: &CorrespondenceSet,
    depth: &DepthField,
    ransac_cfg: &RansacConfig,
    robust: &RobustParams,
) -> Result<f64> {
    let (points, _) = lift_all(corr, depth)?;
    let outcome = ransac_fit(&points, corr.target(), ransac_cfg)?;
    masked_loss(corr, depth, &outcome.support_mask, robust, LossScope::All)
}

/// `lambda / 2 * sum over 4-neighbour edges of (d_a - d_b)^2`, and its
/// gradient `lambda * (graph Laplacian of d)` added into `grad`.
pub fn smoothness_term(depth: &DepthField, lambda: f64, grad: &mut [f64]) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let (w, h) = (depth.width(), depth.height());
    let d = depth.values();
    let mut loss = 0.0;
    let mut edge = |a: usize, b: usize, grad: &mut [f64]| {
        let diff = d[a] - d[b];
        loss += 0.5 * lambda * diff * diff;
        grad[a] += lambda * diff;
        grad[b] -= lambda * diff;
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                edge(i, i + 1, grad);
            }
            if y + 1 < h {
                edge(i, i + w, grad);
            }
        }
    }
    loss
}

fn check_pairs(pairs: &[(CorrespondenceSet, f64)], width: usize, height: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "fit_depth needs at least one correspondence set".into(),
        ));
    }
    let probe = DepthField::zeros(width, height)?;
    for (corr, weight) in pairs {
        if !(weight.is_finite() && *weight >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "pair weight must be non-negative, got {weight}"
            )));
        }
        lift_all(corr, &probe)?;
    }
    Ok(())
}

/// Fits a depth grid from `cfg`'s initial field. See [`fit_depth_from`].
pub fn fit_depth(
    pairs: &[(CorrespondenceSet, f64)],
    width: usize,
    height: usize,
    cfg: &OptimConfig,
    ransac_cfg: &RansacConfig,
    robust: &RobustParams,
    holdout: Option<&CorrespondenceSet>,
) -> Result<(DepthField, FitReport)> {
    cfg.validate()?;
    let init = cfg.initial_depth(width, height)?;
    fit_depth_from(init, pairs, cfg, ransac_cfg, robust, holdout)
}

/// SGD with momentum from `init`.
///
/// Each iteration evaluates the weighted training loss and its gradient,
/// records the loss, then checks the stopping rules before stepping. The
/// stopping rules are: training loss at zero, no improvement of the holdout
/// loss (or training loss, without a holdout) for `patience` iterations, or
/// `max_iters` evaluations. Precondition failures are returned as `Err`; a
/// solver failure mid-run ends the fit with [`StopReason::Error`] and the
/// partial trace.
pub fn fit_depth_from(
    init: DepthField,
    pairs: &[(CorrespondenceSet, f64)],
    cfg: &OptimConfig,
    ransac_cfg: &RansacConfig,
    robust: &RobustParams,
    holdout: Option<&CorrespondenceSet>,
) -> Result<(DepthField, FitReport)> {
    cfg.validate()?;
    ransac_cfg.validate()?;
    robust.validate()?;
    let (width, height) = (init.width(), init.height());
    check_pairs(pairs, width, height)?;
    if let Some(h) = holdout {
        lift_all(h, &init)?;
    }

    let mut depth = init;
    let mut velocity = vec![0.0; width * height];
    let mut trace = Vec::new();
    let mut holdout_trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;

    let finish = |depth: DepthField, trace: Vec<f64>, holdout_trace, stop, error| {
        let report = FitReport {
            final_loss: trace.last().copied().unwrap_or(f64::NAN),
            iterations_run: trace.len(),
            loss_trace: trace,
            stop_reason: stop,
            holdout_trace,
            error,
        };
        Ok((depth, report))
    };

    loop {
        let step = (|| -> Result<(f64, Vec<f64>, Option<f64>)> {
            let evals: Vec<Result<_>> = pairs
                .par_iter()
                .map(|(corr, _)| loss_and_grad(corr, &depth, ransac_cfg, robust))
                .collect();
            let mut loss = 0.0;
            let mut grad = vec![0.0; width * height];
            for (eval, (_, weight)) in evals.into_iter().zip(pairs) {
                let eval = eval?;
                loss += weight * eval.loss_value;
                for (g, e) in grad.iter_mut().zip(&eval.per_depth.values) {
                    *g += weight * e;
                }
            }
            loss += smoothness_term(&depth, cfg.smoothness, &mut grad);
            let held = holdout
                .map(|h| evaluate_loss(h, &depth, ransac_cfg, robust))
                .transpose()?;
            Ok((loss, grad, held))
        })();

        let (loss, grad, held) = match step {
            Ok(v) => v,
            Err(e) => return finish(depth, trace, holdout_trace, StopReason::Error, Some(e.to_string())),
        };
        trace.push(loss);
        if let Some(h) = held {
            holdout_trace.push(h);
        }

        if loss <= ZERO_LOSS {
            return finish(depth, trace, holdout_trace, StopReason::Plateau, None);
        }
        let monitored = held.unwrap_or(loss);
        if monitored < best {
            best = monitored;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                return finish(depth, trace, holdout_trace, StopReason::Plateau, None);
            }
        }
        if trace.len() >= cfg.max_iters {
            return finish(depth, trace, holdout_trace, StopReason::MaxIters, None);
        }

        let clamp = cfg.grad_clamp;
        for (v, g) in velocity.iter_mut().zip(&grad) {
            let g = g.clamp(-clamp, clamp);
            debug_assert!(g.abs() <= clamp);
            *v = cfg.momentum * *v + g;
        }
        let lr = cfg.learning_rate;
        if let Err(e) = depth.update_clipped(|i, d| d - lr * velocity[i]) {
            return finish(depth, trace, holdout_trace, StopReason::Error, Some(e.to_string()));
        }
    }
}
