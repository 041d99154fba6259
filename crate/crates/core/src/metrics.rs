//! Depth error metrics after scale/translation alignment of the prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mask, ScalarGrid};

/// Masked ground truth closer to zero than this cannot be used as a divisor.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    /// Scale fitted between median-shifted prediction and ground truth, so
    /// the aligned prediction is the least-squares fit given the medians.
    #[default]
    MedianShifted,
    /// Scale `sum(pred * gt) / sum(pred^2)` on the raw values.
    Unshifted,
}

/// `aligned = alpha * (pred - beta1) + beta2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthAlignment {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl DepthAlignment {
    pub fn apply(&self, v: f64) -> f64 {
        self.alpha * (v - self.beta1) + self.beta2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub l1: f64,
    pub rmse: f64,
    pub rel_l1: f64,
    pub sq_rel: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "l1,rmse,rel_l1,sq_rel";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.l1, self.rmse, self.rel_l1, self.sq_rel)
    }
}

fn check_shapes(a: &ScalarGrid, b: &ScalarGrid, mask: &Mask) -> Result<()> {
    if !a.same_shape(b) || a.width != mask.width || a.height != mask.height {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {}x{}, {}x{}, mask {}x{}",
            a.width, a.height, b.width, b.height, mask.width, mask.height
        )));
    }
    if mask.count() == 0 {
        return Err(Error::InvalidInput("mask selects no pixels".into()));
    }
    Ok(())
}

fn masked<'a>(grid: &'a ScalarGrid, mask: &'a Mask) -> impl Iterator<Item = f64> + 'a {
    grid.values.iter().zip(&mask.bits).filter(|(_, m)| **m).map(|(v, _)| *v)
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn align(pred: &ScalarGrid, gt: &ScalarGrid, mask: &Mask) -> Result<(ScalarGrid, DepthAlignment)> {
    align_with(pred, gt, mask, AlignMode::MedianShifted)
}

pub fn align_with(
    pred: &ScalarGrid,
    gt: &ScalarGrid,
    mask: &Mask,
    mode: AlignMode,
) -> Result<(ScalarGrid, DepthAlignment)> {
    check_shapes(pred, gt, mask)?;
    let p: Vec<f64> = masked(pred, mask).collect();
    let g: Vec<f64> = masked(gt, mask).collect();
    let beta1 = median(&p);
    let beta2 = median(&g);
    let (shift_p, shift_g) = match mode {
        AlignMode::MedianShifted => (beta1, beta2),
        AlignMode::Unshifted => (0.0, 0.0),
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in p.iter().zip(&g) {
        let pa = a - shift_p;
        num += pa * (b - shift_g);
        den += pa * pa;
    }
    if !(den > 0.0) || !den.is_finite() {
        return Err(Error::DegenerateAlignment(
            "prediction is constant over the mask; scale is undefined".into(),
        ));
    }
    let alignment = DepthAlignment {
        alpha: num / den,
        beta1,
        beta2,
    };
    let values = pred.values.iter().map(|v| alignment.apply(*v)).collect();
    Ok((ScalarGrid::new(pred.width, pred.height, values)?, alignment))
}

pub fn metrics(aligned: &ScalarGrid, gt: &ScalarGrid, mask: &Mask) -> Result<MetricReport> {
    check_shapes(aligned, gt, mask)?;
    for (i, (g, m)) in gt.values.iter().zip(&mask.bits).enumerate() {
        if *m && g.abs() < RELATIVE_FLOOR {
            return Err(Error::DivisionHazard { index: i, value: *g });
        }
    }
    let mut sums = [0.0; 4];
    let mut n = 0usize;
    for (a, g) in masked(aligned, mask).zip(masked(gt, mask)) {
        let e = a - g;
        sums[0] += e.abs();
        sums[1] += e * e;
        sums[2] += e.abs() / g.abs();
        sums[3] += e * e / g.abs();
        n += 1;
    }
    let n = n as f64;
    Ok(MetricReport {
        l1: sums[0] / n,
        rmse: (sums[1] / n).sqrt(),
        rel_l1: sums[2] / n,
        sq_rel: sums[3] / n,
    })
}

/// Aligns then scores a prediction.
pub fn evaluate(pred: &ScalarGrid, gt: &ScalarGrid, mask: &Mask) -> Result<MetricReport> {
    let (aligned, _) = align(pred, gt, mask)?;
    metrics(&aligned, gt, mask)
}

/// Shifts ground truth so its masked minimum equals `floor`, making the
/// relative metrics well defined. Absolute metrics are unaffected because
/// alignment moves the prediction by the same amount.
pub fn offset_ground_truth(gt: &ScalarGrid, mask: &Mask, floor: f64) -> Result<ScalarGrid> {
    if gt.width != mask.width || gt.height != mask.height || mask.count() == 0 {
        return Err(Error::InvalidInput("mask does not match ground truth".into()));
    }
    let min = masked(gt, mask).fold(f64::INFINITY, f64::min);
    let shift = floor - min;
    ScalarGrid::new(gt.width, gt.height, gt.values.iter().map(|v| v + shift).collect())
}

/// Pearson correlation over the mask.
pub fn pearson(a: &ScalarGrid, b: &ScalarGrid, mask: &Mask) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let x: Vec<f64> = masked(a, mask).collect();
    let y: Vec<f64> = masked(b, mask).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, q) in x.iter().zip(&y) {
        sxy += (p - mx) * (q - my);
        sxx += (p - mx) * (p - mx);
        syy += (q - my) * (q - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateAlignment("constant input to correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
