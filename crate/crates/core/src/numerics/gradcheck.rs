//! Central finite-difference gradient checks. The numerical side only ever
//! evaluates forward passes, so it is independent of every backward rule.

use super::Tensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error with an absolute floor so near-zero gradients don't blow up.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference `(f(x+ε) − f(x−ε)) / 2ε` for each probed coordinate of `x`.
///
/// `probe` limits the check to a subset of coordinates (`None` = all).
pub fn numeric_grad(
    x: &Tensor<f64>,
    eps: f64,
    probe: Option<&[usize]>,
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<Vec<(usize, f64)>> {
    let idx: Vec<usize> = match probe {
        Some(p) => p.to_vec(),
        None => (0..x.len()).collect(),
    };
    let mut out = Vec::with_capacity(idx.len());
    for i in idx {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        out.push((i, (f(&plus)? - f(&minus)?) / (2.0 * eps)));
    }
    Ok(out)
}

/// Compares an analytic gradient against central differences.
pub fn check(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    probe: Option<&[usize]>,
    f: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<GradCheck> {
    let numeric = numeric_grad(x, eps, probe, f)?;
    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: 0,
        checked: numeric.len(),
    };
    for (i, n) in numeric {
        let a = analytic.data()[i];
        let r = rel_err(a, n);
        report.max_abs_err = report.max_abs_err.max((a - n).abs());
        if r > report.max_rel_err {
            report.max_rel_err = r;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Evenly spaced probe indices, at most `max` of them.
pub fn spread_probe(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|k| k * len / max).collect()
}
