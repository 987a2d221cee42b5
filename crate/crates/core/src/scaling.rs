//! Log-log exponent fits for ε-scans.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Default ε grid: five points, half a decade apart.
pub const DEFAULT_EPS_GRID: [f64; 5] = [1e-2, 3.1622776601683795e-3, 1e-3, 3.1622776601683795e-4, 1e-4];

/// Points whose relative MC error exceeds this are left out of the fit.
pub const MAX_REL_STDERR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingModel {
    /// `value = C ε^a`
    Power,
    /// `value = C ε^a |ln ε|^log_power`, with `log_power` held fixed.
    PowerLog { log_power: f64 },
}

impl ScalingModel {
    /// Model used for the residual norm in dimension `n`.
    pub fn for_residual(n: usize) -> Self {
        if n == 8 {
            ScalingModel::PowerLog { log_power: 0.625 }
        } else {
            ScalingModel::Power
        }
    }

    fn offset(&self, eps: f64) -> f64 {
        match *self {
            ScalingModel::Power => 0.0,
            ScalingModel::PowerLog { log_power } => log_power * eps.ln().abs().ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub eps: f64,
    pub value: f64,
    pub stderr: f64,
}

impl ScanPoint {
    pub fn rel_stderr(&self) -> f64 {
        self.stderr / self.value.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval for the slope.
    pub ci: [f64; 2],
}

/// Weighted least squares of `ln value − offset(ε)` against `ln ε`.
///
/// Weights are `(value/stderr)²` when every point carries a positive stderr, uniform otherwise.
pub fn fit_scaling(points: &[ScanPoint], model: ScalingModel) -> Result<Fit> {
    if points.len() < 4 {
        return Err(Error::Invalid(format!("scaling fit needs at least 4 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.value > 0.0 && p.value.is_finite())) {
        return Err(Error::Invalid(format!("scaling fit needs positive values, got {} at eps = {}", p.value, p.eps)));
    }
    if let Some(p) = points.iter().find(|p| !(p.eps > 0.0 && p.eps < 1.0)) {
        return Err(Error::Invalid(format!("eps must lie in (0, 1), got {}", p.eps)));
    }
    let (lo, hi) = points.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.eps), hi.max(p.eps)));
    if (hi / lo).log10() < 1.5 - 1e-9 {
        return Err(Error::Invalid(format!("scaling fit needs eps spanning 1.5 decades, got {:.3}", (hi / lo).log10())));
    }
    let weighted = points.iter().all(|p| p.stderr > 0.0);
    let w: Vec<f64> = points.iter().map(|p| if weighted { (p.value / p.stderr).powi(2) } else { 1.0 }).collect();
    let x: Vec<f64> = points.iter().map(|p| p.eps.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.value.ln() - model.offset(p.eps)).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = w.iter().zip(x.iter().zip(&y)).map(|(w, (x, y))| w * (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let dof = points.len() - 2;
    let rss: f64 = w.iter().zip(x.iter().zip(&y)).map(|(w, (x, y))| w * (y - intercept - slope * x).powi(2)).sum();
    let se = (rss / dof as f64 / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::Numerical(e.to_string()))?.inverse_cdf(0.975);
    Ok(Fit { slope, intercept, ci: [slope - t * se, slope + t * se] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Sorted by ε, ascending.
    pub points: Vec<ScanPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_ci: [f64; 2],
    pub model: ScalingModel,
    /// ε values left out of the fit for exceeding [`MAX_REL_STDERR`].
    pub excluded: Vec<f64>,
}

impl ScanResult {
    pub fn new(mut points: Vec<ScanPoint>, model: ScalingModel) -> Result<Self> {
        points.sort_by(|a, b| a.eps.total_cmp(&b.eps));
        let (used, rejected): (Vec<ScanPoint>, Vec<ScanPoint>) =
            points.iter().partition(|p| p.rel_stderr() < MAX_REL_STDERR);
        let fit = fit_scaling(&used, model)?;
        Ok(ScanResult {
            points,
            slope: fit.slope,
            intercept: fit.intercept,
            slope_ci: fit.ci,
            model,
            excluded: rejected.iter().map(|p| p.eps).collect(),
        })
    }

    /// `|slope − target| ≤ tol`.
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}
