//! ε-scans of the ansatz residual, the cross term and the energy.

use std::sync::Arc;

use serde::Serialize;

use crate::ansatz::{min_cutoff_radius, AnsatzSpec, EtaScale};
use crate::constants::{compute_d0, ConstantsTable};
use crate::correction::CorrectionField;
use crate::error::{Error, Result};
use crate::geometry::GeometryData;
use crate::mc::McOptions;
use crate::reduced::{eval_expansion, ClusterConfig, Expansion, ReducedEnergy};
use crate::scaling::{ScalingModel, ScanPoint, ScanResult};
use crate::verify::{cross_term_norm, energy_of_ansatz, interaction_integral, residual_norm, EnergyResult, InteractionResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Residual,
    CrossTerm,
}

impl std::str::FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(Quantity::Residual),
            "cross-term" | "cross_term" => Ok(Quantity::CrossTerm),
            _ => Err(Error::Invalid(format!("unknown quantity `{s}` (residual | cross-term)"))),
        }
    }
}

/// Claimed exponent of the residual norm: `ε^{5/4}` for N = 7, `ε^{3/2}` above
/// (with `|ln ε|^{5/8}` for N = 8).
pub fn claimed_residual_exponent(n: usize) -> f64 {
    if n == 7 {
        1.25
    } else {
        1.5
    }
}

/// Exponent the cross-term bounds chain to, `3(N+2)/(2N)`.
pub fn cross_term_exponent(n: usize) -> f64 {
    3.0 * (n as f64 + 2.0) / (2.0 * n as f64)
}

/// Single peak at the origin with the optimal scale.
pub fn single_peak_config(geo: &GeometryData) -> Result<ClusterConfig> {
    let d0 = compute_d0(&ConstantsTable::new(geo.dim), geo.weyl_norm_sq)?;
    ClusterConfig::new(vec![0.0], vec![vec![0.0; geo.n()]], d0)
}

#[derive(Debug, Clone)]
pub struct ScanSetup {
    pub geo: GeometryData,
    pub cfg: ClusterConfig,
    pub correction: Arc<CorrectionField>,
    /// `None` picks `max(2, 1.25 · smallest admissible r0)` over the ε list.
    pub r0: Option<f64>,
    pub eta: EtaScale,
    pub mc: McOptions,
}

impl ScanSetup {
    pub fn resolve_r0(&self, eps: &[f64]) -> f64 {
        self.r0.unwrap_or_else(|| {
            let need = eps.iter().map(|&e| min_cutoff_radius(e, &self.cfg)).fold(0.0, f64::max);
            (1.25 * need).max(2.0)
        })
    }

    pub fn spec(&self, eps: f64, r0: f64) -> Result<AnsatzSpec> {
        AnsatzSpec::new(eps, self.cfg.clone(), self.geo.clone(), self.correction.clone(), r0, self.eta)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub eps: f64,
    pub stratum: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Skipped {
    pub eps: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormScan {
    pub quantity: Quantity,
    pub dim: usize,
    pub k: usize,
    pub r0: f64,
    pub eta: EtaScale,
    pub rows: Vec<ScanRow>,
    pub skipped: Vec<Skipped>,
    /// `None` when too few admissible points remain.
    pub fit: Option<ScanResult>,
    pub fit_error: Option<String>,
    /// Claimed exponents to compare the slope against.
    pub claimed: Vec<f64>,
    pub flagged: bool,
}

/// Per ε: one row per stratum plus a `norm` row. Points that violate the ansatz
/// preconditions are skipped and reported, never silently dropped.
pub fn norm_scan(setup: &ScanSetup, eps_list: &[f64], quantity: Quantity) -> Result<NormScan> {
    let n = setup.geo.n();
    let r0 = setup.resolve_r0(eps_list);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut points = Vec::new();
    let mut flagged = false;
    for &eps in eps_list {
        let spec = match setup.spec(eps, r0) {
            Ok(s) => s,
            Err(e) if e.is_validation() => {
                skipped.push(Skipped { eps, reason: e.to_string() });
                continue;
            }
            Err(e) => return Err(e),
        };
        let res = match quantity {
            Quantity::Residual => residual_norm(&spec, &setup.mc)?,
            Quantity::CrossTerm => {
                let c = cross_term_norm(&spec, &setup.mc)?;
                for b in &c.bounds {
                    rows.push(ScanRow { eps, stratum: format!("bound_{}", b.name), value: b.value, stderr: b.stderr });
                }
                c.norm
            }
        };
        for s in &res.strata {
            rows.push(ScanRow { eps, stratum: s.name.clone(), value: s.value, stderr: s.stderr });
        }
        rows.push(ScanRow { eps, stratum: "norm".into(), value: res.norm, stderr: res.stderr });
        flagged |= res.flagged;
        points.push(ScanPoint { eps, value: res.norm, stderr: res.stderr });
    }
    let model = match quantity {
        Quantity::Residual => ScalingModel::for_residual(n),
        Quantity::CrossTerm => ScalingModel::Power,
    };
    let claimed = match quantity {
        Quantity::Residual => vec![claimed_residual_exponent(n)],
        Quantity::CrossTerm => vec![cross_term_exponent(n), 3.0],
    };
    let (fit, fit_error) = match ScanResult::new(points, model) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(NormScan {
        quantity,
        dim: n,
        k: setup.cfg.k,
        r0,
        eta: setup.eta,
        rows,
        skipped,
        fit,
        fit_error,
        claimed,
        flagged,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyPoint {
    pub eps: f64,
    pub energy: EnergyResult,
    pub expansion: Expansion,
    /// `(J − kD_N)/(ε² c(ξ₀))`.
    pub second_order_ratio: f64,
    /// `(J − kD_N − c(ξ₀)ε²)/(ε^{3(N−2)/N} 𝔍)`, for `k ≥ 2`.
    pub third_order_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyScan {
    pub dim: usize,
    pub k: usize,
    pub r0: f64,
    pub eta: EtaScale,
    pub points: Vec<EnergyPoint>,
    pub skipped: Vec<Skipped>,
    pub flagged: bool,
}

pub fn energy_scan(setup: &ScanSetup, eps_list: &[f64]) -> Result<EnergyScan> {
    let table = ConstantsTable::new(setup.geo.dim);
    let reduced = ReducedEnergy::new(&setup.geo, &table);
    let r0 = setup.resolve_r0(eps_list);
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    let mut flagged = false;
    for &eps in eps_list {
        let spec = match setup.spec(eps, r0) {
            Ok(s) => s,
            Err(e) if e.is_validation() => {
                skipped.push(Skipped { eps, reason: e.to_string() });
                continue;
            }
            Err(e) => return Err(e),
        };
        let energy = energy_of_ansatz(&spec, &setup.mc)?;
        let expansion = eval_expansion(eps, &setup.cfg, &reduced)?;
        let j = energy.total.value;
        let second_order_ratio = (j - expansion.leading) / expansion.second;
        let third_order_ratio =
            (setup.cfg.k >= 2).then(|| (j - expansion.leading - expansion.second) / expansion.third);
        flagged |= energy.flagged;
        points.push(EnergyPoint { eps, energy, expansion, second_order_ratio, third_order_ratio });
    }
    Ok(EnergyScan { dim: setup.geo.n(), k: setup.cfg.k, r0, eta: setup.eta, points, skipped, flagged })
}

#[derive(Debug, Clone, Serialize)]
pub struct InteractionPoint {
    pub eps: f64,
    pub pair: [usize; 2],
    pub result: InteractionResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct InteractionScan {
    pub r0: f64,
    pub points: Vec<InteractionPoint>,
    pub skipped: Vec<Skipped>,
    /// Fit of the measured integral against ε, when the ε list allows one.
    pub fit: Option<ScanResult>,
    /// `3(N−2)/N`.
    pub claimed: f64,
    pub flagged: bool,
}

pub fn interaction_scan(setup: &ScanSetup, eps_list: &[f64], pair: [usize; 2]) -> Result<InteractionScan> {
    let n = setup.geo.n() as f64;
    let r0 = setup.resolve_r0(eps_list);
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    let mut flagged = false;
    for &eps in eps_list {
        let spec = match setup.spec(eps, r0) {
            Ok(s) => s,
            Err(e) if e.is_validation() => {
                skipped.push(Skipped { eps, reason: e.to_string() });
                continue;
            }
            Err(e) => return Err(e),
        };
        let result = interaction_integral(&spec, pair[0], pair[1], &setup.mc)?;
        flagged |= result.flagged;
        points.push(InteractionPoint { eps, pair, result });
    }
    let sp: Vec<ScanPoint> =
        points.iter().map(|p| ScanPoint { eps: p.eps, value: p.result.value, stderr: p.result.stderr }).collect();
    let fit = ScanResult::new(sp, ScalingModel::Power).ok();
    Ok(InteractionScan { r0, points, skipped, fit, claimed: 3.0 * (n - 2.0) / n, flagged })
}

/// Parses `1e-2,1e-3,...`.
pub fn parse_eps_list(s: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Invalid(format!("bad eps value `{t}`"))))
        .collect::<Result<_>>()?;
    if v.is_empty() || v.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::Invalid(format!("eps values must lie in (0, 1), got {s}")));
    }
    Ok(v)
}
