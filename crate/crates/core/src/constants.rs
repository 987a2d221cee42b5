//! Closed-form constants of the energy expansion and their quadrature oracles.

use serde::Serialize;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

use crate::bubble::{Dim, Exponents};
use crate::error::{Error, Result};
use crate::radial::log_radial_integral;

/// Area of the unit sphere `S^{d−1} ⊂ R^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConstantsTable {
    #[serde(skip)]
    pub dim: Dim,
    /// Best constant of the embedding `D^{1,2} ⊂ L^{2*}`.
    pub k_n: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub d_n: f64,
    pub e_n: f64,
}

/// `K_N² = 4/(N(N−2)|S^N|^{2/N})`.
pub fn best_sobolev_constant(dim: Dim) -> f64 {
    let n = dim.as_f64();
    let omega = unit_sphere_area(dim.get() + 1);
    (4.0 / (n * (n - 2.0) * omega.powf(2.0 / n))).sqrt()
}

pub fn closed_form_constants(dim: Dim) -> ConstantsTable {
    let n = dim.as_f64();
    let k_n = best_sobolev_constant(dim);
    let kn = k_n.powf(-n);
    let ex = Exponents::new(dim);
    ConstantsTable {
        dim,
        k_n,
        a_n: kn / (24.0 * n * (n - 4.0) * (n - 6.0)),
        b_n: 2.0 * (n - 1.0) * kn / (n * (n - 2.0) * (n - 4.0)),
        d_n: kn / n,
        e_n: ex.alpha * integral_u_p(dim),
    }
}

impl ConstantsTable {
    pub fn new(dim: Dim) -> Self {
        closed_form_constants(dim)
    }

    /// `φ(d) = −A_N W² d⁴ + B_N d²`.
    pub fn phi(&self, d: f64, weyl_norm_sq: f64) -> f64 {
        -self.a_n * weyl_norm_sq * d.powi(4) + self.b_n * d * d
    }
}

/// `d₀ = (B_N/(2A_N|W|²))^{1/2}`, the maximizer of `φ`.
pub fn compute_d0(table: &ConstantsTable, weyl_norm_sq: f64) -> Result<f64> {
    if !(weyl_norm_sq > 0.0) {
        return Err(Error::ConformallyFlat(weyl_norm_sq));
    }
    Ok((table.b_n / (2.0 * table.a_n * weyl_norm_sq)).sqrt())
}

/// `∫_{R^N} U^p = (N−2)α_N|S^{N−1}|` (divergence theorem applied to `−ΔU = U^p`).
pub fn integral_u_p(dim: Dim) -> f64 {
    let ex = Exponents::new(dim);
    (dim.as_f64() - 2.0) * ex.alpha * unit_sphere_area(dim.get())
}

/// Radial quadrature specification for `∫_{R^N}` of radial integrands.
#[derive(Debug, Clone, Copy)]
pub struct QuadSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub nodes: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec { r_min: 1e-10, r_max: 1e10, nodes: 6000 }
    }
}

/// `∫_{R^N} g(|y|) dy` and the relative tail estimate.
pub fn radial_volume_integral<F: Fn(f64) -> f64>(dim: Dim, q: QuadSpec, g: F) -> (f64, f64) {
    let n = dim.get() as i32;
    let (v, tail) = log_radial_integral(|r| g(r) * r.powi(n - 1), q.r_min, q.r_max, q.nodes);
    let s = unit_sphere_area(dim.get());
    (s * v, tail / v.abs().max(f64::MIN_POSITIVE))
}

pub fn integral_u_p_quadrature(dim: Dim, q: QuadSpec) -> f64 {
    let ex = Exponents::new(dim);
    radial_volume_integral(dim, q, |r| ex.u(r).powf(ex.p)).0
}

/// `‖U_μ‖_{2*}/‖∇U_μ‖_2` by radial quadrature. Refuses grids whose neglected tail is
/// larger than `1e-8` relative.
pub fn sobolev_quotient(dim: Dim, mu: f64, r_max: f64, nodes: usize) -> Result<f64> {
    if r_max < 1e3 * mu {
        return Err(Error::Invalid(format!("sobolev_quotient needs r_max >= 1e3·mu, got {r_max}")));
    }
    let ex = Exponents::new(dim);
    let n = dim.as_f64();
    let q = QuadSpec { r_min: 1e-10 * mu, r_max, nodes };
    let scale = mu.powf(-(n - 2.0) / 2.0);
    let (num, t1) = radial_volume_integral(dim, q, |r| (scale * ex.u(r / mu)).powf(ex.two_star));
    let (den, t2) = radial_volume_integral(dim, q, |r| (scale * ex.u_radial(r / mu)[1] / mu).powi(2));
    let tail = t1.max(t2);
    if tail > 1e-8 {
        return Err(Error::Invalid(format!("radial grid too short: tail estimate {tail:e}")));
    }
    Ok(num.powf(1.0 / ex.two_star) / den.sqrt())
}

/// Relative errors of each closed-form constant against an independent quadrature.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleErrors {
    pub k_n: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub d_n: f64,
    pub e_n: f64,
}

impl OracleErrors {
    pub fn max(&self) -> f64 {
        [self.k_n, self.a_n, self.b_n, self.d_n, self.e_n].into_iter().fold(0.0, f64::max)
    }
}

/// Oracles: `A_N = (N−2)/(96N(N−1))∫|y|²U²`, `B_N = ½∫U²`, `D_N = (1/N)∫|∇U|²`,
/// `E_N = α_N∫U^p`, `K_N` from the Sobolev quotient of `U`.
pub fn oracle_errors(table: &ConstantsTable) -> Result<OracleErrors> {
    let dim = table.dim;
    let n = dim.as_f64();
    let ex = Exponents::new(dim);
    let q = QuadSpec::default();
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let y2u2 = radial_volume_integral(dim, q, |r| r * r * ex.u(r).powi(2)).0;
    let u2 = radial_volume_integral(dim, q, |r| ex.u(r).powi(2)).0;
    let grad2 = radial_volume_integral(dim, q, |r| ex.u_radial(r)[1].powi(2)).0;
    let k = sobolev_quotient(dim, 1.0, 1e10, 6000)?;
    Ok(OracleErrors {
        k_n: rel(k, table.k_n),
        a_n: rel((n - 2.0) / (96.0 * n * (n - 1.0)) * y2u2, table.a_n),
        b_n: rel(0.5 * u2, table.b_n),
        d_n: rel(grad2 / n, table.d_n),
        e_n: rel(ex.alpha * integral_u_p_quadrature(dim, q), table.e_n),
    })
}
