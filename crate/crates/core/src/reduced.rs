//! The reduced energy
//!
//! ```text
//! 𝔍(d, τ) = −½A_N d₀⁴ Σ_i 𝒬(τ_i,τ_i) − E_N d₀^{N−2} Σ_{i≠j} |τ_i−τ_j|^{2−N} + c_d Σ_i d_i²
//! ```
//!
//! (ordered pairs in the interaction sum) and the three-term expansion
//! `J̃_ε = k D_N + c(ξ₀) ε² + ε^{3(N−2)/N} 𝔍 + …`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constants::ConstantsTable;
use crate::error::{Error, Result};
use crate::geometry::GeometryData;

/// Minimum admissible distance between two peaks.
pub const COLLISION_DISTANCE: f64 = 1e-9;

/// Coefficient of `Σd_i²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fluctuation {
    /// `−2B_N`, the second-order Taylor coefficient `φ''(d₀)/2`.
    #[default]
    Derived,
    /// `−B_N`, the coefficient as printed in the published expansion.
    Printed,
}

impl Fluctuation {
    pub fn coefficient(self, table: &ConstantsTable) -> f64 {
        match self {
            Fluctuation::Derived => -2.0 * table.b_n,
            Fluctuation::Printed => -table.b_n,
        }
    }
}

/// Finite-dimensional reduction variables: peak offsets `τ_i` (in units of `ε^β`) and scale
/// fluctuations `d_i` around `d₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub d: Vec<f64>,
    pub tau: Vec<Vec<f64>>,
    pub d0: f64,
}

impl ClusterConfig {
    pub fn new(d: Vec<f64>, tau: Vec<Vec<f64>>, d0: f64) -> Result<Self> {
        let cfg = ClusterConfig { k: tau.len(), d, tau, d0 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.tau.len() != self.k || self.d.len() != self.k {
            return Err(Error::Invalid(format!(
                "cluster needs k >= 1 peaks with matching d and tau (k={}, |d|={}, |tau|={})",
                self.k,
                self.d.len(),
                self.tau.len()
            )));
        }
        let n = self.tau[0].len();
        if self.tau.iter().any(|t| t.len() != n) {
            return Err(Error::Invalid("all tau_i must have the same dimension".into()));
        }
        if !(self.d0 > 0.0) {
            return Err(Error::Invalid(format!("d0 must be positive, got {}", self.d0)));
        }
        if let Some((i, j, r)) = self.closest_pair() {
            if !(r > COLLISION_DISTANCE) {
                return Err(Error::Collision(i, j, r));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.tau[0].len()
    }

    pub fn closest_pair(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.k {
            for j in i + 1..self.k {
                let r = dist(&self.tau[i], &self.tau[j]);
                if best.map_or(true, |b| r < b.2) {
                    best = Some((i, j, r));
                }
            }
        }
        best
    }

    /// Flattened `[τ_1, …, τ_k]`.
    pub fn tau_flat(&self) -> Vec<f64> {
        self.tau.iter().flatten().copied().collect()
    }

    pub fn with_tau_flat(&self, flat: &[f64]) -> ClusterConfig {
        let n = self.dim();
        ClusterConfig { tau: flat.chunks(n).map(|c| c.to_vec()).collect(), ..self.clone() }
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub confinement: f64,
    pub interaction: f64,
    pub fluctuation: f64,
    pub total: f64,
}

/// Gradient of `𝔍`: `∂/∂d_i` and `∂/∂τ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub d: Vec<f64>,
    pub tau: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn tau_flat(&self) -> Vec<f64> {
        self.tau.iter().flatten().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.d.iter().chain(self.tau.iter().flatten()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// The reduced functional for fixed geometry and constants.
#[derive(Debug, Clone)]
pub struct ReducedEnergy<'a> {
    pub geo: &'a GeometryData,
    pub table: &'a ConstantsTable,
    pub fluctuation: Fluctuation,
}

impl<'a> ReducedEnergy<'a> {
    pub fn new(geo: &'a GeometryData, table: &'a ConstantsTable) -> Self {
        ReducedEnergy { geo, table, fluctuation: Fluctuation::Derived }
    }

    fn check(&self, cfg: &ClusterConfig) -> Result<()> {
        cfg.validate()?;
        if cfg.dim() != self.geo.n() {
            return Err(Error::Invalid(format!("tau has dimension {}, geometry {}", cfg.dim(), self.geo.n())));
        }
        Ok(())
    }

    fn n(&self) -> f64 {
        self.geo.n() as f64
    }

    /// `−A_N d₀⁴/2`, `−E_N d₀^{N−2}` and the fluctuation coefficient.
    fn coefficients(&self, d0: f64) -> (f64, f64, f64) {
        let t = self.table;
        (
            -0.5 * t.a_n * d0.powi(4),
            -t.e_n * d0.powf(self.n() - 2.0),
            self.fluctuation.coefficient(t),
        )
    }

    pub fn eval(&self, cfg: &ClusterConfig) -> Result<EnergyBreakdown> {
        self.check(cfg)?;
        let q = &self.geo.weyl_hessian;
        let (cq, ci, cd) = self.coefficients(cfg.d0);
        let confinement = cq * cfg.tau.iter().map(|t| quad(q, t)).sum::<f64>();
        let mut pairs = 0.0;
        for i in 0..cfg.k {
            for j in i + 1..cfg.k {
                pairs += dist(&cfg.tau[i], &cfg.tau[j]).powf(2.0 - self.n());
            }
        }
        let interaction = 2.0 * ci * pairs;
        let fluctuation = cd * cfg.d.iter().map(|d| d * d).sum::<f64>();
        Ok(EnergyBreakdown { confinement, interaction, fluctuation, total: confinement + interaction + fluctuation })
    }

    pub fn grad(&self, cfg: &ClusterConfig) -> Result<Gradient> {
        self.check(cfg)?;
        let n = self.geo.n();
        let nf = self.n();
        let q = &self.geo.weyl_hessian;
        let (cq, ci, cd) = self.coefficients(cfg.d0);
        let mut tau = vec![vec![0.0; n]; cfg.k];
        for i in 0..cfg.k {
            for a in 0..n {
                tau[i][a] = 2.0 * cq * (0..n).map(|b| q[(a, b)] * cfg.tau[i][b]).sum::<f64>();
            }
        }
        for i in 0..cfg.k {
            for j in i + 1..cfg.k {
                let r = dist(&cfg.tau[i], &cfg.tau[j]);
                let f = 2.0 * ci * (2.0 - nf) * r.powf(-nf);
                for a in 0..n {
                    let g = f * (cfg.tau[i][a] - cfg.tau[j][a]);
                    tau[i][a] += g;
                    tau[j][a] -= g;
                }
            }
        }
        let d = cfg.d.iter().map(|d| 2.0 * cd * d).collect();
        Ok(Gradient { d, tau })
    }

    /// Hessian in `τ` (flattened, `kN × kN`).
    pub fn hessian_tau(&self, cfg: &ClusterConfig) -> Result<DMatrix<f64>> {
        self.check(cfg)?;
        let n = self.geo.n();
        let nf = self.n();
        let k = cfg.k;
        let (cq, ci, _) = self.coefficients(cfg.d0);
        let mut h = DMatrix::zeros(k * n, k * n);
        for i in 0..k {
            let blk = &self.geo.weyl_hessian * (2.0 * cq);
            h.view_mut((i * n, i * n), (n, n)).copy_from(&blk);
        }
        for i in 0..k {
            for j in i + 1..k {
                let r: Vec<f64> = (0..n).map(|a| cfg.tau[i][a] - cfg.tau[j][a]).collect();
                let rn = dist(&cfg.tau[i], &cfg.tau[j]);
                let f = 2.0 * ci * (2.0 - nf) * rn.powf(-nf);
                let blk = DMatrix::from_fn(n, n, |a, b| {
                    f * ((if a == b { 1.0 } else { 0.0 }) - nf * r[a] * r[b] / (rn * rn))
                });
                for (p, s) in [(i, 1.0), (j, 1.0)] {
                    let mut v = h.view_mut((p * n, p * n), (n, n));
                    v += &blk * s;
                }
                let mut v = h.view_mut((i * n, j * n), (n, n));
                v -= &blk;
                let mut v = h.view_mut((j * n, i * n), (n, n));
                v -= &blk;
            }
        }
        Ok(h)
    }

    /// The `d`-block of the Hessian, `2c_d·I`.
    pub fn hessian_d(&self, cfg: &ClusterConfig) -> DMatrix<f64> {
        DMatrix::identity(cfg.k, cfg.k) * (2.0 * self.fluctuation.coefficient(self.table))
    }
}

fn quad(q: &DMatrix<f64>, t: &[f64]) -> f64 {
    let v = DVector::from_column_slice(t);
    v.dot(&(q * &v))
}

/// `β = (N−6)/(2N)`, the exponent of the peak offsets `ε^β τ_i`.
pub fn beta_exponent(n: usize) -> f64 {
    (n as f64 - 6.0) / (2.0 * n as f64)
}

/// `μ_i = ε^{1/2}(d₀ + d_i ε^β)`.
pub fn peak_scale(eps: f64, n: usize, d0: f64, d: f64) -> f64 {
    eps.sqrt() * (d0 + d * eps.powf(beta_exponent(n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expansion {
    pub leading: f64,
    pub second: f64,
    pub third: f64,
    /// `c(ξ₀) = k[−A_N W² d₀⁴ + B_N d₀²]`.
    pub c_xi0: f64,
    pub total: f64,
}

/// `k D_N + c(ξ₀) ε² + ε^{3(N−2)/N} 𝔍(cfg)`.
pub fn eval_expansion(eps: f64, cfg: &ClusterConfig, energy: &ReducedEnergy) -> Result<Expansion> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    let t = energy.table;
    let n = energy.geo.n() as f64;
    let k = cfg.k as f64;
    let c_xi0 = k * t.phi(cfg.d0, energy.geo.weyl_norm_sq);
    let leading = k * t.d_n;
    let second = c_xi0 * eps * eps;
    let third = eps.powf(3.0 * (n - 2.0) / n) * energy.eval(cfg)?.total;
    Ok(Expansion { leading, second, third, c_xi0, total: leading + second + third })
}

/// Single-peak energy correction `−A_N|Weyl(ξ_i)|²μ_i⁴ + εB_Nμ_i²` with the quadratic
/// model `|Weyl(ξ_i)|² = W² + ½𝒬(τ_i,τ_i)ε^{2β}`.
pub fn single_peak_correction(eps: f64, n: usize, table: &ConstantsTable, w2: f64, q_tt: f64, d0: f64, d: f64) -> f64 {
    let b2 = eps.powf(2.0 * beta_exponent(n));
    let mu = peak_scale(eps, n, d0, d);
    -table.a_n * (w2 + 0.5 * q_tt * b2) * mu.powi(4) + eps * table.b_n * mu * mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::Dim;
    use crate::constants::{closed_form_constants, compute_d0};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (GeometryData, ConstantsTable) {
        let dim = Dim::new(n).unwrap();
        (GeometryData::flat_with_weyl(dim, 1.0, DMatrix::identity(n, n)).unwrap(), closed_form_constants(dim))
    }

    fn e1(n: usize, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[0] = t;
        v
    }

    #[test]
    fn trivial_examples() {
        let (g, t) = setup(7);
        let j = ReducedEnergy::new(&g, &t);
        let cfg = ClusterConfig::new(vec![0.0], vec![vec![0.0; 7]], 1.3).unwrap();
        let e = j.eval(&cfg).unwrap();
        assert_eq!((e.confinement, e.interaction, e.fluctuation, e.total), (0.0, 0.0, 0.0, 0.0));
        let d0: f64 = 1.3;
        let tt: f64 = 0.8;
        let cfg = ClusterConfig::new(vec![0.0; 2], vec![e1(7, tt), e1(7, -tt)], d0).unwrap();
        let e = j.eval(&cfg).unwrap();
        assert_relative_eq!(e.confinement, -t.a_n * d0.powi(4) * tt * tt, max_relative = 1e-14);
        assert_relative_eq!(e.interaction, -2.0 * t.e_n * d0.powi(5) * (2.0 * tt).powi(-5), max_relative = 1e-14);
        assert!(e.interaction <= 0.0 && e.confinement <= 0.0);
        assert_relative_eq!(e.total, e.confinement + e.interaction + e.fluctuation);
    }

    #[test]
    fn triangle_interaction_brute_force() {
        let (g, t) = setup(7);
        let j = ReducedEnergy::new(&g, &t);
        let s: f64 = 1.7;
        let rad = s / 3f64.sqrt();
        let tau: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
                let mut v = vec![0.0; 7];
                v[0] = rad * a.cos();
                v[1] = rad * a.sin();
                v
            })
            .collect();
        let mut brute = 0.0;
        for a in &tau {
            for b in &tau {
                let r = dist(a, b);
                if r > 0.0 {
                    brute += r.powi(-5);
                }
            }
        }
        let d0 = 0.9;
        let cfg = ClusterConfig::new(vec![0.0; 3], tau, d0).unwrap();
        let e = j.eval(&cfg).unwrap();
        assert_relative_eq!(e.interaction, -t.e_n * d0.powi(5) * brute, max_relative = 1e-13);
        assert_relative_eq!(e.interaction, -6.0 * t.e_n * d0.powi(5) * s.powi(-5), max_relative = 1e-12);
    }

    #[test]
    fn collisions_rejected() {
        let (g, t) = setup(7);
        let j = ReducedEnergy::new(&g, &t);
        let cfg = ClusterConfig { k: 2, d: vec![0.0; 2], tau: vec![e1(7, 0.3), e1(7, 0.3)], d0: 1.0 };
        assert!(matches!(j.eval(&cfg), Err(Error::Collision(0, 1, _))));
        assert!(matches!(j.grad(&cfg), Err(Error::Collision(..))));
    }

    #[test]
    fn antipodal_stationary_point() {
        let (g, t) = setup(7);
        let j = ReducedEnergy::new(&g, &t);
        let d0 = compute_d0(&t, 1.0).unwrap();
        // root of the derivative of the 1-D reduction −A d₀⁴t² − 2E d₀^{N−2}(2t)^{2−N},
        // by bisection
        let f = |x: f64| 2.0 * t.a_n * d0.powi(4) * x - 4.0 * 5.0 * t.e_n * d0.powi(5) * (2.0 * x).powi(-6);
        let (mut lo, mut hi) = (1e-3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let ts = 0.5 * (lo + hi);
        let cfg = ClusterConfig::new(vec![0.0; 2], vec![e1(7, ts), e1(7, -ts)], d0).unwrap();
        let gr = j.grad(&cfg).unwrap();
        let scale = 2.0 * t.a_n * d0.powi(4) * ts;
        assert!(gr.norm() / scale < 1e-10, "{}", gr.norm() / scale);
        assert!(gr.d.iter().all(|v| *v == 0.0));
    }

    fn random_config(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ClusterConfig {
        loop {
            let tau: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let d = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if let Ok(c) = ClusterConfig::new(d, tau, rng.gen_range(0.5..2.0)) {
                if c.closest_pair().map_or(true, |p| p.2 > 0.3) {
                    return c;
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let n = 7;
        let dim = Dim::new(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = {
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            &a * a.transpose() + DMatrix::identity(n, n)
        };
        let g = GeometryData::flat_with_weyl(dim, 2.0, q).unwrap();
        let t = closed_form_constants(dim);
        let j = ReducedEnergy::new(&g, &t);
        for trial in 0..100 {
            let cfg = random_config(&mut rng, n, 1 + trial % 5);
            let gr = j.grad(&cfg).unwrap();
            let h = 1e-6;
            let mut worst = 0.0f64;
            let scale = gr.norm().max(1e-300);
            let flat = cfg.tau_flat();
            for (a, ga) in gr.tau_flat().iter().enumerate() {
                let mut p = flat.clone();
                let mut m = flat.clone();
                p[a] += h;
                m[a] -= h;
                let fd = (j.eval(&cfg.with_tau_flat(&p)).unwrap().total - j.eval(&cfg.with_tau_flat(&m)).unwrap().total) / (2.0 * h);
                worst = worst.max((fd - ga).abs() / scale);
            }
            for i in 0..cfg.k {
                let mut p = cfg.clone();
                let mut m = cfg.clone();
                p.d[i] += h;
                m.d[i] -= h;
                let fd = (j.eval(&p).unwrap().total - j.eval(&m).unwrap().total) / (2.0 * h);
                worst = worst.max((fd - gr.d[i]).abs() / scale);
            }
            assert!(worst < 1e-6, "trial {trial}: {worst}");
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let (g, t) = setup(7);
        let j = ReducedEnergy::new(&g, &t);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = random_config(&mut rng, 7, 3);
        let h = j.hessian_tau(&cfg).unwrap();
        let flat = cfg.tau_flat();
        let s = 1e-6;
        for a in 0..flat.len() {
            let mut p = flat.clone();
            let mut m = flat.clone();
            p[a] += s;
            m[a] -= s;
            let gp = j.grad(&cfg.with_tau_flat(&p)).unwrap().tau_flat();
            let gm = j.grad(&cfg.with_tau_flat(&m)).unwrap().tau_flat();
            for b in 0..flat.len() {
                let fd = (gp[b] - gm[b]) / (2.0 * s);
                assert!((fd - h[(b, a)]).abs() < 1e-5 * h.amax());
            }
        }
        assert_eq!(j.hessian_d(&cfg), DMatrix::identity(3, 3) * (-4.0 * t.b_n));
    }

    #[test]
    fn expansion_terms() {
        let (g, t) = setup(7);
        let j = ReducedEnergy::new(&g, &t);
        let d0 = compute_d0(&t, g.weyl_norm_sq).unwrap();
        let cfg = ClusterConfig::new(vec![0.0; 2], vec![e1(7, 1.0), e1(7, -1.0)], d0).unwrap();
        let e = eval_expansion(1e-12, &cfg, &j).unwrap();
        assert_relative_eq!(e.total, 2.0 * t.d_n, max_relative = 1e-12);
        assert_relative_eq!(e.c_xi0, 2.0 * t.b_n * d0 * d0 / 2.0, max_relative = 1e-13);
        assert!(eval_expansion(1.5, &cfg, &j).is_err());
    }

    #[test]
    fn taylor_coefficient_oracle() {
        // The single-peak correction is ε²·p(δ) with p a degree-6 polynomial in δ = ε^β;
        // its δ² coefficient is extracted by exact interpolation on 7 nodes.
        for n in [7usize, 8, 9, 10] {
            let dim = Dim::new(n).unwrap();
            let t = closed_form_constants(dim);
            let w2 = 1.7;
            let d0 = compute_d0(&t, w2).unwrap();
            let beta = beta_exponent(n);
            for (q_tt, d) in [(0.0, 0.0), (2.3, 0.0), (0.0, 0.7), (1.1, -0.4)] {
                let nodes: Vec<f64> = (-3..=3).map(|i| 0.05 * i as f64).collect();
                let vals: Vec<f64> = nodes
                    .iter()
                    .map(|&delta: &f64| {
                        if delta == 0.0 {
                            return t.phi(d0, w2);
                        }
                        let eps = delta.abs().powf(1.0 / beta);
                        // odd powers of δ change sign with δ; evaluate via ε and re-sign d
                        let v = if delta > 0.0 {
                            single_peak_correction(eps, n, &t, w2, q_tt, d0, d)
                        } else {
                            single_peak_correction(eps, n, &t, w2, q_tt, d0, -d)
                        };
                        v / (eps * eps)
                    })
                    .collect();
                let vm = DMatrix::from_fn(7, 7, |i, j| nodes[i].powi(j as i32));
                let c = vm.lu().solve(&DVector::from_vec(vals)).unwrap();
                let expect = -0.5 * t.a_n * d0.powi(4) * q_tt - 2.0 * t.b_n * d * d;
                let scale = t.b_n * d0 * d0;
                assert!((c[2] - expect).abs() < 1e-8 * scale, "N={n}: {} vs {expect}", c[2]);
                assert!(c[1].abs() < 1e-8 * scale);
                assert!((c[0] - t.phi(d0, w2)).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn printed_flag_halves_fluctuation() {
        let (g, t) = setup(7);
        let mut j = ReducedEnergy::new(&g, &t);
        let cfg = ClusterConfig::new(vec![0.5], vec![vec![0.0; 7]], 1.0).unwrap();
        let a = j.eval(&cfg).unwrap().fluctuation;
        j.fluctuation = Fluctuation::Printed;
        let b = j.eval(&cfg).unwrap().fluctuation;
        assert_relative_eq!(a, 2.0 * b);
        assert_relative_eq!(a, -2.0 * t.b_n * 0.25);
    }
}
