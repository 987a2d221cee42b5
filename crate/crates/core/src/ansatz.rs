//! The `k`-peak ansatz `Σ_i W_i` in the chart at the concentration point.
//!
//! `W_i(x) = χ(|x|)·μ_i^{−(N−2)/2}[U(y) + μ_i²·η_i(x)·V(y)]`, `y = (x − ε^βτ_i)/μ_i`,
//! `μ_i = ε^{1/2}(d₀ + d_iε^β)`. Derivatives are analytic throughout.
//!
//! The metric at `x` is read in the normal chart of the nearest peak (peak-local
//! charts), either from the quadratic curvature model or from an exact model chart.

use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::sync::Arc;

use crate::bubble::{eval_kernel, nonlinearity, Exponents};
use crate::correction::{CorrectionField, Jet};
use crate::error::{Error, Result};
use crate::geometry::{ExactChart, GeometryData};
use crate::reduced::{beta_exponent, ClusterConfig};

/// Length scale of the inner cutoff `η` around each peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaScale {
    /// `η(|x−c|/μ)`: the correction lives on the bubble core only.
    Bubble,
    /// `η(|x−c|/ℓ)` with `ℓ` half the peak-ball radius, so `η` is supported in `B_h`.
    Separation,
    /// `η ≡ 1`.
    Off,
}

impl FromStr for EtaScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bubble" => Ok(EtaScale::Bubble),
            "separation" => Ok(EtaScale::Separation),
            "off" => Ok(EtaScale::Off),
            _ => Err(Error::Invalid(format!("unknown eta scale '{s}' (bubble|separation|off)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Peak {
    pub center: Vec<f64>,
    pub mu: f64,
}

/// Inverse metric (row-major), `g^{ij}Γ^k_{ij}` and `√|g|` at a point.
#[derive(Debug, Clone)]
pub struct ChartMetric {
    pub g_inv: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sqrt_det: f64,
}

/// Region of the chart used to stratify integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stratum {
    /// Peak ball `B_h`.
    Peak(usize),
    /// `B(0, r₀/2)` minus the peak balls.
    Between,
    /// `r₀/2 ≤ |x| < r₀`, where `χ < 1`.
    Shell,
    Outside,
}

#[derive(Debug, Clone)]
pub struct AnsatzSpec {
    pub eps: f64,
    pub cfg: ClusterConfig,
    pub geo: GeometryData,
    pub correction: Arc<CorrectionField>,
    pub r0: f64,
    pub eta_scale: EtaScale,
    /// `ε` in the equation; equals `eps` unless overridden.
    pub equation_eps: f64,
    /// `χ` active; when off the ansatz is defined on all of `R^N`.
    pub cutoff: bool,
    ex: Exponents,
    peaks: Vec<Peak>,
    sigma: f64,
    ball_radius: f64,
    riemann_nz: Vec<(usize, usize, usize, usize, f64)>,
    gamma_trace: Vec<f64>,
    ricci: Vec<f64>,
}

/// Peak balls have radius `ε^β σ/2`. A single peak has no neighbour; its ball is `B(0, ε^β)`.
pub fn peak_ball_sigma(cfg: &ClusterConfig) -> f64 {
    cfg.closest_pair().map_or(2.0, |(_, _, d)| 0.5 * d)
}

/// Smallest `r0` for which every peak ball lies inside `B(0, r0/2)`.
pub fn min_cutoff_radius(eps: f64, cfg: &ClusterConfig) -> f64 {
    let eb = eps.powf(beta_exponent(cfg.dim()));
    let far = cfg.tau.iter().map(|t| norm(t)).fold(0.0, f64::max) * eb;
    2.0 * (far + eb * peak_ball_sigma(cfg) / 2.0)
}

/// `[s, s', s'']` of the C² blend equal to 1 for `t ≤ a` and 0 for `t ≥ b`.
pub fn smooth_cut(t: f64, a: f64, b: f64) -> [f64; 3] {
    if t <= a {
        return [1.0, 0.0, 0.0];
    }
    if t >= b {
        return [0.0, 0.0, 0.0];
    }
    let w = b - a;
    let u = (t - a) / w;
    let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    let s1 = 30.0 * u * u * (1.0 - u) * (1.0 - u);
    let s2 = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
    [1.0 - s, -s1 / w, -s2 / (w * w)]
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Jet of `x ↦ φ(|z|)` from `[φ, φ', φ'/r, φ'']`.
fn radial_jet(z: &[f64], r: f64, f: [f64; 4], want_hess: bool) -> Jet {
    let n = z.len();
    let [v, d1, d1_over_r, d2] = f;
    let grad: Vec<f64> = if r > 0.0 { z.iter().map(|zi| d1 * zi / r).collect() } else { vec![0.0; n] };
    let mut hess = Vec::new();
    if want_hess {
        hess = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (ui, uj) = if r > 0.0 { (z[i] / r, z[j] / r) } else { (0.0, 0.0) };
                let d = if i == j { 1.0 } else { 0.0 };
                hess[i * n + j] = d2 * ui * uj + d1_over_r * (d - ui * uj);
            }
        }
    }
    Jet { v, grad, hess }
}

fn cut_jet(z: &[f64], a: f64, b: f64, want_hess: bool) -> Jet {
    let r = norm(z);
    let [s, s1, s2] = smooth_cut(r, a, b);
    let s1r = if s1 != 0.0 { s1 / r } else { 0.0 };
    radial_jet(z, r, [s, s1, s1r, s2], want_hess)
}

impl AnsatzSpec {
    pub fn new(
        eps: f64,
        cfg: ClusterConfig,
        geo: GeometryData,
        correction: Arc<CorrectionField>,
        r0: f64,
        eta_scale: EtaScale,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = geo.n();
        if !(eps > 0.0) || !(r0 > 0.0) {
            return Err(Error::Invalid(format!("eps and r0 must be positive (eps={eps}, r0={r0})")));
        }
        if cfg.dim() != n || correction.dim != geo.dim {
            return Err(Error::Invalid("configuration, geometry and correction dimensions differ".into()));
        }
        let ex = Exponents::new(geo.dim);
        let eb = eps.powf(beta_exponent(n));
        let mut peaks = Vec::with_capacity(cfg.k);
        for i in 0..cfg.k {
            let mu = eps.sqrt() * (cfg.d0 + cfg.d[i] * eb);
            if !(mu > 0.0) {
                return Err(Error::Invalid(format!("peak {i} has nonpositive scale {mu}")));
            }
            peaks.push(Peak { center: cfg.tau[i].iter().map(|t| t * eb).collect(), mu });
        }
        let sigma = peak_ball_sigma(&cfg);
        let ball_radius = eb * sigma / 2.0;
        let far = peaks.iter().map(|p| norm(&p.center)).fold(0.0, f64::max);
        if far + ball_radius > r0 / 2.0 {
            return Err(Error::Invalid(format!(
                "peak balls reach |x| = {:.4} beyond r0/2 = {:.4}; increase r0",
                far + ball_radius,
                r0 / 2.0
            )));
        }
        for (i, p) in peaks.iter().enumerate() {
            if 2.0 * p.mu > ball_radius {
                return Err(Error::Invalid(format!(
                    "separation fails at peak {i}: mu = {:.3e} vs peak-ball radius {:.3e}; eps too large",
                    p.mu, ball_radius
                )));
            }
        }
        let reach = r0 + far;
        match geo.exact_chart {
            Some(ExactChart::ProductSpheres(..)) => {
                if reach >= 0.95 * std::f64::consts::PI {
                    return Err(Error::Invalid(format!("chart radius {reach:.3} exceeds the exact chart domain")));
                }
            }
            None => {
                let rm = geo.riemann.norm_sq().sqrt();
                if reach * reach * rm / 3.0 >= 0.5 {
                    return Err(Error::Invalid(format!(
                        "quadratic metric model is not positive at radius {reach:.3}; decrease r0"
                    )));
                }
            }
        }
        let riemann_nz = geo.riemann.nonzeros();
        let ct = geo.christoffel_trace();
        let ric = geo.ricci();
        Ok(AnsatzSpec {
            eps,
            equation_eps: eps,
            cutoff: true,
            ex,
            sigma,
            ball_radius,
            riemann_nz,
            gamma_trace: ct.transpose().as_slice().to_vec(),
            ricci: ric.as_slice().to_vec(),
            peaks,
            cfg,
            geo,
            correction,
            r0,
            eta_scale,
        })
    }

    pub fn with_equation_eps(mut self, e: f64) -> Self {
        self.equation_eps = e;
        self
    }

    pub fn without_cutoff(mut self) -> Self {
        self.cutoff = false;
        self
    }

    pub fn exponents(&self) -> &Exponents {
        &self.ex
    }

    pub fn n(&self) -> usize {
        self.geo.n()
    }

    pub fn k(&self) -> usize {
        self.peaks.len()
    }

    pub fn peaks(&self) -> &[Peak] {
        &self.peaks
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Radius `ε^βσ/2` of the peak balls `B_h`.
    pub fn ball_radius(&self) -> f64 {
        self.ball_radius
    }

    /// `max_i μ_i / (ε^βσ/2)`.
    pub fn separation_ratio(&self) -> f64 {
        self.peaks.iter().map(|p| p.mu / self.ball_radius).fold(0.0, f64::max)
    }

    /// `ν` of the ansatz correction (the negative of the solver's multiplier).
    pub fn nu(&self) -> f64 {
        -self.correction.nu
    }

    pub fn nearest_peak(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.peaks.iter().enumerate() {
            let d: f64 = x.iter().zip(&p.center).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn stratum(&self, x: &[f64]) -> Stratum {
        let r = norm(x);
        if self.cutoff && r >= self.r0 {
            return Stratum::Outside;
        }
        let h = self.nearest_peak(x);
        let d: f64 = x.iter().zip(&self.peaks[h].center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if d < self.ball_radius {
            Stratum::Peak(h)
        } else if r < self.r0 / 2.0 {
            Stratum::Between
        } else {
            Stratum::Shell
        }
    }

    /// Metric data at `x` in the normal chart of the nearest peak.
    pub fn chart(&self, x: &[f64]) -> ChartMetric {
        let n = self.n();
        let c = &self.peaks[self.nearest_peak(x)].center;
        let z: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
        match self.geo.exact_chart {
            Some(ExactChart::ProductSpheres(n1, _)) => product_chart(&z, n1),
            None => {
                let mut g_inv = vec![0.0; n * n];
                for i in 0..n {
                    g_inv[i * n + i] = 1.0;
                }
                for &(i, a, b, j, v) in &self.riemann_nz {
                    g_inv[i * n + j] += v * z[a] * z[b] / 3.0;
                }
                let gamma = (0..n).map(|k| (0..n).map(|l| self.gamma_trace[k * n + l] * z[l]).sum()).collect();
                let mut q = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        q += self.ricci[a * n + b] * z[a] * z[b];
                    }
                }
                ChartMetric { g_inv, gamma, sqrt_det: 1.0 - q / 6.0 }
            }
        }
    }

    fn chi(&self, x: &[f64], want_hess: bool) -> Jet {
        if !self.cutoff {
            let n = x.len();
            return Jet { v: 1.0, grad: vec![0.0; n], hess: if want_hess { vec![0.0; n * n] } else { vec![] } };
        }
        cut_jet(x, self.r0 / 2.0, self.r0, want_hess)
    }

    fn eta_length(&self, i: usize) -> Option<f64> {
        match self.eta_scale {
            EtaScale::Bubble => Some(self.peaks[i].mu),
            EtaScale::Separation => Some(self.ball_radius / 2.0),
            EtaScale::Off => None,
        }
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::Invalid(format!("point has dimension {}, expected {}", x.len(), self.n())));
        }
        if self.cutoff && norm(x) > 2.0 * self.r0 {
            return Err(Error::Invalid(format!("point outside the chart ball B(0, 2r0), r0 = {}", self.r0)));
        }
        Ok(())
    }

    /// `W_i` with gradient and (optionally) Hessian at `x`.
    pub fn peak_jet(&self, i: usize, x: &[f64], want_hess: bool) -> Jet {
        let n = x.len();
        let p = &self.peaks[i];
        let mu = p.mu;
        let m = mu.powf(-(self.ex.nf() - 2.0) / 2.0);
        let z: Vec<f64> = x.iter().zip(&p.center).map(|(a, b)| a - b).collect();
        let r = norm(&z);
        let rho = r / mu;
        let [u0, u1, u2] = self.ex.u_radial(rho);
        let u1r = -(self.ex.nf() - 2.0) * self.ex.alpha * (1.0 + rho * rho).powf(-self.ex.nf() / 2.0);
        // bubble part in x, scaled by m
        let ub = radial_jet(&z, r, [u0, u1 / mu, u1r / (mu * mu), u2 / (mu * mu)], want_hess);
        let mut phi = Jet { v: m * ub.v, grad: ub.grad.iter().map(|g| m * g).collect(), hess: ub.hess };
        phi.hess.iter_mut().for_each(|h| *h *= m);

        let eta = match self.eta_length(i) {
            Some(l) => cut_jet(&z, l, 2.0 * l, want_hess),
            None => Jet { v: 1.0, grad: vec![0.0; n], hess: if want_hess { vec![0.0; n * n] } else { vec![] } },
        };
        if eta.v != 0.0 || eta.grad.iter().any(|g| *g != 0.0) {
            if !self.correction.is_zero() {
                let y: Vec<f64> = z.iter().map(|zi| zi / mu).collect();
                let vj = self.correction.jet(&y);
                // V of the ansatz is the negative of the solver's field
                let (v, vg, vh) = (-vj.v, &vj.grad, &vj.hess);
                let c = m * mu * mu;
                phi.v += c * eta.v * v;
                for a in 0..n {
                    phi.grad[a] += c * (eta.grad[a] * v - eta.v * vg[a] / mu);
                }
                if want_hess {
                    for a in 0..n {
                        for b in 0..n {
                            phi.hess[a * n + b] += c
                                * (eta.hess[a * n + b] * v
                                    - (eta.grad[a] * vg[b] + eta.grad[b] * vg[a]) / mu
                                    - eta.v * vh[a * n + b] / (mu * mu));
                        }
                    }
                }
            }
        }
        let chi = self.chi(x, want_hess);
        if chi.v == 1.0 && chi.grad.iter().all(|g| *g == 0.0) {
            return phi;
        }
        let mut w = Jet { v: chi.v * phi.v, grad: vec![0.0; n], hess: vec![] };
        for a in 0..n {
            w.grad[a] = chi.v * phi.grad[a] + chi.grad[a] * phi.v;
        }
        if want_hess {
            w.hess = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    w.hess[a * n + b] = chi.v * phi.hess[a * n + b]
                        + chi.grad[a] * phi.grad[b]
                        + chi.grad[b] * phi.grad[a]
                        + chi.hess[a * n + b] * phi.v;
                }
            }
        }
        w
    }

    /// Value and gradient of the correction part `μ_i^{−(N−6)/2}η_i V(y)` of `W_i`
    /// (without `χ`); `None` where it vanishes identically.
    pub fn correction_part(&self, i: usize, x: &[f64]) -> Option<Jet> {
        if self.correction.is_zero() {
            return None;
        }
        let p = &self.peaks[i];
        let mu = p.mu;
        let z: Vec<f64> = x.iter().zip(&p.center).map(|(a, b)| a - b).collect();
        let eta = match self.eta_length(i) {
            Some(l) => cut_jet(&z, l, 2.0 * l, false),
            None => Jet { v: 1.0, grad: vec![0.0; x.len()], hess: vec![] },
        };
        if eta.v == 0.0 {
            return None;
        }
        let y: Vec<f64> = z.iter().map(|zi| zi / mu).collect();
        let vj = self.correction.jet(&y);
        let c = mu.powf(-(self.ex.nf() - 6.0) / 2.0);
        let grad = (0..x.len()).map(|a| -c * (eta.grad[a] * vj.v + eta.v * vj.grad[a] / mu)).collect();
        Some(Jet { v: -c * eta.v * vj.v, grad, hess: vec![] })
    }

    /// `W_i(x)`; zero outside the support of `χ`.
    pub fn peak_value(&self, i: usize, x: &[f64]) -> f64 {
        if self.cutoff && norm(x) >= self.r0 {
            return 0.0;
        }
        let p = &self.peaks[i];
        let mu = p.mu;
        let mut y = [0.0f64; 12];
        let n = x.len();
        for a in 0..n {
            y[a] = (x[a] - p.center[a]) / mu;
        }
        let y = &y[..n];
        let rho = norm(y);
        let h = (self.ex.nf() - 2.0) / 2.0;
        let mut v = self.ex.u(rho);
        if !self.correction.is_zero() {
            let eta = match self.eta_length(i) {
                Some(l) => smooth_cut(rho * mu, l, 2.0 * l)[0],
                None => 1.0,
            };
            if eta != 0.0 {
                v -= mu * mu * eta * self.correction.eval(y);
            }
        }
        let chi = if self.cutoff { smooth_cut(norm(x), self.r0 / 2.0, self.r0)[0] } else { 1.0 };
        chi * mu.powf(-h) * v
    }

    /// `√|g|` at `x` (see [`AnsatzSpec::chart`]).
    pub fn sqrt_det(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let c = &self.peaks[self.nearest_peak(x)].center;
        let mut z = [0.0f64; 12];
        for a in 0..n {
            z[a] = x[a] - c[a];
        }
        let z = &z[..n];
        match self.geo.exact_chart {
            Some(ExactChart::ProductSpheres(n1, _)) => {
                let mut s = 1.0;
                for (lo, hi) in [(0, n1), (n1, n)] {
                    let rho = norm(&z[lo..hi]);
                    let vol = if rho < 1e-3 { 1.0 - rho * rho / 6.0 } else { rho.sin() / rho };
                    s *= vol.powi((hi - lo) as i32 - 1);
                }
                s
            }
            None => {
                if self.ricci.iter().all(|v| *v == 0.0) {
                    return 1.0;
                }
                let mut q = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        q += self.ricci[a * n + b] * z[a] * z[b];
                    }
                }
                1.0 - q / 6.0
            }
        }
    }

    /// `Σ_i W_i(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        Ok((0..self.k()).map(|i| self.peak_value(i, x)).sum())
    }

    /// `Z_{j,i}(x) = χ(|x|)μ_i^{−(N−2)/2}ψ^j((x − ε^βτ_i)/μ_i)`.
    pub fn kernel(&self, j: usize, i: usize, x: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        let p = &self.peaks[i];
        let y: Vec<f64> = x.iter().zip(&p.center).map(|(a, b)| (a - b) / p.mu).collect();
        let chi = self.chi(x, false).v;
        Ok(chi * p.mu.powf(-(self.ex.nf() - 2.0) / 2.0) * eval_kernel(&self.ex, j, &y)?)
    }

    /// `|W_i(x)|·|x − ε^βτ_i|^{N−2}/μ_i^{(N−2)/2}`, bounded uniformly in `x` and `ε`.
    pub fn decay_ratio(&self, i: usize, x: &[f64]) -> f64 {
        let p = &self.peaks[i];
        let d: f64 = x.iter().zip(&p.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let h = (self.ex.nf() - 2.0) / 2.0;
        self.peak_value(i, x).abs() * d.powf(2.0 * h) / p.mu.powf(h)
    }

    /// Pointwise residual
    /// `−Δ_g(ΣW_i) + (β_N R + ε)(ΣW_i) − f(ΣW_i) − ν Σ_i Z_{0,i}`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let n = x.len();
        if self.cutoff && norm(x) >= self.r0 {
            return 0.0;
        }
        let g = self.chart(x);
        let mut w = 0.0;
        let mut lap = 0.0;
        let mut drift = 0.0;
        for i in 0..self.k() {
            let j = self.peak_jet(i, x, true);
            w += j.v;
            for a in 0..n {
                drift += g.gamma[a] * j.grad[a];
                for b in 0..n {
                    lap += g.g_inv[a * n + b] * j.hess[a * n + b];
                }
            }
        }
        let mut r = -lap + drift + (self.ex.beta * self.geo.scal + self.equation_eps) * w - nonlinearity(&self.ex, w).f;
        let nu = self.nu();
        if nu != 0.0 {
            for i in 0..self.k() {
                r -= nu * self.kernel(0, i, x).unwrap_or(0.0);
            }
        }
        r
    }
}

/// Normal coordinates of the unit product `S^{n₁} × S^{n−n₁}`: each factor has
/// `g^{-1} = ûû + (ρ/sin ρ)²(I − ûû)`, `g^{ij}Γ^k_{ij} = (d−1)(ρ/sin²ρ − cot ρ)û` and
/// `√|g| = (sin ρ/ρ)^{d−1}`.
pub fn product_chart(z: &[f64], n1: usize) -> ChartMetric {
    let n = z.len();
    let mut g_inv = vec![0.0; n * n];
    let mut gamma = vec![0.0; n];
    let mut sqrt_det = 1.0;
    for (lo, hi) in [(0, n1), (n1, n)] {
        let d = (hi - lo) as f64;
        let rho = z[lo..hi].iter().map(|v| v * v).sum::<f64>().sqrt();
        let (t2, drift, vol) = if rho < 1e-3 {
            let r2 = rho * rho;
            (1.0 + r2 / 3.0 + r2 * r2 / 15.0, 2.0 / 3.0 + 4.0 * r2 / 45.0, 1.0 - r2 / 6.0 + r2 * r2 / 120.0)
        } else {
            let s = rho.sin();
            ((rho / s).powi(2), (rho / (s * s) - rho.cos() / s) / rho, s / rho)
        };
        sqrt_det *= vol.powf(d - 1.0);
        for a in lo..hi {
            gamma[a] = (d - 1.0) * drift * z[a];
            for b in lo..hi {
                let uu = if rho > 0.0 { z[a] * z[b] / (rho * rho) } else { 0.0 };
                let delta = if a == b { 1.0 } else { 0.0 };
                g_inv[a * n + b] = uu + t2 * (delta - uu);
            }
        }
    }
    ChartMetric { g_inv, gamma, sqrt_det }
}
