//! The curvature correction `V`: solution of
//! `−ΔV − pU^{p−1}V = E(x) + νψ⁰`, `∫Vψ^j = 0` (`j = 0..N`),
//! where `E(x) = −⅓R_{iabj}x_ax_b∂²_{ij}U + ∂_lΓ^k_{ii}x_l∂_kU + β_N R U` is the leading
//! chart error of the bubble.
//!
//! With `s = 1+r²`, `c = (N−2)α_N` and `∂²_{ij}U = −c(δ_{ij}s^{−N/2} − N x_ix_j s^{−N/2−1})`,
//! the `x_ix_j` part drops out by antisymmetry of `R` and
//!
//! ```text
//! E(x) = s^{−N/2} xᵀPx + β_N R α_N s^{−(N−2)/2},   P = (c/3)Ric − c·sym(Γ'),
//! ```
//!
//! `Γ'_{kl} = Σ_i ∂_lΓ^k_{ii}`. Splitting `P = (trP/N)I + P₀` gives an `ℓ = 0` source
//! `(trP/N)r²s^{−N/2} + β_N R α_N s^{−(N−2)/2}` and an `ℓ = 2` source
//! `r²s^{−N/2}·(xᵀP₀x/r²)`; `E` is even, so `ℓ = 1` is empty and the truncation at `ℓ = 2`
//! is exact. One radial solve per degree suffices since all `ℓ = 2` components share the
//! same radial profile.

use nalgebra::DMatrix;
use std::io::Write;

use crate::bubble::{bubble_gradient, bubble_hessian, Dim, Exponents};
use crate::constants::radial_volume_integral;
use crate::constants::QuadSpec;
use crate::error::{Error, Result};
use crate::geometry::GeometryData;
use crate::radial::{solve_tridiagonal, EvenSpline, SinhGrid};

/// Spec RHS `E(x)` evaluated term by term from the full tensors.
pub fn build_rhs(ex: &Exponents, geo: &GeometryData, x: &[f64]) -> f64 {
    let n = geo.n();
    let hess = bubble_hessian(ex, x);
    let grad = bubble_gradient(ex, x);
    let mut t1 = 0.0;
    for (i, a, b, j, v) in geo.riemann.nonzeros() {
        t1 += v * x[a] * x[b] * hess[i * n + j];
    }
    let ct = geo.christoffel_trace();
    let mut t2 = 0.0;
    for k in 0..n {
        for l in 0..n {
            t2 += ct[(k, l)] * x[l] * grad[k];
        }
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    -t1 / 3.0 + t2 + ex.beta * geo.scal * ex.u(r2.sqrt())
}

/// Quadratic-form coefficient `P` of the RHS (see module docs).
pub fn rhs_quadratic_form(ex: &Exponents, geo: &GeometryData) -> DMatrix<f64> {
    let c = (ex.nf() - 2.0) * ex.alpha;
    let ct = geo.christoffel_trace();
    let sym = (&ct + ct.transpose()) * 0.5;
    geo.ricci() * (c / 3.0) - sym * c
}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub r_max: f64,
    pub nodes: usize,
    /// Transition radius of the `sinh` stretching.
    pub a: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { r_max: 1e4, nodes: 8000, a: 1.0 }
    }
}

/// Decaying Robin exponent at `r_max`: `V ~ r^{4−N}` because the sources decay like `r^{2−N}`.
fn robin_exponent(n: f64) -> f64 {
    n - 4.0
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// Lagrange multiplier of the `ψ⁰` constraint; zero for the continuous problem.
    pub lambda: f64,
    pub pivot_ratio: f64,
    /// `|⟨E₀ + νψ⁰, ψ⁰⟩|/(‖E₀‖‖ψ⁰‖)` by an independent quadrature (`E₀` the `ℓ = 0` part).
    pub fredholm_defect: f64,
    /// `|∫Vψ⁰|/(‖V‖‖ψ⁰‖)` on a refined lattice.
    pub orthogonality: f64,
    /// Relative size of RHS content outside `ℓ ∈ {0, 2}`.
    pub mode_defect: f64,
    /// Relative size of the odd (`ℓ = 1`) part of the RHS.
    pub l1_defect: f64,
}

#[derive(Debug, Clone)]
pub struct CorrectionField {
    pub dim: Dim,
    pub grid: SinhGrid,
    /// `ℓ = 0` radial profile.
    pub v0: Vec<f64>,
    /// `ℓ = 2` radial profile for a unit harmonic `xᵀP₀x/r²`.
    pub v2: Vec<f64>,
    /// Traceless quadratic form carried by the `ℓ = 2` mode.
    pub p0: DMatrix<f64>,
    pub nu: f64,
    pub diagnostics: Option<Diagnostics>,
    s0: EvenSpline,
    q2: EvenSpline,
    zero: bool,
}

/// Value, gradient and row-major Hessian.
#[derive(Debug, Clone)]
pub struct Jet {
    pub v: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl CorrectionField {
    pub fn from_modes(dim: Dim, grid: SinhGrid, v0: Vec<f64>, v2: Vec<f64>, p0: DMatrix<f64>, nu: f64) -> Result<Self> {
        let m = grid.len();
        if v0.len() != m || v2.len() != m {
            return Err(Error::Invalid("mode samples do not match the grid".into()));
        }
        // q = v2/r² is even and smooth; its value at 0 by extrapolation in r².
        let mut q: Vec<f64> = (0..m).map(|i| if i == 0 { 0.0 } else { v2[i] / (grid.r[i] * grid.r[i]) }).collect();
        let (r1, r2) = (grid.r[1] * grid.r[1], grid.r[2] * grid.r[2]);
        q[0] = (q[1] * r2 - q[2] * r1) / (r2 - r1);
        let s0 = EvenSpline::new(grid.dt, v0.clone())?;
        let q2 = EvenSpline::new(grid.dt, q)?;
        let zero = v0.iter().chain(&v2).all(|v| *v == 0.0) && nu == 0.0;
        Ok(CorrectionField { dim, grid, v0, v2, p0, nu, diagnostics: None, s0, q2, zero })
    }

    pub fn zero(dim: Dim, spec: GridSpec) -> Result<Self> {
        let grid = SinhGrid::new(spec.r_max, spec.nodes, spec.a)?;
        let m = grid.len();
        let n = dim.get();
        Self::from_modes(dim, grid, vec![0.0; m], vec![0.0; m], DMatrix::zeros(n, n), 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Radial profile `f`, `f_r`, `f_rr` from a spline in `t`; power-law extension beyond `r_max`.
    fn radial(&self, s: &EvenSpline, r: f64, decay: f64) -> [f64; 3] {
        let a = self.grid.a;
        let rm = self.grid.r_max();
        if r > rm {
            let [v, _, _] = s.eval((rm / a).asinh());
            let f = v * (r / rm).powf(-decay);
            return [f, -decay * f / r, decay * (decay + 1.0) * f / (r * r)];
        }
        let t = (r / a).asinh();
        let [v, vt, vtt] = s.eval(t);
        let rt = a.hypot(r);
        let vr = vt / rt;
        let vrr = (vtt - vt * r / rt) / (rt * rt);
        [v, vr, vrr]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n = self.dim.as_f64();
        let v0 = self.radial(&self.s0, r, n - 4.0)[0];
        let q = self.radial(&self.q2, r, n - 2.0)[0];
        v0 + q * quad(&self.p0, x)
    }

    /// Value, gradient and Hessian of `V` at `x`.
    pub fn jet(&self, x: &[f64]) -> Jet {
        let n = x.len();
        let nf = n as f64;
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = self.radial(&self.s0, r, nf - 4.0);
        let g = self.radial(&self.q2, r, nf - 2.0);
        let px: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self.p0[(i, j)] * x[j]).sum()).collect();
        let qx: f64 = px.iter().zip(x).map(|(a, b)| a * b).sum();
        // f'/r → f''(0) as r → 0
        let small = r < 1e-7 * self.grid.a;
        let fr_over_r = if small { f[2] } else { f[1] / r };
        let gr_over_r = if small { g[2] } else { g[1] / r };
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            grad[i] = fr_over_r * x[i] + gr_over_r * x[i] * qx + 2.0 * g[0] * px[i];
        }
        for i in 0..n {
            for j in 0..n {
                let (xi, xj) = if small { (0.0, 0.0) } else { (x[i] / r, x[j] / r) };
                let delta = if i == j { 1.0 } else { 0.0 };
                let radial_f = f[2] * xi * xj + fr_over_r * (delta - xi * xj);
                let radial_g = g[2] * xi * xj + gr_over_r * (delta - xi * xj);
                hess[i * n + j] = radial_f
                    + radial_g * qx
                    + 2.0 * gr_over_r * (x[i] * px[j] + x[j] * px[i])
                    + 2.0 * g[0] * self.p0[(i, j)];
            }
        }
        Jet { v: f[0] + g[0] * qx, grad, hess }
    }

    /// CSV dump: metadata comment lines, then `r,ell,m,value`. The `ℓ = 2` rows carry
    /// `λ_m·v₂(r)` for the eigenpairs `(λ_m, e_m)` of `P₀`, i.e. `V = v₀ + Σ_m λ_m v₂ (x̂·e_m)²`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dim.get();
        let eig = self.p0.clone().symmetric_eigen();
        writeln!(w, "# N={n}, nu={:e}, r_max={:e}, nodes={}, a={}", self.nu, self.grid.r_max(), self.grid.len(), self.grid.a)?;
        for m in 0..n {
            let e: Vec<String> = eig.eigenvectors.column(m).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "# ell=2 m={m} eigenvalue={:.17e} axis=[{}]", eig.eigenvalues[m], e.join(" "))?;
        }
        writeln!(w, "r,ell,m,value")?;
        for (i, r) in self.grid.r.iter().enumerate() {
            writeln!(w, "{r:.17e},0,0,{:.17e}", self.v0[i])?;
            for m in 0..n {
                writeln!(w, "{r:.17e},2,{m},{:.17e}", eig.eigenvalues[m] * self.v2[i])?;
            }
        }
        Ok(())
    }
}

fn quad(p: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += p[(i, j)] * x[i] * x[j];
        }
    }
    s
}

/// Radial operator `−Δ_ℓ − pU^{p−1}` on the sinh grid, second order in `t`, with
/// regularity at 0 and Robin decay at `r_max`. Rows are scaled by `r_t²dt²` so the
/// pivots are O(1). Returns `(lower, diag, upper, row_scale)`.
fn assemble(ex: &Exponents, grid: &SinhGrid, ell: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = ex.nf();
    let m = grid.len();
    let dt = grid.dt;
    let kappa = (ell as f64) * (ell as f64 + n - 2.0);
    let mut lo = vec![0.0; m];
    let mut di = vec![0.0; m];
    let mut up = vec![0.0; m];
    let mut scale = vec![0.0; m];
    let a = grid.a;
    if ell == 0 {
        scale[0] = a * a * dt * dt;
        let c = 2.0 * n / (a * a * dt * dt);
        di[0] = (c - ex.potential(0.0)) * scale[0];
        up[0] = -c * scale[0];
    } else {
        di[0] = 1.0;
    }
    for i in 1..m {
        let r = grid.r[i];
        let rt = grid.rt(i);
        let a2 = 1.0 / (rt * rt * dt * dt);
        let b = (-r / (rt * rt * rt) + (n - 1.0) / (r * rt)) / (2.0 * dt);
        scale[i] = rt * rt * dt * dt;
        lo[i] = -(a2 - b) * scale[i];
        di[i] = (2.0 * a2 + kappa / (r * r) - ex.potential(r)) * scale[i];
        up[i] = -(a2 + b) * scale[i];
    }
    // ghost node from v_r + q v/r = 0
    let i = m - 1;
    let q = robin_exponent(n);
    let ghost = -2.0 * dt * q * grid.rt(i) / grid.r[i];
    lo[i] += up[i];
    di[i] += up[i] * ghost;
    up[i] = 0.0;
    (lo, di, up, scale)
}

/// `ℓ = 0` and `ℓ = 2` radial sources of the RHS.
fn sources(ex: &Exponents, geo: &GeometryData, r: f64) -> (f64, f64) {
    let p = rhs_quadratic_form(ex, geo);
    let tr = p.trace() / ex.nf();
    let s = 1.0 + r * r;
    let g = r * r * s.powf(-ex.nf() / 2.0);
    (tr * g + ex.beta * geo.scal * ex.u(r), g)
}

pub fn solve_correction(geo: &GeometryData, spec: GridSpec) -> Result<CorrectionField> {
    if spec.r_max < 100.0 || spec.nodes < 2000 {
        return Err(Error::Invalid(format!(
            "correction grid needs r_max >= 100 and at least 2000 nodes (got {}, {})",
            spec.r_max, spec.nodes
        )));
    }
    if spec.nodes % 2 != 0 {
        return Err(Error::Invalid("correction grid needs an even node count".into()));
    }
    let dim = geo.dim;
    let ex = Exponents::new(dim);
    let n = ex.nf();
    let grid = SinhGrid::new(spec.r_max, spec.nodes, spec.a)?;
    let m = grid.len();
    let p = rhs_quadratic_form(&ex, geo);
    let p0 = &p - DMatrix::identity(dim.get(), dim.get()) * (p.trace() / n);

    let (h0, g2): (Vec<f64>, Vec<f64>) = grid.r.iter().map(|&r| sources(&ex, geo, r)).unzip();
    let psi: Vec<f64> = grid.r.iter().map(|&r| ex.psi0(r)).collect();
    let wq = grid.weights()?;
    let w: Vec<f64> = wq.iter().zip(&grid.r).map(|(w, r)| w * r.powf(n - 1.0)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&w).map(|((a, b), w)| a * b * w).sum::<f64>();
    let nu = -dot(&h0, &psi) / dot(&psi, &psi);

    let solve0 = || -> Result<(Vec<f64>, f64, f64)> {
        let (lo, di, up, sc) = assemble(&ex, &grid, 0);
        let f: Vec<f64> = (0..m).map(|i| (h0[i] + nu * psi[i]) * sc[i]).collect();
        let spsi: Vec<f64> = (0..m).map(|i| psi[i] * sc[i]).collect();
        let y = solve_tridiagonal(&lo, &di, &up, &f)?;
        let z = solve_tridiagonal(&lo, &di, &up, &spsi)?;
        // A v − λψ⁰ = f with ⟨v, ψ⁰⟩ = 0
        let lambda = -dot(&y.x, &psi) / dot(&z.x, &psi);
        let v: Vec<f64> = y.x.iter().zip(&z.x).map(|(y, z)| y + lambda * z).collect();
        Ok((v, lambda, y.pivot_ratio))
    };
    let solve2 = || -> Result<(Vec<f64>, f64)> {
        if p0.iter().all(|v| *v == 0.0) {
            return Ok((vec![0.0; m], 1.0));
        }
        let (lo, di, up, sc) = assemble(&ex, &grid, 2);
        let mut f: Vec<f64> = g2.iter().zip(&sc).map(|(g, s)| g * s).collect();
        f[0] = 0.0;
        let s = solve_tridiagonal(&lo, &di, &up, &f)?;
        Ok((s.x, s.pivot_ratio))
    };
    let (r0, r2) = rayon::join(solve0, solve2);
    let (v0, lambda, piv0) = r0?;
    let (v2, piv2) = r2?;
    let pivot_ratio = piv0.max(piv2);
    if pivot_ratio > 1e12 {
        return Err(Error::Numerical(format!("radial mode system is singular (pivot ratio {pivot_ratio:e})")));
    }

    let mut field = CorrectionField::from_modes(dim, grid, v0, v2, p0, nu)?;
    let (mode_defect, l1_defect) = mode_completeness(&ex, geo, &field);
    if l1_defect > 1e-10 {
        return Err(Error::Invalid(format!("geometry input has an odd RHS component (relative {l1_defect:e})")));
    }
    let fredholm_defect = fredholm_defect(&ex, geo, nu);
    let orthogonality = orthogonality(&ex, &field);
    field.diagnostics = Some(Diagnostics { lambda, pivot_ratio, fredholm_defect, orthogonality, mode_defect, l1_defect });
    Ok(field)
}

/// `ν` by an independent quadrature of the closed-form sources (log-`r` trapezoid).
pub fn nu_oracle(ex: &Exponents, geo: &GeometryData) -> f64 {
    let q = QuadSpec::default();
    let num = radial_volume_integral(geo.dim, q, |r| sources(ex, geo, r).0 * ex.psi0(r)).0;
    let den = radial_volume_integral(geo.dim, q, |r| ex.psi0(r).powi(2)).0;
    -num / den
}

fn fredholm_defect(ex: &Exponents, geo: &GeometryData, nu: f64) -> f64 {
    let q = QuadSpec::default();
    let num = radial_volume_integral(geo.dim, q, |r| sources(ex, geo, r).0 * ex.psi0(r)).0;
    let den = radial_volume_integral(geo.dim, q, |r| ex.psi0(r).powi(2)).0;
    let hh = radial_volume_integral(geo.dim, q, |r| sources(ex, geo, r).0.powi(2)).0;
    if hh == 0.0 {
        return (nu * den).abs();
    }
    (num + nu * den).abs() / (hh * den).sqrt()
}

/// `|∫V ψ⁰| / (‖V‖‖ψ⁰‖)` by Simpson's rule on the spline, at twice the solver resolution.
/// The `ℓ = 2` part integrates to zero against the radial `ψ⁰` over spheres.
fn orthogonality(ex: &Exponents, field: &CorrectionField) -> f64 {
    let g = &field.grid;
    let m = 2 * (g.len() - 1);
    let h = g.dt / 2.0;
    let sw = crate::radial::simpson_weights(m, h).unwrap();
    let (mut vp, mut vv, mut pp) = (0.0, 0.0, 0.0);
    let angular2 = 2.0 * field.p0.norm_squared() / (ex.nf() * (ex.nf() + 2.0));
    for (i, w) in sw.iter().enumerate() {
        let t = i as f64 * h;
        let r = g.a * t.sinh();
        let jac = w * g.a * t.cosh() * r.powf(ex.nf() - 1.0);
        let v = field.s0.eval(t)[0];
        let v2 = field.q2.eval(t)[0] * r * r;
        let p = ex.psi0(r);
        vp += jac * v * p;
        vv += jac * (v * v + angular2 * v2 * v2);
        pp += jac * p * p;
    }
    if vv == 0.0 {
        return 0.0;
    }
    vp.abs() / (vv * pp).sqrt()
}

/// Compares `build_rhs` along fixed directions with the `ℓ ∈ {0, 2}` reconstruction and
/// measures the odd part. Returns `(ℓ ≥ 3 content, ℓ = 1 content)`, both relative.
pub fn mode_completeness(ex: &Exponents, geo: &GeometryData, field: &CorrectionField) -> (f64, f64) {
    let n = geo.n();
    let dirs: Vec<Vec<f64>> = (0..2 * n)
        .map(|k| {
            let v: Vec<f64> = (0..n).map(|i| ((k * n + i) as f64 * 0.754_877_666).sin() + if i == k % n { 1.0 } else { 0.0 }).collect();
            let s = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / s).collect()
        })
        .collect();
    let (mut hi, mut odd, mut tot) = (0.0f64, 0.0f64, 0.0f64);
    for r in [0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
        let (h0, g2) = sources(ex, geo, r);
        for d in &dirs {
            let x: Vec<f64> = d.iter().map(|v| v * r).collect();
            let xm: Vec<f64> = x.iter().map(|v| -v).collect();
            let e = build_rhs(ex, geo, &x);
            let em = build_rhs(ex, geo, &xm);
            let rec = h0 + g2 * quad(&field.p0, d);
            hi = hi.max((0.5 * (e + em) - rec).abs());
            odd = odd.max((0.5 * (e - em)).abs());
            tot = tot.max(e.abs());
        }
    }
    if tot == 0.0 {
        return (0.0, 0.0);
    }
    (hi / tot, odd / tot)
}

/// A-posteriori residual of the discrete solution with fourth-order stencils:
/// discrete `L²(R^N)` norm of `−ΔV − pU^{p−1}V − E − νψ⁰`, and the same norm of `E`.
pub fn residual_norm(geo: &GeometryData, field: &CorrectionField) -> (f64, f64) {
    let ex = Exponents::new(geo.dim);
    let n = ex.nf();
    let g = &field.grid;
    let m = g.len();
    let dt = g.dt;
    let angular2 = 2.0 * field.p0.norm_squared() / (n * (n + 2.0));
    let lap = |v: &[f64], i: usize, kappa: f64| {
        let r = g.r[i];
        let rt = g.rt(i);
        let vt = (-v[i + 2] + 8.0 * v[i + 1] - 8.0 * v[i - 1] + v[i - 2]) / (12.0 * dt);
        let vtt = (-v[i + 2] + 16.0 * v[i + 1] - 30.0 * v[i] + 16.0 * v[i - 1] - v[i - 2]) / (12.0 * dt * dt);
        let vr = vt / rt;
        let vrr = (vtt - vt * r / rt) / (rt * rt);
        vrr + (n - 1.0) * vr / r - kappa * v[i] / (r * r)
    };
    let (mut res, mut src) = (0.0, 0.0);
    for i in 2..m - 2 {
        let r = g.r[i];
        let (h0, g2) = sources(&ex, geo, r);
        let pot = ex.potential(r);
        let e0 = -lap(&field.v0, i, 0.0) - pot * field.v0[i] - h0 - field.nu * ex.psi0(r);
        let e2 = -lap(&field.v2, i, 2.0 * n) - pot * field.v2[i] - g2;
        let w = g.rt(i) * dt * r.powf(n - 1.0);
        res += w * (e0 * e0 + angular2 * e2 * e2);
        src += w * (h0 * h0 + angular2 * g2 * g2);
    }
    (res.sqrt(), src.sqrt())
}

/// `(max_r (1+r²)^{(N−4)/2}|V|, tail flag)`. `|V|` is bounded on each sphere by the
/// envelope `|v₀| + ‖P₀‖₂|v₂|`; the tail flag is true when the weighted envelope beyond
/// `r = 10` never exceeds its value at `r = 10` by more than 5% of the bound. Also
/// returns the analogous bounds for `|∇V|` and `|∇²V|` with weights `(1+r²)^{(N−3)/2}`,
/// `(1+r²)^{(N−2)/2}`.
pub fn check_decay(field: &CorrectionField) -> (f64, bool, [f64; 2]) {
    let n = field.dim.as_f64();
    let g = &field.grid;
    let pn = field.p0.clone().symmetric_eigen().eigenvalues.amax();
    let mut c = 0.0f64;
    let mut dbounds = [0.0f64; 2];
    let mut at10 = None;
    let mut tail_max = 0.0f64;
    for (i, &r) in g.r.iter().enumerate() {
        let s = 1.0 + r * r;
        let env = field.v0[i].abs() + pn * field.v2[i].abs();
        let wv = s.powf((n - 4.0) / 2.0) * env;
        c = c.max(wv);
        let f = field.radial(&field.s0, r, n - 4.0);
        let q = field.radial(&field.q2, r, n - 2.0);
        let d1 = f[1].abs() + pn * (q[1].abs() * r * r + 2.0 * q[0].abs() * r);
        let d2 = f[2].abs() + f[1].abs() / r.max(1e-12) + pn * (q[2].abs() * r * r + 4.0 * q[1].abs() * r + 2.0 * q[0].abs());
        if i > 0 {
            dbounds[0] = dbounds[0].max(s.powf((n - 3.0) / 2.0) * d1);
            dbounds[1] = dbounds[1].max(s.powf((n - 2.0) / 2.0) * d2);
        }
        if r >= 10.0 {
            if at10.is_none() {
                at10 = Some(wv);
            }
            tail_max = tail_max.max(wv);
        }
    }
    let monotone = match at10 {
        Some(w10) => tail_max - w10 <= 0.05 * c,
        None => true,
    };
    (c, monotone, dbounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normal_coordinate_christoffel_deriv, round_sphere_riemann};
    use approx::assert_relative_eq;

    fn sphere(n: usize) -> GeometryData {
        let dim = Dim::new(n).unwrap();
        let r = round_sphere_riemann(n);
        let cd = normal_coordinate_christoffel_deriv(&r);
        GeometryData::new(dim, r, (n * (n - 1)) as f64, cd, DMatrix::identity(n, n), None).unwrap()
    }

    fn flat(n: usize) -> GeometryData {
        GeometryData::flat_with_weyl(Dim::new(n).unwrap(), 1.0, DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let g = flat(7);
        let ex = Exponents::new(g.dim);
        assert_eq!(build_rhs(&ex, &g, &[0.3, 1.0, -2.0, 0.0, 0.5, 0.1, 0.2]), 0.0);
        let s = sphere(7);
        assert_relative_eq!(build_rhs(&ex, &s, &[0.0; 7]), ex.beta * 42.0 * ex.alpha, max_relative = 1e-15);
        // x = t e₁: −(N−1)c t² s^{−N/2}/3 + β R α s^{−(N−2)/2}
        let t: f64 = 0.2;
        let mut x = [0.0; 7];
        x[0] = t;
        let c = 5.0 * ex.alpha;
        let sv = 1.0 + t * t;
        let hand = -6.0 * c * t * t * sv.powf(-3.5) / 3.0 + ex.beta * 42.0 * ex.alpha * sv.powf(-2.5);
        assert_relative_eq!(build_rhs(&ex, &s, &x), hand, max_relative = 1e-13);
    }

    #[test]
    fn flat_gives_zero() {
        let f = solve_correction(&flat(7), GridSpec::default()).unwrap();
        assert!(f.is_zero());
        assert_eq!(f.eval(&[0.5; 7]), 0.0);
    }

    #[test]
    fn grid_preconditions() {
        let g = sphere(7);
        assert!(solve_correction(&g, GridSpec { r_max: 50.0, ..Default::default() }).is_err());
        assert!(solve_correction(&g, GridSpec { nodes: 1000, ..Default::default() }).is_err());
    }

    /// Product curvature with zero Christoffel derivatives: not a normal chart, so the
    /// `ℓ = 0` source is not orthogonal to `ψ⁰` and `ν ≠ 0`.
    fn literal_product(n: usize, m: usize) -> GeometryData {
        let g = product(n, m);
        let z = crate::geometry::Tensor4::zeros(n + m);
        GeometryData::new(g.dim, g.riemann.clone(), g.scal, z, g.weyl_hessian.clone(), None).unwrap()
    }

    #[test]
    fn sphere_solution_properties() {
        let g = sphere(7);
        let ex = Exponents::new(g.dim);
        let f = solve_correction(&g, GridSpec::default()).unwrap();
        let d = f.diagnostics.clone().unwrap();
        assert!(!f.is_zero());
        // In a normal chart the ℓ = 0 source is R times a profile orthogonal to ψ⁰.
        let scale = radial_volume_integral(g.dim, QuadSpec::default(), |r| sources(&ex, &g, r).0.powi(2)).0.sqrt()
            / radial_volume_integral(g.dim, QuadSpec::default(), |r| ex.psi0(r).powi(2)).0.sqrt();
        assert!((f.nu - nu_oracle(&ex, &g)).abs() < 1e-6 * scale);
        assert!(d.fredholm_defect < 1e-8, "{d:?}");
        assert!(d.orthogonality < 1e-8, "{d:?}");
        assert!(d.mode_defect < 1e-10 && d.l1_defect == 0.0, "{d:?}");
        assert!(d.lambda.abs() < 1e-3, "{d:?}");
        let (c, mono, _) = check_decay(&f);
        assert!(c.is_finite() && c > 0.0 && mono);
    }

    #[test]
    fn multiplier_matches_projection_oracle() {
        for (a, b) in [(4, 3), (5, 4)] {
            let g = literal_product(a, b);
            let ex = Exponents::new(g.dim);
            let f = solve_correction(&g, GridSpec::default()).unwrap();
            let oracle = nu_oracle(&ex, &g);
            assert!(oracle.abs() > 1.0);
            assert_relative_eq!(f.nu, oracle, max_relative = 1e-6);
            assert!(f.diagnostics.unwrap().fredholm_defect < 1e-8);
        }
    }

    #[test]
    fn nu_grid_convergence_and_residual_order() {
        let g = literal_product(4, 3);
        let a = solve_correction(&g, GridSpec { nodes: 2000, ..Default::default() }).unwrap();
        let b = solve_correction(&g, GridSpec { nodes: 4000, ..Default::default() }).unwrap();
        assert!(((a.nu - b.nu) / b.nu).abs() < 1e-4);
        let (ra, _) = residual_norm(&g, &a);
        let (rb, src) = residual_norm(&g, &b);
        let ratio = ra / rb;
        assert!(rb / src < 1e-3);
        assert!((ratio - 4.0).abs() < 0.3, "residual ratio {ratio}");
    }

    fn product(n: usize, m: usize) -> GeometryData {
        crate::geometry::product_spheres_geometry(n, m, None).unwrap()
    }

    #[test]
    fn jet_matches_finite_differences() {
        let g = product(4, 3);
        let f = solve_correction(&g, GridSpec::default()).unwrap();
        let x = [0.4, -0.3, 0.8, 0.1, -0.6, 0.2, 0.5];
        let j = f.jet(&x);
        assert_relative_eq!(j.v, f.eval(&x), max_relative = 1e-14);
        let h = 1e-5;
        for i in 0..7 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let d = (f.eval(&xp) - f.eval(&xm)) / (2.0 * h);
            assert!((d - j.grad[i]).abs() < 1e-5 * (1.0 + j.grad[i].abs()), "grad {i}: {d} vs {}", j.grad[i]);
            let jp = f.jet(&xp);
            let jm = f.jet(&xm);
            for k in 0..7 {
                let d2 = (jp.grad[k] - jm.grad[k]) / (2.0 * h);
                assert!((d2 - j.hess[i * 7 + k]).abs() < 1e-4 * (1.0 + d2.abs()));
            }
        }
    }

    #[test]
    fn solution_satisfies_pde_pointwise() {
        // Laplacian of the reconstructed V by finite differences in R^N
        let g = product(4, 3);
        let ex = Exponents::new(g.dim);
        let f = solve_correction(&g, GridSpec::default()).unwrap();
        let x = [0.7, -0.2, 0.4, 0.3, -0.5, 0.6, 0.1];
        let j = f.jet(&x);
        let lap: f64 = (0..7).map(|i| j.hess[i * 8]).sum();
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lhs = -lap - ex.potential(r) * j.v;
        let rhs = build_rhs(&ex, &g, &x) + f.nu * ex.psi0(r);
        assert!((lhs - rhs).abs() < 1e-4 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn decay_examples() {
        let dim = Dim::new(7).unwrap();
        let z = CorrectionField::zero(dim, GridSpec::default()).unwrap();
        let (c, mono, _) = check_decay(&z);
        assert_eq!(c, 0.0);
        assert!(mono);
        let grid = SinhGrid::new(1e4, 4000, 1.0).unwrap();
        let v0: Vec<f64> = grid.r.iter().map(|r| (1.0 + r * r).powf(-1.5)).collect();
        let m = grid.len();
        let f = CorrectionField::from_modes(dim, grid, v0, vec![0.0; m], DMatrix::zeros(7, 7), 0.0).unwrap();
        let (c, mono, _) = check_decay(&f);
        assert_relative_eq!(c, 1.0, max_relative = 1e-12);
        assert!(mono);
    }

    #[test]
    fn csv_dump() {
        let f = solve_correction(&product(4, 3), GridSpec::default()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# N=7"));
        assert!(s.lines().any(|l| l == "r,ell,m,value"));
        assert_eq!(s.lines().filter(|l| !l.starts_with('#')).count(), 1 + 8001 * 8);
    }
}
