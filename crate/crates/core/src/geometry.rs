//! Pointwise curvature data at the concentration point and the normal-coordinate
//! expansion of the metric built from it.
//!
//! Index convention: `riemann[i][a][b][j] = R_{iabj}` with `R_{abba} > 0` for positive
//! sectional curvature, so the unit round sphere is `δ_{ij}δ_{ab} − δ_{ib}δ_{aj}` and the
//! Ricci tensor is `Ric_{ab} = Σ_i R_{iabi}`. In this convention the normal-coordinate
//! metric is `g_{ij} = δ_{ij} − ⅓R_{iabj}x_ax_b + O(|x|³)` and its inverse
//! `g^{ij} = δ^{ij} + ⅓R_{iabj}x_ax_b + O(|x|³)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bubble::Dim;
use crate::error::{Error, Result};

/// Dense rank-4 array over `0..n` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Tensor4 { n, data: vec![0.0; n * n * n * n] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, a: usize, b: usize, j: usize) -> usize {
        ((i * self.n + a) * self.n + b) * self.n + j
    }

    #[inline]
    pub fn get(&self, i: usize, a: usize, b: usize, j: usize) -> f64 {
        self.data[self.idx(i, a, b, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, a: usize, b: usize, j: usize, v: f64) {
        let k = self.idx(i, a, b, j);
        self.data[k] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Nonzero entries as `(i, a, b, j, value)`.
    pub fn nonzeros(&self) -> Vec<(usize, usize, usize, usize, f64)> {
        let n = self.n;
        let mut out = Vec::new();
        for i in 0..n {
            for a in 0..n {
                for b in 0..n {
                    for j in 0..n {
                        let v = self.get(i, a, b, j);
                        if v != 0.0 {
                            out.push((i, a, b, j, v));
                        }
                    }
                }
            }
        }
        out
    }

    fn sub(&self, other: &Tensor4) -> Tensor4 {
        Tensor4 {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Kulkarni–Nomizu product `(h ⊙ k)_{ijkl} = h_il k_jk + h_jk k_il − h_ik k_jl − h_jl k_ik`
/// in the index order used for `R_{iabj}`.
fn kulkarni_nomizu(h: &DMatrix<f64>, k: &DMatrix<f64>) -> Tensor4 {
    let n = h.nrows();
    let mut t = Tensor4::zeros(n);
    for i in 0..n {
        for a in 0..n {
            for b in 0..n {
                for j in 0..n {
                    let v = h[(i, j)] * k[(a, b)] + h[(a, b)] * k[(i, j)]
                        - h[(i, b)] * k[(a, j)]
                        - h[(a, j)] * k[(i, b)];
                    t.set(i, a, b, j, v);
                }
            }
        }
    }
    t
}

/// `Ric_{ab} = Σ_i R_{iabi}`.
pub fn ricci(riemann: &Tensor4) -> DMatrix<f64> {
    let n = riemann.dim();
    DMatrix::from_fn(n, n, |a, b| (0..n).map(|i| riemann.get(i, a, b, i)).sum())
}

/// Round-sphere curvature `K(δ_{ij}δ_{ab} − δ_{ib}δ_{aj})` on the index block `range`.
fn add_space_form(t: &mut Tensor4, range: std::ops::Range<usize>, k: f64) {
    for i in range.clone() {
        for a in range.clone() {
            for b in range.clone() {
                for j in range.clone() {
                    let d = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
                    let v = d(i, j) * d(a, b) - d(i, b) * d(a, j);
                    if v != 0.0 {
                        let old = t.get(i, a, b, j);
                        t.set(i, a, b, j, old + k * v);
                    }
                }
            }
        }
    }
}

/// Unit round-sphere curvature tensor in dimension `n`.
pub fn round_sphere_riemann(n: usize) -> Tensor4 {
    let mut t = Tensor4::zeros(n);
    add_space_form(&mut t, 0..n, 1.0);
    t
}

/// Checks the algebraic symmetries of a curvature tensor.
pub fn check_symmetries(r: &Tensor4, rel_tol: f64) -> Result<()> {
    let n = r.dim();
    let scale = r.max_abs();
    if scale == 0.0 {
        return Ok(());
    }
    let tol = rel_tol * scale;
    let mut worst = [0.0f64; 4];
    for i in 0..n {
        for a in 0..n {
            for b in 0..n {
                for j in 0..n {
                    let v = r.get(i, a, b, j);
                    worst[0] = worst[0].max((v + r.get(a, i, b, j)).abs());
                    worst[1] = worst[1].max((v + r.get(i, a, j, b)).abs());
                    worst[2] = worst[2].max((v - r.get(b, j, i, a)).abs());
                    worst[3] = worst[3].max((v + r.get(a, b, i, j) + r.get(b, i, a, j)).abs());
                }
            }
        }
    }
    let names = [
        "antisymmetry in the first pair",
        "antisymmetry in the last pair",
        "pair symmetry",
        "the first Bianchi identity",
    ];
    for (w, name) in worst.iter().zip(names) {
        if *w > tol {
            return Err(Error::Symmetry { symmetry: name, defect: w / scale });
        }
    }
    Ok(())
}

/// Weyl part of a curvature tensor (flat metric at the point) and its squared norm.
pub fn weyl_from_riemann(riemann: &Tensor4) -> Result<(Tensor4, f64)> {
    check_symmetries(riemann, 1e-12)?;
    let n = riemann.dim();
    if n < 3 {
        return Err(Error::Invalid("Weyl tensor needs dimension >= 3".into()));
    }
    let nf = n as f64;
    let ric = ricci(riemann);
    let scal = ric.trace();
    let g = DMatrix::<f64>::identity(n, n);
    let schouten = (&ric - &g * (scal / (2.0 * (nf - 1.0)))) / (nf - 2.0);
    let weyl = riemann.sub(&kulkarni_nomizu(&schouten, &g));
    let w2 = weyl.norm_sq();
    Ok((weyl, w2))
}

/// `∂_lΓ^k_{ij}` at the origin of normal coordinates, from the second derivatives of
/// `g_{ij} = δ_{ij} − ⅓R_{iabj}x_ax_b`. Stored as `t[l][k][i][j]`.
pub fn normal_coordinate_christoffel_deriv(r: &Tensor4) -> Tensor4 {
    let n = r.dim();
    let mut t = Tensor4::zeros(n);
    for l in 0..n {
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let v = r.get(k, i, l, j) + r.get(k, l, i, j) + r.get(k, j, l, i)
                        + r.get(k, l, j, i)
                        - r.get(i, k, l, j)
                        - r.get(i, l, k, j);
                    t.set(l, k, i, j, -v / 6.0);
                }
            }
        }
    }
    t
}

/// Exact chart metric a geometry may carry in addition to its pointwise data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactChart {
    /// Normal coordinates of the unit Riemannian product `S^n × S^m`.
    ProductSpheres(usize, usize),
}

/// Pointwise curvature package at the concentration point.
#[derive(Debug, Clone)]
pub struct GeometryData {
    pub dim: Dim,
    pub riemann: Tensor4,
    pub scal: f64,
    /// `∂_lΓ^k_{ij}`, stored as `[l][k][i][j]`.
    pub christoffel_deriv: Tensor4,
    pub weyl_norm_sq: f64,
    /// Hessian of `|Weyl|²` at the point.
    pub weyl_hessian: DMatrix<f64>,
    /// Exact normal-coordinate metric, when the geometry is a known model manifold.
    pub exact_chart: Option<ExactChart>,
}

/// Output of [`GeometryData::metric_expansion`].
#[derive(Debug, Clone)]
pub struct MetricExpansion {
    pub g_inv: DMatrix<f64>,
    pub gamma_contract: Vec<f64>,
    pub sqrt_det: f64,
}

impl GeometryData {
    /// Validates and assembles a geometry. A `weyl_norm_sq` of `None` is derived from
    /// the curvature tensor.
    pub fn new(
        dim: Dim,
        riemann: Tensor4,
        scal: f64,
        christoffel_deriv: Tensor4,
        weyl_hessian: DMatrix<f64>,
        weyl_norm_sq: Option<f64>,
    ) -> Result<Self> {
        let n = dim.get();
        if riemann.dim() != n || christoffel_deriv.dim() != n {
            return Err(Error::Invalid("tensor dimensions do not match dim".into()));
        }
        if weyl_hessian.nrows() != n || weyl_hessian.ncols() != n {
            return Err(Error::Invalid(format!("weyl_hessian must be {n}x{n}")));
        }
        let asym = (&weyl_hessian - weyl_hessian.transpose()).amax();
        if asym > 1e-12 * weyl_hessian.amax().max(1.0) {
            return Err(Error::Invalid("weyl_hessian is not symmetric".into()));
        }
        let (_, derived) = weyl_from_riemann(&riemann)?;
        let trace = ricci(&riemann).trace();
        if (trace - scal).abs() > 1e-9 * trace.abs().max(1.0) && riemann.max_abs() > 0.0 {
            return Err(Error::Invalid(format!(
                "scal = {scal} disagrees with the trace of the curvature tensor ({trace})"
            )));
        }
        let weyl_norm_sq = weyl_norm_sq.unwrap_or(derived);
        if !(weyl_norm_sq >= 0.0) {
            return Err(Error::Invalid(format!("weyl_norm_sq must be >= 0, got {weyl_norm_sq}")));
        }
        Ok(GeometryData {
            dim,
            riemann,
            scal,
            christoffel_deriv,
            weyl_norm_sq,
            weyl_hessian,
            exact_chart: None,
        })
    }

    /// Flat metric with a prescribed Weyl norm and Hessian: the data the reduced
    /// energy consumes, without any chart curvature.
    pub fn flat_with_weyl(dim: Dim, weyl_norm_sq: f64, weyl_hessian: DMatrix<f64>) -> Result<Self> {
        let n = dim.get();
        Self::new(dim, Tensor4::zeros(n), 0.0, Tensor4::zeros(n), weyl_hessian, Some(weyl_norm_sq))
    }

    pub fn n(&self) -> usize {
        self.dim.get()
    }

    pub fn ricci(&self) -> DMatrix<f64> {
        ricci(&self.riemann)
    }

    /// `Σ_i ∂_lΓ^k_{ii}` as the matrix `[k][l]`.
    pub fn christoffel_trace(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |k, l| (0..n).map(|i| self.christoffel_deriv.get(l, k, i, i)).sum())
    }

    /// Quadratic normal-coordinate expansion at `x`: inverse metric, contracted
    /// Christoffel symbols `g^{ij}Γ^k_{ij}` (linear order) and `√|g|` (quadratic order).
    pub fn metric_expansion(&self, x: &[f64]) -> MetricExpansion {
        let n = self.n();
        let mut g_inv = DMatrix::<f64>::identity(n, n);
        for (i, a, b, j, v) in self.riemann.nonzeros() {
            g_inv[(i, j)] += v * x[a] * x[b] / 3.0;
        }
        let ct = self.christoffel_trace();
        let gamma_contract = (0..n).map(|k| (0..n).map(|l| ct[(k, l)] * x[l]).sum()).collect();
        let ric = self.ricci();
        let mut q = 0.0;
        for a in 0..n {
            for b in 0..n {
                q += ric[(a, b)] * x[a] * x[b];
            }
        }
        MetricExpansion { g_inv, gamma_contract, sqrt_det: 1.0 - q / 6.0 }
    }

    /// Multiplies the curvature by `s` (a homothety of the metric by `1/s`). The Weyl
    /// data scale as `s²`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let mut r = self.riemann.clone();
        r.data.iter_mut().for_each(|v| *v *= s);
        let mut c = self.christoffel_deriv.clone();
        c.data.iter_mut().for_each(|v| *v *= s);
        Ok(GeometryData {
            dim: self.dim,
            riemann: r,
            scal: self.scal * s,
            christoffel_deriv: c,
            weyl_norm_sq: self.weyl_norm_sq * s * s,
            weyl_hessian: &self.weyl_hessian * (s * s),
            exact_chart: None,
        })
    }
}

/// Unit Riemannian product `S^n × S^m` (warping function ≡ 1) in normal coordinates.
/// The Weyl Hessian is not determined by the pointwise data and is supplied by the
/// caller (identity when `None`).
pub fn product_spheres_geometry(
    n: usize,
    m: usize,
    weyl_hessian: Option<DMatrix<f64>>,
) -> Result<GeometryData> {
    let dim = Dim::new(n + m)?;
    if n == 0 || m == 0 {
        return Err(Error::Invalid("both sphere factors need positive dimension".into()));
    }
    let total = n + m;
    let mut r = Tensor4::zeros(total);
    add_space_form(&mut r, 0..n, 1.0);
    add_space_form(&mut r, n..total, 1.0);
    let scal = (n * (n - 1) + m * (m - 1)) as f64;
    let cd = normal_coordinate_christoffel_deriv(&r);
    let hess = weyl_hessian.unwrap_or_else(|| DMatrix::identity(total, total));
    let mut geo = GeometryData::new(dim, r, scal, cd, hess, None)?;
    geo.exact_chart = Some(ExactChart::ProductSpheres(n, m));
    Ok(geo)
}

/// Symmetrized second-difference Hessian of a scalar field.
pub fn hessian_of_scalar_field<F: Fn(&[f64]) -> f64>(field: F, x0: &[f64]) -> DMatrix<f64> {
    let n = x0.len();
    let h = 1e-4 * (1.0 + x0.iter().map(|v| v * v).sum::<f64>().sqrt());
    let f0 = field(x0);
    let mut x = x0.to_vec();
    let eval = |x: &mut Vec<f64>, shifts: &[(usize, f64)]| {
        for &(i, s) in shifts {
            x[i] += s;
        }
        let v = field(x);
        for &(i, s) in shifts {
            x[i] -= s;
        }
        v
    };
    let mut hm = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = eval(&mut x, &[(i, h)]);
        let fm = eval(&mut x, &[(i, -h)]);
        hm[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let v = (eval(&mut x, &[(i, h), (j, h)]) - eval(&mut x, &[(i, h), (j, -h)])
                - eval(&mut x, &[(i, -h), (j, h)])
                + eval(&mut x, &[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    hm
}

/// On-disk geometry description (CLI input).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryJson {
    pub dim: usize,
    #[serde(default)]
    pub riemann: Vec<(usize, usize, usize, usize, f64)>,
    #[serde(default)]
    pub scal: f64,
    #[serde(default)]
    pub christoffel_deriv: Vec<(usize, usize, usize, usize, f64)>,
    pub weyl_hessian: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weyl_norm_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_chart: Option<ExactChart>,
}

impl GeometryJson {
    pub fn into_geometry(self) -> Result<GeometryData> {
        let dim = Dim::new(self.dim)?;
        let n = dim.get();
        let fill = |entries: &[(usize, usize, usize, usize, f64)], what: &str| -> Result<Tensor4> {
            let mut t = Tensor4::zeros(n);
            for &(i, a, b, j, v) in entries {
                if i >= n || a >= n || b >= n || j >= n {
                    return Err(Error::Invalid(format!("{what} index out of range")));
                }
                t.set(i, a, b, j, v);
            }
            Ok(t)
        };
        let riemann = fill(&self.riemann, "riemann")?;
        let cd = fill(&self.christoffel_deriv, "christoffel_deriv")?;
        if self.weyl_hessian.len() != n || self.weyl_hessian.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid(format!("weyl_hessian must be {n}x{n}")));
        }
        let hess = DMatrix::from_fn(n, n, |i, j| self.weyl_hessian[i][j]);
        let mut geo = GeometryData::new(dim, riemann, self.scal, cd, hess, self.weyl_norm_sq)?;
        if let Some(ExactChart::ProductSpheres(a, b)) = self.exact_chart {
            if a + b != n {
                return Err(Error::Invalid("exact chart dimension mismatch".into()));
            }
            geo.exact_chart = self.exact_chart;
        }
        Ok(geo)
    }

    pub fn from_geometry(geo: &GeometryData) -> Self {
        let n = geo.n();
        GeometryJson {
            dim: n,
            riemann: geo.riemann.nonzeros(),
            scal: geo.scal,
            christoffel_deriv: geo.christoffel_deriv.nonzeros(),
            weyl_hessian: (0..n).map(|i| (0..n).map(|j| geo.weyl_hessian[(i, j)]).collect()).collect(),
            weyl_norm_sq: Some(geo.weyl_norm_sq),
            exact_chart: geo.exact_chart,
        }
    }
}

pub fn load_geometry(path: &std::path::Path) -> Result<GeometryData> {
    let text = std::fs::read_to_string(path)?;
    let json: GeometryJson = serde_json::from_str(&text)?;
    json.into_geometry()
}
