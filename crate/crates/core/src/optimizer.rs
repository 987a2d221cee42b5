//! Interior maxima of the reduced energy in `τ` (quadratic confinement against Riesz
//! repulsion) by seeded multi-start gradient ascent with Newton polishing.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{compute_d0, ConstantsTable};
use crate::error::{Error, Result};
use crate::geometry::GeometryData;
use crate::reduced::{dist, ClusterConfig, ReducedEnergy, COLLISION_DISTANCE};

#[derive(Debug, Clone, Copy)]
pub struct OptimizerOptions {
    pub seed: u64,
    pub n_starts: usize,
    /// Tolerance on the scaled gradient norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions { seed: 1, n_starts: 16, tol: 1e-10, max_iter: 20_000 }
    }
}

/// A converged stationary configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalMax {
    pub config: ClusterConfig,
    pub value: f64,
    pub grad_norm: f64,
    pub symmetry_tag: String,
    /// Number of starts that reached this configuration.
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub best: ClusterConfig,
    pub value: f64,
    pub grad_norm: f64,
    pub n_starts: usize,
    pub converged_fraction: f64,
    pub symmetry_tag: String,
    /// Distinct converged local maxima, best first.
    pub maxima: Vec<LocalMax>,
    pub warnings: Vec<String>,
}

/// Radius of the antipodal pair for `𝒬 = λI`:
/// `t^N = (N−2)E_N d₀^{N−2}2^{2−N}/(λA_N d₀⁴)`.
pub fn antipodal_radius(n: usize, table: &ConstantsTable, d0: f64, lambda: f64) -> f64 {
    let nf = n as f64;
    ((nf - 2.0) * table.e_n * d0.powf(nf - 2.0) * 2f64.powf(2.0 - nf) / (lambda * table.a_n * d0.powi(4))).powf(1.0 / nf)
}

/// Whether `𝒬` is a multiple of the identity (rotations are then exact symmetries).
pub fn is_isotropic(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    let lam = q.trace() / n as f64;
    (q - DMatrix::identity(n, n) * lam).amax() <= 1e-12 * lam.abs().max(f64::MIN_POSITIVE)
}

struct Run {
    flat: Vec<f64>,
    value: f64,
    grad_norm: f64,
}

/// Gradient scale used for the convergence test: the confinement force at radius `t`.
fn force_scale(energy: &ReducedEnergy, d0: f64, t: f64) -> f64 {
    let lam = energy.geo.weyl_hessian.amax().max(f64::MIN_POSITIVE);
    energy.table.a_n * d0.powi(4) * lam * t
}

fn min_distance(flat: &[f64], n: usize) -> f64 {
    let pts: Vec<&[f64]> = flat.chunks(n).collect();
    let mut m = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            m = m.min(dist(pts[i], pts[j]));
        }
    }
    m
}

fn ascend(energy: &ReducedEnergy, base: &ClusterConfig, start: Vec<f64>, opts: &OptimizerOptions, scale: f64) -> Option<Run> {
    let n = base.dim();
    let value = |x: &[f64]| energy.eval(&base.with_tau_flat(x)).map(|e| e.total).ok();
    let grad = |x: &[f64]| energy.grad(&base.with_tau_flat(x)).map(|g| g.tau_flat()).ok();
    let mut x = start;
    let mut f = value(&x)?;
    let mut g = grad(&x)?;
    let hmax = 2.0 * energy.table.a_n * base.d0.powi(4) * energy.geo.weyl_hessian.amax().max(f64::MIN_POSITIVE);
    let mut step = 1.0 / hmax;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    for _ in 0..opts.max_iter {
        let gn = norm(&g);
        if gn / scale < 1e-6 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            if min_distance(&trial, n) > COLLISION_DISTANCE {
                if let Some(ft) = value(&trial) {
                    if ft >= f + 1e-4 * step * gn * gn {
                        x = trial;
                        f = ft;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        g = grad(&x)?;
        step *= 2.0;
    }
    // Newton polish on the τ-gradient with an eigen pseudo-inverse.
    for _ in 0..50 {
        let gn = norm(&g);
        if gn / scale < opts.tol {
            break;
        }
        let h = energy.hessian_tau(&base.with_tau_flat(&x)).ok()?;
        let eig = h.symmetric_eigen();
        let cut = 1e-10 * eig.eigenvalues.amax();
        let gv = DVector::from_column_slice(&g);
        let mut dx = DVector::zeros(x.len());
        for (i, lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() > cut {
                let v = eig.eigenvectors.column(i);
                dx -= v * (v.dot(&gv) / lam);
            }
        }
        let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
        if min_distance(&trial, n) <= COLLISION_DISTANCE {
            break;
        }
        let gt = grad(&trial)?;
        if norm(&gt) >= gn {
            break;
        }
        x = trial;
        g = gt;
    }
    let f = value(&x)?;
    let grad_norm = norm(&g) / scale;
    Some(Run { flat: x, value: f, grad_norm })
}

/// Sorts peaks by decreasing norm and, for isotropic `𝒬`, rotates so that `τ₁` lies on the
/// first axis and each subsequent independent peak in the positive half of the next
/// coordinate plane.
pub fn canonicalize(cfg: &ClusterConfig, isotropic: bool) -> ClusterConfig {
    let n = cfg.dim();
    let mut idx: Vec<usize> = (0..cfg.k).collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    idx.sort_by(|&a, &b| {
        let (na, nb) = (norm(&cfg.tau[a]), norm(&cfg.tau[b]));
        if (na - nb).abs() > 1e-9 * na.max(nb) {
            nb.partial_cmp(&na).unwrap()
        } else {
            a.cmp(&b)
        }
    });
    let tau: Vec<Vec<f64>> = idx.iter().map(|&i| cfg.tau[i].clone()).collect();
    let d: Vec<f64> = idx.iter().map(|&i| cfg.d[i]).collect();
    if !isotropic {
        return ClusterConfig { tau, d, ..cfg.clone() };
    }
    let scale = tau.iter().map(|t| norm(t)).fold(0.0, f64::max);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for t in &tau {
        let mut v = DVector::from_column_slice(t);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let nv = v.norm();
        if nv > 1e-8 * scale && basis.len() < n {
            basis.push(v / nv);
        }
    }
    for a in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[a] = 1.0;
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let nv = v.norm();
        if nv > 1e-6 {
            basis.push(v / nv);
        }
    }
    let rot = DMatrix::from_fn(n, n, |i, j| basis[i][j]);
    let tau = tau
        .iter()
        .map(|t| {
            let v = &rot * DVector::from_column_slice(t);
            v.iter().map(|x| if x.abs() < 1e-14 * scale { 0.0 } else { *x }).collect()
        })
        .collect();
    ClusterConfig { tau, d, ..cfg.clone() }
}

/// Descriptor of the configuration's evident symmetry.
pub fn symmetry_tag(cfg: &ClusterConfig) -> String {
    let tol = 1e-6;
    let k = cfg.k;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = cfg.tau.iter().map(|t| norm(t)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if k == 1 {
        return if norm(&cfg.tau[0]) < tol { "single-centered".into() } else { "single".into() };
    }
    if k == 2 {
        let s: Vec<f64> = cfg.tau[0].iter().zip(&cfg.tau[1]).map(|(a, b)| a + b).collect();
        return if norm(&s) < tol * scale { "antipodal-pair".into() } else { "none-detected".into() };
    }
    let mut ds = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            ds.push(dist(&cfg.tau[i], &cfg.tau[j]));
        }
    }
    let (dmin, dmax) = ds.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));
    let centroid: Vec<f64> = (0..cfg.dim()).map(|a| cfg.tau.iter().map(|t| t[a]).sum::<f64>() / k as f64).collect();
    let radii: Vec<f64> = cfg.tau.iter().map(|t| dist(t, &centroid)).collect();
    let equal_radii = radii.iter().all(|r| (r - radii[0]).abs() < tol * scale);
    if k == 3 && (dmax - dmin) < tol * dmax {
        return "regular-polygon".into();
    }
    if (dmax - dmin) < tol * dmax {
        return "regular-simplex".into();
    }
    // coplanar with equal radii and equal nearest-neighbour spacing
    let m = DMatrix::from_fn(k, cfg.dim(), |i, a| cfg.tau[i][a] - centroid[a]);
    let sv = m.singular_values();
    let rank = sv.iter().filter(|s| **s > tol * sv[0]).count();
    if rank == 2 && equal_radii {
        let mut nn: Vec<f64> = (0..k)
            .map(|i| (0..k).filter(|&j| j != i).map(|j| dist(&cfg.tau[i], &cfg.tau[j])).fold(f64::INFINITY, f64::min))
            .collect();
        nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if (nn[k - 1] - nn[0]) < tol * nn[0] {
            return "regular-polygon".into();
        }
    }
    "none-detected".into()
}

/// Invariant signature used to merge equivalent maxima (sorted pairwise distances and radii).
fn signature(cfg: &ClusterConfig) -> Vec<f64> {
    let mut s: Vec<f64> = Vec::new();
    for i in 0..cfg.k {
        for j in i + 1..cfg.k {
            s.push(dist(&cfg.tau[i], &cfg.tau[j]));
        }
    }
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut r: Vec<f64> = cfg.tau.iter().map(|t| t.iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    r.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.extend(r);
    s
}

pub fn find_critical_config(k: usize, geo: &GeometryData, table: &ConstantsTable, opts: &OptimizerOptions) -> Result<OptimizerReport> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if opts.n_starts == 0 {
        return Err(Error::Invalid("at least one start is required".into()));
    }
    let n = geo.n();
    let d0 = compute_d0(table, geo.weyl_norm_sq)?;
    let q = &geo.weyl_hessian;
    let mut warnings = Vec::new();
    let eig = q.clone().symmetric_eigen();
    if eig.eigenvalues.min() <= 0.0 {
        warnings.push(format!("weyl_hessian is not positive definite (min eigenvalue {:e})", eig.eigenvalues.min()));
    }
    let lam = (q.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let t2 = antipodal_radius(n, table, d0, lam);
    let energy = ReducedEnergy::new(geo, table);
    let base = ClusterConfig { k, d: vec![0.0; k], tau: vec![vec![0.0; n]; k], d0 };
    let scale = force_scale(&energy, d0, t2);
    let isotropic = is_isotropic(q);

    let runs: Vec<Option<Run>> = (0..opts.n_starts)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s as u64);
            let start: Vec<f64> = (0..k)
                .flat_map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let nv = v.iter().map(|a: &f64| a * a).sum::<f64>().sqrt();
                    let jitter: f64 = 1.0 + 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                    v.into_iter().map(move |a| a / nv * t2 * jitter.abs().max(0.2)).collect::<Vec<_>>()
                })
                .collect();
            if k > 1 && min_distance(&start, n) <= COLLISION_DISTANCE {
                return None;
            }
            ascend(&energy, &base, start, opts, scale)
        })
        .collect();

    let total = runs.len();
    let mut maxima: Vec<LocalMax> = Vec::new();
    let mut converged = 0usize;
    for run in runs.into_iter().flatten() {
        if !(run.grad_norm < opts.tol) {
            continue;
        }
        converged += 1;
        let cfg = canonicalize(&base.with_tau_flat(&run.flat), isotropic);
        let h = energy.hessian_tau(&cfg)?;
        let (_, is_max) = classify(&h, &cfg, isotropic);
        if !is_max {
            continue;
        }
        let sig = signature(&cfg);
        if let Some(m) = maxima.iter_mut().find(|m| {
            let s2 = signature(&m.config);
            s2.iter().zip(&sig).all(|(a, b)| (a - b).abs() < 1e-6 * t2)
        }) {
            m.multiplicity += 1;
            continue;
        }
        maxima.push(LocalMax {
            symmetry_tag: symmetry_tag(&cfg),
            config: cfg,
            value: run.value,
            grad_norm: run.grad_norm,
            multiplicity: 1,
        });
    }
    // stable sort keeps start order for ties
    maxima.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap());
    let best = maxima.first().cloned().ok_or_else(|| {
        Error::Numerical(format!(
            "no start converged to a local maximum (k={k}, {total} starts, tol={:e}, t2*={t2:e})",
            opts.tol
        ))
    })?;
    Ok(OptimizerReport {
        best: best.config,
        value: best.value,
        grad_norm: best.grad_norm,
        n_starts: total,
        converged_fraction: converged as f64 / total as f64,
        symmetry_tag: best.symmetry_tag,
        maxima,
        warnings,
    })
}

/// Orthonormal basis of the tangent space of the rotation orbit through `cfg`.
fn rotation_generators(cfg: &ClusterConfig) -> Vec<DVector<f64>> {
    let n = cfg.dim();
    let k = cfg.k;
    let mut out: Vec<DVector<f64>> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let mut v = DVector::zeros(k * n);
            for i in 0..k {
                v[i * n + a] = -cfg.tau[i][b];
                v[i * n + b] = cfg.tau[i][a];
            }
            for u in &out {
                let c = u.dot(&v);
                v -= u * c;
            }
            let nv = v.norm();
            if nv > 1e-8 {
                out.push(v / nv);
            }
        }
    }
    out
}

/// Largest eigenvalue of `h` on the complement of the rotation orbit (isotropic case) and
/// whether it is below `−1e-12`.
fn classify(h: &DMatrix<f64>, cfg: &ClusterConfig, isotropic: bool) -> (f64, bool) {
    let m = h.nrows();
    let gens = if isotropic { rotation_generators(cfg) } else { Vec::new() };
    let lam_max = if gens.is_empty() {
        h.clone().symmetric_eigen().eigenvalues.max()
    } else {
        // complement basis by Gram–Schmidt against the generators
        let mut basis: Vec<DVector<f64>> = gens.clone();
        let mut comp: Vec<DVector<f64>> = Vec::new();
        for a in 0..m {
            let mut v = DVector::zeros(m);
            v[a] = 1.0;
            for u in &basis {
                let c = u.dot(&v);
                v -= u * c;
            }
            let nv = v.norm();
            if nv > 1e-8 {
                let v = v / nv;
                basis.push(v.clone());
                comp.push(v);
            }
        }
        if comp.is_empty() {
            return (f64::NEG_INFINITY, true);
        }
        let w = DMatrix::from_columns(&comp);
        let r = w.transpose() * h * &w;
        let r = (&r + r.transpose()) * 0.5;
        r.symmetric_eigen().eigenvalues.max()
    };
    (lam_max, lam_max <= -1e-12)
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondOrder {
    pub max_eigenvalue_tau_hessian: f64,
    pub max_eigenvalue_d_hessian: f64,
    pub is_local_max: bool,
    /// Dimension of the projected rotation orbit (0 for anisotropic `𝒬`).
    pub projected_directions: usize,
}

/// Finite-difference Hessian of `𝔍` (central differences of the analytic gradient),
/// classified after projecting out exact rotational null directions.
pub fn verify_second_order(cfg: &ClusterConfig, geo: &GeometryData, table: &ConstantsTable) -> Result<SecondOrder> {
    let energy = ReducedEnergy::new(geo, table);
    cfg.validate()?;
    let x = cfg.tau_flat();
    let m = x.len();
    let scale = x.iter().map(|a| a.abs()).fold(0.0, f64::max).max(1.0);
    let h = 1e-5 * scale;
    let mut hm = DMatrix::zeros(m, m);
    for a in 0..m {
        let mut p = x.clone();
        let mut q = x.clone();
        p[a] += h;
        q[a] -= h;
        let gp = energy.grad(&cfg.with_tau_flat(&p))?.tau_flat();
        let gq = energy.grad(&cfg.with_tau_flat(&q))?.tau_flat();
        for b in 0..m {
            hm[(b, a)] = (gp[b] - gq[b]) / (2.0 * h);
        }
    }
    let hm = (&hm + hm.transpose()) * 0.5;
    let isotropic = is_isotropic(&geo.weyl_hessian);
    let (lam, is_max_tau) = classify(&hm, cfg, isotropic);
    // d-block by central differences of ∂/∂d_i
    let k = cfg.k;
    let mut hd = DMatrix::zeros(k, k);
    for i in 0..k {
        let mut p = cfg.clone();
        let mut q = cfg.clone();
        p.d[i] += 1e-3;
        q.d[i] -= 1e-3;
        let gp = energy.grad(&p)?.d;
        let gq = energy.grad(&q)?.d;
        for j in 0..k {
            hd[(j, i)] = (gp[j] - gq[j]) / 2e-3;
        }
    }
    let lam_d = hd.symmetric_eigen().eigenvalues.max();
    Ok(SecondOrder {
        max_eigenvalue_tau_hessian: lam,
        max_eigenvalue_d_hessian: lam_d,
        is_local_max: is_max_tau && lam_d <= -1e-12,
        projected_directions: if isotropic { rotation_generators(cfg).len() } else { 0 },
    })
}
