//! One-dimensional radial numerics: the stretched grid `r = a·sinh t`, quadrature,
//! a tridiagonal solver and cubic splines on the uniform `t` lattice.

use crate::error::{Error, Result};

/// Grid `r_i = a·sinh(i·dt)`, `i = 0..=m`: near-uniform for `r ≪ a`, logarithmic for `r ≫ a`.
#[derive(Debug, Clone)]
pub struct SinhGrid {
    pub a: f64,
    pub dt: f64,
    pub r: Vec<f64>,
}

impl SinhGrid {
    pub fn new(r_max: f64, m: usize, a: f64) -> Result<Self> {
        if !(r_max > 0.0 && a > 0.0) || m < 4 {
            return Err(Error::Invalid(format!("bad radial grid (r_max={r_max}, m={m})")));
        }
        let dt = (r_max / a).asinh() / m as f64;
        let r = (0..=m).map(|i| a * (i as f64 * dt).sinh()).collect();
        Ok(SinhGrid { a, dt, r })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }

    /// `dr/dt` at node `i`.
    pub fn rt(&self, i: usize) -> f64 {
        self.a.hypot(self.r[i])
    }

    /// Node weights for `∫_0^{r_max} f(r) dr` (composite Simpson in `t`; `m` must be even).
    pub fn weights(&self) -> Result<Vec<f64>> {
        let w = simpson_weights(self.len() - 1, self.dt)?;
        Ok(w.iter().enumerate().map(|(i, w)| w * self.rt(i)).collect())
    }
}

/// Composite Simpson weights for `m` (even) intervals of width `h`.
pub fn simpson_weights(m: usize, h: f64) -> Result<Vec<f64>> {
    if m == 0 || m % 2 != 0 {
        return Err(Error::Invalid(format!("Simpson rule needs an even interval count, got {m}")));
    }
    Ok((0..=m)
        .map(|i| {
            let c = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect())
}

/// Solution of a tridiagonal system and the ratio of largest to smallest pivot.
#[derive(Debug, Clone)]
pub struct TriSolve {
    pub x: Vec<f64>,
    pub pivot_ratio: f64,
}

/// Thomas algorithm for `lower[i]·x[i−1] + diag[i]·x[i] + upper[i]·x[i+1] = rhs[i]`
/// (`lower[0]` and `upper[n−1]` are ignored).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<TriSolve> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
    let mut piv = diag[0];
    for i in 0..n {
        if i > 0 {
            piv = diag[i] - lower[i] * c[i - 1];
        }
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::Numerical(format!("zero pivot at row {i} of a tridiagonal solve")));
        }
        pmin = pmin.min(piv.abs());
        pmax = pmax.max(piv.abs());
        c[i] = if i + 1 < n { upper[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - if i > 0 { lower[i] * d[i - 1] } else { 0.0 }) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(TriSolve { x, pivot_ratio: pmax / pmin })
}

/// Cubic spline on a uniform lattice `t_i = i·h` with `f'(0) = 0` (even extension)
/// and a natural right end.
#[derive(Debug, Clone)]
pub struct EvenSpline {
    h: f64,
    y: Vec<f64>,
    m2: Vec<f64>,
}

impl EvenSpline {
    pub fn new(h: f64, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n < 3 {
            return Err(Error::Invalid("spline needs at least three nodes".into()));
        }
        // Second-derivative unknowns; clamped slope at 0, natural at the end.
        let mut lo = vec![h / 6.0; n];
        let mut di = vec![2.0 * h / 3.0; n];
        let mut up = vec![h / 6.0; n];
        let mut rhs = vec![0.0; n];
        di[0] = h / 3.0;
        up[0] = h / 6.0;
        rhs[0] = (y[1] - y[0]) / h;
        for i in 1..n - 1 {
            rhs[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / h;
        }
        lo[n - 1] = 0.0;
        di[n - 1] = 1.0;
        up[n - 1] = 0.0;
        let m2 = solve_tridiagonal(&lo, &di, &up, &rhs)?.x;
        Ok(EvenSpline { h, y, m2 })
    }

    /// Value and first two derivatives at `t ∈ [0, t_max]`.
    pub fn eval(&self, t: f64) -> [f64; 3] {
        let n = self.y.len();
        let s = (t / self.h).max(0.0);
        let i = (s.floor() as usize).min(n - 2);
        let u = s - i as f64;
        let (h, y0, y1, m0, m1) = (self.h, self.y[i], self.y[i + 1], self.m2[i], self.m2[i + 1]);
        let a = 1.0 - u;
        let v = a * y0 + u * y1 + h * h / 6.0 * ((a * a * a - a) * m0 + (u * u * u - u) * m1);
        let d1 = (y1 - y0) / h + h / 6.0 * ((1.0 - 3.0 * a * a) * m0 + (3.0 * u * u - 1.0) * m1);
        let d2 = a * m0 + u * m1;
        [v, d1, d2]
    }
}

/// `∫_{r_lo}^{r_hi} f(r) dr` by the trapezoid rule in `t = ln r` (spectrally accurate for
/// smooth integrands with power-law ends), with an estimate of the neglected tails
/// `r_lo·|f(r_lo)| + r_hi·|f(r_hi)|`.
pub fn log_radial_integral<F: Fn(f64) -> f64>(f: F, r_lo: f64, r_hi: f64, n: usize) -> (f64, f64) {
    let (a, b) = (r_lo.ln(), r_hi.ln());
    let h = (b - a) / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let r = (a + i as f64 * h).exp();
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        s += w * f(r) * r;
    }
    let tail = r_lo * f(r_lo).abs() + r_hi * f(r_hi).abs();
    (s * h, tail)
}
