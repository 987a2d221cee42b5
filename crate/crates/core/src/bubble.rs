//! The standard bubble `U(x) = α_N (1+|x|²)^{-(N-2)/2}`, its rescalings, its
//! derivatives, the kernel of the linearized operator and the critical nonlinearity.
//!
//! Everything here is a closed form. Grids only appear in tests, as residual checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension supported by the fixed-size jets used in the Monte-Carlo kernels.
pub const MAX_DIM: usize = 12;

/// Space dimension `N`, validated against the `N >= 7` hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dim(usize);

impl Dim {
    pub fn new(n: usize) -> Result<Self> {
        if n < 7 || n > MAX_DIM {
            return Err(Error::Dimension(n));
        }
        Ok(Dim(n))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    #[inline]
    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl TryFrom<usize> for Dim {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Dim::new(n)
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.0
    }
}

impl std::fmt::Display for Dim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Exponents and normalizations attached to a dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub n: usize,
    /// Critical power `(N+2)/(N-2)`.
    pub p: f64,
    /// Critical Sobolev exponent `2N/(N-2)`, equal to `p + 1`.
    pub two_star: f64,
    /// Bubble normalization `(N(N-2))^{(N-2)/4}`.
    pub alpha: f64,
    /// Conformal coupling `(N-2)/(4(N-1))`.
    pub beta: f64,
}

impl Exponents {
    pub fn new(dim: Dim) -> Self {
        let n = dim.as_f64();
        Exponents {
            n: dim.get(),
            p: (n + 2.0) / (n - 2.0),
            two_star: 2.0 * n / (n - 2.0),
            alpha: (n * (n - 2.0)).powf((n - 2.0) / 4.0),
            beta: (n - 2.0) / (4.0 * (n - 1.0)),
        }
    }

    /// Dual exponent `2N/(N+2)` of the norms the error estimates are stated in.
    pub fn dual(&self) -> f64 {
        let n = self.n as f64;
        2.0 * n / (n + 2.0)
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    /// `U(r)` for the standard bubble.
    #[inline]
    pub fn u(&self, r: f64) -> f64 {
        self.alpha * (1.0 + r * r).powf(-(self.nf() - 2.0) / 2.0)
    }

    /// `(U, U', U'')` as functions of the radius.
    #[inline]
    pub fn u_radial(&self, r: f64) -> [f64; 3] {
        let n = self.nf();
        let s = 1.0 + r * r;
        let c = (n - 2.0) * self.alpha;
        let sn = s.powf(-n / 2.0);
        [
            self.alpha * sn * s,
            -c * r * sn,
            -c * (sn - n * r * r * sn / s),
        ]
    }

    /// `ψ⁰(r) = r U'(r) + (N-2)/2 U(r) = α (N-2)/2 (1-r²)/(1+r²)^{N/2}`.
    #[inline]
    pub fn psi0(&self, r: f64) -> f64 {
        let n = self.nf();
        let r2 = r * r;
        self.alpha * (n - 2.0) / 2.0 * (1.0 - r2) * (1.0 + r2).powf(-n / 2.0)
    }

    /// The linearized potential `p U^{p-1} = N(N+2)/(1+r²)²`.
    #[inline]
    pub fn potential(&self, r: f64) -> f64 {
        let n = self.nf();
        let s = 1.0 + r * r;
        n * (n + 2.0) / (s * s)
    }
}

/// Concentration parameters of a rescaled bubble `U_{μ,y}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BubbleParams {
    mu: f64,
    center: Vec<f64>,
}

impl BubbleParams {
    pub fn new(mu: f64, center: Vec<f64>) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::Invalid(format!("bubble scale must be positive, got {mu}")));
        }
        Ok(BubbleParams { mu, center })
    }

    pub fn standard(dim: Dim) -> Self {
        BubbleParams { mu: 1.0, center: vec![0.0; dim.get()] }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `U_{μ,y}(x) = μ^{-(N-2)/2} U((x-y)/μ)`.
pub fn eval_bubble(ex: &Exponents, params: &BubbleParams, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), ex.n);
    let mu = params.mu;
    let r = x
        .iter()
        .zip(&params.center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        / mu;
    mu.powf(-(ex.n as f64 - 2.0) / 2.0) * ex.u(r)
}

/// Gradient of the standard bubble.
pub fn bubble_gradient(ex: &Exponents, x: &[f64]) -> Vec<f64> {
    let r = norm(x);
    let n = ex.n as f64;
    let c = -(n - 2.0) * ex.alpha * (1.0 + r * r).powf(-n / 2.0);
    x.iter().map(|v| c * v).collect()
}

/// Hessian of the standard bubble, row-major `N×N`.
pub fn bubble_hessian(ex: &Exponents, x: &[f64]) -> Vec<f64> {
    let n = ex.n;
    let nf = n as f64;
    let s = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
    let c = (nf - 2.0) * ex.alpha * s.powf(-nf / 2.0);
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = if i == j { 1.0 } else { 0.0 };
            h[i * n + j] = -c * (d - nf * x[i] * x[j] / s);
        }
    }
    h
}

/// Kernel function `ψ^j` of `-Δv = p U^{p-1} v`: `j = 0` is the dilation mode,
/// `j = 1..=N` the translation modes `∂_j U`.
pub fn eval_kernel(ex: &Exponents, j: usize, x: &[f64]) -> Result<f64> {
    if j > ex.n {
        return Err(Error::Invalid(format!("kernel index {j} out of range 0..={}", ex.n)));
    }
    let n = ex.n as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if j == 0 {
        return Ok(ex.psi0(r2.sqrt()));
    }
    Ok(-(n - 2.0) * ex.alpha * x[j - 1] * (1.0 + r2).powf(-n / 2.0))
}

/// The critical nonlinearity and its companions at `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonlinearity {
    /// `f(u) = (u⁺)^p`
    pub f: f64,
    /// `f'(u) = p (u⁺)^{p-1}`
    pub f_prime: f64,
    /// `F(u) = (u⁺)^{p+1}/(p+1)`
    pub big_f: f64,
}

pub fn nonlinearity(ex: &Exponents, u: f64) -> Nonlinearity {
    if u <= 0.0 {
        return Nonlinearity { f: 0.0, f_prime: 0.0, big_f: 0.0 };
    }
    let up1 = u.powf(ex.p - 1.0);
    Nonlinearity { f: up1 * u, f_prime: ex.p * up1, big_f: up1 * u * u / (ex.p + 1.0) }
}
