//! Seeded, parallel importance sampling in `R^N`.
//!
//! Samples come from a fixed mixture of radial proposals and are weighted by the
//! mixture density (balance heuristic). Work is split into fixed-size chunks, each
//! drawing from its own ChaCha8 stream, and chunk statistics are merged in chunk
//! order, so results are bit-identical for a given seed regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::constants::unit_sphere_area;
use crate::error::{Error, Result};

/// One radial proposal component.
#[derive(Debug, Clone)]
pub enum Component {
    /// Density `∝ (1 + |x−c|²/μ²)^{−N/2−b}` on `R^N` (beta-prime radius).
    Core { center: Vec<f64>, mu: f64, b: f64 },
    /// `log|x−c|` uniform on `[ln r_lo, ln r_hi]`.
    LogShell { center: Vec<f64>, r_lo: f64, r_hi: f64 },
    /// Uniform on a ball.
    Ball { center: Vec<f64>, radius: f64 },
}

impl Component {
    fn center(&self) -> &[f64] {
        match self {
            Component::Core { center, .. } | Component::LogShell { center, .. } | Component::Ball { center, .. } => {
                center
            }
        }
    }
}

/// Mixture proposal with precomputed normalizations.
#[derive(Debug, Clone)]
pub struct Mixture {
    n: usize,
    comps: Vec<Component>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    log_norm: Vec<f64>,
}

impl Mixture {
    pub fn new(n: usize, parts: Vec<(f64, Component)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Invalid("empty proposal mixture".into()));
        }
        let total: f64 = parts.iter().map(|p| p.0).sum();
        let nf = n as f64;
        let mut comps = Vec::new();
        let mut weights = Vec::new();
        let mut log_norm = Vec::new();
        for (w, c) in parts {
            if !(w > 0.0) || c.center().len() != n {
                return Err(Error::Invalid("proposal components need positive weight and matching dimension".into()));
            }
            let ln = match &c {
                Component::Core { mu, b, .. } => {
                    if !(*mu > 0.0 && *b > 0.0) {
                        return Err(Error::Invalid("core proposal needs mu > 0 and b > 0".into()));
                    }
                    ln_gamma(nf / 2.0 + b) - ln_gamma(*b) - nf / 2.0 * PI.ln() - nf * mu.ln()
                }
                Component::LogShell { r_lo, r_hi, .. } => {
                    if !(*r_lo > 0.0 && r_hi > r_lo) {
                        return Err(Error::Invalid("log-shell proposal needs 0 < r_lo < r_hi".into()));
                    }
                    -(unit_sphere_area(n) * (r_hi / r_lo).ln()).ln()
                }
                Component::Ball { radius, .. } => {
                    if !(*radius > 0.0) {
                        return Err(Error::Invalid("ball proposal needs a positive radius".into()));
                    }
                    -(unit_sphere_area(n) / nf).ln() - nf * radius.ln()
                }
            };
            weights.push(w / total);
            log_norm.push(ln);
            comps.push(c);
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Mixture { n, comps, weights, cumulative, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: &[f64]) -> f64 {
        let nf = self.n as f64;
        let mut q = 0.0;
        for ((c, w), ln) in self.comps.iter().zip(&self.weights).zip(&self.log_norm) {
            let r2: f64 = x.iter().zip(c.center()).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = match c {
                Component::Core { mu, b, .. } => (ln - (nf / 2.0 + b) * (r2 / (mu * mu)).ln_1p()).exp(),
                Component::LogShell { r_lo, r_hi, .. } => {
                    let r = r2.sqrt();
                    if r >= *r_lo && r <= *r_hi {
                        (ln - nf * r.ln()).exp()
                    } else {
                        0.0
                    }
                }
                Component::Ball { radius, .. } => {
                    if r2 <= radius * radius {
                        ln.exp()
                    } else {
                        0.0
                    }
                }
            };
            q += w * v;
        }
        q
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, x: &mut [f64]) {
        let u: f64 = rng.gen();
        let idx = self.cumulative.iter().position(|c| u < *c).unwrap_or(self.comps.len() - 1);
        let nf = self.n as f64;
        // uniform direction
        let mut norm = 0.0;
        for xi in x.iter_mut() {
            *xi = rng.sample(StandardNormal);
            norm += *xi * *xi;
        }
        let norm = norm.sqrt().max(f64::MIN_POSITIVE);
        let (center, r) = match &self.comps[idx] {
            Component::Core { center, mu, b } => {
                let t: f64 = Beta::new(nf / 2.0, *b).expect("valid beta parameters").sample(rng);
                (center, mu * (t / (1.0 - t)).sqrt())
            }
            Component::LogShell { center, r_lo, r_hi } => {
                let s: f64 = rng.gen();
                (center, r_lo * (r_hi / r_lo).powf(s))
            }
            Component::Ball { center, radius } => {
                let s: f64 = rng.gen();
                (center, radius * s.powf(1.0 / nf))
            }
        };
        for (xi, c) in x.iter_mut().zip(center) {
            *xi = c + r * *xi / norm;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    pub chunk: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { samples: 1 << 20, seed: 1, chunk: 1 << 14 }
    }
}

/// Means and standard errors of several integrals estimated from the same samples.
#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
}

impl Estimate {
    pub fn rel_stderr(&self, k: usize) -> f64 {
        self.stderr[k] / self.mean[k].abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone)]
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn merge(mut self, o: &Moments) -> Moments {
        let n = self.n + o.n;
        for k in 0..self.mean.len() {
            let d = o.mean[k] - self.mean[k];
            self.mean[k] += d * o.n / n;
            self.m2[k] += o.m2[k] + d * d * self.n * o.n / n;
        }
        self.n = n;
        self
    }
}

/// Estimates `∫ f_k(x) dx` for `k < outputs`. `f` writes into a zeroed buffer and is
/// only evaluated where the mixture density is positive.
pub fn integrate<F>(mix: &Mixture, opts: &McOptions, outputs: usize, f: F) -> Result<Estimate>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    if opts.samples < 2 || opts.chunk == 0 {
        return Err(Error::Invalid("Monte Carlo needs at least two samples and a nonzero chunk".into()));
    }
    let chunks = opts.samples.div_ceil(opts.chunk);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let m = opts.chunk.min(opts.samples - c * opts.chunk);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(c as u64);
            let mut x = vec![0.0; mix.dim()];
            let mut out = vec![0.0; outputs];
            let mut mom = Moments { n: 0.0, mean: vec![0.0; outputs], m2: vec![0.0; outputs] };
            for _ in 0..m {
                mix.sample(&mut rng, &mut x);
                out.iter_mut().for_each(|v| *v = 0.0);
                let q = mix.density(&x);
                if q > 0.0 {
                    f(&x, &mut out);
                }
                mom.n += 1.0;
                for k in 0..outputs {
                    let v = if q > 0.0 { out[k] / q } else { 0.0 };
                    let d = v - mom.mean[k];
                    mom.mean[k] += d / mom.n;
                    mom.m2[k] += d * (v - mom.mean[k]);
                }
            }
            mom
        })
        .collect();
    let total = parts[1..].iter().fold(parts[0].clone(), |a, b| a.merge(b));
    let n = total.n;
    let stderr = total.m2.iter().map(|m2| (m2 / (n - 1.0) / n).sqrt()).collect();
    Ok(Estimate { mean: total.mean, stderr, samples: opts.samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ball_volume(n: usize, r: f64) -> f64 {
        unit_sphere_area(n) / n as f64 * r.powi(n as i32)
    }

    #[test]
    fn densities_are_normalized() {
        // ∫ q = 1 checked with an independent proposal that dominates each component.
        let n = 3;
        let c = vec![0.2, -0.1, 0.0];
        let comps = [
            Component::Core { center: c.clone(), mu: 0.5, b: 1.0 },
            Component::LogShell { center: c.clone(), r_lo: 0.01, r_hi: 2.0 },
            Component::Ball { center: c.clone(), radius: 1.5 },
        ];
        for comp in comps {
            let target = Mixture::new(n, vec![(1.0, comp)]).unwrap();
            let prop = Mixture::new(
                n,
                vec![
                    (1.0, Component::Core { center: c.clone(), mu: 1.0, b: 0.5 }),
                    (1.0, Component::LogShell { center: c.clone(), r_lo: 1e-3, r_hi: 3.0 }),
                ],
            )
            .unwrap();
            let e = integrate(&prop, &McOptions { samples: 400_000, seed: 3, chunk: 10_000 }, 1, |x, o| {
                o[0] = target.density(x)
            })
            .unwrap();
            assert!((e.mean[0] - 1.0).abs() < 4.0 * e.stderr[0] + 1e-3, "{e:?}");
        }
    }

    #[test]
    fn ball_volume_and_gaussian() {
        let n = 7;
        let mix = Mixture::new(n, vec![(1.0, Component::Core { center: vec![0.0; n], mu: 1.0, b: 2.0 })]).unwrap();
        let opts = McOptions { samples: 200_000, seed: 11, chunk: 4096 };
        let e = integrate(&mix, &opts, 2, |x, o| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            o[0] = if r2 < 1.0 { 1.0 } else { 0.0 };
            o[1] = (-r2).exp();
        })
        .unwrap();
        assert!((e.mean[0] - ball_volume(n, 1.0)).abs() < 4.0 * e.stderr[0]);
        let g = PI.powf(3.5);
        assert!((e.mean[1] - g).abs() < 4.0 * e.stderr[1]);
        assert!(e.rel_stderr(1) < 0.01);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let n = 4;
        let mix = Mixture::new(
            n,
            vec![
                (0.7, Component::Core { center: vec![0.0; n], mu: 0.3, b: 1.0 }),
                (0.3, Component::Ball { center: vec![0.0; n], radius: 2.0 }),
            ],
        )
        .unwrap();
        let opts = McOptions { samples: 50_000, seed: 9, chunk: 1000 };
        let f = |x: &[f64], o: &mut [f64]| o[0] = (-x.iter().map(|v| v * v).sum::<f64>()).exp();
        let a = integrate(&mix, &opts, 1, f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| integrate(&mix, &opts, 1, f).unwrap());
        assert_eq!(a.mean[0].to_bits(), b.mean[0].to_bits());
        assert_eq!(a.stderr[0].to_bits(), b.stderr[0].to_bits());
        let c = integrate(&mix, &McOptions { seed: 10, ..opts }, 1, f).unwrap();
        assert_ne!(a.mean[0], c.mean[0]);
        assert_relative_eq!(a.mean[0], c.mean[0], max_relative = 0.05);
    }

    #[test]
    fn rejects_bad_mixtures() {
        assert!(Mixture::new(2, vec![]).is_err());
        assert!(Mixture::new(2, vec![(1.0, Component::Ball { center: vec![0.0], radius: 1.0 })]).is_err());
        assert!(Mixture::new(2, vec![(0.0, Component::Ball { center: vec![0.0; 2], radius: 1.0 })]).is_err());
    }
}
