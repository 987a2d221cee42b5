//! Monte-Carlo measurements on the ansatz: the interaction integral, the
//! `L^{2N/(N+2)}` norms of the error terms, and the energy split into the pieces
//! of its cluster expansion.

use serde::Serialize;
use std::f64::consts::PI;

use crate::ansatz::{AnsatzSpec, Stratum};
use crate::bubble::nonlinearity;
use crate::constants::{radial_volume_integral, unit_sphere_area, ConstantsTable, QuadSpec};
use crate::error::{Error, Result};
use crate::mc::{integrate, Component, McOptions, Mixture};
use crate::reduced::beta_exponent;

/// Relative standard error above which a measurement is flagged.
pub const FLAG_REL_STDERR: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct StratumValue {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
}

/// Proposal weights: per-peak cores, per-peak log shells and a ball on the `χ` support.
#[derive(Debug, Clone, Copy)]
pub struct ProposalShape {
    pub core: f64,
    pub core_b: f64,
    pub shell: f64,
    pub ball: f64,
}

impl ProposalShape {
    pub const PEAKED: ProposalShape = ProposalShape { core: 0.8, core_b: 1.0, shell: 0.1, ball: 0.1 };
    pub const SPREAD: ProposalShape = ProposalShape { core: 0.4, core_b: 1.0, shell: 0.35, ball: 0.25 };
}

/// Builds the proposal; `focus` puts the core weight on a single peak.
pub fn proposal(spec: &AnsatzSpec, shape: ProposalShape, focus: Option<usize>) -> Result<Mixture> {
    let n = spec.n();
    let k = spec.k();
    let mut parts = Vec::new();
    for (i, p) in spec.peaks().iter().enumerate() {
        let w = match focus {
            Some(f) if f == i => shape.core * 0.8 + 0.2 * shape.core / k as f64,
            Some(_) => 0.2 * shape.core / k as f64,
            None => shape.core / k as f64,
        };
        parts.push((w, Component::Core { center: p.center.clone(), mu: p.mu, b: shape.core_b }));
        if shape.shell > 0.0 {
            let far = p.center.iter().map(|c| c * c).sum::<f64>().sqrt() + spec.r0;
            parts.push((
                shape.shell / k as f64,
                Component::LogShell { center: p.center.clone(), r_lo: p.mu, r_hi: far },
            ));
        }
    }
    if shape.ball > 0.0 && spec.cutoff {
        parts.push((shape.ball, Component::Ball { center: vec![0.0; n], radius: spec.r0 }));
    }
    Mixture::new(n, parts)
}

fn stratum_index(spec: &AnsatzSpec, x: &[f64]) -> Option<usize> {
    match spec.stratum(x) {
        Stratum::Peak(h) => Some(h),
        Stratum::Between => Some(spec.k()),
        Stratum::Shell => Some(spec.k() + 1),
        Stratum::Outside => None,
    }
}

fn stratum_names(k: usize) -> Vec<String> {
    let mut v: Vec<String> = (0..k).map(|h| format!("peak_ball_{h}")).collect();
    v.push("between".into());
    v.push("shell".into());
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct InteractionResult {
    pub value: f64,
    pub stderr: f64,
    pub prediction: f64,
    pub ratio: f64,
    pub flagged: bool,
}

/// `E_N d₀^{N−2} ε^{3(N−2)/N} |τ_i − τ_j|^{2−N}`.
pub fn interaction_prediction(spec: &AnsatzSpec, i: usize, j: usize) -> f64 {
    let n = spec.exponents().nf();
    let t = ConstantsTable::new(spec.geo.dim);
    let d: f64 = spec.cfg.tau[i].iter().zip(&spec.cfg.tau[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    t.e_n * spec.cfg.d0.powf(n - 2.0) * spec.eps.powf(3.0 * (n - 2.0) / n) * d.powf(2.0 - n)
}

/// `∫ f(W_i) W_j |g|^{1/2} dx` by importance sampling around peak `i`.
pub fn interaction_integral(spec: &AnsatzSpec, i: usize, j: usize, opts: &McOptions) -> Result<InteractionResult> {
    if i == j || i >= spec.k() || j >= spec.k() {
        return Err(Error::Invalid(format!("interaction needs distinct peaks in 0..{}, got ({i}, {j})", spec.k())));
    }
    let mix = proposal(spec, ProposalShape::PEAKED, Some(i))?;
    let ex = *spec.exponents();
    let est = integrate(&mix, opts, 1, |x, out| {
        let wi = spec.peak_value(i, x);
        if wi <= 0.0 {
            return;
        }
        let wj = spec.peak_value(j, x);
        out[0] = nonlinearity(&ex, wi).f * wj * spec.sqrt_det(x);
    })?;
    let prediction = interaction_prediction(spec, i, j);
    let (value, stderr) = (est.mean[0], est.stderr[0]);
    Ok(InteractionResult {
        value,
        stderr,
        prediction,
        ratio: value / prediction,
        flagged: est.rel_stderr(0) > FLAG_REL_STDERR,
    })
}

/// Composite Simpson over consecutive breakpoints with `m` (even) intervals per panel.
fn panel_simpson<F: Fn(f64) -> f64>(f: F, breaks: &[f64], m: usize) -> f64 {
    let mut s = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let h = (b - a) / m as f64;
        let mut p = f(a) + f(b);
        for l in 1..m {
            p += f(a + l as f64 * h) * if l % 2 == 1 { 4.0 } else { 2.0 };
        }
        s += p * h / 3.0;
    }
    s
}

/// Deterministic value of `∫_{R^N} U_{μ_i}^p(x − c_i) U_{μ_j}(x − c_j) dx` (flat metric,
/// no cutoffs, no correction): radial integration around `c_i` of the monopole
/// (angular average) of `U_{μ_j}`, both on graded panels.
pub fn interaction_oracle(spec: &AnsatzSpec, i: usize, j: usize) -> f64 {
    let ex = *spec.exponents();
    let n = ex.nf();
    let (pi_, pj) = (&spec.peaks()[i], &spec.peaks()[j]);
    let d: f64 = pi_.center.iter().zip(&pj.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let h = (n - 2.0) / 2.0;
    let ui = |r: f64| pi_.mu.powf(-h) * ex.u(r / pi_.mu);
    let uj = |r: f64| pj.mu.powf(-h) * ex.u(r / pj.mu);
    let mut tb: Vec<f64> = (0..70).map(|k| PI * 0.5f64.powi(k)).collect();
    tb.push(0.0);
    tb.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let s_n2 = unit_sphere_area(ex.n - 1);
    let monopole = |r: f64| {
        s_n2 * panel_simpson(
            |t: f64| {
                let rho = (r * r + d * d - 2.0 * r * d * t.cos()).max(0.0).sqrt();
                uj(rho) * t.sin().powf(n - 2.0)
            },
            &tb,
            16,
        )
    };
    let r_max = 1e4 * (d + pi_.mu + pj.mu);
    let mut rb = vec![0.0, r_max];
    for k in -30..60 {
        let s = 2f64.powi(k);
        rb.push(pi_.mu * s);
        rb.push(d + pj.mu * s);
        rb.push(d - pj.mu * s);
    }
    rb.retain(|r| *r >= 0.0 && *r <= r_max);
    rb.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rb.dedup();
    panel_simpson(|r| r.powf(n - 1.0) * ui(r).powf(ex.p) * monopole(r), &rb, 8)
}

#[derive(Debug, Clone, Serialize)]
pub struct NormResult {
    /// `‖·‖_{2N/(N+2)}`.
    pub norm: f64,
    pub stderr: f64,
    /// `∫|·|^{2N/(N+2)}` over the whole chart and per stratum.
    pub integral: StratumValue,
    pub strata: Vec<StratumValue>,
    pub flagged: bool,
}

fn norm_result(q: f64, mean: &[f64], stderr: &[f64], names: Vec<String>) -> NormResult {
    let total = mean[0];
    let norm = total.max(0.0).powf(1.0 / q);
    let se = if total > 0.0 { norm * stderr[0] / (q * total) } else { 0.0 };
    let strata: Vec<StratumValue> = names
        .into_iter()
        .enumerate()
        .map(|(s, name)| StratumValue { name, value: mean[s + 1], stderr: stderr[s + 1] })
        .collect();
    // strata below 1% of the total cannot move the norm and are not flagged
    let flagged = strata.iter().any(|s| s.value > 0.01 * total && s.stderr > FLAG_REL_STDERR * s.value)
        || stderr[0] > FLAG_REL_STDERR * total.abs();
    NormResult {
        norm,
        stderr: se,
        integral: StratumValue { name: "total".into(), value: total, stderr: stderr[0] },
        strata,
        flagged,
    }
}

/// Dual exponent `2N/(N+2)`.
pub fn dual_exponent(spec: &AnsatzSpec) -> f64 {
    spec.exponents().dual()
}

/// `‖R‖_{2N/(N+2)}` of the pointwise residual, stratified over peak balls, the region
/// between them and the cutoff shell.
pub fn residual_norm(spec: &AnsatzSpec, opts: &McOptions) -> Result<NormResult> {
    let q = dual_exponent(spec);
    let k = spec.k();
    let mix = proposal(spec, ProposalShape::SPREAD, None)?;
    let est = integrate(&mix, opts, k + 3, |x, out| {
        let Some(s) = stratum_index(spec, x) else { return };
        let v = spec.residual(x).abs().powf(q) * spec.sqrt_det(x);
        out[0] = v;
        out[s + 1] = v;
    })?;
    Ok(norm_result(q, &est.mean, &est.stderr, stratum_names(k)))
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossTermResult {
    pub norm: NormResult,
    /// The four bounding integrals of the error estimate, each raised to `(N+2)/(2N)`:
    /// far field, region between peak balls, and the two peak-ball pieces.
    pub bounds: Vec<StratumValue>,
}

/// `‖f(ΣW_i) − Σf(W_i)‖_{2N/(N+2)}` with its stratification and bounding pieces.
pub fn cross_term_norm(spec: &AnsatzSpec, opts: &McOptions) -> Result<CrossTermResult> {
    let k = spec.k();
    if k < 2 {
        return Err(Error::Invalid("cross term needs k >= 2".into()));
    }
    let ex = *spec.exponents();
    let q = ex.dual();
    let ts = ex.two_star;
    let p = ex.p;
    let r0 = spec.r0;
    let mix = proposal(spec, ProposalShape::SPREAD, None)?;
    // outputs: total, strata (k + 2), bounds (4)
    let est = integrate(&mix, opts, k + 7, |x, out| {
        let Some(s) = stratum_index(spec, x) else { return };
        let sg = spec.sqrt_det(x);
        let w: Vec<f64> = (0..k).map(|i| spec.peak_value(i, x)).collect();
        let sum: f64 = w.iter().sum();
        let cross = nonlinearity(&ex, sum).f - w.iter().map(|wi| nonlinearity(&ex, *wi).f).sum::<f64>();
        let v = cross.abs().powf(q) * sg;
        out[0] = v;
        out[s + 1] = v;
        let b = k + 3;
        let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let chi = crate::ansatz::smooth_cut(r, r0 / 2.0, r0)[0];
        let pw: f64 = w.iter().map(|wi| wi.abs().powf(ts)).sum();
        out[b] = (1.0 - chi.powf(p + 1.0)) * pw * sg;
        match spec.stratum(x) {
            Stratum::Between => out[b + 1] = pw * sg,
            Stratum::Peak(h) => {
                let others = sum - w[h];
                out[b + 2] = (w[h].abs().powf(p - 1.0) * others).abs().powf(q) * sg;
                out[b + 3] = others.abs().powf(ts) * sg;
            }
            _ => {}
        }
    })?;
    let norm = norm_result(q, &est.mean[..k + 3], &est.stderr[..k + 3], stratum_names(k));
    let e = 1.0 / q;
    let names = ["far_field", "between", "peak_ball_linear", "peak_ball_power"];
    let bounds = names
        .iter()
        .enumerate()
        .map(|(l, name)| {
            let m = est.mean[k + 3 + l].max(0.0);
            let v = m.powf(e);
            let se = if m > 0.0 { v * est.stderr[k + 3 + l] / (q * m) } else { 0.0 };
            StratumValue { name: name.to_string(), value: v, stderr: se }
        })
        .collect();
    Ok(CrossTermResult { norm, bounds })
}

/// `J_ε(ΣW_i)` and the pieces of its cluster decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyResult {
    pub total: StratumValue,
    /// `Σ_i J_ε(W_i)`.
    pub self_energy: StratumValue,
    /// `Σ_{j<i} ∫ f(W_i)W_j` (enters with a minus sign).
    pub interaction: StratumValue,
    /// `Σ_{i<j} ∫ ∇W_i·∇W_j + β_N R W_iW_j − f(W_i)W_j`.
    pub mixed: StratumValue,
    /// `∫ F(ΣW) − ΣF(W_i) − Σ_{i≠j} f(W_i)W_j` (enters with a minus sign).
    pub f_remainder: StratumValue,
    /// `ε Σ_{i<j} ∫ W_iW_j`.
    pub eps_coupling: StratumValue,
    /// Known mean of the control variate added back to `total` and `self_energy`.
    pub control_mean: f64,
    pub flagged: bool,
}

/// Integral of the control variate of one peak: flat bubble energy, the linear
/// volume correction and the zeroth-order potential terms.
fn control_mean(spec: &AnsatzSpec, mu: f64) -> f64 {
    let ex = *spec.exponents();
    let t = ConstantsTable::new(spec.geo.dim);
    let q = QuadSpec::default();
    let e0 = |r: f64| {
        let [u, u1, _] = ex.u_radial(r);
        0.5 * u1 * u1 - u.powf(ex.two_star) / ex.two_star
    };
    let r2e0 = radial_volume_integral(spec.geo.dim, q, |r| r * r * e0(r)).0;
    let scal = spec.geo.ricci().trace();
    t.d_n - scal / (6.0 * ex.nf()) * mu * mu * r2e0
        + (ex.beta * spec.geo.scal + spec.equation_eps) * t.b_n * mu * mu
}

/// Pointwise control variate for peak `i` at `x` (see [`control_mean`]): the flat bubble
/// energy density, `−Ric(z,z)/6` times it, `½(β_N R + ε)U²` and the first variation
/// `∇U·∇P − U^pP` in the correction `P`, whose integral vanishes.
fn control_variate(spec: &AnsatzSpec, i: usize, x: &[f64]) -> f64 {
    let ex = *spec.exponents();
    let n = x.len();
    let p = &spec.peaks()[i];
    let mu = p.mu;
    let h = (ex.nf() - 2.0) / 2.0;
    let m = mu.powf(-h);
    let z: Vec<f64> = x.iter().zip(&p.center).map(|(a, b)| a - b).collect();
    let r = z.iter().map(|a| a * a).sum::<f64>().sqrt();
    let [u, u1, _] = ex.u_radial(r / mu);
    let (u, du) = (m * u, m * u1 / mu);
    let e0 = 0.5 * du * du - u.powf(ex.two_star) / ex.two_star;
    let ric = spec.geo.ricci();
    let mut rzz = 0.0;
    for a in 0..n {
        for b in 0..n {
            rzz += ric[(a, b)] * z[a] * z[b];
        }
    }
    let mut cv = e0 * (1.0 - rzz / 6.0) + 0.5 * (ex.beta * spec.geo.scal + spec.equation_eps) * u * u;
    let pert = spec.correction_part(i, x);
    if let Some(j) = pert {
        let dot = if r > 0.0 { du * z.iter().zip(&j.grad).map(|(a, g)| a * g).sum::<f64>() / r } else { 0.0 };
        cv += dot - u.powf(ex.p) * j.v;
    }
    cv
}

/// `J_ε(ΣW_i)` by importance sampling with a per-peak control variate whose mean is
/// known in closed form, plus the cluster decomposition measured on the same samples.
pub fn energy_of_ansatz(spec: &AnsatzSpec, opts: &McOptions) -> Result<EnergyResult> {
    let ex = *spec.exponents();
    let k = spec.k();
    let n = spec.n();
    let bs = ex.beta * spec.geo.scal;
    let eps = spec.equation_eps;
    let shape = ProposalShape { core: 0.85, core_b: 1.0, shell: 0.1, ball: 0.05 };
    let mix = proposal(spec, shape, None)?;
    let cmean: f64 = spec.peaks().iter().map(|p| control_mean(spec, p.mu)).sum();
    let est = integrate(&mix, opts, 6, |x, out| {
        let cv: f64 = (0..k).map(|i| control_variate(spec, i, x)).sum();
        let inside = !spec.cutoff || x.iter().map(|a| a * a).sum::<f64>() < spec.r0 * spec.r0;
        if !inside {
            out[0] = -cv;
            out[1] = -cv;
            return;
        }
        let g = spec.chart(x);
        let jets: Vec<_> = (0..k).map(|i| spec.peak_jet(i, x, false)).collect();
        let dot = |a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            for r in 0..n {
                for c in 0..n {
                    s += g.g_inv[r * n + c] * a[r] * b[c];
                }
            }
            s
        };
        let nl: Vec<_> = jets.iter().map(|j| nonlinearity(&ex, j.v)).collect();
        let mut self_e = 0.0;
        for (j, f) in jets.iter().zip(&nl) {
            self_e += 0.5 * (dot(&j.grad, &j.grad) + (bs + eps) * j.v * j.v) - f.big_f;
        }
        let (mut inter, mut mixed, mut coup, mut cross_f) = (0.0, 0.0, 0.0, 0.0);
        for a in 0..k {
            for b in 0..k {
                if a == b {
                    continue;
                }
                let fw = nl[a].f * jets[b].v;
                cross_f += fw;
                if b < a {
                    inter += fw;
                } else {
                    mixed += dot(&jets[a].grad, &jets[b].grad) + bs * jets[a].v * jets[b].v - fw;
                    coup += eps * jets[a].v * jets[b].v;
                }
            }
        }
        let sum: f64 = jets.iter().map(|j| j.v).sum();
        let f_rem = nonlinearity(&ex, sum).big_f - nl.iter().map(|f| f.big_f).sum::<f64>() - cross_f;
        let total = self_e - inter + mixed - f_rem + coup;
        let sg = g.sqrt_det;
        out[0] = total * sg - cv;
        out[1] = self_e * sg - cv;
        out[2] = inter * sg;
        out[3] = mixed * sg;
        out[4] = f_rem * sg;
        out[5] = coup * sg;
    })?;
    let sv = |l: usize, name: &str, add: f64| StratumValue { name: name.into(), value: est.mean[l] + add, stderr: est.stderr[l] };
    let total = sv(0, "total", cmean);
    let flagged = total.stderr > FLAG_REL_STDERR * total.value.abs();
    Ok(EnergyResult {
        total,
        self_energy: sv(1, "self_energy", cmean),
        interaction: sv(2, "interaction", 0.0),
        mixed: sv(3, "mixed", 0.0),
        f_remainder: sv(4, "f_remainder", 0.0),
        eps_coupling: sv(5, "eps_coupling", 0.0),
        control_mean: cmean,
        flagged,
    })
}

/// `ε^β` for the spec's dimension.
pub fn eps_beta(spec: &AnsatzSpec) -> f64 {
    spec.eps.powf(beta_exponent(spec.n()))
}
