use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use yamabe_cluster::ansatz::EtaScale;
use yamabe_cluster::constants::{oracle_errors, ConstantsTable};
use yamabe_cluster::correction::{check_decay, nu_oracle, residual_norm, solve_correction, GridSpec};
use yamabe_cluster::geometry::{load_geometry, product_spheres_geometry};
use yamabe_cluster::manifest::{manifest_path, RunManifest};
use yamabe_cluster::mc::McOptions;
use yamabe_cluster::optimizer::{find_critical_config, verify_second_order, OptimizerOptions};
use yamabe_cluster::reduced::ClusterConfig;
use yamabe_cluster::scaling::DEFAULT_EPS_GRID;
use yamabe_cluster::scan::{
    energy_scan, interaction_scan, norm_scan, parse_eps_list, single_peak_config, NormScan, Quantity, ScanSetup,
};
use yamabe_cluster::{Dim, Error, Exponents, GeometryData, Result};

const CONSTANTS_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "yamabe-cluster", version, about = "Clustered bubble ansatz for the perturbed Yamabe problem")]
struct Cli {
    /// Worker threads for Monte Carlo integration (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-form constants with their quadrature oracle errors.
    Constants {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value = "constants.json")]
        out: PathBuf,
    },
    /// Solve for the correction field V and write its radial modes.
    SolveCorrection {
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long, default_value_t = 1e4)]
        r_max: f64,
        #[arg(long, default_value_t = 8000)]
        nodes: usize,
        #[arg(long, default_value = "correction.csv")]
        out: PathBuf,
    },
    /// Critical cluster configuration of the reduced energy.
    Optimize {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long, env = "YAMABE_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        starts: usize,
        #[arg(long, default_value = "config.json")]
        out: PathBuf,
    },
    /// Monte Carlo interaction integral against its leading-order prediction.
    VerifyInteraction {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "0,1")]
        pair: String,
        #[command(flatten)]
        scan: ScanArgs,
        #[arg(long, default_value = "interaction.csv")]
        out: PathBuf,
    },
    /// Residual (or cross-term) norm over an ε grid with a fitted exponent.
    ResidualScan {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Cluster configuration; a single centred peak when omitted with k = 1.
        #[arg(long)]
        config: Option<PathBuf>,
        /// residual | cross-term
        #[arg(long, default_value = "residual")]
        quantity: String,
        #[command(flatten)]
        scan: ScanArgs,
        #[arg(long, default_value = "scan.csv")]
        out: PathBuf,
    },
    /// Energy of the ansatz against its ε-expansion.
    EnergyScan {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        scan: ScanArgs,
        #[arg(long, default_value = "energy.csv")]
        out: PathBuf,
    },
    /// Claimed vs measured residual exponents on the product-of-spheres examples.
    Report {
        #[arg(long, default_value = "7,8,9")]
        dims: String,
        #[arg(long, default_value_t = default_eps_list())]
        eps_list: String,
        #[arg(long, default_value_t = 1 << 18)]
        samples: usize,
        #[arg(long, env = "YAMABE_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        r0: f64,
        #[arg(long, default_value = "separation")]
        eta: EtaScale,
        #[arg(long, default_value = "report.md")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long, default_value_t = default_eps_list())]
    eps_list: String,
    #[arg(long, default_value_t = 1 << 18)]
    samples: usize,
    #[arg(long, env = "YAMABE_SEED", default_value_t = 1)]
    seed: u64,
    /// Cutoff radius, or `auto`.
    #[arg(long, default_value = "auto")]
    r0: String,
    /// bubble | separation | off
    #[arg(long, default_value = "separation")]
    eta: EtaScale,
}

fn default_eps_list() -> String {
    DEFAULT_EPS_GRID.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
}

fn eta_name(e: EtaScale) -> &'static str {
    match e {
        EtaScale::Bubble => "bubble",
        EtaScale::Separation => "separation",
        EtaScale::Off => "off",
    }
}

impl ScanArgs {
    fn params(&self, p: &mut BTreeMap<String, String>) {
        p.insert("geometry".into(), self.geometry.display().to_string());
        p.insert("eps-list".into(), self.eps_list.clone());
        p.insert("samples".into(), self.samples.to_string());
        p.insert("seed".into(), self.seed.to_string());
        p.insert("r0".into(), self.r0.clone());
        p.insert("eta".into(), eta_name(self.eta).into());
    }

    fn r0(&self) -> Result<Option<f64>> {
        if self.r0 == "auto" {
            return Ok(None);
        }
        match self.r0.parse::<f64>() {
            Ok(r) if r > 0.0 => Ok(Some(r)),
            _ => Err(Error::Invalid(format!("r0 must be positive or `auto`, got {}", self.r0))),
        }
    }

    fn mc(&self) -> McOptions {
        McOptions { samples: self.samples, seed: self.seed, ..McOptions::default() }
    }

    fn setup(&self, geo: GeometryData, cfg: ClusterConfig) -> Result<ScanSetup> {
        let correction = Arc::new(solve_correction(&geo, GridSpec::default())?);
        Ok(ScanSetup { geo, cfg, correction, r0: self.r0()?, eta: self.eta, mc: self.mc() })
    }
}

/// Collects outputs and writes the manifest next to the primary output.
struct Run {
    manifest: RunManifest,
    primary: PathBuf,
}

impl Run {
    fn new(command: &str, params: BTreeMap<String, String>, seed: u64, primary: &Path) -> Self {
        Run { manifest: RunManifest::new(command, params, seed), primary: primary.to_path_buf() }
    }

    fn write(&mut self, path: &Path, content: &str) -> Result<()> {
        fs::write(path, content)?;
        self.manifest.record(path)
    }

    fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        self.write(path, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn finish(self) -> Result<()> {
        self.manifest.write(&manifest_path(&self.primary))
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn load_config(path: &Path) -> Result<ClusterConfig> {
    let cfg: ClusterConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_dim(geo: &GeometryData, dim: Option<usize>) -> Result<()> {
    match dim {
        Some(n) if n != geo.n() => {
            Err(Error::Invalid(format!("--dim {n} does not match the geometry dimension {}", geo.n())))
        }
        Some(n) => Dim::new(n).map(|_| ()),
        None => Ok(()),
    }
}

fn cluster_config(geo: &GeometryData, config: Option<&Path>, k: Option<usize>) -> Result<ClusterConfig> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None if k.unwrap_or(1) == 1 => single_peak_config(geo)?,
        None => return Err(Error::Invalid("k >= 2 needs --config".into())),
    };
    if let Some(k) = k {
        if k != cfg.k {
            return Err(Error::Invalid(format!("--k {k} does not match the configuration (k = {})", cfg.k)));
        }
    }
    if cfg.dim() != geo.n() {
        return Err(Error::Invalid("configuration and geometry dimensions differ".into()));
    }
    Ok(cfg)
}

fn norm_scan_csv(scan: &NormScan) -> String {
    let mut s = String::from("eps,stratum,value,stderr\n");
    for r in &scan.rows {
        let _ = writeln!(s, "{},{},{},{}", r.eps, r.stratum, r.value, r.stderr);
    }
    s
}

fn builtin_product(n: usize) -> Result<GeometryData> {
    Dim::new(n)?;
    let a = n.div_ceil(2);
    product_spheres_geometry(a, n - a, Some(nalgebra::DMatrix::zeros(n, n)))
}

/// Returns `true` when a numerical-failure flag was raised.
fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Constants { dim, out } => {
            let d = Dim::new(dim)?;
            let t = ConstantsTable::new(d);
            let err = oracle_errors(&t)?;
            let value = json!({
                "dim": dim,
                "K_N": t.k_n,
                "A_N": t.a_n,
                "B_N": t.b_n,
                "D_N": t.d_n,
                "E_N": t.e_n,
                "oracle_relative_errors": err,
            });
            let params = BTreeMap::from([("dim".into(), dim.to_string()), ("out".into(), out.display().to_string())]);
            let mut run = Run::new("constants", params, 0, &out);
            run.write_json(&out, &value)?;
            run.finish()?;
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(err.max() > CONSTANTS_TOL)
        }
        Cmd::SolveCorrection { geometry, r_max, nodes, out } => {
            let geo = load_geometry(&geometry)?;
            let field = solve_correction(&geo, GridSpec { r_max, nodes, ..GridSpec::default() })?;
            let (res, rhs) = residual_norm(&geo, &field);
            let (c_bound, monotone_tail, grad_bounds) = check_decay(&field);
            let diag = field.diagnostics.as_ref();
            let summary = json!({
                "dim": geo.n(),
                "nu": field.nu,
                "nu_oracle": nu_oracle(&Exponents::new(geo.dim), &geo),
                "residual_l2": res,
                "rhs_l2": rhs,
                "decay_bound": c_bound,
                "monotone_tail": monotone_tail,
                "derivative_decay_bounds": grad_bounds,
                "fredholm_defect": diag.map(|d| d.fredholm_defect),
                "orthogonality": diag.map(|d| d.orthogonality),
                "mode_defect": diag.map(|d| d.mode_defect),
            });
            let mut csv = Vec::new();
            field.write_csv(&mut csv)?;
            let params = BTreeMap::from([
                ("geometry".into(), geometry.display().to_string()),
                ("r-max".into(), r_max.to_string()),
                ("nodes".into(), nodes.to_string()),
                ("out".into(), out.display().to_string()),
            ]);
            let mut run = Run::new("solve-correction", params, 0, &out);
            run.write(&out, &String::from_utf8(csv).map_err(|e| Error::Numerical(e.to_string()))?)?;
            run.write_json(&sibling(&out, "summary.json"), &summary)?;
            run.finish()?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(!monotone_tail)
        }
        Cmd::Optimize { dim, k, geometry, seed, starts, out } => {
            let geo = load_geometry(&geometry)?;
            check_dim(&geo, dim)?;
            let table = ConstantsTable::new(geo.dim);
            let opts = OptimizerOptions { seed, n_starts: starts, ..OptimizerOptions::default() };
            let report = find_critical_config(k, &geo, &table, &opts)?;
            let second = verify_second_order(&report.best, &geo, &table)?;
            let mut params = BTreeMap::from([
                ("k".into(), k.to_string()),
                ("geometry".into(), geometry.display().to_string()),
                ("seed".into(), seed.to_string()),
                ("starts".into(), starts.to_string()),
                ("out".into(), out.display().to_string()),
            ]);
            if let Some(n) = dim {
                params.insert("dim".into(), n.to_string());
            }
            let mut run = Run::new("optimize", params, seed, &out);
            run.write_json(&out, &report.best)?;
            run.write_json(&sibling(&out, "report.json"), &json!({ "report": report, "second_order": second }))?;
            run.finish()?;
            println!(
                "k = {k}: value {:.6e}, |grad| {:.2e}, symmetry {}",
                report.value, report.grad_norm, report.symmetry_tag
            );
            Ok(false)
        }
        Cmd::VerifyInteraction { config, pair, scan, out } => {
            let geo = load_geometry(&scan.geometry)?;
            let cfg = cluster_config(&geo, Some(&config), None)?;
            let ij: Vec<usize> = pair
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Invalid(format!("bad pair `{pair}`"))))
                .collect::<Result<_>>()?;
            if ij.len() != 2 {
                return Err(Error::Invalid(format!("--pair needs two indices, got `{pair}`")));
            }
            let eps = parse_eps_list(&scan.eps_list)?;
            let setup = scan.setup(geo, cfg)?;
            let res = interaction_scan(&setup, &eps, [ij[0], ij[1]])?;
            let mut csv = String::from("eps,pair,value,stderr,prediction,ratio\n");
            for p in &res.points {
                let r = &p.result;
                let _ = writeln!(csv, "{},{}-{},{},{},{},{}", p.eps, ij[0], ij[1], r.value, r.stderr, r.prediction, r.ratio);
            }
            let mut params = BTreeMap::from([
                ("config".into(), config.display().to_string()),
                ("pair".into(), pair.clone()),
                ("out".into(), out.display().to_string()),
            ]);
            scan.params(&mut params);
            let mut run = Run::new("verify-interaction", params, scan.seed, &out);
            run.write(&out, &csv)?;
            run.write_json(&sibling(&out, "summary.json"), &res)?;
            run.finish()?;
            for p in &res.points {
                println!("eps {:e}: ratio {:.5} (rel stderr {:.2e})", p.eps, p.result.ratio, p.result.stderr / p.result.value);
            }
            for s in &res.skipped {
                println!("eps {:e} skipped: {}", s.eps, s.reason);
            }
            Ok(res.flagged)
        }
        Cmd::ResidualScan { dim, k, config, quantity, scan, out } => {
            let geo = load_geometry(&scan.geometry)?;
            check_dim(&geo, dim)?;
            let cfg = cluster_config(&geo, config.as_deref(), k)?;
            let q: Quantity = quantity.parse()?;
            let eps = parse_eps_list(&scan.eps_list)?;
            let setup = scan.setup(geo, cfg)?;
            let res = norm_scan(&setup, &eps, q)?;
            let mut params = BTreeMap::from([
                ("quantity".into(), quantity.clone()),
                ("out".into(), out.display().to_string()),
            ]);
            if let Some(n) = dim {
                params.insert("dim".into(), n.to_string());
            }
            if let Some(k) = k {
                params.insert("k".into(), k.to_string());
            }
            if let Some(c) = &config {
                params.insert("config".into(), c.display().to_string());
            }
            scan.params(&mut params);
            let mut run = Run::new("residual-scan", params, scan.seed, &out);
            run.write(&out, &norm_scan_csv(&res))?;
            run.write_json(&sibling(&out, "summary.json"), &res)?;
            run.finish()?;
            match &res.fit {
                Some(f) => println!(
                    "slope {:.4} (95% CI [{:.4}, {:.4}]), claimed {:?}",
                    f.slope, f.slope_ci[0], f.slope_ci[1], res.claimed
                ),
                None => println!("no fit: {}", res.fit_error.as_deref().unwrap_or("")),
            }
            for s in &res.skipped {
                println!("eps {:e} skipped: {}", s.eps, s.reason);
            }
            Ok(res.flagged || res.fit.is_none())
        }
        Cmd::EnergyScan { config, scan, out } => {
            let geo = load_geometry(&scan.geometry)?;
            let cfg = cluster_config(&geo, config.as_deref(), None)?;
            let eps = parse_eps_list(&scan.eps_list)?;
            let setup = scan.setup(geo, cfg)?;
            let res = energy_scan(&setup, &eps)?;
            let mut csv = String::from("eps,term,value,stderr\n");
            for p in &res.points {
                let e = &p.energy;
                for t in [&e.total, &e.self_energy, &e.interaction, &e.mixed, &e.f_remainder, &e.eps_coupling] {
                    let _ = writeln!(csv, "{},{},{},{}", p.eps, t.name, t.value, t.stderr);
                }
            }
            let mut params = BTreeMap::from([("out".into(), out.display().to_string())]);
            if let Some(c) = &config {
                params.insert("config".into(), c.display().to_string());
            }
            scan.params(&mut params);
            let mut run = Run::new("energy-scan", params, scan.seed, &out);
            run.write(&out, &csv)?;
            run.write_json(&sibling(&out, "summary.json"), &res)?;
            run.finish()?;
            for p in &res.points {
                print!("eps {:e}: (J - kD)/(c eps^2) = {:.4}", p.eps, p.second_order_ratio);
                if let Some(r) = p.third_order_ratio {
                    print!(", third-order ratio {r:.4}");
                }
                println!();
            }
            for s in &res.skipped {
                println!("eps {:e} skipped: {}", s.eps, s.reason);
            }
            Ok(res.flagged)
        }
        Cmd::Report { dims, eps_list, samples, seed, r0, eta, out } => {
            let eps = parse_eps_list(&eps_list)?;
            let ns: Vec<usize> = dims
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Invalid(format!("bad dimension list `{dims}`"))))
                .collect::<Result<_>>()?;
            let mut md = String::from(
                "| N | geometry | claimed exponent | measured slope | 95% CI | within ±0.15 |\n|---|---|---|---|---|---|\n",
            );
            let mut flagged = false;
            for &n in &ns {
                let geo = builtin_product(n)?;
                let a = n.div_ceil(2);
                let cfg = single_peak_config(&geo)?;
                let setup = ScanSetup {
                    correction: Arc::new(solve_correction(&geo, GridSpec::default())?),
                    geo,
                    cfg,
                    r0: Some(r0),
                    eta,
                    mc: McOptions { samples, seed, ..McOptions::default() },
                };
                let res = norm_scan(&setup, &eps, Quantity::Residual)?;
                flagged |= res.flagged;
                let claimed = if n == 8 { "3/2 (·\\|ln ε\\|^5/8)".to_string() } else { res.claimed[0].to_string() };
                match &res.fit {
                    Some(f) => {
                        let _ = writeln!(
                            md,
                            "| {n} | S^{a}×S^{} | {claimed} | {:.4} | [{:.4}, {:.4}] | {} |",
                            n - a,
                            f.slope,
                            f.slope_ci[0],
                            f.slope_ci[1],
                            if n == 8 { "not gated" } else if f.within(res.claimed[0], 0.15) { "yes" } else { "no" }
                        );
                    }
                    None => {
                        flagged = true;
                        let _ = writeln!(md, "| {n} | S^{a}×S^{} | {claimed} | – | – | no fit |", n - a);
                    }
                }
            }
            let _ = writeln!(
                md,
                "\nk = 1, r0 = {r0}, η: {}, {samples} samples per point, seed {seed}, ε ∈ {{{eps_list}}}.",
                eta_name(eta)
            );
            let params = BTreeMap::from([
                ("dims".into(), dims.clone()),
                ("eps-list".into(), eps_list.clone()),
                ("samples".into(), samples.to_string()),
                ("seed".into(), seed.to_string()),
                ("r0".into(), r0.to_string()),
                ("eta".into(), eta_name(eta).into()),
                ("out".into(), out.display().to_string()),
            ]);
            let mut run = Run::new("report", params, seed, &out);
            run.write(&out, &md)?;
            run.finish()?;
            print!("{md}");
            Ok(flagged)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.cmd) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("warning: numerical-failure flags raised; see outputs");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Numerical(_)) { 3 } else { 2 })
        }
    }
}
