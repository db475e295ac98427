//! Batch front end: `casimir validate|scan|spectral|bound`.
//!
//! Exit codes: 0 success, 1 failed validation check, 2 configuration or
//! argument error, 3 I/O error.

pub mod checks;
pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::geometry::{build_domains_of_kind, DomainKind, FlaskSystem, Region, Vec3};
use crate::interaction::{
    asymptotic_minus_for, estimate_energy, force_scan, plate_bound, BetaGrid, EnergyEstimate,
    Equilibrium, ForcePoint, Sampling,
};
use crate::loops::LazyEnsemble;
use crate::spectral::{
    phi_box_eigsum, phi_disk_eigsum, phi_interval_eigsum, phi_interval_poisson, phi_mc,
    phi_mc_refinement,
};
use crate::Error;
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const CSV_HEADER: &str = "a,E_int,stderr,E_plus,E_minus,n_plus,n_minus,n_null,tail_flag";

#[derive(Debug, Parser)]
#[command(
    name = "casimir",
    version,
    about = "World-line Monte Carlo for the Casimir piston in a flask"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `mc.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory that relative output paths are resolved against.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the oracle checks and print a pass/fail table.
    Validate(Common),
    /// Scan the piston height and write CSV and JSON results.
    Scan(Common),
    /// Print spectral functions of simple domains.
    Spectral {
        #[command(flatten)]
        common: Common,
        /// `interval:S`, `disk:R`, `box:LXxLYxLZ` or `flask-domain-K` (K = 0..3).
        #[arg(long)]
        domain: String,
        /// Comma-separated proper times.
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        /// Add Monte Carlo estimates.
        #[arg(long)]
        mc: bool,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 4096)]
        n_points: usize,
    },
    /// Parallel-plate bound and asymptotic (-) energy.
    Bound {
        #[command(flatten)]
        common: Common,
        #[arg(long = "r", allow_negative_numbers = true)]
        neck_radius: f64,
        #[arg(long = "R", allow_negative_numbers = true)]
        bulb_radius: f64,
        #[arg(long = "a", allow_negative_numbers = true)]
        piston_height: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    Checks,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing the report to `out`; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let started = Instant::now();
    let result = match &cli.command {
        Command::Validate(c) => cmd_validate(c, out),
        Command::Scan(c) => cmd_scan(c, out),
        Command::Spectral {
            common,
            domain,
            betas,
            mc,
            samples,
            n_points,
        } => cmd_spectral(common, domain, betas, *mc, *samples, *n_points, out),
        Command::Bound {
            neck_radius,
            bulb_radius,
            piston_height,
            ..
        } => cmd_bound(*neck_radius, *bulb_radius, *piston_height, out),
    };
    eprintln!("wall time: {:.3} s", started.elapsed().as_secs_f64());
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Checks) => EXIT_FAILED,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Io(m)) => {
            eprintln!("I/O error: {m}");
            EXIT_IO
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    Ok(RunConfig::from_file(path, c.seed)?)
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::Io(e.to_string()))
}

fn cmd_validate(c: &Common, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    let (seed, n, np) = (cfg.mc.seed, cfg.mc.n_loops, cfg.mc.n_points);
    let results = vec![
        checks::check_bridge(seed, n)?,
        checks::check_theta()?,
        checks::check_disk_bound()?,
        checks::check_box_mc(seed, np, n)?,
        checks::check_weyl(seed)?,
        checks::check_factorization(seed, np, n)?,
        checks::check_hemisphere(seed, np, n, cfg.mc.x_samples_per_beta)?,
    ];
    let mut table = String::new();
    for r in &results {
        let _ = writeln!(
            table,
            "{:<4} {:<22} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(
        table,
        "{} of {} checks passed",
        results.len() - failed,
        results.len()
    );
    emit(out, &table)?;
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn resolve(c: &Common, path: &str) -> PathBuf {
    let p = Path::new(path);
    match &c.out_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

/// One CSV row per height, fields in [`CSV_HEADER`] order.
pub fn csv_rows(estimates: &[EnergyEstimate]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for e in estimates {
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{}",
            e.piston_height,
            e.value,
            e.std_error,
            e.plus_component,
            e.minus_component,
            e.n_plus,
            e.n_minus,
            e.n_null,
            e.tail_warning as u8
        );
    }
    s
}

#[derive(Debug, Serialize)]
struct DoublingRow {
    n_points: usize,
    piston_height: Vec<f64>,
    value: Vec<f64>,
    std_error: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ScanReport<'a> {
    version: &'static str,
    seed: u64,
    config: &'a RunConfig,
    grid: &'a BetaGrid,
    rows: &'a [EnergyEstimate],
    forces: &'a [ForcePoint],
    equilibrium: Option<Equilibrium>,
    doubling_study: Vec<DoublingRow>,
}

struct ScanOutput {
    estimates: Vec<EnergyEstimate>,
    forces: Vec<ForcePoint>,
    equilibrium: Option<Equilibrium>,
}

fn run_scan(
    cfg: &RunConfig,
    sys: &FlaskSystem,
    grid: &BetaGrid,
    n_points: usize,
) -> Result<ScanOutput, Failure> {
    let source = LazyEnsemble::new(cfg.mc.seed, n_points, cfg.mc.n_loops)?;
    let sampling = Sampling {
        seed: cfg.mc.seed,
        x_per_loop: cfg.mc.x_samples_per_beta,
    };
    let kind = cfg.geometry.kind;
    if cfg.a_values.len() >= 3 {
        let s = force_scan(sys, kind, &cfg.a_values, grid, &source, sampling)?;
        Ok(ScanOutput {
            estimates: s.estimates,
            forces: s.forces,
            equilibrium: s.equilibrium,
        })
    } else {
        let estimates = cfg
            .a_values
            .iter()
            .map(|&a| estimate_energy(&sys.with_height(a)?, kind, grid, &source, sampling))
            .collect::<crate::Result<Vec<_>>>()?;
        Ok(ScanOutput {
            estimates,
            forces: Vec::new(),
            equilibrium: None,
        })
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

fn cmd_scan(c: &Common, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    let sys = cfg.system()?;
    let a_max = *cfg.a_values.last().expect("at least one height");
    let grid = cfg
        .grid_policy()
        .grid(sys.bulb_radius, cfg.a_values[0], a_max)?;
    let main = run_scan(&cfg, &sys, &grid, cfg.mc.n_points)?;

    let mut doubling = Vec::new();
    if cfg.mc.doubling_study {
        for n in [cfg.mc.n_points / 2, cfg.mc.n_points, 2 * cfg.mc.n_points] {
            let est = if n == cfg.mc.n_points {
                main.estimates.clone()
            } else {
                run_scan(&cfg, &sys, &grid, n)?.estimates
            };
            doubling.push(DoublingRow {
                n_points: n,
                piston_height: est.iter().map(|e| e.piston_height).collect(),
                value: est.iter().map(|e| e.value).collect(),
                std_error: est.iter().map(|e| e.std_error).collect(),
            });
        }
    }

    let report = ScanReport {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.mc.seed,
        config: &cfg,
        grid: &grid,
        rows: &main.estimates,
        forces: &main.forces,
        equilibrium: main.equilibrium,
        doubling_study: doubling,
    };
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Io(e.to_string()))? + "\n";
    write_file(
        &resolve(c, &cfg.output.csv_path),
        &csv_rows(&main.estimates),
    )?;
    write_file(&resolve(c, &cfg.output.json_path), &json)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>10} {:>14} {:>12} {:>8} {:>8}",
        "a", "E_int", "stderr", "n_plus", "n_minus"
    );
    for e in &main.estimates {
        let _ = writeln!(
            s,
            "{:>10.4} {:>14.6e} {:>12.4e} {:>8} {:>8}{}",
            e.piston_height,
            e.value,
            e.std_error,
            e.n_plus,
            e.n_minus,
            if e.tail_warning { "  tail warning" } else { "" }
        );
    }
    for f in &main.forces {
        let _ = writeln!(
            s,
            "F({:.4}) = {:.6e} ± {:.4e}",
            f.a_mid, f.force, f.std_error
        );
    }
    match &main.equilibrium {
        Some(eq) => {
            let _ = writeln!(
                s,
                "equilibrium bracket: [{:.4}, {:.4}]",
                eq.bracket.0, eq.bracket.1
            );
        }
        None => {
            let _ = writeln!(s, "no equilibrium bracket");
        }
    }
    emit(out, &s)
}

enum DomainSpec {
    Interval(f64),
    Disk(f64),
    Box([f64; 3]),
    Flask(usize),
}

fn parse_domain(spec: &str) -> Result<DomainSpec, Failure> {
    let bad = || {
        Failure::Config(format!(
            "unknown domain `{spec}`; use interval:S, disk:R, box:AxBxC or flask-domain-K"
        ))
    };
    let num = |s: &str| -> Result<f64, Failure> {
        let v: f64 = s.parse().map_err(|_| bad())?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Failure::Config(format!(
                "domain size must be positive, got {s}"
            )))
        }
    };
    if let Some(k) = spec.strip_prefix("flask-domain-") {
        return match k.parse::<usize>() {
            Ok(k) if k < 4 => Ok(DomainSpec::Flask(k)),
            _ => Err(bad()),
        };
    }
    let (kind, arg) = spec.split_once(':').ok_or_else(bad)?;
    match kind {
        "interval" => Ok(DomainSpec::Interval(num(arg)?)),
        "disk" => Ok(DomainSpec::Disk(num(arg)?)),
        "box" => {
            let v = arg.split('x').map(num).collect::<Result<Vec<_>, _>>()?;
            let sides: [f64; 3] = v.try_into().map_err(|_| bad())?;
            Ok(DomainSpec::Box(sides))
        }
        _ => Err(bad()),
    }
}

fn spectral_seed(c: &Common) -> Result<u64, Failure> {
    if let Some(s) = c.seed {
        return Ok(s);
    }
    match &c.config {
        Some(_) => Ok(load_config(c)?.mc.seed),
        None => Err(Failure::Config(
            "Monte Carlo estimates need --seed or --config".into(),
        )),
    }
}

fn cmd_spectral(
    c: &Common,
    domain: &str,
    betas: &[f64],
    mc: bool,
    samples: usize,
    n_points: usize,
    out: &mut dyn std::io::Write,
) -> Result<(), Failure> {
    let spec = parse_domain(domain)?;
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Failure::Config(format!("beta must be positive, got {b}")));
    }
    let mut s = String::new();
    match spec {
        DomainSpec::Interval(len) => {
            for &b in betas {
                let _ = writeln!(
                    s,
                    "interval s={len} beta={b}: eigsum {:.10e} poisson {:.10e}",
                    phi_interval_eigsum(len, b)?,
                    phi_interval_poisson(len, b)?
                );
            }
            if mc {
                let _ = writeln!(s, "(no Monte Carlo estimate for one-dimensional domains)");
            }
        }
        DomainSpec::Disk(r) => {
            for &b in betas {
                let _ = writeln!(
                    s,
                    "disk r={r} beta={b}: eigsum {:.10e} bound {:.10e}",
                    phi_disk_eigsum(r, b)?,
                    r * r / (2.0 * b)
                );
            }
            if mc {
                let _ = writeln!(s, "(no Monte Carlo estimate for two-dimensional domains)");
            }
        }
        DomainSpec::Box(l) => {
            let region = Region::cuboid(Vec3::new(0.0, 0.0, 0.0), Vec3::new(l[0], l[1], l[2]))?;
            let seed = if mc { Some(spectral_seed(c)?) } else { None };
            for &b in betas {
                let oracle = phi_box_eigsum(l[0], l[1], l[2], b)?;
                let _ = write!(
                    s,
                    "box {}x{}x{} beta={b}: oracle {oracle:.10e}",
                    l[0], l[1], l[2]
                );
                if let Some(seed) = seed {
                    let coarse = LazyEnsemble::new(seed, n_points / 2, samples)?;
                    let fine = LazyEnsemble::new(seed, n_points, samples)?;
                    let st = phi_mc_refinement(&region, b, &coarse, &fine, &region, samples, seed)?;
                    let _ = write!(
                        s,
                        " mc(N={n_points}) {:.10e} ± {:.4e} mc(N={}) {:.10e} extrapolated {:.10e} ± {:.4e} ({:+.2} sigma)",
                        st.fine.value,
                        st.fine.std_error,
                        n_points / 2,
                        st.coarse.value,
                        st.extrapolated.value,
                        st.extrapolated.std_error,
                        (st.extrapolated.value - oracle) / st.extrapolated.std_error
                    );
                }
                s.push('\n');
            }
        }
        DomainSpec::Flask(k) => {
            let cfg = load_config(c)?;
            let ds = build_domains_of_kind(&cfg.system()?, DomainKind::Flask)?;
            let seed = cfg.mc.seed;
            let source = LazyEnsemble::new(seed, n_points, samples)?;
            for &b in betas {
                let e = phi_mc(
                    &ds.domains[k],
                    b,
                    &source,
                    &ds.sampling_region,
                    samples,
                    seed,
                )?;
                let _ = writeln!(
                    s,
                    "flask-domain-{k} a={} beta={b}: mc {:.10e} ± {:.4e}",
                    cfg.a_values[0], e.value, e.std_error
                );
            }
        }
    }
    emit(out, &s)
}

fn cmd_bound(r: f64, big_r: f64, a: f64, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    for (name, v) in [("r", r), ("R", big_r), ("a", a)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::Config(format!("{name} must be positive, got {v}")));
        }
    }
    let d = 2.0 * big_r + a;
    let bound = plate_bound(r, d)?;
    let asym = asymptotic_minus_for(r, big_r, a, None)?;
    let mut s = String::new();
    let _ = writeln!(s, "plate separation d = 2R + a = {d}");
    let _ = writeln!(s, "plate bound      {bound:.10e}");
    let _ = writeln!(
        s,
        "asymptotic (-)   {:.10e} (quadrature error {:.1e}{})",
        asym.value,
        asym.error_estimate,
        if asym.in_regime {
            ""
        } else {
            ", outside the thin-neck regime"
        }
    );
    let _ = writeln!(
        s,
        "inside (bound, 0): {}",
        asym.value > bound && asym.value < 0.0
    );
    emit(out, &s)
}
