//! Command-line front end.
//!
//! Every option can also come from a flat `key = value` file passed with
//! `--config`; keys are the long flag names (`_` and `-` are equivalent).
//! Flags given on the command line win over the file.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{self, CaseParams, ErrorNorm, FrankeProblem};
use crate::error::{Error, Result};
use crate::functionals::SubdomainShape;
use crate::geometry::{generate_grid, Rectangle};
use crate::solver::{self, default_sigma0, Method};

/// Environment variable capping assembly worker threads.
pub const THREADS_ENV: &str = "PETROVKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "petrovkit", version, about = "GMLS/DMLPG Poisson solver and Franke benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the Franke problem on one grid and report the maximum nodal error.
    Solve(Options),
    /// Convergence table over a halving list of mesh sizes.
    Converge(Options),
    /// MLPG5 reference vs DMLPG5 on identical grids, with assembly speedups.
    Compare(Options),
    /// Observed order of GMLS recovery of the x-derivative of Franke's function.
    GmlsDerivativeTest(Options),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// dmlpg1 | dmlpg2 | dmlpg5 | mlpg5
    #[arg(long)]
    pub method: Option<String>,
    /// Polynomial degree.
    #[arg(long)]
    pub m: Option<usize>,
    /// Mesh size, or a comma-separated halving list.
    #[arg(long)]
    pub h: Option<String>,
    /// Weight shape factor, c = c0·h.
    #[arg(long)]
    pub c0: Option<f64>,
    /// Weight support factor, δ = δ0·h.
    #[arg(long)]
    pub delta0: Option<f64>,
    /// Subdomain size factor (ball radius or square side over h).
    #[arg(long)]
    pub sigma0: Option<f64>,
    /// circle | square
    #[arg(long)]
    pub shape: Option<String>,
    /// Points per circle or per square edge.
    #[arg(long)]
    pub boundary_points: Option<usize>,
    /// Points per direction for DMLPG1 interior integrals.
    #[arg(long)]
    pub interior_points: Option<usize>,
    /// Points per direction for right-hand-side integrals.
    #[arg(long)]
    pub rhs_points: Option<usize>,
    /// CSV destination (stdout when absent).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// (log10 h, log10 error) pairs destination.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    /// Writes `<prefix>.triplets` and `<prefix>.rhs` (solve only).
    #[arg(long)]
    pub export_system: Option<PathBuf>,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for randomized sample points.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random interior sample points for gmls-derivative-test (nodes when absent).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Assembly worker cap (falls back to PETROVKIT_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Add interior cell-midpoint test nodes (least-squares solve).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub oversample: Option<bool>,
    /// Measure the error on a 4× finer probe grid instead of at nodes.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub probe_error: Option<bool>,
    /// Run cases of a study in parallel (timing columns left empty).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel: Option<bool>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn set<T: std::str::FromStr>(slot: &mut Option<T>, key: &str, value: &str) -> Result<()> {
    if slot.is_none() {
        *slot = Some(parse_value(key, value)?);
    }
    Ok(())
}

impl Options {
    /// Fills options not given on the command line from `key = value` text.
    pub fn merge_config_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim().replace('_', "-");
            let value = value.trim();
            match key.as_str() {
                "method" => set(&mut self.method, &key, value)?,
                "m" => set(&mut self.m, &key, value)?,
                "h" => set(&mut self.h, &key, value)?,
                "c0" => set(&mut self.c0, &key, value)?,
                "delta0" => set(&mut self.delta0, &key, value)?,
                "sigma0" => set(&mut self.sigma0, &key, value)?,
                "shape" => set(&mut self.shape, &key, value)?,
                "boundary-points" => set(&mut self.boundary_points, &key, value)?,
                "interior-points" => set(&mut self.interior_points, &key, value)?,
                "rhs-points" => set(&mut self.rhs_points, &key, value)?,
                "output" => set(&mut self.output, &key, value)?,
                "plot-data" => set(&mut self.plot_data, &key, value)?,
                "export-system" => set(&mut self.export_system, &key, value)?,
                "seed" => set(&mut self.seed, &key, value)?,
                "samples" => set(&mut self.samples, &key, value)?,
                "threads" => set(&mut self.threads, &key, value)?,
                "oversample" => set(&mut self.oversample, &key, value)?,
                "probe-error" => set(&mut self.probe_error, &key, value)?,
                "parallel" => set(&mut self.parallel, &key, value)?,
                other => {
                    return Err(Error::Config(format!(
                        "config line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(())
    }

    fn merge_config_file(&mut self) -> Result<()> {
        if let Some(path) = self.config.clone() {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            self.merge_config_text(&text)?;
        }
        Ok(())
    }
}

/// Options after merging and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub m: usize,
    pub hs: Vec<f64>,
    pub params: CaseParams,
    pub output: Option<PathBuf>,
    pub plot_data: Option<PathBuf>,
    pub export_system: Option<PathBuf>,
    pub seed: u64,
    pub samples: Option<usize>,
    pub parallel: bool,
}

fn parse_h_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let h: f64 = parse_value("h", s)?;
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Config(format!("h must be positive, got {s}")));
            }
            Ok(h)
        })
        .collect()
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn env_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = parse_value(THREADS_ENV, &v)?;
            Ok(Some(n))
        }
        _ => Ok(None),
    }
}

impl RunConfig {
    pub fn resolve(mut opts: Options, default_h: &str) -> Result<Self> {
        opts.merge_config_file()?;
        let method: Method = opts.method.as_deref().unwrap_or("dmlpg5").parse()?;
        let m = opts.m.unwrap_or(2);
        if m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        let hs = parse_h_list(opts.h.as_deref().unwrap_or(default_h))?;
        let mut params = CaseParams::defaults_for(m);
        if let Some(shape) = &opts.shape {
            params.shape = shape.parse::<SubdomainShape>()?;
            params.sigma0 = default_sigma0(params.shape);
        }
        if let Some(c0) = opts.c0 {
            params.c0 = positive("c0", c0)?;
        }
        if let Some(d) = opts.delta0 {
            params.delta0 = positive("delta0", d)?;
        }
        if let Some(s) = opts.sigma0 {
            params.sigma0 = positive("sigma0", s)?;
        }
        for (name, v) in [
            ("boundary-points", opts.boundary_points),
            ("interior-points", opts.interior_points),
            ("rhs-points", opts.rhs_points),
        ] {
            if v == Some(0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        params.quadrature.boundary = opts.boundary_points;
        params.quadrature.interior = opts.interior_points;
        params.quadrature.rhs = opts.rhs_points;
        params.threads = match opts.threads {
            Some(0) => return Err(Error::Config("threads must be positive".into())),
            Some(n) => Some(n),
            None => env_threads()?,
        };
        params.oversample = opts.oversample.unwrap_or(false);
        if opts.probe_error.unwrap_or(false) {
            params.error_norm = ErrorNorm::Probe;
        }
        Ok(Self {
            method,
            m,
            hs,
            params,
            output: opts.output,
            plot_data: opts.plot_data,
            export_system: opts.export_system,
            seed: opts.seed.unwrap_or(0),
            samples: opts.samples,
            parallel: opts.parallel.unwrap_or(false),
        })
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_to(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

/// Runs a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(o) => run_solve(RunConfig::resolve(o, "0.1")?),
        Command::Converge(o) => run_converge(RunConfig::resolve(o, "0.2,0.1,0.05,0.025")?),
        Command::Compare(o) => run_compare(RunConfig::resolve(o, "0.2,0.1,0.05,0.025")?),
        Command::GmlsDerivativeTest(o) => run_derivative_test(RunConfig::resolve(o, "0.1,0.05,0.025")?),
    }
}

fn run_solve(cfg: RunConfig) -> Result<()> {
    let [h] = cfg.hs[..] else {
        return Err(Error::Config(format!("solve takes a single h, got {}", cfg.hs.len())));
    };
    let row = bench::run_case(cfg.method, cfg.m, h, &cfg.params, &FrankeProblem)?;
    if let Some(prefix) = &cfg.export_system {
        let domain = Rectangle::unit_square();
        let nodes = generate_grid(&domain, h)?;
        let problem = solver::DiscreteProblem {
            c0: cfg.params.c0,
            delta0: cfg.params.delta0,
            shape: cfg.params.shape,
            sigma0: cfg.params.sigma0,
            quadrature: cfg.params.quadrature,
            oversample: cfg.params.oversample,
            threads: cfg.params.threads,
            ..solver::DiscreteProblem::new(domain, nodes, cfg.method, cfg.m, &FrankeProblem)
        };
        let system = solver::assemble(&problem)?;
        write_to(&prefix.with_extension("triplets"), |w| system.write_triplets(w))?;
        write_to(&prefix.with_extension("rhs"), |w| system.write_rhs(w))?;
    }
    let report = bench::ConvergenceReport {
        rows: vec![row.clone()],
        quadrature: cfg.params.quadrature.resolve(cfg.method, cfg.params.shape, cfg.m, 2),
    };
    eprintln!(
        "{} m={} h={} N={} max_error={:.6e} assembly_s={:.3} solve_s={:.3}",
        row.method.as_str(),
        row.m,
        row.h,
        row.n,
        row.max_error,
        row.assembly_s.unwrap_or(0.0),
        row.solve_s.unwrap_or(0.0)
    );
    let mut out = open_output(cfg.output.as_deref())?;
    report.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn run_converge(cfg: RunConfig) -> Result<()> {
    let report = bench::convergence_study(cfg.method, cfg.m, &cfg.hs, &cfg.params, &FrankeProblem, cfg.parallel)?;
    for row in &report.rows {
        eprintln!(
            "{} m={} h={} N={} max_error={:.3e} ratio={}",
            row.method.as_str(),
            row.m,
            row.h,
            row.n,
            row.max_error,
            row.ratio.map(|r| format!("{r:.2}")).unwrap_or_else(|| "-".into())
        );
    }
    let mut out = open_output(cfg.output.as_deref())?;
    report.write_csv(&mut out)?;
    out.flush()?;
    if let Some(p) = &cfg.plot_data {
        write_to(p, |w| report.write_plot_data(w))?;
    }
    Ok(())
}

fn run_compare(cfg: RunConfig) -> Result<()> {
    let paired = bench::compare_methods(cfg.m, &cfg.hs, &cfg.params, &FrankeProblem)?;
    for ((r, d), s) in paired.reference.rows.iter().zip(&paired.direct.rows).zip(paired.speedups()) {
        eprintln!(
            "h={} mlpg5 {:.3e} dmlpg5 {:.3e} speedup {}",
            r.h,
            r.max_error,
            d.max_error,
            s.map(|s| format!("{s:.1}")).unwrap_or_else(|| "-".into())
        );
    }
    let mut out = open_output(cfg.output.as_deref())?;
    paired.write_csv(&mut out)?;
    out.flush()?;
    if let Some(p) = &cfg.plot_data {
        write_to(p, |w| paired.write_plot_data(w))?;
    }
    Ok(())
}

fn run_derivative_test(cfg: RunConfig) -> Result<()> {
    let errors = match cfg.samples {
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let points: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]).collect();
            bench::derivative_recovery_errors_at(cfg.m, &cfg.hs, cfg.params.c0, cfg.params.delta0, &points)?
        }
        None => bench::derivative_recovery_errors(cfg.m, &cfg.hs, cfg.params.c0, cfg.params.delta0)?,
    };
    let mut out = open_output(cfg.output.as_deref())?;
    writeln!(out, "m,h,max_error,ratio")?;
    for (i, (h, e)) in cfg.hs.iter().zip(&errors).enumerate() {
        let ratio = if i == 0 {
            String::new()
        } else {
            format!("{:.4}", bench::observed_ratio(errors[i - 1], *e))
        };
        writeln!(out, "{},{h},{e:.6e},{ratio}", cfg.m)?;
    }
    out.flush()?;
    Ok(())
}
