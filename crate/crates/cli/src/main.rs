//! `dlet`: wavelet decomposition, PDE solves, diffusionlet caches, uncertainty fields and
//! validation suites from the command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use diffusionlet::diffusionlets::{
    build_cache, load_cache, reconstruct_counted, save_cache, time_scale, truncated_reconstruct, CacheGrid, CacheMode,
    DiffusionletCache, ExactRanges,
};
use diffusionlet::error_structure::{covariance_solution, variance_field, ErrorStructureSpec};
use diffusionlet::io::{read_xy_csv, write_csv};
use diffusionlet::pde::{self, PdeSpec};
use diffusionlet::presets::Terminal;
use diffusionlet::validation::{run_suite, SUITES};
use diffusionlet::wavelets::{
    daubechies_filter, fwt_decompose, fwt_reconstruct, sample_dyadic, Scale, WaveletBasis, WaveletExpansion,
    EXPANSION_SCHEMA,
};
use diffusionlet::{Error, Result};

use config::Resolver;

#[derive(Parser, Debug)]
#[command(name = "dlet", version, about = "Wavelet diffusionlets and coefficient-level uncertainty propagation")]
struct Cli {
    /// Plain-text `key = value` file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Father and mother wavelet samples and the filter report.
    Basis(BasisArgs),
    /// Wavelet expansion of a terminal condition.
    Decompose(DecomposeArgs),
    /// Finite-difference solve of the backward equation.
    Solve(SolveArgs),
    /// Build and store a diffusionlet cache.
    Cache(CacheArgs),
    /// Solution from an expansion via diffusionlets.
    Reconstruct(FieldArgs),
    /// Variance field of the solution under the coefficient error structure.
    Variance(FieldArgs),
    /// Covariance between all pairs of grid points.
    Covariance(FieldArgs),
    /// Run a validation suite (or `all`).
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct BasisArgs {
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    resolution: Option<u32>,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// Preset (`gaussian_bump(c,w)`, `call_payoff(K)`, `indicator(a,b)`, `constant(v)`) or an `x,value` CSV path.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    order: Option<usize>,
    /// Detail levels; samples are taken with spacing `2^-levels`.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    origin: Option<i64>,
    #[arg(long)]
    length: Option<usize>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    input: Option<String>,
    /// `cev` (`dX = r X dt + sigma X^lambda dW`) or `cir` (`dX = -b X dt + sigma sqrt(X) dW`).
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x_hi: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    /// Time steps up to the last output time.
    #[arg(long)]
    nt: Option<usize>,
    /// Comma-separated output times.
    #[arg(long)]
    taus: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
}

#[derive(Args, Debug)]
struct CacheArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    tau_max: Option<f64>,
    /// Grid spacing `2^-resolution`.
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long)]
    mode: Option<String>,
    /// Expansion JSON whose index ranges are solved directly in exact mode.
    #[arg(long)]
    expansion: Option<PathBuf>,
    /// Query times kept in exact mode.
    #[arg(long)]
    taus: Option<String>,
}

#[derive(Args, Debug)]
struct FieldArgs {
    #[arg(long)]
    expansion: Option<PathBuf>,
    /// Stored cache; built on the fly from `--lambda/--sigma/--resolution` when absent.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long)]
    taus: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    x_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x_hi: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    /// Truncation threshold for `reconstruct`.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Weight scale: `gamma(k) = c`, `gamma(i,k) = c 2^{-eta i}`.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Suite name or `all`.
    #[arg(long)]
    suite: Option<String>,
}

struct Run {
    cfg: Resolver,
    seed: u64,
    out: PathBuf,
    format: Format,
    started: Instant,
}

enum Outcome {
    Done,
    ChecksFailed,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn csv<R: AsRef<[f64]>>(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<String> {
        let file = std::fs::File::create(self.path(name))?;
        write_csv(std::io::BufWriter::new(file), header, rows)?;
        Ok(name.to_string())
    }

    /// Writes `<command>.json` with schema, resolved config, results and timing.
    fn finish(self, command: &str, results: Value) -> Result<PathBuf> {
        let mut config = serde_json::Map::new();
        for (k, v) in self.cfg.into_resolved() {
            config.insert(k, Value::String(v));
        }
        config.insert("seed".into(), json!(self.seed));
        config.insert("format".into(), json!(self.format.to_string()));
        let doc = json!({
            "schema": EXPANSION_SCHEMA,
            "command": command,
            "config": config,
            "results": results,
            "timing": { "wall_seconds": self.started.elapsed().as_secs_f64() },
        });
        let path = self.out.join(format!("{command}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(path)
    }
}

fn terminal_from(input: &str) -> Result<Terminal> {
    if input.ends_with(".csv") || Path::new(input).is_file() {
        Terminal::from_points(read_xy_csv(std::fs::File::open(input)?)?)
    } else {
        input.parse()
    }
}

fn read_expansion(path: &Path) -> Result<WaveletExpansion> {
    WaveletExpansion::from_json(&std::fs::read_to_string(path)?)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn cmd_basis(mut run: Run, args: BasisArgs) -> Result<PathBuf> {
    let order = run.cfg.get("order", args.order, 4)?;
    let resolution = run.cfg.get("resolution", args.resolution, 10)?;
    let basis = WaveletBasis::new(order, resolution)?;
    let residuals = basis.filter.residuals();
    let mut results = json!({
        "order": order,
        "resolution": resolution,
        "support": [0, basis.support_len()],
        "lowpass": basis.filter.h,
        "highpass": basis.filter.g,
        "residuals": residuals,
        "max_residual": residuals.max(),
    });
    match run.format {
        Format::Csv => {
            results["files"] = json!([
                run.csv("father.csv", &["x", "value"], basis.father.rows().map(|(x, v)| [x, v]))?,
                run.csv("mother.csv", &["x", "value"], basis.mother.rows().map(|(x, v)| [x, v]))?,
            ]);
        }
        Format::Json => {
            results["father"] = json!(basis.father.rows().collect::<Vec<_>>());
            results["mother"] = json!(basis.mother.rows().collect::<Vec<_>>());
        }
    }
    run.finish("basis", results)
}

fn cmd_decompose(mut run: Run, args: DecomposeArgs) -> Result<PathBuf> {
    let input: String = run.cfg.require("input", args.input)?;
    let order = run.cfg.get("order", args.order, 4)?;
    let levels = run.cfg.get("levels", args.levels, 3)?;
    let origin = run.cfg.get("origin", args.origin, 0)?;
    let length = run.cfg.get("length", args.length, 16)?;
    let terminal = terminal_from(&input)?;
    let filter = daubechies_filter(order)?;
    let samples = sample_dyadic(|x| terminal.eval(x), origin, length, levels);
    let expansion = fwt_decompose(&samples, origin, &filter, levels)?;
    let back = fwt_reconstruct(&expansion, &filter, samples.len())?;
    std::fs::write(run.path("expansion.json"), expansion.to_json()?)?;

    let detail_peaks: Vec<Value> = expansion
        .terms()
        .filter(|t| matches!(t.scale, Scale::Mother(_)))
        .fold(Vec::<(u32, i64, f64)>::new(), |mut acc, t| {
            let Scale::Mother(i) = t.scale else { unreachable!() };
            match acc.get_mut(i as usize) {
                Some(entry) if entry.2 >= t.coef.abs() => {}
                Some(entry) => *entry = (i, t.k, t.coef.abs()),
                None => acc.push((i, t.k, t.coef.abs())),
            }
            acc
        })
        .into_iter()
        .map(|(i, k, v)| json!({ "level": i, "k": k, "x": k as f64 / (i as f64).exp2(), "abs_beta": v }))
        .collect();
    let results = json!({
        "terminal": terminal.to_string(),
        "expansion_file": "expansion.json",
        "samples": samples.len(),
        "terms": expansion.term_count(),
        "energy": expansion.energy(),
        "round_trip_max_error": max_abs_diff(&samples, &back),
        "max_abs_beta": expansion.beta.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())),
        "detail_peaks": detail_peaks,
    });
    run.finish("decompose", results)
}

fn cmd_solve(mut run: Run, args: SolveArgs) -> Result<PathBuf> {
    let input: String = run.cfg.require("input", args.input)?;
    let model: String = run.cfg.get("model", args.model, "cev".to_string())?;
    let sigma = run.cfg.get("sigma", args.sigma, 1.0)?;
    let x_lo = run.cfg.get("x-lo", args.x_lo, -8.0)?;
    let x_hi = run.cfg.get("x-hi", args.x_hi, 8.0)?;
    let nx = run.cfg.get("nx", args.nx, 1025)?;
    let nt = run.cfg.get("nt", args.nt, 512)?;
    let theta = run.cfg.get("theta", args.theta, 0.5)?;
    let mut taus = run.cfg.list("taus", args.taus, "1")?;
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let horizon = *taus.last().ok_or_else(|| Error::InvalidParameter("no output times".into()))?;
    let spec = match model.as_str() {
        "cev" => {
            let lambda = run.cfg.get("lambda", args.lambda, 0.0)?;
            let r = run.cfg.get("r", args.r, 0.0)?;
            PdeSpec::cev(lambda, sigma, r, (x_lo, x_hi), horizon)
        }
        "cir" => {
            let b = run.cfg.get("b", args.b, 0.5)?;
            PdeSpec::cir(b, sigma, (x_lo, x_hi), horizon)
        }
        other => return Err(Error::InvalidParameter(format!("unknown model {other:?}; expected cev or cir"))),
    };
    let terminal = terminal_from(&input)?;
    let xs = pde::uniform_grid(spec.domain, nx);
    let values: Vec<f64> = xs.iter().map(|&x| terminal.eval(x)).collect();
    let outputs: Vec<f64> = taus.iter().copied().filter(|&t| t > 0.0).collect();
    let solution = if outputs.is_empty() {
        pde::GridSolution {
            tau_grid: vec![0.0],
            x_grid: xs,
            values: vec![values],
        }
    } else {
        pde::solve_at_times(&spec, &values, nx, &outputs, horizon / nt as f64, theta, 0)?
    };
    let mut results = json!({
        "terminal": terminal.to_string(),
        "tau_grid": solution.tau_grid,
        "nodes": nx,
    });
    match run.format {
        Format::Csv => {
            results["files"] =
                json!([run.csv("solution.csv", &["tau", "x", "value"], solution.rows().map(|(t, x, v)| [t, x, v]))?])
        }
        Format::Json => results["solution"] = json!(solution),
    }
    run.finish("solve", results)
}

fn parse_mode(mode: &str) -> Result<bool> {
    match mode {
        "fast" => Ok(false),
        "exact" => Ok(true),
        other => Err(Error::InvalidParameter(format!("unknown mode {other:?}; expected fast or exact"))),
    }
}

fn cmd_cache(mut run: Run, args: CacheArgs) -> Result<PathBuf> {
    let lambda = run.cfg.get("lambda", args.lambda, 0.0)?;
    let sigma = run.cfg.get("sigma", args.sigma, 1.0)?;
    let order = run.cfg.get("order", args.order, 4)?;
    let tau_max = run.cfg.get("tau-max", args.tau_max, 1.0)?;
    let resolution = run.cfg.get("resolution", args.resolution, 7)?;
    let mode: String = run.cfg.get("mode", args.mode, "fast".to_string())?;
    let mode = if parse_mode(&mode)? {
        let path: String = run.cfg.require("expansion", args.expansion.map(|p| p.display().to_string()))?;
        let taus = run.cfg.list("taus", args.taus, "")?;
        CacheMode::Exact(ExactRanges::covering(&read_expansion(Path::new(&path))?, taus))
    } else {
        CacheMode::Fast
    };
    let basis = WaveletBasis::new(order, resolution.max(10))?;
    let grid = CacheGrid::covering(lambda, sigma, order, tau_max, resolution);
    let cache = build_cache(lambda, sigma, &basis, tau_max, &grid, mode)?;
    save_cache(&cache, run.path("cache.bin"))?;
    let results = json!({
        "cache_file": "cache.bin",
        "grid": cache.grid,
        "nodes": cache.grid.nodes(),
        "tau_max": cache.tau_max,
        "snapshots": cache.tau_snapshots().len(),
        "exact_surfaces": cache.exact_surfaces.len(),
    });
    run.finish("cache", results)
}

struct Field {
    expansion: WaveletExpansion,
    cache: DiffusionletCache,
    taus: Vec<f64>,
    xs: Vec<f64>,
}

fn field_setup(run: &mut Run, args: &FieldArgs) -> Result<Field> {
    let path: String = run.cfg.require("expansion", args.expansion.as_ref().map(|p| p.display().to_string()))?;
    let expansion = read_expansion(Path::new(&path))?;
    let taus = run.cfg.list("taus", args.taus.clone(), "0")?;
    if taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidParameter("times must be >= 0".into()));
    }
    let (d0, d1) = expansion.domain();
    let x_lo = run.cfg.get("x-lo", args.x_lo, d0)?;
    let x_hi = run.cfg.get("x-hi", args.x_hi, d1)?;
    let nx = run.cfg.get("nx", args.nx, 129)?;
    let cache = match run.cfg.optional::<String>("cache", args.cache.as_ref().map(|p| p.display().to_string()))? {
        Some(p) => load_cache(p)?,
        None => {
            let lambda = run.cfg.get("lambda", args.lambda, 0.0)?;
            let sigma = run.cfg.get("sigma", args.sigma, 1.0)?;
            let resolution = run.cfg.get("resolution", args.resolution, 7)?;
            let finest = expansion.levels.saturating_sub(1) as u32;
            let longest = taus.iter().copied().fold(0.0, f64::max);
            let tau_max = (longest * time_scale(lambda, finest)).max(1e-3);
            let basis = WaveletBasis::new(expansion.order, resolution.max(10))?;
            let grid = CacheGrid::covering(lambda, sigma, expansion.order, tau_max, resolution);
            build_cache(lambda, sigma, &basis, tau_max, &grid, CacheMode::Fast)?
        }
    };
    Ok(Field {
        expansion,
        cache,
        taus,
        xs: pde::uniform_grid((x_lo, x_hi), nx),
    })
}

fn error_spec(run: &mut Run, args: &FieldArgs) -> Result<ErrorStructureSpec> {
    let c = run.cfg.get("c", args.c, 1.0)?;
    let eta = run.cfg.get("eta", args.eta, 0.0)?;
    ErrorStructureSpec::proportional(c, eta)
}

fn cmd_reconstruct(mut run: Run, args: FieldArgs) -> Result<PathBuf> {
    let f = field_setup(&mut run, &args)?;
    let epsilon = run.cfg.optional("epsilon", args.epsilon)?;
    let mut rows = Vec::new();
    let mut most_terms = 0usize;
    for &tau in &f.taus {
        for &x in &f.xs {
            let (value, used) = match epsilon {
                Some(eps) => truncated_reconstruct(&f.cache, &f.expansion, eps, tau, x)?,
                None => reconstruct_counted(&f.cache, &f.expansion, tau, x)?,
            };
            most_terms = most_terms.max(used);
            rows.push([tau, x, value]);
        }
    }
    let mut results = json!({ "terms": f.expansion.term_count(), "max_terms_used": most_terms });
    match run.format {
        Format::Csv => results["files"] = json!([run.csv("reconstruction.csv", &["tau", "x", "value"], &rows)?]),
        Format::Json => results["values"] = json!(rows),
    }
    run.finish("reconstruct", results)
}

fn cmd_variance(mut run: Run, args: FieldArgs) -> Result<PathBuf> {
    let f = field_setup(&mut run, &args)?;
    let spec = error_spec(&mut run, &args)?;
    let field = variance_field(&f.cache, &f.expansion, &spec, &f.taus, &f.xs)?;
    let peak = field.values.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    let mut results = json!({ "max_variance": peak });
    match run.format {
        Format::Csv => {
            results["files"] =
                json!([run.csv("variance.csv", &["tau", "x", "variance"], field.rows().map(|(t, x, v)| [t, x, v]))?])
        }
        Format::Json => results["field"] = json!(field),
    }
    run.finish("variance", results)
}

fn cmd_covariance(mut run: Run, args: FieldArgs) -> Result<PathBuf> {
    let f = field_setup(&mut run, &args)?;
    let spec = error_spec(&mut run, &args)?;
    let points: Vec<(f64, f64)> = f.taus.iter().flat_map(|&t| f.xs.iter().map(move |&x| (t, x))).collect();
    let mut rows = Vec::with_capacity(points.len() * points.len());
    for &p in &points {
        for &q in &points {
            rows.push([p.0, p.1, q.0, q.1, covariance_solution(&f.cache, &f.expansion, &spec, p, q)?]);
        }
    }
    let mut results = json!({ "points": points.len() });
    match run.format {
        Format::Csv => {
            results["files"] = json!([run.csv("covariance.csv", &["tau1", "x1", "tau2", "x2", "cov"], &rows)?])
        }
        Format::Json => results["covariance"] = json!(rows),
    }
    run.finish("covariance", results)
}

fn cmd_validate(mut run: Run, args: ValidateArgs) -> Result<(PathBuf, bool)> {
    let suite: String = run.cfg.require("suite", args.suite)?;
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite.as_str()] };
    let mut reports = Vec::new();
    for name in names {
        let report = run_suite(name, run.seed)?;
        eprintln!("{}: {}", report.suite, if report.passed { "pass" } else { "FAIL" });
        reports.push(report);
    }
    let passed = reports.iter().all(|r| r.passed);
    let path = run.finish("validate", json!({ "passed": passed, "suites": reports }))?;
    Ok((path, passed))
}

fn execute(cli: Cli) -> Result<Outcome> {
    let mut cfg = Resolver::from_file(cli.config.as_deref())?;
    let seed = cfg.get("seed", cli.seed, 0u64)?;
    let out = PathBuf::from(cfg.get("out", cli.out.map(|p| p.display().to_string()), ".".to_string())?);
    let format = cfg.get("format", cli.format, Format::Json)?;
    std::fs::create_dir_all(&out)?;
    let run = Run {
        cfg,
        seed,
        out,
        format,
        started: Instant::now(),
    };
    let (path, passed) = match cli.command {
        Command::Basis(a) => (cmd_basis(run, a)?, true),
        Command::Decompose(a) => (cmd_decompose(run, a)?, true),
        Command::Solve(a) => (cmd_solve(run, a)?, true),
        Command::Cache(a) => (cmd_cache(run, a)?, true),
        Command::Reconstruct(a) => (cmd_reconstruct(run, a)?, true),
        Command::Variance(a) => (cmd_variance(run, a)?, true),
        Command::Covariance(a) => (cmd_covariance(run, a)?, true),
        Command::Validate(a) => cmd_validate(run, a)?,
    };
    println!("{}", path.display());
    Ok(if passed { Outcome::Done } else { Outcome::ChecksFailed })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Parse(_) | Error::InvalidParameter(_) | Error::UnsupportedOrder { .. } => 2,
                _ => 1,
            })
        }
    }
}
