//! `ising`: simulate, scan, benchmark, and verify the checkerboard engine.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ising_core::bench::{scaling_suite, BenchConfig, ScalingMode};
use ising_core::oracle::{exact_moments, verify_suite};
use ising_core::{
    auto_tile, run_scan, Backend, ChainConfig, InitialState, MeshShape, Precision, RunStats, ScanConfig, SpinGrid,
    WorkerMesh, BETA_C, T_C, VERSION,
};

/// Environment variable overriding the worker thread count of scans.
const THREADS_ENV: &str = "ISING_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ising", version, about = "Checkerboard Metropolis for the 2D Ising model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one chain and report moments as JSON.
    Simulate(SimulateArgs),
    /// Run independent chains over temperatures and write CSV.
    Scan(ScanArgs),
    /// Time sweeps over worker meshes and write JSON.
    Bench(BenchArgs),
    /// Run the oracle suite; exits nonzero on any failure.
    Verify,
    /// Exact moments of a small torus by enumeration, as JSON.
    Exact(ExactArgs),
}

#[derive(Args, Debug, Clone)]
struct ChainArgs {
    /// Lattice size, `HxW` or `L`.
    #[arg(long, default_value = "64x64")]
    size: String,
    /// Burn-in sweeps; defaults to a tenth of `--sweeps`.
    #[arg(long)]
    burnin: Option<u64>,
    #[arg(long, default_value = "f32")]
    precision: String,
    #[arg(long, default_value = "compact")]
    backend: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tile side; picked automatically when omitted.
    #[arg(long)]
    tile: Option<usize>,
    /// Initial state, `cold` or `hot`.
    #[arg(long, default_value = "cold")]
    init: String,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Inverse temperature; defaults to the critical value.
    #[arg(long)]
    beta: Option<f64>,
    /// Total sweeps including burn-in.
    #[arg(long, default_value_t = 1_000_000)]
    sweeps: u64,
    /// Worker mesh `PXxPY`.
    #[arg(long, default_value = "1x1")]
    workers: String,
}

#[derive(Args, Debug)]
struct ScanArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Comma-separated absolute temperatures.
    #[arg(long, conflicts_with = "trange")]
    temps: Option<String>,
    /// `lo:hi:step` in units of T/Tc.
    #[arg(long)]
    trange: Option<String>,
    #[arg(long, default_value_t = 1_000_000)]
    sweeps: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Fixed size per worker (weak scaling).
    #[arg(long, conflicts_with = "global")]
    per_worker: Option<String>,
    /// Fixed global size (strong scaling).
    #[arg(long)]
    global: Option<String>,
    #[arg(long, default_value = "weak")]
    mode: String,
    /// Comma-separated meshes, e.g. `1x1,2x2`.
    #[arg(long, default_value = "1x1")]
    meshes: String,
    #[arg(long, default_value = "compact")]
    backend: String,
    #[arg(long, default_value = "f32")]
    precision: String,
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    warmup: u64,
    #[arg(long, default_value_t = 100)]
    timed: u64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Board power in watts; enables the nJ/flip estimate.
    #[arg(long)]
    power_watts: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExactArgs {
    #[arg(long, default_value = "4x4")]
    size: String,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .with_context(|| format!("invalid size '{s}': expected HxW or L"))
    };
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let l = parse(s)?;
            (l, l)
        }
    };
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        bail!("invalid size {h}x{w}: both dimensions must be even and positive");
    }
    Ok((h, w))
}

fn parse_meshes(s: &str) -> Result<Vec<MeshShape>> {
    s.split(',')
        .map(|m| m.trim().parse::<MeshShape>().map_err(anyhow::Error::from))
        .collect()
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid temperature '{t}'"))
        })
        .collect()
}

fn resolve_burnin(burnin: Option<u64>, sweeps: u64) -> Result<u64> {
    let burnin = burnin.unwrap_or(sweeps / 10);
    if burnin >= sweeps {
        bail!("burn-in {burnin} must be smaller than sweeps {sweeps}");
    }
    Ok(burnin)
}

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Resolved chain settings shared by `simulate` and `scan`.
#[derive(Debug, Serialize)]
struct ResolvedChain {
    rows: usize,
    cols: usize,
    tile: usize,
    backend: Backend,
    precision: Precision,
    seed: u64,
    init: InitialState,
    sweeps: u64,
    burn_in: u64,
}

fn resolve_chain(args: &ChainArgs, sweeps: u64, shard: (usize, usize)) -> Result<ResolvedChain> {
    let (rows, cols) = parse_size(&args.size)?;
    let backend: Backend = args.backend.parse()?;
    let tile = match args.tile {
        Some(t) => t,
        None => auto_tile(shard.0.min(rows), shard.1.min(cols), backend)?,
    };
    Ok(ResolvedChain {
        rows,
        cols,
        tile,
        backend,
        precision: args.precision.parse()?,
        seed: args.seed,
        init: args.init.parse()?,
        burn_in: resolve_burnin(args.burnin, sweeps)?,
        sweeps,
    })
}

#[derive(Debug, Serialize)]
struct SimulateOutput {
    version: &'static str,
    command: &'static str,
    config: SimulateConfig,
    results: SimulateResults,
}

#[derive(Debug, Serialize)]
struct SimulateConfig {
    #[serde(flatten)]
    chain: ResolvedChain,
    beta: f64,
    temperature: Option<f64>,
    workers: MeshShape,
}

#[derive(Debug, Serialize)]
struct SimulateResults {
    #[serde(flatten)]
    stats: ising_core::MomentSummary,
    final_energy: f64,
    final_magnetization: f64,
    final_checksum: String,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let workers: MeshShape = args.workers.parse()?;
    let (rows, cols) = parse_size(&args.chain.size)?;
    if rows % workers.px != 0 || cols % workers.py != 0 {
        bail!("size {rows}x{cols} does not split over a {workers} worker mesh");
    }
    let chain = resolve_chain(&args.chain, args.sweeps, (rows / workers.px, cols / workers.py))?;
    let beta = args.beta.unwrap_or(BETA_C);
    let cfg = ChainConfig::new(beta)
        .with_backend(chain.backend)
        .with_precision(chain.precision)
        .with_seed(chain.seed);
    cfg.validate()?;
    let start = chain
        .init
        .build(rows, cols, chain.tile, chain.seed)?
        .with_precision(chain.precision);
    let mut mesh = WorkerMesh::from_lattice(&start, workers, chain.backend, Some(chain.tile))?;
    mesh.run(&cfg, chain.burn_in, |_| {})?;
    let samples = chain.sweeps - chain.burn_in;
    let mut stats = RunStats::for_samples(samples);
    let mut last = None;
    mesh.run(&cfg, samples, |s| {
        stats.push(s.m(), s.energy_per_site());
        last = Some(s);
    })?;
    let last = last.expect("at least one measured sweep");
    let output = SimulateOutput {
        version: VERSION,
        command: "simulate",
        config: SimulateConfig {
            chain,
            beta,
            temperature: (beta > 0.0).then(|| 1.0 / beta),
            workers,
        },
        results: SimulateResults {
            stats: stats.finalize()?,
            final_energy: last.energy,
            final_magnetization: last.magnetization,
            final_checksum: mesh.to_lattice()?.checksum(),
        },
    };
    write_json(&args.chain.out, &output)
}

#[derive(Debug, Serialize)]
struct ScanHeader {
    version: &'static str,
    command: &'static str,
    #[serde(flatten)]
    chain: ResolvedChain,
    temperatures: Vec<f64>,
    threads: usize,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn scan(args: ScanArgs) -> Result<()> {
    let chain = resolve_chain(&args.chain, args.sweeps, (usize::MAX, usize::MAX))?;
    let temps = match (&args.temps, &args.trange) {
        (Some(t), None) => parse_list(t)?,
        (None, Some(r)) => {
            let parts = parse_list(&r.replace(':', ","))
                .with_context(|| format!("invalid range '{r}': expected lo:hi:step"))?;
            if parts.len() != 3 {
                bail!("invalid range '{r}': expected lo:hi:step");
            }
            ising_core::observables::temperature_range(parts[0], parts[1], parts[2])?
        }
        _ => bail!("scan needs either --temps or --trange"),
    };
    let cfg = ScanConfig {
        rows: chain.rows,
        cols: chain.cols,
        tile: Some(chain.tile),
        sweeps: chain.sweeps,
        burn_in: chain.burn_in,
        backend: chain.backend,
        precision: chain.precision,
        seed: chain.seed,
        init: chain.init,
    };
    let rows = run_scan(&temps, &cfg)?;
    let header = ScanHeader {
        version: VERSION,
        command: "scan",
        chain,
        temperatures: temps,
        threads: rayon::current_num_threads(),
    };
    let mut out = open_out(&args.chain.out)?;
    writeln!(out, "# config: {}", serde_json::to_string(&header)?)?;
    writeln!(out, "# T_c: {T_C}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "T",
        "T_over_Tc",
        "m_abs",
        "m_abs_se",
        "m2",
        "m4",
        "binder",
        "binder_se",
        "energy_per_site",
        "n_samples",
    ])?;
    for r in rows {
        let s = r.stats;
        w.write_record([
            r.temperature.to_string(),
            r.t_over_tc.to_string(),
            s.m_abs.to_string(),
            s.m_abs_se.to_string(),
            s.m2.to_string(),
            s.m4.to_string(),
            fmt_opt(s.binder),
            fmt_opt(s.binder_se),
            s.energy_per_site.to_string(),
            s.n_samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchOutput {
    version: &'static str,
    command: &'static str,
    config: BenchConfig,
    report: ising_core::bench::ScalingReport,
}

fn bench(args: BenchArgs) -> Result<()> {
    let mode: ScalingMode = args.mode.parse()?;
    let size = match (mode, &args.per_worker, &args.global) {
        (ScalingMode::Weak, Some(s), None) => parse_size(s)?,
        (ScalingMode::Strong, None, Some(s)) => parse_size(s)?,
        (ScalingMode::Weak, _, _) => bail!("weak scaling needs --per-worker HxW"),
        (ScalingMode::Strong, _, _) => bail!("strong scaling needs --global HxW"),
    };
    let meshes = parse_meshes(&args.meshes)?;
    let base = BenchConfig {
        backend: args.backend.parse()?,
        precision: args.precision.parse()?,
        tile: args.tile,
        beta: args.beta.unwrap_or(BETA_C),
        seed: args.seed,
        warmup: args.warmup,
        timed: args.timed,
        repeats: args.repeats,
        power_watts: args.power_watts,
        ..BenchConfig::new(size.0, size.1)
    };
    base.validate()?;
    let report = scaling_suite(mode, &base, size, &meshes)?;
    write_json(
        &args.out,
        &BenchOutput {
            version: VERSION,
            command: "bench",
            config: base,
            report,
        },
    )
}

fn verify() -> Result<bool> {
    let mut ok = true;
    for c in verify_suite() {
        println!("{} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

#[derive(Debug, Serialize)]
struct ExactOutput {
    #[serde(flatten)]
    moments: ising_core::oracle::ExactMoments,
    binder: Option<f64>,
    version: &'static str,
    generated_by: String,
}

fn exact(args: ExactArgs) -> Result<()> {
    let (rows, cols) = parse_size(&args.size)?;
    let moments = exact_moments(rows, cols, args.beta)?;
    let output = ExactOutput {
        binder: moments.binder(),
        moments,
        version: VERSION,
        generated_by: format!("ising exact --size {rows}x{cols} --beta {}", args.beta),
    };
    write_json(&args.out, &output)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{THREADS_ENV}='{v}' is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate(a)?,
        Command::Scan(a) => scan(a)?,
        Command::Bench(a) => bench(a)?,
        Command::Verify => return verify(),
        Command::Exact(a) => exact(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("4x6").unwrap(), (4, 6));
        assert_eq!(parse_size("8").unwrap(), (8, 8));
        assert!(parse_size("5x4").unwrap_err().to_string().contains("even"));
        assert!(parse_size("ax4").is_err());
    }

    #[test]
    fn burnin_rules() {
        assert_eq!(resolve_burnin(None, 1_000_000).unwrap(), 100_000);
        assert_eq!(resolve_burnin(None, 1).unwrap(), 0);
        assert!(resolve_burnin(Some(10), 10)
            .unwrap_err()
            .to_string()
            .contains("burn-in"));
    }

    #[test]
    fn meshes() {
        assert_eq!(parse_meshes("1x1,2x2").unwrap().len(), 2);
        assert!(parse_meshes("1x1,x").is_err());
    }

    #[test]
    fn cli_definition() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
