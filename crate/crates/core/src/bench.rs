//! Throughput, step time, energy per flip, and weak/strong scaling.

use serde::{Deserialize, Serialize};

use crate::distributed::{MeshShape, WorkerMesh};
use crate::error::{Error, Result};
use crate::lattice::{SpinGrid, SpinLattice};
use crate::mcmc::{auto_tile, Backend, ChainConfig};
use crate::numerics::Precision;
use crate::observables::BETA_C;

/// Flips per nanosecond: `sites * sweeps / ns`.
pub fn throughput(sites: u64, sweeps: u64, ns: u64) -> f64 {
    (sites as f64 * sweeps as f64) / ns as f64
}

/// `power_watts / flips_per_ns`, in nanojoules per flip.
pub fn energy_per_flip(power_watts: f64, flips_per_ns: f64) -> Result<f64> {
    if !(power_watts > 0.0 && power_watts.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "power {power_watts} W must be positive"
        )));
    }
    if !(flips_per_ns > 0.0 && flips_per_ns.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "throughput {flips_per_ns} flips/ns must be positive"
        )));
    }
    Ok(power_watts / flips_per_ns)
}

/// Workers the host can run at once.
pub fn available_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// A published accelerator figure, shown next to local measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub label: String,
    pub flips_per_ns: f64,
    pub nj_per_flip: Option<f64>,
}

/// TPU v3 figures for context; not targets.
pub fn reference_rows() -> Vec<ReferenceRow> {
    let row = |label: &str, f: f64, e: Option<f64>| ReferenceRow {
        label: label.to_string(),
        flips_per_ns: f,
        nj_per_flip: e,
    };
    vec![
        row("TPU v3, 1 core, (640*128)^2 lattice", 12.8783, None),
        row("TPU v3, 1 core, (320*128)^2 lattice, 100 W", 12.9056, Some(7.7486)),
        row("TPU v3, 2 cores, first scaling row, 200 W", 22.8873, Some(8.7385)),
        row("TPU v3, 512 cores", 5853.0, None),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub rows: usize,
    pub cols: usize,
    pub mesh: MeshShape,
    pub backend: Backend,
    pub precision: Precision,
    /// Tile side; `None` picks [`auto_tile`] for the shard size.
    pub tile: Option<usize>,
    pub beta: f64,
    pub seed: u64,
    pub warmup: u64,
    pub timed: u64,
    pub repeats: usize,
    pub power_watts: Option<f64>,
}

impl BenchConfig {
    pub fn new(rows: usize, cols: usize) -> Self {
        BenchConfig {
            rows,
            cols,
            mesh: MeshShape { px: 1, py: 1 },
            backend: Backend::Compact,
            precision: Precision::F32,
            tile: None,
            beta: BETA_C,
            seed: 0,
            warmup: 5,
            timed: 100,
            repeats: 5,
            power_watts: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timed < 10 {
            return Err(Error::InvalidArgument(format!("timed sweeps {} < 10", self.timed)));
        }
        if self.warmup < 1 {
            return Err(Error::InvalidArgument("warmup must be at least 1 sweep".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        Ok(())
    }

    fn chain(&self) -> ChainConfig {
        ChainConfig::new(self.beta)
            .with_backend(self.backend)
            .with_precision(self.precision)
            .with_seed(self.seed)
    }

    fn build_mesh(&self) -> Result<WorkerMesh> {
        let (sr, sc) = (self.rows / self.mesh.px.max(1), self.cols / self.mesh.py.max(1));
        let tile = match self.tile {
            Some(t) => t,
            None => auto_tile(sr, sc, self.backend)?,
        };
        let start = SpinLattice::new(self.rows, self.cols, 2)?.with_precision(self.precision);
        WorkerMesh::from_lattice(&start, self.mesh, self.backend, Some(tile))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

fn median_u64(v: &[u64]) -> u64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: usize,
    pub cols: usize,
    pub sites: u64,
    pub mesh: String,
    pub workers: usize,
    pub oversubscribed: bool,
    pub backend: Backend,
    pub precision: Precision,
    pub tile: usize,
    pub beta: f64,
    pub seed: u64,
    pub warmup_sweeps: u64,
    pub timed_sweeps: u64,
    pub repeats: usize,
    /// Wall time of the timed sweeps in each repeat.
    pub wall_ns: Vec<u64>,
    pub median_wall_ns: u64,
    /// Time of one whole-lattice update, in milliseconds.
    pub step_time_ms: Spread,
    pub flips_per_ns: f64,
    pub power_watts: Option<f64>,
    pub nj_per_flip: Option<f64>,
    /// Checksum of the final lattice after warmup and timed sweeps.
    pub checksum: String,
    pub reference: Vec<ReferenceRow>,
}

impl BenchReport {
    /// Recomputes the throughput from the recorded counts.
    pub fn check_identity(&self) -> bool {
        self.flips_per_ns == throughput(self.sites, self.timed_sweeps, self.median_wall_ns)
            && self.step_time_ms.median == self.median_wall_ns as f64 / self.timed_sweeps as f64 / 1e6
    }
}

/// Times `cfg.timed` sweeps after `cfg.warmup`, `cfg.repeats` times, each
/// from the same cold start and seed.
pub fn measure_throughput(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let chain = cfg.chain();
    let mut wall_ns = Vec::with_capacity(cfg.repeats);
    let mut checksum = String::new();
    let mut tile = 0;
    for _ in 0..cfg.repeats {
        let mut mesh = cfg.build_mesh()?;
        tile = mesh.tile();
        mesh.run(&chain, cfg.warmup, |_| {})?;
        let run = mesh.run(&chain, cfg.timed, |_| {})?;
        wall_ns.push((run.elapsed.as_nanos() as u64).max(1));
        let sum = mesh.to_lattice()?.checksum();
        if !checksum.is_empty() && checksum != sum {
            return Err(Error::InvalidArgument("repeats ended in different states".into()));
        }
        checksum = sum;
    }
    let sites = (cfg.rows * cfg.cols) as u64;
    let median = median_u64(&wall_ns);
    let per_step = |ns: u64| ns as f64 / cfg.timed as f64 / 1e6;
    let flips_per_ns = throughput(sites, cfg.timed, median);
    let nj_per_flip = cfg.power_watts.map(|p| energy_per_flip(p, flips_per_ns)).transpose()?;
    Ok(BenchReport {
        rows: cfg.rows,
        cols: cfg.cols,
        sites,
        mesh: cfg.mesh.to_string(),
        workers: cfg.mesh.workers(),
        oversubscribed: cfg.mesh.workers() > available_workers(),
        backend: cfg.backend,
        precision: cfg.precision,
        tile,
        beta: cfg.beta,
        seed: cfg.seed,
        warmup_sweeps: cfg.warmup,
        timed_sweeps: cfg.timed,
        repeats: cfg.repeats,
        step_time_ms: Spread {
            median: per_step(median),
            min: per_step(*wall_ns.iter().min().expect("repeats >= 1")),
            max: per_step(*wall_ns.iter().max().expect("repeats >= 1")),
        },
        wall_ns,
        median_wall_ns: median,
        flips_per_ns,
        power_watts: cfg.power_watts,
        nj_per_flip,
        checksum,
        reference: reference_rows(),
    })
}

/// Final checksum of the benchmark workload run without timing.
pub fn untimed_checksum(cfg: &BenchConfig) -> Result<String> {
    let mut mesh = cfg.build_mesh()?;
    mesh.run(&cfg.chain(), cfg.warmup + cfg.timed, |_| {})?;
    Ok(mesh.to_lattice()?.checksum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    /// Fixed size per worker.
    Weak,
    /// Fixed global size.
    Strong,
}

impl std::str::FromStr for ScalingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(ScalingMode::Weak),
            "strong" => Ok(ScalingMode::Strong),
            other => Err(Error::InvalidArgument(format!("unknown scaling mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub mesh: String,
    pub workers: usize,
    pub rows: usize,
    pub cols: usize,
    pub step_time_ms: f64,
    pub flips_per_ns: f64,
    /// Weak: `t(1) / t(P)`. Strong: `t(1) / (P t(P))`.
    pub efficiency: f64,
    pub oversubscribed: bool,
    pub report: BenchReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub mode: ScalingMode,
    /// Per-worker size (weak) or global size (strong).
    pub size: (usize, usize),
    pub available_workers: usize,
    pub rows: Vec<ScalingRow>,
}

/// Benchmarks every mesh in `meshes`. `size` is the per-worker size in weak
/// mode and the global size in strong mode. The single-worker baseline is
/// measured even when `1x1` is not listed.
pub fn scaling_suite(
    mode: ScalingMode,
    base: &BenchConfig,
    size: (usize, usize),
    meshes: &[MeshShape],
) -> Result<ScalingReport> {
    if meshes.is_empty() {
        return Err(Error::InvalidArgument("no meshes given".into()));
    }
    let config_for = |m: MeshShape| {
        let (rows, cols) = match mode {
            ScalingMode::Weak => (size.0 * m.px, size.1 * m.py),
            ScalingMode::Strong => (size.0, size.1),
        };
        BenchConfig {
            rows,
            cols,
            mesh: m,
            ..*base
        }
    };
    let single = MeshShape { px: 1, py: 1 };
    let mut reports: Vec<(MeshShape, BenchReport)> = Vec::new();
    for &m in meshes {
        reports.push((m, measure_throughput(&config_for(m))?));
    }
    let t1 = match reports.iter().find(|(m, _)| *m == single) {
        Some((_, r)) => r.step_time_ms.median,
        None => measure_throughput(&config_for(single))?.step_time_ms.median,
    };
    let rows = reports
        .into_iter()
        .map(|(m, r)| {
            let tp = r.step_time_ms.median;
            let efficiency = match mode {
                ScalingMode::Weak => t1 / tp,
                ScalingMode::Strong => t1 / (m.workers() as f64 * tp),
            };
            ScalingRow {
                mesh: m.to_string(),
                workers: m.workers(),
                rows: r.rows,
                cols: r.cols,
                step_time_ms: tp,
                flips_per_ns: r.flips_per_ns,
                efficiency,
                oversubscribed: r.oversubscribed,
                report: r,
            }
        })
        .collect();
    Ok(ScalingReport {
        mode,
        size,
        available_workers: available_workers(),
        rows,
    })
}
