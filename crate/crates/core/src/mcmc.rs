//! Checkerboard Metropolis updates.
//!
//! One color phase flips each site `i` of that color iff `u_i < exp(-2 beta
//! s_i nn_i)`, where `u_i` is the site's draw from [`crate::rng`]. Three
//! backends compute `nn`: the full-tile matmul with a color mask (`Naive`),
//! matmuls on the compact sub-lattices (`Compact`), and a direct stencil on
//! the compact sub-lattices (`Conv`). All three are bit-identical.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    build_kernels, compact_merge, compact_split, Color, CompactState, HaloSet, KernelSet, SpinGrid, SpinLattice,
    SubGrid,
};
use crate::numerics::{compact_tile_nn, naive_tile_nn, NnScratch, Precision, SumMethod};
use crate::rng::{fill_uniform, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Naive,
    #[default]
    Compact,
    Conv,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Naive, Backend::Compact, Backend::Conv];

    /// Required divisor of every shard dimension for tile side `tile`.
    pub fn granularity(self, tile: usize) -> usize {
        match self {
            Backend::Naive => tile,
            Backend::Compact | Backend::Conv => 2 * tile,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Naive => "naive",
            Backend::Compact => "compact",
            Backend::Conv => "conv",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Backend::Naive),
            "compact" => Ok(Backend::Compact),
            "conv" => Ok(Backend::Conv),
            other => Err(Error::InvalidArgument(format!(
                "unknown backend '{other}' (expected naive, compact or conv)"
            ))),
        }
    }
}

/// Largest even tile side `<= 128` that lets `backend` tile a
/// `rows x cols` shard.
pub fn auto_tile(rows: usize, cols: usize, backend: Backend) -> Result<usize> {
    (1..=64)
        .rev()
        .map(|h| 2 * h)
        .find(|&b| {
            let g = backend.granularity(b);
            rows.is_multiple_of(g) && cols.is_multiple_of(g)
        })
        .ok_or(Error::InvalidSize {
            rows,
            cols,
            reason: "no even tile side fits this backend",
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub beta: f64,
    pub precision: Precision,
    pub backend: Backend,
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(beta: f64) -> Self {
        ChainConfig {
            beta,
            precision: Precision::F32,
            backend: Backend::Compact,
            seed: 0,
        }
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidBeta(self.beta));
        }
        Ok(())
    }
}

/// `exp(-2 beta x)` for `x = s * nn` in `{-4, -2, 0, 2, 4}`, computed in
/// 32-bit and rounded to `precision`.
pub fn acceptance_table(beta: f64, precision: Precision) -> [f32; 5] {
    let b = beta as f32;
    [-4.0f32, -2.0, 0.0, 2.0, 4.0].map(|x| precision.round((-2.0 * b * x).exp()))
}

/// `table[(x + 4) / 2]` for `x` in `{-4, -2, 0, 2, 4}`, written as selects.
#[inline(always)]
fn accept_ratio(x: f32, table: &[f32; 5]) -> f32 {
    let lo = if x < -3.0 { table[0] } else { table[1] };
    let mid = if x < -1.0 { lo } else { table[2] };
    let hi = if x > 3.0 { table[4] } else { table[3] };
    if x > 1.0 {
        hi
    } else {
        mid
    }
}

/// Totals over the sites updated in one color phase, after flipping.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseSummary {
    /// `-sum s_i nn_i`. Every bond has exactly one endpoint of each color, so
    /// this is the full lattice energy at the end of the phase.
    pub bond_energy: f64,
    /// Sum of the updated spins.
    pub magnetization: f64,
    pub flips: u64,
}

impl PhaseSummary {
    pub fn merge(self, other: PhaseSummary) -> PhaseSummary {
        PhaseSummary {
            bond_energy: self.bond_energy + other.bond_energy,
            magnetization: self.magnetization + other.magnetization,
            flips: self.flips + other.flips,
        }
    }
}

/// Everything an update needs besides the spins and halos.
#[derive(Debug, Clone, Copy)]
pub struct PhaseContext {
    pub seed: u64,
    pub step: u64,
    pub color: Color,
    /// Global coordinates of the shard's `(0, 0)` site; both even.
    pub origin: (usize, usize),
    pub global_cols: usize,
    pub precision: Precision,
    pub table: [f32; 5],
}

impl PhaseContext {
    pub fn single(cfg: &ChainConfig, step: u64, color: Color, global_cols: usize) -> Self {
        PhaseContext {
            seed: cfg.seed,
            step,
            color,
            origin: (0, 0),
            global_cols,
            precision: cfg.precision,
            table: acceptance_table(cfg.beta, cfg.precision),
        }
    }

    #[inline]
    fn draws(&self, row_parity: usize, start: usize, out: &mut [f32]) {
        let key = StreamKey::new(self.seed, self.step, self.color, row_parity as u8);
        fill_uniform(&key, start as u64, out);
        if self.precision == Precision::Bf16 {
            crate::numerics::quantize_slice(out);
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct UpdateScratch {
    nn: Vec<f32>,
    draws: Vec<f32>,
    inner: NnScratch,
}

/// Flips one row of `spins` against its draws; returns the row totals.
#[inline]
fn flip_row(spins: &mut [f32], nn: &[f32], draws: &[f32], table: &[f32; 5]) -> (f32, f32, u32) {
    const W: usize = 8;
    let (mut e, mut m, mut f) = ([0.0f32; W], [0.0f32; W], [0u32; W]);
    let n = spins.len().min(nn.len()).min(draws.len());
    let (spins, nn, draws) = (&mut spins[..n], &nn[..n], &draws[..n]);
    let mut chunks = spins.chunks_exact_mut(W);
    let mut nn_c = nn.chunks_exact(W);
    let mut u_c = draws.chunks_exact(W);
    for ((s, nv), u) in (&mut chunks).zip(&mut nn_c).zip(&mut u_c) {
        for i in 0..W {
            let x = s[i] * nv[i];
            let flip = u[i] < accept_ratio(x, table);
            s[i] = if flip { -s[i] } else { s[i] };
            f[i] += flip as u32;
            e[i] += s[i] * nv[i];
            m[i] += s[i];
        }
    }
    for ((s, &nv), &u) in chunks
        .into_remainder()
        .iter_mut()
        .zip(nn_c.remainder())
        .zip(u_c.remainder())
    {
        let flip = u < accept_ratio(*s * nv, table);
        if flip {
            *s = -*s;
        }
        f[0] += flip as u32;
        e[0] += *s * nv;
        m[0] += *s;
    }
    // Partial sums are small integers, so the order does not matter.
    (e.iter().sum(), m.iter().sum(), f.iter().sum())
}

/// One color phase on a tiled lattice: full-tile neighbor sums, then flips
/// restricted to `ctx.color` by the checkerboard mask.
pub fn update_naive_in(
    lattice: &mut SpinLattice,
    halos: &HaloSet,
    ctx: &PhaseContext,
    kernels: &KernelSet,
    scratch: &mut UpdateScratch,
) -> Result<PhaseSummary> {
    halos.check_shape(lattice.rows(), lattice.cols())?;
    let b = lattice.tile();
    let bb = b * b;
    let (m, n) = lattice.tile_grid();
    scratch.nn.resize(bb, 0.0);
    scratch.draws.resize(b, 0.0);
    let mut probs = vec![1.0f32; b];
    let mask_on = match ctx.color {
        Color::Black => 1.0,
        Color::White => 0.0,
    };
    let half_cols = ctx.global_cols / 2;
    let mut summary = PhaseSummary::default();
    for ti in 0..m {
        for tj in 0..n {
            naive_tile_nn(
                lattice,
                ti,
                tj,
                halos,
                kernels,
                ctx.precision,
                &mut scratch.nn,
                &mut scratch.inner,
            );
            let tile = lattice.tile_block_mut(ti, tj);
            for a in 0..b {
                let gr = ctx.origin.0 + ti * b + a;
                let gc0 = ctx.origin.1 + tj * b;
                let off = (gr + gc0 + ctx.color.index()) % 2;
                let draws = &mut scratch.draws[..b / 2];
                ctx.draws(gr & 1, (gr / 2) * half_cols + (gc0 + off) / 2, draws);
                for (k, &u) in draws.iter().enumerate() {
                    probs[off + 2 * k] = u;
                }
                let row = &mut tile[a * b..(a + 1) * b];
                let nn = &scratch.nn[a * b..(a + 1) * b];
                let mask = &kernels.mask[a * b..(a + 1) * b];
                let (mut e, mut mg, mut flips) = (0.0f32, 0.0f32, 0u32);
                for j in 0..b {
                    let s = row[j];
                    let accept = probs[j] < accept_ratio(s * nn[j], &ctx.table);
                    if mask[j] == mask_on {
                        if accept {
                            row[j] = -s;
                            flips += 1;
                        }
                        e += row[j] * nn[j];
                        mg += row[j];
                    }
                }
                summary.bond_energy -= e as f64;
                summary.magnetization += mg as f64;
                summary.flips += flips as u64;
                for k in 0..b / 2 {
                    probs[off + 2 * k] = 1.0;
                }
            }
        }
    }
    Ok(summary)
}

/// One color phase on the compact layout: neighbor sums for the two active
/// sub-lattices only, no masking.
pub fn update_compact_in(
    state: &mut CompactState,
    halos: &HaloSet,
    ctx: &PhaseContext,
    kernels: Option<&KernelSet>,
    method: SumMethod,
    scratch: &mut UpdateScratch,
) -> Result<PhaseSummary> {
    halos.check_shape(state.rows(), state.cols())?;
    let b = state.tile();
    let bb = b * b;
    let (mt, nt) = state.tile_grid();
    scratch.nn.resize(bb, 0.0);
    scratch.draws.resize(b, 0.0);
    let half_cols = ctx.global_cols / 2;
    let (hr0, hc0) = (ctx.origin.0 / 2, ctx.origin.1 / 2);
    let mut summary = PhaseSummary::default();
    for sub in ctx.color.sub_grids() {
        let rp = sub.row_parity();
        for ti in 0..mt {
            for tj in 0..nt {
                compact_tile_nn(
                    state,
                    sub,
                    ti,
                    tj,
                    halos,
                    kernels,
                    method,
                    ctx.precision,
                    &mut scratch.nn,
                    &mut scratch.inner,
                );
                let start = (ti * nt + tj) * bb;
                let tile = &mut state.grid_mut(sub)[start..start + bb];
                for a in 0..b {
                    let hr = hr0 + ti * b + a;
                    ctx.draws(rp, hr * half_cols + hc0 + tj * b, &mut scratch.draws);
                    let (e, m, f) = flip_row(
                        &mut tile[a * b..(a + 1) * b],
                        &scratch.nn[a * b..(a + 1) * b],
                        &scratch.draws,
                        &ctx.table,
                    );
                    summary.bond_energy -= e as f64;
                    summary.magnetization += m as f64;
                    summary.flips += f as u64;
                }
            }
        }
    }
    Ok(summary)
}

/// Single-worker black or white update of a tiled lattice (Algorithm
/// "naive": full-tile sums and a color mask).
pub fn update_naive(lattice: &mut SpinLattice, color: Color, cfg: &ChainConfig, step: u64) -> Result<PhaseSummary> {
    cfg.validate()?;
    let halos = HaloSet::self_wrap(lattice);
    let kernels = build_kernels(lattice.tile())?;
    let ctx = PhaseContext::single(cfg, step, color, lattice.cols());
    update_naive_in(lattice, &halos, &ctx, &kernels, &mut UpdateScratch::default())
}

/// Black or white update of a compact state with explicit halos, using the
/// compact matmul formulation.
pub fn update_compact(
    state: &mut CompactState,
    color: Color,
    cfg: &ChainConfig,
    step: u64,
    halos: &HaloSet,
) -> Result<PhaseSummary> {
    cfg.validate()?;
    let kernels = build_kernels(state.tile())?;
    let ctx = PhaseContext::single(cfg, step, color, state.cols());
    update_compact_in(
        state,
        halos,
        &ctx,
        Some(&kernels),
        SumMethod::Matmul,
        &mut UpdateScratch::default(),
    )
}

/// Spins held in the layout a backend works on.
#[derive(Debug, Clone, PartialEq)]
pub enum ShardState {
    Tiled(SpinLattice),
    Compact(CompactState),
}

impl ShardState {
    pub fn from_lattice(lattice: SpinLattice, backend: Backend) -> Result<ShardState> {
        match backend {
            Backend::Naive => Ok(ShardState::Tiled(lattice)),
            Backend::Compact | Backend::Conv => Ok(ShardState::Compact(compact_split(&lattice)?)),
        }
    }

    pub fn to_lattice(&self) -> SpinLattice {
        match self {
            ShardState::Tiled(l) => l.clone(),
            ShardState::Compact(c) => compact_merge(c),
        }
    }

    pub fn tile(&self) -> usize {
        match self {
            ShardState::Tiled(l) => l.tile(),
            ShardState::Compact(c) => c.tile(),
        }
    }

    /// Sum of all spins.
    pub fn magnetization_sum(&self) -> f64 {
        let sum = |v: &[f32]| v.iter().map(|&s| s as f64).sum::<f64>();
        match self {
            ShardState::Tiled(l) => sum(l.as_slice()),
            ShardState::Compact(c) => SubGrid::ALL.iter().map(|&g| sum(c.grid(g))).sum(),
        }
    }
}

impl SpinGrid for ShardState {
    fn rows(&self) -> usize {
        match self {
            ShardState::Tiled(l) => l.rows(),
            ShardState::Compact(c) => c.rows(),
        }
    }
    fn cols(&self) -> usize {
        match self {
            ShardState::Tiled(l) => l.cols(),
            ShardState::Compact(c) => c.cols(),
        }
    }
    fn get(&self, row: usize, col: usize) -> f32 {
        match self {
            ShardState::Tiled(l) => l.get(row, col),
            ShardState::Compact(c) => c.get(row, col),
        }
    }
}

/// Per-shard update machinery: kernels, acceptance table, scratch.
#[derive(Debug, Clone)]
pub struct ShardEngine {
    cfg: ChainConfig,
    kernels: KernelSet,
    table: [f32; 5],
    scratch: UpdateScratch,
}

impl ShardEngine {
    pub fn new(cfg: ChainConfig, tile: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(ShardEngine {
            cfg,
            kernels: build_kernels(tile)?,
            table: acceptance_table(cfg.beta, cfg.precision),
            scratch: UpdateScratch::default(),
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    pub fn update(
        &mut self,
        shard: &mut ShardState,
        color: Color,
        step: u64,
        origin: (usize, usize),
        global_cols: usize,
        halos: &HaloSet,
    ) -> Result<PhaseSummary> {
        let ctx = PhaseContext {
            seed: self.cfg.seed,
            step,
            color,
            origin,
            global_cols,
            precision: self.cfg.precision,
            table: self.table,
        };
        match (self.cfg.backend, shard) {
            (Backend::Naive, ShardState::Tiled(l)) => update_naive_in(l, halos, &ctx, &self.kernels, &mut self.scratch),
            (Backend::Compact, ShardState::Compact(c)) => update_compact_in(
                c,
                halos,
                &ctx,
                Some(&self.kernels),
                SumMethod::Matmul,
                &mut self.scratch,
            ),
            (Backend::Conv, ShardState::Compact(c)) => {
                update_compact_in(c, halos, &ctx, None, SumMethod::Stencil, &mut self.scratch)
            }
            (backend, _) => Err(Error::InvalidArgument(format!(
                "shard layout does not match backend {backend}"
            ))),
        }
    }
}

/// Observables of the lattice at the end of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSample {
    pub energy: f64,
    pub magnetization: f64,
    pub sites: usize,
}

impl SweepSample {
    /// Magnetization per spin.
    pub fn m(&self) -> f64 {
        self.magnetization / self.sites as f64
    }

    pub fn energy_per_site(&self) -> f64 {
        self.energy / self.sites as f64
    }

    /// Combines the black and white phase summaries of one sweep.
    pub fn from_phases(black: PhaseSummary, white: PhaseSummary, sites: usize) -> Self {
        SweepSample {
            energy: white.bond_energy,
            magnetization: black.magnetization + white.magnetization,
            sites,
        }
    }
}

/// A single-worker chain: state, sweep counter, and engine.
#[derive(Debug, Clone)]
pub struct Chain {
    state: ShardState,
    step: u64,
    engine: ShardEngine,
}

impl Chain {
    pub fn new(lattice: SpinLattice, cfg: ChainConfig) -> Result<Chain> {
        cfg.validate()?;
        let tile = lattice.tile();
        let lattice = lattice.with_precision(cfg.precision);
        Ok(Chain {
            state: ShardState::from_lattice(lattice, cfg.backend)?,
            step: 0,
            engine: ShardEngine::new(cfg, tile)?,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        self.engine.config()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> &ShardState {
        &self.state
    }

    pub fn lattice(&self) -> SpinLattice {
        self.state.to_lattice()
    }

    pub fn sites(&self) -> usize {
        self.state.sites()
    }

    /// One color phase at the current step.
    pub fn update(&mut self, color: Color) -> PhaseSummary {
        let halos = HaloSet::self_wrap(&self.state);
        let cols = self.state.cols();
        self.engine
            .update(&mut self.state, color, self.step, (0, 0), cols, &halos)
            .expect("self halos and matching layout")
    }

    /// Black phase, white phase, step += 1.
    pub fn sweep(&mut self) -> SweepSample {
        let black = self.update(Color::Black);
        let white = self.update(Color::White);
        self.step += 1;
        SweepSample::from_phases(black, white, self.sites())
    }

    pub fn run(&mut self, sweeps: u64) {
        for _ in 0..sweeps {
            self.sweep();
        }
    }
}

/// Lattice with i.i.d. uniform random spins drawn from a dedicated stream.
pub fn random_lattice(rows: usize, cols: usize, tile: usize, seed: u64) -> Result<SpinLattice> {
    let key = StreamKey {
        seed,
        worker: u16::MAX,
        step: 0,
        color: Color::Black,
        subgrid: 0,
    };
    let mut draws = vec![0.0; rows * cols];
    fill_uniform(&key, 0, &mut draws);
    SpinLattice::from_fn(
        rows,
        cols,
        tile,
        |r, c| {
            if draws[r * cols + c] < 0.5 {
                1.0
            } else {
                -1.0
            }
        },
    )
}
