//! Lockstep multi-worker sweeps over a logical 2D torus of shards.
//!
//! Each worker is a thread that owns one shard. Workers talk only through
//! [`Fabric::permute`], a collective permute over channels that ends in a
//! barrier. Before every color phase each worker sends its four edge strips
//! to its four neighbors, then updates its shard with the received halos.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Barrier, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Color, HaloSet, SpinGrid, SpinLattice};
use crate::mcmc::{auto_tile, Backend, ChainConfig, PhaseSummary, ShardEngine, ShardState, SweepSample};

/// A `px x py` torus of workers; `px` splits rows, `py` splits columns.
/// Worker `(i, j)` has id `i * py + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeshShape {
    pub px: usize,
    pub py: usize,
}

/// Direction of a neighbor on the worker torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    North,
    South,
    West,
    East,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::South, Direction::West, Direction::East];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
            Direction::East => Direction::West,
        }
    }
}

impl MeshShape {
    pub fn new(px: usize, py: usize) -> Result<Self> {
        if px == 0 || py == 0 {
            return Err(Error::InvalidMesh(format!("{px}x{py} has no workers")));
        }
        if px * py > u16::MAX as usize {
            return Err(Error::InvalidMesh(format!("{px}x{py} has too many workers")));
        }
        Ok(MeshShape { px, py })
    }

    pub fn workers(&self) -> usize {
        self.px * self.py
    }

    pub fn coords(&self, id: usize) -> (usize, usize) {
        (id / self.py, id % self.py)
    }

    pub fn id(&self, i: usize, j: usize) -> usize {
        i * self.py + j
    }

    pub fn neighbor(&self, id: usize, dir: Direction) -> usize {
        let (i, j) = self.coords(id);
        let (px, py) = (self.px, self.py);
        match dir {
            Direction::North => self.id((i + px - 1) % px, j),
            Direction::South => self.id((i + 1) % px, j),
            Direction::West => self.id(i, (j + py - 1) % py),
            Direction::East => self.id(i, (j + 1) % py),
        }
    }

    /// Pairs `(w, neighbor(w, dir))` for every worker.
    pub fn shift_pairs(&self, dir: Direction) -> Vec<(usize, usize)> {
        (0..self.workers()).map(|w| (w, self.neighbor(w, dir))).collect()
    }
}

impl std::fmt::Display for MeshShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.px, self.py)
    }
}

impl std::str::FromStr for MeshShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidMesh(format!("'{s}' is not of the form PXxPY"));
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        MeshShape::new(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        )
    }
}

/// Checks that `pairs` is a partial permutation of `0..workers`.
pub fn validate_pairs(workers: usize, pairs: &[(usize, usize)]) -> Result<()> {
    let mut seen = vec![false; workers];
    for &(s, d) in pairs {
        if s >= workers {
            return Err(Error::UnknownWorker(s));
        }
        if d >= workers {
            return Err(Error::UnknownWorker(d));
        }
        if std::mem::replace(&mut seen[d], true) {
            return Err(Error::DuplicateDestination(d));
        }
    }
    Ok(())
}

struct Message<T> {
    epoch: u64,
    payload: T,
}

/// Point-to-point channels between `n` workers plus a shared barrier.
pub struct Fabric<T> {
    senders: Vec<Sender<Message<T>>>,
    receivers: Vec<Mutex<Receiver<Message<T>>>>,
    barrier: Barrier,
    stale_reads: AtomicU64,
}

impl<T: Clone + Send> Fabric<T> {
    pub fn new(workers: usize) -> Self {
        let (senders, receivers) = (0..workers)
            .map(|_| {
                let (tx, rx) = channel();
                (tx, Mutex::new(rx))
            })
            .unzip();
        Fabric {
            senders,
            receivers,
            barrier: Barrier::new(workers),
            stale_reads: AtomicU64::new(0),
        }
    }

    pub fn workers(&self) -> usize {
        self.senders.len()
    }

    /// Worker `me`'s side of a collective permute over validated `pairs`.
    /// Sends `value` to every destination paired with `me`, receives the
    /// value addressed to `me` if any, then waits for all workers.
    pub fn permute(&self, me: usize, value: &T, pairs: &[(usize, usize)], epoch: u64) -> Option<T> {
        for &(s, d) in pairs {
            if s == me {
                let msg = Message {
                    epoch,
                    payload: value.clone(),
                };
                self.senders[d].send(msg).expect("receiver lives as long as the fabric");
            }
        }
        let received = pairs.iter().any(|&(_, d)| d == me).then(|| {
            let msg = self.receivers[me]
                .lock()
                .expect("one reader per worker")
                .recv()
                .expect("sender lives as long as the fabric");
            if msg.epoch != epoch {
                self.stale_reads.fetch_add(1, Ordering::Relaxed);
            }
            msg.payload
        });
        self.barrier.wait();
        received
    }

    pub fn barrier(&self) {
        self.barrier.wait();
    }

    /// Number of messages received with an epoch other than the current one.
    pub fn stale_reads(&self) -> u64 {
        self.stale_reads.load(Ordering::Relaxed)
    }
}

/// Delivers `values[s]` to worker `d` for every `(s, d)` in `pairs`, with
/// one thread per worker. Workers that are not a destination get `None`.
pub fn collective_permute<T: Clone + Send>(values: Vec<T>, pairs: &[(usize, usize)]) -> Result<Vec<Option<T>>> {
    let n = values.len();
    validate_pairs(n, pairs)?;
    let fabric = Fabric::new(n);
    let fabric = &fabric;
    Ok(std::thread::scope(|scope| {
        let handles: Vec<_> = values
            .into_iter()
            .enumerate()
            .map(|(me, v)| scope.spawn(move || fabric.permute(me, &v, pairs, 0)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("permute worker panicked"))
            .collect()
    }))
}

/// Sends every worker's edge strips to its four neighbors and assembles the
/// received strips into halos.
fn exchange_with(fabric: &Fabric<Vec<f32>>, shape: &MeshShape, me: usize, shard: &ShardState, epoch: u64) -> HaloSet {
    let e = shard.edges();
    // The north halo is the bottom row of the north neighbor, which that
    // neighbor sends south, and so on.
    let recv = |dir: Direction, strip: &Vec<f32>| {
        fabric
            .permute(me, strip, &shape.shift_pairs(dir), epoch)
            .expect("every worker is a destination")
    };
    let north = recv(Direction::South, &e.bottom);
    let south = recv(Direction::North, &e.top);
    let west = recv(Direction::East, &e.right);
    let east = recv(Direction::West, &e.left);
    HaloSet {
        north,
        south,
        west,
        east,
    }
}

/// Halos of every shard of `mesh` before a `color` phase. The strips carry
/// both colors, so the same exchange serves either phase.
pub fn exchange_halos(mesh: &WorkerMesh, color: Color) -> Result<Vec<HaloSet>> {
    let shape = mesh.shape;
    let fabric = Fabric::new(shape.workers());
    let epoch = 2 * mesh.step + color.index() as u64;
    let fabric = &fabric;
    let halos = std::thread::scope(|scope| {
        let handles: Vec<_> = mesh
            .shards
            .iter()
            .enumerate()
            .map(|(me, shard)| scope.spawn(move || exchange_with(fabric, &shape, me, shard, epoch)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("exchange worker panicked"))
            .collect()
    });
    Ok(halos)
}

/// A global lattice split into equal shards over a worker torus.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerMesh {
    shape: MeshShape,
    rows: usize,
    cols: usize,
    shard_rows: usize,
    shard_cols: usize,
    backend: Backend,
    shards: Vec<ShardState>,
    step: u64,
}

/// What a lockstep run observed.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshRun {
    pub sweeps: u64,
    /// Time inside the lockstep loop on worker 0.
    pub elapsed: Duration,
    pub stale_reads: u64,
    /// Sites received by each worker per color phase.
    pub halo_sites_per_phase: usize,
}

impl WorkerMesh {
    /// Splits `lattice` into `shape` shards. `tile` defaults to
    /// [`auto_tile`] for the shard size.
    pub fn from_lattice(
        lattice: &SpinLattice,
        shape: MeshShape,
        backend: Backend,
        tile: Option<usize>,
    ) -> Result<WorkerMesh> {
        let (rows, cols) = (lattice.rows(), lattice.cols());
        if rows % shape.px != 0 || cols % shape.py != 0 {
            return Err(Error::InvalidMesh(format!(
                "{rows}x{cols} lattice does not split evenly over a {shape} mesh"
            )));
        }
        let (sr, sc) = (rows / shape.px, cols / shape.py);
        if sr % 2 != 0 || sc % 2 != 0 {
            return Err(Error::InvalidMesh(format!("shard size {sr}x{sc} must be even")));
        }
        let tile = match tile {
            Some(t) => t,
            None => auto_tile(sr, sc, backend)?,
        };
        let g = backend.granularity(tile);
        if sr % g != 0 || sc % g != 0 {
            return Err(Error::InvalidMesh(format!(
                "shard size {sr}x{sc} is not a multiple of {g} (tile {tile}, backend {backend})"
            )));
        }
        let shards = (0..shape.workers())
            .map(|w| {
                let (i, j) = shape.coords(w);
                let local = lattice.window(i * sr, j * sc, sr, sc, tile)?;
                ShardState::from_lattice(local, backend)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WorkerMesh {
            shape,
            rows,
            cols,
            shard_rows: sr,
            shard_cols: sc,
            backend,
            shards,
            step: 0,
        })
    }

    pub fn shape(&self) -> MeshShape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shard_size(&self) -> (usize, usize) {
        (self.shard_rows, self.shard_cols)
    }

    pub fn tile(&self) -> usize {
        self.shards[0].tile()
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn shards(&self) -> &[ShardState] {
        &self.shards
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Global coordinates of worker `w`'s `(0, 0)` site.
    pub fn origin(&self, w: usize) -> (usize, usize) {
        let (i, j) = self.shape.coords(w);
        (i * self.shard_rows, j * self.shard_cols)
    }

    /// Reassembles the global lattice, using the shard tile when it fits.
    pub fn to_lattice(&self) -> Result<SpinLattice> {
        let (sr, sc) = (self.shard_rows, self.shard_cols);
        let locals: Vec<SpinLattice> = self.shards.iter().map(|s| s.to_lattice()).collect();
        let precision = locals[0].precision();
        Ok(SpinLattice::from_fn(self.rows, self.cols, self.tile(), |r, c| {
            locals[self.shape.id(r / sr, c / sc)].get(r % sr, c % sc)
        })?
        .with_precision(precision))
    }

    /// Runs `sweeps` lockstep sweeps. `observe` is called on the calling
    /// thread after every sweep with the global energy and magnetization.
    pub fn run<F: FnMut(SweepSample)>(&mut self, cfg: &ChainConfig, sweeps: u64, mut observe: F) -> Result<MeshRun> {
        cfg.validate()?;
        if cfg.backend != self.backend {
            return Err(Error::InvalidArgument(format!(
                "mesh holds {} shards but the chain uses {}",
                self.backend, cfg.backend
            )));
        }
        let shape = self.shape;
        let n = shape.workers();
        let tile = self.tile();
        let global_cols = self.cols;
        let sites = self.rows * self.cols;
        let start_step = self.step;
        let origins: Vec<(usize, usize)> = (0..n).map(|w| self.origin(w)).collect();
        let fabric: Fabric<Vec<f32>> = Fabric::new(n);
        let slots: Vec<Mutex<(PhaseSummary, PhaseSummary)>> = (0..n).map(|_| Mutex::new(Default::default())).collect();
        let mut engines = (0..n)
            .map(|_| ShardEngine::new(*cfg, tile))
            .collect::<Result<Vec<_>>>()?;
        let mut shards = std::mem::take(&mut self.shards);

        let worker = |me: usize, shard: &mut ShardState, engine: &mut ShardEngine, step: u64| -> Result<()> {
            let mut phases = [PhaseSummary::default(); 2];
            for color in [Color::Black, Color::White] {
                let epoch = 2 * step + color.index() as u64;
                let halos = exchange_with(&fabric, &shape, me, shard, epoch);
                phases[color.index()] = engine.update(shard, color, step, origins[me], global_cols, &halos)?;
                fabric.barrier();
            }
            *slots[me].lock().expect("slot") = (phases[0], phases[1]);
            fabric.barrier();
            Ok(())
        };

        let (first, rest) = shards.split_first_mut().expect("mesh has at least one shard");
        let (engine0, engines_rest) = engines.split_first_mut().expect("one engine per shard");
        let fabric_ref = &fabric;
        let outcome = std::thread::scope(|scope| {
            let fabric = fabric_ref;
            let handles: Vec<_> = rest
                .iter_mut()
                .zip(engines_rest.iter_mut())
                .enumerate()
                .map(|(k, (shard, engine))| {
                    let worker = &worker;
                    scope.spawn(move || {
                        fabric.barrier();
                        for s in 0..sweeps {
                            worker(k + 1, shard, engine, start_step + s)?;
                        }
                        Ok::<(), Error>(())
                    })
                })
                .collect();
            fabric.barrier();
            let t0 = Instant::now();
            let mut result = Ok(());
            for s in 0..sweeps {
                result = worker(0, first, engine0, start_step + s);
                if result.is_err() {
                    break;
                }
                let (mut black, mut white) = (PhaseSummary::default(), PhaseSummary::default());
                for slot in &slots {
                    let (b, w) = *slot.lock().expect("slot");
                    black = black.merge(b);
                    white = white.merge(w);
                }
                observe(SweepSample::from_phases(black, white, sites));
            }
            let elapsed = t0.elapsed();
            for h in handles {
                h.join().expect("mesh worker panicked")?;
            }
            result.map(|_| elapsed)
        });
        self.shards = shards;
        let elapsed = outcome?;
        self.step += sweeps;
        Ok(MeshRun {
            sweeps,
            elapsed,
            stale_reads: fabric.stale_reads(),
            halo_sites_per_phase: 2 * (self.shard_rows + self.shard_cols),
        })
    }
}

/// One lockstep sweep of every shard.
pub fn distributed_sweep(mesh: &mut WorkerMesh, cfg: &ChainConfig) -> Result<SweepSample> {
    let mut last = None;
    mesh.run(cfg, 1, |s| last = Some(s))?;
    Ok(last.expect("one sweep observed"))
}
