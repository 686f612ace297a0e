//! Shared workloads for the criterion benches.

use ising_core::{auto_tile, random_lattice, Backend, Chain, ChainConfig, Precision, SpinLattice, BETA_C};

/// Lattice sides used across the benches.
pub const SIDES: [usize; 3] = [128, 256, 1024];

/// Random start at `side x side`, tiled for `backend`.
pub fn start(side: usize, backend: Backend) -> SpinLattice {
    let tile = auto_tile(side, side, backend).expect("bench sides tile cleanly");
    random_lattice(side, side, tile, 1).expect("valid lattice")
}

/// Critical-point chain warmed by a few sweeps.
pub fn chain(side: usize, backend: Backend, precision: Precision) -> Chain {
    let cfg = ChainConfig::new(BETA_C)
        .with_backend(backend)
        .with_precision(precision)
        .with_seed(1);
    let mut c = Chain::new(start(side, backend).with_precision(precision), cfg).expect("valid chain");
    c.run(3);
    c
}
