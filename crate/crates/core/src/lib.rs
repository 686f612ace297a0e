//! Checkerboard Metropolis simulation of the 2D Ising model on a torus.
//!
//! Neighbor sums are computed either as small dense matmuls against fixed
//! kernels (on the full tiles or on the four compact parity sub-lattices) or
//! by a direct stencil. A counter-based RNG keyed by global site makes every
//! backend and every worker mesh produce the same trajectory.

pub mod bench;
pub mod distributed;
pub mod error;
pub mod lattice;
pub mod mcmc;
pub mod numerics;
pub mod observables;
pub mod oracle;
pub mod rng;

pub use distributed::{collective_permute, distributed_sweep, exchange_halos, MeshShape, WorkerMesh};
pub use error::{Error, Result};
pub use lattice::{
    build_kernels, compact_merge, compact_split, Color, CompactState, HaloSet, KernelSet, SpinGrid, SpinLattice,
    SubGrid,
};
pub use mcmc::{
    acceptance_table, auto_tile, random_lattice, update_compact, update_naive, Backend, Chain, ChainConfig, SweepSample,
};
pub use numerics::Precision;
pub use observables::{
    binder, hamiltonian, magnetization, run_scan, InitialState, MomentSummary, RunStats, ScanConfig, ScanRow, BETA_C,
    T_C,
};
pub use rng::StreamKey;

/// Crate version, embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
