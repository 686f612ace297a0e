use ising_core::oracle::{exact_moments, scalar_metropolis_sweep};
use ising_core::rng::site_uniform;
use ising_core::{
    auto_tile, hamiltonian, magnetization, random_lattice, Backend, Chain, ChainConfig, Color, MeshShape, Precision,
    RunStats, SpinGrid, SpinLattice, WorkerMesh,
};
use proptest::prelude::*;

fn backend() -> impl Strategy<Value = Backend> {
    prop_oneof![Just(Backend::Naive), Just(Backend::Compact), Just(Backend::Conv)]
}

fn precision() -> impl Strategy<Value = Precision> {
    prop_oneof![Just(Precision::F32), Just(Precision::Bf16)]
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(48) })]

    #[test]
    fn chain_matches_scalar_reference(
        hr in 1usize..=8, hc in 1usize..=8, beta in 0.0f64..2.0, seed in any::<u64>(),
        backend in backend(), precision in precision(),
    ) {
        let (rows, cols) = (2 * hr, 2 * hc);
        let tile = auto_tile(rows, cols, backend);
        prop_assume!(tile.is_ok());
        let start = random_lattice(rows, cols, tile.unwrap(), seed).unwrap();
        let cfg = ChainConfig::new(beta).with_backend(backend).with_precision(precision).with_seed(seed);
        let mut chain = Chain::new(start.clone(), cfg).unwrap();
        let mut reference = start.to_row_major();
        for step in 0..6u64 {
            let sample = chain.sweep();
            let draws = |c: Color, r: usize, col: usize| site_uniform(seed, step, c, r, col, cols);
            scalar_metropolis_sweep(&mut reference, rows, cols, beta, precision, &draws);
            let lattice = chain.lattice();
            prop_assert_eq!(lattice.to_row_major(), reference.clone());
            prop_assert_eq!(sample.energy, hamiltonian(&lattice));
            prop_assert_eq!(sample.m(), magnetization(&lattice));
        }
    }

    #[test]
    fn mesh_is_transparent(
        px in 1usize..=4, py in 1usize..=4, sr in 1usize..=3, sc in 1usize..=3,
        seed in any::<u64>(), backend in backend(),
    ) {
        let (rows, cols) = (px * 4 * sr, py * 4 * sc);
        let cfg = ChainConfig::new(0.45).with_backend(backend).with_seed(seed);
        let start = random_lattice(rows, cols, 2, seed).unwrap();
        let mut single = Chain::new(start.clone(), cfg).unwrap();
        let mut expected = Vec::new();
        for _ in 0..5 {
            expected.push(single.sweep());
        }
        let shape = MeshShape::new(px, py).unwrap();
        let mut mesh = WorkerMesh::from_lattice(&start, shape, backend, Some(2)).unwrap();
        let mut got = Vec::new();
        let run = mesh.run(&cfg, 5, |s| got.push(s)).unwrap();
        prop_assert_eq!(run.stale_reads, 0);
        prop_assert_eq!(got, expected);
        prop_assert_eq!(mesh.to_lattice().unwrap().checksum(), single.lattice().checksum());
    }

    #[test]
    fn ground_state_is_stable_at_large_beta(
        hr in 1usize..=6, hc in 1usize..=6, seed in any::<u64>(), backend in backend(), up in any::<bool>(),
    ) {
        let (rows, cols) = (2 * hr, 2 * hc);
        let tile = auto_tile(rows, cols, backend);
        prop_assume!(tile.is_ok());
        let tile = tile.unwrap();
        let s = if up { 1.0 } else { -1.0 };
        let start = SpinLattice::from_fn(rows, cols, tile, |_, _| s).unwrap();
        let mut chain = Chain::new(start.clone(), ChainConfig::new(50.0).with_backend(backend).with_seed(seed)).unwrap();
        chain.run(3);
        prop_assert_eq!(chain.lattice().checksum(), start.checksum());
    }
}

// The plain scalar reference, driven long enough to compare with enumeration.
#[test]
fn scalar_reference_samples_boltzmann() {
    let (beta, seed) = (0.3, 77);
    let exact = exact_moments(4, 4, beta).unwrap();
    let mut spins = vec![1.0f32; 16];
    let sweeps = 200_000u64;
    let mut stats = RunStats::for_samples(sweeps);
    for step in 0..sweeps + 2_000 {
        let draws = |c: Color, r: usize, col: usize| site_uniform(seed, step, c, r, col, 4);
        scalar_metropolis_sweep(&mut spins, 4, 4, beta, Precision::F32, &draws);
        if step >= 2_000 {
            let l = SpinLattice::from_row_major(4, 4, 2, &spins).unwrap();
            stats.push(magnetization(&l), hamiltonian(&l) / 16.0);
        }
    }
    let f = stats.finalize().unwrap();
    assert!(
        (f.m2 - exact.m2).abs() < 4.0 * f.m2_se,
        "m2 {} vs {} (se {})",
        f.m2,
        exact.m2,
        f.m2_se
    );
    assert!(
        (f.energy_per_site - exact.energy_per_site()).abs() < 4.0 * f.energy_per_site_se,
        "e {} vs {}",
        f.energy_per_site,
        exact.energy_per_site()
    );
}
