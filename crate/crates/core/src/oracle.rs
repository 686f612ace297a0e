//! Brute-force references: exact enumeration, scalar Metropolis, a modular
//! stencil, the per-spin detailed-balance check, and the `verify` suite.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributed::{MeshShape, WorkerMesh};
use crate::error::{Error, Result};
use crate::lattice::{Color, SpinGrid, SpinLattice};
use crate::mcmc::{random_lattice, Backend, Chain, ChainConfig};
use crate::numerics::{neighbor_sum_naive, quantize_bf16, Precision};
use crate::observables::{hamiltonian, magnetization, MomentSummary, RunStats, BETA_C};
use crate::rng::{fill_uniform, site_uniform, StreamKey};

/// Largest system [`exact_moments`] will enumerate.
pub const MAX_ENUM_SPINS: usize = 20;

/// Exact Boltzmann expectations of a small torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMoments {
    pub rows: usize,
    pub cols: usize,
    pub beta: f64,
    pub m_abs: f64,
    pub m2: f64,
    pub m4: f64,
    /// Total energy, not per site.
    pub energy: f64,
}

impl ExactMoments {
    pub fn energy_per_site(&self) -> f64 {
        self.energy / (self.rows * self.cols) as f64
    }

    pub fn binder(&self) -> Option<f64> {
        crate::observables::binder(self.m2, self.m4)
    }
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

/// Histogram of (unsatisfied bonds, down spins) over all `2^n` states.
fn density_of_states(rows: usize, cols: usize) -> Vec<Vec<u64>> {
    let n = rows * cols;
    let bonds: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| {
            (0..cols).flat_map(move |c| {
                let i = r * cols + c;
                [(i, r * cols + (c + 1) % cols), (i, ((r + 1) % rows) * cols + c)]
            })
        })
        .collect();
    let n_bonds = bonds.len();
    let empty = || vec![vec![0u64; n + 1]; n_bonds + 1];
    let chunk = 1u64 << n.saturating_sub(6);
    (0..(1u64 << n).div_ceil(chunk))
        .into_par_iter()
        .fold(empty, |mut hist, k| {
            let end = ((k + 1) * chunk).min(1 << n);
            for state in k * chunk..end {
                let broken = bonds
                    .iter()
                    .filter(|&&(a, b)| ((state >> a) ^ (state >> b)) & 1 == 1)
                    .count();
                hist[broken][state.count_ones() as usize] += 1;
            }
            hist
        })
        .reduce(empty, |mut a, b| {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
            a
        })
}

/// Exact `<|m|>`, `<m^2>`, `<m^4>`, `<E>` by enumerating every state.
pub fn exact_moments(rows: usize, cols: usize, beta: f64) -> Result<ExactMoments> {
    if rows == 0 || cols == 0 || !rows.is_multiple_of(2) || !cols.is_multiple_of(2) {
        return Err(Error::InvalidSize {
            rows,
            cols,
            reason: "both dimensions must be even and positive",
        });
    }
    let n = rows * cols;
    if n > MAX_ENUM_SPINS {
        return Err(Error::EnumerationTooLarge(n));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidBeta(beta));
    }
    let hist = density_of_states(rows, cols);
    let n_bonds = 2 * n;
    // E = -n_bonds + 2 * broken; weights relative to the ground state.
    let mut z = Compensated::default();
    let mut sums = [Compensated::default(); 4];
    for (broken, row) in hist.iter().enumerate() {
        let energy = 2.0 * broken as f64 - n_bonds as f64;
        let w = (-2.0 * beta * broken as f64).exp();
        for (down, &count) in row.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let m = (n as f64 - 2.0 * down as f64) / n as f64;
            let wc = w * count as f64;
            z.add(wc);
            sums[0].add(wc * m.abs());
            sums[1].add(wc * m * m);
            sums[2].add(wc * m.powi(4));
            sums[3].add(wc * energy);
        }
    }
    let z = z.value();
    Ok(ExactMoments {
        rows,
        cols,
        beta,
        m_abs: sums[0].value() / z,
        m2: sums[1].value() / z,
        m4: sums[2].value() / z,
        energy: sums[3].value() / z,
    })
}

/// Closed-form moments of the mean of `n` independent uniform spins.
pub fn iid_moments(n: usize) -> (f64, f64, f64) {
    let nf = n as f64;
    // E|sum| from the binomial distribution.
    let mut log_binom = 0.0f64;
    let mut abs_sum = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_binom += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        let p = (log_binom - nf * 2f64.ln()).exp();
        abs_sum += p * (nf - 2.0 * k as f64).abs();
    }
    (abs_sum / nf, 1.0 / nf, (3.0 * nf - 2.0) / nf.powi(3))
}

/// One `(sigma, nn)` case of the detailed-balance check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceCase {
    pub sigma: i32,
    pub nn: i32,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub beta: f64,
    pub cases: Vec<BalanceCase>,
    pub max_residual: f64,
    pub passed: bool,
}

/// Relative tolerance of [`detailed_balance_table`].
pub const BALANCE_TOL: f64 = 1e-12;

/// Checks `pi(s|nn) P(s -> -s) = pi(-s|nn) P(-s -> s)` for the Metropolis
/// rule over all ten `(s, nn)` cases, with `pi(s|nn)` proportional to
/// `exp(beta s nn)`.
pub fn detailed_balance_table(beta: f64) -> Result<BalanceReport> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidBeta(beta));
    }
    let mut cases = Vec::with_capacity(10);
    for sigma in [-1i32, 1] {
        for nn in [-4i32, -2, 0, 2, 4] {
            let x = beta * (sigma * nn) as f64;
            let (up, down) = (x.exp(), (-x).exp());
            let pi = |s: f64| (s * x).exp() / (up + down);
            let lhs = pi(1.0) * (-2.0 * x).exp().min(1.0);
            let rhs = pi(-1.0) * (2.0 * x).exp().min(1.0);
            let scale = lhs.abs().max(rhs.abs());
            let residual = if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 };
            cases.push(BalanceCase {
                sigma,
                nn,
                lhs,
                rhs,
                residual,
            });
        }
    }
    let max_residual = cases.iter().map(|c| c.residual).fold(0.0, f64::max);
    Ok(BalanceReport {
        beta,
        cases,
        max_residual,
        passed: max_residual < BALANCE_TOL,
    })
}

/// Nearest-neighbor sums of a row-major torus by modular indexing.
pub fn direct_neighbor_sums(spins: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let at = |r: usize, c: usize| spins[r * cols + c];
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = at((r + rows - 1) % rows, c)
                + at((r + 1) % rows, c)
                + at(r, (c + cols - 1) % cols)
                + at(r, (c + 1) % cols);
        }
    }
    out
}

/// One sweep of plain nested-loop Metropolis on a row-major torus: every
/// black site, then every white site. `draws(color, row, col)` supplies the
/// uniform for each site.
pub fn scalar_metropolis_sweep(
    spins: &mut [f32],
    rows: usize,
    cols: usize,
    beta: f64,
    precision: Precision,
    draws: &dyn Fn(Color, usize, usize) -> f32,
) {
    let b = beta as f32;
    for color in [Color::Black, Color::White] {
        for r in 0..rows {
            for c in 0..cols {
                if Color::of_site(r, c) != color {
                    continue;
                }
                let at = |rr: usize, cc: usize| precision.round(spins[rr * cols + cc]);
                let nn = (at((r + rows - 1) % rows, c) + at((r + 1) % rows, c))
                    + (at(r, (c + cols - 1) % cols) + at(r, (c + 1) % cols));
                let s = spins[r * cols + c];
                let acc = precision.round((-2.0f32 * b * (s * nn)).exp());
                let u = precision.round(draws(color, r, c));
                if u < acc {
                    spins[r * cols + c] = -s;
                }
            }
        }
    }
}

/// Moments of `samples` independent uniformly random configurations (the
/// `beta = 0` Boltzmann distribution), accumulated like a chain.
pub fn infinite_temperature_moments(rows: usize, cols: usize, samples: u64, seed: u64) -> Result<MomentSummary> {
    let n = rows * cols;
    let mut stats = RunStats::for_samples(samples);
    let mut draws = vec![0.0f32; n];
    let mut spins = vec![0.0f32; n];
    for k in 0..samples {
        let key = StreamKey {
            worker: u16::MAX - 1,
            ..StreamKey::new(seed, k, Color::Black, 0)
        };
        fill_uniform(&key, 0, &mut draws);
        for (s, &u) in spins.iter_mut().zip(&draws) {
            *s = if u < 0.5 { 1.0 } else { -1.0 };
        }
        let lattice = SpinLattice::from_row_major(rows, cols, 2, &spins)?;
        stats.push(magnetization(&lattice), hamiltonian(&lattice) / n as f64);
    }
    stats.finalize()
}

/// Outcome of one `verify` check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// Golden 4x4 enumeration at beta = 0.4.
pub const GOLDEN_4X4: &str = include_str!("../tests/golden/exact_4x4_beta0.4.json");

fn check_balance() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for beta in [0.0, 0.1, BETA_C, 1.0, 5.0] {
        let r = detailed_balance_table(beta)?;
        ok &= r.passed && r.cases.len() == 10;
        worst = worst.max(r.max_residual);
    }
    Ok((ok, format!("max relative residual {worst:.3e}")))
}

fn check_enumeration_limits() -> Result<(bool, String)> {
    let e0 = exact_moments(4, 4, 0.0)?;
    let (a, m2, m4) = iid_moments(16);
    let err0 = (e0.m_abs - a).abs().max((e0.m2 - m2).abs()).max((e0.m4 - m4).abs());
    let cold = exact_moments(4, 4, 10.0)?;
    let err_cold = (1.0 - cold.m_abs).abs();
    Ok((
        err0 < 1e-12 && e0.energy.abs() < 1e-12 && err_cold < 1e-10,
        format!("beta=0 deviation {err0:.2e}, beta=10 |1-<|m|>| {err_cold:.2e}"),
    ))
}

fn check_golden() -> Result<(bool, String)> {
    let golden: ExactMoments =
        serde_json::from_str(GOLDEN_4X4).map_err(|e| Error::InvalidArgument(format!("golden file: {e}")))?;
    let now = exact_moments(golden.rows, golden.cols, golden.beta)?;
    let err = [
        now.m_abs - golden.m_abs,
        now.m2 - golden.m2,
        now.m4 - golden.m4,
        (now.energy - golden.energy) / 32.0,
    ]
    .iter()
    .fold(0.0f64, |a, d| a.max(d.abs()));
    Ok((err < 1e-12, format!("max deviation {err:.2e}")))
}

fn check_scalar_oracle() -> Result<(bool, String)> {
    let seed = 2024;
    let cfg = ChainConfig::new(0.4).with_backend(Backend::Naive).with_seed(seed);
    let mut chain = Chain::new(random_lattice(8, 8, 4, seed)?, cfg)?;
    let mut reference = chain.lattice().to_row_major();
    for step in 0..100u64 {
        chain.sweep();
        let draws = |c: Color, r: usize, col: usize| site_uniform(seed, step, c, r, col, 8);
        scalar_metropolis_sweep(&mut reference, 8, 8, 0.4, Precision::F32, &draws);
        if chain.lattice().to_row_major() != reference {
            return Ok((false, format!("diverged at sweep {step}")));
        }
    }
    Ok((true, "8x8, 100 sweeps identical".into()))
}

fn check_stencil() -> Result<(bool, String)> {
    for seed in 0..4 {
        let l = random_lattice(16, 16, 4, seed)?;
        let direct = direct_neighbor_sums(&l.to_row_major(), 16, 16);
        if neighbor_sum_naive(&l).to_row_major() != direct {
            return Ok((false, format!("seed {seed} differs")));
        }
    }
    Ok((true, "matmul neighbor sums equal modular stencil".into()))
}

fn check_backends() -> Result<(bool, String)> {
    let start = random_lattice(16, 16, 4, 11)?;
    for precision in [Precision::F32, Precision::Bf16] {
        let finals: Vec<String> = Backend::ALL
            .iter()
            .map(|&b| {
                let cfg = ChainConfig::new(BETA_C)
                    .with_backend(b)
                    .with_precision(precision)
                    .with_seed(5);
                let mut chain = Chain::new(start.clone(), cfg)?;
                chain.run(25);
                Ok(chain.lattice().checksum())
            })
            .collect::<Result<_>>()?;
        if finals.iter().any(|c| c != &finals[0]) {
            return Ok((false, format!("{precision} trajectories differ")));
        }
    }
    Ok((true, "naive, compact, conv identical in f32 and bf16".into()))
}

fn check_mesh() -> Result<(bool, String)> {
    let start = random_lattice(32, 32, 4, 21)?;
    let cfg = ChainConfig::new(0.44).with_seed(8);
    let mut sums = Vec::new();
    for (px, py) in [(1, 1), (2, 2), (4, 1)] {
        let mut mesh = WorkerMesh::from_lattice(&start, MeshShape::new(px, py)?, cfg.backend, None)?;
        let run = mesh.run(&cfg, 10, |_| {})?;
        if run.stale_reads != 0 {
            return Ok((false, format!("{px}x{py}: {} stale halo reads", run.stale_reads)));
        }
        sums.push(mesh.to_lattice()?.checksum());
    }
    Ok((sums.iter().all(|s| s == &sums[0]), "1x1, 2x2, 4x1 meshes".into()))
}

fn check_bf16() -> Result<(bool, String)> {
    let cases = [
        (1.0f32, 1.0f32),
        (0.2, 0.200_195_31),
        (1.0 + 1.0 / 256.0, 1.0),
        (-3.0, -3.0),
    ];
    let ok = cases.iter().all(|&(x, y)| quantize_bf16(x) == y);
    Ok((ok, "round-to-nearest-even samples".into()))
}

fn check_chain_vs_exact() -> Result<(bool, String)> {
    let beta = 0.44;
    let exact = exact_moments(4, 4, beta)?;
    let cfg = ChainConfig::new(beta).with_seed(99);
    let mut chain = Chain::new(SpinLattice::new(4, 4, 2)?, cfg)?;
    chain.run(10_000);
    let samples = 200_000;
    let mut stats = RunStats::for_samples(samples);
    for _ in 0..samples {
        let s = chain.sweep();
        stats.push(s.m(), s.energy_per_site());
    }
    let f = stats.finalize()?;
    let z = [
        (f.m_abs - exact.m_abs) / f.m_abs_se,
        (f.m2 - exact.m2) / f.m2_se,
        (f.m4 - exact.m4) / f.m4_se,
        (f.energy_per_site - exact.energy_per_site()) / f.energy_per_site_se,
    ];
    let worst = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok((worst < 3.0, format!("4x4 beta={beta}, worst |z| = {worst:.2}")))
}

type CheckFn = fn() -> Result<(bool, String)>;

/// The `verify` suite; every check should pass on a correct build.
pub fn verify_suite() -> Vec<CheckOutcome> {
    let checks: [(&str, CheckFn); 9] = [
        ("detailed balance", check_balance),
        ("enumeration limits", check_enumeration_limits),
        ("golden 4x4 enumeration", check_golden),
        ("bf16 rounding", check_bf16),
        ("neighbor stencil", check_stencil),
        ("scalar metropolis oracle", check_scalar_oracle),
        ("backend equivalence", check_backends),
        ("mesh transparency", check_mesh),
        ("chain vs enumeration", check_chain_vs_exact),
    ];
    checks
        .iter()
        .map(|(name, f)| CheckOutcome::from_result(name, f()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn enumeration_matches_independent_values() {
        // (rows, cols, beta, <|m|>, <m^2>, <m^4>, <E>) from a separate
        // arbitrary-precision enumeration.
        let table = [
            (4, 4, 0.0, 0.196380615234375, 0.0625, 0.01123046875, 0.0),
            (
                4,
                4,
                0.2,
                0.3427656275535899,
                0.17519947809280212,
                0.07294389399977008,
                -7.298165912685556,
            ),
            (
                4,
                4,
                0.4,
                0.7647123932216828,
                0.6548257569366425,
                0.5383187667555371,
                -22.06586371614958,
            ),
            (
                4,
                4,
                BETA_C,
                0.8438604448134203,
                0.7613589085686726,
                0.6656912132673696,
                -25.049980602213097,
            ),
            (
                4,
                4,
                0.6,
                0.9728674502446004,
                0.9528980580075687,
                0.9241222622032652,
                -30.529112445297024,
            ),
            (
                2,
                4,
                0.3,
                0.6029664795092289,
                0.47689140885739767,
                0.374664546485575,
                -8.352853030133398,
            ),
            (
                2,
                2,
                0.5,
                0.9337091730054019,
                0.9172120052983547,
                0.9048391295180692,
                -7.203301451399186,
            ),
        ];
        for (r, c, beta, a, m2, m4, e) in table {
            let x = exact_moments(r, c, beta).unwrap();
            assert!(close(x.m_abs, a, 1e-13), "{r}x{c} {beta}: {} vs {a}", x.m_abs);
            assert!(close(x.m2, m2, 1e-13));
            assert!(close(x.m4, m4, 1e-13));
            assert!(close(x.energy, e, 1e-13), "{} vs {e}", x.energy);
        }
    }

    #[test]
    fn enumeration_limits() {
        let x = exact_moments(4, 4, 0.0).unwrap();
        assert_eq!(x.m2, 1.0 / 16.0);
        let (a, m2, m4) = iid_moments(16);
        assert!((x.m_abs - a).abs() < 1e-12);
        assert!((x.m2 - m2).abs() < 1e-12);
        assert!((x.m4 - m4).abs() < 1e-12);
        let cold = exact_moments(4, 4, 10.0).unwrap();
        assert!((1.0 - cold.m_abs) < 1e-10);
        assert!((cold.energy + 32.0).abs() < 1e-10);
    }

    #[test]
    fn enumeration_errors() {
        assert_eq!(exact_moments(6, 4, 0.1), Err(Error::EnumerationTooLarge(24)));
        assert!(matches!(exact_moments(3, 4, 0.1), Err(Error::InvalidSize { .. })));
        assert!(exact_moments(4, 4, -1.0).is_err());
    }

    #[test]
    fn golden_file_matches() {
        let (ok, detail) = check_golden().unwrap();
        assert!(ok, "{detail}");
    }

    #[test]
    fn balance_cases() {
        let zero = detailed_balance_table(0.0).unwrap();
        assert!(zero.passed);
        for c in &zero.cases {
            assert_eq!(c.lhs, 0.5);
            assert_eq!(c.rhs, 0.5);
        }
        for beta in [0.1, BETA_C, 1.0, 5.0] {
            let r = detailed_balance_table(beta).unwrap();
            assert!(r.passed, "beta {beta}: {}", r.max_residual);
            for c in r.cases.iter().filter(|c| c.nn == 0) {
                assert_eq!((c.lhs, c.rhs), (0.5, 0.5));
            }
        }
        assert!(detailed_balance_table(-0.5).is_err());
    }

    #[test]
    fn scalar_sweep_limits() {
        let mut s = vec![1.0f32; 16];
        scalar_metropolis_sweep(&mut s, 4, 4, 10.0, Precision::F32, &|_, _, _| 0.5);
        assert!(s.iter().all(|&v| v == 1.0));
        let start: Vec<f32> = (0..16).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let mut s = start.clone();
        // Only the black half: the white phase sees draws of 1.0 and never flips.
        scalar_metropolis_sweep(&mut s, 4, 4, 0.0, Precision::F32, &|c, _, _| {
            if c == Color::Black {
                0.3
            } else {
                1.0
            }
        });
        for r in 0..4 {
            for c in 0..4 {
                let i = r * 4 + c;
                let expect = if Color::of_site(r, c) == Color::Black {
                    -start[i]
                } else {
                    start[i]
                };
                assert_eq!(s[i], expect);
            }
        }
    }

    #[test]
    fn iid_closed_form() {
        let (a, m2, m4) = iid_moments(4);
        // sum in {4,2,0,-2,-4} with weights 1,4,6,4,1 over 16.
        assert!((a - (2.0 * 4.0 + 8.0 * 2.0) / 16.0 / 4.0).abs() < 1e-15);
        assert_eq!(m2, 0.25);
        assert_eq!(m4, 10.0 / 64.0);
    }

    #[test]
    fn infinite_temperature_binder() {
        let f = infinite_temperature_moments(4, 4, 100_000, 1).unwrap();
        let u = f.binder.unwrap();
        assert!((u - 1.0 / 24.0).abs() < 4.0 * f.binder_se.unwrap(), "{u}");
        assert!((f.m2 - 1.0 / 16.0).abs() < 4.0 * f.m2_se);
    }
}
