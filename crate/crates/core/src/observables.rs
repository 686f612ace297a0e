//! Energy, magnetization, moment accumulation with batch-means errors, the
//! Binder cumulant, and temperature scans.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{SpinGrid, SpinLattice};
use crate::mcmc::{auto_tile, random_lattice, Backend, Chain, ChainConfig};
use crate::numerics::Precision;
use crate::rng::child_seed;

/// Critical temperature `2 / ln(1 + sqrt 2)` with `k_B = J = 1`.
pub const T_C: f64 = 2.269_185_314_213_022;
/// `1 / T_C`.
pub const BETA_C: f64 = 0.440_686_793_509_771_5;

/// `-sum_<ij> s_i s_j` over the `2N` bonds of the torus.
pub fn hamiltonian<G: SpinGrid + ?Sized>(grid: &G) -> f64 {
    let (h, w) = (grid.rows(), grid.cols());
    let mut e = 0i64;
    for r in 0..h {
        for c in 0..w {
            let s = grid.get(r, c);
            let right = grid.get(r, (c + 1) % w);
            let down = grid.get((r + 1) % h, c);
            e -= (s * (right + down)) as i64;
        }
    }
    e as f64
}

/// Mean spin.
pub fn magnetization<G: SpinGrid + ?Sized>(grid: &G) -> f64 {
    let (h, w) = (grid.rows(), grid.cols());
    let mut m = 0i64;
    for r in 0..h {
        for c in 0..w {
            m += grid.get(r, c) as i64;
        }
    }
    m as f64 / (h * w) as f64
}

/// `1 - <m^4> / (3 <m^2>^2)`; `None` when `<m^2> = 0`.
pub fn binder(m2: f64, m4: f64) -> Option<f64> {
    if m2 > 0.0 {
        Some(1.0 - m4 / (3.0 * m2 * m2))
    } else {
        None
    }
}

/// Batch length used for `samples` measurements.
pub fn batch_len_for(samples: u64) -> u64 {
    (samples / 1000).max(100)
}

const N_OBS: usize = 4;
const ABS_M: usize = 0;
const M2: usize = 1;
const M4: usize = 2;
const ENERGY: usize = 3;

/// Running moments of `|m|`, `m^2`, `m^4` and energy per site.
#[derive(Debug, Clone)]
pub struct RunStats {
    batch_len: u64,
    n: u64,
    sums: [f64; N_OBS],
    batch_sums: [f64; N_OBS],
    batch_fill: u64,
    batch_means: Vec<[f64; N_OBS]>,
}

/// Finalized moments with batch-means standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n_samples: u64,
    pub n_batches: usize,
    pub m_abs: f64,
    pub m_abs_se: f64,
    pub m2: f64,
    pub m2_se: f64,
    pub m4: f64,
    pub m4_se: f64,
    pub energy_per_site: f64,
    pub energy_per_site_se: f64,
    pub binder: Option<f64>,
    pub binder_se: Option<f64>,
}

impl RunStats {
    pub fn new(batch_len: u64) -> Self {
        RunStats {
            batch_len: batch_len.max(1),
            n: 0,
            sums: [0.0; N_OBS],
            batch_sums: [0.0; N_OBS],
            batch_fill: 0,
            batch_means: Vec::new(),
        }
    }

    /// Batch length chosen from the planned number of samples.
    pub fn for_samples(samples: u64) -> Self {
        Self::new(batch_len_for(samples))
    }

    /// Records one measurement: magnetization per spin and energy per site.
    pub fn push(&mut self, m: f64, energy_per_site: f64) {
        let m2 = m * m;
        let x = [m.abs(), m2, m2 * m2, energy_per_site];
        for i in 0..N_OBS {
            self.sums[i] += x[i];
            self.batch_sums[i] += x[i];
        }
        self.n += 1;
        self.batch_fill += 1;
        if self.batch_fill == self.batch_len {
            let k = self.batch_len as f64;
            self.batch_means.push(self.batch_sums.map(|s| s / k));
            self.batch_sums = [0.0; N_OBS];
            self.batch_fill = 0;
        }
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn mean(&self, i: usize) -> f64 {
        self.sums[i] / self.n as f64
    }

    fn batch_se(&self, i: usize) -> f64 {
        let nb = self.batch_means.len();
        if nb < 2 {
            return f64::NAN;
        }
        let mean = self.batch_means.iter().map(|b| b[i]).sum::<f64>() / nb as f64;
        let var = self.batch_means.iter().map(|b| (b[i] - mean).powi(2)).sum::<f64>() / (nb - 1) as f64;
        (var / nb as f64).sqrt()
    }

    /// Jackknife over batches.
    fn binder_se(&self) -> Option<f64> {
        let nb = self.batch_means.len();
        if nb < 2 {
            return None;
        }
        let tot2: f64 = self.batch_means.iter().map(|b| b[M2]).sum();
        let tot4: f64 = self.batch_means.iter().map(|b| b[M4]).sum();
        let k = (nb - 1) as f64;
        let leave_one: Vec<f64> = self
            .batch_means
            .iter()
            .map(|b| binder((tot2 - b[M2]) / k, (tot4 - b[M4]) / k))
            .collect::<Option<Vec<f64>>>()?;
        let mean = leave_one.iter().sum::<f64>() / nb as f64;
        let var = leave_one.iter().map(|u| (u - mean).powi(2)).sum::<f64>();
        Some((var * k / nb as f64).sqrt())
    }

    pub fn binder(&self) -> Option<f64> {
        binder(self.mean(M2), self.mean(M4))
    }

    pub fn finalize(&self) -> Result<MomentSummary> {
        if self.n == 0 {
            return Err(Error::InvalidSchedule("no samples recorded".into()));
        }
        let (m2, m4) = (self.mean(M2), self.mean(M4));
        if !(0.0..=1.0 + 1e-12).contains(&m2) || !(0.0..=1.0 + 1e-12).contains(&m4) {
            return Err(Error::InconsistentMoments(format!("m2 {m2}, m4 {m4} outside [0, 1]")));
        }
        if m4 < m2 * m2 * (1.0 - 1e-12) {
            return Err(Error::InconsistentMoments(format!("m4 {m4} < m2^2 {}", m2 * m2)));
        }
        Ok(MomentSummary {
            n_samples: self.n,
            n_batches: self.batch_means.len(),
            m_abs: self.mean(ABS_M),
            m_abs_se: self.batch_se(ABS_M),
            m2,
            m2_se: self.batch_se(M2),
            m4,
            m4_se: self.batch_se(M4),
            energy_per_site: self.mean(ENERGY),
            energy_per_site_se: self.batch_se(ENERGY),
            binder: binder(m2, m4),
            binder_se: self.binder_se(),
        })
    }
}

/// Starting configuration of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    /// All spins up.
    #[default]
    Cold,
    /// Independent random spins.
    Hot,
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitialState::Cold => "cold",
            InitialState::Hot => "hot",
        })
    }
}

impl FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cold" => Ok(InitialState::Cold),
            "hot" => Ok(InitialState::Hot),
            other => Err(Error::InvalidArgument(format!(
                "unknown initial state '{other}' (expected cold or hot)"
            ))),
        }
    }
}

impl InitialState {
    pub fn build(self, rows: usize, cols: usize, tile: usize, seed: u64) -> Result<SpinLattice> {
        match self {
            InitialState::Cold => SpinLattice::new(rows, cols, tile),
            InitialState::Hot => random_lattice(rows, cols, tile, seed),
        }
    }
}

/// Shared settings of every chain in a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub rows: usize,
    pub cols: usize,
    /// Tile side; `None` picks [`auto_tile`].
    pub tile: Option<usize>,
    /// Total sweeps per temperature, burn-in included.
    pub sweeps: u64,
    pub burn_in: u64,
    pub backend: Backend,
    pub precision: Precision,
    pub seed: u64,
    pub init: InitialState,
}

impl ScanConfig {
    pub fn new(size: usize, sweeps: u64, burn_in: u64) -> Self {
        ScanConfig {
            rows: size,
            cols: size,
            tile: None,
            sweeps,
            burn_in,
            backend: Backend::Compact,
            precision: Precision::F32,
            seed: 0,
            init: InitialState::Cold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.sweeps {
            return Err(Error::InvalidSchedule(format!(
                "burn-in {} must be smaller than sweeps {}",
                self.burn_in, self.sweeps
            )));
        }
        if !self.rows.is_multiple_of(2) || !self.cols.is_multiple_of(2) || self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidSize {
                rows: self.rows,
                cols: self.cols,
                reason: "both dimensions must be even and positive",
            });
        }
        Ok(())
    }

    pub fn resolved_tile(&self) -> Result<usize> {
        match self.tile {
            Some(t) => Ok(t),
            None => auto_tile(self.rows, self.cols, self.backend),
        }
    }

    pub fn samples(&self) -> u64 {
        self.sweeps - self.burn_in
    }
}

/// Runs one chain: `burn_in` unmeasured sweeps, then one measurement per sweep.
pub fn sample_chain(scan: &ScanConfig, beta: f64, seed: u64) -> Result<MomentSummary> {
    scan.validate()?;
    let tile = scan.resolved_tile()?;
    let lattice = scan.init.build(scan.rows, scan.cols, tile, seed)?;
    let cfg = ChainConfig {
        beta,
        precision: scan.precision,
        backend: scan.backend,
        seed,
    };
    let mut chain = Chain::new(lattice, cfg)?;
    chain.run(scan.burn_in);
    let mut stats = RunStats::for_samples(scan.samples());
    for _ in 0..scan.samples() {
        let s = chain.sweep();
        stats.push(s.m(), s.energy_per_site());
    }
    stats.finalize()
}

/// One temperature point of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub temperature: f64,
    pub t_over_tc: f64,
    pub beta: f64,
    pub seed: u64,
    pub stats: MomentSummary,
}

/// Independent chains at each temperature (absolute units), run in parallel.
/// Chain `i` uses `child_seed(seed, i)`.
pub fn run_scan(temps: &[f64], scan: &ScanConfig) -> Result<Vec<ScanRow>> {
    scan.validate()?;
    if temps.is_empty() {
        return Err(Error::InvalidSchedule("no temperatures".into()));
    }
    if let Some(&t) = temps.iter().find(|&&t| !(t.is_finite() && t > 0.0)) {
        return Err(Error::InvalidSchedule(format!(
            "temperature {t} is not positive and finite"
        )));
    }
    temps
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let seed = child_seed(scan.seed, i as u64);
            let beta = 1.0 / t;
            Ok(ScanRow {
                temperature: t,
                t_over_tc: t / T_C,
                beta,
                seed,
                stats: sample_chain(scan, beta, seed)?,
            })
        })
        .collect()
}

/// Temperatures `lo, lo+step, ..., <= hi` in units of `T_C`, returned in
/// absolute units.
pub fn temperature_range(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidSchedule(format!("bad range {lo}:{hi}:{step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| (lo + i as f64 * step) * T_C).collect())
}

/// Crossing of two Binder curves sampled at the same increasing
/// temperatures, `small` from the smaller lattice.
///
/// `d(T) = U_small - U_large` goes from negative to positive through the
/// critical point. Among the sign changes of `d` in that direction, the one
/// with the largest jump is taken and interpolated linearly. Returns `None`
/// when there is no such change or a cumulant is missing.
pub fn binder_crossing(small: &[ScanRow], large: &[ScanRow]) -> Option<f64> {
    if small.len() != large.len() || small.len() < 2 {
        return None;
    }
    let d: Vec<f64> = small
        .iter()
        .zip(large)
        .map(|(a, b)| Some(a.stats.binder? - b.stats.binder?))
        .collect::<Option<_>>()?;
    let x: Vec<f64> = small.iter().map(|r| r.t_over_tc).collect();
    (0..d.len() - 1)
        .filter(|&i| d[i] < 0.0 && d[i + 1] >= 0.0)
        .max_by(|&i, &j| (d[i + 1] - d[i]).total_cmp(&(d[j + 1] - d[j])))
        .map(|i| x[i] + (x[i + 1] - x[i]) * (-d[i]) / (d[i + 1] - d[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::SpinLattice;
    use crate::mcmc::random_lattice;
    use crate::numerics::neighbor_sum_naive;

    #[test]
    fn critical_constants() {
        let tc = 2.0 / (1.0 + 2f64.sqrt()).ln();
        assert_eq!(T_C, tc);
        assert!((BETA_C - 1.0 / tc).abs() < 1e-16);
    }

    #[test]
    fn hamiltonian_examples() {
        let up = SpinLattice::new(4, 4, 2).unwrap();
        assert_eq!(hamiltonian(&up), -32.0);
        assert_eq!(hamiltonian(&SpinLattice::checkerboard(4, 4, 2).unwrap()), 32.0);
        for l in [4usize, 6, 8] {
            let one = SpinLattice::from_fn(l, l, 2, |r, c| if (r, c) == (1, 1) { -1.0 } else { 1.0 }).unwrap();
            assert_eq!(hamiltonian(&one), -2.0 * (l * l) as f64 + 8.0);
        }
    }

    #[test]
    fn magnetization_examples() {
        assert_eq!(magnetization(&SpinLattice::new(4, 4, 2).unwrap()), 1.0);
        assert_eq!(magnetization(&SpinLattice::checkerboard(4, 4, 2).unwrap()), 0.0);
        let l = SpinLattice::from_fn(4, 4, 2, |r, _| if r == 3 { -1.0 } else { 1.0 }).unwrap();
        assert_eq!(magnetization(&l), 0.5);
    }

    #[test]
    fn binder_limits() {
        assert!((binder(1.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(binder(0.5, 0.75), Some(0.0));
        // iid spins, N = 16: <m^2> = 1/N, <m^4> = (3N - 2)/N^3.
        let n = 16.0f64;
        let u = binder(1.0 / n, (3.0 * n - 2.0) / n.powi(3)).unwrap();
        assert!((u - 1.0 / 24.0).abs() < 1e-15);
        assert_eq!(binder(0.0, 0.0), None);
    }

    #[test]
    fn local_energy_change() {
        // Flipping site i changes H by 2 s_i nn_i.
        let mut x = 5u64;
        for trial in 0..1000u64 {
            let l = random_lattice(8, 8, 2, trial).unwrap();
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
            let (r, c) = ((x >> 33) as usize % 8, (x >> 40) as usize % 8);
            let nn = neighbor_sum_naive(&l).get(r, c);
            let s = l.get(r, c);
            let mut flipped = l.clone();
            flipped.set(r, c, -s);
            assert_eq!(hamiltonian(&flipped) - hamiltonian(&l), (2.0 * s * nn) as f64);
        }
    }

    #[test]
    fn negation_symmetry() {
        let l = random_lattice(8, 8, 2, 4).unwrap();
        let n = l.negated();
        assert_eq!(hamiltonian(&l), hamiltonian(&n));
        assert_eq!(magnetization(&l), -magnetization(&n));
    }

    #[test]
    fn run_stats_batches() {
        let mut s = RunStats::new(10);
        for i in 0..105 {
            let m = if i % 2 == 0 { 0.5 } else { -0.5 };
            s.push(m, -1.0);
        }
        let f = s.finalize().unwrap();
        assert_eq!(f.n_samples, 105);
        assert_eq!(f.n_batches, 10);
        assert_eq!(f.m_abs, 0.5);
        assert_eq!(f.m2, 0.25);
        assert_eq!(f.m_abs_se, 0.0);
        assert!((f.binder.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(f.binder_se.unwrap() < 1e-12);
        assert_eq!(f.energy_per_site, -1.0);
    }

    #[test]
    fn run_stats_errors() {
        assert!(RunStats::new(5).finalize().is_err());
        let mut s = RunStats::new(5);
        s.push(0.0, 0.0);
        let f = s.finalize().unwrap();
        assert_eq!(f.binder, None);
        assert!(f.m_abs_se.is_nan());
    }

    #[test]
    fn batch_length_rule() {
        assert_eq!(batch_len_for(10_000), 100);
        assert_eq!(batch_len_for(1_000_000), 1000);
    }

    #[test]
    fn scan_validation() {
        let bad = ScanConfig::new(8, 10, 10);
        assert!(matches!(bad.validate(), Err(Error::InvalidSchedule(_))));
        let odd = ScanConfig {
            rows: 7,
            ..ScanConfig::new(8, 10, 1)
        };
        assert!(odd.validate().is_err());
        assert!(run_scan(&[], &ScanConfig::new(8, 10, 1)).is_err());
        assert!(run_scan(&[-1.0], &ScanConfig::new(8, 10, 1)).is_err());
    }

    #[test]
    fn temperature_ranges() {
        let t = temperature_range(0.94, 1.06, 0.01).unwrap();
        assert_eq!(t.len(), 13);
        assert!((t[0] / T_C - 0.94).abs() < 1e-12);
        assert!((t[12] / T_C - 1.06).abs() < 1e-12);
        assert!(temperature_range(1.0, 0.5, 0.1).is_err());
    }

    fn row(t: f64, u: Option<f64>) -> ScanRow {
        let mut stats = RunStats::new(1);
        stats.push(0.5, -1.0);
        let mut stats = stats.finalize().unwrap();
        stats.binder = u;
        ScanRow {
            temperature: t * T_C,
            t_over_tc: t,
            beta: 1.0 / (t * T_C),
            seed: 0,
            stats,
        }
    }

    #[test]
    fn crossing_interpolates() {
        let t = [0.98, 0.99, 1.0, 1.01, 1.02];
        let small: Vec<ScanRow> = t.iter().map(|&x| row(x, Some(0.6 - 5.0 * (x - 1.0)))).collect();
        let large: Vec<ScanRow> = t.iter().map(|&x| row(x, Some(0.6 - 10.0 * (x - 1.005)))).collect();
        // 0.6 - 5(x-1) = 0.6 - 10(x-1.005)  =>  x = 1.01.
        let x = binder_crossing(&small, &large).unwrap();
        assert!((x - 1.01).abs() < 1e-12, "{x}");
        assert_eq!(binder_crossing(&small, &small[..4]), None);
        let mut missing = large.clone();
        missing[2].stats.binder = None;
        assert_eq!(binder_crossing(&small, &missing), None);
        // Parallel curves never cross.
        let shifted: Vec<ScanRow> = t.iter().map(|&x| row(x, Some(0.7 - 5.0 * (x - 1.0)))).collect();
        assert_eq!(binder_crossing(&small, &shifted), None);
    }

    #[test]
    fn small_scan_is_deterministic() {
        let cfg = ScanConfig {
            seed: 3,
            ..ScanConfig::new(8, 400, 100)
        };
        let a = run_scan(&[1.5, 3.0], &cfg).unwrap();
        let b = run_scan(&[1.5, 3.0], &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].seed, a[1].seed);
        assert!(a[0].stats.m_abs > a[1].stats.m_abs);
    }
}
