//! Spin lattices on a torus, their tiled and compact (parity-split) layouts,
//! the kernel matrices used for matmul neighbor sums, and halo strips.
//!
//! A lattice of `rows x cols` sites is stored as a grid of `tile x tile`
//! blocks (`[m, n, B, B]`, tile-major). The compact layout regroups every
//! `2B x 2B` super-tile into four `B x B` blocks holding the sites of one
//! (row parity, column parity) class each.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Precision;

/// Checkerboard color. Black sites have `(row + col)` even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Black,
    White,
}

impl Color {
    pub fn of_site(row: usize, col: usize) -> Color {
        if (row + col).is_multiple_of(2) {
            Color::Black
        } else {
            Color::White
        }
    }

    pub fn other(self) -> Color {
        match self {
            Color::Black => Color::White,
            Color::White => Color::Black,
        }
    }

    /// 0 for black, 1 for white.
    pub fn index(self) -> usize {
        match self {
            Color::Black => 0,
            Color::White => 1,
        }
    }

    /// The two compact sub-grids holding sites of this color, ordered by row parity.
    pub fn sub_grids(self) -> [SubGrid; 2] {
        match self {
            Color::Black => [SubGrid::G00, SubGrid::G11],
            Color::White => [SubGrid::G01, SubGrid::G10],
        }
    }
}

/// One of the four parity classes of the compact layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubGrid {
    G00,
    G01,
    G10,
    G11,
}

impl SubGrid {
    pub const ALL: [SubGrid; 4] = [SubGrid::G00, SubGrid::G01, SubGrid::G10, SubGrid::G11];

    pub fn from_parity(row_parity: usize, col_parity: usize) -> SubGrid {
        match (row_parity & 1, col_parity & 1) {
            (0, 0) => SubGrid::G00,
            (0, 1) => SubGrid::G01,
            (1, 0) => SubGrid::G10,
            _ => SubGrid::G11,
        }
    }

    pub fn row_parity(self) -> usize {
        match self {
            SubGrid::G00 | SubGrid::G01 => 0,
            SubGrid::G10 | SubGrid::G11 => 1,
        }
    }

    pub fn col_parity(self) -> usize {
        match self {
            SubGrid::G00 | SubGrid::G10 => 0,
            SubGrid::G01 | SubGrid::G11 => 1,
        }
    }

    pub fn index(self) -> usize {
        self.row_parity() * 2 + self.col_parity()
    }

    pub fn color(self) -> Color {
        Color::of_site(self.row_parity(), self.col_parity())
    }
}

fn check_tile(tile: usize) -> Result<()> {
    if tile < 2 || !tile.is_multiple_of(2) {
        return Err(Error::InvalidTile(tile));
    }
    Ok(())
}

fn check_spin(v: f32) -> Result<f32> {
    if v == 1.0 || v == -1.0 {
        Ok(v)
    } else {
        Err(Error::InvalidSpin(v))
    }
}

/// Read access to spins by torus-local coordinates.
pub trait SpinGrid {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn get(&self, row: usize, col: usize) -> f32;

    fn sites(&self) -> usize {
        self.rows() * self.cols()
    }

    fn to_row_major(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.sites());
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                out.push(self.get(r, c));
            }
        }
        out
    }

    /// SHA-256 over the row-major spins encoded as one byte each.
    fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        let bytes: Vec<u8> = self
            .to_row_major()
            .into_iter()
            .map(|s| if s > 0.0 { 1u8 } else { 0xff })
            .collect();
        hasher.update(&bytes);
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Top/bottom rows and left/right columns.
    fn edges(&self) -> Edges {
        let (h, w) = (self.rows(), self.cols());
        Edges {
            top: (0..w).map(|c| self.get(0, c)).collect(),
            bottom: (0..w).map(|c| self.get(h - 1, c)).collect(),
            left: (0..h).map(|r| self.get(r, 0)).collect(),
            right: (0..h).map(|r| self.get(r, w - 1)).collect(),
        }
    }
}

/// The four one-site-wide boundary strips of a lattice or shard.
#[derive(Debug, Clone, PartialEq)]
pub struct Edges {
    pub top: Vec<f32>,
    pub bottom: Vec<f32>,
    pub left: Vec<f32>,
    pub right: Vec<f32>,
}

/// Strips received from the four toroidal neighbors of a shard.
///
/// `north[c]` is the spin directly above local site `(0, c)`, `south[c]` the
/// one below `(rows-1, c)`, `west[r]` left of `(r, 0)` and `east[r]` right
/// of `(r, cols-1)`. Strips carry both colors.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloSet {
    pub north: Vec<f32>,
    pub south: Vec<f32>,
    pub west: Vec<f32>,
    pub east: Vec<f32>,
}

impl HaloSet {
    /// Halos of a shard that is the whole torus: its own opposite edges.
    pub fn self_wrap<G: SpinGrid + ?Sized>(grid: &G) -> HaloSet {
        let e = grid.edges();
        HaloSet {
            north: e.bottom,
            south: e.top,
            west: e.right,
            east: e.left,
        }
    }

    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.north.len() != cols || self.south.len() != cols || self.west.len() != rows || self.east.len() != rows {
            return Err(Error::HaloMismatch(format!(
                "expected north/south {cols} and west/east {rows}, got {}/{}/{}/{}",
                self.north.len(),
                self.south.len(),
                self.west.len(),
                self.east.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.north.len() + self.south.len() + self.west.len() + self.east.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A torus of `rows x cols` spins stored as an `[m, n, B, B]` grid of tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinLattice {
    rows: usize,
    cols: usize,
    tile: usize,
    precision: Precision,
    spins: Vec<f32>,
}

impl SpinLattice {
    /// All-up lattice.
    pub fn new(rows: usize, cols: usize, tile: usize) -> Result<Self> {
        Self::filled(rows, cols, tile, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, tile: usize, value: f32) -> Result<Self> {
        check_tile(tile)?;
        check_spin(value)?;
        if rows == 0 || cols == 0 || !rows.is_multiple_of(2) || !cols.is_multiple_of(2) {
            return Err(Error::InvalidSize {
                rows,
                cols,
                reason: "both dimensions must be even and positive",
            });
        }
        if !rows.is_multiple_of(tile) || !cols.is_multiple_of(tile) {
            return Err(Error::InvalidSize {
                rows,
                cols,
                reason: "dimensions must be multiples of the tile side",
            });
        }
        Ok(SpinLattice {
            rows,
            cols,
            tile,
            precision: Precision::F32,
            spins: vec![value; rows * cols],
        })
    }

    pub fn from_fn(rows: usize, cols: usize, tile: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut lattice = Self::new(rows, cols, tile)?;
        for r in 0..rows {
            for c in 0..cols {
                let v = check_spin(f(r, c))?;
                lattice.set(r, c, v);
            }
        }
        Ok(lattice)
    }

    pub fn from_row_major(rows: usize, cols: usize, tile: usize, values: &[f32]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} lattice",
                values.len()
            )));
        }
        Self::from_fn(rows, cols, tile, |r, c| values[r * cols + c])
    }

    /// `(-1)^(row+col)`: black up, white down.
    pub fn checkerboard(rows: usize, cols: usize, tile: usize) -> Result<Self> {
        Self::from_fn(rows, cols, tile, |r, c| if (r + c) % 2 == 0 { 1.0 } else { -1.0 })
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    /// Tile grid dimensions `(m, n)`.
    pub fn tile_grid(&self) -> (usize, usize) {
        (self.rows / self.tile, self.cols / self.tile)
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        let b = self.tile;
        let n = self.cols / b;
        ((row / b * n + col / b) * b + row % b) * b + col % b
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        let i = self.index(row, col);
        self.spins[i] = value;
    }

    /// Tile `(ti, tj)` as a row-major `B x B` slice.
    pub fn tile_block(&self, ti: usize, tj: usize) -> &[f32] {
        let bb = self.tile * self.tile;
        let start = (ti * (self.cols / self.tile) + tj) * bb;
        &self.spins[start..start + bb]
    }

    pub fn tile_block_mut(&mut self, ti: usize, tj: usize) -> &mut [f32] {
        let bb = self.tile * self.tile;
        let start = (ti * (self.cols / self.tile) + tj) * bb;
        &mut self.spins[start..start + bb]
    }

    /// Raw tile-major storage.
    pub fn as_slice(&self) -> &[f32] {
        &self.spins
    }

    /// Same spins, different tile side.
    pub fn retiled(&self, tile: usize) -> Result<SpinLattice> {
        let mut out = SpinLattice::new(self.rows, self.cols, tile)?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(r, c, self.get(r, c));
            }
        }
        out.precision = self.precision;
        Ok(out)
    }

    /// Every site negated.
    pub fn negated(&self) -> SpinLattice {
        let mut out = self.clone();
        out.spins.iter_mut().for_each(|s| *s = -*s);
        out
    }

    /// Rectangular window `[r0, r0+h) x [c0, c0+w)` with tile side `tile`.
    pub fn window(&self, r0: usize, c0: usize, h: usize, w: usize, tile: usize) -> Result<Self> {
        if r0 + h > self.rows || c0 + w > self.cols {
            return Err(Error::DimensionMismatch(format!(
                "window {h}x{w} at ({r0},{c0}) exceeds {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(SpinLattice::from_fn(h, w, tile, |r, c| self.get(r0 + r, c0 + c))?.with_precision(self.precision))
    }
}

impl SpinGrid for SpinLattice {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    fn get(&self, row: usize, col: usize) -> f32 {
        self.spins[self.index(row, col)]
    }
}

/// Four parity sub-lattices, each an `[m', n', B, B]` tile grid.
///
/// `grid(G00)` holds (even row, even col) sites, `G01` (even, odd), `G10`
/// (odd, even) and `G11` (odd, odd); `G00`/`G11` are black, `G01`/`G10` white.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactState {
    rows: usize,
    cols: usize,
    tile: usize,
    precision: Precision,
    grids: [Vec<f32>; 4],
}

impl CompactState {
    fn check_dims(rows: usize, cols: usize, tile: usize) -> Result<()> {
        check_tile(tile)?;
        if rows == 0 || cols == 0 || !rows.is_multiple_of(2 * tile) || !cols.is_multiple_of(2 * tile) {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} is not a whole grid of {s}x{s} super-tiles",
                s = 2 * tile
            )));
        }
        Ok(())
    }

    pub fn filled(rows: usize, cols: usize, tile: usize, value: f32) -> Result<Self> {
        Self::check_dims(rows, cols, tile)?;
        check_spin(value)?;
        let n = rows * cols / 4;
        Ok(CompactState {
            rows,
            cols,
            tile,
            precision: Precision::F32,
            grids: [vec![value; n], vec![value; n], vec![value; n], vec![value; n]],
        })
    }

    /// Assembles a state from four tile-major `[m', n', B, B]` arrays.
    pub fn from_grids(rows: usize, cols: usize, tile: usize, grids: [Vec<f32>; 4]) -> Result<Self> {
        Self::check_dims(rows, cols, tile)?;
        let n = rows * cols / 4;
        for (i, g) in grids.iter().enumerate() {
            if g.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "sub-grid {i} has {} entries, expected {n}",
                    g.len()
                )));
            }
            for &v in g {
                check_spin(v)?;
            }
        }
        Ok(CompactState {
            rows,
            cols,
            tile,
            precision: Precision::F32,
            grids,
        })
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    /// `(m', n')`: super-tile grid dimensions.
    pub fn tile_grid(&self) -> (usize, usize) {
        (self.rows / (2 * self.tile), self.cols / (2 * self.tile))
    }

    pub fn grid(&self, sub: SubGrid) -> &[f32] {
        &self.grids[sub.index()]
    }

    pub fn grid_mut(&mut self, sub: SubGrid) -> &mut [f32] {
        &mut self.grids[sub.index()]
    }

    /// Index into a sub-grid for half-coordinates `(hr, hc)`.
    #[inline]
    pub fn half_index(&self, hr: usize, hc: usize) -> usize {
        let b = self.tile;
        let n = self.cols / (2 * b);
        ((hr / b * n + hc / b) * b + hr % b) * b + hc % b
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        let i = self.half_index(row / 2, col / 2);
        self.grids[SubGrid::from_parity(row, col).index()][i] = value;
    }
}

impl SpinGrid for CompactState {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    fn get(&self, row: usize, col: usize) -> f32 {
        self.grids[SubGrid::from_parity(row, col).index()][self.half_index(row / 2, col / 2)]
    }
}

/// Splits a lattice with tile side `B` into the four compact sub-lattices of
/// its `2B x 2B` super-tiles.
pub fn compact_split(lattice: &SpinLattice) -> Result<CompactState> {
    let (m, n) = lattice.tile_grid();
    if m % 2 != 0 || n % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "tile grid {m}x{n} does not pair into super-tiles"
        )));
    }
    let mut state =
        CompactState::filled(lattice.rows, lattice.cols, lattice.tile, 1.0)?.with_precision(lattice.precision);
    for r in 0..lattice.rows {
        for c in 0..lattice.cols {
            state.set(r, c, lattice.get(r, c));
        }
    }
    Ok(state)
}

/// Inverse of [`compact_split`].
pub fn compact_merge(state: &CompactState) -> SpinLattice {
    let mut lattice = SpinLattice::new(state.rows, state.cols, state.tile)
        .expect("compact dimensions are valid lattice dimensions")
        .with_precision(state.precision);
    for r in 0..state.rows {
        for c in 0..state.cols {
            lattice.set(r, c, state.get(r, c));
        }
    }
    lattice
}

/// Kernel and mask matrices for tile side `B`, all row-major `B x B`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub tile: usize,
    /// Ones on both off-diagonals.
    pub k: Vec<f32>,
    /// Ones on the diagonal and superdiagonal.
    pub khat: Vec<f32>,
    pub khat_t: Vec<f32>,
    /// Checkerboard mask, 1 on black sites.
    pub mask: Vec<f32>,
}

pub fn build_kernels(tile: usize) -> Result<KernelSet> {
    check_tile(tile)?;
    let b = tile;
    let mut k = vec![0.0; b * b];
    let mut khat = vec![0.0; b * b];
    let mut khat_t = vec![0.0; b * b];
    let mut mask = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            if i.abs_diff(j) == 1 {
                k[i * b + j] = 1.0;
            }
            if j == i || j == i + 1 {
                khat[i * b + j] = 1.0;
                khat_t[j * b + i] = 1.0;
            }
            mask[i * b + j] = ((i + j + 1) % 2) as f32;
        }
    }
    Ok(KernelSet {
        tile,
        k,
        khat,
        khat_t,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_lattice(rows: usize, cols: usize, tile: usize, seed: u64) -> SpinLattice {
        let mut x = seed;
        SpinLattice::from_fn(rows, cols, tile, |_, _| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            if x >> 63 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .unwrap()
    }

    #[test]
    fn kernels_b4() {
        let ks = build_kernels(4).unwrap();
        #[rustfmt::skip]
        let k = [0., 1., 0., 0., 1., 0., 1., 0., 0., 1., 0., 1., 0., 0., 1., 0.];
        #[rustfmt::skip]
        let khat = [1., 1., 0., 0., 0., 1., 1., 0., 0., 0., 1., 1., 0., 0., 0., 1.];
        assert_eq!(ks.k, k);
        assert_eq!(ks.khat, khat);
        assert_eq!(build_kernels(2).unwrap().mask, vec![1., 0., 0., 1.]);
    }

    #[test]
    fn kernel_invariants() {
        for b in [2, 4, 6, 8, 128] {
            let ks = build_kernels(b).unwrap();
            for i in 0..b {
                for j in 0..b {
                    assert_eq!(ks.k[i * b + j], ks.k[j * b + i]);
                    assert_eq!(ks.khat_t[i * b + j], ks.khat[j * b + i]);
                    assert_eq!(ks.mask[i * b + j], ((i + j + 1) % 2) as f32);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_tiles() {
        assert_eq!(build_kernels(3), Err(Error::InvalidTile(3)));
        assert_eq!(build_kernels(0), Err(Error::InvalidTile(0)));
        assert!(SpinLattice::new(8, 8, 1).is_err());
        assert!(SpinLattice::new(7, 8, 2).is_err());
        assert!(SpinLattice::new(12, 8, 8).is_err());
    }

    #[test]
    fn tile_major_layout() {
        let l = SpinLattice::from_fn(4, 4, 2, |r, c| if r == 2 && c == 1 { -1.0 } else { 1.0 }).unwrap();
        // (2,1) sits in tile (1,0) at local (0,1).
        assert_eq!(l.tile_block(1, 0), &[1.0, -1.0, 1.0, 1.0]);
        assert_eq!(l.as_slice().iter().filter(|&&s| s < 0.0).count(), 1);
    }

    #[test]
    fn split_uniform_and_checkerboard() {
        let up = SpinLattice::new(8, 8, 2).unwrap();
        let c = compact_split(&up).unwrap();
        for sub in SubGrid::ALL {
            assert!(c.grid(sub).iter().all(|&s| s == 1.0));
        }
        let cb = SpinLattice::checkerboard(8, 8, 2).unwrap();
        let c = compact_split(&cb).unwrap();
        assert!(c.grid(SubGrid::G00).iter().all(|&s| s == 1.0));
        assert!(c.grid(SubGrid::G11).iter().all(|&s| s == 1.0));
        assert!(c.grid(SubGrid::G01).iter().all(|&s| s == -1.0));
        assert!(c.grid(SubGrid::G10).iter().all(|&s| s == -1.0));
    }

    #[test]
    fn merge_builds_checkerboard() {
        let n = 4 * 4;
        let state =
            CompactState::from_grids(8, 8, 2, [vec![1.0; n], vec![-1.0; n], vec![-1.0; n], vec![1.0; n]]).unwrap();
        assert_eq!(compact_merge(&state), SpinLattice::checkerboard(8, 8, 2).unwrap());
    }

    #[test]
    fn split_requires_super_tiles() {
        let l = SpinLattice::new(12, 8, 4).unwrap();
        assert!(matches!(compact_split(&l), Err(Error::DimensionMismatch(_))));
        let bad = CompactState::from_grids(8, 8, 2, [vec![1.0; 16], vec![1.0; 16], vec![1.0; 16], vec![1.0; 15]]);
        assert!(matches!(bad, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn split_matches_direct_index_mapping() {
        let l = lcg_lattice(8, 8, 2, 11);
        let c = compact_split(&l).unwrap();
        // Direct mapping: super-tile (I, J) of side 4, offsets 2a + p, 2b + q.
        for sub in SubGrid::ALL {
            let g = c.grid(sub);
            for big_i in 0..2 {
                for big_j in 0..2 {
                    for a in 0..2 {
                        for b in 0..2 {
                            let r = big_i * 4 + 2 * a + sub.row_parity();
                            let col = big_j * 4 + 2 * b + sub.col_parity();
                            let idx = ((big_i * 2 + big_j) * 2 + a) * 2 + b;
                            assert_eq!(g[idx], l.get(r, col));
                            assert_eq!(Color::of_site(r, col), sub.color());
                        }
                    }
                }
            }
        }
        assert_eq!(compact_merge(&c), l);
    }

    #[test]
    fn self_wrap_halos() {
        let l = lcg_lattice(6, 4, 2, 3);
        let h = HaloSet::self_wrap(&l);
        for c in 0..4 {
            assert_eq!(h.north[c], l.get(5, c));
            assert_eq!(h.south[c], l.get(0, c));
        }
        for r in 0..6 {
            assert_eq!(h.west[r], l.get(r, 3));
            assert_eq!(h.east[r], l.get(r, 0));
        }
        assert!(h.check_shape(6, 4).is_ok());
        assert!(h.check_shape(4, 6).is_err());
    }

    #[test]
    fn checksum_distinguishes() {
        let a = SpinLattice::new(4, 4, 2).unwrap();
        let b = a.negated();
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(a.checksum(), a.retiled(4).unwrap().checksum());
    }
}
