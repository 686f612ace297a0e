use crate::error::Result;
use crate::lattice::{build_kernels, Color, CompactState, HaloSet, KernelSet, SpinGrid, SpinLattice, SubGrid};

use super::{matmul_acc_prec, Precision};

/// How a compact tile's neighbor sums are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumMethod {
    /// Two dense products with the shifted-diagonal kernel.
    Matmul,
    /// Direct 4-point stencil.
    Stencil,
}

/// Reusable buffers for the tile kernels.
#[derive(Debug, Default, Clone)]
pub struct NnScratch {
    quant: Vec<f32>,
}

/// Neighbor sums laid out like the array they were computed from
/// (tile-major, `tile x tile` blocks).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborField {
    rows: usize,
    cols: usize,
    tile: usize,
    values: Vec<f32>,
}

impl NeighborField {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        let b = self.tile;
        let n = self.cols / b;
        self.values[((row / b * n + col / b) * b + row % b) * b + col % b]
    }

    pub fn to_row_major(&self) -> Vec<f32> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.get(r, c))
            .collect()
    }
}

/// Neighbor sums of every site of tile `(ti, tj)`: `T*K + K*T` plus the
/// edge rows/columns of the adjacent tiles (or the halos at shard edges).
#[allow(clippy::too_many_arguments)]
pub fn naive_tile_nn(
    lattice: &SpinLattice,
    ti: usize,
    tj: usize,
    halos: &HaloSet,
    kernels: &KernelSet,
    precision: Precision,
    out: &mut [f32],
    scratch: &mut NnScratch,
) {
    let b = lattice.tile();
    let (m, n) = lattice.tile_grid();
    let t = lattice.tile_block(ti, tj);
    let out = &mut out[..b * b];
    out.fill(0.0);
    matmul_acc_prec(t, &kernels.k, out, b, precision, &mut scratch.quant);
    matmul_acc_prec(&kernels.k, t, out, b, precision, &mut scratch.quant);

    // north
    if ti > 0 {
        let nb = lattice.tile_block(ti - 1, tj);
        for c in 0..b {
            out[c] += nb[(b - 1) * b + c];
        }
    } else {
        for c in 0..b {
            out[c] += halos.north[tj * b + c];
        }
    }
    // south
    if ti + 1 < m {
        let sb = lattice.tile_block(ti + 1, tj);
        for c in 0..b {
            out[(b - 1) * b + c] += sb[c];
        }
    } else {
        for c in 0..b {
            out[(b - 1) * b + c] += halos.south[tj * b + c];
        }
    }
    // west
    if tj > 0 {
        let wb = lattice.tile_block(ti, tj - 1);
        for a in 0..b {
            out[a * b] += wb[a * b + b - 1];
        }
    } else {
        for a in 0..b {
            out[a * b] += halos.west[ti * b + a];
        }
    }
    // east
    if tj + 1 < n {
        let eb = lattice.tile_block(ti, tj + 1);
        for a in 0..b {
            out[a * b + b - 1] += eb[a * b];
        }
    } else {
        for a in 0..b {
            out[a * b + b - 1] += halos.east[ti * b + a];
        }
    }
}

#[inline]
fn block(grid: &[f32], ti: usize, tj: usize, n: usize, bb: usize) -> &[f32] {
    let start = (ti * n + tj) * bb;
    &grid[start..start + bb]
}

/// Neighbor sums of tile `(ti, tj)` of the compact sub-grid `active`.
///
/// Each site of `active` has two horizontal neighbors in the sub-grid that
/// shares its row parity and two vertical neighbors in the one that shares
/// its column parity. One of each pair sits at the same compact index; the
/// other is shifted back (even parity) or forward (odd parity). With
/// `SumMethod::Matmul` the shifts are products with `khat` / `khat_t`:
///
/// ```text
/// nn(g00) = g01*Khat   + Khat^T*g10     nn(g11) = Khat*g01   + g10*Khat^T
/// nn(g01) = g00*Khat^T + Khat^T*g11     nn(g10) = Khat*g00   + g11*Khat
/// ```
#[allow(clippy::too_many_arguments)]
pub fn compact_tile_nn(
    state: &CompactState,
    active: SubGrid,
    ti: usize,
    tj: usize,
    halos: &HaloSet,
    kernels: Option<&KernelSet>,
    method: SumMethod,
    precision: Precision,
    out: &mut [f32],
    scratch: &mut NnScratch,
) {
    let b = state.tile();
    let bb = b * b;
    let (mt, nt) = state.tile_grid();
    let (rp, cp) = (active.row_parity(), active.col_parity());
    let hgrid = state.grid(SubGrid::from_parity(rp, 1 - cp));
    let vgrid = state.grid(SubGrid::from_parity(1 - rp, cp));
    let h_back = cp == 0;
    let v_back = rp == 0;
    let h = block(hgrid, ti, tj, nt, bb);
    let v = block(vgrid, ti, tj, nt, bb);
    let out = &mut out[..bb];

    match method {
        SumMethod::Matmul => {
            let ks = kernels.expect("matmul neighbor sums need a kernel set");
            debug_assert_eq!(ks.tile, b);
            out.fill(0.0);
            let right = if h_back { &ks.khat } else { &ks.khat_t };
            let left = if v_back { &ks.khat_t } else { &ks.khat };
            matmul_acc_prec(h, right, out, b, precision, &mut scratch.quant);
            matmul_acc_prec(left, v, out, b, precision, &mut scratch.quant);
        }
        SumMethod::Stencil => {
            for ((o, &hv), &vv) in out.iter_mut().zip(h).zip(v) {
                *o = hv + vv;
            }
            for a in 0..b {
                let row = &mut out[a * b..(a + 1) * b];
                let hrow = &h[a * b..(a + 1) * b];
                if h_back {
                    for (o, &x) in row[1..].iter_mut().zip(&hrow[..b - 1]) {
                        *o += x;
                    }
                } else {
                    for (o, &x) in row[..b - 1].iter_mut().zip(&hrow[1..]) {
                        *o += x;
                    }
                }
            }
            if v_back {
                for a in 1..b {
                    let (prev, cur) = (&v[(a - 1) * b..a * b], &mut out[a * b..(a + 1) * b]);
                    for (o, &x) in cur.iter_mut().zip(prev) {
                        *o += x;
                    }
                }
            } else {
                for a in 0..b - 1 {
                    let (next, cur) = (&v[(a + 1) * b..(a + 2) * b], &mut out[a * b..(a + 1) * b]);
                    for (o, &x) in cur.iter_mut().zip(next) {
                        *o += x;
                    }
                }
            }
        }
    }

    // Cross-tile and cross-shard neighbors.
    if h_back {
        if tj > 0 {
            let w = block(hgrid, ti, tj - 1, nt, bb);
            for a in 0..b {
                out[a * b] += w[a * b + b - 1];
            }
        } else {
            for a in 0..b {
                out[a * b] += halos.west[2 * (ti * b + a) + rp];
            }
        }
    } else if tj + 1 < nt {
        let e = block(hgrid, ti, tj + 1, nt, bb);
        for a in 0..b {
            out[a * b + b - 1] += e[a * b];
        }
    } else {
        for a in 0..b {
            out[a * b + b - 1] += halos.east[2 * (ti * b + a) + rp];
        }
    }
    if v_back {
        if ti > 0 {
            let nb = block(vgrid, ti - 1, tj, nt, bb);
            for c in 0..b {
                out[c] += nb[(b - 1) * b + c];
            }
        } else {
            for c in 0..b {
                out[c] += halos.north[2 * (tj * b + c) + cp];
            }
        }
    } else if ti + 1 < mt {
        let s = block(vgrid, ti + 1, tj, nt, bb);
        for c in 0..b {
            out[(b - 1) * b + c] += s[c];
        }
    } else {
        for c in 0..b {
            out[(b - 1) * b + c] += halos.south[2 * (tj * b + c) + cp];
        }
    }
}

/// Toroidal neighbor sums of every site via the tile matmul formulation.
pub fn neighbor_sum_naive(lattice: &SpinLattice) -> NeighborField {
    let halos = HaloSet::self_wrap(lattice);
    neighbor_sum_naive_with_halos(lattice, &halos).expect("self halos always fit")
}

/// Like [`neighbor_sum_naive`] but with explicit halos, for a lattice that is
/// one shard of a larger torus.
pub fn neighbor_sum_naive_with_halos(lattice: &SpinLattice, halos: &HaloSet) -> Result<NeighborField> {
    halos.check_shape(lattice.rows(), lattice.cols())?;
    let kernels = build_kernels(lattice.tile())?;
    let b = lattice.tile();
    let bb = b * b;
    let (m, n) = lattice.tile_grid();
    let mut values = vec![0.0; lattice.sites()];
    let mut scratch = NnScratch::default();
    for ti in 0..m {
        for tj in 0..n {
            let start = (ti * n + tj) * bb;
            naive_tile_nn(
                lattice,
                ti,
                tj,
                halos,
                &kernels,
                lattice.precision(),
                &mut values[start..start + bb],
                &mut scratch,
            );
        }
    }
    Ok(NeighborField {
        rows: lattice.rows(),
        cols: lattice.cols(),
        tile: b,
        values,
    })
}

fn compact_fields(
    state: &CompactState,
    color: Color,
    halos: &HaloSet,
    method: SumMethod,
) -> Result<(NeighborField, NeighborField)> {
    halos.check_shape(state.rows(), state.cols())?;
    let kernels = build_kernels(state.tile())?;
    let b = state.tile();
    let bb = b * b;
    let (mt, nt) = state.tile_grid();
    let mut scratch = NnScratch::default();
    let mut fields = color.sub_grids().map(|sub| {
        let mut values = vec![0.0; state.sites() / 4];
        for ti in 0..mt {
            for tj in 0..nt {
                let start = (ti * nt + tj) * bb;
                compact_tile_nn(
                    state,
                    sub,
                    ti,
                    tj,
                    halos,
                    Some(&kernels),
                    method,
                    state.precision(),
                    &mut values[start..start + bb],
                    &mut scratch,
                );
            }
        }
        Some(NeighborField {
            rows: state.rows() / 2,
            cols: state.cols() / 2,
            tile: b,
            values,
        })
    });
    Ok((fields[0].take().unwrap(), fields[1].take().unwrap()))
}

/// Neighbor sums of the two sub-grids of `color` (matmul formulation).
pub fn neighbor_sum_compact(
    state: &CompactState,
    color: Color,
    halos: &HaloSet,
) -> Result<(NeighborField, NeighborField)> {
    compact_fields(state, color, halos, SumMethod::Matmul)
}

/// Neighbor sums of the two sub-grids of `color` (direct stencil).
pub fn neighbor_sum_conv(
    state: &CompactState,
    color: Color,
    halos: &HaloSet,
) -> Result<(NeighborField, NeighborField)> {
    compact_fields(state, color, halos, SumMethod::Stencil)
}

/// Direct stencil over the halo-padded lattice.
pub fn neighbor_sum_conv_lattice(lattice: &SpinLattice, halos: &HaloSet) -> Result<NeighborField> {
    let (h, w) = (lattice.rows(), lattice.cols());
    halos.check_shape(h, w)?;
    // (h+2) x (w+2) padded copy; corners are never read.
    let pw = w + 2;
    let mut padded = vec![0.0f32; (h + 2) * pw];
    for r in 0..h {
        for c in 0..w {
            padded[(r + 1) * pw + c + 1] = lattice.get(r, c);
        }
        padded[(r + 1) * pw] = halos.west[r];
        padded[(r + 1) * pw + w + 1] = halos.east[r];
    }
    for c in 0..w {
        padded[c + 1] = halos.north[c];
        padded[(h + 1) * pw + c + 1] = halos.south[c];
    }
    let b = lattice.tile();
    let mut field = NeighborField {
        rows: h,
        cols: w,
        tile: b,
        values: vec![0.0; h * w],
    };
    for r in 0..h {
        for c in 0..w {
            let p = (r + 1) * pw + c + 1;
            let s = padded[p - pw] + padded[p + pw] + padded[p - 1] + padded[p + 1];
            let i = lattice.index(r, c);
            field.values[i] = s;
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::compact_split;
    use proptest::prelude::*;

    /// Plain modular-index stencil, independent of tiling and halos.
    fn direct(rows: usize, cols: usize, s: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let at = |rr: usize, cc: usize| s[(rr % rows) * cols + cc % cols];
                out[r * cols + c] = at(r + rows - 1, c) + at(r + 1, c) + at(r, c + cols - 1) + at(r, c + 1);
            }
        }
        out
    }

    fn random_spins(n: usize, seed: u64) -> Vec<f32> {
        let mut x = seed | 1;
        (0..n)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                if x & 1 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect()
    }

    #[test]
    fn uniform_lattice_sums_to_four() {
        let l = SpinLattice::new(8, 8, 4).unwrap();
        assert!(neighbor_sum_naive(&l).values().iter().all(|&v| v == 4.0));
        let c = compact_split(&l).unwrap();
        let halos = HaloSet::self_wrap(&c);
        for color in [Color::Black, Color::White] {
            let (a, b) = neighbor_sum_compact(&c, color, &halos).unwrap();
            assert!(a.values().iter().chain(b.values()).all(|&v| v == 4.0));
            let (a, b) = neighbor_sum_conv(&c, color, &halos).unwrap();
            assert!(a.values().iter().chain(b.values()).all(|&v| v == 4.0));
        }
    }

    #[test]
    fn checkerboard_sums() {
        let l = SpinLattice::checkerboard(8, 8, 2).unwrap();
        let nn = neighbor_sum_naive(&l);
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(nn.get(r, c), -4.0 * l.get(r, c));
            }
        }
        let c = compact_split(&l).unwrap();
        let (a, b) = neighbor_sum_compact(&c, Color::Black, &HaloSet::self_wrap(&c)).unwrap();
        assert!(a.values().iter().chain(b.values()).all(|&v| v == -4.0));
    }

    #[test]
    fn single_defect() {
        let l = SpinLattice::from_fn(8, 8, 2, |r, c| if (r, c) == (0, 0) { -1.0 } else { 1.0 }).unwrap();
        let expected = |r: usize, c: usize| match (r, c) {
            (0, 1) | (1, 0) | (0, 7) | (7, 0) => 2.0,
            _ => 4.0,
        };
        let naive = neighbor_sum_naive(&l);
        let conv = neighbor_sum_conv_lattice(&l, &HaloSet::self_wrap(&l)).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(naive.get(r, c), expected(r, c));
                assert_eq!(conv.get(r, c), expected(r, c));
            }
        }
    }

    #[test]
    fn kernel_action_on_open_tile() {
        // T*K + K*T gives in-tile 4-neighbor sums with open edges.
        let b = 6;
        let ks = build_kernels(b).unwrap();
        let t = random_spins(b * b, 99);
        let mut out = vec![0.0; b * b];
        crate::numerics::matmul_acc(&t, &ks.k, &mut out, b);
        crate::numerics::matmul_acc(&ks.k, &t, &mut out, b);
        for i in 0..b {
            for j in 0..b {
                let mut s = 0.0;
                if i > 0 {
                    s += t[(i - 1) * b + j];
                }
                if i + 1 < b {
                    s += t[(i + 1) * b + j];
                }
                if j > 0 {
                    s += t[i * b + j - 1];
                }
                if j + 1 < b {
                    s += t[i * b + j + 1];
                }
                assert_eq!(out[i * b + j], s);
            }
        }
    }

    #[test]
    fn halo_shape_is_checked() {
        let l = SpinLattice::new(8, 8, 2).unwrap();
        let mut h = HaloSet::self_wrap(&l);
        h.east.pop();
        assert!(neighbor_sum_naive_with_halos(&l, &h).is_err());
        let c = compact_split(&l).unwrap();
        assert!(neighbor_sum_compact(&c, Color::Black, &h).is_err());
    }

    fn check_all_backends(rows: usize, cols: usize, tile: usize, seed: u64, precision: Precision) {
        let spins = random_spins(rows * cols, seed);
        let oracle = direct(rows, cols, &spins);
        let l = SpinLattice::from_row_major(rows, cols, tile, &spins)
            .unwrap()
            .with_precision(precision);
        assert_eq!(neighbor_sum_naive(&l).to_row_major(), oracle);
        let halos = HaloSet::self_wrap(&l);
        assert_eq!(neighbor_sum_conv_lattice(&l, &halos).unwrap().to_row_major(), oracle);
        let c = compact_split(&l).unwrap();
        for color in [Color::Black, Color::White] {
            let [s0, s1] = color.sub_grids();
            let mm = neighbor_sum_compact(&c, color, &halos).unwrap();
            let cv = neighbor_sum_conv(&c, color, &halos).unwrap();
            assert_eq!(mm, cv);
            for (field, sub) in [(&mm.0, s0), (&mm.1, s1)] {
                for hr in 0..rows / 2 {
                    for hc in 0..cols / 2 {
                        let r = 2 * hr + sub.row_parity();
                        let col = 2 * hc + sub.col_parity();
                        assert_eq!(field.get(hr, hc), oracle[r * cols + col]);
                    }
                }
            }
        }
    }

    #[test]
    fn random_16_matches_stencil_oracle() {
        check_all_backends(16, 16, 4, 5, Precision::F32);
        check_all_backends(16, 16, 2, 6, Precision::Bf16);
        check_all_backends(32, 32, 8, 7, Precision::F32);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn backends_agree(
            tile in prop::sample::select(vec![2usize, 4, 6]),
            m in 1usize..4,
            n in 1usize..4,
            seed in any::<u64>(),
            bf16 in any::<bool>(),
        ) {
            let precision = if bf16 { Precision::Bf16 } else { Precision::F32 };
            check_all_backends(2 * tile * m, 2 * tile * n, tile, seed, precision);
        }

        #[test]
        fn sums_are_even_and_bounded(seed in any::<u64>()) {
            let spins = random_spins(64, seed);
            let l = SpinLattice::from_row_major(8, 8, 2, &spins).unwrap();
            for &v in neighbor_sum_naive(&l).values() {
                prop_assert!([-4.0, -2.0, 0.0, 2.0, 4.0].contains(&v));
            }
        }
    }
}
