//! Counter-based uniform streams (Philox4x32-10).
//!
//! Every draw is a pure function of a [`StreamKey`] and a flat index, so any
//! worker can produce the draws for any region of the lattice in any order.
//! The Metropolis updates use one stream per `(seed, sweep, color, row
//! parity)` and index it by global half-lattice coordinates, which makes
//! every backend and every worker mesh consume the same draw at each site.

use serde::{Deserialize, Serialize};

use crate::lattice::Color;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Largest step value representable in a counter (30 high bits + 32 low bits).
pub const MAX_STEP: u64 = (1 << 62) - 1;

/// Identifies one independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub worker: u16,
    pub step: u64,
    pub color: Color,
    pub subgrid: u8,
}

impl StreamKey {
    pub fn new(seed: u64, step: u64, color: Color, subgrid: u8) -> Self {
        StreamKey {
            seed,
            worker: 0,
            step,
            color,
            subgrid,
        }
    }

    #[inline]
    fn key(&self) -> [u32; 2] {
        [self.seed as u32, (self.seed >> 32) as u32]
    }

    #[inline]
    fn counter(&self, block: u64) -> [u32; 4] {
        debug_assert!(block < 1 << 48);
        debug_assert!(self.step <= MAX_STEP);
        [
            block as u32,
            ((block >> 32) as u32 & 0xffff) | ((self.worker as u32) << 16),
            self.step as u32,
            ((self.step >> 32) as u32 & 0x3fff_ffff)
                | ((self.color.index() as u32) << 31)
                | (((self.subgrid & 1) as u32) << 30),
        ]
    }
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 bijection with 10 rounds.
#[inline(always)]
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

/// Top 24 bits of `x` as a float in `[0, 1)`.
#[inline(always)]
pub fn to_unit(x: u32) -> f32 {
    (x >> 8) as f32 * (1.0 / 16_777_216.0)
}

/// Draw number `index` of stream `key`.
pub fn uniform_at(key: &StreamKey, index: u64) -> f32 {
    let out = philox4x32_10(key.counter(index / 4), key.key());
    to_unit(out[(index % 4) as usize])
}

/// Fills `out` (a multiple of 4 long) with whole blocks from `first_block`.
#[inline(always)]
fn fill_blocks_generic(key: &StreamKey, first_block: u64, out: &mut [f32]) {
    let k = key.key();
    let base = key.counter(0);
    // Independent blocks in a flat loop; this shape vectorizes.
    for (i, dst) in out.chunks_exact_mut(4).enumerate() {
        let b = first_block + i as u64;
        let ctr = [b as u32, base[1] | ((b >> 32) as u32 & 0xffff), base[2], base[3]];
        let r = philox4x32_10(ctr, k);
        for j in 0..4 {
            dst[j] = to_unit(r[j]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fill_blocks_avx2(key: &StreamKey, first_block: u64, out: &mut [f32]) {
    fill_blocks_generic(key, first_block, out)
}

fn fill_blocks(key: &StreamKey, first_block: u64, out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { fill_blocks_avx2(key, first_block, out) };
        }
    }
    fill_blocks_generic(key, first_block, out)
}

/// Fills `out` with draws `start, start+1, ...` of stream `key`.
pub fn fill_uniform(key: &StreamKey, start: u64, out: &mut [f32]) {
    let k = key.key();
    let mut idx = start;
    let mut pos = 0;
    // Unaligned head, one block at a time.
    while pos < out.len() && !idx.is_multiple_of(4) {
        let block = philox4x32_10(key.counter(idx / 4), k);
        let lane = (idx % 4) as usize;
        let take = (4 - lane).min(out.len() - pos);
        for (o, &w) in out[pos..pos + take].iter_mut().zip(&block[lane..lane + take]) {
            *o = to_unit(w);
        }
        pos += take;
        idx += take as u64;
    }
    let whole = (out.len() - pos) / 4 * 4;
    fill_blocks(key, idx / 4, &mut out[pos..pos + whole]);
    pos += whole;
    idx += whole as u64;
    while pos < out.len() {
        let block = philox4x32_10(key.counter(idx / 4), k);
        let take = 4.min(out.len() - pos);
        for (o, &w) in out[pos..pos + take].iter_mut().zip(&block[..take]) {
            *o = to_unit(w);
        }
        pos += take;
        idx += take as u64;
    }
}

/// A row-major block of draws with the given shape; entry `i` is draw `i`.
pub fn uniform_block(key: &StreamKey, shape: &[usize]) -> Vec<f32> {
    let n = shape.iter().product();
    let mut out = vec![0.0; n];
    fill_uniform(key, 0, &mut out);
    out
}

/// The draw consumed by site `(row, col)` of a torus `global_cols` wide
/// during the `color` phase of sweep `step`.
pub fn site_uniform(seed: u64, step: u64, color: Color, row: usize, col: usize, global_cols: usize) -> f32 {
    let key = StreamKey::new(seed, step, color, (row & 1) as u8);
    uniform_at(&key, ((row / 2) * (global_cols / 2) + col / 2) as u64)
}

/// SplitMix64 finalizer, for deriving child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th independent child of `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}
