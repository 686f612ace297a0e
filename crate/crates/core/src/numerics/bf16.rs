/// Rounds an `f32` to the nearest bfloat16 value (ties to even) and returns
/// it widened back to `f32`. NaN and infinities pass through unchanged.
#[inline]
pub fn quantize_bf16(x: f32) -> f32 {
    if x.is_nan() {
        return x;
    }
    let bits = x.to_bits();
    let lsb = (bits >> 16) & 1;
    let rounded = bits.wrapping_add(0x7fff + lsb) & 0xffff_0000;
    f32::from_bits(rounded)
}

pub fn quantize_slice(values: &mut [f32]) {
    for v in values {
        *v = quantize_bf16(*v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_values_pass_through() {
        assert_eq!(quantize_bf16(1.0), 1.0);
        assert_eq!(quantize_bf16(-4.0), -4.0);
        for i in -256..=256 {
            assert_eq!(quantize_bf16(i as f32), i as f32);
        }
    }

    #[test]
    fn rounds_point_two() {
        assert_eq!(quantize_bf16(0.2), 0.200_195_31);
    }

    #[test]
    fn specials() {
        assert!(quantize_bf16(f32::NAN).is_nan());
        assert_eq!(quantize_bf16(f32::INFINITY), f32::INFINITY);
        assert_eq!(quantize_bf16(f32::NEG_INFINITY), f32::NEG_INFINITY);
        assert_eq!(quantize_bf16(-0.0).to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn ties_go_to_even() {
        // 1 + 2^-8 lies halfway between 1 and 1 + 2^-7.
        assert_eq!(quantize_bf16(1.0 + 2f32.powi(-8)), 1.0);
        // 1 + 3*2^-8 lies halfway between 1 + 2^-7 and 1 + 2^-6.
        assert_eq!(quantize_bf16(1.0 + 3.0 * 2f32.powi(-8)), 1.0 + 2f32.powi(-6));
    }

    proptest! {
        #[test]
        fn matches_half_crate(bits in any::<u32>()) {
            let x = f32::from_bits(bits);
            prop_assume!(!x.is_nan());
            let reference = half::bf16::from_f32(x).to_f32();
            prop_assert_eq!(quantize_bf16(x).to_bits(), reference.to_bits());
        }

        #[test]
        fn idempotent(x in -1.0e30f32..1.0e30) {
            let q = quantize_bf16(x);
            prop_assert_eq!(quantize_bf16(q), q);
            prop_assert_eq!(q.to_bits() & 0xffff, 0);
        }

        #[test]
        fn monotonic(x in -1.0e6f32..1.0e6, y in -1.0e6f32..1.0e6) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(quantize_bf16(lo) <= quantize_bf16(hi));
        }

        #[test]
        fn within_half_ulp(x in 1.0e-30f32..1.0e30) {
            let q = quantize_bf16(x);
            let ulp = 2f32.powi(x.log2().floor() as i32 - 7);
            prop_assert!((q - x).abs() <= 0.5 * ulp * (1.0 + 1e-6));
        }
    }
}
