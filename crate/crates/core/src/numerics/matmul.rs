use super::{quantize_bf16, Precision};

/// Cache block edge for [`matmul_acc`].
pub const MATMUL_BLOCK: usize = 32;

/// `c += a * b` for row-major `n x n` matrices.
pub fn matmul_acc(a: &[f32], b: &[f32], c: &mut [f32], n: usize) {
    debug_assert!(a.len() >= n * n && b.len() >= n * n && c.len() >= n * n);
    for kk in (0..n).step_by(MATMUL_BLOCK) {
        let k_end = (kk + MATMUL_BLOCK).min(n);
        for jj in (0..n).step_by(4 * MATMUL_BLOCK) {
            let j_end = (jj + 4 * MATMUL_BLOCK).min(n);
            for i in 0..n {
                let c_row = &mut c[i * n + jj..i * n + j_end];
                let a_row = &a[i * n..i * n + n];
                for k in kk..k_end {
                    let aik = a_row[k];
                    if aik == 0.0 {
                        continue;
                    }
                    let b_row = &b[k * n + jj..k * n + j_end];
                    for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                        *cv += aik * bv;
                    }
                }
            }
        }
    }
}

/// [`matmul_acc`] with operands rounded to `precision` first. Accumulation
/// is always 32-bit. `scratch` holds the rounded operands.
pub fn matmul_acc_prec(a: &[f32], b: &[f32], c: &mut [f32], n: usize, precision: Precision, scratch: &mut Vec<f32>) {
    match precision {
        Precision::F32 => matmul_acc(a, b, c, n),
        Precision::Bf16 => {
            let nn = n * n;
            scratch.clear();
            scratch.extend(a[..nn].iter().map(|&x| quantize_bf16(x)));
            scratch.extend(b[..nn].iter().map(|&x| quantize_bf16(x)));
            let (qa, qb) = scratch.split_at(nn);
            matmul_acc(qa, qb, c, n);
        }
    }
}
