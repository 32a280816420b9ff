//! Orthonormal 8×8 DCT-II and its inverse, computed separably.

use std::sync::OnceLock;

use crate::error::{shape_err, Result};

pub const BLOCK: usize = 8;

fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (k, row) in m.iter_mut().enumerate() {
            let scale = if k == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = scale * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * BLOCK) as f64).cos();
            }
        }
        m
    })
}

// out = M · X · Mᵀ (forward) or Mᵀ · X · M (inverse)
fn separable(block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let m = basis();
    let coef = |a: usize, b: usize| if inverse { m[b][a] } else { m[a][b] };
    let mut tmp = [0.0; 64];
    for r in 0..BLOCK {
        for c in 0..BLOCK {
            tmp[r * BLOCK + c] = (0..BLOCK).map(|k| coef(r, k) * block[k * BLOCK + c]).sum();
        }
    }
    let mut out = [0.0; 64];
    for r in 0..BLOCK {
        for c in 0..BLOCK {
            out[r * BLOCK + c] = (0..BLOCK).map(|k| tmp[r * BLOCK + k] * coef(c, k)).sum();
        }
    }
    out
}

fn as_block(block: &[f64]) -> Result<&[f64; 64]> {
    block
        .try_into()
        .or_else(|_| shape_err(format!("DCT block must have 64 samples, got {}", block.len())))
}

/// Forward transform of a row-major 8×8 block.
pub fn dct8x8(block: &[f64]) -> Result<[f64; 64]> {
    Ok(separable(as_block(block)?, false))
}

pub fn idct8x8(coeffs: &[f64]) -> Result<[f64; 64]> {
    Ok(separable(as_block(coeffs)?, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Textbook definition summed directly over all 64 samples per coefficient.
    fn naive_dct(x: &[f64; 64]) -> [f64; 64] {
        let n = BLOCK as f64;
        let alpha = |k: usize| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        let mut out = [0.0; 64];
        for u in 0..BLOCK {
            for v in 0..BLOCK {
                let mut s = 0.0;
                for y in 0..BLOCK {
                    for xx in 0..BLOCK {
                        s += x[y * BLOCK + xx]
                            * (std::f64::consts::PI * (2 * y + 1) as f64 * u as f64 / 16.0).cos()
                            * (std::f64::consts::PI * (2 * xx + 1) as f64 * v as f64 / 16.0).cos();
                    }
                }
                out[u * BLOCK + v] = alpha(u) * alpha(v) * s;
            }
        }
        out
    }

    #[test]
    fn constant_block_is_dc_only() {
        let c = dct8x8(&[128.0; 64]).unwrap();
        assert!((c[0] - 1024.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn round_trip_and_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let mut x = [0.0; 64];
            x.iter_mut().for_each(|v| *v = rng.random_range(0.0..255.0));
            let c = dct8x8(&x).unwrap();
            let back = idct8x8(&c).unwrap();
            assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-10));
            let naive = naive_dct(&x);
            assert!(c.iter().zip(&naive).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn wrong_size_is_error() {
        assert!(dct8x8(&[0.0; 63]).is_err());
        assert!(idct8x8(&[0.0; 65]).is_err());
    }
}
