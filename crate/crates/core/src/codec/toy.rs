//! Intra-only block-DCT codec that stands in for a real encoder's unfiltered
//! reconstruction.
//!
//! Each plane is split into 8×8 blocks (edge-replicated to a multiple of 8),
//! level-shifted by 128, transformed, and uniformly quantized with step
//! `2^((qp − 4) / 6)`. Reconstruction is dequantize → inverse DCT → round →
//! clip, and is the same function on the encoder and decoder side.

use std::collections::BTreeMap;

use super::dct::{dct8x8, idct8x8, BLOCK};
use super::frame::{quantize_sample, Frame, Plane};
use crate::error::{Error, Result};

pub const QP_MAX: u8 = 51;

/// Quantizer step for `qp`.
pub fn qstep(qp: u8) -> f64 {
    2f64.powf((qp as f64 - 4.0) / 6.0)
}

/// Quantized levels of one plane, 64 per block in raster block order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaneCoeffs {
    pub width: usize,
    pub height: usize,
    pub levels: Vec<i16>,
}

impl PlaneCoeffs {
    pub fn blocks_x(&self) -> usize {
        self.width.div_ceil(BLOCK)
    }
    pub fn blocks_y(&self) -> usize {
        self.height.div_ceil(BLOCK)
    }
    pub fn block_count(&self) -> usize {
        self.blocks_x() * self.blocks_y()
    }
}

/// Everything the decoder needs to rebuild the reconstruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coefficients {
    pub qp: u8,
    pub planes: Vec<PlaneCoeffs>,
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub rec: Frame,
    pub rate_bits: f64,
    pub coeffs: Coefficients,
}

fn check_qp(qp: u8) -> Result<()> {
    if qp > QP_MAX {
        return Err(Error::InvalidArgument(format!("qp {qp} outside [0, {QP_MAX}]")));
    }
    Ok(())
}

fn encode_plane(plane: &Plane, step: f64) -> Result<PlaneCoeffs> {
    let (w, h) = (plane.width(), plane.height());
    let (bx, by) = (w.div_ceil(BLOCK), h.div_ceil(BLOCK));
    let mut levels = Vec::with_capacity(bx * by * 64);
    let mut block = [0.0; 64];
    for j in 0..by {
        for i in 0..bx {
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    let sx = (i * BLOCK + x).min(w - 1);
                    let sy = (j * BLOCK + y).min(h - 1);
                    block[y * BLOCK + x] = plane.get(sx, sy) as f64 - 128.0;
                }
            }
            let c = dct8x8(&block)?;
            levels.extend(c.iter().map(|v| (v / step).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16));
        }
    }
    Ok(PlaneCoeffs {
        width: w,
        height: h,
        levels,
    })
}

fn decode_plane(pc: &PlaneCoeffs, step: f64) -> Result<Plane> {
    let (w, h) = (pc.width, pc.height);
    let bx = pc.blocks_x();
    if pc.levels.len() != pc.block_count() * 64 {
        return Err(Error::Malformed(format!(
            "plane {}x{} expects {} levels, got {}",
            w,
            h,
            pc.block_count() * 64,
            pc.levels.len()
        )));
    }
    let mut out = Plane::filled(w, h, 0);
    for (b, lv) in pc.levels.chunks_exact(64).enumerate() {
        let (i, j) = (b % bx, b / bx);
        let deq: Vec<f64> = lv.iter().map(|&q| q as f64 * step).collect();
        let px = idct8x8(&deq)?;
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                let (sx, sy) = (i * BLOCK + x, j * BLOCK + y);
                if sx < w && sy < h {
                    out.set(sx, sy, quantize_sample(px[y * BLOCK + x] + 128.0));
                }
            }
        }
    }
    Ok(out)
}

pub fn toy_encode(frame: &Frame, qp: u8) -> Result<Encoded> {
    check_qp(qp)?;
    let step = qstep(qp);
    let planes = frame
        .planes()
        .iter()
        .map(|p| encode_plane(p, step))
        .collect::<Result<Vec<_>>>()?;
    let coeffs = Coefficients { qp, planes };
    let rec = toy_decode(&coeffs)?;
    Ok(Encoded {
        rec,
        rate_bits: estimate_rate(&coeffs),
        coeffs,
    })
}

pub fn toy_decode(coeffs: &Coefficients) -> Result<Frame> {
    check_qp(coeffs.qp)?;
    let step = qstep(coeffs.qp);
    let planes = coeffs
        .planes
        .iter()
        .map(|pc| decode_plane(pc, step))
        .collect::<Result<Vec<_>>>()?;
    Ok(Frame::from_planes(planes)?.with_qp(coeffs.qp))
}

/// Zero-order entropy of the levels, with a separate symbol distribution per
/// coefficient position, plus one bit per nonzero level.
pub fn estimate_rate(coeffs: &Coefficients) -> f64 {
    let mut bits = 0.0;
    for pc in &coeffs.planes {
        let blocks = pc.block_count();
        for pos in 0..64 {
            let mut hist: BTreeMap<i16, usize> = BTreeMap::new();
            for b in 0..blocks {
                *hist.entry(pc.levels[b * 64 + pos]).or_default() += 1;
            }
            let n = blocks as f64;
            let entropy: f64 = hist
                .values()
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.log2()
                })
                .sum();
            bits += n * entropy;
        }
        bits += pc.levels.iter().filter(|&&q| q != 0).count() as f64;
    }
    bits
}
