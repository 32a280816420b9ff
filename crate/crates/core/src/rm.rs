//! Residual mapping: the decoder output is `X + λ·R_S`, where `X` is the
//! unfiltered reconstruction, `R_S` the network's correction and `λ` a
//! per-component scale from an `n`-bit grid chosen by the encoder.
//!
//! Frame- and CTU-level on/off switching are provided as baselines.

use serde::{Deserialize, Serialize};

use crate::codec::frame::quantize_sample;
use crate::codec::{sse_plane, Frame, Plane};
use crate::error::{shape_err, Error, Result};

pub const DEFAULT_LAMBDA_BITS: u8 = 5;
/// Upper limit on the λ grid resolution.
pub const MAX_LAMBDA_BITS: u8 = 15;
pub const DEFAULT_CTU: usize = 64;

/// Signalled λ indices for Y, U and V. Luma-only frames carry zeros for U, V.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RmParams {
    bits: u8,
    indices: [u16; 3],
}

fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_LAMBDA_BITS {
        return Err(Error::InvalidArgument(format!("λ bit width must be in 1..={MAX_LAMBDA_BITS}, got {bits}")));
    }
    Ok(())
}

fn grid_max(bits: u8) -> u16 {
    ((1u32 << bits) - 1) as u16
}

impl RmParams {
    pub fn new(bits: u8, indices: [u16; 3]) -> Result<Self> {
        check_bits(bits)?;
        if let Some(i) = indices.iter().find(|&&i| i > grid_max(bits)) {
            return Err(Error::InvalidArgument(format!("λ index {i} exceeds {}-bit grid", bits)));
        }
        Ok(RmParams { bits, indices })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }
    pub fn indices(&self) -> [u16; 3] {
        self.indices
    }

    /// `λ_c = i_c / (2ⁿ − 1)`
    pub fn lambda(&self, component: usize) -> f64 {
        index_to_lambda(self.indices[component], self.bits)
    }
}

pub fn index_to_lambda(index: u16, bits: u8) -> f64 {
    index as f64 / grid_max(bits) as f64
}

/// A real-valued difference plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPlane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ResidualPlane {
    pub fn zeros(width: usize, height: usize) -> Self {
        ResidualPlane {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    fn diff(a: &Plane, b: &Plane) -> Result<Self> {
        a.check_dims(b)?;
        Ok(ResidualPlane {
            width: a.width(),
            height: a.height(),
            values: a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 - y as f64).collect(),
        })
    }

    fn check(&self, p: &Plane) -> Result<()> {
        if self.width != p.width() || self.height != p.height() || self.values.len() != p.data().len() {
            return shape_err(format!(
                "residual {}x{} vs plane {}x{}",
                self.width,
                self.height,
                p.width(),
                p.height()
            ));
        }
        Ok(())
    }
}

fn frame_diff(a: &Frame, b: &Frame) -> Result<Vec<ResidualPlane>> {
    a.check_layout(b)?;
    a.planes().iter().zip(b.planes()).map(|(p, q)| ResidualPlane::diff(p, q)).collect()
}

/// `R_O = Y_O − X` for every component.
pub fn residual_distortion(orig: &Frame, rec: &Frame) -> Result<Vec<ResidualPlane>> {
    frame_diff(orig, rec)
}

/// `R_S = Y_S − X` for every component.
pub fn residual_learned(filtered: &Frame, rec: &Frame) -> Result<Vec<ResidualPlane>> {
    frame_diff(filtered, rec)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaFit {
    pub lambda: f64,
    /// `R_S` was all zero; `lambda` is then 0.
    pub degenerate: bool,
}

/// Least-squares `λ = ⟨R_S, R_O⟩ / ⟨R_S, R_S⟩`.
pub fn fit_lambda_closed(r_s: &ResidualPlane, r_o: &ResidualPlane) -> Result<LambdaFit> {
    if (r_s.width, r_s.height) != (r_o.width, r_o.height) || r_s.values.len() != r_o.values.len() {
        return shape_err("residual planes differ in size");
    }
    let ss: f64 = r_s.values.iter().map(|v| v * v).sum();
    if ss == 0.0 {
        return Ok(LambdaFit {
            lambda: 0.0,
            degenerate: true,
        });
    }
    let so: f64 = r_s.values.iter().zip(&r_o.values).map(|(a, b)| a * b).sum();
    Ok(LambdaFit {
        lambda: so / ss,
        degenerate: false,
    })
}

/// Nearest grid index after clamping to `[0, 1]`; ties round up.
pub fn quantize_lambda(lambda: f64, bits: u8) -> Result<u16> {
    check_bits(bits)?;
    let max = grid_max(bits) as f64;
    let l = if lambda.is_nan() { 0.0 } else { lambda.clamp(0.0, 1.0) };
    Ok((l * max + 0.5).floor().min(max) as u16)
}

/// `round(X + λ·R_S)` clipped to the sample range.
pub fn rm_apply_plane(rec: &Plane, r_s: &ResidualPlane, lambda: f64) -> Result<Plane> {
    r_s.check(rec)?;
    let data = rec
        .data()
        .iter()
        .zip(&r_s.values)
        .map(|(&x, &r)| quantize_sample(x as f64 + lambda * r))
        .collect();
    Plane::new(rec.width(), rec.height(), data)
}

pub fn rm_apply(rec: &Frame, r_s: &[ResidualPlane], params: &RmParams) -> Result<Frame> {
    if r_s.len() != rec.planes().len() {
        return shape_err(format!("{} residual planes for {} frame planes", r_s.len(), rec.planes().len()));
    }
    let planes = rec
        .planes()
        .iter()
        .zip(r_s)
        .enumerate()
        .map(|(c, (p, r))| rm_apply_plane(p, r, params.lambda(c)))
        .collect::<Result<Vec<_>>>()?;
    let out = Frame::from_planes(planes)?;
    Ok(match rec.qp() {
        Some(q) => out.with_qp(q),
        None => out,
    })
}

/// Grid index minimizing the SSE of the rounded, clipped output against `orig`;
/// ties go to the smaller index.
pub fn rdo_search_plane(rec: &Plane, filtered: &Plane, orig: &Plane, bits: u8) -> Result<u16> {
    check_bits(bits)?;
    rec.check_dims(orig)?;
    let r_s = ResidualPlane::diff(filtered, rec)?;
    let mut best = (u64::MAX, 0u16);
    for i in 0..=grid_max(bits) {
        let out = rm_apply_plane(rec, &r_s, index_to_lambda(i, bits))?;
        let e = sse_plane(&out, orig)?;
        if e < best.0 {
            best = (e, i);
        }
    }
    Ok(best.1)
}

/// Per-component exhaustive λ search.
pub fn rdo_search(rec: &Frame, filtered: &Frame, orig: &Frame, bits: u8) -> Result<RmParams> {
    rec.check_layout(filtered)?;
    rec.check_layout(orig)?;
    let mut indices = [0u16; 3];
    for (c, slot) in indices.iter_mut().enumerate().take(rec.planes().len()) {
        *slot = rdo_search_plane(&rec.planes()[c], &filtered.planes()[c], &orig.planes()[c], bits)?;
    }
    RmParams::new(bits, indices)
}

/// Y, U, V indices, `n` bits each, MSB first, zero-padded to a whole byte.
pub fn serialize_rm(params: &RmParams) -> Vec<u8> {
    let n = params.bits as usize;
    let total = 3 * n;
    let mut out = vec![0u8; total.div_ceil(8)];
    let mut pos = 0;
    for &idx in &params.indices {
        for b in (0..n).rev() {
            if (idx >> b) & 1 == 1 {
                out[pos / 8] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

pub fn deserialize_rm(bytes: &[u8], bits: u8) -> Result<RmParams> {
    check_bits(bits)?;
    let n = bits as usize;
    let total = 3 * n;
    if bytes.len() != total.div_ceil(8) {
        return Err(Error::Malformed(format!(
            "RM syntax for {bits}-bit λ is {} bytes, got {}",
            total.div_ceil(8),
            bytes.len()
        )));
    }
    let bit = |pos: usize| (bytes[pos / 8] >> (7 - pos % 8)) & 1;
    if (total..bytes.len() * 8).any(|p| bit(p) != 0) {
        return Err(Error::Malformed("RM syntax padding bits must be zero".into()));
    }
    let mut indices = [0u16; 3];
    for (c, idx) in indices.iter_mut().enumerate() {
        for k in 0..n {
            *idx = (*idx << 1) | bit(c * n + k) as u16;
        }
    }
    RmParams::new(bits, indices)
}

/// Use the filtered frame only when it strictly lowers the total SSE.
pub fn frame_control(rec: &Frame, filtered: &Frame, orig: &Frame) -> Result<bool> {
    Ok(crate::codec::sse(filtered, orig)? < crate::codec::sse(rec, orig)?)
}

/// Per-CTU on/off decisions in raster order plus the assembled frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CtuDecision {
    pub cols: usize,
    pub rows: usize,
    pub flags: Vec<bool>,
    pub frame: Frame,
}

/// Number of CTU columns and rows covering a `width × height` luma plane.
pub fn ctu_grid(width: usize, height: usize, ctu: usize) -> (usize, usize) {
    (width.div_ceil(ctu), height.div_ceil(ctu))
}

// Region of plane `p` covered by CTU (cx, cy); chroma planes use the co-located
// half-size region.
fn ctu_region(frame: &Frame, p: usize, ctu: usize, cx: usize, cy: usize) -> (usize, usize, usize, usize) {
    let plane = &frame.planes()[p];
    let size = if p == 0 { ctu } else { ctu / 2 };
    let x0 = cx * size;
    let y0 = cy * size;
    let x1 = (x0 + size).min(plane.width());
    let y1 = (y0 + size).min(plane.height());
    (x0.min(x1), y0.min(y1), x1, y1)
}

fn check_ctu(ctu: usize, chroma: bool) -> Result<()> {
    if ctu == 0 || (chroma && !ctu.is_multiple_of(2)) {
        return Err(Error::InvalidArgument(format!("invalid CTU size {ctu}")));
    }
    Ok(())
}

fn region_sse(a: &Plane, b: &Plane, r: (usize, usize, usize, usize)) -> u64 {
    let mut s = 0u64;
    for y in r.1..r.3 {
        for x in r.0..r.2 {
            let d = a.get(x, y) as i64 - b.get(x, y) as i64;
            s += (d * d) as u64;
        }
    }
    s
}

/// Builds the output frame from per-CTU flags (decoder side of [`ctu_control`]).
pub fn apply_ctu_flags(rec: &Frame, filtered: &Frame, flags: &[bool], ctu: usize) -> Result<Frame> {
    rec.check_layout(filtered)?;
    check_ctu(ctu, rec.has_chroma())?;
    let (cols, rows) = ctu_grid(rec.width(), rec.height(), ctu);
    if flags.len() != cols * rows {
        return Err(Error::Malformed(format!("{} CTU flags for a {cols}x{rows} grid", flags.len())));
    }
    let mut out = rec.clone();
    for cy in 0..rows {
        for cx in 0..cols {
            if !flags[cy * cols + cx] {
                continue;
            }
            for p in 0..rec.planes().len() {
                let r = ctu_region(rec, p, ctu, cx, cy);
                let src = &filtered.planes()[p];
                let dst = &mut out.planes_mut()[p];
                for y in r.1..r.3 {
                    for x in r.0..r.2 {
                        dst.set(x, y, src.get(x, y));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-CTU version of [`frame_control`]: each `ctu × ctu` luma block (with
/// its co-located chroma) takes the filtered samples only when that strictly
/// lowers its SSE.
pub fn ctu_control(rec: &Frame, filtered: &Frame, orig: &Frame, ctu: usize) -> Result<CtuDecision> {
    rec.check_layout(filtered)?;
    rec.check_layout(orig)?;
    check_ctu(ctu, rec.has_chroma())?;
    let (cols, rows) = ctu_grid(rec.width(), rec.height(), ctu);
    let mut flags = Vec::with_capacity(cols * rows);
    for cy in 0..rows {
        for cx in 0..cols {
            let (mut off, mut on) = (0u64, 0u64);
            for p in 0..rec.planes().len() {
                let r = ctu_region(rec, p, ctu, cx, cy);
                off += region_sse(&rec.planes()[p], &orig.planes()[p], r);
                on += region_sse(&filtered.planes()[p], &orig.planes()[p], r);
            }
            flags.push(on < off);
        }
    }
    let frame = apply_ctu_flags(rec, filtered, &flags, ctu)?;
    Ok(CtuDecision {
        cols,
        rows,
        flags,
        frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn luma(w: usize, h: usize, v: &[u8]) -> Frame {
        Frame::luma(Plane::new(w, h, v.to_vec()).unwrap())
    }

    #[test]
    fn residual_examples() {
        let o = luma(2, 1, &[10, 7]);
        let r = luma(2, 1, &[8, 7]);
        assert_eq!(residual_distortion(&o, &r).unwrap()[0].values, vec![2.0, 0.0]);
        assert!(residual_distortion(&o, &o).unwrap()[0].values.iter().all(|&v| v == 0.0));
        assert!(residual_learned(&o, &luma(1, 2, &[0, 0])).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let p = |v: &[f64]| ResidualPlane {
            width: v.len(),
            height: 1,
            values: v.to_vec(),
        };
        assert_eq!(fit_lambda_closed(&p(&[1.0, 2.0]), &p(&[1.0, 2.0])).unwrap().lambda, 1.0);
        assert_eq!(fit_lambda_closed(&p(&[1.0, 0.0]), &p(&[0.0, 3.0])).unwrap().lambda, 0.0);
        assert_eq!(fit_lambda_closed(&p(&[2.0, 0.0]), &p(&[1.0, 1.0])).unwrap().lambda, 0.5);
        let z = fit_lambda_closed(&p(&[0.0, 0.0]), &p(&[1.0, 1.0])).unwrap();
        assert!(z.degenerate && z.lambda == 0.0);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_lambda(1.0, 5).unwrap(), 31);
        assert_eq!(quantize_lambda(0.0, 5).unwrap(), 0);
        assert_eq!(quantize_lambda(0.5, 5).unwrap(), 16);
        assert_eq!(quantize_lambda(7.0, 5).unwrap(), 31);
        assert_eq!(quantize_lambda(-1.0, 5).unwrap(), 0);
        assert!(quantize_lambda(0.5, 0).is_err());
    }

    #[test]
    fn apply_examples() {
        let rec = Plane::new(1, 1, vec![10]).unwrap();
        let r = ResidualPlane {
            width: 1,
            height: 1,
            values: vec![4.0],
        };
        assert_eq!(rm_apply_plane(&rec, &r, 0.5).unwrap().data(), &[12]);
        assert_eq!(rm_apply_plane(&rec, &r, 0.0).unwrap(), rec);
        assert_eq!(rm_apply_plane(&rec, &r, 1.0).unwrap().data(), &[14]);
    }

    #[test]
    fn rdo_examples() {
        let rec = luma(3, 1, &[10, 20, 30]);
        let orig = luma(3, 1, &[12, 18, 33]);
        // small residuals: every λ ≥ 26/31 rounds onto orig, and the smaller index wins
        assert_eq!(rdo_search(&rec, &orig, &orig, 5).unwrap().indices()[0], 26);
        let far = luma(3, 1, &[60, 20, 30]);
        assert_eq!(rdo_search(&rec, &far, &far, 5).unwrap().indices()[0], 31);
        assert_eq!(rdo_search(&rec, &rec, &orig, 5).unwrap().indices()[0], 0);
    }

    #[test]
    fn serialize_examples() {
        assert_eq!(serialize_rm(&RmParams::new(5, [31, 0, 0]).unwrap()), vec![0xF8, 0x00]);
        assert_eq!(serialize_rm(&RmParams::new(5, [0, 0, 0]).unwrap()), vec![0x00, 0x00]);
        assert_eq!(serialize_rm(&RmParams::new(5, [0, 0, 1]).unwrap()), vec![0x00, 0x02]);
        assert!(deserialize_rm(&[0, 0, 0], 5).is_err());
        assert!(deserialize_rm(&[0x00, 0x01], 5).is_err());
        assert!(RmParams::new(5, [32, 0, 0]).is_err());
    }

    #[test]
    fn frame_control_examples() {
        let rec = luma(2, 1, &[10, 10]);
        let orig = luma(2, 1, &[12, 12]);
        assert!(frame_control(&rec, &orig, &orig).unwrap());
        assert!(!frame_control(&rec, &luma(2, 1, &[5, 5]), &orig).unwrap());
        assert!(!frame_control(&rec, &luma(2, 1, &[14, 14]), &orig).unwrap());
    }

    #[test]
    fn ctu_tiling() {
        assert_eq!(ctu_grid(130, 70, 64), (3, 2));
        let rec = Frame::luma(Plane::filled(130, 70, 10));
        let filt = Frame::luma(Plane::filled(130, 70, 11));
        let orig = Frame::luma(Plane::filled(130, 70, 12));
        let d = ctu_control(&rec, &filt, &orig, 64).unwrap();
        assert_eq!((d.cols, d.rows), (3, 2));
        assert!(d.flags.iter().all(|&f| f == frame_control(&rec, &filt, &orig).unwrap()));
        assert_eq!(d.frame, filt);
        assert!(apply_ctu_flags(&rec, &filt, &[true], 64).is_err());
    }
}
