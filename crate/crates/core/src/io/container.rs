//! Evaluation stream: toy-codec coefficients plus per-frame filter side
//! information, enough for a decoder to rebuild the filtered output.
//!
//! ```text
//! "DSCB" | version u16 | width u32 | height u32 | chroma u8 | mode u8
//! | lambda_bits u8 | border u8 | ctu u32 | block u32 (0 = whole frame) | frames u32
//! per frame: qp u8 | i16 LE levels of every plane | side info
//! crc32 of everything before it, u32
//! ```
//!
//! Side info is the RM syntax for `cnn+rm`, one byte for `cnn+frame-control`,
//! MSB-first packed CTU flags for `cnn+ctu-control`, and nothing otherwise.

use super::config::FilterMode;
use crate::codec::{chroma_dims, Coefficients, PlaneCoeffs};
use crate::error::{Error, Result};
use crate::rm::{ctu_grid, deserialize_rm, serialize_rm, RmParams};
use crate::tensor::BorderMode;

pub const STREAM_MAGIC: &[u8; 4] = b"DSCB";
pub const STREAM_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: usize,
    pub height: usize,
    pub chroma: bool,
    pub mode: FilterMode,
    pub lambda_bits: u8,
    pub border: BorderMode,
    pub ctu: usize,
    pub block: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SideInfo {
    None,
    Rm(RmParams),
    FrameFlag(bool),
    CtuFlags(Vec<bool>),
}

impl SideInfo {
    /// Size of the side information in bits, as signalled.
    pub fn bits(&self) -> usize {
        match self {
            SideInfo::None => 0,
            SideInfo::Rm(p) => 3 * p.bits() as usize,
            SideInfo::FrameFlag(_) => 1,
            SideInfo::CtuFlags(f) => f.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamFrame {
    pub coeffs: Coefficients,
    pub side: SideInfo,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    pub header: StreamHeader,
    pub frames: Vec<StreamFrame>,
}

fn plane_dims(h: &StreamHeader) -> Vec<(usize, usize)> {
    let mut v = vec![(h.width, h.height)];
    if h.chroma {
        let c = chroma_dims(h.width, h.height);
        v.extend([c, c]);
    }
    v
}

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Malformed(msg.into()))
}

fn pack_flags(flags: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; flags.len().div_ceil(8)];
    for (i, &f) in flags.iter().enumerate() {
        if f {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

fn border_code(b: BorderMode) -> u8 {
    match b {
        BorderMode::Zero => 0,
        BorderMode::Context => 1,
    }
}

pub fn encode_stream(stream: &Stream) -> Result<Vec<u8>> {
    let h = &stream.header;
    let dims = plane_dims(h);
    let (cols, rows) = ctu_grid(h.width, h.height, h.ctu.max(1));
    let mut out = Vec::new();
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.width as u32).to_le_bytes());
    out.extend_from_slice(&(h.height as u32).to_le_bytes());
    out.push(u8::from(h.chroma));
    out.push(h.mode.code());
    out.push(h.lambda_bits);
    out.push(border_code(h.border));
    out.extend_from_slice(&(h.ctu as u32).to_le_bytes());
    out.extend_from_slice(&(h.block.unwrap_or(0) as u32).to_le_bytes());
    out.extend_from_slice(&(stream.frames.len() as u32).to_le_bytes());
    for (i, f) in stream.frames.iter().enumerate() {
        if f.coeffs.planes.len() != dims.len()
            || f.coeffs.planes.iter().zip(&dims).any(|(p, &(w, hh))| (p.width, p.height) != (w, hh))
        {
            return Err(Error::Shape(format!("frame {i} coefficients do not match the stream geometry")));
        }
        out.push(f.coeffs.qp);
        for p in &f.coeffs.planes {
            for &l in &p.levels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        match (&f.side, h.mode) {
            (SideInfo::None, FilterMode::None | FilterMode::Cnn) => {}
            (SideInfo::Rm(p), FilterMode::CnnRm) if p.bits() == h.lambda_bits => out.extend(serialize_rm(p)),
            (SideInfo::FrameFlag(b), FilterMode::CnnFrameControl) => out.push(u8::from(*b)),
            (SideInfo::CtuFlags(fl), FilterMode::CnnCtuControl) if fl.len() == cols * rows => out.extend(pack_flags(fl)),
            _ => return Err(Error::InvalidArgument(format!("frame {i}: side info does not fit mode {}", h.mode))),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return malformed("stream truncated");
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_stream(bytes: &[u8]) -> Result<Stream> {
    if bytes.len() < 4 + 2 + 4 * 5 + 4 + 4 {
        return malformed("stream too short");
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return malformed("stream checksum mismatch");
    }
    let mut c = Cursor { b: body, pos: 0 };
    if c.take(4)? != STREAM_MAGIC {
        return malformed("not a stream (bad magic)");
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != STREAM_VERSION {
        return malformed(format!("unsupported stream version {version}"));
    }
    let width = c.u32()? as usize;
    let height = c.u32()? as usize;
    let chroma = match c.u8()? {
        0 => false,
        1 => true,
        v => return malformed(format!("bad chroma flag {v}")),
    };
    let mode = FilterMode::from_code(c.u8()?).ok_or_else(|| Error::Malformed("unknown filter mode".into()))?;
    let lambda_bits = c.u8()?;
    let border = match c.u8()? {
        0 => BorderMode::Zero,
        1 => BorderMode::Context,
        v => return malformed(format!("bad border mode {v}")),
    };
    let ctu = c.u32()? as usize;
    let block = match c.u32()? {
        0 => None,
        b => Some(b as usize),
    };
    let count = c.u32()? as usize;
    if width == 0 || height == 0 || ctu == 0 {
        return malformed("stream geometry must be positive");
    }
    let header = StreamHeader {
        width,
        height,
        chroma,
        mode,
        lambda_bits,
        border,
        ctu,
        block,
    };
    let dims = plane_dims(&header);
    let (cols, rows) = ctu_grid(width, height, ctu);
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let qp = c.u8()?;
        let mut planes = Vec::with_capacity(dims.len());
        for &(w, h) in &dims {
            let n = w.div_ceil(8) * h.div_ceil(8) * 64;
            let raw = c.take(2 * n)?;
            let levels = raw.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
            planes.push(PlaneCoeffs { width: w, height: h, levels });
        }
        let side = match mode {
            FilterMode::None | FilterMode::Cnn => SideInfo::None,
            FilterMode::CnnRm => {
                let n = (3 * lambda_bits as usize).div_ceil(8);
                SideInfo::Rm(deserialize_rm(c.take(n)?, lambda_bits)?)
            }
            FilterMode::CnnFrameControl => match c.u8()? {
                0 => SideInfo::FrameFlag(false),
                1 => SideInfo::FrameFlag(true),
                v => return malformed(format!("bad frame flag {v}")),
            },
            FilterMode::CnnCtuControl => {
                let packed = c.take((cols * rows).div_ceil(8))?;
                SideInfo::CtuFlags((0..cols * rows).map(|i| packed[i / 8] & (0x80 >> (i % 8)) != 0).collect())
            }
        };
        frames.push(StreamFrame {
            coeffs: Coefficients { qp, planes },
            side,
        });
    }
    if c.pos != body.len() {
        return malformed(format!("{} trailing bytes in stream", body.len() - c.pos));
    }
    Ok(Stream { header, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{synthetic_frame, toy_encode};

    fn header(mode: FilterMode) -> StreamHeader {
        StreamHeader {
            width: 70,
            height: 40,
            chroma: true,
            mode,
            lambda_bits: 5,
            border: BorderMode::Context,
            ctu: 64,
            block: Some(32),
        }
    }

    #[test]
    fn round_trip_every_mode() {
        let coeffs = toy_encode(&synthetic_frame(70, 40, true, 1), 32).unwrap().coeffs;
        let sides = [
            SideInfo::None,
            SideInfo::None,
            SideInfo::Rm(RmParams::new(5, [3, 31, 0]).unwrap()),
            SideInfo::FrameFlag(true),
            SideInfo::CtuFlags(vec![true, false]),
        ];
        for (mode, side) in FilterMode::ALL.into_iter().zip(sides) {
            let s = Stream {
                header: header(mode),
                frames: vec![StreamFrame { coeffs: coeffs.clone(), side }],
            };
            let bytes = encode_stream(&s).unwrap();
            assert_eq!(decode_stream(&bytes).unwrap(), s);
            let mut bad = bytes.clone();
            bad[30] ^= 4;
            assert!(decode_stream(&bad).is_err());
        }
    }

    #[test]
    fn side_info_must_match_mode() {
        let coeffs = toy_encode(&synthetic_frame(70, 40, true, 1), 32).unwrap().coeffs;
        let s = Stream {
            header: header(FilterMode::CnnRm),
            frames: vec![StreamFrame {
                coeffs,
                side: SideInfo::FrameFlag(false),
            }],
        };
        assert!(encode_stream(&s).is_err());
    }
}
