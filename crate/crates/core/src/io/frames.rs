//! Headerless planar 8-bit frames (luma-only or 4:2:0); geometry comes from
//! the run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{chroma_dims, Frame, Plane};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFormat {
    pub width: usize,
    pub height: usize,
    /// 4:2:0 chroma planes follow each luma plane.
    pub chroma: bool,
}

impl RawFormat {
    pub fn of(frame: &Frame) -> Self {
        RawFormat {
            width: frame.width(),
            height: frame.height(),
            chroma: frame.has_chroma(),
        }
    }

    pub fn frame_bytes(&self) -> usize {
        let (cw, ch) = chroma_dims(self.width, self.height);
        self.width * self.height + if self.chroma { 2 * cw * ch } else { 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("frame size {}x{} must be positive", self.width, self.height)));
        }
        Ok(())
    }
}

pub fn decode_raw_frames(bytes: &[u8], fmt: RawFormat) -> Result<Vec<Frame>> {
    fmt.validate()?;
    let n = fmt.frame_bytes();
    if bytes.is_empty() || !bytes.len().is_multiple_of(n) {
        return Err(Error::Malformed(format!(
            "{} bytes is not a whole number of {}x{} frames ({n} bytes each)",
            bytes.len(),
            fmt.width,
            fmt.height
        )));
    }
    let (cw, ch) = chroma_dims(fmt.width, fmt.height);
    bytes
        .chunks_exact(n)
        .map(|b| {
            let luma_len = fmt.width * fmt.height;
            let y = Plane::new(fmt.width, fmt.height, b[..luma_len].to_vec())?;
            if !fmt.chroma {
                return Ok(Frame::luma(y));
            }
            let u = Plane::new(cw, ch, b[luma_len..luma_len + cw * ch].to_vec())?;
            let v = Plane::new(cw, ch, b[luma_len + cw * ch..].to_vec())?;
            Frame::yuv420(y, u, v)
        })
        .collect()
}

pub fn encode_raw_frames(frames: &[Frame]) -> Result<Vec<u8>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(frames.len() * RawFormat::of(first).frame_bytes());
    for f in frames {
        first.check_layout(f)?;
        for p in f.planes() {
            out.extend_from_slice(p.data());
        }
    }
    Ok(out)
}

pub fn read_raw_frames(path: &Path, fmt: RawFormat) -> Result<Vec<Frame>> {
    let bytes = std::fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    decode_raw_frames(&bytes, fmt)
}

pub fn write_raw_frames(path: &Path, frames: &[Frame]) -> Result<()> {
    std::fs::write(path, encode_raw_frames(frames)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::synthetic_frame;

    #[test]
    fn raw_round_trip() {
        let frames: Vec<Frame> = (0..3).map(|s| synthetic_frame(13, 9, true, s)).collect();
        let fmt = RawFormat::of(&frames[0]);
        assert_eq!(fmt.frame_bytes(), 13 * 9 + 2 * 7 * 5);
        let bytes = encode_raw_frames(&frames).unwrap();
        assert_eq!(decode_raw_frames(&bytes, fmt).unwrap(), frames);
        assert!(decode_raw_frames(&bytes[1..], fmt).is_err());
        assert!(decode_raw_frames(&bytes, RawFormat { width: 0, ..fmt }).is_err());
    }
}
