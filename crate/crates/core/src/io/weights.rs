//! Binary weight files.
//!
//! ```text
//! "DSCF" | version u16 | folded u8 | reserved u8 | K u32 | F u32 | payload_len u32
//! payload: f32 LE reals | crc32 of payload u32
//! ```
//!
//! Payload order, per DSC layer: depthwise weights, pointwise weights,
//! pointwise bias, and for unfolded models γ, β, running mean, running
//! variance and ε. The final convolution's weights and bias come last.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{BnParams, DscLayer, Model, NetworkConfig};
use crate::tensor::{DepthwiseKernel, PointwiseKernel, StandardKernel};

pub const WEIGHT_MAGIC: &[u8; 4] = b"DSCF";
pub const WEIGHT_VERSION: u16 = 1;
pub const WEIGHT_HEADER_LEN: usize = 20;
const MAX_DIM: u32 = 4096;

/// Number of reals stored for a model of this shape.
pub fn payload_reals(config: &NetworkConfig) -> usize {
    let f = config.feature_maps;
    let mut n = 0;
    for i in 0..config.num_dsc_layers {
        let cin = if i == 0 { 1 } else { f };
        n += 9 * cin + f * cin + f;
        if config.with_bn {
            n += 4 * f + 1;
        }
    }
    n + 9 * f + 1
}

/// Total file size in bytes.
pub fn weight_file_len(config: &NetworkConfig) -> usize {
    WEIGHT_HEADER_LEN + 4 * payload_reals(config) + 4
}

pub fn encode_weights(model: &Model<f32>) -> Vec<u8> {
    let cfg = model.config();
    let mut reals: Vec<f32> = Vec::with_capacity(payload_reals(&cfg));
    for l in model.layers() {
        reals.extend_from_slice(l.depthwise.weights());
        reals.extend_from_slice(l.pointwise.weights());
        reals.extend_from_slice(l.pointwise.bias());
        if let Some(bn) = &l.bn {
            reals.extend_from_slice(&bn.gamma);
            reals.extend_from_slice(&bn.beta);
            reals.extend_from_slice(&bn.mean);
            reals.extend_from_slice(&bn.var);
            reals.push(bn.eps);
        }
    }
    reals.extend_from_slice(model.final_conv().weights());
    reals.extend_from_slice(model.final_conv().bias());

    let payload: Vec<u8> = reals.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut out = Vec::with_capacity(WEIGHT_HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.push(u8::from(model.is_folded()));
    out.push(0);
    out.extend_from_slice(&(cfg.num_dsc_layers as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.feature_maps as u32).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Malformed(msg.into()))
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

struct Reader<'a> {
    reals: &'a [f32],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Vec<f32> {
        let v = self.reals[self.pos..self.pos + n].to_vec();
        self.pos += n;
        v
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Model<f32>> {
    if bytes.len() < WEIGHT_HEADER_LEN + 4 {
        return malformed(format!("weight file too short ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != WEIGHT_MAGIC {
        return malformed("not a weight file (bad magic)");
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != WEIGHT_VERSION {
        return malformed(format!("unsupported weight file version {version}"));
    }
    let folded = match bytes[6] {
        0 => false,
        1 => true,
        v => return malformed(format!("bad folded flag {v}")),
    };
    let (k, f, len) = (u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16) as usize);
    if k == 0 || f == 0 || k > MAX_DIM || f > MAX_DIM {
        return malformed(format!("implausible shape K={k} F={f}"));
    }
    let config = NetworkConfig {
        num_dsc_layers: k as usize,
        feature_maps: f as usize,
        with_bn: !folded,
    };
    let expected = 4 * payload_reals(&config);
    if len != expected || bytes.len() != WEIGHT_HEADER_LEN + len + 4 {
        return malformed(format!(
            "payload is {len} bytes in a {}-byte file; K={k} F={f} needs {expected}",
            bytes.len()
        ));
    }
    let payload = &bytes[WEIGHT_HEADER_LEN..WEIGHT_HEADER_LEN + len];
    let crc = u32_at(bytes, WEIGHT_HEADER_LEN + len);
    if crc32fast::hash(payload) != crc {
        return malformed("weight payload checksum mismatch");
    }
    let reals: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if reals.iter().any(|v| !v.is_finite()) {
        return malformed("weight payload holds non-finite values");
    }
    let mut r = Reader { reals: &reals, pos: 0 };
    let f = f as usize;
    let mut layers = Vec::with_capacity(k as usize);
    for i in 0..k as usize {
        let cin = if i == 0 { 1 } else { f };
        let depthwise = DepthwiseKernel::new(cin, r.take(9 * cin))?;
        let w = r.take(f * cin);
        let pointwise = PointwiseKernel::new(f, cin, w, r.take(f))?;
        let bn = if folded {
            None
        } else {
            let b = BnParams {
                gamma: r.take(f),
                beta: r.take(f),
                mean: r.take(f),
                var: r.take(f),
                eps: r.take(1)[0],
            };
            b.validate().map_err(|e| Error::Malformed(format!("layer {i}: {e}")))?;
            Some(b)
        };
        layers.push(DscLayer { depthwise, pointwise, bn });
    }
    let fw = r.take(9 * f);
    let final_conv = StandardKernel::new(1, f, fw, r.take(1))?;
    Model::new(config, layers, final_conv)
}

pub fn save_weights(path: &Path, model: &Model<f32>) -> Result<()> {
    std::fs::write(path, encode_weights(model))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Model<f32>> {
    decode_weights(&std::fs::read(path)?)
}
