use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{toy_encode, Frame, Plane};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Crops start on this grid so coding-block edges sit at the same phase in
/// every patch.
pub const PATCH_ALIGN: usize = 8;

/// A distorted reconstruction and its pristine original, normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub rec: Tensor<f32>,
    pub orig: Tensor<f32>,
}

/// Luma planes of a decoded frame and its source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePair {
    pub rec: Plane,
    pub orig: Plane,
}

impl FramePair {
    pub fn new(rec: Plane, orig: Plane) -> Result<Self> {
        rec.check_dims(&orig)?;
        Ok(FramePair { rec, orig })
    }
}

/// Encodes each original with the toy codec at `qp` and pairs the luma planes.
pub fn encode_pairs(originals: &[Frame], qp: u8) -> Result<Vec<FramePair>> {
    originals
        .iter()
        .map(|f| {
            let enc = toy_encode(f, qp)?;
            FramePair::new(enc.rec.luma_plane().clone(), f.luma_plane().clone())
        })
        .collect()
}

/// `count` square luma crops drawn uniformly over frames and 8-aligned offsets.
pub fn sample_patches(frames: &[FramePair], patch: usize, count: usize, seed: u64) -> Result<Vec<PatchPair>> {
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if patch == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if let Some(f) = frames.iter().find(|f| f.rec.width() < patch || f.rec.height() < patch) {
        return shape_err(format!(
            "frame {}x{} is smaller than the {patch}x{patch} patch",
            f.rec.width(),
            f.rec.height()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f = &frames[rng.random_range(0..frames.len())];
            let x = PATCH_ALIGN * rng.random_range(0..=(f.rec.width() - patch) / PATCH_ALIGN);
            let y = PATCH_ALIGN * rng.random_range(0..=(f.rec.height() - patch) / PATCH_ALIGN);
            Ok(PatchPair {
                rec: f.rec.crop(x, y, patch, patch)?.to_tensor(),
                orig: f.orig.crop(x, y, patch, patch)?.to_tensor(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::synthetic_frame;

    #[test]
    fn crops_are_deterministic_and_in_bounds() {
        let origs: Vec<Frame> = (0..2).map(|s| synthetic_frame(70, 50, false, s)).collect();
        let pairs = encode_pairs(&origs, 37).unwrap();
        let a = sample_patches(&pairs, 32, 20, 5).unwrap();
        assert_eq!(a, sample_patches(&pairs, 32, 20, 5).unwrap());
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|p| p.rec.dims() == (1, 32, 32)));
        assert!(sample_patches(&pairs, 64, 1, 0).is_err());
        assert!(sample_patches(&[], 32, 1, 0).is_err());
    }
}
