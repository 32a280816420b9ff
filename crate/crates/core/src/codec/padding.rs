//! How much of the output a zero-padded border can corrupt, at frame level
//! versus block level.

use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::Real;

/// Share of a `W × H` frame within `a` pixels of its border:
/// `2a(W + H − 2a) / (W·H)`, for `2a ≤ min(W, H)`.
pub fn padding_impact_frame(width: usize, height: usize, a: usize) -> Result<f64> {
    if width == 0 || height == 0 || 2 * a > width.min(height) {
        return Err(Error::InvalidArgument(format!(
            "border width {a} too large for a {width}x{height} frame"
        )));
    }
    let (w, h, a) = (width as f64, height as f64, a as f64);
    Ok(2.0 * a * (w + h - 2.0 * a) / (w * h))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct BlockImpact {
    /// `4a(h − a) / h²`
    pub exact: f64,
    /// `4a / h`
    pub approx: f64,
}

/// Share of an `h × h` block within `a` pixels of its border (`2a ≤ h`).
pub fn padding_impact_block(h: usize, a: usize) -> Result<BlockImpact> {
    if h == 0 || 2 * a > h {
        return Err(Error::InvalidArgument(format!("border width {a} exceeds half the block size {h}")));
    }
    let (hf, af) = (h as f64, a as f64);
    Ok(BlockImpact {
        exact: 4.0 * af * (hf - af) / (hf * hf),
        approx: 4.0 * af / hf,
    })
}

/// Border width corrupted by zero fill: one pixel per 3×3 stage.
pub fn receptive_border<T: Real>(model: &Model<T>) -> usize {
    receptive_border_for_depth(model.config().num_dsc_layers)
}

/// `K` DSC layers plus the final convolution.
pub fn receptive_border_for_depth(num_dsc_layers: usize) -> usize {
    num_dsc_layers + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_student, build_teacher};

    #[test]
    fn frame_level_hd() {
        let p = padding_impact_frame(1920, 1080, 10).unwrap();
        assert!((p - 0.02870).abs() < 1e-4, "{p}");
        assert_eq!(padding_impact_frame(1920, 1080, 0).unwrap(), 0.0);
        assert_eq!(padding_impact_frame(20, 30, 10).unwrap(), 1.0);
        assert!(padding_impact_frame(20, 30, 11).is_err());
    }

    #[test]
    fn ctu_level() {
        let b = padding_impact_block(64, 10).unwrap();
        assert!((b.exact - 2160.0 / 4096.0).abs() < 1e-15);
        assert!((b.approx - 0.625).abs() < 1e-15);
        assert_eq!(padding_impact_block(64, 0).unwrap(), BlockImpact { exact: 0.0, approx: 0.0 });
        assert_eq!(padding_impact_block(8, 4).unwrap().exact, 1.0);
        assert!(padding_impact_block(8, 5).is_err());
    }

    #[test]
    fn borders() {
        assert_eq!(receptive_border(&build_student::<f32>(0)), 10);
        assert_eq!(receptive_border(&build_teacher::<f32>(0)), 25);
        assert_eq!(receptive_border_for_depth(0), 1);
    }
}
