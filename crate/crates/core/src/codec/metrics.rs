//! Distortion metrics and the Bjøntegaard delta-rate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::frame::{Frame, Plane, MAX_SAMPLE};
use crate::error::{Error, Result};

/// PSNR reported for identical inputs.
pub const LOSSLESS_PSNR: f64 = f64::INFINITY;

pub fn sse_plane(a: &Plane, b: &Plane) -> Result<u64> {
    a.check_dims(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum())
}

/// Sum of squared errors over every plane.
pub fn sse(a: &Frame, b: &Frame) -> Result<u64> {
    a.check_layout(b)?;
    a.planes().iter().zip(b.planes()).map(|(p, q)| sse_plane(p, q)).sum()
}

fn psnr_from(sse: u64, samples: usize) -> f64 {
    if sse == 0 {
        return LOSSLESS_PSNR;
    }
    let mse = sse as f64 / samples as f64;
    10.0 * (MAX_SAMPLE * MAX_SAMPLE / mse).log10()
}

pub fn psnr_plane(a: &Plane, b: &Plane) -> Result<f64> {
    Ok(psnr_from(sse_plane(a, b)?, a.data().len()))
}

/// PSNR pooled over all samples of all planes.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from(sse(a, b)?, a.sample_count()))
}

/// One point of a rate-distortion curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub rate: f64,
    pub psnr: f64,
}

impl RdPoint {
    pub fn new(rate: f64, psnr: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("rate must be positive, got {rate}")));
        }
        Ok(RdPoint { rate, psnr })
    }
}

/// Cubic least-squares fit of `ln(rate)` against PSNR mapped to `[-1, 1]` over
/// `[lo, hi]`; coefficients low → high.
fn fit_log_rate(points: &[RdPoint], lo: f64, hi: f64) -> Result<[f64; 4]> {
    let n = points.len();
    let u = |p: f64| (2.0 * p - lo - hi) / (hi - lo);
    let a = DMatrix::from_fn(n, 4, |r, c| u(points[r].psnr).powi(c as i32));
    let b = DVector::from_iterator(n, points.iter().map(|p| p.rate.ln()));
    let svd = a.svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("RD curve fit failed: {e}")))?;
    Ok([x[0], x[1], x[2], x[3]])
}

fn integrate_cubic(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |x: f64| c[0] * x + c[1] * x.powi(2) / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
    prim(hi) - prim(lo)
}

fn check_curve(name: &str, pts: &[RdPoint]) -> Result<Vec<RdPoint>> {
    if pts.len() < 4 {
        return Err(Error::InvalidArgument(format!("{name} curve needs at least 4 points, got {}", pts.len())));
    }
    if pts.iter().any(|p| !p.psnr.is_finite() || !(p.rate > 0.0)) {
        return Err(Error::InvalidArgument(format!("{name} curve has a non-finite PSNR or non-positive rate")));
    }
    let mut v = pts.to_vec();
    v.sort_by(|a, b| a.psnr.total_cmp(&b.psnr));
    if v.windows(2).any(|w| !(w[1].psnr > w[0].psnr && w[1].rate > w[0].rate)) {
        return Err(Error::InvalidArgument(format!("{name} curve is not monotone")));
    }
    Ok(v)
}

/// Average bitrate change (percent) of `test` relative to `anchor` at equal
/// quality, over the PSNR range both curves cover.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    let a = check_curve("anchor", anchor)?;
    let t = check_curve("test", test)?;
    let lo = a[0].psnr.max(t[0].psnr);
    let hi = a[a.len() - 1].psnr.min(t[t.len() - 1].psnr);
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "PSNR ranges do not overlap (anchor {:.3}..{:.3}, test {:.3}..{:.3})",
            a[0].psnr,
            a[a.len() - 1].psnr,
            t[0].psnr,
            t[t.len() - 1].psnr
        )));
    }
    // Both fits share one PSNR normalization; the overlap maps to [ul, uh].
    let (plo, phi) = (a[0].psnr.min(t[0].psnr), a[a.len() - 1].psnr.max(t[t.len() - 1].psnr));
    let ca = fit_log_rate(&a, plo, phi)?;
    let ct = fit_log_rate(&t, plo, phi)?;
    let u = |p: f64| (2.0 * p - plo - phi) / (phi - plo);
    let (ul, uh) = (u(lo), u(hi));
    let avg = (integrate_cubic(&ct, ul, uh) - integrate_cubic(&ca, ul, uh)) / (uh - ul);
    Ok((avg.exp() - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(rates: &[f64], psnrs: &[f64]) -> Vec<RdPoint> {
        rates.iter().zip(psnrs).map(|(&r, &p)| RdPoint::new(r, p).unwrap()).collect()
    }

    #[test]
    fn psnr_cases() {
        let a = Frame::luma(Plane::filled(4, 4, 10));
        assert_eq!(psnr(&a, &a).unwrap(), LOSSLESS_PSNR);
        let black = Frame::luma(Plane::filled(4, 4, 0));
        let white = Frame::luma(Plane::filled(4, 4, 255));
        assert!(psnr(&black, &white).unwrap().abs() < 1e-12);
        let b = Frame::luma(Plane::new(4, 4, (0..16).map(|i| 10 + (i % 3) as u8).collect()).unwrap());
        let s: f64 = (0..16).map(|i| ((i % 3) as f64).powi(2)).sum();
        let expect = 10.0 * (255.0f64 * 255.0 / (s / 16.0)).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Frame::luma(Plane::filled(4, 5, 0))).is_err());
    }

    #[test]
    fn bd_rate_identity_and_scaling() {
        let an = curve(&[1000.0, 1800.0, 3000.0, 5200.0], &[30.1, 33.0, 35.7, 38.2]);
        assert_eq!(bd_rate(&an, &an).unwrap(), 0.0);
        let scaled: Vec<RdPoint> = an.iter().map(|p| RdPoint::new(p.rate * 0.9, p.psnr).unwrap()).collect();
        assert!((bd_rate(&an, &scaled).unwrap() + 10.0).abs() < 1e-6);
    }

    #[test]
    fn bd_rate_errors() {
        let an = curve(&[1000.0, 1800.0, 3000.0, 5200.0], &[30.0, 33.0, 35.0, 38.0]);
        let far = curve(&[1000.0, 1800.0, 3000.0, 5200.0], &[40.0, 43.0, 45.0, 48.0]);
        assert!(bd_rate(&an, &far).is_err());
        assert!(bd_rate(&an[..3], &an).is_err());
        let bumpy = curve(&[1000.0, 900.0, 3000.0, 5200.0], &[30.0, 33.0, 35.0, 38.0]);
        assert!(bd_rate(&an, &bumpy).is_err());
        assert!(RdPoint::new(0.0, 30.0).is_err());
    }
}
