//! Deterministic synthetic test images: smooth shading, hard-edged shapes,
//! a striped texture patch and mild noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::frame::{chroma_dims, quantize_sample, Frame, Plane};

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64, v: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, v: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, w: f64, h: f64) -> Shape {
        let v = rng.random_range(-70.0..70.0);
        if rng.random_bool(0.5) {
            let (x0, y0) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let (sw, sh) = (rng.random_range(0.1..0.5) * w, rng.random_range(0.1..0.5) * h);
            Shape::Rect { x0, y0, x1: x0 + sw, y1: y0 + sh, v }
        } else {
            Shape::Ellipse {
                cx: rng.random_range(0.0..w),
                cy: rng.random_range(0.0..h),
                rx: rng.random_range(0.05..0.3) * w,
                ry: rng.random_range(0.05..0.3) * h,
                v,
            }
        }
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Rect { x0, y0, x1, y1, v } if x >= x0 && x < x1 && y >= y0 && y < y1 => v,
            Shape::Ellipse { cx, cy, rx, ry, v } if ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0 => v,
            _ => 0.0,
        }
    }
}

struct Scene {
    base: f64,
    gx: f64,
    gy: f64,
    waves: Vec<(f64, f64, f64, f64)>,
    shapes: Vec<Shape>,
    stripes: (f64, f64, f64, f64, f64, f64),
}

impl Scene {
    fn random(rng: &mut ChaCha8Rng, w: f64, h: f64) -> Scene {
        let waves = (0..3)
            .map(|_| {
                (
                    rng.random_range(5.0..20.0),
                    rng.random_range(0.5..3.0) * std::f64::consts::TAU / w,
                    rng.random_range(0.5..3.0) * std::f64::consts::TAU / h,
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let n = rng.random_range(6..12);
        let shapes = (0..n).map(|_| Shape::random(rng, w, h)).collect();
        let (sx, sy) = (rng.random_range(0.0..w * 0.7), rng.random_range(0.0..h * 0.7));
        Scene {
            base: rng.random_range(80.0..170.0),
            gx: rng.random_range(-40.0..40.0) / w,
            gy: rng.random_range(-40.0..40.0) / h,
            waves,
            shapes,
            stripes: (
                sx,
                sy,
                sx + w * 0.3,
                sy + h * 0.3,
                rng.random_range(0.4..1.2),
                rng.random_range(15.0..35.0),
            ),
        }
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        let mut v = self.base + self.gx * x + self.gy * y;
        for &(a, fx, fy, ph) in &self.waves {
            v += a * (fx * x + fy * y + ph).sin();
        }
        for s in &self.shapes {
            v += s.value(x, y);
        }
        let (x0, y0, x1, y1, freq, amp) = self.stripes;
        if x >= x0 && x < x1 && y >= y0 && y < y1 {
            v += amp * (freq * (x + 0.5 * y)).sin();
        }
        v
    }
}

fn render(scene: &Scene, w: usize, h: usize, scale: f64, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Plane {
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64 * scale, (i / w) as f64 * scale);
            quantize_sample(scene.value(x, y) + noise.sample(rng))
        })
        .collect();
    Plane::new(w, h, data).expect("dimensions are positive")
}

/// A `width × height` frame, luma only or 4:2:0, fully determined by `seed`.
///
/// Panics if either dimension is zero.
pub fn synthetic_frame(width: usize, height: usize, chroma: bool, seed: u64) -> Frame {
    assert!(width > 0 && height > 0, "synthetic frame needs positive dimensions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let noise = Normal::new(0.0, 2.0).expect("valid sigma");
    let luma_scene = Scene::random(&mut rng, w, h);
    let y = render(&luma_scene, width, height, 1.0, &noise, &mut rng);
    if !chroma {
        return Frame::luma(y);
    }
    let (cw, ch) = chroma_dims(width, height);
    let mut planes = vec![y];
    for _ in 0..2 {
        let mut scene = Scene::random(&mut rng, w, h);
        scene.base = rng.random_range(100.0..156.0);
        scene.shapes.truncate(4);
        planes.push(render(&scene, cw, ch, 2.0, &noise, &mut rng));
    }
    Frame::from_planes(planes).expect("chroma planes sized for 4:2:0")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = synthetic_frame(40, 24, true, 7);
        assert_eq!(a, synthetic_frame(40, 24, true, 7));
        assert_ne!(a, synthetic_frame(40, 24, true, 8));
        assert_eq!(a.planes()[1].width(), 20);
        let y = a.luma_plane().data();
        let (lo, hi) = (y.iter().min().unwrap(), y.iter().max().unwrap());
        assert!(hi - lo > 30);
    }
}
