use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Largest 8-bit sample value.
pub const MAX_SAMPLE: f64 = 255.0;

/// One 8-bit sample plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("plane dimensions must be positive".into()));
        }
        if data.len() != width * height {
            return shape_err(format!("plane {}x{} given {} samples", width, height, data.len()));
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_dims(&self, other: &Plane) -> Result<()> {
        if !self.same_dims(other) {
            return shape_err(format!(
                "plane {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            ));
        }
        Ok(())
    }

    /// Samples scaled to `[0, 1]` as a 1-channel tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(1, self.height, self.width, |_, y, x| {
            T::from_f64(self.get(x, y) as f64 / MAX_SAMPLE)
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor): scales by 255, rounds and clips.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Plane> {
        if t.channels() != 1 {
            return shape_err("plane conversion needs a 1-channel tensor");
        }
        let data = t.data().iter().map(|v| quantize_sample(v.to_f64() * MAX_SAMPLE)).collect();
        Plane::new(t.width(), t.height(), data)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Plane> {
        if x0 + w > self.width || y0 + h > self.height {
            return shape_err("plane crop out of bounds");
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Plane::new(w, h, data)
    }
}

/// Rounds half away from zero and clips to the 8-bit range.
#[inline]
pub fn quantize_sample(v: f64) -> u8 {
    v.round().clamp(0.0, MAX_SAMPLE) as u8
}

/// A luma-only or 4:2:0 frame with optional QP metadata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    planes: Vec<Plane>,
    qp: Option<u8>,
}

/// Chroma dimensions for a 4:2:0 frame.
pub fn chroma_dims(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(2), height.div_ceil(2))
}

impl Frame {
    pub fn luma(y: Plane) -> Self {
        Frame { planes: vec![y], qp: None }
    }

    pub fn yuv420(y: Plane, u: Plane, v: Plane) -> Result<Self> {
        let (cw, ch) = chroma_dims(y.width, y.height);
        for c in [&u, &v] {
            if c.width != cw || c.height != ch {
                return shape_err(format!(
                    "chroma plane {}x{} does not match 4:2:0 size {}x{}",
                    c.width, c.height, cw, ch
                ));
            }
        }
        Ok(Frame {
            planes: vec![y, u, v],
            qp: None,
        })
    }

    /// Builds a frame from 1 or 3 planes.
    pub fn from_planes(mut planes: Vec<Plane>) -> Result<Self> {
        match planes.len() {
            1 => Ok(Frame::luma(planes.remove(0))),
            3 => {
                let v = planes.pop().unwrap();
                let u = planes.pop().unwrap();
                Frame::yuv420(planes.pop().unwrap(), u, v)
            }
            n => Err(Error::InvalidArgument(format!("a frame has 1 or 3 planes, got {n}"))),
        }
    }

    pub fn with_qp(mut self, qp: u8) -> Self {
        self.qp = Some(qp);
        self
    }

    pub fn qp(&self) -> Option<u8> {
        self.qp
    }
    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }
    pub fn planes_mut(&mut self) -> &mut [Plane] {
        &mut self.planes
    }
    pub fn luma_plane(&self) -> &Plane {
        &self.planes[0]
    }
    pub fn width(&self) -> usize {
        self.planes[0].width
    }
    pub fn height(&self) -> usize {
        self.planes[0].height
    }
    pub fn has_chroma(&self) -> bool {
        self.planes.len() == 3
    }
    pub fn sample_count(&self) -> usize {
        self.planes.iter().map(|p| p.data.len()).sum()
    }

    pub fn same_layout(&self, other: &Frame) -> bool {
        self.planes.len() == other.planes.len() && self.planes.iter().zip(&other.planes).all(|(a, b)| a.same_dims(b))
    }

    pub(crate) fn check_layout(&self, other: &Frame) -> Result<()> {
        if !self.same_layout(other) {
            return shape_err(format!(
                "frame layouts differ: {}x{} ({} planes) vs {}x{} ({} planes)",
                self.width(),
                self.height(),
                self.planes.len(),
                other.width(),
                other.height(),
                other.planes.len()
            ));
        }
        Ok(())
    }
}
