//! Dense planar tensors and the fixed 3×3 convolution family used by the filter.
//!
//! Storage is generic over [`Real`] (`f32` for deployment, `f64` for numerical
//! checks); every reduction accumulates in `f64` regardless of storage type.
//! Each forward op has a `*_recorded` twin that keeps what its backward rule
//! needs, and [`backward`] turns a record plus upstream gradient into input and
//! kernel gradients.

use std::fmt::Debug;

use crate::error::{shape_err, Error, Result};

/// Scalar storage type of a [`Tensor`].
pub trait Real: Copy + Default + PartialOrd + Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Real for f32 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Channels × height × width array, row-major within each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![T::default(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return shape_err(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            ));
        }
        if data.iter().any(|v| !v.to_f64().is_finite()) {
            return Err(Error::InvalidArgument("tensor values must be finite".into()));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Tensor {
            channels,
            height,
            width,
            data,
        }
    }

    pub(crate) fn from_f64_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Tensor {
            channels,
            height,
            width,
            data: data.into_iter().map(T::from_f64).collect(),
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Copies the `height × width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return shape_err(format!(
                "crop {}x{}@({},{}) exceeds {}x{}",
                height, width, top, left, self.height, self.width
            ));
        }
        Ok(Tensor::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    pub fn same_dims(&self, other: &Tensor<T>) -> bool {
        self.dims() == other.dims()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Elementwise sum; shapes must agree.
    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        if !self.same_dims(other) {
            return shape_err(format!("add {:?} vs {:?}", self.dims(), other.dims()));
        }
        Ok(Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| T::from_f64(a.to_f64() + b.to_f64()))
                .collect(),
        })
    }
}

/// How a 3×3 convolution obtains samples outside the block it filters.
#[derive(Clone, Copy, Debug)]
pub enum Border<'a, T = f32> {
    /// Out-of-block samples are zero ("same" padding).
    ZeroFill,
    /// Out-of-block samples come from the surrounding reconstruction ("valid" padding).
    ContextFill(Context<'a, T>),
}

/// A larger tensor that contains the block being filtered at `(top, left)`.
#[derive(Clone, Copy, Debug)]
pub struct Context<'a, T = f32> {
    pub frame: &'a Tensor<T>,
    pub top: usize,
    pub left: usize,
}

impl<'a, T: Real> Context<'a, T> {
    /// Checks that the context holds the block plus a `margin`-wide ring on every side.
    pub fn check(&self, channels: usize, height: usize, width: usize, margin: usize) -> Result<()> {
        let f = self.frame;
        if f.channels() != channels {
            return shape_err(format!(
                "context has {} channels, block has {}",
                f.channels(),
                channels
            ));
        }
        if self.top < margin
            || self.left < margin
            || self.top + height + margin > f.height()
            || self.left + width + margin > f.width()
        {
            return Err(Error::InsufficientContext(format!(
                "block {}x{} at ({},{}) needs a {}-pixel ring inside a {}x{} context",
                height,
                width,
                self.top,
                self.left,
                margin,
                f.height(),
                f.width()
            )));
        }
        Ok(())
    }
}

/// Serializable border selector used by configuration and the model-level API.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BorderMode {
    #[default]
    #[serde(alias = "same")]
    Zero,
    #[serde(alias = "valid")]
    Context,
}

impl BorderMode {
    /// Pairs a mode with an optional context; `Context` without one is an error.
    pub fn with_context<'a, T: Real>(self, context: Option<Context<'a, T>>) -> Result<Border<'a, T>> {
        match (self, context) {
            (BorderMode::Zero, _) => Ok(Border::ZeroFill),
            (BorderMode::Context, Some(ctx)) => Ok(Border::ContextFill(ctx)),
            (BorderMode::Context, None) => Err(Error::InsufficientContext(
                "context border mode requested without a context frame".into(),
            )),
        }
    }
}

/// An input tensor with a one-pixel ring, widened to f64.
#[derive(Clone, Debug)]
pub struct Padded {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Padded {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn new<T: Real>(input: &Tensor<T>, border: &Border<'_, T>) -> Result<Self> {
        let (ch, h, w) = input.dims();
        let s = w + 2;
        let mut data = vec![0.0; ch * (h + 2) * s];
        if let Border::ContextFill(ctx) = border {
            ctx.check(ch, h, w, 1)?;
            for c in 0..ch {
                let plane = &mut data[c * (h + 2) * s..(c + 1) * (h + 2) * s];
                for py in 0..h + 2 {
                    let fy = ctx.top + py - 1;
                    for px in 0..w + 2 {
                        plane[py * s + px] = ctx.frame.get(c, fy, ctx.left + px - 1).to_f64();
                    }
                }
            }
        }
        // The interior always comes from the block itself.
        for c in 0..ch {
            let src = input.channel(c);
            let plane = &mut data[c * (h + 2) * s..(c + 1) * (h + 2) * s];
            for y in 0..h {
                for x in 0..w {
                    plane[(y + 1) * s + x + 1] = src[y * w + x].to_f64();
                }
            }
        }
        Ok(Padded {
            channels: ch,
            height: h,
            width: w,
            data,
        })
    }

    #[inline]
    fn stride(&self) -> usize {
        self.width + 2
    }

    #[inline]
    fn plane(&self, c: usize) -> &[f64] {
        let n = (self.height + 2) * self.stride();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Standard 3×3 convolution kernel with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardKernel<T = f32> {
    out_channels: usize,
    in_channels: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> StandardKernel<T> {
    /// `weights` is laid out `[out][in][ky][kx]`.
    pub fn new(out_channels: usize, in_channels: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != out_channels * in_channels * 9 || bias.len() != out_channels {
            return shape_err(format!(
                "standard kernel {}x{}: got {} weights and {} biases",
                out_channels,
                in_channels,
                weights.len(),
                bias.len()
            ));
        }
        Ok(StandardKernel {
            out_channels,
            in_channels,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        StandardKernel {
            out_channels,
            in_channels,
            weights: vec![T::default(); out_channels * in_channels * 9],
            bias: vec![T::default(); out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn bias(&self) -> &[T] {
        &self.bias
    }
    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }
    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }
    pub fn weights_and_bias_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.weights, &mut self.bias)
    }
    pub fn weight(&self, o: usize, c: usize, ky: usize, kx: usize) -> T {
        self.weights[((o * self.in_channels + c) * 3 + ky) * 3 + kx]
    }
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
    /// Multiply-accumulates per output pixel.
    pub fn macs_per_pixel(&self) -> u64 {
        9 * (self.in_channels * self.out_channels) as u64
    }
    pub fn cast<U: Real>(&self) -> StandardKernel<U> {
        StandardKernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            weights: cast_vec(&self.weights),
            bias: cast_vec(&self.bias),
        }
    }
}

/// Per-channel 3×3 kernel. Carries no bias: it folds into the following pointwise bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseKernel<T = f32> {
    channels: usize,
    weights: Vec<T>,
}

impl<T: Real> DepthwiseKernel<T> {
    pub fn new(channels: usize, weights: Vec<T>) -> Result<Self> {
        if weights.len() != channels * 9 {
            return shape_err(format!(
                "depthwise kernel with {} channels: got {} weights",
                channels,
                weights.len()
            ));
        }
        Ok(DepthwiseKernel { channels, weights })
    }

    pub fn zeros(channels: usize) -> Self {
        DepthwiseKernel {
            channels,
            weights: vec![T::default(); channels * 9],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }
    pub fn param_count(&self) -> usize {
        self.weights.len()
    }
    pub fn macs_per_pixel(&self) -> u64 {
        9 * self.channels as u64
    }
    pub fn cast<U: Real>(&self) -> DepthwiseKernel<U> {
        DepthwiseKernel {
            channels: self.channels,
            weights: cast_vec(&self.weights),
        }
    }
}

/// 1×1 cross-channel kernel with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseKernel<T = f32> {
    out_channels: usize,
    in_channels: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> PointwiseKernel<T> {
    /// `weights` is laid out `[out][in]`.
    pub fn new(out_channels: usize, in_channels: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != out_channels * in_channels || bias.len() != out_channels {
            return shape_err(format!(
                "pointwise kernel {}x{}: got {} weights and {} biases",
                out_channels,
                in_channels,
                weights.len(),
                bias.len()
            ));
        }
        Ok(PointwiseKernel {
            out_channels,
            in_channels,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        PointwiseKernel {
            out_channels,
            in_channels,
            weights: vec![T::default(); out_channels * in_channels],
            bias: vec![T::default(); out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn bias(&self) -> &[T] {
        &self.bias
    }
    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }
    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }
    pub fn weights_and_bias_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.weights, &mut self.bias)
    }
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
    pub fn macs_per_pixel(&self) -> u64 {
        (self.in_channels * self.out_channels) as u64
    }
    pub fn cast<U: Real>(&self) -> PointwiseKernel<U> {
        PointwiseKernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            weights: cast_vec(&self.weights),
            bias: cast_vec(&self.bias),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConvKernel<T = f32> {
    Standard(StandardKernel<T>),
    Depthwise(DepthwiseKernel<T>),
    Pointwise(PointwiseKernel<T>),
}

pub(crate) fn cast_vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::from_f64(x.to_f64())).collect()
}

fn check_channels(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return shape_err(format!("{what}: kernel expects {expected} channels, input has {got}"));
    }
    Ok(())
}

// dst[y][x] += w * src[y + ky][x + kx] over an h×w window of a stride-`s` plane.
#[inline]
fn axpy_shifted(dst: &mut [f64], src: &[f64], s: usize, h: usize, w: usize, ky: usize, kx: usize, wk: f64) {
    for y in 0..h {
        let src_row = &src[(y + ky) * s + kx..(y + ky) * s + kx + w];
        let dst_row = &mut dst[y * w..(y + 1) * w];
        for (d, v) in dst_row.iter_mut().zip(src_row) {
            *d += wk * v;
        }
    }
}

// Σ_{y,x} a[y][x] * src[y + ky][x + kx]
#[inline]
fn dot_shifted(a: &[f64], src: &[f64], s: usize, h: usize, w: usize, ky: usize, kx: usize) -> f64 {
    let mut acc = 0.0;
    for y in 0..h {
        let src_row = &src[(y + ky) * s + kx..(y + ky) * s + kx + w];
        let a_row = &a[y * w..(y + 1) * w];
        acc += a_row.iter().zip(src_row).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

fn pad_zero_f64(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let s = w + 2;
    let mut out = vec![0.0; (h + 2) * s];
    for y in 0..h {
        out[(y + 1) * s + 1..(y + 1) * s + 1 + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
    }
    out
}

fn standard_from_padded<T: Real>(pad: &Padded, kernel: &StandardKernel<T>) -> Tensor<T> {
    let (h, w, s) = (pad.height, pad.width, pad.stride());
    let n = h * w;
    let mut out = Vec::with_capacity(kernel.out_channels * n);
    for o in 0..kernel.out_channels {
        let mut acc = vec![kernel.bias[o].to_f64(); n];
        for c in 0..kernel.in_channels {
            let plane = pad.plane(c);
            for ky in 0..3 {
                for kx in 0..3 {
                    let wk = kernel.weight(o, c, ky, kx).to_f64();
                    axpy_shifted(&mut acc, plane, s, h, w, ky, kx, wk);
                }
            }
        }
        out.extend(acc);
    }
    Tensor::from_f64_vec(kernel.out_channels, h, w, out)
}

fn depthwise_from_padded<T: Real>(pad: &Padded, kernel: &DepthwiseKernel<T>) -> Tensor<T> {
    let (h, w, s) = (pad.height, pad.width, pad.stride());
    let n = h * w;
    let mut out = Vec::with_capacity(kernel.channels * n);
    for c in 0..kernel.channels {
        let plane = pad.plane(c);
        let mut acc = vec![0.0; n];
        for k in 0..9 {
            let wk = kernel.weights[c * 9 + k].to_f64();
            axpy_shifted(&mut acc, plane, s, h, w, k / 3, k % 3, wk);
        }
        out.extend(acc);
    }
    Tensor::from_f64_vec(kernel.channels, h, w, out)
}

pub fn conv2d_standard<T: Real>(
    input: &Tensor<T>,
    kernel: &StandardKernel<T>,
    border: &Border<'_, T>,
) -> Result<Tensor<T>> {
    check_channels("standard conv", kernel.in_channels, input.channels())?;
    let pad = Padded::new(input, border)?;
    Ok(standard_from_padded(&pad, kernel))
}

pub fn conv2d_depthwise<T: Real>(
    input: &Tensor<T>,
    kernel: &DepthwiseKernel<T>,
    border: &Border<'_, T>,
) -> Result<Tensor<T>> {
    check_channels("depthwise conv", kernel.channels, input.channels())?;
    let pad = Padded::new(input, border)?;
    Ok(depthwise_from_padded(&pad, kernel))
}

pub fn conv2d_pointwise<T: Real>(input: &Tensor<T>, kernel: &PointwiseKernel<T>) -> Result<Tensor<T>> {
    check_channels("pointwise conv", kernel.in_channels, input.channels())?;
    let (_, h, w) = input.dims();
    let n = h * w;
    let src = input.to_f64_vec();
    let mut out = Vec::with_capacity(kernel.out_channels * n);
    for o in 0..kernel.out_channels {
        let mut acc = vec![kernel.bias[o].to_f64(); n];
        for c in 0..kernel.in_channels {
            let wk = kernel.weights[o * kernel.in_channels + c].to_f64();
            for (a, v) in acc.iter_mut().zip(&src[c * n..(c + 1) * n]) {
                *a += wk * v;
            }
        }
        out.extend(acc);
    }
    Ok(Tensor::from_f64_vec(kernel.out_channels, h, w, out))
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let zero = T::default();
    input.map(|v| if v > zero { v } else { zero })
}

/// What a forward op keeps for its backward rule.
#[derive(Clone, Debug)]
pub enum OpRecord<T = f32> {
    Standard { padded: Padded, kernel: StandardKernel<T> },
    Depthwise { padded: Padded, kernel: DepthwiseKernel<T> },
    Pointwise { input: Tensor<T>, kernel: PointwiseKernel<T> },
    Relu { input: Tensor<T> },
}

/// Gradients produced by [`backward`]; `kernel` holds weight and bias gradients
/// in the same layout as the kernel itself.
#[derive(Clone, Debug)]
pub struct OpGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernel: Option<ConvKernel<T>>,
}

pub fn conv2d_standard_recorded<T: Real>(
    input: &Tensor<T>,
    kernel: &StandardKernel<T>,
    border: &Border<'_, T>,
) -> Result<(Tensor<T>, OpRecord<T>)> {
    check_channels("standard conv", kernel.in_channels, input.channels())?;
    let padded = Padded::new(input, border)?;
    let out = standard_from_padded(&padded, kernel);
    Ok((
        out,
        OpRecord::Standard {
            padded,
            kernel: kernel.clone(),
        },
    ))
}

pub fn conv2d_depthwise_recorded<T: Real>(
    input: &Tensor<T>,
    kernel: &DepthwiseKernel<T>,
    border: &Border<'_, T>,
) -> Result<(Tensor<T>, OpRecord<T>)> {
    check_channels("depthwise conv", kernel.channels, input.channels())?;
    let padded = Padded::new(input, border)?;
    let out = depthwise_from_padded(&padded, kernel);
    Ok((
        out,
        OpRecord::Depthwise {
            padded,
            kernel: kernel.clone(),
        },
    ))
}

pub fn conv2d_pointwise_recorded<T: Real>(
    input: &Tensor<T>,
    kernel: &PointwiseKernel<T>,
) -> Result<(Tensor<T>, OpRecord<T>)> {
    let out = conv2d_pointwise(input, kernel)?;
    Ok((
        out,
        OpRecord::Pointwise {
            input: input.clone(),
            kernel: kernel.clone(),
        },
    ))
}

pub fn relu_recorded<T: Real>(input: &Tensor<T>) -> (Tensor<T>, OpRecord<T>) {
    (relu(input), OpRecord::Relu { input: input.clone() })
}

pub fn backward<T: Real>(record: &OpRecord<T>, upstream: &Tensor<T>) -> Result<OpGrads<T>> {
    let g = upstream.to_f64_vec();
    match record {
        OpRecord::Standard { padded, kernel } => {
            expect_dims(upstream, kernel.out_channels, padded.height, padded.width)?;
            let raw = standard_grads(padded, kernel, &g);
            Ok(OpGrads {
                input: Tensor::from_f64_vec(kernel.in_channels, padded.height, padded.width, raw.input),
                kernel: Some(ConvKernel::Standard(StandardKernel {
                    out_channels: kernel.out_channels,
                    in_channels: kernel.in_channels,
                    weights: cast_vec(&raw.weights),
                    bias: cast_vec(&raw.bias),
                })),
            })
        }
        OpRecord::Depthwise { padded, kernel } => {
            expect_dims(upstream, kernel.channels, padded.height, padded.width)?;
            let raw = depthwise_grads(padded, kernel, &g);
            Ok(OpGrads {
                input: Tensor::from_f64_vec(kernel.channels, padded.height, padded.width, raw.input),
                kernel: Some(ConvKernel::Depthwise(DepthwiseKernel {
                    channels: kernel.channels,
                    weights: cast_vec(&raw.weights),
                })),
            })
        }
        OpRecord::Pointwise { input, kernel } => {
            expect_dims(upstream, kernel.out_channels, input.height(), input.width())?;
            let raw = pointwise_grads(&input.to_f64_vec(), input.plane_len(), kernel, &g);
            Ok(OpGrads {
                input: Tensor::from_f64_vec(kernel.in_channels, input.height(), input.width(), raw.input),
                kernel: Some(ConvKernel::Pointwise(PointwiseKernel {
                    out_channels: kernel.out_channels,
                    in_channels: kernel.in_channels,
                    weights: cast_vec(&raw.weights),
                    bias: cast_vec(&raw.bias),
                })),
            })
        }
        OpRecord::Relu { input } => {
            if !input.same_dims(upstream) {
                return shape_err("relu upstream gradient shape differs from input");
            }
            Ok(OpGrads {
                input: relu_backward(input, upstream),
                kernel: None,
            })
        }
    }
}

fn expect_dims<T: Real>(t: &Tensor<T>, c: usize, h: usize, w: usize) -> Result<()> {
    if t.dims() != (c, h, w) {
        return shape_err(format!("upstream gradient {:?}, expected {:?}", t.dims(), (c, h, w)));
    }
    Ok(())
}

/// Raw f64 gradients of one convolution: input, weights, bias (empty for depthwise).
pub(crate) struct RawGrads {
    pub input: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Input gradient of a 3×3 correlation: correlate the zero-padded upstream with
/// the flipped kernel.
fn conv3x3_input_grad(upstream: &[f64], h: usize, w: usize, taps: impl Fn(usize) -> f64, acc: &mut [f64]) {
    let gp = pad_zero_f64(upstream, h, w);
    let s = w + 2;
    for k in 0..9 {
        let (ky, kx) = (k / 3, k % 3);
        axpy_shifted(acc, &gp, s, h, w, 2 - ky, 2 - kx, taps(k));
    }
}

pub(crate) fn depthwise_grads<T: Real>(pad: &Padded, kernel: &DepthwiseKernel<T>, g: &[f64]) -> RawGrads {
    let (h, w, s) = (pad.height, pad.width, pad.stride());
    let n = h * w;
    let mut gi = vec![0.0; kernel.channels * n];
    let mut gw = vec![0.0; kernel.channels * 9];
    for c in 0..kernel.channels {
        let gc = &g[c * n..(c + 1) * n];
        let plane = pad.plane(c);
        for k in 0..9 {
            gw[c * 9 + k] = dot_shifted(gc, plane, s, h, w, k / 3, k % 3);
        }
        conv3x3_input_grad(gc, h, w, |k| kernel.weights[c * 9 + k].to_f64(), &mut gi[c * n..(c + 1) * n]);
    }
    RawGrads {
        input: gi,
        weights: gw,
        bias: Vec::new(),
    }
}

/// `x` is the pointwise input widened to f64, `n` its plane length.
pub(crate) fn pointwise_grads<T: Real>(x: &[f64], n: usize, kernel: &PointwiseKernel<T>, g: &[f64]) -> RawGrads {
    let (co, ci) = (kernel.out_channels, kernel.in_channels);
    let mut gi = vec![0.0; ci * n];
    let mut gw = vec![0.0; co * ci];
    let mut gb = vec![0.0; co];
    for o in 0..co {
        let go = &g[o * n..(o + 1) * n];
        gb[o] = go.iter().sum();
        for c in 0..ci {
            let xc = &x[c * n..(c + 1) * n];
            gw[o * ci + c] = go.iter().zip(xc).map(|(a, b)| a * b).sum();
            let wk = kernel.weights[o * ci + c].to_f64();
            for (d, v) in gi[c * n..(c + 1) * n].iter_mut().zip(go) {
                *d += wk * v;
            }
        }
    }
    RawGrads {
        input: gi,
        weights: gw,
        bias: gb,
    }
}

pub(crate) fn standard_grads<T: Real>(pad: &Padded, kernel: &StandardKernel<T>, g: &[f64]) -> RawGrads {
    let (h, w, s) = (pad.height, pad.width, pad.stride());
    let n = h * w;
    let (co, ci) = (kernel.out_channels, kernel.in_channels);
    let mut gi = vec![0.0; ci * n];
    let mut gw = vec![0.0; co * ci * 9];
    let mut gb = vec![0.0; co];
    for o in 0..co {
        let go = &g[o * n..(o + 1) * n];
        gb[o] = go.iter().sum();
        for c in 0..ci {
            let plane = pad.plane(c);
            for k in 0..9 {
                gw[(o * ci + c) * 9 + k] = dot_shifted(go, plane, s, h, w, k / 3, k % 3);
            }
            conv3x3_input_grad(
                go,
                h,
                w,
                |k| kernel.weight(o, c, k / 3, k % 3).to_f64(),
                &mut gi[c * n..(c + 1) * n],
            );
        }
    }
    RawGrads {
        input: gi,
        weights: gw,
        bias: gb,
    }
}

pub(crate) fn relu_backward<T: Real>(input: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let zero = T::default();
    let data = input
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&x, &g)| if x > zero { g } else { zero })
        .collect();
    Tensor {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data,
    }
}
