//! Teacher/student architectures built from depthwise-separable layers.
//!
//! A model is `K` DSC layers (depthwise 3×3 → pointwise 1×1 → optional BN →
//! ReLU) followed by a plain 3×3 convolution down to one channel, whose output
//! is added back onto the input reconstruction.

mod bn;
mod train;

pub use bn::{BnParams, DEFAULT_BN_EPS};
pub use train::{BatchOutput, BatchTrace, BnMode, ChannelStats, LayerGrads, ModelGrads};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    cast_vec, conv2d_depthwise, conv2d_pointwise, conv2d_standard, relu, Border, DepthwiseKernel,
    PointwiseKernel, Real, StandardKernel, Tensor,
};

/// Shape of a model: `K` DSC layers of `F` feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub num_dsc_layers: usize,
    pub feature_maps: usize,
    pub with_bn: bool,
}

impl NetworkConfig {
    pub const fn student() -> Self {
        NetworkConfig {
            num_dsc_layers: 9,
            feature_maps: 32,
            with_bn: true,
        }
    }

    pub const fn teacher() -> Self {
        NetworkConfig {
            num_dsc_layers: 24,
            feature_maps: 64,
            with_bn: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_dsc_layers == 0 || self.feature_maps == 0 {
            return Err(Error::InvalidArgument(format!(
                "network needs K >= 1 and F >= 1, got K={} F={}",
                self.num_dsc_layers, self.feature_maps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DscLayer<T = f32> {
    pub depthwise: DepthwiseKernel<T>,
    pub pointwise: PointwiseKernel<T>,
    pub bn: Option<BnParams<T>>,
}

impl<T: Real> DscLayer<T> {
    pub fn in_channels(&self) -> usize {
        self.depthwise.channels()
    }
    pub fn out_channels(&self) -> usize {
        self.pointwise.out_channels()
    }

    /// Weights and biases, plus trainable BN scale/shift when BN is still attached.
    pub fn param_count(&self) -> usize {
        let bn = self.bn.as_ref().map_or(0, |b| 2 * b.channels());
        self.depthwise.param_count() + self.pointwise.param_count() + bn
    }

    pub fn macs_per_pixel(&self) -> u64 {
        self.depthwise.macs_per_pixel() + self.pointwise.macs_per_pixel()
    }

    fn cast<U: Real>(&self) -> DscLayer<U> {
        DscLayer {
            depthwise: self.depthwise.cast(),
            pointwise: self.pointwise.cast(),
            bn: self.bn.as_ref().map(BnParams::cast),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    layers: Vec<DscLayer<T>>,
    final_conv: StandardKernel<T>,
    config: NetworkConfig,
}

/// Parameter totals grouped the way the block table reports them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub per_layer: Vec<usize>,
    /// DSC layers grouped into blocks ending at the default hint points.
    pub blocks: Vec<usize>,
    pub final_conv: usize,
    pub total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MacCount {
    pub per_pixel: u64,
    pub total: u64,
}

impl MacCount {
    /// Same count with multiply and add tallied separately.
    pub fn two_op(&self) -> u64 {
        2 * self.total
    }
}

/// Depth-fraction hint points (0-based layer indices): the ends of three
/// near-equal blocks. Student (K=9) → [2, 5, 8]; teacher (K=24) → [7, 15, 23].
pub fn default_hint_points(num_layers: usize) -> Vec<usize> {
    let mut pts: Vec<usize> = (1..=3)
        .map(|j| ((2 * num_layers * j + 3) / 6).max(1) - 1)
        .collect();
    pts.dedup();
    pts
}

/// MACs per pixel of a DSC layer with 3×3 depthwise kernels.
pub fn dsc_macs_per_pixel(c_in: usize, c_out: usize) -> u64 {
    (9 * c_in + c_in * c_out) as u64
}

/// MACs per pixel of a standard 3×3 convolution.
pub fn standard_macs_per_pixel(c_in: usize, c_out: usize) -> u64 {
    (9 * c_in * c_out) as u64
}

/// Cost of a DSC layer relative to a standard convolution of the same shape:
/// `1/C_O + 1/(K_W·K_H)`.
pub fn dsc_to_std_ratio(c_out: usize, k_w: usize, k_h: usize) -> Result<f64> {
    if c_out == 0 || k_w == 0 || k_h == 0 {
        return Err(Error::InvalidArgument("ratio arguments must all be >= 1".into()));
    }
    Ok(1.0 / c_out as f64 + 1.0 / (k_w * k_h) as f64)
}

/// Scale applied to the He-normal draw of the final convolution so the residual
/// branch starts close to zero.
pub const FINAL_CONV_INIT_SCALE: f64 = 0.01;

pub fn build_student<T: Real>(seed: u64) -> Model<T> {
    Model::random(NetworkConfig::student(), seed).expect("student config is valid")
}

pub fn build_teacher<T: Real>(seed: u64) -> Model<T> {
    Model::random(NetworkConfig::teacher(), seed).expect("teacher config is valid")
}

fn he_normal<T: Real>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, scale: f64) -> Vec<T> {
    let normal = Normal::new(0.0, scale * (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| T::from_f64(normal.sample(rng))).collect()
}

impl<T: Real> Model<T> {
    pub fn new(config: NetworkConfig, layers: Vec<DscLayer<T>>, final_conv: StandardKernel<T>) -> Result<Self> {
        config.validate()?;
        let f = config.feature_maps;
        if layers.len() != config.num_dsc_layers {
            return shape_err(format!(
                "expected {} DSC layers, got {}",
                config.num_dsc_layers,
                layers.len()
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            let cin = if i == 0 { 1 } else { f };
            if l.depthwise.channels() != cin || l.pointwise.in_channels() != cin || l.pointwise.out_channels() != f {
                return shape_err(format!(
                    "layer {i}: expected {cin}->{f}, got depthwise {} pointwise {}->{}",
                    l.depthwise.channels(),
                    l.pointwise.in_channels(),
                    l.pointwise.out_channels()
                ));
            }
            match (&l.bn, config.with_bn) {
                (Some(b), true) => {
                    if b.channels() != f {
                        return shape_err(format!("layer {i}: BN has {} channels, expected {f}", b.channels()));
                    }
                    b.validate()?;
                }
                (None, false) => {}
                (Some(_), false) => return shape_err(format!("layer {i} carries BN in a folded model")),
                (None, true) => return Err(Error::MissingBatchNorm(i)),
            }
        }
        if final_conv.in_channels() != f || final_conv.out_channels() != 1 {
            return shape_err(format!(
                "final conv must map {f}->1, got {}->{}",
                final_conv.in_channels(),
                final_conv.out_channels()
            ));
        }
        Ok(Model {
            layers,
            final_conv,
            config,
        })
    }

    /// He-normal weights, zero biases, identity BN.
    pub fn random(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.feature_maps;
        let mut layers = Vec::with_capacity(config.num_dsc_layers);
        for i in 0..config.num_dsc_layers {
            let cin = if i == 0 { 1 } else { f };
            let depthwise = DepthwiseKernel::new(cin, he_normal(&mut rng, cin * 9, 9, 1.0))?;
            let pointwise = PointwiseKernel::new(f, cin, he_normal(&mut rng, f * cin, cin, 1.0), vec![T::default(); f])?;
            let bn = config.with_bn.then(|| BnParams::identity(f));
            layers.push(DscLayer { depthwise, pointwise, bn });
        }
        let final_conv = StandardKernel::new(
            1,
            f,
            he_normal(&mut rng, f * 9, f * 9, FINAL_CONV_INIT_SCALE),
            vec![T::default()],
        )?;
        Model::new(config, layers, final_conv)
    }

    /// A model whose every weight and bias is zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let f = config.feature_maps;
        let layers = (0..config.num_dsc_layers)
            .map(|i| {
                let cin = if i == 0 { 1 } else { f };
                DscLayer {
                    depthwise: DepthwiseKernel::zeros(cin),
                    pointwise: PointwiseKernel::zeros(f, cin),
                    bn: config.with_bn.then(|| BnParams::identity(f)),
                }
            })
            .collect();
        Model::new(config, layers, StandardKernel::zeros(1, f))
    }

    pub fn config(&self) -> NetworkConfig {
        self.config
    }
    pub fn layers(&self) -> &[DscLayer<T>] {
        &self.layers
    }
    pub fn final_conv(&self) -> &StandardKernel<T> {
        &self.final_conv
    }
    pub fn is_folded(&self) -> bool {
        !self.config.with_bn
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            layers: self.layers.iter().map(DscLayer::cast).collect(),
            final_conv: self.final_conv.cast(),
            config: self.config,
        }
    }

    /// Number of 3×3 stages; also the width of the border a zero-filled block
    /// boundary can corrupt.
    pub fn receptive_border(&self) -> usize {
        self.config.num_dsc_layers + 1
    }

    pub fn default_hint_points(&self) -> Vec<usize> {
        default_hint_points(self.config.num_dsc_layers)
    }

    fn layer_forward(&self, i: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let l = &self.layers[i];
        let dw = conv2d_depthwise(x, &l.depthwise, &Border::ZeroFill)?;
        let mut pw = conv2d_pointwise(&dw, &l.pointwise)?;
        if let Some(b) = &l.bn {
            b.apply_running(&mut pw);
        }
        Ok(relu(&pw))
    }

    // Residual branch with zero-filled borders, capturing post-ReLU maps at `points`.
    fn residual(&self, x: &Tensor<T>, points: &[usize]) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>)> {
        let last = points.iter().copied().max();
        let stop = if points.is_empty() { self.layers.len() } else { last.unwrap() + 1 };
        let mut cur = x.clone();
        let mut caught = Vec::with_capacity(points.len());
        for i in 0..stop {
            cur = self.layer_forward(i, &cur)?;
            if points.contains(&i) {
                caught.push((i, cur.clone()));
            }
        }
        let hints = points
            .iter()
            .map(|p| caught.iter().find(|(i, _)| i == p).unwrap().1.clone())
            .collect();
        if !points.is_empty() {
            return Ok((None, hints));
        }
        Ok((Some(conv2d_standard(&cur, &self.final_conv, &Border::ZeroFill)?), hints))
    }

    /// Filters a single-channel reconstruction (inference mode: BN uses running
    /// statistics). With `ContextFill` the block is extended by
    /// [`receptive_border`](Self::receptive_border) pixels of context so the
    /// result matches frame-level filtering of that region.
    pub fn forward(&self, rec: &Tensor<T>, border: &Border<'_, T>) -> Result<Tensor<T>> {
        if rec.channels() != 1 {
            return shape_err(format!("model input must have 1 channel, got {}", rec.channels()));
        }
        let (_, h, w) = rec.dims();
        let residual = match border {
            Border::ZeroFill => self.residual(rec, &[])?.0.unwrap(),
            Border::ContextFill(ctx) => {
                let a = self.receptive_border();
                ctx.check(1, h, w, a)?;
                let ext = ctx.frame.crop(ctx.top - a, ctx.left - a, h + 2 * a, w + 2 * a)?;
                self.residual(&ext, &[])?.0.unwrap().crop(a, a, h, w)?
            }
        };
        rec.add(&residual)
    }

    /// Post-ReLU feature stacks after the given (0-based) DSC layers.
    pub fn hint_maps(&self, input: &Tensor<T>, points: &[usize]) -> Result<Vec<Tensor<T>>> {
        if let Some(&bad) = points.iter().find(|&&p| p >= self.layers.len()) {
            return Err(Error::InvalidArgument(format!(
                "hint point {bad} out of range for {} layers",
                self.layers.len()
            )));
        }
        if points.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.residual(input, points)?.1)
    }

    /// Merges every BN into the preceding pointwise convolution.
    pub fn fold_bn(&self) -> Result<Model<T>> {
        if self.is_folded() {
            return Err(Error::AlreadyFolded);
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let bn = l.bn.as_ref().ok_or(Error::MissingBatchNorm(i))?;
            let (co, ci) = (l.pointwise.out_channels(), l.pointwise.in_channels());
            let mut w = vec![0.0; co * ci];
            let mut b = vec![0.0; co];
            for o in 0..co {
                let s = bn.gamma[o].to_f64() / (bn.var[o].to_f64() + bn.eps.to_f64()).sqrt();
                for c in 0..ci {
                    w[o * ci + c] = s * l.pointwise.weights()[o * ci + c].to_f64();
                }
                b[o] = s * (l.pointwise.bias()[o].to_f64() - bn.mean[o].to_f64()) + bn.beta[o].to_f64();
            }
            layers.push(DscLayer {
                depthwise: l.depthwise.clone(),
                pointwise: PointwiseKernel::new(co, ci, cast_vec(&w), cast_vec(&b))?,
                bn: None,
            });
        }
        let config = NetworkConfig {
            with_bn: false,
            ..self.config
        };
        Model::new(config, layers, self.final_conv.clone())
    }

    pub fn param_count(&self) -> ParamBreakdown {
        let per_layer: Vec<usize> = self.layers.iter().map(DscLayer::param_count).collect();
        let mut blocks = Vec::new();
        let mut start = 0;
        for p in self.default_hint_points() {
            blocks.push(per_layer[start..=p].iter().sum());
            start = p + 1;
        }
        let final_conv = self.final_conv.param_count();
        let total = per_layer.iter().sum::<usize>() + final_conv;
        ParamBreakdown {
            per_layer,
            blocks,
            final_conv,
            total,
        }
    }

    /// Multiply-accumulates for a `width × height` frame (convolutions only;
    /// bias adds, BN and ReLU are not counted).
    pub fn flops_count(&self, width: usize, height: usize) -> MacCount {
        let per_pixel = self.layers.iter().map(DscLayer::macs_per_pixel).sum::<u64>() + self.final_conv.macs_per_pixel();
        MacCount {
            per_pixel,
            total: per_pixel * (width * height) as u64,
        }
    }

    /// Trainable parameter slices in a fixed order: per layer depthwise,
    /// pointwise weights, pointwise bias, then BN gamma and beta; final conv
    /// weights and bias last. [`ModelGrads::slices`] uses the same order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.depthwise.weights_mut());
            let (w, b) = l.pointwise.weights_and_bias_mut();
            out.push(w);
            out.push(b);
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        let (w, b) = self.final_conv.weights_and_bias_mut();
        out.push(w);
        out.push(b);
        out
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DscLayer<T>] {
        &mut self.layers
    }
}
