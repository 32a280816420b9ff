//! Batched forward/backward used for training.
//!
//! Batch-norm in training mode normalizes with statistics pooled over the whole
//! batch, so forward and backward proceed layer by layer across all samples.

use super::Model;
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_depthwise, conv2d_pointwise, conv2d_standard, depthwise_grads, pointwise_grads, standard_grads,
    Border, Padded, Real, Tensor,
};

/// Which statistics batch-norm normalizes with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Pooled batch statistics (training).
    Batch,
    /// Running statistics (inference).
    Running,
}

/// Biased per-channel batch statistics of one BN layer.
#[derive(Clone, Debug)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

struct LayerTrace<T> {
    dw_out: Vec<Tensor<T>>,
    /// Normalized pre-activation; empty when the layer has no BN.
    xhat: Vec<Tensor<T>>,
    inv_std: Vec<f64>,
    out: Vec<Tensor<T>>,
}

/// Intermediate values retained by [`Model::forward_batch`].
pub struct BatchTrace<T> {
    inputs: Vec<Tensor<T>>,
    layers: Vec<LayerTrace<T>>,
    final_ran: bool,
    mode: BnMode,
}

impl<T: Real> BatchTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }

    /// Post-ReLU outputs of DSC layer `l` for every sample, if it was reached.
    pub fn layer_output(&self, l: usize) -> Option<&[Tensor<T>]> {
        self.layers.get(l).map(|t| t.out.as_slice())
    }
}

pub struct BatchOutput<T> {
    /// Network outputs (input + residual); empty when the pass stopped early.
    pub outputs: Vec<Tensor<T>>,
    pub trace: BatchTrace<T>,
    /// Batch statistics per DSC layer (`None` without BN or in running mode).
    pub stats: Vec<Option<ChannelStats>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub depthwise: Vec<f64>,
    pub pointwise_w: Vec<f64>,
    pub pointwise_b: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

/// Gradients of a loss with respect to every trainable parameter and the
/// network inputs, summed over the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<LayerGrads>,
    pub final_w: Vec<f64>,
    pub final_b: Vec<f64>,
    pub input: Vec<Tensor<f64>>,
}

impl ModelGrads {
    /// Same order as [`Model::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(&l.depthwise);
            out.push(&l.pointwise_w);
            out.push(&l.pointwise_b);
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push(g);
                out.push(b);
            }
        }
        out.push(&self.final_w);
        out.push(&self.final_b);
        out
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

impl<T: Real> Model<T> {
    /// Runs a batch through the network keeping everything backward needs.
    /// With `stop_after = Some(l)` the pass ends after DSC layer `l`.
    pub fn forward_batch(&self, inputs: &[Tensor<T>], mode: BnMode, stop_after: Option<usize>) -> Result<BatchOutput<T>> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = inputs.iter().find(|t| t.channels() != 1 || t.dims() != inputs[0].dims()) {
            return Err(Error::Shape(format!("batch inputs must share a 1-channel shape, got {:?}", bad.dims())));
        }
        let last = match stop_after {
            Some(l) if l >= self.layers().len() => {
                return Err(Error::InvalidArgument(format!("stop_after {l} beyond {} layers", self.layers().len())))
            }
            Some(l) => l,
            None => self.layers().len() - 1,
        };
        let n = inputs[0].plane_len();
        let mut layers: Vec<LayerTrace<T>> = Vec::with_capacity(last + 1);
        let mut stats = Vec::with_capacity(last + 1);
        for (l, layer) in self.layers()[..=last].iter().enumerate() {
            let prev = if l == 0 { inputs } else { &layers[l - 1].out[..] };
            let mut dw_out = Vec::with_capacity(prev.len());
            let mut pre = Vec::with_capacity(prev.len());
            for x in prev {
                let dw = conv2d_depthwise(x, &layer.depthwise, &Border::ZeroFill)?;
                pre.push(conv2d_pointwise(&dw, &layer.pointwise)?);
                dw_out.push(dw);
            }
            let channels = layer.out_channels();
            let (xhat, inv_std, out, st) = match &layer.bn {
                None => {
                    let out = pre.iter().map(crate::tensor::relu).collect();
                    (Vec::new(), Vec::new(), out, None)
                }
                Some(bn) => {
                    let (mean, inv_std, st) = match mode {
                        BnMode::Running => {
                            (bn.mean.iter().map(|m| m.to_f64()).collect::<Vec<_>>(), bn.inv_std_running(), None)
                        }
                        BnMode::Batch => {
                            let count = pre.len() * n;
                            let mut mean = vec![0.0; channels];
                            let mut var = vec![0.0; channels];
                            for c in 0..channels {
                                let s: f64 = pre.iter().map(|t| t.channel(c).iter().map(|v| v.to_f64()).sum::<f64>()).sum();
                                mean[c] = s / count as f64;
                                let q: f64 = pre
                                    .iter()
                                    .map(|t| t.channel(c).iter().map(|v| (v.to_f64() - mean[c]).powi(2)).sum::<f64>())
                                    .sum();
                                var[c] = q / count as f64;
                            }
                            let eps = bn.eps.to_f64();
                            let inv = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                            (mean.clone(), inv, Some(ChannelStats { mean, var, count }))
                        }
                    };
                    let mut xhat = Vec::with_capacity(pre.len());
                    let mut out = Vec::with_capacity(pre.len());
                    for p in &pre {
                        let mut xh = p.clone();
                        let mut o = p.clone();
                        for c in 0..channels {
                            let (g, b) = (bn.gamma[c].to_f64(), bn.beta[c].to_f64());
                            for (xv, ov) in xh.channel_mut(c).iter_mut().zip(o.channel_mut(c)) {
                                let z = (xv.to_f64() - mean[c]) * inv_std[c];
                                *xv = T::from_f64(z);
                                *ov = T::from_f64((g * z + b).max(0.0));
                            }
                        }
                        xhat.push(xh);
                        out.push(o);
                    }
                    (xhat, inv_std, out, st)
                }
            };
            stats.push(st);
            layers.push(LayerTrace {
                dw_out,
                xhat,
                inv_std,
                out,
            });
        }

        let final_ran = stop_after.is_none();
        let mut outputs = Vec::new();
        if final_ran {
            for (x, h) in inputs.iter().zip(&layers[last].out) {
                let r = conv2d_standard(h, self.final_conv(), &Border::ZeroFill)?;
                outputs.push(x.add(&r)?);
            }
        }
        Ok(BatchOutput {
            outputs,
            trace: BatchTrace {
                inputs: inputs.to_vec(),
                layers,
                final_ran,
                mode,
            },
            stats,
        })
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the network outputs) and any
    /// `hint_grads` (gradient w.r.t. post-ReLU outputs of the given DSC layers).
    pub fn backward_batch(
        &self,
        trace: &BatchTrace<T>,
        grad_out: Option<&[Tensor<T>]>,
        hint_grads: &[(usize, Vec<Tensor<T>>)],
    ) -> Result<ModelGrads> {
        let batch = trace.batch_size();
        let k = self.layers().len();
        if trace.layers.len() > k {
            return Err(Error::MissingRecord("trace was produced by a deeper model".into()));
        }
        let top = match grad_out {
            Some(g) => {
                if !trace.final_ran || trace.layers.len() != k {
                    return Err(Error::MissingRecord("output gradient given but the final layer was not recorded".into()));
                }
                if g.len() != batch {
                    return Err(Error::Shape(format!("{} output gradients for a batch of {batch}", g.len())));
                }
                k - 1
            }
            None => hint_grads
                .iter()
                .map(|(l, _)| *l)
                .max()
                .ok_or_else(|| Error::InvalidArgument("nothing to backpropagate".into()))?,
        };
        for (l, g) in hint_grads {
            if *l >= trace.layers.len() {
                return Err(Error::MissingRecord(format!("no record for hint layer {l}")));
            }
            if g.len() != batch {
                return Err(Error::Shape(format!("{} hint gradients for a batch of {batch}", g.len())));
            }
        }

        let mut grads = ModelGrads {
            layers: self
                .layers()
                .iter()
                .map(|l| LayerGrads {
                    depthwise: vec![0.0; l.depthwise.weights().len()],
                    pointwise_w: vec![0.0; l.pointwise.weights().len()],
                    pointwise_b: vec![0.0; l.pointwise.bias().len()],
                    gamma: l.bn.as_ref().map(|b| vec![0.0; b.channels()]),
                    beta: l.bn.as_ref().map(|b| vec![0.0; b.channels()]),
                })
                .collect(),
            final_w: vec![0.0; self.final_conv().weights().len()],
            final_b: vec![0.0; 1],
            input: Vec::new(),
        };

        let (_, h, w) = trace.inputs[0].dims();
        let n = h * w;
        let f = self.config().feature_maps;
        let mut input_grad: Vec<Vec<f64>> = vec![vec![0.0; n]; batch];
        let mut g_cur: Vec<Vec<f64>> = vec![vec![0.0; f * n]; batch];

        if let Some(go) = grad_out {
            for i in 0..batch {
                if go[i].dims() != (1, h, w) {
                    return Err(Error::Shape("output gradient shape".into()));
                }
                let g = go[i].to_f64_vec();
                add_into(&mut input_grad[i], &g);
                let pad = Padded::new(&trace.layers[k - 1].out[i], &Border::ZeroFill)?;
                let raw = standard_grads(&pad, self.final_conv(), &g);
                add_into(&mut grads.final_w, &raw.weights);
                add_into(&mut grads.final_b, &raw.bias);
                g_cur[i] = raw.input;
            }
        }

        for l in (0..=top).rev() {
            let layer = &self.layers()[l];
            let lt = &trace.layers[l];
            let cout = layer.out_channels();
            for (hl, hg) in hint_grads {
                if *hl == l {
                    for i in 0..batch {
                        if hg[i].dims() != (cout, h, w) {
                            return Err(Error::Shape(format!("hint gradient shape {:?}", hg[i].dims())));
                        }
                        add_into(&mut g_cur[i], &hg[i].to_f64_vec());
                    }
                }
            }
            // ReLU gate
            for i in 0..batch {
                for (g, o) in g_cur[i].iter_mut().zip(lt.out[i].data()) {
                    if o.to_f64() <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            if let Some(bn) = &layer.bn {
                let lg = &mut grads.layers[l];
                let (dgamma, dbeta) = (lg.gamma.as_mut().unwrap(), lg.beta.as_mut().unwrap());
                let m = (batch * n) as f64;
                for c in 0..cout {
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for i in 0..batch {
                        let gs = &g_cur[i][c * n..(c + 1) * n];
                        sum_g += gs.iter().sum::<f64>();
                        sum_gx += gs.iter().zip(lt.xhat[i].channel(c)).map(|(g, x)| g * x.to_f64()).sum::<f64>();
                    }
                    dgamma[c] += sum_gx;
                    dbeta[c] += sum_g;
                    let scale = bn.gamma[c].to_f64() * lt.inv_std[c];
                    for i in 0..batch {
                        let xh = lt.xhat[i].channel(c);
                        for (g, x) in g_cur[i][c * n..(c + 1) * n].iter_mut().zip(xh) {
                            *g = match trace.mode {
                                BnMode::Batch => scale * (*g - sum_g / m - x.to_f64() * sum_gx / m),
                                BnMode::Running => scale * *g,
                            };
                        }
                    }
                }
            }
            let mut g_prev = Vec::with_capacity(batch);
            for i in 0..batch {
                let raw_pw = pointwise_grads(&lt.dw_out[i].to_f64_vec(), n, &layer.pointwise, &g_cur[i]);
                let lg = &mut grads.layers[l];
                add_into(&mut lg.pointwise_w, &raw_pw.weights);
                add_into(&mut lg.pointwise_b, &raw_pw.bias);
                let prev = if l == 0 { &trace.inputs[i] } else { &trace.layers[l - 1].out[i] };
                let pad = Padded::new(prev, &Border::ZeroFill)?;
                let raw_dw = depthwise_grads(&pad, &layer.depthwise, &raw_pw.input);
                add_into(&mut lg.depthwise, &raw_dw.weights);
                g_prev.push(raw_dw.input);
            }
            g_cur = g_prev;
        }
        for i in 0..batch {
            add_into(&mut input_grad[i], &g_cur[i]);
        }
        grads.input = input_grad
            .into_iter()
            .map(|g| Tensor::from_f64_vec(1, h, w, g))
            .collect();
        Ok(grads)
    }

    /// Folds batch statistics from a training-mode pass into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[Option<ChannelStats>], momentum: f64) {
        for (layer, st) in self.layers_mut().iter_mut().zip(stats) {
            if let (Some(bn), Some(st)) = (&mut layer.bn, st) {
                bn.update_running(&st.mean, &st.var, st.count, momentum);
            }
        }
    }
}
