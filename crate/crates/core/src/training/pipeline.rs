//! Teacher pre-training, hint-based student initialization, student
//! fine-tuning and BN folding.

use std::fmt;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::band::QpBand;
use super::data::PatchPair;
use super::losses::{at_loss_grad, attention_map, mse_loss, mse_loss_grad, mmd_loss_grad, normalized_channel_mean, AttentionMap, ChannelMean};
use crate::error::{shape_err, Error, Result};
use crate::network::{BnMode, Model, NetworkConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HintLoss {
    At,
    Mmd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub band: QpBand,
    /// Teacher epochs.
    pub n1: usize,
    /// Hint epochs; `None` picks the band's default schedule.
    pub n2: Option<usize>,
    /// Student fine-tuning epochs.
    pub n3: usize,
    /// Square patch side: 32 or 64.
    pub patch: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Taken from the run seed when loaded as part of a run configuration.
    #[serde(skip)]
    pub seed: u64,
    pub hint_loss: HintLoss,
    /// Attention exponent.
    pub p: f64,
    /// Weight of the old running BN statistics in each update.
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            band: QpBand::High,
            n1: 50,
            n2: None,
            n3: 50,
            patch: 32,
            batch: 16,
            learning_rate: 1e-3,
            seed: 0,
            hint_loss: HintLoss::At,
            p: 2.0,
            bn_momentum: 0.9,
        }
    }
}

impl TrainConfig {
    /// Full-length schedule for `band`.
    pub fn paper(band: QpBand) -> Self {
        TrainConfig {
            band,
            ..Default::default()
        }
    }

    /// Short schedule for laptop-scale runs.
    pub fn desk(band: QpBand) -> Self {
        TrainConfig {
            band,
            n1: 5,
            n2: Some(2),
            n3: 5,
            batch: 4,
            ..Default::default()
        }
    }

    pub fn hint_epochs(&self) -> usize {
        self.n2.unwrap_or_else(|| self.band.paper_n2())
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch != 32 && self.patch != 64 {
            return Err(Error::Config(format!("patch must be 32 or 64, got {}", self.patch)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("p must be positive, got {}", self.p)));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!("bn_momentum must lie in [0, 1), got {}", self.bn_momentum)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Teacher,
    Hint,
    Student,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Teacher => "teacher",
            Phase::Hint => "hint",
            Phase::Student => "student",
        })
    }
}

/// Mean training loss of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based within the phase.
    pub epoch: usize,
    pub loss: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "phase={} epoch={} loss={:.9e}", self.phase, self.epoch, self.loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// BN folded into the pointwise convolutions.
    pub student: Model<f32>,
    pub unfolded: Model<f32>,
    pub teacher: Option<Model<f32>>,
    pub log: Vec<EpochRecord>,
    /// Student reconstruction loss at initialization.
    pub ls_random_init: f64,
    /// Student reconstruction loss after the hint phase, when it ran.
    pub ls_after_hint: Option<f64>,
    pub ls_final: f64,
}

enum HintTarget {
    At(AttentionMap),
    Mmd(ChannelMean),
}

enum Objective<'a> {
    Mse,
    Hint {
        points: &'a [usize],
        /// `[patch][point]`
        targets: &'a [Vec<HintTarget>],
        p: f64,
    },
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_dataset(data: &[PatchPair]) -> Result<()> {
    let first = data.first().ok_or(Error::EmptyDataset)?;
    let dims = first.rec.dims();
    if dims.0 != 1 {
        return shape_err("training patches must be single-channel");
    }
    if let Some(bad) = data.iter().find(|p| p.rec.dims() != dims || p.orig.dims() != dims) {
        return shape_err(format!("patch {:?}/{:?} differs from {:?}", bad.rec.dims(), bad.orig.dims(), dims));
    }
    Ok(())
}

/// Reconstruction loss over `data` in fixed batch order, with batch-statistics
/// BN as during training but without touching the running estimates.
pub fn reconstruction_loss(model: &Model<f32>, data: &[PatchPair], batch: usize) -> Result<f64> {
    check_dataset(data)?;
    let mut total = 0.0;
    for chunk in data.chunks(batch.max(1)) {
        let inputs: Vec<Tensor<f32>> = chunk.iter().map(|p| p.rec.clone()).collect();
        let targets: Vec<Tensor<f32>> = chunk.iter().map(|p| p.orig.clone()).collect();
        let out = model.forward_batch(&inputs, BnMode::Batch, None)?;
        total += mse_loss(&out.outputs, &targets)? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

fn hint_step(
    model: &Model<f32>,
    idx: &[usize],
    inputs: &[Tensor<f32>],
    points: &[usize],
    targets: &[Vec<HintTarget>],
    p: f64,
) -> Result<(f64, crate::network::BatchOutput<f32>, crate::network::ModelGrads)> {
    let last = *points.iter().max().ok_or_else(|| Error::InvalidArgument("no hint points".into()))?;
    let out = model.forward_batch(inputs, BnMode::Batch, Some(last))?;
    let scale = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    let mut hint_grads = Vec::with_capacity(points.len());
    for (j, &pt) in points.iter().enumerate() {
        let feats = out
            .trace
            .layer_output(pt)
            .ok_or_else(|| Error::MissingRecord(format!("hint layer {pt}")))?;
        let mut gs = Vec::with_capacity(idx.len());
        for (&i, f) in idx.iter().zip(feats) {
            let (l, g) = match &targets[i][j] {
                HintTarget::At(t) => at_loss_grad(t, f, p)?,
                HintTarget::Mmd(t) => mmd_loss_grad(t, f)?,
            };
            loss += l * scale;
            gs.push(g.map(|v| v * scale).cast::<f32>());
        }
        hint_grads.push((pt, gs));
    }
    let grads = model.backward_batch(&out.trace, None, &hint_grads)?;
    Ok((loss, out, grads))
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &mut Model<f32>,
    data: &[PatchPair],
    cfg: &TrainConfig,
    epochs: usize,
    phase: Phase,
    rng: &mut ChaCha8Rng,
    objective: &Objective<'_>,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    if epochs == 0 {
        return Ok(());
    }
    let sizes: Vec<usize> = model.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut state = AdamState::new(&sizes);
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch) {
            let inputs: Vec<Tensor<f32>> = idx.iter().map(|&i| data[i].rec.clone()).collect();
            let (loss, out, grads) = match objective {
                Objective::Mse => {
                    let targets: Vec<Tensor<f32>> = idx.iter().map(|&i| data[i].orig.clone()).collect();
                    let out = model.forward_batch(&inputs, BnMode::Batch, None)?;
                    let (loss, g) = mse_loss_grad(&out.outputs, &targets)?;
                    let grads = model.backward_batch(&out.trace, Some(&g), &[])?;
                    (loss, out, grads)
                }
                Objective::Hint { points, targets, p } => hint_step(model, idx, &inputs, points, targets, *p)?,
            };
            adam_step(&mut model.param_slices_mut(), &grads.slices(), &mut state, &adam)?;
            model.apply_batch_stats(&out.stats, cfg.bn_momentum);
            epoch_loss += loss * idx.len() as f64;
        }
        let rec = EpochRecord {
            phase,
            epoch,
            loss: epoch_loss / data.len() as f64,
        };
        info!("{rec}");
        log.push(rec);
    }
    Ok(())
}

/// Runs the full build: teacher for `n1` epochs, hint initialization of the
/// student for `n2` epochs, student fine-tuning for `n3` epochs, then BN
/// folding. The teacher is skipped entirely when `n2 = 0`.
pub fn train_pipeline(dataset: &[PatchPair], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_dataset(dataset)?;
    let mut log = Vec::new();

    let mut student = Model::<f32>::random(NetworkConfig::student(), rng_stream(cfg.seed, 1).random())?;
    let ls_random_init = reconstruction_loss(&student, dataset, cfg.batch)?;
    info!("student initial reconstruction loss {ls_random_init:.9e}");

    let n2 = cfg.hint_epochs();
    let mut teacher_out = None;
    let mut ls_after_hint = None;
    if n2 > 0 {
        let mut teacher = Model::<f32>::random(NetworkConfig::teacher(), rng_stream(cfg.seed, 2).random())?;
        run_phase(&mut teacher, dataset, cfg, cfg.n1, Phase::Teacher, &mut rng_stream(cfg.seed, 3), &Objective::Mse, &mut log)?;

        let t_points = teacher.default_hint_points();
        let s_points = student.default_hint_points();
        let targets = dataset
            .iter()
            .map(|pp| {
                teacher.hint_maps(&pp.rec, &t_points)?.iter().map(|m| {
                    Ok(match cfg.hint_loss {
                        HintLoss::At => HintTarget::At(attention_map(m, cfg.p)?),
                        HintLoss::Mmd => HintTarget::Mmd(normalized_channel_mean(m)),
                    })
                }).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let objective = Objective::Hint {
            points: &s_points,
            targets: &targets,
            p: cfg.p,
        };
        run_phase(&mut student, dataset, cfg, n2, Phase::Hint, &mut rng_stream(cfg.seed, 4), &objective, &mut log)?;
        let ls = reconstruction_loss(&student, dataset, cfg.batch)?;
        info!("student reconstruction loss after hint phase {ls:.9e}");
        ls_after_hint = Some(ls);
        teacher_out = Some(teacher);
    } else if cfg.n1 > 0 {
        info!("hint phase disabled; skipping teacher training");
    }

    run_phase(&mut student, dataset, cfg, cfg.n3, Phase::Student, &mut rng_stream(cfg.seed, 5), &Objective::Mse, &mut log)?;
    let ls_final = reconstruction_loss(&student, dataset, cfg.batch)?;
    let folded = student.fold_bn()?;
    Ok(TrainReport {
        student: folded,
        unfolded: student,
        teacher: teacher_out,
        log,
        ls_random_init,
        ls_after_hint,
        ls_final,
    })
}
