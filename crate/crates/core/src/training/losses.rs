//! Reconstruction and hint losses, each with its gradient.
//!
//! Hint targets are plain `H·W` vectors so the teacher side can be computed
//! once and reused for every student step.

use log::debug;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

fn check_batch<T: Real>(pred: &[Tensor<T>], target: &[Tensor<T>]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pred.len() != target.len() {
        return shape_err(format!("{} predictions for {} targets", pred.len(), target.len()));
    }
    if let Some((p, t)) = pred.iter().zip(target).find(|(p, t)| !p.same_dims(t)) {
        return shape_err(format!("prediction {:?} vs target {:?}", p.dims(), t.dims()));
    }
    Ok(())
}

/// Per-sample sum of squared differences, averaged over the batch.
pub fn mse_loss<T: Real>(pred: &[Tensor<T>], target: &[Tensor<T>]) -> Result<f64> {
    check_batch(pred, target)?;
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            p.data()
                .iter()
                .zip(t.data())
                .map(|(a, b)| (a.to_f64() - b.to_f64()).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// [`mse_loss`] and its gradient with respect to `pred`.
pub fn mse_loss_grad<T: Real>(pred: &[Tensor<T>], target: &[Tensor<T>]) -> Result<(f64, Vec<Tensor<T>>)> {
    let loss = mse_loss(pred, target)?;
    let scale = 2.0 / pred.len() as f64;
    let grads = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let mut g = p.clone();
            for (gv, tv) in g.data_mut().iter_mut().zip(t.data()) {
                *gv = T::from_f64(scale * (gv.to_f64() - tv.to_f64()));
            }
            g
        })
        .collect();
    Ok((loss, grads))
}

/// A normalized spatial map; `degenerate` marks an all-zero source.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub degenerate: bool,
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("attention exponent must be positive, got {p}")));
    }
    Ok(())
}

fn raw_attention<T: Real>(f: &Tensor<T>, p: f64) -> Vec<f64> {
    let mut a = vec![0.0; f.plane_len()];
    for c in 0..f.channels() {
        for (av, v) in a.iter_mut().zip(f.channel(c)) {
            *av += v.to_f64().abs().powf(p);
        }
    }
    a
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Σ_c |f_c|^p`, L2-normalized over all positions.
pub fn attention_map<T: Real>(features: &Tensor<T>, p: f64) -> Result<AttentionMap> {
    check_exponent(p)?;
    if features.channels() == 0 {
        return shape_err("attention map needs at least one channel");
    }
    let mut values = raw_attention(features, p);
    let norm = l2(&values);
    let degenerate = norm == 0.0;
    if degenerate {
        debug!("attention map of an all-zero feature stack");
    } else {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(AttentionMap {
        height: features.height(),
        width: features.width(),
        values,
        degenerate,
    })
}

fn check_spatial(h: usize, w: usize, len: usize, s_dims: (usize, usize, usize)) -> Result<()> {
    if h * w != len || (s_dims.1, s_dims.2) != (h, w) {
        return shape_err(format!("teacher {h}x{w} vs student {}x{}", s_dims.1, s_dims.2));
    }
    Ok(())
}

/// Squared distance between the teacher and student attention maps.
pub fn at_loss<T: Real>(teacher: &Tensor<T>, student: &Tensor<T>, p: f64) -> Result<f64> {
    Ok(at_loss_grad(&attention_map(teacher, p)?, student, p)?.0)
}

/// Attention-transfer loss against a precomputed teacher map, with the
/// gradient with respect to the student features.
pub fn at_loss_grad<T: Real>(target: &AttentionMap, student: &Tensor<T>, p: f64) -> Result<(f64, Tensor<f64>)> {
    check_exponent(p)?;
    check_spatial(target.height, target.width, target.values.len(), student.dims())?;
    let a = raw_attention(student, p);
    let norm = l2(&a);
    let q: Vec<f64> = if norm > 0.0 { a.iter().map(|v| v / norm).collect() } else { vec![0.0; a.len()] };
    let loss: f64 = target.values.iter().zip(&q).map(|(t, s)| (t - s).powi(2)).sum();
    let (c, h, w) = student.dims();
    let mut grad = Tensor::<f64>::zeros(c, h, w);
    if norm == 0.0 {
        return Ok((loss, grad));
    }
    // dL/dq, then through the normalization q = a / |a|
    let g: Vec<f64> = target.values.iter().zip(&q).map(|(t, s)| -2.0 * (t - s)).collect();
    let gq: f64 = g.iter().zip(&q).map(|(a, b)| a * b).sum();
    let ga: Vec<f64> = g.iter().zip(&q).map(|(gv, qv)| (gv - gq * qv) / norm).collect();
    for ch in 0..c {
        let src = student.channel(ch);
        for ((o, v), gav) in grad.channel_mut(ch).iter_mut().zip(src).zip(&ga) {
            let x = v.to_f64();
            if x != 0.0 {
                *o = gav * p * x.abs().powf(p - 1.0) * x.signum();
            }
        }
    }
    Ok((loss, grad))
}

/// Mean of the L2-normalized channels of a feature stack. Zero-norm channels
/// are skipped and do not count towards the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMean {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub used: usize,
    pub skipped: usize,
}

pub fn normalized_channel_mean<T: Real>(features: &Tensor<T>) -> ChannelMean {
    let n = features.plane_len();
    let mut values = vec![0.0; n];
    let mut used = 0;
    for c in 0..features.channels() {
        let ch: Vec<f64> = features.channel(c).iter().map(|v| v.to_f64()).collect();
        let norm = l2(&ch);
        if norm == 0.0 {
            continue;
        }
        used += 1;
        for (m, v) in values.iter_mut().zip(&ch) {
            *m += v / norm;
        }
    }
    if used > 0 {
        values.iter_mut().for_each(|v| *v /= used as f64);
    }
    let skipped = features.channels() - used;
    if skipped > 0 {
        debug!("normalized channel mean skipped {skipped} zero-norm channel(s)");
    }
    ChannelMean {
        height: features.height(),
        width: features.width(),
        values,
        used,
        skipped,
    }
}

/// Linear-kernel MMD between the normalized channel means of two stacks.
pub fn mmd_loss<T: Real>(teacher: &Tensor<T>, student: &Tensor<T>) -> Result<f64> {
    Ok(mmd_loss_grad(&normalized_channel_mean(teacher), student)?.0)
}

/// MMD loss against a precomputed teacher mean, with the gradient with
/// respect to the student features.
pub fn mmd_loss_grad<T: Real>(target: &ChannelMean, student: &Tensor<T>) -> Result<(f64, Tensor<f64>)> {
    check_spatial(target.height, target.width, target.values.len(), student.dims())?;
    let ms = normalized_channel_mean(student);
    let loss: f64 = target.values.iter().zip(&ms.values).map(|(t, s)| (t - s).powi(2)).sum();
    let (c, h, w) = student.dims();
    let mut grad = Tensor::<f64>::zeros(c, h, w);
    if ms.used == 0 {
        return Ok((loss, grad));
    }
    let g: Vec<f64> = target.values.iter().zip(&ms.values).map(|(t, s)| -2.0 * (t - s)).collect();
    for ch in 0..c {
        let f: Vec<f64> = student.channel(ch).iter().map(|v| v.to_f64()).collect();
        let norm = l2(&f);
        if norm == 0.0 {
            continue;
        }
        let u: Vec<f64> = f.iter().map(|v| v / norm).collect();
        let gu: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
        let scale = 1.0 / (ms.used as f64 * norm);
        for ((o, gv), uv) in grad.channel_mut(ch).iter_mut().zip(&g).zip(&u) {
            *o = scale * (gv - gu * uv);
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(c: usize, h: usize, w: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn mse_cases() {
        let a = t(1, 1, 2, &[1.0, 3.0]);
        let b = t(1, 1, 2, &[2.0, 5.0]);
        assert_eq!(mse_loss(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 0.0);
        assert_eq!(mse_loss(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap(), 5.0);
        // per-sample SSE {5, 3}
        let c = t(1, 1, 2, &[1.0, 3.0]);
        let d = t(1, 1, 2, &[2.0, 3.0 + 2f64.sqrt()]);
        let m = mse_loss(&[a, c], &[b, d]).unwrap();
        assert!((m - 4.0).abs() < 1e-12);
        assert!(mse_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn attention_examples() {
        let m = attention_map(&t(1, 1, 2, &[3.0, 4.0]), 2.0).unwrap();
        let n = (81.0f64 + 256.0).sqrt();
        assert!((m.values[0] - 9.0 / n).abs() < 1e-15 && (m.values[1] - 16.0 / n).abs() < 1e-15);
        assert!(!m.degenerate);
        let z = attention_map(&Tensor::<f64>::zeros(3, 2, 2), 2.0).unwrap();
        assert!(z.degenerate && z.values.iter().all(|&v| v == 0.0));
        let x = t(2, 1, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y = t(2, 1, 2, &[3.0, 4.0, 1.0, 2.0]);
        assert_eq!(attention_map(&x, 2.0).unwrap(), attention_map(&y, 2.0).unwrap());
        assert_eq!(at_loss(&x, &y, 2.0).unwrap(), 0.0);
        assert!((at_loss(&t(1, 1, 2, &[1.0, 0.0]), &t(1, 1, 2, &[0.0, 1.0]), 2.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(at_loss(&x, &t(1, 2, 1, &[1.0, 1.0]), 2.0).is_err());
    }

    #[test]
    fn mmd_examples() {
        let x = t(2, 1, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mmd_loss(&x, &x).unwrap(), 0.0);
        assert!((mmd_loss(&t(1, 1, 2, &[1.0, 0.0]), &t(1, 1, 2, &[0.0, 1.0])).unwrap() - 2.0).abs() < 1e-15);
        // teacher channels v and -v cancel
        let teacher = t(2, 1, 2, &[1.0, 2.0, -1.0, -2.0]);
        let student = t(1, 1, 2, &[0.6, 0.8]);
        assert!((mmd_loss(&teacher, &student).unwrap() - 1.0).abs() < 1e-12);
        let with_zero = t(2, 1, 2, &[0.0, 0.0, 0.6, 0.8]);
        let m = normalized_channel_mean(&with_zero);
        assert_eq!((m.used, m.skipped), (1, 1));
        assert!((m.values[0] - 0.6).abs() < 1e-15);
    }
}
