//! Bodies of the `dscf` subcommands. Each returns a summary that the binary
//! prints; every file they write is a deterministic function of the inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codec::{
    bd_rate, padding_impact_block, padding_impact_frame, psnr, sse, toy_decode, toy_encode, Frame, Plane, RdPoint,
};
use crate::error::{Error, Result};
use crate::io::{
    decode_stream, encode_stream, load_weights, read_raw_frames, save_weights, write_raw_frames, FilterConfig,
    FilterMode, RawFormat, RunConfig, SideInfo, Stream, StreamFrame, StreamHeader,
};
use crate::network::{dsc_to_std_ratio, Model, NetworkConfig};
use crate::rm::{apply_ctu_flags, ctu_control, frame_control, rdo_search, residual_learned, rm_apply};
use crate::tensor::{Border, BorderMode, Tensor};
use crate::training::{encode_pairs, sample_patches, train_pipeline, QpBand};

/// QPs of the rate-distortion sweep.
pub const EVAL_QPS: [u8; 4] = [22, 27, 32, 37];

fn read_all(paths: &[PathBuf], fmt: RawFormat, what: &str) -> Result<Vec<Frame>> {
    if paths.is_empty() {
        return Err(Error::Config(format!("dataset.{what} lists no files")));
    }
    let mut frames = Vec::new();
    for p in paths {
        frames.extend(read_raw_frames(p, fmt)?);
    }
    Ok(frames)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Runs the model over one plane, either whole or as independent
/// `block × block` tiles.
pub fn filter_plane(model: &Model<f32>, plane: &Plane, block: Option<usize>, border: BorderMode) -> Result<Plane> {
    let x: Tensor<f32> = plane.to_tensor();
    let Some(b) = block else {
        return Plane::from_tensor(&model.forward(&x, &Border::ZeroFill)?);
    };
    if b == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    let (w, h) = (plane.width(), plane.height());
    let a = if border == BorderMode::Context { model.receptive_border() } else { 0 };
    let mut out = plane.clone();
    for y0 in (0..h).step_by(b) {
        for x0 in (0..w).step_by(b) {
            let (bw, bh) = (b.min(w - x0), b.min(h - y0));
            // Context is clipped at the frame edge, where zero filling applies
            // as it does for the whole frame.
            let (top, left) = (y0.saturating_sub(a), x0.saturating_sub(a));
            let (bottom, right) = ((y0 + bh + a).min(h), (x0 + bw + a).min(w));
            let window = x.crop(top, left, bottom - top, right - left)?;
            let y = model.forward(&window, &Border::ZeroFill)?.crop(y0 - top, x0 - left, bh, bw)?;
            let y = Plane::from_tensor(&y)?;
            for yy in 0..bh {
                for xx in 0..bw {
                    out.set(x0 + xx, y0 + yy, y.get(xx, yy));
                }
            }
        }
    }
    Ok(out)
}

/// Filters every plane with the same (luma) model.
pub fn filter_frame(model: &Model<f32>, frame: &Frame, block: Option<usize>, border: BorderMode) -> Result<Frame> {
    let planes = frame
        .planes()
        .iter()
        .map(|p| filter_plane(model, p, block, border))
        .collect::<Result<Vec<_>>>()?;
    let out = Frame::from_planes(planes)?;
    Ok(match frame.qp() {
        Some(q) => out.with_qp(q),
        None => out,
    })
}

/// Decoder-side reconstruction of the final output from side information.
pub fn apply_side_info(rec: &Frame, filtered: Option<&Frame>, side: &SideInfo, mode: FilterMode, ctu: usize) -> Result<Frame> {
    let need = || filtered.ok_or_else(|| Error::InvalidArgument(format!("mode {mode} needs a filtered frame")));
    match (mode, side) {
        (FilterMode::None, SideInfo::None) => Ok(rec.clone()),
        (FilterMode::Cnn, SideInfo::None) => Ok(need()?.clone()),
        (FilterMode::CnnRm, SideInfo::Rm(p)) => rm_apply(rec, &residual_learned(need()?, rec)?, p),
        (FilterMode::CnnFrameControl, SideInfo::FrameFlag(on)) => Ok(if *on { need()?.clone() } else { rec.clone() }),
        (FilterMode::CnnCtuControl, SideInfo::CtuFlags(flags)) => apply_ctu_flags(rec, need()?, flags, ctu),
        _ => Err(Error::Malformed(format!("side info does not match mode {mode}"))),
    }
}

/// Encoder-side choice of side information.
fn choose_side_info(rec: &Frame, filtered: Option<&Frame>, orig: &Frame, fc: &FilterConfig) -> Result<SideInfo> {
    Ok(match (fc.mode, filtered) {
        (FilterMode::None, _) => SideInfo::None,
        (FilterMode::Cnn, _) => SideInfo::None,
        (FilterMode::CnnRm, Some(f)) => SideInfo::Rm(rdo_search(rec, f, orig, fc.lambda_bits)?),
        (FilterMode::CnnFrameControl, Some(f)) => SideInfo::FrameFlag(frame_control(rec, f, orig)?),
        (FilterMode::CnnCtuControl, Some(f)) => SideInfo::CtuFlags(ctu_control(rec, f, orig, fc.ctu)?.flags),
        (m, None) => return Err(Error::InvalidArgument(format!("mode {m} needs a filtered frame"))),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub qp: u8,
    pub psnr_rec: f64,
    pub psnr_out: f64,
    pub coeff_bits: f64,
    pub side_bits: usize,
}

struct Encoded {
    output: Frame,
    stream_frame: StreamFrame,
    metrics: FrameMetrics,
    sse_out: u64,
}

fn encode_one(model: Option<&Model<f32>>, orig: &Frame, index: usize, qp: u8, fc: &FilterConfig) -> Result<Encoded> {
    let enc = toy_encode(orig, qp)?;
    let filtered = match (fc.mode.uses_network(), model) {
        (true, Some(m)) => Some(filter_frame(m, &enc.rec, fc.block, fc.border)?),
        (true, None) => return Err(Error::Config(format!("mode {} needs a weight file", fc.mode))),
        (false, _) => None,
    };
    let side = choose_side_info(&enc.rec, filtered.as_ref(), orig, fc)?;
    let output = apply_side_info(&enc.rec, filtered.as_ref(), &side, fc.mode, fc.ctu)?;
    let metrics = FrameMetrics {
        frame: index,
        qp,
        psnr_rec: psnr(&enc.rec, orig)?,
        psnr_out: psnr(&output, orig)?,
        coeff_bits: enc.rate_bits,
        side_bits: side.bits(),
    };
    Ok(Encoded {
        sse_out: sse(&output, orig)?,
        output,
        stream_frame: StreamFrame { coeffs: enc.coeffs, side },
        metrics,
    })
}

// --- train ---------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub folded: PathBuf,
    pub unfolded: PathBuf,
    pub log: PathBuf,
    pub ls_random_init: f64,
    pub ls_after_hint: Option<f64>,
    pub ls_final: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let tc = cfg.train_config();
    let origs = read_all(&cfg.dataset.train, cfg.dataset.format(), "train")?;
    let qp = tc.band.representative_qp();
    let pairs = encode_pairs(&origs, qp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(6);
    let patches = sample_patches(&pairs, tc.patch, cfg.dataset.patches, rng.random())?;
    info!("training band {} on {} patches at QP {qp}", tc.band, patches.len());
    let report = train_pipeline(&patches, &tc)?;

    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let folded = dir.join(format!("student_{}.dscf", tc.band));
    let unfolded = dir.join(format!("student_{}_unfolded.dscf", tc.band));
    let log = dir.join(format!("train_{}.log", tc.band));
    save_weights(&folded, &report.student)?;
    save_weights(&unfolded, &report.unfolded)?;
    let mut text = String::new();
    for r in &report.log {
        writeln!(text, "{r}").unwrap();
    }
    writeln!(text, "ls_random_init={:.9e}", report.ls_random_init).unwrap();
    if let Some(l) = report.ls_after_hint {
        writeln!(text, "ls_after_hint={l:.9e}").unwrap();
    }
    writeln!(text, "ls_final={:.9e}", report.ls_final).unwrap();
    fs::write(&log, text)?;
    Ok(TrainOutcome {
        folded,
        unfolded,
        log,
        ls_random_init: report.ls_random_init,
        ls_after_hint: report.ls_after_hint,
        ls_final: report.ls_final,
    })
}

// --- filter / decode -----------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct FilterOutcome {
    pub mode: FilterMode,
    pub frames: Vec<FrameMetrics>,
    #[serde(skip)]
    pub output: PathBuf,
    #[serde(skip)]
    pub stream: PathBuf,
}

pub fn cmd_filter(cfg: &RunConfig) -> Result<FilterOutcome> {
    let origs = read_all(&cfg.dataset.eval, cfg.dataset.format(), "eval")?;
    let qp = cfg.filter_qp();
    let fc = &cfg.filter;
    let model = if fc.mode.uses_network() { Some(load_weights(cfg.weights_for(qp)?)?) } else { None };
    let mut outputs = Vec::with_capacity(origs.len());
    let mut frames = Vec::with_capacity(origs.len());
    let mut metrics = Vec::with_capacity(origs.len());
    for (i, orig) in origs.iter().enumerate() {
        let e = encode_one(model.as_ref(), orig, i, qp, fc)?;
        info!(
            "frame {i}: PSNR {:.4} -> {:.4} dB",
            e.metrics.psnr_rec, e.metrics.psnr_out
        );
        outputs.push(e.output);
        frames.push(e.stream_frame);
        metrics.push(e.metrics);
    }
    let stream = Stream {
        header: StreamHeader {
            width: cfg.dataset.width,
            height: cfg.dataset.height,
            chroma: cfg.dataset.chroma,
            mode: fc.mode,
            lambda_bits: fc.lambda_bits,
            border: fc.border,
            ctu: fc.ctu,
            block: fc.block,
        },
        frames,
    };
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let output = dir.join("filtered.yuv");
    let stream_path = dir.join("stream.dscb");
    write_raw_frames(&output, &outputs)?;
    fs::write(&stream_path, encode_stream(&stream)?)?;
    let mut text = String::new();
    for m in &metrics {
        writeln!(
            text,
            "frame={} qp={} psnr_rec={:.6} psnr_out={:.6} coeff_bits={:.1} side_bits={}",
            m.frame, m.qp, m.psnr_rec, m.psnr_out, m.coeff_bits, m.side_bits
        )
        .unwrap();
    }
    fs::write(dir.join("metrics.txt"), text)?;
    let outcome = FilterOutcome {
        mode: fc.mode,
        frames: metrics,
        output,
        stream: stream_path,
    };
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&outcome).unwrap())?;
    Ok(outcome)
}

/// Rebuilds the filtered frames from a stream; the network is re-run on the
/// decoded reconstruction where the mode needs it.
pub fn cmd_decode(cfg: &RunConfig, stream_path: &Path) -> Result<PathBuf> {
    let stream = decode_stream(&fs::read(stream_path)?)?;
    let h = &stream.header;
    let mut outputs = Vec::with_capacity(stream.frames.len());
    let mut cached: Option<(PathBuf, Model<f32>)> = None;
    for f in &stream.frames {
        let rec = toy_decode(&f.coeffs)?;
        let filtered = if h.mode.uses_network() {
            let path = cfg.weights_for(f.coeffs.qp)?.to_path_buf();
            if cached.as_ref().map(|(p, _)| p != &path).unwrap_or(true) {
                cached = Some((path.clone(), load_weights(&path)?));
            }
            let model = &cached.as_ref().unwrap().1;
            Some(filter_frame(model, &rec, h.block, h.border)?)
        } else {
            None
        };
        outputs.push(apply_side_info(&rec, filtered.as_ref(), &f.side, h.mode, h.ctu)?);
    }
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let out = dir.join("decoded.yuv");
    write_raw_frames(&out, &outputs)?;
    Ok(out)
}

// --- analyze -------------------------------------------------------------

pub fn analyze_report(model: &Model<f32>, width: usize, height: usize, file_len: Option<usize>) -> Result<String> {
    let cfg = model.config();
    let pc = model.param_count();
    let mut s = String::new();
    let state = if model.is_folded() { "folded" } else { "unfolded (BN scale/shift counted)" };
    writeln!(s, "model: K={} F={} {state}", cfg.num_dsc_layers, cfg.feature_maps).unwrap();
    if let Some(n) = file_len {
        writeln!(s, "file size: {n} bytes").unwrap();
    }
    writeln!(s, "parameters per layer: {:?}", pc.per_layer).unwrap();
    for (i, b) in pc.blocks.iter().enumerate() {
        writeln!(s, "block {}: {}", i + 1, group(*b as u64)).unwrap();
    }
    writeln!(s, "final conv: {}", group(pc.final_conv as u64)).unwrap();
    writeln!(s, "Sum {}", group(pc.total as u64)).unwrap();
    let macs = model.flops_count(width, height);
    writeln!(s, "MACs per pixel: {}", group(macs.per_pixel)).unwrap();
    writeln!(
        s,
        "MACs at {width}x{height}: {} ({:.2}G); counting multiply and add separately: {:.2}G",
        group(macs.total),
        macs.total as f64 / 1e9,
        macs.two_op() as f64 / 1e9
    )
    .unwrap();
    writeln!(
        s,
        "DSC/standard cost ratio: C_O=1 -> {:.6}, C_O={} -> {:.6}",
        dsc_to_std_ratio(1, 3, 3)?,
        cfg.feature_maps,
        dsc_to_std_ratio(cfg.feature_maps, 3, 3)?
    )
    .unwrap();
    let a = model.receptive_border();
    let fr = padding_impact_frame(1920, 1080, a)?;
    writeln!(s, "zero-padding border width a = {a}").unwrap();
    writeln!(s, "frame-level (1920x1080): {:.2}% of pixels affected", 100.0 * fr).unwrap();
    if 2 * a <= 64 {
        let bl = padding_impact_block(64, a)?;
        writeln!(
            s,
            "block-level (64x64): {:.1}% exact, {:.1}% first-order",
            100.0 * bl.exact,
            100.0 * bl.approx
        )
        .unwrap();
    }
    Ok(s)
}

fn group(n: u64) -> String {
    let d = n.to_string();
    let mut out = String::new();
    for (i, c) in d.chars().enumerate() {
        if i > 0 && (d.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Reports on a weight file, or on the folded student architecture when no
/// file is given.
pub fn cmd_analyze(weights: Option<&Path>, width: usize, height: usize) -> Result<String> {
    match weights {
        Some(p) => {
            let bytes = fs::read(p)?;
            analyze_report(&crate::io::decode_weights(&bytes)?, width, height, Some(bytes.len()))
        }
        None => {
            let cfg = NetworkConfig {
                with_bn: false,
                ..NetworkConfig::student()
            };
            analyze_report(&Model::zeros(cfg)?, width, height, None)
        }
    }
}

// --- fold ----------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub output: PathBuf,
    /// Largest output difference on the probe input.
    pub max_abs_diff: f64,
    pub bytes_before: usize,
    pub bytes_after: usize,
}

pub fn cmd_fold(input: &Path, output: &Path, seed: u64) -> Result<FoldOutcome> {
    let bytes = fs::read(input)?;
    let model = crate::io::decode_weights(&bytes)?;
    let folded = model.fold_bn()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = Tensor::<f32>::from_fn(1, 64, 64, |_, _, _| rng.random::<f32>());
    let a = model.forward(&probe, &Border::ZeroFill)?;
    let b = folded.forward(&probe, &Border::ZeroFill)?;
    let max_abs_diff = a.max_abs_diff(&b);
    if let Some(dir) = output.parent() {
        ensure_dir(dir)?;
    }
    save_weights(output, &folded)?;
    Ok(FoldOutcome {
        output: output.to_path_buf(),
        max_abs_diff,
        bytes_before: bytes.len(),
        bytes_after: fs::metadata(output)?.len() as usize,
    })
}

// --- eval ----------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct EvalOutcome {
    pub mode: FilterMode,
    pub qps: Vec<u8>,
    pub anchor: Vec<RdPoint>,
    pub test: Vec<RdPoint>,
    /// Average rate change of the filtered curve at equal PSNR, in percent.
    pub bd_rate: f64,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutcome> {
    let origs = read_all(&cfg.dataset.eval, cfg.dataset.format(), "eval")?;
    let fc = &cfg.filter;
    let samples: usize = origs.iter().map(Frame::sample_count).sum();
    let pooled = |sse: u64| 10.0 * (255.0f64 * 255.0 / (sse.max(1) as f64 / samples as f64)).log10();
    let mut anchor = Vec::new();
    let mut test = Vec::new();
    for qp in EVAL_QPS {
        let model = if fc.mode.uses_network() { Some(load_weights(cfg.weights_for(qp)?)?) } else { None };
        let (mut sse_rec, mut sse_out, mut bits, mut side) = (0u64, 0u64, 0.0, 0usize);
        for (i, orig) in origs.iter().enumerate() {
            let e = encode_one(model.as_ref(), orig, i, qp, fc)?;
            sse_rec += sse(&toy_decode(&e.stream_frame.coeffs)?, orig)?;
            sse_out += e.sse_out;
            bits += e.metrics.coeff_bits;
            side += e.metrics.side_bits;
        }
        let a = RdPoint::new(bits.max(1.0), pooled(sse_rec))?;
        let t = RdPoint::new((bits + side as f64).max(1.0), pooled(sse_out))?;
        info!(
            "QP {qp} ({}): anchor {:.1} bits {:.4} dB, {} {:.1} bits {:.4} dB",
            QpBand::from_qp(qp),
            a.rate,
            a.psnr,
            fc.mode,
            t.rate,
            t.psnr
        );
        anchor.push(a);
        test.push(t);
    }
    let bd = bd_rate(&anchor, &test)?;
    let outcome = EvalOutcome {
        mode: fc.mode,
        qps: EVAL_QPS.to_vec(),
        anchor,
        test,
        bd_rate: bd,
    };
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let mut text = String::new();
    for ((qp, a), t) in outcome.qps.iter().zip(&outcome.anchor).zip(&outcome.test) {
        writeln!(
            text,
            "qp={qp} anchor_bits={:.1} anchor_psnr={:.6} test_bits={:.1} test_psnr={:.6}",
            a.rate, a.psnr, t.rate, t.psnr
        )
        .unwrap();
    }
    writeln!(text, "bd_rate={bd:.4}").unwrap();
    fs::write(dir.join("eval.txt"), text)?;
    fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&outcome).unwrap())?;
    Ok(outcome)
}

/// Writes `count` synthetic originals to a raw file.
pub fn cmd_synth(path: &Path, fmt: RawFormat, count: usize, seed: u64) -> Result<()> {
    if count == 0 || fmt.width == 0 || fmt.height == 0 {
        return Err(Error::Config("synth needs a positive count and frame size".into()));
    }
    let frames: Vec<Frame> = (0..count as u64)
        .map(|i| crate::codec::synthetic_frame(fmt.width, fmt.height, fmt.chroma, seed.wrapping_add(i)))
        .collect();
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    write_raw_frames(path, &frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::synthetic_frame;
    use crate::network::build_student;

    #[test]
    fn block_filtering_with_context_matches_whole_frame() {
        let m = build_student::<f32>(2).fold_bn().unwrap();
        let p = synthetic_frame(40, 28, false, 1).luma_plane().clone();
        let whole = filter_plane(&m, &p, None, BorderMode::Zero).unwrap();
        assert_eq!(filter_plane(&m, &p, Some(16), BorderMode::Context).unwrap(), whole);
        assert_ne!(filter_plane(&m, &p, Some(16), BorderMode::Zero).unwrap(), whole);
    }

    #[test]
    fn analyze_architecture() {
        let r = cmd_analyze(None, 1280, 720).unwrap();
        assert!(r.contains("Sum 11,114"), "{r}");
        assert!(r.contains("block 1: 2,761"));
        assert!(r.contains("9,976,320,000"));
        assert!(r.contains("2.87%"));
        assert!(r.contains("52.7% exact"));
    }

    #[test]
    fn side_info_must_fit_mode() {
        let f = synthetic_frame(16, 16, false, 0);
        assert!(apply_side_info(&f, None, &SideInfo::FrameFlag(true), FilterMode::CnnRm, 64).is_err());
        assert!(apply_side_info(&f, None, &SideInfo::None, FilterMode::Cnn, 64).is_err());
        assert_eq!(apply_side_info(&f, None, &SideInfo::None, FilterMode::None, 64).unwrap(), f);
    }
}
