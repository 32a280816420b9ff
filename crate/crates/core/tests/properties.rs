use dsc_loopfilter::codec::{
    bd_rate, padding_impact_block, padding_impact_frame, psnr, sse, synthetic_frame, toy_decode, toy_encode, Frame,
    Plane, RdPoint, LOSSLESS_PSNR,
};
use dsc_loopfilter::io::{decode_weights, encode_weights};
use dsc_loopfilter::network::{
    dsc_macs_per_pixel, dsc_to_std_ratio, standard_macs_per_pixel, BnParams, DscLayer, Model, NetworkConfig,
};
use dsc_loopfilter::rm::{
    ctu_control, deserialize_rm, fit_lambda_closed, frame_control, index_to_lambda, quantize_lambda,
    rdo_search, rdo_search_plane, residual_distortion, residual_learned, rm_apply, rm_apply_plane, serialize_rm,
    apply_ctu_flags, RmParams, ResidualPlane,
};
use dsc_loopfilter::tensor::{
    conv2d_depthwise, conv2d_pointwise, conv2d_standard, Border, Context, DepthwiseKernel, PointwiseKernel,
    StandardKernel, Tensor,
};
use dsc_loopfilter::training::{at_loss, mmd_loss};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn rand_tensor(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_vec(c, h, w, rand_vec(r, c * h * w)).unwrap()
}

fn perturb(r: &mut ChaCha8Rng, p: &Plane, amp: i32) -> Plane {
    let data = p.data().iter().map(|&v| (v as i32 + r.random_range(-amp..=amp)).clamp(0, 255) as u8).collect();
    Plane::new(p.width(), p.height(), data).unwrap()
}

/// Random model whose BN layers carry non-trivial statistics.
fn rand_model(r: &mut ChaCha8Rng, k: usize, f: usize) -> Model<f64> {
    let layers = (0..k)
        .map(|i| {
            let cin = if i == 0 { 1 } else { f };
            DscLayer {
                depthwise: DepthwiseKernel::new(cin, rand_vec(r, 9 * cin)).unwrap(),
                pointwise: PointwiseKernel::new(f, cin, rand_vec(r, f * cin), rand_vec(r, f)).unwrap(),
                bn: Some(BnParams {
                    gamma: (0..f).map(|_| r.random_range(0.5..1.5)).collect(),
                    beta: rand_vec(r, f),
                    mean: rand_vec(r, f),
                    var: (0..f).map(|_| r.random_range(0.1..2.0)).collect(),
                    eps: 1e-3,
                }),
            }
        })
        .collect();
    let cfg = NetworkConfig { num_dsc_layers: k, feature_maps: f, with_bn: true };
    Model::new(cfg, layers, StandardKernel::new(1, f, rand_vec(r, 9 * f), rand_vec(r, 1)).unwrap()).unwrap()
}

// --- tensor ops ----------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn depthwise_is_block_diagonal_standard(seed: u64, c in 1usize..5, h in 1usize..7, w in 1usize..7) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut r, c, h, w);
        let dw = rand_vec(&mut r, 9 * c);
        let mut full = vec![0.0; c * c * 9];
        for ch in 0..c {
            full[(ch * c + ch) * 9..(ch * c + ch + 1) * 9].copy_from_slice(&dw[ch * 9..(ch + 1) * 9]);
        }
        let a = conv2d_depthwise(&x, &DepthwiseKernel::new(c, dw).unwrap(), &Border::ZeroFill).unwrap();
        let b = conv2d_standard(&x, &StandardKernel::new(c, c, full, vec![0.0; c]).unwrap(), &Border::ZeroFill).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn pointwise_is_centre_tap_standard(seed: u64, ci in 1usize..5, co in 1usize..5, h in 1usize..6, w in 1usize..6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut r, ci, h, w);
        let pw = rand_vec(&mut r, co * ci);
        let bias = rand_vec(&mut r, co);
        let mut full = vec![0.0; co * ci * 9];
        for (i, v) in pw.iter().enumerate() {
            full[i * 9 + 4] = *v;
        }
        let a = conv2d_pointwise(&x, &PointwiseKernel::new(co, ci, pw, bias.clone()).unwrap()).unwrap();
        let b = conv2d_standard(&x, &StandardKernel::new(co, ci, full, bias).unwrap(), &Border::ZeroFill).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn border_modes_agree_inside_and_keep_dims(seed: u64, ci in 1usize..4, co in 1usize..4, h in 1usize..8, w in 1usize..8) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let frame = rand_tensor(&mut r, ci, h + 4, w + 4);
        let x = frame.crop(2, 2, h, w).unwrap();
        let k = StandardKernel::new(co, ci, rand_vec(&mut r, co * ci * 9), rand_vec(&mut r, co)).unwrap();
        let z = conv2d_standard(&x, &k, &Border::ZeroFill).unwrap();
        let c = conv2d_standard(&x, &k, &Border::ContextFill(Context { frame: &frame, top: 2, left: 2 })).unwrap();
        prop_assert_eq!(z.dims(), (co, h, w));
        prop_assert_eq!(c.dims(), (co, h, w));
        for o in 0..co {
            for y in 1..h.saturating_sub(1) {
                for xx in 1..w.saturating_sub(1) {
                    prop_assert_eq!(z.get(o, y, xx), c.get(o, y, xx));
                }
            }
        }
        // Determinism.
        prop_assert_eq!(conv2d_standard(&x, &k, &Border::ZeroFill).unwrap(), z);
    }

    #[test]
    fn context_must_surround_block(seed: u64, h in 1usize..6, w in 1usize..6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let frame = rand_tensor(&mut r, 1, h + 1, w + 2);
        let x = rand_tensor(&mut r, 1, h, w);
        let k = StandardKernel::new(1, 1, rand_vec(&mut r, 9), vec![0.0]).unwrap();
        // One row short below the block.
        let ctx = Border::ContextFill(Context { frame: &frame, top: 1, left: 1 });
        prop_assert!(conv2d_standard(&x, &k, &ctx).is_err());
    }
}

// --- network -------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn folding_preserves_outputs(seed: u64, k in 1usize..4, f in 1usize..6, h in 1usize..10, w in 1usize..10) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m = rand_model(&mut r, k, f);
        let x = rand_tensor(&mut r, 1, h, w);
        let folded = m.fold_bn().unwrap();
        let a = m.forward(&x, &Border::ZeroFill).unwrap();
        let b = folded.forward(&x, &Border::ZeroFill).unwrap();
        prop_assert_eq!(a.dims(), (1, h, w));
        prop_assert!(a.max_abs_diff(&b) <= 1e-10);
        let (m32, x32) = (m.cast::<f32>(), x.cast::<f32>());
        let b32 = m32.fold_bn().unwrap().forward(&x32, &Border::ZeroFill).unwrap();
        prop_assert!(m32.forward(&x32, &Border::ZeroFill).unwrap().max_abs_diff(&b32) <= 1e-5);
        prop_assert!(folded.fold_bn().is_err());
    }

    #[test]
    fn zero_residual_branch_is_identity(seed: u64, k in 1usize..5, f in 1usize..6, h in 1usize..9, w in 1usize..9) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut r, 1, h, w);
        for with_bn in [false, true] {
            let m = Model::<f64>::zeros(NetworkConfig { num_dsc_layers: k, feature_maps: f, with_bn }).unwrap();
            prop_assert_eq!(m.forward(&x, &Border::ZeroFill).unwrap(), x.clone());
        }
    }

    #[test]
    fn dsc_cost_ratio(ci in 1usize..512, co in 1usize..512) {
        let empirical = dsc_macs_per_pixel(ci, co) as f64 / standard_macs_per_pixel(ci, co) as f64;
        let closed = 1.0 / co as f64 + 1.0 / 9.0;
        prop_assert!((empirical - closed).abs() <= 1e-12);
        prop_assert!((dsc_to_std_ratio(co, 3, 3).unwrap() - closed).abs() <= 1e-12);
    }

    #[test]
    fn weight_files_round_trip(seed: u64, k in 1usize..4, f in 1usize..6, fold: bool) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut m = rand_model(&mut r, k, f).cast::<f32>();
        if fold {
            m = m.fold_bn().unwrap();
        }
        let bytes = encode_weights(&m);
        let back = decode_weights(&bytes).unwrap();
        prop_assert_eq!(encode_weights(&back), bytes);
        prop_assert_eq!(back, m);
    }
}

// --- distillation losses -------------------------------------------------

fn permute_channels(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (c, h, w) = t.dims();
    Tensor::from_fn(c, h, w, |ch, y, x| t.get(perm[ch], y, x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hint_losses_are_nonnegative_and_permutation_invariant(seed: u64, ct in 1usize..6, cs in 1usize..6, h in 1usize..5, w in 1usize..5, scale in 0.01f64..100.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let t = rand_tensor(&mut r, ct, h, w).map(f64::abs);
        let s = rand_tensor(&mut r, cs, h, w).map(f64::abs);
        let mut perm: Vec<usize> = (0..cs).collect();
        for i in (1..cs).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let sp = permute_channels(&s, &perm);
        for p in [2.0, 3.0] {
            let l = at_loss(&t, &s, p).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert!((at_loss(&t, &sp, p).unwrap() - l).abs() <= 1e-12);
            prop_assert!(at_loss(&s, &s.map(|v| v * scale), p).unwrap() <= 1e-12);
        }
        let m = mmd_loss(&t, &s).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert!((mmd_loss(&t, &sp).unwrap() - m).abs() <= 1e-12);
        prop_assert!(mmd_loss(&s, &s).unwrap() <= 1e-12);
    }
}

// --- residual mapping ----------------------------------------------------

/// Random triple where the filtered frame is a noisy step towards the original.
fn rm_triple(seed: u64, w: usize, h: usize, chroma: bool) -> (Frame, Frame, Frame) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let orig = synthetic_frame(w, h, chroma, seed);
    let rec = Frame::from_planes(orig.planes().iter().map(|p| perturb(&mut r, p, 12)).collect()).unwrap();
    let amp = r.random_range(1..20);
    let filtered = Frame::from_planes(rec.planes().iter().map(|p| perturb(&mut r, p, amp)).collect()).unwrap();
    (rec, filtered, orig)
}

fn brute_force_index(rec: &Plane, filtered: &Plane, orig: &Plane, bits: u8) -> u16 {
    let r_s = &residual_learned(&Frame::luma(filtered.clone()), &Frame::luma(rec.clone())).unwrap()[0];
    let o = Frame::luma(orig.clone());
    let mut best = (u64::MAX, 0u16);
    for i in 0..(1u16 << bits) {
        let out = rm_apply_plane(rec, r_s, index_to_lambda(i, bits)).unwrap();
        let e = sse(&Frame::luma(out), &o).unwrap();
        if e < best.0 {
            best = (e, i);
        }
    }
    best.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rdo_matches_brute_force_and_dominates_endpoints(seed: u64, w in 8usize..33, h in 8usize..33, bits in 1u8..7) {
        let (rec, filtered, orig) = rm_triple(seed, w & !1, h & !1, true);
        let params = rdo_search(&rec, &filtered, &orig, bits).unwrap();
        for c in 0..3 {
            let (rp, fp, op) = (&rec.planes()[c], &filtered.planes()[c], &orig.planes()[c]);
            prop_assert_eq!(params.indices()[c], brute_force_index(rp, fp, op, bits));
            prop_assert_eq!(rdo_search_plane(rp, fp, op, bits).unwrap(), params.indices()[c]);
        }
        let r_s = residual_learned(&filtered, &rec).unwrap();
        let chosen = sse(&rm_apply(&rec, &r_s, &params).unwrap(), &orig).unwrap();
        let max = (1u16 << bits) - 1;
        for endpoint in [0, max] {
            let p = RmParams::new(bits, [endpoint; 3]).unwrap();
            prop_assert!(chosen <= sse(&rm_apply(&rec, &r_s, &p).unwrap(), &orig).unwrap());
        }
    }

    #[test]
    fn quantized_lambda_is_nearest_grid_point(seed: u64, n in 4usize..64, bits in 1u8..16) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let r_s = ResidualPlane { width: n, height: 1, values: rand_vec(&mut r, n) };
        let r_o = ResidualPlane { width: n, height: 1, values: rand_vec(&mut r, n) };
        let fit = fit_lambda_closed(&r_s, &r_o).unwrap();
        let q = quantize_lambda(fit.lambda, bits).unwrap();
        let max = ((1u32 << bits) - 1) as f64;
        prop_assert!((q as f64 / max - fit.lambda.clamp(0.0, 1.0)).abs() <= 0.5 / max + 1e-15);
        // The closed form minimizes the real-valued error.
        let err = |l: f64| -> f64 { r_s.values.iter().zip(&r_o.values).map(|(s, o)| (o - l * s).powi(2)).sum() };
        prop_assert!(err(fit.lambda) <= err(fit.lambda + 1e-3) && err(fit.lambda) <= err(fit.lambda - 1e-3));
    }

    #[test]
    fn rm_syntax_is_a_bijection(bits in 1u8..16, a: u16, b: u16, c: u16) {
        let m = 1u16 << bits;
        let p = RmParams::new(bits, [a % m, b % m, c % m]).unwrap();
        let bytes = serialize_rm(&p);
        prop_assert_eq!(bytes.len(), (3 * bits as usize).div_ceil(8));
        prop_assert_eq!(deserialize_rm(&bytes, bits).unwrap(), p);
    }

    #[test]
    fn ctu_control_never_loses_to_frame_control(seed: u64, w in 8usize..100, h in 8usize..100, ctu in prop::sample::select(vec![8usize, 16, 32, 64])) {
        let (rec, filtered, orig) = rm_triple(seed, w & !1, h & !1, seed % 2 == 0);
        let frame_on = frame_control(&rec, &filtered, &orig).unwrap();
        let frame_out = if frame_on { &filtered } else { &rec };
        let d = ctu_control(&rec, &filtered, &orig, ctu).unwrap();
        let ctu_out = apply_ctu_flags(&rec, &filtered, &d.flags, ctu).unwrap();
        prop_assert!(sse(&ctu_out, &orig).unwrap() <= sse(frame_out, &orig).unwrap());
        let _ = residual_distortion(&orig, &rec).unwrap();
    }
}

// --- codec and metrics ---------------------------------------------------

/// Marks every pixel whose `(2a+1)²` window leaves a `w × h` region.
fn marked_share(w: usize, h: usize, a: usize) -> f64 {
    let mut marked = 0usize;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let a = a as isize;
            let leaves = (-a..=a).any(|dy| (-a..=a).any(|dx| {
                let (yy, xx) = (y + dy, x + dx);
                yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize
            }));
            marked += usize::from(leaves);
        }
    }
    marked as f64 / (w * h) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn padding_formulas_match_pixel_marking(w in 1usize..80, h in 1usize..80, a in 0usize..20, b in 1usize..80, ab in 0usize..40) {
        if 2 * a <= w.min(h) {
            prop_assert!((padding_impact_frame(w, h, a).unwrap() - marked_share(w, h, a)).abs() <= 1e-15);
        } else {
            prop_assert!(padding_impact_frame(w, h, a).is_err());
        }
        if 2 * ab <= b {
            prop_assert!((padding_impact_block(b, ab).unwrap().exact - marked_share(b, b, ab)).abs() <= 1e-15);
        } else {
            prop_assert!(padding_impact_block(b, ab).is_err());
        }
    }

    #[test]
    fn toy_codec_is_deterministic_and_decodable(seed: u64, w in 2usize..40, h in 2usize..40, qp in 0u8..52, chroma: bool) {
        let f = synthetic_frame(w & !1, h & !1, chroma, seed);
        let a = toy_encode(&f, qp).unwrap();
        let b = toy_encode(&f, qp).unwrap();
        prop_assert_eq!(&a.rec, &b.rec);
        prop_assert_eq!(a.rate_bits, b.rate_bits);
        prop_assert_eq!(toy_decode(&a.coeffs).unwrap(), a.rec.clone());
        prop_assert_eq!(psnr(&f, &a.rec).unwrap(), psnr(&a.rec, &f).unwrap());
        prop_assert_eq!(psnr(&f, &f).unwrap(), LOSSLESS_PSNR);
    }
}

/// Lagrange cubic through four points, integrated with a fine trapezoid rule.
fn oracle_bd_rate(anchor: &[(f64, f64)], test: &[(f64, f64)]) -> f64 {
    fn lagrange(pts: &[(f64, f64)], x: f64) -> f64 {
        (0..4)
            .map(|i| {
                let (xi, yi) = (pts[i].1, pts[i].0.ln());
                yi * (0..4).filter(|&j| j != i).map(|j| (x - pts[j].1) / (xi - pts[j].1)).product::<f64>()
            })
            .sum()
    }
    let lo = anchor[0].1.max(test[0].1);
    let hi = anchor[3].1.min(test[3].1);
    let n = 200_000;
    let step = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = lo + step * i as f64;
        let wgt = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += wgt * (lagrange(test, x) - lagrange(anchor, x));
    }
    ((acc * step / (hi - lo)).exp() - 1.0) * 100.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn bd_rate_matches_numeric_integration(r0 in 500.0f64..5000.0, p0 in 28.0f64..34.0,
                                           steps in prop::array::uniform4((0.3f64..0.9, 1.5f64..3.5)),
                                           shift in -1.0f64..1.0, scale in 0.7f64..1.3) {
        let mut anchor = Vec::new();
        let (mut r, mut p) = (r0, p0);
        for (dr, dp) in steps {
            anchor.push((r, p));
            r *= 1.0 + dr;
            p += dp;
        }
        let test: Vec<(f64, f64)> = anchor.iter().map(|&(r, p)| (r * scale, p + shift)).collect();
        let pts = |v: &[(f64, f64)]| v.iter().map(|&(r, p)| RdPoint::new(r, p).unwrap()).collect::<Vec<_>>();
        let got = bd_rate(&pts(&anchor), &pts(&test)).unwrap();
        let want = oracle_bd_rate(&anchor, &test);
        prop_assert!((got - want).abs() <= 0.05, "got {got}, oracle {want}");
        prop_assert_eq!(bd_rate(&pts(&anchor), &pts(&anchor)).unwrap(), 0.0);
    }
}
