use dsc_loopfilter::codec::synthetic_frame;
use dsc_loopfilter::io::encode_weights;
use dsc_loopfilter::training::{encode_pairs, sample_patches, train_pipeline, HintLoss, Phase, QpBand, TrainConfig};

fn small_config(hint_loss: HintLoss) -> TrainConfig {
    TrainConfig {
        n1: 1,
        n2: Some(1),
        n3: 4,
        patch: 32,
        batch: 4,
        seed: 9,
        hint_loss,
        ..TrainConfig::desk(QpBand::High)
    }
}

#[test]
fn pipeline_is_deterministic_and_student_loss_settles() {
    let frames: Vec<_> = (0..4).map(|s| synthetic_frame(64, 64, false, 40 + s)).collect();
    let pairs = encode_pairs(&frames, 37).unwrap();
    let data = sample_patches(&pairs, 32, 64, 5).unwrap();
    for hint in [HintLoss::At, HintLoss::Mmd] {
        let cfg = small_config(hint);
        let a = train_pipeline(&data, &cfg).unwrap();
        if hint == HintLoss::At {
            let b = train_pipeline(&data, &cfg).unwrap();
            assert_eq!(encode_weights(&a.student), encode_weights(&b.student));
            assert_eq!(encode_weights(&a.unfolded), encode_weights(&b.unfolded));
            assert_eq!(a.log, b.log);
            assert_eq!(a.ls_after_hint, b.ls_after_hint);
        }
        assert!(a.student.is_folded() && !a.unfolded.is_folded());

        let student: Vec<f64> = a.log.iter().filter(|r| r.phase == Phase::Student).map(|r| r.loss).collect();
        assert_eq!(student.len(), 4);
        for w in student.windows(2) {
            assert!(w[1] <= 1.05 * w[0], "student loss rose from {} to {}", w[0], w[1]);
        }
        assert!(a.ls_final < a.ls_random_init);
    }
}

#[test]
fn seed_changes_the_run() {
    let frames: Vec<_> = (0..2).map(|s| synthetic_frame(64, 64, false, s)).collect();
    let data = sample_patches(&encode_pairs(&frames, 37).unwrap(), 32, 8, 1).unwrap();
    let cfg = TrainConfig { n1: 0, n2: Some(0), n3: 1, ..small_config(HintLoss::At) };
    let a = train_pipeline(&data, &cfg).unwrap();
    let b = train_pipeline(&data, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert!(a.teacher.is_none() && a.ls_after_hint.is_none());
    assert_ne!(encode_weights(&a.student), encode_weights(&b.student));
}
