mod common;

use pcalign::alignnet::{AlignNetConfig, LossConfig};
use pcalign::geom::{GroundTransform, PointCloud};
use pcalign::harness::{
    evaluate, predict_icp, synthetic_track, train, velocity_rmse, HarnessError, Prediction, TrackConfig, TrackFrame,
    TrainConfig, Trainer,
};
use pcalign::icp::IcpConfig;
use pcalign::synth::scene::procedural_cars;
use pcalign::synth::{generate_scenes, LidarConfig, SceneConfig, SceneSample};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenes(count: usize, seed: u64) -> Vec<SceneSample> {
    generate_scenes(&procedural_cars(4, 1), &SceneConfig::default(), &LidarConfig::default(), seed, count).unwrap()
}

fn tiny(n_points: usize) -> TrainConfig {
    TrainConfig {
        n_points,
        batch: 4,
        epochs: 1,
        checkpoint_every: 0,
        network: AlignNetConfig { dropout: 0.5, ..common::network::small_config(n_points, 3) },
        ..TrainConfig::default()
    }
}

#[test]
fn one_epoch_is_bit_reproducible() {
    let samples = scenes(8, 2);
    let cfg = tiny(32);
    let a = train(&samples, &cfg, &LossConfig::default(), None, |_| {}).unwrap();
    let b = train(&samples, &cfg, &LossConfig::default(), None, |_| {}).unwrap();
    assert_eq!(a.curve.len(), 2);
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.net.params, b.net.params);
    let c = train(&samples, &TrainConfig { seed: 1, ..cfg }, &LossConfig::default(), None, |_| {}).unwrap();
    assert_ne!(a.curve, c.curve);
}

#[test]
fn training_writes_curve_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let samples = scenes(8, 3);
    let cfg = TrainConfig { epochs: 2, checkpoint_every: 1, ..tiny(16) };
    let out = train(&samples, &cfg, &LossConfig::default(), Some(dir.path()), |_| {}).unwrap();
    let names: Vec<_> = out.checkpoints.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
    assert_eq!(names, ["epoch_0001.ckpt", "epoch_0002.ckpt", "final.ckpt"]);
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + out.curve.len());
    assert!(csv.starts_with("epoch,step,lr,total"));
    let loaded = pcalign::alignnet::AlignNet::load(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(loaded.params, out.net.params);
}

#[test]
fn non_finite_loss_aborts_with_breakdown() {
    let mut samples = scenes(4, 4);
    samples[1].gt = GroundTransform::new(f64::NAN, 0.0, 0.0);
    let mut trainer = Trainer::new(tiny(16), LossConfig::default()).unwrap();
    match trainer.step(&samples, &[0, 1, 2, 3], 0) {
        Err(HarnessError::NonFiniteLoss { step, breakdown }) => {
            assert_eq!(step, 0);
            assert!(!breakdown.total.is_finite());
        }
        other => panic!("expected a non-finite loss, got {:?}", other.map(|r| r.loss)),
    }
    assert_eq!(trainer.steps(), 0);
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(matches!(
        train(&[], &tiny(16), &LossConfig::default(), None, |_| {}),
        Err(HarnessError::EmptyDataset)
    ));
}

#[test]
fn stage3_translation_loss_drops_tenfold_when_overfitting() {
    let samples = scenes(32, 5);
    let cfg = TrainConfig {
        epochs: 2000,
        batch: 32,
        aug_sigma: 0.0,
        resample_points: false,
        lr_step_epochs: 500,
        network: AlignNetConfig { dropout: 0.0, ..common::network::small_config(32, 5) },
        ..tiny(32)
    };
    let out = train(&samples, &cfg, &LossConfig::default(), None, |_| {}).unwrap();
    let first = out.curve[0].loss.transl_s3;
    let last = out.curve[out.curve.len() - 1].loss.transl_s3;
    assert!(last * 10.0 <= first, "{first} -> {last}");
}

#[test]
fn icp_scores_every_zero_motion_pair() {
    let cfg = SceneConfig { noise: false, max_pair_offset: 0.0, max_rel_yaw: 0.0, ..SceneConfig::default() };
    let samples = generate_scenes(&procedural_cars(4, 1), &cfg, &LidarConfig::default(), 6, 24).unwrap();
    let records = predict_icp(&samples, &IcpConfig::default(), None, 0).unwrap();
    let preds: Vec<Prediction> = records.iter().map(|r| r.prediction).collect();
    let report = evaluate("icp_p2p", &preds, &samples, false).unwrap();
    assert_eq!(report.filters[0].count, 24);
    assert_eq!(report.filters[0].bins[0].accuracy, Some(1.0));
}

fn truth_only(gt: GroundTransform, distance_d: f64) -> SceneSample {
    SceneSample {
        cloud1: PointCloud::default(),
        cloud2: PointCloud::default(),
        gt,
        center1: Default::default(),
        center2: Default::default(),
        heading1: 0.0,
        heading2: 0.0,
        distance_d,
        class_label: "car".into(),
        mesh_id: "m".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_ignores_prediction_order(seed in any::<u64>(), n in 1usize..60, sym in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<_> = (0..n)
            .map(|_| truth_only(GroundTransform::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)), rng.random_range(2.0..80.0)))
            .collect();
        let mut preds: Vec<_> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let t = GroundTransform::new(s.gt.tx + rng.random_range(-0.3..0.3), s.gt.ty, s.gt.yaw + rng.random_range(-0.3..0.3));
                Prediction::new(i, &t, rng.random_range(0.0..5.0))
            })
            .collect();
        let a = evaluate("m", &preds, &samples, sym).unwrap();
        preds.shuffle(&mut rng);
        let b = evaluate("m", &preds, &samples, sym).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.check_invariants().is_ok());
    }
}

#[test]
fn alternating_error_matches_three_tap_response() {
    let (n, dt, step, e) = (25, 0.1, 1.0, 0.3);
    let frames: Vec<TrackFrame> = (0..n)
        .map(|_| TrackFrame { dt, gt: GroundTransform::translation(step, 0.0), anchor: [4.0, 1.0], distance_d: 10.0 })
        .collect();
    let preds: Vec<_> = (0..n)
        .map(|i| GroundTransform::translation(step + if i % 2 == 0 { e } else { -e }, 0.0))
        .collect();
    let report = velocity_rmse("alt", &frames, &preds).unwrap();
    // interior frames see ±e/3 after averaging three alternating errors; both
    // ends average two frames whose errors cancel
    let expect = ((n - 2) as f64 * (e / 3.0 / dt).powi(2) / n as f64).sqrt();
    let got = report.filters[0].rmse_v.unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    assert_eq!(report.filters[1].count, n);
    assert_eq!(report.filters[2].count, 0);
    assert_eq!(report.filters[2].rmse_v, None);
}

#[test]
fn synthetic_track_has_steady_speed() {
    let car = &procedural_cars(1, 2)[0];
    let cfg = TrackConfig { noise: false, yaw_rate: 0.2, ..TrackConfig::default() };
    let track = synthetic_track(car, &LidarConfig::default(), &cfg, 9).unwrap();
    assert_eq!(track.len(), cfg.frames);
    let frames: Vec<TrackFrame> = track.iter().map(|(_, f)| *f).collect();
    let gt: Vec<_> = frames.iter().map(|f| f.gt).collect();
    let report = velocity_rmse("gt", &frames, &gt).unwrap();
    // with a slow turn the 3-tap mean barely differs from the true speed
    assert!(report.filters[0].rmse_v.unwrap() < 0.05, "{report:?}");
    for (s, f) in &track {
        assert_eq!(s.gt, f.gt);
        let moved = f.gt.apply_xy(f.anchor[0], f.anchor[1]);
        let speed = (moved.0 - f.anchor[0]).hypot(moved.1 - f.anchor[1]) / f.dt;
        assert!((speed - cfg.speed).abs() < 0.5, "{speed}");
    }
}
