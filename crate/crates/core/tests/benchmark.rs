use std::path::Path;

use hybridpoint::dataset::{self, load_pairs, make_pairs, MakePairsConfig, SynthConfig};
use hybridpoint::eval::{
    run_benchmark, BaselinePairDescriber, BaselinePairDetector, EvalConfig, KeypointFileDetector, PairContext,
    PairDetector, Side,
};
use hybridpoint::warp::transfer_keypoints;
use hybridpoint::{Calibration, Error, FisheyeModel, KeypointSet, PinholeModel, PointMap, PrimitiveKind};
use nalgebra::{Matrix2, Vector2};

fn calibration() -> Calibration {
    Calibration {
        fisheye: FisheyeModel::new(
            [100.0, -0.0035, 0.0, 0.0],
            Matrix2::identity(),
            Vector2::new(-160.0, -160.0),
            320,
            320,
            None,
        )
        .unwrap(),
        pinhole: PinholeModel::new(200.0, 200.0, 160.0, 160.0, 0.0, 320, 320).unwrap(),
    }
}

fn write_fisheye(dir: &Path, count: usize, kinds: Vec<PrimitiveKind>) {
    let cfg = SynthConfig {
        kinds,
        count,
        seed: 5,
        fisheye: Some(calibration().fisheye),
        face_size: 128,
        ..SynthConfig::default()
    };
    dataset::write_synthetic(&cfg, dir).unwrap();
}

fn pairs_cfg(k: usize) -> MakePairsConfig {
    MakePairsConfig {
        k,
        seed: 9,
        ..MakePairsConfig::default()
    }
}

struct NoPoints;

impl PairDetector for NoPoints {
    fn name(&self) -> String {
        "none".into()
    }

    fn detect(&self, _: &PairContext, _: Side, _: usize) -> hybridpoint::Result<KeypointSet> {
        Ok(KeypointSet::default())
    }
}

#[test]
fn make_pairs_writes_layout_and_transfers_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let fish = tmp.path().join("fish");
    write_fisheye(&fish, 2, vec![PrimitiveKind::Checkerboard]);
    let out = tmp.path().join("ds");
    let records = make_pairs(&fish, &calibration(), &pairs_cfg(2), &out).unwrap();
    assert_eq!(records.len(), 4);

    let loaded = load_pairs(&out, &MakePairsConfig::default()).unwrap();
    let mut ids: Vec<_> = records.iter().map(|r| r.id.clone()).collect();
    ids.sort();
    assert_eq!(loaded.iter().map(|r| r.id.clone()).collect::<Vec<_>>(), ids);
    for rec in &loaded {
        assert!(rec.perspective_image.as_ref().unwrap().is_file());
        let original = records.iter().find(|r| r.id == rec.id).unwrap();
        assert_eq!(rec.map, original.map);
        // the stored view equals a fresh synthesis up to 8-bit quantization
        let stored = rec.load_perspective().unwrap();
        let fresh = hybridpoint::dataset::PairRecord {
            perspective_image: None,
            ..rec.clone()
        }
        .load_perspective()
        .unwrap();
        let worst = stored
            .data()
            .iter()
            .zip(fresh.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-9, "views differ by {worst}");

        let truth = KeypointSet::load(out.join("keypoints").join(format!("{}.json", rec.stem))).unwrap();
        let view = KeypointSet::load(out.join("keypoints").join(format!("{}.json", rec.id))).unwrap();
        assert_eq!(view, transfer_keypoints(&truth, &rec.map));
        assert!(!view.is_empty());
        for p in &view {
            let back = rec.map.backward(&p.pos()).unwrap();
            assert!(truth.iter().any(|t| (t.pos() - back).norm() < 1e-4));
        }
    }
}

#[test]
fn pairing_depends_only_on_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let fish = tmp.path().join("fish");
    write_fisheye(&fish, 2, vec![PrimitiveKind::Stars]);
    let a = make_pairs(&fish, &calibration(), &pairs_cfg(2), tmp.path().join("a")).unwrap();
    let b = make_pairs(&fish, &calibration(), &pairs_cfg(2), tmp.path().join("b")).unwrap();
    let maps = |r: &[hybridpoint::dataset::PairRecord]| r.iter().map(|p| p.map.clone()).collect::<Vec<_>>();
    assert_eq!(maps(&a), maps(&b));
    let other = MakePairsConfig { seed: 10, ..pairs_cfg(2) };
    let c = make_pairs(&fish, &calibration(), &other, tmp.path().join("c")).unwrap();
    assert_ne!(maps(&a), maps(&c));
}

#[test]
fn fisheye_only_datasets_need_a_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_pairs(tmp.path(), &MakePairsConfig::default()),
        Err(Error::EmptyDataset(_))
    ));

    write_fisheye(tmp.path(), 1, vec![PrimitiveKind::Polygons]);
    assert!(matches!(
        load_pairs(tmp.path(), &MakePairsConfig::default()),
        Err(Error::MissingCalibration(_))
    ));

    calibration().save(tmp.path().join("calib.json")).unwrap();
    let on_the_fly = load_pairs(tmp.path(), &pairs_cfg(3)).unwrap();
    assert_eq!(on_the_fly.len(), 3);
    assert!(on_the_fly.iter().all(|r| r.perspective_image.is_none()));
    let written = make_pairs(tmp.path(), &calibration(), &pairs_cfg(3), tmp.path().join("ds")).unwrap();
    for (a, b) in on_the_fly.iter().zip(&written) {
        assert_eq!(a.map, b.map);
    }
}

#[test]
fn benchmark_scores_are_bounded_monotone_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let fish = tmp.path().join("fish");
    write_fisheye(&fish, 2, vec![PrimitiveKind::Checkerboard, PrimitiveKind::Mixed]);
    let out = tmp.path().join("ds");
    make_pairs(&fish, &calibration(), &pairs_cfg(2), &out).unwrap();

    let cfg = EvalConfig::default();
    let det = BaselinePairDetector(cfg.detector);
    let first = run_benchmark(&out, &det, &BaselinePairDescriber, &cfg).unwrap();
    let second = run_benchmark(&out, &det, &BaselinePairDescriber, &cfg).unwrap();
    assert_eq!(first.to_json(), second.to_json());
    assert_eq!(first.pair_count, 4);
    assert!(first.average_matches <= cfg.top_k_perspective.min(cfg.top_k_fisheye) as f64);
    for pair in &first.pairs {
        for w in pair.scores.windows(2) {
            assert!(w[1].repeatability >= w[0].repeatability);
            assert!(w[1].mean_matching_score >= w[0].mean_matching_score);
        }
        for s in &pair.scores {
            assert!((0.0..=1.0).contains(&s.repeatability));
            assert!((0.0..=1.0).contains(&s.mean_matching_score));
        }
    }
    assert!(first.table.contains("baseline+baseline"));
    assert!(first.to_json().contains("repeatability_formula"));

    let wide = run_benchmark(&out, &det, &BaselinePairDescriber, &EvalConfig::wide()).unwrap();
    assert_eq!(wide.scores.iter().map(|s| s.epsilon).collect::<Vec<_>>(), vec![5.0, 10.0]);
}

#[test]
fn empty_detections_score_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let fish = tmp.path().join("fish");
    write_fisheye(&fish, 1, vec![PrimitiveKind::Triangles]);
    let out = tmp.path().join("ds");
    make_pairs(&fish, &calibration(), &pairs_cfg(2), &out).unwrap();
    let report = run_benchmark(&out, &NoPoints, &BaselinePairDescriber, &EvalConfig::default()).unwrap();
    assert_eq!(report.average_matches, 0.0);
    for s in &report.scores {
        assert_eq!(s.repeatability, 0.0);
        assert_eq!(s.mean_matching_score, 0.0);
    }
}

#[test]
fn ground_truth_points_repeat_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let fish = tmp.path().join("fish");
    write_fisheye(&fish, 2, vec![PrimitiveKind::Checkerboard]);
    let out = tmp.path().join("ds");
    make_pairs(&fish, &calibration(), &pairs_cfg(2), &out).unwrap();
    let report = run_benchmark(&out, &KeypointFileDetector, &BaselinePairDescriber, &EvalConfig::default()).unwrap();
    for s in &report.scores {
        assert_eq!(s.repeatability, 1.0);
    }
}

#[test]
fn invalid_epsilons_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for eps in [vec![], vec![5.0, 3.0], vec![0.0, 3.0]] {
        let cfg = EvalConfig {
            epsilons: eps,
            ..EvalConfig::default()
        };
        let err = run_benchmark(tmp.path(), &NoPoints, &BaselinePairDescriber, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
