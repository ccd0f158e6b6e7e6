//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hybridpoint::dataset::{self, make_pairs, MakePairsConfig, SynthConfig};
use hybridpoint::descmatch::normalized;
use hybridpoint::detect::{
    baseline_detect, decode_detections, encode_labels, homographic_adaptation, sample_image_homography,
    AdaptationConfig, BaselineDetector, CELL,
};
use hybridpoint::eval::{run_benchmark, EvalConfig, KeypointFileDetector, PairContext, PairDescriber, Side};
use hybridpoint::homography::Interval;
use hybridpoint::metrics::repeatability;
use hybridpoint::synthdata::{add_gaussian_noise, SyntheticStream};
use hybridpoint::warp::{cubemap_to_fisheye, transfer_keypoints, warp_perspective, CubeMap};
use hybridpoint::{
    CellHeatmap, DetectorConfig, FisheyeModel, Homography, HomographyParams, HybridMap, ImageGray, Keypoint,
    KeypointSet, PinholeModel, PlanarMap, PointMap, PrimitiveKind, SamplingRanges,
};
use hybridpoint::{Calibration, Result};
use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn calibration(coeffs: [f64; 4], affine: Matrix2<f64>, center: (f64, f64), focal: f64) -> Calibration {
    Calibration {
        fisheye: FisheyeModel::new(coeffs, affine, Vector2::new(-center.0, -center.1), 320, 320, None).unwrap(),
        pinhole: PinholeModel::new(focal, focal, 160.0, 160.0, 0.0, 320, 320).unwrap(),
    }
}

fn calibrations() -> [Calibration; 3] {
    [
        calibration([100.0, -0.0035, 0.0, 0.0], Matrix2::identity(), (160.0, 160.0), 200.0),
        calibration([120.0, -0.002, -2e-6, 0.0], Matrix2::new(1.0, 0.01, 0.0, 0.98), (158.0, 163.0), 240.0),
        calibration([90.0, -0.004, 0.0, 1e-8], Matrix2::new(0.99, 0.0, 0.005, 1.0), (161.5, 157.0), 170.0),
    ]
}

/// Forward of inverse returns every valid perspective pixel center.
fn criterion_1() -> Outcome {
    const MAPS: usize = 100;
    let start = Instant::now();
    let (mut valid, mut within, mut worst_map) = (0usize, 0usize, 1.0f64);
    for (c, calib) in calibrations().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + c as u64);
        let mut drawn = 0;
        while drawn < MAPS {
            let Ok(h) = HomographyParams::sample(&mut rng, &SamplingRanges::default()).compose() else {
                continue;
            };
            let map = HybridMap::from_calibration(calib, h).unwrap();
            drawn += 1;
            let (w, ht) = map.pinhole().size();
            let (mut map_valid, mut map_within) = (0usize, 0usize);
            for y in 0..ht {
                for x in 0..w {
                    let q = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let Ok(p) = map.inverse(&q) else { continue };
                    if !map.fisheye().in_bounds(&p) {
                        continue;
                    }
                    map_valid += 1;
                    if map.forward(&p).is_ok_and(|r| (r - q).norm() <= 1e-4) {
                        map_within += 1;
                    }
                }
            }
            if map_valid > 0 {
                worst_map = worst_map.min(map_within as f64 / map_valid as f64);
            }
            valid += map_valid;
            within += map_within;
        }
    }
    let elapsed = start.elapsed();
    let frac = within as f64 / valid.max(1) as f64;
    outcome(
        valid > 0 && frac >= 0.99 && elapsed < Duration::from_secs(10),
        format!(
            "{within}/{valid} valid pixels ({:.4}%) within 1e-4 px over 3 x {MAPS} maps, worst map {:.4}%, {:.2} s (limit 10 s)",
            100.0 * frac,
            100.0 * worst_map,
            elapsed.as_secs_f64()
        ),
    )
}

/// Loss oracles, through the library and the `loss-check` command.
fn criterion_2() -> Outcome {
    let results = hybridpoint::losses::check::run_all();
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect();
    let status = Command::new(env!("CARGO_BIN_EXE_hybridpoint"))
        .arg("loss-check")
        .output()
        .expect("run loss-check");
    let details: Vec<_> = results.iter().map(|r| format!("{}: {}", r.name, r.detail)).collect();
    outcome(
        failed.is_empty() && results.len() == 5 && status.status.success(),
        format!(
            "{} checks, failed {:?}, loss-check exit {:?}; {}",
            results.len(),
            failed,
            status.status.code(),
            details.join("; ")
        ),
    )
}

/// Decoding the one-hot encoding of one-per-cell point sets is exact.
fn criterion_3() -> Outcome {
    let (w, h) = (160u32, 128u32);
    let (w_c, h_c) = ((w / CELL) as usize, (h / CELL) as usize);
    // decode without NMS, border or budget so every cell's point survives
    let cfg = DetectorConfig {
        nms_radius: 0.0,
        border: 0,
        top_k: usize::MAX,
        ..DetectorConfig::default()
    };
    let mut mismatches = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill = rng.gen_range(0.0..=1.0);
        let mut points = Vec::new();
        for r in 0..h_c {
            for c in 0..w_c {
                if rng.gen_bool(fill) {
                    let x = (c as u32 * CELL + rng.gen_range(0..CELL)) as f64 + 0.5;
                    let y = (r as u32 * CELL + rng.gen_range(0..CELL)) as f64 + 0.5;
                    points.push(Keypoint::new(x, y, 1.0));
                }
            }
        }
        let kps = KeypointSet::new(points);
        let labels = encode_labels(&kps, w, h, &mut rng).unwrap();
        let decoded = decode_detections(&CellHeatmap::one_hot(&labels), &cfg);
        let key = |k: &Keypoint| (k.x.to_bits(), k.y.to_bits(), k.score.to_bits());
        let mut want: Vec<_> = kps.iter().map(key).collect();
        let mut got: Vec<_> = decoded.iter().map(key).collect();
        want.sort_unstable();
        got.sort_unstable();
        if want != got {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{} of 1000 seeded sets reproduced exactly", 1000 - mismatches),
    )
}

/// Held-out test warp for criterion 4, kept inside the image.
fn test_ranges() -> SamplingRanges {
    SamplingRanges {
        a: Interval::new(-0.25, 0.25),
        s_x: Interval::new(1.0, 1.4),
        s_y: Interval::new(1.0, 1.4),
        k_x: Interval::new(-0.05, 0.05),
        k_y: Interval::new(-0.05, 0.05),
        h_x: Interval::new(-0.1, 0.1),
        h_y: Interval::new(-0.1, 0.1),
        t_x: Interval::new(-0.1, 0.1),
        t_y: Interval::new(-0.1, 0.1),
        max_rejections: 50,
    }
}

/// Adapted pseudo-labels repeat the warped ground truth at least as well as
/// single-pass detections.
fn criterion_4() -> Outcome {
    const IMAGES: usize = 50;
    const NOISE: f64 = 0.03;
    let size = 320;
    let start = Instant::now();
    let stream = SyntheticStream::new(7, (size, size), vec![PrimitiveKind::Squares]);
    let identity = PlanarMap::new(Homography::identity(), (size, size), (size, size)).unwrap();
    let cfg = AdaptationConfig {
        n_homographies: 100,
        ..AdaptationConfig::default()
    };
    let (mut at_least, mut strictly, mut sum_base, mut sum_adapt) = (0, 0, 0.0, 0.0);
    let mut worse = Vec::new();
    for (i, labeled) in stream.take(IMAGES).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let (hom, view) = loop {
            let hom = sample_image_homography(&mut rng, &test_ranges(), size, size).unwrap();
            let (view, mask) = warp_perspective(&labeled.image, &hom, size, size).unwrap();
            if mask.all() {
                break (hom, view);
            }
        };
        let view = add_gaussian_noise(&view, NOISE, &mut rng);
        let truth = transfer_keypoints(&labeled.keypoints, &PlanarMap::new(hom, (size, size), (size, size)).unwrap());

        let single = decode_detections(&baseline_detect(&view).unwrap(), &cfg.detector);
        let adapted = homographic_adaptation(&view, &BaselineDetector, &cfg, &mut rng).unwrap().keypoints;
        let base = repeatability(&single, &truth, &identity, 3.0);
        let adapt = repeatability(&adapted, &truth, &identity, 3.0);
        sum_base += base;
        sum_adapt += adapt;
        if adapt >= base {
            at_least += 1;
        } else {
            worse.push(format!("#{i} {adapt:.3}<{base:.3}"));
        }
        if adapt > base {
            strictly += 1;
        }
    }
    let elapsed = start.elapsed();
    let passed = at_least == IMAGES && strictly as f64 >= 0.8 * IMAGES as f64 && elapsed < Duration::from_secs(300);
    outcome(
        passed,
        format!(
            "adapted >= single on {at_least}/{IMAGES}, > on {strictly}/{IMAGES} (need all and >= 80%); mean repeatability {:.3} vs {:.3}; worse {:?}; {:.1} s (limit 300 s)",
            sum_adapt / IMAGES as f64,
            sum_base / IMAGES as f64,
            worse,
            elapsed.as_secs_f64()
        ),
    )
}

fn write_calibration(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("calib.json");
    calibrations()[0].save(&path).unwrap();
    path
}

fn run_cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hybridpoint"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// One full synth-data, make-pairs, eval run in `dir`; returns the report bytes.
fn benchmark_run(dir: &Path) -> std::result::Result<Vec<u8>, String> {
    let calib = write_calibration(dir);
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let (fish, pairs, report) = (dir.join("fisheye"), dir.join("pairs"), dir.join("report.json"));
    run_cli(&["synth-data", "--count", "20", "--seed", "21", "--calib", &s(&calib), "--out", &s(&fish)])?;
    run_cli(&["make-pairs", "--fisheye", &s(&fish), "--calib", &s(&calib), "--k", "5", "--seed", "4", "--out", &s(&pairs)])?;
    run_cli(&["eval", "--dataset", &s(&pairs), "--detector", "baseline", "--descriptor", "baseline", "--eps", "3,5", "--seed", "4", "--report", &s(&report)])?;
    std::fs::read(&report).map_err(|e| e.to_string())
}

fn monotone(report: &[u8]) -> std::result::Result<(f64, f64, f64, f64, usize), String> {
    let v: serde_json::Value = serde_json::from_slice(report).map_err(|e| e.to_string())?;
    let get = |s: &serde_json::Value, k: &str| s[k].as_f64().ok_or_else(|| format!("missing {k}"));
    let mut rows = vec![v["scores"].clone()];
    rows.extend(v["pairs"].as_array().ok_or("missing pairs")?.iter().map(|p| p["scores"].clone()));
    for scores in &rows {
        let s = scores.as_array().ok_or("missing scores")?;
        if s.len() != 2 || get(&s[0], "epsilon")? != 3.0 || get(&s[1], "epsilon")? != 5.0 {
            return Err("unexpected epsilons".into());
        }
        for key in ["repeatability", "mean_matching_score"] {
            if get(&s[1], key)? < get(&s[0], key)? {
                return Err(format!("{key} decreases from 3 to 5 px"));
            }
        }
    }
    let s = &v["scores"];
    Ok((
        get(&s[0], "repeatability")?,
        get(&s[1], "repeatability")?,
        get(&s[0], "mean_matching_score")?,
        get(&s[1], "mean_matching_score")?,
        v["pair_count"].as_u64().unwrap_or(0) as usize,
    ))
}

/// Two identical command-line benchmark runs give byte-identical reports.
fn criterion_5() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs: std::result::Result<Vec<_>, _> = ["a", "b"]
        .iter()
        .map(|name| {
            let dir = tmp.path().join(name);
            std::fs::create_dir_all(&dir).unwrap();
            benchmark_run(&dir)
        })
        .collect();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    let identical = runs[0] == runs[1];
    match (monotone(&runs[0]), monotone(&runs[1])) {
        (Ok((r3, r5, m3, m5, n)), Ok(_)) => outcome(
            identical && n == 100,
            format!(
                "reports {} ({} bytes), {n} pairs; repeatability {r3:.4} -> {r5:.4}, MMS {m3:.4} -> {m5:.4} from 3 to 5 px on both runs",
                if identical { "byte-identical" } else { "DIFFER" },
                runs[0].len()
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("monotonicity: {e}")),
    }
}

/// Descriptor of the fisheye neighborhood a keypoint corresponds to, plus its
/// fisheye position; both sides of an exact pair see identical values.
struct FisheyePatchOracle;

impl PairDescriber for FisheyePatchOracle {
    fn name(&self) -> String {
        "fisheye-patch-oracle".into()
    }

    fn describe(&self, ctx: &PairContext, side: Side, kps: &KeypointSet) -> Result<Vec<Vec<f64>>> {
        kps.iter()
            .map(|k| {
                let p = match side {
                    Side::Fisheye => k.pos(),
                    Side::Perspective => ctx.map.backward(&k.pos())?,
                };
                let mut v: Vec<f64> = (0..64)
                    .map(|i| {
                        let (dx, dy) = ((i % 8) as f64 - 3.5, (i / 8) as f64 - 3.5);
                        ctx.fisheye.sample_clamped(p.x + dx, p.y + dy)
                    })
                    .collect();
                v.extend([p.x / 8.0, p.y / 8.0]);
                Ok(normalized(v))
            })
            .collect()
    }
}

/// Ground-truth points with identical-patch descriptors score perfectly.
fn criterion_6() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let calib = calibrations()[0].clone();
    let fish = tmp.path().join("fisheye");
    // checkerboard faces put corners in every view, so no pair is empty
    let synth = SynthConfig {
        kinds: vec![PrimitiveKind::Checkerboard],
        count: 4,
        seed: 8,
        fisheye: Some(calib.fisheye.clone()),
        face_size: 256,
        ..SynthConfig::default()
    };
    dataset::write_synthetic(&synth, &fish).unwrap();
    let out = tmp.path().join("pairs");
    let records = make_pairs(&fish, &calib, &MakePairsConfig { k: 5, seed: 2, ..MakePairsConfig::default() }, &out).unwrap();
    let empty: Vec<_> = records
        .iter()
        .filter(|r| {
            KeypointSet::load(out.join("keypoints").join(format!("{}.json", r.id)))
                .map(|k| k.is_empty())
                .unwrap_or(true)
        })
        .map(|r| r.id.clone())
        .collect();
    if !empty.is_empty() {
        return outcome(false, format!("pairs without ground truth in view: {empty:?}"));
    }
    let cfg = EvalConfig::default();
    let report = match run_benchmark(&out, &KeypointFileDetector, &FisheyePatchOracle, &cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let at3 = &report.scores[0];
    outcome(
        at3.epsilon == 3.0 && at3.repeatability == 1.0 && at3.mean_matching_score == 1.0,
        format!(
            "{} pairs: repeatability {} and MMS {} at 3 px, {:.1} matches per pair",
            report.pair_count, at3.repeatability, at3.mean_matching_score, report.average_matches
        ),
    )
}

/// Integer translations shift pixels exactly; a constant environment renders
/// to a constant fisheye image.
fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (w, h) = (96u32, 80u32);
    let img = ImageGray::from_fn(w, h, |_, _| rng.gen_range(0.0..=1.0));
    let mut shift_errors = 0usize;
    let mut compared = 0usize;
    for (dx, dy) in [(0i64, 0i64), (1, 0), (0, -1), (5, 3), (-7, 11), (-20, -13), (40, 2)] {
        let (out, mask) = warp_perspective(&img, &Homography::translation(dx as f64, dy as f64), w, h).unwrap();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sx, sy) = (x - dx, y - dy);
                let inside = sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64;
                let ok = if inside {
                    compared += 1;
                    mask.get(x as u32, y as u32) && out.get(x as u32, y as u32).to_bits() == img.get(sx as u32, sy as u32).to_bits()
                } else {
                    !mask.get(x as u32, y as u32)
                };
                if !ok {
                    shift_errors += 1;
                }
            }
        }
    }

    let level = 0.6;
    let faces = std::array::from_fn(|_| ImageGray::filled(64, 64, level));
    let cube = CubeMap::new(faces).unwrap();
    let (mut inside_fov, mut off_level) = (0usize, 0usize);
    let mut worst = 0.0f64;
    for calib in calibrations() {
        let (fisheye, mask) = cubemap_to_fisheye(&cube, &calib.fisheye);
        for y in 0..fisheye.height() {
            for x in 0..fisheye.width() {
                if mask.get(x, y) {
                    inside_fov += 1;
                    let err = (fisheye.get(x, y) - level).abs();
                    worst = worst.max(err);
                    if err > 1.0 / 255.0 {
                        off_level += 1;
                    }
                }
            }
        }
    }
    outcome(
        shift_errors == 0 && compared > 0 && inside_fov > 0 && off_level == 0,
        format!(
            "translations: {shift_errors} mismatches over {compared} shifted pixels; constant cube map: {inside_fov} in-FOV pixels, worst deviation {worst:.2e} (limit 1/255)"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("geometry round trip", criterion_1),
        ("loss oracles", criterion_2),
        ("encode/decode inverse", criterion_3),
        ("homographic adaptation benefit", criterion_4),
        ("benchmark determinism and monotonicity", criterion_5),
        ("self-consistency ceiling", criterion_6),
        ("warp exactness", criterion_7),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = run();
        if !result.passed {
            failures += 1;
        }
        println!(
            "criterion {} {}: {} - {}",
            i + 1,
            name,
            if result.passed { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
