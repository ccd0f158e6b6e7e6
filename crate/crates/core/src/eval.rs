//! Benchmark orchestration over pair datasets: detect, describe, match and
//! score every fisheye/perspective pair, then average.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_pairs, MakePairsConfig, PairRecord, DESCRIPTORS_DIR, HEATMAPS_DIR, KEYPOINTS_DIR};
use crate::descmatch::{baseline_describe, interpolate_descriptors, match_nn, DescriptorGrid, MatchConfig, MatchSet};
use crate::detect::{baseline_detect, decode_detections, CellHeatmap, DetectorConfig};
use crate::error::{Error, Result};
use crate::homography::HybridMap;
use crate::keypoints::KeypointSet;
use crate::metrics::{mean_matching_score, repeatability, REPEATABILITY_FORMULA};
use crate::raster::ImageGray;
use crate::synthdata::derived_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Correct-distance thresholds in pixels, ascending.
    pub epsilons: Vec<f64>,
    pub resize_to: (u32, u32),
    pub top_k_perspective: usize,
    pub top_k_fisheye: usize,
    pub seed: u64,
    pub detector: DetectorConfig,
    pub matching: MatchConfig,
    /// Pairing used when a dataset has fisheye images but no map files.
    pub pairs: MakePairsConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epsilons: vec![3.0, 5.0],
            resize_to: (320, 320),
            top_k_perspective: 300,
            top_k_fisheye: 1000,
            seed: 0,
            detector: DetectorConfig::default(),
            matching: MatchConfig::default(),
            pairs: MakePairsConfig::default(),
        }
    }
}

impl EvalConfig {
    /// Looser thresholds for datasets with larger reprojection error.
    pub fn wide() -> Self {
        EvalConfig {
            epsilons: vec![5.0, 10.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("at least one epsilon is required".into()));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0)) || self.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "epsilons must be positive and strictly ascending, got {:?}",
                self.epsilons
            )));
        }
        if self.resize_to.0 == 0 || self.resize_to.1 == 0 {
            return Err(Error::Config("resize target must be non-empty".into()));
        }
        self.detector.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Fisheye,
    Perspective,
}

/// Everything a detector or describer may look at for one pair, already
/// resized to the evaluation resolution.
pub struct PairContext<'a> {
    pub root: &'a Path,
    pub record: &'a PairRecord,
    pub fisheye: &'a ImageGray,
    pub perspective: &'a ImageGray,
    /// Map between the resized images.
    pub map: &'a HybridMap,
    /// Original image sizes, for rescaling precomputed outputs.
    pub fisheye_size: (u32, u32),
    pub perspective_size: (u32, u32),
    /// Per-pair seed for stochastic methods.
    pub seed: u64,
}

impl PairContext<'_> {
    pub fn image(&self, side: Side) -> &ImageGray {
        match side {
            Side::Fisheye => self.fisheye,
            Side::Perspective => self.perspective,
        }
    }

    /// File name stem of precomputed outputs for one side.
    pub fn name(&self, side: Side) -> &str {
        match side {
            Side::Fisheye => &self.record.stem,
            Side::Perspective => &self.record.id,
        }
    }

    fn original_size(&self, side: Side) -> (u32, u32) {
        match side {
            Side::Fisheye => self.fisheye_size,
            Side::Perspective => self.perspective_size,
        }
    }

    /// Scale factors from original to evaluation pixels.
    fn scale(&self, side: Side) -> (f64, f64) {
        let (ow, oh) = self.original_size(side);
        let (w, h) = self.image(side).size();
        (w as f64 / ow as f64, h as f64 / oh as f64)
    }
}

/// Keypoint source for one side of a pair, returning at most `budget` points.
pub trait PairDetector {
    fn name(&self) -> String;

    fn detect(&self, ctx: &PairContext, side: Side, budget: usize) -> Result<KeypointSet>;

    /// Whether fisheye detections depend only on the fisheye image, so they
    /// can be shared by all pairs of one fisheye image.
    fn fisheye_cacheable(&self) -> bool {
        true
    }
}

/// One descriptor per keypoint for one side of a pair.
pub trait PairDescriber {
    fn name(&self) -> String;

    fn describe(&self, ctx: &PairContext, side: Side, kps: &KeypointSet) -> Result<Vec<Vec<f64>>>;

    fn fisheye_cacheable(&self) -> bool {
        true
    }
}

/// Corner-response detector decoded with the configured threshold and NMS.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselinePairDetector(pub DetectorConfig);

impl PairDetector for BaselinePairDetector {
    fn name(&self) -> String {
        "baseline".into()
    }

    fn detect(&self, ctx: &PairContext, side: Side, budget: usize) -> Result<KeypointSet> {
        let cfg = DetectorConfig { top_k: budget, ..self.0 };
        Ok(decode_detections(&baseline_detect(ctx.image(side))?, &cfg))
    }
}

/// Decodes `heatmaps/<name>.bin`. Heatmaps may be at any resolution; points
/// are scaled to the evaluation image.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeatmapFileDetector(pub DetectorConfig);

impl PairDetector for HeatmapFileDetector {
    fn name(&self) -> String {
        "heatmap-files".into()
    }

    fn detect(&self, ctx: &PairContext, side: Side, budget: usize) -> Result<KeypointSet> {
        let path = ctx.root.join(HEATMAPS_DIR).join(format!("{}.bin", ctx.name(side)));
        let hm = CellHeatmap::load(&path)?;
        let cfg = DetectorConfig { top_k: budget, ..self.0 };
        let (hw, hh) = hm.image_size();
        let (w, h) = ctx.image(side).size();
        Ok(decode_detections(&hm, &cfg).scaled(w as f64 / hw as f64, h as f64 / hh as f64))
    }
}

/// Reads `keypoints/<name>.json` in original image pixels, keeping the
/// `budget` best scored.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeypointFileDetector;

impl PairDetector for KeypointFileDetector {
    fn name(&self) -> String {
        "keypoint-files".into()
    }

    fn detect(&self, ctx: &PairContext, side: Side, budget: usize) -> Result<KeypointSet> {
        let path = ctx.root.join(KEYPOINTS_DIR).join(format!("{}.json", ctx.name(side)));
        let (sx, sy) = ctx.scale(side);
        Ok(KeypointSet::load(&path)?.scaled(sx, sy).top_k(budget))
    }
}

/// Patch descriptors on the cell lattice, interpolated at keypoints.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselinePairDescriber;

impl PairDescriber for BaselinePairDescriber {
    fn name(&self) -> String {
        "baseline".into()
    }

    fn describe(&self, ctx: &PairContext, side: Side, kps: &KeypointSet) -> Result<Vec<Vec<f64>>> {
        Ok(interpolate_descriptors(&baseline_describe(ctx.image(side))?, kps))
    }
}

/// Interpolates `descriptors/<name>.bin`, whose lattice may belong to any
/// resolution.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridFileDescriber;

impl PairDescriber for GridFileDescriber {
    fn name(&self) -> String {
        "grid-files".into()
    }

    fn describe(&self, ctx: &PairContext, side: Side, kps: &KeypointSet) -> Result<Vec<Vec<f64>>> {
        let path = ctx.root.join(DESCRIPTORS_DIR).join(format!("{}.bin", ctx.name(side)));
        let grid = DescriptorGrid::load(&path)?;
        let (w, h) = ctx.image(side).size();
        let gw = (grid.w_c() * 8) as f64;
        let gh = (grid.h_c() * 8) as f64;
        Ok(interpolate_descriptors(&grid, &kps.scaled(gw / w as f64, gh / h as f64)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonScores {
    pub epsilon: f64,
    pub repeatability: f64,
    pub mean_matching_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub id: String,
    pub fisheye_keypoints: usize,
    pub perspective_keypoints: usize,
    pub matches: usize,
    pub scores: Vec<EpsilonScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub detector: String,
    pub descriptor: String,
    pub pair_count: usize,
    /// Means over pairs, one entry per epsilon.
    pub scores: Vec<EpsilonScores>,
    pub average_matches: f64,
    pub repeatability_formula: String,
    pub config: EvalConfig,
    pub pairs: Vec<PairScores>,
    pub table: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

fn render_table(method: &str, scores: &[EpsilonScores], average_matches: f64) -> String {
    let mut head = format!("{:<24}", "Method");
    let mut row = format!("{method:<24}");
    for s in scores {
        let _ = write!(head, " | MMS e={:<4}", s.epsilon);
        let _ = write!(row, " | {:>10.4}", s.mean_matching_score);
    }
    for s in scores {
        let _ = write!(head, " | Rep e={:<4}", s.epsilon);
        let _ = write!(row, " | {:>10.4}", s.repeatability);
    }
    head.push_str(" | Avg matches");
    let _ = write!(row, " | {average_matches:>11.2}");
    let rule = "-".repeat(head.len());
    format!("{head}\n{rule}\n{row}\n")
}

#[derive(Default)]
struct FisheyeCache {
    keypoints: HashMap<String, KeypointSet>,
    descriptors: HashMap<String, Vec<Vec<f64>>>,
}

fn resize(img: ImageGray, size: (u32, u32)) -> ImageGray {
    if img.size() == size {
        img
    } else {
        img.resized(size.0, size.1)
    }
}

/// Scores one pair whose images are already at evaluation resolution.
fn score_pair(
    ctx: &PairContext,
    detector: &dyn PairDetector,
    describer: &dyn PairDescriber,
    cfg: &EvalConfig,
    cache: &mut FisheyeCache,
) -> Result<PairScores> {
    let stem = &ctx.record.stem;
    let kps_f = match cache.keypoints.get(stem) {
        Some(k) if detector.fisheye_cacheable() => k.clone(),
        _ => detector.detect(ctx, Side::Fisheye, cfg.top_k_fisheye)?,
    };
    let kps_p = detector.detect(ctx, Side::Perspective, cfg.top_k_perspective)?;
    let desc_f = match cache.descriptors.get(stem) {
        Some(d) if detector.fisheye_cacheable() && describer.fisheye_cacheable() => d.clone(),
        _ => describer.describe(ctx, Side::Fisheye, &kps_f)?,
    };
    let desc_p = describer.describe(ctx, Side::Perspective, &kps_p)?;
    if desc_f.len() != kps_f.len() || desc_p.len() != kps_p.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}: descriptor count does not match keypoint count",
            ctx.record.id
        )));
    }
    if detector.fisheye_cacheable() {
        cache.keypoints.insert(stem.clone(), kps_f.clone());
        if describer.fisheye_cacheable() {
            cache.descriptors.insert(stem.clone(), desc_f.clone());
        }
    }

    let matches = if desc_f.is_empty() || desc_p.is_empty() {
        MatchSet::default()
    } else {
        match_nn(&desc_f, &desc_p, &cfg.matching)?
    };
    let scores = cfg
        .epsilons
        .iter()
        .map(|&eps| EpsilonScores {
            epsilon: eps,
            repeatability: repeatability(&kps_f, &kps_p, ctx.map, eps),
            mean_matching_score: mean_matching_score(&matches, &kps_f, &kps_p, ctx.map, eps),
        })
        .collect();
    Ok(PairScores {
        id: ctx.record.id.clone(),
        fisheye_keypoints: kps_f.len(),
        perspective_keypoints: kps_p.len(),
        matches: matches.len(),
        scores,
    })
}

/// Runs the benchmark over every pair of `dataset` in pair-id order.
pub fn run_benchmark(
    dataset: impl AsRef<Path>,
    detector: &dyn PairDetector,
    describer: &dyn PairDescriber,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let root: PathBuf = dataset.as_ref().to_path_buf();
    let pair_cfg = MakePairsConfig {
        seed: cfg.seed,
        ..cfg.pairs.clone()
    };
    let records = load_pairs(&root, &pair_cfg)?;

    let mut cache = FisheyeCache::default();
    let mut fisheye_images: HashMap<String, (ImageGray, (u32, u32))> = HashMap::new();
    let mut pairs = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        if !fisheye_images.contains_key(&record.stem) {
            let img = record.load_fisheye()?;
            let size = img.size();
            // only the current fisheye image is kept; records are grouped by stem
            fisheye_images.clear();
            fisheye_images.insert(record.stem.clone(), (resize(img, cfg.resize_to), size));
        }
        let (fisheye, fisheye_size) = &fisheye_images[&record.stem];
        let perspective = record.load_perspective()?;
        let perspective_size = perspective.size();
        for (expected, actual) in [
            (record.map.fisheye().size(), *fisheye_size),
            (record.map.pinhole().size(), perspective_size),
        ] {
            if expected != actual {
                return Err(Error::DimensionMismatch { expected, actual });
            }
        }
        let perspective = resize(perspective, cfg.resize_to);
        let map = record.map.rescaled(cfg.resize_to, cfg.resize_to)?;
        let ctx = PairContext {
            root: &root,
            record,
            fisheye,
            perspective: &perspective,
            map: &map,
            fisheye_size: *fisheye_size,
            perspective_size,
            seed: derived_seed(cfg.seed, i as u64),
        };
        pairs.push(score_pair(&ctx, detector, describer, cfg, &mut cache)?);
    }

    let n = pairs.len() as f64;
    let scores: Vec<EpsilonScores> = cfg
        .epsilons
        .iter()
        .enumerate()
        .map(|(j, &eps)| EpsilonScores {
            epsilon: eps,
            repeatability: pairs.iter().map(|p| p.scores[j].repeatability).sum::<f64>() / n,
            mean_matching_score: pairs.iter().map(|p| p.scores[j].mean_matching_score).sum::<f64>() / n,
        })
        .collect();
    let average_matches = pairs.iter().map(|p| p.matches as f64).sum::<f64>() / n;
    let method = format!("{}+{}", detector.name(), describer.name());
    Ok(MetricsReport {
        table: render_table(&method, &scores, average_matches),
        detector: detector.name(),
        descriptor: describer.name(),
        pair_count: pairs.len(),
        scores,
        average_matches,
        repeatability_formula: REPEATABILITY_FORMULA.into(),
        config: cfg.clone(),
        pairs,
    })
}
