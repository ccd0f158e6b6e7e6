//! On-disk corpora: synthetic primitive images and fisheye/perspective pair
//! datasets.
//!
//! A pair dataset directory holds
//! ```text
//! fisheye/<stem>.png
//! perspective/<stem>_k<kk>.png
//! maps/<stem>_k<kk>.json        {"fisheye_image", "perspective_image", "map"}
//! keypoints/<name>.json         optional ground truth or precomputed points
//! heatmaps/<name>.bin           optional cell heatmaps
//! descriptors/<name>.bin        optional descriptor grids
//! ```
//! where `<name>` is the fisheye stem or the pair id `<stem>_k<kk>`. A
//! directory with only fisheye images and a `calib.json` is also a dataset;
//! its pairs are planned from the seed and synthesized when loaded.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Calibration, FisheyeModel};
use crate::error::{Error, Result};
use crate::homography::{sample_hybrid_map, HybridMap, SamplingRanges};
use crate::keypoints::{Keypoint, KeypointSet};
use crate::raster::ImageGray;
use crate::synthdata::{derived_seed, gen_cubemap_labeled, gen_primitive_image, LabeledImage, PrimitiveKind};
use crate::warp::{cubemap_to_fisheye, synthesize_perspective, transfer_keypoints, Face};

pub const FISHEYE_DIR: &str = "fisheye";
pub const PERSPECTIVE_DIR: &str = "perspective";
pub const MAPS_DIR: &str = "maps";
pub const KEYPOINTS_DIR: &str = "keypoints";
pub const HEATMAPS_DIR: &str = "heatmaps";
pub const DESCRIPTORS_DIR: &str = "descriptors";
pub const CALIBRATION_FILE: &str = "calib.json";

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "pgm", "pnm", "jpg", "jpeg"];

/// Pair id of the `k`-th perspective view of a fisheye image.
pub fn pair_id(stem: &str, k: usize) -> String {
    format!("{stem}_k{k:02}")
}

/// Image files directly inside `dir`, sorted by path.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// One fisheye/perspective pair. `perspective_image` is `None` for pairs that
/// are synthesized from the fisheye image on load.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub stem: String,
    pub fisheye_image: PathBuf,
    pub perspective_image: Option<PathBuf>,
    pub map: HybridMap,
}

impl PairRecord {
    pub fn load_fisheye(&self) -> Result<ImageGray> {
        ImageGray::load(&self.fisheye_image)
    }

    pub fn load_perspective(&self) -> Result<ImageGray> {
        match &self.perspective_image {
            Some(path) => ImageGray::load(path),
            None => {
                let (w, h) = self.map.pinhole().size();
                Ok(synthesize_perspective(&self.load_fisheye()?, &self.map, w, h)?.0)
            }
        }
    }
}

/// Map file contents; image paths are relative to the dataset root.
#[derive(Serialize, Deserialize)]
struct PairFile {
    fisheye_image: String,
    perspective_image: String,
    map: HybridMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MakePairsConfig {
    /// Perspective views per fisheye image.
    pub k: usize,
    pub seed: u64,
    pub ranges: SamplingRanges,
}

impl Default for MakePairsConfig {
    fn default() -> Self {
        MakePairsConfig {
            k: 5,
            seed: 0,
            ranges: SamplingRanges::default(),
        }
    }
}

/// Draws `cfg.k` fully covered hybrid maps per image. Image `i` (in sorted
/// order) uses seed `derived_seed(cfg.seed, i)`, so a plan depends only on
/// the seed and the sorted image list.
pub fn plan_pairs(images: &[PathBuf], calib: &Calibration, cfg: &MakePairsConfig) -> Result<Vec<PairRecord>> {
    if cfg.k == 0 {
        return Err(Error::Config("at least one perspective view per image is required".into()));
    }
    let mut records = Vec::with_capacity(images.len() * cfg.k);
    for (i, path) in images.iter().enumerate() {
        let stem = file_stem(path);
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, i as u64));
        for k in 0..cfg.k {
            records.push(PairRecord {
                id: pair_id(&stem, k),
                stem: stem.clone(),
                fisheye_image: path.clone(),
                perspective_image: None,
                map: sample_hybrid_map(&mut rng, &cfg.ranges, calib)?,
            });
        }
    }
    Ok(records)
}

/// Writes a pair dataset for the fisheye images in `fisheye_dir`.
///
/// Ground truth in a `<stem>.json` sidecar next to a fisheye image is copied
/// to `keypoints/<stem>.json` and transferred to each view as
/// `keypoints/<stem>_k<kk>.json`.
pub fn make_pairs(
    fisheye_dir: impl AsRef<Path>,
    calib: &Calibration,
    cfg: &MakePairsConfig,
    out: impl AsRef<Path>,
) -> Result<Vec<PairRecord>> {
    let (fisheye_dir, out) = (fisheye_dir.as_ref(), out.as_ref());
    let images = list_images(fisheye_dir)?;
    if images.is_empty() {
        return Err(Error::EmptyDataset(fisheye_dir.to_path_buf()));
    }
    for dir in [FISHEYE_DIR, PERSPECTIVE_DIR, MAPS_DIR] {
        create_dir(&out.join(dir))?;
    }
    let plan = plan_pairs(&images, calib, cfg)?;
    let mut records = Vec::with_capacity(plan.len());
    for chunk in plan.chunks(cfg.k) {
        let stem = &chunk[0].stem;
        let fisheye = ImageGray::load(&chunk[0].fisheye_image)?;
        if fisheye.size() != calib.fisheye.size() {
            return Err(Error::DimensionMismatch {
                expected: calib.fisheye.size(),
                actual: fisheye.size(),
            });
        }
        let fisheye_rel = format!("{FISHEYE_DIR}/{stem}.png");
        fisheye.save(out.join(&fisheye_rel))?;

        let sidecar = fisheye_dir.join(format!("{stem}.json"));
        let truth = if sidecar.is_file() {
            let kps = KeypointSet::load(&sidecar)?;
            create_dir(&out.join(KEYPOINTS_DIR))?;
            kps.save(out.join(KEYPOINTS_DIR).join(format!("{stem}.json")))?;
            Some(kps)
        } else {
            None
        };

        for rec in chunk {
            let (w, h) = rec.map.pinhole().size();
            let (view, _) = synthesize_perspective(&fisheye, &rec.map, w, h)?;
            let view_rel = format!("{PERSPECTIVE_DIR}/{}.png", rec.id);
            view.save(out.join(&view_rel))?;
            if let Some(kps) = &truth {
                transfer_keypoints(kps, &rec.map).save(out.join(KEYPOINTS_DIR).join(format!("{}.json", rec.id)))?;
            }
            let file = PairFile {
                fisheye_image: fisheye_rel.clone(),
                perspective_image: view_rel.clone(),
                map: rec.map.clone(),
            };
            let map_path = out.join(MAPS_DIR).join(format!("{}.json", rec.id));
            let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json(&map_path, e))?;
            std::fs::write(&map_path, text).map_err(|e| Error::io(&map_path, e))?;
            records.push(PairRecord {
                id: rec.id.clone(),
                stem: stem.clone(),
                fisheye_image: out.join(&fisheye_rel),
                perspective_image: Some(out.join(&view_rel)),
                map: rec.map.clone(),
            });
        }
    }
    Ok(records)
}

/// Loads the pairs of a dataset, sorted by pair id.
///
/// Without `maps/`, fisheye images (in `fisheye/` or the root) are paired on
/// the fly from `calib.json` and `cfg`.
pub fn load_pairs(root: impl AsRef<Path>, cfg: &MakePairsConfig) -> Result<Vec<PairRecord>> {
    let root = root.as_ref();
    let maps_dir = root.join(MAPS_DIR);
    let mut records = if maps_dir.is_dir() {
        load_map_files(root, &maps_dir)?
    } else {
        let image_dir = if root.join(FISHEYE_DIR).is_dir() {
            root.join(FISHEYE_DIR)
        } else {
            root.to_path_buf()
        };
        let images = list_images(&image_dir)?;
        if images.is_empty() {
            return Err(Error::EmptyDataset(root.to_path_buf()));
        }
        let calib_path = root.join(CALIBRATION_FILE);
        if !calib_path.is_file() {
            return Err(Error::MissingCalibration(calib_path));
        }
        plan_pairs(&images, &Calibration::load(&calib_path)?, cfg)?
    };
    if records.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

fn load_map_files(root: &Path, maps_dir: &Path) -> Result<Vec<PairRecord>> {
    let entries = std::fs::read_dir(maps_dir).map_err(|e| Error::io(maps_dir, e))?;
    let mut records = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(maps_dir, e))?.path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: PairFile = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let fisheye_image = root.join(&file.fisheye_image);
        records.push(PairRecord {
            id: file_stem(&path),
            stem: file_stem(&fisheye_image),
            fisheye_image,
            perspective_image: Some(root.join(&file.perspective_image)),
            map: file.map,
        });
    }
    Ok(records)
}

/// Settings of a synthetic corpus written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub kinds: Vec<PrimitiveKind>,
    pub count: usize,
    pub size: (u32, u32),
    pub seed: u64,
    /// When set, images are fisheye renders of primitive cube maps under this
    /// model (whose size overrides `size`).
    pub fisheye: Option<FisheyeModel>,
    /// Cube face side for fisheye renders.
    pub face_size: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kinds: PrimitiveKind::ALL.to_vec(),
            count: 10,
            size: (320, 320),
            seed: 0,
            fisheye: None,
            face_size: 256,
        }
    }
}

/// Fisheye render of a random primitive cube map. Ground truth is every face
/// keypoint whose ray lands inside the fisheye image.
pub fn gen_fisheye_image<R: Rng + ?Sized>(
    rng: &mut R,
    model: &FisheyeModel,
    face_size: u32,
    kind: PrimitiveKind,
) -> LabeledImage {
    let (cube, labels) = gen_cubemap_labeled(rng, face_size, kind);
    let (image, _) = cubemap_to_fisheye(&cube, model);
    let n = face_size as f64;
    let points = Face::ALL
        .iter()
        .zip(&labels)
        .flat_map(|(face, kps)| {
            let [fwd, right, down] = face.axes();
            kps.iter().filter_map(move |k| {
                let ray: Vector3<f64> = fwd + right * (2.0 * k.x / n - 1.0) + down * (2.0 * k.y / n - 1.0);
                let p = model.project(&ray).ok()?;
                model.in_bounds(&p).then(|| Keypoint::new(p.x, p.y, 1.0))
            })
        })
        .collect();
    LabeledImage {
        image,
        keypoints: KeypointSet::new(points),
    }
}

/// Writes `<stem>.png` and `<stem>.json` (ground truth) for each image and
/// returns the image paths. Image `i` uses seed `derived_seed(cfg.seed, i)`
/// and kind `cfg.kinds[i % len]`.
pub fn write_synthetic(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out.as_ref();
    if cfg.kinds.is_empty() {
        return Err(Error::Config("at least one primitive kind is required".into()));
    }
    create_dir(out)?;
    let mut paths = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let kind = cfg.kinds[i % cfg.kinds.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, i as u64));
        let labeled = match &cfg.fisheye {
            Some(model) => gen_fisheye_image(&mut rng, model, cfg.face_size, kind),
            None => gen_primitive_image(&mut rng, cfg.size, kind),
        };
        let stem = format!("{}_{i:05}", kind.name());
        let path = out.join(format!("{stem}.png"));
        labeled.image.save(&path)?;
        labeled.keypoints.save_positions(out.join(format!("{stem}.json")))?;
        paths.push(path);
    }
    Ok(paths)
}
