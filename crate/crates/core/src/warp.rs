//! Inverse warping: fisheye to perspective synthesis, plain homographic
//! warps, cube map to fisheye rendering, and keypoint transfer.

use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};

use crate::camera::FisheyeModel;
use crate::error::{Error, Result};
use crate::homography::{Homography, HybridMap, PointMap};
use crate::keypoints::{Keypoint, KeypointSet};
use crate::raster::{ImageGray, ValidMask};

/// Inverse-warps `src` onto a `width x height` grid. `back_map` sends an
/// output pixel center to a continuous source coordinate.
pub fn inverse_warp<F>(src: &ImageGray, width: u32, height: u32, back_map: F) -> (ImageGray, ValidMask)
where
    F: Fn(&Vector2<f64>) -> Option<Vector2<f64>>,
{
    let mut out = ImageGray::new(width, height);
    let mut mask = ValidMask::new(width, height, false);
    for y in 0..height {
        for x in 0..width {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            if let Some(v) = back_map(&p).and_then(|q| src.sample(q.x, q.y)) {
                out.set(x, y, v);
                mask.set(x, y, true);
            }
        }
    }
    (out, mask)
}

/// Synthesizes the perspective view of a fisheye image under a hybrid map.
pub fn synthesize_perspective(
    img: &ImageGray,
    map: &HybridMap,
    out_w: u32,
    out_h: u32,
) -> Result<(ImageGray, ValidMask)> {
    if img.size() != map.fisheye().size() {
        return Err(Error::DimensionMismatch {
            expected: map.fisheye().size(),
            actual: img.size(),
        });
    }
    Ok(inverse_warp(img, out_w, out_h, |p| map.inverse(p).ok()))
}

/// Warps an image by a homography `h` on pixel coordinates: the output at
/// `p` is the input at `h^-1 p`.
pub fn warp_perspective(
    img: &ImageGray,
    h: &Homography,
    out_w: u32,
    out_h: u32,
) -> Result<(ImageGray, ValidMask)> {
    let inv = h.inverse()?;
    Ok(inverse_warp(img, out_w, out_h, |p| inv.apply(p)))
}

/// Cube map faces, in the order `+x, -x, +y, -y, +z, -z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ, Face::NegZ];

    pub fn suffix(self) -> &'static str {
        match self {
            Face::PosX => "_px",
            Face::NegX => "_nx",
            Face::PosY => "_py",
            Face::NegY => "_ny",
            Face::PosZ => "_pz",
            Face::NegZ => "_nz",
        }
    }

    /// `(forward, right, down)` axes of the face camera. Camera frames follow
    /// the image convention: x right, y down, z forward.
    pub fn axes(self) -> [Vector3<f64>; 3] {
        let v = Vector3::new;
        match self {
            Face::PosX => [v(1.0, 0.0, 0.0), v(0.0, 0.0, -1.0), v(0.0, 1.0, 0.0)],
            Face::NegX => [v(-1.0, 0.0, 0.0), v(0.0, 0.0, 1.0), v(0.0, 1.0, 0.0)],
            Face::PosY => [v(0.0, 1.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 0.0, -1.0)],
            Face::NegY => [v(0.0, -1.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 0.0, 1.0)],
            Face::PosZ => [v(0.0, 0.0, 1.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)],
            Face::NegZ => [v(0.0, 0.0, -1.0), v(-1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)],
        }
    }

    /// Face hit by a ray: the dominant axis, ties going to the earlier face.
    pub fn of_ray(d: &Vector3<f64>) -> Face {
        let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
        if ax >= ay && ax >= az {
            if d.x >= 0.0 {
                Face::PosX
            } else {
                Face::NegX
            }
        } else if ay >= az {
            if d.y >= 0.0 {
                Face::PosY
            } else {
                Face::NegY
            }
        } else if d.z >= 0.0 {
            Face::PosZ
        } else {
            Face::NegZ
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Six square 90-degree views sharing one center.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeMap {
    faces: [ImageGray; 6],
}

impl CubeMap {
    pub fn new(faces: [ImageGray; 6]) -> Result<Self> {
        let size = faces[0].size();
        if size.0 != size.1 || size.0 == 0 {
            return Err(Error::ShapeMismatch(format!(
                "cube faces must be square, got {}x{}",
                size.0, size.1
            )));
        }
        if let Some(f) = faces.iter().find(|f| f.size() != size) {
            return Err(Error::DimensionMismatch {
                expected: size,
                actual: f.size(),
            });
        }
        Ok(CubeMap { faces })
    }

    pub fn face(&self, face: Face) -> &ImageGray {
        &self.faces[face.index()]
    }

    pub fn face_size(&self) -> u32 {
        self.faces[0].width()
    }

    /// Face pixel coordinate hit by a ray direction.
    pub fn locate(&self, d: &Vector3<f64>) -> (Face, Vector2<f64>) {
        let face = Face::of_ray(d);
        let [fwd, right, down] = face.axes();
        let depth = d.dot(&fwd);
        let n = self.face_size() as f64;
        let s = d.dot(&right) / depth;
        let t = d.dot(&down) / depth;
        (face, Vector2::new((s + 1.0) * 0.5 * n, (t + 1.0) * 0.5 * n))
    }

    /// Bilinear lookup of the environment along a ray.
    pub fn sample(&self, d: &Vector3<f64>) -> f64 {
        let (face, p) = self.locate(d);
        self.face(face).sample_clamped(p.x, p.y)
    }

    /// Loads `*_px`, `*_nx`, `*_py`, `*_ny`, `*_pz`, `*_nz` images from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        let load_face = |face: Face| -> Result<ImageGray> {
            let mut hits: Vec<&PathBuf> = entries
                .iter()
                .filter(|p| {
                    p.file_stem()
                        .and_then(|s| s.to_str())
                        .is_some_and(|s| s.ends_with(face.suffix()))
                })
                .collect();
            hits.sort();
            let path = hits.first().ok_or_else(|| {
                Error::io(
                    dir.join(format!("*{}", face.suffix())),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing cube face"),
                )
            })?;
            ImageGray::load(path)
        };
        let faces = [
            load_face(Face::PosX)?,
            load_face(Face::NegX)?,
            load_face(Face::PosY)?,
            load_face(Face::NegY)?,
            load_face(Face::PosZ)?,
            load_face(Face::NegZ)?,
        ];
        CubeMap::new(faces)
    }

    /// Writes `<dir>/<stem>_px.png` and the other five faces.
    pub fn save_dir(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        for face in Face::ALL {
            self.face(face)
                .save(dir.as_ref().join(format!("{stem}{}.png", face.suffix())))?;
        }
        Ok(())
    }
}

/// Renders the fisheye view of a cube map by casting each fisheye pixel's ray.
pub fn cubemap_to_fisheye(cube: &CubeMap, model: &FisheyeModel) -> (ImageGray, ValidMask) {
    let (w, h) = model.size();
    let mut out = ImageGray::new(w, h);
    let mut mask = ValidMask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            if let Ok(ray) = model.unproject(&p) {
                out.set(x, y, cube.sample(&ray));
                mask.set(x, y, true);
            }
        }
    }
    (out, mask)
}

/// Maps keypoints forward through `map`, dropping points that cannot be
/// mapped or land outside the target image. Scores are kept.
pub fn transfer_keypoints<M: PointMap + ?Sized>(kps: &KeypointSet, map: &M) -> KeypointSet {
    let (w, h) = map.target_size();
    let points = kps
        .iter()
        .filter_map(|k| {
            let q = map.forward(&k.pos()).ok()?;
            let inside = q.x >= 0.0 && q.y >= 0.0 && q.x < w as f64 && q.y < h as f64;
            inside.then(|| Keypoint::new(q.x, q.y, k.score))
        })
        .collect();
    KeypointSet::new(points)
}
