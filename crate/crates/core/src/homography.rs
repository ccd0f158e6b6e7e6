//! Planar homographies, the five-factor random homography sampler and the
//! hybrid fisheye-to-perspective pixel map.
//!
//! A random homography is the product `H = H_R H_s H_k H_h H_T` of an in-plane
//! rotation, an anisotropic scaling, a skew, a tilt of the xy-plane into the
//! plane through `(0,0,0)`, `(1,0,h_x)`, `(0,1,h_y)`, and a translation.
//!
//! The hybrid map sends a fisheye pixel `p` to the perspective pixel
//! `K H [A p + t; phi(A p + t)]` (projectively). It acts on the lifted fisheye
//! ray, whose three components are all in sensor units, so every parameter of
//! `H` is dimensionless there: `t_x` shifts the view by `t_x` in tangent-plane
//! units and `h_x` tilts it by `h_x` per unit tangent.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Calibration, FisheyeModel, PinholeModel};
use crate::error::{Error, Result};
use crate::raster::bilinear_support_in;

const SCALE_EPS: f64 = 1e-12;
const DET_EPS: f64 = 1e-12;

/// Invertible 3x3 matrix normalized so that the bottom-right entry is 1 (or,
/// when that entry vanishes, to unit Frobenius norm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate);
        }
        let scale = if m[(2, 2)].abs() > SCALE_EPS {
            m[(2, 2)]
        } else {
            m.norm()
        };
        if scale == 0.0 {
            return Err(Error::Degenerate);
        }
        let m = m / scale;
        if m.determinant().abs() <= DET_EPS {
            return Err(Error::Degenerate);
        }
        Ok(Homography(m))
    }

    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.0.try_inverse().ok_or(Error::Degenerate)?;
        Homography::new(inv)
    }

    /// `self * other`: applies `other` first.
    pub fn then_after(&self, other: &Homography) -> Result<Self> {
        Homography::new(self.0 * other.0)
    }

    /// Maps a point of the plane; `None` at the line at infinity.
    #[inline]
    pub fn apply(&self, p: &Vector2<f64>) -> Option<Vector2<f64>> {
        let q = self.0 * Vector3::new(p.x, p.y, 1.0);
        if q.z.abs() < 1e-15 {
            return None;
        }
        let out = Vector2::new(q.x / q.z, q.y / q.z);
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    /// Applies the matrix to a homogeneous 3-vector (a ray).
    #[inline]
    pub fn apply_ray(&self, r: &Vector3<f64>) -> Vector3<f64> {
        self.0 * r
    }
}

impl TryFrom<[[f64; 3]; 3]> for Homography {
    type Error = Error;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Homography::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        let m = h.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

/// Parameters of the five homography factors.
///
/// Serialized as the array `[a, s_x, s_y, k_x, k_y, h_x, h_y, t_x, t_y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 9]", into = "[f64; 9]")]
pub struct HomographyParams {
    pub a: f64,
    pub s_x: f64,
    pub s_y: f64,
    pub k_x: f64,
    pub k_y: f64,
    pub h_x: f64,
    pub h_y: f64,
    pub t_x: f64,
    pub t_y: f64,
}

impl Default for HomographyParams {
    fn default() -> Self {
        Self::NEUTRAL
    }
}

impl From<[f64; 9]> for HomographyParams {
    fn from(v: [f64; 9]) -> Self {
        HomographyParams {
            a: v[0],
            s_x: v[1],
            s_y: v[2],
            k_x: v[3],
            k_y: v[4],
            h_x: v[5],
            h_y: v[6],
            t_x: v[7],
            t_y: v[8],
        }
    }
}

impl From<HomographyParams> for [f64; 9] {
    fn from(p: HomographyParams) -> Self {
        [p.a, p.s_x, p.s_y, p.k_x, p.k_y, p.h_x, p.h_y, p.t_x, p.t_y]
    }
}

/// The five factors of a random homography, in multiplication order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factors {
    pub rotation: Matrix3<f64>,
    pub scale: Matrix3<f64>,
    pub skew: Matrix3<f64>,
    pub tilt: Matrix3<f64>,
    pub translation: Matrix3<f64>,
}

impl Factors {
    pub fn as_array(&self) -> [Matrix3<f64>; 5] {
        [self.rotation, self.scale, self.skew, self.tilt, self.translation]
    }
}

impl HomographyParams {
    pub const NEUTRAL: HomographyParams = HomographyParams {
        a: 0.0,
        s_x: 1.0,
        s_y: 1.0,
        k_x: 0.0,
        k_y: 0.0,
        h_x: 0.0,
        h_y: 0.0,
        t_x: 0.0,
        t_y: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let values: [f64; 9] = (*self).into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite homography parameter".into()));
        }
        if !(self.s_x > 0.0 && self.s_y > 0.0) {
            return Err(Error::Config(format!(
                "scales must be positive (s_x={}, s_y={})",
                self.s_x, self.s_y
            )));
        }
        Ok(())
    }

    pub fn factor(&self) -> Factors {
        let (sin, cos) = self.a.sin_cos();
        Factors {
            rotation: Matrix3::new(cos, sin, 0.0, -sin, cos, 0.0, 0.0, 0.0, 1.0),
            scale: Matrix3::new(self.s_x, 0.0, 0.0, 0.0, self.s_y, 0.0, 0.0, 0.0, 1.0),
            skew: Matrix3::new(1.0, self.k_x, 0.0, self.k_y, 1.0, 0.0, 0.0, 0.0, 1.0),
            tilt: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, self.h_x, self.h_y, 1.0),
            translation: Matrix3::new(1.0, 0.0, self.t_x, 0.0, 1.0, self.t_y, 0.0, 0.0, 1.0),
        }
    }

    /// `H_R H_s H_k H_h H_T`, normalized.
    pub fn compose(&self) -> Result<Homography> {
        self.validate()?;
        let f = self.factor();
        Homography::new(f.rotation * f.scale * f.skew * f.tilt * f.translation)
    }

    /// Homography on pixel coordinates of a `width x height` image, acting as
    /// [`compose`](Self::compose) in coordinates centered on the image and
    /// scaled by half its larger side.
    pub fn compose_in_image(&self, width: u32, height: u32) -> Result<Homography> {
        let half = width.max(height) as f64 / 2.0;
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let to_norm = Matrix3::new(1.0 / half, 0.0, -cx / half, 0.0, 1.0 / half, -cy / half, 0.0, 0.0, 1.0);
        let from_norm = Matrix3::new(half, 0.0, cx, 0.0, half, cy, 0.0, 0.0, 1.0);
        Homography::new(from_norm * self.compose()?.matrix() * to_norm)
    }

    /// Draws every parameter uniformly from its range.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, ranges: &SamplingRanges) -> Self {
        HomographyParams {
            a: ranges.a.draw(rng),
            s_x: ranges.s_x.draw(rng),
            s_y: ranges.s_y.draw(rng),
            k_x: ranges.k_x.draw(rng),
            k_y: ranges.k_y.draw(rng),
            h_x: ranges.h_x.draw(rng),
            h_y: ranges.h_y.draw(rng),
            t_x: ranges.t_x.draw(rng),
            t_y: ranges.t_y.draw(rng),
        }
    }
}

/// Closed interval, serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// Per-parameter sampling intervals for random homographies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingRanges {
    pub a: Interval,
    pub s_x: Interval,
    pub s_y: Interval,
    pub k_x: Interval,
    pub k_y: Interval,
    pub h_x: Interval,
    pub h_y: Interval,
    pub t_x: Interval,
    pub t_y: Interval,
    pub max_rejections: usize,
}

impl Default for SamplingRanges {
    /// Ranges for hybrid maps (parameters act on lifted fisheye rays).
    fn default() -> Self {
        let pi6 = std::f64::consts::FRAC_PI_6;
        SamplingRanges {
            a: Interval::new(-pi6, pi6),
            s_x: Interval::new(0.7, 1.3),
            s_y: Interval::new(0.7, 1.3),
            k_x: Interval::new(-0.2, 0.2),
            k_y: Interval::new(-0.2, 0.2),
            h_x: Interval::new(-0.3, 0.3),
            h_y: Interval::new(-0.3, 0.3),
            t_x: Interval::new(-0.2, 0.2),
            t_y: Interval::new(-0.2, 0.2),
            max_rejections: 50,
        }
    }
}

impl SamplingRanges {
    /// Every interval collapsed onto the neutral value.
    pub fn neutral() -> Self {
        SamplingRanges {
            a: Interval::point(0.0),
            s_x: Interval::point(1.0),
            s_y: Interval::point(1.0),
            k_x: Interval::point(0.0),
            k_y: Interval::point(0.0),
            h_x: Interval::point(0.0),
            h_y: Interval::point(0.0),
            t_x: Interval::point(0.0),
            t_y: Interval::point(0.0),
            max_rejections: 1,
        }
    }

    /// Milder ranges for image-plane warps used by Homographic Adaptation,
    /// expressed in image coordinates normalized by half the larger side.
    pub fn planar_default() -> Self {
        SamplingRanges {
            a: Interval::new(-0.5, 0.5),
            s_x: Interval::new(0.8, 1.2),
            s_y: Interval::new(0.8, 1.2),
            k_x: Interval::new(-0.1, 0.1),
            k_y: Interval::new(-0.1, 0.1),
            h_x: Interval::new(-0.15, 0.15),
            h_y: Interval::new(-0.15, 0.15),
            t_x: Interval::new(-0.15, 0.15),
            t_y: Interval::new(-0.15, 0.15),
            max_rejections: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("a", self.a, 0.0),
            ("s_x", self.s_x, 1.0),
            ("s_y", self.s_y, 1.0),
            ("k_x", self.k_x, 0.0),
            ("k_y", self.k_y, 0.0),
            ("h_x", self.h_x, 0.0),
            ("h_y", self.h_y, 0.0),
            ("t_x", self.t_x, 0.0),
            ("t_y", self.t_y, 0.0),
        ];
        for (name, interval, neutral) in checks {
            if !(interval.lo.is_finite() && interval.hi.is_finite() && interval.lo <= interval.hi) {
                return Err(Error::Config(format!("range {name} is not a valid interval")));
            }
            if !interval.contains(neutral) {
                return Err(Error::Config(format!(
                    "range {name} = [{}, {}] must contain the neutral value {neutral}",
                    interval.lo, interval.hi
                )));
            }
        }
        if self.s_x.lo <= 0.0 || self.s_y.lo <= 0.0 {
            return Err(Error::Config("scale ranges must be positive".into()));
        }
        if self.max_rejections == 0 {
            return Err(Error::Config("max_rejections must be at least 1".into()));
        }
        Ok(())
    }

    /// Reads the `homography.ranges` section of a TOML or JSON config file.
    /// Missing keys fall back to [`SamplingRanges::default`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let root: serde_json::Value = if is_toml {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?
        };
        let section = root
            .get("homography")
            .and_then(|h| h.get("ranges"))
            .cloned()
            .unwrap_or_else(|| serde_json::Value::Object(Default::default()));
        let ranges: SamplingRanges =
            serde_json::from_value(section).map_err(|e| Error::json(path, e))?;
        ranges.validate()?;
        Ok(ranges)
    }
}

/// A pixel map between two images, defined where both directions exist.
pub trait PointMap {
    /// Size of the domain image.
    fn source_size(&self) -> (u32, u32);
    /// Size of the image the forward map lands in.
    fn target_size(&self) -> (u32, u32);
    fn forward(&self, p: &Vector2<f64>) -> Result<Vector2<f64>>;
    fn backward(&self, q: &Vector2<f64>) -> Result<Vector2<f64>>;
}

/// The reverse of a [`PointMap`].
pub struct Reversed<'a, M: PointMap + ?Sized>(pub &'a M);

impl<M: PointMap + ?Sized> PointMap for Reversed<'_, M> {
    fn source_size(&self) -> (u32, u32) {
        self.0.target_size()
    }

    fn target_size(&self) -> (u32, u32) {
        self.0.source_size()
    }

    fn forward(&self, p: &Vector2<f64>) -> Result<Vector2<f64>> {
        self.0.backward(p)
    }

    fn backward(&self, q: &Vector2<f64>) -> Result<Vector2<f64>> {
        self.0.forward(q)
    }
}

/// Plain homography between two pixel frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarMap {
    h: Homography,
    h_inv: Homography,
    source: (u32, u32),
    target: (u32, u32),
}

impl PlanarMap {
    pub fn new(h: Homography, source: (u32, u32), target: (u32, u32)) -> Result<Self> {
        Ok(PlanarMap {
            h_inv: h.inverse()?,
            h,
            source,
            target,
        })
    }

    pub fn homography(&self) -> &Homography {
        &self.h
    }
}

impl PointMap for PlanarMap {
    fn source_size(&self) -> (u32, u32) {
        self.source
    }

    fn target_size(&self) -> (u32, u32) {
        self.target
    }

    fn forward(&self, p: &Vector2<f64>) -> Result<Vector2<f64>> {
        self.h.apply(p).ok_or(Error::Degenerate)
    }

    fn backward(&self, q: &Vector2<f64>) -> Result<Vector2<f64>> {
        self.h_inv.apply(q).ok_or(Error::Degenerate)
    }
}

/// Fisheye pixel to perspective pixel map `K H [A p + t; phi(A p + t)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HybridMapFile", into = "HybridMapFile")]
pub struct HybridMap {
    fisheye: FisheyeModel,
    pinhole: PinholeModel,
    h: Homography,
    h_inv: Homography,
}

#[derive(Serialize, Deserialize)]
struct HybridMapFile {
    fisheye: FisheyeModel,
    pinhole: PinholeModel,
    homography: Homography,
}

impl TryFrom<HybridMapFile> for HybridMap {
    type Error = Error;

    fn try_from(f: HybridMapFile) -> Result<Self> {
        HybridMap::new(f.fisheye, f.pinhole, f.homography)
    }
}

impl From<HybridMap> for HybridMapFile {
    fn from(m: HybridMap) -> Self {
        HybridMapFile {
            fisheye: m.fisheye,
            pinhole: m.pinhole,
            homography: m.h,
        }
    }
}

impl HybridMap {
    pub fn new(fisheye: FisheyeModel, pinhole: PinholeModel, h: Homography) -> Result<Self> {
        Ok(HybridMap {
            h_inv: h.inverse()?,
            fisheye,
            pinhole,
            h,
        })
    }

    pub fn from_calibration(calib: &Calibration, h: Homography) -> Result<Self> {
        HybridMap::new(calib.fisheye.clone(), calib.pinhole, h)
    }

    pub fn fisheye(&self) -> &FisheyeModel {
        &self.fisheye
    }

    pub fn pinhole(&self) -> &PinholeModel {
        &self.pinhole
    }

    pub fn homography(&self) -> &Homography {
        &self.h
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            fisheye: self.fisheye.clone(),
            pinhole: self.pinhole,
        }
    }

    /// Fisheye pixel to perspective pixel.
    pub fn forward(&self, fisheye_pixel: &Vector2<f64>) -> Result<Vector2<f64>> {
        let ray = self.fisheye.unproject(fisheye_pixel)?;
        self.pinhole.project(&self.h.apply_ray(&ray))
    }

    /// Perspective pixel to fisheye pixel.
    pub fn inverse(&self, perspective_pixel: &Vector2<f64>) -> Result<Vector2<f64>> {
        let ray = self.h_inv.apply_ray(&self.pinhole.unproject(perspective_pixel));
        self.fisheye.project(&ray)
    }

    /// Whether the perspective pixel center `(x, y)` back-maps to a fisheye
    /// location that can be bilinearly sampled.
    fn pixel_covered(&self, x: u32, y: u32) -> bool {
        let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
        match self.inverse(&p) {
            Ok(q) => bilinear_support_in(q.x, q.y, self.fisheye.width(), self.fisheye.height()),
            Err(_) => false,
        }
    }

    /// True when every perspective pixel has a valid fisheye source, i.e. the
    /// synthesized perspective view is fully inside the fisheye field of view.
    pub fn fully_covered(&self) -> bool {
        let (w, h) = self.pinhole.size();
        // the border usually fails first
        let border = (0..w).flat_map(|x| [(x, 0), (x, h - 1)]).chain((0..h).flat_map(|y| [(0, y), (w - 1, y)]));
        for (x, y) in border {
            if !self.pixel_covered(x, y) {
                return false;
            }
        }
        (1..h.saturating_sub(1)).all(|y| (1..w.saturating_sub(1)).all(|x| self.pixel_covered(x, y)))
    }

    /// Copy of the map for images resized to the given sizes.
    pub fn rescaled(&self, fisheye_size: (u32, u32), perspective_size: (u32, u32)) -> Result<Self> {
        let fsx = fisheye_size.0 as f64 / self.fisheye.width() as f64;
        let fsy = fisheye_size.1 as f64 / self.fisheye.height() as f64;
        let psx = perspective_size.0 as f64 / self.pinhole.width as f64;
        let psy = perspective_size.1 as f64 / self.pinhole.height as f64;
        HybridMap::new(
            self.fisheye.rescaled(fsx, fsy, fisheye_size.0, fisheye_size.1)?,
            self.pinhole.rescaled(psx, psy, perspective_size.0, perspective_size.1)?,
            self.h,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl PointMap for HybridMap {
    fn source_size(&self) -> (u32, u32) {
        self.fisheye.size()
    }

    fn target_size(&self) -> (u32, u32) {
        self.pinhole.size()
    }

    fn forward(&self, p: &Vector2<f64>) -> Result<Vector2<f64>> {
        HybridMap::forward(self, p)
    }

    fn backward(&self, q: &Vector2<f64>) -> Result<Vector2<f64>> {
        HybridMap::inverse(self, q)
    }
}

/// Draws a random hybrid map whose perspective view lies entirely inside the
/// fisheye field of view, rejecting draws that do not.
pub fn sample_hybrid_map<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &SamplingRanges,
    calib: &Calibration,
) -> Result<HybridMap> {
    ranges.validate()?;
    for _ in 0..ranges.max_rejections {
        let params = HomographyParams::sample(rng, ranges);
        let Ok(h) = params.compose() else { continue };
        let Ok(map) = HybridMap::from_calibration(calib, h) else { continue };
        if map.fully_covered() {
            return Ok(map);
        }
    }
    Err(Error::RejectionExhausted {
        attempts: ranges.max_rejections,
    })
}
