//! Fisheye (polynomial omnidirectional) and pinhole camera models.
//!
//! All pixel coordinates are continuous: pixel `(i, j)` covers
//! `[i, i + 1) x [j, j + 1)` and its center is `(i + 0.5, j + 0.5)`.
//!
//! The fisheye model maps a pixel to sensor coordinates through an affine map
//! `(u, v) = A * pixel + t` and lifts it to the (unnormalized) ray
//! `(u, v, phi(rho))`, with `rho = |(u, v)|` and
//! `phi(rho) = a0 + a2 rho^2 + a3 rho^3 + a4 rho^4`. The optical axis is `+z`,
//! so `a0 > 0`.

use std::path::Path;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of samples used to check that the ray angle grows with the radius.
const MONOTONICITY_SAMPLES: usize = 1000;
const ROOT_MAX_ITERS: usize = 60;
const ROOT_TOL: f64 = 1e-9;

/// Polynomial omnidirectional camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FisheyeFile", into = "FisheyeFile")]
pub struct FisheyeModel {
    coeffs: [f64; 4],
    affine: Matrix2<f64>,
    affine_inv: Matrix2<f64>,
    offset: Vector2<f64>,
    width: u32,
    height: u32,
    fov_radius: f64,
}

impl FisheyeModel {
    /// Builds a model from `[a0, a2, a3, a4]`, the pixel-to-sensor affine map and
    /// the image size. When `fov_radius` is `None` the radius of the largest
    /// sensor-centered circle inscribed in the image is used.
    pub fn new(
        coeffs: [f64; 4],
        affine: Matrix2<f64>,
        offset: Vector2<f64>,
        width: u32,
        height: u32,
        fov_radius: Option<f64>,
    ) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidModel("non-finite polynomial coefficient".into()));
        }
        if coeffs[0] <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "a0 must be positive (optical axis +z), got {}",
                coeffs[0]
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidModel("empty image size".into()));
        }
        let affine_inv = affine
            .try_inverse()
            .filter(|_| affine.determinant().abs() > 1e-12)
            .ok_or_else(|| Error::InvalidModel("affine matrix A is singular".into()))?;
        let mut model = FisheyeModel {
            coeffs,
            affine,
            affine_inv,
            offset,
            width,
            height,
            fov_radius: 0.0,
        };
        let rho_max = match fov_radius {
            Some(r) => r,
            None => model.inscribed_radius(),
        };
        if !(rho_max.is_finite() && rho_max > 0.0) {
            return Err(Error::InvalidModel(format!(
                "field-of-view radius must be positive, got {rho_max}"
            )));
        }
        model.fov_radius = rho_max;
        model.check_monotone()?;
        Ok(model)
    }

    pub fn coeffs(&self) -> [f64; 4] {
        self.coeffs
    }

    pub fn affine(&self) -> &Matrix2<f64> {
        &self.affine
    }

    pub fn offset(&self) -> &Vector2<f64> {
        &self.offset
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Maximum valid sensor radius.
    pub fn fov_radius(&self) -> f64 {
        self.fov_radius
    }

    /// `phi(rho)`.
    pub fn phi(&self, rho: f64) -> f64 {
        let [a0, a2, a3, a4] = self.coeffs;
        let r2 = rho * rho;
        a0 + r2 * (a2 + rho * (a3 + rho * a4))
    }

    /// `d phi / d rho`.
    pub fn phi_derivative(&self, rho: f64) -> f64 {
        let [_, a2, a3, a4] = self.coeffs;
        rho * (2.0 * a2 + rho * (3.0 * a3 + rho * 4.0 * a4))
    }

    /// Angle between the ray lifted from sensor radius `rho` and the optical axis.
    pub fn angle(&self, rho: f64) -> f64 {
        rho.atan2(self.phi(rho))
    }

    /// Half field of view in radians.
    pub fn max_angle(&self) -> f64 {
        self.angle(self.fov_radius)
    }

    pub fn sensor_from_pixel(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        self.affine * pixel + self.offset
    }

    pub fn pixel_from_sensor(&self, sensor: &Vector2<f64>) -> Vector2<f64> {
        self.affine_inv * (sensor - self.offset)
    }

    /// Pixel onto which the optical axis projects.
    pub fn principal_pixel(&self) -> Vector2<f64> {
        self.pixel_from_sensor(&Vector2::zeros())
    }

    pub fn in_bounds(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= self.width as f64
            && pixel.y <= self.height as f64
    }

    /// Lifts a pixel to its (unnormalized) ray `(u, v, phi(rho))`.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Result<Vector3<f64>> {
        if !self.in_bounds(pixel) {
            return Err(Error::OutOfBounds {
                x: pixel.x,
                y: pixel.y,
                width: self.width,
                height: self.height,
            });
        }
        let sensor = self.sensor_from_pixel(pixel);
        let rho = sensor.norm();
        if rho > self.fov_radius {
            return Err(Error::OutOfFov {
                rho,
                rho_max: self.fov_radius,
            });
        }
        Ok(Vector3::new(sensor.x, sensor.y, self.phi(rho)))
    }

    /// Pixel whose lifted ray is parallel to `ray`.
    ///
    /// Solves for the sensor radius `rho` with `(rho, phi(rho))` parallel to
    /// `(|ray_xy|, ray_z)`. The residual `F(rho) = z rho - r phi(rho)` has the
    /// sign of `angle(rho) - angle(ray)`, so it brackets the root on
    /// `[0, rho_max]`; Newton steps are taken inside the bracket and replaced by
    /// bisection whenever they leave it.
    pub fn project(&self, ray: &Vector3<f64>) -> Result<Vector2<f64>> {
        let norm = ray.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NoRoot);
        }
        let dir = ray / norm;
        let r = dir.x.hypot(dir.y);
        if r == 0.0 {
            return if dir.z > 0.0 {
                Ok(self.principal_pixel())
            } else {
                Err(Error::NoRoot)
            };
        }
        let z = dir.z;
        let residual = |rho: f64| z * rho - r * self.phi(rho);

        let (mut lo, mut hi) = (0.0, self.fov_radius);
        let f_hi = residual(hi);
        if f_hi < 0.0 {
            return Err(Error::NoRoot);
        }
        let mut rho = if f_hi == 0.0 { hi } else { 0.5 * self.fov_radius };
        if f_hi != 0.0 {
            for _ in 0..ROOT_MAX_ITERS {
                let f = residual(rho);
                if f == 0.0 {
                    break;
                }
                if f < 0.0 {
                    lo = rho;
                } else {
                    hi = rho;
                }
                let slope = z - r * self.phi_derivative(rho);
                let newton = rho - f / slope;
                let next = if slope != 0.0 && newton > lo && newton < hi {
                    newton
                } else {
                    0.5 * (lo + hi)
                };
                let step = (next - rho).abs();
                rho = next;
                if step < ROOT_TOL || hi - lo < ROOT_TOL {
                    break;
                }
            }
        }
        let sensor = Vector2::new(dir.x, dir.y) * (rho / r);
        Ok(self.pixel_from_sensor(&sensor))
    }

    /// Returns a copy of the model for an image resampled by `(sx, sy)`
    /// (new pixel = old pixel * scale).
    pub fn rescaled(&self, sx: f64, sy: f64, width: u32, height: u32) -> Result<Self> {
        let scale_inv = Matrix2::new(1.0 / sx, 0.0, 0.0, 1.0 / sy);
        FisheyeModel::new(
            self.coeffs,
            self.affine * scale_inv,
            self.offset,
            width,
            height,
            Some(self.fov_radius),
        )
    }

    fn inscribed_radius(&self) -> f64 {
        let (w, h) = (self.width as f64, self.height as f64);
        let corners = [
            Vector2::new(0.0, 0.0),
            Vector2::new(w, 0.0),
            Vector2::new(w, h),
            Vector2::new(0.0, h),
        ];
        (0..4)
            .map(|i| {
                let a = self.sensor_from_pixel(&corners[i]);
                let b = self.sensor_from_pixel(&corners[(i + 1) % 4]);
                let d = b - a;
                // distance from the sensor origin to the edge line
                (a.x * d.y - a.y * d.x).abs() / d.norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn check_monotone(&self) -> Result<()> {
        let mut prev = self.angle(0.0);
        for i in 1..=MONOTONICITY_SAMPLES {
            let rho = self.fov_radius * i as f64 / MONOTONICITY_SAMPLES as f64;
            let a = self.angle(rho);
            if !(a > prev) {
                return Err(Error::InvalidModel(format!(
                    "ray angle is not strictly increasing at rho = {rho:.4}"
                )));
            }
            prev = a;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FisheyeFile {
    coeffs: Vec<f64>,
    #[serde(rename = "A")]
    affine: [[f64; 2]; 2],
    t: [f64; 2],
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fov_radius: Option<f64>,
}

impl TryFrom<FisheyeFile> for FisheyeModel {
    type Error = Error;

    fn try_from(file: FisheyeFile) -> Result<Self> {
        if file.coeffs.is_empty() || file.coeffs.len() > 4 {
            return Err(Error::InvalidModel(format!(
                "expected 1 to 4 coefficients [a0, a2, a3, a4], got {}",
                file.coeffs.len()
            )));
        }
        let mut coeffs = [0.0; 4];
        coeffs[..file.coeffs.len()].copy_from_slice(&file.coeffs);
        // Calibrations with the optical axis along -z store a negative a0;
        // flipping the whole polynomial flips z.
        if coeffs[0] < 0.0 {
            coeffs.iter_mut().for_each(|c| *c = -*c);
        }
        let [[a, b], [c, d]] = file.affine;
        FisheyeModel::new(
            coeffs,
            Matrix2::new(a, b, c, d),
            Vector2::new(file.t[0], file.t[1]),
            file.width,
            file.height,
            file.fov_radius,
        )
    }
}

impl From<FisheyeModel> for FisheyeFile {
    fn from(m: FisheyeModel) -> Self {
        FisheyeFile {
            coeffs: m.coeffs.to_vec(),
            affine: [
                [m.affine[(0, 0)], m.affine[(0, 1)]],
                [m.affine[(1, 0)], m.affine[(1, 1)]],
            ],
            t: [m.offset.x, m.offset.y],
            width: m.width,
            height: m.height,
            fov_radius: Some(m.fov_radius),
        }
    }
}

/// Pinhole camera with intrinsics `K = [[fx, skew, cx], [0, fy, cy], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PinholeFile", into = "PinholeFile")]
pub struct PinholeModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || ![cx, cy, skew].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "pinhole focal lengths must be positive and parameters finite (fx={fx}, fy={fy})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidModel("empty image size".into()));
        }
        Ok(PinholeModel {
            fx,
            fy,
            cx,
            cy,
            skew,
            width,
            height,
        })
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn project(&self, ray: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(ray.z > 0.0) {
            return Err(Error::BehindCamera { z: ray.z });
        }
        let x = ray.x / ray.z;
        let y = ray.y / ray.z;
        Ok(Vector2::new(
            self.fx * x + self.skew * y + self.cx,
            self.fy * y + self.cy,
        ))
    }

    /// Ray with `z = 1` through `pixel`.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let y = (pixel.y - self.cy) / self.fy;
        let x = (pixel.x - self.cx - self.skew * y) / self.fx;
        Vector3::new(x, y, 1.0)
    }

    /// Intrinsics for an image resampled by `(sx, sy)`.
    pub fn rescaled(&self, sx: f64, sy: f64, width: u32, height: u32) -> Result<Self> {
        PinholeModel::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            self.skew * sx,
            width,
            height,
        )
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PinholeFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(default)]
    skew: f64,
    width: u32,
    height: u32,
}

impl TryFrom<PinholeFile> for PinholeModel {
    type Error = Error;

    fn try_from(f: PinholeFile) -> Result<Self> {
        PinholeModel::new(f.fx, f.fy, f.cx, f.cy, f.skew, f.width, f.height)
    }
}

impl From<PinholeModel> for PinholeFile {
    fn from(m: PinholeModel) -> Self {
        PinholeFile {
            fx: m.fx,
            fy: m.fy,
            cx: m.cx,
            cy: m.cy,
            skew: m.skew,
            width: m.width,
            height: m.height,
        }
    }
}

/// Fisheye + perspective camera pair as stored in calibration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub fisheye: FisheyeModel,
    pub pinhole: PinholeModel,
}

impl Calibration {
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
