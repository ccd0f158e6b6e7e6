//! Procedural images of geometric primitives with exact ground-truth
//! interest points, and photometric augmentation.
//!
//! Ground truth per shape:
//! - line segment: its two endpoints;
//! - triangle / polygon / square: its vertices (3 / n / 4);
//! - star with `k` spikes: its `2k` vertices (tips and inner notches);
//! - ellipse: its center;
//! - checkerboard with `n x m` cells: the `(n - 1)(m - 1)` inner grid corners
//!   (the board covers the whole canvas, so it has no outer border).
//!
//! Shapes are kept apart and their keypoints at least [`MIN_KEYPOINT_SPACING`]
//! pixels from each other.

use nalgebra::{Rotation2, Vector2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::homography::Interval;
use crate::keypoints::KeypointSet;
use crate::raster::ImageGray;
use crate::warp::CubeMap;

pub const MIN_KEYPOINT_SPACING: f64 = 4.0;
/// Subsamples per pixel side for anti-aliased rendering.
const SUPERSAMPLE: u32 = 4;
const MARGIN: f64 = 8.0;
const PLACEMENT_ATTEMPTS: usize = 60;
const MIN_CONTRAST: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Lines,
    Triangles,
    Polygons,
    Stars,
    Checkerboard,
    Ellipses,
    Mixed,
    Squares,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 8] = [
        PrimitiveKind::Lines,
        PrimitiveKind::Triangles,
        PrimitiveKind::Polygons,
        PrimitiveKind::Stars,
        PrimitiveKind::Checkerboard,
        PrimitiveKind::Ellipses,
        PrimitiveKind::Mixed,
        PrimitiveKind::Squares,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Lines => "lines",
            PrimitiveKind::Triangles => "triangles",
            PrimitiveKind::Polygons => "polygons",
            PrimitiveKind::Stars => "stars",
            PrimitiveKind::Checkerboard => "checkerboard",
            PrimitiveKind::Ellipses => "ellipses",
            PrimitiveKind::Mixed => "mixed",
            PrimitiveKind::Squares => "squares",
        }
    }
}

impl std::str::FromStr for PrimitiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PrimitiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown primitive kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Segment with flat ends.
    Line {
        a: Vector2<f64>,
        b: Vector2<f64>,
        thickness: f64,
    },
    /// Simple polygon (triangles, polygons and stars).
    Polygon { vertices: Vec<Vector2<f64>> },
    Ellipse {
        center: Vector2<f64>,
        rx: f64,
        ry: f64,
        angle: f64,
    },
    /// Axis-aligned board over the whole canvas; `xs`/`ys` are the cell
    /// boundaries, the first and last lying outside the canvas.
    Checkerboard { xs: Vec<f64>, ys: Vec<f64> },
}

impl Shape {
    pub fn keypoints(&self) -> Vec<Vector2<f64>> {
        match self {
            Shape::Line { a, b, .. } => vec![*a, *b],
            Shape::Polygon { vertices } => vertices.clone(),
            Shape::Ellipse { center, .. } => vec![*center],
            Shape::Checkerboard { xs, ys } => ys[1..ys.len() - 1]
                .iter()
                .flat_map(|y| xs[1..xs.len() - 1].iter().map(move |x| Vector2::new(*x, *y)))
                .collect(),
        }
    }

    /// Bounding circle; the checkerboard has none.
    fn bounding_circle(&self) -> Option<(Vector2<f64>, f64)> {
        match self {
            Shape::Line { a, b, thickness } => {
                let c = (a + b) * 0.5;
                Some((c, (b - a).norm() * 0.5 + thickness))
            }
            Shape::Polygon { vertices } => {
                let c = vertices.iter().sum::<Vector2<f64>>() / vertices.len() as f64;
                let r = vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);
                Some((c, r))
            }
            Shape::Ellipse { center, rx, ry, .. } => Some((*center, rx.max(*ry))),
            Shape::Checkerboard { .. } => None,
        }
    }

    fn bbox(&self) -> (Vector2<f64>, Vector2<f64>) {
        match self.bounding_circle() {
            Some((c, r)) => (c.add_scalar(-r), c.add_scalar(r)),
            None => (Vector2::repeat(f64::MIN), Vector2::repeat(f64::MAX)),
        }
    }

    /// Coverage test at a point; for the checkerboard returns the cell parity.
    fn covers(&self, p: &Vector2<f64>) -> Option<bool> {
        match self {
            Shape::Line { a, b, thickness } => {
                let d = b - a;
                let len = d.norm();
                let along = (p - a).dot(&d) / len;
                let across = (d.x * (p.y - a.y) - d.y * (p.x - a.x)).abs() / len;
                Some((0.0..=len).contains(&along) && across <= thickness * 0.5)
            }
            Shape::Polygon { vertices } => Some(point_in_polygon(p, vertices)),
            Shape::Ellipse {
                center,
                rx,
                ry,
                angle,
            } => {
                let q = Rotation2::new(-angle) * (p - center);
                Some((q.x / rx).powi(2) + (q.y / ry).powi(2) <= 1.0)
            }
            Shape::Checkerboard { xs, ys } => {
                let col = xs.partition_point(|x| *x <= p.x);
                let row = ys.partition_point(|y| *y <= p.y);
                Some((col + row) % 2 == 0)
            }
        }
    }
}

fn point_in_polygon(p: &Vector2<f64>, vertices: &[Vector2<f64>]) -> bool {
    let mut inside = false;
    let n = vertices.len();
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + n - 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// A background and shapes painted over it in order. A checkerboard paints
/// `intensity` on even cells and `alt_intensity` on odd ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveScene {
    pub kind: PrimitiveKind,
    pub background: f64,
    pub shapes: Vec<PaintedShape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaintedShape {
    pub shape: Shape,
    pub intensity: f64,
    pub alt_intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageGray,
    pub keypoints: KeypointSet,
}

impl PrimitiveScene {
    pub fn new(kind: PrimitiveKind, background: f64) -> Self {
        PrimitiveScene {
            kind,
            background,
            shapes: Vec::new(),
        }
    }

    pub fn with(mut self, shape: Shape, intensity: f64) -> Self {
        self.shapes.push(PaintedShape {
            shape,
            intensity,
            alt_intensity: self.background,
        });
        self
    }

    pub fn keypoints(&self) -> KeypointSet {
        KeypointSet::from_positions(
            self.shapes
                .iter()
                .flat_map(|s| s.shape.keypoints())
                .map(|p| (p.x, p.y)),
        )
    }

    /// Renders with 4x4 supersampling per pixel.
    pub fn render(&self, width: u32, height: u32) -> LabeledImage {
        let boxes: Vec<_> = self.shapes.iter().map(|s| s.shape.bbox()).collect();
        let n = SUPERSAMPLE;
        let inv = 1.0 / (n * n) as f64;
        let image = ImageGray::from_fn(width, height, |x, y| {
            let (px, py) = (x as f64, y as f64);
            let candidates: Vec<usize> = (0..self.shapes.len())
                .filter(|&i| {
                    let (lo, hi) = boxes[i];
                    px + 1.0 >= lo.x && px <= hi.x && py + 1.0 >= lo.y && py <= hi.y
                })
                .collect();
            if candidates.is_empty() {
                return self.background;
            }
            let mut acc = 0.0;
            for sy in 0..n {
                for sx in 0..n {
                    let p = Vector2::new(
                        px + (sx as f64 + 0.5) / n as f64,
                        py + (sy as f64 + 0.5) / n as f64,
                    );
                    let mut v = self.background;
                    for &i in &candidates {
                        let s = &self.shapes[i];
                        match (&s.shape, s.shape.covers(&p)) {
                            (Shape::Checkerboard { .. }, Some(even)) => {
                                v = if even { s.intensity } else { s.alt_intensity };
                            }
                            (_, Some(true)) => v = s.intensity,
                            _ => {}
                        }
                    }
                    acc += v;
                }
            }
            acc * inv
        });
        LabeledImage {
            image,
            keypoints: self.keypoints(),
        }
    }
}

fn contrasting<R: Rng + ?Sized>(rng: &mut R, background: f64) -> f64 {
    loop {
        let v = rng.gen_range(0.0..=1.0);
        if (v - background).abs() >= MIN_CONTRAST {
            return v;
        }
    }
}

fn turn_angle(prev: &Vector2<f64>, cur: &Vector2<f64>, next: &Vector2<f64>) -> f64 {
    let a = prev - cur;
    let b = next - cur;
    (a.x * b.y - a.y * b.x).atan2(a.dot(&b)).abs()
}

/// Every vertex is a clear corner and no two vertices are close.
fn salient_polygon(vertices: &[Vector2<f64>]) -> bool {
    let n = vertices.len();
    (0..n).all(|i| {
        let prev = vertices[(i + n - 1) % n];
        let next = vertices[(i + 1) % n];
        let angle = turn_angle(&prev, &vertices[i], &next);
        (vertices[i] - next).norm() >= 2.0 * MIN_KEYPOINT_SPACING
            && angle > 25f64.to_radians()
            && angle < 155f64.to_radians()
    })
}

struct Canvas {
    w: f64,
    h: f64,
}

impl Canvas {
    fn inside(&self, p: &Vector2<f64>) -> bool {
        p.x >= MARGIN && p.y >= MARGIN && p.x <= self.w - MARGIN && p.y <= self.h - MARGIN
    }

    fn point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector2<f64> {
        Vector2::new(
            rng.gen_range(MARGIN..self.w - MARGIN),
            rng.gen_range(MARGIN..self.h - MARGIN),
        )
    }

    fn max_radius(&self) -> f64 {
        (self.w.min(self.h) * 0.25).max(12.0)
    }
}

fn random_line<R: Rng + ?Sized>(rng: &mut R, c: &Canvas) -> Option<Shape> {
    let a = c.point(rng);
    let len = rng.gen_range(20.0..(2.0 * c.max_radius()).max(21.0));
    let dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let b = a + Vector2::new(dir.cos(), dir.sin()) * len;
    c.inside(&b).then(|| Shape::Line {
        a,
        b,
        thickness: rng.gen_range(1.5..3.0),
    })
}

fn random_triangle<R: Rng + ?Sized>(rng: &mut R, c: &Canvas) -> Option<Shape> {
    let center = c.point(rng);
    let r = rng.gen_range(12.0..c.max_radius());
    let vertices: Vec<_> = (0..3)
        .map(|_| {
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            center + Vector2::new(t.cos(), t.sin()) * r * rng.gen_range(0.5..1.0)
        })
        .collect();
    let min_side = (0..3).map(|i| (vertices[i] - vertices[(i + 1) % 3]).norm()).fold(f64::MAX, f64::min);
    (vertices.iter().all(|v| c.inside(v)) && salient_polygon(&vertices) && min_side >= 12.0)
        .then_some(Shape::Polygon { vertices })
}

fn random_polygon<R: Rng + ?Sized>(rng: &mut R, c: &Canvas) -> Option<Shape> {
    let center = c.point(rng);
    let r = rng.gen_range(15.0..c.max_radius().max(16.0));
    let n = rng.gen_range(4..=7);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let vertices: Vec<_> = angles
        .iter()
        .map(|t| center + Vector2::new(t.cos(), t.sin()) * r * rng.gen_range(0.6..1.0))
        .collect();
    (vertices.iter().all(|v| c.inside(v)) && salient_polygon(&vertices))
        .then_some(Shape::Polygon { vertices })
}

fn random_square<R: Rng + ?Sized>(rng: &mut R, c: &Canvas) -> Option<Shape> {
    let center = c.point(rng);
    let r = rng.gen_range(12.0..c.max_radius().max(13.0));
    let phase = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
    let vertices: Vec<_> = (0..4)
        .map(|i| {
            let t = phase + std::f64::consts::FRAC_PI_2 * i as f64;
            center + Vector2::new(t.cos(), t.sin()) * r
        })
        .collect();
    vertices.iter().all(|v| c.inside(v)).then_some(Shape::Polygon { vertices })
}

fn random_star<R: Rng + ?Sized>(rng: &mut R, c: &Canvas) -> Option<Shape> {
    let center = c.point(rng);
    let outer = rng.gen_range(18.0..c.max_radius().max(19.0));
    let inner = outer * rng.gen_range(0.35..0.55);
    let k = rng.gen_range(3..=6);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let vertices: Vec<_> = (0..2 * k)
        .map(|i| {
            let t = phase + std::f64::consts::PI * i as f64 / k as f64;
            let r = if i % 2 == 0 { outer } else { inner };
            center + Vector2::new(t.cos(), t.sin()) * r
        })
        .collect();
    (vertices.iter().all(|v| c.inside(v)) && salient_polygon(&vertices))
        .then_some(Shape::Polygon { vertices })
}

fn random_ellipse<R: Rng + ?Sized>(rng: &mut R, c: &Canvas) -> Option<Shape> {
    let center = c.point(rng);
    let rx = rng.gen_range(6.0..c.max_radius() * 0.7);
    let ry = rng.gen_range(6.0..c.max_radius() * 0.7);
    let r = rx.max(ry);
    let fits = center.x - r >= MARGIN && center.y - r >= MARGIN && center.x + r <= c.w - MARGIN && center.y + r <= c.h - MARGIN;
    fits.then(|| Shape::Ellipse {
        center,
        rx,
        ry,
        angle: rng.gen_range(0.0..std::f64::consts::PI),
    })
}

fn random_boundaries<R: Rng + ?Sized>(rng: &mut R, extent: f64, cells: usize) -> Vec<f64> {
    // interior boundaries at jittered even spacing, outer ones past the canvas
    let step = extent / cells as f64;
    let mut b = vec![-1.0];
    for i in 1..cells {
        b.push(step * i as f64 + rng.gen_range(-0.2..0.2) * step);
    }
    b.push(extent + 1.0);
    b
}

fn random_scene<R: Rng + ?Sized>(rng: &mut R, width: u32, height: u32, kind: PrimitiveKind) -> PrimitiveScene {
    let canvas = Canvas {
        w: width as f64,
        h: height as f64,
    };
    let background = rng.gen_range(0.0..=1.0);
    let mut scene = PrimitiveScene::new(kind, background);
    if kind == PrimitiveKind::Checkerboard {
        let max_cols = ((canvas.w / 24.0) as usize).clamp(2, 8);
        let max_rows = ((canvas.h / 24.0) as usize).clamp(2, 8);
        let cols = rng.gen_range(2..=max_cols);
        let rows = rng.gen_range(2..=max_rows);
        let shape = Shape::Checkerboard {
            xs: random_boundaries(rng, canvas.w, cols),
            ys: random_boundaries(rng, canvas.h, rows),
        };
        let even = rng.gen_range(0.0..=1.0);
        let odd = contrasting(rng, even);
        scene.shapes.push(PaintedShape {
            shape,
            intensity: even,
            alt_intensity: odd,
        });
        return scene;
    }

    let count = match kind {
        PrimitiveKind::Lines => rng.gen_range(1..=6),
        PrimitiveKind::Triangles => rng.gen_range(1..=4),
        PrimitiveKind::Polygons => rng.gen_range(1..=3),
        PrimitiveKind::Stars => rng.gen_range(1..=2),
        PrimitiveKind::Ellipses => rng.gen_range(1..=5),
        PrimitiveKind::Squares => rng.gen_range(1..=4),
        _ => rng.gen_range(3..=6),
    };
    let mixed = [
        PrimitiveKind::Lines,
        PrimitiveKind::Triangles,
        PrimitiveKind::Polygons,
        PrimitiveKind::Stars,
        PrimitiveKind::Ellipses,
    ];
    let mut circles: Vec<(Vector2<f64>, f64)> = Vec::new();
    for _ in 0..count {
        let shape_kind = if kind == PrimitiveKind::Mixed {
            *mixed.choose(rng).unwrap()
        } else {
            kind
        };
        for _ in 0..PLACEMENT_ATTEMPTS {
            let shape = match shape_kind {
                PrimitiveKind::Lines => random_line(rng, &canvas),
                PrimitiveKind::Triangles => random_triangle(rng, &canvas),
                PrimitiveKind::Polygons => random_polygon(rng, &canvas),
                PrimitiveKind::Stars => random_star(rng, &canvas),
                PrimitiveKind::Squares => random_square(rng, &canvas),
                _ => random_ellipse(rng, &canvas),
            };
            let Some(shape) = shape else { continue };
            let (c, r) = shape.bounding_circle().unwrap();
            let clear = circles
                .iter()
                .all(|(c2, r2)| (c - c2).norm() > r + r2 + 2.0 * MIN_KEYPOINT_SPACING);
            if clear {
                circles.push((c, r));
                let intensity = contrasting(rng, background);
                scene = scene.with(shape, intensity);
                break;
            }
        }
    }
    scene
}

/// Random primitive image of the requested kind with its ground-truth points.
///
/// # Panics
/// If either side is smaller than 64 pixels.
pub fn gen_primitive_image<R: Rng + ?Sized>(rng: &mut R, size: (u32, u32), kind: PrimitiveKind) -> LabeledImage {
    assert!(size.0 >= 64 && size.1 >= 64, "canvas must be at least 64x64");
    random_scene(rng, size.0, size.1, kind).render(size.0, size.1)
}

/// Seed of the `index`-th image of a stream.
pub fn derived_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

/// Endless deterministic stream of labeled images; image `i` is generated from
/// seed `base ^ i` and cycles through `kinds`.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    base_seed: u64,
    index: u64,
    size: (u32, u32),
    kinds: Vec<PrimitiveKind>,
}

impl SyntheticStream {
    pub fn new(base_seed: u64, size: (u32, u32), kinds: Vec<PrimitiveKind>) -> Self {
        assert!(!kinds.is_empty(), "at least one primitive kind is required");
        SyntheticStream {
            base_seed,
            index: 0,
            size,
            kinds,
        }
    }
}

impl Iterator for SyntheticStream {
    type Item = LabeledImage;

    fn next(&mut self) -> Option<LabeledImage> {
        let kind = self.kinds[(self.index % self.kinds.len() as u64) as usize];
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(self.base_seed, self.index));
        self.index += 1;
        Some(gen_primitive_image(&mut rng, self.size, kind))
    }
}

/// Cube map whose faces are independent primitive images.
pub fn gen_cubemap<R: Rng + ?Sized>(rng: &mut R, face_size: u32, kind: PrimitiveKind) -> CubeMap {
    gen_cubemap_labeled(rng, face_size, kind).0
}

/// [`gen_cubemap`] together with each face's ground truth, in face order.
pub fn gen_cubemap_labeled<R: Rng + ?Sized>(
    rng: &mut R,
    face_size: u32,
    kind: PrimitiveKind,
) -> (CubeMap, [KeypointSet; 6]) {
    let labeled: [LabeledImage; 6] = std::array::from_fn(|_| gen_primitive_image(rng, (face_size, face_size), kind));
    let keypoints = std::array::from_fn(|i| labeled[i].keypoints.clone());
    let faces = labeled.map(|l| l.image);
    (CubeMap::new(faces).expect("faces share one square size"), keypoints)
}

/// Ranges for random photometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub blur_sigma: Interval,
    pub brightness: Interval,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            blur_sigma: Interval::new(0.0, 1.5),
            brightness: Interval::new(-0.2, 0.2),
        }
    }
}

/// Random Gaussian blur followed by a random brightness shift, clamped to
/// `[0, 1]`. Geometry is untouched, so keypoint labels stay valid.
pub fn augment<R: Rng + ?Sized>(img: &ImageGray, rng: &mut R, params: &AugmentParams) -> ImageGray {
    let draw = |rng: &mut R, i: Interval| if i.hi > i.lo { rng.gen_range(i.lo..=i.hi) } else { i.lo };
    let sigma = draw(rng, params.blur_sigma).max(0.0);
    let delta = draw(rng, params.brightness);
    let blurred = gaussian_blur(img, sigma);
    ImageGray::from_fn(img.width(), img.height(), |x, y| blurred.get(x, y) + delta)
}

/// Independent zero-mean Gaussian noise of deviation `sigma` per pixel,
/// clamped to `[0, 1]`.
pub fn add_gaussian_noise<R: Rng + ?Sized>(img: &ImageGray, sigma: f64, rng: &mut R) -> ImageGray {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    ImageGray::from_fn(img.width(), img.height(), |x, y| img.get(x, y) + normal.sample(rng))
}

/// Separable Gaussian blur with replicated borders; `sigma = 0` is a no-op.
pub fn gaussian_blur(img: &ImageGray, sigma: f64) -> ImageGray {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = (img.width() as i64, img.height() as i64);
    let pass = |src: &ImageGray, horizontal: bool| {
        ImageGray::from_fn(w as u32, h as u32, |x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, weight)| {
                    let off = k as i64 - radius;
                    let (sx, sy) = if horizontal {
                        ((x as i64 + off).clamp(0, w - 1), y as i64)
                    } else {
                        (x as i64, (y as i64 + off).clamp(0, h - 1))
                    };
                    weight * src.get(sx as u32, sy as u32)
                })
                .sum()
        })
    };
    pass(&pass(img, true), false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_triangle_has_three_vertex_keypoints() {
        let tri = vec![
            Vector2::new(20.0, 20.0),
            Vector2::new(60.0, 25.0),
            Vector2::new(30.0, 55.0),
        ];
        let scene = PrimitiveScene::new(PrimitiveKind::Triangles, 0.0).with(Shape::Polygon { vertices: tri.clone() }, 1.0);
        let out = scene.render(80, 80);
        assert_eq!(out.keypoints.len(), 3);
        for (k, v) in out.keypoints.iter().zip(&tri) {
            assert_eq!((k.x, k.y), (v.x, v.y));
        }
        // interior is painted, outside is background
        assert_eq!(out.image.get(35, 33), 1.0);
        assert_eq!(out.image.get(70, 70), 0.0);
    }

    #[test]
    fn single_ellipse_has_center_keypoint() {
        let scene = PrimitiveScene::new(PrimitiveKind::Ellipses, 0.2).with(
            Shape::Ellipse {
                center: Vector2::new(40.0, 30.0),
                rx: 10.0,
                ry: 6.0,
                angle: 0.3,
            },
            0.9,
        );
        let out = scene.render(80, 64);
        assert_eq!(out.keypoints.points.len(), 1);
        assert_eq!((out.keypoints.points[0].x, out.keypoints.points[0].y), (40.0, 30.0));
        assert!((out.image.get(40, 30) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in PrimitiveKind::ALL {
            let a = gen_primitive_image(&mut rng(5), (96, 80), kind);
            let b = gen_primitive_image(&mut rng(5), (96, 80), kind);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn keypoint_counts_match_construction() {
        for seed in 0..30 {
            for kind in PrimitiveKind::ALL {
                let scene = random_scene(&mut rng(seed), 160, 128, kind);
                let expected: usize = scene
                    .shapes
                    .iter()
                    .map(|s| match &s.shape {
                        Shape::Line { .. } => 2,
                        Shape::Polygon { vertices } => vertices.len(),
                        Shape::Ellipse { .. } => 1,
                        Shape::Checkerboard { xs, ys } => (xs.len() - 2) * (ys.len() - 2),
                    })
                    .sum();
                assert_eq!(scene.keypoints().len(), expected);
                for s in &scene.shapes {
                    if let Shape::Polygon { vertices } = &s.shape {
                        match kind {
                            PrimitiveKind::Triangles => assert_eq!(vertices.len(), 3),
                            PrimitiveKind::Stars => assert_eq!(vertices.len() % 2, 0),
                            PrimitiveKind::Squares => {
                                assert_eq!(vertices.len(), 4);
                                let d = |i: usize| (vertices[(i + 1) % 4] - vertices[i]).norm();
                                let diag = (vertices[2] - vertices[0]).norm();
                                assert!((0..4).all(|i| (d(i) - d(0)).abs() < 1e-9));
                                assert!((diag - d(0) * std::f64::consts::SQRT_2).abs() < 1e-9);
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn keypoints_inside_and_separated() {
        for seed in 0..40 {
            for kind in PrimitiveKind::ALL {
                let out = gen_primitive_image(&mut rng(seed), (128, 96), kind);
                let pts = &out.keypoints.points;
                assert!(!pts.is_empty() || kind != PrimitiveKind::Checkerboard);
                for (i, p) in pts.iter().enumerate() {
                    assert!(p.x > 0.0 && p.y > 0.0 && p.x < 128.0 && p.y < 96.0);
                    for q in &pts[i + 1..] {
                        assert!(p.dist(q) >= MIN_KEYPOINT_SPACING, "{kind:?} seed {seed}");
                    }
                }
            }
        }
    }

    #[test]
    fn stream_uses_derived_seeds() {
        let mut stream = SyntheticStream::new(42, (64, 64), vec![PrimitiveKind::Polygons]);
        let _ = stream.next();
        let second = stream.next().unwrap();
        let direct = gen_primitive_image(&mut rng(42 ^ 1), (64, 64), PrimitiveKind::Polygons);
        assert_eq!(second, direct);
    }

    #[test]
    fn neutral_augmentation_is_identity() {
        let img = gen_primitive_image(&mut rng(1), (64, 64), PrimitiveKind::Stars).image;
        let params = AugmentParams {
            blur_sigma: Interval::point(0.0),
            brightness: Interval::point(0.0),
        };
        assert_eq!(augment(&img, &mut rng(2), &params), img);
    }

    #[test]
    fn brightness_shift_on_constant() {
        let img = ImageGray::filled(32, 32, 0.5);
        let params = AugmentParams {
            blur_sigma: Interval::point(0.0),
            brightness: Interval::point(0.2),
        };
        let out = augment(&img, &mut rng(0), &params);
        assert!(out.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
        let params = AugmentParams {
            blur_sigma: Interval::point(0.0),
            brightness: Interval::point(0.8),
        };
        assert!(augment(&img, &mut rng(0), &params).data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn blur_preserves_interior_mean() {
        let img = gen_primitive_image(&mut rng(9), (128, 128), PrimitiveKind::Checkerboard).image;
        let blurred = gaussian_blur(&img, 2.0);
        // interior window far (> 3 sigma) from the border
        let mean = |im: &ImageGray| {
            let mut s = 0.0;
            for y in 8..120 {
                for x in 8..120 {
                    s += im.get(x, y);
                }
            }
            s / (112.0 * 112.0)
        };
        assert!((mean(&img) - mean(&blurred)).abs() < 1e-3);
    }

    #[test]
    fn gaussian_noise_statistics() {
        let img = ImageGray::filled(200, 200, 0.5);
        assert_eq!(add_gaussian_noise(&img, 0.0, &mut rng(3)), img);
        let noisy = add_gaussian_noise(&img, 0.05, &mut rng(3));
        let n = noisy.data().len() as f64;
        let mean = noisy.data().iter().sum::<f64>() / n;
        let var = noisy.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 40k samples: standard errors are 2.5e-4 on the mean, ~0.35% on sigma
        assert!((mean - 0.5).abs() < 1.5e-3);
        assert!((var.sqrt() / 0.05 - 1.0).abs() < 0.02);
        assert_eq!(noisy, add_gaussian_noise(&img, 0.05, &mut rng(3)));
    }
}
