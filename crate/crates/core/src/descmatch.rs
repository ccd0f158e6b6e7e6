//! Per-cell descriptor grids, their interpolation at keypoints, a patch
//! descriptor and nearest-neighbor matching.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::{cell_dims, CELL};
use crate::error::{Error, Result};
use crate::keypoints::KeypointSet;
use crate::raster::ImageGray;
use crate::tensorfile;

pub const DESCRIPTOR_DIM: usize = 256;
const PATCH: usize = 16;
const NORM_TOL: f64 = 1e-6;

/// Unit vector returned for a descriptor with no direction.
pub fn canonical_descriptor() -> Vec<f64> {
    vec![1.0 / (DESCRIPTOR_DIM as f64).sqrt(); DESCRIPTOR_DIM]
}

/// Scales `v` to unit length; a zero vector becomes the all-equal unit vector.
pub fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-12) || !norm.is_finite() {
        let n = v.len();
        return vec![1.0 / (n as f64).sqrt(); n];
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One unit vector per cell, row-major by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorGrid {
    h_c: usize,
    w_c: usize,
    dim: usize,
    vectors: Vec<f64>,
}

impl DescriptorGrid {
    pub fn new(h_c: usize, w_c: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != h_c * w_c * dim || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {h_c}x{w_c}x{dim} descriptor grid",
                vectors.len()
            )));
        }
        for (i, v) in vectors.chunks(dim).enumerate() {
            let norm = dot(v, v).sqrt();
            if !((norm - 1.0).abs() <= NORM_TOL) {
                return Err(Error::InvalidModel(format!("descriptor {i} has norm {norm}")));
            }
        }
        Ok(DescriptorGrid { h_c, w_c, dim, vectors })
    }

    /// Builds a grid from per-cell vectors, normalizing each.
    pub fn from_cells(h_c: usize, w_c: usize, cells: Vec<Vec<f64>>) -> Result<Self> {
        let dim = cells.first().map_or(DESCRIPTOR_DIM, Vec::len);
        if cells.len() != h_c * w_c || cells.iter().any(|c| c.len() != dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} cells for a {h_c}x{w_c} grid",
                cells.len()
            )));
        }
        let vectors = cells
            .into_iter()
            .flat_map(normalized)
            .collect();
        DescriptorGrid::new(h_c, w_c, dim, vectors)
    }

    pub fn h_c(&self) -> usize {
        self.h_c
    }

    pub fn w_c(&self) -> usize {
        self.w_c
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.w_c + col) * self.dim;
        &self.vectors[i..i + self.dim]
    }

    /// Cell centroid in pixel coordinates.
    pub fn centroid(row: usize, col: usize) -> (f64, f64) {
        let half = CELL as f64 / 2.0;
        (col as f64 * CELL as f64 + half, row as f64 * CELL as f64 + half)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, data) = tensorfile::read(path.as_ref())?;
        let cells = data.chunks(header.dim.max(1)).map(|c| c.to_vec()).collect();
        DescriptorGrid::from_cells(header.h_c, header.w_c, cells)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        tensorfile::write(path.as_ref(), self.h_c, self.w_c, self.dim, &self.vectors)
    }
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let (t2, t3) = (t * t, t * t * t);
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Catmull-Rom interpolation of the grid over the lattice of cell centroids,
/// with border cells repeated, then renormalized.
pub fn interpolate_descriptors(grid: &DescriptorGrid, points: &KeypointSet) -> Vec<Vec<f64>> {
    let half = CELL as f64 / 2.0;
    points
        .iter()
        .map(|k| {
            let gx = (k.x - half) / CELL as f64;
            let gy = (k.y - half) / CELL as f64;
            let (x0, y0) = (gx.floor(), gy.floor());
            let (wx, wy) = (catmull_rom(gx - x0), catmull_rom(gy - y0));
            let mut v = vec![0.0; grid.dim];
            for (j, wyj) in wy.iter().enumerate() {
                if *wyj == 0.0 {
                    continue;
                }
                let row = (y0 as i64 - 1 + j as i64).clamp(0, grid.h_c as i64 - 1) as usize;
                for (i, wxi) in wx.iter().enumerate() {
                    let w = wxi * wyj;
                    if w == 0.0 {
                        continue;
                    }
                    let col = (x0 as i64 - 1 + i as i64).clamp(0, grid.w_c as i64 - 1) as usize;
                    for (acc, c) in v.iter_mut().zip(grid.cell(row, col)) {
                        *acc += w * c;
                    }
                }
            }
            normalized(v)
        })
        .collect()
}

/// Anything producing a descriptor grid from an image.
pub trait GridDescriptor {
    fn describe(&self, img: &ImageGray) -> Result<DescriptorGrid>;
}

/// Mean-subtracted intensity patch descriptor.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineDescriptor;

impl GridDescriptor for BaselineDescriptor {
    fn describe(&self, img: &ImageGray) -> Result<DescriptorGrid> {
        baseline_describe(img)
    }
}

/// Per cell: the 16x16 bilinear patch at 1 px spacing centered on the cell
/// centroid (borders clamped), mean-subtracted and unit-normalized.
pub fn baseline_describe(img: &ImageGray) -> Result<DescriptorGrid> {
    let (h_c, w_c) = cell_dims(img.width(), img.height())?;
    let offset = (PATCH as f64 - 1.0) / 2.0;
    let mut vectors = Vec::with_capacity(h_c * w_c * DESCRIPTOR_DIM);
    for row in 0..h_c {
        for col in 0..w_c {
            let (cx, cy) = DescriptorGrid::centroid(row, col);
            let mut patch = Vec::with_capacity(DESCRIPTOR_DIM);
            for j in 0..PATCH {
                for i in 0..PATCH {
                    patch.push(img.sample_clamped(cx + i as f64 - offset, cy + j as f64 - offset));
                }
            }
            let mean = patch.iter().sum::<f64>() / patch.len() as f64;
            patch.iter_mut().for_each(|v| *v -= mean);
            // Below this the patch is flat up to rounding.
            let spread = dot(&patch, &patch).sqrt();
            if spread > 1e-9 {
                vectors.extend(patch.iter().map(|v| v / spread));
            } else {
                vectors.extend(canonical_descriptor());
            }
        }
    }
    DescriptorGrid::new(h_c, w_c, DESCRIPTOR_DIM, vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Keep only pairs that are each other's nearest neighbor.
    pub mutual: bool,
    /// Keep a match only if its distance is below `ratio` times the distance
    /// to the second-nearest candidate.
    pub ratio: Option<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            mutual: true,
            ratio: None,
        }
    }
}

fn argmax(sims: impl Iterator<Item = f64>) -> (usize, f64, f64) {
    let (mut best, mut best_sim, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (j, s) in sims.enumerate() {
        if s > best_sim {
            second = best_sim;
            best = j;
            best_sim = s;
        } else if s > second {
            second = s;
        }
    }
    (best, best_sim, second)
}

/// Nearest neighbor in `b` (largest dot product) for every descriptor of `a`.
/// Ties go to the lower index.
pub fn match_nn(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &MatchConfig) -> Result<MatchSet> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sim: Vec<f64> = a.iter().flat_map(|da| b.iter().map(move |db| dot(da, db))).collect();
    let nb = b.len();
    let back: Vec<usize> = if cfg.mutual {
        (0..nb)
            .map(|j| argmax((0..a.len()).map(|i| sim[i * nb + j])).0)
            .collect()
    } else {
        Vec::new()
    };
    let mut pairs = Vec::new();
    for i in 0..a.len() {
        let (j, s, second) = argmax(sim[i * nb..(i + 1) * nb].iter().copied());
        if cfg.mutual && back[j] != i {
            continue;
        }
        if let Some(ratio) = cfg.ratio {
            let d1 = (2.0 - 2.0 * s).max(0.0).sqrt();
            let d2 = (2.0 - 2.0 * second).max(0.0).sqrt();
            if nb > 1 && !(d1 < ratio * d2) {
                continue;
            }
        }
        pairs.push(Match {
            a: i,
            b: j,
            similarity: s.clamp(-1.0, 1.0),
        });
    }
    Ok(MatchSet { pairs })
}
