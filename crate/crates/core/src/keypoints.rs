//! Keypoint sets and their JSON file form.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f64) -> Self {
        Keypoint { x, y, score }
    }

    pub fn pos(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn dist(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Detections or ground-truth points, in continuous pixel coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KeypointFile", into = "KeypointFile")]
pub struct KeypointSet {
    pub points: Vec<Keypoint>,
}

/// `{"points": [[x, y], ...], "scores": [...]}`; scores default to 1.
#[derive(Serialize, Deserialize)]
struct KeypointFile {
    points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
}

impl TryFrom<KeypointFile> for KeypointSet {
    type Error = String;

    fn try_from(f: KeypointFile) -> std::result::Result<Self, String> {
        let scores = f.scores.unwrap_or_else(|| vec![1.0; f.points.len()]);
        if scores.len() != f.points.len() {
            return Err(format!(
                "{} scores for {} points",
                scores.len(),
                f.points.len()
            ));
        }
        Ok(KeypointSet {
            points: f
                .points
                .iter()
                .zip(scores)
                .map(|(p, s)| Keypoint::new(p[0], p[1], s))
                .collect(),
        })
    }
}

impl From<KeypointSet> for KeypointFile {
    fn from(k: KeypointSet) -> Self {
        KeypointFile {
            points: k.points.iter().map(|p| [p.x, p.y]).collect(),
            scores: Some(k.points.iter().map(|p| p.score).collect()),
        }
    }
}

impl KeypointSet {
    pub fn new(points: Vec<Keypoint>) -> Self {
        KeypointSet { points }
    }

    /// Points with unit score.
    pub fn from_positions(positions: impl IntoIterator<Item = (f64, f64)>) -> Self {
        KeypointSet {
            points: positions
                .into_iter()
                .map(|(x, y)| Keypoint::new(x, y, 1.0))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Keypoint> {
        self.points.iter()
    }

    /// Keeps the `k` highest-scoring points (stable for equal scores).
    pub fn top_k(&self, k: usize) -> KeypointSet {
        let mut points = self.points.clone();
        points.sort_by(|a, b| b.score.total_cmp(&a.score));
        points.truncate(k);
        KeypointSet { points }
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> KeypointSet {
        KeypointSet {
            points: self
                .points
                .iter()
                .map(|p| Keypoint::new(p.x * sx, p.y * sy, p.score))
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Writes positions only, as `{"points": [[x, y], ...]}`.
    pub fn save_positions(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = KeypointFile {
            points: self.points.iter().map(|p| [p.x, p.y]).collect(),
            scores: None,
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl<'a> IntoIterator for &'a KeypointSet {
    type Item = &'a Keypoint;
    type IntoIter = std::slice::Iter<'a, Keypoint>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}
