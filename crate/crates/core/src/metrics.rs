//! Repeatability and matching scores between two views related by a pixel map.

use nalgebra::Vector2;

use crate::descmatch::MatchSet;
use crate::homography::PointMap;
use crate::keypoints::KeypointSet;

/// Formula echoed into reports.
pub const REPEATABILITY_FORMULA: &str =
    "(|{a in A': d(a, B') <= eps}| + |{b in B': d(b, A') <= eps}|) / (|A'| + |B'|), \
     A' = points of A mapping into B's image, B' = points of B mapping into A's image, \
     distances measured after transfer to the other image";

fn inside(p: &Vector2<f64>, size: (u32, u32)) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x < size.0 as f64 && p.y < size.1 as f64
}

/// Points of `kps` whose image under `f` lands inside `size`, as
/// `(original, transferred)` pairs.
fn kept<F>(kps: &KeypointSet, size: (u32, u32), f: F) -> Vec<(Vector2<f64>, Vector2<f64>)>
where
    F: Fn(&Vector2<f64>) -> Option<Vector2<f64>>,
{
    kps.iter()
        .filter_map(|k| {
            let p = k.pos();
            let q = f(&p)?;
            inside(&q, size).then_some((p, q))
        })
        .collect()
}

fn has_neighbor(p: &Vector2<f64>, others: &[Vector2<f64>], eps: f64) -> bool {
    others.iter().any(|o| (o - p).norm() <= eps)
}

/// Symmetric repeatability of `kps_a` (in the map's source image) and `kps_b`
/// (in its target image). Zero when no point survives the transfer.
pub fn repeatability<M: PointMap + ?Sized>(kps_a: &KeypointSet, kps_b: &KeypointSet, map: &M, eps: f64) -> f64 {
    let a = kept(kps_a, map.target_size(), |p| map.forward(p).ok());
    let b = kept(kps_b, map.source_size(), |q| map.backward(q).ok());
    let total = a.len() + b.len();
    if total == 0 {
        return 0.0;
    }
    let b_here: Vec<_> = b.iter().map(|(orig, _)| *orig).collect();
    let a_here: Vec<_> = a.iter().map(|(orig, _)| *orig).collect();
    let hits_a = a.iter().filter(|(_, q)| has_neighbor(q, &b_here, eps)).count();
    let hits_b = b.iter().filter(|(_, p)| has_neighbor(p, &a_here, eps)).count();
    (hits_a + hits_b) as f64 / total as f64
}

/// Fraction of proposed matches `(a, b)` with `|forward(a) - b| <= eps`.
/// Zero when nothing is proposed.
pub fn mean_matching_score<M: PointMap + ?Sized>(
    matches: &MatchSet,
    kps_a: &KeypointSet,
    kps_b: &KeypointSet,
    map: &M,
    eps: f64,
) -> f64 {
    if matches.is_empty() {
        return 0.0;
    }
    let correct = matches
        .pairs
        .iter()
        .filter(|m| {
            map.forward(&kps_a.points[m.a].pos())
                .is_ok_and(|q| (q - kps_b.points[m.b].pos()).norm() <= eps)
        })
        .count();
    correct as f64 / matches.len() as f64
}
