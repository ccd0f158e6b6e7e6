//! Detection and descriptor losses as pure functions of logits, labels,
//! descriptor grids and the pixel map between two views.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::descmatch::{dot, DescriptorGrid};
use crate::detect::{LabelGrid, CELL, CHANNELS};
use crate::error::{Error, Result};
use crate::homography::PointMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the descriptor term.
    pub gamma: f64,
    /// Softmax temperature of the descriptor loss.
    pub tau: f64,
    /// Perspective views per fisheye image.
    pub k_views: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.001,
            tau: 0.15,
            k_views: 5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.gamma >= 0.0) || self.k_views == 0 {
            return Err(Error::Config(format!(
                "need tau > 0, gamma >= 0, k_views >= 1 (got {}, {}, {})",
                self.tau, self.gamma, self.k_views
            )));
        }
        Ok(())
    }
}

/// Pre-softmax 65-way scores per cell, row-major by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLogits {
    pub h_c: usize,
    pub w_c: usize,
    pub logits: Vec<f64>,
}

impl CellLogits {
    pub fn new(h_c: usize, w_c: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != h_c * w_c * CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "{} logits for a {h_c}x{w_c}x{CHANNELS} grid",
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite logit".into()));
        }
        Ok(CellLogits { h_c, w_c, logits })
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.logits[i * CHANNELS..(i + 1) * CHANNELS]
    }
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy over cells between the softmax of the logits and the
/// one-hot labels.
pub fn detection_loss(logits: &CellLogits, labels: &LabelGrid) -> Result<f64> {
    if (logits.h_c, logits.w_c) != (labels.h_c, labels.w_c) || labels.labels.len() != logits.h_c * logits.w_c {
        return Err(Error::ShapeMismatch(format!(
            "logits {}x{} vs labels {}x{}",
            logits.h_c, logits.w_c, labels.h_c, labels.w_c
        )));
    }
    let n = labels.labels.len();
    if n == 0 {
        return Err(Error::ShapeMismatch("empty cell grid".into()));
    }
    let total: f64 = labels
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let cell = logits.cell(i);
            (log_sum_exp(cell.iter().copied()) - cell[l as usize]).max(0.0)
        })
        .sum();
    Ok(total / n as f64)
}

/// Fisheye term plus the mean of the perspective-view terms.
pub fn detection_loss_total(fisheye: (&CellLogits, &LabelGrid), views: &[(CellLogits, LabelGrid)]) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::EmptyViews);
    }
    let base = detection_loss(fisheye.0, fisheye.1)?;
    let mut sum = 0.0;
    for (l, y) in views {
        sum += detection_loss(l, y)?;
    }
    Ok(base + sum / views.len() as f64)
}

/// Cell of a `h_c x w_c` grid containing pixel coordinate `q`; a point on a
/// cell boundary belongs to the higher-index cell.
pub fn containing_cell(q: &Vector2<f64>, h_c: usize, w_c: usize) -> Option<(usize, usize)> {
    let (cx, cy) = ((q.x / CELL as f64).floor(), (q.y / CELL as f64).floor());
    if cx < 0.0 || cy < 0.0 || cx >= w_c as f64 || cy >= h_c as f64 {
        return None;
    }
    Some((cy as usize, cx as usize))
}

/// Contrastive loss between the fisheye cells whose centroids map inside the
/// perspective image and all perspective cells; the positive of a fisheye
/// cell is the perspective cell containing its mapped centroid.
pub fn descriptor_pair_loss<M: PointMap + ?Sized>(
    d_fish: &DescriptorGrid,
    d_persp: &DescriptorGrid,
    map: &M,
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    check_grid(d_fish, map.source_size())?;
    check_grid(d_persp, map.target_size())?;
    if d_fish.dim() != d_persp.dim() {
        return Err(Error::ShapeMismatch(format!(
            "descriptor dims {} vs {}",
            d_fish.dim(),
            d_persp.dim()
        )));
    }
    let (ph, pw) = (d_persp.h_c(), d_persp.w_c());
    let mut total = 0.0;
    let mut count = 0usize;
    let mut sims = vec![0.0; ph * pw];
    for r in 0..d_fish.h_c() {
        for c in 0..d_fish.w_c() {
            let (x, y) = DescriptorGrid::centroid(r, c);
            let Ok(q) = map.forward(&Vector2::new(x, y)) else { continue };
            let Some((pr, pc)) = containing_cell(&q, ph, pw) else { continue };
            let d = d_fish.cell(r, c);
            for (i, s) in sims.iter_mut().enumerate() {
                *s = dot(d, d_persp.cell(i / pw, i % pw)) / tau;
            }
            total += log_sum_exp(sims.iter().copied()) - sims[pr * pw + pc];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(total / count as f64)
}

fn check_grid(grid: &DescriptorGrid, size: (u32, u32)) -> Result<()> {
    let expected = ((size.1 / CELL) as usize, (size.0 / CELL) as usize);
    if (grid.h_c(), grid.w_c()) != expected {
        return Err(Error::ShapeMismatch(format!(
            "descriptor grid {}x{} does not cover a {}x{} image",
            grid.h_c(),
            grid.w_c(),
            size.0,
            size.1
        )));
    }
    Ok(())
}

/// Mean of the pair losses over the perspective views.
pub fn descriptor_loss_total<M: PointMap>(d_fish: &DescriptorGrid, views: &[(DescriptorGrid, M)], tau: f64) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::EmptyViews);
    }
    let mut sum = 0.0;
    for (d, map) in views {
        sum += descriptor_pair_loss(d_fish, d, map, tau)?;
    }
    Ok(sum / views.len() as f64)
}

/// `det + gamma * des`.
pub fn total_loss(det: f64, des: f64, cfg: &LossConfig) -> f64 {
    det + cfg.gamma * des
}

/// Independent oracles for the losses, shared by the test suite and the
/// command line self-check.
pub mod check {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::detect::BIN;
    use crate::homography::{Homography, HomographyParams, PlanarMap, SamplingRanges};

    #[derive(Debug, Clone, PartialEq)]
    pub struct CheckResult {
        pub name: String,
        pub passed: bool,
        pub detail: String,
    }

    impl CheckResult {
        fn new(name: &str, err: f64, tol: f64) -> Self {
            CheckResult {
                name: name.to_string(),
                passed: err <= tol,
                detail: format!("max error {err:.3e} (tolerance {tol:.0e})"),
            }
        }
    }

    /// Softmax by explicit exponentials, then the negative log of the labeled
    /// probability, averaged over cells.
    pub fn detection_loss_oracle(logits: &CellLogits, labels: &LabelGrid) -> f64 {
        let mut acc = 0.0;
        for (i, &l) in labels.labels.iter().enumerate() {
            let cell = &logits.logits[i * CHANNELS..(i + 1) * CHANNELS];
            let exps: Vec<f64> = cell.iter().map(|v| v.exp()).collect();
            let z: f64 = exps.iter().sum();
            acc += -(exps[l as usize] / z).ln();
        }
        acc / labels.labels.len() as f64
    }

    /// Direct exponential sums with the positive found by scanning every
    /// perspective cell's pixel box.
    pub fn descriptor_loss_oracle<M: PointMap>(d_fish: &DescriptorGrid, d_persp: &DescriptorGrid, map: &M, tau: f64) -> Option<f64> {
        let (pw, ph) = (d_persp.w_c(), d_persp.h_c());
        let cell = CELL as f64;
        let mut acc = 0.0;
        let mut n = 0;
        for r in 0..d_fish.h_c() {
            for c in 0..d_fish.w_c() {
                let center = Vector2::new(c as f64 * cell + cell / 2.0, r as f64 * cell + cell / 2.0);
                let Ok(q) = map.forward(&center) else { continue };
                let mut positive = None;
                for pr in 0..ph {
                    for pc in 0..pw {
                        let (x0, y0) = (pc as f64 * cell, pr as f64 * cell);
                        if q.x >= x0 && q.x < x0 + cell && q.y >= y0 && q.y < y0 + cell {
                            positive = Some((pr, pc));
                        }
                    }
                }
                let Some((pr, pc)) = positive else { continue };
                let d = d_fish.cell(r, c);
                let sim = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                let mut denom = 0.0;
                for rr in 0..ph {
                    for cc in 0..pw {
                        denom += (sim(d, d_persp.cell(rr, cc)) / tau).exp();
                    }
                }
                let num = (sim(d, d_persp.cell(pr, pc)) / tau).exp();
                acc += -(num / denom).ln();
                n += 1;
            }
        }
        (n > 0).then(|| acc / n as f64)
    }

    fn random_unit_cells(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    /// A random instance over 4x4 cells: logits, labels, two descriptor grids
    /// and a planar map between the two 32x32 views.
    pub struct Instance {
        pub logits: CellLogits,
        pub labels: LabelGrid,
        pub d_fish: DescriptorGrid,
        pub d_persp: DescriptorGrid,
        pub map: PlanarMap,
    }

    pub fn random_instance(seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h_c, w_c) = (4, 4);
        let logits = (0..h_c * w_c * CHANNELS).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let labels = (0..h_c * w_c).map(|_| rng.gen_range(0..=BIN) as u8).collect();
        let d_fish = DescriptorGrid::from_cells(h_c, w_c, random_unit_cells(&mut rng, h_c * w_c, 256)).unwrap();
        let d_persp = DescriptorGrid::from_cells(h_c, w_c, random_unit_cells(&mut rng, h_c * w_c, 256)).unwrap();
        let h = HomographyParams::sample(&mut rng, &SamplingRanges::planar_default())
            .compose_in_image(32, 32)
            .unwrap_or_else(|_| Homography::identity());
        Instance {
            logits: CellLogits::new(h_c, w_c, logits).unwrap(),
            labels: LabelGrid { h_c, w_c, labels },
            d_fish,
            d_persp,
            map: PlanarMap::new(h, (32, 32), (32, 32)).unwrap(),
        }
    }

    /// Fisheye cell `i` holds `e_i`, perspective cell `i` holds `e_i`, and the
    /// map is the identity: the positive has similarity 1, every negative 0.
    pub fn orthogonal_instance(h_c: usize, w_c: usize) -> (DescriptorGrid, DescriptorGrid, PlanarMap) {
        let n = h_c * w_c;
        let cells: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut v = vec![0.0; 256];
                v[i] = 1.0;
                v
            })
            .collect();
        let grid = DescriptorGrid::from_cells(h_c, w_c, cells).unwrap();
        let size = (w_c as u32 * CELL, h_c as u32 * CELL);
        let map = PlanarMap::new(Homography::identity(), size, size).unwrap();
        (grid.clone(), grid, map)
    }

    pub fn orthogonal_closed_form(tau: f64, n: usize) -> f64 {
        let e = (1.0 / tau).exp();
        -(e / (e + (n as f64 - 1.0))).ln()
    }

    /// Runs the oracle suite.
    pub fn run_all() -> Vec<CheckResult> {
        let mut out = Vec::new();

        let uniform = CellLogits::new(4, 4, vec![0.0; 16 * CHANNELS]).unwrap();
        let labels = LabelGrid {
            h_c: 4,
            w_c: 4,
            labels: (0..16).map(|i| (i * 5 % 65) as u8).collect(),
        };
        let err = (detection_loss(&uniform, &labels).unwrap() - (CHANNELS as f64).ln()).abs();
        out.push(CheckResult::new("detection loss of uniform logits is ln 65", err, 1e-6));

        for tau in [0.15, 1.0] {
            let (a, b, map) = orthogonal_instance(4, 4);
            let err = match descriptor_pair_loss(&a, &b, &map, tau) {
                Ok(v) => (v - orthogonal_closed_form(tau, 16)).abs(),
                Err(_) => f64::INFINITY,
            };
            out.push(CheckResult::new(
                &format!("descriptor loss with orthogonal negatives, tau {tau}"),
                err,
                1e-6,
            ));
        }

        let (mut det_err, mut des_err) = (0.0f64, 0.0f64);
        for seed in 0..100 {
            let inst = random_instance(seed);
            let got = detection_loss(&inst.logits, &inst.labels).unwrap();
            det_err = det_err.max((got - detection_loss_oracle(&inst.logits, &inst.labels)).abs());
            for tau in [0.15, 1.0] {
                let got = descriptor_pair_loss(&inst.d_fish, &inst.d_persp, &inst.map, tau);
                let want = descriptor_loss_oracle(&inst.d_fish, &inst.d_persp, &inst.map, tau);
                let err = match (got, want) {
                    (Ok(g), Some(w)) => (g - w).abs(),
                    (Err(Error::EmptyOverlap), None) => 0.0,
                    _ => f64::INFINITY,
                };
                des_err = des_err.max(err);
            }
        }
        out.push(CheckResult::new("detection loss against direct softmax, 100 instances", det_err, 1e-9));
        out.push(CheckResult::new("descriptor loss against direct sums, 100 instances", des_err, 1e-9));
        out
    }
}
