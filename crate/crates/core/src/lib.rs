//! Geometry, data synthesis, losses and benchmark metrics for interest point
//! detection and description across fisheye and perspective images.

pub mod camera;
pub mod dataset;
pub mod descmatch;
pub mod detect;
pub mod error;
pub mod eval;
pub mod homography;
pub mod keypoints;
pub mod losses;
pub mod metrics;
pub mod raster;
pub mod synthdata;
pub mod tensorfile;
pub mod warp;

pub use camera::{Calibration, FisheyeModel, PinholeModel};
pub use descmatch::{DescriptorGrid, MatchConfig, MatchSet};
pub use detect::{CellHeatmap, DetectorConfig, HeatmapDetector, LabelGrid};
pub use error::{Error, Result};
pub use homography::{Homography, HomographyParams, HybridMap, PlanarMap, PointMap, SamplingRanges};
pub use losses::{CellLogits, LossConfig};
pub use keypoints::{Keypoint, KeypointSet};
pub use raster::{ImageGray, ValidMask};
pub use synthdata::{LabeledImage, PrimitiveKind};
