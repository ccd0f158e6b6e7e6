use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hybridpoint::dataset::{self, list_images, make_pairs, MakePairsConfig, SynthConfig};
use hybridpoint::detect::{homographic_adaptation, AdaptationConfig, Aggregation, BaselineDetector};
use hybridpoint::eval::{
    run_benchmark, BaselinePairDescriber, BaselinePairDetector, EvalConfig, GridFileDescriber, HeatmapFileDetector,
    KeypointFileDetector, PairDescriber, PairDetector,
};
use hybridpoint::synthdata::derived_seed;
use hybridpoint::warp::{cubemap_to_fisheye, CubeMap};
use hybridpoint::{Calibration, PrimitiveKind, SamplingRanges};

#[derive(Parser)]
#[command(name = "hybridpoint", version, about = "Fisheye/perspective keypoint data synthesis, pseudo-labeling and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic primitive images with ground-truth keypoint sidecars.
    SynthData {
        /// Comma-separated primitive kinds, or `all`.
        #[arg(long, default_value = "all")]
        kind: String,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Image size as WxH; ignored with --calib.
        #[arg(long, default_value = "320x320", value_parser = parse_size)]
        size: (u32, u32),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Render fisheye views of primitive cube maps with this calibration.
        #[arg(long)]
        calib: Option<PathBuf>,
        /// Cube face side for fisheye renders.
        #[arg(long, default_value_t = 256)]
        face_size: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a fisheye image from six cube map faces.
    Cubemap2fisheye {
        /// Directory holding `*_px`, `*_nx`, `*_py`, `*_ny`, `*_pz`, `*_nz` images.
        #[arg(long)]
        faces: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize K perspective views per fisheye image with their hybrid maps.
    MakePairs {
        #[arg(long)]
        fisheye: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML or JSON file with a `homography.ranges` section.
        #[arg(long)]
        ranges: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pseudo-label images by Homographic Adaptation of the baseline detector.
    PseudoLabel {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_homographies: usize,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Aggregate warps by maximum instead of visibility-weighted mean.
        #[arg(long)]
        max_aggregation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark a detector/descriptor pair on a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = DetectorChoice::Baseline)]
        detector: DetectorChoice,
        #[arg(long, value_enum, default_value_t = DescriptorChoice::Baseline)]
        descriptor: DescriptorChoice,
        /// Comma-separated correct-distance thresholds in pixels.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// JSON file with evaluation settings; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check the loss implementations against independent oracles.
    LossCheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorChoice {
    Baseline,
    HeatmapFiles,
    KeypointFiles,
}

#[derive(Clone, Copy, ValueEnum)]
enum DescriptorChoice {
    Baseline,
    GridFiles,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    /// Thresholds 5 and 10 px.
    Wide,
}

fn parse_size(s: &str) -> std::result::Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("bad size `{s}`: {e}"));
    Ok((parse(w)?, parse(h)?))
}

fn parse_kinds(s: &str) -> Result<Vec<PrimitiveKind>> {
    if s == "all" {
        return Ok(PrimitiveKind::ALL.to_vec());
    }
    s.split(',')
        .map(|k| k.trim().parse::<PrimitiveKind>().map_err(anyhow::Error::msg))
        .collect()
}

fn load_calibration(path: &Path) -> Result<Calibration> {
    if !path.is_file() {
        return Err(hybridpoint::Error::MissingCalibration(path.to_path_buf()).into());
    }
    Ok(Calibration::load(path)?)
}

fn stem_of(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned()
}

fn synth_data(cfg: SynthConfig, out: &Path) -> Result<()> {
    let paths = dataset::write_synthetic(&cfg, out)?;
    println!("wrote {} images to {}", paths.len(), out.display());
    Ok(())
}

fn pseudo_label(images: &Path, cfg: &AdaptationConfig, seed: u64, out: &Path) -> Result<()> {
    let paths = list_images(images)?;
    if paths.is_empty() {
        bail!("no images in {}", images.display());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, path) in paths.iter().enumerate() {
        let img = hybridpoint::ImageGray::load(path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, i as u64));
        let adapted = homographic_adaptation(&img, &BaselineDetector, cfg, &mut rng)
            .with_context(|| format!("adapting {}", path.display()))?;
        let stem = stem_of(path);
        adapted.keypoints.save(out.join(format!("{stem}.json")))?;
        adapted.dense.save(out.join(format!("{stem}.pgm")))?;
        println!("{stem}: {} keypoints", adapted.keypoints.len());
    }
    Ok(())
}

fn eval_config(config: Option<&Path>, preset: Option<Preset>, eps: Option<Vec<f64>>, seed: Option<u64>) -> Result<EvalConfig> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => EvalConfig::default(),
    };
    if let Some(Preset::Wide) = preset {
        cfg.epsilons = EvalConfig::wide().epsilons;
    }
    if let Some(eps) = eps {
        cfg.epsilons = eps;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData {
            kind,
            count,
            size,
            seed,
            calib,
            face_size,
            out,
        } => {
            let fisheye = match calib {
                Some(path) => Some(load_calibration(&path)?.fisheye),
                None => None,
            };
            let cfg = SynthConfig {
                kinds: parse_kinds(&kind)?,
                count,
                size,
                seed,
                fisheye,
                face_size,
            };
            synth_data(cfg, &out)
        }
        Command::Cubemap2fisheye { faces, calib, out } => {
            let calib = load_calibration(&calib)?;
            let cube = CubeMap::load_dir(&faces)?;
            let (img, _) = cubemap_to_fisheye(&cube, &calib.fisheye);
            img.save(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::MakePairs {
            fisheye,
            calib,
            k,
            seed,
            ranges,
            out,
        } => {
            let calib = load_calibration(&calib)?;
            let ranges = match ranges {
                Some(path) => SamplingRanges::load(&path)?,
                None => SamplingRanges::default(),
            };
            let records = make_pairs(&fisheye, &calib, &MakePairsConfig { k, seed, ranges }, &out)?;
            println!("wrote {} pairs to {}", records.len(), out.display());
            Ok(())
        }
        Command::PseudoLabel {
            images,
            n_homographies,
            rounds,
            seed,
            max_aggregation,
            out,
        } => {
            let cfg = AdaptationConfig {
                n_homographies,
                rounds,
                aggregation: if max_aggregation { Aggregation::Max } else { Aggregation::Mean },
                ..AdaptationConfig::default()
            };
            pseudo_label(&images, &cfg, seed, &out)
        }
        Command::Eval {
            dataset,
            detector,
            descriptor,
            eps,
            preset,
            config,
            seed,
            report,
        } => {
            let cfg = eval_config(config.as_deref(), preset, eps, seed)?;
            let det: Box<dyn PairDetector> = match detector {
                DetectorChoice::Baseline => Box::new(BaselinePairDetector(cfg.detector)),
                DetectorChoice::HeatmapFiles => Box::new(HeatmapFileDetector(cfg.detector)),
                DetectorChoice::KeypointFiles => Box::new(KeypointFileDetector),
            };
            let desc: Box<dyn PairDescriber> = match descriptor {
                DescriptorChoice::Baseline => Box::new(BaselinePairDescriber),
                DescriptorChoice::GridFiles => Box::new(GridFileDescriber),
            };
            let result = run_benchmark(&dataset, det.as_ref(), desc.as_ref(), &cfg)?;
            print!("{}", result.table);
            if let Some(path) = report {
                result.save(&path)?;
            }
            Ok(())
        }
        Command::LossCheck => {
            let results = hybridpoint::losses::check::run_all();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                bail!("loss check failed");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
