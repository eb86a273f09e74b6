//! `dynovo run`: the full per-frame pipeline over a recorded sequence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use nalgebra::Point3;

use dynovo::config::Config;
use dynovo::datasets::{self, DatasetError, SequenceSource};
use dynovo::mapping::{build_local_cloud, export_ply, integrate, VoxelMap};
use dynovo::odometry::{FrameInput, OdometryError, Tracker, Trajectory};
use dynovo::semantics::dilate_dynamic;

use crate::CliError;

#[derive(Args)]
pub struct RunArgs {
    /// Generic-layout sequence directory (left/ right/ ... settings.txt).
    #[arg(long, conflicts_with = "kitti")]
    pub sequence: Option<PathBuf>,
    /// KITTI odometry root (contains sequences/ and poses/).
    #[arg(long, requires = "seq")]
    pub kitti: Option<PathBuf>,
    /// KITTI sequence id, e.g. 00.
    #[arg(long)]
    pub seq: Option<String>,
    /// Settings file; defaults to the sequence's own settings.txt
    /// (generic) or built-in defaults (KITTI, calibration from calib.txt).
    #[arg(long)]
    pub settings: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: PathBuf,
    /// Disable both dynamic filters (ablation).
    #[arg(long)]
    pub no_filter: bool,
    /// Skip map building even when depth is available.
    #[arg(long)]
    pub no_map: bool,
    /// Fail on missing mask files instead of assuming background.
    #[arg(long)]
    pub strict_masks: bool,
    /// Random seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stereo max depth override in meters.
    #[arg(long)]
    pub max_depth: Option<f64>,
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (source, mut config, input_desc) = load_source(args)?;
    if args.strict_masks {
        config.semantics.strict_masks = true;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(d) = args.max_depth {
        config.odometry.max_depth = Some(d);
    }
    if config.semantics.strict_masks && !source.has_masks {
        return Err(CliError::Data(format!(
            "strict masks requested but {input_desc} has no mask directory"
        )));
    }

    // Dimensions come from the data; the camera numbers from settings or
    // calibration.
    let first = source
        .load_frame(0, config.semantics.strict_masks)
        .map_err(data_err)?;
    let (width, height) = (first.left_gray.width(), first.left_gray.height());
    let camera = config.camera.ok_or_else(|| {
        CliError::Usage("no camera calibration: provide fx, fy, cx, cy, baseline".into())
    })?;
    let rig = camera
        .rig(width, height)
        .map_err(|e| CliError::Usage(format!("bad calibration: {e}")))?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;

    let map_enabled = source.has_depth && !args.no_map;
    let mut map = map_enabled.then(|| VoxelMap::new(config.map.clone()));
    let filter_enabled = !args.no_filter;
    let strict = config.semantics.strict_masks;
    let semantics = config.semantics.clone();
    let map_cfg = config.map.clone();
    let seed = config.seed;
    let mut tracker = Tracker::new(rig, config, filter_enabled);

    let mut trajectory = Trajectory::new();
    let mut diag_csv = String::from(
        "frame,timestamp,detected,mask_rejected,epi_rejected,flow_tracked,flow_outliers,\
         matched,pose_candidates,pose_inliers,stereo_features,moving_objects,used_prior,ms\n",
    );
    let mut total_ms = 0.0f64;

    for i in 0..source.len() {
        let frame = source.load_frame(i, strict).map_err(data_err)?;
        let frame_start = Instant::now();
        let out = tracker
            .track_frame(FrameInput {
                left: &frame.left_gray,
                right: &frame.right_gray,
                mask: frame.mask.as_ref(),
                timestamp: frame.timestamp,
            })
            .map_err(|e| match e {
                OdometryError::TrackingLost { reason } => {
                    CliError::TrackingLost(format!("frame {i}: tracking lost: {reason}"))
                }
                other => CliError::Data(format!("frame {i}: {other}")),
            })?;

        if let (Some(map), Some(depth)) = (map.as_mut(), frame.depth.as_ref()) {
            // The cloud follows the same dilated-mask policy as feature
            // rejection; with the filter off dynamic pixels are kept.
            let dilated = frame
                .mask
                .as_ref()
                .filter(|_| filter_enabled)
                .map(|m| dilate_dynamic(m, semantics.dilate_radius, &semantics.table));
            let cloud = build_local_cloud(
                &frame.left_rgb,
                depth,
                dilated.as_ref(),
                &rig.intrinsics,
                &semantics.table,
                map_cfg.max_cloud_depth,
                map_cfg.stride,
            )
            .map_err(|e| CliError::Data(format!("frame {i}: {e}")))?;
            let origin = Point3::from(out.pose.translation());
            integrate(map, &cloud, &out.pose, &origin);
        }

        let ms = frame_start.elapsed().as_secs_f64() * 1e3;
        total_ms += ms;
        let d = &out.diagnostics;
        writeln!(
            diag_csv,
            "{},{:.6},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            d.frame,
            d.timestamp,
            d.detected,
            d.mask_rejected,
            d.epi_rejected,
            d.flow_tracked,
            d.flow_outliers,
            d.matched,
            d.pose_candidates,
            d.pose_inliers,
            d.stereo_features,
            d.moving_objects,
            d.used_prior_init as u8,
            ms
        )
        .expect("string write");
        trajectory
            .push(frame.timestamp, out.pose)
            .map_err(|e| CliError::Data(format!("frame {i}: {e}")))?;
    }

    trajectory
        .write_kitti(args.out.join("trajectory_kitti.txt"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    trajectory
        .write_tum(args.out.join("trajectory_tum.txt"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(map) = &map {
        export_ply(map, args.out.join("map.ply")).map_err(|e| CliError::Data(e.to_string()))?;
    }
    std::fs::write(args.out.join("diagnostics.csv"), diag_csv)
        .map_err(|e| CliError::Data(format!("cannot write diagnostics: {e}")))?;

    let mean_fps = source.len() as f64 / (total_ms / 1e3).max(1e-9);
    let manifest = format!(
        "input: {input_desc}\nsettings: {}\nout: {}\nframes: {}\nfilter: {}\nmap: {}\n\
         strict_masks: {}\nseed: {}\nmax_depth: {}\nmean_fps: {:.2}\ntotal_s: {:.2}\n",
        args.settings
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "(sequence defaults)".into()),
        args.out.display(),
        source.len(),
        if filter_enabled { "on" } else { "off" },
        if map.is_some() { "on" } else { "off" },
        if strict { "on" } else { "off" },
        seed,
        args.max_depth
            .map(|d| format!("{d}"))
            .unwrap_or_else(|| "default".into()),
        mean_fps,
        started.elapsed().as_secs_f64(),
    );
    std::fs::write(args.out.join("manifest.txt"), manifest)
        .map_err(|e| CliError::Data(format!("cannot write manifest: {e}")))?;

    println!(
        "tracked {} frames at {:.1} FPS mean; outputs in {}",
        source.len(),
        mean_fps,
        args.out.display()
    );
    Ok(())
}

fn data_err(e: DatasetError) -> CliError {
    CliError::Data(e.to_string())
}

/// Resolves the input source plus its configuration.
fn load_source(args: &RunArgs) -> Result<(SequenceSource, Config, String), CliError> {
    match (&args.sequence, &args.kitti) {
        (Some(dir), None) => {
            let source = datasets::load_generic(dir).map_err(data_err)?;
            let settings_path = args
                .settings
                .clone()
                .unwrap_or_else(|| dir.join("settings.txt"));
            let mut config = parse_settings_usage(&settings_path)?;
            if config.camera.is_none() {
                config.camera = Some(source.camera);
            }
            Ok((source, config, dir.display().to_string()))
        }
        (None, Some(root)) => {
            let seq = args.seq.as_deref().expect("clap enforces --seq");
            let source = datasets::load_kitti(root, seq).map_err(data_err)?;
            let mut config = match &args.settings {
                Some(p) => parse_settings_usage(p)?,
                None => Config::default(),
            };
            // Dataset calibration is authoritative for KITTI.
            config.camera = Some(source.camera);
            Ok((
                source,
                config,
                format!("kitti:{} seq {seq}", root.display()),
            ))
        }
        _ => Err(CliError::Usage(
            "exactly one of --sequence or --kitti/--seq is required".into(),
        )),
    }
}

fn parse_settings_usage(path: &Path) -> Result<Config, CliError> {
    datasets::parse_settings(path).map_err(|e| CliError::Usage(e.to_string()))
}
