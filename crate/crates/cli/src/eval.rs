//! `dynovo eval`: absolute pose error between two trajectory files.

use std::path::PathBuf;

use clap::Args;

use dynovo::evaluation::{ape, write_report, Alignment};
use dynovo::odometry::Trajectory;

use crate::CliError;

#[derive(Args)]
pub struct EvalArgs {
    /// Reference (ground truth) trajectory, KITTI or TUM format
    /// (auto-detected by content).
    pub reference: PathBuf,
    /// Estimated trajectory, KITTI or TUM format.
    pub estimate: PathBuf,
    /// Alignment applied to the estimate before the error is measured.
    #[arg(long, value_parser = parse_alignment, default_value = "rigid")]
    pub align: Alignment,
    /// Timestamp association tolerance in seconds.
    #[arg(long, default_value_t = 0.02)]
    pub max_dt: f64,
    /// When set, write ape.csv / ape_summary.txt / ape.svg here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_alignment(s: &str) -> Result<Alignment, String> {
    match s {
        "none" => Ok(Alignment::None),
        "rigid" => Ok(Alignment::Rigid),
        "similarity" => Ok(Alignment::Similarity),
        other => Err(format!(
            "'{other}' is not an alignment (none | rigid | similarity)"
        )),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let reference =
        Trajectory::read_auto(&args.reference).map_err(|e| CliError::Data(e.to_string()))?;
    let estimate =
        Trajectory::read_auto(&args.estimate).map_err(|e| CliError::Data(e.to_string()))?;
    let report = ape(&reference, &estimate, args.align, args.max_dt)
        .map_err(|e| CliError::Data(e.to_string()))?;

    println!(
        "rmse {:.6} mean {:.6} max {:.6} min {:.6}  ({} poses, {} alignment)",
        report.rmse,
        report.mean,
        report.max,
        report.min,
        report.errors.len(),
        report.alignment
    );
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
        write_report(&report, out, "ape").map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(())
}
