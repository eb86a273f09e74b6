//! `dynovo synth`: render a scene script into a generic-layout sequence.

use std::path::PathBuf;

use clap::Args;

use dynovo::synth::{parse_script, render_sequence, SynthError};

use crate::CliError;

#[derive(Args)]
pub struct SynthArgs {
    /// Scene script (see the crate documentation for the format).
    pub script: PathBuf,
    /// Output sequence directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let script = parse_script(&args.script).map_err(usage_err)?;
    let stats = render_sequence(&script, &args.out).map_err(|e| match e {
        SynthError::Io { .. } => CliError::Data(e.to_string()),
        other => CliError::Usage(other.to_string()),
    })?;
    println!(
        "rendered {} frames ({}x{}), static pixels >= {}, dynamic pixels <= {}; sequence in {}",
        stats.frames,
        script.width,
        script.height,
        stats.min_static_pixels,
        stats.max_dynamic_pixels,
        args.out.display()
    );
    Ok(())
}

fn usage_err(e: SynthError) -> CliError {
    CliError::Usage(e.to_string())
}
