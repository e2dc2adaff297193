//! `tinyvbf` — plane-wave beamforming pipelines from the command line.
//!
//! Exit codes: 0 success; 2 file/format errors; 3 numeric/schedule
//! failures; 4 configuration or argument errors (including bad flags).

mod commands;
mod config;
mod spec;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, PipelineConfig};
use tinyvbf::error::Result;

#[derive(Parser)]
#[command(
    name = "tinyvbf",
    version,
    about = "Plane-wave ultrasound beamforming: DAS/MVDR references, a tiny transformer \
             beamformer with fixed-point inference, and a bit-exact accelerator simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by pipeline commands; each overrides its config-file key.
#[derive(Args, Debug, Default)]
struct PipelineArgs {
    /// Pipeline config file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input RFD1 frame
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for output files
    #[arg(long = "output-dir")]
    output_dir: Option<PathBuf>,
    /// Beamformer: das | mvdr | vbf
    #[arg(long)]
    beamformer: Option<String>,
    /// Arithmetic scheme: float | q24 | q20 | q16 | hybrid1 | hybrid2
    #[arg(long)]
    scheme: Option<String>,
    /// Execution engine: reference | accel-sim
    #[arg(long)]
    engine: Option<String>,
    /// TVBF weights file (vbf only)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Grid: 'default' or 'zmin_mm,zmax_mm,rows,cols'
    #[arg(long)]
    grid: Option<String>,
    /// Regions file with 'inside' and 'outside' entries
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Comma-separated depths in millimeters for FWHM rows
    #[arg(long)]
    depths: Option<String>,
    /// Seed for any randomized stage
    #[arg(long)]
    seed: Option<u64>,
    /// Display dynamic range in dB
    #[arg(long = "dynamic-range")]
    dynamic_range: Option<f64>,
    /// B-mode file format: pgm | png
    #[arg(long = "image-format")]
    image_format: Option<String>,
}

impl PipelineArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let overrides = Overrides {
            input: self.input.clone(),
            output_dir: self.output_dir.clone(),
            beamformer: self.beamformer.clone(),
            scheme: self.scheme.clone(),
            engine: self.engine.clone(),
            weights: self.weights.clone(),
            grid: self.grid.clone(),
            regions: self.regions.clone(),
            depths: self.depths.clone(),
            seed: self.seed,
            dynamic_range: self.dynamic_range,
            image_format: self.image_format.clone(),
        };
        PipelineConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an RFD1 frame from a phantom spec file
    Synth {
        /// Phantom spec file
        #[arg(long)]
        spec: PathBuf,
        /// Output RFD1 path
        #[arg(long)]
        output: PathBuf,
        /// Overrides the spec file seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Beamform an RFD1 frame to an IQF1 dump and a B-mode image
    Beamform(PipelineArgs),
    /// Compute CR/CNR/GCNR and FWHM rows for IQF1 images
    Metrics {
        /// IQF1 input (repeatable)
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Regions file with 'inside' and 'outside' entries
        #[arg(long)]
        regions: Option<PathBuf>,
        /// Comma-separated depths in millimeters for FWHM rows
        #[arg(long)]
        depths: Option<String>,
        /// Also write the report to this file
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run several configs on one input and report errors vs the first
    Compare {
        /// Pipeline config file (repeatable; first is the baseline)
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Also write the report to this file
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulate the accelerator dataflow and print its cycle report
    Cycles {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Also write the report to this file
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate seeded random weights as a TVBF file
    GenWeights {
        /// Output TVBF path
        #[arg(long)]
        output: PathBuf,
        /// RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Receive channels per lateral line
        #[arg(long)]
        channels: Option<usize>,
        /// Axial rows per token
        #[arg(long = "patch-rows")]
        patch_rows: Option<usize>,
        /// Tokens per lateral line
        #[arg(long)]
        patches: Option<usize>,
        /// Embedding width
        #[arg(long = "d-model")]
        d_model: Option<usize>,
        /// Attention heads
        #[arg(long)]
        heads: Option<usize>,
        /// Hidden width of the MLP block
        #[arg(long = "mlp-width")]
        mlp_width: Option<usize>,
        /// Comma-separated decoder output widths
        #[arg(long = "decoder-widths")]
        decoder_widths: Option<String>,
        /// Values per pixel (2 = I and Q)
        #[arg(long = "output-per-pixel")]
        output_per_pixel: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, output, seed } => commands::run_synth(&spec, &output, seed),
        Command::Beamform(args) => commands::run_beamform(&args.resolve()?),
        Command::Metrics {
            inputs,
            regions,
            depths,
            output,
        } => commands::run_metrics(
            &inputs,
            regions.as_deref(),
            depths.as_deref(),
            output.as_deref(),
        ),
        Command::Compare { configs, output } => commands::run_compare(&configs, output.as_deref()),
        Command::Cycles { pipeline, output } => {
            commands::run_cycles(&pipeline.resolve()?, output.as_deref())
        }
        Command::GenWeights {
            output,
            seed,
            channels,
            patch_rows,
            patches,
            d_model,
            heads,
            mlp_width,
            decoder_widths,
            output_per_pixel,
        } => commands::run_gen_weights(&commands::GenWeightsArgs {
            output,
            seed,
            channels,
            patch_rows,
            patches,
            d_model,
            heads,
            mlp_width,
            decoder_widths,
            output_per_pixel,
        }),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is a
            // usage mistake and belongs to the config exit class.
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
