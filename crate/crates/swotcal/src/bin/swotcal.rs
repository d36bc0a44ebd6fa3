//! Command-line front end: argument parsing and dispatch only; all logic
//! lives in the library. Exit codes: 0 ok, 1 usage, 2 config, 3 data,
//! 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use swotcal::calnet::Ablations;
use swotcal::cli;
use swotcal::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "swotcal", version, about = "Wide-swath altimetry calibration OSSE toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated calibration dataset (segments + manifest).
    Simulate {
        /// Experiment config JSON; defaults to the desk-scale experiment.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of segments (overrides the config's train count).
        #[arg(long)]
        n_segments: Option<usize>,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Print the fully resolved config and exit without simulating.
        #[arg(long)]
        print_config: bool,
    },
    /// Train a calibration model on a simulated dataset.
    Train {
        /// Dataset directory produced by `simulate`.
        #[arg(long)]
        data: PathBuf,
        /// Architecture size "<channels>x<blocks>", e.g. 128x3 or 32x1.
        #[arg(long)]
        arch: Option<String>,
        /// Number of epochs (overrides the dataset config).
        #[arg(long)]
        epochs: Option<usize>,
        /// Scale decomposition "NxD" (bands x spacing km), e.g. 20x8.
        #[arg(long)]
        scales: Option<String>,
        /// Remove the swath-mixer layers.
        #[arg(long)]
        no_mix: bool,
        /// Feed raw fields instead of the scale decomposition.
        #[arg(long)]
        no_scales: bool,
        /// Drop the gridded product input (direct SSH prediction).
        #[arg(long)]
        no_gridded: bool,
        /// Remove the block skip connections.
        #[arg(long)]
        no_skip: bool,
        /// Linear variant: entry and exit convolutions only.
        #[arg(long)]
        linear: bool,
        /// Training seed (overrides the dataset seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from an existing checkpoint (warm start).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output checkpoint path (.swt).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: report JSON plus per-scale curve CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        curves: PathBuf,
    },
    /// Decompose a swath field into an along-track scale stack.
    Decompose {
        /// Input SWT file (swath_field, or cal_sample with --array).
        #[arg(long)]
        input: PathBuf,
        /// Array to read from a cal_sample file.
        #[arg(long, default_value = "obs")]
        array: String,
        /// Scale list "NxD", e.g. 20x8.
        #[arg(long, default_value = "20x8")]
        scales: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Band variance fractions (pre/post rescale) to CSV.
    Bands {
        /// A scale_stack SWT file or a dataset directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sum a scale stack back into a swath field.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> swotcal::Result<()> {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version are not usage errors
            if e.kind() == clap::error::ErrorKind::DisplayHelp
                || e.kind() == clap::error::ErrorKind::DisplayVersion
            {
                print!("{e}");
                return Ok(());
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    match cli.command {
        Command::Simulate { config, out, n_segments, seed, print_config } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_path(&p)?,
                None => ExperimentConfig::desk_default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if print_config {
                println!("{}", cfg.to_json());
                return Ok(());
            }
            let n = n_segments.unwrap_or(cfg.train.n_segments);
            let manifest = cli::cmd_simulate(&cfg, &out, n, cfg.seed)?;
            let mean_ratio = if manifest.segments.is_empty() {
                f64::NAN
            } else {
                manifest
                    .segments
                    .iter()
                    .map(|s| s.meta.rms_error / s.meta.rms_truth)
                    .sum::<f64>()
                    / manifest.segments.len() as f64
            };
            eprintln!(
                "wrote {} segments to {} (config {}, mean error/truth RMS ratio {mean_ratio:.2})",
                manifest.n_segments,
                out.display(),
                manifest.config_hash
            );
        }
        Command::Train {
            data,
            arch,
            epochs,
            scales,
            no_mix,
            no_scales,
            no_gridded,
            no_skip,
            linear,
            seed,
            resume,
            out,
        } => {
            let ov = cli::TrainOverrides {
                arch_size: arch,
                epochs,
                scales,
                ablations: Ablations {
                    no_mix,
                    no_scale_decomp: no_scales,
                    no_gridded,
                    no_skip,
                    linear_only: linear,
                },
                seed,
                resume_from: resume,
            };
            let outcome = cli::cmd_train(&data, &out, &ov)?;
            println!(
                "model {} | history {} | val RMSE {:.6} m | gridded RMSE {:.6} m",
                outcome.model_path.display(),
                outcome.history_path.display(),
                outcome.val_rmse,
                outcome.gridded_rmse
            );
        }
        Command::Eval { model, data, report, curves } => {
            let out = cli::cmd_eval(&model, &data, &report, &curves)?;
            println!(
                "calibrated RMSE {:.6} m | gridded RMSE {:.6} m | report {}",
                out.calibrated_rmse,
                out.gridded_rmse,
                report.display()
            );
        }
        Command::Decompose { input, array, scales, out } => {
            cli::cmd_decompose(&input, &array, &scales, &out)?;
            println!("wrote scale stack {}", out.display());
        }
        Command::Bands { input, out } => {
            cli::cmd_bands(&input, &out)?;
            println!("wrote band variances {}", out.display());
        }
        Command::Reconstruct { input, out } => {
            cli::cmd_reconstruct(&input, &out)?;
            println!("wrote reconstructed field {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
