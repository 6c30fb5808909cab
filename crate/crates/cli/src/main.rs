//! `mars`: phantoms, simulated scans, transform learning and PWLS
//! reconstruction from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mars_core::config::RunConfig;
use mars_core::MarsError;

#[derive(Parser, Debug)]
#[command(name = "mars", version, about = "Multi-layer residual sparsifying transforms for low-dose CT")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set recon.beta=1e-5`.
    /// Repeatable; give all of them on the same side of the subcommand, since
    /// a later group replaces an earlier one.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    /// Log per-iteration detail.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render an ellipse phantom (`cx cy ax ay angle_deg hu` per line).
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Simulate a low-dose parallel-beam scan of an image.
    Simulate {
        #[arg(long)]
        image: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Filtered back-projection of a sinogram.
    Fbp {
        #[arg(long)]
        sino: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Learn a transform stack from the patches of one or more images.
    Train {
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// CSV of the learning objective after every sweep.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// PWLS reconstruction.
    Reconstruct {
        #[arg(long)]
        sino: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Mars)]
        method: Method,
        /// Transform stack (required for `--method mars`).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Initial image. Defaults to FBP, refined by PWLS-EP for `mars`.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// CSV of the objective after every outer iteration (`mars` only).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Directory for one image per outer iteration (`mars` only).
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// RMSE over the central disc and SSIM of an image against a reference.
    Metrics {
        image: PathBuf,
        reference: PathBuf,
        /// Use every pixel instead of the central disc for RMSE.
        #[arg(long)]
        full_roi: bool,
    },
    /// Per-layer residual images of an image under a transform stack.
    Residuals {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Divide by patch cover counts (per-pixel average instead of sum).
        #[arg(long)]
        normalize: bool,
        /// Also write PGM previews scaled to each image's range.
        #[arg(long)]
        pgm: bool,
    },
    /// Export an image as 8-bit PGM through a display window.
    Pgm {
        #[arg(long)]
        image: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 800.0, allow_negative_numbers = true)]
        window_lo: f64,
        #[arg(long, default_value_t = 1200.0, allow_negative_numbers = true)]
        window_hi: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Mars,
    Ep,
}

fn load_config(cli: &Cli) -> mars_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| MarsError::Format(format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set(key.trim(), value)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> mars_core::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Phantom { spec, out } => commands::phantom(&cfg, spec, out),
        Command::Simulate { image, out } => commands::simulate(&cfg, image, out),
        Command::Fbp { sino, out } => commands::fbp(&cfg, sino, out),
        Command::Train { images, out, trace } => commands::train(&cfg, images, out, trace.as_deref()),
        Command::Reconstruct { sino, method, model, init, out, trace, snapshots } => match method {
            Method::Mars => {
                let model = model
                    .as_deref()
                    .ok_or_else(|| MarsError::Contract("--method mars needs --model".into()))?;
                commands::reconstruct_mars(&cfg, sino, model, init.as_deref(), out, trace.as_deref(), snapshots.as_deref())
            }
            Method::Ep => {
                if trace.is_some() || snapshots.is_some() {
                    return Err(MarsError::Contract("--trace and --snapshots apply to --method mars only".into()));
                }
                commands::reconstruct_ep(&cfg, sino, init.as_deref(), out)
            }
        },
        Command::Metrics { image, reference, full_roi } => commands::metrics(image, reference, *full_roi),
        Command::Residuals { image, model, out_dir, normalize, pgm } => {
            commands::residuals(&cfg, image, model, out_dir, *normalize, *pgm)
        }
        Command::Pgm { image, out, window_lo, window_hi } => commands::pgm(image, out, *window_lo, *window_hi),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet {
        "warn"
    } else if cli.verbose {
        "debug"
    } else {
        "info"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                MarsError::Numeric(_) => 3,
                MarsError::Contract(_) | MarsError::Format(_) | MarsError::Io(_) => 2,
            })
        }
    }
}
