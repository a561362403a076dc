use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sewbot::config::{Config, Surface, CONFIG_ENV};
use sewbot::experiments::{
    all_passed, run_knot_tying, run_running_stitch, run_servo_convergence, Check,
};
use sewbot::StitchMode;

#[derive(Parser, Debug)]
#[command(
    name = "sewbot",
    version,
    about = "Simulated vision-guided sewing experiments"
)]
struct Cli {
    /// TOML config file (millimetres and degrees).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV, table and JSON outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Pixel noise σ on tracked dots, px.
    #[arg(long, global = true)]
    pixel_noise: Option<f64>,
    /// Depth noise σ, mm.
    #[arg(long, global = true)]
    depth_noise: Option<f64>,
    /// Probability of a missing depth sample.
    #[arg(long, global = true)]
    dropout: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Running stitch along a line at several commanded sizes.
    Stitch(StitchArgs),
    /// Repeated stitch and overhand-knot cycles on the mandrel until the thread runs out.
    Knot(KnotArgs),
    /// Closed-loop visual servoing from random initial offsets.
    Servo(ServoArgs),
}

#[derive(Args, Debug)]
struct StitchArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Comma-separated stitch sizes, mm.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    targets: Option<usize>,
    /// Jaw-press bias added to measured sizes, mm.
    #[arg(long)]
    bias: Option<f64>,
    #[arg(long, value_enum)]
    surface: Option<SurfaceArg>,
}

#[derive(Args, Debug)]
struct KnotArgs {
    /// Thread spring constant, N/m.
    #[arg(long)]
    stiffness: Option<f64>,
    /// Thread budget, mm.
    #[arg(long)]
    thread_length: Option<f64>,
    /// Keyframe recording to replay.
    #[arg(long)]
    keyframes: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServoArgs {
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Arc,
    Chord,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SurfaceArg {
    Flat,
    Mandrel,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(checks) => {
            for c in &checks {
                println!("{c}");
            }
            if all_passed(&checks) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<Vec<Check>> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(v) = cli.pixel_noise {
        cfg.noise.pixel_sigma_px = v;
    }
    if let Some(v) = cli.depth_noise {
        cfg.noise.depth_sigma_mm = v;
    }
    if let Some(v) = cli.dropout {
        cfg.noise.dropout = v;
    }
    let start = Instant::now();
    let checks = match cli.command {
        Command::Stitch(args) => {
            if let Some(m) = args.mode {
                cfg.stitch.mode = match m {
                    ModeArg::Arc => StitchMode::Arc,
                    ModeArg::Chord => StitchMode::Chord,
                };
            }
            if let Some(s) = args.sizes {
                cfg.stitch.sizes_mm = s;
            }
            if let Some(t) = args.trials {
                cfg.stitch.trials = t;
            }
            if let Some(t) = args.targets {
                cfg.stitch.targets = t;
            }
            if let Some(b) = args.bias {
                cfg.world.jaw_press_bias_mm = b;
            }
            if let Some(s) = args.surface {
                cfg.world.surface = match s {
                    SurfaceArg::Flat => Surface::Flat,
                    SurfaceArg::Mandrel => Surface::Mandrel,
                };
            }
            let report = run_running_stitch(
                &cfg.stitch_spec(),
                &cfg.world_config(cfg.world.surface),
                &cfg.stitch_setup(),
            )?;
            print!("{}", report.table());
            let checks = report.checks();
            report
                .write_outputs(&cli.out, &checks)
                .context("writing stitch outputs")?;
            checks
        }
        Command::Knot(args) => {
            if let Some(k) = args.stiffness {
                cfg.knot.stiffness_n_per_m = k;
            }
            if let Some(l) = args.thread_length {
                cfg.knot.thread_length_mm = l;
            }
            if let Some(p) = args.keyframes {
                cfg.knot.keyframes = Some(p);
            }
            let setup = cfg.knot_setup()?;
            let report = run_knot_tying(&cfg.world_config(Surface::Mandrel), &setup, cfg.seed)?;
            print!("{}", report.summary_text());
            let checks = report.checks(&setup.knot);
            report
                .write_outputs(&cli.out, &checks)
                .context("writing knot outputs")?;
            checks
        }
        Command::Servo(args) => {
            if let Some(t) = args.trials {
                cfg.convergence.trials = t;
            }
            let report = run_servo_convergence(
                &cfg.world_config(Surface::Flat),
                &cfg.convergence_setup(),
                cfg.convergence.trials,
                cfg.seed,
            )?;
            print!("{}", report.summary_text());
            let checks = report.checks();
            report
                .write_outputs(&cli.out, &checks)
                .context("writing servo outputs")?;
            checks
        }
    };
    eprintln!(
        "finished in {:.2} s wall clock",
        start.elapsed().as_secs_f64()
    );
    Ok(checks)
}
