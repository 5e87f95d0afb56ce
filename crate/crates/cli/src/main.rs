use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mammobot_cli::commands::{
    cmd_bmode, cmd_calibrate, cmd_cnr, cmd_repeatability, cmd_scan, cmd_scenario, execute,
    CalibrationKind, Context,
};

#[derive(Parser)]
#[command(name = "mammobot", version, about = "Robotic ultrasound scanning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON; the built-in default when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Disable every noise source of the scenario.
    #[arg(long)]
    zero_noise: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Handeye,
    Us,
    Force,
}

#[derive(Subcommand)]
enum Command {
    /// Run one calibration on synthetic data.
    Calibrate {
        kind: Kind,
        /// Start the ultrasound solver at the true calibration.
        #[arg(long)]
        init_truth: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Navigate to a lesion, make contact, sweep a volume and scan.
    Scan {
        #[arg(long, default_value_t = 0)]
        lesion: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Repeat the scan from varied start configurations.
    Repeatability {
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        lesion: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Contrast-to-noise ratio of an ultrasound volume and an x-ray.
    Cnr {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        xray: PathBuf,
        #[arg(long)]
        rois: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Convert an RF raster to B-mode.
    Bmode {
        #[arg(long)]
        rf: PathBuf,
        /// Displayed dynamic range in dB (scenario value when omitted).
        #[arg(long)]
        dynamic_range: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the effective scenario as JSON.
    Scenario {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAMMOBOT_LOG", "error"))
        .init();
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Calibrate { kind, common, .. } => (
            match kind {
                Kind::Handeye => "calibrate handeye",
                Kind::Us => "calibrate us",
                Kind::Force => "calibrate force",
            },
            common,
        ),
        Command::Scan { common, .. } => ("scan", common),
        Command::Repeatability { common, .. } => ("repeatability", common),
        Command::Cnr { common, .. } => ("cnr", common),
        Command::Bmode { common, .. } => ("bmode", common),
        Command::Scenario { common } => ("scenario", common),
    };
    let scenario = common.scenario.as_deref();
    let report = execute(name, &common.out, scenario, common.seed.unwrap_or(0), || {
        let ctx = Context::load(scenario, common.seed, common.zero_noise, &common.out)?;
        match &cli.command {
            Command::Calibrate {
                kind, init_truth, ..
            } => {
                let kind = match kind {
                    Kind::Handeye => CalibrationKind::HandEye,
                    Kind::Us => CalibrationKind::Us,
                    Kind::Force => CalibrationKind::Force,
                };
                cmd_calibrate(&ctx, kind, *init_truth)
            }
            Command::Scan { lesion, .. } => cmd_scan(&ctx, *lesion),
            Command::Repeatability { trials, lesion, .. } => {
                cmd_repeatability(&ctx, *trials, *lesion)
            }
            Command::Cnr {
                volume, xray, rois, ..
            } => cmd_cnr(&ctx, volume, xray, rois),
            Command::Bmode { rf, dynamic_range, .. } => cmd_bmode(&ctx, rf, *dynamic_range),
            Command::Scenario { .. } => cmd_scenario(&ctx),
        }
    });
    println!("{}", report.metrics_json());
    if report.ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
