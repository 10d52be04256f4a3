use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ionaddr::crosstalk::AddressingMode;
use ionaddr_cli::commands::{self, ImageLayout};
use ionaddr_cli::{CliError, Scenario};

#[derive(Parser)]
#[command(name = "ionaddr", version, about = "AOD individual-addressing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ssa,
    Dsa,
}

impl From<Mode> for AddressingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Ssa => AddressingMode::SingleSide,
            Mode::Dsa => AddressingMode::DoubleSide,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML)
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Override the scenario's addressing mode
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Override the repetitions per point
    #[arg(long)]
    shots: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Excitation versus AOD drive frequency, with per-ion Gaussian fits
    ScanFrequency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        freq_start: Option<f64>,
        #[arg(long)]
        freq_stop: Option<f64>,
        #[arg(long)]
        freq_step: Option<f64>,
        /// µs
        #[arg(long)]
        raman_time: Option<f64>,
    },
    /// Rabi flopping of one addressed ion
    Rabi {
        #[command(flatten)]
        common: Common,
        /// Label or index
        #[arg(long)]
        ion: String,
        /// µs
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Long-time victim excitation and the Rabi crosstalk it implies
    Crosstalk {
        #[command(flatten)]
        common: Common,
        /// µs
        #[arg(long)]
        t_long: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Single-side vs double-side crosstalk table
    CompareModes {
        #[arg(long, short = 'c')]
        config: PathBuf,
        /// Extra intensity-crosstalk values to tabulate
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f64>,
    },
    /// Render or ingest spot images, stitch them and read the crosstalk
    ImagePipeline {
        #[arg(long, short = 'c')]
        config: PathBuf,
        #[arg(long, conflicts_with = "composite")]
        per_tone: bool,
        #[arg(long)]
        composite: bool,
        /// Graymaps with `.json` sidecars; rendered when absent
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        tone_count: Option<usize>,
        /// MHz
        #[arg(long)]
        tone_spacing: Option<f64>,
        #[arg(long)]
        no_stray: bool,
        /// µm
        #[arg(long)]
        neighbor_offset: Option<f64>,
    },
    /// Multi-Gaussian fit of a two-column CSV
    FitProfile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        spots: usize,
        /// Defaults to the current directory, or $IONADDR_OUTPUT_DIR
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn print<T: serde::Serialize>(report: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::ScanFrequency {
            common,
            freq_start,
            freq_stop,
            freq_step,
            raman_time,
        } => {
            let scenario = Scenario::load(&common.config)?;
            print(&commands::scan_frequency(
                &scenario,
                &commands::ScanFrequencyArgs {
                    freq_start_mhz: freq_start,
                    freq_stop_mhz: freq_stop,
                    freq_step_mhz: freq_step,
                    raman_time_us: raman_time,
                    shots: common.shots,
                    mode: common.mode.map(Into::into),
                },
            )?)
        }
        Command::Rabi {
            common,
            ion,
            t_max,
            points,
        } => {
            let scenario = Scenario::load(&common.config)?;
            print(&commands::rabi(
                &scenario,
                &commands::RabiArgs {
                    ion,
                    t_max_us: t_max,
                    points,
                    shots: common.shots,
                    mode: common.mode.map(Into::into),
                },
            )?)
        }
        Command::Crosstalk {
            common,
            t_long,
            points,
        } => {
            let scenario = Scenario::load(&common.config)?;
            print(&commands::crosstalk(
                &scenario,
                &commands::CrosstalkArgs {
                    t_long_us: t_long,
                    points,
                    shots: common.shots,
                    mode: common.mode.map(Into::into),
                },
            )?)
        }
        Command::CompareModes { config, epsilon } => {
            let scenario = Scenario::load(&config)?;
            print(&commands::compare_modes(
                &scenario,
                &commands::CompareModesArgs { epsilons: epsilon },
            )?)
        }
        Command::ImagePipeline {
            config,
            per_tone: _,
            composite,
            input,
            tone_count,
            tone_spacing,
            no_stray,
            neighbor_offset,
        } => {
            let scenario = Scenario::load(&config)?;
            print(&commands::image_pipeline(
                &scenario,
                &commands::ImagePipelineArgs {
                    layout: if composite {
                        ImageLayout::Composite
                    } else {
                        ImageLayout::PerTone
                    },
                    inputs: input,
                    tone_count,
                    tone_spacing_mhz: tone_spacing,
                    no_stray,
                    neighbor_offset_um: neighbor_offset,
                },
            )?)
        }
        Command::FitProfile {
            input,
            spots,
            output_dir,
        } => {
            let dir = output_dir
                .or_else(|| std::env::var_os(ionaddr_cli::scenario::OUTPUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            print(&commands::fit_profile(
                &dir,
                &commands::FitProfileArgs { input, spots },
            )?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ionaddr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
