use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tem_core::calibration::{calibrate_train, write_calibration_csv};
use tem_core::encoder::CsvMode;
use tem_core::harness::{emit_plotdata, run_experiment, ExperimentConfig, Mode, SignalSetup};
use tem_core::reconstruction::{measurements, reconstruct_neumann, reconstruct_pinv, Grid};
use tem_core::signal::{SignalFile, SincKernel};
use tem_core::TemError;

#[derive(Parser)]
#[command(
    name = "tem",
    version,
    about = "Integrate-and-fire time encoding with self-calibration"
)]
struct Cli {
    /// JSON experiment config; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Start from a built-in config instead of the defaults.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig3,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a signal and write it as JSON.
    Gen(SignalArgs),
    /// Encode a signal and write the spike train as CSV.
    Encode {
        #[command(flatten)]
        signal: SignalArgs,
        /// Encode without calibration injections.
        #[arg(long)]
        clean: bool,
        /// Include the true per-interval parameters.
        #[arg(long)]
        genie: bool,
    },
    /// Estimate per-segment parameters from the calibration firings.
    Calibrate(SignalArgs),
    /// Print recovery conditions for a signal's tuned bounds.
    Feasibility {
        #[command(flatten)]
        signal: SignalArgs,
        #[arg(long)]
        json: bool,
    },
    /// Reconstruct a signal with one sampler.
    Reconstruct {
        #[command(flatten)]
        signal: SignalArgs,
        #[arg(long, value_enum, default_value = "scal")]
        mode: ModeArg,
        #[arg(long)]
        pinv: bool,
    },
    /// Run the full batch and write plot data.
    Experiment {
        #[arg(long)]
        num_signals: Option<usize>,
    },
}

#[derive(Args)]
struct SignalArgs {
    /// Signal index within the batch; selects the random streams.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Read the signal from a JSON file instead of drawing it.
    #[arg(long)]
    signal: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ideal,
    Blind,
    Scal,
    Genie,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ideal => Mode::Ideal,
            ModeArg::Blind => Mode::Blind,
            ModeArg::Scal => Mode::Scal,
            ModeArg::Genie => Mode::Genie,
        }
    }
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<TemError>() {
            Some(TemError::Config(_)) => Failure::Config(e),
            _ => Failure::Run(e),
        }
    }
}

impl From<TemError> for Failure {
    fn from(e: TemError) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (&cli.config, cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path).map_err(|e| Failure::Config(e.into()))?,
        (None, Some(Preset::Fig3)) => ExperimentConfig::fig3(),
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    Ok(cfg)
}

fn setup(cfg: &ExperimentConfig, args: &SignalArgs) -> Result<SignalSetup, Failure> {
    match &args.signal {
        Some(path) => {
            let file = SignalFile::read(path)?;
            let index = file.stream.map_or(args.index, |s| (s / 2) as usize);
            let signal = file.to_signal()?;
            Ok(SignalSetup::with_signal(cfg, index, signal)?)
        }
        None => Ok(SignalSetup::prepare(cfg, args.index)?),
    }
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Gen(args) => {
            let signal = cfg.signal(args.index)?;
            let file =
                SignalFile::from_signal(&signal, Some(cfg.seed), Some(2 * args.index as u64));
            let path = out_path(cli, "signal.json");
            file.write(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Encode {
            signal,
            clean,
            genie,
        } => {
            let s = setup(&cfg, signal)?;
            let train = if *clean {
                s.encode_clean()?
            } else {
                s.encode_field()?
            };
            let path = out_path(cli, "spikes.csv");
            let mode = if *genie {
                CsvMode::Genie
            } else {
                CsvMode::Field
            };
            train.write_csv(&path, mode)?;
            println!(
                "{} intervals ({} calibration firings) -> {}",
                train.intervals.len(),
                train.calibration_count(),
                path.display()
            );
        }
        Command::Calibrate(args) => {
            let s = setup(&cfg, args)?;
            let train = s.encode_field()?;
            let records = calibrate_train(&train, &s.plan, &s.schedule)?;
            let path = out_path(cli, "calibration.csv");
            write_calibration_csv(&records, &path)?;
            for r in &records {
                println!(
                    "segment {:>2}  sigma {:.6e} (true {:.6e})  delta_dis {:.6e} (true {:.6e})  {}",
                    r.segment,
                    r.sigma_hat,
                    r.sigma_true,
                    r.delta_dis_hat,
                    r.delta_dis_true,
                    r.flag.as_str()
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Feasibility { signal, json } => {
            let s = setup(&cfg, signal)?;
            if *json {
                let value = serde_json::json!({
                    "bounds": s.bounds,
                    "nonsampling_sup": s.nonsampling_sup,
                    "uncalibrated": s.uncalibrated,
                    "calibrated": s.calibrated,
                    "plan": s.plan,
                });
                println!(
                    "{}",
                    serde_json::to_string_pretty(&value).context("serializing report")?
                );
            } else {
                println!(
                    "kappa in [{:.6e}, {:.6e}], nonsampling sup {:.6e} s",
                    s.bounds.kappa_inf, s.bounds.kappa_sup, s.nonsampling_sup
                );
                println!("uncalibrated\n{}", s.uncalibrated);
                println!("calibrated\n{}", s.calibrated);
            }
        }
        Command::Reconstruct { signal, mode, pinv } => {
            let s = setup(&cfg, signal)?;
            let mode = Mode::from(*mode);
            let clean = s.encode_clean()?;
            let field = s.encode_field()?;
            let records = calibrate_train(&field, &s.plan, &s.schedule)?;
            let train = match mode {
                Mode::Ideal | Mode::Blind => &clean,
                Mode::Scal | Mode::Genie => &field,
            };
            let params = s.mode_params(mode, &clean, &field, &records)?;
            let ms = measurements(train, &params, s.encoder.bias, cfg.threshold, cfg.centering)?;
            let kernel = SincKernel::new(cfg.omega_m)?;
            let nyq = s.signal.recovery_nyquist();
            let end = train.intervals.last().map_or(s.window.1, |iv| iv.end);
            let grid = Grid::new(s.window.0, end, nyq / cfg.points_per_nyquist as f64)?;
            let window = (grid.point(0) + 2.0 * nyq, grid.end() - 2.0 * nyq);
            let result = if *pinv {
                reconstruct_pinv(&ms, &kernel, &grid, None)?
            } else {
                reconstruct_neumann(&ms, &kernel, &grid, window, cfg.neumann)?
            };
            let truth: Vec<f64> = result.times.iter().map(|&t| s.signal.eval(t)).collect();
            let interior = grid.window_indices(window.0, window.1);
            let db = tem_core::reconstruction::nmse(&truth, &result.samples, &interior)?;
            let path = out_path(cli, "reconstruction.csv");
            result.write_csv(&truth, &path)?;
            println!(
                "{}: {} measurements, {} iterations, NMSE {:.2} dB -> {}",
                mode.as_str(),
                ms.len(),
                result.iterations,
                db,
                path.display()
            );
        }
        Command::Experiment { num_signals } => {
            let mut cfg = cfg;
            if let Some(n) = num_signals {
                cfg.num_signals = *n;
            }
            let report = run_experiment(&cfg)?;
            let dir: &Path = &cfg.output_dir;
            emit_plotdata(&report, dir)?;
            print!("{}", report.table());
            eprintln!(
                "runtime {:.1} s, output in {}",
                report.runtime_secs,
                dir.display()
            );
            for s in report.signals.iter().filter(|s| !s.is_complete()) {
                let reason = s.failure.clone().unwrap_or_else(|| {
                    s.modes
                        .iter()
                        .filter_map(|(m, r)| {
                            r.error.as_ref().map(|e| format!("{}: {e}", m.as_str()))
                        })
                        .collect::<Vec<_>>()
                        .join("; ")
                });
                eprintln!("signal {} failed: {reason}", s.index);
            }
            return Ok(report.failures == 0);
        }
    }
    Ok(true)
}

fn exit_code(result: Result<bool, Failure>) -> u8 {
    match result {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            1
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(exit_code(run(&cli)))
}
