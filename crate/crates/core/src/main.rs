use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgdetect::{run_selftest, run_sweep, run_train, Error, Settings, SweepConfig, TrainRunConfig};

#[derive(Parser)]
#[command(name = "fgdetect", version, about = "Factor-graph symbol detection for ISI channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo BER/BMI sweep over an Eb/N0 grid, written as CSV.
    Sweep(Common),
    /// Train message weights (and the preprocessor for gfg).
    Train(TrainArgs),
    /// Run the built-in oracle checks.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// proakis-a, proakis-b, identity or comma-separated real taps.
    #[arg(long)]
    channel: Option<String>,
    /// bpsk or 16qam.
    #[arg(long = "mod")]
    modulation: Option<String>,
    /// Comma list of `kind`, `kind@file` or `label=kind@file` (bcjr, mmse, ffg, ufg, gfg).
    #[arg(long)]
    detectors: Option<String>,
    #[arg(long)]
    ebno_min: Option<f64>,
    #[arg(long)]
    ebno_max: Option<f64>,
    #[arg(long)]
    ebno_step: Option<f64>,
    /// Frame cap per grid point.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Message-passing iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Parameter file for weighted detectors without their own `@file`.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output file (CSV for sweep, parameter file for train).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Detector to train: ffg, ufg or gfg.
    #[arg(long)]
    kind: Option<String>,
    /// Training-loss log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn settings(c: &Common, extra: &[(&str, Option<String>)]) -> fgdetect::Result<Settings> {
    let mut s = match &c.config {
        Some(path) => Settings::load(path)?,
        None => Settings::new(),
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let flags = [
        ("channel", c.channel.clone()),
        ("modulation", c.modulation.clone()),
        ("detectors", c.detectors.clone()),
        ("ebn0_min", c.ebno_min.map(|v| v.to_string())),
        ("ebn0_max", c.ebno_max.map(|v| v.to_string())),
        ("ebn0_step", c.ebno_step.map(|v| v.to_string())),
        ("frames", c.frames.map(|v| v.to_string())),
        ("seed", c.seed.map(|v| v.to_string())),
        ("iterations", c.iters.map(|v| v.to_string())),
        ("params", path(&c.params)),
        ("out", path(&c.out)),
    ];
    for (k, v) in flags.into_iter().chain(extra.iter().cloned()) {
        if let Some(v) = v {
            s.set(k, v)?;
        }
    }
    Ok(s)
}

fn sweep(c: &Common) -> fgdetect::Result<()> {
    let s = settings(c, &[])?;
    let cfg = SweepConfig::from_settings(&s)?;
    let res = run_sweep(&cfg, |db, label, cell| {
        eprintln!("{db:>6} dB  {label:<10} ber {:.3e}  frames {}", cell.ber, cell.frames);
    })?;
    match s.get("out") {
        Some(path) => std::fs::write(path, res.to_csv())?,
        None => print!("{}", res.to_csv()),
    }
    Ok(())
}

fn train(a: &TrainArgs) -> fgdetect::Result<()> {
    let s = settings(
        &a.common,
        &[
            ("kind", a.kind.clone()),
            ("log", a.log.as_ref().map(|p| p.display().to_string())),
        ],
    )?;
    let cfg = TrainRunConfig::from_settings(&s)?;
    let every = (cfg.training.steps / 20).max(1);
    let outcome = run_train(&cfg, |r| {
        if r.step % every == 0 || r.validation_loss.is_some() {
            match r.validation_loss {
                Some(v) => eprintln!("step {:>6}  loss {:.5}  validation {:.5}", r.step, r.loss, v),
                None => eprintln!("step {:>6}  loss {:.5}", r.step, r.loss),
            }
        }
    })?;
    eprintln!(
        "best loss {:.5} at step {}; wrote {}",
        outcome.best_loss,
        outcome.best_step,
        cfg.out.display()
    );
    Ok(())
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::Capability(_) | Error::Load { .. } => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sweep(c) => sweep(c),
        Command::Train(a) => train(a),
        Command::Selftest { inject_fault } => {
            let report = run_selftest(*inject_fault);
            print!("{}", report.table());
            return if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
