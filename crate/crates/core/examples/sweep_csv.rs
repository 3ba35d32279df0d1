//! A small BER/BMI sweep written as CSV to stdout.

use fgdetect::{run_sweep, Settings, SweepConfig};

fn main() -> fgdetect::Result<()> {
    let settings = Settings::parse(
        "channel = proakis-b\n\
         modulation = bpsk\n\
         detectors = bcjr,mmse,ffg,ufg\n\
         ebn0_min = 0\nebn0_max = 10\nebn0_step = 2\n\
         frames = 200\nmin_errors = 100\n",
    )?;
    let cfg = SweepConfig::from_settings(&settings)?;
    let result = run_sweep(&cfg, |db, label, cell| {
        eprintln!("{db:>5} dB {label:<5} {} frames", cell.frames);
    })?;
    print!("{}", result.to_csv());
    Ok(())
}
