//! Design the length-30 MMSE equalizer for both Proakis channels.

use fgdetect::reference::{analytic_mse, mmse_design, mmse_equalize};
use fgdetect::training::seeded_frames;
use fgdetect::{ebn0_to_sigma2, ChannelModel, Constellation, Modulation};

fn main() -> fgdetect::Result<()> {
    let cons = Constellation::new(Modulation::Bpsk);
    for ch in [ChannelModel::proakis_a(), ChannelModel::proakis_b()] {
        for db in [6.0, 12.0] {
            let sigma2 = ebn0_to_sigma2(db, &cons);
            let (w, delay, mse) = mmse_design(&ch, sigma2, 30)?;
            let check = analytic_mse(&ch, sigma2, &w, delay);
            let frames = seeded_frames(&ch, &cons, 500, sigma2, 3, 0, 20)?;
            let mut errors = 0;
            for f in &frames {
                let out = mmse_equalize(f, &ch, &cons, 30)?;
                errors += out.decisions.iter().zip(&f.symbols).filter(|(a, b)| a != b).count();
            }
            println!(
                "{:<10} {db:>4} dB  delay {delay:>2}  mse {mse:.4} (recomputed {check:.4})  ber {:.2e}",
                ch.name(),
                errors as f64 / 10_000.0
            );
        }
    }
    Ok(())
}
