//! Short weight-training run for UFG on Proakis B, then a before/after BER.
//!
//! `cargo run --release --example train_ufg -- [steps]`

use fgdetect::metrics::{bit_errors, bmd_llrs};
use fgdetect::training::{seeded_frames, train, TrainingConfig};
use fgdetect::{detect, ebn0_to_sigma2, ChannelModel, Constellation, DetectorKind, DetectorParams, Modulation};

fn ber(params: &DetectorParams, ch: &ChannelModel, cons: &Constellation, db: f64) -> fgdetect::Result<f64> {
    let frames = seeded_frames(ch, cons, params.block_len, ebn0_to_sigma2(db, cons), 99, 0, 40)?;
    let mut errors = 0;
    for f in &frames {
        errors += bit_errors(&bmd_llrs(&detect(f, ch, cons, params)?, cons), &f.bits(cons))?;
    }
    Ok(errors as f64 / (frames.len() * params.block_len) as f64)
}

fn main() -> fgdetect::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let cons = Constellation::new(Modulation::Bpsk);
    let ch = ChannelModel::proakis_b();
    let cfg = TrainingConfig {
        batch_size: 16,
        steps,
        learning_rate: 0.01,
        ..TrainingConfig::default()
    };
    let outcome = train(DetectorKind::Ufg, &ch, &cons, &cfg, |r| {
        if r.step % 25 == 0 {
            println!("step {:>5}  loss {:.4}", r.step, r.loss);
        }
    })?;
    let unit = DetectorParams::unit(DetectorKind::Ufg, cfg.iterations, cfg.block_len, &ch, &cons)?;
    for db in [8.0, 12.0] {
        println!(
            "{db} dB  unit BER {:.3e}  trained BER {:.3e}",
            ber(&unit, &ch, &cons, db)?,
            ber(&outcome.params, &ch, &cons, db)?
        );
    }
    Ok(())
}
