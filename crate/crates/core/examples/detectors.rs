//! FFG, UFG and a matched-filter GFG against the exact BCJR on one frame.

use fgdetect::detectors::detect_unweighted;
use fgdetect::metrics::{bit_errors, bmd_llrs};
use fgdetect::reference::bcjr_map;
use fgdetect::training::seeded_frames;
use fgdetect::{detect, ebn0_to_sigma2, ChannelModel, Constellation, DetectorKind, DetectorParams, Modulation, Preprocessor};

fn main() -> fgdetect::Result<()> {
    let cons = Constellation::new(Modulation::Bpsk);
    let ch = ChannelModel::proakis_b();
    let k = 500;
    for db in [4.0, 8.0, 12.0] {
        let frames = seeded_frames(&ch, &cons, k, ebn0_to_sigma2(db, &cons), 1, 0, 4)?;
        let taps: Vec<f64> = ch.taps().iter().rev().map(|t| t.re).collect();
        let gfg = DetectorParams::gfg(10, k, &ch, &cons, Preprocessor::new(taps, ch.memory())?)?;
        let mut errors = [0usize; 4];
        for f in &frames {
            let bits = f.bits(&cons);
            let outputs = [
                bcjr_map(f, &ch, &cons)?,
                detect_unweighted(DetectorKind::Ffg, f, &ch, &cons, 10)?,
                detect_unweighted(DetectorKind::Ufg, f, &ch, &cons, 10)?,
                detect(f, &ch, &cons, &gfg)?,
            ];
            for (e, p) in errors.iter_mut().zip(&outputs) {
                *e += bit_errors(&bmd_llrs(p, &cons), &bits)?;
            }
        }
        println!(
            "{db:>4} dB  bit errors in {} bits: bcjr {}  ffg {}  ufg {}  gfg(matched) {}",
            frames.len() * k,
            errors[0],
            errors[1],
            errors[2],
            errors[3]
        );
    }
    Ok(())
}
