//! BMD log-likelihood ratios and the BMI estimate on a memoryless channel.

use fgdetect::metrics::{ber, bmd_llrs, bmi_estimate};
use fgdetect::reference::bcjr_map;
use fgdetect::training::seeded_frames;
use fgdetect::{ebn0_to_sigma2, ChannelModel, Constellation, Modulation};

fn main() -> fgdetect::Result<()> {
    let ch = ChannelModel::identity();
    for modulation in [Modulation::Bpsk, Modulation::Qam16] {
        let cons = Constellation::new(modulation);
        for db in [0.0, 5.0, 10.0] {
            let frames = seeded_frames(&ch, &cons, 500, ebn0_to_sigma2(db, &cons), 2, 0, 50)?;
            let mut llrs = Vec::new();
            let mut bits = Vec::new();
            for f in &frames {
                llrs.push(bmd_llrs(&bcjr_map(f, &ch, &cons)?, &cons));
                bits.push(f.bits(&cons));
            }
            let b = ber(&llrs[0], &bits[0])?;
            println!(
                "{:<6} {db:>4} dB  BMI {:.4} of {} bits/symbol  (first-frame BER {b:.3e})",
                cons.name(),
                bmi_estimate(&llrs, &bits)?,
                cons.bits_per_symbol()
            );
        }
    }
    Ok(())
}
