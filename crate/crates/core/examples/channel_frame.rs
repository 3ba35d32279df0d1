//! Transmit one block over Proakis B and look at the first few samples.

use fgdetect::channel::random_symbols;
use fgdetect::{ebn0_to_sigma2, make_constellation, transmit, ChannelModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fgdetect::Result<()> {
    let cons = make_constellation("16qam")?;
    let ch = ChannelModel::proakis_b();
    println!("{} points, {} bits/symbol, mean energy {:.6}", cons.size(), cons.bits_per_symbol(), cons.average_energy());
    println!("channel {} memory {} energy {:.4}", ch.name(), ch.memory(), ch.energy());

    let sigma2 = ebn0_to_sigma2(12.0, &cons);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let symbols = random_symbols(&mut rng, &cons, 8);
    let frame = transmit(&symbols, &ch, &cons, sigma2, &mut rng)?;
    println!("sigma2 = {sigma2:.5}");
    for (k, y) in frame.observations.iter().enumerate() {
        let sent = symbols.get(k).map(|&s| format!("{:.3}", cons.point(s))).unwrap_or_default();
        println!("y[{}] = {y:.3}    c[{}] = {sent}", k + 1, k + 1);
    }
    Ok(())
}
