//! Write a GFG parameter set to disk and read it back.

use fgdetect::params::{load_params_for, params_to_string};
use fgdetect::{save_params, ChannelModel, Constellation, DetectorParams, Modulation, Preprocessor};

fn main() -> fgdetect::Result<()> {
    let cons = Constellation::new(Modulation::Bpsk);
    let ch = ChannelModel::proakis_b();
    let pre = Preprocessor::new(vec![0.1, -0.3, 0.4, 1.0, 0.4, -0.3, 0.1], 4)?;
    let params = DetectorParams::gfg(2, 4, &ch, &cons, pre)?;
    let text = params_to_string(&params);
    println!("{}", text.lines().take(14).collect::<Vec<_>>().join("\n"));
    println!("...");

    let path = std::env::temp_dir().join("fgdetect-example.params");
    save_params(&params, &path)?;
    let back = load_params_for(&path, &ch, &cons)?;
    println!("round trip identical: {}", back == params);
    match load_params_for(&path, &ChannelModel::proakis_a(), &cons) {
        Err(e) => println!("loading for Proakis A: {e}"),
        Ok(_) => println!("unexpectedly accepted"),
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
