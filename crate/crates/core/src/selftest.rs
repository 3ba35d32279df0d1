//! Built-in consistency checks run by `fgdetect selftest`.
//!
//! Every check compares an implementation against an independent oracle on
//! small problems and returns a one-line detail string.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{random_symbols, transmit, ChannelModel, TransmissionFrame};
use crate::constellation::{ebn0_to_sigma2, Constellation, Modulation};
use crate::detectors::{
    count_fn_operations, detect, detect_unweighted, DetectorGraph, DetectorKind, DetectorParams,
};
use crate::observation::Preprocessor;
use crate::params::{params_from_str, params_to_string};
use crate::reference::{bcjr_map, brute_force_app};
use crate::training::frame_penalty_and_gradients;

pub(crate) type Check = fn() -> Result<String, String>;

pub(crate) fn all_checks() -> Vec<(&'static str, Check)> {
    vec![
        ("bcjr_vs_brute_force", bcjr_vs_brute_force),
        ("ffg_exact_on_tree", ffg_exact_on_tree),
        ("ufg_exact_on_tree", ufg_exact_on_tree),
        ("gfg_matched_filter_is_ufg", gfg_matched_filter_is_ufg),
        ("memoryless_posterior", memoryless_posterior),
        ("loss_gradient", loss_gradient),
        ("operation_counts", operation_counts),
        ("params_round_trip", params_round_trip),
    ]
}

fn frame(ch: &ChannelModel, cons: &Constellation, k: usize, db: f64, seed: u64) -> Result<TransmissionFrame, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let syms = random_symbols(&mut rng, cons, k);
    transmit(&syms, ch, cons, ebn0_to_sigma2(db, cons), &mut rng).map_err(|e| e.to_string())
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn within(diff: f64, tol: f64) -> Result<String, String> {
    let detail = format!("max |diff| {diff:.3e} (tol {tol:.0e})");
    if diff <= tol {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn short_channel() -> ChannelModel {
    ChannelModel::from_real("short", &[0.8, 0.6]).expect("valid taps")
}

fn bcjr_vs_brute_force() -> Result<String, String> {
    let cons = Constellation::new(Modulation::Bpsk);
    let ch = ChannelModel::proakis_b();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let f = frame(&ch, &cons, 8, 4.0, seed)?;
        let a = bcjr_map(&f, &ch, &cons).map_err(|e| e.to_string())?;
        let b = brute_force_app(&f, &ch, &cons).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(&a, &b));
    }
    within(worst, 1e-9)
}

fn exact_on_tree(kind: DetectorKind) -> Result<String, String> {
    let cons = Constellation::new(Modulation::Bpsk);
    let ch = short_channel();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let f = frame(&ch, &cons, 10, 3.0, 100 + seed)?;
        let exact = bcjr_map(&f, &ch, &cons).map_err(|e| e.to_string())?;
        let sp = detect_unweighted(kind, &f, &ch, &cons, 24).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(&exact, &sp));
    }
    within(worst, 1e-8)
}

fn ffg_exact_on_tree() -> Result<String, String> {
    exact_on_tree(DetectorKind::Ffg)
}

fn ufg_exact_on_tree() -> Result<String, String> {
    exact_on_tree(DetectorKind::Ufg)
}

fn gfg_matched_filter_is_ufg() -> Result<String, String> {
    let cons = Constellation::new(Modulation::Bpsk);
    let ch = ChannelModel::proakis_b();
    let f = frame(&ch, &cons, 20, 6.0, 7)?;
    let ufg = detect_unweighted(DetectorKind::Ufg, &f, &ch, &cons, 5).map_err(|e| e.to_string())?;
    let taps: Vec<f64> = ch.taps().iter().rev().map(|t| t.re).collect();
    let pre = Preprocessor::new(taps, ch.memory()).map_err(|e| e.to_string())?;
    let params = DetectorParams::gfg(5, 20, &ch, &cons, pre).map_err(|e| e.to_string())?;
    let gfg = detect(&f, &ch, &cons, &params).map_err(|e| e.to_string())?;
    within(max_diff(&ufg, &gfg), 0.0)
}

fn memoryless_posterior() -> Result<String, String> {
    let cons = Constellation::new(Modulation::Qam16);
    let ch = ChannelModel::identity();
    let f = frame(&ch, &cons, 10, 4.0, 11)?;
    let exact: Vec<Vec<f64>> = f
        .observations
        .iter()
        .take(10)
        .map(|y| {
            let lin: Vec<f64> = cons
                .points()
                .iter()
                .map(|c| (-(y - c).norm_sqr() / f.sigma2).exp())
                .collect();
            let z: f64 = lin.iter().sum();
            lin.iter().map(|v| v / z).collect()
        })
        .collect();
    let mut worst = 0.0f64;
    for kind in [DetectorKind::Ffg, DetectorKind::Ufg] {
        let post = detect_unweighted(kind, &f, &ch, &cons, 2).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(&exact, &post));
    }
    within(worst, 1e-10)
}

fn loss_gradient() -> Result<String, String> {
    let cons = Constellation::new(Modulation::Bpsk);
    let ch = ChannelModel::proakis_b();
    let f = frame(&ch, &cons, 6, 3.0, 21)?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let pre = Preprocessor::new((0..5).map(|_| rng.gen_range(-0.5..1.0)).collect(), 3)
        .map_err(|e| e.to_string())?;
    let mut params = DetectorParams::gfg(3, 6, &ch, &cons, pre).map_err(|e| e.to_string())?;
    let mut flat = params.flatten();
    for v in flat.iter_mut() {
        *v += rng.gen_range(-0.2..0.2);
    }
    params.assign(&flat).map_err(|e| e.to_string())?;
    let (_, grads) = frame_penalty_and_gradients(&params, &f, &ch, &cons).map_err(|e| e.to_string())?;
    let analytic = grads.flatten();
    let eval = |p: &DetectorParams| -> Result<f64, String> {
        frame_penalty_and_gradients(p, &f, &ch, &cons)
            .map(|(v, _)| v)
            .map_err(|e| e.to_string())
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..12 {
        let i = rng.gen_range(0..flat.len());
        let mut probe = params.clone();
        let mut up = flat.clone();
        up[i] += h;
        probe.assign(&up).map_err(|e| e.to_string())?;
        let fp = eval(&probe)?;
        up[i] -= 2.0 * h;
        probe.assign(&up).map_err(|e| e.to_string())?;
        let fm = eval(&probe)?;
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(1e-3));
    }
    let detail = format!("max relative error {worst:.2e} over 12 parameters (tol 1e-4)");
    if worst <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn operation_counts() -> Result<String, String> {
    let cons = Constellation::new(Modulation::Bpsk);
    let ch = ChannelModel::proakis_b();
    let f = frame(&ch, &cons, 15, 5.0, 31)?;
    let pre = Preprocessor::new(vec![0.2, 0.5, 1.0, 0.5, 0.2], 3).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for params in [
        DetectorParams::unit(DetectorKind::Ffg, 4, 15, &ch, &cons),
        DetectorParams::unit(DetectorKind::Ufg, 4, 15, &ch, &cons),
        DetectorParams::gfg(4, 15, &ch, &cons, pre),
    ] {
        let params = params.map_err(|e| e.to_string())?;
        let dg = DetectorGraph::for_params(&params, &ch, &cons, &f.observations, f.sigma2)
            .map_err(|e| e.to_string())?;
        let engine = dg.operation_count(4);
        let span = if params.kind == DetectorKind::Gfg { params.band } else { ch.memory() };
        let model = count_fn_operations(params.kind, 15, ch.memory(), span, 2, 4);
        if engine != model {
            return Err(format!("{}: engine {engine} vs model {model}", params.kind));
        }
        checked += 1;
    }
    Ok(format!("{checked} detector classes agree"))
}

fn params_round_trip() -> Result<String, String> {
    let cons = Constellation::new(Modulation::Bpsk);
    let ch = ChannelModel::proakis_b();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let pre = Preprocessor::new((0..7).map(|_| rng.gen_range(-1.0..1.0)).collect(), 4)
        .map_err(|e| e.to_string())?;
    let mut p = DetectorParams::gfg(3, 9, &ch, &cons, pre).map_err(|e| e.to_string())?;
    let flat: Vec<f64> = (0..p.len()).map(|_| rng.gen::<f64>() * 1e4 - 0.1).collect();
    p.assign(&flat).map_err(|e| e.to_string())?;
    let back = params_from_str(&params_to_string(&p)).map_err(|e| e.to_string())?;
    let same = back
        .flatten()
        .iter()
        .zip(p.flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if same && back == p {
        Ok(format!("{} values bitwise identical", flat.len()))
    } else {
        Err("round trip changed values".into())
    }
}
