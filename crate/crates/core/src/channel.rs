//! Discrete-time ISI channel with additive circular Gaussian noise.
//!
//! Symbol indices follow the convention of the equivalent transmit sequence:
//! data symbols occupy positions `1..=K`, positions `1-L..=0` and
//! `K+1..=K+L` hold the known boundary symbol. Observations are indexed
//! `1..=K+L`. Internally all vectors are zero-based, so position `k` of the
//! transmit sequence lives at offset `k + L - 1` and observation `k` at `k - 1`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::constellation::Constellation;
use crate::error::{Error, Result};

/// Constellation index used for every boundary symbol.
pub const BOUNDARY_SYMBOL: usize = 0;

const PROAKIS_A: [f64; 11] = [
    0.04, -0.05, 0.07, -0.21, -0.5, 0.72, 0.36, 0.0, 0.21, 0.03, 0.07,
];
const PROAKIS_B: [f64; 3] = [0.407, 0.815, 0.407];

/// Finite impulse response of an ISI channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModel {
    name: String,
    taps: Vec<Complex64>,
}

impl ChannelModel {
    pub fn new(name: impl Into<String>, taps: Vec<Complex64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Argument("channel needs at least one tap".into()));
        }
        if taps.iter().all(|t| t.norm_sqr() == 0.0) {
            return Err(Error::Argument("channel taps are all zero".into()));
        }
        Ok(ChannelModel {
            name: name.into(),
            taps,
        })
    }

    pub fn from_real(name: impl Into<String>, taps: &[f64]) -> Result<Self> {
        Self::new(name, taps.iter().map(|&t| Complex64::new(t, 0.0)).collect())
    }

    pub fn proakis_a() -> Self {
        Self::from_real("proakis-a", &PROAKIS_A).expect("built-in taps are valid")
    }

    pub fn proakis_b() -> Self {
        Self::from_real("proakis-b", &PROAKIS_B).expect("built-in taps are valid")
    }

    /// Identity channel h = (1).
    pub fn identity() -> Self {
        Self::from_real("identity", &[1.0]).expect("valid")
    }

    /// Resolves `proakis-a`, `proakis-b`, `identity`, or a comma-separated list of
    /// real taps.
    pub fn by_name(spec: &str) -> Result<Self> {
        let s = spec.trim();
        match s.to_ascii_lowercase().as_str() {
            "proakis-a" | "proakis_a" | "proakisa" => return Ok(Self::proakis_a()),
            "proakis-b" | "proakis_b" | "proakisb" => return Ok(Self::proakis_b()),
            "identity" => return Ok(Self::identity()),
            _ => {}
        }
        let taps = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("unknown channel `{spec}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_real(s, &taps).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    /// Channel memory L.
    pub fn memory(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_sqr()).sum()
    }

    pub fn is_real(&self) -> bool {
        self.taps.iter().all(|t| t.im == 0.0)
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::by_name(s)
    }
}

/// One transmitted block and its noisy observation.
#[derive(Clone, Debug)]
pub struct TransmissionFrame {
    /// Constellation indices of the K data symbols.
    pub symbols: Vec<usize>,
    /// Equivalent transmit sequence c̆ of length K + 2L, boundaries included.
    pub padded: Vec<Complex64>,
    /// Observations y of length K + L.
    pub observations: Vec<Complex64>,
    /// Total complex noise variance σ².
    pub sigma2: f64,
}

impl TransmissionFrame {
    pub fn block_len(&self) -> usize {
        self.symbols.len()
    }

    pub fn bits(&self, cons: &Constellation) -> Vec<u8> {
        cons.indices_to_bits(&self.symbols)
    }
}

/// Builds c̆ from data symbol indices.
pub fn padded_sequence(symbols: &[usize], memory: usize, cons: &Constellation) -> Vec<Complex64> {
    let boundary = cons.point(BOUNDARY_SYMBOL);
    let mut out = Vec::with_capacity(symbols.len() + 2 * memory);
    out.extend(std::iter::repeat(boundary).take(memory));
    out.extend(symbols.iter().map(|&i| cons.point(i)));
    out.extend(std::iter::repeat(boundary).take(memory));
    out
}

/// Noise-free channel output Σ_ℓ h_ℓ c_{k-ℓ}, k = 1..K+L, computed by direct convolution.
pub fn convolve_valid(taps: &[Complex64], padded: &[Complex64]) -> Vec<Complex64> {
    let memory = taps.len() - 1;
    let out_len = padded.len() - memory;
    (0..out_len)
        .map(|row| {
            // Observation row uses padded positions row..=row+memory, newest last.
            taps.iter()
                .enumerate()
                .map(|(l, h)| h * padded[row + memory - l])
                .sum()
        })
        .collect()
}

/// Draws one circular complex Gaussian sample with total variance `sigma2`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma2: f64) -> Complex64 {
    let s = (sigma2 / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Passes data symbols through the channel and adds noise.
pub fn transmit<R: Rng + ?Sized>(
    symbols: &[usize],
    ch: &ChannelModel,
    cons: &Constellation,
    sigma2: f64,
    rng: &mut R,
) -> Result<TransmissionFrame> {
    if symbols.is_empty() {
        return Err(Error::Argument("block length must be at least 1".into()));
    }
    if let Some(&bad) = symbols.iter().find(|&&s| s >= cons.size()) {
        return Err(Error::Argument(format!("symbol index {bad} out of range")));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::Argument(format!("noise variance {sigma2} is negative")));
    }
    let padded = padded_sequence(symbols, ch.memory(), cons);
    let mut observations = convolve_valid(ch.taps(), &padded);
    if sigma2 > 0.0 {
        for y in observations.iter_mut() {
            *y += complex_gaussian(rng, sigma2);
        }
    }
    Ok(TransmissionFrame {
        symbols: symbols.to_vec(),
        padded,
        observations,
        sigma2,
    })
}

/// Draws K uniform symbol indices.
pub fn random_symbols<R: Rng + ?Sized>(rng: &mut R, cons: &Constellation, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..cons.size())).collect()
}
