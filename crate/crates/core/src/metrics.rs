//! Bit-metric soft outputs, bit error rate and the BMI sample estimate.

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::spa::logsumexp;

/// Default LLR saturation in nats.
pub const DEFAULT_LLR_CLAMP: f64 = 30.0;

/// Bitwise LLRs ln(P(b=0)/P(b=1)) of one frame, `K × m` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LlrFrame {
    pub llrs: Vec<f64>,
    pub bits_per_symbol: usize,
    pub clamp: f64,
}

impl LlrFrame {
    pub fn symbols(&self) -> usize {
        self.llrs.len() / self.bits_per_symbol.max(1)
    }

    /// Hard decisions: bit 0 iff L ≥ 0.
    pub fn hard_bits(&self) -> Vec<u8> {
        self.llrs.iter().map(|&l| u8::from(l < 0.0)).collect()
    }
}

/// BMD LLRs from symbol probability vectors.
pub fn bmd_llrs(beliefs: &[Vec<f64>], cons: &Constellation) -> LlrFrame {
    bmd_llrs_clamped(beliefs, cons, DEFAULT_LLR_CLAMP)
}

pub fn bmd_llrs_clamped(beliefs: &[Vec<f64>], cons: &Constellation, clamp: f64) -> LlrFrame {
    let m = cons.bits_per_symbol();
    let mut llrs = Vec::with_capacity(beliefs.len() * m);
    for p in beliefs {
        for bit in 0..m {
            let (mut p0, mut p1) = (0.0, 0.0);
            for (s, &ps) in p.iter().enumerate() {
                if cons.label_bit(s, bit) == 0 {
                    p0 += ps;
                } else {
                    p1 += ps;
                }
            }
            let l = p0.ln() - p1.ln();
            llrs.push(if l.is_nan() { 0.0 } else { l.clamp(-clamp, clamp) });
        }
    }
    LlrFrame {
        llrs,
        bits_per_symbol: m,
        clamp,
    }
}

/// BMD LLRs from log-probabilities (`K × M` row-major), evaluated with log-sum-exp.
pub fn bmd_llrs_from_log(log_beliefs: &[f64], cons: &Constellation, clamp: f64) -> LlrFrame {
    let size = cons.size();
    let m = cons.bits_per_symbol();
    let mut llrs = Vec::with_capacity(log_beliefs.len() / size * m);
    let mut zero = Vec::with_capacity(size);
    let mut one = Vec::with_capacity(size);
    for row in log_beliefs.chunks(size) {
        for bit in 0..m {
            zero.clear();
            one.clear();
            for (s, &lp) in row.iter().enumerate() {
                if cons.label_bit(s, bit) == 0 {
                    zero.push(lp);
                } else {
                    one.push(lp);
                }
            }
            let l = logsumexp(&zero) - logsumexp(&one);
            llrs.push(l.clamp(-clamp, clamp));
        }
    }
    LlrFrame {
        llrs,
        bits_per_symbol: m,
        clamp,
    }
}

/// Number of hard-decision bit errors.
pub fn bit_errors(llrs: &LlrFrame, true_bits: &[u8]) -> Result<usize> {
    if llrs.llrs.len() != true_bits.len() {
        return Err(Error::Argument(format!(
            "{} LLRs for {} bits",
            llrs.llrs.len(),
            true_bits.len()
        )));
    }
    Ok(llrs
        .hard_bits()
        .iter()
        .zip(true_bits)
        .filter(|(a, b)| a != b)
        .count())
}

/// Fraction of hard-decision bit errors.
pub fn ber(llrs: &LlrFrame, true_bits: &[u8]) -> Result<f64> {
    if true_bits.is_empty() {
        return Err(Error::Argument("no bits".into()));
    }
    Ok(bit_errors(llrs, true_bits)? as f64 / true_bits.len() as f64)
}

/// Bit errors between hard symbol decisions and the transmitted symbols.
pub fn symbol_bit_errors(decided: &[usize], sent: &[usize], cons: &Constellation) -> usize {
    decided
        .iter()
        .zip(sent)
        .map(|(&a, &b)| (cons.label(a) ^ cons.label(b)).count_ones() as usize)
        .sum()
}

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2..=8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// ln(1 + e^u) without overflow.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// log2(1 + exp(−s·L)) with s = +1 for bit 0 and −1 for bit 1, per bit.
pub fn bit_penalties(llrs: &LlrFrame, true_bits: &[u8]) -> Vec<f64> {
    llrs.llrs
        .iter()
        .zip(true_bits)
        .map(|(&l, &b)| {
            let s = if b == 0 { 1.0 } else { -1.0 };
            softplus(-s * l) / std::f64::consts::LN_2
        })
        .collect()
}

/// BMI estimate log2(M) − (1/(DK)) Σ log2(1 + exp(−(−1)^b L)) in bits per symbol.
pub fn bmi_estimate(frames: &[LlrFrame], true_bits: &[Vec<u8>]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Argument("BMI needs at least one frame".into()));
    }
    if frames.len() != true_bits.len() {
        return Err(Error::Argument("frame and bit counts differ".into()));
    }
    let m = frames[0].bits_per_symbol;
    let mut per_frame = Vec::with_capacity(frames.len());
    let mut symbols = 0usize;
    for (f, bits) in frames.iter().zip(true_bits) {
        if f.llrs.len() != bits.len() || f.bits_per_symbol != m {
            return Err(Error::Argument("LLR and bit dimensions differ".into()));
        }
        symbols += f.symbols();
        per_frame.push(pairwise_sum(&bit_penalties(f, bits)));
    }
    Ok(m as f64 - pairwise_sum(&per_frame) / symbols as f64)
}

/// Streaming BER/BMI accumulator with an order-independent final reduction.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    pub frames: usize,
    pub bits: usize,
    pub errors: usize,
    pub symbols: usize,
    penalties: Vec<f64>,
    bits_per_symbol: usize,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one frame's soft output.
    pub fn add_soft(&mut self, llrs: &LlrFrame, true_bits: &[u8]) -> Result<()> {
        self.errors += bit_errors(llrs, true_bits)?;
        self.bits += true_bits.len();
        self.symbols += llrs.symbols();
        self.frames += 1;
        self.bits_per_symbol = llrs.bits_per_symbol;
        self.penalties.push(pairwise_sum(&bit_penalties(llrs, true_bits)));
        Ok(())
    }

    /// Adds one frame of hard decisions (no BMI contribution).
    pub fn add_hard(&mut self, decided: &[usize], sent: &[usize], cons: &Constellation) {
        self.errors += symbol_bit_errors(decided, sent, cons);
        self.bits += sent.len() * cons.bits_per_symbol();
        self.symbols += sent.len();
        self.frames += 1;
    }

    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }

    /// BMI over the soft frames, `None` when only hard decisions were added.
    pub fn bmi(&self) -> Option<f64> {
        if self.penalties.is_empty() {
            return None;
        }
        Some(self.bits_per_symbol as f64 - pairwise_sum(&self.penalties) / self.symbols as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::Modulation;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bpsk_ratio() {
        let cons = Constellation::new(Modulation::Bpsk);
        let l = bmd_llrs(&[vec![0.9, 0.1]], &cons);
        assert_abs_diff_eq!(l.llrs[0], 9f64.ln(), epsilon = 1e-12);
        let u = bmd_llrs(&[vec![0.5, 0.5]], &cons);
        assert_eq!(u.llrs, vec![0.0]);
    }

    #[test]
    fn degenerate_qam_belief_saturates() {
        let cons = Constellation::new(Modulation::Qam16);
        let idx = 6;
        let mut p = vec![0.0; 16];
        p[idx] = 1.0;
        let l = bmd_llrs(&[p], &cons);
        for (bit, &v) in l.llrs.iter().enumerate() {
            let expect = if cons.label_bit(idx, bit) == 0 { 30.0 } else { -30.0 };
            assert_eq!(v, expect);
        }
        let uniform = bmd_llrs(&[vec![1.0 / 16.0; 16]], &cons);
        assert!(uniform.llrs.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn log_and_linear_paths_agree() {
        let cons = Constellation::new(Modulation::Qam16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..16).map(|_| rng.gen_range(-5.0..0.0)).collect();
        let z = logsumexp(&raw);
        let logp: Vec<f64> = raw.iter().map(|v| v - z).collect();
        let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
        let a = bmd_llrs(&[p], &cons);
        let b = bmd_llrs_from_log(&logp, &cons, 30.0);
        for (x, y) in a.llrs.iter().zip(&b.llrs) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn ber_cases() {
        let f = LlrFrame {
            llrs: vec![1.0, -2.0, 0.0, -0.5],
            bits_per_symbol: 1,
            clamp: 30.0,
        };
        assert_eq!(ber(&f, &[0, 1, 0, 1]).unwrap(), 0.0);
        let flipped = LlrFrame {
            llrs: vec![-1.0, 2.0, -1e-3, 0.5],
            ..f.clone()
        };
        assert_eq!(ber(&flipped, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert!(ber(&f, &[0, 1]).is_err());
    }

    #[test]
    fn random_llrs_give_half_error_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let f = LlrFrame {
            llrs: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bits_per_symbol: 1,
            clamp: 30.0,
        };
        let bits: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        assert!((ber(&f, &bits).unwrap() - 0.5).abs() < 0.002);
    }

    #[test]
    fn bmi_limits() {
        let zero = LlrFrame {
            llrs: vec![0.0; 8],
            bits_per_symbol: 4,
            clamp: 30.0,
        };
        let bits = vec![0, 1, 1, 0, 1, 1, 1, 0];
        assert_abs_diff_eq!(bmi_estimate(&[zero], &[bits.clone()]).unwrap(), 0.0, epsilon = 1e-12);
        let perfect = LlrFrame {
            llrs: bits.iter().map(|&b| if b == 0 { 30.0 } else { -30.0 }).collect(),
            bits_per_symbol: 4,
            clamp: 30.0,
        };
        assert_abs_diff_eq!(bmi_estimate(&[perfect], &[bits]).unwrap(), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn softplus_is_stable() {
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln());
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_abs_diff_eq!(pairwise_sum(&v), v.iter().sum::<f64>(), epsilon = 1e-9);
    }

    #[test]
    fn bpsk_llr_equals_argmax_decision() {
        let cons = Constellation::new(Modulation::Bpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p0: f64 = rng.gen_range(0.0..1.0);
            let l = bmd_llrs(&[vec![p0, 1.0 - p0]], &cons);
            let arg = if p0 >= 1.0 - p0 { 0 } else { 1 };
            assert_eq!(l.hard_bits()[0], arg);
        }
    }

    proptest! {
        #[test]
        fn llrs_are_clamped_and_finite(raw in proptest::collection::vec(0.0f64..1.0, 16)) {
            let cons = Constellation::new(Modulation::Qam16);
            let z: f64 = raw.iter().sum::<f64>().max(1e-300);
            let p: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let l = bmd_llrs(&[p], &cons);
            for v in l.llrs {
                prop_assert!(v.is_finite() && v.abs() <= 30.0);
            }
        }

        #[test]
        fn bmi_is_at_most_log2m(llrs in proptest::collection::vec(-30.0f64..30.0, 8), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bits: Vec<u8> = (0..8).map(|_| rng.gen_range(0..2)).collect();
            let f = LlrFrame { llrs, bits_per_symbol: 4, clamp: 30.0 };
            prop_assert!(bmi_estimate(&[f], &[bits]).unwrap() <= 4.0);
        }
    }
}
