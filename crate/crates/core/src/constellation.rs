//! Symbol alphabets with bit labelings.
//!
//! Labels are stored as integers whose bit `m - 1 - i` is the `i`-th label bit,
//! so `labels[k]` read most-significant-first is the bit pattern `b(points[k])`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Supported constellation identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modulation {
    Bpsk,
    Qam16,
}

impl Modulation {
    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qam16 => "16qam",
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "16qam" | "16-qam" | "qam16" => Ok(Modulation::Qam16),
            other => Err(Error::Config(format!("unknown constellation `{other}`"))),
        }
    }
}

/// A unit-energy symbol alphabet together with its bit labeling.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    modulation: Modulation,
    points: Vec<Complex64>,
    labels: Vec<u32>,
    bits_per_symbol: usize,
}

/// Gray code of `i` on `bits` bits.
fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        match modulation {
            Modulation::Bpsk => Constellation {
                modulation,
                points: vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
                labels: vec![0, 1],
                bits_per_symbol: 1,
            },
            Modulation::Qam16 => {
                // Per-axis Gray mapping: the two most significant label bits select
                // the in-phase level, the two least significant the quadrature level.
                let levels = [-3.0, -1.0, 1.0, 3.0];
                let scale = 1.0 / 10f64.sqrt();
                let mut points = Vec::with_capacity(16);
                let mut labels = Vec::with_capacity(16);
                for (i, &re) in levels.iter().enumerate() {
                    for (q, &im) in levels.iter().enumerate() {
                        points.push(Complex64::new(re * scale, im * scale));
                        labels.push((gray(i as u32) << 2) | gray(q as u32));
                    }
                }
                Constellation {
                    modulation,
                    points,
                    labels,
                    bits_per_symbol: 4,
                }
            }
        }
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn name(&self) -> &'static str {
        self.modulation.name()
    }

    /// Alphabet size M.
    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Bits per symbol m = log2(M).
    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    /// The `bit`-th label bit (0 = first, most significant) of symbol `index`.
    pub fn label_bit(&self, index: usize, bit: usize) -> u8 {
        ((self.labels[index] >> (self.bits_per_symbol - 1 - bit)) & 1) as u8
    }

    /// The label bits of symbol `index`, first bit first.
    pub fn bit_labels(&self, index: usize) -> Vec<u8> {
        (0..self.bits_per_symbol)
            .map(|b| self.label_bit(index, b))
            .collect()
    }

    /// Index of the symbol carrying `label`.
    pub fn index_of_label(&self, label: u32) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// Index of the nearest point in Euclidean distance (ties go to the lower index).
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Mean squared magnitude of the points.
    pub fn average_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Maps groups of m bits to symbol indices.
    pub fn bits_to_indices(&self, bits: &[u8]) -> Result<Vec<usize>> {
        let m = self.bits_per_symbol;
        if bits.len() % m != 0 {
            return Err(Error::Argument(format!(
                "bit sequence of length {} is not a multiple of {m}",
                bits.len()
            )));
        }
        bits.chunks(m)
            .map(|chunk| {
                let mut label = 0u32;
                for &b in chunk {
                    if b > 1 {
                        return Err(Error::Argument(format!("bit value {b} is not 0 or 1")));
                    }
                    label = (label << 1) | b as u32;
                }
                Ok(self
                    .index_of_label(label)
                    .expect("labels enumerate all bit patterns"))
            })
            .collect()
    }

    /// Flattened label bits of a symbol-index sequence.
    pub fn indices_to_bits(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().flat_map(|&i| self.bit_labels(i)).collect()
    }
}

/// Constructs a constellation by name (`"bpsk"` or `"16qam"`).
pub fn make_constellation(name: &str) -> Result<Constellation> {
    Ok(Constellation::new(name.parse()?))
}

/// Maps a bit sequence to constellation points.
pub fn modulate(bits: &[u8], cons: &Constellation) -> Result<Vec<Complex64>> {
    Ok(cons
        .bits_to_indices(bits)?
        .into_iter()
        .map(|i| cons.point(i))
        .collect())
}

/// Noise variance for a given Eb/N0, with Eb/N0 := 1 / (m σ²).
pub fn ebn0_to_sigma2(ebn0_db: f64, cons: &Constellation) -> f64 {
    1.0 / (cons.bits_per_symbol() as f64 * 10f64.powf(ebn0_db / 10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bpsk_points() {
        let c = make_constellation("BPSK").unwrap();
        assert_eq!(c.points(), &[Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]);
        assert_eq!(c.bits_per_symbol(), 1);
    }

    #[test]
    fn qam16_energy_and_scale() {
        let c = make_constellation("16qam").unwrap();
        assert_eq!(c.size(), 16);
        // (1/16) Σ |a + jb|² over a, b ∈ {±1, ±3} is 10 before scaling.
        let raw: f64 = [-3.0f64, -1.0, 1.0, 3.0]
            .iter()
            .flat_map(|a| [-3.0f64, -1.0, 1.0, 3.0].map(move |b| a * a + b * b))
            .sum::<f64>()
            / 16.0;
        assert_abs_diff_eq!(raw, 10.0);
        assert_abs_diff_eq!(c.average_energy(), 1.0, epsilon = 1e-12);
        let max_re = c.points().iter().map(|p| p.re).fold(0.0, f64::max);
        assert_abs_diff_eq!(max_re, 3.0 / 10f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn labels_are_a_bijection() {
        for m in [Modulation::Bpsk, Modulation::Qam16] {
            let c = Constellation::new(m);
            let mut seen = c.labels.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..c.size() as u32).collect::<Vec<_>>());
            for k in 0..c.size() {
                let back = modulate(&c.bit_labels(k), &c).unwrap();
                assert_eq!(back, vec![c.point(k)]);
            }
        }
    }

    #[test]
    fn qam16_gray_neighbours_differ_in_one_bit() {
        let c = Constellation::new(Modulation::Qam16);
        let d_min = 2.0 / 10f64.sqrt();
        for i in 0..16 {
            for j in 0..16 {
                let d = (c.point(i) - c.point(j)).norm();
                if (d - d_min).abs() < 1e-9 {
                    assert_eq!((c.label(i) ^ c.label(j)).count_ones(), 1);
                }
            }
        }
    }

    #[test]
    fn modulate_examples() {
        let bpsk = Constellation::new(Modulation::Bpsk);
        assert_eq!(
            modulate(&[0, 1], &bpsk).unwrap(),
            vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]
        );
        let qam = Constellation::new(Modulation::Qam16);
        let zero = qam.index_of_label(0).unwrap();
        assert_eq!(modulate(&[0, 0, 0, 0], &qam).unwrap(), vec![qam.point(zero)]);
        assert!(matches!(modulate(&[0, 1, 1], &qam), Err(Error::Argument(_))));
    }

    #[test]
    fn unknown_name_is_config_error() {
        assert!(matches!(make_constellation("8PSK"), Err(Error::Config(_))));
    }

    #[test]
    fn sigma2_convention() {
        let bpsk = Constellation::new(Modulation::Bpsk);
        let qam = Constellation::new(Modulation::Qam16);
        assert_abs_diff_eq!(ebn0_to_sigma2(0.0, &bpsk), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ebn0_to_sigma2(10.0, &bpsk), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(ebn0_to_sigma2(10.0, &qam), 0.025, epsilon = 1e-15);
    }
}
