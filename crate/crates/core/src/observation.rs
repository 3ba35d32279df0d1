//! Banded convolution matrices and the observation models fed to the
//! Ungerboeck-style detectors.
//!
//! The generalized model replaces the matched filter Hᴴ by an FIR
//! preprocessor P and works on G̃ = P·H and x̃ = P·y. Rows of P (and hence of
//! x̃ and G̃) are indexed by transmit-sequence positions 1-L..=K+L.

use num_complex::Complex64;

use crate::channel::ChannelModel;
use crate::error::{Error, Result};

/// Threshold below which an entry of G̃ counts as zero for band detection.
pub const BAND_ZERO_THRESHOLD: f64 = 1e-12;

/// A rectangular matrix whose nonzero entries satisfy `lo <= j - i <= hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMatrix {
    rows: usize,
    cols: usize,
    lo: isize,
    hi: isize,
    data: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(rows: usize, cols: usize, lo: isize, hi: isize) -> Self {
        assert!(lo <= hi);
        let width = (hi - lo + 1) as usize;
        BandMatrix {
            rows,
            cols,
            lo,
            hi,
            data: vec![Complex64::new(0.0, 0.0); rows * width],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Range of stored diagonals `j - i`.
    pub fn diagonals(&self) -> (isize, isize) {
        (self.lo, self.hi)
    }

    fn width(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.rows || j >= self.cols {
            return None;
        }
        let d = j as isize - i as isize;
        if d < self.lo || d > self.hi {
            return None;
        }
        Some(i * self.width() + (d - self.lo) as usize)
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.slot(i, j)
            .map(|s| self.data[s])
            .unwrap_or_else(|| Complex64::new(0.0, 0.0))
    }

    /// Sets an entry inside the stored band.
    ///
    /// Panics if `(i, j)` lies outside the band or the matrix.
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: Complex64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] += v;
    }

    /// Column range `j` with a stored slot in row `i`.
    pub fn row_support(&self, i: usize) -> std::ops::Range<usize> {
        let start = (i as isize + self.lo).max(0) as usize;
        let end = ((i as isize + self.hi + 1).max(0) as usize).min(self.cols);
        start..end.max(start)
    }

    /// Banded Toeplitz matrix with entry `(i, j) = taps[i - j + offset]` where in range.
    pub fn toeplitz(taps: &[Complex64], rows: usize, cols: usize, offset: isize) -> Self {
        // taps index t = i - j + offset  <=>  j - i = offset - t
        let lo = offset - (taps.len() as isize - 1);
        let hi = offset;
        let mut m = BandMatrix::zeros(rows, cols, lo, hi);
        for i in 0..rows {
            for j in m.row_support(i) {
                let t = i as isize - j as isize + offset;
                if t >= 0 && (t as usize) < taps.len() {
                    m.set(i, j, taps[t as usize]);
                }
            }
        }
        m
    }

    pub fn conj_transpose(&self) -> Self {
        let mut out = BandMatrix::zeros(self.cols, self.rows, -self.hi, -self.lo);
        for i in 0..self.rows {
            for j in self.row_support(i) {
                out.set(j, i, self.get(i, j).conj());
            }
        }
        out
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &BandMatrix) -> BandMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = BandMatrix::zeros(self.rows, rhs.cols, self.lo + rhs.lo, self.hi + rhs.hi);
        for i in 0..self.rows {
            for j in self.row_support(i) {
                let a = self.get(i, j);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for l in rhs.row_support(j) {
                    out.add_to(i, l, a * rhs.get(j, l));
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row_support(i).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Largest |i - j| over entries with magnitude above `threshold`.
    pub fn numerical_band(&self, threshold: f64) -> usize {
        let mut band = 0;
        for i in 0..self.rows {
            for j in self.row_support(i) {
                if self.get(i, j).norm() > threshold {
                    band = band.max(i.abs_diff(j));
                }
            }
        }
        band
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

/// Valid-mode convolution matrix: row `r` computes Σ_ℓ taps[ℓ]·input[r + len - 1 - ℓ].
///
/// For channel taps and an input of length K + 2L this is H ∈ C^{(K+L)×(K+2L)}.
pub fn build_convolution_matrix(taps: &[Complex64], input_length: usize) -> Result<BandMatrix> {
    if taps.is_empty() {
        return Err(Error::Argument("convolution taps are empty".into()));
    }
    if input_length + 1 < taps.len() {
        return Err(Error::Argument("input shorter than the filter".into()));
    }
    let memory = taps.len() - 1;
    Ok(BandMatrix::toeplitz(
        taps,
        input_length - memory,
        input_length,
        memory as isize,
    ))
}

/// Channel matrix H for a block of `block_len` symbols.
pub fn channel_matrix(ch: &ChannelModel, block_len: usize) -> BandMatrix {
    build_convolution_matrix(ch.taps(), block_len + 2 * ch.memory()).expect("valid channel")
}

/// A real FIR preprocessor with a fixed alignment.
///
/// Output position k computes x̃_k = Σ_t p_t · y_{k + advance - t}, so the
/// filter looks `advance` samples into the future. `advance = 0` is a causal
/// zero-delay filter; `advance = L_p - 1` with `p` the reversed conjugate
/// channel reproduces the matched filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub taps: Vec<f64>,
    pub advance: usize,
}

impl Preprocessor {
    pub fn new(taps: Vec<f64>, advance: usize) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Argument("preprocessor needs at least one tap".into()));
        }
        Ok(Preprocessor { taps, advance })
    }

    pub fn causal(taps: Vec<f64>) -> Result<Self> {
        Self::new(taps, 0)
    }

    /// Default alignment: centres the filter window on the channel's matched-filter window.
    pub fn default_advance(len: usize, memory: usize) -> usize {
        (len - 1 + memory) / 2
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Band of G̃ = P·H implied by the supports of p and h.
    pub fn structural_band(&self, memory: usize) -> usize {
        let span = memory + self.taps.len() - 1;
        self.advance.max(span.saturating_sub(self.advance))
    }

    /// The (K+2L)×(K+L) matrix P.
    pub fn matrix(&self, memory: usize, block_len: usize) -> BandMatrix {
        let taps: Vec<Complex64> = self.taps.iter().map(|&t| Complex64::new(t, 0.0)).collect();
        // entry(i, j) = p[i - j + advance - L]
        BandMatrix::toeplitz(
            &taps,
            block_len + 2 * memory,
            block_len + memory,
            self.advance as isize - memory as isize,
        )
    }

    /// Gradient with respect to the taps given gradients of x̃ and G̃.
    ///
    /// Complex gradients follow the convention g = ∂ℓ/∂Re + i·∂ℓ/∂Im, so the
    /// derivative through a real tap is Re(conj(g)·∂z/∂p).
    pub fn backward(
        &self,
        h: &BandMatrix,
        observations: &[Complex64],
        grad_x: &[Complex64],
        grad_g: &BandMatrix,
    ) -> Vec<f64> {
        let memory = h.cols() - h.rows();
        let rows = h.cols();
        let mut grad = vec![0.0; self.taps.len()];
        for (t, gt) in grad.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..rows {
                // j = i + advance - L - t
                let j = i as isize + self.advance as isize - memory as isize - t as isize;
                if j < 0 || j as usize >= observations.len() {
                    continue;
                }
                let j = j as usize;
                acc += (grad_x[i].conj() * observations[j]).re;
                for l in h.row_support(j) {
                    acc += (grad_g.get(i, l).conj() * h.get(j, l)).re;
                }
            }
            *gt = acc;
        }
        grad
    }
}

/// The pair (G̃, x̃) with its numerical half-bandwidth.
#[derive(Clone, Debug)]
pub struct ObservationModel {
    pub gmat: BandMatrix,
    pub x: Vec<Complex64>,
    pub band: usize,
}

impl ObservationModel {
    /// Applies an arbitrary preprocessing matrix P: G̃ = P·H, x̃ = P·y.
    pub fn from_preprocessor_matrix(
        p: &BandMatrix,
        h: &BandMatrix,
        observations: &[Complex64],
    ) -> Result<Self> {
        if observations.len() != h.rows() || p.cols() != h.rows() || p.rows() != h.cols() {
            return Err(Error::Argument(format!(
                "shape mismatch: P {}x{}, H {}x{}, y {}",
                p.rows(),
                p.cols(),
                h.rows(),
                h.cols(),
                observations.len()
            )));
        }
        let gmat = p.matmul(h);
        let x = p.matvec(observations);
        let band = gmat.numerical_band(BAND_ZERO_THRESHOLD);
        Ok(ObservationModel { gmat, x, band })
    }
}

fn block_len_of(ch: &ChannelModel, observations: &[Complex64]) -> Result<usize> {
    let memory = ch.memory();
    if observations.len() <= memory {
        return Err(Error::Argument(format!(
            "expected K + {memory} observations with K >= 1, got {}",
            observations.len()
        )));
    }
    Ok(observations.len() - memory)
}

/// Ungerboeck model G = HᴴH, x = Hᴴy.
pub fn matched_filter_model(ch: &ChannelModel, observations: &[Complex64]) -> Result<ObservationModel> {
    let k = block_len_of(ch, observations)?;
    let h = channel_matrix(ch, k);
    ObservationModel::from_preprocessor_matrix(&h.conj_transpose(), &h, observations)
}

/// Generalized model G̃ = P·H, x̃ = P·y for an FIR preprocessor.
pub fn preprocessed_model(
    pre: &Preprocessor,
    ch: &ChannelModel,
    observations: &[Complex64],
) -> Result<ObservationModel> {
    let k = block_len_of(ch, observations)?;
    let h = channel_matrix(ch, k);
    ObservationModel::from_preprocessor_matrix(&pre.matrix(ch.memory(), k), &h, observations)
}
