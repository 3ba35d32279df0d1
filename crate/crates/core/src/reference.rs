//! Exact and linear baseline detectors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{ChannelModel, TransmissionFrame, BOUNDARY_SYMBOL};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::spa::logsumexp;

/// Largest trellis (states) accepted by [`bcjr_map`].
pub const MAX_TRELLIS_STATES: u128 = 10_000_000;
/// Largest stored forward-recursion table (states × steps).
pub const MAX_TRELLIS_CELLS: u128 = 200_000_000;
/// Largest number of sequences enumerated by [`brute_force_app`].
pub const MAX_SEQUENCES: u128 = 10_000_000;

fn normalize_log(values: &[f64]) -> Vec<f64> {
    let z = logsumexp(values);
    values.iter().map(|v| (v - z).exp()).collect()
}

/// Symbol-wise MAP posteriors by log-domain forward/backward recursion over
/// the `M^L`-state channel trellis.
pub fn bcjr_map(
    frame: &TransmissionFrame,
    ch: &ChannelModel,
    cons: &Constellation,
) -> Result<Vec<Vec<f64>>> {
    let m = cons.size();
    let memory = ch.memory();
    let block_len = frame.block_len();
    let steps = block_len + memory;
    if frame.observations.len() != steps {
        return Err(Error::Argument("frame does not match the channel memory".into()));
    }
    let states = (m as u128).pow(memory as u32);
    if states > MAX_TRELLIS_STATES {
        return Err(Error::Capability(format!(
            "trellis with {m}^{memory} states exceeds {MAX_TRELLIS_STATES}"
        )));
    }
    if states * (steps as u128 + 1) > MAX_TRELLIS_CELLS {
        return Err(Error::Capability(format!(
            "trellis of {states} states over {steps} steps exceeds the memory budget"
        )));
    }
    let states = states as usize;
    let sigma2 = frame.sigma2;
    if !(sigma2 > 0.0) {
        return Err(Error::Argument("BCJR needs a positive noise variance".into()));
    }
    let taps = ch.taps();
    let points = cons.points();
    let top = if memory == 0 { 1 } else { states / m };
    // State s encodes (c_{k-1}, …, c_{k-L}) with c_{k-1} most significant.
    let tail: Vec<Complex64> = (0..states)
        .map(|s| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut rem = s;
            for l in (1..=memory).rev() {
                acc += taps[l] * points[rem % m];
                rem /= m;
            }
            acc
        })
        .collect();
    let next = |s: usize, c: usize| if memory == 0 { 0 } else { c * top + s / m };
    let inputs = |k: usize| -> std::ops::Range<usize> {
        if k <= block_len {
            0..m
        } else {
            BOUNDARY_SYMBOL..BOUNDARY_SYMBOL + 1
        }
    };
    let boundary_state = (0..memory).fold(0, |s, _| s * m + BOUNDARY_SYMBOL);
    let gamma = |k: usize, s: usize, c: usize| -> f64 {
        let y = frame.observations[k - 1];
        -(y - taps[0] * points[c] - tail[s]).norm_sqr() / sigma2
    };

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; (steps + 1) * states];
    alpha[boundary_state] = 0.0;
    let mut terms: Vec<Vec<f64>> = vec![Vec::with_capacity(m); states];
    for k in 1..=steps {
        terms.iter_mut().for_each(Vec::clear);
        let prev = &alpha[(k - 1) * states..k * states];
        for (s, &a) in prev.iter().enumerate() {
            if a == neg {
                continue;
            }
            for c in inputs(k) {
                terms[next(s, c)].push(a + gamma(k, s, c));
            }
        }
        let cur = &mut alpha[k * states..(k + 1) * states];
        for (dst, t) in cur.iter_mut().zip(&terms) {
            *dst = if t.is_empty() { neg } else { logsumexp(t) };
        }
        // rescale to keep magnitudes bounded
        let mx = cur.iter().copied().fold(neg, f64::max);
        cur.iter_mut().for_each(|v| *v -= mx);
    }

    let mut beta = vec![neg; states];
    beta[boundary_state] = 0.0;
    let mut out = vec![Vec::new(); block_len];
    let mut per_symbol: Vec<Vec<f64>> = vec![Vec::with_capacity(states); m];
    let mut acc: Vec<f64> = Vec::with_capacity(m);
    for k in (1..=steps).rev() {
        let prev = &alpha[(k - 1) * states..k * states];
        let mut new_beta = vec![neg; states];
        per_symbol.iter_mut().for_each(Vec::clear);
        for (s, &a) in prev.iter().enumerate() {
            acc.clear();
            for c in inputs(k) {
                let b = beta[next(s, c)];
                if b == neg {
                    continue;
                }
                let g = gamma(k, s, c);
                acc.push(g + b);
                if k <= block_len && a != neg {
                    per_symbol[c].push(a + g + b);
                }
            }
            if !acc.is_empty() {
                new_beta[s] = logsumexp(&acc);
            }
        }
        if k <= block_len {
            let lp: Vec<f64> = per_symbol
                .iter()
                .map(|t| if t.is_empty() { neg } else { logsumexp(t) })
                .collect();
            out[k - 1] = normalize_log(&lp);
        }
        let mx = new_beta.iter().copied().fold(neg, f64::max);
        new_beta.iter_mut().for_each(|v| *v -= mx);
        beta = new_beta;
    }
    Ok(out)
}

/// Exact posteriors by enumerating every data sequence.
pub fn brute_force_app(
    frame: &TransmissionFrame,
    ch: &ChannelModel,
    cons: &Constellation,
) -> Result<Vec<Vec<f64>>> {
    let m = cons.size();
    let block_len = frame.block_len();
    let total = (m as u128).checked_pow(block_len as u32).unwrap_or(u128::MAX);
    if total > MAX_SEQUENCES {
        return Err(Error::Capability(format!(
            "{m}^{block_len} sequences exceed {MAX_SEQUENCES}"
        )));
    }
    if !(frame.sigma2 > 0.0) {
        return Err(Error::Argument("brute force needs a positive noise variance".into()));
    }
    let total = total as usize;
    let memory = ch.memory();
    let taps = ch.taps();
    let boundary = cons.point(BOUNDARY_SYMBOL);
    let mut seq = vec![boundary; block_len + 2 * memory];
    let mut digits = vec![0usize; block_len];
    let mut loglik = Vec::with_capacity(total);
    for a in 0..total {
        let mut rem = a;
        for k in 0..block_len {
            digits[k] = rem % m;
            rem /= m;
            seq[k + memory] = cons.point(digits[k]);
        }
        let mut ll = 0.0;
        for (row, y) in frame.observations.iter().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for (l, h) in taps.iter().enumerate() {
                s += h * seq[row + memory - l];
            }
            ll -= (y - s).norm_sqr() / frame.sigma2;
        }
        loglik.push(ll);
    }
    let mx = loglik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut marg = vec![vec![0.0; m]; block_len];
    for (a, ll) in loglik.iter().enumerate() {
        let w = (ll - mx).exp();
        let mut rem = a;
        for row in marg.iter_mut() {
            row[rem % m] += w;
            rem /= m;
        }
    }
    for row in marg.iter_mut() {
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= z);
    }
    Ok(marg)
}

/// A designed linear MMSE equalizer and its output for one frame.
#[derive(Clone, Debug)]
pub struct MmseOutput {
    /// Filter w; the estimate of `c_{k-delay}` is wᴴ·(y_k, y_{k-1}, …).
    pub filter: Vec<Complex64>,
    pub delay: usize,
    /// Mean squared error of the design.
    pub mse: f64,
    pub estimates: Vec<Complex64>,
    pub decisions: Vec<usize>,
}

fn window_channel(taps: &[Complex64], order: usize) -> DMatrix<Complex64> {
    let memory = taps.len() - 1;
    let mut hw = DMatrix::<Complex64>::zeros(order, order + memory);
    for i in 0..order {
        for (l, &h) in taps.iter().enumerate() {
            hw[(i, i + l)] = h;
        }
    }
    hw
}

fn window_covariance(taps: &[Complex64], order: usize, sigma2: f64) -> DMatrix<Complex64> {
    let hw = window_channel(taps, order);
    let mut r = &hw * hw.adjoint();
    for i in 0..order {
        r[(i, i)] += Complex64::new(sigma2, 0.0);
    }
    r
}

/// Mean squared error E|wᴴY − c_{k−delay}|² for unit-energy i.i.d. symbols.
pub fn analytic_mse(ch: &ChannelModel, sigma2: f64, filter: &[Complex64], delay: usize) -> f64 {
    let order = filter.len();
    let hw = window_channel(ch.taps(), order);
    let r = window_covariance(ch.taps(), order, sigma2);
    let w = DVector::from_column_slice(filter);
    let p = hw.column(delay).into_owned();
    let quad = (w.adjoint() * &r * &w)[(0, 0)].re;
    let cross = (w.adjoint() * &p)[(0, 0)].re;
    quad - 2.0 * cross + 1.0
}

/// Designs the length-`order` Wiener filter with the best decision delay.
pub fn mmse_design(ch: &ChannelModel, sigma2: f64, order: usize) -> Result<(Vec<Complex64>, usize, f64)> {
    if order == 0 {
        return Err(Error::Argument("MMSE filter order must be at least 1".into()));
    }
    let taps = ch.taps();
    let hw = window_channel(taps, order);
    let r = window_covariance(taps, order, sigma2);
    let scale = (0..order).map(|i| r[(i, i)].re).fold(0.0, f64::max);
    let chol = r
        .cholesky()
        .filter(|c| {
            // complex square roots never fail, so check definiteness on the factor
            let l = c.l_dirty();
            (0..order).all(|i| l[(i, i)].re > 1e-9 * scale.sqrt() && l[(i, i)].im.abs() < 1e-12)
        })
        .ok_or_else(|| Error::Numerical("observation covariance is singular".into()))?;
    let mut best: Option<(Vec<Complex64>, usize, f64)> = None;
    for delay in 0..order + ch.memory() {
        let p = hw.column(delay).into_owned();
        let w = chol.solve(&p);
        let mse = 1.0 - (p.adjoint() * &w)[(0, 0)].re;
        if best.as_ref().map_or(true, |b| mse < b.2) {
            best = Some((w.iter().copied().collect(), delay, mse));
        }
    }
    Ok(best.expect("at least one delay"))
}

/// Linear MMSE equalization followed by nearest-point slicing.
pub fn mmse_equalize(
    frame: &TransmissionFrame,
    ch: &ChannelModel,
    cons: &Constellation,
    order: usize,
) -> Result<MmseOutput> {
    let (filter, delay, mse) = mmse_design(ch, frame.sigma2, order)?;
    let y = &frame.observations;
    let sample = |k: isize| -> Complex64 {
        if k >= 1 && (k as usize) <= y.len() {
            y[k as usize - 1]
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let estimates: Vec<Complex64> = (1..=frame.block_len() as isize)
        .map(|j| {
            let k = j + delay as isize;
            filter
                .iter()
                .enumerate()
                .map(|(i, w)| w.conj() * sample(k - i as isize))
                .sum()
        })
        .collect();
    let decisions = estimates.iter().map(|&z| cons.nearest(z)).collect();
    Ok(MmseOutput {
        filter,
        delay,
        mse,
        estimates,
        decisions,
    })
}
