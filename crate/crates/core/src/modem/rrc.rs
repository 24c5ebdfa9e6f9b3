//! Root-raised-cosine pulse shaping.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Filter span on each side of the center, in symbols.
pub const SPAN_SYMBOLS: usize = 16;

/// RRC taps over ±[`SPAN_SYMBOLS`] with unit energy, so a transmit/receive
/// pair has unit gain at the symbol instants.
pub fn rrc_taps(rolloff: f64, samples_per_symbol: usize) -> Vec<f64> {
    let sps = samples_per_symbol as f64;
    let half = SPAN_SYMBOLS * samples_per_symbol;
    let b = rolloff;
    let mut taps: Vec<f64> = (0..=2 * half)
        .map(|n| {
            let t = (n as f64 - half as f64) / sps;
            if t == 0.0 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && ((4.0 * b * t).abs() - 1.0).abs() < 1e-12 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
                let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let scale = energy.sqrt().recip();
    taps.iter_mut().for_each(|h| *h *= scale);
    taps
}

/// Upsamples `symbols` by `sps` and filters with `taps`; the output has the
/// full convolution length `(n − 1)·sps + taps.len()`.
pub fn shape(symbols: &[Complex64], taps: &[f64], sps: usize) -> Vec<Complex64> {
    if symbols.is_empty() {
        return Vec::new();
    }
    let len = (symbols.len() - 1) * sps + taps.len();
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (k, s) in symbols.iter().enumerate() {
        let base = k * sps;
        for (j, h) in taps.iter().enumerate() {
            out[base + j] += s * h;
        }
    }
    out
}

/// Matched filter evaluated only at the symbol instants of a waveform
/// produced by [`shape`] with the same taps.
pub fn matched_samples(samples: &[Complex64], taps: &[f64], sps: usize, n_symbols: usize) -> Vec<Complex64> {
    let delay = taps.len() - 1;
    (0..n_symbols)
        .map(|k| {
            let center = delay + k * sps;
            // y[c] = Σ_j h[j]·x[c − j]
            taps.iter()
                .enumerate()
                .filter_map(|(j, h)| center.checked_sub(j).and_then(|i| samples.get(i)).map(|x| x * h))
                .sum()
        })
        .collect()
}
