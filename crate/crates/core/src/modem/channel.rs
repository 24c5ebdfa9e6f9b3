use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Adds circular complex Gaussian noise for an `Es/N0` of `snr_db`.
///
/// The symbol energy is estimated from the samples as mean power times
/// `samples_per_symbol`, so the result does not depend on the waveform
/// scaling.
pub fn awgn_channel(samples: &[Complex64], snr_db: f64, samples_per_symbol: usize, seed: u64) -> Vec<Complex64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let power = samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64;
    let es = power * samples_per_symbol as f64;
    let sigma = (es / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            s + Complex64::new(sigma * re, sigma * im)
        })
        .collect()
}

/// Applies a carrier phase (degrees) and a frequency offset given as a
/// fraction of the sample rate.
pub fn rotate(samples: &[Complex64], phase_deg: f64, offset_cycles_per_sample: f64) -> Vec<Complex64> {
    let p0 = phase_deg.to_radians();
    let w = 2.0 * std::f64::consts::PI * offset_cycles_per_sample;
    samples
        .iter()
        .enumerate()
        .map(|(n, s)| s * Complex64::from_polar(1.0, p0 + w * n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_variance_matches_snr() {
        let x = vec![Complex64::new(0.5, 0.0); 200_000];
        let y = awgn_channel(&x, 10.0, 4, 3);
        let var = y.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / x.len() as f64;
        let want = 0.25 * 4.0 / 10.0;
        assert!((var / want - 1.0).abs() < 0.01);
        assert_eq!(y, awgn_channel(&x, 10.0, 4, 3));
    }

    #[test]
    fn huge_snr_is_transparent() {
        let x = vec![Complex64::new(0.3, -0.2); 1000];
        let y = awgn_channel(&x, 120.0, 4, 0);
        assert!(y.iter().zip(&x).all(|(a, b)| (a - b).norm() < 1e-5));
    }
}
