//! Single-carrier QAM modem: waveform generation, frequency plan, AWGN
//! channel and demodulation with EVM/SER/BER.
//!
//! The simulation is synchronous. Symbols are shaped with a root-raised
//! cosine, the channel adds complex Gaussian noise (plus an optional carrier
//! phase/frequency error), and the receiver samples the matched filter at
//! the known symbol instants.
//!
//! SNR is `Es/N0` at the matched-filter output, which equals the in-band
//! SNR over the RRC noise bandwidth (the symbol rate). With that convention
//! the data-aided RMS EVM is `10^(−SNR/20)`.

mod channel;
mod constellation;
mod demod;
mod plan;
mod rrc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channel::{awgn_channel, rotate};
pub use constellation::Constellation;
pub use demod::{
    demodulate, run_monte_carlo, write_constellation_csv, ChannelSpec, Demodulated, LinkQualityReport,
    MonteCarloResult, Recovery,
};
pub use plan::{validate_plan, DerivedPlan, FrequencyPlan, Sideband};
pub use rrc::{matched_samples, rrc_taps, shape, SPAN_SYMBOLS};

/// Analog bandwidth available to the waveform, Hz.
pub const SYSTEM_BANDWIDTH_HZ: f64 = 1.5e9;

#[derive(Debug, Error, PartialEq)]
pub enum ModemError {
    #[error("modulation order {0} is not one of 4, 16, 32, 64")]
    UnsupportedOrder(u32),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("occupied bandwidth {occupied_hz} Hz exceeds the {limit_hz} Hz system bandwidth")]
    BandwidthExceeded { occupied_hz: f64, limit_hz: f64 },
    #[error("LO1 equals IF1")]
    DegeneratePlan,
    #[error("image at {image_hz} Hz falls inside the passband at {rf_hz} Hz")]
    ImageInBand { image_hz: f64, rf_hz: f64 },
    #[error("RF {rf_hz} Hz misses the {target_hz} Hz target")]
    RfOffTarget { rf_hz: f64, target_hz: f64 },
    #[error("IF2 of {if2_hz} Hz is not above half the occupied bandwidth")]
    If2TooLow { if2_hz: f64 },
    #[error("{got} reference symbols for {expected} received")]
    ReferenceLength { expected: usize, got: usize },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModemError {
    ModemError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub modulation_order: u32,
    pub symbol_rate_baud: f64,
    pub rolloff: f64,
    pub samples_per_symbol: usize,
    pub n_symbols: usize,
    pub seed: u64,
}

impl Default for WaveformSpec {
    fn default() -> Self {
        Self {
            modulation_order: 32,
            symbol_rate_baud: 400e6,
            rolloff: 0.35,
            samples_per_symbol: 4,
            n_symbols: 100_000,
            seed: 1,
        }
    }
}

impl WaveformSpec {
    pub fn occupied_bandwidth_hz(&self) -> f64 {
        self.symbol_rate_baud * (1.0 + self.rolloff)
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.modulation_order.trailing_zeros()
    }

    pub fn bit_rate(&self) -> f64 {
        self.symbol_rate_baud * self.bits_per_symbol() as f64
    }

    pub fn validate(&self) -> Result<(), ModemError> {
        Constellation::new(self.modulation_order)?;
        if !(self.symbol_rate_baud.is_finite() && self.symbol_rate_baud > 0.0) {
            return Err(invalid("symbol_rate_baud", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(invalid("rolloff", "must lie in [0, 1]"));
        }
        if self.samples_per_symbol < 4 {
            return Err(invalid("samples_per_symbol", "must be ≥ 4"));
        }
        if self.n_symbols == 0 {
            return Err(invalid("n_symbols", "must be ≥ 1"));
        }
        let occupied = self.occupied_bandwidth_hz();
        if occupied > SYSTEM_BANDWIDTH_HZ {
            return Err(ModemError::BandwidthExceeded {
                occupied_hz: occupied,
                limit_hz: SYSTEM_BANDWIDTH_HZ,
            });
        }
        Ok(())
    }
}

/// Shaped samples together with the transmitted symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    /// Bit labels of the transmitted symbols.
    pub labels: Vec<u32>,
    pub symbols: Vec<Complex64>,
}

/// Shapes a given label sequence.
pub fn waveform_from_labels(spec: &WaveformSpec, labels: &[u32]) -> Result<Waveform, ModemError> {
    spec.validate()?;
    let c = Constellation::new(spec.modulation_order)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= spec.modulation_order) {
        return Err(invalid("labels", format!("label {bad} exceeds the alphabet")));
    }
    let symbols: Vec<Complex64> = labels.iter().map(|&l| c.point(l)).collect();
    let taps = rrc_taps(spec.rolloff, spec.samples_per_symbol);
    Ok(Waveform {
        samples: shape(&symbols, &taps, spec.samples_per_symbol),
        labels: labels.to_vec(),
        symbols,
    })
}

/// Random symbols drawn from `spec.seed`, shaped.
pub fn generate_waveform(spec: &WaveformSpec) -> Result<Waveform, ModemError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<u32> = (0..spec.n_symbols)
        .map(|_| rng.random_range(0..spec.modulation_order))
        .collect();
    waveform_from_labels(spec, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qpsk_zero_bits_is_constant() {
        let spec = WaveformSpec {
            modulation_order: 4,
            n_symbols: 64,
            ..WaveformSpec::default()
        };
        let w = waveform_from_labels(&spec, &[0; 64]).unwrap();
        assert!(w.symbols.iter().all(|s| *s == w.symbols[0]));
        let taps = rrc_taps(spec.rolloff, spec.samples_per_symbol);
        let y = matched_samples(&w.samples, &taps, spec.samples_per_symbol, 64);
        assert!(y[20..44].iter().all(|v| (v - w.symbols[0]).norm() < 1e-3));
    }

    #[test]
    fn rates() {
        let spec = WaveformSpec::default();
        assert_eq!(spec.bits_per_symbol(), 5);
        assert_eq!(spec.bit_rate(), 2e9);
        assert!((spec.occupied_bandwidth_hz() - 540e6).abs() < 1.0);
    }

    #[test]
    fn spec_validation() {
        let too_wide = WaveformSpec {
            symbol_rate_baud: 1.2e9,
            ..WaveformSpec::default()
        };
        assert!(matches!(too_wide.validate(), Err(ModemError::BandwidthExceeded { .. })));
        let bad = WaveformSpec {
            modulation_order: 128,
            ..WaveformSpec::default()
        };
        assert_eq!(bad.validate(), Err(ModemError::UnsupportedOrder(128)));
        let sps = WaveformSpec {
            samples_per_symbol: 2,
            ..WaveformSpec::default()
        };
        assert!(sps.validate().is_err());
    }

    #[test]
    fn deterministic_generation() {
        let spec = WaveformSpec {
            n_symbols: 500,
            ..WaveformSpec::default()
        };
        assert_eq!(generate_waveform(&spec).unwrap(), generate_waveform(&spec).unwrap());
        let other = WaveformSpec { seed: 2, ..spec };
        assert_ne!(generate_waveform(&spec).unwrap().labels, generate_waveform(&other).unwrap().labels);
    }
}
