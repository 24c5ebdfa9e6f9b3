//! Matched-filter receiver, carrier recovery and quality metrics.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{awgn_channel, generate_waveform, matched_samples, rotate, rrc_taps, Constellation, ModemError, WaveformSpec};
use crate::derive_seed;

/// Blind recovery is flagged as diverged above this RMS EVM.
pub const DIVERGENCE_EVM: f64 = 0.5;
/// Symbols used for the blind fourth-power phase estimate.
const COARSE_SYMBOLS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recovery {
    /// Least-squares complex gain against the known symbols.
    Reference,
    /// Fourth-power acquisition followed by a decision-directed PLL; the
    /// reference only resolves the 90° ambiguity and scores errors.
    Blind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkQualityReport {
    /// Error power relative to the mean symbol power.
    pub evm_rms_pct: f64,
    /// Error power relative to the peak symbol power.
    pub evm_peak_pct: f64,
    pub snr_estimate_db: f64,
    pub ser: f64,
    pub ber: f64,
    pub n_symbols: u64,
    pub symbol_errors: u64,
    pub bit_errors: u64,
    /// Recovered carrier phase, degrees.
    pub carrier_phase_deg: f64,
    pub recovery: Recovery,
    pub diverged: bool,
}

/// Sufficient statistics that combine across Monte-Carlo batches.
#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    error_energy: f64,
    reference_energy: f64,
    symbols: u64,
    symbol_errors: u64,
    bit_errors: u64,
    phasor: Complex64,
}

type BatchOut = (Stats, Vec<(Complex64, u32)>);

impl Stats {
    fn merge(self, o: Stats) -> Stats {
        Stats {
            error_energy: self.error_energy + o.error_energy,
            reference_energy: self.reference_energy + o.reference_energy,
            symbols: self.symbols + o.symbols,
            symbol_errors: self.symbol_errors + o.symbol_errors,
            bit_errors: self.bit_errors + o.bit_errors,
            phasor: self.phasor + o.phasor,
        }
    }

    fn report(&self, c: &Constellation, recovery: Recovery) -> LinkQualityReport {
        let n = self.symbols.max(1) as f64;
        let evm_rms = (self.error_energy / self.reference_energy).sqrt();
        let evm_peak = (self.error_energy / n / c.papr()).sqrt() / (self.reference_energy / n).sqrt();
        LinkQualityReport {
            evm_rms_pct: 100.0 * evm_rms,
            evm_peak_pct: 100.0 * evm_peak,
            snr_estimate_db: -20.0 * evm_rms.log10(),
            ser: self.symbol_errors as f64 / n,
            ber: self.bit_errors as f64 / (n * c.bits_per_symbol() as f64),
            n_symbols: self.symbols,
            symbol_errors: self.symbol_errors,
            bit_errors: self.bit_errors,
            carrier_phase_deg: self.phasor.arg().to_degrees(),
            recovery,
            diverged: evm_rms > DIVERGENCE_EVM,
        }
    }
}

/// Receiver output for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    pub report: LinkQualityReport,
    /// Gain- and phase-corrected symbol-rate samples.
    pub equalized: Vec<Complex64>,
    pub decisions: Vec<u32>,
}

fn recover_reference(y: &[Complex64], reference: &[Complex64]) -> (Vec<Complex64>, Complex64) {
    let num: Complex64 = y.iter().zip(reference).map(|(a, s)| a * s.conj()).sum();
    let den: f64 = reference.iter().map(|s| s.norm_sqr()).sum();
    let g = num / den;
    (y.iter().map(|v| v / g).collect(), g)
}

/// Second-order decision-directed loop over `y`; calls `emit` with each
/// derotated sample and the phase used for it, returns the final state.
fn track<'a>(
    y: impl Iterator<Item = &'a Complex64>,
    c: &Constellation,
    amp: f64,
    theta0: f64,
    freq0: f64,
    mut emit: impl FnMut(Complex64, f64),
) -> (f64, f64) {
    let (kp, ki) = (0.01, 5e-5);
    let mut theta = theta0;
    let mut freq = freq0;
    for v in y {
        let zk = v * Complex64::from_polar(1.0 / amp, -theta);
        emit(zk, theta);
        let d = c.point(c.decide(zk));
        let err = (zk * d.conj()).im / d.norm_sqr().max(1e-12);
        freq += ki * err;
        theta += kp * err + freq;
    }
    (theta, freq)
}

fn recover_blind(y: &[Complex64], c: &Constellation, reference: &[u32]) -> (Vec<Complex64>, Complex64) {
    let head = &y[..y.len().min(COARSE_SYMBOLS)];
    let m4: Complex64 = head.iter().map(|v| v.powi(4)).sum::<Complex64>() / c.fourth_moment();
    let coarse = m4.arg() / 4.0;
    let amp = (y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64).sqrt();

    // Forward pass acquires; the backward pass starts from the locked state
    // so the acquisition transient does not reach the output.
    let (theta_end, freq_end) = track(y.iter(), c, amp, coarse, 0.0, |_, _| {});
    let mut z = vec![Complex64::new(0.0, 0.0); y.len()];
    let mut phase_sum = Complex64::new(0.0, 0.0);
    let mut k = y.len();
    track(y.iter().rev(), c, amp, theta_end, -freq_end, |zk, theta| {
        k -= 1;
        z[k] = zk;
        phase_sum += Complex64::from_polar(1.0, theta);
    });
    let theta = phase_sum.arg();

    // Residual gain against the decisions, then the quarter-turn that best
    // matches the reference.
    let decisions: Vec<Complex64> = z.iter().map(|v| c.point(c.decide(*v))).collect();
    let (z, g) = recover_reference(&z, &decisions);
    let turn = (0..4)
        .max_by_key(|&k| {
            let r = Complex64::new(0.0, 1.0).powi(k);
            z.iter()
                .zip(reference)
                .filter(|(v, &l)| c.decide(*v * r) == l)
                .count()
        })
        .unwrap_or(0);
    let r = Complex64::new(0.0, 1.0).powi(turn);
    let total = g * Complex64::from_polar(amp, theta) / r;
    (z.into_iter().map(|v| v * r).collect(), total)
}

fn score(z: &[Complex64], labels: &[u32], c: &Constellation) -> (Stats, Vec<u32>) {
    let mut s = Stats {
        symbols: z.len() as u64,
        ..Stats::default()
    };
    let mut decisions = Vec::with_capacity(z.len());
    for (v, &l) in z.iter().zip(labels) {
        let want = c.point(l);
        s.error_energy += (v - want).norm_sqr();
        s.reference_energy += want.norm_sqr();
        let d = c.decide(*v);
        if d != l {
            s.symbol_errors += 1;
            s.bit_errors += (d ^ l).count_ones() as u64;
        }
        decisions.push(d);
    }
    (s, decisions)
}

fn demodulate_stats(
    samples: &[Complex64],
    spec: &WaveformSpec,
    reference: &[u32],
    recovery: Recovery,
) -> Result<(Stats, Vec<Complex64>, Vec<u32>), ModemError> {
    spec.validate()?;
    let c = Constellation::new(spec.modulation_order)?;
    let taps = rrc_taps(spec.rolloff, spec.samples_per_symbol);
    let n = reference.len();
    let needed = (n.max(1) - 1) * spec.samples_per_symbol + taps.len();
    if samples.len() < needed {
        return Err(ModemError::ReferenceLength {
            expected: (samples.len() + 1).saturating_sub(taps.len()) / spec.samples_per_symbol + 1,
            got: n,
        });
    }
    let y = matched_samples(samples, &taps, spec.samples_per_symbol, n);
    let (z, g) = match recovery {
        Recovery::Reference => {
            let syms: Vec<Complex64> = reference.iter().map(|&l| c.point(l)).collect();
            recover_reference(&y, &syms)
        }
        Recovery::Blind => recover_blind(&y, &c, reference),
    };
    let (mut stats, decisions) = score(&z, reference, &c);
    stats.phasor = Complex64::from_polar(n as f64, g.arg());
    Ok((stats, z, decisions))
}

/// Matched filtering, carrier recovery and scoring against the transmitted
/// labels.
pub fn demodulate(
    samples: &[Complex64],
    spec: &WaveformSpec,
    reference: &[u32],
    recovery: Recovery,
) -> Result<Demodulated, ModemError> {
    let (stats, equalized, decisions) = demodulate_stats(samples, spec, reference, recovery)?;
    let c = Constellation::new(spec.modulation_order)?;
    Ok(Demodulated {
        report: stats.report(&c, recovery),
        equalized,
        decisions,
    })
}

/// Channel applied in a Monte-Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub snr_db: f64,
    pub phase_deg: f64,
    /// Carrier frequency error as a fraction of the symbol rate.
    pub frequency_offset: f64,
}

impl ChannelSpec {
    pub fn awgn(snr_db: f64) -> Self {
        Self {
            snr_db,
            phase_deg: 0.0,
            frequency_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub report: LinkQualityReport,
    /// Equalized samples and decisions from the first batch.
    pub constellation: Vec<(Complex64, u32)>,
}

/// Runs `spec.n_symbols` symbols through the channel in batches of
/// `batch_symbols`, each with seeds derived from `spec.seed`, and pools the
/// statistics. Batches run in parallel; pooling is in batch order.
pub fn run_monte_carlo(
    spec: &WaveformSpec,
    channel: &ChannelSpec,
    recovery: Recovery,
    batch_symbols: usize,
    dump_symbols: usize,
) -> Result<MonteCarloResult, ModemError> {
    spec.validate()?;
    if batch_symbols == 0 {
        return Err(super::invalid("batch_symbols", "must be ≥ 1"));
    }
    let c = Constellation::new(spec.modulation_order)?;
    let batches = spec.n_symbols.div_ceil(batch_symbols);
    let results: Vec<Result<BatchOut, ModemError>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let n = batch_symbols.min(spec.n_symbols - b * batch_symbols);
            let batch = WaveformSpec {
                n_symbols: n,
                seed: derive_seed(spec.seed, 2 * b as u64),
                ..*spec
            };
            let w = generate_waveform(&batch)?;
            let offset = channel.frequency_offset / spec.samples_per_symbol as f64;
            let tx = if channel.phase_deg != 0.0 || offset != 0.0 {
                rotate(&w.samples, channel.phase_deg, offset)
            } else {
                w.samples
            };
            let rx = awgn_channel(
                &tx,
                channel.snr_db,
                spec.samples_per_symbol,
                derive_seed(spec.seed, 2 * b as u64 + 1),
            );
            let (stats, z, d) = demodulate_stats(&rx, &batch, &w.labels, recovery)?;
            let dump = if b == 0 {
                z.into_iter().zip(d).take(dump_symbols).collect()
            } else {
                Vec::new()
            };
            Ok((stats, dump))
        })
        .collect();
    let mut total = Stats::default();
    let mut constellation = Vec::new();
    for r in results {
        let (s, dump) = r?;
        total = total.merge(s);
        if constellation.is_empty() {
            constellation = dump;
        }
    }
    Ok(MonteCarloResult {
        report: total.report(&c, recovery),
        constellation,
    })
}

#[derive(Serialize)]
struct ConstellationRow {
    symbol_index: usize,
    i: f64,
    q: f64,
    decided_symbol: u32,
}

/// `symbol_index,i,q,decided_symbol`.
pub fn write_constellation_csv<W: Write>(points: &[(Complex64, u32)], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for (k, (z, d)) in points.iter().enumerate() {
        w.serialize(ConstellationRow {
            symbol_index: k,
            i: z.re,
            q: z.im,
            decided_symbol: *d,
        })?;
    }
    w.flush()?;
    Ok(())
}
