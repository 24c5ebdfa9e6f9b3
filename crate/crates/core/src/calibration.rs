//! Vector-modulator phase shifter: device model, error metrics and
//! look-up-table calibration.
//!
//! The phase shifter synthesizes a complex gain from quadrature I/Q paths
//! whose magnitudes are set by signed DAC codes (sign = quadrant switch) and
//! scales it with a small-range variable-gain amplifier (VGA). The
//! [`VectorModulator`] model carries the usual analog impairments: quadrature
//! phase and amplitude imbalance from the polyphase filter, DAC
//! nonlinearity, carrier feedthrough, a common insertion phase and
//! measurement noise.
//!
//! Calibration works from measurements only. The calibrator records the
//! I/Q code grid at the nominal VGA setting and the VGA transfer ratio, uses
//! an interpolated (continuous) version of that data for gradient descent,
//! and then rounds each continuous solution by measuring the integer code
//! neighborhood for every VGA setting.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::units::{amplitude_to_db, db_to_amplitude, wrap_deg_180, wrap_deg_360};

pub const DEFAULT_CODE_BITS: u32 = 5;
/// Commanded phase grid spacing, degrees.
pub const GRID_STEP_DEG: f64 = 10.0;
pub const GRID_STATES: usize = 36;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("code {code} outside ±{code_max}")]
    CodeOutOfRange { code: i32, code_max: i32 },
    #[error("VGA code {code} outside 0..={max}")]
    VgaOutOfRange { code: u32, max: u32 },
    #[error("quadrant {quadrant} inconsistent with codes ({i_code}, {q_code})")]
    QuadrantMismatch {
        quadrant: Quadrant,
        i_code: i32,
        q_code: i32,
    },
    #[error("at least two table entries are needed, got {0}")]
    TooFewEntries(usize),
    #[error("table entries are not sorted by commanded phase")]
    Unsorted,
    #[error("table does not cover the 36-state 10° grid")]
    NotStandardGrid,
    #[error("no calibration targets")]
    NoTargets,
    #[error("unknown quadrant `{0}`")]
    BadQuadrant(String),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> CalibrationError {
    CalibrationError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// Sign settings of the I and Q quadrant switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quadrant {
    PlusPlus,
    PlusMinus,
    MinusPlus,
    MinusMinus,
}

impl Quadrant {
    pub fn from_signs(i_negative: bool, q_negative: bool) -> Self {
        match (i_negative, q_negative) {
            (false, false) => Quadrant::PlusPlus,
            (false, true) => Quadrant::PlusMinus,
            (true, false) => Quadrant::MinusPlus,
            (true, true) => Quadrant::MinusMinus,
        }
    }

    /// (s_I, s_Q) as ±1.
    pub fn signs(self) -> (f64, f64) {
        match self {
            Quadrant::PlusPlus => (1.0, 1.0),
            Quadrant::PlusMinus => (1.0, -1.0),
            Quadrant::MinusPlus => (-1.0, 1.0),
            Quadrant::MinusMinus => (-1.0, -1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::PlusPlus => "++",
            Quadrant::PlusMinus => "+-",
            Quadrant::MinusPlus => "-+",
            Quadrant::MinusMinus => "--",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quadrant {
    type Err = CalibrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "++" => Ok(Quadrant::PlusPlus),
            "+-" => Ok(Quadrant::PlusMinus),
            "-+" => Ok(Quadrant::MinusPlus),
            "--" => Ok(Quadrant::MinusMinus),
            other => Err(CalibrationError::BadQuadrant(other.to_string())),
        }
    }
}

impl Serialize for Quadrant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Quadrant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Register setting of the vector modulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VmState {
    pub i_code: i32,
    pub q_code: i32,
    pub quadrant: Quadrant,
}

impl VmState {
    /// State whose quadrant follows the code signs (zero counts as positive).
    pub fn from_codes(i_code: i32, q_code: i32) -> Self {
        Self {
            i_code,
            q_code,
            quadrant: Quadrant::from_signs(i_code < 0, q_code < 0),
        }
    }

    pub fn validate(&self, code_max: i32) -> Result<(), CalibrationError> {
        for code in [self.i_code, self.q_code] {
            if code.abs() > code_max {
                return Err(CalibrationError::CodeOutOfRange { code, code_max });
            }
        }
        let (si, sq) = self.quadrant.signs();
        let consistent = |code: i32, sign: f64| code == 0 || (code > 0) == (sign > 0.0);
        if !consistent(self.i_code, si) || !consistent(self.q_code, sq) {
            return Err(CalibrationError::QuadrantMismatch {
                quadrant: self.quadrant,
                i_code: self.i_code,
                q_code: self.q_code,
            });
        }
        Ok(())
    }
}

/// Variable-gain amplifier following the vector modulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VgaModel {
    /// Largest code; codes run 0..=max_code with the nominal (0 dB) in the middle.
    pub max_code: u32,
    /// Total gain control range, dB.
    pub range_db: f64,
}

impl Default for VgaModel {
    fn default() -> Self {
        Self {
            max_code: 16,
            range_db: 2.5,
        }
    }
}

impl VgaModel {
    pub fn nominal_code(&self) -> u32 {
        self.max_code / 2
    }

    /// Gain in dB at a (possibly fractional) code.
    pub fn gain_db(&self, code: f64) -> f64 {
        if self.max_code == 0 {
            return 0.0;
        }
        (code - self.nominal_code() as f64) * self.range_db / self.max_code as f64
    }
}

/// Analog impairments of the vector modulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmImpairments {
    /// Quadrature error of the polyphase filter, degrees.
    pub iq_phase_imbalance_deg: f64,
    /// Q-path gain relative to the I path, dB.
    pub iq_amplitude_imbalance_db: f64,
    /// DAC transfer `f(x) = x + a₂x(1−x) + a₃x(1−x)(1−2x)` on the normalized
    /// code magnitude; `[a₂, a₃]`.
    pub dac_inl: [f64; 2],
    /// Carrier feedthrough added to the synthesized vector.
    pub feedthrough: Complex64,
    /// Common insertion phase, degrees.
    pub insertion_phase_deg: f64,
    /// Phase shift of the VGA per dB of gain change, degrees/dB.
    pub vga_phase_deg_per_db: f64,
    /// Standard deviation of the complex measurement noise.
    pub noise_sigma: f64,
}

impl VmImpairments {
    pub fn ideal() -> Self {
        Self {
            iq_phase_imbalance_deg: 0.0,
            iq_amplitude_imbalance_db: 0.0,
            dac_inl: [0.0, 0.0],
            feedthrough: Complex64::new(0.0, 0.0),
            insertion_phase_deg: 0.0,
            vga_phase_deg_per_db: 0.0,
            noise_sigma: 0.0,
        }
    }

    /// Impairment magnitudes chosen so that the uncalibrated nearest-code
    /// table shows about 4° RMS phase and 7 % RMS amplitude error.
    pub fn paper_matched() -> Self {
        Self {
            iq_phase_imbalance_deg: 8.0,
            iq_amplitude_imbalance_db: 1.0,
            dac_inl: [0.1, 0.05],
            feedthrough: Complex64::from_polar(0.03, 0.5),
            insertion_phase_deg: -37.0,
            vga_phase_deg_per_db: 1.5,
            noise_sigma: 0.002,
        }
    }

    /// Random draw with each impairment scaled around the paper-matched
    /// magnitude.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        Self {
            iq_phase_imbalance_deg: u(-12.0, 12.0),
            iq_amplitude_imbalance_db: u(-1.5, 1.5),
            dac_inl: [u(-0.15, 0.15), u(-0.08, 0.08)],
            feedthrough: Complex64::from_polar(u(0.0, 0.05), u(-std::f64::consts::PI, std::f64::consts::PI)),
            insertion_phase_deg: u(-180.0, 180.0),
            vga_phase_deg_per_db: u(0.0, 1.6),
            noise_sigma: u(0.0, 0.004),
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let finite = [
            self.iq_phase_imbalance_deg,
            self.iq_amplitude_imbalance_db,
            self.dac_inl[0],
            self.dac_inl[1],
            self.feedthrough.re,
            self.feedthrough.im,
            self.insertion_phase_deg,
            self.vga_phase_deg_per_db,
            self.noise_sigma,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("impairments", "all values must be finite"));
        }
        if self.noise_sigma < 0.0 {
            return Err(invalid("noise_sigma", "must be ≥ 0"));
        }
        if self.dac_inl[0].abs() + self.dac_inl[1].abs() >= 1.0 {
            return Err(invalid("dac_inl", "|a₂| + |a₃| must be < 1 for a monotone DAC"));
        }
        Ok(())
    }

    fn dac(&self, x: f64) -> f64 {
        let [a2, a3] = self.dac_inl;
        x + a2 * x * (1.0 - x) + a3 * x * (1.0 - x) * (1.0 - 2.0 * x)
    }
}

/// Synthetic vector-modulator phase shifter with a VGA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorModulator {
    pub impairments: VmImpairments,
    pub code_bits: u32,
    pub vga: VgaModel,
    /// Seed of the measurement-noise stream.
    pub seed: u64,
}

impl VectorModulator {
    pub fn new(impairments: VmImpairments, code_bits: u32, seed: u64) -> Result<Self, CalibrationError> {
        impairments.validate()?;
        if !(1..=12).contains(&code_bits) {
            return Err(invalid("code_bits", "must lie in 1..=12"));
        }
        Ok(Self {
            impairments,
            code_bits,
            vga: VgaModel::default(),
            seed,
        })
    }

    pub fn code_max(&self) -> i32 {
        (1 << self.code_bits) - 1
    }

    /// Noise-free response at continuous codes; negative values select the
    /// negative quadrant.
    pub fn relaxed_response(&self, i: f64, q: f64, vga_code: f64) -> Complex64 {
        let imp = &self.impairments;
        let cm = self.code_max() as f64;
        let path = |c: f64| c.signum() * imp.dac((c.abs() / cm).min(1.0));
        let q_rot = Complex64::from_polar(
            db_to_amplitude(imp.iq_amplitude_imbalance_db),
            (90.0 + imp.iq_phase_imbalance_deg).to_radians(),
        );
        let vector = Complex64::new(path(i), 0.0) + q_rot * path(q) + imp.feedthrough;
        let vga_db = self.vga.gain_db(vga_code);
        let vga = Complex64::from_polar(
            db_to_amplitude(vga_db),
            (imp.insertion_phase_deg + imp.vga_phase_deg_per_db * vga_db).to_radians(),
        );
        vga * vector
    }

    /// One measured complex gain. Repeated measurements of the same setting
    /// return the same value (the noise stream is keyed by the setting).
    pub fn measure(&self, state: &VmState, vga_code: u32) -> Result<Complex64, CalibrationError> {
        state.validate(self.code_max())?;
        if vga_code > self.vga.max_code {
            return Err(CalibrationError::VgaOutOfRange {
                code: vga_code,
                max: self.vga.max_code,
            });
        }
        let (si, sq) = state.quadrant.signs();
        let i = si * state.i_code.abs() as f64;
        let q = sq * state.q_code.abs() as f64;
        let clean = self.relaxed_response(i, q, vga_code as f64);
        if self.impairments.noise_sigma == 0.0 {
            return Ok(clean);
        }
        let key = ((state.i_code as i64 + 4096) as u64) << 32
            | ((state.q_code as i64 + 4096) as u64) << 12
            | vga_code as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, key));
        let s = self.impairments.noise_sigma / std::f64::consts::SQRT_2;
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Ok(clean + Complex64::new(s * re, s * im))
    }
}

/// Complex gain of `state` on a 5-bit device at the nominal VGA setting.
pub fn vm_response(
    impairments: &VmImpairments,
    state: &VmState,
    rng_seed: u64,
) -> Result<Complex64, CalibrationError> {
    let device = VectorModulator::new(*impairments, DEFAULT_CODE_BITS, rng_seed)?;
    device.measure(state, device.vga.nominal_code())
}

/// One row of a phase-shifter look-up table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub commanded_deg: f64,
    pub state: VmState,
    pub vga_code: u32,
    /// Measured insertion phase, [0, 360).
    pub achieved_deg: f64,
    /// Measured gain, dB.
    pub achieved_db: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    commanded_deg: f64,
    i_code: i32,
    q_code: i32,
    quadrant: Quadrant,
    vga_code: u32,
    achieved_deg: f64,
    achieved_db: f64,
}

/// Look-up table from commanded phase to register settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationTable {
    pub fn new(mut entries: Vec<CalibrationEntry>) -> Self {
        entries.sort_by(|a, b| a.commanded_deg.total_cmp(&b.commanded_deg));
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks ordering and, when `standard_grid`, coverage of 0°..350° in
    /// 10° steps.
    pub fn validate(&self, standard_grid: bool) -> Result<(), CalibrationError> {
        if self
            .entries
            .windows(2)
            .any(|w| w[0].commanded_deg > w[1].commanded_deg)
        {
            return Err(CalibrationError::Unsorted);
        }
        if standard_grid {
            let ok = self.entries.len() == GRID_STATES
                && self
                    .entries
                    .iter()
                    .enumerate()
                    .all(|(k, e)| (e.commanded_deg - k as f64 * GRID_STEP_DEG).abs() < 1e-9);
            if !ok {
                return Err(CalibrationError::NotStandardGrid);
            }
        }
        Ok(())
    }

    /// Circular mean of `achieved − commanded`, degrees.
    pub fn common_offset_deg(&self) -> f64 {
        let sum: Complex64 = self
            .entries
            .iter()
            .map(|e| Complex64::from_polar(1.0, (e.achieved_deg - e.commanded_deg).to_radians()))
            .sum();
        sum.arg().to_degrees()
    }

    /// Mean linear gain across entries.
    pub fn mean_amplitude(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| db_to_amplitude(e.achieved_db))
            .sum::<f64>()
            / self.entries.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(CsvRow {
                commanded_deg: e.commanded_deg,
                i_code: e.state.i_code,
                q_code: e.state.q_code,
                quadrant: e.state.quadrant,
                vga_code: e.vga_code,
                achieved_deg: e.achieved_deg,
                achieved_db: e.achieved_db,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`CalibrationTable::write_csv`] (or a VNA
    /// export in the same layout).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, crate::Error> {
        let mut r = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for row in r.deserialize() {
            let row: CsvRow = row?;
            let state = VmState {
                i_code: row.i_code,
                q_code: row.q_code,
                quadrant: row.quadrant,
            };
            state.validate(i32::MAX)?;
            entries.push(CalibrationEntry {
                commanded_deg: row.commanded_deg,
                state,
                vga_code: row.vga_code,
                achieved_deg: row.achieved_deg,
                achieved_db: row.achieved_db,
            });
        }
        let table = Self { entries };
        table.validate(false)?;
        Ok(table)
    }
}

/// RMS errors of a table after removing the common insertion phase and
/// normalizing to the mean gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsErrors {
    pub rms_phase_deg: f64,
    pub rms_amplitude_pct: f64,
}

pub fn rms_errors(table: &CalibrationTable) -> Result<RmsErrors, CalibrationError> {
    let n = table.entries.len();
    if n < 2 {
        return Err(CalibrationError::TooFewEntries(n));
    }
    let offset = table.common_offset_deg();
    let mean_amp = table.mean_amplitude();
    let (phase_sq, amp_sq) = table.entries.iter().fold((0.0, 0.0), |(p, a), e| {
        let pe = wrap_deg_180(e.achieved_deg - e.commanded_deg - offset);
        let ae = (db_to_amplitude(e.achieved_db) - mean_amp) / mean_amp;
        (p + pe * pe, a + ae * ae)
    });
    Ok(RmsErrors {
        rms_phase_deg: (phase_sq / n as f64).sqrt(),
        rms_amplitude_pct: 100.0 * (amp_sq / n as f64).sqrt(),
    })
}

/// Absolute complex-gain target for one commanded phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub commanded_deg: f64,
    /// Commanded phase plus the common insertion offset, degrees.
    pub phase_deg: f64,
    pub amplitude: f64,
}

/// Relative weights of the per-target cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Weight on the squared phase error in radians.
    pub phase: f64,
    /// Weight on the squared relative amplitude error.
    pub amplitude: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            phase: 1.0,
            amplitude: 1.0,
        }
    }
}

/// `w_φ·Δφ² + w_A·(ΔA/A)²` with Δφ in radians, wrapped to (−π, π].
pub fn target_cost(gain: Complex64, target: &Target, weights: &CostWeights) -> f64 {
    let pe = wrap_deg_180(gain.arg().to_degrees() - target.phase_deg).to_radians();
    let ae = (gain.norm() - target.amplitude) / target.amplitude;
    weights.phase * pe * pe + weights.amplitude * ae * ae
}

/// Gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Initial step in normalized code units (full scale = 1).
    pub step: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub weights: CostWeights,
    /// Target amplitude as a fraction of the uncalibrated mean gain.
    pub amplitude_backoff: f64,
    /// Half-width of the integer neighborhood searched around each
    /// continuous solution.
    pub neighborhood: i32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            iterations: 200,
            restarts: 8,
            seed: 0x5eed,
            weights: CostWeights::default(),
            amplitude_backoff: 0.95,
            neighborhood: 2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.step > 0.0) {
            return Err(invalid("step", "must be > 0"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be ≥ 1"));
        }
        if !(self.amplitude_backoff > 0.0 && self.amplitude_backoff <= 1.5) {
            return Err(invalid("amplitude_backoff", "must lie in (0, 1.5]"));
        }
        if self.neighborhood < 1 {
            return Err(invalid("neighborhood", "must be ≥ 1"));
        }
        if !(self.weights.phase >= 0.0 && self.weights.amplitude >= 0.0)
            || self.weights.phase + self.weights.amplitude == 0.0
        {
            return Err(invalid("weights", "must be ≥ 0 and not both zero"));
        }
        Ok(())
    }
}

/// Commanded phases 0°, 10°, …, 350°.
pub fn standard_grid() -> Vec<f64> {
    (0..GRID_STATES).map(|k| k as f64 * GRID_STEP_DEG).collect()
}

/// Ideal codes for a phase on a circle of full-scale radius.
pub fn nearest_ideal_state(commanded_deg: f64, code_max: i32) -> VmState {
    let (s, c) = commanded_deg.to_radians().sin_cos();
    let cm = code_max as f64;
    VmState::from_codes((cm * c).round() as i32, (cm * s).round() as i32)
}

fn entry(commanded_deg: f64, state: VmState, vga_code: u32, gain: Complex64) -> CalibrationEntry {
    CalibrationEntry {
        commanded_deg,
        state,
        vga_code,
        achieved_deg: wrap_deg_360(gain.arg().to_degrees()),
        achieved_db: amplitude_to_db(gain.norm()),
    }
}

/// Table obtained by programming the ideal codes at the nominal VGA gain.
pub fn uncalibrated_table(
    device: &VectorModulator,
    commanded: &[f64],
) -> Result<CalibrationTable, CalibrationError> {
    let vga = device.vga.nominal_code();
    let entries = commanded
        .iter()
        .map(|&deg| {
            let state = nearest_ideal_state(deg, device.code_max());
            device.measure(&state, vga).map(|g| entry(deg, state, vga, g))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CalibrationTable::new(entries))
}

/// Device characterization as recorded by the network analyzer.
struct Characterization {
    code_max: i32,
    /// Gains over the I/Q code grid at the nominal VGA code, row-major in I.
    iq: Vec<Complex64>,
    /// Complex VGA transfer relative to the nominal code.
    vga_ratio: Vec<Complex64>,
}

impl Characterization {
    fn record(device: &VectorModulator) -> Result<Self, CalibrationError> {
        let cm = device.code_max();
        let side = (2 * cm + 1) as usize;
        let nominal = device.vga.nominal_code();
        let mut iq = Vec::with_capacity(side * side);
        for i in -cm..=cm {
            for q in -cm..=cm {
                iq.push(device.measure(&VmState::from_codes(i, q), nominal)?);
            }
        }
        let refs = [
            VmState::from_codes(cm, 0),
            VmState::from_codes(0, cm),
            VmState::from_codes(-cm, 0),
            VmState::from_codes(0, -cm),
        ];
        let mut base = Vec::with_capacity(refs.len());
        for s in &refs {
            base.push(device.measure(s, nominal)?);
        }
        let base_power: f64 = base.iter().map(|b| b.norm_sqr()).sum();
        let mut vga_ratio = Vec::with_capacity(device.vga.max_code as usize + 1);
        for k in 0..=device.vga.max_code {
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, b) in refs.iter().zip(&base) {
                acc += device.measure(s, k)? * b.conj();
            }
            vga_ratio.push(acc / base_power);
        }
        Ok(Self {
            code_max: cm,
            iq,
            vga_ratio,
        })
    }

    fn iq_at(&self, i: i32, q: i32) -> Complex64 {
        let side = (2 * self.code_max + 1) as usize;
        self.iq[(i + self.code_max) as usize * side + (q + self.code_max) as usize]
    }

    /// Bilinear interpolation on the I/Q grid times the interpolated VGA
    /// transfer; arguments in code units.
    fn interpolate(&self, i: f64, q: f64, vga: f64) -> Complex64 {
        let cm = self.code_max as f64;
        let i = i.clamp(-cm, cm);
        let q = q.clamp(-cm, cm);
        let i0 = (i.floor() as i32).min(self.code_max - 1);
        let q0 = (q.floor() as i32).min(self.code_max - 1);
        let ti = i - i0 as f64;
        let tq = q - q0 as f64;
        let g = self.iq_at(i0, q0) * (1.0 - ti) * (1.0 - tq)
            + self.iq_at(i0 + 1, q0) * ti * (1.0 - tq)
            + self.iq_at(i0, q0 + 1) * (1.0 - ti) * tq
            + self.iq_at(i0 + 1, q0 + 1) * ti * tq;
        let vmax = (self.vga_ratio.len() - 1) as f64;
        let v = vga.clamp(0.0, vmax);
        let v0 = (v.floor() as usize).min(self.vga_ratio.len().saturating_sub(2));
        let ratio = if self.vga_ratio.len() == 1 {
            self.vga_ratio[0]
        } else {
            let tv = v - v0 as f64;
            self.vga_ratio[v0] * (1.0 - tv) + self.vga_ratio[v0 + 1] * tv
        };
        g * ratio
    }
}

/// Result of a calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub table: CalibrationTable,
    pub uncalibrated: CalibrationTable,
    pub targets: Vec<Target>,
    /// Measured cost of each calibrated entry.
    pub costs: Vec<f64>,
    /// False when some target could not be improved beyond the ideal-code
    /// starting point.
    pub converged: bool,
}

/// Normalized continuous setting: codes / code_max and VGA / max code.
#[derive(Debug, Clone, Copy)]
struct Point {
    i: f64,
    q: f64,
    v: f64,
}

struct Problem<'a> {
    model: &'a Characterization,
    target: Target,
    weights: CostWeights,
    vga_max: f64,
}

impl Problem<'_> {
    fn cost(&self, p: Point) -> f64 {
        let cm = self.model.code_max as f64;
        let g = self.model.interpolate(p.i * cm, p.q * cm, p.v * self.vga_max);
        target_cost(g, &self.target, &self.weights)
    }

    /// Backtracking gradient descent with central-difference gradients.
    /// `free_vga` selects whether the VGA coordinate moves.
    fn descend(&self, start: Point, step: f64, iterations: usize, free_vga: bool) -> (Point, f64) {
        let h = 1e-4;
        let clamp = |p: Point| Point {
            i: p.i.clamp(-1.0, 1.0),
            q: p.q.clamp(-1.0, 1.0),
            v: p.v.clamp(0.0, 1.0),
        };
        let mut p = clamp(start);
        let mut f = self.cost(p);
        let mut step = step;
        for _ in 0..iterations {
            let d = |dp: Point| self.cost(clamp(dp));
            let gi = (d(Point { i: p.i + h, ..p }) - d(Point { i: p.i - h, ..p })) / (2.0 * h);
            let gq = (d(Point { q: p.q + h, ..p }) - d(Point { q: p.q - h, ..p })) / (2.0 * h);
            let gv = if free_vga {
                (d(Point { v: p.v + h, ..p }) - d(Point { v: p.v - h, ..p })) / (2.0 * h)
            } else {
                0.0
            };
            let norm = (gi * gi + gq * gq + gv * gv).sqrt();
            if norm < 1e-14 || f < 1e-16 {
                break;
            }
            // Newton-like scale for a cost that vanishes at the optimum.
            let mut t = step.min(2.0 * f / norm);
            let mut accepted = false;
            while t > 1e-9 {
                let cand = clamp(Point {
                    i: p.i - t * gi / norm,
                    q: p.q - t * gq / norm,
                    v: p.v - t * gv / norm,
                });
                let fc = self.cost(cand);
                if fc < f {
                    p = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            step = (t * 2.0).min(1.0);
        }
        (p, f)
    }
}

/// Calibrates `device` for the commanded phases (degrees).
pub fn calibrate(
    device: &VectorModulator,
    commanded: &[f64],
    optimizer: &OptimizerConfig,
) -> Result<CalibrationOutcome, CalibrationError> {
    if commanded.is_empty() {
        return Err(CalibrationError::NoTargets);
    }
    optimizer.validate()?;
    let uncalibrated = uncalibrated_table(device, commanded)?;
    let offset = uncalibrated.common_offset_deg();
    let amplitude = optimizer.amplitude_backoff * uncalibrated.mean_amplitude();
    let model = Characterization::record(device)?;
    let cm = device.code_max();
    let vga_max = device.vga.max_code;

    let results: Vec<Result<(CalibrationEntry, Target, f64, bool), CalibrationError>> = uncalibrated
        .entries
        .par_iter()
        .enumerate()
        .map(|(idx, start_entry)| {
            let target = Target {
                commanded_deg: start_entry.commanded_deg,
                phase_deg: start_entry.commanded_deg + offset,
                amplitude,
            };
            let problem = Problem {
                model: &model,
                target,
                weights: optimizer.weights,
                vga_max: vga_max as f64,
            };
            let start_cost = target_cost(
                device.measure(&start_entry.state, start_entry.vga_code)?,
                &target,
                &optimizer.weights,
            );

            // Continuous optimum over (I, Q, VGA) with restarts.
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(optimizer.seed, idx as u64));
            let nominal = Point {
                i: start_entry.state.i_code as f64 / cm as f64,
                q: start_entry.state.q_code as f64 / cm as f64,
                v: device.vga.nominal_code() as f64 / vga_max.max(1) as f64,
            };
            let mut best = problem.descend(nominal, optimizer.step, optimizer.iterations, vga_max > 0);
            for _ in 1..optimizer.restarts.max(1) {
                let start = Point {
                    i: rng.random_range(-1.0..=1.0),
                    q: rng.random_range(-1.0..=1.0),
                    v: rng.random_range(0.0..=1.0),
                };
                let cand = problem.descend(start, optimizer.step, optimizer.iterations, vga_max > 0);
                if cand.1 < best.1 {
                    best = cand;
                }
            }

            // Neighborhood rounding: re-solve I/Q on every VGA code and
            // measure the integer neighbors.
            let mut chosen = (*start_entry, start_cost);
            let mut consider = |state: VmState, vga: u32| -> Result<(), CalibrationError> {
                let g = device.measure(&state, vga)?;
                let c = target_cost(g, &target, &optimizer.weights);
                if c < chosen.1 {
                    chosen = (entry(target.commanded_deg, state, vga, g), c);
                }
                Ok(())
            };
            for vga in 0..=vga_max {
                let v = if vga_max == 0 { 0.0 } else { vga as f64 / vga_max as f64 };
                let scale = (model.vga_ratio[(best.0.v * vga_max as f64).round() as usize].norm()
                    / model.vga_ratio[vga as usize].norm())
                .clamp(0.5, 2.0);
                let warm = Point {
                    i: best.0.i * scale,
                    q: best.0.q * scale,
                    v,
                };
                let (p, _) = problem.descend(warm, optimizer.step, optimizer.iterations / 2, false);
                let ic = (p.i * cm as f64).floor() as i32;
                let qc = (p.q * cm as f64).floor() as i32;
                let n = optimizer.neighborhood;
                for i in (ic - n + 1)..=(ic + n) {
                    for q in (qc - n + 1)..=(qc + n) {
                        if i.abs() <= cm && q.abs() <= cm {
                            consider(VmState::from_codes(i, q), vga)?;
                        }
                    }
                }
            }
            let improved = chosen.1 < start_cost || start_cost == 0.0;
            Ok((chosen.0, target, chosen.1, improved))
        })
        .collect();

    let mut entries = Vec::with_capacity(results.len());
    let mut targets = Vec::with_capacity(results.len());
    let mut costs = Vec::with_capacity(results.len());
    let mut converged = true;
    for r in results {
        let (e, t, c, ok) = r?;
        entries.push(e);
        targets.push(t);
        costs.push(c);
        converged &= ok;
    }
    Ok(CalibrationOutcome {
        table: CalibrationTable { entries },
        uncalibrated,
        targets,
        costs,
        converged,
    })
}
