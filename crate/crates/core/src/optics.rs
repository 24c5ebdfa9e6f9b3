//! Optical front end: laser, Mach-Zehnder intensity modulator, free-space
//! illumination of the grating couplers (optionally through a microlens) and
//! photodetection.
//!
//! The photocurrent is available in two independent forms: a closed form
//! from the Jacobi-Anger expansion of the MZM output intensity, and a numeric
//! path that samples the optical field envelope and extracts harmonics with a
//! discrete Fourier sum over an integer number of drive periods. The numeric
//! path is the cross-check for the closed form.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bessel::bessel_j;
use crate::constants::{ELEMENTARY_CHARGE, PLANCK};
use crate::units::{db_to_lin, lin_to_db};

/// Minimum samples per drive period accepted by [`mzm_field_envelope`].
pub const MIN_SAMPLES_PER_PERIOD: usize = 8;
/// Default samples per drive period for generated time grids.
pub const DEFAULT_SAMPLES_PER_PERIOD: usize = 32;

const BIAS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OpticsError {
    #[error("time grid is empty")]
    EmptyGrid,
    #[error("time grid is not uniform (sample {index} deviates by {deviation:e} s)")]
    NonUniformGrid { index: usize, deviation: f64 },
    #[error("time grid undersamples the drive: {samples_per_period:.2} samples per period (need ≥ {MIN_SAMPLES_PER_PERIOD})")]
    Undersampled { samples_per_period: f64 },
    #[error("sampled drive has {drive} samples but the time grid has {grid}")]
    DriveLengthMismatch { drive: usize, grid: usize },
    #[error("closed-form photocurrent requires quadrature bias (θ = π/2), got θ = {bias_phase} rad")]
    BiasNotQuadrature { bias_phase: f64 },
    #[error("closed-form photocurrent requires a sinusoidal drive")]
    NotSinusoidal,
    #[error("analysis window of {samples} samples is not an integer number of {samples_per_period}-sample periods (spectral leakage)")]
    SpectralLeakage { samples: usize, samples_per_period: usize },
    #[error("lens diameter {lens_diameter} m is not smaller than the spot diameter {spot_diameter} m")]
    LensLargerThanSpot { lens_diameter: f64, spot_diameter: f64 },
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> OpticsError {
    OpticsError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// Continuous-wave laser (after the optical amplifier).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalSource {
    /// Optical power, W.
    pub power: f64,
    /// Optical carrier frequency, Hz.
    pub optical_frequency: f64,
    /// Relative intensity noise, dBc/Hz.
    pub rin: f64,
}

impl Default for OpticalSource {
    fn default() -> Self {
        Self {
            power: 0.2,
            optical_frequency: 193e12,
            rin: -140.0,
        }
    }
}

impl OpticalSource {
    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.power > 0.0) {
            return Err(invalid("power", "must be > 0"));
        }
        if !(self.optical_frequency > 0.0) {
            return Err(invalid("optical_frequency", "must be > 0"));
        }
        if !(self.rin <= 0.0) {
            return Err(invalid("rin", "must be ≤ 0 dBc/Hz"));
        }
        Ok(())
    }

    /// RIN as a linear ratio per Hz.
    pub fn rin_linear(&self) -> f64 {
        db_to_lin(self.rin)
    }
}

/// Drive applied to the modulator electrodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Drive {
    /// `A·cos(ω t)`.
    Sinusoid { amplitude: f64, angular_frequency: f64 },
    /// Voltage samples aligned with the evaluation time grid.
    Sampled(Vec<f64>),
}

impl Drive {
    /// Sinusoid delivering `power_w` into a resistive load.
    pub fn sinusoid_from_power(power_w: f64, load_ohms: f64, frequency_hz: f64) -> Self {
        Drive::Sinusoid {
            amplitude: (2.0 * power_w * load_ohms).sqrt(),
            angular_frequency: 2.0 * PI * frequency_hz,
        }
    }
}

/// Mach-Zehnder intensity modulator.
#[derive(Debug, Clone, PartialEq)]
pub struct MzmConfig {
    /// Half-wave voltage, V.
    pub v_pi: f64,
    /// Phase difference between the output arms at zero drive, rad.
    pub bias_phase: f64,
    pub drive: Drive,
}

impl MzmConfig {
    pub fn new(v_pi: f64, bias_phase: f64, drive: Drive) -> Result<Self, OpticsError> {
        let cfg = Self {
            v_pi,
            bias_phase,
            drive,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Quadrature-biased modulator with a sinusoidal drive.
    pub fn quadrature(v_pi: f64, amplitude: f64, angular_frequency: f64) -> Self {
        Self {
            v_pi,
            bias_phase: FRAC_PI_2,
            drive: Drive::Sinusoid {
                amplitude,
                angular_frequency,
            },
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.v_pi > 0.0) {
            return Err(invalid("v_pi", "must be > 0"));
        }
        if !(0.0..2.0 * PI).contains(&self.bias_phase) {
            return Err(invalid("bias_phase", "must lie in [0, 2π)"));
        }
        match &self.drive {
            Drive::Sinusoid {
                amplitude,
                angular_frequency,
            } => {
                if !amplitude.is_finite() || *amplitude < 0.0 {
                    return Err(invalid("drive.amplitude", "must be finite and ≥ 0"));
                }
                if !(*angular_frequency > 0.0) {
                    return Err(invalid("drive.angular_frequency", "must be > 0"));
                }
            }
            Drive::Sampled(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("drive", "samples must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Modulation index per volt, `β = π / V_π`.
    pub fn beta(&self) -> f64 {
        PI / self.v_pi
    }

    pub fn is_quadrature(&self) -> bool {
        (self.bias_phase - FRAC_PI_2).abs() < BIAS_TOLERANCE
    }

    /// Drive frequency in Hz for a sinusoidal drive.
    pub fn drive_frequency(&self) -> Option<f64> {
        match self.drive {
            Drive::Sinusoid {
                angular_frequency, ..
            } => Some(angular_frequency / (2.0 * PI)),
            Drive::Sampled(_) => None,
        }
    }
}

/// Free-space illumination and on-chip coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingChain {
    /// Collimated spot diameter, m (uniform power over the spot).
    pub spot_diameter: f64,
    /// Grating-coupler efficiency, dB.
    pub grating_coupler_efficiency_db: f64,
    /// Grating-coupler capture area, m².
    pub grating_coupler_area: f64,
    pub gratings_per_chip: u32,
    /// Microlens diameter, m.
    pub lens_diameter: f64,
    pub lens_enabled: bool,
    /// Measured effective coupling, dB; replaces the geometric value when set.
    pub effective_coupling_override_db: Option<f64>,
}

impl Default for CouplingChain {
    fn default() -> Self {
        let spot_diameter = 7e-3;
        Self {
            spot_diameter,
            grating_coupler_efficiency_db: -5.5,
            grating_coupler_area: default_grating_coupler_area(spot_diameter),
            gratings_per_chip: 4,
            lens_diameter: 0.69e-3,
            lens_enabled: true,
            effective_coupling_override_db: Some(-39.5),
        }
    }
}

/// Grating-coupler area that puts the single-coupler coupling at −64.5 dB
/// for a −5.5 dB coupler under the given spot. The physical area is not
/// published; this value is a calibration of the geometry, not a measurement.
pub fn default_grating_coupler_area(spot_diameter: f64) -> f64 {
    let spot_area = PI * (0.5 * spot_diameter).powi(2);
    spot_area * db_to_lin(-64.5 + 5.5)
}

/// Coupling figures of a [`CouplingChain`], all in dB (≤ 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    /// One grating coupler under the uniform spot.
    pub per_gc_db: f64,
    /// All grating couplers of one chip.
    pub per_chip_db: f64,
    /// One lensed coupler capturing the full lens aperture.
    pub with_lens_db: f64,
    /// Value used downstream (override, else lensed or per-chip geometry).
    pub effective_db: f64,
}

impl CouplingSummary {
    pub fn effective_linear(&self) -> f64 {
        db_to_lin(self.effective_db)
    }
}

impl CouplingChain {
    pub fn spot_area(&self) -> f64 {
        PI * (0.5 * self.spot_diameter).powi(2)
    }

    pub fn lens_area(&self) -> f64 {
        PI * (0.5 * self.lens_diameter).powi(2)
    }

    /// The same chain with the lens removed and the measured override dropped.
    pub fn without_lens(&self) -> Self {
        Self {
            lens_enabled: false,
            effective_coupling_override_db: None,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.spot_diameter > 0.0) {
            return Err(invalid("spot_diameter", "must be > 0"));
        }
        if !(self.grating_coupler_area > 0.0) {
            return Err(invalid("grating_coupler_area", "must be > 0"));
        }
        if !(self.lens_diameter > 0.0) {
            return Err(invalid("lens_diameter", "must be > 0"));
        }
        if self.gratings_per_chip == 0 {
            return Err(invalid("gratings_per_chip", "must be ≥ 1"));
        }
        if !(self.grating_coupler_efficiency_db <= 0.0) {
            return Err(invalid("grating_coupler_efficiency_db", "must be ≤ 0 dB"));
        }
        if let Some(db) = self.effective_coupling_override_db {
            if !(db <= 0.0) {
                return Err(invalid("effective_coupling_override_db", "must be ≤ 0 dB"));
            }
        }
        if self.grating_coupler_area >= self.spot_area() {
            return Err(invalid(
                "grating_coupler_area",
                "must be smaller than the spot area",
            ));
        }
        if self.lens_enabled && self.lens_diameter >= self.spot_diameter {
            return Err(OpticsError::LensLargerThanSpot {
                lens_diameter: self.lens_diameter,
                spot_diameter: self.spot_diameter,
            });
        }
        Ok(())
    }

    /// Coupling loss of the chain under the uniform-spot assumption.
    pub fn coupling_factor(&self) -> Result<CouplingSummary, OpticsError> {
        self.validate()?;
        let alpha = db_to_lin(self.grating_coupler_efficiency_db);
        let spot = self.spot_area();
        let per_gc = alpha * self.grating_coupler_area / spot;
        let per_chip = per_gc * self.gratings_per_chip as f64;
        let with_lens = alpha * self.lens_area() / spot;
        let geometric = if self.lens_enabled { with_lens } else { per_chip };
        let effective_db = self
            .effective_coupling_override_db
            .unwrap_or_else(|| lin_to_db(geometric));
        Ok(CouplingSummary {
            per_gc_db: lin_to_db(per_gc),
            per_chip_db: lin_to_db(per_chip),
            with_lens_db: lin_to_db(with_lens),
            effective_db,
        })
    }
}

/// Free-function form of [`CouplingChain::coupling_factor`].
pub fn coupling_factor(chain: &CouplingChain) -> Result<CouplingSummary, OpticsError> {
    chain.coupling_factor()
}

/// On-chip photodetector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotodetectorModel {
    /// Responsivity, A/W.
    pub responsivity: f64,
    /// Electro-optic bandwidth (ideal brick-wall), Hz.
    pub eo_bandwidth: f64,
}

impl Default for PhotodetectorModel {
    fn default() -> Self {
        Self {
            responsivity: 1.0,
            eo_bandwidth: 40e9,
        }
    }
}

impl PhotodetectorModel {
    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.responsivity > 0.0) {
            return Err(invalid("responsivity", "must be > 0"));
        }
        if !(self.eo_bandwidth > 0.0) {
            return Err(invalid("eo_bandwidth", "must be > 0"));
        }
        Ok(())
    }

    /// Quantum efficiency `η = R·h·ν / q` at the given optical frequency.
    pub fn quantum_efficiency(&self, optical_frequency: f64) -> f64 {
        self.responsivity * PLANCK * optical_frequency / ELEMENTARY_CHARGE
    }

    /// Whether a tone at `frequency_hz` passes the detector.
    pub fn passes(&self, frequency_hz: f64) -> bool {
        frequency_hz <= self.eo_bandwidth
    }
}

/// Fiber collimator feeding the free-space path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollimatorModel {
    /// Effective focal length, m.
    pub efl: f64,
    /// Fiber mode-field diameter, m.
    pub mfd: f64,
    /// Wavelength, m.
    pub wavelength: f64,
}

impl Default for CollimatorModel {
    fn default() -> Self {
        Self {
            efl: 37.13e-3,
            mfd: 10.4e-6,
            wavelength: 1550e-9,
        }
    }
}

impl CollimatorModel {
    pub fn validate(&self) -> Result<(), OpticsError> {
        for (field, v) in [
            ("efl", self.efl),
            ("mfd", self.mfd),
            ("wavelength", self.wavelength),
        ] {
            if !(v > 0.0) {
                return Err(invalid(field, "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Maximum distance over which the collimated beam stays collimated, m.
pub fn collimation_reach(c: &CollimatorModel) -> f64 {
    c.efl + 2.0 * c.efl * c.efl * c.wavelength / (PI * c.mfd * c.mfd)
}

/// Uniform time grid spanning `periods` drive periods with
/// `samples_per_period` samples each (end point excluded).
pub fn periodic_time_grid(frequency_hz: f64, periods: usize, samples_per_period: usize) -> Vec<f64> {
    let dt = 1.0 / (frequency_hz * samples_per_period as f64);
    (0..periods * samples_per_period)
        .map(|i| i as f64 * dt)
        .collect()
}

fn check_uniform(time_grid: &[f64]) -> Result<Option<f64>, OpticsError> {
    if time_grid.is_empty() {
        return Err(OpticsError::EmptyGrid);
    }
    if time_grid.len() == 1 {
        return Ok(None);
    }
    let n = time_grid.len();
    let dt = (time_grid[n - 1] - time_grid[0]) / (n - 1) as f64;
    if !(dt > 0.0) {
        return Err(OpticsError::NonUniformGrid {
            index: 1,
            deviation: dt,
        });
    }
    for (i, &t) in time_grid.iter().enumerate() {
        let expected = time_grid[0] + i as f64 * dt;
        let deviation = (t - expected).abs();
        if deviation > 1e-6 * dt {
            return Err(OpticsError::NonUniformGrid { index: i, deviation });
        }
    }
    Ok(Some(dt))
}

/// Complex field envelope at the MZM output with the optical carrier
/// factored out, in √W.
///
/// `E = √P_o · e^{jθ/2} · e^{jβv/2} · cos(βv/2 + θ/2)`
pub fn mzm_field_envelope(
    source: &OpticalSource,
    mzm: &MzmConfig,
    time_grid: &[f64],
) -> Result<Vec<Complex64>, OpticsError> {
    source.validate()?;
    mzm.validate()?;
    let dt = check_uniform(time_grid)?;
    let voltages: Vec<f64> = match &mzm.drive {
        Drive::Sinusoid {
            amplitude,
            angular_frequency,
        } => {
            if let Some(dt) = dt {
                let spp = 2.0 * PI / (angular_frequency * dt);
                if spp < MIN_SAMPLES_PER_PERIOD as f64 - 1e-9 {
                    return Err(OpticsError::Undersampled {
                        samples_per_period: spp,
                    });
                }
            }
            time_grid
                .iter()
                .map(|t| amplitude * (angular_frequency * t).cos())
                .collect()
        }
        Drive::Sampled(v) => {
            if v.len() != time_grid.len() {
                return Err(OpticsError::DriveLengthMismatch {
                    drive: v.len(),
                    grid: time_grid.len(),
                });
            }
            v.clone()
        }
    };
    let beta = mzm.beta();
    let half_bias = 0.5 * mzm.bias_phase;
    let root_p = source.power.sqrt();
    Ok(voltages
        .into_iter()
        .map(|v| {
            let half_mod = 0.5 * beta * v;
            Complex64::from_polar(root_p * (half_mod + half_bias).cos(), half_bias + half_mod)
        })
        .collect())
}

/// Closed-form photocurrent components at quadrature bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormPhotocurrent {
    /// DC photocurrent, A.
    pub i_dc: f64,
    /// Magnitude of the photocurrent at the drive frequency, A.
    pub i_fundamental: f64,
}

/// Photocurrent of one chip from the Jacobi-Anger expansion of the MZM
/// intensity: `i_dc = c·P_o·R/2`, `|i_1| = c·P_o·R·J₁(βA)`.
///
/// The exact expansion gives the fundamental with a negative sign at
/// θ = π/2; the magnitude is reported. A fundamental beyond the detector
/// bandwidth is reported as zero.
pub fn photocurrent_closed_form(
    source: &OpticalSource,
    mzm: &MzmConfig,
    coupling: &CouplingChain,
    pd: &PhotodetectorModel,
) -> Result<ClosedFormPhotocurrent, OpticsError> {
    source.validate()?;
    mzm.validate()?;
    pd.validate()?;
    if !mzm.is_quadrature() {
        return Err(OpticsError::BiasNotQuadrature {
            bias_phase: mzm.bias_phase,
        });
    }
    let (amplitude, angular_frequency) = match mzm.drive {
        Drive::Sinusoid {
            amplitude,
            angular_frequency,
        } => (amplitude, angular_frequency),
        Drive::Sampled(_) => return Err(OpticsError::NotSinusoidal),
    };
    let c = coupling.coupling_factor()?.effective_linear();
    let full = c * source.power * pd.responsivity;
    let fundamental = if pd.passes(angular_frequency / (2.0 * PI)) {
        full * bessel_j(1, mzm.beta() * amplitude).abs()
    } else {
        0.0
    };
    Ok(ClosedFormPhotocurrent {
        i_dc: 0.5 * full,
        i_fundamental: fundamental,
    })
}

/// One line of a harmonic decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    #[serde(rename = "harmonic_index")]
    pub index: usize,
    /// Single-sided amplitude (the DC value for index 0), A.
    #[serde(rename = "amplitude_A")]
    pub amplitude: f64,
    #[serde(rename = "phase_rad")]
    pub phase: f64,
}

/// Sampled photocurrent and its harmonic content.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericPhotocurrent {
    pub current: Vec<f64>,
    /// Harmonics 0 ..= [`NumericPhotocurrent::MAX_HARMONIC`].
    pub harmonics: Vec<Harmonic>,
}

impl NumericPhotocurrent {
    pub const MAX_HARMONIC: usize = 6;

    pub fn dc(&self) -> f64 {
        self.harmonics[0].amplitude
    }

    pub fn fundamental(&self) -> f64 {
        self.harmonics[1].amplitude
    }

    pub fn third(&self) -> f64 {
        self.harmonics[3].amplitude
    }

    pub fn harmonic(&self, k: usize) -> Option<&Harmonic> {
        self.harmonics.get(k)
    }

    /// Harmonics with the detector's brick-wall response applied.
    pub fn band_limited(&self, pd: &PhotodetectorModel, drive_frequency_hz: f64) -> Vec<Harmonic> {
        self.harmonics
            .iter()
            .map(|h| {
                if pd.passes(h.index as f64 * drive_frequency_hz) {
                    *h
                } else {
                    Harmonic {
                        amplitude: 0.0,
                        ..*h
                    }
                }
            })
            .collect()
    }

    /// Writes the decomposition as CSV (`harmonic_index,amplitude_A,phase_rad`).
    pub fn write_harmonics_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for h in &self.harmonics {
            w.serialize(h)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Photocurrent `i(t) = c·R·|E(t)|²` from sampled envelopes, with harmonics
/// extracted by a direct DFT over the whole window.
///
/// The window must hold an integer number of drive periods of
/// `samples_per_period` samples each.
pub fn photocurrent_numeric(
    envelope: &[Complex64],
    samples_per_period: usize,
    coupling: &CouplingChain,
    pd: &PhotodetectorModel,
) -> Result<NumericPhotocurrent, OpticsError> {
    pd.validate()?;
    if envelope.is_empty() {
        return Err(OpticsError::EmptyGrid);
    }
    if samples_per_period < MIN_SAMPLES_PER_PERIOD || !envelope.len().is_multiple_of(samples_per_period) {
        return Err(OpticsError::SpectralLeakage {
            samples: envelope.len(),
            samples_per_period,
        });
    }
    let c = coupling.coupling_factor()?.effective_linear();
    let scale = c * pd.responsivity;
    let current: Vec<f64> = envelope.iter().map(|e| scale * e.norm_sqr()).collect();
    let n = current.len();
    let periods = n / samples_per_period;
    let harmonics = (0..=NumericPhotocurrent::MAX_HARMONIC)
        .map(|k| {
            let bin = k * periods;
            let acc: Complex64 = current
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    // reduce the index before scaling to keep the argument small
                    let phase = -2.0 * PI * ((bin * i) % n) as f64 / n as f64;
                    Complex64::from_polar(x, phase)
                })
                .sum();
            let acc = acc / n as f64;
            if k == 0 {
                Harmonic {
                    index: 0,
                    amplitude: acc.re,
                    phase: 0.0,
                }
            } else {
                Harmonic {
                    index: k,
                    amplitude: 2.0 * acc.norm(),
                    phase: acc.arg(),
                }
            }
        })
        .collect();
    Ok(NumericPhotocurrent { current, harmonics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_coupling() -> CouplingChain {
        CouplingChain {
            effective_coupling_override_db: Some(0.0),
            ..CouplingChain::default()
        }
    }

    fn sinus_mzm(beta_a: f64, bias: f64) -> MzmConfig {
        let v_pi = 6.0;
        MzmConfig {
            v_pi,
            bias_phase: bias,
            drive: Drive::Sinusoid {
                amplitude: beta_a * v_pi / PI,
                angular_frequency: 2.0 * PI * 1e9,
            },
        }
    }

    fn unit_source() -> OpticalSource {
        OpticalSource {
            power: 1.0,
            ..OpticalSource::default()
        }
    }

    #[test]
    fn zero_drive_envelopes() {
        let grid = periodic_time_grid(1e9, 1, 32);
        let quad = MzmConfig::quadrature(6.0, 0.0, 2.0 * PI * 1e9);
        let env = mzm_field_envelope(&unit_source(), &quad, &grid).unwrap();
        for e in env {
            assert!((e.norm_sqr() - 0.5).abs() < 1e-15);
        }
        let full = MzmConfig {
            bias_phase: 0.0,
            ..quad
        };
        let env = mzm_field_envelope(&unit_source(), &full, &grid).unwrap();
        for e in env {
            assert!((e.norm_sqr() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn quadrature_average_power_is_half() {
        // A = 1 V, Vπ = 6 V: odd-harmonic modulation leaves the mean at P/2.
        let mzm = MzmConfig::quadrature(6.0, 1.0, 2.0 * PI * 28e9);
        let grid = periodic_time_grid(28e9, 1, 1024);
        let env = mzm_field_envelope(&unit_source(), &mzm, &grid).unwrap();
        let mean = env.iter().map(|e| e.norm_sqr()).sum::<f64>() / env.len() as f64;
        assert!((mean - 0.5).abs() < 0.5e-9);
    }

    #[test]
    fn grid_errors() {
        let mzm = MzmConfig::quadrature(6.0, 1.0, 2.0 * PI * 1e9);
        assert_eq!(
            mzm_field_envelope(&unit_source(), &mzm, &[]),
            Err(OpticsError::EmptyGrid)
        );
        let bad = [0.0, 1e-11, 3e-11, 4e-11];
        assert!(matches!(
            mzm_field_envelope(&unit_source(), &mzm, &bad),
            Err(OpticsError::NonUniformGrid { .. })
        ));
        let coarse = periodic_time_grid(1e9, 2, 4);
        assert!(matches!(
            mzm_field_envelope(&unit_source(), &mzm, &coarse),
            Err(OpticsError::Undersampled { .. })
        ));
    }

    #[test]
    fn closed_form_examples() {
        let src = unit_source();
        let pd = PhotodetectorModel::default();
        let none = photocurrent_closed_form(&src, &sinus_mzm(0.0, FRAC_PI_2), &unit_coupling(), &pd).unwrap();
        assert_eq!(none.i_fundamental, 0.0);
        assert!((none.i_dc - 0.5).abs() < 1e-15);

        let one = photocurrent_closed_form(&src, &sinus_mzm(1.0, FRAC_PI_2), &unit_coupling(), &pd).unwrap();
        assert!((one.i_fundamental - 0.440_050_585_744_933_5).abs() < 1e-12);

        let paper = OpticalSource::default();
        let i = photocurrent_closed_form(&paper, &sinus_mzm(1.0, FRAC_PI_2), &CouplingChain::default(), &pd).unwrap();
        assert!((i.i_dc - 1.12e-5).abs() / 1.12e-5 < 0.01);
    }

    #[test]
    fn closed_form_rejects_off_quadrature() {
        let err = photocurrent_closed_form(
            &unit_source(),
            &sinus_mzm(1.0, 0.3),
            &unit_coupling(),
            &PhotodetectorModel::default(),
        );
        assert!(matches!(err, Err(OpticsError::BiasNotQuadrature { .. })));
    }

    #[test]
    fn numeric_ratios() {
        let mzm = sinus_mzm(0.5, FRAC_PI_2);
        let grid = periodic_time_grid(1e9, 4, DEFAULT_SAMPLES_PER_PERIOD);
        let env = mzm_field_envelope(&unit_source(), &mzm, &grid).unwrap();
        let num = photocurrent_numeric(&env, DEFAULT_SAMPLES_PER_PERIOD, &unit_coupling(), &PhotodetectorModel::default()).unwrap();
        assert!((num.fundamental() / num.dc() - 0.484_536_915_349_747_8).abs() < 1e-10);
        assert!((num.third() / num.fundamental() - 0.010_582_186_468_647_888).abs() < 1e-9);
    }

    #[test]
    fn numeric_null_bias_has_no_fundamental() {
        let mzm = sinus_mzm(1.3, 0.0);
        let grid = periodic_time_grid(1e9, 2, DEFAULT_SAMPLES_PER_PERIOD);
        let env = mzm_field_envelope(&unit_source(), &mzm, &grid).unwrap();
        let num = photocurrent_numeric(&env, DEFAULT_SAMPLES_PER_PERIOD, &unit_coupling(), &PhotodetectorModel::default()).unwrap();
        assert!(num.fundamental() < 1e-14);
        assert!(num.harmonic(2).unwrap().amplitude > 1e-3);
    }

    #[test]
    fn numeric_rejects_partial_period() {
        let env = vec![Complex64::new(1.0, 0.0); 40];
        let err = photocurrent_numeric(&env, 32, &unit_coupling(), &PhotodetectorModel::default());
        assert!(matches!(err, Err(OpticsError::SpectralLeakage { .. })));
    }

    #[test]
    fn band_limit_removes_harmonics_above_bandwidth() {
        let mzm = sinus_mzm(1.0, FRAC_PI_2);
        let grid = periodic_time_grid(28e9, 1, 64);
        let env = mzm_field_envelope(&unit_source(), &mzm, &grid).unwrap();
        let pd = PhotodetectorModel::default();
        let num = photocurrent_numeric(&env, 64, &unit_coupling(), &pd).unwrap();
        let limited = num.band_limited(&pd, 28e9);
        assert!(limited[1].amplitude > 0.0);
        assert_eq!(limited[3].amplitude, 0.0);
    }

    #[test]
    fn harmonics_csv_has_header() {
        let mzm = sinus_mzm(0.5, FRAC_PI_2);
        let grid = periodic_time_grid(1e9, 1, 32);
        let env = mzm_field_envelope(&unit_source(), &mzm, &grid).unwrap();
        let num = photocurrent_numeric(&env, 32, &unit_coupling(), &PhotodetectorModel::default()).unwrap();
        let mut buf = Vec::new();
        num.write_harmonics_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("harmonic_index,amplitude_A,phase_rad\n"));
        assert_eq!(text.lines().count(), NumericPhotocurrent::MAX_HARMONIC + 2);
    }

    #[test]
    fn coupling_examples() {
        let chain = CouplingChain::default();
        let s = chain.coupling_factor().unwrap();
        assert!((s.per_gc_db + 64.5).abs() < 1e-9);
        assert!((s.per_chip_db - (-64.5 + 10.0 * 4f64.log10())).abs() < 1e-9);
        assert!((s.per_chip_db + 58.5).abs() < 0.05);
        assert_eq!(s.effective_db, -39.5);

        let single = CouplingChain {
            gratings_per_chip: 1,
            ..chain
        };
        let s1 = single.coupling_factor().unwrap();
        assert_eq!(s1.per_chip_db, s1.per_gc_db);

        let geometric = chain.without_lens().coupling_factor().unwrap();
        assert_eq!(geometric.effective_db, geometric.per_chip_db);
    }

    #[test]
    fn lens_larger_than_spot_rejected() {
        let chain = CouplingChain {
            lens_diameter: 8e-3,
            ..CouplingChain::default()
        };
        assert!(matches!(
            chain.coupling_factor(),
            Err(OpticsError::LensLargerThanSpot { .. })
        ));
    }

    #[test]
    fn quantum_efficiency_consistent() {
        let pd = PhotodetectorModel::default();
        let eta = pd.quantum_efficiency(193e12);
        let back = eta * ELEMENTARY_CHARGE / (PLANCK * 193e12);
        assert!((back - pd.responsivity).abs() / pd.responsivity < 1e-12);
    }

    #[test]
    fn collimation_examples() {
        let c = CollimatorModel::default();
        assert!((collimation_reach(&c) - 12.6).abs() < 0.1);
        let wide = CollimatorModel { mfd: 1.0, ..c };
        // Diffraction term vanishes for a large mode field.
        assert!(collimation_reach(&wide) > c.efl);
        assert!((collimation_reach(&wide) - c.efl).abs() < 1e-5);
        let doubled = CollimatorModel { efl: 2.0 * c.efl, ..c };
        let second = collimation_reach(&c) - c.efl;
        assert!((collimation_reach(&doubled) - (doubled.efl + 4.0 * second)).abs() < 1e-9);
        assert!((collimation_reach(&doubled) - 50.3).abs() < 0.1);
    }
}
