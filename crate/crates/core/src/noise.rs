//! Photodetector noise budget.
//!
//! Seven uncorrelated current-noise contributions are tracked at the output
//! of each photodetector: thermal noise of the load, shot noise, laser RIN,
//! the two ASE beat terms of the optical amplifier, the AWG's own noise
//! (which rides through the link with the signal) and the input-referred
//! noise of the transmitter electronics.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{BOLTZMANN, ELEMENTARY_CHARGE, PLANCK, ROOM_TEMPERATURE};
use crate::optics::{MzmConfig, OpticalSource, PhotodetectorModel};
use crate::units::{db_to_lin, lin_to_db};

/// SNR values at or above this are treated as a noiseless source.
pub const NOISELESS_SNR_DB: f64 = 1e9;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("effective coupling α_e is required")]
    MissingEffectiveCoupling,
    #[error("signal variance requires quadrature bias")]
    BiasNotQuadrature,
    #[error("total noise variance is zero")]
    ZeroNoise,
    #[error("element count must be ≥ 1")]
    NoElements,
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> NoiseError {
    NoiseError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// Arbitrary waveform generator producing the QAM drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwgModel {
    pub avg_output_power_dbm: f64,
    pub snr_db: f64,
    pub symbol_rate: f64,
    pub rolloff: f64,
}

impl Default for AwgModel {
    fn default() -> Self {
        Self {
            avg_output_power_dbm: -13.0,
            snr_db: 32.0,
            symbol_rate: 400e6,
            rolloff: 0.35,
        }
    }
}

impl AwgModel {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.snr_db > 0.0) {
            return Err(invalid("snr_db", "must be > 0 dB"));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(invalid("rolloff", "must lie in [0, 1]"));
        }
        if !(self.symbol_rate > 0.0) {
            return Err(invalid("symbol_rate", "must be > 0"));
        }
        Ok(())
    }

    /// Occupied bandwidth `R_s·(1 + rolloff)`, Hz.
    pub fn occupied_bandwidth(&self) -> f64 {
        self.symbol_rate * (1.0 + self.rolloff)
    }

    pub fn snr_linear(&self) -> f64 {
        if self.snr_db >= NOISELESS_SNR_DB {
            f64::INFINITY
        } else {
            db_to_lin(self.snr_db)
        }
    }
}

/// Output noise PSD of the AWG in dBm/Hz: `P_AWG − SNR_AWG − 10·log₁₀(BW)`.
///
/// A noiseless source (SNR at or above [`NOISELESS_SNR_DB`]) returns −∞.
pub fn awg_noise_psd(awg: &AwgModel) -> f64 {
    if awg.snr_db >= NOISELESS_SNR_DB {
        return f64::NEG_INFINITY;
    }
    awg.avg_output_power_dbm - awg.snr_db - lin_to_db(awg.occupied_bandwidth())
}

/// Erbium-doped fiber amplifier (static gain and noise figure).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdfaModel {
    /// Linear gain.
    pub gain: f64,
    pub nf_db: f64,
    /// ASE optical bandwidth, Hz.
    pub ase_bandwidth: f64,
}

impl Default for EdfaModel {
    fn default() -> Self {
        Self {
            gain: 100.0,
            nf_db: 6.5,
            ase_bandwidth: 3.75e12,
        }
    }
}

impl EdfaModel {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.gain >= 1.0) {
            return Err(invalid("gain", "must be ≥ 1"));
        }
        if !(self.ase_bandwidth > 0.0) {
            return Err(invalid("ase_bandwidth", "must be > 0"));
        }
        Ok(())
    }
}

/// Receiver-side electronics of one element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxChainNoise {
    /// Input-referred current noise variance, A².
    pub input_referred_variance: f64,
    /// Noise bandwidth of the TIA, Hz.
    pub tia_bandwidth: f64,
    pub load_resistance: f64,
}

impl Default for TxChainNoise {
    fn default() -> Self {
        Self {
            input_referred_variance: 2.16e-13,
            tia_bandwidth: 1.5e9,
            load_resistance: 50.0,
        }
    }
}

impl TxChainNoise {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.input_referred_variance >= 0.0) {
            return Err(invalid("input_referred_variance", "must be ≥ 0"));
        }
        if !(self.tia_bandwidth > 0.0) {
            return Err(invalid("tia_bandwidth", "must be > 0"));
        }
        if !(self.load_resistance > 0.0) {
            return Err(invalid("load_resistance", "must be > 0"));
        }
        Ok(())
    }
}

/// Which photocurrent a shot or RIN term is referenced to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentReference {
    /// The DC photocurrent at quadrature, `α_e·R·P_o / 2`.
    DcCurrent,
    /// The full coupled photocurrent, `α_e·R·P_o`.
    FullCoupled,
}

/// Shot noise is `2q·I·Δf` and RIN is `I²·RIN·Δf` with `I` chosen by the
/// reference. The defaults reproduce the published budget: shot noise on the
/// DC current (`q·α_e·R·P_o·Δf`), RIN on the full coupled current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseConventions {
    pub shot: CurrentReference,
    pub rin: CurrentReference,
}

impl Default for NoiseConventions {
    fn default() -> Self {
        Self {
            shot: CurrentReference::DcCurrent,
            rin: CurrentReference::FullCoupled,
        }
    }
}

/// Mean-square drive voltage for `power_w` into `load_ohms`.
pub fn drive_mean_square(power_w: f64, load_ohms: f64) -> f64 {
    power_w * load_ohms
}

/// Signal current variance at quadrature bias,
/// `¼·(α_e·P_o·R·β)²·⟨v²⟩`, A².
pub fn signal_variance(
    source: &OpticalSource,
    effective_coupling_db: Option<f64>,
    pd: &PhotodetectorModel,
    mzm: &MzmConfig,
    drive_power_w: f64,
    modulator_impedance: f64,
) -> Result<f64, NoiseError> {
    let alpha_db = effective_coupling_db.ok_or(NoiseError::MissingEffectiveCoupling)?;
    if !mzm.is_quadrature() {
        return Err(NoiseError::BiasNotQuadrature);
    }
    if !(drive_power_w >= 0.0) {
        return Err(invalid("drive_power_w", "must be ≥ 0"));
    }
    let alpha = db_to_lin(alpha_db);
    let amp = alpha * source.power * pd.responsivity * mzm.beta();
    Ok(0.25 * amp * amp * drive_mean_square(drive_power_w, modulator_impedance))
}

/// Everything the budget depends on besides the signal variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseInputs {
    pub source: OpticalSource,
    pub edfa: EdfaModel,
    pub effective_coupling_db: f64,
    pub pd: PhotodetectorModel,
    pub tx: TxChainNoise,
    pub awg: AwgModel,
    pub temperature: f64,
    pub conventions: NoiseConventions,
}

impl NoiseInputs {
    pub fn new(
        source: OpticalSource,
        edfa: EdfaModel,
        effective_coupling_db: f64,
        pd: PhotodetectorModel,
        tx: TxChainNoise,
        awg: AwgModel,
    ) -> Self {
        Self {
            source,
            edfa,
            effective_coupling_db,
            pd,
            tx,
            awg,
            temperature: ROOM_TEMPERATURE,
            conventions: NoiseConventions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTerm {
    Thermal,
    Shot,
    Rin,
    SpSp,
    SigSp,
    Awg,
    Tx,
}

impl NoiseTerm {
    pub const ALL: [NoiseTerm; 7] = [
        NoiseTerm::Thermal,
        NoiseTerm::Shot,
        NoiseTerm::Rin,
        NoiseTerm::SpSp,
        NoiseTerm::SigSp,
        NoiseTerm::Awg,
        NoiseTerm::Tx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseTerm::Thermal => "thermal",
            NoiseTerm::Shot => "shot",
            NoiseTerm::Rin => "rin",
            NoiseTerm::SpSp => "sp_sp",
            NoiseTerm::SigSp => "sig_sp",
            NoiseTerm::Awg => "awg",
            NoiseTerm::Tx => "tx",
        }
    }

    /// Terms produced by the detected light itself.
    pub fn is_optical(self) -> bool {
        matches!(
            self,
            NoiseTerm::Shot | NoiseTerm::Rin | NoiseTerm::SpSp | NoiseTerm::SigSp
        )
    }
}

impl fmt::Display for NoiseTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which mechanism sets the receiver noise floor (the AWG term scales with
/// the signal and is excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegime {
    /// Load thermal noise plus electronics noise.
    ThermalLimited,
    ShotLimited,
    RinLimited,
    AseLimited,
}

/// Current-noise variances at one photodetector output, A².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudgetReport {
    pub thermal: f64,
    pub shot: f64,
    pub rin: f64,
    pub sp_sp: f64,
    pub sig_sp: f64,
    pub awg: f64,
    pub tx: f64,
    pub signal_variance: f64,
    /// Mean-square modulator drive voltage, V².
    pub drive_mean_square: f64,
}

impl NoiseBudgetReport {
    pub fn term(&self, term: NoiseTerm) -> f64 {
        match term {
            NoiseTerm::Thermal => self.thermal,
            NoiseTerm::Shot => self.shot,
            NoiseTerm::Rin => self.rin,
            NoiseTerm::SpSp => self.sp_sp,
            NoiseTerm::SigSp => self.sig_sp,
            NoiseTerm::Awg => self.awg,
            NoiseTerm::Tx => self.tx,
        }
    }

    pub fn terms(&self) -> [(NoiseTerm, f64); 7] {
        NoiseTerm::ALL.map(|t| (t, self.term(t)))
    }

    pub fn total(&self) -> f64 {
        self.terms().iter().map(|(_, v)| v).sum()
    }

    /// Thermal + AWG + electronics: the terms kept in the simplified SNR.
    pub fn dominant_total(&self) -> f64 {
        self.thermal + self.awg + self.tx
    }

    pub fn optical_total(&self) -> f64 {
        self.terms()
            .iter()
            .filter(|(t, _)| t.is_optical())
            .map(|(_, v)| v)
            .sum()
    }

    /// Largest single contribution.
    pub fn dominant_term(&self) -> NoiseTerm {
        self.terms()
            .iter()
            .copied()
            .fold((NoiseTerm::Thermal, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
            .0
    }

    pub fn regime(&self) -> NoiseRegime {
        let candidates = [
            (NoiseRegime::ThermalLimited, self.thermal + self.tx),
            (NoiseRegime::ShotLimited, self.shot),
            (NoiseRegime::RinLimited, self.rin),
            (NoiseRegime::AseLimited, self.sp_sp + self.sig_sp),
        ];
        candidates
            .iter()
            .copied()
            .fold(candidates[0], |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    /// Writes `term_name,variance_A2` rows for the seven terms and the signal.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["term_name", "variance_A2"])?;
        for (t, v) in self.terms() {
            w.write_record([t.name().to_string(), format!("{v:e}")])?;
        }
        w.write_record(["signal".to_string(), format!("{:e}", self.signal_variance)])?;
        w.flush()?;
        Ok(())
    }
}

/// Evaluates every noise variance for one element.
pub fn noise_terms(inputs: &NoiseInputs, signal_variance: f64) -> Result<NoiseBudgetReport, NoiseError> {
    inputs.edfa.validate()?;
    inputs.tx.validate()?;
    inputs.awg.validate()?;
    if !(inputs.temperature > 0.0) {
        return Err(invalid("temperature", "must be > 0 K"));
    }
    if !(signal_variance >= 0.0) {
        return Err(invalid("signal_variance", "must be ≥ 0"));
    }
    let NoiseInputs {
        source,
        edfa,
        effective_coupling_db,
        pd,
        tx,
        awg,
        temperature,
        conventions,
    } = *inputs;
    let q = ELEMENTARY_CHARGE;
    let df = tx.tia_bandwidth;
    let alpha = db_to_lin(effective_coupling_db);
    let nu = source.optical_frequency;
    let eta = pd.quantum_efficiency(nu);
    let nf = db_to_lin(edfa.nf_db);
    let full_current = alpha * pd.responsivity * source.power;
    let reference = |r: CurrentReference| match r {
        CurrentReference::DcCurrent => 0.5 * full_current,
        CurrentReference::FullCoupled => full_current,
    };

    let thermal = 4.0 * BOLTZMANN * temperature * df / tx.load_resistance;
    let shot = 2.0 * q * reference(conventions.shot) * df;
    let rin = reference(conventions.rin).powi(2) * source.rin_linear() * df;
    let sp_sp = (alpha * q * eta * edfa.gain * nf).powi(2) * edfa.ase_bandwidth * df;
    let sig_sp = 2.0 * (alpha * q * eta).powi(2) * edfa.gain * nf * source.power * df / (PLANCK * nu);
    let awg_noise = signal_variance / awg.snr_linear();

    Ok(NoiseBudgetReport {
        thermal,
        shot,
        rin,
        sp_sp,
        sig_sp,
        awg: awg_noise,
        tx: tx.input_referred_variance,
        signal_variance,
        drive_mean_square: 0.0,
    })
}

/// Signal variance plus the full budget for a drive of `drive_power_w`
/// into a modulator of `modulator_impedance` ohms.
pub fn element_budget(
    inputs: &NoiseInputs,
    mzm: &MzmConfig,
    drive_power_w: f64,
    modulator_impedance: f64,
) -> Result<NoiseBudgetReport, NoiseError> {
    let sig = signal_variance(
        &inputs.source,
        Some(inputs.effective_coupling_db),
        &inputs.pd,
        mzm,
        drive_power_w,
        modulator_impedance,
    )?;
    let mut report = noise_terms(inputs, sig)?;
    report.drive_mean_square = drive_mean_square(drive_power_w, modulator_impedance);
    Ok(report)
}

/// Per-element SNR in dB; `dominant_only` keeps thermal, AWG and
/// electronics noise.
pub fn element_snr(report: &NoiseBudgetReport, dominant_only: bool) -> Result<f64, NoiseError> {
    let noise = if dominant_only {
        report.dominant_total()
    } else {
        report.total()
    };
    if !(noise > 0.0) {
        return Err(NoiseError::ZeroNoise);
    }
    Ok(lin_to_db(report.signal_variance / noise))
}

/// SNR after coherently combining `n_elements` channels with uncorrelated
/// noise.
pub fn array_snr(element_snr_db: f64, n_elements: usize) -> Result<f64, NoiseError> {
    if n_elements == 0 {
        return Err(NoiseError::NoElements);
    }
    Ok(element_snr_db + lin_to_db(n_elements as f64))
}
