//! End-to-end pipeline: optics, noise, calibration, steering, modem, reach.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::budget::{max_wireless_distance, min_required_power, DistanceReport};
use super::config::{load_scenario, Diagnostic, LinkScenario};
use crate::beam::{
    free_space_path_loss, quantize_weights_aligned, radiation_pattern, scan_metrics, steer_for_peak, steering_weights,
    GridSpec, PatternGrid, PatternMetadata, ScanMetrics,
};
use crate::calibration::{calibrate, rms_errors, standard_grid, CalibrationOutcome, CalibrationTable, RmsErrors};
use crate::modem::{
    run_monte_carlo, validate_plan, write_constellation_csv, ChannelSpec, DerivedPlan, LinkQualityReport,
    WaveformSpec,
};
use crate::noise::{array_snr, element_budget, element_snr, NoiseBudgetReport, NoiseInputs, NoiseRegime};
use crate::optics::{
    collimation_reach, photocurrent_closed_form, ClosedFormPhotocurrent, CouplingChain, CouplingSummary, OpticalSource,
};
use crate::units::{lin_to_db, watts_to_dbm};
use crate::{derive_seed, Error, Result};

/// Overrides the output directory of every run.
pub const OUT_DIR_ENV: &str = "METASURFACE_OUT_DIR";

/// Tolerance of the injected-SNR identity, dB.
pub const SNR_IDENTITY_TOL_DB: f64 = 1e-9;

/// Which halves of the measurement setup to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// CW drive, steering sweep and EIRP.
    Pattern,
    /// QAM drive through the modem at each data angle.
    Data,
    Both,
}

impl RunMode {
    fn pattern(self) -> bool {
        matches!(self, RunMode::Pattern | RunMode::Both)
    }

    fn data(self) -> bool {
        matches!(self, RunMode::Data | RunMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetSection {
    pub coupling: CouplingSummary,
    /// Geometric coupling with the lens removed, dB.
    pub coupling_without_lens_db: f64,
    pub collimation_reach_m: f64,
    pub photocurrent: ClosedFormPhotocurrent,
    /// Fundamental power delivered into the load of one element, dBm.
    pub element_rf_power_dbm: f64,
    pub noise: NoiseBudgetReport,
    pub regime: NoiseRegime,
    /// Thermal, AWG and electronics terms only.
    pub element_snr_db: f64,
    pub element_snr_all_terms_db: f64,
    pub array_snr_db: f64,
    pub link_penalty_db: f64,
    pub injected_snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSection {
    pub states: usize,
    pub uncalibrated: RmsErrors,
    pub calibrated: RmsErrors,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EirpPoint {
    pub optical_power_mw: f64,
    pub eirp_dbm: f64,
    pub eirp_lens_off_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanEntry {
    pub commanded_deg: f64,
    pub phi_deg: f64,
    /// Angle the array factor is steered to.
    pub array_factor_deg: f64,
    pub metrics: ScanMetrics,
    pub pointing_error_deg: f64,
    pub eirp_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EirpSection {
    pub element_rf_power_dbm: f64,
    pub rf_chain_gain_db: f64,
    /// Power combining gain, `10·log₁₀(N)`.
    pub combining_gain_db: f64,
    /// Peak of the calibrated broadside pattern.
    pub broadside_gain_dbi: f64,
    pub eirp_dbm: f64,
    pub eirp_lens_off_dbm: f64,
    pub lens_step_db: f64,
    /// Free-space loss to the measurement horn.
    pub measurement_path_loss_db: f64,
    /// Power expected at the receiver output of the measurement setup.
    pub measurement_received_dbm: f64,
    pub sweep: Vec<EirpPoint>,
    pub slope_db_per_decade: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternSection {
    pub eirp: EirpSection,
    pub scan: Vec<ScanEntry>,
    pub max_pointing_error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataEntry {
    pub angle_deg: f64,
    pub snr_db: f64,
    /// `10^(−SNR/20)` in percent.
    pub expected_evm_pct: f64,
    pub quality: LinkQualityReport,
    /// SNR implied by the measured EVM minus the injected SNR.
    pub evm_snr_error_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSection {
    pub min_required_power_dbm: f64,
    pub eirp_dbm: f64,
    pub distance: DistanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub mode: RunMode,
    pub budget: BudgetSection,
    pub calibration: CalibrationSection,
    pub frequency_plan: DerivedPlan,
    pub pattern: Option<PatternSection>,
    pub data: Vec<DataEntry>,
    pub link: Option<LinkSection>,
}

/// Everything a run produces before it touches the file system.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ScenarioReport,
    pub table: CalibrationTable,
    pub patterns: Vec<(f64, PatternGrid)>,
    pub constellations: Vec<(f64, Vec<(num_complex::Complex64, u32)>)>,
}

fn coupling_db(chain: &CouplingChain) -> Result<f64> {
    Ok(chain.coupling_factor()?.effective_db)
}

/// Power of the photocurrent fundamental into the element load, dBm.
fn element_power_dbm(s: &LinkScenario, source: &OpticalSource, chain: &CouplingChain) -> Result<f64> {
    let i = photocurrent_closed_form(source, &s.mzm, chain, &s.pd)?;
    Ok(watts_to_dbm(0.5 * i.i_fundamental * i.i_fundamental * s.tx.load_resistance))
}

/// Noise budget and SNR chain for one element and the array.
pub fn evaluate_budget(s: &LinkScenario) -> Result<BudgetSection> {
    let coupling = s.coupling.coupling_factor()?;
    let photocurrent = photocurrent_closed_form(&s.source, &s.mzm, &s.coupling, &s.pd)?;
    let mut inputs = NoiseInputs::new(s.source, s.edfa, coupling.effective_db, s.pd, s.tx, s.awg);
    inputs.temperature = s.temperature;
    let noise = element_budget(&inputs, &s.mzm, s.drive_power_w, s.modulator_impedance)?;
    let element = element_snr(&noise, true)?;
    let array = array_snr(element, s.element_count())?;
    let injected = array - s.link_penalty_db;
    let identity = element + lin_to_db(s.element_count() as f64) - s.link_penalty_db;
    if (injected - identity).abs() > SNR_IDENTITY_TOL_DB {
        return Err(Error::Consistency(format!(
            "injected SNR {injected} dB differs from element SNR + array gain − penalty {identity} dB"
        )));
    }
    Ok(BudgetSection {
        coupling,
        coupling_without_lens_db: coupling_db(&s.coupling.without_lens())?,
        collimation_reach_m: collimation_reach(&s.collimator),
        photocurrent,
        element_rf_power_dbm: element_power_dbm(s, &s.source, &s.coupling)?,
        noise,
        regime: noise.regime(),
        element_snr_db: element,
        element_snr_all_terms_db: element_snr(&noise, false)?,
        array_snr_db: array,
        link_penalty_db: s.link_penalty_db,
        injected_snr_db: injected,
    })
}

/// Calibrates the element phase shifter on the 36-state grid.
pub fn run_calibration(s: &LinkScenario) -> Result<CalibrationOutcome> {
    Ok(calibrate(&s.device, &standard_grid(), &s.optimizer)?)
}

fn calibration_section(outcome: &CalibrationOutcome) -> Result<CalibrationSection> {
    Ok(CalibrationSection {
        states: outcome.table.len(),
        uncalibrated: rms_errors(&outcome.uncalibrated)?,
        calibrated: rms_errors(&outcome.table)?,
        converged: outcome.converged,
    })
}

fn eirp_from(s: &LinkScenario, element_dbm: f64, gain_dbi: f64) -> f64 {
    element_dbm + s.rf_chain_gain_db + s.array_gain_db() + gain_dbi
}

/// Broadside gain of the ideal array, dBi.
fn ideal_broadside_gain(s: &LinkScenario) -> f64 {
    s.geometry.element_pattern.peak_gain_dbi() + s.array_gain_db()
}

/// EIRP at broadside for each optical power (W), with and without the lens.
/// The detected RF power goes with the square of the optical power, so the
/// table rises 20 dB per decade.
pub fn eirp_vs_optical_power(s: &LinkScenario, powers_w: &[f64]) -> Result<Vec<EirpPoint>> {
    let gain = ideal_broadside_gain(s);
    let lens_off = s.coupling.without_lens();
    powers_w
        .iter()
        .map(|&p| {
            let source = OpticalSource { power: p, ..s.source };
            Ok(EirpPoint {
                optical_power_mw: p * 1e3,
                eirp_dbm: eirp_from(s, element_power_dbm(s, &source, &s.coupling)?, gain),
                eirp_lens_off_dbm: eirp_from(s, element_power_dbm(s, &source, &lens_off)?, gain),
            })
        })
        .collect()
}

/// Least-squares slope of EIRP against log₁₀ of optical power.
pub fn eirp_slope_db_per_decade(points: &[EirpPoint]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.optical_power_mw.log10()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.eirp_dbm).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(points).map(|(x, p)| (x - mx) * (p.eirp_dbm - my)).sum();
    Some(sxy / sxx)
}

fn steer(s: &LinkScenario, theta: f64, phi: f64) -> Result<f64> {
    Ok(if s.scan.compensate_element_pattern {
        steer_for_peak(&s.geometry, theta, phi)?
    } else {
        theta
    })
}

/// Quantized weights for (θ, φ) and the array-factor angle used.
fn calibrated_weights(s: &LinkScenario, table: &CalibrationTable, theta: f64, phi: f64) -> Result<(crate::beam::ElementWeights, f64)> {
    let af = steer(s, theta, phi)?;
    let ideal = steering_weights(&s.geometry, af, phi)?;
    Ok((quantize_weights_aligned(&ideal, table)?, af))
}

fn scan_entry(s: &LinkScenario, table: &CalibrationTable, element_dbm: f64, theta: f64, phi: f64) -> Result<ScanEntry> {
    let (w, af) = calibrated_weights(s, table, theta, phi)?;
    let grid = GridSpec::cuts(&[phi], -90.0, 90.0, s.scan.metric_step_deg);
    let metrics = scan_metrics(&radiation_pattern(&s.geometry, &w, &grid)?)?;
    Ok(ScanEntry {
        commanded_deg: theta,
        phi_deg: phi,
        array_factor_deg: af,
        pointing_error_deg: (metrics.peak_theta_deg - theta).abs(),
        eirp_dbm: eirp_from(s, element_dbm, metrics.peak_gain_dbi),
        metrics,
    })
}

/// Both principal cuts for one steering angle, each steered in its own plane.
fn export_pattern(s: &LinkScenario, table: &CalibrationTable, theta: f64) -> Result<PatternGrid> {
    let sc = &s.scan;
    let mut rows = Vec::with_capacity(sc.planes_phi_deg.len());
    let mut theta_axis = Vec::new();
    for &phi in &sc.planes_phi_deg {
        let (w, _) = calibrated_weights(s, table, theta, phi)?;
        let grid = GridSpec::cuts(&[phi], sc.export_start_deg, sc.export_stop_deg, sc.export_step_deg);
        let p = radiation_pattern(&s.geometry, &w, &grid)?;
        theta_axis = p.theta_deg;
        rows.extend(p.gain_dbi);
    }
    Ok(PatternGrid {
        theta_deg: theta_axis,
        phi_deg: sc.planes_phi_deg.clone(),
        gain_dbi: rows,
        metadata: PatternMetadata {
            steering_theta_deg: Some(theta),
            steering_phi_deg: None,
            quantization: "calibrated".into(),
        },
    })
}

fn pattern_mode(s: &LinkScenario, budget: &BudgetSection, table: &CalibrationTable) -> Result<(PatternSection, Vec<(f64, PatternGrid)>)> {
    let element_dbm = budget.element_rf_power_dbm;
    let jobs: Vec<(f64, f64)> = s
        .scan
        .planes_phi_deg
        .iter()
        .flat_map(|&phi| s.scan.angles_deg.iter().map(move |&t| (t, phi)))
        .collect();
    let scan = jobs
        .par_iter()
        .map(|&(t, phi)| scan_entry(s, table, element_dbm, t, phi))
        .collect::<Result<Vec<_>>>()?;
    let max_err = scan.iter().map(|e| e.pointing_error_deg).fold(0.0, f64::max);

    let broadside = scan_entry(s, table, element_dbm, 0.0, s.scan.planes_phi_deg[0])?;
    let gain = broadside.metrics.peak_gain_dbi;
    let lens_off_dbm = element_power_dbm(s, &s.source, &s.coupling.without_lens())?;
    let eirp = eirp_from(s, element_dbm, gain);
    let eirp_off = eirp_from(s, lens_off_dbm, gain);
    let path_loss = free_space_path_loss(s.receiver.distance_m, s.geometry.design_frequency_hz);
    let sweep = eirp_vs_optical_power(s, &s.eirp_sweep_w)?;
    let eirp_section = EirpSection {
        element_rf_power_dbm: element_dbm,
        rf_chain_gain_db: s.rf_chain_gain_db,
        combining_gain_db: s.array_gain_db(),
        broadside_gain_dbi: gain,
        eirp_dbm: eirp,
        eirp_lens_off_dbm: eirp_off,
        lens_step_db: eirp - eirp_off,
        measurement_path_loss_db: path_loss,
        measurement_received_dbm: eirp + s.receiver_gain_db() - path_loss,
        slope_db_per_decade: eirp_slope_db_per_decade(&sweep),
        sweep,
    };

    let patterns = if s.pattern_csv {
        s.scan
            .angles_deg
            .par_iter()
            .map(|&t| export_pattern(s, table, t).map(|p| (t, p)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok((
        PatternSection {
            eirp: eirp_section,
            scan,
            max_pointing_error_deg: max_err,
        },
        patterns,
    ))
}

type Dump = (f64, Vec<(num_complex::Complex64, u32)>);

fn data_mode(s: &LinkScenario, snr_db: f64) -> Result<(Vec<DataEntry>, Vec<Dump>)> {
    let mut entries = Vec::new();
    let mut dumps = Vec::new();
    for (k, &angle) in s.data_angles_deg.iter().enumerate() {
        let spec = WaveformSpec {
            seed: derive_seed(s.seed, 1000 + k as u64),
            ..s.waveform
        };
        let dump = if s.constellation_csv { s.dump_symbols } else { 0 };
        let mc = run_monte_carlo(&spec, &ChannelSpec::awgn(snr_db), s.recovery, s.batch_symbols, dump)?;
        let evm = mc.report.evm_rms_pct / 100.0;
        entries.push(DataEntry {
            angle_deg: angle,
            snr_db,
            expected_evm_pct: 100.0 * 10f64.powf(-snr_db / 20.0),
            evm_snr_error_db: -20.0 * evm.log10() - snr_db,
            quality: mc.report,
        });
        if s.constellation_csv {
            dumps.push((angle, mc.constellation));
        }
    }
    Ok((entries, dumps))
}

/// Minimum receiver input and reach for a given EIRP.
pub fn link_distance(s: &LinkScenario, eirp_dbm: f64) -> LinkSection {
    let r = &s.receiver;
    let min = min_required_power(
        s.waveform.occupied_bandwidth_hz(),
        r.lna_nf_db,
        r.required_snr_db,
        r.horn_gain_db,
        r.temperature_k,
    );
    LinkSection {
        min_required_power_dbm: min,
        eirp_dbm,
        distance: max_wireless_distance(eirp_dbm, min, s.geometry.design_frequency_hz),
    }
}

/// Runs the pipeline in memory.
pub fn simulate(s: &LinkScenario, mode: RunMode) -> Result<RunOutput> {
    let budget = evaluate_budget(s)?;
    let plan = validate_plan(&s.plan, s.waveform.occupied_bandwidth_hz())?;
    let outcome = run_calibration(s)?;
    let calibration = calibration_section(&outcome)?;

    let (pattern, patterns) = if mode.pattern() {
        let (p, grids) = pattern_mode(s, &budget, &outcome.table)?;
        (Some(p), grids)
    } else {
        (None, Vec::new())
    };
    let (data, constellations) = if mode.data() {
        data_mode(s, budget.injected_snr_db)?
    } else {
        (Vec::new(), Vec::new())
    };
    let link = pattern.as_ref().map(|p| link_distance(s, p.eirp.eirp_dbm));
    Ok(RunOutput {
        report: ScenarioReport {
            name: s.name.clone(),
            seed: s.seed,
            mode,
            budget,
            calibration,
            frequency_plan: plan,
            pattern,
            data,
            link,
        },
        table: outcome.table,
        patterns,
        constellations,
    })
}

/// File-name form of an angle: `-30`, `0`, `12.5`.
pub fn angle_label(deg: f64) -> String {
    if deg == deg.trunc() {
        format!("{}", deg as i64)
    } else {
        format!("{deg}")
    }
}

/// Output directory after applying the environment override.
pub fn resolve_output_dir(s: &LinkScenario) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => s.output_dir.clone(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_all(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(&out.report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    out.report.budget.noise.write_csv(create(&dir.join("noise_budget.csv"))?)?;
    out.table.write_csv(create(&dir.join("calibration_table.csv"))?)?;
    for (angle, p) in &out.patterns {
        p.write_csv(create(&dir.join(format!("pattern_{}.csv", angle_label(*angle))))?)?;
    }
    for (angle, pts) in &out.constellations {
        write_constellation_csv(pts, create(&dir.join(format!("constellation_{}.csv", angle_label(*angle))))?)?;
    }
    Ok(())
}

/// Writes every output into `dir`. Files are staged in a sibling directory
/// and moved into place only when all of them were written; on failure
/// nothing is left behind.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    let mut staging = dir.as_os_str().to_owned();
    staging.push(".partial");
    let staging = PathBuf::from(staging);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    if let Err(e) = write_all(out, &staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&staging, dir).inspect_err(|_| {
        let _ = fs::remove_dir_all(&staging);
    })?;
    Ok(())
}

/// Loads, simulates and writes a scenario; returns the report and the
/// directory written.
pub fn run_scenario(path: &Path, mode: RunMode) -> Result<(ScenarioReport, PathBuf)> {
    let s = load_scenario(path).map_err(Error::Invalid)?;
    let out = simulate(&s, mode)?;
    let dir = resolve_output_dir(&s);
    write_outputs(&out, &dir)?;
    Ok((out.report, dir))
}

/// Diagnostics as printed by the command line.
pub fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}\n")).collect()
}
