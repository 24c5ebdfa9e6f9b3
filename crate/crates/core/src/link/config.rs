//! Scenario files: TOML with the unit in every key name.
//!
//! Omitted keys take the values of the bundled `paper-defaults` scenario.
//! Loading never stops at the first problem; every violated invariant is
//! reported as a [`Diagnostic`] naming the offending key.

use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beam::{ArrayGeometry, ElementPattern};
use crate::calibration::{CostWeights, OptimizerConfig, VectorModulator, VmImpairments};
use crate::modem::{validate_plan, FrequencyPlan, Recovery, Sideband, WaveformSpec};
use crate::noise::{AwgModel, EdfaModel, TxChainNoise};
use crate::optics::{
    default_grating_coupler_area, CollimatorModel, CouplingChain, Drive, MzmConfig, OpticalSource,
    PhotodetectorModel,
};
use crate::units::lin_to_db;

/// The canonical scenario shipped with the crate.
pub const PAPER_DEFAULTS_TOML: &str = include_str!("../../scenarios/paper-defaults.toml");

/// One configuration problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Dotted key path, e.g. `array.elements`.
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Aggregate loss of the wireless link and receiver chain, dB.
    pub link_penalty_db: f64,
    pub optical: OpticalSection,
    pub elements: ElementsSection,
    pub array: ArraySection,
    pub modem: ModemSection,
    pub receiver: ReceiverSection,
    pub awg: AwgSection,
    pub outputs: OutputsSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "paper-defaults".into(),
            seed: 20_220_601,
            link_penalty_db: 3.0,
            optical: OpticalSection::default(),
            elements: ElementsSection::default(),
            array: ArraySection::default(),
            modem: ModemSection::default(),
            receiver: ReceiverSection::default(),
            awg: AwgSection::default(),
            outputs: OutputsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticalSection {
    pub power_mw: f64,
    pub optical_frequency_thz: f64,
    pub rin_dbc_per_hz: f64,
    pub v_pi_v: f64,
    pub bias_phase_deg: f64,
    pub drive_power_mw: f64,
    pub drive_frequency_ghz: f64,
    pub modulator_impedance_ohm: f64,
    pub edfa: EdfaSection,
    pub coupling: CouplingSection,
    pub collimator: CollimatorSection,
}

impl Default for OpticalSection {
    fn default() -> Self {
        Self {
            power_mw: 200.0,
            optical_frequency_thz: 193.0,
            rin_dbc_per_hz: -140.0,
            v_pi_v: 6.0,
            bias_phase_deg: 90.0,
            drive_power_mw: 25.0,
            drive_frequency_ghz: 28.0,
            modulator_impedance_ohm: 50.0,
            edfa: EdfaSection::default(),
            coupling: CouplingSection::default(),
            collimator: CollimatorSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdfaSection {
    pub gain_db: f64,
    pub nf_db: f64,
    pub ase_bandwidth_thz: f64,
}

impl Default for EdfaSection {
    fn default() -> Self {
        Self {
            gain_db: 20.0,
            nf_db: 6.5,
            ase_bandwidth_thz: 3.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    pub spot_diameter_mm: f64,
    pub grating_coupler_efficiency_db: f64,
    /// Omitted: the area that gives −64.5 dB per coupler under the spot.
    pub grating_coupler_area_um2: Option<f64>,
    pub gratings_per_chip: u32,
    pub lens_diameter_mm: f64,
    pub lens_enabled: bool,
    /// Measured coupling with the lens; replaces the geometric value.
    pub effective_coupling_db: Option<f64>,
}

impl Default for CouplingSection {
    fn default() -> Self {
        Self {
            spot_diameter_mm: 7.0,
            grating_coupler_efficiency_db: -5.5,
            grating_coupler_area_um2: None,
            gratings_per_chip: 4,
            lens_diameter_mm: 0.69,
            lens_enabled: true,
            effective_coupling_db: Some(-39.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollimatorSection {
    pub efl_mm: f64,
    pub mfd_um: f64,
    pub wavelength_nm: f64,
}

impl Default for CollimatorSection {
    fn default() -> Self {
        Self {
            efl_mm: 37.13,
            mfd_um: 10.4,
            wavelength_nm: 1550.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElementsSection {
    pub count: usize,
    pub responsivity_a_per_w: f64,
    pub eo_bandwidth_ghz: f64,
    pub tia_bandwidth_ghz: f64,
    pub load_resistance_ohm: f64,
    pub input_referred_noise_a2: f64,
    /// Power gain from photocurrent into the 50 Ω load to the antenna port.
    pub rf_chain_gain_db: f64,
    pub temperature_k: f64,
    pub vm: VmSection,
    pub calibration: CalibrationSection,
}

impl Default for ElementsSection {
    fn default() -> Self {
        Self {
            count: 4,
            responsivity_a_per_w: 1.0,
            eo_bandwidth_ghz: 40.0,
            tia_bandwidth_ghz: 1.5,
            load_resistance_ohm: 50.0,
            input_referred_noise_a2: 2.16e-13,
            rf_chain_gain_db: 51.0,
            temperature_k: 300.0,
            vm: VmSection::default(),
            calibration: CalibrationSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VmSection {
    pub code_bits: u32,
    pub iq_phase_imbalance_deg: f64,
    pub iq_amplitude_imbalance_db: f64,
    pub dac_inl_a2: f64,
    pub dac_inl_a3: f64,
    pub feedthrough_magnitude: f64,
    pub feedthrough_phase_rad: f64,
    pub insertion_phase_deg: f64,
    pub vga_phase_deg_per_db: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for VmSection {
    fn default() -> Self {
        let p = VmImpairments::paper_matched();
        Self {
            code_bits: 5,
            iq_phase_imbalance_deg: p.iq_phase_imbalance_deg,
            iq_amplitude_imbalance_db: p.iq_amplitude_imbalance_db,
            dac_inl_a2: p.dac_inl[0],
            dac_inl_a3: p.dac_inl[1],
            feedthrough_magnitude: 0.03,
            feedthrough_phase_rad: 0.5,
            insertion_phase_deg: p.insertion_phase_deg,
            vga_phase_deg_per_db: p.vga_phase_deg_per_db,
            noise_sigma: p.noise_sigma,
            noise_seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub step: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub phase_weight: f64,
    pub amplitude_weight: f64,
    pub amplitude_backoff: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let o = OptimizerConfig::default();
        Self {
            step: o.step,
            iterations: o.iterations,
            restarts: o.restarts,
            seed: o.seed,
            phase_weight: o.weights.phase,
            amplitude_weight: o.weights.amplitude,
            amplitude_backoff: o.amplitude_backoff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementPosition {
    pub x_mm: f64,
    pub y_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub frequency_ghz: f64,
    pub element_gain_dbi: f64,
    pub elements: Vec<ElementPosition>,
    pub scan_start_deg: f64,
    pub scan_stop_deg: f64,
    pub scan_step_deg: f64,
    pub scan_planes_phi_deg: Vec<f64>,
    /// Steer the array factor so the total-pattern peak lands on the
    /// commanded angle despite the element pattern.
    pub compensate_element_pattern: bool,
    pub metric_step_deg: f64,
    pub export_start_deg: f64,
    pub export_stop_deg: f64,
    pub export_step_deg: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        let h = 2.8;
        Self {
            frequency_ghz: 28.0,
            element_gain_dbi: 4.4,
            elements: vec![
                ElementPosition { x_mm: -h, y_mm: -h },
                ElementPosition { x_mm: h, y_mm: -h },
                ElementPosition { x_mm: -h, y_mm: h },
                ElementPosition { x_mm: h, y_mm: h },
            ],
            scan_start_deg: -30.0,
            scan_stop_deg: 30.0,
            scan_step_deg: 5.0,
            scan_planes_phi_deg: vec![0.0, 90.0],
            compensate_element_pattern: true,
            metric_step_deg: 0.1,
            export_start_deg: -60.0,
            export_stop_deg: 60.0,
            export_step_deg: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModemSection {
    pub modulation_order: u32,
    pub symbol_rate_mbaud: f64,
    pub rolloff: f64,
    pub samples_per_symbol: usize,
    pub n_symbols: usize,
    pub batch_symbols: usize,
    pub recovery: Recovery,
    pub constellation_dump_symbols: usize,
    pub data_angles_deg: Vec<f64>,
    pub frequency_plan: PlanSection,
}

impl Default for ModemSection {
    fn default() -> Self {
        Self {
            modulation_order: 32,
            symbol_rate_mbaud: 400.0,
            rolloff: 0.35,
            samples_per_symbol: 4,
            n_symbols: 100_000,
            batch_symbols: 25_000,
            recovery: Recovery::Reference,
            constellation_dump_symbols: 2_000,
            data_angles_deg: vec![-30.0, -15.0, 0.0, 15.0, 30.0],
            frequency_plan: PlanSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub if1_ghz: f64,
    pub lo1_ghz: f64,
    pub lo2_ghz: f64,
    pub sideband: Sideband,
    pub target_rf_ghz: f64,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            if1_ghz: 7.0,
            lo1_ghz: 35.0,
            lo2_ghz: 26.5,
            sideband: Sideband::Difference,
            target_rf_ghz: 28.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverSection {
    pub horn_gain_db: f64,
    pub lna_gain_db: f64,
    pub lna_nf_db: f64,
    pub distance_m: f64,
    pub required_snr_db: f64,
    pub temperature_k: f64,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        Self {
            horn_gain_db: 10.0,
            lna_gain_db: 40.0,
            lna_nf_db: 5.0,
            distance_m: 0.45,
            required_snr_db: 23.0,
            temperature_k: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AwgSection {
    pub avg_output_power_dbm: f64,
    pub snr_db: f64,
}

impl Default for AwgSection {
    fn default() -> Self {
        Self {
            avg_output_power_dbm: -13.0,
            snr_db: 32.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsSection {
    /// Relative paths resolve against the scenario file's directory.
    pub directory: String,
    pub pattern_csv: bool,
    pub constellation_csv: bool,
    pub eirp_sweep_mw: Vec<f64>,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            directory: "out/paper-defaults".into(),
            pattern_csv: true,
            constellation_csv: true,
            eirp_sweep_mw: vec![20.0, 50.0, 100.0, 200.0, 400.0],
        }
    }
}

/// Steering sweep and pattern sampling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPlan {
    pub angles_deg: Vec<f64>,
    pub planes_phi_deg: Vec<f64>,
    pub compensate_element_pattern: bool,
    pub metric_step_deg: f64,
    pub export_start_deg: f64,
    pub export_stop_deg: f64,
    pub export_step_deg: f64,
}

/// A validated scenario in library types (SI units).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkScenario {
    pub name: String,
    pub seed: u64,
    pub link_penalty_db: f64,
    pub source: OpticalSource,
    pub edfa: EdfaModel,
    pub mzm: MzmConfig,
    pub drive_power_w: f64,
    pub modulator_impedance: f64,
    pub coupling: CouplingChain,
    pub collimator: CollimatorModel,
    pub pd: PhotodetectorModel,
    pub tx: TxChainNoise,
    pub temperature: f64,
    pub rf_chain_gain_db: f64,
    pub device: VectorModulator,
    pub optimizer: OptimizerConfig,
    pub geometry: ArrayGeometry,
    pub scan: ScanPlan,
    pub waveform: WaveformSpec,
    pub batch_symbols: usize,
    pub recovery: Recovery,
    pub dump_symbols: usize,
    pub data_angles_deg: Vec<f64>,
    pub plan: FrequencyPlan,
    pub receiver: ReceiverSection,
    pub awg: AwgModel,
    pub output_dir: PathBuf,
    pub pattern_csv: bool,
    pub constellation_csv: bool,
    pub eirp_sweep_w: Vec<f64>,
}

struct Checker {
    diags: Vec<Diagnostic>,
}

impl Checker {
    fn fail(&mut self, field: &str, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.fail(field, format!("must be finite and > 0, got {v}"));
        }
    }

    fn finite(&mut self, field: &str, v: f64) {
        if !v.is_finite() {
            self.fail(field, format!("must be finite, got {v}"));
        }
    }

    fn at_most(&mut self, field: &str, v: f64, max: f64) {
        if !(v.is_finite() && v <= max) {
            self.fail(field, format!("must be ≤ {max}, got {v}"));
        }
    }

    fn result<E: fmt::Display>(&mut self, field: &str, r: Result<(), E>) {
        if let Err(e) = r {
            self.fail(field, e.to_string());
        }
    }
}

fn sweep(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, Vec<Diagnostic>> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".into());
            vec![Diagnostic {
                field,
                message: e.message().trim().to_string(),
            }]
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Checks every invariant and converts to library types. `base_dir`
    /// anchors a relative output directory.
    pub fn validate(&self, base_dir: &Path) -> Result<LinkScenario, Vec<Diagnostic>> {
        let mut c = Checker { diags: Vec::new() };
        let o = &self.optical;

        c.finite("link_penalty_db", self.link_penalty_db);
        if self.link_penalty_db < 0.0 {
            c.fail("link_penalty_db", "must be ≥ 0");
        }

        c.positive("optical.power_mw", o.power_mw);
        c.positive("optical.optical_frequency_thz", o.optical_frequency_thz);
        c.finite("optical.rin_dbc_per_hz", o.rin_dbc_per_hz);
        c.positive("optical.v_pi_v", o.v_pi_v);
        c.positive("optical.drive_power_mw", o.drive_power_mw);
        c.positive("optical.drive_frequency_ghz", o.drive_frequency_ghz);
        c.positive("optical.modulator_impedance_ohm", o.modulator_impedance_ohm);
        if (o.bias_phase_deg - 90.0).abs() > 1e-6 {
            c.fail("optical.bias_phase_deg", "the link model requires quadrature bias (90°)");
        }
        let source = OpticalSource {
            power: o.power_mw * 1e-3,
            optical_frequency: o.optical_frequency_thz * 1e12,
            rin: o.rin_dbc_per_hz,
        };
        c.result("optical", source.validate());

        let e = &o.edfa;
        c.finite("optical.edfa.gain_db", e.gain_db);
        if e.gain_db < 0.0 {
            c.fail("optical.edfa.gain_db", "must be ≥ 0 dB");
        }
        c.finite("optical.edfa.nf_db", e.nf_db);
        c.positive("optical.edfa.ase_bandwidth_thz", e.ase_bandwidth_thz);
        let edfa = EdfaModel {
            gain: 10f64.powf(e.gain_db / 10.0),
            nf_db: e.nf_db,
            ase_bandwidth: e.ase_bandwidth_thz * 1e12,
        };

        let drive_power_w = o.drive_power_mw * 1e-3;
        let mzm = MzmConfig {
            v_pi: o.v_pi_v,
            bias_phase: o.bias_phase_deg.to_radians(),
            drive: Drive::sinusoid_from_power(drive_power_w, o.modulator_impedance_ohm, o.drive_frequency_ghz * 1e9),
        };
        c.result("optical", mzm.validate());

        let cp = &o.coupling;
        c.positive("optical.coupling.spot_diameter_mm", cp.spot_diameter_mm);
        c.positive("optical.coupling.lens_diameter_mm", cp.lens_diameter_mm);
        c.at_most("optical.coupling.grating_coupler_efficiency_db", cp.grating_coupler_efficiency_db, 0.0);
        if cp.gratings_per_chip == 0 {
            c.fail("optical.coupling.gratings_per_chip", "must be ≥ 1");
        }
        if let Some(a) = cp.grating_coupler_area_um2 {
            c.positive("optical.coupling.grating_coupler_area_um2", a);
        }
        if let Some(db) = cp.effective_coupling_db {
            c.at_most("optical.coupling.effective_coupling_db", db, 0.0);
        }
        let spot = cp.spot_diameter_mm * 1e-3;
        let coupling = CouplingChain {
            spot_diameter: spot,
            grating_coupler_efficiency_db: cp.grating_coupler_efficiency_db,
            grating_coupler_area: cp
                .grating_coupler_area_um2
                .map(|a| a * 1e-12)
                .unwrap_or_else(|| default_grating_coupler_area(spot)),
            gratings_per_chip: cp.gratings_per_chip,
            lens_diameter: cp.lens_diameter_mm * 1e-3,
            lens_enabled: cp.lens_enabled,
            effective_coupling_override_db: cp.effective_coupling_db,
        };
        c.result("optical.coupling", coupling.validate());

        let cl = &o.collimator;
        let collimator = CollimatorModel {
            efl: cl.efl_mm * 1e-3,
            mfd: cl.mfd_um * 1e-6,
            wavelength: cl.wavelength_nm * 1e-9,
        };
        c.positive("optical.collimator.efl_mm", cl.efl_mm);
        c.positive("optical.collimator.mfd_um", cl.mfd_um);
        c.positive("optical.collimator.wavelength_nm", cl.wavelength_nm);

        let el = &self.elements;
        if el.count == 0 {
            c.fail("elements.count", "must be ≥ 1");
        }
        c.positive("elements.responsivity_a_per_w", el.responsivity_a_per_w);
        c.positive("elements.eo_bandwidth_ghz", el.eo_bandwidth_ghz);
        c.positive("elements.tia_bandwidth_ghz", el.tia_bandwidth_ghz);
        c.positive("elements.load_resistance_ohm", el.load_resistance_ohm);
        c.positive("elements.temperature_k", el.temperature_k);
        c.finite("elements.rf_chain_gain_db", el.rf_chain_gain_db);
        if !(el.input_referred_noise_a2 >= 0.0) {
            c.fail("elements.input_referred_noise_a2", "must be ≥ 0");
        }
        let pd = PhotodetectorModel {
            responsivity: el.responsivity_a_per_w,
            eo_bandwidth: el.eo_bandwidth_ghz * 1e9,
        };
        if el.eo_bandwidth_ghz < o.drive_frequency_ghz {
            c.fail("elements.eo_bandwidth_ghz", "drive frequency lies outside the detector bandwidth");
        }
        let tx = TxChainNoise {
            input_referred_variance: el.input_referred_noise_a2,
            tia_bandwidth: el.tia_bandwidth_ghz * 1e9,
            load_resistance: el.load_resistance_ohm,
        };

        let vm = &el.vm;
        let impairments = VmImpairments {
            iq_phase_imbalance_deg: vm.iq_phase_imbalance_deg,
            iq_amplitude_imbalance_db: vm.iq_amplitude_imbalance_db,
            dac_inl: [vm.dac_inl_a2, vm.dac_inl_a3],
            feedthrough: Complex64::from_polar(vm.feedthrough_magnitude, vm.feedthrough_phase_rad),
            insertion_phase_deg: vm.insertion_phase_deg,
            vga_phase_deg_per_db: vm.vga_phase_deg_per_db,
            noise_sigma: vm.noise_sigma,
        };
        let device = match VectorModulator::new(impairments, vm.code_bits, vm.noise_seed) {
            Ok(d) => Some(d),
            Err(e) => {
                c.fail("elements.vm", e.to_string());
                None
            }
        };
        let cal = &el.calibration;
        let optimizer = OptimizerConfig {
            step: cal.step,
            iterations: cal.iterations,
            restarts: cal.restarts,
            seed: cal.seed,
            weights: CostWeights {
                phase: cal.phase_weight,
                amplitude: cal.amplitude_weight,
            },
            amplitude_backoff: cal.amplitude_backoff,
            ..OptimizerConfig::default()
        };
        c.result("elements.calibration", optimizer.validate());

        let ar = &self.array;
        c.positive("array.frequency_ghz", ar.frequency_ghz);
        if ar.elements.is_empty() {
            c.fail("array.elements", "at least one element is required");
        } else if el.count != ar.elements.len() {
            c.fail(
                "elements.count",
                format!("{} elements declared but array.elements lists {}", el.count, ar.elements.len()),
            );
        }
        let geometry = ArrayGeometry {
            elements: ar.elements.iter().map(|p| [p.x_mm * 1e-3, p.y_mm * 1e-3]).collect(),
            design_frequency_hz: ar.frequency_ghz * 1e9,
            element_pattern: ElementPattern::CosinePower {
                peak_gain_dbi: ar.element_gain_dbi,
            },
        };
        if !ar.elements.is_empty() {
            c.result("array", geometry.validate());
        }
        c.positive("array.scan_step_deg", ar.scan_step_deg);
        for (field, v) in [("array.scan_start_deg", ar.scan_start_deg), ("array.scan_stop_deg", ar.scan_stop_deg)] {
            if !(v.abs() < 90.0) {
                c.fail(field, "must lie in (−90°, 90°)");
            }
        }
        if ar.scan_stop_deg < ar.scan_start_deg {
            c.fail("array.scan_stop_deg", "must be ≥ scan_start_deg");
        }
        if ar.scan_planes_phi_deg.is_empty() {
            c.fail("array.scan_planes_phi_deg", "at least one plane is required");
        }
        if !(ar.metric_step_deg > 0.0 && ar.metric_step_deg <= crate::beam::MAX_SCAN_STEP_DEG) {
            c.fail("array.metric_step_deg", "must lie in (0, 0.5]");
        }
        c.positive("array.export_step_deg", ar.export_step_deg);
        if !(ar.export_start_deg >= -90.0 && ar.export_stop_deg <= 90.0 && ar.export_start_deg < ar.export_stop_deg) {
            c.fail("array.export_start_deg", "export range must be increasing within [−90°, 90°]");
        }

        let m = &self.modem;
        let waveform = WaveformSpec {
            modulation_order: m.modulation_order,
            symbol_rate_baud: m.symbol_rate_mbaud * 1e6,
            rolloff: m.rolloff,
            samples_per_symbol: m.samples_per_symbol,
            n_symbols: m.n_symbols,
            seed: self.seed,
        };
        c.result("modem", waveform.validate());
        if m.batch_symbols == 0 {
            c.fail("modem.batch_symbols", "must be ≥ 1");
        }
        for a in &m.data_angles_deg {
            if !(a.abs() < 90.0) {
                c.fail("modem.data_angles_deg", format!("{a}° lies outside (−90°, 90°)"));
            }
        }
        let fp = &m.frequency_plan;
        let plan = FrequencyPlan {
            if1_hz: fp.if1_ghz * 1e9,
            lo1_hz: fp.lo1_ghz * 1e9,
            lo2_hz: fp.lo2_ghz * 1e9,
            sideband: fp.sideband,
            target_rf_hz: fp.target_rf_ghz * 1e9,
        };
        c.result(
            "modem.frequency_plan",
            validate_plan(&plan, waveform.occupied_bandwidth_hz()).map(|_| ()),
        );
        if (fp.target_rf_ghz - ar.frequency_ghz).abs() > 1e-9 {
            c.fail("modem.frequency_plan.target_rf_ghz", "must equal array.frequency_ghz");
        }

        let r = &self.receiver;
        c.finite("receiver.horn_gain_db", r.horn_gain_db);
        c.finite("receiver.lna_gain_db", r.lna_gain_db);
        c.finite("receiver.lna_nf_db", r.lna_nf_db);
        c.positive("receiver.distance_m", r.distance_m);
        c.finite("receiver.required_snr_db", r.required_snr_db);
        c.positive("receiver.temperature_k", r.temperature_k);

        let awg = AwgModel {
            avg_output_power_dbm: self.awg.avg_output_power_dbm,
            snr_db: self.awg.snr_db,
            symbol_rate: waveform.symbol_rate_baud,
            rolloff: waveform.rolloff,
        };
        c.result("awg", awg.validate());
        c.result("elements", tx.validate());
        c.result("optical.edfa", edfa.validate());

        if self.outputs.directory.trim().is_empty() {
            c.fail("outputs.directory", "must not be empty");
        }
        for p in &self.outputs.eirp_sweep_mw {
            if !(p.is_finite() && *p > 0.0) {
                c.fail("outputs.eirp_sweep_mw", format!("sweep values must be > 0, got {p}"));
            }
        }

        if !c.diags.is_empty() {
            return Err(c.diags);
        }
        let dir = PathBuf::from(&self.outputs.directory);
        Ok(LinkScenario {
            name: self.name.clone(),
            seed: self.seed,
            link_penalty_db: self.link_penalty_db,
            source,
            edfa,
            mzm,
            drive_power_w,
            modulator_impedance: o.modulator_impedance_ohm,
            coupling,
            collimator,
            pd,
            tx,
            temperature: el.temperature_k,
            rf_chain_gain_db: el.rf_chain_gain_db,
            device: device.expect("device validated"),
            optimizer,
            geometry,
            scan: ScanPlan {
                angles_deg: sweep(ar.scan_start_deg, ar.scan_stop_deg, ar.scan_step_deg),
                planes_phi_deg: ar.scan_planes_phi_deg.clone(),
                compensate_element_pattern: ar.compensate_element_pattern,
                metric_step_deg: ar.metric_step_deg,
                export_start_deg: ar.export_start_deg,
                export_stop_deg: ar.export_stop_deg,
                export_step_deg: ar.export_step_deg,
            },
            waveform,
            batch_symbols: m.batch_symbols,
            recovery: m.recovery,
            dump_symbols: m.constellation_dump_symbols,
            data_angles_deg: m.data_angles_deg.clone(),
            plan,
            receiver: r.clone(),
            awg,
            output_dir: if dir.is_absolute() { dir } else { base_dir.join(dir) },
            pattern_csv: self.outputs.pattern_csv,
            constellation_csv: self.outputs.constellation_csv,
            eirp_sweep_w: self.outputs.eirp_sweep_mw.iter().map(|p| p * 1e-3).collect(),
        })
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<LinkScenario, Vec<Diagnostic>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        vec![Diagnostic {
            field: "<file>".into(),
            message: format!("cannot read {}: {e}", path.display()),
        }]
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    ScenarioConfig::from_toml(&text)?.validate(base)
}

impl LinkScenario {
    /// Receiver chain gain `G_R` (horn plus LNA), dB.
    pub fn receiver_gain_db(&self) -> f64 {
        self.receiver.horn_gain_db + self.receiver.lna_gain_db
    }

    pub fn element_count(&self) -> usize {
        self.geometry.len()
    }

    pub fn array_gain_db(&self) -> f64 {
        lin_to_db(self.element_count() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_matches_defaults() {
        let cfg = ScenarioConfig::from_toml(PAPER_DEFAULTS_TOML).unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert!(cfg.validate(Path::new(".")).is_ok());
    }

    #[test]
    fn empty_elements_named() {
        let cfg = ScenarioConfig::from_toml("[array]\nelements = []\n").unwrap();
        let d = cfg.validate(Path::new(".")).unwrap_err();
        assert!(d.iter().any(|d| d.field == "array.elements"), "{d:?}");
    }

    #[test]
    fn several_problems_reported_together() {
        let cfg = ScenarioConfig::from_toml(
            "[optical]\npower_mw = -1\n[modem]\nmodulation_order = 8\n[receiver]\ndistance_m = 0\n",
        )
        .unwrap();
        let fields: Vec<String> = cfg.validate(Path::new(".")).unwrap_err().into_iter().map(|d| d.field).collect();
        for f in ["optical.power_mw", "modem", "receiver.distance_m"] {
            assert!(fields.iter().any(|x| x == f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let d = ScenarioConfig::from_toml("[optical]\npower_watts = 1\n").unwrap_err();
        assert!(d[0].message.contains("power_watts"), "{d:?}");
    }

    #[test]
    fn count_mismatch() {
        let cfg = ScenarioConfig::from_toml("[elements]\ncount = 3\n").unwrap();
        let d = cfg.validate(Path::new(".")).unwrap_err();
        assert_eq!(d[0].field, "elements.count");
    }

    #[test]
    fn plan_checked() {
        let cfg = ScenarioConfig::from_toml("[modem.frequency_plan]\nlo1_ghz = 21.0\n").unwrap();
        let d = cfg.validate(Path::new(".")).unwrap_err();
        assert_eq!(d[0].field, "modem.frequency_plan");
        let ok = ScenarioConfig::from_toml("[modem.frequency_plan]\nlo1_ghz = 21.0\nsideband = \"sum\"\n").unwrap();
        assert!(ok.validate(Path::new(".")).is_ok());
    }

    #[test]
    fn relative_output_resolves_against_file() {
        let s = ScenarioConfig::default().validate(Path::new("/tmp/x")).unwrap();
        assert_eq!(s.output_dir, Path::new("/tmp/x/out/paper-defaults"));
    }
}
