//! Scenario configuration, link distance and the end-to-end runner.

mod budget;
mod config;
mod run;

pub use budget::{max_wireless_distance, min_required_power, DistanceReport, QUOTED_DISTANCE_M};
pub use config::{
    load_scenario, AwgSection, CalibrationSection as CalibrationConfig, CollimatorSection, CouplingSection,
    Diagnostic, EdfaSection, ElementPosition, ElementsSection, LinkScenario, ModemSection, OpticalSection,
    OutputsSection, PlanSection, ReceiverSection, ScanPlan, ScenarioConfig, VmSection, ArraySection,
    PAPER_DEFAULTS_TOML,
};
pub use run::{
    angle_label, eirp_slope_db_per_decade, eirp_vs_optical_power, evaluate_budget, format_diagnostics,
    link_distance, resolve_output_dir, run_calibration, run_scenario, simulate, write_outputs, BudgetSection,
    CalibrationSection, DataEntry, EirpPoint, EirpSection, LinkSection, PatternSection, RunMode, RunOutput,
    ScanEntry, ScenarioReport, OUT_DIR_ENV, SNR_IDENTITY_TOL_DB,
};
