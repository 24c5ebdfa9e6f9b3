use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use metasurface_sim::calibration::rms_errors;
use metasurface_sim::link::{
    eirp_vs_optical_power, evaluate_budget, format_diagnostics, link_distance, load_scenario, max_wireless_distance,
    min_required_power, resolve_output_dir, run_calibration, simulate, write_outputs, LinkScenario, RunMode,
    ScenarioReport,
};

const EXIT_INVALID: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;

#[derive(Parser)]
#[command(name = "metasurface-sim", version, about = "Optically fed mm-wave metasurface link simulator")]
#[command(after_help = "The output directory of a scenario can be overridden with METASURFACE_OUT_DIR.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Exit with status 3 when a result misses its acceptance threshold.
    #[arg(long)]
    assert: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list every problem found.
    Validate {
        config: PathBuf,
    },
    /// Steering sweep, radiation patterns and EIRP.
    Pattern(Common),
    /// Full run: patterns, EIRP and QAM data link at every data angle.
    Link(Common),
    /// Calibrate the phase shifter and write calibration_table.csv.
    Calibrate(Common),
    /// Noise budget and SNR chain; writes noise_budget.csv.
    Budget(Common),
    /// Receiver sensitivity and free-space reach.
    Distance {
        #[command(flatten)]
        common: Common,
        /// EIRP, dBm (default: computed from the scenario).
        #[arg(long, allow_hyphen_values = true)]
        eirp_dbm: Option<f64>,
        /// Receiver noise figure, dB.
        #[arg(long)]
        nf_db: Option<f64>,
        /// Required SNR, dB.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Signal bandwidth, MHz.
        #[arg(long)]
        bw_mhz: Option<f64>,
        /// Receive antenna gain, dB.
        #[arg(long)]
        gain_db: Option<f64>,
    },
}

enum Failure {
    Invalid(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<metasurface_sim::Error> for Failure {
    fn from(e: metasurface_sim::Error) -> Self {
        match e {
            metasurface_sim::Error::Invalid(d) => Failure::Invalid(format_diagnostics(&d)),
            other => Failure::Other(other.into()),
        }
    }
}

fn load(path: &Path) -> Result<LinkScenario, Failure> {
    load_scenario(path).map_err(|d| Failure::Invalid(format_diagnostics(&d)))
}

/// Threshold checks: (description, passed).
type Checks = Vec<(String, bool)>;

fn check(checks: &mut Checks, name: &str, value: f64, lo: f64, hi: f64) {
    checks.push((format!("{name} = {value:.3} in [{lo}, {hi}]"), (lo..=hi).contains(&value)));
}

/// Writes one file next to its final name, then renames it into place.
fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let target = dir.join(name);
    let staging = dir.join(format!("{name}.partial"));
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&staging)?);
        f(&mut w)?;
        w.flush()?;
        drop(w);
        fs::rename(&staging, &target)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&staging);
    }
    result.map(|_| target)
}

fn pattern_checks(report: &ScenarioReport, checks: &mut Checks) {
    if let Some(p) = &report.pattern {
        check(checks, "EIRP (dBm)", p.eirp.eirp_dbm, 9.0, 11.0);
        check(checks, "max pointing error (deg)", p.max_pointing_error_deg, 0.0, 2.0);
        check(checks, "lens on/off step (dB)", p.eirp.lens_step_db, 37.5, 38.5);
        if let Some(s) = p.eirp.slope_db_per_decade {
            check(checks, "EIRP slope (dB/decade)", s, 19.5, 20.5);
        }
    }
    for d in &report.data {
        check(
            checks,
            &format!("EVM-implied SNR error at {}° (dB)", d.angle_deg),
            d.evm_snr_error_db,
            -0.5,
            0.5,
        );
    }
}

fn print_report(report: &ScenarioReport, dir: &Path) {
    let b = &report.budget;
    println!("scenario        {}", report.name);
    println!("element SNR     {:.2} dB", b.element_snr_db);
    println!("array SNR       {:.2} dB", b.array_snr_db);
    println!("injected SNR    {:.2} dB", b.injected_snr_db);
    println!(
        "calibration     {:.2}° / {:.2}% (uncalibrated {:.2}° / {:.2}%)",
        report.calibration.calibrated.rms_phase_deg,
        report.calibration.calibrated.rms_amplitude_pct,
        report.calibration.uncalibrated.rms_phase_deg,
        report.calibration.uncalibrated.rms_amplitude_pct
    );
    if let Some(p) = &report.pattern {
        println!("EIRP            {:.2} dBm (lens off {:.2} dBm)", p.eirp.eirp_dbm, p.eirp.eirp_lens_off_dbm);
        println!("pointing error  {:.3}° max over {} beams", p.max_pointing_error_deg, p.scan.len());
    }
    for d in &report.data {
        println!(
            "data {:>6}°    EVM {:.2}% rms, {:.2}% peak, BER {:.2e}",
            d.angle_deg, d.quality.evm_rms_pct, d.quality.evm_peak_pct, d.quality.ber
        );
    }
    if let Some(l) = &report.link {
        println!(
            "reach           {:.2} m for {:.1} dB path loss",
            l.distance.distance_m, l.distance.tolerable_path_loss_db
        );
    }
    println!("outputs         {}", dir.display());
}

fn run(cli: Cli) -> Result<Checks, Failure> {
    let mut checks = Checks::new();
    let mode = match cli.command {
        Command::Link(_) => RunMode::Both,
        _ => RunMode::Pattern,
    };
    match cli.command {
        Command::Validate { config } => {
            let s = load(&config)?;
            println!(
                "{}: valid ({} elements, {} steering angles, outputs to {})",
                config.display(),
                s.element_count(),
                s.scan.angles_deg.len() * s.scan.planes_phi_deg.len(),
                resolve_output_dir(&s).display()
            );
        }
        Command::Pattern(c) | Command::Link(c) => {
            let s = load(&c.config)?;
            let out = simulate(&s, mode)?;
            let dir = resolve_output_dir(&s);
            write_outputs(&out, &dir)?;
            print_report(&out.report, &dir);
            pattern_checks(&out.report, &mut checks);
        }
        Command::Calibrate(c) => {
            let s = load(&c.config)?;
            let outcome = run_calibration(&s)?;
            let before = rms_errors(&outcome.uncalibrated).map_err(metasurface_sim::Error::from)?;
            let after = rms_errors(&outcome.table).map_err(metasurface_sim::Error::from)?;
            let path = write_file(&resolve_output_dir(&s), "calibration_table.csv", |w| {
                outcome.table.write_csv(w)?;
                Ok(())
            })?;
            println!(
                "uncalibrated {:.3}° / {:.3}%, calibrated {:.3}° / {:.3}%",
                before.rms_phase_deg, before.rms_amplitude_pct, after.rms_phase_deg, after.rms_amplitude_pct
            );
            println!("wrote {}", path.display());
            check(&mut checks, "RMS phase error (deg)", after.rms_phase_deg, 0.0, 2.0);
            check(&mut checks, "RMS amplitude error (%)", after.rms_amplitude_pct, 0.0, 4.0);
        }
        Command::Budget(c) => {
            let s = load(&c.config)?;
            let b = evaluate_budget(&s)?;
            for (term, v) in b.noise.terms() {
                println!("{:<8} {:.3e} A²", term.name(), v);
            }
            println!("signal   {:.3e} A²", b.noise.signal_variance);
            println!("element SNR {:.3} dB, array SNR {:.3} dB", b.element_snr_db, b.array_snr_db);
            let path = write_file(&resolve_output_dir(&s), "noise_budget.csv", |w| {
                b.noise.write_csv(w)?;
                Ok(())
            })?;
            println!("wrote {}", path.display());
            check(&mut checks, "element SNR (dB)", b.element_snr_db, 17.2, 17.8);
            check(&mut checks, "array SNR (dB)", b.array_snr_db, 23.2, 23.8);
        }
        Command::Distance {
            common,
            eirp_dbm,
            nf_db,
            snr_db,
            bw_mhz,
            gain_db,
        } => {
            let s = load(&common.config)?;
            let eirp = match eirp_dbm {
                Some(v) => v,
                None => eirp_vs_optical_power(&s, &[s.source.power])?[0].eirp_dbm,
            };
            let r = &s.receiver;
            let link = if nf_db.is_none() && snr_db.is_none() && bw_mhz.is_none() && gain_db.is_none() {
                link_distance(&s, eirp)
            } else {
                let min = min_required_power(
                    bw_mhz.map_or(s.waveform.occupied_bandwidth_hz(), |b| b * 1e6),
                    nf_db.unwrap_or(r.lna_nf_db),
                    snr_db.unwrap_or(r.required_snr_db),
                    gain_db.unwrap_or(r.horn_gain_db),
                    r.temperature_k,
                );
                metasurface_sim::link::LinkSection {
                    min_required_power_dbm: min,
                    eirp_dbm: eirp,
                    distance: max_wireless_distance(eirp, min, s.geometry.design_frequency_hz),
                }
            };
            println!("EIRP                  {:.2} dBm", link.eirp_dbm);
            println!("minimum input         {:.2} dBm", link.min_required_power_dbm);
            println!("tolerable path loss   {:.2} dB", link.distance.tolerable_path_loss_db);
            println!(
                "free-space distance   {:.2} m (quoted in the literature: {} m)",
                link.distance.distance_m, link.distance.quoted_distance_m
            );
            if let Some(w) = &link.distance.warning {
                eprintln!("warning: {w}");
            }
            check(&mut checks, "tolerable path loss (dB)", link.distance.tolerable_path_loss_db, 78.5, 79.5);
        }
    }
    Ok(checks)
}

fn wants_assert(cli: &Cli) -> bool {
    match &cli.command {
        Command::Validate { .. } => false,
        Command::Pattern(c) | Command::Link(c) | Command::Calibrate(c) | Command::Budget(c) => c.assert,
        Command::Distance { common, .. } => common.assert,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let assert = wants_assert(&cli);
    match run(cli) {
        Ok(checks) => {
            let mut missed = false;
            for (what, ok) in &checks {
                if !ok {
                    missed = true;
                    eprintln!("threshold missed: {what}");
                }
            }
            if assert && missed {
                ExitCode::from(EXIT_THRESHOLD)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Invalid(d)) => {
            eprintln!("invalid scenario:\n{d}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
