//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion with its checks and timing, and exits non-zero on any failure.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use metasurface_sim::beam::{
    free_space_path_loss, quantize_weights_aligned, radiation_pattern, scan_metrics, steer_for_peak,
    steering_weights, ArrayGeometry, ElementPattern, ElementWeights, GridSpec,
};
use metasurface_sim::calibration::{
    calibrate, rms_errors, standard_grid, target_cost, CostWeights, OptimizerConfig, Target, VectorModulator,
    VmImpairments, VmState,
};
use metasurface_sim::constants::SPEED_OF_LIGHT;
use metasurface_sim::link::{
    eirp_vs_optical_power, evaluate_budget, link_distance, simulate, write_outputs, RunMode, ScenarioConfig,
    PAPER_DEFAULTS_TOML,
};
use metasurface_sim::modem::{run_monte_carlo, ChannelSpec, Recovery, WaveformSpec};
use metasurface_sim::optics::{
    collimation_reach, mzm_field_envelope, periodic_time_grid, photocurrent_closed_form, photocurrent_numeric,
    CollimatorModel, CouplingChain, Drive, MzmConfig, OpticalSource, PhotodetectorModel,
};

struct Criterion {
    checks: Vec<(String, bool)>,
}

impl Criterion {
    fn new() -> Self {
        Self { checks: Vec::new() }
    }

    fn within(&mut self, name: &str, value: f64, want: f64, tol: f64) {
        let ok = (value - want).abs() <= tol;
        self.checks.push((format!("{name}: {value:.6e} (want {want} ± {tol})"), ok));
    }

    fn rel(&mut self, name: &str, value: f64, want: f64, rel: f64) {
        let r = (value / want - 1.0).abs();
        self.checks.push((format!("{name}: {value:.4e} vs {want:.4e}, rel {r:.2e} (≤ {rel})"), r <= rel));
    }

    fn at_most(&mut self, name: &str, value: f64, max: f64) {
        self.checks.push((format!("{name}: {value:.4e} (≤ {max})"), value <= max));
    }

    fn truth(&mut self, name: &str, ok: bool) {
        self.checks.push((name.to_string(), ok));
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }
}

fn scenario() -> metasurface_sim::link::LinkScenario {
    ScenarioConfig::from_toml(PAPER_DEFAULTS_TOML)
        .unwrap()
        .validate(Path::new("."))
        .unwrap()
}

fn noise_budget(c: &mut Criterion) {
    let b = evaluate_budget(&scenario()).unwrap();
    let n = &b.noise;
    c.rel("thermal (A²)", n.thermal, 4.97e-13, 0.01);
    c.rel("shot (A²)", n.shot, 5.38e-15, 0.01);
    c.rel("RIN (A²)", n.rin, 7.55e-15, 0.01);
    c.rel("sp-sp (A²)", n.sp_sp, 2.29e-19, 0.01);
    c.rel("sig-sp (A²)", n.sig_sp, 4.30e-16, 0.01);
    c.rel("AWG (A²)", n.awg, 2.72e-14, 0.01);
    c.within("element SNR (dB)", b.element_snr_db, 17.5, 0.3);
    c.within("array SNR (dB)", b.array_snr_db, 23.5, 0.3);
}

fn link_budget(c: &mut Criterion) {
    let s = scenario();
    c.within("L_S at 0.45 m (dB)", free_space_path_loss(0.45, 28e9), 54.5, 0.1);
    let eirp = eirp_vs_optical_power(&s, &[s.source.power]).unwrap()[0].eirp_dbm;
    let l = link_distance(&s, eirp);
    c.within("minimum required power (dBm)", l.min_required_power_dbm, -69.0, 0.5);
    c.within("tolerable path loss (dB)", l.distance.tolerable_path_loss_db, 79.0, 0.5);
    let d = l.distance.distance_m;
    let back = free_space_path_loss(d, 28e9);
    c.within("Friis round trip (dB)", back, l.distance.tolerable_path_loss_db, 1e-9);
    c.truth(
        &format!(
            "distance reported: {d:.2} m (79 dB gives {:.2} m; quoted {} m)",
            10f64.powf(79.0 / 20.0) * SPEED_OF_LIGHT / (4.0 * PI * 28e9),
            l.distance.quoted_distance_m
        ),
        d > 0.0 && l.distance.quoted_distance_m == 9.0,
    );
}

fn collimation(c: &mut Criterion) {
    c.within("collimation reach (m)", collimation_reach(&CollimatorModel::default()), 12.6, 0.1);
}

fn bessel_equivalence(c: &mut Criterion) {
    let source = OpticalSource::default();
    let pd = PhotodetectorModel::default();
    let coupling = CouplingChain::default();
    let f = 28e9;
    let v_pi = 6.0;
    let mzm = |beta_a: f64, bias: f64| MzmConfig {
        v_pi,
        bias_phase: bias,
        drive: Drive::Sinusoid {
            amplitude: beta_a * v_pi / PI,
            angular_frequency: 2.0 * PI * f,
        },
    };
    let spp = 64;
    let grid = periodic_time_grid(f, 4, spp);
    for beta_a in [0.1, 0.5, 1.0, 2.0] {
        let m = mzm(beta_a, FRAC_PI_2);
        let closed = photocurrent_closed_form(&source, &m, &coupling, &pd).unwrap();
        let env = mzm_field_envelope(&source, &m, &grid).unwrap();
        let num = photocurrent_numeric(&env, spp, &coupling, &pd).unwrap();
        c.rel(&format!("fundamental at βA = {beta_a}"), num.fundamental(), closed.i_fundamental, 1e-6);
        c.rel(&format!("DC at βA = {beta_a}"), num.dc(), closed.i_dc, 1e-6);
        let even = (2..=6).step_by(2).map(|k| num.harmonic(k).unwrap().amplitude).fold(0.0, f64::max);
        c.at_most(&format!("even harmonics / DC at quadrature, βA = {beta_a}"), even / num.dc(), 1e-10);
        let peak = mzm_field_envelope(&source, &mzm(beta_a, 0.0), &grid).unwrap();
        let num0 = photocurrent_numeric(&peak, spp, &coupling, &pd).unwrap();
        let odd = (1..=5).step_by(2).map(|k| num0.harmonic(k).unwrap().amplitude).fold(0.0, f64::max);
        c.at_most(&format!("odd harmonics / DC at zero bias, βA = {beta_a}"), odd / num0.dc(), 1e-10);
    }
}

fn exhaustive_best(device: &VectorModulator, target: &Target, weights: &CostWeights) -> f64 {
    let cm = device.code_max();
    (0..=device.vga.max_code)
        .into_par_iter()
        .map(|v| {
            let mut best = f64::INFINITY;
            for i in -cm..=cm {
                for q in -cm..=cm {
                    let g = device.measure(&VmState::from_codes(i, q), v).unwrap();
                    best = best.min(target_cost(g, target, weights));
                }
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min)
}

fn calibration_trend(c: &mut Criterion) {
    let opt = OptimizerConfig::default();
    let device = VectorModulator::new(VmImpairments::paper_matched(), 5, 11).unwrap();
    let out = calibrate(&device, &standard_grid(), &opt).unwrap();
    let before = rms_errors(&out.uncalibrated).unwrap();
    let after = rms_errors(&out.table).unwrap();
    c.within("uncalibrated RMS phase (deg)", before.rms_phase_deg, 4.0, 1.0);
    c.within("uncalibrated RMS amplitude (%)", before.rms_amplitude_pct, 7.0, 1.5);
    c.at_most("calibrated RMS phase (deg)", after.rms_phase_deg, 2.0);
    c.at_most("calibrated RMS amplitude (%)", after.rms_amplitude_pct, 4.0);
    for bits in [3, 4, 5] {
        let d = VectorModulator::new(VmImpairments::paper_matched(), bits, 11).unwrap();
        let o = calibrate(&d, &standard_grid(), &opt).unwrap();
        let worst = o
            .targets
            .iter()
            .zip(&o.costs)
            .map(|(t, cost)| {
                let best = exhaustive_best(&d, t, &opt.weights);
                (cost - best) / best.max(1e-15)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        c.at_most(&format!("{bits}-bit worst relative gap to exhaustive search"), worst, 0.10);
    }
}

fn beam_steering(c: &mut Criterion) {
    let s = scenario();
    let table = calibrate(&s.device, &standard_grid(), &s.optimizer).unwrap().table;
    let g = &s.geometry;
    let mut worst: f64 = 0.0;
    for phi in [0.0, 90.0] {
        for k in -6..=6 {
            let theta = 5.0 * k as f64;
            let af = steer_for_peak(g, theta, phi).unwrap();
            let w = quantize_weights_aligned(&steering_weights(g, af, phi).unwrap(), &table).unwrap();
            let p = radiation_pattern(g, &w, &GridSpec::cuts(&[phi], -90.0, 90.0, 0.1)).unwrap();
            worst = worst.max((scan_metrics(&p).unwrap().peak_theta_deg - theta).abs());
        }
    }
    c.at_most("worst pointing error over ±30°, both planes (deg)", worst, 2.0);

    let lambda = SPEED_OF_LIGHT / 28e9;
    let line = ArrayGeometry::line(4, lambda / 2.0, 28e9, ElementPattern::Isotropic);
    let p = radiation_pattern(&line, &ElementWeights::uniform(4), &GridSpec::cuts(&[0.0], -90.0, 90.0, 0.1)).unwrap();
    let sll = scan_metrics(&p).unwrap().first_sidelobe_db.unwrap_or(0.0);
    c.within("4-element line first sidelobe (dB)", sll, -11.3, 0.3);

    let lobe = |pitch: f64, theta: f64| {
        let g = ArrayGeometry::grid(2, 2, pitch, 28e9, ElementPattern::default());
        let w = steering_weights(&g, theta, 0.0).unwrap();
        let p = radiation_pattern(&g, &w, &GridSpec::cuts(&[0.0], -90.0, 90.0, 0.1)).unwrap();
        scan_metrics(&p).unwrap().has_grating_lobe()
    };
    c.truth("grating lobe detected at λ pitch, 30°", lobe(lambda, 30.0));
    let none = (0..=12).all(|k| !lobe(lambda / 2.0, 5.0 * k as f64) && !lobe(lambda / 2.0, -5.0 * k as f64));
    c.truth("no grating lobe at λ/2 pitch for |θ| ≤ 60°", none);
}

fn modem_fidelity(c: &mut Criterion) {
    for (k, snr) in [15.0, 20.0, 25.0, 30.0].into_iter().enumerate() {
        let spec = WaveformSpec {
            n_symbols: 100_000,
            seed: 100 + k as u64,
            ..WaveformSpec::default()
        };
        let r = run_monte_carlo(&spec, &ChannelSpec::awgn(snr), Recovery::Reference, 25_000, 0).unwrap().report;
        c.rel(
            &format!("EVM at {snr} dB over {} symbols (%)", r.n_symbols),
            r.evm_rms_pct,
            100.0 * 10f64.powf(-snr / 20.0),
            0.05,
        );
    }
    let spec = WaveformSpec {
        n_symbols: 2_000_000,
        seed: 7,
        ..WaveformSpec::default()
    };
    let r = run_monte_carlo(&spec, &ChannelSpec::awgn(23.0), Recovery::Reference, 100_000, 0).unwrap().report;
    let bits = r.n_symbols * 5;
    c.truth(&format!("{bits} bits simulated"), bits >= 10_000_000);
    c.at_most(&format!("BER at 23 dB ({} bit errors)", r.bit_errors), r.ber, 1e-5);
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn end_to_end(c: &mut Criterion) {
    let s = scenario();
    let out = simulate(&s, RunMode::Both).unwrap();
    let r = &out.report;
    let p = r.pattern.as_ref().unwrap();
    c.within("EIRP (dBm)", p.eirp.eirp_dbm, 10.0, 1.0);
    c.within("lens on/off EIRP step (dB)", p.eirp.lens_step_db, 38.0, 0.5);
    c.within("EIRP slope (dB/decade)", p.eirp.slope_db_per_decade.unwrap_or(f64::NAN), 20.0, 0.01);
    let b = &r.budget;
    c.within(
        "injected SNR identity (dB)",
        b.injected_snr_db,
        b.element_snr_db + 10.0 * (s.element_count() as f64).log10() - b.link_penalty_db,
        1e-9,
    );
    c.within("injected SNR vs 20.5 dB", b.injected_snr_db, 20.5, 0.5);
    for d in &r.data {
        c.within(&format!("EVM-implied SNR error at {}° (dB)", d.angle_deg), d.evm_snr_error_db, 0.0, 0.5);
    }
    c.truth("data mode covers broadside", r.data.iter().any(|d| d.angle_deg == 0.0));

    let tmp = tempfile::tempdir().unwrap();
    let (a, b2) = (tmp.path().join("a"), tmp.path().join("b"));
    write_outputs(&out, &a).unwrap();
    write_outputs(&simulate(&s, RunMode::Both).unwrap(), &b2).unwrap();
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b2));
    c.truth(&format!("rerun byte-identical ({} files)", fa.len()), !fa.is_empty() && fa == fb);
}

fn main() -> ExitCode {
    type Run = fn(&mut Criterion);
    let criteria: [(&str, Run, Duration); 8] = [
        ("noise-budget reproduction", noise_budget, Duration::from_secs(1)),
        ("link-budget chain", link_budget, Duration::from_secs(1)),
        ("collimation reach", collimation, Duration::from_secs(1)),
        ("Bessel/oracle equivalence", bessel_equivalence, Duration::from_secs(10)),
        ("calibration trend", calibration_trend, Duration::from_secs(60)),
        ("beam steering", beam_steering, Duration::from_secs(60)),
        ("modem fidelity", modem_fidelity, Duration::from_secs(300)),
        ("end-to-end scenario", end_to_end, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let mut c = Criterion::new();
        let t0 = Instant::now();
        run(&mut c);
        let dt = t0.elapsed();
        c.truth(&format!("runtime {:.2} s (limit {} s)", dt.as_secs_f64(), budget.as_secs()), dt <= *budget);
        let ok = c.passed();
        if !ok {
            failed += 1;
        }
        println!("{} criterion {}: {name} ({:.2} s)", if ok { "PASS" } else { "FAIL" }, i + 1, dt.as_secs_f64());
        for (what, pass) in &c.checks {
            println!("    [{}] {what}", if *pass { "ok" } else { "miss" });
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
