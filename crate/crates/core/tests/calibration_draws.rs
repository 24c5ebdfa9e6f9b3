use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use metasurface_sim::calibration::{
    calibrate, rms_errors, standard_grid, target_cost, CalibrationEntry, CalibrationTable, OptimizerConfig,
    VectorModulator, VmImpairments, VmState,
};
use metasurface_sim::derive_seed;
use metasurface_sim::units::amplitude_to_db;

#[test]
fn calibration_never_worse_over_100_draws() {
    let opt = OptimizerConfig::default();
    let worse: Vec<String> = (0..100u64)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(42, k));
            let device = VectorModulator::new(VmImpairments::random(&mut rng), 5, k).unwrap();
            let out = calibrate(&device, &standard_grid(), &opt).unwrap();
            let before = rms_errors(&out.uncalibrated).unwrap();
            let after = rms_errors(&out.table).unwrap();
            let ok = after.rms_phase_deg <= before.rms_phase_deg && after.rms_amplitude_pct <= before.rms_amplitude_pct;
            (!ok).then(|| format!("draw {k}: {before:?} -> {after:?}"))
        })
        .collect();
    assert!(worse.is_empty(), "{worse:#?}");
}

/// Table built from the exhaustive optimum of every target.
fn exhaustive_table(device: &VectorModulator, opt: &OptimizerConfig) -> CalibrationTable {
    let out = calibrate(device, &standard_grid(), opt).unwrap();
    let cm = device.code_max();
    let entries = out
        .targets
        .par_iter()
        .map(|t| {
            let mut best = (f64::INFINITY, VmState::from_codes(0, 0), 0, num_complex::Complex64::new(0.0, 0.0));
            for v in 0..=device.vga.max_code {
                for i in -cm..=cm {
                    for q in -cm..=cm {
                        let s = VmState::from_codes(i, q);
                        let g = device.measure(&s, v).unwrap();
                        let c = target_cost(g, t, &opt.weights);
                        if c < best.0 {
                            best = (c, s, v, g);
                        }
                    }
                }
            }
            CalibrationEntry {
                commanded_deg: t.commanded_deg,
                state: best.1,
                vga_code: best.2,
                achieved_deg: best.3.arg().to_degrees().rem_euclid(360.0),
                achieved_db: amplitude_to_db(best.3.norm()),
            }
        })
        .collect();
    CalibrationTable::new(entries)
}

#[test]
fn ideal_device_reaches_quantization_floor() {
    let opt = OptimizerConfig::default();
    for bits in [3, 4, 5] {
        let device = VectorModulator::new(VmImpairments::ideal(), bits, 1).unwrap();
        let got = rms_errors(&calibrate(&device, &standard_grid(), &opt).unwrap().table).unwrap();
        let floor = rms_errors(&exhaustive_table(&device, &opt)).unwrap();
        assert!(
            got.rms_phase_deg <= 1.1 * floor.rms_phase_deg + 1e-9,
            "{bits} bits: {got:?} vs exhaustive {floor:?}"
        );
    }
}

#[test]
fn same_seed_same_table() {
    let mut a = ChaCha8Rng::seed_from_u64(9);
    let mut b = ChaCha8Rng::seed_from_u64(9);
    let da = VectorModulator::new(VmImpairments::random(&mut a), 5, 3).unwrap();
    let db = VectorModulator::new(VmImpairments::random(&mut b), 5, 3).unwrap();
    let opt = OptimizerConfig::default();
    assert_eq!(
        calibrate(&da, &standard_grid(), &opt).unwrap().table,
        calibrate(&db, &standard_grid(), &opt).unwrap().table
    );
}
