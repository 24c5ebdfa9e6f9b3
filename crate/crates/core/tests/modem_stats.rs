use metasurface_sim::modem::{run_monte_carlo, ChannelSpec, Recovery, WaveformSpec};

fn spec(n: usize, seed: u64) -> WaveformSpec {
    WaveformSpec {
        n_symbols: n,
        seed,
        ..WaveformSpec::default()
    }
}

#[test]
fn bit_errors_track_symbol_errors_at_high_snr() {
    for order in [16, 32, 64] {
        let s = WaveformSpec {
            modulation_order: order,
            ..spec(400_000, 5)
        };
        let snr = match order {
            16 => 15.0,
            32 => 18.0,
            _ => 21.0,
        };
        let r = run_monte_carlo(&s, &ChannelSpec::awgn(snr), Recovery::Reference, 50_000, 0).unwrap().report;
        assert!(r.symbol_errors > 100, "{order}: too few errors to judge");
        let ratio = r.ber / (r.ser / s.bits_per_symbol() as f64);
        assert!((0.5..=2.0).contains(&ratio), "{order}-QAM: BER/(SER/k) = {ratio}");
    }
}

#[test]
fn fixed_seed_is_bit_exact() {
    let ch = ChannelSpec::awgn(20.0);
    let a = run_monte_carlo(&spec(60_000, 3), &ch, Recovery::Blind, 20_000, 500).unwrap();
    let b = run_monte_carlo(&spec(60_000, 3), &ch, Recovery::Blind, 20_000, 500).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.constellation, b.constellation);
    let c = run_monte_carlo(&spec(60_000, 4), &ch, Recovery::Blind, 20_000, 0).unwrap();
    assert_ne!(a.report.bit_errors, c.report.bit_errors);
}

#[test]
fn blind_matches_reference_at_operating_point() {
    let ch = ChannelSpec {
        phase_deg: 33.0,
        frequency_offset: 2e-5,
        ..ChannelSpec::awgn(20.5)
    };
    let blind = run_monte_carlo(&spec(100_000, 8), &ch, Recovery::Blind, 25_000, 0).unwrap().report;
    let reference = run_monte_carlo(&spec(100_000, 8), &ChannelSpec::awgn(20.5), Recovery::Reference, 25_000, 0)
        .unwrap()
        .report;
    assert!(!blind.diverged);
    assert!((blind.evm_rms_pct / reference.evm_rms_pct - 1.0).abs() < 0.05, "{blind:?} vs {reference:?}");
}
