use proptest::prelude::*;

use qpl_core::photophysics::{correlate, fit_g2_cw, G2CwModel};
use qpl_core::sim::{
    expected_signal_rate, simulate_cw, simulate_pulsed, DetectorModel, Drive, EmitterModel, LevelScheme, SimConfig,
};

fn pulsed(p: f64) -> EmitterModel {
    EmitterModel {
        scheme: LevelScheme::TwoLevel,
        lifetimes: vec![(11.0, 0.94), (671.0, 0.06)],
        drive: Drive::Pulsed { excitation_probability: p },
    }
}

fn cw(pump: f64, tau_ps: f64) -> EmitterModel {
    EmitterModel {
        scheme: LevelScheme::TwoLevel,
        lifetimes: vec![(tau_ps, 1.0)],
        drive: Drive::Cw { pump_rate_per_s: pump },
    }
}

#[test]
fn cw_count_rate_matches_expectation() {
    let em = cw(1e5, 12_000.0);
    let det = DetectorModel::default();
    let cfg = SimConfig {
        duration_s: 10.0,
        rep_period_ps: None,
        background_rate_per_s: 0.0,
        seed: 99,
    };
    let sim = simulate_cw(&em, &det, &cfg).unwrap();
    let expected = expected_signal_rate(&em, &det, &cfg).unwrap() * cfg.duration_s;
    let got = sim.detected_signal as f64;
    assert!((got - expected).abs() < 3.0 * expected.sqrt(), "{got} vs {expected}");
}

#[test]
fn pulsed_count_rate_matches_expectation() {
    let em = pulsed(0.3);
    let det = DetectorModel::default();
    let cfg = SimConfig::pulses(2_000_000, 12_500.0, 4);
    let sim = simulate_pulsed(&em, &det, &cfg).unwrap();
    let expected = expected_signal_rate(&em, &det, &cfg).unwrap() * cfg.duration_s;
    let got = sim.detected_signal as f64;
    // binomial per pulse
    let q: f64 = 0.3 * 0.35;
    let sigma = (2e6 * q * (1.0 - q)).sqrt();
    assert!((got - expected).abs() < 3.0 * sigma, "{got} vs {expected}");
}

#[test]
fn at_most_one_signal_photon_per_pulse() {
    let det = DetectorModel {
        jitter_ps: 0.0,
        efficiency: 1.0,
        ..DetectorModel::default()
    };
    let sim = simulate_pulsed(&pulsed(1.0), &det, &SimConfig::pulses(200_000, 12_500.0, 2)).unwrap();
    let mut periods: Vec<i64> = sim.stream.events().iter().map(|e| e.timestamp_ps / 12_500).collect();
    let n = periods.len();
    periods.dedup();
    assert_eq!(periods.len(), n);
    assert_eq!(n as u64, sim.emitted_photons);
}

#[test]
fn cw_simulation_fits_back_to_antibunching() {
    let (pump, tau) = (2e7, 12_000.0);
    let cfg = SimConfig {
        duration_s: 2.0,
        rep_period_ps: None,
        background_rate_per_s: 0.0,
        seed: 17,
    };
    let sim = simulate_cw(&cw(pump, tau), &DetectorModel::default(), &cfg).unwrap();
    let curve = correlate(&sim.stream, 500.0, 100_000.0).unwrap();
    let fit = fit_g2_cw(&curve, G2CwModel::TwoLevel).unwrap();
    // two-level antibunching time 1 / (pump + 1 / tau)
    let tau_a = 1.0 / (pump * 1e-12 + 1.0 / tau);
    assert!(fit.g2_zero < 0.05, "{fit:?}");
    assert!((fit.tau_a_ps / tau_a - 1.0).abs() < 0.05, "{} vs {tau_a}", fit.tau_a_ps);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn seed_determines_the_stream(seed in any::<u64>(), p in 0.0f64..=1.0, bg in 0.0f64..1e6) {
        let cfg = SimConfig { background_rate_per_s: bg, ..SimConfig::pulses(5_000, 12_500.0, seed) };
        let a = simulate_pulsed(&pulsed(p), &DetectorModel::default(), &cfg).unwrap();
        let b = simulate_pulsed(&pulsed(p), &DetectorModel::default(), &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}
