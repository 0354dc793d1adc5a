use proptest::prelude::*;

use qpl_core::photophysics::{
    background_fraction, correlate, fit_lifetime, fit_propagation, fit_saturation, g2_cw_model, lifetime_shortening,
    total_efficiency, Excitation, Histogram, LifetimeFit, LifetimeOptions, PhotoError, TagEvent, TimeTagStream,
};

#[test]
fn noiseless_propagation_is_exact() {
    let x = [2.0, 5.0, 8.0, 11.0];
    let y: Vec<f64> = x.iter().map(|x: &f64| 3.7 * (-x / 6.35).exp()).collect();
    let f = fit_propagation(&x, &y).unwrap();
    assert!((f.l_um / 6.35 - 1.0).abs() < 1e-9);
    assert!((f.i0 / 3.7 - 1.0).abs() < 1e-9);
}

#[test]
fn growing_intensities_are_rejected() {
    let x = [2.0, 5.0, 8.0];
    assert_eq!(fit_propagation(&x, &[1.0, 1.1, 1.3]).unwrap_err(), PhotoError::Unbounded);
}

#[test]
fn saturation_with_background_slope() {
    let powers = [0.2, 0.5, 1.0, 2.0, 4.0, 8.0];
    let (i_inf, p_sat, g2) = (44e6, 1.5, 0.2);
    // background share at the largest power follows from g2(0)
    let r = background_fraction(g2).unwrap();
    let p_ref = 8.0;
    let m_ref = i_inf * p_ref / (p_ref + p_sat);
    let slope = r / (1.0 - r) * m_ref / p_ref;
    let rates: Vec<f64> = powers.iter().map(|p| i_inf * p / (p + p_sat) + slope * p).collect();
    let f = fit_saturation(&powers, &rates, g2).unwrap();
    assert!((f.i_inf / i_inf - 1.0).abs() < 1e-6, "{f:?}");
    assert!((f.p_sat_mw / p_sat - 1.0).abs() < 1e-6);
}

#[test]
fn poisson_streams_correlate_flat() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let duration = 2_000_000_000_000i64;
    let mut events = Vec::new();
    for ch in 0..2u8 {
        let mut t = 0.0;
        loop {
            t += -(1.0 - rng.random::<f64>()).ln() * 5e6;
            if t >= duration as f64 {
                break;
            }
            events.push(TagEvent {
                timestamp_ps: t as i64,
                channel: ch,
            });
        }
    }
    let stream = TimeTagStream::new(events, duration, Excitation::Cw).unwrap();
    let curve = correlate(&stream, 1000.0, 50_000.0).unwrap();
    let mean = curve.g2.iter().sum::<f64>() / curve.g2.len() as f64;
    let sigma = (1.0 / curve.expected_per_bin).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * sigma / (curve.g2.len() as f64).sqrt(), "mean {mean}");
    assert!(curve.g2.iter().all(|g| (g - 1.0).abs() < 5.0 * sigma));
}

#[test]
fn stream_and_histogram_csv_round_trip() {
    let events = vec![
        TagEvent { timestamp_ps: 5, channel: 1 },
        TagEvent { timestamp_ps: 12_400, channel: 0 },
        TagEvent { timestamp_ps: 30_001, channel: 1 },
    ];
    let s = TimeTagStream::new(events, 40_000, Excitation::Pulsed { period_ps: 12_500.0 }).unwrap();
    assert_eq!(TimeTagStream::from_csv(&s.to_csv()).unwrap(), s);
    let h = s.delay_histogram(500.0).unwrap();
    assert_eq!(h.total(), 3.0);
    assert_eq!(Histogram::from_csv(&h.to_csv()).unwrap(), h);
}

fn exp_decay_histograms(shift_bins: usize) -> (Histogram, Histogram) {
    let (w, n) = (4.0, 3125);
    let irf_center = 400.0 + shift_bins as f64 * w;
    let irf: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) * w - irf_center;
            1e5 * (-0.5 * (t / 30.0).powi(2)).exp()
        })
        .collect();
    // deterministic expected counts: IRF convolved with a cyclic
    // exponential, evaluated by brute force
    let tau = 250.0;
    let period = n as f64 * w;
    let decay: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) * w;
            let mut acc = 0.0;
            for (j, a) in irf.iter().enumerate() {
                let mut dt = t - (j as f64 + 0.5) * w;
                if dt < 0.0 {
                    dt += period;
                }
                acc += a * (-dt / tau).exp() / (1.0 - (-period / tau).exp());
            }
            (acc * 1e-3).round() + 2.0
        })
        .collect();
    (Histogram::new(0.0, w, decay).unwrap(), Histogram::new(0.0, w, irf).unwrap())
}

#[test]
fn lifetime_is_unchanged_by_a_common_delay() {
    let opts = LifetimeOptions::default();
    let (d0, i0) = exp_decay_histograms(0);
    let (d1, i1) = exp_decay_histograms(37);
    let a = fit_lifetime(&d0, &i0, 1, &opts).unwrap();
    let b = fit_lifetime(&d1, &i1, 1, &opts).unwrap();
    let (ta, tb) = (a.components[0].tau_ps, b.components[0].tau_ps);
    assert!((ta / 250.0 - 1.0).abs() < 0.02, "{ta}");
    assert!((ta / tb - 1.0).abs() < 1e-3, "{ta} vs {tb}");
}

#[test]
fn fitted_counts_preserve_the_total() {
    // a free amplitude makes the Poisson score vanish only when sum(mu) = sum(y)
    let (d, i) = exp_decay_histograms(5);
    let f = fit_lifetime(&d, &i, 1, &LifetimeOptions::default()).unwrap();
    let mu = f.model_counts(&i).unwrap();
    assert!((mu.iter().sum::<f64>() / d.total() - 1.0).abs() < 1e-6);
}

#[test]
fn shortening_of_measured_lifetimes() {
    let r = lifetime_shortening(&LifetimeFit::from_lifetime(75_000.0, 0.0), &LifetimeFit::from_lifetime(11.0, 1.0)).unwrap();
    assert!((r.ratio - 75_000.0 / 11.0).abs() < 1e-9);
    assert!((r.sigma - r.ratio / 11.0).abs() < 1e-9);
}

proptest! {
    #[test]
    fn background_fraction_inverts_g2(r in 0.0f64..=1.0) {
        let g = 1.0 - (1.0 - r).powi(2);
        prop_assert!((background_fraction(g).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn total_efficiency_stays_in_range(xi in 0.0f64..=1.0, nf in 0.0f64..=1.0) {
        let e = total_efficiency(xi, nf).unwrap();
        prop_assert!((0.0..=xi).contains(&e));
    }

    #[test]
    fn cw_model_is_even_and_starts_at_one_minus_rho2(
        tau in 0.0f64..1e5, rho2 in 0.0f64..=1.0, a in 0.0f64..3.0, ta in 1.0f64..1e4, tb in 1.0f64..1e6,
    ) {
        prop_assert_eq!(g2_cw_model(tau, rho2, a, ta, tb), g2_cw_model(-tau, rho2, a, ta, tb));
        prop_assert!((g2_cw_model(0.0, rho2, a, ta, tb) - (1.0 - rho2)).abs() < 1e-12);
    }

    #[test]
    fn propagation_fit_is_scale_free(l in 1.0f64..20.0, i0 in 1e-3f64..1e6) {
        let x = [1.0, 3.0, 6.0, 10.0];
        let y: Vec<f64> = x.iter().map(|x: &f64| i0 * (-x / l).exp()).collect();
        let f = fit_propagation(&x, &y).unwrap();
        prop_assert!((f.l_um / l - 1.0).abs() < 1e-8);
    }
}
