//! `reproduce`: regenerate a reference artifact end to end and check it against
//! its acceptance band.

use std::fmt::Write as _;

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use qpl_core::design::{
    design_optical_stack, launcher_channels, predict_ratio, resonance_families, scan_dipole_position, sweep_geometry,
};
use qpl_core::dipole::{spp_ff_ratio, Reference};
use qpl_core::photophysics::{
    branching_from_rates, correlate, extract_branching, fit_lifetime, fit_propagation, fit_saturation, g2_pulsed,
    lifetime_shortening, LifetimeFit, LifetimeOptions,
};
use qpl_core::sim::{
    background_rate_for_fraction, expected_signal_rate, simulate_irf, simulate_pulsed, DetectorModel, Drive,
    EmitterModel, LevelScheme, SimConfig,
};

use crate::output::{csv, LinePlot, Outputs, Series};
use crate::physics::{channel_csv, channel_report, channel_table, sweep_settings, write_map, write_scan};
use crate::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Fig2,
    #[value(name = "tableS1")]
    TableS1,
    Fig3Synthetic,
    Eq1Worked,
    #[value(name = "suppV")]
    SuppV,
    #[value(name = "suppVI")]
    SuppVI,
}

impl Target {
    fn dir(self) -> &'static str {
        match self {
            Target::Fig2 => "fig2",
            Target::TableS1 => "tableS1",
            Target::Fig3Synthetic => "fig3-synthetic",
            Target::Eq1Worked => "eq1-worked",
            Target::SuppV => "suppV",
            Target::SuppVI => "suppVI",
        }
    }
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub target: Target,
    /// Seed for the synthetic targets.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for the sweep.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Exit nonzero when any check fails.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Default)]
struct Summary {
    lines: Vec<(bool, String)>,
}

impl Summary {
    fn check(&mut self, pass: bool, text: String) {
        self.lines.push((pass, text));
    }

    fn band(&mut self, name: &str, v: f64, lo: f64, hi: f64) {
        self.check(v >= lo && v <= hi, format!("{name} = {v:.6} in [{lo}, {hi}]"));
    }

    fn render(&self) -> String {
        let mut s = String::new();
        for (pass, t) in &self.lines {
            let _ = writeln!(s, "{} {t}", if *pass { "PASS" } else { "FAIL" });
        }
        s
    }

    fn failures(&self) -> usize {
        self.lines.iter().filter(|(p, _)| !p).count()
    }
}

pub fn reproduce(ctx: &Ctx, a: &ReproduceArgs) -> anyhow::Result<()> {
    let mut out = Outputs::new(ctx.out.join(a.target.dir()));
    let mut sum = Summary::default();
    match a.target {
        Target::Fig2 => fig2(ctx, a, &mut out, &mut sum)?,
        Target::TableS1 => table_s1(ctx, &mut out, &mut sum)?,
        Target::Fig3Synthetic => fig3(a.seed, &mut out, &mut sum)?,
        Target::Eq1Worked => eq1(ctx, &mut out, &mut sum)?,
        Target::SuppV => supp_v(a.seed, &mut out, &mut sum)?,
        Target::SuppVI => supp_vi(ctx, &mut out, &mut sum)?,
    }
    out.write("summary.txt", &sum.render())?;
    eprint!("{}", out.list());
    print!("{}", sum.render());
    let failed = sum.failures();
    if a.strict && failed > 0 {
        anyhow::bail!("{failed} check(s) failed");
    }
    Ok(())
}

fn fig2(ctx: &Ctx, a: &ReproduceArgs, out: &mut Outputs, sum: &mut Summary) -> anyhow::Result<()> {
    let grid = ctx.config.sweep_grid()?;
    let map = sweep_geometry(&grid, &sweep_settings(ctx, a.jobs, false)?)?;
    write_map(out, &map)?;
    let find = |axis: &[f64], v: f64| axis.iter().position(|&x| (x - v).abs() < 1e-9);
    match (find(&grid.t_m2_nm, 8.0), find(&grid.gap_nm, 20.0), find(&grid.gap_nm, 60.0)) {
        (Some(t), Some(d20), Some(d60)) => {
            let (lo, hi) = (map.dre[(d60, t)], map.dre[(d20, t)]);
            sum.check(lo < hi, format!("DRE(d=60) = {lo:.1} < DRE(d=20) = {hi:.1} at t_m2 = 8 nm"));
        }
        _ => sum.check(false, "grid lacks d = 20, 60 nm at t_m2 = 8 nm".into()),
    }
    match resonance_families(&map, 0.9) {
        Some(f) => {
            let other = f.other_high_dre.iter().map(|r| r.max_beta_spp).fold(f64::NAN, f64::min);
            sum.check(
                f.has_lossy_family(),
                format!(
                    "beta_SPP ridge of {} cells (max {:.3}); {} other high-DRE regions, lowest max beta_SPP {:.4}",
                    f.ridge.cells.len(),
                    f.ridge.max_beta_spp,
                    f.other_high_dre.len(),
                    other
                ),
            );
        }
        None => sum.check(false, "no resonance families found".into()),
    }
    sum.check(map.failures() == 0, format!("{} failed cells", map.failures()));
    Ok(())
}

fn table_s1(ctx: &Ctx, out: &mut Outputs, sum: &mut Summary) -> anyhow::Result<()> {
    let g = ctx.config.geometry()?;
    let ch = launcher_channels(&g, ctx.config.design_reference(), &ctx.config.base_options())?;
    let mut text = channel_table(&ch);
    text.push_str("\nfinite-element reference: total 977.7, loss 551.6 (56.4 %), SPP 313.7 (32.0 %), FF 113.5 (11.6 %)\n");
    print!("{text}");
    out.write("tableS1.txt", &text)?;
    out.write("tableS1.csv", &channel_csv(&ch))?;
    out.write("tableS1_report.txt", &channel_report(&ch).render())?;
    sum.band("DRE", ch.dre, 300.0, 3000.0);
    sum.band("beta_SPP", ch.beta_spp, 0.16, 0.64);
    sum.band("xi", ch.xi, 0.5, 0.9);
    sum.band("gamma_SPP/gamma_FF", spp_ff_ratio(&ch).unwrap_or(f64::NAN), 1.4, 5.6);
    Ok(())
}

const PERIOD_PS: f64 = 12_500.0;
const PULSES: u64 = 1_000_000;

fn measured_emitter() -> EmitterModel {
    EmitterModel {
        scheme: LevelScheme::TwoLevel,
        lifetimes: vec![(11.0, 0.94), (671.0, 0.06)],
        drive: Drive::Pulsed { excitation_probability: 1.0 },
    }
}

fn fig3(seed: u64, out: &mut Outputs, sum: &mut Summary) -> anyhow::Result<()> {
    let det = DetectorModel::default();
    let em = measured_emitter();

    // antibunching with the background share implied by g2(0) = 0.33
    let mut cfg = SimConfig::pulses(PULSES, PERIOD_PS, seed);
    cfg.background_rate_per_s = background_rate_for_fraction(0.1815, expected_signal_rate(&em, &det, &cfg)?)?;
    let sim = simulate_pulsed(&em, &det, &cfg)?;
    let curve = correlate(&sim.stream, 100.0, 6.0 * PERIOD_PS)?;
    out.write("g2.csv", &curve.to_csv())?;
    let g2_plot = LinePlot {
        title: "Pulsed g2, background fraction 0.1815",
        x_label: "delay (ps)",
        y_label: "g2",
        log_y: false,
        series: vec![Series { name: "g2", x: &curve.delay_ps, y: &curve.g2, points: false }],
    };
    out.write("g2.svg", &g2_plot.render())?;
    let g = g2_pulsed(&curve, PERIOD_PS)?;
    sum.check((g.g2_zero - 0.33).abs() <= 0.03, format!("g2(0) = {:.4} in 0.330 +/- 0.03", g.g2_zero));

    // lifetime without background
    let clean = simulate_pulsed(&em, &det, &SimConfig::pulses(PULSES, PERIOD_PS, seed.wrapping_add(1)))?;
    let irf = simulate_irf(&det, &SimConfig::pulses(PULSES, PERIOD_PS, seed.wrapping_add(2)))?;
    let decay = clean.stream.delay_histogram(4.0)?;
    let irf = irf.stream.delay_histogram(4.0)?;
    let f = fit_lifetime(&decay, &irf, 2, &LifetimeOptions::default())?;
    let model = f.model_counts(&irf)?;
    let centers = decay.centers();
    out.write(
        "lifetime.csv",
        &csv(
            &["bin_center_ps", "counts", "irf_counts", "model_counts"],
            (0..centers.len()).map(|i| vec![centers[i], decay.counts[i], irf.counts[i], model[i]]),
        ),
    )?;
    let lt_plot = LinePlot {
        title: "Lifetime histogram and biexponential fit",
        x_label: "delay (ps)",
        y_label: "counts",
        log_y: true,
        series: vec![
            Series { name: "decay", x: &centers, y: &decay.counts, points: true },
            Series { name: "IRF", x: &centers, y: &irf.counts, points: false },
            Series { name: "model", x: &centers, y: &model, points: false },
        ],
    };
    out.write("lifetime.svg", &lt_plot.render())?;
    if let [a, b] = f.components.as_slice() {
        sum.check((a.tau_ps / 11.0 - 1.0).abs() <= 0.2, format!("tau1 = {:.2} ps within 20 % of 11 ps", a.tau_ps));
        sum.check((b.tau_ps / 671.0 - 1.0).abs() <= 0.05, format!("tau2 = {:.1} ps within 5 % of 671 ps", b.tau_ps));
        sum.check(
            (a.weight - 0.94).abs() <= 0.05,
            format!("weight1 = {:.4} within 0.05 of 0.94", a.weight),
        );
        let s = lifetime_shortening(&LifetimeFit::from_lifetime(75_000.0, 0.0), &LifetimeFit::from_lifetime(a.tau_ps, a.tau_err_ps))?;
        sum.check(
            (s.ratio - 6800.0).abs() <= 800.0,
            format!("shortening against 75 ns = {:.0} in 6800 +/- 800", s.ratio),
        );
    } else {
        sum.check(false, format!("lifetime fit returned {} component(s)", f.components.len()));
    }

    // saturation, 5 % multiplicative noise
    let (i_inf, p_sat) = (44e6, 1.5);
    let powers: Vec<f64> = (0..8).map(|i| p_sat * 0.1 * 100f64.powf(i as f64 / 7.0)).collect();
    let noise = Normal::new(0.0, 0.05)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rates: Vec<f64> = powers
        .iter()
        .map(|p| i_inf * p / (p + p_sat) * (1.0 + noise.sample(&mut rng)))
        .collect();
    let s = fit_saturation(&powers, &rates, 0.0)?;
    let fitted: Vec<f64> = powers.iter().map(|p| s.i_inf * p / (p + s.p_sat_mw)).collect();
    out.write(
        "saturation.csv",
        &csv(
            &["power_mw", "counts_per_s", "model_counts_per_s"],
            (0..powers.len()).map(|i| vec![powers[i], rates[i], fitted[i]]),
        ),
    )?;
    sum.check(
        (s.i_inf / i_inf - 1.0).abs() <= 0.1,
        format!("I_inf = {:.4e} counts/s within 10 % of 4.4e7", s.i_inf),
    );
    Ok(())
}

fn eq1(ctx: &Ctx, out: &mut Outputs, sum: &mut Summary) -> anyhow::Result<()> {
    let c = ctx.config.setup_constants()?;
    let x = extract_branching(1000.0, 1.0, 100.0, 1.0, &c)?;
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for xi in [0.0, 0.01, x.xi, 0.5, 0.73, 0.99] {
        let back = branching_from_rates(1.0, predict_ratio(xi, &c)?, &c)?;
        worst = worst.max((back - xi).abs());
        rows.push(vec![xi, back]);
    }
    out.write("round_trip.csv", &csv(&["xi", "xi_recovered"], rows))?;
    let mut r = crate::output::Report::new();
    r.num("dipole_rate_per_s", 1000.0)
        .num("ring_rate_per_s", 100.0)
        .num("xi", x.xi)
        .num("xi_err", x.sigma)
        .num("round_trip_error", worst);
    out.write("eq1_report.txt", &r.render())?;
    sum.check(
        (x.xi - 0.23541).abs() <= 1e-5,
        format!("xi = {:.6}, target 0.23541 +/- 1e-5 (deviation {:.1e})", x.xi, (x.xi - 0.23541).abs()),
    );
    sum.check(worst <= 1e-9, format!("round-trip error {worst:.1e} <= 1e-9"));
    Ok(())
}

fn supp_v(seed: u64, out: &mut Outputs, sum: &mut Summary) -> anyhow::Result<()> {
    let l = 6.35;
    let x = [2.0, 5.0, 8.0, 11.0];
    let noise = Normal::new(0.0, 0.08)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fitted = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let y: Vec<f64> = x.iter().map(|d: &f64| (-d / l).exp() * (1.0 + noise.sample(&mut rng))).collect();
        fitted.push(fit_propagation(&x, &y).map_or(f64::NAN, |f| f.l_um));
    }
    out.write(
        "trials.csv",
        &csv(&["trial", "L_um"], fitted.iter().enumerate().map(|(i, v)| vec![i as f64, *v])),
    )?;
    let ok: Vec<f64> = fitted.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    let std = (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ok.len() as f64 - 1.0)).sqrt();
    let inside = fitted.iter().filter(|v| (*v - l).abs() <= 0.48).count();
    let mut r = crate::output::Report::new();
    r.int("trials", 1000)
        .int("converged", ok.len() as i64)
        .num("mean_L_um", mean)
        .num("std_L_um", std)
        .int("within_0_48_um", inside as i64);
    out.write("suppV_report.txt", &r.render())?;
    sum.check(inside >= 600, format!("{inside}/1000 fits within 6.35 +/- 0.48 um (mean {mean:.3}, std {std:.3})"));
    Ok(())
}

fn supp_vi(ctx: &Ctx, out: &mut Outputs, sum: &mut Summary) -> anyhow::Result<()> {
    let g = ctx.config.geometry()?;
    let stack = design_optical_stack(&g)?;
    let d = g.gap_nm;
    let mut opts = ctx.config.base_options();
    opts.reference = Reference::GlassSubstrate { spacer_nm: d };
    let mut z: Vec<f64> = (1..).map(|k| 2.0 * k as f64).take_while(|&z| z < d).collect();
    for extra in [4.0, d / 2.0] {
        if !z.iter().any(|v| (v - extra).abs() < 1e-9) {
            z.push(extra);
        }
    }
    z.sort_by(f64::total_cmp);
    let pts = scan_dipole_position(&stack, &g.emitter(), &z, &opts)?;
    write_scan(out, &pts)?;
    let at = |v: f64| pts.iter().find(|p| (p.z_nm - v).abs() < 1e-9).map(|p| &p.channels);
    let (edge, mid) = (at(4.0).expect("z = 4 is scanned"), at(d / 2.0).expect("mid-gap is scanned"));
    sum.check(
        mid.beta_spp >= edge.beta_spp,
        format!("beta_SPP(mid-gap) = {:.4} >= beta_SPP(4 nm) = {:.4}", mid.beta_spp, edge.beta_spp),
    );
    sum.check(
        edge.beta_nf > mid.beta_nf,
        format!("beta_NF(4 nm) = {:.4} > beta_NF(mid-gap) = {:.4}", edge.beta_nf, mid.beta_nf),
    );
    Ok(())
}
