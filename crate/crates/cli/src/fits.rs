//! Fit subcommands. Each writes a `key = value` report and a CSV of the
//! fitted curve next to the data.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};

use qpl_core::design::predict_ratio;
use qpl_core::photophysics::{
    combine_branching, correlate, extract_branching as xi_from_counts, fit_g2_cw, fit_lifetime as lifetime_fit,
    fit_propagation as propagation_fit, fit_saturation as saturation_fit, g2_cw_model, g2_pulsed, parse_pairs,
    Excitation, G2CwModel, G2Curve, Histogram, LifetimeOptions, PhotoError, TimeTagStream,
};

use crate::output::{csv, read_file, LinePlot, Outputs, Report, Series};
use crate::{Ctx, Degenerate};

/// Degenerate outcomes become [`Degenerate`] so they exit with code 2.
fn flag(e: PhotoError) -> anyhow::Error {
    if e.is_degenerate() {
        Degenerate(e.to_string()).into()
    } else {
        e.into()
    }
}

fn finish(out: &Outputs, report: &Report, degenerate: Option<String>) -> anyhow::Result<()> {
    print!("{}", report.render());
    eprint!("{}", out.list());
    match degenerate {
        Some(why) => Err(Degenerate(why).into()),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum G2Mode {
    Pulsed,
    Cw,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CwModel {
    TwoLevel,
    ThreeLevel,
}

#[derive(Debug, Args)]
pub struct G2Args {
    /// Time-tag stream (`channel,timestamp_ps`).
    #[arg(long, conflicts_with = "curve", required_unless_present = "curve")]
    pub stream: Option<PathBuf>,
    /// Precomputed curve with `delay_ps` and `g2` columns.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Analysis mode; defaults to the stream's excitation.
    #[arg(long, value_enum)]
    pub mode: Option<G2Mode>,
    /// Repetition period for pulsed analysis; defaults to the stream's.
    #[arg(long)]
    pub period_ps: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    pub bin_ps: f64,
    /// Half-width of the correlation window; default six periods (pulsed)
    /// or 100 ns (CW).
    #[arg(long)]
    pub window_ps: Option<f64>,
    #[arg(long, value_enum, default_value = "three-level")]
    pub model: CwModel,
}

fn read_curve(path: &Path) -> anyhow::Result<G2Curve> {
    let text = read_file(path)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .context("empty curve file")?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name).with_context(|| format!("curve has no {name} column"));
    let (id, ig) = (col("delay_ps")?, col("g2")?);
    let (mut delay, mut g2) = (Vec::new(), Vec::new());
    for l in lines {
        let cells: Vec<&str> = l.split(',').map(str::trim).collect();
        let get = |i: usize| -> anyhow::Result<f64> {
            cells.get(i).context("short row")?.parse::<f64>().with_context(|| format!("bad row '{l}'"))
        };
        delay.push(get(id)?);
        g2.push(get(ig)?);
    }
    Ok(G2Curve::from_values(delay, g2)?)
}

pub fn fit_g2(ctx: &Ctx, a: &G2Args) -> anyhow::Result<()> {
    let (curve, excitation) = match (&a.stream, &a.curve) {
        (Some(p), _) => {
            let stream = TimeTagStream::from_csv(&read_file(p)?).with_context(|| format!("parsing {}", p.display()))?;
            let ex = stream.excitation();
            let default_window = match ex {
                Excitation::Pulsed { period_ps } => 6.0 * period_ps,
                Excitation::Cw => 100_000.0,
            };
            (correlate(&stream, a.bin_ps, a.window_ps.unwrap_or(default_window))?, Some(ex))
        }
        (None, Some(p)) => (read_curve(p)?, None),
        (None, None) => unreachable!("clap requires one input"),
    };
    let period = a.period_ps.or(match excitation {
        Some(Excitation::Pulsed { period_ps }) => Some(period_ps),
        _ => None,
    });
    let mode = a.mode.unwrap_or(if period.is_some() { G2Mode::Pulsed } else { G2Mode::Cw });
    let mut out = Outputs::new(ctx.out.clone());
    let mut r = Report::new();
    let mut model_col = None;
    match mode {
        G2Mode::Pulsed => {
            let t = period.context("pulsed analysis needs --period-ps or a pulsed stream")?;
            let p = g2_pulsed(&curve, t).map_err(flag)?;
            r.text("mode", "pulsed")
                .num("g2_zero", p.g2_zero)
                .num("g2_zero_err", p.sigma)
                .num("zero_peak_counts", p.zero_peak_counts)
                .num("side_peak_mean", p.side_peak_mean)
                .int("side_peaks", p.side_peaks as i64)
                .num("rep_period_ps", t);
        }
        G2Mode::Cw => {
            let model = match a.model {
                CwModel::TwoLevel => G2CwModel::TwoLevel,
                CwModel::ThreeLevel => G2CwModel::ThreeLevel,
            };
            let f = fit_g2_cw(&curve, model).map_err(flag)?;
            r.text("mode", "cw")
                .text("model", if model == G2CwModel::TwoLevel { "two-level" } else { "three-level" })
                .num("g2_zero", f.g2_zero)
                .num("g2_zero_err", f.g2_zero_err)
                .num("rho2", f.rho2)
                .num("bunching", f.bunching)
                .num("tau_a_ps", f.tau_a_ps)
                .num("tau_a_err_ps", f.tau_a_err_ps)
                .num("tau_b_ps", f.tau_b_ps)
                .num("center_ps", f.center_ps)
                .num("reduced_chi2", f.reduced_chi2);
            model_col = Some(
                curve
                    .delay_ps
                    .iter()
                    .map(|d| g2_cw_model(d - f.center_ps, f.rho2, f.bunching, f.tau_a_ps, f.tau_b_ps))
                    .collect::<Vec<f64>>(),
            );
        }
    }
    for w in &curve.warnings {
        eprintln!("warning: {w}");
    }
    let model = model_col.clone().unwrap_or_else(|| vec![f64::NAN; curve.g2.len()]);
    let table = csv(
        &["delay_ps", "g2", "g2_model"],
        curve
            .delay_ps
            .iter()
            .zip(&curve.g2)
            .zip(&model)
            .map(|((d, g), m)| vec![*d, *g, *m]),
    );
    out.write("g2_fit.csv", &table)?;
    let mut series = vec![Series { name: "measured", x: &curve.delay_ps, y: &curve.g2, points: true }];
    if let Some(m) = &model_col {
        series.push(Series { name: "model", x: &curve.delay_ps, y: m, points: false });
    }
    let plot = LinePlot {
        title: "Second-order correlation",
        x_label: "delay (ps)",
        y_label: "g2",
        log_y: false,
        series,
    };
    out.write("g2_fit.svg", &plot.render())?;
    out.write("g2_report.txt", &r.render())?;
    finish(&out, &r, None)
}

#[derive(Debug, Args)]
pub struct LifetimeArgs {
    /// Decay histogram (`bin_center_ps,counts`) over one period.
    #[arg(long)]
    pub decay: PathBuf,
    /// IRF histogram on the same grid.
    #[arg(long)]
    pub irf: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub components: u8,
    /// Fix the constant background at zero.
    #[arg(long)]
    pub no_offset: bool,
    /// Fix the IRF delay at zero.
    #[arg(long)]
    pub no_shift: bool,
}

fn histogram(path: &Path) -> anyhow::Result<Histogram> {
    Histogram::from_csv(&read_file(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn fit_lifetime(ctx: &Ctx, a: &LifetimeArgs) -> anyhow::Result<()> {
    let decay = histogram(&a.decay)?;
    let irf = histogram(&a.irf)?;
    let opts = LifetimeOptions {
        fit_offset: !a.no_offset,
        fit_shift: !a.no_shift,
        ..LifetimeOptions::default()
    };
    let f = lifetime_fit(&decay, &irf, a.components as usize, &opts).map_err(flag)?;
    let mut r = Report::new();
    r.int("requested_components", f.requested_components as i64)
        .int("components", f.components.len() as i64);
    for (i, c) in f.components.iter().enumerate() {
        let k = i + 1;
        r.num(&format!("tau{k}_ps"), c.tau_ps)
            .num(&format!("tau{k}_err_ps"), c.tau_err_ps)
            .num(&format!("weight{k}"), c.weight)
            .num(&format!("weight{k}_err"), c.weight_err)
            .num(&format!("amplitude{k}"), c.amplitude);
    }
    r.num("offset", f.offset)
        .num("shift_ps", f.shift_ps)
        .num("deviance", f.deviance)
        .num("reduced_deviance", f.reduced_deviance)
        .flag("fell_back", f.fell_back)
        .flag("resolution_limited", f.resolution_limited);
    for n in &f.notes {
        eprintln!("note: {n}");
    }
    let model = f.model_counts(&irf)?;
    let centers = decay.centers();
    let mut out = Outputs::new(ctx.out.clone());
    out.write(
        "lifetime_fit.csv",
        &csv(
            &["bin_center_ps", "counts", "model_counts"],
            centers.iter().zip(&decay.counts).zip(&model).map(|((t, c), m)| vec![*t, *c, *m]),
        ),
    )?;
    let plot = LinePlot {
        title: "Lifetime fit",
        x_label: "delay (ps)",
        y_label: "counts",
        log_y: true,
        series: vec![
            Series { name: "counts", x: &centers, y: &decay.counts, points: true },
            Series { name: "model", x: &centers, y: &model, points: false },
        ],
    };
    out.write("lifetime_fit.svg", &plot.render())?;
    out.write("lifetime_report.txt", &r.render())?;
    let degenerate = f
        .fell_back
        .then(|| format!("{} components requested, the fit fell back to {}", f.requested_components, f.components.len()));
    finish(&out, &r, degenerate)
}

#[derive(Debug, Args)]
pub struct SaturationArgs {
    /// Saturation data (`power_mw,counts_per_s`).
    #[arg(long)]
    pub data: PathBuf,
    /// Measured g2(0), which fixes the background share at the largest power.
    #[arg(long, default_value_t = 0.0)]
    pub g2_zero: f64,
}

fn dense(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn fit_saturation(ctx: &Ctx, a: &SaturationArgs) -> anyhow::Result<()> {
    let rows = parse_pairs(&read_file(&a.data)?, "power_mw,counts_per_s")?;
    let (p, y): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let f = saturation_fit(&p, &y, a.g2_zero).map_err(flag)?;
    let mut r = Report::new();
    r.num("i_inf_counts_per_s", f.i_inf)
        .num("i_inf_err_counts_per_s", f.i_inf_err)
        .num("p_sat_mw", f.p_sat_mw)
        .num("p_sat_err_mw", f.p_sat_err_mw)
        .num("background_slope_counts_per_s_per_mw", f.background_slope)
        .num("background_fraction", f.background_fraction)
        .num("reference_power_mw", f.reference_power_mw)
        .num("reduced_chi2", f.reduced_chi2)
        .flag("unidentifiable", f.unidentifiable);
    let hi = p.iter().copied().fold(0.0, f64::max);
    let grid = dense(0.0, hi, 200);
    let signal: Vec<f64> = grid.iter().map(|x| f.i_inf * x / (x + f.p_sat_mw)).collect();
    let total: Vec<f64> = grid.iter().zip(&signal).map(|(x, s)| s + f.background_slope * x).collect();
    let mut out = Outputs::new(ctx.out.clone());
    out.write(
        "saturation_fit.csv",
        &csv(
            &["power_mw", "model_counts_per_s", "signal_counts_per_s"],
            grid.iter().zip(&total).zip(&signal).map(|((x, t), s)| vec![*x, *t, *s]),
        ),
    )?;
    let plot = LinePlot {
        title: "Saturation",
        x_label: "power (mW)",
        y_label: "counts/s",
        log_y: false,
        series: vec![
            Series { name: "data", x: &p, y: &y, points: true },
            Series { name: "model", x: &grid, y: &total, points: false },
            Series { name: "emitter", x: &grid, y: &signal, points: false },
        ],
    };
    out.write("saturation_fit.svg", &plot.render())?;
    out.write("saturation_report.txt", &r.render())?;
    let degenerate = f
        .unidentifiable
        .then(|| "the data stay in the linear regime; P_sat is unconstrained".to_string());
    finish(&out, &r, degenerate)
}

#[derive(Debug, Args)]
pub struct PropagationArgs {
    /// Ring intensities (`distance_um,intensity`).
    #[arg(long)]
    pub data: PathBuf,
}

pub fn fit_propagation(ctx: &Ctx, a: &PropagationArgs) -> anyhow::Result<()> {
    let rows = parse_pairs(&read_file(&a.data)?, "distance_um,intensity")?;
    let (x, y): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let f = propagation_fit(&x, &y).map_err(flag)?;
    let mut r = Report::new();
    r.num("L_um", f.l_um)
        .num("L_err_um", f.l_err_um)
        .num("i0", f.i0)
        .num("i0_err", f.i0_err)
        .int("iterations", f.iterations as i64);
    let hi = x.iter().copied().fold(0.0, f64::max);
    let grid = dense(0.0, hi, 200);
    let model: Vec<f64> = grid.iter().map(|d| f.i0 * (-d / f.l_um).exp()).collect();
    let mut out = Outputs::new(ctx.out.clone());
    out.write(
        "propagation_fit.csv",
        &csv(&["distance_um", "model_intensity"], grid.iter().zip(&model).map(|(d, m)| vec![*d, *m])),
    )?;
    let plot = LinePlot {
        title: "Propagation length",
        x_label: "distance (um)",
        y_label: "intensity",
        log_y: true,
        series: vec![
            Series { name: "data", x: &x, y: &y, points: true },
            Series { name: "model", x: &grid, y: &model, points: false },
        ],
    };
    out.write("propagation_fit.svg", &plot.render())?;
    out.write("propagation_report.txt", &r.render())?;
    finish(&out, &r, None)
}

#[derive(Debug, Args)]
pub struct BranchingArgs {
    /// Integrated counts in the dipole spot.
    #[arg(long)]
    pub dipole_counts: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dipole_exposure_s: f64,
    /// Integrated counts in the out-coupling ring.
    #[arg(long)]
    pub ring_counts: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ring_exposure_s: f64,
    /// Near-field loss share; with it the report includes beta_SPP.
    #[arg(long)]
    pub nfloss: Option<f64>,
    #[arg(long, default_value_t = 0.0, requires = "nfloss")]
    pub nfloss_err: f64,
}

pub fn extract_branching(ctx: &Ctx, a: &BranchingArgs) -> anyhow::Result<()> {
    let c = ctx.config.setup_constants()?;
    let x = xi_from_counts(a.dipole_counts, a.dipole_exposure_s, a.ring_counts, a.ring_exposure_s, &c).map_err(flag)?;
    let mut r = Report::new();
    r.num("xi", x.xi)
        .num("xi_err", x.sigma)
        .num("dipole_term", x.dipole_term)
        .num("ring_term", x.ring_term)
        .num("eta_col_dipole", c.eta_col_dipole)
        .num("eta_col_ring", c.eta_col_ring)
        .num("eta_spp_ff", c.eta_spp_ff)
        .num("trench_radius_nm", c.trench_radius_nm)
        .num("propagation_length_um", c.propagation_length_um);
    if let Some(nf) = a.nfloss {
        let b = combine_branching(&x, nf, a.nfloss_err)?;
        r.num("beta_nfloss", b.beta_nfloss)
            .num("beta_nfloss_err", b.beta_nfloss_err)
            .num("beta_spp", b.beta_spp)
            .num("beta_spp_err", b.beta_spp_err);
    }
    // ring-to-dipole count ratio the setup would record for each xi
    let xis = dense(0.0, 0.99, 100);
    let ratios: Vec<f64> = xis.iter().map(|&xi| predict_ratio(xi, &c)).collect::<Result<_, _>>()?;
    let mut out = Outputs::new(ctx.out.clone());
    out.write(
        "branching_curve.csv",
        &csv(&["xi", "ring_to_dipole_ratio"], xis.iter().zip(&ratios).map(|(x, q)| vec![*x, *q])),
    )?;
    out.write("branching_report.txt", &r.render())?;
    finish(&out, &r, None)
}
