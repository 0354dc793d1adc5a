//! Emission, design and simulation subcommands.

use std::fmt::Write as _;

use anyhow::Context;
use clap::Args;

use qpl_core::design::{axis, scan_dipole_position, sweep_geometry, CellStatus, DesignMap, SweepSettings};
use qpl_core::dipole::{decay_channels, dissipated_power_spectrum, far_field_pattern, spp_ff_ratio, DecayChannels};
use qpl_core::materials::Dispersion;
use qpl_core::photophysics::Excitation;
use qpl_core::sim::{simulate_cw, simulate_irf, simulate_pulsed, SimConfig};
use qpl_core::stratified::{find_tm_poles, PoleSearchOptions, SearchWindow};

use crate::output::{csv, matrix_csv, Heatmap, LinePlot, Outputs, Report, Series};
use crate::Ctx;

#[derive(Debug, Args)]
pub struct MaterialsArgs {
    /// Wavelength in nm; defaults to the stack wavelength.
    #[arg(long)]
    pub wavelength_nm: Option<f64>,
}

pub fn materials(ctx: &Ctx, args: &MaterialsArgs) -> anyhow::Result<()> {
    let reg = ctx.config.registry()?;
    let wl = args.wavelength_nm.unwrap_or_else(|| ctx.config.wavelength_nm());
    let mut text = format!("{:<16} {:<18} {:>12} {:>12}  valid_nm\n", "id", "kind", "eps_re", "eps_im");
    let mut table = String::from("id,kind,wavelength_nm,eps_re,eps_im,valid_from_nm,valid_to_nm\n");
    for m in reg.iter() {
        let kind = match m.dispersion() {
            Dispersion::ConstantEpsilon(_) => "constant-epsilon",
            Dispersion::ConstantIndex(_) => "constant-index",
            Dispersion::Table(_) => "table",
        };
        let (lo, hi) = m.validity_range().unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let eps = m.permittivity(wl).ok();
        let (re, im) = eps.map_or((f64::NAN, f64::NAN), |e| (e.re, e.im));
        let range = if lo.is_finite() { format!("{lo}-{hi}") } else { "any".into() };
        let _ = writeln!(text, "{:<16} {kind:<18} {re:>12.4} {im:>12.4}  {range}", m.id());
        let _ = writeln!(table, "{},{kind},{wl},{re},{im},{lo},{hi}", m.id());
    }
    print!("{text}");
    let mut out = Outputs::new(ctx.out.clone());
    out.write("materials.csv", &table)?;
    eprint!("{}", out.list());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    /// Upper edge of the search window in Re(n_eff).
    #[arg(long, default_value_t = 8.0)]
    pub re_max: f64,
}

pub fn modes(ctx: &Ctx, args: &ModesArgs) -> anyhow::Result<()> {
    let stack = ctx.config.optical_stack()?;
    let window = SearchWindow::beyond_light_line(&stack, args.re_max);
    let search = find_tm_poles(&stack, &window, &PoleSearchOptions::default())?;
    for w in &search.warnings {
        eprintln!("warning: {w}");
    }
    let text = csv(
        &["n_eff_re", "n_eff_im", "L_um"],
        search
            .modes
            .iter()
            .map(|m| vec![m.n_eff.re, m.n_eff.im, m.propagation_length_um]),
    );
    print!("{text}");
    let mut out = Outputs::new(ctx.out.clone());
    out.write("modes.csv", &text)?;
    eprint!("{}", out.list());
    Ok(())
}

/// Rates in units of the reference rate.
fn channel_rows(ch: &DecayChannels) -> [(&'static str, f64); 4] {
    [
        ("gamma_total", ch.gamma_total),
        ("gamma_nf_loss", ch.gamma_nf),
        ("gamma_spp", ch.gamma_spp),
        ("gamma_ff", ch.gamma_ff),
    ]
}

/// Aligned decay-rate summary: normalized rates and their share of the total.
pub fn channel_table(ch: &DecayChannels) -> String {
    let mut s = format!("{:<16} {:>16} {:>8}\n", "channel", "normalized_rate", "percent");
    for (name, v) in channel_rows(ch) {
        let _ = writeln!(s, "{name:<16} {v:>16.1} {:>8.1}", 100.0 * v / ch.gamma_total);
    }
    s
}

pub fn channel_csv(ch: &DecayChannels) -> String {
    let mut s = String::from("channel,normalized_rate,percent\n");
    for (name, v) in channel_rows(ch) {
        let _ = writeln!(s, "{name},{v},{}", 100.0 * v / ch.gamma_total);
    }
    s
}

pub fn channel_report(ch: &DecayChannels) -> Report {
    let mut r = Report::new();
    r.num("dre", ch.dre)
        .num("xi", ch.xi)
        .num("beta_spp", ch.beta_spp)
        .num("beta_nf", ch.beta_nf)
        .num("spp_ff_ratio", spp_ff_ratio(ch).unwrap_or(f64::NAN))
        .num("gamma_total", ch.gamma_total)
        .num("gamma_ff", ch.gamma_ff)
        .num("gamma_ff_up", ch.gamma_ff_up)
        .num("gamma_ff_down", ch.gamma_ff_down)
        .num("gamma_spp", ch.gamma_spp)
        .num("gamma_nf", ch.gamma_nf)
        .num("reference_rate", ch.reference_rate)
        .num("conservation_error", ch.conservation_error())
        .int("modes", ch.modes.len() as i64)
        .int("warnings", ch.warnings.len() as i64);
    r
}

fn mode_csv(ch: &DecayChannels) -> String {
    let mut s = String::from("n_eff_re,n_eff_im,L_um,gamma,gamma_residue,gamma_window,radiated_fraction,spp_class\n");
    for m in &ch.modes {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.mode.n_eff.re,
            m.mode.n_eff.im,
            m.mode.propagation_length_um,
            m.gamma,
            m.gamma_residue,
            m.gamma_window.unwrap_or(f64::NAN),
            m.radiated_fraction,
            m.spp_class
        );
    }
    s
}

pub fn dipole(ctx: &Ctx) -> anyhow::Result<()> {
    let stack = ctx.config.optical_stack()?;
    let emitter = ctx.config.emitter(&stack)?;
    let opts = ctx.config.emission_options(&stack)?;
    let ch = decay_channels(&stack, &emitter, &opts)?;
    print!("{}", channel_table(&ch));
    println!();
    print!("{}", channel_report(&ch).render());
    for w in &ch.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = Outputs::new(ctx.out.clone());
    out.write("dipole.csv", &channel_csv(&ch))?;
    out.write("dipole_report.txt", &channel_report(&ch).render())?;
    out.write("dipole_modes.csv", &mode_csv(&ch))?;
    eprint!("{}", out.list());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Largest in-plane wavevector u = k_par / k0.
    #[arg(long, default_value_t = 10.0)]
    pub u_max: f64,
}

pub fn spectrum(ctx: &Ctx, args: &SpectrumArgs) -> anyhow::Result<()> {
    let stack = ctx.config.optical_stack()?;
    let emitter = ctx.config.emitter(&stack)?;
    let s = dissipated_power_spectrum(&stack, &emitter, args.u_max)?;
    let mut out = Outputs::new(ctx.out.clone());
    out.write("spectrum.csv", &csv(&["u", "p"], s.u.iter().zip(&s.density).map(|(u, p)| vec![*u, *p])))?;
    let plot = LinePlot {
        title: "Dissipated power spectrum",
        x_label: "u = k_par / k0",
        y_label: "p(u)",
        log_y: true,
        series: vec![Series {
            name: "p",
            x: &s.u,
            y: &s.density,
            points: false,
        }],
    };
    out.write("spectrum.svg", &plot.render())?;
    print!("{}", out.list());
    Ok(())
}

pub fn pattern(ctx: &Ctx) -> anyhow::Result<()> {
    let stack = ctx.config.optical_stack()?;
    let emitter = ctx.config.emitter(&stack)?;
    let p = far_field_pattern(&stack, &emitter)?;
    let deg: Vec<f64> = p.theta.iter().map(|t| t.to_degrees()).collect();
    let mut out = Outputs::new(ctx.out.clone());
    out.write("pattern.csv", &csv(&["theta_deg", "U"], deg.iter().zip(&p.intensity).map(|(t, u)| vec![*t, *u])))?;
    let plot = LinePlot {
        title: "Far-field pattern, upper half-space",
        x_label: "theta (deg)",
        y_label: "U",
        log_y: false,
        series: vec![Series {
            name: "U",
            x: &deg,
            y: &p.intensity,
            points: false,
        }],
    };
    out.write("pattern.svg", &plot.render())?;
    print!("{}", out.list());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Worker threads; overrides sweep.jobs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Disable the per-cell cache even if sweep.cache_dir is set.
    #[arg(long)]
    pub no_cache: bool,
}

pub fn sweep_settings(ctx: &Ctx, jobs: Option<usize>, no_cache: bool) -> anyhow::Result<SweepSettings> {
    Ok(SweepSettings {
        options: ctx.config.base_options(),
        reference: ctx.config.design_reference(),
        orientation: ctx.config.geometry()?.orientation,
        cache_dir: if no_cache { None } else { ctx.config.sweep.cache_dir.clone() },
        jobs: jobs.or(ctx.config.sweep.jobs),
    })
}

/// Matrix CSVs, heatmaps and the status table of a sweep.
pub fn write_map(out: &mut Outputs, map: &DesignMap) -> anyhow::Result<()> {
    let g = &map.grid;
    let maps = [
        ("dre", &map.dre, "Decay rate enhancement", true),
        ("beta_spp", &map.beta_spp, "beta_SPP", false),
        ("xi", &map.xi, "xi = gamma_SPP / (gamma_SPP + gamma_FF)", false),
        ("beta_nf", &map.beta_nf, "beta_NF", false),
    ];
    for (name, m, title, log_scale) in maps {
        out.write(&format!("{name}.csv"), &matrix_csv("d_nm", &g.gap_nm, "t_m2_nm", &g.t_m2_nm, |i, j| m[(i, j)]))?;
        let heat = Heatmap {
            title,
            x_label: "gap d (nm)",
            y_label: "cap t_m2 (nm)",
            x: &g.gap_nm,
            y: &g.t_m2_nm,
            log_scale,
        };
        out.write(&format!("{name}.svg"), &heat.render(|i, j| m[(i, j)]))?;
    }
    let mut status = String::from("d_nm,t_m2_nm,status\n");
    for (i, d) in g.gap_nm.iter().enumerate() {
        for (j, t) in g.t_m2_nm.iter().enumerate() {
            let s = match map.cell_status(i, j) {
                CellStatus::Computed | CellStatus::Cached => "ok".to_string(),
                CellStatus::Failed(e) => format!("failed: {}", e.replace([',', '\n'], ";")),
            };
            let _ = writeln!(status, "{d},{t},{s}");
        }
    }
    out.write("status.csv", &status)
}

pub fn sweep(ctx: &Ctx, args: &SweepArgs) -> anyhow::Result<()> {
    let grid = ctx.config.sweep_grid()?;
    let settings = sweep_settings(ctx, args.jobs, args.no_cache)?;
    let map = sweep_geometry(&grid, &settings)?;
    let cached = map.status.iter().filter(|s| **s == CellStatus::Cached).count();
    let mut out = Outputs::new(ctx.out.clone());
    write_map(&mut out, &map)?;
    print!("{}", out.list());
    println!(
        "{} cells: {} computed, {cached} cached, {} failed",
        grid.cells(),
        grid.cells() - cached - map.failures(),
        map.failures()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScanZArgs {
    /// Dipole heights in nm; defaults to a 2 nm grid across the emitter layer.
    #[arg(long, value_delimiter = ',')]
    pub z_nm: Vec<f64>,
}

pub fn scan_z(ctx: &Ctx, args: &ScanZArgs) -> anyhow::Result<()> {
    let stack = ctx.config.optical_stack()?;
    let emitter = ctx.config.emitter(&stack)?;
    let opts = ctx.config.emission_options(&stack)?;
    let z = if args.z_nm.is_empty() {
        let d = stack.layers()[emitter.layer].1;
        axis(2.0, d - 2.0, 2.0).into_iter().filter(|&z| z < d).collect()
    } else {
        args.z_nm.clone()
    };
    let pts = scan_dipole_position(&stack, &emitter, &z, &opts)?;
    let mut out = Outputs::new(ctx.out.clone());
    write_scan(&mut out, &pts)?;
    print!("{}", out.list());
    Ok(())
}

pub fn write_scan(out: &mut Outputs, pts: &[qpl_core::design::PositionPoint]) -> anyhow::Result<()> {
    let table = csv(
        &["z_nm", "DRE", "beta_spp", "beta_nf"],
        pts.iter()
            .map(|p| vec![p.z_nm, p.channels.dre, p.channels.beta_spp, p.channels.beta_nf]),
    );
    out.write("scan_z.csv", &table)?;
    let z: Vec<f64> = pts.iter().map(|p| p.z_nm).collect();
    let spp: Vec<f64> = pts.iter().map(|p| p.channels.beta_spp).collect();
    let nf: Vec<f64> = pts.iter().map(|p| p.channels.beta_nf).collect();
    let ff: Vec<f64> = pts.iter().map(|p| p.channels.gamma_ff / p.channels.gamma_total).collect();
    let plot = LinePlot {
        title: "Channel shares against dipole height",
        x_label: "z (nm)",
        y_label: "fraction of the total rate",
        log_y: true,
        series: vec![
            Series { name: "beta_SPP", x: &z, y: &spp, points: false },
            Series { name: "beta_NF", x: &z, y: &nf, points: false },
            Series { name: "beta_FF", x: &z, y: &ff, points: false },
        ],
    };
    out.write("scan_z.svg", &plot.render())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Also write the start-stop delay histogram with this bin width (pulsed only).
    #[arg(long)]
    pub histogram_bin_ps: Option<f64>,
    /// With --histogram-bin-ps, also simulate and histogram an IRF stream.
    #[arg(long, requires = "histogram_bin_ps")]
    pub irf: bool,
}

pub fn simulate_stream(ctx: &Ctx, args: &SimulateArgs) -> anyhow::Result<()> {
    let setup = ctx.config.sim_setup()?;
    let sim = match setup.config.rep_period_ps {
        Some(_) => simulate_pulsed(&setup.emitter, &setup.detector, &setup.config)?,
        None => simulate_cw(&setup.emitter, &setup.detector, &setup.config)?,
    };
    for w in &sim.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = Outputs::new(ctx.out.clone());
    out.write("stream.csv", &sim.stream.to_csv())?;
    if let Some(bin) = args.histogram_bin_ps {
        if !matches!(sim.stream.excitation(), Excitation::Pulsed { .. }) {
            anyhow::bail!("--histogram-bin-ps needs pulsed drive");
        }
        out.write("decay_histogram.csv", &sim.stream.delay_histogram(bin)?.to_csv())?;
        if args.irf {
            let cfg = SimConfig {
                seed: setup.config.seed.wrapping_add(1),
                background_rate_per_s: 0.0,
                ..setup.config
            };
            let irf = simulate_irf(&setup.detector, &cfg).context("simulating the IRF")?;
            out.write("irf_histogram.csv", &irf.stream.delay_histogram(bin)?.to_csv())?;
        }
    }
    let mut r = Report::new();
    r.int("seed", setup.config.seed as i64)
        .num("duration_s", setup.config.duration_s)
        .int("events", sim.stream.len() as i64)
        .int("emitted_photons", sim.emitted_photons as i64)
        .int("detected_signal", sim.detected_signal as i64)
        .int("background_events", sim.background_events as i64)
        .num("background_rate_per_s", setup.config.background_rate_per_s);
    out.write("simulation_report.txt", &r.render())?;
    print!("{}", r.render());
    eprint!("{}", out.list());
    Ok(())
}
