//! Integrated rates and the channel partition.

use num_complex::Complex64;

use super::{reference_rate, Direction, DipoleError, EmissionOptions, EmitterConfig, Kernel};
use crate::quadrature::{integrate, integrate_segments, integrate_smoothed, QuadSettings};
use crate::stratified::{
    find_tm_poles, hex_digest, principal_index, GuidedMode, OpticalStack, PoleSearchOptions, SearchWindow, Sheet,
    DEFAULT_IM_MIN,
};

/// Sampled real-axis density of dissipated power.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    /// Ascending sample points.
    pub u: Vec<f64>,
    /// `dP/du` in vacuum-rate units.
    pub density: Vec<f64>,
    pub stack_hash: String,
    pub emitter: EmitterConfig,
}

impl PowerSpectrum {
    /// Trapezoid integral of the samples between `a` and `b`.
    pub fn integrate_between(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.u.len().saturating_sub(1) {
            let (x0, x1) = (self.u[k].max(a), self.u[k + 1].min(b));
            if x1 <= x0 {
                continue;
            }
            let lerp = |x: f64| {
                let f = (x - self.u[k]) / (self.u[k + 1] - self.u[k]);
                self.density[k] + f * (self.density[k + 1] - self.density[k])
            };
            total += 0.5 * (x1 - x0) * (lerp(x0) + lerp(x1));
        }
        total
    }
}

/// Outcome of the total-rate integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalRate {
    /// Total rate in vacuum units.
    pub value: f64,
    /// Magnitude of the last integrated chunk, an upper estimate of the
    /// neglected tail.
    pub tail: f64,
    /// Real part of `u` where integration stopped.
    pub u_end: f64,
    pub evaluations: usize,
}

/// Bound-mode contribution of one pole.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeContribution {
    pub mode: GuidedMode,
    /// Bound-mode rate: the pole rate less the part radiated into the
    /// half-spaces, in the units of [`DecayChannels`].
    pub gamma: f64,
    /// `-pi Im(Res g)`, the full Lorentzian weight of the pole.
    pub gamma_residue: f64,
    /// Lorentzian window integral above a linear background, scaled by the
    /// captured fraction; `None` for modes of zero linewidth.
    pub gamma_window: Option<f64>,
    /// Fraction of the peak that leaks into a half-space (nonzero only for
    /// modes inside a radiating light cone).
    pub radiated_fraction: f64,
    /// Counted in the plasmon channel.
    pub spp_class: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayChannels {
    pub gamma_total: f64,
    /// Far field: both half-spaces, sum of the two fields below.
    pub gamma_ff: f64,
    pub gamma_ff_up: f64,
    pub gamma_ff_down: f64,
    pub gamma_spp: f64,
    pub gamma_nf: f64,
    /// Reference rate in vacuum units; every `gamma_*` is divided by it.
    pub reference_rate: f64,
    pub dre: f64,
    pub xi: f64,
    pub beta_spp: f64,
    pub beta_nf: f64,
    pub modes: Vec<ModeContribution>,
    pub warnings: Vec<String>,
}

impl DecayChannels {
    /// Builds the derived ratios from the four rates.
    pub fn from_rates(gamma_total: f64, gamma_ff: f64, gamma_spp: f64, gamma_nf: f64) -> Self {
        let emitted = gamma_ff + gamma_spp;
        Self {
            gamma_total,
            gamma_ff,
            gamma_ff_up: gamma_ff,
            gamma_ff_down: 0.0,
            gamma_spp,
            gamma_nf,
            reference_rate: 1.0,
            dre: gamma_total,
            xi: if emitted > 0.0 { gamma_spp / emitted } else { 0.0 },
            beta_spp: if gamma_total > 0.0 { gamma_spp / gamma_total } else { 0.0 },
            beta_nf: if gamma_total > 0.0 { gamma_nf / gamma_total } else { 0.0 },
            modes: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// `|ff + spp + nf - total| / total`.
    pub fn conservation_error(&self) -> f64 {
        (self.gamma_ff + self.gamma_spp + self.gamma_nf - self.gamma_total).abs() / self.gamma_total
    }
}

/// `gamma_SPP / gamma_FF`.
pub fn spp_ff_ratio(channels: &DecayChannels) -> Result<f64, DipoleError> {
    if !(channels.gamma_ff > 0.0) {
        return Err(DipoleError::ZeroFarField);
    }
    Ok(channels.gamma_spp / channels.gamma_ff)
}

fn tight(settings: &QuadSettings) -> QuadSettings {
    QuadSettings {
        rel_tol: settings.rel_tol.min(1e-9),
        ..*settings
    }
}

impl Kernel {
    /// Total rate by integrating the reflected part of the density along a
    /// contour in the lower-right quadrant, which holds no poles or branch
    /// cuts for passive stacks: down the imaginary axis to `-i h`, then
    /// parallel to the real axis until the integrand has decayed.
    pub fn total_rate(&self, options: &EmissionOptions) -> Result<TotalRate, DipoleError> {
        let settings = tight(&options.quad);
        let h = options.contour_depth;
        let refl = |u: Complex64| self.density(u, Sheet::Proper).1;
        let leg1 = integrate(|t| refl(Complex64::new(0.0, -t)) * Complex64::new(0.0, -1.0), 0.0, h, &settings);
        let mut evaluations = leg1.evaluations;
        let mut acc = leg1.value;
        let mut x0 = 0.0;
        let mut width = 2.0_f64.max(2.0 * self.n_e);
        let mut quiet = 0;
        let mut tail = f64::INFINITY;
        while x0 < 1e6 {
            let x1 = x0 + width;
            let chunk = integrate(|x| refl(Complex64::new(x, -h)), x0, x1, &settings);
            evaluations += chunk.evaluations;
            acc += chunk.value;
            tail = chunk.value.norm();
            x0 = x1;
            width *= 2.0;
            let scale = (self.n_e + acc.re).abs().max(acc.norm());
            if tail <= 1e-13 * scale {
                quiet += 1;
                if quiet >= 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        let value = self.n_e + acc.re;
        if tail > 1e-2 * value.abs() {
            return Err(DipoleError::NotConverged {
                tail_fraction: tail / value.abs(),
            });
        }
        Ok(TotalRate {
            value,
            tail,
            u_end: x0,
            evaluations,
        })
    }

    /// Far-field power through one half-space in vacuum units.
    pub fn far_field(&self, dir: Direction, options: &EmissionOptions) -> f64 {
        let eps_t = match dir {
            Direction::Up => self.stack.upper(),
            Direction::Down => self.stack.lower(),
        };
        if eps_t.im != 0.0 || eps_t.re <= 0.0 {
            return 0.0;
        }
        let n_t = eps_t.re.sqrt();
        let pts = self.real_breakpoints(n_t);
        let settings = tight(&options.quad);
        integrate_smoothed(
            |u| Complex64::new(self.far_field_density(u, dir), 0.0),
            &pts,
            &settings,
        )
        .value
        .re
    }

    /// Residue of `g` at `pole` by the trapezoid rule on a circle.
    fn residue(&self, pole: Complex64, radius: f64, points: usize) -> Complex64 {
        let sheet = Sheet::Vertical(pole.re);
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..points {
            let theta = std::f64::consts::TAU * (k as f64 + 0.5) / points as f64;
            let w = Complex64::from_polar(radius, theta);
            acc += self.density(pole + w, sheet).0 * w;
        }
        acc / points as f64
    }

    /// Distance from `u` to the nearest half-space branch cut.
    fn cut_distance(&self, u: Complex64) -> f64 {
        [self.stack.lower(), self.stack.upper()]
            .iter()
            .map(|&e| {
                let n = principal_index(e);
                if u.im >= n.im {
                    (u.re - n.re).abs()
                } else {
                    (u - n).norm()
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Total decay rate relative to the configured reference.
pub fn total_decay_rate(stack: &OpticalStack, emitter: &EmitterConfig, options: &EmissionOptions) -> Result<f64, DipoleError> {
    let k = Kernel::new(stack, emitter)?;
    let total = k.total_rate(options)?;
    Ok(total.value / reference_rate(emitter, options)?)
}

/// Total rate with convergence diagnostics, in vacuum units.
pub fn total_decay_rate_detailed(
    stack: &OpticalStack,
    emitter: &EmitterConfig,
    options: &EmissionOptions,
) -> Result<TotalRate, DipoleError> {
    Kernel::new(stack, emitter)?.total_rate(options)
}

fn spectrum_hash(stack: &OpticalStack, emitter: &EmitterConfig) -> String {
    hex_digest(format!("{}|{}", stack.canonical_key(), emitter.canonical_key()).as_bytes())
}

/// Adaptively sampled real-axis density on `[0, u_max]`, refined wherever
/// the samples deviate from linear interpolation (resonances) and around the
/// branch points.
pub fn dissipated_power_spectrum(
    stack: &OpticalStack,
    emitter: &EmitterConfig,
    u_max: f64,
) -> Result<PowerSpectrum, DipoleError> {
    if !(u_max >= 2.0) {
        return Err(DipoleError::BadUMax(u_max));
    }
    let k = Kernel::new(stack, emitter)?;
    let mut nodes: Vec<f64> = (0..=400).map(|i| u_max * i as f64 / 400.0).collect();
    for b in k.real_breakpoints(u_max) {
        for off in [-1e-3, -1e-6, 1e-6, 1e-3] {
            let x = b + off;
            if x > 0.0 && x < u_max {
                nodes.push(x);
            }
        }
    }
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    // the density diverges as 1/sqrt at the emitter light line; never sample it exactly
    let eval = |u: f64| {
        let v = k.real_density(u);
        if v.is_finite() {
            v
        } else {
            k.real_density(u * (1.0 + 1e-12))
        }
    };
    let mut pts: Vec<(f64, f64)> = nodes.iter().map(|&u| (u, eval(u))).collect();
    let budget = 20_000;
    for _ in 0..24 {
        let peak = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(1e-300);
        let mut refined = Vec::with_capacity(pts.len() * 2);
        let mut changed = false;
        for w in pts.windows(2) {
            refined.push(w[0]);
            let (x0, f0) = w[0];
            let (x1, f1) = w[1];
            if x1 - x0 < 1e-9 || pts.len() + refined.len() > budget {
                continue;
            }
            let xm = 0.5 * (x0 + x1);
            let fm = eval(xm);
            let lin = 0.5 * (f0 + f1);
            if (fm - lin).abs() > 1e-3 * peak.min(10.0 * fm.abs().max(lin.abs()).max(1e-12 * peak)) {
                refined.push((xm, fm));
                changed = true;
            }
        }
        refined.push(*pts.last().expect("nonempty"));
        pts = refined;
        if !changed || pts.len() >= budget {
            break;
        }
    }
    Ok(PowerSpectrum {
        u: pts.iter().map(|p| p.0).collect(),
        density: pts.iter().map(|p| p.1).collect(),
        stack_hash: spectrum_hash(stack, emitter),
        emitter: *emitter,
    })
}

/// Capture fraction of a Lorentzian over `+-n` half-widths after removing
/// the straight line through the window end points.
fn lorentzian_capture(n: f64) -> f64 {
    (2.0 * n.atan() - 2.0 * n / (1.0 + n * n)) / std::f64::consts::PI
}

/// Window used to search for the poles that matter for the partition.
fn partition_window(k: &Kernel, options: &EmissionOptions, u_end: f64) -> (SearchWindow, PoleSearchOptions) {
    let re_min = k.guided_floor();
    let re_max = options.u_max.max(u_end.min(100.0)).max(re_min + 1.0);
    let im_max = 1.5 * k.stack.wavelength_nm() / (4.0 * std::f64::consts::PI * options.min_propagation_um * 1000.0);
    let window = SearchWindow {
        re_min,
        re_max,
        im_min: DEFAULT_IM_MIN,
        im_max: im_max.max(1e-2),
    };
    let nx = ((re_max - re_min) * 60.0).ceil().max(200.0) as usize;
    (window, PoleSearchOptions { nx, ny: 24, ..Default::default() })
}

fn partition_impl(k: &Kernel, modes: &[GuidedMode], total: &TotalRate, options: &EmissionOptions) -> Result<DecayChannels, DipoleError> {
    let gamma0 = reference_rate(&k.emitter, options)?;
    let ff_up = k.far_field(Direction::Up, options);
    let ff_down = k.far_field(Direction::Down, options);
    let floor = k.guided_floor();
    let light = k.stack.max_light_line();
    let mut warnings = Vec::new();
    let mut contributions = Vec::new();
    let settings = tight(&options.quad);
    let window_area = |f: &dyn Fn(f64) -> f64, a: f64, c: f64, b: f64| -> f64 {
        let area = integrate_segments(|x| Complex64::new(f(x), 0.0), &[a, c, b], &settings).value.re;
        area - 0.5 * (f(a) + f(b)) * (b - a)
    };
    for (idx, m) in modes.iter().enumerate() {
        let u = m.n_eff;
        let spp_class = u.re > floor && m.propagation_length_um >= options.min_propagation_um;
        let mut gap = k.cut_distance(u);
        for (j, other) in modes.iter().enumerate() {
            if j != idx {
                gap = gap.min((other.n_eff - u).norm());
            }
        }
        let mut radius = (0.4 * gap).min(0.05);
        let mut res = k.residue(u, radius, 64);
        let check = k.residue(u, 0.5 * radius, 64);
        if (res - check).norm() > 1e-6 * res.norm().max(1e-300) {
            // something unresolved inside the circle; trust the smaller one
            radius *= 0.5;
            res = check;
            let again = k.residue(u, 0.5 * radius, 128);
            if (res - again).norm() > 1e-4 * res.norm().max(1e-300) {
                warnings.push(format!("residue at n_eff = {u:.6} unstable under radius change"));
            }
            res = again;
        }
        let gamma_residue = -std::f64::consts::PI * res.im;
        let half = options.window_linewidths * u.im;
        let (a, b) = (u.re - half, u.re + half);
        let total_peak = if u.im > 0.0 && spp_class {
            Some(window_area(&|x| k.real_density(x), a, u.re, b))
        } else {
            None
        };
        // share of the peak that leaks into a half-space and is already
        // counted as far field
        let radiated_fraction = match total_peak {
            Some(peak) if u.re < light && peak != 0.0 => {
                let rad = window_area(
                    &|x| k.far_field_density(x, Direction::Up) + k.far_field_density(x, Direction::Down),
                    a,
                    u.re,
                    b,
                );
                (rad / peak).clamp(0.0, 1.0)
            }
            _ => 0.0,
        };
        let gamma_window = total_peak.map(|p| p / lorentzian_capture(options.window_linewidths));
        if let Some(w) = gamma_window {
            let isolated = gap > 4.0 * options.window_linewidths * u.im;
            // a linear background is meaningless under peaks that are tiny against it
            let visible = gamma_residue.abs() > 1e-3 * total.value.abs();
            if isolated && visible && (w - gamma_residue).abs() > 0.1 * gamma_residue.abs() {
                warnings.push(format!(
                    "window and residue estimates differ for n_eff = {u:.6}: {w:.4e} vs {gamma_residue:.4e}"
                ));
            }
        }
        contributions.push(ModeContribution {
            mode: m.clone(),
            gamma: gamma_residue * (1.0 - radiated_fraction),
            gamma_residue,
            gamma_window,
            radiated_fraction,
            spp_class,
        });
    }
    let spp: Vec<&ModeContribution> = contributions.iter().filter(|c| c.spp_class).collect();
    for (i, a) in spp.iter().enumerate() {
        for b in spp.iter().skip(i + 1) {
            let span = options.window_linewidths * (a.mode.n_eff.im + b.mode.n_eff.im);
            if (a.mode.n_eff.re - b.mode.n_eff.re).abs() < span {
                warnings.push(format!(
                    "merged window: modes {:.6} and {:.6} overlap",
                    a.mode.n_eff, b.mode.n_eff
                ));
            }
        }
    }
    let mut gamma_spp: f64 = spp.iter().map(|c| c.gamma).sum();
    let gamma_total = total.value;
    let gamma_ff = ff_up + ff_down;
    let mut gamma_nf = gamma_total - gamma_ff - gamma_spp;
    if gamma_nf < 0.0 {
        if gamma_ff - gamma_total > options.partition_tolerance * gamma_total {
            return Err(DipoleError::PartitionFailure { gamma_nf, gamma_total });
        }
        // Pole terms of lossy, non-orthogonal modes can overshoot the power
        // left after the far field; the guided channel is capped there.
        let scale = (gamma_total - gamma_ff).max(0.0) / gamma_spp;
        if gamma_nf < -options.partition_tolerance * gamma_total {
            warnings.push(format!(
                "mode pole terms exceed the non-radiated power by {:.3e}; guided rates scaled by {scale:.4}",
                -gamma_nf
            ));
        }
        for c in contributions.iter_mut().filter(|c| c.spp_class) {
            c.gamma *= scale;
        }
        gamma_spp *= scale;
        gamma_nf = 0.0;
    }
    let mut ch = DecayChannels::from_rates(gamma_total / gamma0, gamma_ff / gamma0, gamma_spp / gamma0, gamma_nf / gamma0);
    ch.gamma_ff_up = ff_up / gamma0;
    ch.gamma_ff_down = ff_down / gamma0;
    ch.reference_rate = gamma0;
    ch.dre = gamma_total / gamma0;
    ch.modes = contributions
        .into_iter()
        .map(|mut c| {
            c.gamma /= gamma0;
            c.gamma_residue /= gamma0;
            c.gamma_window = c.gamma_window.map(|w| w / gamma0);
            c
        })
        .collect();
    ch.warnings = warnings;
    Ok(ch)
}

/// Splits the total rate into far field, bound modes and absorption using
/// an already computed spectrum and mode list.
pub fn partition_channels(
    spectrum: &PowerSpectrum,
    modes: &[GuidedMode],
    stack: &OpticalStack,
    emitter: &EmitterConfig,
    options: &EmissionOptions,
) -> Result<DecayChannels, DipoleError> {
    if spectrum.stack_hash != spectrum_hash(stack, emitter) || spectrum.emitter != *emitter {
        return Err(DipoleError::SpectrumMismatch);
    }
    let k = Kernel::new(stack, emitter)?;
    let total = k.total_rate(options)?;
    partition_impl(&k, modes, &total, options)
}

/// Finds the relevant modes and partitions the total rate in one call.
pub fn decay_channels(stack: &OpticalStack, emitter: &EmitterConfig, options: &EmissionOptions) -> Result<DecayChannels, DipoleError> {
    let k = Kernel::new(stack, emitter)?;
    let total = k.total_rate(options)?;
    let (window, search_opts) = partition_window(&k, options, total.u_end);
    let search = find_tm_poles(&k.stack, &window, &search_opts)?;
    let mut ch = partition_impl(&k, &search.modes, &total, options)?;
    if search.budget_exhausted {
        ch.warnings.push("mode search incomplete".into());
    }
    ch.warnings.extend(search.warnings);
    Ok(ch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dipole::Orientation;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn free_space_rate_is_one() {
        let s = OpticalStack::new(685.0, c(1.0, 0.0), vec![(c(1.0, 0.0), 100.0)], c(1.0, 0.0)).unwrap();
        for orientation in [Orientation::Vertical, Orientation::Horizontal] {
            let em = EmitterConfig {
                orientation,
                layer: 0,
                height_nm: 37.0,
                wavelength_nm: 685.0,
            };
            let v = total_decay_rate(&s, &em, &EmissionOptions::default()).unwrap();
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn homogeneous_dielectric_rate_is_index() {
        let e = c(2.25, 0.0);
        let s = OpticalStack::new(685.0, e, vec![(e, 80.0)], e).unwrap();
        let v = total_decay_rate(&s, &EmitterConfig::vertical(0, 10.0, 685.0), &EmissionOptions::default()).unwrap();
        assert!((v - 1.5).abs() < 1e-9);
    }

    #[test]
    fn lorentzian_capture_value() {
        assert!((lorentzian_capture(10.0) - 0.8735).abs() < 1e-4);
    }
}
