use super::{Histogram, PhotoError};
use crate::lm::{minimize, LmOptions, LmResult, Objective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeOptions {
    pub fit_offset: bool,
    pub fit_shift: bool,
    /// Two-component fits with `tau2 / tau1` below this are refitted with
    /// one component.
    pub degeneracy_ratio: f64,
}

impl Default for LifetimeOptions {
    fn default() -> Self {
        Self {
            fit_offset: true,
            fit_shift: true,
            degeneracy_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeComponent {
    pub tau_ps: f64,
    pub tau_err_ps: f64,
    /// Counts per bin at zero delay.
    pub amplitude: f64,
    /// Fraction of decay photons, `A tau / sum(A tau)`.
    pub weight: f64,
    pub weight_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeFit {
    /// Sorted by ascending lifetime.
    pub components: Vec<LifetimeComponent>,
    /// Flat background, counts per bin.
    pub offset: f64,
    /// IRF delay applied by the fit, ps.
    pub shift_ps: f64,
    pub deviance: f64,
    pub reduced_deviance: f64,
    pub requested_components: usize,
    /// A degenerate two-component fit was replaced by a single exponential.
    pub fell_back: bool,
    /// Fastest lifetime is below one bin width.
    pub resolution_limited: bool,
    pub notes: Vec<String>,
}

impl LifetimeFit {
    /// Fit stand-in for a lifetime known from elsewhere.
    pub fn from_lifetime(tau_ps: f64, tau_err_ps: f64) -> Self {
        Self {
            components: vec![LifetimeComponent {
                tau_ps,
                tau_err_ps,
                amplitude: f64::NAN,
                weight: 1.0,
                weight_err: 0.0,
            }],
            offset: 0.0,
            shift_ps: 0.0,
            deviance: 0.0,
            reduced_deviance: 0.0,
            requested_components: 1,
            fell_back: false,
            resolution_limited: false,
            notes: Vec::new(),
        }
    }

    /// Component carrying the largest photon fraction.
    pub fn dominant(&self) -> &LifetimeComponent {
        self.components
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .expect("a fit has at least one component")
    }

    /// Expected counts per bin of the fitted model on the grid of `irf`.
    pub fn model_counts(&self, irf: &Histogram) -> Result<Vec<f64>, PhotoError> {
        let total = irf.total();
        if !(total > 0.0) || irf.counts.is_empty() {
            return Err(PhotoError::InvalidInput("empty IRF histogram".into()));
        }
        let w = irf.bin_width_ps;
        let n = irf.counts.len();
        let norm: Vec<f64> = irf.counts.iter().map(|c| c / total).collect();
        let mut p = vec![0.0; n];
        shifted(&norm, self.shift_ps / w, &mut p);
        let mut mu = vec![self.offset; n];
        let mut r = vec![0.0; n];
        for c in &self.components {
            let tau = c.tau_ps / w;
            exp_response(&p, tau, &mut r);
            for (m, v) in mu.iter_mut().zip(&r) {
                *m += c.amplitude * tau * v;
            }
        }
        Ok(mu)
    }
}

/// Cyclic response of an exponential decay with lifetime `tau` (in bins) to
/// the excitation profile `p`, both on the same period grid. Excitation is
/// uniform within its bin and the decay is integrated over each bin, so the
/// response sums to `sum(p)`.
fn exp_response(p: &[f64], tau: f64, out: &mut [f64]) {
    let n = p.len();
    let x = 1.0 / tau;
    let q = (-x).exp();
    let one_minus_q = -(-x).exp_m1();
    // fraction emitted in the excitation bin, 1 - (1 - e^-x) / x
    let e0 = if x < 1e-3 {
        x / 2.0 - x * x / 6.0 + x * x * x / 24.0
    } else {
        1.0 - one_minus_q / x
    };
    let beta = one_minus_q * one_minus_q / x;
    let mut s = 0.0;
    let mut qm = 1.0;
    for m in 1..=n {
        s += beta * qm * p[n - m];
        qm *= q;
    }
    let wrap = -(-(n as f64) * x).exp_m1();
    s /= wrap;
    out[0] = e0 * p[0] + s;
    for i in 1..n {
        s = q * s + beta * p[i - 1];
        out[i] = e0 * p[i] + s;
    }
}

/// Cyclic delay by `delta` bins with linear interpolation.
fn shifted(p: &[f64], delta: f64, out: &mut [f64]) {
    let n = p.len() as i64;
    let base = delta.floor();
    let f = delta - base;
    let k = base as i64;
    for (i, o) in out.iter_mut().enumerate() {
        let a = p[(i as i64 - k).rem_euclid(n) as usize];
        let b = p[(i as i64 - k - 1).rem_euclid(n) as usize];
        *o = (1.0 - f) * a + f * b;
    }
}

/// Interpolated index of the half-maximum crossing on the rising edge of the
/// main peak, walking backwards cyclically.
fn rising_edge(y: &[f64]) -> f64 {
    let n = y.len();
    let peak = (0..n).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(0);
    let mut lowest = y.to_vec();
    lowest.sort_by(f64::total_cmp);
    let floor = lowest[n / 20];
    let half = floor + 0.5 * (y[peak] - floor);
    for back in 1..n {
        let i = (peak + n - back) % n;
        if y[i] < half {
            let j = (i + 1) % n;
            let frac = (half - y[i]) / (y[j] - y[i]).max(1e-300);
            return (peak as f64 - back as f64 + frac).rem_euclid(n as f64);
        }
    }
    peak as f64
}

struct Layout {
    ncomp: usize,
    fit_offset: bool,
    fit_shift: bool,
    offset0: f64,
    shift0: f64,
}

impl Layout {
    fn unpack(&self, th: &[f64]) -> (Vec<(f64, f64)>, f64, f64) {
        let comps = (0..self.ncomp)
            .map(|k| (th[2 * k].exp(), th[2 * k + 1].exp().max(1e-3)))
            .collect();
        let mut i = 2 * self.ncomp;
        let offset = if self.fit_offset {
            i += 1;
            th[i - 1].exp()
        } else {
            self.offset0
        };
        let shift = if self.fit_shift { th[i] } else { self.shift0 };
        (comps, offset, shift)
    }
}

fn model(irf: &[f64], layout: &Layout, th: &[f64]) -> Option<Vec<f64>> {
    let n = irf.len();
    let (comps, offset, shift) = layout.unpack(th);
    if comps.iter().any(|(a, t)| !(a.is_finite() && t.is_finite())) || !offset.is_finite() || !shift.is_finite() {
        return None;
    }
    let mut p = vec![0.0; n];
    shifted(irf, shift, &mut p);
    let mut mu = vec![offset; n];
    let mut r = vec![0.0; n];
    for (a, tau) in comps {
        exp_response(&p, tau, &mut r);
        for (m, v) in mu.iter_mut().zip(&r) {
            *m += a * v;
        }
    }
    mu.iter().all(|m| *m > 0.0).then_some(mu)
}

fn run(
    y: &[f64],
    irf: &[f64],
    layout: &Layout,
    seeds: &[Vec<(f64, f64)>],
) -> Option<(LmResult, usize)> {
    let mut best: Option<(LmResult, usize)> = None;
    for seed in seeds {
        let mut th: Vec<f64> = seed.iter().flat_map(|(a, t)| [a.max(1e-6).ln(), t.ln()]).collect();
        if layout.fit_offset {
            th.push(layout.offset0.ln());
        }
        if layout.fit_shift {
            th.push(layout.shift0);
        }
        let opts = LmOptions {
            max_iterations: 400,
            rel_tol: 1e-13,
        };
        if let Some(r) = minimize(|t| model(irf, layout, t), y, Objective::Poisson, &th, opts) {
            if best.as_ref().is_none_or(|(b, _)| r.cost < b.cost) {
                let dof = th.len();
                best = Some((r, dof));
            }
        }
    }
    best
}

/// Poisson maximum-likelihood fit of `IRF (x) sum A_i exp(-t / tau_i) +
/// offset` on the cyclic histogram grid, with a fitted fractional IRF delay.
pub fn fit_lifetime(
    decay: &Histogram,
    irf: &Histogram,
    n_components: usize,
    options: &LifetimeOptions,
) -> Result<LifetimeFit, PhotoError> {
    if !(1..=2).contains(&n_components) {
        return Err(PhotoError::InvalidInput(format!("{n_components} components; only 1 or 2 are supported")));
    }
    let w = decay.bin_width_ps;
    if (irf.bin_width_ps - w).abs() > 1e-9 * w || irf.counts.len() != decay.counts.len() {
        return Err(PhotoError::InvalidInput("decay and IRF histograms must share bin width and length".into()));
    }
    let n = decay.counts.len();
    let irf_total = irf.total();
    if !(irf_total > 0.0) || !(decay.total() > 0.0) {
        return Err(PhotoError::InvalidInput("empty decay or IRF histogram".into()));
    }
    if n < 8 {
        return Err(PhotoError::InvalidInput("histogram too short".into()));
    }
    let y = &decay.counts;
    let p: Vec<f64> = irf.counts.iter().map(|c| c / irf_total).collect();

    let mut shift0 = rising_edge(y) - rising_edge(&p);
    if shift0 > 0.5 * n as f64 {
        shift0 -= n as f64;
    } else if shift0 < -0.5 * n as f64 {
        shift0 += n as f64;
    }
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let low = sorted[..(n / 20).max(1)].iter().sum::<f64>() / (n / 20).max(1) as f64;
    let offset0 = if options.fit_offset { (0.5 * low).max(1e-3) } else { 0.0 };
    let signal = (decay.total() - offset0 * n as f64).max(1.0);
    let edge = rising_edge(y);
    let mean_delay = y
        .iter()
        .enumerate()
        .map(|(i, c)| (c - offset0).max(0.0) * (i as f64 - edge).rem_euclid(n as f64))
        .sum::<f64>()
        / signal;
    let tau_s = mean_delay.clamp(0.5, 0.5 * n as f64);

    let base = Layout {
        ncomp: 1,
        fit_offset: options.fit_offset,
        fit_shift: options.fit_shift,
        offset0,
        shift0,
    };
    let single_seeds: Vec<Vec<(f64, f64)>> = [1.0, 0.3, 0.05, 3.0]
        .iter()
        .map(|f| vec![(signal, (tau_s * f).max(0.05))])
        .collect();
    let (single, single_dof) = run(y, &p, &base, &single_seeds)
        .ok_or_else(|| PhotoError::NotConverged("single-exponential fit failed to start".into()))?;

    let mut notes = Vec::new();
    let (result, dof, layout, fell_back) = if n_components == 2 {
        let tau1 = single.params[1].exp();
        let layout = Layout { ncomp: 2, ..base };
        let mut seeds = Vec::new();
        for f1 in [0.02, 0.1, 0.3] {
            for f2 in [1.0, 3.0] {
                for wfast in [0.5, 0.9] {
                    seeds.push(vec![
                        (signal * wfast, (tau1 * f1).max(0.05)),
                        (signal * (1.0 - wfast), tau1 * f2),
                    ]);
                }
            }
        }
        for t_fast in [0.5, 2.0] {
            seeds.push(vec![(signal * 0.9, t_fast), (signal * 0.1, tau1 * 2.0)]);
        }
        let two = run(y, &p, &layout, &seeds);
        match two {
            Some((r, d)) => {
                let (c, _, _) = layout.unpack(&r.params);
                let (lo, hi) = (c[0].1.min(c[1].1), c[0].1.max(c[1].1));
                if hi / lo < options.degeneracy_ratio {
                    notes.push(format!(
                        "two-component fit is degenerate (tau ratio {:.2} < {}); reporting one component",
                        hi / lo,
                        options.degeneracy_ratio
                    ));
                    (single, single_dof, base, true)
                } else {
                    (r, d, layout, false)
                }
            }
            None => {
                notes.push("two-component fit failed; reporting one component".into());
                (single, single_dof, base, true)
            }
        }
    } else {
        (single, single_dof, base, false)
    };
    if !result.converged {
        return Err(PhotoError::NotConverged(format!("{} iterations", result.iterations)));
    }

    let (comps, offset, shift) = layout.unpack(&result.params);
    let cov = result.covariance.as_ref();
    let var = |i: usize| cov.map_or(f64::NAN, |c| c[(i, i)].max(0.0));
    let total_a: f64 = comps.iter().map(|c| c.0).sum();
    let mut components: Vec<(usize, LifetimeComponent)> = comps
        .iter()
        .enumerate()
        .map(|(k, &(a, tau))| {
            let weight = a / total_a;
            let weight_err = if comps.len() == 2 {
                let o = 1 - k;
                let vw = cov.map_or(f64::NAN, |c| {
                    c[(2 * k, 2 * k)] + c[(2 * o, 2 * o)] - 2.0 * c[(2 * k, 2 * o)]
                });
                weight * (1.0 - weight) * vw.max(0.0).sqrt()
            } else {
                0.0
            };
            (
                k,
                LifetimeComponent {
                    tau_ps: tau * w,
                    tau_err_ps: tau * w * var(2 * k + 1).sqrt(),
                    amplitude: a / tau,
                    weight,
                    weight_err,
                },
            )
        })
        .collect();
    components.sort_by(|a, b| a.1.tau_ps.total_cmp(&b.1.tau_ps));
    let components: Vec<LifetimeComponent> = components.into_iter().map(|c| c.1).collect();
    let resolution_limited = components[0].tau_ps < w;
    if resolution_limited {
        notes.push(format!(
            "fastest lifetime {:.3} ps is below the {w} ps bin width; resolution limited",
            components[0].tau_ps
        ));
    }
    Ok(LifetimeFit {
        components,
        offset,
        shift_ps: shift * w,
        deviance: result.cost,
        reduced_deviance: result.cost / (n - dof).max(1) as f64,
        requested_components: n_components,
        fell_back,
        resolution_limited,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shortening {
    pub ratio: f64,
    pub sigma: f64,
}

/// Ratio of the dominant lifetimes, reference over enhanced.
pub fn lifetime_shortening(reference: &LifetimeFit, enhanced: &LifetimeFit) -> Result<Shortening, PhotoError> {
    let r = reference.dominant();
    let e = enhanced.dominant();
    if !(r.tau_ps > 0.0 && e.tau_ps > 0.0) {
        return Err(PhotoError::InvalidInput("lifetimes must be positive".into()));
    }
    let ratio = r.tau_ps / e.tau_ps;
    let rel = |c: &LifetimeComponent| if c.tau_err_ps.is_finite() { c.tau_err_ps / c.tau_ps } else { 0.0 };
    Ok(Shortening {
        ratio,
        sigma: ratio * rel(r).hypot(rel(e)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeSummary {
    pub mean_ps: f64,
    /// Sample standard deviation; zero for a single fit.
    pub std_ps: f64,
    pub count: usize,
}

/// Mean and sample standard deviation of the dominant lifetimes.
pub fn summarize_lifetimes(fits: &[LifetimeFit]) -> Result<LifetimeSummary, PhotoError> {
    if fits.is_empty() {
        return Err(PhotoError::InvalidInput("no fits to summarise".into()));
    }
    let taus: Vec<f64> = fits.iter().map(|f| f.dominant().tau_ps).collect();
    let n = taus.len() as f64;
    let mean = taus.iter().sum::<f64>() / n;
    let std = if taus.len() > 1 {
        (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(LifetimeSummary {
        mean_ps: mean,
        std_ps: std,
        count: taus.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_response(p: &[f64], tau: f64) -> Vec<f64> {
        // fine sub-bin integration, summed over many periods
        let n = p.len();
        let sub = 200;
        let mut out = vec![0.0; n];
        for (j, pj) in p.iter().enumerate() {
            for s in 0..sub {
                let t0 = j as f64 + (s as f64 + 0.5) / sub as f64;
                for m in 0..(n * 20) {
                    let a = (m as f64).max(t0);
                    let b = (m + 1) as f64;
                    if b <= t0 {
                        continue;
                    }
                    let frac = (-(a - t0) / tau).exp() - (-(b - t0) / tau).exp();
                    out[m % n] += pj * frac / sub as f64;
                }
            }
        }
        out
    }

    #[test]
    fn response_matches_direct_integration() {
        let p = [0.1, 0.5, 0.3, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for tau in [0.3, 2.0, 7.0] {
            let mut r = vec![0.0; p.len()];
            exp_response(&p, tau, &mut r);
            let b = brute_response(&p, tau);
            for (x, y) in r.iter().zip(&b) {
                assert!((x - y).abs() < 1e-4, "tau {tau}: {r:?} vs {b:?}");
            }
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shortening_examples() {
        let a = LifetimeFit::from_lifetime(75_000.0, 0.0);
        let b = LifetimeFit::from_lifetime(11.0, 0.0);
        assert!((lifetime_shortening(&a, &b).unwrap().ratio - 6818.18).abs() < 0.01);
        assert_eq!(lifetime_shortening(&a, &a).unwrap().ratio, 1.0);
        let c = LifetimeFit::from_lifetime(70_000.0, 0.0);
        assert!((lifetime_shortening(&c, &b).unwrap().ratio - 6363.6).abs() < 0.1);
    }

    #[test]
    fn summary_statistics() {
        let fits: Vec<_> = [75_000.0; 3].iter().map(|t| LifetimeFit::from_lifetime(*t, 0.0)).collect();
        let s = summarize_lifetimes(&fits).unwrap();
        assert_eq!((s.mean_ps, s.std_ps), (75_000.0, 0.0));
        assert_eq!(summarize_lifetimes(&fits[..1]).unwrap().std_ps, 0.0);
    }
}
