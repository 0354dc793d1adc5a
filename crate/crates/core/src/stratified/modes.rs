//! TM guided modes: zeros of the transverse-resonance function of the whole
//! stack in the complex `u` plane.

use num_complex::Complex64;

use super::{kz, principal_index, OpticalStack, Polarization, Sheet, StackError};

/// Default lower bound on `Im u` for searches: slightly below the real axis so
/// that modes of lossless stacks sit strictly inside a cell.
pub const DEFAULT_IM_MIN: f64 = -1.234e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedMode {
    /// `k_par / k0`.
    pub n_eff: Complex64,
    /// `lambda / (4 pi Im n_eff)` in micrometres; infinite for lossless modes.
    pub propagation_length_um: f64,
    pub polarization: Polarization,
    /// `|f|` of the normalized dispersion function after polishing.
    pub residual: f64,
}

impl GuidedMode {
    pub fn new(n_eff: Complex64, wavelength_nm: f64, residual: f64) -> Self {
        let propagation_length_um = if n_eff.im > 0.0 {
            wavelength_nm / (4.0 * std::f64::consts::PI * n_eff.im) / 1000.0
        } else {
            f64::INFINITY
        };
        Self {
            n_eff,
            propagation_length_um,
            polarization: Polarization::Tm,
            residual,
        }
    }
}

/// `L = lambda / (4 pi Im n_eff)` in micrometres.
pub fn mode_propagation_length(mode: &GuidedMode, wavelength_nm: f64) -> Result<f64, StackError> {
    if !(mode.n_eff.im > 0.0) {
        return Err(StackError::UnboundedPropagation(mode.n_eff.im));
    }
    Ok(wavelength_nm / (4.0 * std::f64::consts::PI * mode.n_eff.im) / 1000.0)
}

/// Rectangle in the complex `u` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchWindow {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl SearchWindow {
    /// `Re u` from the outermost light line to `re_max`, `Im u` up to 1.
    pub fn beyond_light_line(stack: &OpticalStack, re_max: f64) -> Self {
        Self {
            re_min: stack.max_light_line().max(0.0),
            re_max,
            im_min: DEFAULT_IM_MIN,
            im_max: 1.0,
        }
    }

    fn validate(&self) -> Result<(), StackError> {
        let finite = [self.re_min, self.re_max, self.im_min, self.im_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.re_max > self.re_min) || !(self.im_max > self.im_min) {
            return Err(StackError::DegenerateWindow(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, u: Complex64) -> bool {
        u.re >= self.re_min && u.re <= self.re_max && u.im >= self.im_min && u.im <= self.im_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoleSearchOptions {
    /// Grid columns across the whole window.
    pub nx: usize,
    /// Grid rows.
    pub ny: usize,
    /// Quadtree depth for cells enclosing several zeros.
    pub max_depth: usize,
    /// Total dispersion-function evaluations allowed.
    pub max_evaluations: usize,
    /// Acceptance threshold on the normalized dispersion function.
    pub tolerance: f64,
    /// Zeros closer than this are merged.
    pub dedup_distance: f64,
}

impl Default for PoleSearchOptions {
    fn default() -> Self {
        Self {
            nx: 200,
            ny: 50,
            max_depth: 8,
            max_evaluations: 4_000_000,
            tolerance: 1e-10,
            dedup_distance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoleSearch {
    /// Sorted by `Re n_eff`.
    pub modes: Vec<GuidedMode>,
    /// Set when the evaluation budget ran out or a candidate failed to
    /// polish; `modes` is then possibly incomplete.
    pub budget_exhausted: bool,
    pub evaluations: usize,
    pub warnings: Vec<String>,
}

fn sinc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// Normalized TM transverse-resonance function on the sheet selected by
/// `re_ref` for the half-spaces.
pub(crate) fn dispersion_on_sheet(stack: &OpticalStack, u: Complex64, re_ref: f64) -> Complex64 {
    let k0 = stack.k0();
    let sheet = Sheet::Vertical(re_ref);
    let y_lower = kz(stack.lower, u, sheet) / stack.lower;
    let y_upper = kz(stack.upper, u, sheet) / stack.upper;
    // (H, G) with G = (1/eps) dH/dz / (i k0); decaying into the lower half-space
    let mut h = Complex64::new(1.0, 0.0);
    let mut g = -y_lower;
    for &(eps, d) in &stack.layers {
        // cos and sin/kz are even in kz, so the branch is irrelevant here
        let k = (eps - u * u).sqrt();
        let phi = k0 * k * d;
        let c = phi.cos();
        let s_over_k = k0 * d * sinc(phi);
        let m12 = Complex64::i() * eps * s_over_k;
        let m21 = Complex64::i() * k * k * s_over_k / eps;
        let scale = c.norm().max(1.0);
        let hn = (c * h + m12 * g) / scale;
        let gn = (m21 * h + c * g) / scale;
        h = hn;
        g = gn;
    }
    g - y_upper * h
}

/// Normalized TM transverse-resonance function; zero at every TM guided mode.
/// The half-spaces use the continuation from the real axis with vertical
/// branch cuts.
pub fn dispersion_function(stack: &OpticalStack, u: Complex64) -> Complex64 {
    dispersion_on_sheet(stack, u, u.re)
}

struct Searcher<'a> {
    stack: &'a OpticalStack,
    opts: PoleSearchOptions,
    evals: usize,
    exhausted: bool,
}

/// Accumulated phase change and `sum u dlog f` along a path.
#[derive(Clone, Copy, Default)]
struct EdgeSum {
    dphase: f64,
    moment: Complex64,
}

impl<'a> Searcher<'a> {
    fn f(&mut self, u: Complex64, re_ref: f64) -> Complex64 {
        self.evals += 1;
        dispersion_on_sheet(self.stack, u, re_ref)
    }

    fn budget_left(&self) -> bool {
        self.evals < self.opts.max_evaluations
    }

    /// Phase change of f from `a` to `b`, refining until each step is small.
    fn edge(&mut self, a: Complex64, fa: Complex64, b: Complex64, fb: Complex64, re_ref: f64, depth: u32) -> EdgeSum {
        let ratio = fb / fa;
        let dphase = ratio.arg();
        if (dphase.abs() <= std::f64::consts::FRAC_PI_3 || depth >= 14 || !self.budget_left())
            && ratio.is_finite()
        {
            let dlog = Complex64::new(ratio.norm().ln(), dphase);
            return EdgeSum {
                dphase,
                moment: 0.5 * (a + b) * dlog,
            };
        }
        if depth >= 14 || !self.budget_left() {
            if !self.budget_left() {
                self.exhausted = true;
            }
            return EdgeSum { dphase, moment: Complex64::new(0.0, 0.0) };
        }
        let m = 0.5 * (a + b);
        let fm = self.f(m, re_ref);
        let l = self.edge(a, fa, m, fm, re_ref, depth + 1);
        let r = self.edge(m, fm, b, fb, re_ref, depth + 1);
        EdgeSum {
            dphase: l.dphase + r.dphase,
            moment: l.moment + r.moment,
        }
    }

    /// Winding number and argument-principle moment of a rectangle.
    fn cell(&mut self, x0: f64, x1: f64, y0: f64, y1: f64, re_ref: f64) -> (i64, Complex64) {
        let p = [
            Complex64::new(x0, y0),
            Complex64::new(x1, y0),
            Complex64::new(x1, y1),
            Complex64::new(x0, y1),
        ];
        let fv: Vec<Complex64> = p.iter().map(|&z| self.f(z, re_ref)).collect();
        let mut total = EdgeSum::default();
        for k in 0..4 {
            let e = self.edge(p[k], fv[k], p[(k + 1) % 4], fv[(k + 1) % 4], re_ref, 0);
            total.dphase += e.dphase;
            total.moment += e.moment;
        }
        ((total.dphase / std::f64::consts::TAU).round() as i64, total.moment)
    }

    fn newton(&mut self, start: Complex64, re_ref: f64) -> Option<(Complex64, f64)> {
        let mut u = start;
        let mut fu = self.f(u, re_ref);
        for _ in 0..80 {
            if !self.budget_left() {
                self.exhausted = true;
                break;
            }
            let h = 1e-7 * u.norm().max(1.0);
            let fp = self.f(u + h, re_ref);
            let fm = self.f(u - h, re_ref);
            let deriv = (fp - fm) / (2.0 * h);
            if !deriv.is_finite() || deriv.norm() == 0.0 {
                return None;
            }
            let mut step = fu / deriv;
            // damp steps that leave the neighbourhood
            let cap = 0.05 * u.norm().max(1.0);
            if step.norm() > cap {
                step *= cap / step.norm();
            }
            let next = u - step;
            let fnext = self.f(next, re_ref);
            u = next;
            fu = fnext;
            if step.norm() <= 1e-15 * u.norm().max(1.0) || fu.norm() < 1e-14 {
                break;
            }
        }
        if fu.is_finite() {
            Some((u, fu.norm()))
        } else {
            None
        }
    }

    /// Resolves the zeros enclosed by one rectangle, subdividing as needed.
    fn resolve(
        &mut self,
        rect: (f64, f64, f64, f64),
        winding: i64,
        moment: Complex64,
        re_ref: f64,
        depth: usize,
        out: &mut Vec<(Complex64, f64)>,
        warnings: &mut Vec<String>,
    ) {
        let (x0, x1, y0, y1) = rect;
        if winding <= 0 {
            return;
        }
        if winding == 1 {
            let guess = moment / Complex64::new(0.0, std::f64::consts::TAU);
            let inside = |z: Complex64| z.re >= x0 && z.re <= x1 && z.im >= y0 && z.im <= y1;
            let start = if guess.is_finite() && inside(guess) {
                guess
            } else {
                Complex64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1))
            };
            if let Some((u, res)) = self.newton(start, re_ref) {
                let slack_x = 1e-9 * (x1 - x0).max(1e-12) + 1e-12;
                let slack_y = 1e-9 * (y1 - y0).max(1e-12) + 1e-12;
                let near = u.re >= x0 - slack_x && u.re <= x1 + slack_x && u.im >= y0 - slack_y && u.im <= y1 + slack_y;
                if res < self.opts.tolerance && near {
                    out.push((u, res));
                    return;
                }
            }
        }
        if depth >= self.opts.max_depth || !self.budget_left() {
            // last resort: polish from the centre and accept whatever converges
            let centre = Complex64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
            match self.newton(centre, re_ref) {
                Some((u, res)) if res < self.opts.tolerance => out.push((u, res)),
                _ => {
                    warnings.push(format!(
                        "unresolved zero(s) (winding {winding}) in [{x0:.6}, {x1:.6}] x [{y0:.6}, {y1:.6}]"
                    ));
                    self.exhausted = true;
                }
            }
            return;
        }
        let xm = 0.5 * (x0 + x1);
        let ym = 0.5 * (y0 + y1);
        for (a, b, c, d) in [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)] {
            let (w, m) = self.cell(a, b, c, d, re_ref);
            self.resolve((a, b, c, d), w, m, re_ref, depth + 1, out, warnings);
        }
    }

    fn scan_strip(&mut self, x0: f64, x1: f64, nx: usize, win: &SearchWindow, out: &mut Vec<(Complex64, f64)>, warnings: &mut Vec<String>) {
        let ny = self.opts.ny.max(1);
        let re_ref = 0.5 * (x0 + x1);
        let xs: Vec<f64> = (0..=nx).map(|i| x0 + (x1 - x0) * i as f64 / nx as f64).collect();
        let ys: Vec<f64> = (0..=ny)
            .map(|j| win.im_min + (win.im_max - win.im_min) * j as f64 / ny as f64)
            .collect();
        let mut grid = vec![Complex64::new(0.0, 0.0); (nx + 1) * (ny + 1)];
        for j in 0..=ny {
            for i in 0..=nx {
                grid[j * (nx + 1) + i] = self.f(Complex64::new(xs[i], ys[j]), re_ref);
            }
        }
        let at = |i: usize, j: usize| Complex64::new(xs[i], ys[j]);
        // horizontal edges (i,j)->(i+1,j), vertical edges (i,j)->(i,j+1)
        let mut hor = vec![EdgeSum::default(); nx * (ny + 1)];
        let mut ver = vec![EdgeSum::default(); (nx + 1) * ny];
        for j in 0..=ny {
            for i in 0..nx {
                let (fa, fb) = (grid[j * (nx + 1) + i], grid[j * (nx + 1) + i + 1]);
                hor[j * nx + i] = self.edge(at(i, j), fa, at(i + 1, j), fb, re_ref, 0);
            }
        }
        for j in 0..ny {
            for i in 0..=nx {
                let (fa, fb) = (grid[j * (nx + 1) + i], grid[(j + 1) * (nx + 1) + i]);
                ver[j * (nx + 1) + i] = self.edge(at(i, j), fa, at(i, j + 1), fb, re_ref, 0);
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let b = hor[j * nx + i];
                let r = ver[j * (nx + 1) + i + 1];
                let t = hor[(j + 1) * nx + i];
                let l = ver[j * (nx + 1) + i];
                let dphase = b.dphase + r.dphase - t.dphase - l.dphase;
                let moment = b.moment + r.moment - t.moment - l.moment;
                let winding = (dphase / std::f64::consts::TAU).round() as i64;
                if winding != 0 {
                    if winding < 0 {
                        warnings.push(format!(
                            "negative winding {winding} near u = {:.6}{:+.6}i (singularity in window)",
                            0.5 * (xs[i] + xs[i + 1]),
                            0.5 * (ys[j] + ys[j + 1])
                        ));
                    }
                    self.resolve((xs[i], xs[i + 1], ys[j], ys[j + 1]), winding, moment, re_ref, 0, out, warnings);
                }
            }
        }
    }
}

/// Finds every TM guided mode inside `window`.
///
/// The window is split into column strips along the vertical branch cuts of
/// the half-spaces; in each strip the winding number of the dispersion
/// function around every grid cell flags candidate zeros, which are then
/// polished with complex Newton iteration.
pub fn find_tm_poles(
    stack: &OpticalStack,
    window: &SearchWindow,
    options: &PoleSearchOptions,
) -> Result<PoleSearch, StackError> {
    window.validate()?;
    if options.nx == 0 || options.ny == 0 {
        return Err(StackError::DegenerateWindow("grid has no cells".into()));
    }
    let mut cuts: Vec<f64> = [stack.lower(), stack.upper()]
        .iter()
        .map(|&e| principal_index(e))
        .filter(|n| n.re > window.re_min && n.re < window.re_max && n.im < window.im_max)
        .map(|n| n.re)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = vec![window.re_min];
    edges.extend(cuts);
    edges.push(window.re_max);

    let mut searcher = Searcher {
        stack,
        opts: *options,
        evals: 0,
        exhausted: false,
    };
    let width = window.re_max - window.re_min;
    let mut raw = Vec::new();
    let mut warnings = Vec::new();
    for w in edges.windows(2) {
        let nx = ((options.nx as f64) * (w[1] - w[0]) / width).ceil().max(2.0) as usize;
        searcher.scan_strip(w[0], w[1], nx, window, &mut raw, &mut warnings);
    }

    raw.retain(|(u, _)| window.contains(*u));
    raw.sort_by(|a, b| a.0.re.total_cmp(&b.0.re));
    let mut merged: Vec<(Complex64, f64)> = Vec::new();
    for (u, res) in raw {
        if let Some(prev) = merged.iter_mut().find(|(v, _)| (*v - u).norm() < options.dedup_distance) {
            if res < prev.1 {
                *prev = (u, res);
            }
        } else {
            merged.push((u, res));
        }
    }
    let wl = stack.wavelength_nm();
    Ok(PoleSearch {
        modes: merged
            .into_iter()
            .map(|(mut u, res)| {
                // round-off leaves ~1e-17 imaginary parts on modes of lossless stacks
                if u.im.abs() <= 1e-12 * u.re.abs().max(1.0) {
                    u.im = 0.0;
                }
                GuidedMode::new(u, wl, res)
            })
            .collect(),
        budget_exhausted: searcher.exhausted,
        evaluations: searcher.evals,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn closed_form(em: Complex64, ed: Complex64) -> Complex64 {
        (em * ed / (em + ed)).sqrt()
    }

    #[test]
    fn silver_air_single_pole() {
        let em = c(-21.0, 0.4);
        let s = OpticalStack::new(685.0, em, vec![], c(1.0, 0.0)).unwrap();
        let res = find_tm_poles(&s, &SearchWindow::beyond_light_line(&s, 4.0), &PoleSearchOptions::default()).unwrap();
        assert_eq!(res.modes.len(), 1, "{res:?}");
        let n = res.modes[0].n_eff;
        assert!((n - closed_form(em, c(1.0, 0.0))).norm() < 1e-9);
        assert!((n - c(1.02469, 0.000488)).norm() < 1e-4);
        assert!(!res.budget_exhausted);
    }

    #[test]
    fn lossless_silver_air_pole() {
        let em = c(-21.0, 0.0);
        let s = OpticalStack::new(685.0, em, vec![], c(1.0, 0.0)).unwrap();
        let res = find_tm_poles(&s, &SearchWindow::beyond_light_line(&s, 4.0), &PoleSearchOptions::default()).unwrap();
        assert_eq!(res.modes.len(), 1);
        let n = res.modes[0].n_eff;
        assert!((n.re - 1.02470).abs() < 1e-4 && n.im.abs() < 1e-12);
        assert!(res.modes[0].propagation_length_um.is_infinite());
    }

    #[test]
    fn dielectric_interface_has_no_mode() {
        let s = OpticalStack::new(685.0, c(1.525 * 1.525, 0.0), vec![], c(1.0, 0.0)).unwrap();
        let win = SearchWindow {
            re_min: 1.0,
            re_max: 4.0,
            im_min: DEFAULT_IM_MIN,
            im_max: 1.0,
        };
        let res = find_tm_poles(&s, &win, &PoleSearchOptions::default()).unwrap();
        assert!(res.modes.is_empty(), "{res:?}");
    }

    #[test]
    fn degenerate_window() {
        let s = OpticalStack::new(685.0, c(-21.0, 0.4), vec![], c(1.0, 0.0)).unwrap();
        let win = SearchWindow {
            re_min: 2.0,
            re_max: 2.0,
            im_min: 0.0,
            im_max: 1.0,
        };
        assert!(matches!(
            find_tm_poles(&s, &win, &PoleSearchOptions::default()),
            Err(StackError::DegenerateWindow(_))
        ));
    }

    #[test]
    fn metal_insulator_metal_modes_refinement_stable() {
        let s = OpticalStack::new(
            685.0,
            c(-21.0, 0.4),
            vec![(c(5.8564, 0.0), 40.0), (c(-21.0, 1.2), 8.0), (c(3.0276, 0.0), 3.0)],
            c(1.0, 0.0),
        )
        .unwrap();
        let win = SearchWindow::beyond_light_line(&s, 8.0);
        let coarse = find_tm_poles(&s, &win, &PoleSearchOptions::default()).unwrap();
        let fine = find_tm_poles(
            &s,
            &win,
            &PoleSearchOptions {
                nx: 400,
                ny: 100,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!coarse.modes.is_empty());
        assert_eq!(coarse.modes.len(), fine.modes.len(), "{coarse:?}\n{fine:?}");
        for m in &coarse.modes {
            assert!(m.residual < 1e-10);
            assert!(win.contains(m.n_eff));
            assert!(dispersion_function(&s, m.n_eff).norm() < 1e-10);
        }
    }

    #[test]
    fn propagation_length_values() {
        let m = GuidedMode::new(c(1.02469, 0.000488), 685.0, 0.0);
        let l = mode_propagation_length(&m, 685.0).unwrap();
        assert!((l - 111.7).abs() < 0.1, "{l}");
        let m = GuidedMode::new(c(1.1, 8.58e-3), 685.0, 0.0);
        assert!((mode_propagation_length(&m, 685.0).unwrap() - 6.35).abs() < 0.01);
        let m = GuidedMode::new(c(1.1, 0.0), 685.0, 0.0);
        assert!(matches!(mode_propagation_length(&m, 685.0), Err(StackError::UnboundedPropagation(_))));
    }
}
