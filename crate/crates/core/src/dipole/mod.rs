//! Power emitted by a point dipole inside a planar stack, resolved over the
//! in-plane wavenumber `u = k_par / k0`, and its split into far-field,
//! bound-mode and absorption channels.
//!
//! Rates are expressed relative to the same dipole in vacuum unless a
//! different [`Reference`] is selected. The density per unit `u` for a
//! vertical dipole at height `z0` in an emitter layer of index `n` and
//! thickness `d` is
//!
//! ```text
//! g(u) = 3/2 s^3 / s_z * (1 + r_d a)(1 + r_u b) / (1 - r_d r_u a b)
//! s = u / n,  s_z = sqrt(1 - s^2),  a = exp(2 i k0 kz z0),  b = exp(2 i k0 kz (d - z0))
//! ```
//!
//! with `r_d`, `r_u` the TM generalized reflections seen from the emitter
//! layer. Horizontal dipoles combine TE and TM terms.

mod pattern;
mod rates;

pub use pattern::{collection_efficiency, far_field_pattern, far_field_pattern_with, FarFieldPattern, PATTERN_SAMPLES};
pub use rates::{
    decay_channels, dissipated_power_spectrum, partition_channels, spp_ff_ratio, total_decay_rate,
    total_decay_rate_detailed, DecayChannels, ModeContribution, PowerSpectrum, TotalRate,
};

use num_complex::Complex64;
use thiserror::Error;

use crate::quadrature::QuadSettings;
use crate::stratified::{kz, side_coefficients, OpticalStack, Polarization, Sheet, Side, StackError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DipoleError {
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error("dipole at z = {z_nm} nm lies on a boundary of the {thickness_nm} nm emitter layer")]
    DegeneratePosition { z_nm: f64, thickness_nm: f64 },
    #[error("invalid emitter layer: {0}")]
    EmitterLayer(String),
    #[error("emitter wavelength {emitter} nm differs from stack wavelength {stack} nm")]
    WavelengthMismatch { emitter: f64, stack: f64 },
    #[error("u_max must be at least 2, got {0}")]
    BadUMax(f64),
    #[error("quadrature did not converge: tail estimate is {tail_fraction:.3e} of the total")]
    NotConverged { tail_fraction: f64 },
    #[error("partition failed: far field exceeds the total rate (near-field channel {gamma_nf:.6e}, total {gamma_total:.6e})")]
    PartitionFailure { gamma_nf: f64, gamma_total: f64 },
    #[error("spectrum was computed for a different stack or emitter")]
    SpectrumMismatch,
    #[error("upper half-space is lossy (eps = {0}); far-field pattern undefined")]
    LossyUpperHalfSpace(Complex64),
    #[error("numerical aperture {na} outside [0, {n_upper}]")]
    NumericalAperture { na: f64, n_upper: f64 },
    #[error("far-field rate is zero; ratio undefined")]
    ZeroFarField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterConfig {
    pub orientation: Orientation,
    /// Index into the stack's finite layers (bottom = 0).
    pub layer: usize,
    /// Height above the lower boundary of the emitter layer.
    pub height_nm: f64,
    pub wavelength_nm: f64,
}

impl EmitterConfig {
    pub fn vertical(layer: usize, height_nm: f64, wavelength_nm: f64) -> Self {
        Self {
            orientation: Orientation::Vertical,
            layer,
            height_nm,
            wavelength_nm,
        }
    }

    pub(crate) fn canonical_key(&self) -> String {
        format!(
            "{:?};layer={};z={:e};wl={:e}",
            self.orientation, self.layer, self.height_nm, self.wavelength_nm
        )
    }
}

/// Normalization of the reported rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    /// The same dipole in vacuum.
    FreeSpace,
    /// The same dipole at the centre of a diamond (n = 2.42) layer of the
    /// given thickness on a glass (n = 1.525) substrate under air.
    GlassSubstrate { spacer_nm: f64 },
    /// A fixed rate in vacuum units.
    Custom(f64),
}

pub const REFERENCE_DIAMOND_INDEX: f64 = 2.42;
pub const REFERENCE_GLASS_INDEX: f64 = 1.525;

/// Numerical settings shared by the emission routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionOptions {
    pub quad: QuadSettings,
    /// Extent of sampled spectra and minimum extent of the mode search.
    pub u_max: f64,
    /// Modes with shorter propagation length are counted as absorption.
    pub min_propagation_um: f64,
    /// Half-width of the Lorentzian cross-check window in linewidths.
    pub window_linewidths: f64,
    /// Relative tolerance on the channel split: far field exceeding the total
    /// by more is an error, and guided rates capped by more are reported.
    pub partition_tolerance: f64,
    /// Depth of the deformed integration contour below the real axis.
    pub contour_depth: f64,
    pub reference: Reference,
}

impl Default for EmissionOptions {
    fn default() -> Self {
        Self {
            quad: QuadSettings {
                rel_tol: 1e-6,
                abs_tol: 0.0,
                max_intervals: 4000,
            },
            u_max: 20.0,
            min_propagation_um: 0.5,
            window_linewidths: 10.0,
            partition_tolerance: 1e-2,
            contour_depth: 0.5,
            reference: Reference::FreeSpace,
        }
    }
}

/// Validated stack and emitter with the per-`u` integrands.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    pub stack: OpticalStack,
    pub emitter: EmitterConfig,
    pub eps_e: Complex64,
    pub n_e: f64,
    pub thickness: f64,
    pub z0: f64,
    pub k0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    Up,
    Down,
}

impl Kernel {
    pub fn new(stack: &OpticalStack, emitter: &EmitterConfig) -> Result<Self, DipoleError> {
        if (stack.wavelength_nm() - emitter.wavelength_nm).abs() > 1e-9 * emitter.wavelength_nm.abs() {
            return Err(DipoleError::WavelengthMismatch {
                emitter: emitter.wavelength_nm,
                stack: stack.wavelength_nm(),
            });
        }
        let Some(&(eps_e, thickness)) = stack.layers().get(emitter.layer) else {
            return Err(DipoleError::EmitterLayer(format!(
                "index {} but the stack has {} finite layers",
                emitter.layer,
                stack.layers().len()
            )));
        };
        if eps_e.im != 0.0 || eps_e.re <= 0.0 {
            return Err(DipoleError::EmitterLayer(format!(
                "emitter medium must be a lossless dielectric, got eps = {eps_e}"
            )));
        }
        let z0 = emitter.height_nm;
        if !(z0 > 0.0 && z0 < thickness) {
            return Err(DipoleError::DegeneratePosition {
                z_nm: z0,
                thickness_nm: thickness,
            });
        }
        let stack = stack.clone().with_emitter_layer(emitter.layer)?;
        Ok(Self {
            k0: stack.k0(),
            stack,
            emitter: *emitter,
            eps_e,
            n_e: eps_e.re.sqrt(),
            thickness,
            z0,
        })
    }

    fn phases(&self, kz_e: Complex64) -> (Complex64, Complex64) {
        let i2k = Complex64::i() * 2.0 * self.k0 * kz_e;
        ((i2k * self.z0).exp(), (i2k * (self.thickness - self.z0)).exp())
    }

    fn reflections(&self, u: Complex64, pol: Polarization, sheet: Sheet) -> (Complex64, Complex64) {
        let rd = side_coefficients(&self.stack, u, pol, Side::EmitterDown, sheet).0;
        let ru = side_coefficients(&self.stack, u, pol, Side::EmitterUp, sheet).0;
        (rd, ru)
    }

    /// Full density `g(u)` and its reflected part `g(u) - g_hom(u)`, with the
    /// emitter-layer normal wavenumber supplied explicitly.
    pub fn density_with_kz(&self, u: Complex64, kz_e: Complex64, sheet: Sheet) -> (Complex64, Complex64) {
        let s = u / self.n_e;
        let sz = kz_e / self.n_e;
        let (a, b) = self.phases(kz_e);
        let one = Complex64::new(1.0, 0.0);
        match self.emitter.orientation {
            Orientation::Vertical => {
                let (rd, ru) = self.reflections_with(u, kz_e, Polarization::Tm, sheet);
                let den = one - rd * ru * a * b;
                let fm1 = (rd * a + ru * b + 2.0 * rd * ru * a * b) / den;
                let pref = 1.5 * s * s * s / sz;
                (pref * (one + fm1), pref * fm1)
            }
            Orientation::Horizontal => {
                let (rds, rus) = self.reflections_with(u, kz_e, Polarization::Te, sheet);
                let (rdp, rup) = self.reflections_with(u, kz_e, Polarization::Tm, sheet);
                let fs = (rds * a + rus * b + 2.0 * rds * rus * a * b) / (one - rds * rus * a * b);
                let fp = (-rdp * a - rup * b + 2.0 * rdp * rup * a * b) / (one - rdp * rup * a * b);
                let pref = 0.75 * s / sz;
                let refl = pref * (fs + sz * sz * fp);
                (pref * (one + sz * sz) + refl, refl)
            }
        }
    }

    fn reflections_with(&self, u: Complex64, kz_e: Complex64, pol: Polarization, sheet: Sheet) -> (Complex64, Complex64) {
        let proper = kz(self.eps_e, u, Sheet::Proper);
        if proper == kz_e {
            return self.reflections(u, pol, sheet);
        }
        // opposite sign of kz in the emitter layer: generalized reflections invert
        let (rd, ru) = self.reflections(u, pol, sheet);
        (1.0 / rd, 1.0 / ru)
    }

    /// `(g, g - g_hom)` with the proper branch in the emitter layer.
    pub fn density(&self, u: Complex64, sheet: Sheet) -> (Complex64, Complex64) {
        let kz_e = kz(self.eps_e, u, Sheet::Proper);
        self.density_with_kz(u, kz_e, sheet)
    }

    /// Real-axis density of total dissipated power.
    pub fn real_density(&self, u: f64) -> f64 {
        self.density(Complex64::new(u, 0.0), Sheet::Proper).0.re
    }

    /// Flux density per unit `u` leaving through one half-space; zero unless
    /// the wave propagates there and the half-space is lossless.
    pub fn far_field_density(&self, u: f64, dir: Direction) -> f64 {
        let eps_t = match dir {
            Direction::Up => self.stack.upper(),
            Direction::Down => self.stack.lower(),
        };
        if eps_t.im != 0.0 || eps_t.re <= 0.0 || u >= eps_t.re.sqrt() {
            return 0.0;
        }
        let uc = Complex64::new(u, 0.0);
        let kz_e = kz(self.eps_e, uc, Sheet::Proper);
        let kz_t = kz(eps_t, uc, Sheet::Proper);
        let s = u / self.n_e;
        let sz2 = (kz_e / self.n_e).norm_sqr();
        let (a, b) = self.phases(kz_e);
        let i = Complex64::i();
        let (side_t, phase) = match dir {
            Direction::Up => (Side::EmitterUp, (i * self.k0 * kz_e * (self.thickness - self.z0)).exp()),
            Direction::Down => (Side::EmitterDown, (i * self.k0 * kz_e * self.z0).exp()),
        };
        let one = Complex64::new(1.0, 0.0);
        // amplitude leaving the emitter layer towards `dir`, including the
        // wave first reflected by the opposite side
        let amplitude = |pol: Polarization, sign: f64| -> Complex64 {
            let (rd, ru) = self.reflections(uc, pol, Sheet::Proper);
            let t = side_coefficients(&self.stack, uc, pol, side_t, Sheet::Proper).1;
            let opposite = match dir {
                Direction::Up => rd * a,
                Direction::Down => ru * b,
            };
            t * phase * (one + sign * opposite) / (one - rd * ru * a * b)
        };
        let tm_flux = (self.eps_e * kz_t / eps_t).re / self.n_e;
        match self.emitter.orientation {
            Orientation::Vertical => {
                let t = amplitude(Polarization::Tm, 1.0);
                0.75 * s * s * s / sz2 * t.norm_sqr() * tm_flux
            }
            Orientation::Horizontal => {
                let ts = amplitude(Polarization::Te, 1.0);
                let tp = amplitude(Polarization::Tm, -1.0);
                0.375 * s / sz2 * ts.norm_sqr() * kz_t.re / self.n_e + 0.375 * s * tp.norm_sqr() * tm_flux
            }
        }
    }

    /// Lowest light line of a half-space that can carry radiation away, or
    /// the outermost light line when neither can. Bound modes lie beyond it.
    pub fn guided_floor(&self) -> f64 {
        [self.stack.lower(), self.stack.upper()]
            .iter()
            .filter(|e| e.im == 0.0 && e.re > 0.0)
            .map(|e| e.re.sqrt())
            .fold(None, |acc: Option<f64>, n| Some(acc.map_or(n, |a| a.min(n))))
            .unwrap_or_else(|| self.stack.max_light_line().max(0.0))
    }

    /// Branch points on the real axis below `limit`, ascending.
    pub fn real_breakpoints(&self, limit: f64) -> Vec<f64> {
        let mut pts = vec![0.0, limit];
        for eps in [self.stack.lower(), self.stack.upper(), self.eps_e] {
            let n = eps.sqrt().re;
            if n > 0.0 && n < limit && eps.im == 0.0 && eps.re > 0.0 {
                pts.push(n);
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        pts
    }
}

/// Rate of the configured reference emitter in vacuum units.
pub(crate) fn reference_rate(emitter: &EmitterConfig, options: &EmissionOptions) -> Result<f64, DipoleError> {
    match options.reference {
        Reference::FreeSpace => Ok(1.0),
        Reference::Custom(v) => Ok(v),
        Reference::GlassSubstrate { spacer_nm } => {
            let n_d = REFERENCE_DIAMOND_INDEX;
            let n_g = REFERENCE_GLASS_INDEX;
            let stack = OpticalStack::new(
                emitter.wavelength_nm,
                Complex64::new(n_g * n_g, 0.0),
                vec![(Complex64::new(n_d * n_d, 0.0), spacer_nm)],
                Complex64::new(1.0, 0.0),
            )?;
            let em = EmitterConfig {
                orientation: emitter.orientation,
                layer: 0,
                height_nm: 0.5 * spacer_nm,
                wavelength_nm: emitter.wavelength_nm,
            };
            let opts = EmissionOptions {
                reference: Reference::FreeSpace,
                ..*options
            };
            total_decay_rate(&stack, &em, &opts)
        }
    }
}
