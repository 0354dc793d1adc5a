//! Planar multilayer optics.
//!
//! All wavenumbers are normalized by the vacuum wavenumber `k0 = 2 pi / lambda`:
//! `u = k_par / k0` is the in-plane component and `kz = sqrt(eps - u^2)` the
//! normal one. TM quantities refer to the tangential magnetic field, TE
//! quantities to the tangential electric field.
//!
//! Reflection of a sub-stack is composed with the Rouard recursion
//! `R_i = (r_i + R_{i+1} p^2) / (1 + r_i R_{i+1} p^2)` with `p = exp(i k0 kz d)`,
//! which never forms growing exponentials and therefore stays finite for
//! strongly evanescent `u`.

mod modes;

pub use modes::{
    dispersion_function, find_tm_poles, mode_propagation_length, GuidedMode, PoleSearch, PoleSearchOptions,
    SearchWindow, DEFAULT_IM_MIN,
};

use std::fmt::Write as _;

use num_complex::Complex64;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::materials::{MaterialError, MaterialModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StackError {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("layer {index} has non-positive thickness {thickness_nm} nm")]
    BadThickness { index: usize, thickness_nm: f64 },
    #[error("emitter layer index {index} out of range for {layers} finite layers")]
    BadEmitterLayer { index: usize, layers: usize },
    #[error("wavelength must be positive and finite, got {0} nm")]
    BadWavelength(f64),
    #[error("search window is degenerate: {0}")]
    DegenerateWindow(String),
    #[error("mode has Im n_eff = {0}; propagation length is unbounded")]
    UnboundedPropagation(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    Te,
    Tm,
}

/// Where a generalized reflection coefficient is observed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// From the lower half-space, looking up through the whole stack.
    FromBelow,
    /// From the upper half-space, looking down through the whole stack.
    FromAbove,
    /// From inside the emitter layer, looking at everything below it.
    EmitterDown,
    /// From inside the emitter layer, looking at everything above it.
    EmitterUp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub material: MaterialModel,
    pub thickness_nm: f64,
}

impl Layer {
    pub fn new(material: MaterialModel, thickness_nm: f64) -> Self {
        Self { material, thickness_nm }
    }
}

/// Material description of a planar stack; resolved into permittivities at
/// a given wavelength with [`LayerStack::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    lower: MaterialModel,
    layers: Vec<Layer>,
    upper: MaterialModel,
    emitter_layer: Option<usize>,
}

impl LayerStack {
    /// `layers` are ordered bottom to top.
    pub fn new(lower: MaterialModel, layers: Vec<Layer>, upper: MaterialModel) -> Result<Self, StackError> {
        for (index, l) in layers.iter().enumerate() {
            if !(l.thickness_nm > 0.0 && l.thickness_nm.is_finite()) {
                return Err(StackError::BadThickness {
                    index,
                    thickness_nm: l.thickness_nm,
                });
            }
        }
        Ok(Self {
            lower,
            layers,
            upper,
            emitter_layer: None,
        })
    }

    pub fn with_emitter_layer(mut self, index: usize) -> Result<Self, StackError> {
        if index >= self.layers.len() {
            return Err(StackError::BadEmitterLayer {
                index,
                layers: self.layers.len(),
            });
        }
        self.emitter_layer = Some(index);
        Ok(self)
    }

    pub fn lower(&self) -> &MaterialModel {
        &self.lower
    }

    pub fn upper(&self) -> &MaterialModel {
        &self.upper
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn emitter_layer(&self) -> Option<usize> {
        self.emitter_layer
    }

    pub fn resolve(&self, wavelength_nm: f64) -> Result<OpticalStack, StackError> {
        let lower = self.lower.permittivity(wavelength_nm)?;
        let upper = self.upper.permittivity(wavelength_nm)?;
        let layers = self
            .layers
            .iter()
            .map(|l| Ok((l.material.permittivity(wavelength_nm)?, l.thickness_nm)))
            .collect::<Result<Vec<_>, StackError>>()?;
        let mut s = OpticalStack::new(wavelength_nm, lower, layers, upper)?;
        s.emitter_layer = self.emitter_layer;
        Ok(s)
    }
}

/// A stack with permittivities fixed at one wavelength. This is the form all
/// numerical routines operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalStack {
    wavelength_nm: f64,
    lower: Complex64,
    /// `(eps, thickness_nm)`, bottom to top.
    layers: Vec<(Complex64, f64)>,
    upper: Complex64,
    emitter_layer: Option<usize>,
}

impl OpticalStack {
    pub fn new(
        wavelength_nm: f64,
        lower: Complex64,
        layers: Vec<(Complex64, f64)>,
        upper: Complex64,
    ) -> Result<Self, StackError> {
        if !(wavelength_nm > 0.0 && wavelength_nm.is_finite()) {
            return Err(StackError::BadWavelength(wavelength_nm));
        }
        for (index, &(_, d)) in layers.iter().enumerate() {
            if !(d > 0.0 && d.is_finite()) {
                return Err(StackError::BadThickness { index, thickness_nm: d });
            }
        }
        Ok(Self {
            wavelength_nm,
            lower,
            layers,
            upper,
            emitter_layer: None,
        })
    }

    pub fn with_emitter_layer(mut self, index: usize) -> Result<Self, StackError> {
        if index >= self.layers.len() {
            return Err(StackError::BadEmitterLayer {
                index,
                layers: self.layers.len(),
            });
        }
        self.emitter_layer = Some(index);
        Ok(self)
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.wavelength_nm
    }

    /// Vacuum wavenumber in rad/nm.
    pub fn k0(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength_nm
    }

    pub fn lower(&self) -> Complex64 {
        self.lower
    }

    pub fn upper(&self) -> Complex64 {
        self.upper
    }

    pub fn layers(&self) -> &[(Complex64, f64)] {
        &self.layers
    }

    pub fn emitter_layer(&self) -> Option<usize> {
        self.emitter_layer
    }

    /// Mirror image: top becomes bottom. The emitter layer follows.
    pub fn reversed(&self) -> Self {
        let n = self.layers.len();
        Self {
            wavelength_nm: self.wavelength_nm,
            lower: self.upper,
            layers: self.layers.iter().rev().copied().collect(),
            upper: self.lower,
            emitter_layer: self.emitter_layer.map(|e| n - 1 - e),
        }
    }

    /// Same permittivities with every length (thicknesses and wavelength)
    /// multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, StackError> {
        let mut s = Self::new(
            self.wavelength_nm * factor,
            self.lower,
            self.layers.iter().map(|&(e, d)| (e, d * factor)).collect(),
            self.upper,
        )?;
        s.emitter_layer = self.emitter_layer;
        Ok(s)
    }

    /// True when no medium absorbs.
    pub fn is_lossless(&self) -> bool {
        self.lower.im == 0.0 && self.upper.im == 0.0 && self.layers.iter().all(|l| l.0.im == 0.0)
    }

    /// Largest real part of the half-space refractive indices; bound modes
    /// live beyond this light line.
    pub fn max_light_line(&self) -> f64 {
        principal_index(self.lower).re.max(principal_index(self.upper).re)
    }

    /// Canonical text form used as a cache and metadata key.
    pub fn canonical_key(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "wl={:e};lo={:e},{:e};", self.wavelength_nm, self.lower.re, self.lower.im);
        for (e, d) in &self.layers {
            let _ = write!(s, "L={:e},{:e},{:e};", e.re, e.im, d);
        }
        let _ = write!(s, "up={:e},{:e};em={:?}", self.upper.re, self.upper.im, self.emitter_layer);
        s
    }

    /// SHA-256 of [`Self::canonical_key`], hex encoded.
    pub fn hash_hex(&self) -> String {
        hex_digest(self.canonical_key().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Principal square root of the permittivity.
pub(crate) fn principal_index(eps: Complex64) -> Complex64 {
    eps.sqrt()
}

/// Which continuation of `sqrt(eps - u^2)` to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Sheet {
    /// `Im kz >= 0` enforced by a sign flip. Exact for real `u` and for the
    /// lower-right quadrant of the `u` plane.
    Proper,
    /// Analytic continuation with branch cuts running vertically upward from
    /// the branch point `u = sqrt(eps)`. The argument is the real part of `u`
    /// used to decide the side of the cut, so that every point of a search
    /// cell lands on the same sheet.
    Vertical(f64),
}

pub(crate) fn kz(eps: Complex64, u: Complex64, sheet: Sheet) -> Complex64 {
    match sheet {
        Sheet::Proper => {
            let w = (eps - u * u).sqrt();
            if w.im < 0.0 || (w.im == 0.0 && w.re < 0.0) {
                -w
            } else {
                w
            }
        }
        Sheet::Vertical(re_ref) => {
            if re_ref < principal_index(eps).re {
                (eps - u * u).sqrt()
            } else {
                Complex64::i() * (u * u - eps).sqrt()
            }
        }
    }
}

#[inline]
pub(crate) fn fresnel(
    eps1: Complex64,
    eps2: Complex64,
    kz1: Complex64,
    kz2: Complex64,
    pol: Polarization,
) -> (Complex64, Complex64) {
    match pol {
        Polarization::Te => {
            let den = kz1 + kz2;
            ((kz1 - kz2) / den, 2.0 * kz1 / den)
        }
        Polarization::Tm => {
            let a = eps2 * kz1;
            let b = eps1 * kz2;
            let den = a + b;
            ((a - b) / den, 2.0 * a / den)
        }
    }
}

/// Single-interface amplitude coefficients for a wave in medium 1 hitting
/// medium 2, with `Im kz >= 0` in both media.
///
/// TM coefficients refer to the magnetic field, so `t = 1 + r` for both
/// polarizations.
pub fn fresnel_interface(eps1: Complex64, eps2: Complex64, u: Complex64, pol: Polarization) -> (Complex64, Complex64) {
    let k1 = kz(eps1, u, Sheet::Proper);
    let k2 = kz(eps2, u, Sheet::Proper);
    fresnel(eps1, eps2, k1, k2, pol)
}

/// Generalized reflection and transmission of a sub-stack.
///
/// `exit` is the terminating half-space, `layers` the finite layers listed
/// from the exit side toward the incident medium, and `incident` the medium
/// the wave arrives from. Each medium is `(eps, kz)`. The transmission is
/// the field amplitude in the exit medium at its boundary per unit incident
/// amplitude at the first interface.
pub(crate) fn rouard<I>(
    exit: (Complex64, Complex64),
    layers: I,
    incident: (Complex64, Complex64),
    pol: Polarization,
    k0: f64,
) -> (Complex64, Complex64)
where
    I: Iterator<Item = (Complex64, Complex64, f64)>,
{
    let one = Complex64::new(1.0, 0.0);
    let (mut eps_next, mut kz_next) = exit;
    let mut d_next = 0.0;
    let mut r_acc = Complex64::new(0.0, 0.0);
    let mut t_acc = one;
    let step = |eps: Complex64, kzv: Complex64, eps_next: Complex64, kz_next: Complex64, d_next: f64, r_acc: &mut Complex64, t_acc: &mut Complex64| {
        let (r, t) = fresnel(eps, eps_next, kzv, kz_next, pol);
        let p = if d_next == 0.0 {
            one
        } else {
            (Complex64::i() * k0 * kz_next * d_next).exp()
        };
        let p2 = p * p;
        let den = one + r * *r_acc * p2;
        let rn = (r + *r_acc * p2) / den;
        let tn = t * *t_acc * p / den;
        *r_acc = rn;
        *t_acc = tn;
    };
    for (eps, kzv, d) in layers {
        step(eps, kzv, eps_next, kz_next, d_next, &mut r_acc, &mut t_acc);
        eps_next = eps;
        kz_next = kzv;
        d_next = d;
    }
    step(incident.0, incident.1, eps_next, kz_next, d_next, &mut r_acc, &mut t_acc);
    (r_acc, t_acc)
}

/// Reflection and transmission seen from `side`, for the given branch choice
/// on the half-spaces. Finite layers (including the emitter layer) always use
/// the proper branch.
pub(crate) fn side_coefficients(
    stack: &OpticalStack,
    u: Complex64,
    pol: Polarization,
    side: Side,
    sheet: Sheet,
) -> (Complex64, Complex64) {
    let k0 = stack.k0();
    let lower = (stack.lower, kz(stack.lower, u, sheet));
    let upper = (stack.upper, kz(stack.upper, u, sheet));
    let layer = |&(e, d): &(Complex64, f64)| (e, kz(e, u, Sheet::Proper), d);
    let n = stack.layers.len();
    match side {
        Side::FromBelow => rouard(upper, stack.layers.iter().rev().map(layer), lower, pol, k0),
        Side::FromAbove => rouard(lower, stack.layers.iter().map(layer), upper, pol, k0),
        Side::EmitterDown | Side::EmitterUp => {
            let e = stack.emitter_layer.expect("stack has no emitter layer");
            let eps_e = stack.layers[e].0;
            let inc = (eps_e, kz(eps_e, u, Sheet::Proper));
            if side == Side::EmitterDown {
                rouard(lower, stack.layers[..e].iter().map(layer), inc, pol, k0)
            } else {
                rouard(upper, stack.layers[e + 1..n].iter().rev().map(layer), inc, pol, k0)
            }
        }
    }
}

/// Generalized reflection coefficient seen from `side`.
///
/// `EmitterDown`/`EmitterUp` require an emitter layer on the stack.
pub fn stack_reflection(stack: &OpticalStack, u: Complex64, pol: Polarization, side: Side) -> Complex64 {
    side_coefficients(stack, u, pol, side, Sheet::Proper).0
}

/// Generalized amplitude transmission into the opposite half-space, seen
/// from `side`.
pub fn stack_transmission(stack: &OpticalStack, u: Complex64, pol: Polarization, side: Side) -> Complex64 {
    side_coefficients(stack, u, pol, side, Sheet::Proper).1
}

/// Power reflectance and transmittance for a propagating wave incident from
/// a half-space (`side` = `FromBelow` or `FromAbove`).
pub fn stack_power_coefficients(stack: &OpticalStack, u: f64, pol: Polarization, side: Side) -> (f64, f64) {
    let uc = Complex64::new(u, 0.0);
    let (r, t) = side_coefficients(stack, uc, pol, side, Sheet::Proper);
    let (inc, exit) = match side {
        Side::FromBelow => (stack.lower, stack.upper),
        Side::FromAbove => (stack.upper, stack.lower),
        _ => panic!("power coefficients need a half-space side"),
    };
    let ki = kz(inc, uc, Sheet::Proper);
    let ke = kz(exit, uc, Sheet::Proper);
    let ratio = match pol {
        Polarization::Te => ke.re / ki.re,
        Polarization::Tm => (ke / exit).re / (ki / inc).re,
    };
    (r.norm_sqr(), t.norm_sqr() * ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn glass_air_normal_incidence() {
        let eg = c(1.525 * 1.525, 0.0);
        let closed = (1.525 - 1.0) / (1.525 + 1.0);
        let (rp, tp) = fresnel_interface(eg, c(1.0, 0.0), c(0.0, 0.0), Polarization::Tm);
        let (rs, ts) = fresnel_interface(eg, c(1.0, 0.0), c(0.0, 0.0), Polarization::Te);
        assert!((rp.norm() - closed).abs() < 1e-12);
        assert!((rs.norm() - closed).abs() < 1e-12);
        assert!((rp.norm() - 0.2079).abs() < 5e-5);
        assert!((tp - (1.0 + rp)).norm() < 1e-14);
        assert!((ts - (1.0 + rs)).norm() < 1e-14);
    }

    #[test]
    fn identical_media_do_not_reflect() {
        for u in [0.0, 0.7, 3.0] {
            for pol in [Polarization::Te, Polarization::Tm] {
                let (r, t) = fresnel_interface(c(2.0, 0.3), c(2.0, 0.3), c(u, 0.0), pol);
                assert!(r.norm() < 1e-15 && (t - 1.0).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn total_internal_reflection() {
        let eg = c(1.525 * 1.525, 0.0);
        for pol in [Polarization::Te, Polarization::Tm] {
            let (r, _) = fresnel_interface(eg, c(1.0, 0.0), c(1.2, 0.0), pol);
            assert!((r.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_vacuum_stack() {
        let s = OpticalStack::new(685.0, c(1.0, 0.0), vec![], c(1.0, 0.0)).unwrap();
        for u in [0.0, 0.5, 2.0, 40.0] {
            assert_eq!(stack_reflection(&s, c(u, 0.0), Polarization::Tm, Side::FromBelow), c(0.0, 0.0));
        }
    }

    /// Three-medium Airy formula written out independently of the recursion.
    fn airy(n1: Complex64, n2: Complex64, n3: Complex64, d: f64, wl: f64) -> f64 {
        let r12 = (n1 - n2) / (n1 + n2);
        let r23 = (n2 - n3) / (n2 + n3);
        let beta = 2.0 * std::f64::consts::PI * n2 * d / wl;
        let e = (Complex64::i() * 2.0 * beta).exp();
        ((r12 + r23 * e) / (1.0 + r12 * r23 * e)).norm_sqr()
    }

    #[test]
    fn silver_film_on_mgo_matches_airy() {
        let eag = c(-21.0, 0.4);
        let s = OpticalStack::new(685.0, c(1.735 * 1.735, 0.0), vec![(eag, 100.0)], c(1.0, 0.0)).unwrap();
        let r = stack_reflection(&s, c(0.0, 0.0), Polarization::Te, Side::FromAbove);
        let oracle = airy(c(1.0, 0.0), eag.sqrt(), c(1.735, 0.0), 100.0, 685.0);
        assert!((r.norm_sqr() - oracle).abs() < 1e-3);
        assert!((r.norm_sqr() - oracle).abs() < 1e-12);
    }

    #[test]
    fn evanescent_stability() {
        let s = OpticalStack::new(
            685.0,
            c(-21.0, 0.4),
            vec![(c(5.8564, 0.0), 40.0), (c(-21.0, 1.2), 8.0), (c(3.0276, 0.0), 3.0)],
            c(1.0, 0.0),
        )
        .unwrap();
        for u in [5.0, 20.0, 50.0, 200.0] {
            for pol in [Polarization::Te, Polarization::Tm] {
                let r = stack_reflection(&s, c(u, 0.0), pol, Side::FromAbove);
                let t = stack_transmission(&s, c(u, 0.0), pol, Side::FromAbove);
                assert!(r.is_finite() && t.is_finite(), "u={u}");
            }
        }
    }

    #[test]
    fn lossless_energy_balance() {
        let s = OpticalStack::new(
            600.0,
            c(2.25, 0.0),
            vec![(c(4.0, 0.0), 120.0), (c(1.8, 0.0), 75.0), (c(-4.0, 0.0), 20.0)],
            c(1.0, 0.0),
        )
        .unwrap();
        for u in [0.0, 0.3, 0.9, 0.99] {
            for pol in [Polarization::Te, Polarization::Tm] {
                for side in [Side::FromBelow, Side::FromAbove] {
                    let (r, t) = stack_power_coefficients(&s, u, pol, side);
                    assert!((r + t - 1.0).abs() < 1e-10, "u={u} {pol:?} {side:?}: {r}+{t}");
                }
            }
        }
    }

    #[test]
    fn spp_pole_in_reflection() {
        let s = OpticalStack::new(685.0, c(-21.0, 0.4), vec![], c(1.0, 0.0)).unwrap();
        let em = c(-21.0, 0.4);
        let pole = (em / (em + 1.0)).sqrt();
        let far = stack_reflection(&s, c(1.2, 0.0), Polarization::Tm, Side::FromAbove).norm();
        let near = stack_reflection(&s, c(pole.re, 0.0), Polarization::Tm, Side::FromAbove).norm();
        assert!(near > 50.0 * far, "{near} vs {far}");
    }

    #[test]
    fn reversal_reciprocity() {
        let s = OpticalStack::new(
            685.0,
            c(2.3, 0.0),
            vec![(c(-21.0, 0.4), 30.0), (c(5.8564, 0.0), 40.0), (c(-21.0, 1.2), 8.0)],
            c(1.0, 0.0),
        )
        .unwrap();
        let rev = s.reversed();
        for u in [0.2, 1.05, 3.0] {
            for pol in [Polarization::Te, Polarization::Tm] {
                let a = stack_reflection(&s, c(u, 0.0), pol, Side::FromBelow);
                let b = stack_reflection(&rev, c(u, 0.0), pol, Side::FromAbove);
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn vertical_sheet_matches_proper_in_lower_right_quadrant() {
        for eps in [c(1.0, 0.0), c(2.3, 0.0), c(-21.0, 0.4)] {
            for u in [c(0.3, -0.2), c(1.7, -0.01), c(4.0, -0.5), c(0.9, 0.0), c(1.6, 0.0)] {
                let a = kz(eps, u, Sheet::Proper);
                let b = kz(eps, u, Sheet::Vertical(u.re));
                assert!((a - b).norm() < 1e-13, "eps={eps} u={u}");
            }
        }
    }

    #[test]
    fn canonical_hash_is_stable_and_sensitive() {
        let a = OpticalStack::new(685.0, c(1.0, 0.0), vec![(c(2.0, 0.0), 10.0)], c(1.0, 0.0)).unwrap();
        let b = OpticalStack::new(685.0, c(1.0, 0.0), vec![(c(2.0, 0.0), 10.5)], c(1.0, 0.0)).unwrap();
        assert_eq!(a.hash_hex(), a.clone().hash_hex());
        assert_ne!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex().len(), 64);
    }
}
