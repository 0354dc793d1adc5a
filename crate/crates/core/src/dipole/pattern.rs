//! Angular distribution of the power leaving through the upper half-space.

use super::{Direction, DipoleError, EmitterConfig, Kernel, Orientation};
use crate::quadrature::simpson_uniform;
use crate::stratified::OpticalStack;

/// Default number of polar-angle samples between 0 and 90 degrees.
pub const PATTERN_SAMPLES: usize = 1801;

#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldPattern {
    /// Polar angles from the upward normal, radians, uniformly spaced on
    /// `[0, pi/2]`.
    pub theta: Vec<f64>,
    /// Power per unit solid angle in vacuum-rate units (azimuthal average for
    /// horizontal dipoles).
    pub intensity: Vec<f64>,
    pub azimuthally_symmetric: bool,
    /// Refractive index of the upper half-space.
    pub n_upper: f64,
}

impl FarFieldPattern {
    /// Power integrated over the whole upper hemisphere.
    pub fn hemisphere_power(&self) -> f64 {
        self.power_within(std::f64::consts::FRAC_PI_2)
    }

    /// Power inside the cone of half-angle `theta_max`.
    pub fn power_within(&self, theta_max: f64) -> f64 {
        let n = self.theta.len();
        if n < 2 || theta_max <= 0.0 {
            return 0.0;
        }
        let step = self.theta[1] - self.theta[0];
        let f: Vec<f64> = self
            .theta
            .iter()
            .zip(&self.intensity)
            .map(|(t, u)| u * std::f64::consts::TAU * t.sin())
            .collect();
        let full = ((theta_max / step).floor() as usize).min(n - 1);
        let mut total = simpson_uniform(&f[..=full], step);
        if full < n - 1 {
            // partial last interval, linear in the integrand
            let x = theta_max - self.theta[full];
            let slope = (f[full + 1] - f[full]) / step;
            total += x * (f[full] + 0.5 * slope * x);
        }
        total
    }
}

/// Angular power density radiated into the upper half-space,
/// `U(theta) = p_up(n sin theta) n cos theta / (2 pi sin theta)`.
pub fn far_field_pattern(stack: &OpticalStack, emitter: &EmitterConfig) -> Result<FarFieldPattern, DipoleError> {
    far_field_pattern_with(stack, emitter, PATTERN_SAMPLES)
}

pub fn far_field_pattern_with(
    stack: &OpticalStack,
    emitter: &EmitterConfig,
    samples: usize,
) -> Result<FarFieldPattern, DipoleError> {
    let eps_t = stack.upper();
    if eps_t.im != 0.0 || eps_t.re <= 0.0 {
        return Err(DipoleError::LossyUpperHalfSpace(eps_t));
    }
    let k = Kernel::new(stack, emitter)?;
    let n_t = eps_t.re.sqrt();
    let samples = samples.max(3) | 1;
    let step = std::f64::consts::FRAC_PI_2 / (samples - 1) as f64;
    let mut theta = Vec::with_capacity(samples);
    let mut intensity = Vec::with_capacity(samples);
    for j in 0..samples {
        let t = step * j as f64;
        // both ends are 0/0 forms; take the limits from just inside
        let te = t.clamp(1e-7, std::f64::consts::FRAC_PI_2 - 1e-5);
        let u = n_t * te.sin();
        let p = k.far_field_density(u, Direction::Up);
        let value = (p * n_t * te.cos() / (std::f64::consts::TAU * te.sin())).max(0.0);
        theta.push(t);
        intensity.push(value);
    }
    Ok(FarFieldPattern {
        theta,
        intensity,
        azimuthally_symmetric: emitter.orientation == Orientation::Vertical,
        n_upper: n_t,
    })
}

/// Fraction of the hemisphere power collected by an objective of the given
/// numerical aperture in the upper half-space.
pub fn collection_efficiency(pattern: &FarFieldPattern, numerical_aperture: f64) -> Result<f64, DipoleError> {
    if !(numerical_aperture >= 0.0 && numerical_aperture <= pattern.n_upper) {
        return Err(DipoleError::NumericalAperture {
            na: numerical_aperture,
            n_upper: pattern.n_upper,
        });
    }
    let total = pattern.hemisphere_power();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let theta_max = (numerical_aperture / pattern.n_upper).min(1.0).asin();
    Ok((pattern.power_within(theta_max) / total).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn free_space_is_sin_squared() {
        let s = OpticalStack::new(685.0, c(1.0, 0.0), vec![(c(1.0, 0.0), 60.0)], c(1.0, 0.0)).unwrap();
        let p = far_field_pattern(&s, &EmitterConfig::vertical(0, 30.0, 685.0)).unwrap();
        for (t, u) in p.theta.iter().zip(&p.intensity) {
            let exact = 3.0 / (8.0 * std::f64::consts::PI) * t.sin().powi(2);
            assert!((u - exact).abs() < 1e-6, "theta={t}: {u} vs {exact}");
        }
        assert!((p.hemisphere_power() - 0.5).abs() < 1e-6);
        assert_eq!(collection_efficiency(&p, 0.0).unwrap(), 0.0);
        assert!((collection_efficiency(&p, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(collection_efficiency(&p, 1.2).is_err());
    }

    #[test]
    fn collection_is_monotone() {
        let s = OpticalStack::new(685.0, c(-21.0, 0.4), vec![(c(1.0, 0.0), 300.0)], c(1.0, 0.0)).unwrap();
        let p = far_field_pattern(&s, &EmitterConfig::vertical(0, 150.0, 685.0)).unwrap();
        let mut last = 0.0;
        for i in 0..=100 {
            let v = collection_efficiency(&p, i as f64 / 100.0).unwrap();
            assert!(v >= last - 1e-15);
            last = v;
        }
    }
}
