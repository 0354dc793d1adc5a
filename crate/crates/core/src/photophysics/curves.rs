use super::{background_fraction, PhotoError};
use crate::lm::{minimize, LmOptions, Objective};

fn distinct(xs: &[f64]) -> usize {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaturationFit {
    /// Saturated emitter rate, counts/s.
    pub i_inf: f64,
    pub i_inf_err: f64,
    pub p_sat_mw: f64,
    pub p_sat_err_mw: f64,
    /// Linear background, counts/s per mW.
    pub background_slope: f64,
    pub background_fraction: f64,
    /// Power at which the background fraction applies (largest power).
    pub reference_power_mw: f64,
    pub reduced_chi2: f64,
    /// The data never leave the linear regime, so `P_sat` is unconstrained.
    pub unidentifiable: bool,
}

/// Fit `I(P) = I_inf P / (P + P_sat) + c P`. The background slope is fixed
/// before the fit: at the largest power a fraction `background_fraction(g2(0))`
/// of the measured rate is background. Residuals are weighted for
/// multiplicative noise.
pub fn fit_saturation(powers_mw: &[f64], rates: &[f64], g2_zero: f64) -> Result<SaturationFit, PhotoError> {
    if powers_mw.len() != rates.len() {
        return Err(PhotoError::InvalidInput("power and rate columns differ in length".into()));
    }
    if powers_mw.iter().any(|p| !(p.is_finite() && *p > 0.0)) || rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(PhotoError::InvalidInput("powers and rates must be positive".into()));
    }
    if distinct(powers_mw) < 4 {
        return Err(PhotoError::InvalidInput("need at least 4 distinct powers".into()));
    }
    let r_bg = background_fraction(g2_zero)?;
    let p_ref = powers_mw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let at_ref: Vec<f64> = powers_mw
        .iter()
        .zip(rates)
        .filter(|(p, _)| **p == p_ref)
        .map(|(_, r)| *r)
        .collect();
    let m_ref = at_ref.iter().sum::<f64>() / at_ref.len() as f64;
    let slope = r_bg * m_ref / p_ref;
    let y: Vec<f64> = powers_mw.iter().zip(rates).map(|(p, r)| r - slope * p).collect();
    if y.iter().any(|v| *v <= 0.0) {
        return Err(PhotoError::InvalidInput("background subtraction leaves non-positive rates".into()));
    }

    // double-reciprocal initial guess: 1/I = 1/I_inf + (P_sat/I_inf) / P
    let xs: Vec<f64> = powers_mw.iter().map(|p| 1.0 / p).collect();
    let ys: Vec<f64> = y.iter().map(|v| 1.0 / v).collect();
    let (b, a) = line_fit(&xs, &ys, &vec![1.0; xs.len()]);
    let ymax = y.iter().copied().fold(0.0, f64::max);
    let (i0, ps0) = if a > 0.0 && b > 0.0 {
        (1.0 / a, b / a)
    } else {
        let mut p = powers_mw.to_vec();
        p.sort_by(f64::total_cmp);
        (1.5 * ymax, p[p.len() / 2])
    };

    let model = |th: &[f64]| {
        let (i_inf, ps) = (th[0].exp(), th[1].exp());
        Some(powers_mw.iter().map(|p| i_inf * p / (p + ps)).collect::<Vec<f64>>())
    };
    let mut best: Option<crate::lm::LmResult> = None;
    for (fi, fp) in [(1.0, 1.0), (2.0, 3.0), (1.2, 0.3)] {
        let th0 = vec![(i0 * fi).max(ymax).ln(), (ps0 * fp).ln()];
        if let Some(r) = reweighted(&model, &y, th0) {
            if best.as_ref().is_none_or(|b| r.cost < b.cost) {
                best = Some(r);
            }
        }
    }
    let r = best.ok_or_else(|| PhotoError::NotConverged("saturation model not evaluable".into()))?;
    if !r.converged {
        return Err(PhotoError::NotConverged(format!("{} iterations", r.iterations)));
    }
    let dof = (y.len() - 2).max(1) as f64;
    let reduced = r.cost / dof;
    let var = |i: usize| r.covariance.as_ref().map_or(f64::NAN, |c| (c[(i, i)] * reduced).max(0.0));
    let i_inf = r.params[0].exp();
    let p_sat = r.params[1].exp();
    let i_inf_err = i_inf * var(0).sqrt();
    Ok(SaturationFit {
        i_inf,
        i_inf_err,
        p_sat_mw: p_sat,
        p_sat_err_mw: p_sat * var(1).sqrt(),
        background_slope: slope,
        background_fraction: r_bg,
        reference_power_mw: p_ref,
        reduced_chi2: reduced,
        unidentifiable: p_sat > 5.0 * p_ref || !(i_inf_err < i_inf),
    })
}

/// Least squares for multiplicative noise: weights `1 / model^2` are taken
/// from the previous iterate until the parameters settle.
fn reweighted<F>(model: &F, y: &[f64], mut th: Vec<f64>) -> Option<crate::lm::LmResult>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut last = None;
    for _ in 0..100 {
        let w: Vec<f64> = model(&th)?.iter().map(|m| 1.0 / (m * m)).collect();
        let r = minimize(model, y, Objective::LeastSquares(&w), &th, LmOptions::default())?;
        let change = r
            .params
            .iter()
            .zip(&th)
            .map(|(a, b)| ((a - b) / b.abs().max(1e-300)).abs())
            .fold(0.0, f64::max);
        th = r.params.clone();
        last = Some(r);
        if change < 1e-13 {
            break;
        }
    }
    last
}

/// Weighted least-squares line `y = a + b x`; returns `(b, a)`.
fn line_fit(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationFit {
    pub l_um: f64,
    pub l_err_um: f64,
    pub i0: f64,
    pub i0_err: f64,
    pub iterations: usize,
}

/// Fit `I = I0 exp(-x / L)` on linear intensities, reweighting by the
/// current model for multiplicative noise. A log-linear fit seeds the
/// iteration.
pub fn fit_propagation(distances_um: &[f64], intensities: &[f64]) -> Result<PropagationFit, PhotoError> {
    if distances_um.len() != intensities.len() {
        return Err(PhotoError::InvalidInput("distance and intensity columns differ in length".into()));
    }
    if intensities.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(PhotoError::InvalidInput("intensities must be positive".into()));
    }
    if distances_um.iter().any(|x| !x.is_finite()) || distinct(distances_um) < 3 {
        return Err(PhotoError::InvalidInput("need at least 3 distinct distances".into()));
    }
    let logs: Vec<f64> = intensities.iter().map(|v| v.ln()).collect();
    let (slope, icpt) = line_fit(distances_um, &logs, &vec![1.0; logs.len()]);
    if !(slope < 0.0) {
        return Err(PhotoError::Unbounded);
    }
    let model = |t: &[f64]| Some(distances_um.iter().map(|x| t[0] * (-t[1] * x).exp()).collect::<Vec<f64>>());
    let r = reweighted(&model, intensities, vec![icpt.exp(), -slope])
        .ok_or_else(|| PhotoError::NotConverged("propagation model not evaluable".into()))?;
    if !r.converged {
        return Err(PhotoError::NotConverged(format!("{} iterations", r.iterations)));
    }
    let th = &r.params;
    let (i0, k) = (th[0], th[1]);
    if !(k > 0.0) {
        return Err(PhotoError::Unbounded);
    }
    let dof = (intensities.len() - 2).max(1) as f64;
    let reduced = r.cost / dof;
    let var = |i: usize| r.covariance.as_ref().map_or(f64::NAN, |c| (c[(i, i)] * reduced).max(0.0));
    Ok(PropagationFit {
        l_um: 1.0 / k,
        l_err_um: var(1).sqrt() / (k * k),
        i0,
        i0_err: var(0).sqrt(),
        iterations: r.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_propagation() {
        let x = [2.0, 5.0, 8.0, 11.0];
        let y: Vec<f64> = x.iter().map(|x: &f64| 3.7 * (-x / 6.35).exp()).collect();
        let f = fit_propagation(&x, &y).unwrap();
        assert!(((f.l_um - 6.35) / 6.35).abs() < 1e-9, "{f:?}");
        assert!(((f.i0 - 3.7) / 3.7).abs() < 1e-9);
    }

    #[test]
    fn flat_intensities_are_unbounded() {
        assert_eq!(fit_propagation(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), Err(PhotoError::Unbounded));
        assert!(fit_propagation(&[1.0, 2.0, 3.0], &[5.0, 0.0, 5.0]).is_err());
        assert!(fit_propagation(&[1.0, 1.0, 3.0], &[5.0, 4.0, 3.0]).is_err());
    }

    #[test]
    fn noiseless_saturation() {
        let p = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0];
        let y: Vec<f64> = p.iter().map(|p| 44e6 * p / (p + 1.5)).collect();
        let f = fit_saturation(&p, &y, 0.0).unwrap();
        assert!(((f.i_inf - 44e6) / 44e6).abs() < 1e-6, "{f:?}");
        assert!(((f.p_sat_mw - 1.5) / 1.5).abs() < 1e-6);
        assert_eq!(f.background_slope, 0.0);
        assert!(!f.unidentifiable);
    }

    #[test]
    fn linear_regime_is_flagged() {
        let p = [0.001, 0.002, 0.003, 0.004];
        let y: Vec<f64> = p.iter().map(|p| 44e6 * p / (p + 1.5)).collect();
        assert!(fit_saturation(&p, &y, 0.0).unwrap().unidentifiable);
    }
}
