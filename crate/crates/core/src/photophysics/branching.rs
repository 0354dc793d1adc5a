use super::PhotoError;
use crate::design::SetupConstants;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiEstimate {
    pub xi: f64,
    pub sigma: f64,
    /// Emitted free-space rate inferred from the dipole spot, counts/s.
    pub dipole_term: f64,
    /// Launched plasmon rate inferred from the ring, counts/s.
    pub ring_term: f64,
}

fn check_constants(c: &SetupConstants) -> Result<(), PhotoError> {
    c.validate().map_err(|e| PhotoError::InvalidInput(e.to_string()))
}

fn xi_from_terms(d: f64, r: f64) -> Result<f64, PhotoError> {
    if !(d + r > 0.0) {
        return Err(PhotoError::ZeroSignal);
    }
    Ok(r / (d + r))
}

/// Branching ratio from spot and ring count rates, without uncertainty.
pub fn branching_from_rates(dipole_rate: f64, ring_rate: f64, constants: &SetupConstants) -> Result<f64, PhotoError> {
    check_constants(constants)?;
    if !(dipole_rate >= 0.0 && ring_rate >= 0.0) {
        return Err(PhotoError::InvalidInput("rates must be non-negative".into()));
    }
    xi_from_terms(dipole_rate / constants.eta_col_dipole, ring_rate / constants.ring_efficiency())
}

/// Plasmon branching ratio from the integrated spot and ring counts. Counts
/// are first converted to rates; Poisson errors on both counts are
/// propagated.
pub fn extract_branching(
    dipole_counts: f64,
    dipole_exposure_s: f64,
    ring_counts: f64,
    ring_exposure_s: f64,
    constants: &SetupConstants,
) -> Result<XiEstimate, PhotoError> {
    check_constants(constants)?;
    if !(dipole_exposure_s > 0.0 && ring_exposure_s > 0.0) {
        return Err(PhotoError::InvalidInput("exposures must be positive".into()));
    }
    if !(dipole_counts >= 0.0 && ring_counts >= 0.0) {
        return Err(PhotoError::InvalidInput("counts must be non-negative".into()));
    }
    let d = dipole_counts / dipole_exposure_s / constants.eta_col_dipole;
    let r = ring_counts / ring_exposure_s / constants.ring_efficiency();
    let xi = xi_from_terms(d, r)?;
    // relative Poisson error of each term is 1 / sqrt(counts)
    let s2 = (d + r).powi(2);
    let sd = if dipole_counts > 0.0 { d / dipole_counts.sqrt() } else { 0.0 };
    let sr = if ring_counts > 0.0 { r / ring_counts.sqrt() } else { 0.0 };
    let sigma = ((r * sd).powi(2) + (d * sr).powi(2)).sqrt() / s2;
    Ok(XiEstimate {
        xi,
        sigma,
        dipole_term: d,
        ring_term: r,
    })
}

/// Plasmons launched per excitation, `xi (1 - beta_nf)`.
pub fn total_efficiency(xi: f64, beta_nfloss: f64) -> Result<f64, PhotoError> {
    for (name, v) in [("xi", xi), ("beta_nfloss", beta_nfloss)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(PhotoError::InvalidInput(format!("{name} = {v} is not in [0, 1]")));
        }
    }
    Ok(xi * (1.0 - beta_nfloss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfLossEstimate {
    pub beta_nfloss: f64,
    /// The raw expression fell outside `[0, 1]`.
    pub clamped: bool,
}

/// Near-field loss from the shortfall of the saturated count rate against
/// the rate the setup would detect if every decay produced a photon:
/// `1 - saturated / (setup_efficiency collection intrinsic_rate)`.
pub fn estimate_nfloss(
    saturated_rate: f64,
    setup_efficiency: f64,
    collection: f64,
    intrinsic_rate: f64,
) -> Result<NfLossEstimate, PhotoError> {
    if !(intrinsic_rate > 0.0) {
        return Err(PhotoError::InvalidInput("intrinsic rate must be positive".into()));
    }
    if !(saturated_rate >= 0.0) {
        return Err(PhotoError::InvalidInput("saturated rate must be non-negative".into()));
    }
    for (name, v) in [("setup_efficiency", setup_efficiency), ("collection", collection)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(PhotoError::InvalidInput(format!("{name} = {v} is not in (0, 1]")));
        }
    }
    let raw = 1.0 - saturated_rate / (setup_efficiency * collection * intrinsic_rate);
    let value = raw.clamp(0.0, 1.0);
    Ok(NfLossEstimate {
        beta_nfloss: value,
        clamped: value != raw,
    })
}

/// Decay rate (1/s) of a channel with the given lifetime, assuming every
/// decay is radiative.
pub fn intrinsic_rate_from_lifetime(tau_ps: f64) -> Result<f64, PhotoError> {
    if !(tau_ps > 0.0) {
        return Err(PhotoError::InvalidInput(format!("lifetime {tau_ps} ps")));
    }
    Ok(1e12 / tau_ps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchingResult {
    pub xi: f64,
    pub xi_err: f64,
    pub beta_nfloss: f64,
    pub beta_nfloss_err: f64,
    pub beta_spp: f64,
    pub beta_spp_err: f64,
}

/// Combine a branching ratio and a near-field loss into `beta_spp`.
pub fn combine_branching(xi: &XiEstimate, beta_nfloss: f64, beta_nfloss_err: f64) -> Result<BranchingResult, PhotoError> {
    let beta_spp = total_efficiency(xi.xi, beta_nfloss)?;
    let err = ((1.0 - beta_nfloss) * xi.sigma).hypot(xi.xi * beta_nfloss_err);
    Ok(BranchingResult {
        xi: xi.xi,
        xi_err: xi.sigma,
        beta_nfloss,
        beta_nfloss_err,
        beta_spp,
        beta_spp_err: err,
    })
}
