use super::{PhotoError, TimeTagStream};
use crate::lm::{minimize, LmOptions, Objective};

/// Normalised two-detector coincidence histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Curve {
    /// Bin centres, `t1 - t0` in ps.
    pub delay_ps: Vec<f64>,
    pub g2: Vec<f64>,
    /// Raw coincidences per bin.
    pub counts: Vec<f64>,
    pub bin_width_ps: f64,
    /// Coincidences per bin expected for uncorrelated streams; zero when the
    /// curve was built from normalised values only.
    pub expected_per_bin: f64,
    pub warnings: Vec<String>,
}

impl G2Curve {
    /// Curve from already normalised values, without count statistics.
    pub fn from_values(delay_ps: Vec<f64>, g2: Vec<f64>) -> Result<Self, PhotoError> {
        if delay_ps.len() != g2.len() || delay_ps.len() < 3 {
            return Err(PhotoError::InvalidInput("delay and g2 columns must match and hold at least 3 rows".into()));
        }
        let w = delay_ps[1] - delay_ps[0];
        if !(w > 0.0) {
            return Err(PhotoError::InvalidInput("delays must increase".into()));
        }
        Ok(Self {
            counts: g2.clone(),
            delay_ps,
            g2,
            bin_width_ps: w,
            expected_per_bin: 0.0,
            warnings: Vec::new(),
        })
    }

    fn sigmas(&self) -> Option<Vec<f64>> {
        (self.expected_per_bin > 0.0).then(|| {
            self.counts
                .iter()
                .map(|c| c.max(1.0).sqrt() / self.expected_per_bin)
                .collect()
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("delay_ps,g2,counts\n");
        for ((d, g), c) in self.delay_ps.iter().zip(&self.g2).zip(&self.counts) {
            s.push_str(&format!("{d},{g},{c}\n"));
        }
        s
    }
}

/// Cross-correlation of channel 1 against channel 0 over `|tau| <= window`,
/// normalised by `rate0 rate1 bin_width duration`.
pub fn correlate(stream: &TimeTagStream, bin_width_ps: f64, window_ps: f64) -> Result<G2Curve, PhotoError> {
    if !(bin_width_ps > 0.0) || !(window_ps >= bin_width_ps) {
        return Err(PhotoError::BadWindow {
            window_ps,
            bin_ps: bin_width_ps,
        });
    }
    let a = stream.channel_times(0);
    let b = stream.channel_times(1);
    if a.is_empty() {
        return Err(PhotoError::EmptyChannel(0));
    }
    if b.is_empty() {
        return Err(PhotoError::EmptyChannel(1));
    }
    let half = (window_ps / bin_width_ps).floor() as i64;
    let nbins = (2 * half + 1) as usize;
    let reach = (half as f64 + 0.5) * bin_width_ps;
    let mut counts = vec![0.0; nbins];
    let mut lo = 0usize;
    for &t0 in &a {
        while lo < b.len() && ((b[lo] - t0) as f64) < -reach {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() {
            let dt = (b[j] - t0) as f64;
            if dt >= reach {
                break;
            }
            let k = (dt / bin_width_ps + 0.5).floor() as i64 + half;
            if (0..nbins as i64).contains(&k) {
                counts[k as usize] += 1.0;
            }
            j += 1;
        }
    }
    let duration = stream.duration_ps().max(1) as f64;
    let expected = a.len() as f64 * b.len() as f64 * bin_width_ps / duration;
    let delay_ps: Vec<f64> = (0..nbins).map(|k| (k as i64 - half) as f64 * bin_width_ps).collect();
    let g2: Vec<f64> = counts.iter().map(|c| c / expected).collect();
    let mut warnings = Vec::new();
    let mut sorted = g2.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let zero = g2[half as usize];
    if median > 0.0 && zero > 20.0 * median && zero * expected > 100.0 {
        warnings.push(format!(
            "zero-delay bin is {:.0}x the median: channels look perfectly correlated",
            zero / median
        ));
    }
    Ok(G2Curve {
        delay_ps,
        g2,
        counts,
        bin_width_ps,
        expected_per_bin: expected,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum G2CwModel {
    /// `g2 = 1 - rho^2 exp(-|tau| / tau_a)`.
    TwoLevel,
    /// `g2 = 1 - rho^2 [(1 + a) exp(-|tau| / tau_a) - a exp(-|tau| / tau_b)]`.
    ThreeLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct G2CwFit {
    pub model: G2CwModel,
    pub g2_zero: f64,
    pub g2_zero_err: f64,
    /// Squared signal fraction `rho^2`; `g2(0) = 1 - rho^2`.
    pub rho2: f64,
    pub bunching: f64,
    pub tau_a_ps: f64,
    pub tau_a_err_ps: f64,
    pub tau_b_ps: f64,
    pub center_ps: f64,
    pub reduced_chi2: f64,
}

/// CW antibunching model evaluated at a delay.
pub fn g2_cw_model(tau_ps: f64, rho2: f64, bunching: f64, tau_a_ps: f64, tau_b_ps: f64) -> f64 {
    let t = tau_ps.abs();
    let b = if bunching != 0.0 {
        bunching * (-t / tau_b_ps).exp()
    } else {
        0.0
    };
    1.0 - rho2 * ((1.0 + bunching) * (-t / tau_a_ps).exp() - b)
}

/// Weighted least-squares fit of the CW antibunching dip. The signal
/// fraction `rho` accounts for uncorrelated background, so that
/// `g2(0) = 1 - rho^2` is not pinned at zero.
pub fn fit_g2_cw(curve: &G2Curve, model: G2CwModel) -> Result<G2CwFit, PhotoError> {
    let n = curve.g2.len();
    if n < 6 {
        return Err(PhotoError::InvalidInput("curve too short for a CW fit".into()));
    }
    let sig = curve.sigmas();
    if curve.g2.iter().all(|g| (g - 1.0).abs() < 1e-12) {
        return Err(PhotoError::NoEmitterSignature);
    }
    let weights: Vec<f64> = match &sig {
        Some(s) => s.iter().map(|s| 1.0 / (s * s)).collect(),
        None => vec![1.0; n],
    };
    let w = curve.bin_width_ps;
    let imin = (0..n).min_by(|&i, &j| curve.g2[i].total_cmp(&curve.g2[j])).unwrap_or(0);
    let depth = (1.0 - curve.g2[imin]).clamp(0.05, 1.0);
    let target = 1.0 - depth / std::f64::consts::E;
    let mut k = imin;
    while k + 1 < n && curve.g2[k] < target {
        k += 1;
    }
    let tau_a0 = (curve.delay_ps[k] - curve.delay_ps[imin]).max(w);
    let x = &curve.delay_ps;
    let three = model == G2CwModel::ThreeLevel;
    let eval = |p: &[f64]| -> Option<Vec<f64>> {
        let (rho2, ta, c) = (p[0], p[1].exp(), p[2]);
        let (a, tb) = if three { (p[3] * p[3], p[4].exp()) } else { (0.0, 1.0) };
        Some(x.iter().map(|&t| g2_cw_model(t - c, rho2, a, ta, tb)).collect())
    };
    let mut p0 = vec![depth, tau_a0.ln(), x[imin]];
    if three {
        p0.extend([0.1f64.sqrt(), (20.0 * tau_a0).ln()]);
    }
    let r = minimize(eval, &curve.g2, Objective::LeastSquares(&weights), &p0, LmOptions::default())
        .ok_or_else(|| PhotoError::NotConverged("model not evaluable at the initial guess".into()))?;
    if !r.converged {
        return Err(PhotoError::NotConverged(format!("{} iterations", r.iterations)));
    }
    let dof = (n - p0.len()).max(1) as f64;
    let reduced = r.cost / dof;
    // without count statistics the residual scatter sets the error scale
    let scale = if sig.is_some() { 1.0 } else { reduced };
    let var = |i: usize| r.covariance.as_ref().map_or(f64::NAN, |c| c[(i, i)] * scale);
    let rho2 = r.params[0];
    let rho2_err = var(0).max(0.0).sqrt();
    if sig.is_some() && !(rho2 > 3.0 * rho2_err) {
        return Err(PhotoError::NoEmitterSignature);
    }
    let tau_a = r.params[1].exp();
    Ok(G2CwFit {
        model,
        g2_zero: 1.0 - rho2,
        g2_zero_err: rho2_err,
        rho2,
        bunching: if three { r.params[3] * r.params[3] } else { 0.0 },
        tau_a_ps: tau_a,
        tau_a_err_ps: tau_a * var(1).max(0.0).sqrt(),
        tau_b_ps: if three { r.params[4].exp() } else { f64::NAN },
        center_ps: r.params[2],
        reduced_chi2: reduced,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulsedG2 {
    pub g2_zero: f64,
    pub sigma: f64,
    pub zero_peak_counts: f64,
    pub side_peak_mean: f64,
    pub side_peaks: usize,
}

/// Zero-delay peak area over the mean side-peak area, each integrated over
/// one repetition period centred on the peak.
pub fn g2_pulsed(curve: &G2Curve, rep_period_ps: f64) -> Result<PulsedG2, PhotoError> {
    let t = rep_period_ps;
    if !(t > 0.0) {
        return Err(PhotoError::InvalidInput(format!("repetition period {t} ps")));
    }
    let w = curve.bin_width_ps;
    let first = curve.delay_ps[0] - 0.5 * w;
    let last = curve.delay_ps[curve.delay_ps.len() - 1] + 0.5 * w;
    if last - first < 5.0 * t * (1.0 - 1e-9) {
        return Err(PhotoError::InvalidInput(format!(
            "curve spans {:.0} ps, fewer than 5 repetition periods",
            last - first
        )));
    }

    let peak_area = |k: i64| {
        let lo = (k as f64 - 0.5) * t;
        let hi = (k as f64 + 0.5) * t;
        curve
            .delay_ps
            .iter()
            .zip(&curve.counts)
            .filter(|(d, _)| **d >= lo && **d < hi)
            .map(|(_, c)| c)
            .sum::<f64>()
    };
    let complete = |k: i64| (k as f64 - 0.5) * t >= first - 1e-9 && (k as f64 + 0.5) * t <= last + 1e-9;

    // peak spacing check, only meaningful when there is visible structure
    let mut sorted = curve.counts.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let side = curve
        .delay_ps
        .iter()
        .zip(&curve.counts)
        .filter(|(d, _)| **d >= 0.5 * t && **d < 1.5 * t)
        .max_by(|a, b| a.1.total_cmp(b.1));
    if let Some((&pos, &peak)) = side {
        if peak > median + 5.0 * (median + 1.0).sqrt() && (pos - t).abs() > 0.25 * t {
            return Err(PhotoError::PeriodMismatch {
                expected_ps: t,
                found_ps: pos,
            });
        }
    }

    let kmax = ((last - first) / t).ceil() as i64 + 1;
    let sides: Vec<f64> = (-kmax..=kmax)
        .filter(|&k| k != 0 && complete(k))
        .map(peak_area)
        .collect();
    if sides.len() < 2 || !complete(0) {
        return Err(PhotoError::InvalidInput("not enough complete side peaks".into()));
    }
    let zero = peak_area(0);
    let total_side: f64 = sides.iter().sum();
    let mean = total_side / sides.len() as f64;
    if !(mean > 0.0) {
        return Err(PhotoError::InvalidInput("side peaks are empty".into()));
    }
    let g = zero / mean;
    let sigma = if zero > 0.0 {
        g * (1.0 / zero + 1.0 / total_side).sqrt()
    } else {
        1.0 / mean
    };
    Ok(PulsedG2 {
        g2_zero: g,
        sigma,
        zero_peak_counts: zero,
        side_peak_mean: mean,
        side_peaks: sides.len(),
    })
}

/// Uncorrelated background fraction `r = 1 - sqrt(1 - g2(0))`.
pub fn background_fraction(g2_zero: f64) -> Result<f64, PhotoError> {
    if !(0.0..=1.0).contains(&g2_zero) {
        return Err(PhotoError::OutOfDomain(g2_zero));
    }
    Ok(1.0 - (1.0 - g2_zero).sqrt())
}
