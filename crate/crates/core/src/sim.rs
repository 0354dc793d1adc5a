//! Monte Carlo time-tag generator for a single emitter observed by two
//! detectors behind a beam splitter.
//!
//! Every run is driven by one seeded ChaCha stream, so `(models, config)`
//! fully determine the output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::photophysics::{Excitation, PhotoError, TagEvent, TimeTagStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Stream(#[from] PhotoError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelScheme {
    TwoLevel,
    /// After a decay the emitter is parked, without emitting, in a dark
    /// state with the given probability.
    Shelving { probability: f64, shelf_lifetime_ps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    Cw { pump_rate_per_s: f64 },
    Pulsed { excitation_probability: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmitterModel {
    pub scheme: LevelScheme,
    /// `(lifetime ps, weight)`; one component is drawn per excitation.
    pub lifetimes: Vec<(f64, f64)>,
    pub drive: Drive,
}

impl EmitterModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.lifetimes.is_empty() {
            return Err(SimError::Invalid("no lifetime components".into()));
        }
        if self.lifetimes.iter().any(|(t, w)| !(*t > 0.0 && *w >= 0.0)) {
            return Err(SimError::Invalid("lifetimes must be positive and weights non-negative".into()));
        }
        let total: f64 = self.lifetimes.iter().map(|l| l.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SimError::Invalid(format!("lifetime weights sum to {total}, not 1")));
        }
        match self.drive {
            Drive::Cw { pump_rate_per_s } if !(pump_rate_per_s > 0.0) => {
                return Err(SimError::Invalid(format!("pump rate {pump_rate_per_s}/s")));
            }
            Drive::Pulsed { excitation_probability: p } if !(0.0..=1.0).contains(&p) => {
                return Err(SimError::Invalid(format!("excitation probability {p}")));
            }
            _ => {}
        }
        if let LevelScheme::Shelving {
            probability,
            shelf_lifetime_ps,
        } = self.scheme
        {
            if !(0.0..=1.0).contains(&probability) || !(shelf_lifetime_ps > 0.0) {
                return Err(SimError::Invalid("shelving probability or lifetime out of range".into()));
            }
        }
        Ok(())
    }

    fn mean_lifetime_ps(&self) -> f64 {
        self.lifetimes.iter().map(|(t, w)| t * w).sum()
    }

    fn shelving(&self) -> (f64, f64) {
        match self.scheme {
            LevelScheme::TwoLevel => (0.0, 0.0),
            LevelScheme::Shelving {
                probability,
                shelf_lifetime_ps,
            } => (probability, shelf_lifetime_ps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub jitter_ps: f64,
    /// Probability that a photon is routed to channel 0.
    pub splitter: f64,
    /// Events closer than this to the previous accepted event on the same
    /// channel are dropped.
    pub dead_time_ps: Option<f64>,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: 0.35,
            jitter_ps: 30.0,
            splitter: 0.5,
            dead_time_ps: None,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.efficiency) || !(0.0..=1.0).contains(&self.splitter) {
            return Err(SimError::Invalid("efficiency and splitter must be in [0, 1]".into()));
        }
        if !(self.jitter_ps >= 0.0) {
            return Err(SimError::Invalid(format!("jitter {} ps", self.jitter_ps)));
        }
        if self.dead_time_ps.is_some_and(|d| !(d >= 0.0)) {
            return Err(SimError::Invalid("dead time must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub duration_s: f64,
    pub rep_period_ps: Option<f64>,
    /// Total uncorrelated background, split between the channels like the
    /// signal.
    pub background_rate_per_s: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Configuration covering exactly `pulses` repetition periods.
    pub fn pulses(pulses: u64, rep_period_ps: f64, seed: u64) -> Self {
        Self {
            duration_s: pulses as f64 * rep_period_ps * 1e-12,
            rep_period_ps: Some(rep_period_ps),
            background_rate_per_s: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SimError::Invalid(format!("duration {} s", self.duration_s)));
        }
        if !(self.background_rate_per_s >= 0.0) {
            return Err(SimError::Invalid("background rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub stream: TimeTagStream,
    pub emitted_photons: u64,
    pub detected_signal: u64,
    pub background_events: u64,
    pub warnings: Vec<String>,
}

struct Detection<'a> {
    det: &'a DetectorModel,
    jitter: Option<Normal<f64>>,
    duration_ps: f64,
    events: Vec<(f64, u8)>,
}

impl<'a> Detection<'a> {
    fn new(det: &'a DetectorModel, duration_ps: f64) -> Result<Self, SimError> {
        let jitter = if det.jitter_ps > 0.0 {
            Some(Normal::new(0.0, det.jitter_ps).map_err(|e| SimError::Invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            det,
            jitter,
            duration_ps,
            events: Vec::new(),
        })
    }

    /// Route, thin and jitter one emitted photon. Returns whether it was kept.
    fn photon(&mut self, rng: &mut ChaCha8Rng, t: f64) -> bool {
        let channel = if rng.random::<f64>() < self.det.splitter { 0 } else { 1 };
        if rng.random::<f64>() >= self.det.efficiency {
            return false;
        }
        let dt = self.jitter.map_or(0.0, |j| j.sample(rng));
        let ts = t + dt;
        if ts >= 0.0 && ts < self.duration_ps {
            self.events.push((ts, channel));
            true
        } else {
            false
        }
    }

    fn background(&mut self, rng: &mut ChaCha8Rng, rate_per_s: f64) -> Result<u64, SimError> {
        let mut added = 0;
        for (channel, share) in [(0u8, self.det.splitter), (1u8, 1.0 - self.det.splitter)] {
            let rate_ps = rate_per_s * share * 1e-12;
            if rate_ps <= 0.0 {
                continue;
            }
            let gap = Exp::new(rate_ps).map_err(|e| SimError::Invalid(e.to_string()))?;
            let mut t = gap.sample(rng);
            while t < self.duration_ps {
                self.events.push((t, channel));
                added += 1;
                t += gap.sample(rng);
            }
        }
        Ok(added)
    }

    fn finish(mut self, excitation: Excitation) -> Result<TimeTagStream, SimError> {
        let mut tagged: Vec<TagEvent> = self
            .events
            .drain(..)
            .map(|(t, channel)| TagEvent {
                timestamp_ps: t.round() as i64,
                channel,
            })
            .collect();
        tagged.sort_unstable();
        if let Some(dead) = self.det.dead_time_ps {
            let mut last = [i64::MIN; 2];
            tagged.retain(|e| {
                let c = e.channel as usize;
                if last[c] != i64::MIN && ((e.timestamp_ps - last[c]) as f64) < dead {
                    return false;
                }
                last[c] = e.timestamp_ps;
                true
            });
        }
        let duration = self.duration_ps.ceil() as i64;
        let duration = tagged.last().map_or(duration, |e| duration.max(e.timestamp_ps));
        Ok(TimeTagStream::new(tagged, duration, excitation)?)
    }
}

fn pick_lifetime(rng: &mut ChaCha8Rng, lifetimes: &[(f64, f64)]) -> f64 {
    let mut u = rng.random::<f64>();
    for &(tau, w) in lifetimes {
        if u < w {
            return tau;
        }
        u -= w;
    }
    lifetimes[lifetimes.len() - 1].0
}

fn exp_sample(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    // inverse transform on (0, 1]
    -mean * (1.0 - rng.random::<f64>()).ln()
}

/// Continuous pumping: exact stochastic simulation of excitation, decay and
/// optional shelving.
pub fn simulate_cw(emitter: &EmitterModel, detector: &DetectorModel, config: &SimConfig) -> Result<Simulation, SimError> {
    emitter.validate()?;
    detector.validate()?;
    config.validate()?;
    let Drive::Cw { pump_rate_per_s } = emitter.drive else {
        return Err(SimError::Invalid("CW simulation needs a CW pump rate".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let duration = config.duration_s * 1e12;
    let mut det = Detection::new(detector, duration)?;
    let pump_mean = 1e12 / pump_rate_per_s;
    let (p_shelf, shelf_tau) = emitter.shelving();
    let (mut emitted, mut detected) = (0u64, 0u64);
    let mut t = 0.0;
    loop {
        t += exp_sample(&mut rng, pump_mean);
        if t >= duration {
            break;
        }
        let tau = pick_lifetime(&mut rng, &emitter.lifetimes);
        t += exp_sample(&mut rng, tau);
        if p_shelf > 0.0 && rng.random::<f64>() < p_shelf {
            t += exp_sample(&mut rng, shelf_tau);
            continue;
        }
        emitted += 1;
        detected += det.photon(&mut rng, t) as u64;
    }
    let background = det.background(&mut rng, config.background_rate_per_s)?;
    Ok(Simulation {
        stream: det.finish(Excitation::Cw)?,
        emitted_photons: emitted,
        detected_signal: detected,
        background_events: background,
        warnings: Vec::new(),
    })
}

/// Pulsed excitation: at most one signal photon per period, delays drawn
/// from the lifetime mixture and wrapped into the period.
pub fn simulate_pulsed(emitter: &EmitterModel, detector: &DetectorModel, config: &SimConfig) -> Result<Simulation, SimError> {
    emitter.validate()?;
    let Drive::Pulsed { excitation_probability } = emitter.drive else {
        return Err(SimError::Invalid("pulsed simulation needs an excitation probability".into()));
    };
    pulsed(Some(emitter), excitation_probability, detector, config)
}

/// Instrument response: every pulse yields a prompt photon, so the delay
/// histogram is the jitter profile alone.
pub fn simulate_irf(detector: &DetectorModel, config: &SimConfig) -> Result<Simulation, SimError> {
    pulsed(None, 1.0, detector, config)
}

fn pulsed(
    emitter: Option<&EmitterModel>,
    probability: f64,
    detector: &DetectorModel,
    config: &SimConfig,
) -> Result<Simulation, SimError> {
    detector.validate()?;
    config.validate()?;
    let period = config
        .rep_period_ps
        .filter(|p| *p > 0.0)
        .ok_or_else(|| SimError::Invalid("pulsed simulation needs a positive repetition period".into()))?;
    let mut warnings = Vec::new();
    if let Some(e) = emitter {
        let slow = e.lifetimes.iter().map(|l| l.0).fold(0.0, f64::max);
        if period < 10.0 * slow {
            warnings.push(format!(
                "repetition period {period} ps is shorter than 10x the slowest lifetime {slow} ps; delays wrap"
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let duration = config.duration_s * 1e12;
    let pulses = (duration / period).floor() as u64;
    let mut det = Detection::new(detector, duration)?;
    let (p_shelf, shelf_tau) = emitter.map_or((0.0, 0.0), |e| e.shelving());
    let (mut emitted, mut detected) = (0u64, 0u64);
    let mut dark_until = f64::NEG_INFINITY;
    for k in 0..pulses {
        let t0 = k as f64 * period;
        if t0 < dark_until || rng.random::<f64>() >= probability {
            continue;
        }
        let delay = match emitter {
            Some(e) => {
                let tau = pick_lifetime(&mut rng, &e.lifetimes);
                exp_sample(&mut rng, tau) % period
            }
            None => 0.0,
        };
        if p_shelf > 0.0 && rng.random::<f64>() < p_shelf {
            dark_until = t0 + delay + exp_sample(&mut rng, shelf_tau);
            continue;
        }
        emitted += 1;
        detected += det.photon(&mut rng, t0 + delay) as u64;
    }
    let background = det.background(&mut rng, config.background_rate_per_s)?;
    Ok(Simulation {
        stream: det.finish(Excitation::Pulsed { period_ps: period })?,
        emitted_photons: emitted,
        detected_signal: detected,
        background_events: background,
        warnings,
    })
}

/// Expected detected signal rate (counts/s) in the absence of dead time.
pub fn expected_signal_rate(emitter: &EmitterModel, detector: &DetectorModel, config: &SimConfig) -> Result<f64, SimError> {
    emitter.validate()?;
    let (p_shelf, shelf_tau) = emitter.shelving();
    match emitter.drive {
        Drive::Cw { pump_rate_per_s } => {
            let cycle_ps = 1e12 / pump_rate_per_s + emitter.mean_lifetime_ps() + p_shelf * shelf_tau;
            Ok(detector.efficiency * (1.0 - p_shelf) * 1e12 / cycle_ps)
        }
        Drive::Pulsed { excitation_probability } => {
            let period = config
                .rep_period_ps
                .ok_or_else(|| SimError::Invalid("pulsed drive without a repetition period".into()))?;
            Ok(detector.efficiency * excitation_probability * (1.0 - p_shelf) * 1e12 / period)
        }
    }
}

/// Background rate that makes up `fraction` of all detected counts.
pub fn background_rate_for_fraction(fraction: f64, signal_rate: f64) -> Result<f64, SimError> {
    if !(0.0..1.0).contains(&fraction) || !(signal_rate >= 0.0) {
        return Err(SimError::Invalid(format!("background fraction {fraction}")));
    }
    Ok(fraction / (1.0 - fraction) * signal_rate)
}
