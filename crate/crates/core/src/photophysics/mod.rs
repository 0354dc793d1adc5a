//! Analysis of time-tagged photon data.
//!
//! Covers the two-detector correlation, antibunching fits for CW and pulsed
//! excitation, IRF-deconvolved lifetime fits, saturation and propagation
//! curves, and the conversion of ring and spot intensities into a plasmon
//! branching ratio.

mod branching;
mod correlation;
mod curves;
mod lifetime;

use std::fmt::Write as _;

use thiserror::Error;

pub use branching::{
    branching_from_rates, combine_branching, estimate_nfloss, extract_branching, intrinsic_rate_from_lifetime,
    total_efficiency, BranchingResult, NfLossEstimate, XiEstimate,
};
pub use correlation::{
    background_fraction, correlate, fit_g2_cw, g2_cw_model, g2_pulsed, G2CwFit, G2CwModel, G2Curve, PulsedG2,
};
pub use curves::{fit_propagation, fit_saturation, PropagationFit, SaturationFit};
pub use lifetime::{
    fit_lifetime, lifetime_shortening, summarize_lifetimes, LifetimeComponent, LifetimeFit, LifetimeOptions,
    LifetimeSummary, Shortening,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhotoError {
    #[error("channel {0} has no events")]
    EmptyChannel(u8),
    #[error("correlation window {window_ps} ps is smaller than the bin width {bin_ps} ps")]
    BadWindow { window_ps: f64, bin_ps: f64 },
    #[error("invalid time-tag stream: {0}")]
    InvalidStream(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fit did not converge: {0}")]
    NotConverged(String),
    #[error("curve is consistent with g2 = 1; no emitter signature")]
    NoEmitterSignature,
    #[error("repetition period {expected_ps} ps does not match the peak spacing {found_ps} ps")]
    PeriodMismatch { expected_ps: f64, found_ps: f64 },
    #[error("g2(0) = {0} outside [0, 1]; the background formula does not apply")]
    OutOfDomain(f64),
    #[error("intensities do not decay with distance; propagation length is unbounded")]
    Unbounded,
    #[error("no signal in either image")]
    ZeroSignal,
}

impl PhotoError {
    /// Data-quality outcomes that a caller may treat as a flagged result
    /// rather than a failure.
    pub fn is_degenerate(&self) -> bool {
        matches!(self, PhotoError::NoEmitterSignature | PhotoError::Unbounded)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Excitation {
    Cw,
    Pulsed { period_ps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TagEvent {
    pub timestamp_ps: i64,
    pub channel: u8,
}

/// Detection events of a two-detector setup, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTagStream {
    events: Vec<TagEvent>,
    duration_ps: i64,
    excitation: Excitation,
}

impl TimeTagStream {
    pub fn new(mut events: Vec<TagEvent>, duration_ps: i64, excitation: Excitation) -> Result<Self, PhotoError> {
        if let Some(e) = events.iter().find(|e| e.channel > 1) {
            return Err(PhotoError::InvalidStream(format!("channel {} is not 0 or 1", e.channel)));
        }
        if events.iter().any(|e| e.timestamp_ps < 0) {
            return Err(PhotoError::InvalidStream("negative timestamp".into()));
        }
        if let Excitation::Pulsed { period_ps } = excitation {
            if !(period_ps > 0.0) {
                return Err(PhotoError::InvalidStream(format!("repetition period {period_ps} ps")));
            }
        }
        events.sort_unstable();
        let last = events.last().map_or(0, |e| e.timestamp_ps);
        if duration_ps < last {
            return Err(PhotoError::InvalidStream(format!(
                "duration {duration_ps} ps is shorter than the last timestamp {last} ps"
            )));
        }
        Ok(Self {
            events,
            duration_ps,
            excitation,
        })
    }

    pub fn events(&self) -> &[TagEvent] {
        &self.events
    }

    pub fn duration_ps(&self) -> i64 {
        self.duration_ps
    }

    pub fn excitation(&self) -> Excitation {
        self.excitation
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn channel_times(&self, channel: u8) -> Vec<i64> {
        self.events
            .iter()
            .filter(|e| e.channel == channel)
            .map(|e| e.timestamp_ps)
            .collect()
    }

    pub fn count_rate(&self, channel: u8) -> f64 {
        let n = self.events.iter().filter(|e| e.channel == channel).count();
        n as f64 / (self.duration_ps.max(1) as f64 * 1e-12)
    }

    /// Histogram of arrival times modulo the repetition period, both
    /// channels merged. The bin count is `round(period / bin_width)`.
    pub fn delay_histogram(&self, bin_width_ps: f64) -> Result<Histogram, PhotoError> {
        let Excitation::Pulsed { period_ps } = self.excitation else {
            return Err(PhotoError::InvalidInput("delay histogram needs pulsed excitation".into()));
        };
        if !(bin_width_ps > 0.0 && bin_width_ps <= period_ps) {
            return Err(PhotoError::InvalidInput(format!("bin width {bin_width_ps} ps")));
        }
        let n = (period_ps / bin_width_ps).round() as usize;
        let mut counts = vec![0.0; n];
        for e in &self.events {
            let t = (e.timestamp_ps as f64).rem_euclid(period_ps);
            let k = ((t / bin_width_ps) as usize).min(n - 1);
            counts[k] += 1.0;
        }
        Histogram::new(0.0, bin_width_ps, counts)
    }

    /// CSV with metadata comment lines and a `channel,timestamp_ps` header.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(16 * self.events.len() + 96);
        let _ = writeln!(s, "# duration_ps={}", self.duration_ps);
        match self.excitation {
            Excitation::Cw => s.push_str("# excitation=cw\n"),
            Excitation::Pulsed { period_ps } => {
                let _ = writeln!(s, "# excitation=pulsed\n# rep_period_ps={period_ps}");
            }
        }
        s.push_str("channel,timestamp_ps\n");
        for e in &self.events {
            let _ = writeln!(s, "{},{}", e.channel, e.timestamp_ps);
        }
        s
    }

    /// Parse the format written by [`TimeTagStream::to_csv`]. Without
    /// metadata the stream is CW and ends at its last event.
    pub fn from_csv(text: &str) -> Result<Self, PhotoError> {
        let mut duration = None;
        let mut pulsed = false;
        let mut period = None;
        let mut events = Vec::new();
        let mut header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    let bad = |_: std::num::ParseIntError| PhotoError::InvalidStream(format!("line {}: bad value for {k}", lineno + 1));
                    match k.trim() {
                        "duration_ps" => duration = Some(v.trim().parse::<i64>().map_err(bad)?),
                        "excitation" => pulsed = v.trim().eq_ignore_ascii_case("pulsed"),
                        "rep_period_ps" => {
                            period = Some(v.trim().parse::<f64>().map_err(|_| {
                                PhotoError::InvalidStream(format!("line {}: bad value for {k}", lineno + 1))
                            })?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if !header {
                if line.replace(' ', "") != "channel,timestamp_ps" {
                    return Err(PhotoError::InvalidStream(format!("expected header 'channel,timestamp_ps', got '{line}'")));
                }
                header = true;
                continue;
            }
            let parsed = line.split_once(',').and_then(|(c, t)| {
                Some(TagEvent {
                    channel: c.trim().parse().ok()?,
                    timestamp_ps: t.trim().parse().ok()?,
                })
            });
            events.push(parsed.ok_or_else(|| PhotoError::InvalidStream(format!("line {}: '{line}'", lineno + 1)))?);
        }
        let excitation = match (pulsed, period) {
            (true, Some(p)) => Excitation::Pulsed { period_ps: p },
            (true, None) => return Err(PhotoError::InvalidStream("pulsed stream without rep_period_ps".into())),
            _ => Excitation::Cw,
        };
        let last = events.iter().map(|e| e.timestamp_ps).max().unwrap_or(0);
        Self::new(events, duration.unwrap_or(last), excitation)
    }
}

/// Uniformly binned counts; `start_ps` is the left edge of the first bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub start_ps: f64,
    pub bin_width_ps: f64,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn new(start_ps: f64, bin_width_ps: f64, counts: Vec<f64>) -> Result<Self, PhotoError> {
        if !(bin_width_ps > 0.0) {
            return Err(PhotoError::InvalidInput(format!("bin width {bin_width_ps} ps")));
        }
        if counts.is_empty() {
            return Err(PhotoError::InvalidInput("empty histogram".into()));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(PhotoError::InvalidInput("histogram counts must be finite and non-negative".into()));
        }
        Ok(Self {
            start_ps,
            bin_width_ps,
            counts,
        })
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|i| self.start_ps + (i as f64 + 0.5) * self.bin_width_ps)
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_center_ps,counts\n");
        for (c, n) in self.centers().iter().zip(&self.counts) {
            let _ = writeln!(s, "{c},{n}");
        }
        s
    }

    /// Parse `bin_center_ps,counts`; centres must be uniformly spaced.
    pub fn from_csv(text: &str) -> Result<Self, PhotoError> {
        let rows = parse_pairs(text, "bin_center_ps,counts")?;
        if rows.len() < 2 {
            return Err(PhotoError::InvalidInput("histogram needs at least two bins".into()));
        }
        let w = rows[1].0 - rows[0].0;
        if !(w > 0.0) || rows.windows(2).any(|p| ((p[1].0 - p[0].0) - w).abs() > 1e-6 * w.max(1.0)) {
            return Err(PhotoError::InvalidInput("bin centres are not uniformly increasing".into()));
        }
        Self::new(rows[0].0 - 0.5 * w, w, rows.into_iter().map(|r| r.1).collect())
    }
}

/// Two-column numeric CSV with the given header; `#` lines are comments.
pub fn parse_pairs(text: &str, header: &str) -> Result<Vec<(f64, f64)>, PhotoError> {
    let mut out = Vec::new();
    let mut seen_header = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line.replace(' ', "") != header {
                return Err(PhotoError::InvalidInput(format!("expected header '{header}', got '{line}'")));
            }
            seen_header = true;
            continue;
        }
        let row = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
            .ok_or_else(|| PhotoError::InvalidInput(format!("line {}: '{line}'", lineno + 1)))?;
        out.push(row);
    }
    if !seen_header {
        return Err(PhotoError::InvalidInput(format!("missing header '{header}'")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_csv_round_trip() {
        let ev = vec![
            TagEvent { channel: 1, timestamp_ps: 30 },
            TagEvent { channel: 0, timestamp_ps: 10 },
        ];
        let s = TimeTagStream::new(ev, 100, Excitation::Pulsed { period_ps: 12500.0 }).unwrap();
        assert_eq!(s.events()[0].timestamp_ps, 10);
        let back = TimeTagStream::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn stream_rejects_short_duration() {
        let ev = vec![TagEvent { channel: 0, timestamp_ps: 30 }];
        assert!(TimeTagStream::new(ev, 10, Excitation::Cw).is_err());
    }

    #[test]
    fn histogram_csv_round_trip() {
        let h = Histogram::new(0.0, 4.0, vec![1.0, 5.0, 2.0]).unwrap();
        let back = Histogram::from_csv(&h.to_csv()).unwrap();
        assert_eq!(back.counts, h.counts);
        assert!((back.start_ps - 0.0).abs() < 1e-12 && (back.bin_width_ps - 4.0).abs() < 1e-12);
    }
}
