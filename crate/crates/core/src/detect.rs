//! Motor-failure identification from trends in body rates and tilt angles.

use std::collections::VecDeque;
use std::fmt;

use crate::dynamics::MotorMask;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Trend {
    Up,
    Down,
    #[default]
    None,
}

impl Trend {
    pub const ALL: [Trend; 3] = [Trend::Up, Trend::Down, Trend::None];

    fn symbol(self) -> char {
        match self {
            Trend::Up => '+',
            Trend::Down => '-',
            Trend::None => '.',
        }
    }
}

/// Trend of each channel in the order (p, q, r, phi, theta).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SpikeSignature(pub [Trend; 5]);

impl SpikeSignature {
    pub const CHANNELS: [&'static str; 5] = ["p", "q", "r", "phi", "theta"];

    pub fn is_quiet(&self) -> bool {
        self.0.iter().all(|t| *t == Trend::None)
    }
}

impl fmt::Display for SpikeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.0.iter().map(|t| t.symbol()).collect();
        f.write_str(&s)
    }
}

/// Expected trend per channel; `None` entries are unconstrained.
type Row = (&'static [usize], [Option<Trend>; 5]);

const U: Option<Trend> = Some(Trend::Up);
const D: Option<Trend> = Some(Trend::Down);
const X: Option<Trend> = None;

/// Failure signatures, channels (p, q, r, phi, theta).
pub const SIGNATURES: [Row; 10] = [
    (&[1], [X, U, D, X, U]),
    (&[2], [D, X, U, D, X]),
    (&[3], [X, D, D, X, D]),
    (&[4], [U, X, U, U, X]),
    (&[1, 3], [X, X, D, X, X]),
    (&[2, 4], [X, X, U, X, X]),
    (&[2, 3, 4], [X, D, U, X, D]),
    (&[1, 3, 4], [U, X, D, U, X]),
    (&[1, 2, 4], [X, U, U, X, U]),
    (&[1, 2, 3], [D, X, D, D, X]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Every channel quiet.
    NoFailure,
    Failed(MotorMask),
    /// No row matched, or the most specific matches tie.
    Unknown { candidates: Vec<MotorMask> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureVerdict<T> {
    pub verdict: Verdict,
    /// Number of constrained channels of the winning row.
    pub confidence: usize,
    pub detection_time: Option<T>,
}

impl<T> FailureVerdict<T> {
    pub fn failed(&self) -> Option<MotorMask> {
        match &self.verdict {
            Verdict::Failed(m) => Some(*m),
            _ => None,
        }
    }
}

fn mask(motors: &[usize]) -> MotorMask {
    MotorMask::from_motors(motors).expect("table motors are valid")
}

/// Match a signature against the failure table. The row with the most
/// constrained channels among the matching rows wins.
pub fn classify<T>(sig: &SpikeSignature) -> FailureVerdict<T> {
    if sig.is_quiet() {
        return FailureVerdict { verdict: Verdict::NoFailure, confidence: 0, detection_time: None };
    }
    let mut best = 0;
    let mut winners: Vec<MotorMask> = Vec::new();
    for (motors, pattern) in SIGNATURES.iter() {
        let ok = pattern.iter().zip(sig.0.iter()).all(|(want, got)| want.is_none_or(|w| w == *got));
        if !ok {
            continue;
        }
        let n = pattern.iter().filter(|w| w.is_some()).count();
        if n > best {
            best = n;
            winners.clear();
        }
        if n == best {
            winners.push(mask(motors));
        }
    }
    let verdict = match winners.len() {
        1 => Verdict::Failed(winners[0]),
        _ => Verdict::Unknown { candidates: winners },
    };
    let confidence = if matches!(verdict, Verdict::Failed(_)) { best } else { 0 };
    FailureVerdict { verdict, confidence, detection_time: None }
}

/// One observation of the monitored channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample<T> {
    pub t: T,
    pub p: T,
    pub q: T,
    pub r: T,
    pub phi: T,
    pub theta: T,
}

impl<T: Real> ChannelSample<T> {
    fn values(&self) -> [T; 5] {
        [self.p, self.q, self.r, self.phi, self.theta]
    }
}

/// Minimum change over the window that counts as a spike, per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds<T>(pub [T; 5]);

impl<T: Real> Default for Thresholds<T> {
    fn default() -> Self {
        let (w, a) = (T::one(), T::lit(0.05));
        Thresholds([w, w, T::lit(0.1), a, a])
    }
}

/// Signature of the change between the first and last sample of `window`.
pub fn extract_signature<T: Real>(
    window: &[ChannelSample<T>],
    span: usize,
    thresholds: &Thresholds<T>,
) -> Result<SpikeSignature> {
    if window.len() < span.max(2) {
        return Err(Error::InsufficientData { needed: span.max(2), got: window.len() });
    }
    let (a, b) = (window[0].values(), window[window.len() - 1].values());
    let mut sig = [Trend::None; 5];
    for i in 0..5 {
        let d = b[i] - a[i];
        let th = thresholds.0[i];
        sig[i] = if d > th {
            Trend::Up
        } else if d < -th {
            Trend::Down
        } else {
            Trend::None
        };
    }
    Ok(SpikeSignature(sig))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig<T> {
    /// Samples per window.
    pub window: usize,
    pub thresholds: Thresholds<T>,
    /// Samples to keep collecting channel trips after the first one before
    /// a verdict is issued.
    pub hold: usize,
}

impl<T: Real> Default for DetectorConfig<T> {
    fn default() -> Self {
        Self { window: 45, thresholds: Thresholds::default(), hold: 45 }
    }
}

/// Sliding-window detector. Channels latch the first direction they trip
/// in; a verdict is formed `hold` samples after the first trip.
#[derive(Debug, Clone)]
pub struct Detector<T: Real> {
    pub cfg: DetectorConfig<T>,
    buf: VecDeque<ChannelSample<T>>,
    latched: SpikeSignature,
    since_trip: Option<usize>,
    verdict: Option<FailureVerdict<T>>,
}

impl<T: Real> Detector<T> {
    pub fn new(cfg: DetectorConfig<T>) -> Result<Self> {
        if cfg.window < 2 {
            return Err(Error::Domain("detector window needs at least two samples".into()));
        }
        if cfg.thresholds.0.iter().any(|t| !(*t > T::zero())) {
            return Err(Error::Domain("spike thresholds must be positive".into()));
        }
        Ok(Self { cfg, buf: VecDeque::with_capacity(cfg.window), latched: SpikeSignature::default(), since_trip: None, verdict: None })
    }

    pub fn verdict(&self) -> Option<&FailureVerdict<T>> {
        self.verdict.as_ref()
    }

    pub fn latched(&self) -> SpikeSignature {
        self.latched
    }

    pub fn reset(&mut self) {
        self.buf.clear();
        self.latched = SpikeSignature::default();
        self.since_trip = None;
        self.verdict = None;
    }

    /// Feed one sample. Returns the verdict on the step it is first formed.
    pub fn push(&mut self, s: ChannelSample<T>) -> Option<FailureVerdict<T>> {
        if self.verdict.is_some() {
            return None;
        }
        if self.buf.len() == self.cfg.window {
            self.buf.pop_front();
        }
        self.buf.push_back(s);
        if self.buf.len() < self.cfg.window {
            return None;
        }
        let window: Vec<_> = self.buf.iter().copied().collect();
        let sig = extract_signature(&window, self.cfg.window, &self.cfg.thresholds).ok()?;
        for (held, now) in self.latched.0.iter_mut().zip(sig.0) {
            if *held == Trend::None {
                *held = now;
            }
        }
        if self.since_trip.is_none() && !self.latched.is_quiet() {
            self.since_trip = Some(0);
        }
        let n = self.since_trip.as_mut()?;
        *n += 1;
        if *n < self.cfg.hold {
            return None;
        }
        let mut v = classify(&self.latched);
        v.detection_time = Some(s.t);
        if matches!(v.verdict, Verdict::Failed(_)) {
            self.verdict = Some(v.clone());
        } else {
            // Give up on this episode and watch for a cleaner one.
            self.latched = SpikeSignature::default();
            self.since_trip = None;
        }
        Some(v)
    }
}
