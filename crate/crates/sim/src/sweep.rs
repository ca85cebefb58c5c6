//! Stability-limit sweeps: initial conditions, loop rates, output caps and
//! the model-mismatch case.
//!
//! Each sweep brackets the boundary with a parallel coarse scan, then
//! narrows the bracket by parallel k-section until it is below the
//! requested resolution. Runs inside one round are independent; rounds are
//! sequential.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{SimError, SimResult};
use crate::runner::{run, SimOutcome};
use crate::scenario::{EquilibriumSource, RefPoint, ScenarioSpec};

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "FAILSAFE_QUAD_THREADS";

/// Probes evaluated per refinement round.
const SECTIONS: usize = 8;

fn pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            b = b.num_threads(n);
        }
    }
    b.build().expect("thread pool")
}

fn stable_all(specs: &[ScenarioSpec]) -> SimResult<bool> {
    for s in specs {
        if !run(s)?.stable() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Evaluate `probe` at each point in parallel.
fn evaluate<F>(points: &[f64], probe: &F) -> SimResult<Vec<bool>>
where
    F: Fn(f64) -> SimResult<bool> + Sync,
{
    pool().install(|| points.par_iter().map(|&v| probe(v)).collect())
}

/// Narrow a `(good, bad)` bracket until `|bad - good| <= tol`. `snap`
/// rounds interior probes (e.g. to whole hertz).
fn refine<F>(mut good: f64, mut bad: f64, tol: f64, snap: &dyn Fn(f64) -> f64, probe: &F, runs: &mut usize) -> SimResult<(f64, f64)>
where
    F: Fn(f64) -> SimResult<bool> + Sync,
{
    while (bad - good).abs() > tol {
        let mut pts: Vec<f64> = (1..=SECTIONS).map(|k| snap(good + (bad - good) * k as f64 / (SECTIONS + 1) as f64)).collect();
        pts.dedup();
        pts.retain(|p| (p - good) * (bad - good) > 0.0 && (bad - p) * (bad - good) > 0.0);
        if pts.is_empty() {
            break;
        }
        let ok = evaluate(&pts, probe)?;
        *runs += pts.len();
        // Nearest bad probe to `good`; the good bracket end moves up to
        // the probe before it.
        let first_bad = ok.iter().position(|s| !s).unwrap_or(pts.len());
        if first_bad > 0 {
            good = pts[first_bad - 1];
        }
        if first_bad < pts.len() {
            bad = pts[first_bad];
        }
    }
    Ok((good, bad))
}

/// A stability boundary, or `Unbounded` when every probe was stable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit {
    Finite(f64),
    Unbounded,
}

impl Limit {
    pub fn magnitude(&self) -> f64 {
        match self {
            Limit::Finite(v) => v.abs(),
            Limit::Unbounded => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Limit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Limit::Finite(v) => write!(f, "{v:.9}"),
            Limit::Unbounded => write!(f, "unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepResult {
    pub limit: Limit,
    /// Bracket after refinement: last stable and first unstable value.
    pub bracket: Option<(f64, f64)>,
    pub runs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcVariable {
    Phi,
    Theta,
    P,
    Q,
    R,
    Zd,
    X,
    Y,
    Z,
    Xd,
    Yd,
}

impl IcVariable {
    pub const ALL: [IcVariable; 11] = [
        IcVariable::Phi,
        IcVariable::Theta,
        IcVariable::P,
        IcVariable::Q,
        IcVariable::R,
        IcVariable::Zd,
        IcVariable::X,
        IcVariable::Y,
        IcVariable::Z,
        IcVariable::Xd,
        IcVariable::Yd,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "phi" | "roll" => IcVariable::Phi,
            "theta" | "pitch" => IcVariable::Theta,
            "p" => IcVariable::P,
            "q" => IcVariable::Q,
            "r" => IcVariable::R,
            "zd" | "zdot" => IcVariable::Zd,
            "x" => IcVariable::X,
            "y" => IcVariable::Y,
            "z" => IcVariable::Z,
            "xd" | "xdot" => IcVariable::Xd,
            "yd" | "ydot" => IcVariable::Yd,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            IcVariable::Phi => "phi",
            IcVariable::Theta => "theta",
            IcVariable::P => "p",
            IcVariable::Q => "q",
            IcVariable::R => "r",
            IcVariable::Zd => "zd",
            IcVariable::X => "x",
            IcVariable::Y => "y",
            IcVariable::Z => "z",
            IcVariable::Xd => "xd",
            IcVariable::Yd => "yd",
        }
    }

    pub fn is_angle(self) -> bool {
        matches!(self, IcVariable::Phi | IcVariable::Theta)
    }

    /// Bisection resolution in SI units: 0.1 degree for angles, 0.1 for
    /// everything else.
    pub fn resolution(self) -> f64 {
        if self.is_angle() {
            0.1 * PI / 180.0
        } else {
            0.1
        }
    }

    /// Coarse probe magnitudes; stability at the last one means unbounded.
    fn probes(self) -> Vec<f64> {
        match self {
            IcVariable::Phi | IcVariable::Theta => {
                [2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 45.0, 60.0, 90.0, 120.0, 150.0, 180.0].map(|d| d * PI / 180.0).to_vec()
            }
            IcVariable::P | IcVariable::Q | IcVariable::R => {
                vec![1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 50.0, 100.0, 200.0, 300.0]
            }
            IcVariable::Zd | IcVariable::Xd | IcVariable::Yd => vec![0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            IcVariable::X | IcVariable::Y | IcVariable::Z => vec![1.0, 10.0, 100.0],
        }
    }

    fn apply(self, spec: &mut ScenarioSpec, delta: f64) {
        let s = &mut spec.initial.state;
        match self {
            IcVariable::Phi => s.phi += delta,
            IcVariable::Theta => s.theta += delta,
            IcVariable::P => s.p += delta,
            IcVariable::Q => s.q += delta,
            IcVariable::R => s.r += delta,
            IcVariable::Zd => s.zd += delta,
            IcVariable::X => s.x += delta,
            IcVariable::Y => s.y += delta,
            IcVariable::Z => s.z += delta,
            IcVariable::Xd => s.xd += delta,
            IcVariable::Yd => s.yd += delta,
        }
    }
}

fn quiet(spec: &ScenarioSpec) -> ScenarioSpec {
    let mut s = spec.clone();
    s.record = false;
    s
}

fn check_baseline(spec: &ScenarioSpec) -> SimResult<SimOutcome> {
    let o = run(&quiet(spec))?;
    if !o.stable() {
        return Err(SimError::InvalidBaseline(match o.crash_time {
            Some(t) => format!("scenario '{}' crashes at {t:.3} s", spec.name),
            None => format!("scenario '{}' does not settle", spec.name),
        }));
    }
    Ok(o)
}

/// Largest stable perturbation of `var` in the direction of `sign`
/// (positive or negative), relative to the base initial state.
pub fn sweep_initial_conditions(base: &ScenarioSpec, var: IcVariable, positive: bool) -> SimResult<SweepResult> {
    check_baseline(base)?;
    let sign = if positive { 1.0 } else { -1.0 };
    let probe = |mag: f64| -> SimResult<bool> {
        let mut s = quiet(base);
        var.apply(&mut s, sign * mag);
        Ok(run(&s)?.stable())
    };
    let mags = var.probes();
    let ok = evaluate(&mags, &probe)?;
    let mut runs = mags.len() + 1;
    let Some(first_bad) = ok.iter().position(|s| !s) else {
        return Ok(SweepResult { limit: Limit::Unbounded, bracket: None, runs });
    };
    let good = if first_bad == 0 { 0.0 } else { mags[first_bad - 1] };
    let (good, bad) = refine(good, mags[first_bad], var.resolution(), &|v| v, &probe, &mut runs)?;
    Ok(SweepResult { limit: Limit::Finite(sign * good), bracket: Some((sign * good, sign * bad)), runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopKind {
    Inner,
    Outer,
}

impl LoopKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inner" => Some(LoopKind::Inner),
            "outer" => Some(LoopKind::Outer),
            _ => None,
        }
    }
}

/// Scenario with the chosen loop running at `hz`. The outer loop never
/// runs faster than the inner one.
pub fn with_rate(base: &ScenarioSpec, lp: LoopKind, hz: f64) -> ScenarioSpec {
    let mut s = quiet(base);
    match lp {
        LoopKind::Inner => {
            s.controller.f_inner = hz;
            s.controller.f_outer = s.controller.f_outer.min(hz);
        }
        LoopKind::Outer => s.controller.f_outer = hz.min(s.controller.f_inner),
    }
    s
}

/// Lowest whole-hertz rate of `lp` that keeps `base` stable.
pub fn sweep_frequency(base: &ScenarioSpec, lp: LoopKind) -> SimResult<SweepResult> {
    check_baseline(base)?;
    let top = match lp {
        LoopKind::Inner => base.controller.f_inner,
        LoopKind::Outer => base.controller.f_outer,
    }
    .floor();
    let probe = |hz: f64| -> SimResult<bool> { Ok(run(&with_rate(base, lp, hz))?.stable()) };
    let mut rates: Vec<f64> = [0.75, 0.5, 0.35, 0.25, 0.18, 0.12, 0.08, 0.05, 0.03, 0.02, 0.01]
        .iter()
        .map(|f| (top * f).round().max(1.0))
        .collect();
    rates.push(1.0);
    rates.dedup();
    rates.retain(|r| *r < top);
    let ok = evaluate(&rates, &probe)?;
    let mut runs = rates.len() + 1;
    let Some(first_bad) = ok.iter().position(|s| !s) else {
        return Ok(SweepResult { limit: Limit::Finite(1.0), bracket: None, runs });
    };
    let good = if first_bad == 0 { top } else { rates[first_bad - 1] };
    let (good, bad) = refine(good, rates[first_bad], 1.0, &|v: f64| v.round(), &probe, &mut runs)?;
    Ok(SweepResult { limit: Limit::Finite(good), bracket: Some((good, bad)), runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapChannel {
    /// Horizontal desired-acceleration cap (m/s^2).
    Horizontal,
    /// Vertical desired-acceleration cap (m/s^2).
    Vertical,
    /// Two-rotor altitude PID output cap (N), applied symmetrically.
    Altitude,
}

impl CapChannel {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "horizontal" | "xy" => Some(CapChannel::Horizontal),
            "vertical" | "z" => Some(CapChannel::Vertical),
            "altitude" | "pid" => Some(CapChannel::Altitude),
            _ => None,
        }
    }

    fn apply(self, s: &mut ScenarioSpec, cap: f64) {
        let g = &mut s.controller.gains;
        match self {
            CapChannel::Horizontal => {
                g.accel_cap.x = cap;
                g.accel_cap.y = cap;
            }
            CapChannel::Vertical => g.accel_cap.z = cap,
            CapChannel::Altitude => {
                g.altitude.out_max = cap;
                g.altitude.out_min = -cap;
            }
        }
    }

    /// Reference steps the cap must survive, starting from hover at the
    /// base reference.
    fn probe_specs(self, base: &ScenarioSpec, cap: f64) -> Vec<ScenarioSpec> {
        let start = base.references[0];
        let steps: Vec<[f64; 3]> = match self {
            CapChannel::Horizontal => vec![[CAP_STEP, CAP_STEP, 0.0], [-CAP_STEP, CAP_STEP, 0.0]],
            CapChannel::Vertical | CapChannel::Altitude => vec![[0.0, 0.0, CAP_STEP], [0.0, 0.0, -CAP_STEP]],
        };
        steps
            .into_iter()
            .map(|d| {
                let mut s = quiet(base);
                s.references = vec![
                    RefPoint { t: 0.0, ..start },
                    RefPoint::new(1.0, start.pos.x + d[0], start.pos.y + d[1], start.pos.z + d[2]),
                ];
                s.duration = s.duration.max(CAP_RUN);
                self.apply(&mut s, cap);
                s
            })
            .collect()
    }
}

/// Reference step used by the cap probes (m).
pub const CAP_STEP: f64 = 20.0;
/// Minimum run length for cap probes (s).
pub const CAP_RUN: f64 = 60.0;
const CAP_PROBES: [f64; 10] = [0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 40.0, 80.0];

/// Largest cap on `channel` for which every reference-step probe stays
/// stable. Caps below it only slow the response; caps above it let the
/// outer loop demand more than the attitude loop can deliver.
pub fn sweep_output_caps(base: &ScenarioSpec, channel: CapChannel) -> SimResult<SweepResult> {
    check_baseline(base)?;
    let probe = |cap: f64| -> SimResult<bool> { stable_all(&channel.probe_specs(base, cap)) };
    let ok = evaluate(&CAP_PROBES, &probe)?;
    let mut runs = 2 * CAP_PROBES.len() + 1;
    // The stable region starts at the first stable probe.
    let Some(first_ok) = ok.iter().position(|s| *s) else {
        return Err(SimError::InvalidBaseline(format!("no cap in {CAP_PROBES:?} keeps the steps stable")));
    };
    let Some(off) = ok[first_ok..].iter().position(|s| !s) else {
        return Ok(SweepResult { limit: Limit::Unbounded, bracket: None, runs });
    };
    let first_bad = first_ok + off;
    let mut counted = 0;
    let (good, bad) = refine(CAP_PROBES[first_bad - 1], CAP_PROBES[first_bad], 0.1, &|v| v, &probe, &mut counted)?;
    runs += 2 * counted;
    Ok(SweepResult { limit: Limit::Finite(good), bracket: Some((good, bad)), runs })
}

/// Outcome of a model-mismatch run.
#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub outcome: SimOutcome,
    pub stable: bool,
}

/// Fly the scenario's plant with gains designed on its model, with the
/// equilibrium taken from `source`.
pub fn robustness_case(base: &ScenarioSpec, source: EquilibriumSource) -> SimResult<RobustnessReport> {
    let mut s = quiet(base);
    s.controller.equilibrium = source;
    let outcome = run(&s)?;
    Ok(RobustnessReport { stable: outcome.stable(), outcome })
}

/// One point of a drag-coefficient sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPoint {
    pub gamma: f64,
    /// Solver yaw rate, axis z component and orbit radius.
    pub rbar: f64,
    pub nz: f64,
    pub rps: f64,
    /// Simulated tail means; `None` when the run was not stable.
    pub sim_r: Option<f64>,
    pub sim_mean_thrust: Option<f64>,
}

/// Fly `base` once per drag coefficient (plant and model both changed).
pub fn gamma_sweep(base: &ScenarioSpec, gammas: &[f64]) -> SimResult<Vec<GammaPoint>> {
    pool().install(|| {
        gammas
            .par_iter()
            .map(|&gamma| {
                let mut s = quiet(base);
                s.plant.gamma = gamma;
                s.model.gamma = gamma;
                let o = run(&s)?;
                let eq = o
                    .equilibrium
                    .ok_or_else(|| SimError::InvalidBaseline("gamma sweep needs a fail-safe scenario".into()))?;
                let alive: Vec<f64> = o.tail.mean_thrust.iter().copied().filter(|f| *f > 0.0).collect();
                let stable = o.stable();
                Ok(GammaPoint {
                    gamma,
                    rbar: eq.r(),
                    nz: eq.nz(),
                    rps: eq.orbit_radius,
                    sim_r: stable.then_some(o.tail.mean_r),
                    sim_mean_thrust: stable.then(|| alive.iter().sum::<f64>() / alive.len().max(1) as f64),
                })
            })
            .collect()
    })
}
