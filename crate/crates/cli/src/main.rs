//! `failsafe-quad`: equilibrium, LQR gains, simulation, sweeps, detector
//! replay and identification fits from the command line.
//!
//! Exit codes: 0 success (or a stable run), 1 a run that crashed, 2 usage
//! or configuration errors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use failsafe_core::detect::{DetectorConfig, Verdict};
use failsafe_core::equilibrium::{solve_equilibrium, Equilibrium, FailureConfig};
use failsafe_core::lqr::{lqr_gain, LqrWeights};
use failsafe_core::sysid::{fit_drag, fit_thrust_curve, moi_from_pendulum, DragSample, PendulumTrial, PropSample};
use failsafe_core::{MotorMask, QuadParams};
use failsafe_sim::config::{self, full};
use failsafe_sim::log::{read_replay, replay_detector};
use failsafe_sim::scenario::{GainSet, ScenarioSpec};
use failsafe_sim::sweep::{self, CapChannel, IcVariable, LoopKind};
use failsafe_sim::run;

#[derive(Parser)]
#[command(
    name = "failsafe-quad",
    version,
    about = "Fail-safe quadcopter spin control: solver, simulator and sweeps",
    after_help = "Exit codes: 0 success or stable run, 1 crashed run, 2 usage or config error.\n\
                  FAILSAFE_QUAD_THREADS caps the number of parallel sweep runs."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the periodic spin equilibrium and print it as key=value lines and a CSV row.
    Equilibrium(EquilibriumArgs),
    /// Print the LQR gain matrix K (one row per surviving motor) as CSV.
    LqrGains(GainsArgs),
    /// Run a scenario; exit code 1 if the vehicle crashed.
    Simulate(SimulateArgs),
    /// Stability-limit sweeps over a scenario.
    Sweep(SweepArgs),
    /// Replay the failure detector over a logged flight (CSV).
    Detect(DetectArgs),
    /// Fit model constants from bench data and emit a parameter file.
    #[command(subcommand)]
    Sysid(SysidCommand),
}

#[derive(Args)]
struct ModelArgs {
    /// Parameter preset (low_inertia, high_inertia, low_inertia_three_rotor) or key=value parameter file.
    #[arg(long, default_value = "low_inertia")]
    params: String,
    /// Failed motors, comma separated: one motor or an opposing pair (e.g. 4 or 2,4).
    #[arg(long, value_delimiter = ',', required = true)]
    failed: Vec<usize>,
    /// Thrust ratio of the motor opposite a single failure.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Parameter override, e.g. --set gamma=2e-4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ModelArgs {
    fn params(&self) -> Result<QuadParams<f64>> {
        let mut p = config::load_params(&self.params)?;
        for o in &self.set {
            let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("override '{o}' must look like key=value"))?;
            let x: f64 = v.trim().parse().map_err(|_| anyhow!("config error at '{}': '{v}' is not a number", k.trim()))?;
            config::set_param(&mut p, k.trim(), x)?;
        }
        p.validate()?;
        Ok(p)
    }

    fn failure(&self) -> Result<FailureConfig<f64>> {
        let mask = MotorMask::from_motors(&self.failed)?;
        Ok(FailureConfig::new(mask, self.rho)?)
    }

    fn solve(&self) -> Result<(QuadParams<f64>, Equilibrium<f64>)> {
        let p = self.params()?;
        let eq = solve_equilibrium(&p, &self.failure()?)?;
        Ok((p, eq))
    }
}

#[derive(Args)]
struct EquilibriumArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct GainsArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Gain preset (two_rotor, three_rotor, mismatch) or gain file; defaults to the preset for the failure.
    #[arg(long, visible_alias = "weights")]
    gains: Option<String>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file or built-in name (two_rotor, three_rotor, two_rotor_hover, three_rotor_hover, mismatch, mismatch_model_equilibrium).
    #[arg(long)]
    scenario: String,
    /// Dotted scenario override, e.g. --set controller.f_inner=100 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Parameter preset or file used for both plant and model.
    #[arg(long)]
    params: Option<String>,
    /// Gain file applied on top of the scenario's gains.
    #[arg(long)]
    gains: Option<PathBuf>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioSpec> {
        let mut s = config::load_scenario(&self.scenario, &self.set)?;
        if let Some(p) = &self.params {
            let p = config::load_params(p)?;
            s.plant = p;
            s.model = p;
        }
        if let Some(g) = &self.gains {
            let text = std::fs::read_to_string(g).with_context(|| format!("reading {}", g.display()))?;
            config::apply_gains_file(&mut s.controller.gains, s.failure.motors, &text)?;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write the per-step log as CSV to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    /// Initial-condition limit of one state variable.
    Ic,
    /// Lowest stable loop rate.
    Frequency,
    /// Largest stable output cap.
    Cap,
    /// Drag-coefficient sweep (solver vs simulation).
    Gamma,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Positive,
    Negative,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Which sweep to run.
    #[arg(long, value_enum)]
    kind: SweepKind,
    /// State variable for --kind ic: phi, theta, p, q, r, zd, x, y, z, xd, yd.
    #[arg(long, default_value = "phi")]
    variable: String,
    /// Perturbation direction for --kind ic.
    #[arg(long, value_enum, default_value = "positive")]
    direction: Direction,
    /// Loop for --kind frequency: inner or outer.
    #[arg(long = "loop", default_value = "inner")]
    loop_kind: String,
    /// Channel for --kind cap: horizontal, vertical or altitude.
    #[arg(long, default_value = "horizontal")]
    channel: String,
    /// Drag coefficients for --kind gamma, comma separated.
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
}

#[derive(Args)]
struct DetectArgs {
    /// Flight log CSV with a t column and p, q, r, phi, theta (or est_*) columns.
    #[arg(long)]
    log: PathBuf,
    /// Samples per detection window.
    #[arg(long)]
    window: Option<usize>,
    /// Samples collected after the first trip before a verdict.
    #[arg(long)]
    hold: Option<usize>,
}

#[derive(Subcommand)]
enum SysidCommand {
    /// Fit kf and kt from propeller bench data (CSV columns omega, thrust, voltage, current).
    FitThrust(FitThrustArgs),
    /// Fit the yaw drag coefficient gamma (CSV columns total_torque, omega_ss).
    FitDrag(FitArgs),
    /// Body inertias from pendulum swings (CSV columns axis, pivot_distance, period; axis is x, y or z).
    Moi(FitArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Parameter preset or file supplying every value the fit does not touch.
    #[arg(long, default_value = "low_inertia")]
    params: String,
    /// Write the parameter file here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitThrustArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Motor winding resistance (ohm).
    #[arg(long, default_value_t = failsafe_core::sysid::DEFAULT_WINDING_RESISTANCE)]
    resistance: f64,
}

/// Failure of a run, as opposed to a usage or configuration error.
#[derive(Debug)]
struct Crashed;

impl std::fmt::Display for Crashed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("vehicle crashed")
    }
}

impl std::error::Error for Crashed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Crashed>() => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match cmd {
        Command::Equilibrium(a) => equilibrium(&a, &mut out),
        Command::LqrGains(a) => lqr_gains(&a, &mut out),
        Command::Simulate(a) => simulate(&a, &mut out),
        Command::Sweep(a) => sweep_cmd(&a, &mut out),
        Command::Detect(a) => detect(&a, &mut out),
        Command::Sysid(c) => sysid(&c, &mut out),
    }
}

fn equilibrium(a: &EquilibriumArgs, out: &mut impl Write) -> Result<()> {
    let (_, eq) = a.model.solve()?;
    let mut fields: Vec<(String, f64)> = Vec::new();
    for i in 0..4 {
        fields.push((format!("fbar{}", i + 1), eq.thrust[i]));
    }
    for i in 0..4 {
        fields.push((format!("wbar{}", i + 1), eq.speed[i]));
    }
    fields.extend([
        ("pbar".into(), eq.p()),
        ("qbar".into(), eq.q()),
        ("rbar".into(), eq.r()),
        ("nx".into(), eq.axis.x),
        ("ny".into(), eq.axis.y),
        ("nz".into(), eq.axis.z),
        ("Fbar".into(), eq.total_thrust),
        ("epsilon".into(), eq.epsilon),
        ("Rps".into(), eq.orbit_radius),
    ]);
    for (k, v) in &fields {
        writeln!(out, "{k} = {}", full(*v))?;
    }
    writeln!(out)?;
    writeln!(out, "{}", fields.iter().map(|f| f.0.as_str()).collect::<Vec<_>>().join(","))?;
    writeln!(out, "{}", fields.iter().map(|f| full(f.1)).collect::<Vec<_>>().join(","))?;
    Ok(())
}

fn lqr_gains(a: &GainsArgs, out: &mut impl Write) -> Result<()> {
    let (p, eq) = a.model.solve()?;
    let survivors = eq.survivors();
    let mut gains = if survivors.len() == 3 { GainSet::three_rotor() } else { GainSet::two_rotor() };
    if let Some(g) = &a.gains {
        match config::gain_preset(g) {
            Ok(set) => gains = set,
            Err(_) => {
                let text = std::fs::read_to_string(g).with_context(|| format!("gain preset or file '{g}'"))?;
                config::apply_gains_file(&mut gains, eq.failed, &text)?;
            }
        }
    }
    let w = LqrWeights::new(gains.q, gains.r.clone())?;
    let (_, sol) = lqr_gain(&p, &eq, &w)?;
    writeln!(out, "motor,k_p,k_q,k_nx,k_ny")?;
    for (i, m) in survivors.iter().enumerate() {
        let row: Vec<String> = (0..4).map(|j| full(sol.k[(i, j)])).collect();
        writeln!(out, "{m},{}", row.join(","))?;
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, out: &mut impl Write) -> Result<()> {
    let mut s = a.scenario.load()?;
    s.record = a.out.is_some();
    let o = run(&s)?;
    if let Some(path) = &a.out {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        o.log.write_csv(BufWriter::new(f))?;
    }
    let verdict = o.detection.as_ref().map(|v| verdict_text(&v.verdict)).unwrap_or_else(|| "none".into());
    let opt = |t: Option<f64>| t.map(full).unwrap_or_else(|| "none".into());
    writeln!(out, "scenario = {}", s.name)?;
    writeln!(out, "final_time = {}", full(o.final_time))?;
    writeln!(out, "crash_time = {}", opt(o.crash_time))?;
    writeln!(out, "stable = {}", o.stable())?;
    writeln!(out, "detection = {verdict}")?;
    writeln!(out, "swap_time = {}", opt(o.swap_time))?;
    let st = &o.final_state;
    for (k, v) in ["x", "y", "z"].iter().zip([st.x, st.y, st.z]) {
        writeln!(out, "final_{k} = {}", full(v))?;
    }
    writeln!(out, "tail_max_axis_err = {}", full(o.tail.max_axis_err))?;
    writeln!(out, "tail_max_alt_err = {}", full(o.tail.max_alt_err))?;
    writeln!(out, "tail_max_xy_err = {}", full(o.tail.max_xy_err))?;
    writeln!(out, "tail_mean_r = {}", full(o.tail.mean_r))?;
    if o.crashed() {
        out.flush()?;
        return Err(Crashed.into());
    }
    Ok(())
}

fn sweep_cmd(a: &SweepArgs, out: &mut impl Write) -> Result<()> {
    let s = a.scenario.load()?;
    let result = match a.kind {
        SweepKind::Ic => {
            let var = IcVariable::parse(&a.variable).ok_or_else(|| anyhow!("config error at 'variable': unknown '{}'", a.variable))?;
            sweep::sweep_initial_conditions(&s, var, matches!(a.direction, Direction::Positive))?
        }
        SweepKind::Frequency => {
            let lp = LoopKind::parse(&a.loop_kind).ok_or_else(|| anyhow!("config error at 'loop': '{}' is not inner or outer", a.loop_kind))?;
            sweep::sweep_frequency(&s, lp)?
        }
        SweepKind::Cap => {
            let ch = CapChannel::parse(&a.channel).ok_or_else(|| anyhow!("config error at 'channel': unknown '{}'", a.channel))?;
            sweep::sweep_output_caps(&s, ch)?
        }
        SweepKind::Gamma => {
            if a.gammas.is_empty() {
                bail!("config error at 'gammas': give at least one value");
            }
            let pts = sweep::gamma_sweep(&s, &a.gammas)?;
            writeln!(out, "gamma,rbar,nz,Rps,sim_r,sim_mean_thrust")?;
            let opt = |v: Option<f64>| v.map(full).unwrap_or_default();
            for p in pts {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    full(p.gamma),
                    full(p.rbar),
                    full(p.nz),
                    full(p.rps),
                    opt(p.sim_r),
                    opt(p.sim_mean_thrust)
                )?;
            }
            return Ok(());
        }
    };
    match result.limit {
        sweep::Limit::Finite(v) => writeln!(out, "limit = {}", full(v))?,
        sweep::Limit::Unbounded => writeln!(out, "limit = unbounded")?,
    }
    if let Some((good, bad)) = result.bracket {
        writeln!(out, "last_stable = {}\nfirst_unstable = {}", full(good), full(bad))?;
    }
    writeln!(out, "runs = {}", result.runs)?;
    Ok(())
}

fn detect(a: &DetectArgs, out: &mut impl Write) -> Result<()> {
    let f = File::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let samples = read_replay(f)?;
    let mut cfg = DetectorConfig::default();
    if let Some(w) = a.window {
        cfg.window = w;
    }
    if let Some(h) = a.hold {
        cfg.hold = h;
    }
    match replay_detector(&samples, cfg)? {
        Some(v) => {
            writeln!(out, "verdict = {}", verdict_text(&v.verdict))?;
            writeln!(out, "confidence = {}", v.confidence)?;
            writeln!(out, "detection_time = {}", v.detection_time.map(full).unwrap_or_else(|| "none".into()))?;
        }
        None => writeln!(out, "verdict = none")?,
    }
    Ok(())
}

fn verdict_text(v: &Verdict) -> String {
    match v {
        Verdict::NoFailure => "no_failure".into(),
        Verdict::Failed(m) => format!("failed {m}"),
        Verdict::Unknown { candidates } if candidates.is_empty() => "unknown".into(),
        Verdict::Unknown { candidates } => {
            let c: Vec<String> = candidates.iter().map(|m| format!("[{m}]")).collect();
            format!("unknown (candidates {})", c.join(" "))
        }
    }
}

/// Rows of a CSV file as named numeric columns.
fn read_table(path: &Path, columns: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers()?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| header.iter().position(|h| h.trim() == *c).ok_or_else(|| anyhow!("config error at '{c}': column missing")))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(idx.iter().map(|&i| rec.get(i).unwrap_or("").trim().to_string()).collect());
    }
    Ok(rows)
}

fn num(v: &str, column: &str, row: usize) -> Result<f64> {
    v.parse().map_err(|_| anyhow!("config error at '{column}' (line {}): '{v}' is not a number", row + 2))
}

fn numeric(rows: &[Vec<String>], columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    rows.iter().enumerate().map(|(r, row)| row.iter().zip(columns).map(|(v, c)| num(v, c, r)).collect()).collect()
}

fn emit_params(p: &QuadParams<f64>, to: &Option<PathBuf>, out: &mut impl Write) -> Result<()> {
    p.validate()?;
    let text = config::write_params(p);
    match to {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn sysid(c: &SysidCommand, out: &mut impl Write) -> Result<()> {
    match c {
        SysidCommand::FitThrust(a) => {
            let cols = ["omega", "thrust", "voltage", "current"];
            let samples: Vec<PropSample<f64>> = numeric(&read_table(&a.fit.data, &cols)?, &cols)?
                .into_iter()
                .map(|v| PropSample { omega: v[0], thrust: v[1], voltage: v[2], current: v[3] })
                .collect();
            let fit = fit_thrust_curve(&samples, a.resistance)?;
            let mut p = config::load_params(&a.fit.params)?;
            p.kf = fit.kf;
            p.kt = fit.kt;
            emit_params(&p, &a.fit.out, out)
        }
        SysidCommand::FitDrag(a) => {
            let cols = ["total_torque", "omega_ss"];
            let samples: Vec<DragSample<f64>> = numeric(&read_table(&a.data, &cols)?, &cols)?
                .into_iter()
                .map(|v| DragSample { total_torque: v[0], omega_ss: v[1] })
                .collect();
            let mut p = config::load_params(&a.params)?;
            p.gamma = fit_drag(&samples)?;
            emit_params(&p, &a.out, out)
        }
        SysidCommand::Moi(a) => {
            let mut p = config::load_params(&a.params)?;
            let rows = read_table(&a.data, &["axis", "pivot_distance", "period"])?;
            let mut seen = Vec::new();
            for (r, row) in rows.iter().enumerate() {
                let trial =
                    PendulumTrial { pivot_distance: num(&row[1], "pivot_distance", r)?, period: num(&row[2], "period", r)? };
                let (_, j) = moi_from_pendulum(p.m, p.g, &trial)?;
                let axis = row[0].as_str();
                if seen.contains(&row[0]) {
                    bail!("config error at 'axis' (line {}): axis '{axis}' given twice", r + 2);
                }
                match axis {
                    "x" => p.jxx = j,
                    "y" => p.jyy = j,
                    "z" => p.jzz = j,
                    _ => bail!("config error at 'axis' (line {}): '{axis}' is not x, y or z", r + 2),
                }
                seen.push(row[0].clone());
            }
            emit_params(&p, &a.out, out)
        }
    }
}
