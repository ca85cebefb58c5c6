//! Text formats: parameter files, gain files and TOML scenario files with
//! dotted `key=value` overrides.
//!
//! Parameter and gain files are flat `key = value` lines; `#` starts a
//! comment. Scenario files are TOML with the sections `[plant]`, `[model]`,
//! `[failure]`, `[initial]`, `[references]`, `[controller]`, `[sensors]`
//! and `[detector]`; every key is optional and falls back to `base` (a
//! built-in scenario, `two_rotor` by default).

use std::path::{Path, PathBuf};

use failsafe_core::control::PidGains;
use failsafe_core::detect::Thresholds;
use failsafe_core::estimation::{FilterConfig, NoiseConfig};
use failsafe_core::{MotorMask, QuadParams};
use nalgebra::Vector3;
use serde::Deserialize;

use crate::error::{SimError, SimResult};
use crate::scenario::{self, ControllerKind, EquilibriumSource, GainSet, RefPoint, ScenarioSpec};

/// Field names of a parameter file, in writing order.
pub const PARAM_KEYS: [&str; 11] = ["m", "l", "g", "jxx", "jyy", "jzz", "jxz", "jp", "gamma", "kf", "kt"];

/// Format a number so that it reads back bit-identical (17 significant digits).
pub fn full(x: f64) -> String {
    format!("{x:.16e}")
}

fn bad(key: impl Into<String>, msg: impl Into<String>) -> SimError {
    SimError::Config { key: key.into(), msg: msg.into() }
}

fn read(path: &Path) -> SimResult<String> {
    std::fs::read_to_string(path).map_err(|source| SimError::Io { path: path.display().to_string(), source })
}

/// `(line number, key, value)` for every non-blank line of a flat file.
fn kv_lines(text: &str) -> SimResult<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}", i + 1), format!("expected key = value, got '{line}'")))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn number(key: &str, line: usize, v: &str) -> SimResult<f64> {
    let x: f64 = v.parse().map_err(|_| bad(key, format!("line {line}: '{v}' is not a number")))?;
    if !x.is_finite() {
        return Err(bad(key, format!("line {line}: value must be finite")));
    }
    Ok(x)
}

/// Look up a named parameter preset.
pub fn preset(name: &str) -> SimResult<QuadParams<f64>> {
    QuadParams::preset(name).ok_or_else(|| bad("preset", format!("unknown preset '{name}' (try low_inertia, high_inertia)")))
}

/// Set one parameter by its file name.
pub fn set_param(p: &mut QuadParams<f64>, key: &str, value: f64) -> SimResult<()> {
    let slot = match key {
        "m" => &mut p.m,
        "l" => &mut p.l,
        "g" => &mut p.g,
        "jxx" => &mut p.jxx,
        "jyy" => &mut p.jyy,
        "jzz" => &mut p.jzz,
        "jxz" => &mut p.jxz,
        "jp" => &mut p.jp,
        "gamma" => &mut p.gamma,
        "kf" => &mut p.kf,
        "kt" => &mut p.kt,
        _ => return Err(bad(key, format!("not a parameter (expected one of {})", PARAM_KEYS.join(", ")))),
    };
    *slot = value;
    Ok(())
}

pub fn get_param(p: &QuadParams<f64>, key: &str) -> Option<f64> {
    Some(match key {
        "m" => p.m,
        "l" => p.l,
        "g" => p.g,
        "jxx" => p.jxx,
        "jyy" => p.jyy,
        "jzz" => p.jzz,
        "jxz" => p.jxz,
        "jp" => p.jp,
        "gamma" => p.gamma,
        "kf" => p.kf,
        "kt" => p.kt,
        _ => return None,
    })
}

/// Parse a parameter file. An optional `preset = name` line supplies any
/// field the file leaves out; without it every field is required.
pub fn parse_params(text: &str) -> SimResult<QuadParams<f64>> {
    let lines = kv_lines(text)?;
    let base = lines.iter().find(|(_, k, _)| k == "preset").map(|(_, _, v)| preset(v)).transpose()?;
    let mut p = base.unwrap_or(QuadParams::low_inertia());
    let mut seen = Vec::new();
    for (line, k, v) in &lines {
        if k == "preset" {
            continue;
        }
        if seen.contains(k) {
            return Err(bad(k.as_str(), format!("line {line}: duplicate key")));
        }
        set_param(&mut p, k, number(k, *line, v)?).map_err(|e| match e {
            SimError::Config { key, msg } => bad(key, format!("line {line}: {msg}")),
            e => e,
        })?;
        seen.push(k.clone());
    }
    if base.is_none() {
        if let Some(missing) = PARAM_KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(bad(*missing, "missing (give every field or a preset line)"));
        }
    }
    p.validate().map_err(|e| SimError::config("params", e))?;
    Ok(p)
}

/// Parameter file text for `p`; reads back to identical values.
pub fn write_params(p: &QuadParams<f64>) -> String {
    PARAM_KEYS.iter().map(|k| format!("{k} = {}\n", full(get_param(p, k).expect("known key")))).collect()
}

/// A preset name or a parameter file path.
pub fn load_params(name_or_path: &str) -> SimResult<QuadParams<f64>> {
    if let Some(p) = QuadParams::preset(name_or_path) {
        return Ok(p);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(bad("params", format!("'{name_or_path}' is neither a preset nor an existing file")));
    }
    parse_params(&read(path)?)
}

/// Named gain presets.
pub fn gain_preset(name: &str) -> SimResult<GainSet> {
    match name {
        "two_rotor" => Ok(GainSet::two_rotor()),
        "three_rotor" => Ok(GainSet::three_rotor()),
        "mismatch" => Ok(GainSet::mismatch()),
        _ => Err(bad("gains", format!("unknown gain preset '{name}' (try two_rotor, three_rotor, mismatch)"))),
    }
}

/// Gain-file key names.
pub const GAIN_KEYS: &str = "Q_p Q_q Q_nx Q_ny R_f R_f1..R_f4 k_pz k_dz k_iz u_z_min u_z_max k_if k_if1..k_if4 \
zeta_x zeta_y zeta_z omega_nx omega_ny omega_nz a_max_x a_max_y a_max_z min_lift";

/// Apply a gain file onto `gains`. Per-motor keys (`R_f2`, `k_if3`) are
/// mapped onto the surviving motors of `failed`.
pub fn apply_gains_file(gains: &mut GainSet, failed: MotorMask, text: &str) -> SimResult<()> {
    let survivors: Vec<usize> = (1..=4).filter(|m| !failed.contains(*m)).collect();
    if gains.r.len() != survivors.len() {
        gains.r = vec![1.0; survivors.len()];
    }
    if gains.force_ki.len() != survivors.len() {
        gains.force_ki = vec![0.0; survivors.len()];
    }
    for (line, k, v) in kv_lines(text)? {
        let x = number(&k, line, &v)?;
        let motor_slot = |prefix: &str| -> SimResult<Option<usize>> {
            let Some(rest) = k.strip_prefix(prefix) else { return Ok(None) };
            let m: usize = rest.parse().map_err(|_| bad(k.as_str(), format!("line {line}: unknown key")))?;
            survivors
                .iter()
                .position(|s| *s == m)
                .map(Some)
                .ok_or_else(|| bad(k.as_str(), format!("line {line}: motor {m} is not a surviving motor")))
        };
        match k.as_str() {
            "Q_p" => gains.q[0] = x,
            "Q_q" => gains.q[1] = x,
            "Q_nx" => gains.q[2] = x,
            "Q_ny" => gains.q[3] = x,
            "R_f" => gains.r.iter_mut().for_each(|r| *r = x),
            "k_pz" => gains.altitude.kp = x,
            "k_dz" => gains.altitude.kd = x,
            "k_iz" => gains.altitude.ki = x,
            "u_z_min" => gains.altitude.out_min = x,
            "u_z_max" => gains.altitude.out_max = x,
            "k_if" => gains.force_ki.iter_mut().for_each(|r| *r = x),
            "zeta_x" => gains.zeta.x = x,
            "zeta_y" => gains.zeta.y = x,
            "zeta_z" => gains.zeta.z = x,
            "omega_nx" => gains.omega_n.x = x,
            "omega_ny" => gains.omega_n.y = x,
            "omega_nz" => gains.omega_n.z = x,
            "a_max_x" => gains.accel_cap.x = x,
            "a_max_y" => gains.accel_cap.y = x,
            "a_max_z" => gains.accel_cap.z = x,
            "min_lift" => gains.min_lift = x,
            _ => {
                if let Some(i) = motor_slot("R_f")? {
                    gains.r[i] = x;
                } else if let Some(i) = motor_slot("k_if")? {
                    gains.force_ki[i] = x;
                } else {
                    return Err(bad(k.as_str(), format!("line {line}: unknown gain (expected one of {GAIN_KEYS})")));
                }
            }
        }
    }
    gains.altitude.validate().map_err(|e| SimError::config("k_pz", e))?;
    Ok(())
}

/// Gain file text for `gains` (per-motor keys use the survivors of `failed`).
pub fn write_gains(gains: &GainSet, failed: MotorMask) -> String {
    let survivors: Vec<usize> = (1..=4).filter(|m| !failed.contains(*m)).collect();
    let mut s = String::new();
    let mut put = |k: String, v: f64| s.push_str(&format!("{k} = {}\n", full(v)));
    for (k, v) in ["Q_p", "Q_q", "Q_nx", "Q_ny"].iter().zip(gains.q) {
        put(k.to_string(), v);
    }
    for (m, v) in survivors.iter().zip(&gains.r) {
        put(format!("R_f{m}"), *v);
    }
    let a = &gains.altitude;
    for (k, v) in [("k_pz", a.kp), ("k_dz", a.kd), ("k_iz", a.ki), ("u_z_min", a.out_min), ("u_z_max", a.out_max)] {
        put(k.into(), v);
    }
    for (m, v) in survivors.iter().zip(&gains.force_ki) {
        put(format!("k_if{m}"), *v);
    }
    for (i, axis) in ["x", "y", "z"].iter().enumerate() {
        put(format!("zeta_{axis}"), gains.zeta[i]);
        put(format!("omega_n{axis}"), gains.omega_n[i]);
        put(format!("a_max_{axis}"), gains.accel_cap[i]);
    }
    put("min_lift".into(), gains.min_lift);
    s
}

// ---- scenario files -------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    base: Option<String>,
    name: Option<String>,
    duration: Option<f64>,
    seed: Option<u64>,
    plant: Option<ParamsSection>,
    model: Option<ParamsSection>,
    failure: Option<FailureSection>,
    initial: Option<InitialSection>,
    references: Option<ReferencesSection>,
    controller: Option<ControllerSection>,
    sensors: Option<SensorsSection>,
    detector: Option<DetectorSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsSection {
    preset: Option<String>,
    file: Option<PathBuf>,
    m: Option<f64>,
    l: Option<f64>,
    g: Option<f64>,
    jxx: Option<f64>,
    jyy: Option<f64>,
    jzz: Option<f64>,
    jxz: Option<f64>,
    jp: Option<f64>,
    gamma: Option<f64>,
    kf: Option<f64>,
    kt: Option<f64>,
}

impl ParamsSection {
    fn resolve(&self, section: &str, start: QuadParams<f64>, dir: &Path) -> SimResult<QuadParams<f64>> {
        let mut p = match (&self.preset, &self.file) {
            (Some(_), Some(_)) => return Err(bad(format!("{section}.file"), "give either preset or file, not both")),
            (Some(name), None) => preset(name).map_err(|_| bad(format!("{section}.preset"), format!("unknown preset '{name}'")))?,
            (None, Some(f)) => parse_params(&read(&dir.join(f))?)?,
            (None, None) => start,
        };
        let fields = [
            ("m", self.m),
            ("l", self.l),
            ("g", self.g),
            ("jxx", self.jxx),
            ("jyy", self.jyy),
            ("jzz", self.jzz),
            ("jxz", self.jxz),
            ("jp", self.jp),
            ("gamma", self.gamma),
            ("kf", self.kf),
            ("kt", self.kt),
        ];
        for (k, v) in fields {
            if let Some(v) = v {
                set_param(&mut p, k, v)?;
            }
        }
        p.validate().map_err(|e| SimError::config(section, e))?;
        Ok(p)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FailureSection {
    motors: Option<Vec<usize>>,
    at: Option<f64>,
    detect: Option<bool>,
    rho: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    spin: Option<bool>,
    x: Option<f64>,
    y: Option<f64>,
    z: Option<f64>,
    xd: Option<f64>,
    yd: Option<f64>,
    zd: Option<f64>,
    phi: Option<f64>,
    theta: Option<f64>,
    psi: Option<f64>,
    p: Option<f64>,
    q: Option<f64>,
    r: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferencesSection {
    /// `[t, x, y, z]` rows.
    points: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PidSection {
    kp: Option<f64>,
    kd: Option<f64>,
    ki: Option<f64>,
    out_min: Option<f64>,
    out_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerSection {
    kind: Option<String>,
    /// Gain preset name or gain file path.
    gains: Option<String>,
    equilibrium: Option<String>,
    f_inner: Option<f64>,
    f_outer: Option<f64>,
    f_max: Option<f64>,
    q: Option<[f64; 4]>,
    r: Option<Vec<f64>>,
    force_ki: Option<Vec<f64>>,
    zeta: Option<[f64; 3]>,
    omega_n: Option<[f64; 3]>,
    accel_cap: Option<[f64; 3]>,
    min_lift: Option<f64>,
    altitude: Option<PidSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorsSection {
    /// `ideal` or `noisy`.
    preset: Option<String>,
    gyro: Option<f64>,
    attitude: Option<f64>,
    gps_pos: Option<f64>,
    gps_vel: Option<f64>,
    ultrasonic: Option<f64>,
    tau_complementary: Option<f64>,
    alpha_ema: Option<f64>,
    gps_rate: Option<f64>,
    ultrasonic_rate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorSection {
    window: Option<usize>,
    hold: Option<usize>,
    thresholds: Option<[f64; 5]>,
}

fn set_opt<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Apply `a.b.c=value` overrides to a TOML table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> SimResult<()> {
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| bad(o.as_str(), "override must look like key=value"))?;
        let key = key.trim();
        let path: Vec<&str> = key.split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(bad(key, "empty key segment"));
        }
        let mut t = &mut *table;
        for seg in &path[..path.len() - 1] {
            let entry = t.entry(seg.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            t = entry.as_table_mut().ok_or_else(|| bad(key, format!("'{seg}' is a value, not a section")))?;
        }
        t.insert(path[path.len() - 1].to_string(), override_value(raw.trim()));
    }
    Ok(())
}

fn toml_error(e: toml::de::Error, text: &str) -> SimError {
    let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
    let msg = e.message().to_string();
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .or_else(|| line.map(|l| format!("line {l}")))
        .unwrap_or_else(|| "scenario".into());
    bad(key, msg)
}

/// Build a scenario from TOML text. Relative file references resolve
/// against `dir`.
pub fn scenario_from_str(text: &str, overrides: &[String], dir: &Path) -> SimResult<ScenarioSpec> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| toml_error(e, text))?;
    apply_overrides(&mut table, overrides)?;
    let file = ScenarioFile::deserialize(toml::Value::Table(table)).map_err(|e| toml_error(e, ""))?;
    build(file, dir)
}

/// Load a scenario from a file path, or by built-in name when no such file
/// exists.
pub fn load_scenario(name_or_path: &str, overrides: &[String]) -> SimResult<ScenarioSpec> {
    let path = Path::new(name_or_path);
    if !path.exists() {
        if scenario::builtin(name_or_path).is_some() {
            return scenario_from_str(&format!("base = \"{name_or_path}\""), overrides, Path::new("."));
        }
        return Err(SimError::Io {
            path: name_or_path.into(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or built-in scenario"),
        });
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    scenario_from_str(&read(path)?, overrides, dir)
}

fn build(f: ScenarioFile, dir: &Path) -> SimResult<ScenarioSpec> {
    let base_name = f.base.as_deref().unwrap_or("two_rotor");
    let mut s = scenario::builtin(base_name)
        .ok_or_else(|| bad("base", format!("unknown scenario '{base_name}' (try {})", scenario::BUILTIN_NAMES.join(", "))))?;
    set_opt(&mut s.name, f.name);
    set_opt(&mut s.duration, f.duration);
    set_opt(&mut s.seed, f.seed);

    let model_follows_plant = s.model == s.plant;
    if let Some(p) = &f.plant {
        s.plant = p.resolve("plant", s.plant, dir)?;
        if model_follows_plant {
            s.model = s.plant;
        }
    }
    if let Some(m) = &f.model {
        s.model = m.resolve("model", s.model, dir)?;
    }

    let old_failed = s.failure.motors;
    if let Some(fl) = f.failure {
        if let Some(motors) = fl.motors {
            s.failure.motors = MotorMask::from_motors(&motors).map_err(|e| SimError::config("failure.motors", e))?;
        }
        set_opt(&mut s.failure.at, fl.at);
        set_opt(&mut s.failure.detect, fl.detect);
        set_opt(&mut s.failure.rho, fl.rho);
    }
    // A different failure count needs gains sized for its survivors.
    if s.failure.motors.len() != old_failed.len() {
        s.controller.gains = if s.failure.motors.len() == 1 { GainSet::three_rotor() } else { GainSet::two_rotor() };
    }

    if let Some(i) = f.initial {
        let st = &mut s.initial.state;
        set_opt(&mut s.initial.spin, i.spin);
        for (slot, v) in [
            (&mut st.x, i.x),
            (&mut st.y, i.y),
            (&mut st.z, i.z),
            (&mut st.xd, i.xd),
            (&mut st.yd, i.yd),
            (&mut st.zd, i.zd),
            (&mut st.phi, i.phi),
            (&mut st.theta, i.theta),
            (&mut st.psi, i.psi),
            (&mut st.p, i.p),
            (&mut st.q, i.q),
            (&mut st.r, i.r),
        ] {
            set_opt(slot, v);
        }
    }

    if let Some(pts) = f.references.and_then(|r| r.points) {
        s.references = pts.iter().map(|p| RefPoint::new(p[0], p[1], p[2], p[3])).collect();
    }

    if let Some(c) = f.controller {
        let ctl = &mut s.controller;
        if let Some(kind) = c.kind {
            ctl.kind = match kind.as_str() {
                "failsafe" => ControllerKind::Failsafe,
                "null" => ControllerKind::Null,
                _ => return Err(bad("controller.kind", format!("'{kind}' is not one of failsafe, null"))),
            };
        }
        if let Some(eq) = c.equilibrium {
            ctl.equilibrium = match eq.as_str() {
                "model" => EquilibriumSource::Model,
                "plant" => EquilibriumSource::Plant,
                _ => return Err(bad("controller.equilibrium", format!("'{eq}' is not one of model, plant"))),
            };
        }
        if let Some(g) = c.gains {
            ctl.gains = match gain_preset(&g) {
                Ok(set) => set,
                Err(_) => {
                    let path = dir.join(&g);
                    if !path.exists() {
                        return Err(bad("controller.gains", format!("'{g}' is neither a gain preset nor a file")));
                    }
                    let mut set = ctl.gains.clone();
                    apply_gains_file(&mut set, s.failure.motors, &read(&path)?)?;
                    set
                }
            };
        }
        set_opt(&mut ctl.f_inner, c.f_inner);
        set_opt(&mut ctl.f_outer, c.f_outer);
        set_opt(&mut ctl.f_max, c.f_max);
        let g = &mut ctl.gains;
        set_opt(&mut g.q, c.q);
        set_opt(&mut g.r, c.r);
        set_opt(&mut g.force_ki, c.force_ki);
        set_opt(&mut g.zeta, c.zeta.map(Vector3::from));
        set_opt(&mut g.omega_n, c.omega_n.map(Vector3::from));
        set_opt(&mut g.accel_cap, c.accel_cap.map(Vector3::from));
        set_opt(&mut g.min_lift, c.min_lift);
        if let Some(a) = c.altitude {
            let mut pid = g.altitude;
            set_opt(&mut pid.kp, a.kp);
            set_opt(&mut pid.kd, a.kd);
            set_opt(&mut pid.ki, a.ki);
            set_opt(&mut pid.out_min, a.out_min);
            set_opt(&mut pid.out_max, a.out_max);
            g.altitude = PidGains::new(pid.kp, pid.kd, pid.ki, pid.out_min, pid.out_max)
                .map_err(|e| SimError::config("controller.altitude", e))?;
        }
        let n = 4 - s.failure.motors.len();
        if s.controller.kind == ControllerKind::Failsafe && s.controller.gains.r.len() != n {
            return Err(bad("controller.r", format!("needs one weight per surviving motor ({n})")));
        }
    }

    if let Some(se) = f.sensors {
        if let Some(p) = se.preset {
            let keep = (s.sensors.gps_rate, s.sensors.ultrasonic_rate);
            s.sensors = match p.as_str() {
                "ideal" => scenario::SensorSpec::ideal(),
                "noisy" => scenario::SensorSpec::noisy(),
                _ => return Err(bad("sensors.preset", format!("'{p}' is not one of ideal, noisy"))),
            };
            (s.sensors.gps_rate, s.sensors.ultrasonic_rate) = keep;
        }
        let n: &mut NoiseConfig<f64> = &mut s.sensors.noise;
        set_opt(&mut n.gyro, se.gyro);
        set_opt(&mut n.attitude, se.attitude);
        set_opt(&mut n.gps_pos, se.gps_pos);
        set_opt(&mut n.gps_vel, se.gps_vel);
        set_opt(&mut n.ultrasonic, se.ultrasonic);
        let fc: &mut FilterConfig<f64> = &mut s.sensors.filter;
        set_opt(&mut fc.tau_complementary, se.tau_complementary);
        set_opt(&mut fc.alpha_ema, se.alpha_ema);
        set_opt(&mut s.sensors.gps_rate, se.gps_rate);
        set_opt(&mut s.sensors.ultrasonic_rate, se.ultrasonic_rate);
    }

    if let Some(d) = f.detector {
        set_opt(&mut s.detector.window, d.window);
        set_opt(&mut s.detector.hold, d.hold);
        set_opt(&mut s.detector.thresholds, d.thresholds.map(Thresholds));
    }

    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip_bit_exact() {
        for p in [QuadParams::low_inertia(), QuadParams::high_inertia()] {
            assert_eq!(parse_params(&write_params(&p)).unwrap(), p);
        }
    }

    #[test]
    fn params_errors_name_the_key() {
        let mut text = write_params(&QuadParams::low_inertia());
        text.push_str("mass = 2\n");
        let SimError::Config { key, .. } = parse_params(&text).unwrap_err() else { panic!() };
        assert_eq!(key, "mass");
        let missing: String = write_params(&QuadParams::low_inertia()).lines().filter(|l| !l.starts_with("kt")).map(|l| format!("{l}\n")).collect();
        let SimError::Config { key, .. } = parse_params(&missing).unwrap_err() else { panic!() };
        assert_eq!(key, "kt");
        let SimError::Config { key, .. } = parse_params("preset = low_inertia\nkf = abc\n").unwrap_err() else { panic!() };
        assert_eq!(key, "kf");
    }

    #[test]
    fn preset_line_fills_missing_fields() {
        let p = parse_params("preset = high_inertia\nkf = 2e-5\n").unwrap();
        assert_eq!(p.kf, 2e-5);
        assert_eq!(p.jxx, QuadParams::<f64>::high_inertia().jxx);
    }

    #[test]
    fn gains_file_round_trip() {
        let pair = MotorMask::from_motors(&[2, 4]).unwrap();
        let g = GainSet::two_rotor();
        let mut back = GainSet::three_rotor();
        apply_gains_file(&mut back, pair, &write_gains(&g, pair)).unwrap();
        assert_eq!(back, g);
        let one = MotorMask::from_motors(&[4]).unwrap();
        let g3 = GainSet::three_rotor();
        let mut back = GainSet::two_rotor();
        apply_gains_file(&mut back, one, &write_gains(&g3, one)).unwrap();
        assert_eq!(back.r, g3.r);
        assert_eq!(back.force_ki, g3.force_ki);
    }

    #[test]
    fn gains_file_rejects_failed_motor_weight() {
        let pair = MotorMask::from_motors(&[2, 4]).unwrap();
        let SimError::Config { key, .. } = apply_gains_file(&mut GainSet::two_rotor(), pair, "R_f2 = 1\n").unwrap_err() else {
            panic!()
        };
        assert_eq!(key, "R_f2");
    }

    #[test]
    fn scenario_sections_and_overrides() {
        let text = r#"
            base = "two_rotor"
            duration = 12.0
            [plant]
            preset = "high_inertia"
            [references]
            points = [[0.0, 0.0, 0.0, 3.0]]
            [controller]
            gains = "mismatch"
            [controller.altitude]
            kp = 2.5
        "#;
        let s = scenario_from_str(text, &["controller.f_outer=30".into(), "seed=7".into()], Path::new(".")).unwrap();
        assert_eq!(s.duration, 12.0);
        assert_eq!(s.plant, QuadParams::high_inertia());
        assert_eq!(s.model, s.plant);
        assert_eq!(s.controller.gains.altitude.kp, 2.5);
        assert_eq!(s.controller.f_outer, 30.0);
        assert_eq!(s.seed, 7);
        assert_eq!(s.reference_at(5.0), Vector3::new(0.0, 0.0, 3.0));
    }

    #[test]
    fn unknown_keys_are_named() {
        let SimError::Config { key, .. } = scenario_from_str("[controller]\nf_inr = 3\n", &[], Path::new(".")).unwrap_err() else {
            panic!()
        };
        assert_eq!(key, "f_inr");
        let SimError::Config { key, .. } =
            scenario_from_str("", &["plant.mass=3".into()], Path::new(".")).unwrap_err()
        else {
            panic!()
        };
        assert_eq!(key, "mass");
    }

    #[test]
    fn builtin_names_load() {
        for name in scenario::BUILTIN_NAMES {
            load_scenario(name, &[]).unwrap();
        }
        assert!(matches!(load_scenario("missing.toml", &[]), Err(SimError::Io { .. })));
    }

    #[test]
    fn failure_change_resizes_gains() {
        let s = scenario_from_str("[failure]\nmotors = [3]\nrho = 0.5\n", &[], Path::new(".")).unwrap();
        assert_eq!(s.controller.gains.r.len(), 3);
    }
}
