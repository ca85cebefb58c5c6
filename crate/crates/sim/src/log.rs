//! Per-inner-period simulation log and its CSV form.

use std::io::Write;

use failsafe_core::detect::{ChannelSample, Detector, DetectorConfig, FailureVerdict, Verdict};
use failsafe_core::estimation::Estimate;
use failsafe_core::RigidState;

use crate::controller::Diagnostics;
use crate::error::SimResult;

/// Column names of the CSV log, in order.
pub const HEADER: [&str; 48] = [
    "t", "x", "y", "z", "xd", "yd", "zd", "phi", "theta", "psi", "p", "q", "r", "est_x", "est_y", "est_z",
    "est_xd", "est_yd", "est_zd", "est_phi", "est_theta", "est_psi", "est_p", "est_q", "est_r", "f1", "f2", "f3",
    "f4", "pid_z", "pid_f1", "pid_f2", "pid_f3", "pid_f4", "acc_des_x", "acc_des_y", "acc_des_z", "n_des_x",
    "n_des_y", "n_des_z", "ref_x", "ref_y", "ref_z", "gps_t", "verdict", "confidence", "detect_t", "controller",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: RigidState<f64>,
    pub est: Estimate<f64>,
    pub thrust: [f64; 4],
    pub diag: Diagnostics,
    pub reference: nalgebra::Vector3<f64>,
    /// Time stamp of the position fix the estimate is built on.
    pub gps_t: f64,
    /// Detector verdict so far: empty, `none`, a motor list like `2,4`, or `unknown`.
    pub verdict: String,
    pub confidence: usize,
    pub detect_t: Option<f64>,
    pub controller: &'static str,
}

impl LogRow {
    fn record(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::with_capacity(HEADER.len());
        v.push(self.t.to_string());
        v.extend(self.state.as_array().iter().map(f64::to_string));
        let e = &self.est;
        for x in e.position.iter().chain(e.velocity.iter()).chain(e.attitude.iter()).chain(e.rates.iter()) {
            v.push(x.to_string());
        }
        v.extend(self.thrust.iter().map(f64::to_string));
        v.push(self.diag.pid_z.to_string());
        v.extend(self.diag.pid_f.iter().map(f64::to_string));
        v.extend(self.diag.accel_des.iter().map(f64::to_string));
        v.extend(self.diag.n_des.iter().map(f64::to_string));
        v.extend(self.reference.iter().map(f64::to_string));
        v.push(self.gps_t.to_string());
        v.push(self.verdict.clone());
        v.push(self.confidence.to_string());
        v.push(self.detect_t.map(|t| t.to_string()).unwrap_or_default());
        v.push(self.controller.to_string());
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimLog {
    pub rows: Vec<LogRow>,
}

impl SimLog {
    pub fn write_csv<W: Write>(&self, w: W) -> SimResult<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(HEADER)?;
        for r in &self.rows {
            out.write_record(r.record())?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> SimResult<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }
}

/// Columns a detector replay needs from a log file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplaySample {
    pub t: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub phi: f64,
    pub theta: f64,
}

/// Read `t` and the estimated (or, if absent, true) rate and tilt columns
/// from a CSV log.
pub fn read_replay<R: std::io::Read>(r: R) -> SimResult<Vec<ReplaySample>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let col = |names: &[&str]| -> SimResult<usize> {
        names
            .iter()
            .find_map(|n| header.iter().position(|h| h.trim() == *n))
            .ok_or_else(|| crate::error::SimError::Config { key: names[0].into(), msg: "column missing from log".into() })
    };
    let idx = [
        col(&["t"])?,
        col(&["est_p", "p"])?,
        col(&["est_q", "q"])?,
        col(&["est_r", "r"])?,
        col(&["est_phi", "phi"])?,
        col(&["est_theta", "theta"])?,
    ];
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut v = [0.0; 6];
        for (k, &i) in idx.iter().enumerate() {
            let s = rec.get(i).unwrap_or("");
            v[k] = s.trim().parse().map_err(|_| crate::error::SimError::Config {
                key: format!("line {} column {}", line + 2, header.get(i).unwrap_or("?")),
                msg: format!("'{s}' is not a number"),
            })?;
        }
        out.push(ReplaySample { t: v[0], p: v[1], q: v[2], r: v[3], phi: v[4], theta: v[5] });
    }
    Ok(out)
}

/// Run the detector over logged samples the way the runner does: an
/// unknown verdict re-arms it, the first named failure ends the replay.
/// Returns the named failure, else the last verdict formed, else `None`.
pub fn replay_detector(samples: &[ReplaySample], cfg: DetectorConfig<f64>) -> SimResult<Option<FailureVerdict<f64>>> {
    let mut det = Detector::new(cfg)?;
    let mut last = None;
    for s in samples {
        let sample = ChannelSample { t: s.t, p: s.p, q: s.q, r: s.r, phi: s.phi, theta: s.theta };
        if let Some(v) = det.push(sample) {
            if v.failed().is_some_and(|m| !m.is_empty()) {
                return Ok(Some(v));
            }
            if matches!(v.verdict, Verdict::Unknown { .. }) {
                det.reset();
            }
            last = Some(v);
        }
    }
    Ok(last)
}
