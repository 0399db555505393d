//! Per-iteration trace records, JSON-lines persistence and replay checks.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{foh_matrices, max_defect, ModelParams, State};
use crate::nlp::{SolveStatus, StateBounds};
use crate::wmpc::{TerminalSets, WaypointPass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub n: usize,
    pub t: f64,
    pub h: f64,
    pub eps: f64,
    #[serde(rename = "N_s")]
    pub n_s: usize,
    #[serde(rename = "N")]
    pub n_horizon: usize,
    #[serde(rename = "N_max")]
    pub n_max: usize,
    pub cursor: usize,
    pub final_mode: bool,
    pub q_w: Vec<f64>,
    pub q_g: Vec<f64>,
    pub w1: f64,
    pub w2: f64,
    pub states: Vec<State>,
    pub inputs: Vec<Vec<f64>>,
    /// Executed step.
    pub x0: State,
    pub u0: Vec<f64>,
    pub terminal: TerminalSets,
    pub bounds: StateBounds,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: Option<f64>,
    pub solve_time: f64,
    pub objective: Option<f64>,
    pub fallback: bool,
    pub degraded: bool,
    /// Smallest signed distance at the current configuration; absent without obstacles.
    pub min_distance: Option<f64>,
    pub waypoint_passed: Option<WaypointPass>,
    /// Events applied right before this iteration.
    pub events: Vec<String>,
}

impl TraceRecord {
    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            solve_time: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("empty trace")]
    Empty,
}

/// Writes every float in scientific notation with 17 significant digits.
struct SeventeenDigits;

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn record_to_line(record: &TraceRecord) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits);
    record.serialize(&mut ser).expect("trace records serialize");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", record_to_line(r))?;
    }
    out.flush()
}

pub fn export_trace(records: &[TraceRecord], path: impl AsRef<Path>) -> io::Result<()> {
    write_trace(records, BufWriter::new(File::create(path)?))
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| TraceError::Corrupt {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, TraceError> {
    read_trace(BufReader::new(File::open(path)?))
}

/// Worst values found by [`replay`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ReplayReport {
    pub records: usize,
    pub max_defect: f64,
    pub max_bound_violation: f64,
    pub max_terminal_violation: f64,
    /// Largest |qdot| or |qddot| at the end of a horizon.
    pub max_terminal_rate: f64,
    /// Largest mismatch between a record's executed step and the previous plan.
    pub max_continuity_gap: f64,
    pub malformed: usize,
}

impl ReplayReport {
    pub fn passes(&self) -> bool {
        self.malformed == 0
            && self.max_defect <= 1e-8
            && self.max_bound_violation <= 1e-9
            && self.max_terminal_violation <= 1e-9
            && self.max_terminal_rate <= 1e-8
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Re-checks dynamics, bounds, terminal boxes and steady ends of every record.
pub fn replay(records: &[TraceRecord]) -> Result<ReplayReport, TraceError> {
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    let mut rep = ReplayReport {
        records: records.len(),
        ..ReplayReport::default()
    };
    let mut prev: Option<&TraceRecord> = None;
    for r in records {
        let m = r.x0.dim();
        let n = r.states.len();
        let shape_ok = n >= 2 && n == r.inputs.len() && r.states.iter().all(|s| s.dim() == m) && r.bounds.dim() == m;
        let Ok(params) = ModelParams::new(m, r.h) else {
            rep.malformed += 1;
            continue;
        };
        if !shape_ok {
            rep.malformed += 1;
            continue;
        }
        let mats = foh_matrices(params).expect("validated");
        match max_defect(&r.states, &r.inputs, &mats) {
            Ok(d) => rep.max_defect = rep.max_defect.max(d),
            Err(_) => rep.malformed += 1,
        }
        for s in &r.states {
            rep.max_bound_violation = rep.max_bound_violation.max(r.bounds.violation(s));
        }
        if let Some(ub) = &r.bounds.u {
            for u in &r.inputs {
                rep.max_bound_violation = rep.max_bound_violation.max(ub.violation(u));
            }
        }
        if !r.degraded {
            if r.n_s >= 2 && r.n_s <= n {
                rep.max_terminal_violation = rep.max_terminal_violation.max(r.terminal.q_w.violation(&r.states[r.n_s - 1].q));
            }
            if r.n_horizon == n {
                rep.max_terminal_violation = rep.max_terminal_violation.max(r.terminal.q_g.violation(&r.states[n - 1].q));
            } else {
                rep.malformed += 1;
            }
        }
        let last = &r.states[n - 1];
        let rate = last.qdot.iter().chain(&last.qddot).fold(0.0_f64, |a, v| a.max(v.abs()));
        rep.max_terminal_rate = rep.max_terminal_rate.max(rate.max(r.inputs[n - 1].iter().fold(0.0, |a, v| a.max(v.abs()))));
        rep.max_defect = rep.max_defect.max(max_diff(r.x0.to_vector().as_slice(), r.states[0].to_vector().as_slice()));
        if let Some(p) = prev {
            if p.states.len() >= 2 {
                let gap = max_diff(p.states[1].to_vector().as_slice(), r.x0.to_vector().as_slice())
                    .max(max_diff(&p.inputs[1], &r.u0));
                rep.max_continuity_gap = rep.max_continuity_gap.max(gap);
            }
        }
        prev = Some(r);
    }
    Ok(rep)
}
