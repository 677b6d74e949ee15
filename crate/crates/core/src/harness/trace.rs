//! The versioned JSON-lines run log and the metrics derived from it.
//!
//! Line 1 is a [`TraceHeader`]; every further line is one [`TraceRecord`].
//! All metrics files are computed from these lines alone, so replaying a
//! log reproduces them exactly.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, RunTrace, StepRecord};
use crate::inference::LocalisationOutcome;

pub const TRACE_FORMAT: &str = "navinfer-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub mode: String,
    pub world: String,
    pub seed: u64,
    /// Free area of the world, square meters.
    pub free_area: f64,
    pub step_budget: usize,
}

impl TraceHeader {
    pub fn new(mode: &str, world: &str, seed: u64, free_area: f64, step_budget: usize) -> Self {
        Self {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            mode: mode.into(),
            world: world.into(),
            seed,
            free_area,
            step_budget,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.format != TRACE_FORMAT || self.version != TRACE_VERSION {
            return Err(Error::Schema {
                expected: TRACE_FORMAT,
                expected_version: TRACE_VERSION,
                found: self.format.clone(),
                found_version: self.version,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Explore,
    Goal,
    Outbound,
    Return,
    BeforeMove,
    AfterMove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub phase: Phase,
    #[serde(flatten)]
    pub step: StepRecord,
    pub believed_state: usize,
    pub outcome: LocalisationOutcome,
    pub confident: bool,
    pub target: Option<usize>,
    pub collided: bool,
    pub n_states: usize,
    pub n_edges: usize,
    pub goal_reached: bool,
    /// Shortest distance over the map from the believed state to the goal,
    /// when the goal is known.
    pub oracle_distance: Option<f64>,
}

/// Writes the header then one line per record.
pub fn write_trace(mut out: impl Write, header: &TraceHeader, records: &[TraceRecord]) -> Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_trace(path: impl AsRef<Path>, header: &TraceHeader, records: &[TraceRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace(&mut out, header, records)?;
    out.flush()?;
    Ok(())
}

/// Parses a trace. A final line cut short without its newline is taken as
/// an interrupted write and dropped; any other bad line is an error naming
/// its 1-based line number.
pub fn read_trace(input: impl Read) -> Result<(TraceHeader, Vec<TraceRecord>)> {
    let mut reader = BufReader::new(input);
    let mut header: Option<TraceHeader> = None;
    let mut records = Vec::new();
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        n += 1;
        let complete = line.ends_with('\n');
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| Error::Trace { line: n, message: e.to_string() };
        match &header {
            None => {
                // Check the schema tag before the full shape.
                let v: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
                let found = v.get("format").and_then(|f| f.as_str()).unwrap_or("").to_string();
                let version = v.get("version").and_then(|f| f.as_u64()).unwrap_or(0) as u32;
                if found != TRACE_FORMAT || version != TRACE_VERSION {
                    return Err(Error::Schema {
                        expected: TRACE_FORMAT,
                        expected_version: TRACE_VERSION,
                        found,
                        found_version: version,
                    });
                }
                header = Some(serde_json::from_value(v).map_err(bad)?);
            }
            Some(_) => match serde_json::from_str::<TraceRecord>(text) {
                Ok(r) => records.push(r),
                Err(_) if !complete => break,
                Err(e) => return Err(bad(e)),
            },
        }
    }
    let header = header.ok_or(Error::Trace { line: 1, message: "missing header".into() })?;
    Ok((header, records))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<(TraceHeader, Vec<TraceRecord>)> {
    read_trace(std::fs::File::open(path)?)
}

pub fn run_trace(records: &[TraceRecord]) -> RunTrace {
    RunTrace {
        records: records.iter().map(|r| r.step.clone()).collect(),
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per step.
pub fn steps_csv(header: &TraceHeader, records: &[TraceRecord]) -> String {
    let mut s = String::from(
        "t,phase,x,y,reported_x,reported_y,believed_x,believed_y,believed_state,outcome,action,target,collided,traveled,covered_area,coverage,n_states,n_edges,oracle_distance\n",
    );
    for r in records {
        let p = &r.step;
        let phase = serde_json::to_value(r.phase).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let outcome = serde_json::to_value(r.outcome).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let coverage = if header.free_area > 0.0 { p.covered_area / header.free_area } else { 0.0 };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.t,
            phase,
            p.true_pose.x,
            p.true_pose.y,
            p.reported_pose.x,
            p.reported_pose.y,
            p.believed_pose.x,
            p.believed_pose.y,
            r.believed_state,
            outcome,
            opt(p.action),
            opt(r.target),
            r.collided,
            p.traveled,
            p.covered_area,
            coverage,
            r.n_states,
            r.n_edges,
            opt(r.oracle_distance),
        );
    }
    s
}

/// Whole-run metrics as `metric,value` rows.
pub fn summary_csv(header: &TraceHeader, records: &[TraceRecord]) -> String {
    let trace = run_trace(records);
    let mut rows: Vec<(&str, String)> = vec![("steps", records.len().to_string())];
    if let Some(last) = records.last() {
        rows.push(("traveled", last.step.traveled.to_string()));
        rows.push(("covered_area", last.step.covered_area.to_string()));
        if header.free_area > 0.0 {
            rows.push(("coverage", (last.step.covered_area / header.free_area).to_string()));
        }
        rows.push(("n_states", last.n_states.to_string()));
        rows.push(("goal_reached", last.goal_reached.to_string()));
    }
    rows.push(("coverage_efficiency", opt(eval::coverage_efficiency(&trace).ok())));
    rows.push(("nauc", opt(eval::naauc(&trace, header.free_area).ok())));
    let believed: Vec<(f64, f64)> = trace.records.iter().map(|r| (r.believed_pose.x, r.believed_pose.y)).collect();
    let truth: Vec<(f64, f64)> = trace.records.iter().map(|r| (r.true_pose.x, r.true_pose.y)).collect();
    rows.push(("rmse", opt(eval::rmse_xy(&believed, &truth).ok())));
    if let Some(ratio) = goal_ratio(records) {
        rows.push(("goal_oracle_distance", ratio.0.to_string()));
        rows.push(("goal_distance", ratio.1.to_string()));
        rows.push(("goal_ratio", ratio.2.to_string()));
    }
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

/// `(oracle, traveled, traveled / oracle)` of a goal phase that reached its
/// goal, with the oracle taken at the first goal step that knew the goal.
pub fn goal_ratio(records: &[TraceRecord]) -> Option<(f64, f64, f64)> {
    let goal: Vec<&TraceRecord> = records.iter().filter(|r| r.phase == Phase::Goal).collect();
    let last = goal.last().filter(|r| r.goal_reached)?;
    let first = goal.iter().find(|r| r.oracle_distance.is_some())?;
    let oracle = first.oracle_distance?;
    let traveled = last.step.traveled - first.step.traveled;
    let ratio = if oracle > 0.0 { traveled / oracle } else { 1.0 };
    Some((oracle, traveled, ratio))
}
